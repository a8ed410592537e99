//! Small numeric helpers shared across modules.

/// Least-squares slope of `y` against `x`.
pub fn fit_slope(points: &[(f64, f64)]) -> f64 {
    fit_line(points).0
}

/// Least-squares line `y = slope x + intercept`.
pub fn fit_line(points: &[(f64, f64)]) -> (f64, f64) {
    let n = points.len() as f64;
    if points.len() < 2 {
        return (f64::NAN, f64::NAN);
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Euclidean norm.
#[inline]
pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// Euclidean distance.
#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `n` points evenly spaced on `[lo, hi]`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Canonical smooth step: 0 for `s <= 0`, 1 for `s >= 1`, built from
/// `psi(s) = exp(-1/s)`. Returns `(value, first derivative, second derivative)`.
pub fn smooth_step(s: f64) -> (f64, f64, f64) {
    if s <= 0.0 {
        return (0.0, 0.0, 0.0);
    }
    if s >= 1.0 {
        return (1.0, 0.0, 0.0);
    }
    // psi(s) = e^{-1/s}, psi' = psi/s^2, psi'' = psi (1 - 2s)/s^4
    let psi = |u: f64| {
        let e = (-1.0 / u).exp();
        (e, e / (u * u), e * (1.0 - 2.0 * u) / u.powi(4))
    };
    let (a, da, d2a) = psi(s);
    let (b0, db0, d2b0) = psi(1.0 - s);
    // b(s) = psi(1-s): b' = -psi'(1-s), b'' = psi''(1-s)
    let (b, db, d2b) = (b0, -db0, d2b0);
    let d = a + b;
    let dd = da + db;
    let d2d = d2a + d2b;
    let f = a / d;
    let df = (da * d - a * dd) / (d * d);
    // f = a/d -> f'' = (a'' - 2 f' d' - f d'')/d
    let d2f = (d2a - 2.0 * df * dd - f * d2d) / d;
    (f, df, d2f)
}

/// Canonical bump `exp(1 - 1/(1 - s^2))` on `(-1, 1)`, equal to 1 at the origin.
#[inline]
pub fn bump(s: f64) -> f64 {
    let q = 1.0 - s * s;
    if q <= 0.0 {
        0.0
    } else {
        (1.0 - 1.0 / q).exp()
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn atomic_write(path: &std::path::Path, bytes: &[u8]) -> std::io::Result<()> {
    use std::io::Write;
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => std::path::PathBuf::from("."),
    };
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp{}", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)
}
