//! Bessel functions `J_k(z)`, `k = 0..`, by Miller's backward recurrence.

/// `J_0(z), ..., J_K(z)` for `z >= 0`, truncated after the first index
/// beyond `z` where `|J_k| < tiny`.
pub(crate) fn bessel_j_sequence(z: f64, tiny: f64) -> Vec<f64> {
    if z == 0.0 {
        return vec![1.0];
    }
    // J_k(z) is negligible once k exceeds z by a few multiples of z^(1/3)
    let kmax = (z + 12.0 * z.cbrt() + 40.0).ceil() as usize;
    let start = kmax + ((40 * kmax) as f64).sqrt() as usize + 20;
    let start = start + start % 2;
    let mut j = vec![0.0f64; start + 2];
    j[start] = 1e-300;
    let mut sum = 0.0;
    for k in (1..=start).rev() {
        j[k - 1] = 2.0 * k as f64 / z * j[k] - j[k + 1];
        if j[k - 1].abs() > 1e250 {
            for v in j.iter_mut().skip(k - 1) {
                *v *= 1e-250;
            }
            sum *= 1e-250;
        }
        if (k - 1) % 2 == 0 && k - 1 > 0 {
            sum += 2.0 * j[k - 1];
        }
    }
    sum += j[0];
    // J_0 + 2 sum_m J_2m = 1
    let mut out: Vec<f64> = j[..=kmax].iter().map(|v| v / sum).collect();
    if let Some(cut) = (0..out.len()).find(|&k| k as f64 > z && out[k].abs() < tiny) {
        out.truncate(cut + 1);
    }
    out
}
