//! Wave state persistence: raw little-endian `(re, im)` pairs plus a JSON
//! sidecar, and CSV views for plotting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{GridSpec, WaveState};
use crate::error::{Error, Result};
use crate::util::atomic_write;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StateSidecar {
    pub n: usize,
    pub l: f64,
    pub t: f64,
    pub spec: String,
    pub format: String,
}

const FORMAT: &str = "f64le-interleaved";

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(ext);
    PathBuf::from(s)
}

impl WaveState {
    /// Writes `<base>.bin` and `<base>.json`.
    pub fn save(&self, base: &Path, spec_name: &str) -> Result<(PathBuf, PathBuf)> {
        let mut bytes = Vec::with_capacity(16 * self.samples.len());
        for z in &self.samples {
            bytes.extend_from_slice(&z.re.to_le_bytes());
            bytes.extend_from_slice(&z.im.to_le_bytes());
        }
        let side = StateSidecar {
            n: self.grid.n,
            l: self.grid.l,
            t: self.t,
            spec: spec_name.to_string(),
            format: FORMAT.into(),
        };
        let bin = with_ext(base, ".bin");
        let json = with_ext(base, ".json");
        atomic_write(&bin, &bytes)?;
        let text = serde_json::to_string_pretty(&side).map_err(|e| Error::Io(e.to_string()))?;
        atomic_write(&json, text.as_bytes())?;
        Ok((bin, json))
    }

    pub fn load(base: &Path) -> Result<(WaveState, StateSidecar)> {
        let text = std::fs::read_to_string(with_ext(base, ".json"))?;
        let side: StateSidecar =
            serde_json::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
        if side.format != FORMAT {
            return Err(Error::Config(format!(
                "unknown state format {}",
                side.format
            )));
        }
        let grid = GridSpec::new(side.n, side.l)?;
        let bytes = std::fs::read(with_ext(base, ".bin"))?;
        if bytes.len() != 16 * side.n {
            return Err(Error::Io(format!(
                "expected {} bytes, found {}",
                16 * side.n,
                bytes.len()
            )));
        }
        let samples = bytes
            .chunks_exact(16)
            .map(|c| {
                let re = f64::from_le_bytes(c[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(c[8..].try_into().expect("8 bytes"));
                Complex64::new(re, im)
            })
            .collect();
        let mut u = WaveState::new(grid, samples)?;
        u.t = side.t;
        Ok((u, side))
    }

    /// `x,re,im,abs2` per grid point.
    pub fn density_csv(&self) -> String {
        let mut s = String::from("x,re,im,abs2\n");
        for (j, z) in self.samples.iter().enumerate() {
            let _ = writeln!(s, "{},{},{},{}", self.grid.x(j), z.re, z.im, z.norm_sqr());
        }
        s
    }

    /// Gabor spectrogram `|int g(y - x) e^{-i xi y} u(y) dy|^2` with a Gaussian
    /// window of width `width`, on `nx` positions and `nk` frequencies in
    /// `[-kmax, kmax]`. Columns `x,xi,power`.
    pub fn spectrogram_csv(&self, nx: usize, nk: usize, kmax: f64, width: f64) -> String {
        let g = self.grid;
        let reach = (6.0 * width / g.dx()).ceil() as i64;
        let mut s = String::from("x,xi,power\n");
        for ix in 0..nx {
            let x = -g.l + (ix as f64 + 0.5) * 2.0 * g.l / nx as f64;
            let jc = ((x + g.l) / g.dx()).round() as i64;
            for ik in 0..nk {
                let xi = if nk == 1 {
                    0.0
                } else {
                    -kmax + 2.0 * kmax * ik as f64 / (nk - 1) as f64
                };
                let mut acc = Complex64::new(0.0, 0.0);
                for d in -reach..=reach {
                    let j = (jc + d).rem_euclid(g.n as i64) as usize;
                    // unwrapped position, so the window stays contiguous across the seam
                    let y = -g.l + (jc + d) as f64 * g.dx();
                    let w = (-(y - x).powi(2) / (2.0 * width * width)).exp();
                    acc += self.samples[j] * Complex64::from_polar(w, -xi * y);
                }
                let _ = writeln!(s, "{x},{xi},{}", (acc * g.dx()).norm_sqr());
            }
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let g = GridSpec::new(64, 3.0).unwrap();
        let mut u = WaveState::gaussian(g, 0.5, 2.0, 0.4).unwrap();
        u.t = -0.25;
        let base = dir.path().join("state");
        let (bin, json) = u.save(&base, "flat1d").unwrap();
        assert_eq!(std::fs::metadata(bin).unwrap().len(), 64 * 16);
        assert!(std::fs::read_to_string(json).unwrap().contains("flat1d"));
        let (v, side) = WaveState::load(&base).unwrap();
        assert_eq!(v, u);
        assert_eq!(side.n, 64);
    }

    #[test]
    fn csv_views_have_headers_and_peak_where_expected() {
        let g = GridSpec::new(128, 8.0).unwrap();
        let u = WaveState::gaussian(g, 2.0, 3.0, 0.5).unwrap();
        let d = u.density_csv();
        assert!(d.starts_with("x,re,im,abs2\n"));
        assert_eq!(d.lines().count(), 129);
        let sp = u.spectrogram_csv(16, 13, 6.0, 0.7);
        let best = sp
            .lines()
            .skip(1)
            .map(|l| {
                let v: Vec<f64> = l.split(',').map(|c| c.parse().unwrap()).collect();
                (v[0], v[1], v[2])
            })
            .max_by(|a, b| a.2.total_cmp(&b.2))
            .unwrap();
        assert!((best.0 - 2.0).abs() <= 0.6, "{best:?}");
        assert!((best.1 - 3.0).abs() <= 0.6, "{best:?}");
    }
}
