//! One-dimensional periodic grid: discrete `H = -1/2 d a d + V`, the
//! propagator `e^{-itH}`, Fourier multipliers `e^{i phi(D)}`, the modified
//! evolution `Omega(t) = e^{iW(t,D)} e^{-itH}` and Weyl quantization of
//! compactly supported symbols.

mod bessel;
mod fourier;
mod hamiltonian;
mod io;
mod weyl;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::util::bump;

pub use fourier::{apply_fourier_multiplier, multiplier_from_hj};
pub use hamiltonian::{
    discretize_h, modified_evolution, propagate, propagate_with_stats, DiscreteH, PropagateOptions,
    PropagationStats,
};
pub use io::StateSidecar;
pub use weyl::{apply_weyl, apply_weyl_batch, conjugation_check, BoxSymbol, SupportBox, Symbol};

/// Periodic grid `[-L, L)` with `N` points.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub n: usize,
    pub l: f64,
}

impl GridSpec {
    pub fn new(n: usize, l: f64) -> Result<Self> {
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Precondition(format!(
                "N = {n} must be a power of two >= 4"
            )));
        }
        if !(l > 0.0 && l.is_finite()) {
            return Err(Error::Precondition(format!("L = {l} must be positive")));
        }
        Ok(Self { n, l })
    }

    /// `N = 4096`, `L = 40`.
    pub fn standard() -> Self {
        Self { n: 4096, l: 40.0 }
    }

    pub fn dx(&self) -> f64 {
        2.0 * self.l / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -self.l + j as f64 * self.dx()
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Spacing of the dual lattice, `pi / L`.
    pub fn dk(&self) -> f64 {
        std::f64::consts::PI / self.l
    }

    /// Dual frequency of mode `k` in `[-N/2, N/2)`.
    pub fn freq(&self, k: i64) -> f64 {
        k as f64 * self.dk()
    }

    /// Largest representable frequency `pi / dx`.
    pub fn nyquist(&self) -> f64 {
        std::f64::consts::PI / self.dx()
    }
}

/// Samples of a wave function on a grid, at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveState {
    pub grid: GridSpec,
    pub t: f64,
    pub samples: Vec<Complex64>,
}

impl WaveState {
    pub fn new(grid: GridSpec, samples: Vec<Complex64>) -> Result<Self> {
        if samples.len() != grid.n {
            return Err(Error::Domain(format!(
                "{} samples on a grid of {} points",
                samples.len(),
                grid.n
            )));
        }
        if samples
            .iter()
            .any(|z| !z.re.is_finite() || !z.im.is_finite())
        {
            return Err(Error::Domain("non-finite samples".into()));
        }
        Ok(Self {
            grid,
            t: 0.0,
            samples,
        })
    }

    pub fn from_fn(grid: GridSpec, f: impl FnMut(f64) -> Complex64) -> Result<Self> {
        Self::new(grid, grid.xs().into_iter().map(f).collect())
    }

    /// `exp(-(x - x0)^2 / (2 s^2) + i k0 x)`, L2-normalized.
    pub fn gaussian(grid: GridSpec, x0: f64, k0: f64, s: f64) -> Result<Self> {
        let mut u = Self::from_fn(grid, |x| {
            let g = (-(x - x0).powi(2) / (2.0 * s * s)).exp();
            Complex64::from_polar(g, k0 * x)
        })?;
        u.normalize();
        Ok(u)
    }

    /// `e^{iqx} max(0, 1 - |x - x0|)^gamma`: an algebraic cusp at `x0` and
    /// kinks at `x0 +- 1`.
    pub fn cusp(grid: GridSpec, x0: f64, q: f64, gamma: f64) -> Result<Self> {
        Self::from_fn(grid, |x| {
            let b = (1.0 - (x - x0).abs()).max(0.0);
            Complex64::from_polar(b.powf(gamma), q * x)
        })
    }

    pub fn inner(&self, other: &WaveState) -> Complex64 {
        self.samples
            .iter()
            .zip(&other.samples)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.grid.dx()
    }

    pub fn norm(&self) -> f64 {
        (self.samples.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()).sqrt()
    }

    pub fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.samples.iter_mut().for_each(|z| *z /= n);
        }
    }

    pub fn with_samples(&self, samples: Vec<Complex64>) -> Self {
        Self {
            grid: self.grid,
            t: self.t,
            samples,
        }
    }

    pub fn sub(&self, other: &WaveState) -> WaveState {
        self.with_samples(
            self.samples
                .iter()
                .zip(&other.samples)
                .map(|(a, b)| a - b)
                .collect(),
        )
    }

    /// Fraction of the mass within `width` of either end of the domain.
    pub fn boundary_mass(&self, width: f64) -> f64 {
        let total: f64 = self.samples.iter().map(|z| z.norm_sqr()).sum();
        if total == 0.0 {
            return 0.0;
        }
        let edge = self.grid.l - width;
        let outer: f64 = self
            .samples
            .iter()
            .enumerate()
            .filter(|(j, _)| self.grid.x(*j).abs() >= edge)
            .map(|(_, z)| z.norm_sqr())
            .sum();
        outer / total
    }

    /// `<x>` and `<D>` expectations.
    pub fn position_momentum(&self) -> (f64, f64) {
        let mass: f64 = self.samples.iter().map(|z| z.norm_sqr()).sum();
        let x: f64 = self
            .samples
            .iter()
            .enumerate()
            .map(|(j, z)| self.grid.x(j) * z.norm_sqr())
            .sum::<f64>()
            / mass;
        let c = fourier::to_coeffs(self);
        let cm: f64 = c.iter().map(|z| z.norm_sqr()).sum();
        let k: f64 = c
            .iter()
            .enumerate()
            .map(|(i, z)| self.grid.freq(i as i64 - self.grid.n as i64 / 2) * z.norm_sqr())
            .sum::<f64>()
            / cm;
        (x, k)
    }

    /// Smoothly removes Fourier modes with `|xi| >= cutoff`, tapering over
    /// `[cutoff - width, cutoff]`.
    pub fn band_limited(&self, cutoff: f64, width: f64) -> WaveState {
        self.filter_modes(|k| {
            let s = (k.abs() - (cutoff - width)) / width;
            if s <= 0.0 {
                1.0
            } else if s >= 1.0 {
                0.0
            } else {
                bump(s)
            }
        })
    }

    /// Keeps the modes `|k| < N/2` of `grid`, which must share `L` and have
    /// at most as many points.
    pub fn restrict_modes(&self, grid: GridSpec) -> Result<WaveState> {
        if grid.l != self.grid.l || grid.n > self.grid.n {
            return Err(Error::Domain(format!(
                "cannot restrict a grid of {} points on [-{}, {}) to {grid:?}",
                self.grid.n, self.grid.l, self.grid.l
            )));
        }
        let c = fourier::to_coeffs(self);
        let off = (self.grid.n - grid.n) / 2;
        let coarse = WaveState {
            grid,
            t: self.t,
            samples: vec![Complex64::new(0.0, 0.0); grid.n],
        };
        Ok(fourier::from_coeffs(&coarse, &c[off..off + grid.n]))
    }

    /// Multiplies each Fourier mode by `f(xi)`.
    pub fn filter_modes(&self, f: impl Fn(f64) -> f64) -> WaveState {
        let mut c = fourier::to_coeffs(self);
        let half = self.grid.n as i64 / 2;
        for (i, z) in c.iter_mut().enumerate() {
            *z *= f(self.grid.freq(i as i64 - half));
        }
        fourier::from_coeffs(self, &c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_checks() {
        assert!(GridSpec::new(1000, 10.0).is_err());
        assert!(GridSpec::new(1024, -1.0).is_err());
        let g = GridSpec::new(1024, 10.0).unwrap();
        assert!((g.dx() - 20.0 / 1024.0).abs() < 1e-15);
        assert_eq!(g.x(0), -10.0);
        assert!((g.nyquist() - std::f64::consts::PI / g.dx()).abs() < 1e-12);
    }

    #[test]
    fn gaussian_is_normalized_and_centered() {
        let g = GridSpec::new(1024, 20.0).unwrap();
        let u = WaveState::gaussian(g, 2.0, 3.0, 1.0).unwrap();
        assert!((u.norm() - 1.0).abs() < 1e-14);
        let (x, k) = u.position_momentum();
        assert!((x - 2.0).abs() < 1e-10);
        assert!((k - 3.0).abs() < 1e-10);
        assert!(u.boundary_mass(2.0) < 1e-30);
    }

    #[test]
    fn restriction_keeps_low_modes() {
        let fine = GridSpec::new(1024, 10.0).unwrap();
        let coarse = GridSpec::new(256, 10.0).unwrap();
        let u = WaveState::gaussian(fine, 1.0, 3.0, 0.8).unwrap();
        let v = u.restrict_modes(coarse).unwrap();
        let w = WaveState::gaussian(coarse, 1.0, 3.0, 0.8).unwrap();
        assert!(v.sub(&w).norm() < 1e-12);
        assert!(v.restrict_modes(fine).is_err());
        assert!(u.restrict_modes(GridSpec::new(256, 5.0).unwrap()).is_err());
    }

    #[test]
    fn band_limit_keeps_low_modes() {
        let g = GridSpec::new(512, 10.0).unwrap();
        let u = WaveState::gaussian(g, 0.0, 2.0, 1.0).unwrap();
        let v = u.band_limited(20.0, 5.0);
        assert!(u.sub(&v).norm() < 1e-12);
        let w = u.band_limited(2.0, 0.5);
        assert!(w.norm() < 0.9);
    }
}
