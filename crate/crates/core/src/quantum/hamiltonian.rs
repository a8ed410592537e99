use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::bessel::bessel_j_sequence;
use super::fourier::{apply_fourier_multiplier, multiplier_from_hj};
use super::{GridSpec, WaveState};
use crate::catalog::HamiltonianSpec;
use crate::error::{Error, Result};
use crate::hj::HJSolution;

/// `-1/2 d a(x) d + V(x)` on a periodic grid, with `d` the spectral
/// derivative (Nyquist mode dropped, so `d` is exactly skew-adjoint).
#[derive(Clone)]
pub struct DiscreteH {
    pub grid: GridSpec,
    pub spec_name: String,
    pub a: Vec<f64>,
    pub v: Vec<f64>,
    bounds: (f64, f64),
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for DiscreteH {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteH")
            .field("grid", &self.grid)
            .field("spec_name", &self.spec_name)
            .field("bounds", &self.bounds)
            .finish()
    }
}

pub fn discretize_h(spec: &HamiltonianSpec, grid: &GridSpec) -> Result<DiscreteH> {
    if spec.dim() != 1 {
        return Err(Error::UnsupportedDimension(spec.dim()));
    }
    let xs = grid.xs();
    let a: Vec<f64> = xs.iter().map(|&x| spec.metric.jet(&[x], 0).a[0]).collect();
    let v: Vec<f64> = xs.iter().map(|&x| spec.potential.jet(&[x], 0).v).collect();
    Ok(DiscreteH::from_samples(*grid, spec.name.clone(), a, v))
}

impl DiscreteH {
    pub fn from_samples(grid: GridSpec, spec_name: String, a: Vec<f64>, v: Vec<f64>) -> Self {
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(grid.n);
        let inv = planner.plan_fft_inverse(grid.n);
        // 0 <= <-1/2 d a d u, u> <= 1/2 max(a) k_max^2 |u|^2
        let kmax = (grid.n / 2 - 1) as f64 * grid.dk();
        let amax = a.iter().cloned().fold(0.0, f64::max);
        let vmin = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let vmax = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let bounds = (vmin, 0.5 * amax * kmax * kmax + vmax);
        Self {
            grid,
            spec_name,
            a,
            v,
            bounds,
            fwd,
            inv,
        }
    }

    /// Interval containing the spectrum.
    pub fn spectral_bounds(&self) -> (f64, f64) {
        self.bounds
    }

    fn derivative(&self, u: &mut [Complex64]) {
        let n = self.grid.n;
        self.fwd.process(u);
        let scale = 1.0 / n as f64;
        for (m, z) in u.iter_mut().enumerate() {
            let k = if m < n / 2 {
                m as f64
            } else if m == n / 2 {
                0.0
            } else {
                m as f64 - n as f64
            };
            *z *= Complex64::new(0.0, k * self.grid.dk() * scale);
        }
        self.inv.process(u);
    }

    pub fn apply(&self, u: &[Complex64]) -> Vec<Complex64> {
        let mut w = u.to_vec();
        self.derivative(&mut w);
        for (z, a) in w.iter_mut().zip(&self.a) {
            *z *= *a;
        }
        self.derivative(&mut w);
        w.iter()
            .zip(u)
            .zip(&self.v)
            .map(|((dw, u), v)| -0.5 * dw + v * u)
            .collect()
    }

    pub fn apply_state(&self, u: &WaveState) -> WaveState {
        u.with_samples(self.apply(&u.samples))
    }

    /// `<Hu, u> / <u, u>`.
    pub fn energy(&self, u: &WaveState) -> f64 {
        let hu = self.apply_state(u);
        hu.inner(u).re / u.inner(u).re
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PropagateOptions {
    /// Truncation target of the Chebyshev series.
    pub tol: f64,
    /// Largest admissible fraction of mass near the boundary.
    pub boundary_threshold: f64,
    /// Width of the monitored boundary layer, as a fraction of `L`.
    pub boundary_fraction: f64,
    /// Upper bound on `(spectral radius) * (substep)`; the monitor runs after
    /// every substep.
    pub max_phase_per_step: f64,
}

impl Default for PropagateOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            boundary_threshold: 1e-10,
            boundary_fraction: 0.1,
            max_phase_per_step: 400.0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PropagationStats {
    pub substeps: usize,
    pub terms: usize,
    pub max_boundary_mass: f64,
}

fn check_boundary(
    u: &WaveState,
    opts: &PropagateOptions,
    stats: &mut PropagationStats,
) -> Result<()> {
    let m = u.boundary_mass(opts.boundary_fraction * u.grid.l);
    stats.max_boundary_mass = stats.max_boundary_mass.max(m);
    if m > opts.boundary_threshold {
        return Err(Error::BoundaryMass {
            mass: m,
            threshold: opts.boundary_threshold,
            t: u.t,
        });
    }
    Ok(())
}

/// `e^{-itH} u` by Chebyshev expansion, forward or backward in time.
pub fn propagate(
    h: &DiscreteH,
    u: &WaveState,
    t: f64,
    opts: &PropagateOptions,
) -> Result<WaveState> {
    propagate_with_stats(h, u, t, opts).map(|(v, _)| v)
}

pub fn propagate_with_stats(
    h: &DiscreteH,
    u: &WaveState,
    t: f64,
    opts: &PropagateOptions,
) -> Result<(WaveState, PropagationStats)> {
    if u.grid != h.grid {
        return Err(Error::Domain(
            "state and operator live on different grids".into(),
        ));
    }
    if !t.is_finite() {
        return Err(Error::Domain(format!("time {t}")));
    }
    let mut stats = PropagationStats::default();
    check_boundary(u, opts, &mut stats)?;
    if t == 0.0 {
        return Ok((u.clone(), stats));
    }
    let (lo, hi) = h.spectral_bounds();
    let center = 0.5 * (hi + lo);
    let radius = 0.5 * (hi - lo) * 1.01 + 1e-12;
    let steps = ((radius * t.abs()) / opts.max_phase_per_step)
        .ceil()
        .max(1.0) as usize;
    let dt = t / steps as f64;
    let z = radius * dt.abs();
    let coeffs = bessel_j_sequence(z, opts.tol * 1e-4);
    // e^{-i dt H} = e^{-i dt c} sum_k eps_k (-i sgn)^k J_k(r|dt|) T_k(Hs)
    let sgn = dt.signum();
    let mut weights = Vec::with_capacity(coeffs.len());
    let mut ipow = Complex64::new(1.0, 0.0);
    let step = Complex64::new(0.0, -sgn);
    for (k, j) in coeffs.iter().enumerate() {
        let eps = if k == 0 { 1.0 } else { 2.0 };
        weights.push(ipow * eps * *j);
        ipow *= step;
    }
    let global = Complex64::from_polar(1.0, -dt * center);
    let hs = |v: &[Complex64]| -> Vec<Complex64> {
        h.apply(v)
            .into_iter()
            .zip(v)
            .map(|(hv, v)| (hv - center * v) / radius)
            .collect()
    };
    let mut cur = u.clone();
    for s in 0..steps {
        let mut prev = cur.samples.clone();
        let mut acc: Vec<Complex64> = prev.iter().map(|z| weights[0] * z).collect();
        if weights.len() > 1 {
            let mut now = hs(&prev);
            for (a, z) in acc.iter_mut().zip(&now) {
                *a += weights[1] * z;
            }
            for w in &weights[2..] {
                let next: Vec<Complex64> = hs(&now)
                    .into_iter()
                    .zip(&prev)
                    .map(|(a, b)| 2.0 * a - b)
                    .collect();
                for (a, z) in acc.iter_mut().zip(&next) {
                    *a += w * z;
                }
                prev = std::mem::replace(&mut now, next);
            }
        }
        acc.iter_mut().for_each(|z| *z *= global);
        cur = WaveState {
            grid: u.grid,
            t: u.t + dt * (s + 1) as f64,
            samples: acc,
        };
        stats.substeps += 1;
        stats.terms += weights.len();
        check_boundary(&cur, opts, &mut stats)?;
    }
    cur.t = u.t + t;
    Ok((cur, stats))
}

/// `Omega(t) u0 = e^{iW(t,D)} e^{-itH} u0` for `t` in the range of `hj`.
pub fn modified_evolution(
    hj: &HJSolution,
    h: &DiscreteH,
    u0: &WaveState,
    t: f64,
    opts: &PropagateOptions,
) -> Result<WaveState> {
    let (t0, t1) = hj.t_range();
    if !(t0..=t1).contains(&t) {
        return Err(Error::Range(format!("t = {t} outside [{t0}, {t1}]")));
    }
    let v = propagate(h, u0, t, opts)?;
    let phase = multiplier_from_hj(hj, &h.grid, t)?;
    apply_fourier_multiplier(&v, &phase)
}
