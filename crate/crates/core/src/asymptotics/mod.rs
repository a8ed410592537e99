//! Backward nontrapping, escape estimates and the asymptotic scattering
//! data `(z_-, xi_-)` with ladder extrapolation.

mod extrapolate;
mod rates;
mod scatter;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{kinetic_from_jet, virial_from_jet, HamiltonianSpec};
use crate::error::{Error, Result};
use crate::flow::{integrate_flow, FlowKind, FlowOptions, PhasePoint};
use crate::util::{dot, fit_slope, linspace, norm};

pub use extrapolate::{extrapolate, Extrapolation};
pub use rates::{fit_high_energy_rates, RateReport, RateRow};
pub use scatter::{
    compute_xi_minus, compute_z_minus, default_z_ladder, jacobian_s_minus, JacobianReport,
    ScatterOptions, ScatteringData, XiMethod,
};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NontrappingThresholds {
    /// Fraction of the horizon (at its far end) used for the slope fit.
    pub tail_fraction: f64,
    /// Escape slopes `d|y|/d|t|` at or below this count as trapped.
    pub min_escape_slope: f64,
    /// Largest escape constant accepted.
    pub max_constant: f64,
    pub samples: usize,
}

impl Default for NontrappingThresholds {
    fn default() -> Self {
        Self {
            tail_fraction: 0.5,
            min_escape_slope: 1e-3,
            max_constant: 1e6,
            samples: 2001,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct NontrappingVerdict {
    pub is_backward_nontrapping: bool,
    /// The integration itself failed; the verdict says nothing.
    pub indeterminate: bool,
    /// `C` in `|y~(t)| >= |t|/C - C`.
    pub escape_constant: f64,
    /// Latest time from which `4k + U > 0` and `|y~|` grows backward.
    pub onset_time: f64,
    pub min_radius_reached: f64,
    pub horizon: f64,
    /// Fitted `d|y~|/d|t|` on the tail.
    pub escape_slope: f64,
    pub reason: String,
}

impl NontrappingVerdict {
    fn trapped(horizon: f64, reason: impl Into<String>) -> Self {
        Self {
            is_backward_nontrapping: false,
            indeterminate: false,
            escape_constant: f64::INFINITY,
            onset_time: f64::NAN,
            min_radius_reached: f64::NAN,
            horizon,
            escape_slope: 0.0,
            reason: reason.into(),
        }
    }
}

/// Finite-horizon classification of the kinetic flow on `[-t_max, 0]`.
pub fn classify_backward_nontrapping(
    spec: &HamiltonianSpec,
    start: &PhasePoint,
    t_max: f64,
    thresholds: &NontrappingThresholds,
) -> Result<NontrappingVerdict> {
    if !(t_max > 0.0) {
        return Err(Error::Precondition("horizon must be positive".into()));
    }
    if norm(&start.xi) == 0.0 {
        return Ok(NontrappingVerdict::trapped(
            t_max,
            "zero covector: stationary point",
        ));
    }
    let times = linspace(-t_max, 0.0, thresholds.samples.max(11));
    let opts = FlowOptions::default().with_samples(times).sparse();
    let tr = match integrate_flow(spec, FlowKind::Kinetic, start, (0.0, -t_max), &opts) {
        Ok(tr) => tr,
        Err(e) if e.is_numerical() => {
            let mut v = NontrappingVerdict::trapped(t_max, format!("integration failed: {e}"));
            v.indeterminate = true;
            return Ok(v);
        }
        Err(e) => return Err(e),
    };
    // nodes run from t = 0 down to -t_max
    let abs_t: Vec<f64> = tr.times.iter().map(|t| t.abs()).collect();
    let radii: Vec<f64> = tr.states.iter().map(|p| norm(&p.x)).collect();
    let min_radius_reached = radii.iter().cloned().fold(f64::INFINITY, f64::min);

    let cut = (1.0 - thresholds.tail_fraction) * t_max;
    let tail: Vec<(f64, f64)> = abs_t
        .iter()
        .zip(&radii)
        .filter(|(t, _)| **t >= cut)
        .map(|(t, r)| (*t, *r))
        .collect();
    let escape_slope = fit_slope(&tail);
    let mut verdict = NontrappingVerdict {
        is_backward_nontrapping: false,
        indeterminate: false,
        escape_constant: f64::INFINITY,
        onset_time: f64::NAN,
        min_radius_reached,
        horizon: t_max,
        escape_slope,
        reason: String::new(),
    };
    if !(escape_slope > thresholds.min_escape_slope) {
        verdict.reason = format!("tail slope {escape_slope:.3e} shows no escape");
        return Ok(verdict);
    }

    // convexity of |y|^2 and outward motion, scanned from the far end
    let cond = |p: &PhasePoint| {
        let jet = spec.metric.jet(&p.x, 1);
        let k = kinetic_from_jet(&jet, &p.xi);
        let u = virial_from_jet(&jet, &p.x, &p.xi);
        let n = p.dim();
        let mut ydot = vec![0.0; n];
        for j in 0..n {
            for l in 0..n {
                ydot[j] += jet.a(j, l) * p.xi[l];
            }
        }
        4.0 * k + u > 0.0 && dot(&p.x, &ydot) < 0.0
    };
    let mut onset_idx = None;
    for i in (0..tr.states.len()).rev() {
        if cond(&tr.states[i]) {
            onset_idx = Some(i);
        } else {
            break;
        }
    }
    let Some(onset_idx) = onset_idx else {
        verdict.reason = "no escape onset within the horizon".into();
        return Ok(verdict);
    };
    verdict.onset_time = tr.times[onset_idx];

    let g = |c: f64| {
        abs_t
            .iter()
            .zip(&radii)
            .map(|(t, r)| r - t / c + c)
            .fold(f64::INFINITY, f64::min)
    };
    let mut lo = 1.0 / escape_slope;
    let constant = if g(lo) >= 0.0 {
        lo
    } else {
        let mut hi = 2.0 * lo;
        while g(hi) < 0.0 {
            hi *= 2.0;
            if hi > thresholds.max_constant {
                verdict.reason = "escape constant exceeds the accepted maximum".into();
                return Ok(verdict);
            }
        }
        for _ in 0..100 {
            let mid = 0.5 * (lo + hi);
            if g(mid) >= 0.0 {
                hi = mid;
            } else {
                lo = mid;
            }
        }
        hi
    };
    verdict.escape_constant = constant;
    verdict.is_backward_nontrapping = true;
    verdict.reason = "linear escape barrier holds".into();
    Ok(verdict)
}

/// Phase-space region `R-1 < |x| < R+1`, `x . xi <= -delta1 |x||xi|` with
/// `1/2 < |xi| < 2` (kinetic variant) or `|xi| >= lambda0` (high-energy
/// variant of the full flow).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSpec {
    pub r: f64,
    pub delta1: f64,
    #[serde(default)]
    pub lambda0: Option<f64>,
    /// Escape slope that has to be met.
    pub delta2: f64,
}

impl RegionSpec {
    pub fn contains(&self, p: &PhasePoint) -> bool {
        let rx = norm(&p.x);
        let rxi = norm(&p.xi);
        let shell = rx > self.r - 1.0 && rx < self.r + 1.0;
        let incoming = dot(&p.x, &p.xi) <= -self.delta1 * rx * rxi;
        let energy = match self.lambda0 {
            None => rxi > 0.5 && rxi < 2.0,
            Some(l0) => rxi >= l0,
        };
        shell && incoming && energy
    }

    /// Deterministic samples from the region.
    pub fn sample(&self, n: usize, count: usize, seed: u64) -> Vec<PhasePoint> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut out = Vec::with_capacity(count);
        while out.len() < count {
            let dir = random_unit(n, &mut rng);
            let rx = self.r - 1.0 + 2.0 * rng.gen_range(0.01..0.99);
            let rxi = match self.lambda0 {
                None => rng.gen_range(0.51..1.99),
                Some(l0) => l0 * rng.gen_range(1.0..2.0),
            };
            let cos = rng.gen_range(self.delta1..=1.0);
            let xi_dir: Vec<f64> = if n == 1 {
                dir.iter().map(|v| -v).collect()
            } else {
                // component orthogonal to dir
                let mut u = random_unit(n, &mut rng);
                let c = dot(&u, &dir);
                u.iter_mut().zip(&dir).for_each(|(a, d)| *a -= c * d);
                let un = norm(&u).max(1e-300);
                let sin = (1.0 - cos * cos).max(0.0).sqrt();
                dir.iter()
                    .zip(&u)
                    .map(|(d, v)| -cos * d + sin * v / un)
                    .collect()
            };
            let p = PhasePoint::new(
                dir.iter().map(|v| v * rx).collect(),
                xi_dir.iter().map(|v| v * rxi).collect(),
            );
            if self.contains(&p) {
                out.push(p);
            }
        }
        out
    }
}

pub(crate) fn random_unit(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let r = norm(&v);
        if r > 1e-3 && r <= 1.0 {
            return v.iter().map(|a| a / r).collect();
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct EscapeReport {
    pub samples: usize,
    /// Largest `delta2` for which the escape inequality held on every sample.
    pub largest_delta2: f64,
    pub required_delta2: f64,
    pub worst_sample: usize,
    pub passed: bool,
}

/// Checks `|y~(t)| >= |x| + delta2 |t|` (kinetic) or
/// `|y(t)| >= |x| + delta2 |t| |xi|` (high-energy full flow) on `[t0, 0]`.
pub fn region_escape_check(
    spec: &HamiltonianSpec,
    region: &RegionSpec,
    samples: &[PhasePoint],
    t0: f64,
) -> Result<EscapeReport> {
    if samples.is_empty() {
        return Err(Error::Precondition("empty sample set".into()));
    }
    if !(t0 < 0.0) {
        return Err(Error::Precondition(
            "escape checks run backward: t0 < 0".into(),
        ));
    }
    if let Some(i) = samples.iter().position(|p| !region.contains(p)) {
        return Err(Error::Precondition(format!(
            "sample {i} lies outside the region"
        )));
    }
    let kind = if region.lambda0.is_some() {
        FlowKind::Full
    } else {
        FlowKind::Kinetic
    };
    let grid: Vec<f64> = linspace(t0, 0.0, 201)[..200].to_vec();
    let opts = FlowOptions::default().with_samples(grid).sparse();
    let per: Vec<f64> = samples
        .par_iter()
        .map(|p| {
            let tr = integrate_flow(spec, kind, p, (0.0, t0), &opts)?;
            let r0 = norm(&p.x);
            let scale = if region.lambda0.is_some() {
                norm(&p.xi)
            } else {
                1.0
            };
            Ok(tr
                .times
                .iter()
                .zip(&tr.states)
                .skip(1)
                .map(|(t, s)| (norm(&s.x) - r0) / (t.abs() * scale))
                .fold(f64::INFINITY, f64::min))
        })
        .collect::<Result<_>>()?;
    let (worst_sample, largest_delta2) =
        per.iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::INFINITY),
                |acc, (i, v)| if v < acc.1 { (i, v) } else { acc },
            );
    Ok(EscapeReport {
        samples: samples.len(),
        largest_delta2,
        required_delta2: region.delta2,
        worst_sample,
        passed: largest_delta2 >= region.delta2,
    })
}
