//! Hamilton flows of `k`, `p = k + V` and the scaled symbol
//! `p^lambda = k + lambda^-2 V`, with running action and optional
//! variational blocks `d(y, eta)/d(x0, xi0)`.

mod rk;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::catalog::{kinetic_from_jet, HamiltonianSpec};
use crate::error::{Error, Result};
use crate::util::{fit_slope, norm};

pub(crate) use rk::integrate as rk_integrate;
pub use rk::{Solution, StepControl};

/// Which Hamiltonian generates the flow.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    /// `p = k + V`.
    Full,
    /// `k` alone.
    Kinetic,
    /// `k + lambda^-2 V`.
    Scaled(f64),
}

impl FlowKind {
    /// Coefficient in front of `V`.
    pub fn potential_weight(self) -> f64 {
        match self {
            FlowKind::Full => 1.0,
            FlowKind::Kinetic => 0.0,
            FlowKind::Scaled(l) => 1.0 / (l * l),
        }
    }

    fn check(self) -> Result<()> {
        match self {
            FlowKind::Scaled(l) if !(l > 0.0 && l.is_finite()) => Err(Error::Domain(format!(
                "scaled flow needs lambda > 0, got {l}"
            ))),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePoint {
    pub x: Vec<f64>,
    pub xi: Vec<f64>,
}

impl PhasePoint {
    pub fn new(x: Vec<f64>, xi: Vec<f64>) -> Self {
        Self { x, xi }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }

    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(&self.xi).all(|v| v.is_finite())
    }

    pub fn scaled_xi(&self, lambda: f64) -> Self {
        Self::new(self.x.clone(), self.xi.iter().map(|v| v * lambda).collect())
    }

    fn to_vec(&self) -> Vec<f64> {
        self.x.iter().chain(&self.xi).copied().collect()
    }
}

#[derive(Debug, Clone)]
pub struct FlowOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
    /// Times (inside the span) at which the trajectory must have a node.
    pub samples: Vec<f64>,
    /// Keep every accepted step (needed for dense sampling); otherwise only
    /// the endpoints and `samples`.
    pub record_steps: bool,
}

impl Default for FlowOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-10,
            atol: 1e-12,
            max_steps: 5_000_000,
            samples: Vec::new(),
            record_steps: true,
        }
    }
}

impl FlowOptions {
    /// Tightened tolerances for reference solutions.
    pub fn reference() -> Self {
        Self {
            rtol: 1e-13,
            atol: 1e-15,
            ..Self::default()
        }
    }

    pub fn with_tol(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }

    pub fn with_samples(mut self, samples: Vec<f64>) -> Self {
        self.samples = samples;
        self
    }

    pub fn sparse(mut self) -> Self {
        self.record_steps = false;
        self
    }

    pub(crate) fn control(&self) -> StepControl {
        StepControl {
            rtol: self.rtol,
            atol: self.atol,
            max_steps: self.max_steps,
        }
    }
}

/// Hamilton vector field packed for the integrator.
///
/// State layout: `[y (n), eta (n), action, J (2n x 2n row-major), G (2n)]`,
/// the last two only for variational runs. `G` is the gradient of the
/// action with respect to `(x0, xi0)`.
pub(crate) struct HamiltonField<'a> {
    spec: &'a HamiltonianSpec,
    n: usize,
    weight: f64,
    variational: bool,
}

impl<'a> HamiltonField<'a> {
    pub(crate) fn new(spec: &'a HamiltonianSpec, kind: FlowKind, variational: bool) -> Self {
        Self {
            spec,
            n: spec.dim(),
            weight: kind.potential_weight(),
            variational,
        }
    }

    pub(crate) fn initial_state(&self, start: &PhasePoint) -> Vec<f64> {
        let mut s = start.to_vec();
        s.push(0.0);
        if self.variational {
            let m = 2 * self.n;
            for i in 0..m {
                for j in 0..m {
                    s.push(if i == j { 1.0 } else { 0.0 });
                }
            }
            s.extend(std::iter::repeat(0.0).take(m));
        }
        s
    }

    pub(crate) fn energy(&self, s: &[f64]) -> f64 {
        let n = self.n;
        let (x, xi) = (&s[..n], &s[n..2 * n]);
        let mut e = kinetic_from_jet(&self.spec.metric.jet(x, 0), xi);
        if self.weight != 0.0 {
            e += self.weight * self.spec.potential.jet(x, 0).v;
        }
        e
    }

    pub(crate) fn rhs(&self, s: &[f64], d: &mut [f64]) {
        let n = self.n;
        let (x, xi) = (&s[..n], &s[n..2 * n]);
        let order = if self.variational { 2 } else { 1 };
        let jet = self.spec.metric.jet(x, order);
        let use_v = self.weight != 0.0 && !self.spec.potential.is_zero();
        let pjet = if use_v {
            Some(self.spec.potential.jet(x, order))
        } else {
            None
        };
        let mut kin = 0.0;
        for j in 0..n {
            let mut dx = 0.0;
            for k in 0..n {
                dx += jet.a(j, k) * xi[k];
            }
            d[j] = dx;
            kin += 0.5 * dx * xi[j];
            let mut dxi = 0.0;
            for k in 0..n {
                for l in 0..n {
                    dxi += jet.da(k, l, j) * xi[k] * xi[l];
                }
            }
            dxi *= -0.5;
            if let Some(p) = &pjet {
                dxi -= self.weight * p.dv[j];
            }
            d[n + j] = dxi;
        }
        let v = pjet.as_ref().map_or(0.0, |p| self.weight * p.v);
        let mut ydot_eta = 0.0;
        for j in 0..n {
            ydot_eta += x[j] * d[n + j];
        }
        d[2 * n] = kin + v + ydot_eta;

        if self.variational {
            let m = 2 * n;
            // A = [[A11, A12], [A21, A22]], J' = A J
            let mut a = vec![0.0; m * m];
            for j in 0..n {
                for q in 0..n {
                    let mut a11 = 0.0;
                    let mut a22 = 0.0;
                    let mut a21 = 0.0;
                    for k in 0..n {
                        a11 += jet.da(j, k, q) * xi[k];
                        a22 -= jet.da(q, k, j) * xi[k];
                        for l in 0..n {
                            a21 -= 0.5 * jet.d2a(k, l, j, q) * xi[k] * xi[l];
                        }
                    }
                    if let Some(p) = &pjet {
                        a21 -= self.weight * p.d2v[j * n + q];
                    }
                    a[j * m + q] = a11;
                    a[j * m + n + q] = jet.a(j, q);
                    a[(n + j) * m + q] = a21;
                    a[(n + j) * m + n + q] = a22;
                }
            }
            let jm = &s[m + 1..m + 1 + m * m];
            for r in 0..m {
                for c in 0..m {
                    let mut acc = 0.0;
                    for k in 0..m {
                        acc += a[r * m + k] * jm[k * m + c];
                    }
                    d[m + 1 + r * m + c] = acc;
                }
            }
            // gradient of the integrand p + y . eta' along the flow:
            // d/dy = y^T A21, d/deta = y'^T + y^T A22
            let mut v = vec![0.0; m];
            for q in 0..n {
                let mut gy = 0.0;
                let mut ge = d[q];
                for j in 0..n {
                    gy += x[j] * a[(n + j) * m + q];
                    ge += x[j] * a[(n + j) * m + n + q];
                }
                v[q] = gy;
                v[n + q] = ge;
            }
            let g0 = m + 1 + m * m;
            for c in 0..m {
                let mut acc = 0.0;
                for r in 0..m {
                    acc += v[r] * jm[r * m + c];
                }
                d[g0 + c] = acc;
            }
        }
    }

    pub(crate) fn integrate(
        &self,
        start: &PhasePoint,
        t0: f64,
        t1: f64,
        opts: &FlowOptions,
    ) -> Result<Solution> {
        let y0 = self.initial_state(start);
        rk_integrate(
            |_, s, d| self.rhs(s, d),
            t0,
            &y0,
            t1,
            &opts.samples,
            opts.record_steps,
            &opts.control(),
        )
    }

    fn unpack_point(&self, s: &[f64]) -> PhasePoint {
        let n = self.n;
        PhasePoint::new(s[..n].to_vec(), s[n..2 * n].to_vec())
    }

    fn unpack_jacobian(&self, s: &[f64]) -> DMatrix<f64> {
        let m = 2 * self.n;
        DMatrix::from_row_slice(m, m, &s[m + 1..m + 1 + m * m])
    }

    fn unpack_action_gradient(&self, s: &[f64]) -> Vec<f64> {
        let m = 2 * self.n;
        s[m + 1 + m * m..m + 1 + m * m + m].to_vec()
    }
}

fn check_start(spec: &HamiltonianSpec, kind: FlowKind, start: &PhasePoint) -> Result<()> {
    kind.check()?;
    let n = spec.dim();
    if start.x.len() != n || start.xi.len() != n {
        return Err(Error::Domain(format!("start point is not {n}-dimensional")));
    }
    if !start.is_finite() {
        return Err(Error::Domain("non-finite start point".into()));
    }
    Ok(())
}

/// `(d_xi H, -d_x H)` at a phase-space point.
pub fn hamilton_rhs(
    spec: &HamiltonianSpec,
    kind: FlowKind,
    p: &PhasePoint,
) -> (Vec<f64>, Vec<f64>) {
    let f = HamiltonField::new(spec, kind, false);
    let n = p.dim();
    let mut s = p.to_vec();
    s.push(0.0);
    let mut d = vec![0.0; s.len()];
    f.rhs(&s, &mut d);
    (d[..n].to_vec(), d[n..2 * n].to_vec())
}

/// Value of the Hamiltonian matching `kind` at `(x, xi)`.
pub fn flow_energy(spec: &HamiltonianSpec, kind: FlowKind, p: &PhasePoint) -> f64 {
    let f = HamiltonField::new(spec, kind, false);
    f.energy(&p.to_vec())
}

/// Integrated flow history.
///
/// `times` run in the direction of integration (decreasing for backward runs).
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub kind: FlowKind,
    pub times: Vec<f64>,
    pub states: Vec<PhasePoint>,
    /// Running `int_{t0}^{t} (p + y . d_t eta) ds`.
    pub action: Vec<f64>,
    pub energy: Vec<f64>,
    /// `max_t |E(t) - E(t0)| / max(1, |E(t0)|)`.
    pub energy_drift: f64,
    pub derivative_blocks: Option<Vec<DMatrix<f64>>>,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    sol: Solution,
    n: usize,
}

impl Trajectory {
    pub fn endpoint(&self) -> &PhasePoint {
        self.states.last().unwrap()
    }

    pub fn final_action(&self) -> f64 {
        *self.action.last().unwrap()
    }

    pub fn start_time(&self) -> f64 {
        self.times[0]
    }

    pub fn end_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    /// Relative energy error at node `i`.
    pub fn energy_error(&self, i: usize) -> f64 {
        let e0 = self.energy[0];
        (self.energy[i] - e0).abs() / e0.abs().max(1.0)
    }

    /// State at an arbitrary time inside the span (cubic Hermite).
    pub fn sample(&self, t: f64) -> Option<PhasePoint> {
        let s = self.sol.interpolate(t)?;
        let n = self.n;
        Some(PhasePoint::new(s[..n].to_vec(), s[n..2 * n].to_vec()))
    }

    pub fn sample_action(&self, t: f64) -> Option<f64> {
        self.sol.interpolate(t).map(|s| s[2 * self.n])
    }

    pub fn within_energy_tolerance(&self, tol: f64) -> bool {
        self.energy_drift <= tol
    }
}

fn build_trajectory(field: &HamiltonField, kind: FlowKind, sol: Solution) -> Trajectory {
    let n = field.n;
    let states: Vec<PhasePoint> = sol.y.iter().map(|s| field.unpack_point(s)).collect();
    let action: Vec<f64> = sol.y.iter().map(|s| s[2 * n]).collect();
    let energy: Vec<f64> = sol.y.iter().map(|s| field.energy(s)).collect();
    let e0 = energy[0];
    let energy_drift = energy
        .iter()
        .map(|e| (e - e0).abs() / e0.abs().max(1.0))
        .fold(0.0, f64::max);
    let derivative_blocks = field
        .variational
        .then(|| sol.y.iter().map(|s| field.unpack_jacobian(s)).collect());
    Trajectory {
        kind,
        times: sol.t.clone(),
        states,
        action,
        energy,
        energy_drift,
        derivative_blocks,
        accepted_steps: sol.accepted,
        rejected_steps: sol.rejected,
        sol,
        n,
    }
}

/// Solves `dy/dt = d_xi H`, `d eta/dt = -d_x H` on `t_span` for the
/// Hamiltonian selected by `kind`, starting from `start` at `t_span.0`.
pub fn integrate_flow(
    spec: &HamiltonianSpec,
    kind: FlowKind,
    start: &PhasePoint,
    t_span: (f64, f64),
    opts: &FlowOptions,
) -> Result<Trajectory> {
    check_start(spec, kind, start)?;
    let field = HamiltonField::new(spec, kind, false);
    let sol = field.integrate(start, t_span.0, t_span.1, opts)?;
    Ok(build_trajectory(&field, kind, sol))
}

/// As [`integrate_flow`], also carrying the linearized flow
/// `J = d(y, eta)/d(x0, xi0)` with `J(t0) = I`.
pub fn integrate_variational(
    spec: &HamiltonianSpec,
    kind: FlowKind,
    start: &PhasePoint,
    t_span: (f64, f64),
    opts: &FlowOptions,
) -> Result<Trajectory> {
    check_start(spec, kind, start)?;
    if spec.metric.max_order() < 2 || spec.potential.max_order() < 2 {
        return Err(Error::UnsupportedOrder {
            requested: 2,
            supported: spec.metric.max_order().min(spec.potential.max_order()),
        });
    }
    let field = HamiltonField::new(spec, kind, true);
    let sol = field.integrate(start, t_span.0, t_span.1, opts)?;
    Ok(build_trajectory(&field, kind, sol))
}

/// Endpoint of a flow run of duration `t` from `start`, without keeping
/// the history.
#[derive(Debug, Clone)]
pub struct FlowEndpoint {
    pub point: PhasePoint,
    pub action: f64,
    /// `d(y, eta)/d(x0, xi0)` (variational runs only).
    pub jacobian: Option<DMatrix<f64>>,
    /// `d action/d(x0, xi0)` (variational runs only).
    pub action_gradient: Option<Vec<f64>>,
}

pub fn flow_endpoint(
    spec: &HamiltonianSpec,
    kind: FlowKind,
    start: &PhasePoint,
    t: f64,
    opts: &FlowOptions,
    variational: bool,
) -> Result<FlowEndpoint> {
    check_start(spec, kind, start)?;
    let field = HamiltonField::new(spec, kind, variational);
    let mut o = opts.clone();
    o.record_steps = false;
    o.samples.clear();
    let sol = field.integrate(start, 0.0, t, &o)?;
    let (_, s) = sol.last();
    Ok(FlowEndpoint {
        point: field.unpack_point(s),
        action: s[2 * field.n],
        jacobian: variational.then(|| field.unpack_jacobian(s)),
        action_gradient: variational.then(|| field.unpack_action_gradient(s)),
    })
}

/// Runs many starts in parallel over the same span.
pub fn integrate_batch(
    spec: &HamiltonianSpec,
    kind: FlowKind,
    starts: &[PhasePoint],
    t_span: (f64, f64),
    opts: &FlowOptions,
) -> Vec<Result<Trajectory>> {
    starts
        .par_iter()
        .map(|s| integrate_flow(spec, kind, s, t_span, opts))
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaledLimitRow {
    pub lambda: f64,
    /// `sup_t |(y^lambda, eta^lambda)(t) - (y~, eta~)(t)|`.
    pub deviation: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaledLimitReport {
    pub rows: Vec<ScaledLimitRow>,
    /// Deviations never grow along the ladder (beyond a `1e-10` noise floor).
    pub nonincreasing: bool,
    /// Log-log slope of deviation against lambda (NaN when deviations vanish).
    pub slope: f64,
}

/// Compares the scaled flow with the kinetic flow on a uniform 201-point
/// time grid, for each `lambda` in an increasing ladder.
pub fn scaled_flow_limit_check(
    spec: &HamiltonianSpec,
    start: &PhasePoint,
    ladder: &[f64],
    t_span: (f64, f64),
    opts: &FlowOptions,
) -> Result<ScaledLimitReport> {
    if ladder.is_empty() || ladder.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Precondition(
            "lambda ladder must be increasing".into(),
        ));
    }
    let grid = crate::util::linspace(t_span.0, t_span.1, 201);
    let o = opts.clone().with_samples(grid).sparse();
    let reference = integrate_flow(spec, FlowKind::Kinetic, start, t_span, &o)?;
    let rows: Vec<ScaledLimitRow> = ladder
        .par_iter()
        .map(|&lambda| {
            let tr = integrate_flow(spec, FlowKind::Scaled(lambda), start, t_span, &o)?;
            let deviation = tr
                .states
                .iter()
                .zip(&reference.states)
                .map(|(a, b)| {
                    let d: Vec<f64> =
                        a.x.iter()
                            .zip(&b.x)
                            .chain(a.xi.iter().zip(&b.xi))
                            .map(|(p, q)| p - q)
                            .collect();
                    norm(&d)
                })
                .fold(0.0, f64::max);
            Ok(ScaledLimitRow { lambda, deviation })
        })
        .collect::<Result<_>>()?;
    let nonincreasing = rows
        .windows(2)
        .all(|w| w[1].deviation <= w[0].deviation + 1e-10);
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.deviation > 0.0)
        .map(|r| (r.lambda.ln(), r.deviation.ln()))
        .collect();
    let slope = if pts.len() >= 2 {
        fit_slope(&pts)
    } else {
        f64::NAN
    };
    Ok(ScaledLimitReport {
        rows,
        nonincreasing,
        slope,
    })
}

/// `|y~(t; x, lambda xi) - y~(lambda t; x, xi)| + |eta~(t; x, lambda xi) - lambda eta~(lambda t; x, xi)|`.
pub fn kinetic_homogeneity_check(
    spec: &HamiltonianSpec,
    start: &PhasePoint,
    lambda: f64,
    t: f64,
    opts: &FlowOptions,
) -> Result<f64> {
    if !(lambda > 0.0) {
        return Err(Error::Domain("lambda must be positive".into()));
    }
    if lambda == 1.0 {
        return Ok(0.0);
    }
    let a = flow_endpoint(
        spec,
        FlowKind::Kinetic,
        &start.scaled_xi(lambda),
        t,
        opts,
        false,
    )?;
    let b = flow_endpoint(spec, FlowKind::Kinetic, start, lambda * t, opts, false)?;
    let dy: Vec<f64> = a
        .point
        .x
        .iter()
        .zip(&b.point.x)
        .map(|(p, q)| p - q)
        .collect();
    let de: Vec<f64> = a
        .point
        .xi
        .iter()
        .zip(&b.point.xi)
        .map(|(p, q)| p - lambda * q)
        .collect();
    Ok(norm(&dy) + norm(&de))
}

#[derive(Debug, Clone, Serialize)]
pub struct APrioriBounds {
    /// `max sup_t |y(t)| / |xi|` over the samples.
    pub alpha: f64,
    /// `max sup_t |eta(t)| / |xi|` over the samples.
    pub beta: f64,
    pub samples: usize,
}

/// Estimates the constants in `|y(t)| <= alpha |xi|`, `|eta(t)| <= beta |xi|`
/// for `t` in `[-t_max, t_max]` along the full flow.
pub fn a_priori_bounds(
    spec: &HamiltonianSpec,
    starts: &[PhasePoint],
    t_max: f64,
    opts: &FlowOptions,
) -> Result<APrioriBounds> {
    if starts.is_empty() {
        return Err(Error::Precondition("no sample starts".into()));
    }
    let per: Vec<(f64, f64)> = starts
        .par_iter()
        .map(|s| {
            let xin = norm(&s.xi);
            if xin <= 1.0 {
                return Err(Error::Precondition("a priori bounds need |xi| > 1".into()));
            }
            let mut best = (0.0f64, 0.0f64);
            for t1 in [-t_max, t_max] {
                let tr = integrate_flow(spec, FlowKind::Full, s, (0.0, t1), opts)?;
                for p in &tr.states {
                    best.0 = best.0.max(norm(&p.x) / xin);
                    best.1 = best.1.max(norm(&p.xi) / xin);
                }
            }
            Ok(best)
        })
        .collect::<Result<_>>()?;
    Ok(APrioriBounds {
        alpha: per.iter().map(|p| p.0).fold(0.0, f64::max),
        beta: per.iter().map(|p| p.1).fold(0.0, f64::max),
        samples: starts.len(),
    })
}
