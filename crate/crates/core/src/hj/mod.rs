//! Momentum-space Hamilton-Jacobi solution `W(t, xi)` for `t` in `[t0, 0]`.
//!
//! For `|xi| >= c4 R + 1`, `W = W1` where
//! `W1(t, xi) = int_0^t (p(y, eta) + y . d_s eta) ds - R |zeta|` along the
//! trajectory `(y, eta)` started at `(-R zeta/|zeta|, zeta)` and `zeta` solves
//! `eta(t) = xi`. For `|xi| <= c4 R`, `W = -R |xi| + t |xi|^2 / 2`. The band in
//! between is a smooth blend.

mod modified;

use std::collections::HashMap;
use std::fmt::Write as _;
use std::sync::{Arc, RwLock};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

pub use modified::{
    eval_effective_symbol, inverse_modified_flow, modified_flow, modified_flow_composition,
    transport_pushforward, ModifiedFlowState, PushforwardRoute,
};

use crate::catalog::validate::unit_directions;
use crate::catalog::{eval_total, HamiltonianSpec};
use crate::error::{Error, Result};
use crate::flow::{flow_endpoint, hamilton_rhs, FlowEndpoint, FlowKind, FlowOptions, PhasePoint};
use crate::util::{dot, norm, smooth_step};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NewtonOptions {
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for NewtonOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 20,
        }
    }
}

#[derive(Debug, Clone)]
pub struct HJConfig {
    /// Left end of the time range; the range is `[t0, 0]`.
    pub t0: f64,
    pub r_candidates: Vec<f64>,
    pub c0: f64,
    /// Probe magnitudes per direction, geometric in `[c0 R, 100 R]`.
    pub probes: usize,
    /// Largest admissible `|d Lambda/d xi - I|` (spectral norm) on the probes.
    pub jacobian_tolerance: f64,
    pub flow: FlowOptions,
    pub newton: NewtonOptions,
    pub cache: bool,
}

impl Default for HJConfig {
    fn default() -> Self {
        Self {
            t0: -2.0,
            r_candidates: vec![10.0, 20.0, 40.0, 80.0],
            c0: 1.0,
            probes: 6,
            jacobian_tolerance: 0.5,
            flow: FlowOptions::with_tol(1e-12, 1e-12).sparse(),
            newton: NewtonOptions::default(),
            cache: true,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct CalibrationRow {
    pub r: f64,
    pub max_jacobian_defect: f64,
    /// `max |Lambda(xi) - xi| / |xi|` over the probes.
    pub max_relative_shift: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct Calibration {
    pub r: f64,
    pub c0: f64,
    pub c4: f64,
    pub rows: Vec<CalibrationRow>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Low,
    Band,
    High,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Low => "low",
            Branch::Band => "band",
            Branch::High => "high",
        }
    }
}

/// `W` and its derivatives at one `(t, xi)`.
#[derive(Debug, Clone)]
pub struct WEval {
    pub t: f64,
    pub xi: Vec<f64>,
    pub branch: Branch,
    /// Weight of the high-frequency branch.
    pub chi: f64,
    pub w: f64,
    pub grad_xi: Vec<f64>,
    pub dt: f64,
    pub hessian: DMatrix<f64>,
    /// `d_xi d_t W`.
    pub dt_grad: Vec<f64>,
}

/// Residuals of the high-frequency branch against routes that do not use the
/// values they are compared with.
#[derive(Debug, Clone, Serialize)]
pub struct HJResidual {
    pub t: f64,
    pub xi: Vec<f64>,
    pub branch: Branch,
    /// `|d_t W - p(d_xi W, xi)|` with `d_t W` from the action gradient.
    pub hj: f64,
    /// `|d_xi W - y(t)|` with `d_xi W` from the action gradient.
    pub grad: f64,
}

/// Forward map `xi -> eta(t; -R xi/|xi|, xi)` with its Jacobian.
#[derive(Debug, Clone)]
pub struct LambdaValue {
    pub eta: Vec<f64>,
    pub jacobian: DMatrix<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone)]
pub struct Inversion {
    pub zeta: Vec<f64>,
    /// Number of forward evaluations.
    pub iterations: usize,
    pub residuals: Vec<f64>,
}

/// Trajectory from `(-R zeta/|zeta|, zeta)` with the Jacobians of its endpoint
/// with respect to `zeta`.
struct Orbit {
    zeta: Vec<f64>,
    end: FlowEndpoint,
    d: DMatrix<f64>,
    m_y: DMatrix<f64>,
    m_eta: DMatrix<f64>,
}

/// `d(-R zeta/|zeta|)/d zeta`.
fn anchor_derivative(zeta: &[f64], r: f64) -> DMatrix<f64> {
    let n = zeta.len();
    let z = norm(zeta);
    DMatrix::from_fn(n, n, |i, j| {
        let delta = if i == j { 1.0 } else { 0.0 };
        -r * (delta - zeta[i] * zeta[j] / (z * z)) / z
    })
}

fn orbit(
    spec: &HamiltonianSpec,
    t: f64,
    zeta: &[f64],
    r: f64,
    flow: &FlowOptions,
) -> Result<Orbit> {
    let z = norm(zeta);
    if !(z > 0.0) || !z.is_finite() {
        return Err(Error::Domain(format!("invalid covector {zeta:?}")));
    }
    let n = zeta.len();
    let start = PhasePoint::new(zeta.iter().map(|v| -r * v / z).collect(), zeta.to_vec());
    let end = flow_endpoint(spec, FlowKind::Full, &start, t, flow, true)?;
    let j = end.jacobian.as_ref().expect("variational run");
    let d = anchor_derivative(zeta, r);
    let m_y = j.view((0, 0), (n, n)) * &d + j.view((0, n), (n, n));
    let m_eta = j.view((n, 0), (n, n)) * &d + j.view((n, n), (n, n));
    Ok(Orbit {
        zeta: zeta.to_vec(),
        end,
        d,
        m_y,
        m_eta,
    })
}

fn check_dim(spec: &HamiltonianSpec, xi: &[f64]) -> Result<()> {
    if xi.len() != spec.dim() {
        return Err(Error::Domain(format!(
            "covector has dimension {}, expected {}",
            xi.len(),
            spec.dim()
        )));
    }
    if xi.iter().any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite covector".into()));
    }
    Ok(())
}

/// `Lambda(xi) = eta(t; -R xi/|xi|, xi)`. A warning is attached when
/// `|xi| < c0 R`.
pub fn lambda_map(
    spec: &HamiltonianSpec,
    t: f64,
    xi: &[f64],
    r: f64,
    c0: f64,
    flow: &FlowOptions,
) -> Result<LambdaValue> {
    check_dim(spec, xi)?;
    let o = orbit(spec, t, xi, r, flow)?;
    let warning = (norm(xi) < c0 * r).then(|| {
        format!(
            "|xi| = {:.3} is below c0 R = {:.3}; Lambda need not be invertible here",
            norm(xi),
            c0 * r
        )
    });
    Ok(LambdaValue {
        eta: o.end.point.xi.clone(),
        jacobian: o.m_eta,
        warning,
    })
}

fn newton(
    spec: &HamiltonianSpec,
    t: f64,
    target: &[f64],
    r: f64,
    opts: &NewtonOptions,
    flow: &FlowOptions,
) -> Result<(Orbit, Vec<f64>)> {
    let scale = norm(target).max(1.0);
    let residual_of = |o: &Orbit| norm(&sub(&o.end.point.xi, target));
    let mut cur = orbit(spec, t, target, r, flow)?;
    let mut res = residual_of(&cur);
    let mut history = vec![res];
    while res > opts.tol {
        if history.len() > opts.max_iter {
            return Err(Error::Convergence {
                message: format!("Lambda inversion at t = {t} did not reach {:.1e}", opts.tol),
                residuals: history,
            });
        }
        let rhs = DVector::from_vec(sub(&cur.end.point.xi, target));
        let step = cur
            .m_eta
            .clone()
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Convergence {
                message: "singular d Lambda/d xi".into(),
                residuals: history.clone(),
            })?;
        // backtracking on the residual
        let mut damp = 1.0;
        let next = loop {
            let z: Vec<f64> = cur
                .zeta
                .iter()
                .zip(step.iter())
                .map(|(a, b)| a - damp * b)
                .collect();
            let o = orbit(spec, t, &z, r, flow)?;
            if residual_of(&o) < res || damp < 1e-3 {
                break o;
            }
            damp *= 0.5;
        };
        let next_res = residual_of(&next);
        history.push(next_res);
        if next_res >= 0.5 * res && next_res <= 100.0 * opts.tol * scale {
            // stagnated at the integration noise floor
            cur = next;
            break;
        }
        cur = next;
        res = next_res;
    }
    Ok((cur, history))
}

/// Solves `Lambda(zeta) = xi_target` by Newton iteration on the variational
/// Jacobian, starting from `zeta = xi_target`.
pub fn invert_lambda(
    spec: &HamiltonianSpec,
    t: f64,
    xi_target: &[f64],
    r: f64,
    opts: &NewtonOptions,
    flow: &FlowOptions,
) -> Result<Inversion> {
    check_dim(spec, xi_target)?;
    let (o, residuals) = newton(spec, t, xi_target, r, opts, flow)?;
    Ok(Inversion {
        zeta: o.zeta,
        iterations: residuals.len(),
        residuals,
    })
}

/// `(W, d_xi W, d_t W)` for explicit `R` and `c4` without calibration or cache.
pub fn build_w(
    spec: &HamiltonianSpec,
    t: f64,
    xi: &[f64],
    r: f64,
    c4: f64,
) -> Result<(f64, Vec<f64>, f64)> {
    let cfg = HJConfig {
        t0: t.min(0.0),
        cache: false,
        ..HJConfig::default()
    };
    let hj = HJSolution::with_params(spec, r, c4, &cfg)?;
    let e = hj.eval(t, xi)?;
    Ok((e.w, e.grad_xi, e.dt))
}

fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Everything the high branch needs at one `(t, xi)`.
#[derive(Debug)]
struct HighEval {
    w: f64,
    grad: Vec<f64>,
    hess: DMatrix<f64>,
    dt: f64,
    dt_grad: Vec<f64>,
    dt_chain: f64,
    grad_chain: Vec<f64>,
}

type CacheKey = (u64, Vec<u64>);

#[derive(Debug)]
pub struct HJSolution {
    spec: HamiltonianSpec,
    r: f64,
    c4: f64,
    t_range: (f64, f64),
    flow: FlowOptions,
    newton: NewtonOptions,
    calibration: Option<Calibration>,
    cache: Option<RwLock<HashMap<CacheKey, Arc<HighEval>>>>,
}

impl HJSolution {
    /// Uses the given anchor radius and gluing constant.
    pub fn with_params(spec: &HamiltonianSpec, r: f64, c4: f64, cfg: &HJConfig) -> Result<Self> {
        if !(r > 0.0 && c4 > 0.0) {
            return Err(Error::Precondition(format!(
                "need R > 0 and c4 > 0, got {r}, {c4}"
            )));
        }
        if !(cfg.t0 <= 0.0) {
            return Err(Error::Precondition(format!("t0 = {} must be <= 0", cfg.t0)));
        }
        Ok(Self {
            spec: spec.clone(),
            r,
            c4,
            t_range: (cfg.t0, 0.0),
            flow: cfg.flow.clone(),
            newton: cfg.newton,
            calibration: None,
            cache: cfg.cache.then(|| RwLock::new(HashMap::new())),
        })
    }

    /// Picks the smallest `R` among the candidates whose forward map stays
    /// within `jacobian_tolerance` of the identity on the probe set, and sets
    /// `c4 = 2 (max relative shift + 1)`.
    pub fn calibrate(spec: &HamiltonianSpec, cfg: &HJConfig) -> Result<Self> {
        let n = spec.dim();
        let dirs = unit_directions(n);
        let times = [cfg.t0, 0.5 * cfg.t0];
        let mut rows = Vec::new();
        for &r in &cfg.r_candidates {
            let lo = cfg.c0 * r;
            let hi = 100.0 * r;
            let mut probes = Vec::new();
            for k in 0..cfg.probes {
                let m = lo * (hi / lo).powf(k as f64 / (cfg.probes.max(2) - 1) as f64);
                for d in &dirs {
                    for &t in &times {
                        probes.push((t, d.iter().map(|v| v * m).collect::<Vec<f64>>()));
                    }
                }
            }
            let stats: Vec<(f64, f64)> = probes
                .par_iter()
                .map(|(t, xi)| {
                    let o = orbit(spec, *t, xi, r, &cfg.flow)?;
                    let defect = (&o.m_eta - DMatrix::identity(n, n)).singular_values().max();
                    Ok((defect, norm(&sub(&o.end.point.xi, xi)) / norm(xi)))
                })
                .collect::<Result<_>>()?;
            let max_jacobian_defect = stats.iter().map(|s| s.0).fold(0.0, f64::max);
            let max_relative_shift = stats.iter().map(|s| s.1).fold(0.0, f64::max);
            let accepted = max_jacobian_defect <= cfg.jacobian_tolerance;
            rows.push(CalibrationRow {
                r,
                max_jacobian_defect,
                max_relative_shift,
                accepted,
            });
            if accepted {
                let c4 = 2.0 * (max_relative_shift + 1.0);
                let mut hj = Self::with_params(spec, r, c4, cfg)?;
                hj.calibration = Some(Calibration {
                    r,
                    c0: cfg.c0,
                    c4,
                    rows,
                });
                return Ok(hj);
            }
        }
        Err(Error::Convergence {
            message: format!(
                "no anchor radius in {:?} keeps d Lambda/d xi within {} of the identity",
                cfg.r_candidates, cfg.jacobian_tolerance
            ),
            residuals: rows.iter().map(|r| r.max_jacobian_defect).collect(),
        })
    }

    pub fn spec(&self) -> &HamiltonianSpec {
        &self.spec
    }
    pub fn r(&self) -> f64 {
        self.r
    }
    pub fn c4(&self) -> f64 {
        self.c4
    }
    pub fn calibration(&self) -> Option<&Calibration> {
        self.calibration.as_ref()
    }
    pub fn flow_options(&self) -> &FlowOptions {
        &self.flow
    }
    /// `|xi|` at or below which `W` is the explicit quadratic form.
    pub fn low_threshold(&self) -> f64 {
        self.c4 * self.r
    }
    /// `|xi|` at or above which `W = W1`.
    pub fn high_threshold(&self) -> f64 {
        self.c4 * self.r + 1.0
    }
    pub fn band(&self) -> (f64, f64) {
        (self.low_threshold(), self.high_threshold())
    }
    pub fn t_range(&self) -> (f64, f64) {
        self.t_range
    }

    pub fn cache_len(&self) -> usize {
        self.cache.as_ref().map_or(0, |c| c.read().unwrap().len())
    }

    pub fn clear_cache(&self) {
        if let Some(c) = &self.cache {
            c.write().unwrap().clear();
        }
    }

    fn check(&self, t: f64, xi: &[f64]) -> Result<()> {
        check_dim(&self.spec, xi)?;
        let (lo, hi) = self.t_range;
        if !(t >= lo && t <= hi) {
            return Err(Error::Range(format!("t = {t} outside [{lo}, {hi}]")));
        }
        Ok(())
    }

    fn high(&self, t: f64, xi: &[f64]) -> Result<Arc<HighEval>> {
        let key = (
            t.to_bits(),
            xi.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        );
        if let Some(c) = &self.cache {
            if let Some(h) = c.read().unwrap().get(&key) {
                return Ok(h.clone());
            }
        }
        let h = Arc::new(self.compute_high(t, xi)?);
        if let Some(c) = &self.cache {
            c.write().unwrap().insert(key, h.clone());
        }
        Ok(h)
    }

    fn compute_high(&self, t: f64, xi: &[f64]) -> Result<HighEval> {
        let spec = &self.spec;
        let r = self.r;
        let (o, _) = newton(spec, t, xi, r, &self.newton, &self.flow)?;
        let y = &o.end.point.x;
        let eta = &o.end.point.xi;
        let res = DVector::from_vec(sub(eta, xi));
        let lu = o.m_eta.clone().lu();
        let hess = &o.m_y
            * lu.try_inverse().ok_or_else(|| {
                Error::Domain(format!("d Lambda/d xi is singular at t = {t}, xi = {xi:?}"))
            })?;
        // first-order correction for the remaining Newton residual
        let w = o.end.action - r * norm(&o.zeta) - dot(y, res.as_slice());
        let grad: Vec<f64> = (DVector::from_column_slice(y) - &hess * &res)
            .iter()
            .cloned()
            .collect();
        let at = PhasePoint::new(grad.clone(), xi.to_vec());
        let dt = eval_total(spec, &grad, xi)?;
        let (dxi_p, minus_dx_p) = hamilton_rhs(spec, FlowKind::Full, &at);
        let dx_p = DVector::from_iterator(minus_dx_p.len(), minus_dx_p.iter().map(|v| -v));
        let dt_grad: Vec<f64> = (&hess * dx_p + DVector::from_vec(dxi_p))
            .iter()
            .cloned()
            .collect();

        // independent route through the action gradient
        let n = xi.len();
        let g = o.end.action_gradient.as_ref().expect("variational run");
        let g_x = DVector::from_column_slice(&g[..n]);
        let g_xi = DVector::from_column_slice(&g[n..]);
        let zn = norm(&o.zeta);
        let anchor = DVector::from_iterator(n, o.zeta.iter().map(|v| r * v / zn));
        let g_zeta = &o.d * g_x + g_xi - anchor;
        let (_, eta_dot) = hamilton_rhs(spec, FlowKind::Full, &o.end.point);
        let lagrangian = eval_total(spec, y, eta)? + dot(y, &eta_dot);
        let zeta_dot = o
            .m_eta
            .clone()
            .lu()
            .solve(&DVector::from_vec(eta_dot))
            .map(|v| -v)
            .ok_or_else(|| Error::Domain("singular d Lambda/d xi".into()))?;
        let dt_chain = lagrangian + g_zeta.dot(&zeta_dot);
        let grad_chain = o
            .m_eta
            .transpose()
            .lu()
            .solve(&g_zeta)
            .ok_or_else(|| Error::Domain("singular d Lambda/d xi".into()))?;
        Ok(HighEval {
            w,
            grad,
            hess,
            dt,
            dt_grad,
            dt_chain,
            grad_chain: grad_chain.iter().cloned().collect(),
        })
    }

    fn low(&self, t: f64, xi: &[f64]) -> (f64, Vec<f64>, f64, DMatrix<f64>, Vec<f64>) {
        let n = xi.len();
        let m = norm(xi);
        let r = self.r;
        let q = 0.5 * m * m;
        if m == 0.0 {
            // -R|xi| is not differentiable at the origin; its gradient is taken as 0
            return (
                0.0,
                vec![0.0; n],
                0.0,
                DMatrix::identity(n, n) * t,
                vec![0.0; n],
            );
        }
        let grad = xi.iter().map(|v| -r * v / m + t * v).collect();
        let hess = DMatrix::from_fn(n, n, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            -r * (delta - xi[i] * xi[j] / (m * m)) / m + t * delta
        });
        (-r * m + t * q, grad, q, hess, xi.to_vec())
    }

    /// `W`, `d_xi W`, `d_t W`, the Hessian and `d_xi d_t W` at `(t, xi)`.
    pub fn eval(&self, t: f64, xi: &[f64]) -> Result<WEval> {
        self.check(t, xi)?;
        let m = norm(xi);
        let (lo, hi) = self.band();
        let (w0, g0, dt0, h0, dg0) = self.low(t, xi);
        if m <= lo {
            return Ok(WEval {
                t,
                xi: xi.to_vec(),
                branch: Branch::Low,
                chi: 0.0,
                w: w0,
                grad_xi: g0,
                dt: dt0,
                hessian: h0,
                dt_grad: dg0,
            });
        }
        let h = self.high(t, xi)?;
        if m >= hi {
            return Ok(WEval {
                t,
                xi: xi.to_vec(),
                branch: Branch::High,
                chi: 1.0,
                w: h.w,
                grad_xi: h.grad.clone(),
                dt: h.dt,
                hessian: h.hess.clone(),
                dt_grad: h.dt_grad.clone(),
            });
        }
        let n = xi.len();
        let (chi, d1, d2) = smooth_step(m - lo);
        let unit: Vec<f64> = xi.iter().map(|v| v / m).collect();
        let dw = h.w - w0;
        let dg: Vec<f64> = sub(&h.grad, &g0);
        let w = chi * h.w + (1.0 - chi) * w0;
        let grad_xi: Vec<f64> = (0..n)
            .map(|i| chi * h.grad[i] + (1.0 - chi) * g0[i] + d1 * dw * unit[i])
            .collect();
        let dt = chi * h.dt + (1.0 - chi) * dt0;
        let hessian = DMatrix::from_fn(n, n, |i, j| {
            let delta = if i == j { 1.0 } else { 0.0 };
            chi * h.hess[(i, j)]
                + (1.0 - chi) * h0[(i, j)]
                + d1 * (unit[i] * dg[j] + dg[i] * unit[j])
                + dw * (d2 * unit[i] * unit[j] + d1 * (delta - unit[i] * unit[j]) / m)
        });
        let dt_grad = (0..n)
            .map(|i| chi * h.dt_grad[i] + (1.0 - chi) * dg0[i] + d1 * unit[i] * (h.dt - dt0))
            .collect();
        Ok(WEval {
            t,
            xi: xi.to_vec(),
            branch: Branch::Band,
            chi,
            w,
            grad_xi,
            dt,
            hessian,
            dt_grad,
        })
    }

    pub fn w(&self, t: f64, xi: &[f64]) -> Result<f64> {
        Ok(self.eval(t, xi)?.w)
    }

    pub fn grad_xi(&self, t: f64, xi: &[f64]) -> Result<Vec<f64>> {
        Ok(self.eval(t, xi)?.grad_xi)
    }

    pub fn dt(&self, t: f64, xi: &[f64]) -> Result<f64> {
        Ok(self.eval(t, xi)?.dt)
    }

    /// Hamilton-Jacobi and gradient residuals. On the high branch `d_t W` and
    /// `d_xi W` are recomputed from the action gradient of the trajectory and
    /// compared with `p(d_xi W, xi)` and the endpoint `y(t)`. The low branch is
    /// not a solution of the equation and reports `p(d_xi W, xi) - |xi|^2/2`;
    /// the band reports the blended defect.
    pub fn hj_residual(&self, t: f64, xi: &[f64]) -> Result<HJResidual> {
        let e = self.eval(t, xi)?;
        let (hj, grad) = match e.branch {
            Branch::High => {
                let h = self.high(t, xi)?;
                let p = eval_total(&self.spec, &h.grad, xi)?;
                ((h.dt_chain - p).abs(), norm(&sub(&h.grad_chain, &h.grad)))
            }
            _ => ((e.dt - eval_total(&self.spec, &e.grad_xi, xi)?).abs(), 0.0),
        };
        Ok(HJResidual {
            t,
            xi: xi.to_vec(),
            branch: e.branch,
            hj,
            grad,
        })
    }

    /// CSV table with columns `t, xi_1.., W, dW_1.., dtW, branch`.
    pub fn w_table_csv(&self, times: &[f64], xis: &[Vec<f64>]) -> Result<String> {
        let n = self.spec.dim();
        let mut out = String::from("t");
        for i in 1..=n {
            let _ = write!(out, ",xi_{i}");
        }
        out.push_str(",W");
        for i in 1..=n {
            let _ = write!(out, ",dW_{i}");
        }
        out.push_str(",dtW,branch\n");
        let jobs: Vec<(f64, &Vec<f64>)> = times
            .iter()
            .flat_map(|&t| xis.iter().map(move |x| (t, x)))
            .collect();
        let rows: Vec<WEval> = jobs
            .par_iter()
            .map(|(t, x)| self.eval(*t, x))
            .collect::<Result<_>>()?;
        for e in rows {
            let _ = write!(out, "{}", e.t);
            for v in &e.xi {
                let _ = write!(out, ",{v}");
            }
            let _ = write!(out, ",{}", e.w);
            for v in &e.grad_xi {
                let _ = write!(out, ",{v}");
            }
            let _ = writeln!(out, ",{},{}", e.dt, e.branch.as_str());
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lr() -> HamiltonianSpec {
        HamiltonianSpec::long_range(1, 0.5, 0.8)
    }

    fn cfg() -> HJConfig {
        HJConfig::default()
    }

    /// Fourth-order central difference.
    fn fd4(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (-f(x + 2.0 * h) + 8.0 * f(x + h) - 8.0 * f(x - h) + f(x - 2.0 * h)) / (12.0 * h)
    }

    #[test]
    fn flat_w_is_closed_form_on_every_branch() {
        let spec = HamiltonianSpec::flat(2);
        let hj = HJSolution::with_params(&spec, 20.0, 2.0, &cfg()).unwrap();
        for &t in &[0.0, -0.5, -2.0] {
            for &m in &[5.0, 40.3, 40.7, 60.0] {
                let xi = [0.6 * m, -0.8 * m];
                let e = hj.eval(t, &xi).unwrap();
                let exact = -20.0 * m + t * m * m / 2.0;
                assert!(
                    (e.w - exact).abs() <= 1e-9 * exact.abs().max(1.0),
                    "{t} {m}"
                );
                assert!((e.dt - m * m / 2.0).abs() <= 1e-9 * m * m);
                for i in 0..2 {
                    let g = -20.0 * xi[i] / m + t * xi[i];
                    assert!((e.grad_xi[i] - g).abs() <= 1e-9 * m);
                }
            }
        }
    }

    #[test]
    fn lambda_is_identity_when_flat_or_at_time_zero() {
        let o = FlowOptions::default();
        let f = lambda_map(&HamiltonianSpec::flat(1), -1.0, &[40.0], 20.0, 1.0, &o).unwrap();
        assert!((f.eta[0] - 40.0).abs() < 1e-12);
        let z = lambda_map(&lr(), 0.0, &[40.0], 20.0, 1.0, &o).unwrap();
        assert_eq!(z.eta, vec![40.0]);
        let inv = invert_lambda(
            &HamiltonianSpec::flat(1),
            -1.0,
            &[40.0],
            20.0,
            &NewtonOptions::default(),
            &o,
        )
        .unwrap();
        assert_eq!(inv.iterations, 1);
        assert!((inv.zeta[0] - 40.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_warns_below_regime() {
        let v = lambda_map(&lr(), -1.0, &[5.0], 20.0, 1.0, &FlowOptions::default()).unwrap();
        assert!(v.warning.is_some());
    }

    #[test]
    fn lambda_shift_scales_like_r_to_minus_mu() {
        // sweep oracle: |Lambda(xi) - xi| / (R^-mu |xi|) stays bounded over |xi| in [30, 100]
        let o = FlowOptions::reference();
        let ratios: Vec<f64> = (0..8)
            .map(|k| {
                let m = 30.0 + 10.0 * k as f64;
                let v = lambda_map(&lr(), -1.0, &[m], 20.0, 1.0, &o).unwrap();
                (v.eta[0] - m).abs() / (20f64.powf(-0.8) * m)
            })
            .collect();
        let c = ratios.iter().cloned().fold(0.0, f64::max);
        let v = lambda_map(&lr(), -1.0, &[40.0], 20.0, 1.0, &o).unwrap();
        assert!((v.eta[0] - 40.0).abs() <= c * 20f64.powf(-0.8) * 40.0 + 1e-12);
        assert!(c.is_finite() && c < 10.0, "{ratios:?}");
    }

    #[test]
    fn newton_converges_quickly() {
        let inv = invert_lambda(
            &lr(),
            -1.0,
            &[40.0],
            20.0,
            &NewtonOptions::default(),
            &FlowOptions::reference(),
        )
        .unwrap();
        assert!(inv.iterations <= 5, "{inv:?}");
        let v = lambda_map(&lr(), -1.0, &inv.zeta, 20.0, 1.0, &FlowOptions::reference()).unwrap();
        assert!((v.eta[0] - 40.0).abs() <= 1e-10);
    }

    #[test]
    fn newton_failure_reports_history() {
        let opts = NewtonOptions {
            tol: 1e-30,
            max_iter: 2,
        };
        let err =
            invert_lambda(&lr(), -1.0, &[40.0], 20.0, &opts, &FlowOptions::default()).unwrap_err();
        match err {
            Error::Convergence { residuals, .. } => assert!(!residuals.is_empty()),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn time_zero_gives_minus_r_norm() {
        let hj = HJSolution::with_params(&lr(), 20.0, 2.0, &cfg()).unwrap();
        let e = hj.eval(0.0, &[50.0]).unwrap();
        assert_eq!(e.branch, Branch::High);
        assert!((e.w + 20.0 * 50.0).abs() < 1e-9);
    }

    #[test]
    fn hj_residual_and_fd_gradients_on_long_range() {
        let hj = HJSolution::with_params(&lr(), 20.0, 2.0, &cfg()).unwrap();
        let r = hj.hj_residual(-1.0, &[50.0]).unwrap();
        assert_eq!(r.branch, Branch::High);
        assert!(r.hj <= 1e-6, "{r:?}");
        assert!(r.grad <= 1e-6, "{r:?}");
        let e = hj.eval(-1.0, &[50.0]).unwrap();
        let fd = fd4(|x| hj.w(-1.0, &[x]).unwrap(), 50.0, 1e-2);
        assert!(
            (fd - e.grad_xi[0]).abs() <= 1e-5,
            "{fd} vs {}",
            e.grad_xi[0]
        );
    }

    #[test]
    fn derivatives_match_finite_differences_across_the_band() {
        let hj = HJSolution::with_params(&lr(), 20.0, 2.0, &cfg()).unwrap();
        for &m in &[39.0, 40.2, 40.5, 40.8, 45.0] {
            let t = -0.7;
            let e = hj.eval(t, &[m]).unwrap();
            // the cutoff has large high derivatives near the band edges
            let fx = fd4(|x| hj.w(t, &[x]).unwrap(), m, 2e-3);
            let ft = fd4(|s| hj.w(s, &[m]).unwrap(), t, 1e-2);
            assert!(
                (fx - e.grad_xi[0]).abs() <= 1e-5,
                "xi {m}: {fx} vs {}",
                e.grad_xi[0]
            );
            assert!((ft - e.dt).abs() <= 1e-5, "t {m}: {ft} vs {}", e.dt);
            let fh = fd4(|x| hj.grad_xi(t, &[x]).unwrap()[0], m, 2e-3);
            assert!((fh - e.hessian[(0, 0)]).abs() <= 1e-5, "hess {m}");
            let fdt = fd4(|x| hj.dt(t, &[x]).unwrap(), m, 2e-3);
            assert!(
                (fdt - e.dt_grad[0]).abs() <= 1e-5,
                "dt grad {m}: {fdt} vs {}",
                e.dt_grad[0]
            );
        }
    }

    #[test]
    fn two_dimensional_gradient_and_residual() {
        let spec = HamiltonianSpec::long_range(2, 0.5, 0.8);
        let hj = HJSolution::with_params(&spec, 20.0, 2.0, &cfg()).unwrap();
        let xi = [30.0, 40.0];
        let r = hj.hj_residual(-1.0, &xi).unwrap();
        assert!(r.hj <= 1e-6 && r.grad <= 1e-6, "{r:?}");
        let e = hj.eval(-1.0, &xi).unwrap();
        for i in 0..2 {
            let fd = fd4(
                |s| {
                    let mut x = xi;
                    x[i] += s;
                    hj.w(-1.0, &x).unwrap()
                },
                0.0,
                1e-2,
            );
            assert!((fd - e.grad_xi[i]).abs() <= 1e-5);
        }
    }

    #[test]
    fn cache_has_no_semantic_effect() {
        let on = HJSolution::with_params(&lr(), 20.0, 2.0, &cfg()).unwrap();
        let off = HJSolution::with_params(
            &lr(),
            20.0,
            2.0,
            &HJConfig {
                cache: false,
                ..cfg()
            },
        )
        .unwrap();
        for &m in &[41.5, 60.0, -70.0] {
            let a = on.eval(-1.0, &[m]).unwrap();
            let b = on.eval(-1.0, &[m]).unwrap();
            let c = off.eval(-1.0, &[m]).unwrap();
            assert_eq!(a.w, b.w);
            assert!((a.w - c.w).abs() <= 1e-12 * a.w.abs().max(1.0));
            assert!((a.grad_xi[0] - c.grad_xi[0]).abs() <= 1e-12 * m.abs());
        }
        assert_eq!(on.cache_len(), 3);
        assert_eq!(off.cache_len(), 0);
    }

    #[test]
    fn out_of_range_time_is_rejected() {
        let hj = HJSolution::with_params(&lr(), 20.0, 2.0, &cfg()).unwrap();
        assert!(matches!(hj.eval(0.5, &[50.0]), Err(Error::Range(_))));
        assert!(matches!(hj.eval(-3.0, &[50.0]), Err(Error::Range(_))));
    }

    #[test]
    fn calibration_picks_a_candidate_radius() {
        let hj = HJSolution::calibrate(&lr(), &cfg()).unwrap();
        let cal = hj.calibration().unwrap();
        assert!(cfg().r_candidates.contains(&cal.r));
        assert!(cal.c4 >= 2.0);
        assert!(cal.rows.last().unwrap().accepted);
    }

    #[test]
    fn csv_table_has_header_and_branches() {
        let hj = HJSolution::with_params(&HamiltonianSpec::flat(1), 20.0, 2.0, &cfg()).unwrap();
        let csv = hj
            .w_table_csv(&[-1.0], &[vec![10.0], vec![40.5], vec![50.0]])
            .unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "t,xi_1,W,dW_1,dtW,branch");
        assert!(
            lines[1].ends_with("low") && lines[2].ends_with("band") && lines[3].ends_with("high")
        );
    }
}
