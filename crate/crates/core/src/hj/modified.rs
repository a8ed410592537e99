//! Modified flows `S_t = T_t o exp(t H_p)` with `T_t(x, xi) = (x - d_xi W(t, xi), xi)`,
//! generated by `l(t; x, xi) = p(x + d_xi W, xi) - d_t W`, and transport along them.

use std::sync::Mutex;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::HJSolution;
use crate::catalog::eval_total;
use crate::error::{Error, Result};
use crate::flow::{flow_endpoint, hamilton_rhs, rk_integrate, FlowKind, FlowOptions, PhasePoint};
use crate::util::norm;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModifiedFlowState {
    pub t: f64,
    pub z: Vec<f64>,
    pub xi: Vec<f64>,
}

impl ModifiedFlowState {
    pub fn point(&self) -> PhasePoint {
        PhasePoint::new(self.z.clone(), self.xi.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PushforwardRoute {
    /// Backward flow of `H_p` after undoing `T_t`.
    #[default]
    Composition,
    /// Backward integration of the Hamilton system of `l`.
    LFlow,
}

/// `l(t; x, xi) = p(x + d_xi W(t, xi), xi) - d_t W(t, xi)`.
pub fn eval_effective_symbol(hj: &HJSolution, t: f64, x: &[f64], xi: &[f64]) -> Result<f64> {
    let e = hj.eval(t, xi)?;
    let shifted: Vec<f64> = x.iter().zip(&e.grad_xi).map(|(a, b)| a + b).collect();
    Ok(eval_total(hj.spec(), &shifted, xi)? - e.dt)
}

fn require_high(hj: &HJSolution, t: f64, xi: &[f64]) -> Result<()> {
    if norm(xi) < hj.high_threshold() {
        return Err(Error::Range(format!(
            "|xi| = {:.4} at t = {t} is below the high-frequency range |xi| >= {:.4}",
            norm(xi),
            hj.high_threshold()
        )));
    }
    Ok(())
}

/// Right-hand side of the Hamilton system of `l`:
/// `z' = d_xi p(X, xi) + Hess W d_x p(X, xi) - d_xi d_t W`, `xi' = -d_x p(X, xi)`
/// with `X = z + d_xi W`.
fn ell_rhs(hj: &HJSolution, s: f64, state: &[f64], out: &mut [f64]) -> Result<()> {
    let n = state.len() / 2;
    let (z, xi) = state.split_at(n);
    require_high(hj, s, xi)?;
    let e = hj.eval(s, xi)?;
    let x: Vec<f64> = z.iter().zip(&e.grad_xi).map(|(a, b)| a + b).collect();
    let (dxi_p, xi_dot) = hamilton_rhs(hj.spec(), FlowKind::Full, &PhasePoint::new(x, xi.to_vec()));
    let dx_p = DVector::from_iterator(n, xi_dot.iter().map(|v| -v));
    let coupled = &e.hessian * dx_p;
    for i in 0..n {
        out[i] = dxi_p[i] + coupled[i] - e.dt_grad[i];
        out[n + i] = xi_dot[i];
    }
    Ok(())
}

/// Integrates the `l`-flow from `s = t_from` to `s = t_to`, returning the
/// states at the start, at every sample strictly in between and at the end.
fn integrate_ell(
    hj: &HJSolution,
    state: &[f64],
    t_from: f64,
    t_to: f64,
    samples: &[f64],
    flow: &FlowOptions,
) -> Result<Vec<ModifiedFlowState>> {
    let (lo, hi) = hj.t_range();
    for &t in [t_from, t_to].iter().chain(samples) {
        if !(t >= lo && t <= hi) {
            return Err(Error::Range(format!("t = {t} outside [{lo}, {hi}]")));
        }
    }
    let failure: Mutex<Option<Error>> = Mutex::new(None);
    let f = |s: f64, y: &[f64], dy: &mut [f64]| {
        if let Err(e) = ell_rhs(hj, s, y, dy) {
            dy.iter_mut().for_each(|v| *v = f64::NAN);
            failure.lock().unwrap().get_or_insert(e);
        }
    };
    let sol = rk_integrate(f, t_from, state, t_to, samples, false, &flow.control());
    if let Some(e) = failure.into_inner().unwrap() {
        return Err(e);
    }
    let sol = sol?;
    let n = state.len() / 2;
    Ok(sol
        .t
        .iter()
        .zip(&sol.y)
        .map(|(&t, y)| ModifiedFlowState {
            t,
            z: y[..n].to_vec(),
            xi: y[n..].to_vec(),
        })
        .collect())
}

/// `z(t)` from the `l`-flow with `z(0) = x + R xi/|xi|`, `xi(0) = xi`, for
/// `t_end` in the HJ time range. Returns the states at 0, at the samples and
/// at `t_end`.
pub fn modified_flow(
    hj: &HJSolution,
    start: &PhasePoint,
    t_end: f64,
    samples: &[f64],
    flow: &FlowOptions,
) -> Result<Vec<ModifiedFlowState>> {
    if start.dim() != hj.spec().dim() || !start.is_finite() {
        return Err(Error::Domain(
            "start point has wrong dimension or is not finite".into(),
        ));
    }
    require_high(hj, 0.0, &start.xi)?;
    let m = norm(&start.xi);
    let mut state: Vec<f64> = start
        .x
        .iter()
        .zip(&start.xi)
        .map(|(x, v)| x + hj.r() * v / m)
        .collect();
    state.extend_from_slice(&start.xi);
    integrate_ell(hj, &state, 0.0, t_end, samples, flow)
}

/// `S_t(x, xi) = T_t(exp(t H_p)(x, xi))`.
pub fn modified_flow_composition(
    hj: &HJSolution,
    start: &PhasePoint,
    t: f64,
    flow: &FlowOptions,
) -> Result<ModifiedFlowState> {
    let e = flow_endpoint(hj.spec(), FlowKind::Full, start, t, flow, false)?;
    let eta = e.point.xi;
    require_high(hj, t, &eta)?;
    let g = hj.grad_xi(t, &eta)?;
    Ok(ModifiedFlowState {
        t,
        z: e.point.x.iter().zip(&g).map(|(y, w)| y - w).collect(),
        xi: eta,
    })
}

/// `S_t^{-1}(z, xi)`.
pub fn inverse_modified_flow(
    hj: &HJSolution,
    query: &PhasePoint,
    t: f64,
    route: PushforwardRoute,
    flow: &FlowOptions,
) -> Result<PhasePoint> {
    if query.dim() != hj.spec().dim() || !query.is_finite() {
        return Err(Error::Domain(
            "query point has wrong dimension or is not finite".into(),
        ));
    }
    require_high(hj, t, &query.xi)?;
    match route {
        PushforwardRoute::Composition => {
            let g = hj.grad_xi(t, &query.xi)?;
            let y: Vec<f64> = query.x.iter().zip(&g).map(|(z, w)| z + w).collect();
            let e = flow_endpoint(
                hj.spec(),
                FlowKind::Full,
                &PhasePoint::new(y, query.xi.clone()),
                -t,
                flow,
                false,
            )?;
            Ok(e.point)
        }
        PushforwardRoute::LFlow => {
            let mut state = query.x.clone();
            state.extend_from_slice(&query.xi);
            let path = integrate_ell(hj, &state, t, 0.0, &[], flow)?;
            let last = path.last().expect("non-empty path");
            let m = norm(&last.xi);
            Ok(PhasePoint::new(
                last.z
                    .iter()
                    .zip(&last.xi)
                    .map(|(z, v)| z - hj.r() * v / m)
                    .collect(),
                last.xi.clone(),
            ))
        }
    }
}

/// `f0 o S_t^{-1}` at the query points.
pub fn transport_pushforward<F>(
    f0: F,
    hj: &HJSolution,
    t: f64,
    queries: &[PhasePoint],
    route: PushforwardRoute,
    flow: &FlowOptions,
) -> Result<Vec<f64>>
where
    F: Fn(&PhasePoint) -> f64 + Sync,
{
    queries
        .par_iter()
        .map(|q| Ok(f0(&inverse_modified_flow(hj, q, t, route, flow)?)))
        .collect()
}
