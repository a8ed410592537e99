use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{classify_backward_nontrapping, extrapolate, Extrapolation, NontrappingThresholds};
use crate::catalog::HamiltonianSpec;
use crate::error::{Error, Result};
use crate::flow::{flow_endpoint, integrate_flow, FlowKind, FlowOptions, PhasePoint};
use crate::hj::HJSolution;
use crate::util::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum XiMethod {
    /// `eta~(-T)` over a horizon ladder, extrapolated with the known decay rate.
    LongTime,
    /// `lambda^-1 eta(t0; x, lambda xi)` over a lambda ladder.
    LambdaLadder,
}

#[derive(Debug, Clone)]
pub struct ScatterOptions {
    pub t0: f64,
    pub ladder: Vec<f64>,
    /// Horizons `T` for the long-time method.
    pub horizons: Vec<f64>,
    pub flow: FlowOptions,
    /// Run the nontrapping classifier first and refuse trapped starts.
    pub verify_nontrapping: bool,
    pub nontrapping_horizon: f64,
}

impl Default for ScatterOptions {
    fn default() -> Self {
        Self {
            t0: -1.0,
            ladder: (0..5).map(|k| 8.0 * 2f64.powi(k)).collect(),
            horizons: (0..8).map(|k| 1e3 * 2f64.powi(k)).collect(),
            flow: FlowOptions::default(),
            verify_nontrapping: true,
            nontrapping_horizon: 100.0,
        }
    }
}

/// Asymptotic data of one start point.
#[derive(Debug, Clone, Serialize)]
pub struct ScatteringData {
    pub start: PhasePoint,
    pub t0: f64,
    pub method: String,
    /// Scales used (lambda values, or horizons for the long-time method).
    pub lambda_ladder: Vec<f64>,
    pub xi_minus: Vec<f64>,
    pub xi_iterates: Vec<Vec<f64>>,
    pub xi_fit: Extrapolation,
    pub z_minus: Option<Vec<f64>>,
    pub z_iterates: Vec<Vec<f64>>,
    pub z_fit: Option<Extrapolation>,
    /// Larger of the two extrapolation error estimates.
    pub extrapolation_error: f64,
}

fn ensure_nontrapping(
    spec: &HamiltonianSpec,
    start: &PhasePoint,
    opts: &ScatterOptions,
) -> Result<()> {
    if norm(&start.xi) == 0.0 {
        return Err(Error::Domain("xi = 0 is trapped".into()));
    }
    if opts.verify_nontrapping {
        let v = classify_backward_nontrapping(
            spec,
            start,
            opts.nontrapping_horizon,
            &NontrappingThresholds::default(),
        )?;
        if !v.is_backward_nontrapping {
            return Err(Error::Domain(format!(
                "start is not backward nontrapping: {}",
                v.reason
            )));
        }
    }
    Ok(())
}

fn check_ladder(ladder: &[f64]) -> Result<()> {
    if ladder.len() < 2 || ladder.windows(2).any(|w| w[1] <= w[0]) || ladder[0] <= 0.0 {
        return Err(Error::Precondition(
            "ladder must be positive, increasing, with at least two entries".into(),
        ));
    }
    Ok(())
}

/// `xi_-(x, xi)` by either method.
pub fn compute_xi_minus(
    spec: &HamiltonianSpec,
    start: &PhasePoint,
    method: XiMethod,
    opts: &ScatterOptions,
) -> Result<ScatteringData> {
    ensure_nontrapping(spec, start, opts)?;
    let (scales, iterates, known) = match method {
        XiMethod::LongTime => {
            check_ladder(&opts.horizons)?;
            let samples: Vec<f64> = opts.horizons.iter().map(|t| -t).collect();
            let tmax = *opts.horizons.last().unwrap();
            let o = opts.flow.clone().with_samples(samples).sparse();
            let tr = integrate_flow(spec, FlowKind::Kinetic, start, (0.0, -tmax), &o)?;
            let iterates: Vec<Vec<f64>> = opts
                .horizons
                .iter()
                .map(|t| {
                    let i = tr.times.iter().position(|s| *s == -t).unwrap();
                    tr.states[i].xi.clone()
                })
                .collect();
            (opts.horizons.clone(), iterates, Some(spec.mu()))
        }
        XiMethod::LambdaLadder => {
            check_ladder(&opts.ladder)?;
            let iterates: Vec<Vec<f64>> = opts
                .ladder
                .par_iter()
                .map(|&l| {
                    let e = flow_endpoint(
                        spec,
                        FlowKind::Full,
                        &start.scaled_xi(l),
                        opts.t0,
                        &opts.flow,
                        false,
                    )?;
                    Ok(e.point.xi.iter().map(|v| v / l).collect())
                })
                .collect::<Result<_>>()?;
            (opts.ladder.clone(), iterates, Some(spec.mu()))
        }
    };
    let fit = extrapolate(&scales, &iterates, known);
    if !fit.cauchy {
        return Err(Error::Convergence {
            message: "xi_- iterates are not Cauchy along the ladder".into(),
            residuals: fit.differences.clone(),
        });
    }
    Ok(ScatteringData {
        start: start.clone(),
        t0: opts.t0,
        method: match method {
            XiMethod::LongTime => "long_time".into(),
            XiMethod::LambdaLadder => "lambda_ladder".into(),
        },
        lambda_ladder: scales,
        xi_minus: fit.limit.clone(),
        xi_iterates: iterates,
        extrapolation_error: fit.error,
        xi_fit: fit,
        z_minus: None,
        z_iterates: Vec::new(),
        z_fit: None,
    })
}

/// Smallest ladder `8 * 2^k, ...` (`count` entries) whose frequencies
/// `lambda |xi|` clear the high-frequency threshold of `hj` with a margin
/// for the change of `|eta|` along the flow.
pub fn default_z_ladder(hj: &HJSolution, start: &PhasePoint, count: usize) -> Vec<f64> {
    let need = 1.5 * hj.high_threshold() / norm(&start.xi);
    let mut l = 8.0;
    while l < need {
        l *= 2.0;
    }
    (0..count).map(|k| l * 2f64.powi(k as i32)).collect()
}

/// One `(z, xi)` iterate at fixed lambda:
/// `(y(t0; x, lambda xi) - d_xi W(t0, eta), lambda^-1 eta)`.
fn z_iterate(
    spec: &HamiltonianSpec,
    hj: &HJSolution,
    start: &PhasePoint,
    t0: f64,
    lambda: f64,
    flow: &FlowOptions,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let e = flow_endpoint(
        spec,
        FlowKind::Full,
        &start.scaled_xi(lambda),
        t0,
        flow,
        false,
    )?;
    let eta = &e.point.xi;
    if norm(eta) < hj.high_threshold() {
        return Err(Error::Range(format!(
            "lambda = {lambda}: |eta| = {:.3} is below the high-frequency range |xi| >= {:.3}",
            norm(eta),
            hj.high_threshold()
        )));
    }
    let g = hj.grad_xi(t0, eta)?;
    let z: Vec<f64> = e.point.x.iter().zip(&g).map(|(y, w)| y - w).collect();
    Ok((z, eta.iter().map(|v| v / lambda).collect()))
}

/// `z_- = lim [y(t0; x, lambda xi) - d_xi W(t0, eta(t0; x, lambda xi))]`
/// together with `xi_-` from the same ladder.
pub fn compute_z_minus(
    spec: &HamiltonianSpec,
    hj: &HJSolution,
    start: &PhasePoint,
    t0: f64,
    ladder: &[f64],
    opts: &ScatterOptions,
) -> Result<ScatteringData> {
    check_ladder(ladder)?;
    let (lo, hi) = hj.t_range();
    if !(t0 < 0.0 && t0 >= lo && t0 <= hi) {
        return Err(Error::Range(format!(
            "t0 = {t0} outside the HJ time range [{lo}, {hi}]"
        )));
    }
    ensure_nontrapping(spec, start, opts)?;
    let pairs: Vec<(Vec<f64>, Vec<f64>)> = ladder
        .par_iter()
        .map(|&l| z_iterate(spec, hj, start, t0, l, &opts.flow))
        .collect::<Result<_>>()?;
    let (z_iterates, xi_iterates): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    let zf = extrapolate(ladder, &z_iterates, Some(spec.mu()));
    let xf = extrapolate(ladder, &xi_iterates, Some(spec.mu()));
    Ok(ScatteringData {
        start: start.clone(),
        t0,
        method: "lambda_ladder".into(),
        lambda_ladder: ladder.to_vec(),
        xi_minus: xf.limit.clone(),
        xi_iterates,
        extrapolation_error: zf.error.max(xf.error),
        xi_fit: xf,
        z_minus: Some(zf.limit.clone()),
        z_iterates,
        z_fit: Some(zf),
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct JacobianReport {
    /// `d(z, xi)/d(x, xi)` of the lambda-iterate map, row-major.
    pub matrix: Vec<Vec<f64>>,
    pub determinant: f64,
    pub lambda: f64,
    pub fd_step: f64,
    /// Largest entry change when the step is halved.
    pub step_sensitivity: f64,
    pub warning: Option<String>,
}

fn fd_jacobian(
    spec: &HamiltonianSpec,
    hj: &HJSolution,
    start: &PhasePoint,
    t0: f64,
    lambda: f64,
    h: f64,
    flow: &FlowOptions,
) -> Result<DMatrix<f64>> {
    let n = start.dim();
    let m = 2 * n;
    let cols: Vec<Vec<f64>> = (0..m)
        .into_par_iter()
        .map(|c| {
            let eval = |s: f64| -> Result<Vec<f64>> {
                let mut p = start.clone();
                if c < n {
                    p.x[c] += s;
                } else {
                    p.xi[c - n] += s;
                }
                let (z, xi) = z_iterate(spec, hj, &p, t0, lambda, flow)?;
                Ok(z.into_iter().chain(xi).collect())
            };
            let (a, b) = (eval(h)?, eval(-h)?);
            Ok(a.iter().zip(&b).map(|(p, q)| (p - q) / (2.0 * h)).collect())
        })
        .collect::<Result<_>>()?;
    Ok(DMatrix::from_fn(m, m, |r, c| cols[c][r]))
}

/// Central-difference Jacobian of `S_-` (evaluated at the lambda-iterate)
/// and its determinant.
pub fn jacobian_s_minus(
    spec: &HamiltonianSpec,
    hj: &HJSolution,
    start: &PhasePoint,
    t0: f64,
    lambda: f64,
    fd_step: f64,
    flow: &FlowOptions,
) -> Result<JacobianReport> {
    if !(fd_step > 0.0) {
        return Err(Error::Precondition("fd_step must be positive".into()));
    }
    let j = fd_jacobian(spec, hj, start, t0, lambda, fd_step, flow)?;
    let j2 = fd_jacobian(spec, hj, start, t0, lambda, 0.5 * fd_step, flow)?;
    let step_sensitivity = (&j - &j2).abs().max();
    let warning = if step_sensitivity > 1e-3 {
        Some(format!(
            "entries move by {step_sensitivity:.2e} when the step is halved; fd_step is noise- or curvature-dominated"
        ))
    } else if fd_step < 1e-6 {
        Some("fd_step is close to the integration noise floor".into())
    } else {
        None
    };
    let m = j.nrows();
    Ok(JacobianReport {
        matrix: (0..m)
            .map(|r| (0..m).map(|c| j[(r, c)]).collect())
            .collect(),
        determinant: j.determinant(),
        lambda,
        fd_step,
        step_sensitivity,
        warning,
    })
}
