use rand::Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::commands::{build_hj, random_starts, Context};
use super::config::{CheckName, RandomStarts, VerifyBlock};
use super::output::OutputDir;
use super::Outcome;
use crate::asymptotics::{
    classify_backward_nontrapping, compute_z_minus, default_z_ladder, fit_high_energy_rates,
    jacobian_s_minus, region_escape_check, NontrappingThresholds, RegionSpec, ScatterOptions,
};
use crate::catalog::{check_decay_lipschitz, validate_assumption_a, BoundedGradientField, ValidationGrid};
use crate::error::{Error, Result};
use crate::flow::{
    a_priori_bounds, integrate_flow, kinetic_homogeneity_check, scaled_flow_limit_check,
    FlowKind, FlowOptions, PhasePoint,
};
use crate::hj::HJSolution;
use crate::util::{dist, linspace};

pub const ENERGY_TOL: f64 = 1e-8;
pub const HOMOGENEITY_TOL: f64 = 1e-7;
pub const HJ_TOL: f64 = 1e-6;
pub const Z_TOL: f64 = 1e-4;
pub const MIN_DET: f64 = 0.1;
pub const RATE_SPREAD: f64 = 10.0;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub measured: Value,
    pub error: Option<String>,
}

/// Starts drawn until `count` of them are backward nontrapping.
fn nontrapping_starts(ctx: &Context, count: usize, stream: u64) -> Result<Vec<PhasePoint>> {
    let mut rng = ctx.rng(stream);
    let draw = RandomStarts {
        count: 1,
        x_max: 5.0,
        xi_min: 0.5,
        xi_max: 2.0,
    };
    let mut out = Vec::with_capacity(count);
    for _ in 0..50 * count.max(1) {
        if out.len() == count {
            break;
        }
        let p = random_starts(ctx.spec.dim(), &draw, &mut rng).remove(0);
        let v = classify_backward_nontrapping(
            &ctx.spec,
            &p,
            100.0,
            &NontrappingThresholds::default(),
        )?;
        if v.is_backward_nontrapping {
            out.push(p);
        }
    }
    if out.len() < count {
        return Err(Error::Domain(format!(
            "found only {} backward nontrapping starts",
            out.len()
        )));
    }
    Ok(out)
}

fn check_assumption(ctx: &Context) -> Result<(bool, Value)> {
    let order = ctx.spec.metric.max_order().min(3);
    let rep = validate_assumption_a(&ctx.spec, &ValidationGrid::default_for(ctx.spec.dim()), order)?;
    Ok((rep.passed, json!(rep)))
}

fn check_energy(ctx: &Context, starts: &[PhasePoint]) -> Result<(bool, Value)> {
    let mut worst: f64 = 0.0;
    for p in starts {
        for t in [-50.0, 50.0] {
            let tr = integrate_flow(&ctx.spec, FlowKind::Full, p, (0.0, t), &ctx.flow.clone().sparse())?;
            worst = worst.max(tr.energy_drift);
        }
    }
    Ok((worst <= ENERGY_TOL, json!({ "max_relative_drift": worst, "tol": ENERGY_TOL })))
}

fn check_homogeneity(ctx: &Context, starts: &[PhasePoint]) -> Result<(bool, Value)> {
    let mut worst: f64 = 0.0;
    for p in starts {
        for lambda in [2.0, 5.0, 10.0] {
            worst = worst.max(kinetic_homogeneity_check(&ctx.spec, p, lambda, -2.0, &ctx.flow)?);
        }
    }
    Ok((worst <= HOMOGENEITY_TOL, json!({ "max_residual": worst, "tol": HOMOGENEITY_TOL })))
}

fn check_a_priori(ctx: &Context, starts: &[PhasePoint]) -> Result<(bool, Value)> {
    // the bounds are stated for |xi| > 1
    let starts: Vec<PhasePoint> = starts.iter().map(|p| p.scaled_xi(2.5)).collect();
    let b = a_priori_bounds(&ctx.spec, &starts, 3.0, &ctx.flow)?;
    Ok((b.alpha.is_finite() && b.beta.is_finite(), json!(b)))
}

fn check_scaled_limit(ctx: &Context, starts: &[PhasePoint]) -> Result<(bool, Value)> {
    let reps = starts
        .iter()
        .map(|p| scaled_flow_limit_check(&ctx.spec, p, &[4.0, 8.0, 16.0, 32.0], (0.0, -2.0), &ctx.flow))
        .collect::<Result<Vec<_>>>()?;
    Ok((reps.iter().all(|r| r.nonincreasing), json!(reps)))
}

fn check_escape(ctx: &Context, block: &VerifyBlock) -> Result<(bool, Value)> {
    let region = block.region.clone().unwrap_or(RegionSpec {
        r: 10.0,
        delta1: 0.5,
        lambda0: None,
        delta2: 0.1,
    });
    let samples = region.sample(ctx.spec.dim(), block.starts.max(1), ctx.seed);
    let rep = region_escape_check(&ctx.spec, &region, &samples, -20.0)?;
    Ok((rep.passed, json!(rep)))
}

fn check_rates(ctx: &Context, starts: &[PhasePoint]) -> Result<(bool, Value)> {
    let reps = starts
        .iter()
        .map(|p| fit_high_energy_rates(&ctx.spec, p, -2.0, &[8.0, 16.0, 32.0, 64.0], 40, &ctx.flow))
        .collect::<Result<Vec<_>>>()?;
    let ok = reps
        .iter()
        .all(|r| r.identically_zero || (r.eta_ratio <= RATE_SPREAD && r.y_ratio <= RATE_SPREAD));
    Ok((ok, json!(reps)))
}

fn check_hj(hj: &HJSolution) -> Result<(bool, Value)> {
    let lo = hj.high_threshold();
    let (t_lo, t_hi) = hj.t_range();
    let n = hj.spec().dim();
    let mut worst_hj: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    for (i, t) in linspace(t_lo, t_hi, 20).into_iter().enumerate() {
        for (j, m) in linspace(lo, 5.0 * lo, 20).into_iter().enumerate() {
            let mut xi = vec![0.0; n];
            xi[(i + j) % n] = if (i + j) % 2 == 0 { m } else { -m };
            let r = hj.hj_residual(t, &xi)?;
            worst_hj = worst_hj.max(r.hj);
            worst_grad = worst_grad.max(r.grad);
        }
    }
    Ok((
        worst_hj.max(worst_grad) <= HJ_TOL,
        json!({ "max_hj": worst_hj, "max_grad": worst_grad, "tol": HJ_TOL }),
    ))
}

fn check_scattering(ctx: &Context, hj: &HJSolution, starts: &[PhasePoint]) -> Result<(bool, Value)> {
    let mut rows = Vec::new();
    let mut ok = true;
    for p in starts {
        let ladder = default_z_ladder(hj, p, 6);
        let z = |t0: f64| -> Result<Vec<f64>> {
            let opts = ScatterOptions {
                t0,
                flow: FlowOptions::with_tol(1e-12, 1e-12),
                verify_nontrapping: false,
                ..ScatterOptions::default()
            };
            Ok(compute_z_minus(&ctx.spec, hj, p, t0, &ladder, &opts)?
                .z_minus
                .unwrap_or_default())
        };
        let (z1, z2) = (z(-1.0)?, z(-2.0)?);
        let diff = dist(&z1, &z2);
        let jac = jacobian_s_minus(&ctx.spec, hj, p, -1.0, ladder[0], 1e-4, &FlowOptions::reference())?;
        ok &= diff <= Z_TOL && jac.determinant.abs() > MIN_DET;
        rows.push(json!({
            "start": p,
            "z_minus_t0_1": z1,
            "z_minus_t0_2": z2,
            "difference": diff,
            "determinant": jac.determinant,
        }));
    }
    Ok((ok, json!({ "rows": rows, "tol": Z_TOL, "min_det": MIN_DET })))
}

/// Random pairs in the ball of radius `r` in the plane.
pub fn lipschitz_pairs(count: usize, r: f64, rng: &mut impl Rng) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut pt = || vec![rng.gen_range(-r..r), rng.gen_range(-r..r)];
    (0..count).map(|_| (pt(), pt())).collect()
}

fn check_lipschitz(ctx: &Context, block: &VerifyBlock) -> Result<(bool, Value)> {
    let pairs = lipschitz_pairs(block.lipschitz_pairs, 50.0, &mut ctx.rng(7));
    let reps = [
        BoundedGradientField::bracket(2, 1.0, -0.8),
        BoundedGradientField::tilted(2, 0.8),
    ]
    .iter()
    .map(|f| check_decay_lipschitz(f, &pairs))
    .collect::<Result<Vec<_>>>()?;
    Ok((reps.iter().all(|r| r.max_ratio <= 1.0), json!(reps)))
}

pub fn run_checks(ctx: &Context, block: &VerifyBlock) -> Vec<CheckResult> {
    let mut names = block.checks.clone().unwrap_or_else(|| CheckName::ALL.to_vec());
    names.sort();
    names.dedup();
    let starts_cell = std::cell::OnceCell::new();
    let hj_cell = std::cell::OnceCell::new();
    let few = |s: &[PhasePoint]| s[..s.len().min(3)].to_vec();
    names
        .into_iter()
        .map(|name| {
            let starts = || -> Result<Vec<PhasePoint>> {
                starts_cell
                    .get_or_init(|| nontrapping_starts(ctx, block.starts.max(1), 3))
                    .clone()
            };
            let hj = || -> Result<&HJSolution> {
                hj_cell.get_or_init(|| build_hj(&ctx.spec, &block.hj, -2.0))
                    .as_ref()
                    .map_err(Clone::clone)
            };
            let res = match name {
                CheckName::Assumption => check_assumption(ctx),
                CheckName::Energy => starts().and_then(|s| check_energy(ctx, &s)),
                CheckName::Homogeneity => starts().and_then(|s| check_homogeneity(ctx, &s)),
                CheckName::APriori => starts().and_then(|s| check_a_priori(ctx, &s)),
                CheckName::ScaledLimit => starts().and_then(|s| check_scaled_limit(ctx, &few(&s))),
                CheckName::Escape => check_escape(ctx, block),
                CheckName::HighEnergyRates => starts().and_then(|s| check_rates(ctx, &few(&s))),
                CheckName::HjResidual => hj().and_then(check_hj),
                CheckName::Scattering => hj().and_then(|h| {
                    starts().and_then(|s| check_scattering(ctx, h, &few(&s)))
                }),
                CheckName::Lipschitz => check_lipschitz(ctx, block),
            };
            match res {
                Ok((passed, measured)) => CheckResult {
                    name: name.as_str(),
                    passed,
                    measured,
                    error: None,
                },
                Err(e) => CheckResult {
                    name: name.as_str(),
                    passed: false,
                    measured: Value::Null,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

pub fn cmd_verify(ctx: &Context, out: &mut OutputDir) -> Result<Outcome> {
    let block = ctx.cfg.verify.clone().unwrap_or_default();
    let results = run_checks(ctx, &block);
    let all = results.iter().all(|r| r.passed);
    out.write_json(
        "verify.json",
        &json!({
            "spec": ctx.spec.name,
            "all_passed": all,
            "checks": results,
        }),
    )?;
    Ok(if all { Outcome::Success } else { Outcome::Failed })
}
