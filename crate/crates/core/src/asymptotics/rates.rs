use rayon::prelude::*;
use serde::Serialize;

use crate::catalog::HamiltonianSpec;
use crate::error::{Error, Result};
use crate::flow::{integrate_flow, FlowKind, FlowOptions, PhasePoint};
use crate::util::dist;

#[derive(Debug, Clone, Serialize)]
pub struct RateRow {
    pub lambda: f64,
    /// `sup_t |eta - eta~| lambda^{-(1-mu)} |t|^{-(2-mu)}`.
    pub eta_normalized: f64,
    /// `sup_t |y - y~| lambda^{-(1-mu)} |t|^{-(3-mu)}`.
    pub y_normalized: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct RateReport {
    pub rows: Vec<RateRow>,
    /// Max over min of the per-lambda suprema (1 when all vanish).
    pub eta_ratio: f64,
    pub y_ratio: f64,
    /// Largest factor by which a normalized supremum grows from one rung
    /// to the next.
    pub max_step_increase: f64,
    /// Both differences vanish identically (no potential).
    pub identically_zero: bool,
}

fn spread(v: &[f64]) -> f64 {
    let hi = v.iter().cloned().fold(0.0, f64::max);
    let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
    if hi == 0.0 {
        1.0
    } else {
        hi / lo
    }
}

/// Compares full and kinetic flows from `(x, lambda xi)` on
/// `t in [t0, -1/lambda]` (`points` log-spaced times per lambda).
pub fn fit_high_energy_rates(
    spec: &HamiltonianSpec,
    start: &PhasePoint,
    t0: f64,
    ladder: &[f64],
    points: usize,
    opts: &FlowOptions,
) -> Result<RateReport> {
    if ladder.is_empty() || ladder.windows(2).any(|w| w[1] <= w[0]) || ladder[0] <= 1.0 {
        return Err(Error::Precondition(
            "ladder must be increasing with lambda > 1".into(),
        ));
    }
    if !(t0 < -1.0 / ladder[0]) {
        return Err(Error::Precondition(format!(
            "t0 = {t0} must lie below -1/lambda_min = {}",
            -1.0 / ladder[0]
        )));
    }
    let mu = spec.mu();
    let points = points.max(2);
    let rows: Vec<RateRow> = ladder
        .par_iter()
        .map(|&l| {
            let (a, b) = ((1.0 / l).ln(), t0.abs().ln());
            let times: Vec<f64> = (0..points)
                .map(|i| -(a + (b - a) * i as f64 / (points - 1) as f64).exp())
                .collect();
            let o = opts.clone().with_samples(times.clone()).sparse();
            let p = start.scaled_xi(l);
            let full = integrate_flow(spec, FlowKind::Full, &p, (0.0, t0), &o)?;
            let kin = integrate_flow(spec, FlowKind::Kinetic, &p, (0.0, t0), &o)?;
            let mut eta_n: f64 = 0.0;
            let mut y_n: f64 = 0.0;
            for ((t, f), k) in full.times.iter().zip(&full.states).zip(&kin.states) {
                if *t > -1.0 / l * (1.0 - 1e-12) {
                    continue;
                }
                let w = l.powf(-(1.0 - mu));
                eta_n = eta_n.max(dist(&f.xi, &k.xi) * w * t.abs().powf(-(2.0 - mu)));
                y_n = y_n.max(dist(&f.x, &k.x) * w * t.abs().powf(-(3.0 - mu)));
            }
            Ok(RateRow {
                lambda: l,
                eta_normalized: eta_n,
                y_normalized: y_n,
            })
        })
        .collect::<Result<_>>()?;
    let etas: Vec<f64> = rows.iter().map(|r| r.eta_normalized).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.y_normalized).collect();
    let identically_zero = etas.iter().chain(&ys).all(|v| *v == 0.0);
    let step = |v: &[f64]| {
        v.windows(2)
            .map(|w| {
                if w[0] > 0.0 {
                    w[1] / w[0]
                } else if w[1] > 0.0 {
                    f64::INFINITY
                } else {
                    1.0
                }
            })
            .fold(0.0, f64::max)
    };
    Ok(RateReport {
        eta_ratio: spread(&etas),
        y_ratio: spread(&ys),
        max_step_increase: step(&etas).max(step(&ys)),
        identically_zero,
        rows,
    })
}
