use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::json;

use super::config::*;
use super::output::OutputDir;
use super::Outcome;
use crate::asymptotics::{
    classify_backward_nontrapping, compute_z_minus, default_z_ladder, random_unit,
    NontrappingThresholds, ScatterOptions,
};
use crate::catalog::HamiltonianSpec;
use crate::error::{Error, Result};
use crate::flow::{integrate_flow, FlowOptions, PhasePoint};
use crate::hj::{HJConfig, HJSolution};
use crate::microlocal::{
    theorem1_harness, theorem2_harness, Agreement, DecayReport, TheoremCase, TheoremReport,
    Verdict, WavefrontProbe,
};
use crate::quantum::GridSpec;
use crate::util::linspace;

/// Everything a command needs besides its own block.
pub struct Context<'a> {
    pub cfg: &'a ExperimentConfig,
    pub spec: HamiltonianSpec,
    pub flow: FlowOptions,
    pub seed: u64,
}

impl Context<'_> {
    pub fn rng(&self, stream: u64) -> ChaCha8Rng {
        let mut r = ChaCha8Rng::seed_from_u64(self.seed);
        r.set_stream(stream);
        r
    }
}

fn missing(block: &str) -> Error {
    Error::Config(format!("config has no [{block}] block"))
}

pub fn build_hj(spec: &HamiltonianSpec, p: &HjParams, t_min: f64) -> Result<HJSolution> {
    let mut cfg = HJConfig {
        t0: p.t0.unwrap_or(t_min.min(-2.0)),
        ..HJConfig::default()
    };
    if let Some(rs) = &p.r_candidates {
        cfg.r_candidates = rs.clone();
    }
    match p.r {
        Some(r) => HJSolution::with_params(spec, r, p.c4.unwrap_or(2.0), &cfg),
        None => HJSolution::calibrate(spec, &cfg),
    }
}

/// Random phase-space points: `|x_i| <= x_max`, `|xi|` uniform in
/// `[xi_min, xi_max]` with a uniform direction.
pub fn random_starts(n: usize, r: &RandomStarts, rng: &mut ChaCha8Rng) -> Vec<PhasePoint> {
    (0..r.count)
        .map(|_| {
            let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-r.x_max..=r.x_max)).collect();
            let m = rng.gen_range(r.xi_min..=r.xi_max);
            let xi = random_unit(n, rng).iter().map(|v| v * m).collect();
            PhasePoint::new(x, xi)
        })
        .collect()
}

pub fn cmd_flow(ctx: &Context, out: &mut OutputDir) -> Result<Outcome> {
    let f = ctx.cfg.flow.as_ref().ok_or_else(|| missing("flow"))?;
    let (t0, t1) = (f.t_span[0], f.t_span[1]);
    let mut opts = ctx.flow.clone();
    if let Some(n) = f.samples {
        opts = opts.with_samples(linspace(t0, t1, n.max(2))).sparse();
    }
    let tr = integrate_flow(&ctx.spec, f.kind, &f.start, (t0, t1), &opts)?;
    let n = ctx.spec.dim();
    let mut csv = String::from("t");
    for i in 1..=n {
        let _ = write!(csv, ",x_{i}");
    }
    for i in 1..=n {
        let _ = write!(csv, ",xi_{i}");
    }
    csv.push_str(",action,energy_drift\n");
    for (i, (t, p)) in tr.times.iter().zip(&tr.states).enumerate() {
        let _ = write!(csv, "{t}");
        for v in p.x.iter().chain(&p.xi) {
            let _ = write!(csv, ",{v}");
        }
        let _ = writeln!(csv, ",{},{}", tr.action[i], tr.energy_error(i));
    }
    out.write("trajectory.csv", csv.as_bytes())?;
    out.write_json(
        "flow.json",
        &json!({
            "spec": ctx.spec.name,
            "kind": f.kind,
            "t_span": f.t_span,
            "nodes": tr.times.len(),
            "accepted_steps": tr.accepted_steps,
            "rejected_steps": tr.rejected_steps,
            "energy_drift": tr.energy_drift,
            "endpoint": tr.endpoint(),
            "final_action": tr.final_action(),
        }),
    )?;
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct ScatterEntry {
    start: PhasePoint,
    /// `nontrapping`, `indeterminate` or `error`.
    verdict: &'static str,
    reason: Option<String>,
    data: Option<crate::asymptotics::ScatteringData>,
}

pub fn cmd_scatter(ctx: &Context, out: &mut OutputDir) -> Result<Outcome> {
    let s = ctx.cfg.scatter.as_ref().ok_or_else(|| missing("scatter"))?;
    let mut starts = s.starts.clone();
    if let Some(r) = &s.random {
        starts.extend(random_starts(ctx.spec.dim(), r, &mut ctx.rng(1)));
    }
    if let Some(p) = starts.iter().find(|p| p.dim() != ctx.spec.dim()) {
        return Err(Error::Config(format!("start {p:?} has the wrong dimension")));
    }
    let hj = build_hj(&ctx.spec, &s.hj, s.t0)?;
    let opts = ScatterOptions {
        t0: s.t0,
        flow: ctx.flow.clone(),
        verify_nontrapping: false,
        ..ScatterOptions::default()
    };
    let mut entries = Vec::with_capacity(starts.len());
    for p in &starts {
        let v = classify_backward_nontrapping(
            &ctx.spec,
            p,
            s.nontrapping_horizon,
            &NontrappingThresholds::default(),
        )?;
        if !v.is_backward_nontrapping {
            entries.push(ScatterEntry {
                start: p.clone(),
                verdict: "indeterminate",
                reason: Some(v.reason),
                data: None,
            });
            continue;
        }
        let ladder = match &s.ladder {
            Some(l) => l.clone(),
            None => default_z_ladder(&hj, p, s.rungs),
        };
        entries.push(match compute_z_minus(&ctx.spec, &hj, p, s.t0, &ladder, &opts) {
            Ok(d) => ScatterEntry {
                start: p.clone(),
                verdict: "nontrapping",
                reason: None,
                data: Some(d),
            },
            Err(e) if e.is_numerical() => ScatterEntry {
                start: p.clone(),
                verdict: "error",
                reason: Some(e.to_string()),
                data: None,
            },
            Err(e) => return Err(e),
        });
    }
    out.write_json(
        "scatter.json",
        &json!({
            "spec": ctx.spec.name,
            "t0": s.t0,
            "hj": { "r": hj.r(), "c4": hj.c4() },
            "results": entries,
        }),
    )?;
    Ok(if entries.iter().any(|e| e.verdict == "error") {
        Outcome::NumericalFailure
    } else if entries.iter().any(|e| e.verdict == "indeterminate") {
        Outcome::Verdict
    } else {
        Outcome::Success
    })
}

pub fn cmd_hj(ctx: &Context, out: &mut OutputDir) -> Result<Outcome> {
    let b = ctx.cfg.hj.as_ref().ok_or_else(|| missing("hj"))?;
    let hj = build_hj(&ctx.spec, &b.params, -2.0)?;
    let (lo, hi) = hj.t_range();
    let times = b.times.clone().unwrap_or_else(|| linspace(lo, hi, 5));
    let n = ctx.spec.dim();
    let xis = b.xis.clone().unwrap_or_else(|| {
        [1.0, 1.5, 2.0, 3.0, 4.0]
            .iter()
            .flat_map(|m| {
                [-1.0, 1.0].map(|s| {
                    let mut v = vec![0.0; n];
                    v[0] = s * m * hj.high_threshold();
                    v
                })
            })
            .collect()
    });
    if let Some(x) = xis.iter().find(|x| x.len() != n) {
        return Err(Error::Config(format!("xi {x:?} has the wrong dimension")));
    }
    out.write("w_table.csv", hj.w_table_csv(&times, &xis)?.as_bytes())?;
    let mut worst_hj: f64 = 0.0;
    let mut worst_grad: f64 = 0.0;
    let mut checked = 0usize;
    for &t in &times {
        for x in &xis {
            if crate::util::norm(x) >= hj.high_threshold() {
                let r = hj.hj_residual(t, x)?;
                worst_hj = worst_hj.max(r.hj);
                worst_grad = worst_grad.max(r.grad);
                checked += 1;
            }
        }
    }
    out.write_json(
        "hj.json",
        &json!({
            "spec": ctx.spec.name,
            "r": hj.r(),
            "c4": hj.c4(),
            "band": hj.band(),
            "t_range": hj.t_range(),
            "calibration": hj.calibration(),
            "residual": {
                "points": checked,
                "max_hj": worst_hj,
                "max_grad": worst_grad,
            },
        }),
    )?;
    Ok(Outcome::Success)
}

/// Calibrated case with the block's overrides applied.
pub fn build_case(spec: HamiltonianSpec, b: &WavefrontBlock) -> Result<TheoremCase> {
    let mut case = TheoremCase::calibrated(spec)?;
    if let Some(g) = b.grid {
        case.grid = GridSpec::new(g.n, g.l)?;
    }
    if let Some(d) = b.datum {
        case.datum = d;
    }
    if let Some(p) = b.placement {
        case.placement = p;
    }
    if let Some(bl) = &b.band_limit {
        let nyq = case.grid.nyquist();
        case.band_limit = match bl.as_slice() {
            [c, w] => Some((c * nyq, w * nyq)),
            _ => None,
        };
    } else if b.grid.is_some() {
        let nyq = case.grid.nyquist();
        case.band_limit = Some((0.8 * nyq, 0.2 * nyq));
    }
    if let Some(t0) = b.t0 {
        case.t0 = t0;
    }
    if let Some(r) = b.hj_r {
        case.hj_r = r;
    }
    if let Some(c) = b.hj_c4 {
        case.hj_c4 = c;
    }
    if let Some(th) = b.thresholds {
        case.thresholds = th;
    }
    if let Some(ps) = &b.probes {
        case.probes = ps
            .iter()
            .map(|p| {
                let mut w = WavefrontProbe::standard(p.x0, p.xi0)?;
                if let Some(v) = p.rx {
                    w.rx = v;
                }
                if let Some(v) = p.rxi {
                    w.rxi = v;
                }
                if let Some(l) = &p.ladder {
                    w.ladder = l.clone();
                }
                w.validate()?;
                Ok((w, p.role))
            })
            .collect::<Result<_>>()?;
    }
    case.validate()?;
    Ok(case)
}

fn csv_rows(csv: &mut String, theorem: &str, probe: usize, role: &str, side: &str, r: &DecayReport) {
    let slope = r.slope.map(|s| s.to_string()).unwrap_or_default();
    for (h, n) in r.ladder.iter().zip(&r.norms) {
        let _ = writeln!(csv, "{theorem},{probe},{role},{side},{h},{n},{slope}");
    }
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Singular => "singular",
        Verdict::Regular => "regular",
        Verdict::Inconclusive => "inconclusive",
    }
}

fn agreement_str(a: Agreement) -> &'static str {
    match a {
        Agreement::Pass => "pass",
        Agreement::Fail => "fail",
        Agreement::Inconclusive => "inconclusive",
    }
}

pub fn cmd_wavefront(ctx: &Context, out: &mut OutputDir) -> Result<Outcome> {
    let b = ctx.cfg.wavefront.clone().unwrap_or_default();
    let mut case = build_case(ctx.spec.clone(), &b)?;
    case.flow = ctx.flow.clone();
    let mut reports: Vec<TheoremReport> = Vec::new();
    if b.theorem != TheoremChoice::Scattering {
        reports.push(theorem1_harness(&case)?);
    }
    if b.theorem != TheoremChoice::Propagation {
        reports.push(theorem2_harness(&case)?);
    }
    let mut csv = String::from("theorem,probe,role,side,h,norm,slope\n");
    let mut matrix = Vec::new();
    for rep in &reports {
        out.write_json(&format!("wavefront_{}.json", rep.theorem), rep)?;
        for (i, row) in rep.rows.iter().enumerate() {
            let role = match row.role {
                crate::microlocal::ProbeRole::OnLocus => "on_locus",
                crate::microlocal::ProbeRole::OffLocus => "off_locus",
            };
            csv_rows(&mut csv, &rep.theorem, i, role, "direct", &row.direct);
            csv_rows(&mut csv, &rep.theorem, i, role, "transported", &row.transported);
            matrix.push(json!({
                "theorem": rep.theorem,
                "probe": i,
                "role": role,
                "direct": verdict_str(row.direct.verdict),
                "transported": verdict_str(row.transported.verdict),
                "band_overlap": row.band_overlap,
                "agreement": agreement_str(row.agreement),
            }));
        }
    }
    out.write("wavefront.csv", csv.as_bytes())?;
    out.write_json(
        "agreement.json",
        &json!({
            "case": case.name,
            "gaps": reports.iter().map(|r| json!({
                "theorem": r.theorem,
                "direct": r.direct_gap,
                "transported": r.transported_gap,
            })).collect::<Vec<_>>(),
            "matrix": matrix,
        }),
    )?;
    let rows = reports.iter().flat_map(|r| &r.rows);
    Ok(if rows.clone().any(|r| r.agreement == Agreement::Fail) {
        Outcome::Failed
    } else if rows.clone().any(|r| r.agreement == Agreement::Inconclusive) {
        Outcome::Verdict
    } else {
        Outcome::Success
    })
}
