//! Paired wavefront reports across the propagator: the window at
//! `(x0, xi0)` on `u(t0)` against the pushed-forward window on `u0` and
//! against the window at `(z_-, xi_-)` on `e^{iW(-t0, D)} u0`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    classify_backward_nontrapping, compute_z_minus, default_z_ladder, NontrappingThresholds,
    ScatterOptions,
};
use crate::catalog::HamiltonianSpec;
use crate::error::{Error, Result};
use crate::flow::{FlowOptions, PhasePoint};
use crate::hj::{HJConfig, HJSolution};
use crate::quantum::{
    apply_fourier_multiplier, apply_weyl_batch, discretize_h, multiplier_from_hj, propagate,
    DiscreteH, GridSpec, PropagateOptions, WaveState,
};
use crate::util::{fit_slope, smooth_step};

use super::{
    agreement, probe_wavefront, pushforward_window, transport_window, Agreement, DecayReport,
    DecayThresholds, Verdict, WavefrontProbe,
};

/// Test data on the grid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Datum {
    /// Normalized packet `exp(-(x - x0)^2 / 2s^2 + i k0 x)`.
    Gaussian { x0: f64, k0: f64, s: f64 },
    /// `e^{iqx} max(0, 1 - |x - x0|)^gamma`.
    Cusp { x0: f64, q: f64, gamma: f64 },
    /// `e^{iqx}` on `(x0, x0 + width)`, cut sharply at `x0` and smoothly
    /// over the last unit of the interval.
    Jump { x0: f64, q: f64, width: f64 },
}

/// Oversampling factor used to project singular data onto the grid modes.
const OVERSAMPLE: usize = 16;

impl Datum {
    /// Grid representation: smooth data are sampled, singular data are
    /// projected onto the grid modes from a finer sampling, which keeps the
    /// aliased tail of their spectrum small.
    pub fn sample(&self, grid: GridSpec) -> Result<WaveState> {
        match self {
            Datum::Gaussian { .. } => self.sample_raw(grid),
            _ => {
                let fine = GridSpec::new(grid.n * OVERSAMPLE, grid.l)?;
                self.sample_raw(fine)?.restrict_modes(grid)
            }
        }
    }

    fn sample_raw(&self, grid: GridSpec) -> Result<WaveState> {
        match *self {
            Datum::Gaussian { x0, k0, s } => WaveState::gaussian(grid, x0, k0, s),
            Datum::Cusp { x0, q, gamma } => {
                if !(gamma > 0.0) {
                    return Err(Error::Domain(format!(
                        "cusp exponent {gamma} must be positive"
                    )));
                }
                WaveState::cusp(grid, x0, q, gamma)
            }
            Datum::Jump { x0, q, width } => {
                if !(width > 1.0) {
                    return Err(Error::Domain(format!("jump width {width} must exceed 1")));
                }
                WaveState::from_fn(grid, |x| {
                    let v = if x > x0 {
                        1.0 - smooth_step(x - (x0 + width - 1.0)).0
                    } else {
                        0.0
                    };
                    num_complex::Complex64::from_polar(v, q * x)
                })
            }
        }
    }
}

/// Which end of the evolution the datum is prescribed at.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatumPlacement {
    /// The datum is `u0`.
    Initial,
    /// The datum is `u(t0)`; `u0 = e^{i t0 H} u(t0)`.
    Final,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeRole {
    OnLocus,
    OffLocus,
}

/// One harness run. `t0 > 0` is the forward time of `u(t0) = e^{-i t0 H} u0`;
/// the modifier and the scattering data use the internal time `-t0`.
#[derive(Debug, Clone)]
pub struct TheoremCase {
    pub name: String,
    pub spec: HamiltonianSpec,
    /// Anchor radius and gluing constant of the HJ solution.
    pub hj_r: f64,
    pub hj_c4: f64,
    pub datum: Datum,
    pub placement: DatumPlacement,
    /// `(cutoff, taper width)` applied to the datum.
    pub band_limit: Option<(f64, f64)>,
    pub t0: f64,
    pub probes: Vec<(WavefrontProbe, ProbeRole)>,
    pub grid: GridSpec,
    pub propagate: PropagateOptions,
    pub thresholds: DecayThresholds,
    pub flow: FlowOptions,
    pub nontrapping_horizon: f64,
}

impl TheoremCase {
    /// Calibrated case on the standard grid: a cusp of exponent 1/4 at the
    /// final time t0 = 0.1, probed at both edges (singular) and once away
    /// from its support (regular). The taper keeps the singular tail away
    /// from the grid limit so the boundary monitor stays quiet.
    pub fn calibrated(spec: HamiltonianSpec) -> Result<TheoremCase> {
        let grid = GridSpec::standard();
        let nyq = grid.nyquist();
        let probes = vec![
            (WavefrontProbe::standard(-1.0, 1.0)?, ProbeRole::OnLocus),
            (WavefrontProbe::standard(1.0, 1.0)?, ProbeRole::OnLocus),
            (WavefrontProbe::standard(4.0, 1.0)?, ProbeRole::OffLocus),
        ];
        let case = TheoremCase {
            name: spec.name.clone(),
            spec,
            hj_r: 1.0,
            hj_c4: 0.5,
            datum: Datum::Cusp { x0: 0.0, q: 2.0, gamma: 0.25 },
            placement: DatumPlacement::Final,
            band_limit: Some((0.8 * nyq, 0.2 * nyq)),
            t0: 0.1,
            probes,
            grid,
            propagate: PropagateOptions::default(),
            thresholds: DecayThresholds::default(),
            flow: FlowOptions::default(),
            nontrapping_horizon: 100.0,
        };
        case.validate()?;
        Ok(case)
    }

    pub fn validate(&self) -> Result<()> {
        if self.spec.dim() != 1 {
            return Err(Error::UnsupportedDimension(self.spec.dim()));
        }
        if !(self.t0 > 0.0 && self.t0.is_finite()) {
            return Err(Error::Precondition(format!(
                "t0 = {} must be positive",
                self.t0
            )));
        }
        if self.probes.is_empty() {
            return Err(Error::Precondition("no probes".into()));
        }
        for (p, _) in &self.probes {
            p.validate()?;
        }
        Ok(())
    }

    fn check_nontrapping(&self) -> Result<()> {
        for (p, _) in &self.probes {
            let v = classify_backward_nontrapping(
                &self.spec,
                &p.center,
                self.nontrapping_horizon,
                &NontrappingThresholds::default(),
            )?;
            if !v.is_backward_nontrapping {
                return Err(Error::Precondition(format!(
                    "probe center {:?} is not backward nontrapping: {}",
                    p.center, v.reason
                )));
            }
        }
        Ok(())
    }

    fn hj(&self) -> Result<HJSolution> {
        let cfg = HJConfig {
            t0: -self.t0,
            ..HJConfig::default()
        };
        HJSolution::with_params(&self.spec, self.hj_r, self.hj_c4, &cfg)
    }

    /// `(H, u0, u(t0))`.
    fn states(&self) -> Result<(DiscreteH, WaveState, WaveState)> {
        let h = discretize_h(&self.spec, &self.grid)?;
        let mut d = self.datum.sample(self.grid)?;
        if let Some((cut, w)) = self.band_limit {
            d = d.band_limited(cut, w);
        }
        let (u0, ut) = match self.placement {
            DatumPlacement::Initial => {
                let ut = propagate(&h, &d, self.t0, &self.propagate)?;
                (d, ut)
            }
            DatumPlacement::Final => {
                let mut u0 = propagate(&h, &d, -self.t0, &self.propagate)?;
                u0.t = 0.0;
                let mut ut = d;
                ut.t = self.t0;
                (u0, ut)
            }
        };
        Ok((h, u0, ut))
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoremRow {
    pub role: ProbeRole,
    /// Window at the probe on `u(t0)`.
    pub direct: DecayReport,
    /// The other side of the equivalence.
    pub transported: DecayReport,
    /// `(z_-, xi_-)` for the modifier side.
    pub scattering_point: Option<PhasePoint>,
    /// Window frequencies reach the gluing band of `W` at some scale, where
    /// `W` is only constrained by its growth; the transported verdict is
    /// then forced to inconclusive.
    pub band_overlap: bool,
    pub agreement: Agreement,
}

#[derive(Debug, Clone, Serialize)]
pub struct TheoremReport {
    pub case: String,
    pub theorem: String,
    pub t0: f64,
    pub rows: Vec<TheoremRow>,
    /// `min(off-locus slopes) - max(on-locus slopes)` on the direct side.
    pub direct_gap: f64,
    pub transported_gap: f64,
    /// No conclusive row failed.
    pub no_failures: bool,
}

fn slope_gap(rows: &[TheoremRow], pick: impl Fn(&TheoremRow) -> &DecayReport) -> f64 {
    let on = rows
        .iter()
        .filter(|r| r.role == ProbeRole::OnLocus)
        .map(|r| pick(r).effective_slope())
        .fold(f64::NEG_INFINITY, f64::max);
    let off = rows
        .iter()
        .filter(|r| r.role == ProbeRole::OffLocus)
        .map(|r| pick(r).effective_slope())
        .fold(f64::INFINITY, f64::min);
    off - on
}

fn assemble(case: &TheoremCase, theorem: &str, rows: Vec<TheoremRow>) -> TheoremReport {
    TheoremReport {
        case: case.name.clone(),
        theorem: theorem.into(),
        t0: case.t0,
        direct_gap: slope_gap(&rows, |r| &r.direct),
        transported_gap: slope_gap(&rows, |r| &r.transported),
        no_failures: rows.iter().all(|r| r.agreement != Agreement::Fail),
        rows,
    }
}

/// Direct side against `||(a_h o exp(t0 H_p))(x, D) u0||`.
pub fn theorem1_harness(case: &TheoremCase) -> Result<TheoremReport> {
    case.validate()?;
    case.check_nontrapping()?;
    let (_, u0, ut) = case.states()?;
    let rows = case
        .probes
        .iter()
        .map(|(p, role)| -> Result<TheoremRow> {
            let direct = probe_wavefront(&ut, p, &case.thresholds)?;
            let norms = p
                .ladder
                .par_iter()
                .map(|&h| {
                    let b = pushforward_window(&case.spec, p, case.t0, h, &case.flow)?;
                    Ok(b.apply(&u0)?.norm())
                })
                .collect::<Result<Vec<f64>>>()?;
            let transported = DecayReport::from_norms(
                p.center.clone(),
                p.ladder.clone(),
                norms,
                u0.norm(),
                case.thresholds,
            )?;
            Ok(TheoremRow {
                role: *role,
                agreement: agreement(direct.verdict, transported.verdict),
                direct,
                transported,
                scattering_point: None,
                band_overlap: false,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(case, "propagation", rows))
}

/// Direct side against the window at `(z_-, xi_-)` on `e^{iW(-t0, D)} u0`.
pub fn theorem2_harness(case: &TheoremCase) -> Result<TheoremReport> {
    case.validate()?;
    case.check_nontrapping()?;
    let hj = case.hj()?;
    let (_, u0, ut) = case.states()?;
    let phase = multiplier_from_hj(&hj, &case.grid, -case.t0)?;
    let v = apply_fourier_multiplier(&u0, &phase)?;
    let opts = ScatterOptions {
        t0: -case.t0,
        flow: case.flow.clone(),
        verify_nontrapping: false,
        ..ScatterOptions::default()
    };
    let rows = case
        .probes
        .iter()
        .map(|(p, role)| -> Result<TheoremRow> {
            let direct = probe_wavefront(&ut, p, &case.thresholds)?;
            let ladder = default_z_ladder(&hj, &p.center, 4);
            let sd = compute_z_minus(&case.spec, &hj, &p.center, -case.t0, &ladder, &opts)?;
            let z = sd.z_minus.ok_or_else(|| Error::Convergence {
                message: "no z_- limit".into(),
                residuals: vec![],
            })?;
            let point = PhasePoint::new(z, sd.xi_minus);
            let moved = p.moved_to(point.clone())?;
            let mut transported = probe_wavefront(&v, &moved, &case.thresholds)?;
            let band_overlap = touches_band(&moved, hj.band());
            if band_overlap {
                transported.verdict = Verdict::Inconclusive;
            }
            Ok(TheoremRow {
                role: *role,
                agreement: agreement(direct.verdict, transported.verdict),
                direct,
                transported,
                scattering_point: Some(point),
                band_overlap,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(assemble(case, "scattering", rows))
}

/// Frequencies `[|xi0| - rxi, |xi0| + rxi] / h` meet `(lo, hi)` at some scale.
fn touches_band(p: &WavefrontProbe, (lo, hi): (f64, f64)) -> bool {
    let a = p.xi0().abs() - p.rxi;
    let b = p.xi0().abs() + p.rxi;
    p.ladder.iter().any(|h| a / h < hi && b / h > lo)
}

#[derive(Debug, Clone, Serialize)]
pub struct EgorovReport {
    pub t: f64,
    pub ladder: Vec<f64>,
    /// `max_psi ||(Omega a_h^w Omega^{-1} - g_h^w) psi|| / ||psi||`.
    pub defects: Vec<f64>,
    pub slope: f64,
}

/// Test states for one scale.
pub type StateFamily<'a> = dyn Fn(f64) -> Result<Vec<WaveState>> + Sync + 'a;

/// `Omega(t) b Omega(t)^{-1} psi` for each state, with `b` applied by `apply`.
fn conjugate_by_omega(
    h_op: &DiscreteH,
    phase: &[f64],
    t: f64,
    opts: &PropagateOptions,
    states: &[WaveState],
    apply: impl Fn(&[WaveState]) -> Result<Vec<WaveState>>,
) -> Result<Vec<WaveState>> {
    let minus: Vec<f64> = phase.iter().map(|p| -p).collect();
    let inner = states
        .iter()
        .map(|psi| {
            let w = apply_fourier_multiplier(psi, &minus)?;
            if t == 0.0 {
                Ok(w)
            } else {
                propagate(h_op, &w, -t, opts)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    apply(&inner)?
        .iter()
        .map(|w| {
            let w = if t == 0.0 {
                w.clone()
            } else {
                propagate(h_op, w, t, opts)?
            };
            apply_fourier_multiplier(&w, phase)
        })
        .collect()
}

/// Defect of the transport rule `Omega(t) a_h^w Omega(t)^{-1} ~ (a o S_t^{-1})_h^w`
/// over the ladder of `probe`.
pub fn egorov_decay_check(
    hj: &HJSolution,
    grid: GridSpec,
    probe: &WavefrontProbe,
    t: f64,
    states: &StateFamily<'_>,
    opts: &PropagateOptions,
    flow: &FlowOptions,
) -> Result<EgorovReport> {
    probe.validate()?;
    let h_op = discretize_h(hj.spec(), &grid)?;
    let phase = multiplier_from_hj(hj, &grid, t)?;
    let window = probe.window();
    let mut defects = Vec::with_capacity(probe.ladder.len());
    for &h in &probe.ladder {
        let psis = states(h)?;
        if psis.is_empty() {
            return Err(Error::Domain("no test states".into()));
        }
        let lhs = conjugate_by_omega(&h_op, &phase, t, opts, &psis, |s| {
            apply_weyl_batch(&window, h, s)
        })?;
        let g = transport_window(hj, probe, t, h, flow)?;
        let rhs = g.apply_batch(&psis)?;
        let d = lhs
            .iter()
            .zip(&rhs)
            .zip(&psis)
            .map(|((l, r), p)| l.sub(r).norm() / p.norm())
            .fold(0.0, f64::max);
        defects.push(d);
    }
    let pts: Vec<(f64, f64)> = probe
        .ladder
        .iter()
        .zip(&defects)
        .map(|(h, d)| (h.ln(), d.ln()))
        .collect();
    Ok(EgorovReport {
        t,
        ladder: probe.ladder.clone(),
        slope: fit_slope(&pts),
        defects,
    })
}

/// Packets at `S_t(x0, xi0 / h) = (x, k)` with widths `max(1/2, 8/|k|)`
/// and `max(1, 16/|k|)`, with modes
/// near zero frequency and above `cutoff` removed smoothly.
pub fn egorov_test_states(
    hj: &HJSolution,
    grid: GridSpec,
    probe: &WavefrontProbe,
    t: f64,
    h: f64,
    cutoff: f64,
    flow: &FlowOptions,
) -> Result<Vec<WaveState>> {
    let g = transport_window(hj, probe, t, h, flow)?;
    let b = crate::quantum::Symbol::support(&g);
    let x = 0.5 * (b.x.0 + b.x.1);
    let k = 0.5 * (b.xi.0 + b.xi.1) / h;
    let lo = 0.5 * k.abs();
    if !(cutoff > 1.5 * lo) {
        return Err(Error::Domain(format!(
            "cutoff {cutoff} too low for packets at frequency {k}"
        )));
    }
    let w = 0.2 * cutoff;
    [(0.5, 8.0), (1.0, 16.0)]
        .iter()
        .map(|&(s0, m)| {
            let s = f64::max(s0, m / k.abs());
            let mut u = WaveState::gaussian(grid, x, k, s)?.filter_modes(|xi| {
                let m = xi.abs();
                smooth_step(m / lo).0 * (1.0 - smooth_step((m - cutoff + w) / w).0)
            });
            u.normalize();
            Ok(u)
        })
        .collect()
}

#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub t: f64,
    pub ladder: Vec<f64>,
    /// `||g_h^w Omega(t) u0||`.
    pub transported: Vec<f64>,
    /// `||a_h^w u0||`.
    pub direct: Vec<f64>,
    pub differences: Vec<f64>,
    pub slope: f64,
}

/// `| ||g_h^w Omega(t) u0|| - ||a_h^w u0|| |` over the ladder, one `u0` per scale.
pub fn estimate_surrogate(
    hj: &HJSolution,
    grid: GridSpec,
    probe: &WavefrontProbe,
    t: f64,
    data: &StateFamily<'_>,
    opts: &PropagateOptions,
    flow: &FlowOptions,
) -> Result<EstimateReport> {
    probe.validate()?;
    let h_op = discretize_h(hj.spec(), &grid)?;
    let phase = multiplier_from_hj(hj, &grid, t)?;
    let window = probe.window();
    let (mut tr, mut di, mut df) = (vec![], vec![], vec![]);
    for &h in &probe.ladder {
        let u0 = data(h)?
            .into_iter()
            .next()
            .ok_or_else(|| Error::Domain("no datum".into()))?;
        let omega = apply_fourier_multiplier(&propagate(&h_op, &u0, t, opts)?, &phase)?;
        let g = transport_window(hj, probe, t, h, flow)?;
        let a = g.apply(&omega)?.norm();
        let b = crate::quantum::apply_weyl(&window, h, &u0)?.norm();
        tr.push(a);
        di.push(b);
        df.push((a - b).abs());
    }
    let pts: Vec<(f64, f64)> = probe
        .ladder
        .iter()
        .zip(&df)
        .map(|(h, d)| (h.ln(), d.ln()))
        .collect();
    Ok(EstimateReport {
        t,
        ladder: probe.ladder.clone(),
        transported: tr,
        direct: di,
        differences: df,
        slope: fit_slope(&pts),
    })
}

impl TheoremRow {
    pub fn direct_verdict(&self) -> Verdict {
        self.direct.verdict
    }
}
