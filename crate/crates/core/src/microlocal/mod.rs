//! Semiclassical wavefront probes: window norms `||a(x, hD) u||` over a
//! ladder of scales, slope fits and singular/regular verdicts, plus the
//! propagation harnesses built on them.

mod pushforward;
mod theorems;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::PhasePoint;
use crate::quantum::{apply_weyl, SupportBox, Symbol, WaveState};
use crate::util::{bump, fit_slope};

pub use pushforward::{pushforward_window, transport_window, MappedWindow};
pub use theorems::{
    egorov_decay_check, egorov_test_states, estimate_surrogate, theorem1_harness, theorem2_harness,
    Datum, DatumPlacement, EgorovReport, EstimateReport, ProbeRole, TheoremCase, TheoremReport,
    TheoremRow,
};

/// Tensor bump `chi((x - x0)/rx) chi((xi - xi0)/rxi)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub x0: f64,
    pub xi0: f64,
    pub rx: f64,
    pub rxi: f64,
}

impl Window {
    pub fn support(&self) -> SupportBox {
        SupportBox {
            x: (self.x0 - self.rx, self.x0 + self.rx),
            xi: (self.xi0 - self.rxi, self.xi0 + self.rxi),
        }
    }
}

impl Symbol for Window {
    fn eval(&self, x: f64, xi: f64) -> f64 {
        bump((x - self.x0) / self.rx) * bump((xi - self.xi0) / self.rxi)
    }

    fn support(&self) -> SupportBox {
        Window::support(self)
    }

    fn eval_row(&self, xi: f64, xs: &[f64], out: &mut [f64]) {
        let f = bump((xi - self.xi0) / self.rxi);
        for (o, x) in out.iter_mut().zip(xs) {
            *o = if f == 0.0 {
                0.0
            } else {
                f * bump((x - self.x0) / self.rx)
            };
        }
    }
}

/// A window centred at `(x0, xi0)` and the scales it is applied at.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WavefrontProbe {
    pub center: PhasePoint,
    pub rx: f64,
    pub rxi: f64,
    /// Decreasing scales `h`.
    pub ladder: Vec<f64>,
}

/// `2^-3, ..., 2^-6`.
pub fn default_ladder() -> Vec<f64> {
    (3..=6).map(|k| 2f64.powi(-k)).collect()
}

impl WavefrontProbe {
    pub fn new(center: PhasePoint, rx: f64, rxi: f64, ladder: Vec<f64>) -> Result<Self> {
        let p = Self {
            center,
            rx,
            rxi,
            ladder,
        };
        p.validate()?;
        Ok(p)
    }

    /// `rx = 1`, `rxi = |xi0| / 2` and the default ladder.
    pub fn standard(x0: f64, xi0: f64) -> Result<Self> {
        Self::new(
            PhasePoint::new(vec![x0], vec![xi0]),
            1.0,
            0.5 * xi0.abs(),
            default_ladder(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        if self.center.dim() != 1 {
            return Err(Error::UnsupportedDimension(self.center.dim()));
        }
        if !self.center.is_finite() {
            return Err(Error::Domain("probe center is not finite".into()));
        }
        if !(self.rx > 0.0 && self.rxi > 0.0 && self.rx.is_finite() && self.rxi.is_finite()) {
            return Err(Error::Domain(format!(
                "support radii must be positive, got rx = {}, rxi = {}",
                self.rx, self.rxi
            )));
        }
        if self.ladder.len() < 2 {
            return Err(Error::Domain("ladder needs at least two scales".into()));
        }
        if self.ladder.iter().any(|h| !(*h > 0.0 && *h <= 1.0))
            || self.ladder.windows(2).any(|w| w[1] >= w[0])
        {
            return Err(Error::Domain(format!(
                "ladder {:?} must decrease inside (0, 1]",
                self.ladder
            )));
        }
        Ok(())
    }

    pub fn x0(&self) -> f64 {
        self.center.x[0]
    }

    pub fn xi0(&self) -> f64 {
        self.center.xi[0]
    }

    pub fn window(&self) -> Window {
        Window {
            x0: self.x0(),
            xi0: self.xi0(),
            rx: self.rx,
            rxi: self.rxi,
        }
    }

    /// Same radii and ladder at another center.
    pub fn moved_to(&self, center: PhasePoint) -> Result<Self> {
        Self::new(center, self.rx, self.rxi, self.ladder.clone())
    }

    /// Checks that the window stays on the grid at every scale.
    pub fn check_on_grid(&self, u: &WaveState) -> Result<()> {
        let b = self.window().support();
        let g = u.grid;
        if b.x.0 < -g.l || b.x.1 > g.l {
            return Err(Error::Range(format!(
                "probe x-support [{}, {}] leaves the grid",
                b.x.0, b.x.1
            )));
        }
        let hmin = self.ladder.last().copied().unwrap_or(1.0);
        let k = b.xi.0.abs().max(b.xi.1.abs()) / hmin;
        if k > g.nyquist() {
            return Err(Error::Range(format!(
                "probe frequency {k} at h = {hmin} exceeds the grid limit {}",
                g.nyquist()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DecayThresholds {
    /// Slopes at or below this are singular.
    pub s_sing: f64,
    /// Slopes at or above this are regular.
    pub s_reg: f64,
    /// Norms below `floor * ||u||` are treated as rounding.
    pub floor: f64,
}

impl Default for DecayThresholds {
    fn default() -> Self {
        Self {
            s_sing: 1.0,
            s_reg: 3.0,
            floor: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Singular,
    Regular,
    Inconclusive,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Agreement {
    Pass,
    Fail,
    Inconclusive,
}

/// Both sides must be conclusive to pass or fail.
pub fn agreement(a: Verdict, b: Verdict) -> Agreement {
    match (a, b) {
        (Verdict::Inconclusive, _) | (_, Verdict::Inconclusive) => Agreement::Inconclusive,
        (x, y) if x == y => Agreement::Pass,
        _ => Agreement::Fail,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayReport {
    pub center: PhasePoint,
    pub ladder: Vec<f64>,
    pub norms: Vec<f64>,
    /// Least-squares slope of `log norm` against `log h`, over the scales
    /// before the first norm at the floor.
    pub slope: Option<f64>,
    pub verdict: Verdict,
    pub thresholds: DecayThresholds,
    /// Some norm fell below the floor.
    pub floor_hit: bool,
    /// `||u||`, the reference for the floor.
    pub reference_norm: f64,
}

impl DecayReport {
    pub fn from_norms(
        center: PhasePoint,
        ladder: Vec<f64>,
        norms: Vec<f64>,
        reference_norm: f64,
        thresholds: DecayThresholds,
    ) -> Result<Self> {
        if norms.len() != ladder.len() {
            return Err(Error::Domain(format!(
                "{} norms for {} scales",
                norms.len(),
                ladder.len()
            )));
        }
        if norms.iter().any(|n| !(n.is_finite() && *n >= 0.0)) {
            return Err(Error::Domain(format!("invalid window norms {norms:?}")));
        }
        let floor = thresholds.floor * reference_norm;
        let pts: Vec<(f64, f64)> = ladder
            .iter()
            .zip(&norms)
            .take_while(|(_, n)| **n > floor)
            .map(|(h, n)| (h.ln(), n.ln()))
            .collect();
        let floor_hit = pts.len() < norms.len();
        let (slope, verdict) = if pts.len() < 2 {
            (None, Verdict::Regular)
        } else {
            let s = fit_slope(&pts);
            let v = if s <= thresholds.s_sing {
                Verdict::Singular
            } else if s >= thresholds.s_reg {
                Verdict::Regular
            } else {
                Verdict::Inconclusive
            };
            (Some(s), v)
        };
        Ok(Self {
            center,
            ladder,
            norms,
            slope,
            verdict,
            thresholds,
            floor_hit,
            reference_norm,
        })
    }

    /// Slope for comparisons; a report that sits at the floor counts as
    /// decaying faster than anything measurable.
    pub fn effective_slope(&self) -> f64 {
        self.slope.unwrap_or(f64::INFINITY)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Io(e.to_string()))
    }

    /// `h,norm` rows.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("h,norm\n");
        for (h, n) in self.ladder.iter().zip(&self.norms) {
            s.push_str(&format!("{h:.17e},{n:.17e}\n"));
        }
        s
    }
}

/// `||a(x, hD) u||` for every `h` of the ladder.
pub fn window_norms(a: &dyn Symbol, ladder: &[f64], u: &WaveState) -> Result<Vec<f64>> {
    ladder
        .par_iter()
        .map(|&h| Ok(apply_weyl(a, h, u)?.norm()))
        .collect()
}

pub fn probe_wavefront(
    u: &WaveState,
    probe: &WavefrontProbe,
    thresholds: &DecayThresholds,
) -> Result<DecayReport> {
    probe.validate()?;
    probe.check_on_grid(u)?;
    let norms = window_norms(&probe.window(), &probe.ladder, u)?;
    DecayReport::from_norms(
        probe.center.clone(),
        probe.ladder.clone(),
        norms,
        u.norm(),
        *thresholds,
    )
}
