use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::asymptotics::RegionSpec;
use crate::catalog::SpecDescriptor;
use crate::error::{Error, Result};
use crate::flow::{FlowKind, PhasePoint};
use crate::microlocal::{Datum, DatumPlacement, DecayThresholds, ProbeRole};

/// One experiment: a Hamiltonian, shared settings and one block per command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub spec: SpecDescriptor,
    /// Output directory; `--out` overrides it.
    #[serde(default)]
    pub out: Option<PathBuf>,
    /// Seed for every random draw; `--seed` overrides it.
    #[serde(default)]
    pub seed: u64,
    /// Relative integration tolerance (absolute is 1e-2 of it); `--tol`
    /// overrides it.
    #[serde(default)]
    pub tol: Option<f64>,
    #[serde(default)]
    pub flow: Option<FlowBlock>,
    #[serde(default)]
    pub scatter: Option<ScatterBlock>,
    #[serde(default)]
    pub hj: Option<HjBlock>,
    #[serde(default)]
    pub wavefront: Option<WavefrontBlock>,
    #[serde(default)]
    pub verify: Option<VerifyBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlowBlock {
    pub start: PhasePoint,
    pub t_span: [f64; 2],
    #[serde(default = "default_kind")]
    pub kind: FlowKind,
    /// Uniform output times; every accepted step when absent.
    #[serde(default)]
    pub samples: Option<usize>,
}

fn default_kind() -> FlowKind {
    FlowKind::Full
}

/// Anchor radius and gluing constant; calibrated over `r_candidates` when
/// `r` is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct HjParams {
    #[serde(default)]
    pub r: Option<f64>,
    #[serde(default)]
    pub c4: Option<f64>,
    #[serde(default)]
    pub r_candidates: Option<Vec<f64>>,
    /// Left end of the time range.
    #[serde(default)]
    pub t0: Option<f64>,
}

/// Random starts: `|x| <= x_max`, `xi_min <= |xi| <= xi_max`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomStarts {
    pub count: usize,
    #[serde(default = "default_x_max")]
    pub x_max: f64,
    #[serde(default = "default_xi_min")]
    pub xi_min: f64,
    #[serde(default = "default_xi_max")]
    pub xi_max: f64,
}

fn default_x_max() -> f64 {
    5.0
}
fn default_xi_min() -> f64 {
    0.5
}
fn default_xi_max() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScatterBlock {
    #[serde(default)]
    pub starts: Vec<PhasePoint>,
    #[serde(default)]
    pub random: Option<RandomStarts>,
    #[serde(default = "default_scatter_t0")]
    pub t0: f64,
    /// Lambda ladder; chosen per start above the high-frequency threshold
    /// when absent.
    #[serde(default)]
    pub ladder: Option<Vec<f64>>,
    #[serde(default = "default_rungs")]
    pub rungs: usize,
    #[serde(default = "default_horizon")]
    pub nontrapping_horizon: f64,
    #[serde(default)]
    pub hj: HjParams,
}

fn default_scatter_t0() -> f64 {
    -1.0
}
fn default_rungs() -> usize {
    4
}
fn default_horizon() -> f64 {
    100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HjBlock {
    #[serde(default)]
    pub params: HjParams,
    /// Table times; five points on the time range when absent.
    #[serde(default)]
    pub times: Option<Vec<f64>>,
    /// Table frequencies; multiples of the high-frequency threshold along
    /// the first axis (both signs) when absent.
    #[serde(default)]
    pub xis: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum TheoremChoice {
    Propagation,
    Scattering,
    #[default]
    Both,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeConfig {
    pub x0: f64,
    pub xi0: f64,
    pub role: ProbeRole,
    #[serde(default)]
    pub rx: Option<f64>,
    #[serde(default)]
    pub rxi: Option<f64>,
    #[serde(default)]
    pub ladder: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n: usize,
    pub l: f64,
}

/// Theorem case; absent fields take the calibrated defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct WavefrontBlock {
    #[serde(default)]
    pub theorem: TheoremChoice,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub datum: Option<Datum>,
    #[serde(default)]
    pub placement: Option<DatumPlacement>,
    /// `[cutoff, width]` as fractions of the grid limit; `[]` disables it.
    #[serde(default)]
    pub band_limit: Option<Vec<f64>>,
    #[serde(default)]
    pub t0: Option<f64>,
    #[serde(default)]
    pub hj_r: Option<f64>,
    #[serde(default)]
    pub hj_c4: Option<f64>,
    #[serde(default)]
    pub probes: Option<Vec<ProbeConfig>>,
    #[serde(default)]
    pub thresholds: Option<DecayThresholds>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, PartialOrd, Ord)]
#[serde(rename_all = "snake_case")]
pub enum CheckName {
    Assumption,
    Energy,
    Homogeneity,
    APriori,
    ScaledLimit,
    Escape,
    HighEnergyRates,
    HjResidual,
    Scattering,
    Lipschitz,
}

impl CheckName {
    pub const ALL: [CheckName; 10] = [
        CheckName::Assumption,
        CheckName::Energy,
        CheckName::Homogeneity,
        CheckName::APriori,
        CheckName::ScaledLimit,
        CheckName::Escape,
        CheckName::HighEnergyRates,
        CheckName::HjResidual,
        CheckName::Scattering,
        CheckName::Lipschitz,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            CheckName::Assumption => "assumption",
            CheckName::Energy => "energy",
            CheckName::Homogeneity => "homogeneity",
            CheckName::APriori => "a_priori",
            CheckName::ScaledLimit => "scaled_limit",
            CheckName::Escape => "escape",
            CheckName::HighEnergyRates => "high_energy_rates",
            CheckName::HjResidual => "hj_residual",
            CheckName::Scattering => "scattering",
            CheckName::Lipschitz => "lipschitz",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyBlock {
    /// All checks when absent.
    #[serde(default)]
    pub checks: Option<Vec<CheckName>>,
    /// Random starts per check.
    #[serde(default = "default_verify_starts")]
    pub starts: usize,
    #[serde(default)]
    pub hj: HjParams,
    /// Escape region; a shell at radius 10 when absent.
    #[serde(default)]
    pub region: Option<RegionSpec>,
    #[serde(default = "default_pairs")]
    pub lipschitz_pairs: usize,
}

fn default_verify_starts() -> usize {
    5
}
fn default_pairs() -> usize {
    10_000
}

impl Default for VerifyBlock {
    fn default() -> Self {
        Self {
            checks: None,
            starts: default_verify_starts(),
            hj: HjParams::default(),
            region: None,
            lipschitz_pairs: default_pairs(),
        }
    }
}

impl ExperimentConfig {
    /// Parses TOML, or JSON when the text starts with `{`.
    pub fn parse(text: &str) -> Result<Self> {
        let cfg: Self = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(t) = self.tol {
            if !(t > 0.0 && t < 1.0) {
                return Err(Error::Config(format!("tol must lie in (0, 1), got {t}")));
            }
        }
        if let Some(f) = &self.flow {
            let n = self.spec.dim;
            if f.start.x.len() != n || f.start.xi.len() != n {
                return Err(Error::Config(format!(
                    "flow start must have dimension {n}"
                )));
            }
            if !f.t_span.iter().all(|t| t.is_finite()) {
                return Err(Error::Config("flow t_span must be finite".into()));
            }
        }
        if let Some(s) = &self.scatter {
            if s.starts.is_empty() && s.random.is_none() {
                return Err(Error::Config(
                    "scatter needs starts or a random block".into(),
                ));
            }
            if !(s.t0 < 0.0) {
                return Err(Error::Config("scatter t0 must be negative".into()));
            }
        }
        if let Some(w) = &self.wavefront {
            if let Some(b) = &w.band_limit {
                if !(b.is_empty() || b.len() == 2) {
                    return Err(Error::Config(
                        "band_limit is [cutoff, width] or []".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Canonical JSON used for the config hash. The output directory is
    /// left out: it says where results go, not what they are.
    pub fn canonical_json(&self) -> String {
        let mut c = self.clone();
        c.out = None;
        serde_json::to_string(&c).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const FLOW: &str = r#"
seed = 7
[spec]
family = "long_range"
c = 0.5
mu = 0.8
[flow]
start = { x = [2.0], xi = [1.0] }
t_span = [0.0, -5.0]
samples = 11
"#;

    #[test]
    fn toml_and_json_agree() {
        let a = ExperimentConfig::parse(FLOW).unwrap();
        let b = ExperimentConfig::parse(&a.canonical_json()).unwrap();
        assert_eq!(a, b);
        let mut c = a.clone();
        c.out = Some("elsewhere".into());
        assert_eq!(a.canonical_json(), c.canonical_json());
        assert_eq!(a.seed, 7);
        assert_eq!(a.flow.as_ref().unwrap().kind, FlowKind::Full);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let bad = FLOW.replace("samples = 11", "samples = 11\nbogus = 1");
        assert!(matches!(ExperimentConfig::parse(&bad), Err(Error::Config(_))));
        let bad = FLOW.replace("mu = 0.8", "mu = 0.8\nnu = 1");
        assert!(ExperimentConfig::parse(&bad).is_err());
    }

    #[test]
    fn semantic_checks() {
        let bad = FLOW.replace("xi = [1.0]", "xi = [1.0, 0.0]");
        assert!(ExperimentConfig::parse(&bad).is_err());
        let bad = format!("tol = 2.0\n{FLOW}");
        assert!(ExperimentConfig::parse(&bad).is_err());
        let scatter = "[spec]\nfamily = \"flat\"\n[scatter]\nt0 = -1.0\n";
        assert!(ExperimentConfig::parse(scatter).is_err());
    }

    #[test]
    fn check_names_round_trip() {
        for c in CheckName::ALL {
            let s = serde_json::to_string(&c).unwrap();
            assert_eq!(s, format!("\"{}\"", c.as_str()));
        }
    }

    #[test]
    fn shipped_configs_load() {
        let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
        let mut seen = 0;
        for e in std::fs::read_dir(&dir).unwrap() {
            let p = e.unwrap().path();
            let c = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            c.validate().unwrap();
            c.spec.build().unwrap();
            seen += 1;
        }
        assert!(seen >= 2);
    }
}
