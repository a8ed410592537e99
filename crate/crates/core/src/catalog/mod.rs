//! Admissible Hamiltonian data: metric coefficients, potentials and the
//! classical symbols built from them.
//!
//! Every catalog member has closed-form derivatives (metric to third order,
//! potential to second order), so evaluations never fall back on finite
//! differences.

mod fields;
pub mod jet;
mod lipschitz;
pub(crate) mod validate;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use fields::{
    BoundedGradientField, BracketPotential, CoefficientField, DecayingMetric, MetricJet,
    OscillatingMetric, PotentialField, PotentialJet, SkewedMetric, ZeroPotential,
};
pub use jet::japanese;
pub use lipschitz::{check_decay_lipschitz, LipschitzReport};
pub use validate::{validate_assumption_a, OrderCheck, ValidationGrid, ValidationReport};

/// Metric plus potential, sharing one decay exponent.
#[derive(Debug, Clone)]
pub struct HamiltonianSpec {
    pub name: String,
    pub metric: Arc<dyn CoefficientField>,
    pub potential: Arc<dyn PotentialField>,
}

impl HamiltonianSpec {
    pub fn new(
        name: impl Into<String>,
        metric: Arc<dyn CoefficientField>,
        potential: Arc<dyn PotentialField>,
    ) -> Self {
        Self {
            name: name.into(),
            metric,
            potential,
        }
    }

    /// `a = I`, `V = 0`.
    pub fn flat(n: usize) -> Self {
        Self::new(
            format!("flat{n}d"),
            Arc::new(DecayingMetric::flat(n)),
            Arc::new(ZeroPotential { n }),
        )
    }

    /// `a_jk = delta_jk (1 + c <x>^{-mu})`, `V = 0`.
    pub fn long_range(n: usize, c: f64, mu: f64) -> Self {
        Self::new(
            format!("lr{n}d(c={c},mu={mu})"),
            Arc::new(DecayingMetric::isotropic(n, c, mu)),
            Arc::new(ZeroPotential { n }),
        )
    }

    /// Same metric, replaced potential.
    pub fn with_potential(mut self, potential: Arc<dyn PotentialField>) -> Self {
        self.potential = potential;
        self.name = format!("{}+V", self.name);
        self
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn mu(&self) -> f64 {
        self.metric.decay()
    }
}

/// Serializable catalog selector used by configuration files and the C ABI.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpecDescriptor {
    pub family: MetricFamily,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default)]
    pub c: f64,
    #[serde(default = "default_mu")]
    pub mu: f64,
    /// Anisotropic family only.
    #[serde(default)]
    pub c2: f64,
    /// Anisotropic family only: off-diagonal coefficient.
    #[serde(default)]
    pub d: f64,
    #[serde(default)]
    pub potential: PotentialDescriptor,
}

fn default_dim() -> usize {
    1
}
fn default_mu() -> f64 {
    0.8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricFamily {
    Flat,
    LongRange,
    Anisotropic,
    /// Non-decaying fixture; fails validation by construction.
    Oscillating,
    /// Non-symmetric fixture; fails validation by construction.
    Skewed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct PotentialDescriptor {
    #[serde(default)]
    pub kind: PotentialKind,
    #[serde(default)]
    pub v0: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PotentialKind {
    #[default]
    None,
    Bounded,
    Growing,
}

impl SpecDescriptor {
    pub fn flat(dim: usize) -> Self {
        Self {
            family: MetricFamily::Flat,
            dim,
            c: 0.0,
            mu: 0.8,
            c2: 0.0,
            d: 0.0,
            potential: PotentialDescriptor::default(),
        }
    }

    pub fn long_range(dim: usize, c: f64, mu: f64) -> Self {
        Self {
            family: MetricFamily::LongRange,
            c,
            mu,
            ..Self::flat(dim)
        }
    }

    pub fn with_potential(mut self, kind: PotentialKind, v0: f64) -> Self {
        self.potential = PotentialDescriptor { kind, v0 };
        self
    }

    pub fn build(&self) -> Result<HamiltonianSpec> {
        let n = self.dim;
        if n == 0 {
            return Err(Error::Config("dim must be positive".into()));
        }
        if !(self.mu > 0.0) {
            return Err(Error::Config("mu must be positive".into()));
        }
        let metric: Arc<dyn CoefficientField> = match self.family {
            MetricFamily::Flat => Arc::new(DecayingMetric::flat(n)),
            MetricFamily::LongRange => {
                if self.c <= -1.0 {
                    return Err(Error::Config("long_range requires c > -1".into()));
                }
                Arc::new(DecayingMetric::isotropic(n, self.c, self.mu))
            }
            MetricFamily::Anisotropic => {
                if n != 2 {
                    return Err(Error::Config(
                        "anisotropic family is two-dimensional".into(),
                    ));
                }
                let m = DecayingMetric::anisotropic(self.c, self.c2, self.d, self.mu);
                if m.ellipticity().0 <= 0.0 {
                    return Err(Error::Config("anisotropic metric is not elliptic".into()));
                }
                Arc::new(m)
            }
            MetricFamily::Oscillating => {
                if self.c.abs() >= 1.0 {
                    return Err(Error::Config(
                        "oscillating amplitude must be below 1".into(),
                    ));
                }
                Arc::new(OscillatingMetric {
                    n,
                    amp: self.c,
                    mu: self.mu,
                })
            }
            MetricFamily::Skewed => Arc::new(SkewedMetric { n, eps: self.c }),
        };
        let potential: Arc<dyn PotentialField> = match self.potential.kind {
            PotentialKind::None => Arc::new(ZeroPotential { n }),
            PotentialKind::Bounded => {
                Arc::new(BracketPotential::bounded(n, self.potential.v0, self.mu))
            }
            PotentialKind::Growing => {
                Arc::new(BracketPotential::growing(n, self.potential.v0, self.mu))
            }
        };
        let name = match self.family {
            MetricFamily::Flat => format!("flat{n}d"),
            MetricFamily::LongRange => format!("lr{n}d(c={},mu={})", self.c, self.mu),
            MetricFamily::Anisotropic => format!(
                "aniso2d(c={},c2={},d={},mu={})",
                self.c, self.c2, self.d, self.mu
            ),
            MetricFamily::Oscillating => format!("osc{n}d(amp={})", self.c),
            MetricFamily::Skewed => format!("skew{n}d(eps={})", self.c),
        };
        let name = match self.potential.kind {
            PotentialKind::None => name,
            PotentialKind::Bounded => format!("{name}+V({}<x>^-mu)", self.potential.v0),
            PotentialKind::Growing => format!("{name}+V({}<x>^(2-mu))", self.potential.v0),
        };
        Ok(HamiltonianSpec::new(name, metric, potential))
    }
}

fn check_finite(spec: &HamiltonianSpec, x: &[f64], xi: &[f64]) -> Result<()> {
    let n = spec.dim();
    if x.len() != n || xi.len() != n {
        return Err(Error::Domain(format!(
            "expected dimension {n}, got x:{} xi:{}",
            x.len(),
            xi.len()
        )));
    }
    if x.iter().chain(xi).any(|v| !v.is_finite()) {
        return Err(Error::Domain("non-finite phase-space point".into()));
    }
    Ok(())
}

/// Quadratic form `1/2 sum a_jk xi_j xi_k` for a precomputed jet.
#[inline]
pub fn kinetic_from_jet(jet: &MetricJet, xi: &[f64]) -> f64 {
    let n = jet.n;
    let mut s = 0.0;
    for j in 0..n {
        for k in 0..n {
            s += jet.a[j * n + k] * xi[j] * xi[k];
        }
    }
    0.5 * s
}

/// Classical kinetic energy `k(x, xi)`.
pub fn eval_kinetic(spec: &HamiltonianSpec, x: &[f64], xi: &[f64]) -> Result<f64> {
    check_finite(spec, x, xi)?;
    Ok(kinetic_from_jet(&spec.metric.jet(x, 0), xi))
}

/// Full symbol `p = k + V`.
pub fn eval_total(spec: &HamiltonianSpec, x: &[f64], xi: &[f64]) -> Result<f64> {
    check_finite(spec, x, xi)?;
    Ok(kinetic_from_jet(&spec.metric.jet(x, 0), xi) + spec.potential.jet(x, 0).v)
}

/// Correction term in `d^2/dt^2 |y|^2 = 4k + U` along the kinetic flow.
pub fn eval_virial(spec: &HamiltonianSpec, x: &[f64], xi: &[f64]) -> Result<f64> {
    check_finite(spec, x, xi)?;
    Ok(virial_from_jet(&spec.metric.jet(x, 1), x, xi))
}

pub(crate) fn virial_from_jet(jet: &MetricJet, x: &[f64], xi: &[f64]) -> f64 {
    let n = jet.n;
    let mut first = 0.0;
    for j in 0..n {
        for k in 0..n {
            for l in 0..n {
                let dl = if j == l { 1.0 } else { 0.0 };
                first += jet.a(j, k) * (jet.a(j, l) - dl) * xi[l] * xi[k];
            }
        }
    }
    let mut second = 0.0;
    let mut third = 0.0;
    for j in 0..n {
        for k in 0..n {
            for l in 0..n {
                for m in 0..n {
                    second += jet.a(j, k) * jet.da(l, m, k) * x[j] * xi[l] * xi[m];
                    third += jet.da(j, k, l) * jet.a(l, m) * x[j] * xi[k] * xi[m];
                }
            }
        }
    }
    2.0 * first - second + 2.0 * third
}
