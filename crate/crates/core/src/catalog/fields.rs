//! Metric coefficient and potential fields with closed-form derivative jets.

use std::fmt::Debug;

use super::jet::{bracket_power, japanese};

/// Derivatives of the coefficient matrix `a_jk(x)` up to a given order.
///
/// Layouts are row-major with the matrix indices first:
/// `da[(j*n + k)*n + l] = d_l a_jk`, `d2a[((j*n + k)*n + l)*n + m] = d_l d_m a_jk`
/// and likewise for `d3a`.
#[derive(Debug, Clone)]
pub struct MetricJet {
    pub n: usize,
    pub a: Vec<f64>,
    pub da: Vec<f64>,
    pub d2a: Vec<f64>,
    pub d3a: Vec<f64>,
}

impl MetricJet {
    #[inline]
    pub fn a(&self, j: usize, k: usize) -> f64 {
        self.a[j * self.n + k]
    }
    #[inline]
    pub fn da(&self, j: usize, k: usize, l: usize) -> f64 {
        self.da[(j * self.n + k) * self.n + l]
    }
    #[inline]
    pub fn d2a(&self, j: usize, k: usize, l: usize, m: usize) -> f64 {
        let n = self.n;
        self.d2a[((j * n + k) * n + l) * n + m]
    }
    #[inline]
    pub fn d3a(&self, j: usize, k: usize, l: usize, m: usize, r: usize) -> f64 {
        let n = self.n;
        self.d3a[(((j * n + k) * n + l) * n + m) * n + r]
    }
}

/// Value and derivatives of the potential up to second order.
#[derive(Debug, Clone)]
pub struct PotentialJet {
    pub n: usize,
    pub v: f64,
    pub dv: Vec<f64>,
    /// Row-major `n x n`.
    pub d2v: Vec<f64>,
}

/// A smooth, positive, symmetric coefficient matrix `a_jk(x)`.
pub trait CoefficientField: Debug + Send + Sync {
    fn dim(&self) -> usize;
    /// Declared decay exponent `mu` of `a - I`.
    fn decay(&self) -> f64;
    /// Ellipticity constants `(c_low, c_high)`.
    fn ellipticity(&self) -> (f64, f64);
    /// Highest derivative order available in closed form.
    fn max_order(&self) -> usize {
        3
    }
    /// Jet at `x` up to `order` (callers never request above `max_order`).
    fn jet(&self, x: &[f64], order: usize) -> MetricJet;
}

/// A smooth real potential `V(x)`.
pub trait PotentialField: Debug + Send + Sync {
    fn max_order(&self) -> usize {
        2
    }
    fn jet(&self, x: &[f64], order: usize) -> PotentialJet;
    fn is_zero(&self) -> bool {
        false
    }
}

/// `a(x) = I + <x>^{-mu} B` for a constant symmetric matrix `B`.
///
/// Covers the flat metric (`B = 0`), the isotropic long-range family
/// (`B = c I`) and the anisotropic two-dimensional family.
#[derive(Debug, Clone)]
pub struct DecayingMetric {
    n: usize,
    mu: f64,
    b: Vec<f64>,
}

impl DecayingMetric {
    pub fn flat(n: usize) -> Self {
        Self {
            n,
            mu: 1.0,
            b: vec![0.0; n * n],
        }
    }

    pub fn isotropic(n: usize, c: f64, mu: f64) -> Self {
        let mut b = vec![0.0; n * n];
        for j in 0..n {
            b[j * n + j] = c;
        }
        Self { n, mu, b }
    }

    /// Two-dimensional family with perturbation `[[c1, d], [d, c2]] <x>^{-mu}`.
    pub fn anisotropic(c1: f64, c2: f64, d: f64, mu: f64) -> Self {
        Self {
            n: 2,
            mu,
            b: vec![c1, d, d, c2],
        }
    }

    pub fn perturbation(&self) -> &[f64] {
        &self.b
    }

    fn b_eigen_range(&self) -> (f64, f64) {
        let n = self.n;
        let m = nalgebra::DMatrix::from_row_slice(n, n, &self.b);
        let eig = nalgebra::SymmetricEigen::new(m).eigenvalues;
        let lo = eig.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = eig.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }
}

impl CoefficientField for DecayingMetric {
    fn dim(&self) -> usize {
        self.n
    }
    fn decay(&self) -> f64 {
        self.mu
    }
    fn ellipticity(&self) -> (f64, f64) {
        // <x>^{-mu} ranges over (0, 1]
        let (lo, hi) = self.b_eigen_range();
        (1.0 + lo.min(0.0), 1.0 + hi.max(0.0))
    }
    fn jet(&self, x: &[f64], order: usize) -> MetricJet {
        let n = self.n;
        let g = bracket_power(x, -self.mu, order);
        let nn = n * n;
        let mut jet = MetricJet {
            n,
            a: vec![0.0; nn],
            da: Vec::new(),
            d2a: Vec::new(),
            d3a: Vec::new(),
        };
        for j in 0..n {
            for k in 0..n {
                jet.a[j * n + k] = if j == k { 1.0 } else { 0.0 } + self.b[j * n + k] * g.value;
            }
        }
        if order >= 1 {
            jet.da = vec![0.0; nn * n];
            for jk in 0..nn {
                for l in 0..n {
                    jet.da[jk * n + l] = self.b[jk] * g.grad[l];
                }
            }
        }
        if order >= 2 {
            jet.d2a = vec![0.0; nn * nn];
            for jk in 0..nn {
                for lm in 0..nn {
                    jet.d2a[jk * nn + lm] = self.b[jk] * g.hess[lm];
                }
            }
        }
        if order >= 3 {
            jet.d3a = vec![0.0; nn * nn * n];
            for jk in 0..nn {
                for lmr in 0..nn * n {
                    jet.d3a[jk * nn * n + lmr] = self.b[jk] * g.third[lmr];
                }
            }
        }
        jet
    }
}

/// `a(x) = I (1 + amp sin x_1)`: elliptic but not decaying. Used to exercise
/// the failing branch of the decay validation.
#[derive(Debug, Clone)]
pub struct OscillatingMetric {
    pub n: usize,
    pub amp: f64,
    pub mu: f64,
}

impl CoefficientField for OscillatingMetric {
    fn dim(&self) -> usize {
        self.n
    }
    fn decay(&self) -> f64 {
        self.mu
    }
    fn ellipticity(&self) -> (f64, f64) {
        (1.0 - self.amp.abs(), 1.0 + self.amp.abs())
    }
    fn jet(&self, x: &[f64], order: usize) -> MetricJet {
        let n = self.n;
        let (s, c) = x[0].sin_cos();
        // derivatives of sin along x_1: sin, cos, -sin, -cos
        let d = [s, c, -s, -c];
        let mut jet = MetricJet {
            n,
            a: vec![0.0; n * n],
            da: vec![0.0; if order >= 1 { n * n * n } else { 0 }],
            d2a: vec![0.0; if order >= 2 { n.pow(4) } else { 0 }],
            d3a: vec![0.0; if order >= 3 { n.pow(5) } else { 0 }],
        };
        for j in 0..n {
            let jj = j * n + j;
            jet.a[jj] = 1.0 + self.amp * d[0];
            if order >= 1 {
                jet.da[jj * n] = self.amp * d[1];
            }
            if order >= 2 {
                jet.d2a[jj * n * n] = self.amp * d[2];
            }
            if order >= 3 {
                jet.d3a[jj * n * n * n] = self.amp * d[3];
            }
        }
        jet
    }
}

/// Flat metric with an antisymmetric defect `a_01 = eps`, `a_10 = -eps`.
/// Deliberately violates symmetry; only useful for exercising validation.
#[derive(Debug, Clone)]
pub struct SkewedMetric {
    pub n: usize,
    pub eps: f64,
}

impl CoefficientField for SkewedMetric {
    fn dim(&self) -> usize {
        self.n
    }
    fn decay(&self) -> f64 {
        1.0
    }
    fn ellipticity(&self) -> (f64, f64) {
        (1.0, 1.0)
    }
    fn jet(&self, x: &[f64], order: usize) -> MetricJet {
        let mut jet = DecayingMetric::flat(self.n).jet(x, order);
        if self.n >= 2 {
            jet.a[1] = self.eps;
            jet.a[self.n] = -self.eps;
        }
        jet
    }
}

/// `V = 0`.
#[derive(Debug, Clone, Copy)]
pub struct ZeroPotential {
    pub n: usize,
}

impl PotentialField for ZeroPotential {
    fn jet(&self, _x: &[f64], order: usize) -> PotentialJet {
        let n = self.n;
        PotentialJet {
            n,
            v: 0.0,
            dv: vec![0.0; if order >= 1 { n } else { 0 }],
            d2v: vec![0.0; if order >= 2 { n * n } else { 0 }],
        }
    }
    fn is_zero(&self) -> bool {
        true
    }
}

/// `V = v0 <x>^s`. With `s = -mu` it is bounded, with `s = 2 - mu` it grows
/// at the largest rate the admissibility bounds allow.
#[derive(Debug, Clone, Copy)]
pub struct BracketPotential {
    pub n: usize,
    pub v0: f64,
    pub exponent: f64,
}

impl BracketPotential {
    pub fn bounded(n: usize, v0: f64, mu: f64) -> Self {
        Self {
            n,
            v0,
            exponent: -mu,
        }
    }
    pub fn growing(n: usize, v0: f64, mu: f64) -> Self {
        Self {
            n,
            v0,
            exponent: 2.0 - mu,
        }
    }
}

impl PotentialField for BracketPotential {
    fn jet(&self, x: &[f64], order: usize) -> PotentialJet {
        let g = bracket_power(x, self.exponent, order.min(2));
        PotentialJet {
            n: self.n,
            v: self.v0 * g.value,
            dv: g.grad.iter().map(|v| self.v0 * v).collect(),
            d2v: g.hess.iter().map(|v| self.v0 * v).collect(),
        }
    }
    fn is_zero(&self) -> bool {
        self.v0 == 0.0
    }
}

/// Scalar field with a declared gradient bound `|grad f(x)| <= C <x>^beta`.
#[derive(Clone)]
pub struct BoundedGradientField {
    pub name: String,
    pub dim: usize,
    pub c: f64,
    pub beta: f64,
    f: std::sync::Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>,
}

impl Debug for BoundedGradientField {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoundedGradientField")
            .field("name", &self.name)
            .field("c", &self.c)
            .field("beta", &self.beta)
            .finish()
    }
}

impl BoundedGradientField {
    pub fn new(
        name: impl Into<String>,
        dim: usize,
        c: f64,
        beta: f64,
        f: impl Fn(&[f64]) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self {
            name: name.into(),
            dim,
            c,
            beta,
            f: std::sync::Arc::new(f),
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        (self.f)(x)
    }

    /// `coeff <x>^s`, with `|grad| = |coeff s| |x| <x>^{s-2} <= |coeff s| <x>^{s-1}`.
    pub fn bracket(dim: usize, coeff: f64, s: f64) -> Self {
        Self::new(
            format!("{coeff}<x>^{s}"),
            dim,
            (coeff * s).abs(),
            s - 1.0,
            move |x| coeff * japanese(x).powf(s),
        )
    }

    /// `x_1 <x>^{-1-mu}`. Its gradient is
    /// `e_1 <x>^{-1-mu} - (1+mu) x_1 x <x>^{-3-mu}`, bounded by `(2+mu) <x>^{-1-mu}`.
    pub fn tilted(dim: usize, mu: f64) -> Self {
        Self::new(
            format!("x1<x>^(-1-{mu})"),
            dim,
            2.0 + mu,
            -1.0 - mu,
            move |x| x[0] * japanese(x).powf(-1.0 - mu),
        )
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self::new("constant", dim, 0.0, 0.0, move |_| value)
    }

    /// `w . x` with `|grad| = |w|`.
    pub fn linear(w: Vec<f64>) -> Self {
        let c = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        Self::new("linear", w.len(), c, 0.0, move |x| {
            x.iter().zip(&w).map(|(a, b)| a * b).sum()
        })
    }
}
