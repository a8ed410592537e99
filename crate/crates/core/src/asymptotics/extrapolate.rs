//! Limits of vector sequences sampled on a geometric scale ladder.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::util::{dist, fit_slope};

#[derive(Debug, Clone, Serialize)]
pub struct Extrapolation {
    pub limit: Vec<f64>,
    /// Disagreement between the two richest fits.
    pub error: f64,
    /// Leading decay exponent used (fitted or supplied); NaN when the
    /// sequence is constant.
    pub exponent: f64,
    /// Exponent fitted from the data, reported even when one is supplied.
    pub fitted_exponent: f64,
    /// `|e_{k+1} - e_k|` along the ladder.
    pub differences: Vec<f64>,
    /// Differences strictly decrease (or sit below the noise floor).
    pub cauchy: bool,
}

/// Exponent lattice `{i q + j : i >= 1, j >= 0}` in increasing order.
fn lattice(q: f64, count: usize) -> Vec<f64> {
    let mut out = Vec::new();
    for i in 1..=count {
        for j in 0..count {
            out.push(i as f64 * q + j as f64);
        }
    }
    out.sort_by(|a, b| a.partial_cmp(b).unwrap());
    out.dedup_by(|a, b| (*a - *b).abs() < 1e-9);
    out.truncate(count);
    out
}

/// Least-squares fit of `e(s) = L + sum_i c_i s^{-p_i}`; returns `L`.
fn fit_limit(scales: &[f64], values: &[Vec<f64>], exps: &[f64]) -> Vec<f64> {
    let m = scales.len();
    let k = exps.len() + 1;
    let smax = scales.iter().cloned().fold(0.0, f64::max);
    // columns scaled to unit size at the largest scale
    let a = DMatrix::from_fn(m, k, |r, c| {
        if c == 0 {
            1.0
        } else {
            (scales[r] / smax).powf(-exps[c - 1])
        }
    });
    let svd = a.svd(true, true);
    let dim = values[0].len();
    (0..dim)
        .map(|d| {
            let b = DVector::from_iterator(m, values.iter().map(|v| v[d]));
            svd.solve(&b, 1e-14).map(|x| x[0]).unwrap_or(f64::NAN)
        })
        .collect()
}

/// Residual norm of the fit with lattice exponents built on `q`.
fn fit_residual(scales: &[f64], values: &[Vec<f64>], exps: &[f64]) -> f64 {
    let m = scales.len();
    let smax = scales.iter().cloned().fold(0.0, f64::max);
    let a = DMatrix::from_fn(m, exps.len() + 1, |r, c| {
        if c == 0 {
            1.0
        } else {
            (scales[r] / smax).powf(-exps[c - 1])
        }
    });
    let svd = a.clone().svd(true, true);
    let mut total = 0.0;
    for d in 0..values[0].len() {
        let b = DVector::from_iterator(m, values.iter().map(|v| v[d]));
        if let Ok(x) = svd.solve(&b, 1e-14) {
            total += (&a * x - b).norm_squared();
        }
    }
    total.sqrt()
}

/// Golden-section search for the leading exponent in `[q/2, 2q]` that
/// minimizes the residual of a fit keeping at least two degrees of freedom.
fn refine_exponent(scales: &[f64], values: &[Vec<f64>], q: f64) -> f64 {
    let m = scales.len();
    if m < 4 {
        return q;
    }
    let k = (m - 3).min(3);
    let f = |p: f64| fit_residual(scales, values, &lattice(p, k));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (0.5 * q, 2.0 * q);
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..60 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    let best = 0.5 * (a + b);
    if f(best) <= f(q) {
        best
    } else {
        q
    }
}

/// Extrapolates `values[k]` (taken at increasing `scales[k]`) to infinite
/// scale. With `known_exponent = None` the leading rate is fitted from the
/// successive differences.
pub fn extrapolate(
    scales: &[f64],
    values: &[Vec<f64>],
    known_exponent: Option<f64>,
) -> Extrapolation {
    let m = scales.len();
    let last = values[m - 1].clone();
    let differences: Vec<f64> = values.windows(2).map(|w| dist(&w[0], &w[1])).collect();
    let size = last.iter().fold(1.0f64, |a, v| a.max(v.abs()));
    let floor = 1e-11 * size;
    let cauchy = differences.windows(2).all(|w| w[1] < w[0] || w[1] <= floor);
    if m < 3 || differences.iter().all(|&d| d <= floor) {
        let error = differences.last().copied().unwrap_or(f64::INFINITY);
        return Extrapolation {
            limit: last,
            error,
            exponent: f64::NAN,
            fitted_exponent: f64::NAN,
            differences,
            cauchy,
        };
    }
    let q_est = {
        let pts: Vec<(f64, f64)> = differences
            .iter()
            .enumerate()
            .rev()
            .take(3)
            .filter(|(_, d)| **d > floor)
            .map(|(i, d)| (scales[i].ln(), d.ln()))
            .collect();
        if pts.len() >= 2 {
            -fit_slope(&pts)
        } else {
            1.0
        }
    };
    let q_est = if q_est.is_finite() && q_est > 0.05 {
        q_est
    } else {
        0.05
    };
    let fitted_exponent = refine_exponent(scales, values, q_est);
    let q = known_exponent.unwrap_or(fitted_exponent);
    // leave one degree of freedom for the error estimate
    let kmax = (m - 2).clamp(1, 4);
    let exps = lattice(q, kmax);
    let rich = fit_limit(scales, values, &exps);
    let poor = if kmax >= 2 {
        fit_limit(&scales[1..], &values[1..], &exps[..kmax - 1])
    } else {
        last.clone()
    };
    let error = dist(&rich, &poor);
    Extrapolation {
        limit: rich,
        error,
        exponent: q,
        fitted_exponent,
        differences,
        cauchy,
    }
}
