use serde::Serialize;

use super::{japanese, virial_from_jet, HamiltonianSpec};
use crate::error::{Error, Result};

/// Growth allowed between the last two decades of the grid before an order
/// check is declared failed. A ratio bound that keeps growing at the edge of
/// the grid is not a bound.
const TAIL_GROWTH_LIMIT: f64 = 1.5;

/// Sample points for grid-based checks.
#[derive(Debug, Clone)]
pub struct ValidationGrid {
    pub points: Vec<Vec<f64>>,
}

impl ValidationGrid {
    /// Origin plus logarithmically spaced radii in `[1e-2, r_max]` along a
    /// fixed set of directions.
    pub fn logarithmic(n: usize, r_max: f64, per_decade: usize) -> Self {
        let dirs = unit_directions(n);
        let lo = -2.0f64;
        let hi = r_max.log10();
        let count = ((hi - lo) * per_decade as f64).ceil() as usize + 1;
        let mut points = vec![vec![0.0; n]];
        for i in 0..count {
            let r = 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64);
            for d in &dirs {
                points.push(d.iter().map(|v| v * r).collect());
            }
        }
        Self { points }
    }

    /// Default: `|x| <= 1e3`, 40 radii per decade.
    pub fn default_for(n: usize) -> Self {
        Self::logarithmic(n, 1e3, 40)
    }

    /// Evenly spaced 1D grid on `[lo, hi]`.
    pub fn linear_1d(lo: f64, hi: f64, count: usize) -> Self {
        let points = (0..count)
            .map(|i| vec![lo + (hi - lo) * i as f64 / (count - 1).max(1) as f64])
            .collect();
        Self { points }
    }
}

/// Deterministic unit directions: `+-1` in 1D, 12 angles in 2D, axes and
/// pairwise diagonals beyond.
pub(crate) fn unit_directions(n: usize) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![1.0], vec![-1.0]],
        2 => (0..12)
            .map(|i| {
                let th = std::f64::consts::PI * i as f64 / 6.0 + 0.1;
                vec![th.cos(), th.sin()]
            })
            .collect(),
        _ => {
            let mut out = Vec::new();
            for i in 0..n {
                for s in [1.0, -1.0] {
                    let mut v = vec![0.0; n];
                    v[i] = s;
                    out.push(v);
                }
                for j in i + 1..n {
                    let mut v = vec![0.0; n];
                    v[i] = std::f64::consts::FRAC_1_SQRT_2;
                    v[j] = std::f64::consts::FRAC_1_SQRT_2;
                    out.push(v);
                }
            }
            out
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct OrderCheck {
    pub order: usize,
    /// Smallest constant realizing the bound on the grid.
    pub constant: f64,
    /// Max ratio on the outer decade over max ratio on the decade before it.
    pub tail_growth: f64,
    pub passed: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub spec: String,
    pub symmetry_defect: f64,
    pub min_ellipticity: f64,
    pub ellipticity_passed: bool,
    pub metric: Vec<OrderCheck>,
    pub potential: Vec<OrderCheck>,
    /// `C` in `|U(x, xi)| <= C <x>^{-mu} |xi|^2`.
    pub virial_constant: f64,
    pub passed: bool,
}

impl ValidationReport {
    pub fn metric_constant(&self, order: usize) -> Option<f64> {
        self.metric
            .iter()
            .find(|c| c.order == order)
            .map(|c| c.constant)
    }
}

/// Multi-indices of a given order over `n` variables (as sorted tuples).
fn multi_indices(n: usize, order: usize) -> Vec<Vec<usize>> {
    fn rec(n: usize, order: usize, start: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == order {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            rec(n, order, i, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    rec(n, order, 0, &mut Vec::new(), &mut out);
    out
}

struct OrderAccumulator {
    samples: Vec<(f64, f64)>, // (|x|, ratio)
}

impl OrderAccumulator {
    fn finish(self, order: usize, r_max: f64) -> OrderCheck {
        let constant = self.samples.iter().map(|s| s.1).fold(0.0, f64::max);
        let outer = self
            .samples
            .iter()
            .filter(|s| s.0 >= r_max / 10.0)
            .map(|s| s.1)
            .fold(0.0, f64::max);
        let inner = self
            .samples
            .iter()
            .filter(|s| s.0 >= r_max / 100.0 && s.0 < r_max / 10.0)
            .map(|s| s.1)
            .fold(0.0, f64::max);
        let tail_growth = if outer == 0.0 {
            0.0
        } else if inner == 0.0 {
            f64::INFINITY
        } else {
            outer / inner
        };
        OrderCheck {
            order,
            constant,
            tail_growth,
            passed: constant.is_finite() && tail_growth <= TAIL_GROWTH_LIMIT,
        }
    }
}

/// Grid check of the admissibility bounds
/// `|d^a (a_jk - delta_jk)| <= C <x>^{-mu-|a|}` (orders up to `max_order`) and
/// `|d^a V| <= C <x>^{2-mu-|a|}` (orders up to `min(max_order, 2)`), together
/// with symmetry, ellipticity and the virial bound.
pub fn validate_assumption_a(
    spec: &HamiltonianSpec,
    grid: &ValidationGrid,
    max_order: usize,
) -> Result<ValidationReport> {
    if grid.points.is_empty() {
        return Err(Error::Precondition("validation grid is empty".into()));
    }
    let supported = spec.metric.max_order();
    if max_order > supported {
        return Err(Error::UnsupportedOrder {
            requested: max_order,
            supported,
        });
    }
    let n = spec.dim();
    let mu = spec.mu();
    let r_max = grid
        .points
        .iter()
        .map(|p| p.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let dirs = unit_directions(n);
    let pot_order = max_order.min(spec.potential.max_order());

    let mut metric_acc: Vec<OrderAccumulator> = (0..=max_order)
        .map(|_| OrderAccumulator {
            samples: Vec::new(),
        })
        .collect();
    let mut pot_acc: Vec<OrderAccumulator> = (0..=pot_order)
        .map(|_| OrderAccumulator {
            samples: Vec::new(),
        })
        .collect();
    let mut symmetry_defect: f64 = 0.0;
    let mut min_ellipticity = f64::INFINITY;
    let mut virial_constant: f64 = 0.0;

    let index_sets: Vec<Vec<Vec<usize>>> = (0..=max_order).map(|o| multi_indices(n, o)).collect();

    for x in &grid.points {
        let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let jx = japanese(x);
        let jet = spec.metric.jet(x, max_order.max(1));
        let pjet = spec.potential.jet(x, pot_order);

        for j in 0..n {
            for k in 0..n {
                symmetry_defect = symmetry_defect.max((jet.a(j, k) - jet.a(k, j)).abs());
            }
        }
        // ellipticity on the symmetric part
        let sym = nalgebra::DMatrix::from_fn(n, n, |j, k| 0.5 * (jet.a(j, k) + jet.a(k, j)));
        let eig = nalgebra::SymmetricEigen::new(sym).eigenvalues;
        min_ellipticity = min_ellipticity.min(eig.iter().cloned().fold(f64::INFINITY, f64::min));

        for (order, sets) in index_sets.iter().enumerate() {
            let weight = jx.powf(mu + order as f64);
            let mut worst: f64 = 0.0;
            for j in 0..n {
                for k in 0..n {
                    for alpha in sets {
                        let v = match order {
                            0 => jet.a(j, k) - if j == k { 1.0 } else { 0.0 },
                            1 => jet.da(j, k, alpha[0]),
                            2 => jet.d2a(j, k, alpha[0], alpha[1]),
                            _ => jet.d3a(j, k, alpha[0], alpha[1], alpha[2]),
                        };
                        worst = worst.max(v.abs());
                    }
                }
            }
            metric_acc[order].samples.push((r, worst * weight));
        }
        for order in 0..=pot_order {
            let weight = jx.powf(mu + order as f64 - 2.0);
            let worst = match order {
                0 => pjet.v.abs(),
                1 => pjet.dv.iter().fold(0.0f64, |m, v| m.max(v.abs())),
                _ => pjet.d2v.iter().fold(0.0f64, |m, v| m.max(v.abs())),
            };
            pot_acc[order].samples.push((r, worst * weight));
        }
        for d in &dirs {
            let u = virial_from_jet(&jet, x, d);
            virial_constant = virial_constant.max(u.abs() * jx.powf(mu));
        }
    }

    let metric: Vec<OrderCheck> = metric_acc
        .into_iter()
        .enumerate()
        .map(|(o, acc)| acc.finish(o, r_max))
        .collect();
    let potential: Vec<OrderCheck> = pot_acc
        .into_iter()
        .enumerate()
        .map(|(o, acc)| acc.finish(o, r_max))
        .collect();
    let (c_low, _) = spec.metric.ellipticity();
    let ellipticity_passed = min_ellipticity >= c_low * (1.0 - 1e-12) && min_ellipticity > 0.0;
    let passed = symmetry_defect == 0.0
        && ellipticity_passed
        && metric.iter().all(|c| c.passed)
        && potential.iter().all(|c| c.passed);
    Ok(ValidationReport {
        spec: spec.name.clone(),
        symmetry_defect,
        min_ellipticity,
        ellipticity_passed,
        metric,
        potential,
        virial_constant,
        passed,
    })
}
