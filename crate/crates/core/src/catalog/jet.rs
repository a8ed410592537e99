//! Closed-form jets of the Japanese bracket power `<x>^s = (1 + |x|^2)^(s/2)`.

/// Value and partial derivatives (up to third order) of `<x>^s` at a point.
#[derive(Debug, Clone)]
pub struct BracketJet {
    pub n: usize,
    pub value: f64,
    pub grad: Vec<f64>,
    /// Row-major `n x n`.
    pub hess: Vec<f64>,
    /// Row-major `n x n x n`.
    pub third: Vec<f64>,
}

/// `<x> = (1 + |x|^2)^(1/2)`.
pub fn japanese(x: &[f64]) -> f64 {
    (1.0 + x.iter().map(|v| v * v).sum::<f64>()).sqrt()
}

fn delta(i: usize, j: usize) -> f64 {
    if i == j {
        1.0
    } else {
        0.0
    }
}

/// Computes `<x>^s` together with derivatives up to `order` (at most 3).
pub fn bracket_power(x: &[f64], s: f64, order: usize) -> BracketJet {
    let n = x.len();
    let q = 1.0 + x.iter().map(|v| v * v).sum::<f64>();
    let value = q.powf(0.5 * s);
    let mut jet = BracketJet {
        n,
        value,
        grad: Vec::new(),
        hess: Vec::new(),
        third: Vec::new(),
    };
    if order == 0 {
        return jet;
    }
    // q^(s/2 - m) = value / q^m
    let q1 = value / q;
    let q2 = q1 / q;
    let q3 = q2 / q;
    jet.grad = x.iter().map(|&xi| s * xi * q1).collect();
    if order == 1 {
        return jet;
    }
    let c2 = s * (s - 2.0);
    jet.hess = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            jet.hess[i * n + j] = s * delta(i, j) * q1 + c2 * x[i] * x[j] * q2;
        }
    }
    if order == 2 {
        return jet;
    }
    let c3 = c2 * (s - 4.0);
    jet.third = vec![0.0; n * n * n];
    for i in 0..n {
        for j in 0..n {
            for k in 0..n {
                jet.third[(i * n + j) * n + k] =
                    c2 * (delta(i, j) * x[k] + delta(i, k) * x[j] + delta(j, k) * x[i]) * q2
                        + c3 * x[i] * x[j] * x[k] * q3;
            }
        }
    }
    jet
}
