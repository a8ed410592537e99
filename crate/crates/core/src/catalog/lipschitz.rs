use serde::Serialize;

use super::{japanese, BoundedGradientField};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub field: String,
    pub pairs: usize,
    /// `max |f(x) - f(y)| / ((pi/2) C max(<x>^beta, <y>^beta) |x - y|)`.
    pub max_ratio: f64,
    pub passed: bool,
}

/// Checks the weighted Lipschitz estimate
/// `|f(x) - f(y)| <= (pi/2) C max(<x>^beta, <y>^beta) |x - y|` on sample pairs.
///
/// In one dimension every pair must satisfy `x y > 0`.
pub fn check_decay_lipschitz(
    field: &BoundedGradientField,
    pairs: &[(Vec<f64>, Vec<f64>)],
) -> Result<LipschitzReport> {
    let mut max_ratio: f64 = 0.0;
    for (i, (x, y)) in pairs.iter().enumerate() {
        if x.len() != field.dim || y.len() != field.dim {
            return Err(Error::Domain(format!("pair {i} has wrong dimension")));
        }
        if field.dim == 1 && x[0] * y[0] <= 0.0 {
            return Err(Error::Precondition(format!(
                "pair {i}: one-dimensional pairs need x*y > 0"
            )));
        }
        let dist = x
            .iter()
            .zip(y)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let diff = (field.eval(x) - field.eval(y)).abs();
        if diff == 0.0 {
            continue;
        }
        let weight = japanese(x)
            .powf(field.beta)
            .max(japanese(y).powf(field.beta));
        let bound = std::f64::consts::FRAC_PI_2 * field.c * weight * dist;
        let ratio = if bound > 0.0 {
            diff / bound
        } else {
            f64::INFINITY
        };
        max_ratio = max_ratio.max(ratio);
    }
    Ok(LipschitzReport {
        field: field.name.clone(),
        pairs: pairs.len(),
        max_ratio,
        passed: max_ratio <= 1.0,
    })
}

#[cfg(test)]
mod tests {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn random_pairs(n: usize, count: usize, radius: f64, seed: u64) -> Vec<(Vec<f64>, Vec<f64>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..count)
            .map(|_| {
                let x = (0..n).map(|_| rng.gen_range(-radius..radius)).collect();
                let y = (0..n).map(|_| rng.gen_range(-radius..radius)).collect();
                (x, y)
            })
            .collect()
    }

    #[test]
    fn constant_field_has_zero_ratio() {
        let f = BoundedGradientField::constant(2, 3.0);
        let rep = check_decay_lipschitz(&f, &random_pairs(2, 100, 10.0, 1)).unwrap();
        assert_eq!(rep.max_ratio, 0.0);
        assert!(rep.passed);
    }

    #[test]
    fn decaying_bracket_passes_in_2d() {
        let f = BoundedGradientField::bracket(2, 1.0, -0.8);
        let rep = check_decay_lipschitz(&f, &random_pairs(2, 2000, 50.0, 2)).unwrap();
        assert!(rep.passed, "{rep:?}");
    }

    #[test]
    fn linear_field_obeys_plain_lipschitz() {
        let f = BoundedGradientField::linear(vec![0.6, -0.8]);
        let rep = check_decay_lipschitz(&f, &random_pairs(2, 500, 20.0, 3)).unwrap();
        // classical bound with factor 1 gives ratio <= 2/pi
        assert!(rep.max_ratio <= 2.0 / std::f64::consts::PI + 1e-12);
    }

    #[test]
    fn one_dimensional_sign_condition() {
        let f = BoundedGradientField::bracket(1, 1.0, -0.8);
        let err = check_decay_lipschitz(&f, &[(vec![1.0], vec![-2.0])]).unwrap_err();
        assert!(matches!(err, Error::Precondition(_)));
        let ok =
            check_decay_lipschitz(&f, &[(vec![1.0], vec![2.0]), (vec![-3.0], vec![-0.5])]).unwrap();
        assert!(ok.passed);
    }
}
