//! Both verdict branches of the nontrapping classifier, using a metric with a
//! stable closed geodesic that lives only in this test.

use std::sync::Arc;

use microprop::asymptotics::{classify_backward_nontrapping, NontrappingThresholds};
use microprop::catalog::{CoefficientField, MetricJet, ZeroPotential};
use microprop::{HamiltonianSpec, PhasePoint};

/// `a = n(r)^-2 I` with refractive index `n = 1 + A exp(-r^2)`.
#[derive(Debug)]
struct Lens {
    amp: f64,
}

impl CoefficientField for Lens {
    fn dim(&self) -> usize {
        2
    }
    fn decay(&self) -> f64 {
        1.0
    }
    fn ellipticity(&self) -> (f64, f64) {
        ((1.0 + self.amp).powi(-2), 1.0)
    }
    fn max_order(&self) -> usize {
        1
    }
    fn jet(&self, x: &[f64], order: usize) -> MetricJet {
        let r2 = x[0] * x[0] + x[1] * x[1];
        let g = self.amp * (-r2).exp();
        let n = 1.0 + g;
        let mut jet = MetricJet {
            n: 2,
            a: vec![n.powi(-2), 0.0, 0.0, n.powi(-2)],
            da: Vec::new(),
            d2a: Vec::new(),
            d3a: Vec::new(),
        };
        if order >= 1 {
            jet.da = vec![0.0; 8];
            for l in 0..2 {
                // d_l n^-2 = -2 n^-3 d_l n, d_l n = -2 x_l g
                let d = 4.0 * x[l] * g * n.powi(-3);
                jet.da[l] = d;
                jet.da[6 + l] = d;
            }
        }
        jet
    }
}

/// Circular rays sit where `(r n)' = 0`, i.e. `A e^-u (2u - 1) = 1` with
/// `u = r^2`. Rays obey `r n(r) >= |angular momentum|`, so the circle at the
/// local maximum of `r n` (the root below `u = 3/2`) is stable.
fn stable_circular_radius(amp: f64) -> f64 {
    let f = |u: f64| amp * (-u).exp() * (2.0 * u - 1.0) - 1.0;
    let (mut lo, mut hi) = (0.5, 1.5);
    assert!(f(lo) < 0.0 && f(hi) > 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (0.5 * (lo + hi)).sqrt()
}

fn lens_spec() -> HamiltonianSpec {
    HamiltonianSpec::new(
        "lens",
        Arc::new(Lens { amp: 4.0 }),
        Arc::new(ZeroPotential { n: 2 }),
    )
}

#[test]
fn closed_geodesic_is_trapped() {
    let r = stable_circular_radius(4.0);
    let spec = lens_spec();
    for (t_max, r0) in [(50.0, r), (200.0, r), (200.0, 1.02 * r)] {
        let v = classify_backward_nontrapping(
            &spec,
            &PhasePoint::new(vec![r0, 0.0], vec![0.0, 1.0]),
            t_max,
            &NontrappingThresholds::default(),
        )
        .unwrap();
        assert!(!v.is_backward_nontrapping, "{v:?}");
        assert!(!v.indeterminate);
        assert!(v.min_radius_reached > 0.9 * r, "{v:?} {r}");
    }
}

#[test]
fn radial_ray_through_the_lens_escapes() {
    let spec = lens_spec();
    let v = classify_backward_nontrapping(
        &spec,
        &PhasePoint::new(vec![0.5, 0.0], vec![1.0, 0.0]),
        100.0,
        &NontrappingThresholds::default(),
    )
    .unwrap();
    assert!(v.is_backward_nontrapping, "{v:?}");
    assert!(v.escape_constant.is_finite());
}
