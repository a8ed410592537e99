use num_complex::Complex64;
use proptest::prelude::*;

use microprop::catalog::{check_decay_lipschitz, eval_kinetic, BoundedGradientField};
use microprop::catalog::{PotentialKind, SpecDescriptor};
use microprop::flow::integrate_flow;
use microprop::hj::{HJConfig, HJSolution};
use microprop::quantum::{apply_fourier_multiplier, GridSpec, WaveState};
use microprop::{FlowKind, FlowOptions, HamiltonianSpec, PhasePoint};

fn lr2v() -> HamiltonianSpec {
    SpecDescriptor::long_range(2, 0.5, 0.8)
        .with_potential(PotentialKind::Bounded, 0.3)
        .build()
        .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn kinetic_is_positive_and_quadratic(
        x in prop::array::uniform2(-20.0f64..20.0),
        xi in prop::array::uniform2(-3.0f64..3.0),
        lambda in 0.1f64..10.0,
    ) {
        prop_assume!(xi[0].abs() + xi[1].abs() > 1e-3);
        let spec = HamiltonianSpec::long_range(2, 0.5, 0.8);
        let k = eval_kinetic(&spec, &x, &xi).unwrap();
        let scaled: Vec<f64> = xi.iter().map(|v| lambda * v).collect();
        let k2 = eval_kinetic(&spec, &x, &scaled).unwrap();
        prop_assert!(k > 0.0);
        prop_assert!((k2 - lambda * lambda * k).abs() <= 1e-12 * k2.max(1.0));
    }

    #[test]
    fn energy_is_conserved(
        x in prop::array::uniform2(-5.0f64..5.0),
        xi in prop::array::uniform2(-2.0f64..2.0),
        t in -20.0f64..20.0,
    ) {
        let spec = lr2v();
        let start = PhasePoint::new(x.to_vec(), xi.to_vec());
        let tr = integrate_flow(&spec, FlowKind::Full, &start, (0.0, t), &FlowOptions::default().sparse())
            .unwrap();
        prop_assert!(tr.energy_drift <= 1e-8, "{}", tr.energy_drift);
    }

    #[test]
    fn fourier_multipliers_are_unitary(seed in any::<u64>(), x0 in -5.0f64..5.0, k0 in -8.0f64..8.0) {
        let g = GridSpec::new(256, 20.0).unwrap();
        let u = WaveState::gaussian(g, x0, k0, 1.0).unwrap();
        // deterministic but irregular phase
        let phase: Vec<f64> = (0..g.n)
            .map(|j| ((seed ^ (j as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15)) % 10_007) as f64 * 1e-2)
            .collect();
        let v = apply_fourier_multiplier(&u, &phase).unwrap();
        prop_assert!((v.norm() - u.norm()).abs() <= 1e-12);
        // undoing the phase restores the state
        let back = apply_fourier_multiplier(&v, &phase.iter().map(|p| -p).collect::<Vec<_>>()).unwrap();
        let err = back.sub(&u).norm();
        prop_assert!(err <= 1e-12, "{err:e}");
        prop_assert!(back.samples.iter().all(|z: &Complex64| z.is_finite()));
    }

    #[test]
    fn lipschitz_ratio_is_bounded(
        a in prop::array::uniform2(-100.0f64..100.0),
        b in prop::array::uniform2(-100.0f64..100.0),
    ) {
        let pairs = vec![(a.to_vec(), b.to_vec())];
        for f in [BoundedGradientField::bracket(2, 1.0, -0.8), BoundedGradientField::tilted(2, 0.8)] {
            let r = check_decay_lipschitz(&f, &pairs).unwrap();
            prop_assert!(r.max_ratio <= 1.0, "{}", r.max_ratio);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    /// Flat high branch: `W = t|xi|^2/2 - R|xi|`.
    #[test]
    fn flat_w_closed_form(t in -2.0f64..0.0, m in 21.0f64..200.0, sign in prop::bool::ANY) {
        let hj = HJSolution::with_params(&HamiltonianSpec::flat(1), 10.0, 2.0, &HJConfig::default()).unwrap();
        let xi = if sign { m } else { -m };
        let w = hj.w(t, &[xi]).unwrap();
        let exact = 0.5 * t * m * m - 10.0 * m;
        prop_assert!((w - exact).abs() <= 1e-9 * exact.abs().max(1.0), "{w} vs {exact}");
    }
}
