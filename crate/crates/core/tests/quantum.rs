use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use microprop::hj::{HJConfig, HJSolution};
use microprop::microlocal::{pushforward_window, WavefrontProbe};
use microprop::quantum::{
    apply_weyl, apply_weyl_batch, discretize_h, modified_evolution, propagate, GridSpec,
    PropagateOptions, WaveState,
};
use microprop::{FlowOptions, HamiltonianSpec};

fn lr() -> HamiltonianSpec {
    HamiltonianSpec::long_range(1, 0.5, 0.8)
}

/// `max |e^{itH} a_h^w e^{-itH} psi - (a_h o exp tH_p)^w psi| / |psi|` on
/// FLAT for packets that pass through the window at time `t`.
fn flat_egorov_defect(h: f64, t: f64) -> f64 {
    let grid = GridSpec::new(4096, 80.0).unwrap();
    let spec = HamiltonianSpec::flat(1);
    let hop = discretize_h(&spec, &grid).unwrap();
    let probe = WavefrontProbe::standard(0.0, 1.0).unwrap();
    let flow = FlowOptions::default();
    let b = pushforward_window(&spec, &probe, t, h, &flow).unwrap();
    let opts = PropagateOptions::default();
    let mut states = Vec::new();
    for k in [0.6, 1.0, 1.4] {
        for off in [-0.5, 0.0, 0.7] {
            let k = k / h;
            states.push(WaveState::gaussian(grid, off - t * k, k, 1.0).unwrap());
        }
    }
    let direct: Vec<WaveState> = states
        .iter()
        .map(|psi| {
            let w = propagate(&hop, psi, t, &opts).unwrap();
            let w = apply_weyl(&probe.window(), h, &w).unwrap();
            propagate(&hop, &w, -t, &opts).unwrap()
        })
        .collect();
    let mapped = b.apply_batch(&states).unwrap();
    let mut worst: f64 = 0.0;
    let mut seen: f64 = 0.0;
    for ((psi, d), m) in states.iter().zip(&direct).zip(&mapped) {
        worst = worst.max(d.sub(m).norm() / psi.norm());
        seen = seen.max(d.norm());
    }
    // the packets must actually meet the window
    assert!(seen > 0.1, "{seen}");
    worst
}

#[test]
fn flat_egorov_is_exact() {
    for h in [1.0 / 8.0, 1.0 / 16.0] {
        let d = flat_egorov_defect(h, 0.5);
        assert!(d <= 1e-6, "h {h}: {d:e}");
    }
}

#[test]
fn propagation_is_unitary_at_random_times() {
    let g = GridSpec::standard();
    let hop = discretize_h(&lr(), &g).unwrap();
    let u = WaveState::gaussian(g, 1.0, 3.0, 1.5).unwrap();
    let opts = PropagateOptions::default();
    let e0 = hop.energy(&u);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..5 {
        let t: f64 = rng.gen_range(-2.0..2.0);
        let v = propagate(&hop, &u, t, &opts).unwrap();
        assert!((v.norm() - 1.0).abs() <= 1e-8, "t {t}: {}", v.norm());
        assert!((hop.energy(&v) - e0).abs() <= 1e-8 * e0.max(1.0), "t {t}");
        // group property against a split evolution
        let s: f64 = rng.gen_range(0.0..1.0);
        let w = propagate(&hop, &propagate(&hop, &u, s * t, &opts).unwrap(), (1.0 - s) * t, &opts)
            .unwrap();
        assert!(v.sub(&w).norm() <= 1e-8, "t {t} s {s}: {:e}", v.sub(&w).norm());
    }
}

#[test]
fn modified_evolution_is_unitary() {
    let g = GridSpec::standard();
    let spec = lr();
    let hop = discretize_h(&spec, &g).unwrap();
    let hj = HJSolution::with_params(&spec, 1.0, 0.5, &HJConfig::default()).unwrap();
    let u = WaveState::gaussian(g, -1.0, 6.0, 1.0).unwrap();
    let opts = PropagateOptions::default();
    for t in [-1.0, -0.3] {
        let v = modified_evolution(&hj, &hop, &u, t, &opts).unwrap();
        assert!((v.norm() - 1.0).abs() <= 1e-8, "t {t}: {}", v.norm());
    }
}

#[test]
fn batch_quantization_matches_single_states() {
    let g = GridSpec::new(1024, 20.0).unwrap();
    let probe = WavefrontProbe::standard(0.5, 2.0).unwrap();
    let states: Vec<WaveState> = (0..3)
        .map(|i| WaveState::gaussian(g, 0.3 * i as f64, 16.0, 0.8).unwrap())
        .collect();
    let batch = apply_weyl_batch(&probe.window(), 0.125, &states).unwrap();
    for (s, b) in states.iter().zip(&batch) {
        let one = apply_weyl(&probe.window(), 0.125, s).unwrap();
        assert_eq!(one.samples, b.samples);
    }
}
