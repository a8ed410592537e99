//! Windows composed with phase-space maps: `a_h o exp(t H_p)` and the
//! transported `a_h o S_t^{-1}`.

use std::sync::Mutex;

use crate::catalog::HamiltonianSpec;
use crate::error::{Error, Result};
use crate::flow::{flow_endpoint, FlowKind, FlowOptions, PhasePoint};
use crate::hj::HJSolution;
use crate::quantum::{apply_weyl_batch, SupportBox, Symbol, WaveState};

use super::{WavefrontProbe, Window};

/// Coarse stride for row evaluation.
const COARSE: usize = 8;
/// Boundary samples per side of the window box when mapping its support.
const EDGE_SAMPLES: usize = 64;

type PointMap<'a> = Box<dyn Fn(f64, f64) -> Result<(f64, f64)> + Send + Sync + 'a>;

/// `a(Phi(x, xi / h))` with the image frequency rescaled by `h`, where
/// `Phi` acts in unscaled phase space.
pub struct MappedWindow<'a> {
    base: Window,
    h: f64,
    map: PointMap<'a>,
    support: SupportBox,
    error: Mutex<Option<Error>>,
}

impl std::fmt::Debug for MappedWindow<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MappedWindow")
            .field("base", &self.base)
            .field("h", &self.h)
            .field("support", &self.support)
            .finish()
    }
}

impl<'a> MappedWindow<'a> {
    /// `inverse` maps the window box onto the support of the composition.
    fn build(base: Window, h: f64, map: PointMap<'a>, inverse: PointMap<'a>) -> Result<Self> {
        if !(h > 0.0 && h <= 1.0) {
            return Err(Error::Domain(format!("scale h = {h} outside (0, 1]")));
        }
        let b = base.support();
        let mut pts = Vec::with_capacity(4 * EDGE_SAMPLES);
        for i in 0..EDGE_SAMPLES {
            let s = i as f64 / (EDGE_SAMPLES - 1) as f64;
            let x = b.x.0 + s * (b.x.1 - b.x.0);
            let xi = b.xi.0 + s * (b.xi.1 - b.xi.0);
            pts.extend([(x, b.xi.0), (x, b.xi.1), (b.x.0, xi), (b.x.1, xi)]);
        }
        let (mut x0, mut x1, mut k0, mut k1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for (x, xi) in pts {
            let (y, eta) = inverse(x, xi / h)?;
            let k = h * eta;
            x0 = x0.min(y);
            x1 = x1.max(y);
            k0 = k0.min(k);
            k1 = k1.max(k);
        }
        let mx = 0.05 * (x1 - x0) + 1e-9;
        let mk = 0.05 * (k1 - k0) + 1e-9;
        Ok(Self {
            base,
            h,
            map,
            support: SupportBox {
                x: (x0 - mx, x1 + mx),
                xi: (k0 - mk, k1 + mk),
            },
            error: Mutex::new(None),
        })
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn base(&self) -> &Window {
        &self.base
    }

    /// Mapped point in scaled coordinates, or NaN after recording the error.
    fn image(&self, x: f64, xi: f64) -> (f64, f64) {
        match (self.map)(x, xi / self.h) {
            Ok((y, eta)) => (y, self.h * eta),
            Err(e) => {
                let mut slot = self.error.lock().expect("error slot poisoned");
                slot.get_or_insert(e);
                (f64::NAN, f64::NAN)
            }
        }
    }

    fn near(&self, y: f64, k: f64) -> bool {
        let w = &self.base;
        (y - w.x0).abs() < 2.0 * w.rx && (k - w.xi0).abs() < 2.0 * w.rxi
    }

    /// `self(x, hD)` applied to each state.
    pub fn apply_batch(&self, states: &[WaveState]) -> Result<Vec<WaveState>> {
        *self.error.lock().expect("error slot poisoned") = None;
        let out = apply_weyl_batch(self, self.h, states);
        if let Some(e) = self.error.lock().expect("error slot poisoned").take() {
            return Err(e);
        }
        out
    }

    pub fn apply(&self, u: &WaveState) -> Result<WaveState> {
        let mut v = self.apply_batch(std::slice::from_ref(u))?;
        Ok(v.pop().expect("one state"))
    }
}

impl Symbol for MappedWindow<'_> {
    fn eval(&self, x: f64, xi: f64) -> f64 {
        let (y, k) = self.image(x, xi);
        self.base.eval(y, k)
    }

    fn support(&self) -> SupportBox {
        self.support
    }

    fn eval_row(&self, xi: f64, xs: &[f64], out: &mut [f64]) {
        let n = xs.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        if n == 0 {
            return;
        }
        let mut idx: Vec<usize> = (0..n).step_by(COARSE).collect();
        if *idx.last().expect("non-empty") != n - 1 {
            idx.push(n - 1);
        }
        let mut near = Vec::with_capacity(idx.len());
        for &i in &idx {
            let (y, k) = self.image(xs[i], xi);
            if !(y.is_finite() && k.is_finite()) {
                out.iter_mut().for_each(|v| *v = f64::NAN);
                return;
            }
            out[i] = self.base.eval(y, k);
            near.push(self.near(y, k));
        }
        for w in 0..idx.len().saturating_sub(1) {
            if !(near[w] || near[w + 1]) {
                continue;
            }
            for i in idx[w] + 1..idx[w + 1] {
                out[i] = self.eval(xs[i], xi);
            }
        }
    }
}

fn full_flow(
    spec: &HamiltonianSpec,
    flow: &FlowOptions,
    x: f64,
    xi: f64,
    t: f64,
) -> Result<(f64, f64)> {
    if t == 0.0 {
        return Ok((x, xi));
    }
    let e = flow_endpoint(
        spec,
        FlowKind::Full,
        &PhasePoint::new(vec![x], vec![xi]),
        t,
        flow,
        false,
    )?;
    Ok((e.point.x[0], e.point.xi[0]))
}

/// `a_h o exp(t H_p)`, supported in `exp(-t H_p)[supp a_h]`.
pub fn pushforward_window<'a>(
    spec: &'a HamiltonianSpec,
    probe: &WavefrontProbe,
    t: f64,
    h: f64,
    flow: &'a FlowOptions,
) -> Result<MappedWindow<'a>> {
    if spec.dim() != 1 {
        return Err(Error::UnsupportedDimension(spec.dim()));
    }
    probe.validate()?;
    MappedWindow::build(
        probe.window(),
        h,
        Box::new(move |x, xi| full_flow(spec, flow, x, xi, t)),
        Box::new(move |x, xi| full_flow(spec, flow, x, xi, -t)),
    )
}

/// `a_h o S_t^{-1}` with `S_t = T_t o exp(t H_p)` and
/// `T_t(y, eta) = (y - d_xi W(t, eta), eta)`.
pub fn transport_window<'a>(
    hj: &'a HJSolution,
    probe: &WavefrontProbe,
    t: f64,
    h: f64,
    flow: &'a FlowOptions,
) -> Result<MappedWindow<'a>> {
    let spec = hj.spec();
    if spec.dim() != 1 {
        return Err(Error::UnsupportedDimension(spec.dim()));
    }
    let (lo, hi) = hj.t_range();
    if !(t >= lo && t <= hi) {
        return Err(Error::Range(format!(
            "t = {t} outside the HJ time range [{lo}, {hi}]"
        )));
    }
    probe.validate()?;
    MappedWindow::build(
        probe.window(),
        h,
        Box::new(move |z, xi| {
            let g = hj.grad_xi(t, &[xi])?[0];
            full_flow(spec, flow, z + g, xi, -t)
        }),
        Box::new(move |y, xi| {
            let (y1, eta) = full_flow(spec, flow, y, xi, t)?;
            let g = hj.grad_xi(t, &[eta])?[0];
            Ok((y1 - g, eta))
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hj::HJConfig;
    use crate::quantum::{apply_weyl, GridSpec};

    fn ladder_probe(x0: f64, xi0: f64) -> WavefrontProbe {
        WavefrontProbe::standard(x0, xi0).unwrap()
    }

    #[test]
    fn zero_time_is_the_window_itself() {
        let flow = FlowOptions::default();
        let spec = HamiltonianSpec::long_range(1, 0.5, 0.8);
        let p = ladder_probe(1.0, 1.0);
        let b = pushforward_window(&spec, &p, 0.0, 0.125, &flow).unwrap();
        let w = p.window();
        for (x, xi) in [(1.0, 1.0), (0.5, 0.8), (1.7, 1.3), (3.0, 1.0)] {
            assert_eq!(b.eval(x, xi), w.eval(x, xi));
        }
        let s = Symbol::support(&b);
        assert!(s.x.0 <= 0.0 && s.x.1 >= 2.0 && s.xi.0 <= 0.5 && s.xi.1 >= 1.5);
    }

    #[test]
    fn flat_pushforward_is_a_shear() {
        let flow = FlowOptions::default();
        let spec = HamiltonianSpec::flat(1);
        let p = ladder_probe(2.0, 1.0);
        let (t, h) = (0.3, 0.0625);
        let b = pushforward_window(&spec, &p, t, h, &flow).unwrap();
        let w = p.window();
        for (x, xi) in [(-2.5, 1.0), (-3.0, 1.2), (-2.0, 0.7), (0.0, 1.0)] {
            // exp(tH_p)(x, xi/h) = (x + t xi / h, xi / h)
            let expect = w.eval(x + t * xi / h, xi);
            assert!((b.eval(x, xi) - expect).abs() < 1e-9);
        }
        let s = Symbol::support(&b);
        assert!((s.x.0 - (1.0 - t * 1.5 / h)).abs() < 0.6);
        assert!((s.x.1 - (3.0 - t * 0.5 / h)).abs() < 0.6);
    }

    #[test]
    fn long_range_support_is_the_boundary_image() {
        let flow = FlowOptions::default();
        // every grid point where the composition is nonzero lies in the
        // mapped support box, and the box is not much larger than needed
        let spec = HamiltonianSpec::long_range(1, 0.5, 0.8);
        let p = ladder_probe(0.0, 1.0);
        let (t, h) = (0.2, 0.125);
        let b = pushforward_window(&spec, &p, t, h, &flow).unwrap();
        let s = Symbol::support(&b);
        let (mut x0, mut x1) = (f64::MAX, f64::MIN);
        for i in 0..200 {
            let xi = 0.4 + 1.2 * i as f64 / 199.0;
            for j in 0..400 {
                let x = -6.0 + 7.0 * j as f64 / 399.0;
                if b.eval(x, xi) > 0.0 {
                    assert!(x >= s.x.0 && x <= s.x.1 && xi >= s.xi.0 && xi <= s.xi.1);
                    x0 = x0.min(x);
                    x1 = x1.max(x);
                }
            }
        }
        let width = s.x.1 - s.x.0;
        assert!(x0 - s.x.0 < 0.1 * width && s.x.1 - x1 < 0.1 * width);
    }

    #[test]
    fn coarse_rows_match_pointwise_evaluation() {
        let flow = FlowOptions::default();
        let spec = HamiltonianSpec::long_range(1, 0.5, 0.8);
        let p = ladder_probe(0.0, 1.0);
        let b = pushforward_window(&spec, &p, 0.2, 0.0625, &flow).unwrap();
        let s = Symbol::support(&b);
        let xs: Vec<f64> = (0..700).map(|j| s.x.0 + j as f64 * 0.02).collect();
        let mut row = vec![0.0; xs.len()];
        for xi in [0.6, 1.0, 1.4] {
            b.eval_row(xi, &xs, &mut row);
            for (x, v) in xs.iter().zip(&row) {
                assert_eq!(*v, b.eval(*x, xi));
            }
        }
    }

    #[test]
    fn flat_transport_window_shifts_by_r() {
        let flow = FlowOptions::default();
        let spec = HamiltonianSpec::flat(1);
        let hj = HJSolution::with_params(&spec, 1.0, 0.5, &HJConfig::default()).unwrap();
        let p = ladder_probe(3.0, 1.0);
        let g = transport_window(&hj, &p, -1.0, 0.125, &flow).unwrap();
        // S_t^{-1}(z, xi) = (z - R sgn xi, xi) on the flat spec
        let w = p.window();
        for (z, xi) in [(4.0, 1.0), (4.3, 0.7), (3.5, 1.2)] {
            assert!((g.eval(z, xi) - w.eval(z - 1.0, xi)).abs() < 1e-9);
        }
        let grid = GridSpec::new(1024, 20.0).unwrap();
        let u = WaveState::gaussian(grid, 4.0, 8.0, 0.5).unwrap();
        let shifted = Window { x0: 4.0, ..w };
        let a = g.apply(&u).unwrap();
        let b = apply_weyl(&shifted, 0.125, &u).unwrap();
        assert!(a.sub(&b).norm() < 1e-8);
    }

    #[test]
    fn flow_errors_surface() {
        let flow = FlowOptions::default();
        let spec = HamiltonianSpec::flat(1);
        let hj = HJSolution::with_params(&spec, 1.0, 0.5, &HJConfig::default()).unwrap();
        let p = ladder_probe(3.0, 1.0);
        assert!(matches!(
            transport_window(&hj, &p, -5.0, 0.125, &flow),
            Err(Error::Range(_))
        ));
    }
}
