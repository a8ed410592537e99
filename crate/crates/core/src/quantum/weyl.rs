//! Weyl quantization on the grid.
//!
//! For `u = sum_k c_k e^{i xi_k x}` the Weyl operator of `a_h(x, xi) = a(x, h xi)`
//! has plane-wave matrix elements
//! `<e_l, a_h^w e_k> = (1/2L) int e^{-i(xi_l - xi_k) m} a(m, h (xi_l + xi_k)/2) dm`,
//! so each frequency midpoint needs one FFT of the symbol in the midpoint
//! variable `m = (x + y)/2`, restricted to the support box.

use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::fourier::{apply_fourier_multiplier, from_coeffs, multiplier_from_hj, to_coeffs};
use super::WaveState;
use crate::error::{Error, Result};
use crate::hj::HJSolution;

/// Closed box `[x.0, x.1] x [xi.0, xi.1]` outside which a symbol vanishes.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportBox {
    pub x: (f64, f64),
    pub xi: (f64, f64),
}

/// Real, compactly supported phase-space function `a(x, xi)`.
pub trait Symbol: Send + Sync {
    fn eval(&self, x: f64, xi: f64) -> f64;
    fn support(&self) -> SupportBox;
    /// `a(xs[i], xi)` into `out[i]`.
    fn eval_row(&self, xi: f64, xs: &[f64], out: &mut [f64]) {
        for (o, &x) in out.iter_mut().zip(xs) {
            *o = self.eval(x, xi);
        }
    }
}

type SymbolFn = dyn Fn(f64, f64) -> f64 + Send + Sync;

/// A closure with a declared support box.
#[derive(Clone)]
pub struct BoxSymbol {
    f: Arc<SymbolFn>,
    support: SupportBox,
}

impl BoxSymbol {
    pub fn new(support: SupportBox, f: impl Fn(f64, f64) -> f64 + Send + Sync + 'static) -> Self {
        Self {
            f: Arc::new(f),
            support,
        }
    }
}

impl std::fmt::Debug for BoxSymbol {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("BoxSymbol")
            .field("support", &self.support)
            .finish()
    }
}

impl Symbol for BoxSymbol {
    fn eval(&self, x: f64, xi: f64) -> f64 {
        let s = &self.support;
        if x < s.x.0 || x > s.x.1 || xi < s.xi.0 || xi > s.xi.1 {
            0.0
        } else {
            (self.f)(x, xi)
        }
    }
    fn support(&self) -> SupportBox {
        self.support
    }
}

// p values handled per parallel task; fixed so sums do not depend on the
// thread count
const CHUNK: usize = 16;

/// `a_h^w u` with `a_h(x, xi) = a(x, h xi)`.
pub fn apply_weyl(a: &dyn Symbol, h: f64, u: &WaveState) -> Result<WaveState> {
    let mut out = apply_weyl_batch(a, h, std::slice::from_ref(u))?;
    Ok(out.pop().expect("one state in, one out"))
}

/// [`apply_weyl`] on several states that share a grid; the symbol is sampled
/// once.
pub fn apply_weyl_batch(a: &dyn Symbol, h: f64, states: &[WaveState]) -> Result<Vec<WaveState>> {
    let Some(u) = states.first() else {
        return Ok(Vec::new());
    };
    if states.iter().any(|v| v.grid != u.grid) {
        return Err(Error::Domain("states on different grids".into()));
    }
    if !(h > 0.0 && h <= 1.0) {
        return Err(Error::Domain(format!("scale h = {h} outside (0, 1]")));
    }
    let g = u.grid;
    let sb = a.support();
    if !(sb.x.0 <= sb.x.1 && sb.xi.0 <= sb.xi.1) {
        return Err(Error::Domain(format!("empty support box {sb:?}")));
    }
    if sb.x.0 < -g.l || sb.x.1 > g.l {
        return Err(Error::Range(format!(
            "window x-support [{}, {}] leaves the grid [-{}, {})",
            sb.x.0, sb.x.1, g.l, g.l
        )));
    }
    let kmax = sb.xi.0.abs().max(sb.xi.1.abs()) / h;
    if kmax > g.nyquist() {
        return Err(Error::Range(format!(
            "window frequency {kmax} exceeds the grid limit {}",
            g.nyquist()
        )));
    }
    let n = g.n;
    let half = n as i64 / 2;
    let dk = g.dk();
    let zero = Complex64::new(0.0, 0.0);
    let p_lo = ((2.0 * sb.xi.0 / (h * dk)).ceil() as i64).max(-(n as i64));
    let p_hi = ((2.0 * sb.xi.1 / (h * dk)).floor() as i64).min(n as i64 - 2);
    let j_lo = ((sb.x.0 + g.l) / g.dx()).ceil().max(0.0) as usize;
    let j_hi = (((sb.x.1 + g.l) / g.dx()).floor() as usize).min(n - 1);
    if p_lo > p_hi || j_lo > j_hi {
        return Ok(states
            .iter()
            .map(|v| v.with_samples(vec![zero; n]))
            .collect());
    }
    let coeffs: Vec<Vec<Complex64>> = states.iter().map(to_coeffs).collect();
    let xs: Vec<f64> = (j_lo..=j_hi).map(|j| g.x(j)).collect();
    let ps: Vec<i64> = (p_lo..=p_hi).collect();
    let fft = FftPlanner::new().plan_fft_forward(n);
    let inv_n = 1.0 / n as f64;
    let partials: Vec<Vec<Vec<Complex64>>> = ps
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<Vec<Vec<Complex64>>> {
            let mut out = vec![vec![zero; n]; states.len()];
            let mut row = vec![0.0; xs.len()];
            let mut buf = vec![zero; n];
            for &p in chunk {
                let eta = 0.5 * p as f64 * dk;
                a.eval_row(h * eta, &xs, &mut row);
                if row.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Domain(format!(
                        "symbol not finite at frequency {}",
                        h * eta
                    )));
                }
                if row.iter().all(|v| *v == 0.0) {
                    continue;
                }
                buf.iter_mut().for_each(|z| *z = zero);
                for (i, v) in row.iter().enumerate() {
                    buf[j_lo + i] = Complex64::new(*v, 0.0);
                }
                fft.process(&mut buf);
                // l + k = p, s = l - k = 2l - p with |s| < N/2 and both in range
                let l_min = (p - half + 1).max(-half).max(div_ceil(p - half + 1, 2));
                let l_max = (p + half).min(half - 1).min((p + half - 1).div_euclid(2));
                for l in l_min..=l_max {
                    let k = p - l;
                    let s = l - k;
                    let mut m = buf[s.rem_euclid(n as i64) as usize] * inv_n;
                    if s % 2 != 0 {
                        m = -m;
                    }
                    let (li, ki) = ((l + half) as usize, (k + half) as usize);
                    for (o, c) in out.iter_mut().zip(&coeffs) {
                        o[li] += m * c[ki];
                    }
                }
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut total = vec![vec![zero; n]; states.len()];
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            for (a, z) in t.iter_mut().zip(p) {
                *a += z;
            }
        }
    }
    Ok(states
        .iter()
        .zip(&total)
        .map(|(v, c)| from_coeffs(v, c))
        .collect())
}

fn div_ceil(a: i64, b: i64) -> i64 {
    -((-a).div_euclid(b))
}

/// `b(x, xi) = a(x + dW(t, xi/h)/dxi, xi)`, the principal symbol of
/// `e^{iW(t,D)} a_h^w e^{-iW(t,D)}` written at scale `h`.
struct ConjugatedSymbol<'a> {
    a: &'a dyn Symbol,
    hj: &'a HJSolution,
    t: f64,
    h: f64,
    support: SupportBox,
}

impl<'a> ConjugatedSymbol<'a> {
    fn new(a: &'a dyn Symbol, hj: &'a HJSolution, t: f64, h: f64) -> Result<Self> {
        let sa = a.support();
        let samples = 256;
        let mut shifts = Vec::with_capacity(samples + 1);
        for i in 0..=samples {
            let xi = sa.xi.0 + (sa.xi.1 - sa.xi.0) * i as f64 / samples as f64;
            shifts.push(hj.grad_xi(t, &[xi / h])?[0]);
        }
        let lo = shifts.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = shifts.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let jump = shifts
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max);
        Ok(Self {
            a,
            hj,
            t,
            h,
            support: SupportBox {
                x: (sa.x.0 - hi - jump, sa.x.1 - lo + jump),
                xi: sa.xi,
            },
        })
    }
}

impl Symbol for ConjugatedSymbol<'_> {
    fn eval(&self, x: f64, xi: f64) -> f64 {
        match self.hj.grad_xi(self.t, &[xi / self.h]) {
            Ok(g) => self.a.eval(x + g[0], xi),
            Err(_) => f64::NAN,
        }
    }
    fn support(&self) -> SupportBox {
        self.support
    }
    fn eval_row(&self, xi: f64, xs: &[f64], out: &mut [f64]) {
        match self.hj.grad_xi(self.t, &[xi / self.h]) {
            Ok(g) => {
                for (o, &x) in out.iter_mut().zip(xs) {
                    *o = self.a.eval(x + g[0], xi);
                }
            }
            Err(_) => out.iter_mut().for_each(|o| *o = f64::NAN),
        }
    }
}

/// `max_psi |(e^{iW} a_h^w e^{-iW} - b_h^w) psi| / |psi|` with `b` the
/// conjugated principal symbol.
pub fn conjugation_check(
    hj: &HJSolution,
    t: f64,
    a: &dyn Symbol,
    h: f64,
    states: &[WaveState],
) -> Result<f64> {
    let Some(first) = states.first() else {
        return Err(Error::Domain("no test states".into()));
    };
    let phase = multiplier_from_hj(hj, &first.grid, t)?;
    let minus: Vec<f64> = phase.iter().map(|p| -p).collect();
    let b = ConjugatedSymbol::new(a, hj, t, h)?;
    let mut worst: f64 = 0.0;
    for psi in states {
        if psi.grid != first.grid {
            return Err(Error::Domain("test states on different grids".into()));
        }
        let q = apply_fourier_multiplier(psi, &minus)?;
        let q = apply_weyl(a, h, &q)?;
        let q = apply_fourier_multiplier(&q, &phase)?;
        let r = apply_weyl(&b, h, psi)?;
        worst = worst.max(q.sub(&r).norm() / psi.norm());
    }
    Ok(worst)
}
