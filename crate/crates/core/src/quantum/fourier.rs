use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;

use super::WaveState;
use crate::error::{Error, Result};
use crate::hj::HJSolution;

/// Plane-wave coefficients `c_k`, `u(x) = sum_k c_k e^{i xi_k x}`, indexed by
/// `k + N/2` for `k` in `[-N/2, N/2)`.
pub(crate) fn to_coeffs(u: &WaveState) -> Vec<Complex64> {
    let n = u.grid.n;
    let mut buf = u.samples.clone();
    FftPlanner::new().plan_fft_forward(n).process(&mut buf);
    // x_j = -L + j dx gives e^{-i xi_k x_j} = (-1)^k e^{-2 pi i j k / N}
    let half = n / 2;
    (0..n)
        .map(|i| {
            let k = i as i64 - half as i64;
            let z = buf[(k.rem_euclid(n as i64)) as usize] / n as f64;
            if k % 2 == 0 {
                z
            } else {
                -z
            }
        })
        .collect()
}

pub(crate) fn from_coeffs(like: &WaveState, c: &[Complex64]) -> WaveState {
    let n = like.grid.n;
    let half = n / 2;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (i, z) in c.iter().enumerate() {
        let k = i as i64 - half as i64;
        buf[(k.rem_euclid(n as i64)) as usize] = if k % 2 == 0 { *z } else { -*z };
    }
    FftPlanner::new().plan_fft_inverse(n).process(&mut buf);
    like.with_samples(buf)
}

/// `e^{i phi(D)} u`.
pub fn apply_fourier_multiplier(u: &WaveState, phase: &[f64]) -> Result<WaveState> {
    let n = u.grid.n;
    if phase.len() != n {
        return Err(Error::Domain(format!(
            "phase has {} values for {n} modes",
            phase.len()
        )));
    }
    if let Some(i) = phase.iter().position(|p| !p.is_finite()) {
        return Err(Error::Domain(format!(
            "non-finite phase at frequency {}",
            u.grid.freq(i as i64 - n as i64 / 2)
        )));
    }
    let mut c = to_coeffs(u);
    for (z, p) in c.iter_mut().zip(phase) {
        *z *= Complex64::from_polar(1.0, *p);
    }
    Ok(from_coeffs(u, &c))
}

/// `W(t, xi_k)` on the dual lattice of `grid`, in coefficient order.
pub fn multiplier_from_hj(hj: &HJSolution, grid: &super::GridSpec, t: f64) -> Result<Vec<f64>> {
    let half = grid.n as i64 / 2;
    (0..grid.n as i64)
        .into_par_iter()
        .map(|i| hj.w(t, &[grid.freq(i - half)]))
        .collect()
}
