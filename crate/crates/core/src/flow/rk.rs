//! Dormand-Prince 5(4) with adaptive steps, exact landing on requested
//! stop times and cubic Hermite dense output.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

/// Accepted nodes of an integration. `dy` holds the right-hand side at each
/// node, which is all cubic Hermite interpolation needs.
#[derive(Debug, Clone, Default)]
pub struct Solution {
    pub t: Vec<f64>,
    pub y: Vec<Vec<f64>>,
    pub dy: Vec<Vec<f64>>,
    pub accepted: usize,
    pub rejected: usize,
}

impl Solution {
    pub fn last(&self) -> (&f64, &Vec<f64>) {
        (self.t.last().unwrap(), self.y.last().unwrap())
    }

    /// Cubic Hermite interpolation between the bracketing nodes.
    pub fn interpolate(&self, t: f64) -> Option<Vec<f64>> {
        let n = self.t.len();
        if n == 0 {
            return None;
        }
        let t0 = self.t[0];
        let t1 = self.t[n - 1];
        let (lo, hi) = if t0 <= t1 { (t0, t1) } else { (t1, t0) };
        if t < lo || t > hi {
            return None;
        }
        if n == 1 {
            return Some(self.y[0].clone());
        }
        let forward = t1 >= t0;
        // first node index i with t between t[i] and t[i+1]
        let i = if forward {
            self.t.partition_point(|&s| s <= t).saturating_sub(1)
        } else {
            self.t.partition_point(|&s| s >= t).saturating_sub(1)
        }
        .min(n - 2);
        let (ta, tb) = (self.t[i], self.t[i + 1]);
        let h = tb - ta;
        if h == 0.0 {
            return Some(self.y[i].clone());
        }
        let s = (t - ta) / h;
        let h00 = (1.0 + 2.0 * s) * (1.0 - s) * (1.0 - s);
        let h10 = s * (1.0 - s) * (1.0 - s);
        let h01 = s * s * (3.0 - 2.0 * s);
        let h11 = s * s * (s - 1.0);
        let (ya, yb, fa, fb) = (&self.y[i], &self.y[i + 1], &self.dy[i], &self.dy[i + 1]);
        Some(
            (0..ya.len())
                .map(|k| h00 * ya[k] + h10 * h * fa[k] + h01 * yb[k] + h11 * h * fb[k])
                .collect(),
        )
    }
}

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
// fifth-order weights minus embedded fourth-order weights
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

fn err_norm(y: &[f64], ynew: &[f64], err: &[f64], ctl: &StepControl) -> f64 {
    let m = y.len() as f64;
    let s: f64 = y
        .iter()
        .zip(ynew)
        .zip(err)
        .map(|((a, b), e)| {
            let sc = ctl.atol + ctl.rtol * a.abs().max(b.abs());
            (e / sc) * (e / sc)
        })
        .sum();
    (s / m).sqrt()
}

fn initial_step<F>(
    f: &F,
    t0: f64,
    y0: &[f64],
    f0: &[f64],
    dir: f64,
    span: f64,
    ctl: &StepControl,
) -> f64
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let sc: Vec<f64> = y0.iter().map(|v| ctl.atol + ctl.rtol * v.abs()).collect();
    let rms = |v: &[f64]| {
        (v.iter()
            .zip(&sc)
            .map(|(a, s)| (a / s) * (a / s))
            .sum::<f64>()
            / v.len() as f64)
            .sqrt()
    };
    let d0 = rms(y0);
    let d1 = rms(f0);
    // the probe stays inside the integration interval
    let h0 = if d0 < 1e-5 || d1 < 1e-5 {
        1e-6
    } else {
        0.01 * d0 / d1
    }
    .min(span);
    let y1: Vec<f64> = y0.iter().zip(f0).map(|(y, d)| y + dir * h0 * d).collect();
    let mut f1 = vec![0.0; y0.len()];
    f(t0 + dir * h0, &y1, &mut f1);
    let diff: Vec<f64> = f1.iter().zip(f0).map(|(a, b)| a - b).collect();
    let d2 = rms(&diff) / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1)
}

/// Integrates `y' = f(t, y)` from `t0` to `t1` (either direction).
///
/// Every time in `stops` lying strictly between `t0` and `t1` becomes an
/// accepted node. With `record_all` every accepted step is kept, otherwise
/// only `t0`, the stops and `t1`.
pub fn integrate<F>(
    f: F,
    t0: f64,
    y0: &[f64],
    t1: f64,
    stops: &[f64],
    record_all: bool,
    ctl: &StepControl,
) -> Result<Solution>
where
    F: Fn(f64, &[f64], &mut [f64]),
{
    let m = y0.len();
    let mut f0 = vec![0.0; m];
    f(t0, y0, &mut f0);
    let mut sol = Solution {
        t: vec![t0],
        y: vec![y0.to_vec()],
        dy: vec![f0.clone()],
        ..Default::default()
    };
    if t1 == t0 {
        return Ok(sol);
    }
    let dir = if t1 > t0 { 1.0 } else { -1.0 };
    let mut targets: Vec<f64> = stops
        .iter()
        .copied()
        .filter(|&s| (s - t0) * dir > 0.0 && (t1 - s) * dir > 0.0)
        .collect();
    targets.sort_by(|a, b| (dir * a).partial_cmp(&(dir * b)).unwrap());
    targets.dedup();
    targets.push(t1);

    let mut t = t0;
    let mut y = y0.to_vec();
    let mut fy = f0;
    let mut h = initial_step(&f, t0, y0, &fy, dir, (t1 - t0).abs(), ctl).min((t1 - t0).abs());
    let mut k: Vec<Vec<f64>> = vec![vec![0.0; m]; 7];
    let mut ytmp = vec![0.0; m];
    let mut ynew = vec![0.0; m];
    let mut err = vec![0.0; m];
    let mut target_idx = 0;
    let mut last_rejected = false;

    while target_idx < targets.len() {
        if sol.accepted + sol.rejected >= ctl.max_steps {
            return Err(Error::Integration {
                t,
                reason: format!("step budget {} exhausted", ctl.max_steps),
            });
        }
        let target = targets[target_idx];
        let remaining = (target - t).abs();
        let mut landing = false;
        let mut step = h;
        if step >= remaining * (1.0 - 1e-12) {
            step = remaining;
            landing = true;
        }
        let hmin = 1e-14 * t.abs().max(1.0);
        if step < hmin && !landing {
            return Err(Error::Integration {
                t,
                reason: format!("step size underflow (h = {step:.3e})"),
            });
        }
        let hs = dir * step;
        k[0].copy_from_slice(&fy);
        for s in 1..7 {
            for i in 0..m {
                let mut acc = 0.0;
                for (j, kj) in k.iter().enumerate().take(s) {
                    acc += A[s][j] * kj[i];
                }
                ytmp[i] = y[i] + hs * acc;
            }
            f(t + C[s] * hs, &ytmp, &mut k[s]);
            if s == 6 {
                ynew.copy_from_slice(&ytmp);
            }
        }
        for i in 0..m {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += E[j] * kj[i];
            }
            err[i] = hs * acc;
        }
        let en = err_norm(&y, &ynew, &err, ctl);
        if !en.is_finite() {
            sol.rejected += 1;
            h = step * 0.2;
            last_rejected = true;
            if h < hmin {
                return Err(Error::Divergence { t });
            }
            continue;
        }
        if en <= 1.0 {
            let tnew = if landing { target } else { t + hs };
            if ynew.iter().any(|v| !v.is_finite()) {
                return Err(Error::Divergence { t: tnew });
            }
            t = tnew;
            std::mem::swap(&mut y, &mut ynew);
            fy.copy_from_slice(&k[6]);
            sol.accepted += 1;
            if landing {
                target_idx += 1;
            }
            if record_all || landing {
                sol.t.push(t);
                sol.y.push(y.clone());
                sol.dy.push(fy.clone());
            }
            let mut fac = if en == 0.0 { 10.0 } else { 0.9 * en.powf(-0.2) };
            fac = fac.clamp(0.2, 10.0);
            if last_rejected {
                fac = fac.min(1.0);
            }
            // a landing step may be artificially short; keep the unclipped size
            h = if landing {
                h.max(step * fac)
            } else {
                step * fac
            };
            last_rejected = false;
        } else {
            sol.rejected += 1;
            let fac = (0.9 * en.powf(-0.2)).clamp(0.2, 1.0);
            h = step * fac;
            last_rejected = true;
            if h < hmin {
                return Err(Error::Integration {
                    t,
                    reason: format!("step size underflow (h = {h:.3e})"),
                });
            }
        }
    }
    Ok(sol)
}
