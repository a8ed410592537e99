//! C ABI over `microprop`.
//!
//! Objects live behind opaque handles (`MpSpec`, `MpHj`, `MpWave`) that the
//! caller releases with the matching `*_free`. Every fallible call returns an
//! [`MpStatus`]; on failure the message is kept per thread and read with
//! [`mp_last_error_message`]. Arrays are caller-owned `double` buffers whose
//! length is passed explicitly. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use microprop::asymptotics::{compute_z_minus, default_z_ladder, ScatterOptions};
use microprop::catalog::{eval_kinetic, eval_total};
use microprop::flow::integrate_flow;
use microprop::hj::{HJConfig, HJSolution};
use microprop::quantum::{discretize_h, modified_evolution, propagate, GridSpec, PropagateOptions, WaveState};
use microprop::{Error, FlowKind, FlowOptions, HamiltonianSpec, PhasePoint, SpecDescriptor};

/// Result of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MpStatus {
    Ok = 0,
    NullPointer = 1,
    /// Malformed input: bad JSON, wrong lengths, violated preconditions.
    InvalidArgument = 2,
    /// Input outside the domain of the operation (e.g. a trapped start).
    Domain = 3,
    /// Query outside a validity window.
    Range = 4,
    Unsupported = 5,
    /// Integration, convergence or boundary failure.
    Numerical = 6,
    Io = 7,
    Panic = 8,
}

/// Hamiltonian built from a JSON descriptor.
pub struct MpSpec(HamiltonianSpec);

/// Hamilton-Jacobi solution `W(t, xi)` on `[t0, 0]`.
pub struct MpHj(HJSolution);

/// One-dimensional grid wavefunction.
pub struct MpWave(WaveState);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> MpStatus {
    match e {
        Error::Domain(_) => MpStatus::Domain,
        Error::Range(_) => MpStatus::Range,
        Error::UnsupportedOrder { .. } | Error::UnsupportedDimension(_) => MpStatus::Unsupported,
        Error::Precondition(_) | Error::Config(_) => MpStatus::InvalidArgument,
        Error::Io(_) => MpStatus::Io,
        Error::Integration { .. }
        | Error::Divergence { .. }
        | Error::Convergence { .. }
        | Error::BoundaryMass { .. } => MpStatus::Numerical,
    }
}

struct Fail(MpStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MpStatus::NullPointer, format!("{what} is null"))
}

fn invalid(msg: impl Into<String>) -> Fail {
    Fail(MpStatus::InvalidArgument, msg.into())
}

/// Runs `f`, records the failure and maps panics.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> MpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MpStatus::Ok,
        Ok(Err(Fail(s, m))) => {
            set_error(m);
            s
        }
        Err(p) => {
            let m = p
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| p.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(format!("internal panic: {m}"));
            MpStatus::Panic
        }
    }
}

unsafe fn deref<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn write<T>(p: *mut T, v: T, what: &str) -> Result<(), Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    p.write(v);
    Ok(())
}

fn check_dim(spec: &HamiltonianSpec, n: usize) -> Result<(), Fail> {
    if n != spec.dim() {
        return Err(invalid(format!("length {n} for a {}-dimensional spec", spec.dim())));
    }
    Ok(())
}

/// Library version, a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failure on this thread, or NULL. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn mp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn mp_clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

/// Builds a spec from a JSON descriptor such as
/// `{"family":"long_range","dim":1,"c":0.5,"mu":0.8}`.
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_spec_from_json(json: *const c_char, out: *mut *mut MpSpec) -> MpStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = CStr::from_ptr(json)
            .to_str()
            .map_err(|e| invalid(format!("descriptor is not UTF-8: {e}")))?;
        let desc: SpecDescriptor =
            serde_json::from_str(text).map_err(|e| invalid(format!("descriptor: {e}")))?;
        let spec = desc.build()?;
        write(out, Box::into_raw(Box::new(MpSpec(spec))), "out")
    })
}

/// # Safety
/// `spec` must come from `mp_spec_from_json` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mp_spec_free(spec: *mut MpSpec) {
    if !spec.is_null() {
        drop(Box::from_raw(spec));
    }
}

/// # Safety
/// `spec` must be a live handle or NULL (then 0 is returned).
#[no_mangle]
pub unsafe extern "C" fn mp_spec_dim(spec: *const MpSpec) -> usize {
    spec.as_ref().map_or(0, |s| s.0.dim())
}

/// `k(x, xi) = a(x)(xi, xi) / 2`.
///
/// # Safety
/// `x` and `xi` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mp_eval_kinetic(
    spec: *const MpSpec,
    x: *const f64,
    xi: *const f64,
    n: usize,
    out: *mut f64,
) -> MpStatus {
    guard(|| {
        let s = &deref(spec, "spec")?.0;
        check_dim(s, n)?;
        let v = eval_kinetic(s, slice(x, n, "x")?, slice(xi, n, "xi")?)?;
        write(out, v, "out")
    })
}

/// `k(x, xi) + V(x)`.
///
/// # Safety
/// As [`mp_eval_kinetic`].
#[no_mangle]
pub unsafe extern "C" fn mp_eval_total(
    spec: *const MpSpec,
    x: *const f64,
    xi: *const f64,
    n: usize,
    out: *mut f64,
) -> MpStatus {
    guard(|| {
        let s = &deref(spec, "spec")?.0;
        check_dim(s, n)?;
        let v = eval_total(s, slice(x, n, "x")?, slice(xi, n, "xi")?)?;
        write(out, v, "out")
    })
}

/// Endpoint of the full Hamilton flow from `(x, xi)` at time 0 to time `t`,
/// with the running action and the relative energy drift.
///
/// # Safety
/// `x`, `xi`, `x_out`, `xi_out` must hold `n` doubles; `action` and `drift`
/// may be NULL.
#[no_mangle]
pub unsafe extern "C" fn mp_flow(
    spec: *const MpSpec,
    x: *const f64,
    xi: *const f64,
    n: usize,
    t: f64,
    x_out: *mut f64,
    xi_out: *mut f64,
    action: *mut f64,
    drift: *mut f64,
) -> MpStatus {
    guard(|| {
        let s = &deref(spec, "spec")?.0;
        check_dim(s, n)?;
        let start = PhasePoint::new(slice(x, n, "x")?.to_vec(), slice(xi, n, "xi")?.to_vec());
        let tr = integrate_flow(s, FlowKind::Full, &start, (0.0, t), &FlowOptions::default().sparse())?;
        let end = tr.states.last().ok_or_else(|| invalid("empty trajectory"))?;
        slice_mut(x_out, n, "x_out")?.copy_from_slice(&end.x);
        slice_mut(xi_out, n, "xi_out")?.copy_from_slice(&end.xi);
        if !action.is_null() {
            *action = *tr.action.last().unwrap_or(&0.0);
        }
        if !drift.is_null() {
            *drift = tr.energy_drift;
        }
        Ok(())
    })
}

/// Hamilton-Jacobi solution on `[t0, 0]`. With `r > 0` the anchor radius and
/// gluing constant are taken as given; otherwise both are calibrated.
///
/// # Safety
/// `spec` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mp_hj_new(
    spec: *const MpSpec,
    r: f64,
    c4: f64,
    t0: f64,
    out: *mut *mut MpHj,
) -> MpStatus {
    guard(|| {
        let s = &deref(spec, "spec")?.0;
        if !(t0 < 0.0 && t0.is_finite()) {
            return Err(invalid(format!("t0 = {t0} must be negative")));
        }
        let cfg = HJConfig {
            t0,
            ..HJConfig::default()
        };
        let hj = if r > 0.0 {
            HJSolution::with_params(s, r, c4, &cfg)?
        } else {
            HJSolution::calibrate(s, &cfg)?
        };
        write(out, Box::into_raw(Box::new(MpHj(hj))), "out")
    })
}

/// # Safety
/// `hj` must come from `mp_hj_new` and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mp_hj_free(hj: *mut MpHj) {
    if !hj.is_null() {
        drop(Box::from_raw(hj));
    }
}

/// Anchor radius `R` and gluing constant `c4`.
///
/// # Safety
/// `hj` must be live; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn mp_hj_params(hj: *const MpHj, r: *mut f64, c4: *mut f64) -> MpStatus {
    guard(|| {
        let h = &deref(hj, "hj")?.0;
        write(r, h.r(), "r")?;
        write(c4, h.c4(), "c4")
    })
}

/// `W(t, xi)`, `d_xi W` (into `grad`, `n` doubles) and `d_t W`. `grad` and
/// `dt` may be NULL.
///
/// # Safety
/// `xi` must hold `n` doubles, `grad` too when given.
#[no_mangle]
pub unsafe extern "C" fn mp_hj_eval(
    hj: *const MpHj,
    t: f64,
    xi: *const f64,
    n: usize,
    w: *mut f64,
    grad: *mut f64,
    dt: *mut f64,
) -> MpStatus {
    guard(|| {
        let h = &deref(hj, "hj")?.0;
        check_dim(h.spec(), n)?;
        let e = h.eval(t, slice(xi, n, "xi")?)?;
        write(w, e.w, "w")?;
        if !grad.is_null() {
            slice_mut(grad, n, "grad")?.copy_from_slice(&e.grad_xi);
        }
        if !dt.is_null() {
            *dt = e.dt;
        }
        Ok(())
    })
}

/// Scattering data `(z_-, xi_-)` of a backward nontrapping start, from a
/// lambda ladder of `rungs` scales at time `t0`. `error` (may be NULL)
/// receives the extrapolation error estimate.
///
/// # Safety
/// `x`, `xi`, `z_out`, `xi_out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn mp_scatter(
    hj: *const MpHj,
    x: *const f64,
    xi: *const f64,
    n: usize,
    t0: f64,
    rungs: usize,
    z_out: *mut f64,
    xi_out: *mut f64,
    error: *mut f64,
) -> MpStatus {
    guard(|| {
        let h = &deref(hj, "hj")?.0;
        check_dim(h.spec(), n)?;
        if rungs < 2 {
            return Err(invalid("at least two rungs are needed"));
        }
        let start = PhasePoint::new(slice(x, n, "x")?.to_vec(), slice(xi, n, "xi")?.to_vec());
        if start.xi.iter().all(|v| *v == 0.0) {
            return Err(Error::Domain("xi = 0 is trapped".into()).into());
        }
        let ladder = default_z_ladder(h, &start, rungs);
        let opts = ScatterOptions {
            t0,
            flow: FlowOptions::with_tol(1e-12, 1e-12),
            ..ScatterOptions::default()
        };
        let d = compute_z_minus(h.spec(), h, &start, t0, &ladder, &opts)?;
        slice_mut(z_out, n, "z_out")?.copy_from_slice(d.z_minus.as_deref().unwrap_or(&d.xi_minus));
        slice_mut(xi_out, n, "xi_out")?.copy_from_slice(&d.xi_minus);
        if !error.is_null() {
            *error = d.extrapolation_error;
        }
        Ok(())
    })
}

/// Normalized Gaussian `exp(-(x - x0)^2 / 2s^2 + i k0 x)` on `n` points of
/// the periodic box `[-l, l)`; `n` must be a power of two.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mp_wave_gaussian(
    n: usize,
    l: f64,
    x0: f64,
    k0: f64,
    s: f64,
    out: *mut *mut MpWave,
) -> MpStatus {
    guard(|| {
        let u = WaveState::gaussian(GridSpec::new(n, l)?, x0, k0, s)?;
        write(out, Box::into_raw(Box::new(MpWave(u))), "out")
    })
}

/// # Safety
/// `wave` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn mp_wave_free(wave: *mut MpWave) {
    if !wave.is_null() {
        drop(Box::from_raw(wave));
    }
}

/// Number of grid points, or 0 for NULL.
///
/// # Safety
/// `wave` must be live or NULL.
#[no_mangle]
pub unsafe extern "C" fn mp_wave_len(wave: *const MpWave) -> usize {
    wave.as_ref().map_or(0, |w| w.0.samples.len())
}

/// Discrete L2 norm.
///
/// # Safety
/// `wave` must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mp_wave_norm(wave: *const MpWave, out: *mut f64) -> MpStatus {
    guard(|| write(out, deref(wave, "wave")?.0.norm(), "out"))
}

/// Copies the samples as interleaved `(re, im)` pairs; `len` must be twice
/// the grid size.
///
/// # Safety
/// `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn mp_wave_samples(wave: *const MpWave, out: *mut f64, len: usize) -> MpStatus {
    guard(|| {
        let w = &deref(wave, "wave")?.0;
        if len != 2 * w.samples.len() {
            return Err(invalid(format!("buffer of {len} for {} samples", w.samples.len())));
        }
        let buf = slice_mut(out, len, "out")?;
        for (pair, z) in buf.chunks_exact_mut(2).zip(&w.samples) {
            pair[0] = z.re;
            pair[1] = z.im;
        }
        Ok(())
    })
}

fn one_dim(spec: &HamiltonianSpec, u: &WaveState) -> Result<microprop::quantum::DiscreteH, Fail> {
    Ok(discretize_h(spec, &u.grid)?)
}

/// `e^{-itH} u` as a new handle.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mp_wave_propagate(
    spec: *const MpSpec,
    wave: *const MpWave,
    t: f64,
    out: *mut *mut MpWave,
) -> MpStatus {
    guard(|| {
        let s = &deref(spec, "spec")?.0;
        let u = &deref(wave, "wave")?.0;
        let v = propagate(&one_dim(s, u)?, u, t, &PropagateOptions::default())?;
        write(out, Box::into_raw(Box::new(MpWave(v))), "out")
    })
}

/// `Omega(t) u = e^{iW(t, D)} e^{-itH} u` for `t` in the HJ time range.
///
/// # Safety
/// Handles must be live; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn mp_wave_modified(
    hj: *const MpHj,
    wave: *const MpWave,
    t: f64,
    out: *mut *mut MpWave,
) -> MpStatus {
    guard(|| {
        let h = &deref(hj, "hj")?.0;
        let u = &deref(wave, "wave")?.0;
        let v = modified_evolution(h, &one_dim(h.spec(), u)?, u, t, &PropagateOptions::default())?;
        write(out, Box::into_raw(Box::new(MpWave(v))), "out")
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(json: &str) -> *mut MpSpec {
        let c = CString::new(json).unwrap();
        let mut s = ptr::null_mut();
        assert_eq!(unsafe { mp_spec_from_json(c.as_ptr(), &mut s) }, MpStatus::Ok);
        s
    }

    fn last_error() -> String {
        let p = mp_last_error_message();
        assert!(!p.is_null());
        unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
    }

    #[test]
    fn kinetic_at_origin() {
        let s = spec(r#"{"family":"long_range","dim":1,"c":0.5,"mu":0.8}"#);
        let mut k = 0.0;
        let st = unsafe { mp_eval_kinetic(s, [0.0].as_ptr(), [1.0].as_ptr(), 1, &mut k) };
        assert_eq!(st, MpStatus::Ok);
        assert!((k - 0.75).abs() < 1e-15);
        unsafe { mp_spec_free(s) };
    }

    #[test]
    fn errors_are_reported_per_thread() {
        let c = CString::new("{ not json").unwrap();
        let mut s = ptr::null_mut();
        assert_eq!(unsafe { mp_spec_from_json(c.as_ptr(), &mut s) }, MpStatus::InvalidArgument);
        assert!(s.is_null());
        assert!(last_error().contains("descriptor"));
        std::thread::spawn(|| assert!(mp_last_error_message().is_null()))
            .join()
            .unwrap();
        mp_clear_error();
        assert!(mp_last_error_message().is_null());
    }

    #[test]
    fn null_and_length_checks() {
        let mut k = 0.0;
        let st = unsafe { mp_eval_kinetic(ptr::null(), [0.0].as_ptr(), [1.0].as_ptr(), 1, &mut k) };
        assert_eq!(st, MpStatus::NullPointer);
        let s = spec(r#"{"family":"flat"}"#);
        let st = unsafe { mp_eval_kinetic(s, [0.0; 2].as_ptr(), [1.0; 2].as_ptr(), 2, &mut k) };
        assert_eq!(st, MpStatus::InvalidArgument);
        unsafe { mp_spec_free(s) };
    }

    #[test]
    fn flat_flow_is_free_motion() {
        let s = spec(r#"{"family":"flat"}"#);
        let (mut x, mut xi, mut drift) = ([0.0], [0.0], 1.0);
        let st = unsafe {
            mp_flow(s, [1.0].as_ptr(), [2.0].as_ptr(), 1, 3.0, x.as_mut_ptr(), xi.as_mut_ptr(), ptr::null_mut(), &mut drift)
        };
        assert_eq!(st, MpStatus::Ok);
        assert!((x[0] - 7.0).abs() < 1e-9 && (xi[0] - 2.0).abs() < 1e-12, "{x:?} {xi:?}");
        assert!(drift < 1e-10);
        unsafe { mp_spec_free(s) };
    }

    #[test]
    fn flat_hj_and_scattering_closed_forms() {
        let s = spec(r#"{"family":"flat"}"#);
        let mut hj = ptr::null_mut();
        assert_eq!(unsafe { mp_hj_new(s, 10.0, 2.0, -2.0, &mut hj) }, MpStatus::Ok);
        // W = -R|xi| + t|xi|^2/2 on the high branch
        let (mut w, mut g, mut dt) = (0.0, [0.0], 0.0);
        let st = unsafe { mp_hj_eval(hj, -1.0, [40.0].as_ptr(), 1, &mut w, g.as_mut_ptr(), &mut dt) };
        assert_eq!(st, MpStatus::Ok);
        assert!((w - (-400.0 - 800.0)).abs() < 1e-6, "{w}");
        assert!((g[0] - (-10.0 - 40.0)).abs() < 1e-6 && (dt - 800.0).abs() < 1e-6);
        // z_- = x + R xi/|xi|, xi_- = xi
        let (mut z, mut xm) = ([0.0], [0.0]);
        let st = unsafe {
            mp_scatter(hj, [1.5].as_ptr(), [1.0].as_ptr(), 1, -1.0, 4, z.as_mut_ptr(), xm.as_mut_ptr(), ptr::null_mut())
        };
        assert_eq!(st, MpStatus::Ok, "{}", last_error());
        assert!((z[0] - 11.5).abs() < 1e-8 && (xm[0] - 1.0).abs() < 1e-10, "{z:?} {xm:?}");
        // a start at rest is a domain verdict
        let st = unsafe {
            mp_scatter(hj, [1.5].as_ptr(), [0.0].as_ptr(), 1, -1.0, 4, z.as_mut_ptr(), xm.as_mut_ptr(), ptr::null_mut())
        };
        assert_eq!(st, MpStatus::Domain);
        unsafe {
            mp_hj_free(hj);
            mp_spec_free(s);
        }
    }

    #[test]
    fn waves_stay_normalized() {
        let s = spec(r#"{"family":"long_range","dim":1,"c":0.5,"mu":0.8}"#);
        let mut u = ptr::null_mut();
        assert_eq!(unsafe { mp_wave_gaussian(1024, 40.0, 0.0, 2.0, 1.0, &mut u) }, MpStatus::Ok);
        let mut v = ptr::null_mut();
        assert_eq!(unsafe { mp_wave_propagate(s, u, 0.7, &mut v) }, MpStatus::Ok);
        let mut nv = 0.0;
        assert_eq!(unsafe { mp_wave_norm(v, &mut nv) }, MpStatus::Ok);
        assert!((nv - 1.0).abs() < 1e-8);
        let len = unsafe { mp_wave_len(v) };
        let mut buf = vec![0.0; 2 * len];
        assert_eq!(unsafe { mp_wave_samples(v, buf.as_mut_ptr(), buf.len()) }, MpStatus::Ok);
        assert_eq!(unsafe { mp_wave_samples(v, buf.as_mut_ptr(), 3) }, MpStatus::InvalidArgument);
        let sum: f64 = buf.iter().map(|v| v * v).sum::<f64>() * 80.0 / len as f64;
        assert!((sum - 1.0).abs() < 1e-8);
        // the quantum layer is one-dimensional
        let s2 = spec(r#"{"family":"flat","dim":2}"#);
        let mut w = ptr::null_mut();
        assert_eq!(unsafe { mp_wave_propagate(s2, u, 0.1, &mut w) }, MpStatus::Unsupported);
        unsafe {
            mp_wave_free(u);
            mp_wave_free(v);
            mp_spec_free(s);
            mp_spec_free(s2);
        }
    }
}
