//! C ABI over the `userdp` estimators.
//!
//! Conventions:
//! - Every fallible function returns a [`UdpStatus`]. On failure the message
//!   is kept per thread and read with [`udp_last_error`].
//! - Handles ([`UdpRng`], [`UdpDataset`], [`UdpRotation`]) are opaque. They
//!   are created by `*_new` and released by the matching `*_free`.
//! - Arrays are caller-owned, row-major `double` buffers.
//! - Estimates write their coordinates only when the outcome is
//!   [`UdpOutcome::Accepted`].

use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use userdp::accounting::strong_compose;
use userdp::amplify::{run_dp_estimate_2, AmplifyParams};
use userdp::blockwise::{run_interpolated, BlockwiseParams, Engine};
use userdp::geometry::{make_rotation, Point, PointSet, RotationPlan};
use userdp::mechanism::{run_dp_estimate_1, EstimateOutcome, MechanismParams};
use userdp::rng::{seeded, DpRng};
use userdp::userlevel::{run_user, UserDataset, UserLevelParams};
use userdp::DpError;

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UdpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidParameter = 2,
    DimensionMismatch = 3,
    BelowThreshold = 4,
    NonFinite = 5,
    Internal = 99,
}

/// Which estimate came back.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UdpOutcome {
    Accepted = 0,
    Garbage1 = 1,
    Garbage2 = 2,
}

/// Estimator applied to a point set.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UdpEngine {
    Single = 0,
    Amplified = 1,
    Blockwise = 2,
}

/// Seeded random stream.
pub struct UdpRng(DpRng);

/// `n` users with `m` samples of dimension `d`.
pub struct UdpDataset(UserDataset);

/// Randomized Hadamard rotation of a fixed dimension.
pub struct UdpRotation(RotationPlan);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &DpError) -> UdpStatus {
    match e {
        DpError::InvalidParameter(_) | DpError::EmptyInput(_) | DpError::GridCoverage(_) => UdpStatus::InvalidParameter,
        DpError::DimensionMismatch { .. } => UdpStatus::DimensionMismatch,
        DpError::BelowThreshold { .. } => UdpStatus::BelowThreshold,
        DpError::NonFinite(_) => UdpStatus::NonFinite,
        _ => UdpStatus::Internal,
    }
}

/// Runs `f`, recording any error or panic as the thread's last error.
fn guard(f: impl FnOnce() -> Result<(), (UdpStatus, String)>) -> UdpStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => UdpStatus::Ok,
        Ok(Err((status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside userdp".into());
            UdpStatus::Internal
        }
    }
}

fn lift(e: DpError) -> (UdpStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(name: &str) -> (UdpStatus, String) {
    (UdpStatus::NullPointer, format!("{name} is null"))
}

unsafe fn slice<'a>(p: *const f64, len: usize, name: &str) -> Result<&'a [f64], (UdpStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a>(p: *mut f64, len: usize, name: &str) -> Result<&'a mut [f64], (UdpStatus, String)> {
    if p.is_null() {
        return Err(null(name));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

fn checked_len(a: usize, b: usize) -> Result<usize, (UdpStatus, String)> {
    a.checked_mul(b).ok_or((UdpStatus::InvalidParameter, "buffer length overflows".into()))
}

fn write_outcome(outcome: &EstimateOutcome, out: &mut [f64], out_outcome: *mut UdpOutcome) {
    let code = match outcome {
        EstimateOutcome::Accepted(p) => {
            out.copy_from_slice(p.coords());
            UdpOutcome::Accepted
        }
        EstimateOutcome::Garbage1 => UdpOutcome::Garbage1,
        EstimateOutcome::Garbage2 => UdpOutcome::Garbage2,
    };
    // SAFETY: checked non-null by the callers.
    unsafe { *out_outcome = code };
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn udp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next call into the library on the same thread.
#[no_mangle]
pub extern "C" fn udp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn udp_rng_new(seed: u64) -> *mut UdpRng {
    Box::into_raw(Box::new(UdpRng(seeded(seed))))
}

/// # Safety
/// `rng` must come from [`udp_rng_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn udp_rng_free(rng: *mut UdpRng) {
    if !rng.is_null() {
        drop(Box::from_raw(rng));
    }
}

/// Copies `n·m·d` samples into a new dataset; null on failure.
///
/// # Safety
/// `data` must point to `n·m·d` readable doubles.
#[no_mangle]
pub unsafe extern "C" fn udp_dataset_new(n: usize, m: usize, d: usize, data: *const f64) -> *mut UdpDataset {
    let mut handle = ptr::null_mut();
    guard(|| {
        let len = checked_len(checked_len(n, m)?, d)?;
        let values = slice(data, len, "data")?.to_vec();
        let ds = UserDataset::new(n, m, d, values).map_err(lift)?;
        handle = Box::into_raw(Box::new(UdpDataset(ds)));
        Ok(())
    });
    handle
}

/// # Safety
/// `ds` must come from [`udp_dataset_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn udp_dataset_free(ds: *mut UdpDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Writes `n`, `m` and `d` through the non-null pointers.
///
/// # Safety
/// `ds` must be a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn udp_dataset_shape(ds: *const UdpDataset, n: *mut usize, m: *mut usize, d: *mut usize) -> UdpStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        for (p, v) in [(n, ds.0.n()), (m, ds.0.m()), (d, ds.0.d())] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// Item-level estimate of the center of `n` points in `d` dimensions.
///
/// `out` receives `d` coordinates when `*out_outcome` is `Accepted`.
///
/// # Safety
/// `points` must hold `n·d` doubles, `out` room for `d`, and both handles
/// must be live.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn udp_estimate_points(
    points: *const f64,
    n: usize,
    d: usize,
    r: f64,
    alpha: f64,
    eps: f64,
    delta: f64,
    engine: UdpEngine,
    rng: *mut UdpRng,
    out: *mut f64,
    out_outcome: *mut UdpOutcome,
) -> UdpStatus {
    guard(|| {
        let rng = rng.as_mut().ok_or_else(|| null("rng"))?;
        if out_outcome.is_null() {
            return Err(null("out_outcome"));
        }
        let out = slice_mut(out, d, "out")?;
        let data = slice(points, checked_len(n, d)?, "points")?.to_vec();
        let set = PointSet::from_flat(data, d).map_err(lift)?;
        let outcome = match engine {
            UdpEngine::Single => {
                let p = MechanismParams::new(eps, delta, alpha, r).map_err(lift)?;
                run_dp_estimate_1(&set, &p, &mut rng.0).map_err(lift)?.outcome
            }
            UdpEngine::Amplified => {
                let p = AmplifyParams::new(eps, delta, alpha, r).map_err(lift)?;
                run_dp_estimate_2(&set, &p, &mut rng.0).map_err(lift)?.outcome
            }
            UdpEngine::Blockwise => {
                let mut p = BlockwiseParams::new(eps, delta, alpha, r).map_err(lift)?;
                p.engine = Engine::Single;
                run_interpolated(&set, &p, &mut rng.0).map_err(lift)?.outcome
            }
        };
        write_outcome(&outcome, out, out_outcome);
        Ok(())
    })
}

/// User-level estimate of the mean; `out` receives `d` coordinates.
///
/// # Safety
/// Handles must be live and `out` must have room for `d` doubles.
#[no_mangle]
pub unsafe extern "C" fn udp_estimate_user(
    ds: *const UdpDataset,
    r: f64,
    alpha: f64,
    eps: f64,
    delta: f64,
    rng: *mut UdpRng,
    out: *mut f64,
    out_outcome: *mut UdpOutcome,
) -> UdpStatus {
    guard(|| {
        let ds = ds.as_ref().ok_or_else(|| null("ds"))?;
        let rng = rng.as_mut().ok_or_else(|| null("rng"))?;
        if out_outcome.is_null() {
            return Err(null("out_outcome"));
        }
        let out = slice_mut(out, ds.0.d(), "out")?;
        let params = UserLevelParams::new(eps, delta, alpha, r).map_err(lift)?;
        let run = run_user(&ds.0, &params, &mut rng.0).map_err(lift)?;
        write_outcome(&run.outcome, out, out_outcome);
        Ok(())
    })
}

/// Rotation for dimension `d` with seeded signs; null on failure.
#[no_mangle]
pub extern "C" fn udp_rotation_new(d: usize, seed: u64) -> *mut UdpRotation {
    let mut handle = ptr::null_mut();
    guard(|| {
        let plan = make_rotation(d, seed).map_err(lift)?;
        handle = Box::into_raw(Box::new(UdpRotation(plan)));
        Ok(())
    });
    handle
}

/// # Safety
/// `rot` must come from [`udp_rotation_new`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn udp_rotation_free(rot: *mut UdpRotation) {
    if !rot.is_null() {
        drop(Box::from_raw(rot));
    }
}

/// Padded dimension (next power of two), or 0 for a null handle.
///
/// # Safety
/// `rot` must be null or a live rotation handle.
#[no_mangle]
pub unsafe extern "C" fn udp_rotation_padded_dim(rot: *const UdpRotation) -> usize {
    rot.as_ref().map_or(0, |r| r.0.d_pad())
}

/// Maps `d` input coordinates to `d_pad` rotated ones.
///
/// # Safety
/// `input` must hold `d` doubles and `out` room for `d_pad`.
#[no_mangle]
pub unsafe extern "C" fn udp_rotation_apply(rot: *const UdpRotation, input: *const f64, out: *mut f64) -> UdpStatus {
    guard(|| {
        let rot = rot.as_ref().ok_or_else(|| null("rot"))?;
        let v = Point::new(slice(input, rot.0.d_orig(), "input")?.to_vec()).map_err(lift)?;
        let w = rot.0.rotate(&v).map_err(lift)?;
        slice_mut(out, rot.0.d_pad(), "out")?.copy_from_slice(w.coords());
        Ok(())
    })
}

/// Inverse of [`udp_rotation_apply`]: `d_pad` inputs back to `d` outputs.
///
/// # Safety
/// `input` must hold `d_pad` doubles and `out` room for `d`.
#[no_mangle]
pub unsafe extern "C" fn udp_rotation_invert(rot: *const UdpRotation, input: *const f64, out: *mut f64) -> UdpStatus {
    guard(|| {
        let rot = rot.as_ref().ok_or_else(|| null("rot"))?;
        let w = Point::new(slice(input, rot.0.d_pad(), "input")?.to_vec()).map_err(lift)?;
        let v = rot.0.unrotate(&w).map_err(lift)?;
        slice_mut(out, rot.0.d_orig(), "out")?.copy_from_slice(v.coords());
        Ok(())
    })
}

/// Total `(ε, δ)` of `k` adaptive `(eps, delta)` calls with slack `delta_prime`.
///
/// # Safety
/// `out_eps` and `out_delta` must be writable.
#[no_mangle]
pub unsafe extern "C" fn udp_strong_compose(
    eps: f64,
    delta: f64,
    k: u64,
    delta_prime: f64,
    out_eps: *mut f64,
    out_delta: *mut f64,
) -> UdpStatus {
    guard(|| {
        if out_eps.is_null() || out_delta.is_null() {
            return Err(null("output"));
        }
        let b = strong_compose(eps, delta, k, delta_prime).map_err(lift)?;
        *out_eps = b.eps;
        *out_delta = b.delta;
        Ok(())
    })
}
