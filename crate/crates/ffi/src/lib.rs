//! C ABI over `monge1d`.
//!
//! Every fallible function returns a [`Monge1dStatus`] and writes its result
//! through an out-pointer. On failure, [`monge1d_last_error_message`] gives a
//! description that stays valid until the next failing call on the same
//! thread. Handles are opaque; free each one with its matching `_free`
//! function. Strings returned by the library are freed with
//! [`monge1d_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use monge1d::limit_plan::{build_limit_plan, limit_functional_value};
use monge1d::measures::{InstanceFile, Measure1D};
use monge1d::report::{analyze, to_json};
use monge1d::solver::{make_grid, sinkhorn, SinkhornResult};
use monge1d::structure::{sign_decompose, w1, DEFAULT_TAU_SIGN};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Monge1dStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    ParseError = 3,
    InvalidInstance = 4,
    LimitPlanError = 5,
    SolverError = 6,
    BufferTooSmall = 7,
    Panic = 8,
}

/// A pair of measures `(mu, nu)`.
pub struct Monge1dInstance {
    label: Option<String>,
    mu: Measure1D,
    nu: Measure1D,
}

/// Entropic plan on a uniform grid.
pub struct Monge1dSolution {
    n: usize,
    result: SinkhornResult,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let text = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn fail(status: Monge1dStatus, msg: impl std::fmt::Display) -> Monge1dStatus {
    set_error(msg.to_string());
    status
}

fn guard(f: impl FnOnce() -> Monge1dStatus) -> Monge1dStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(Monge1dStatus::Panic, "internal panic"),
    }
}

unsafe fn slice<'a>(p: *const f64, len: usize) -> Option<&'a [f64]> {
    if len == 0 {
        return Some(&[]);
    }
    (!p.is_null()).then(|| std::slice::from_raw_parts(p, len))
}

/// Message of the last failure on this thread, or NULL. Owned by the library.
#[no_mangle]
pub extern "C" fn monge1d_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn monge1d_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses an instance file (`{"mu": ..., "nu": ..., "label": ...}`).
///
/// # Safety
/// `json` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn monge1d_instance_from_json(
    json: *const c_char,
    out: *mut *mut Monge1dInstance,
) -> Monge1dStatus {
    guard(|| {
        if json.is_null() || out.is_null() {
            return fail(Monge1dStatus::NullPointer, "null argument");
        }
        let Ok(text) = CStr::from_ptr(json).to_str() else {
            return fail(Monge1dStatus::InvalidUtf8, "input is not UTF-8");
        };
        let file = match InstanceFile::from_json(text) {
            Ok(f) => f,
            Err(e) => return fail(Monge1dStatus::ParseError, e),
        };
        match file.measures() {
            Ok((mu, nu)) => {
                *out = Box::into_raw(Box::new(Monge1dInstance {
                    label: file.label,
                    mu,
                    nu,
                }));
                Monge1dStatus::Ok
            }
            Err(e) => fail(Monge1dStatus::InvalidInstance, e),
        }
    })
}

/// Builds an instance from breakpoints (`len + 1` each) and densities
/// (`len` each). Densities are normalized to unit mass when `normalize` is
/// nonzero; otherwise the mass must already be 1.
///
/// # Safety
/// Each array must hold the stated number of doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn monge1d_instance_from_piecewise(
    mu_breakpoints: *const f64,
    mu_densities: *const f64,
    mu_len: usize,
    nu_breakpoints: *const f64,
    nu_densities: *const f64,
    nu_len: usize,
    normalize: i32,
    out: *mut *mut Monge1dInstance,
) -> Monge1dStatus {
    guard(|| {
        let (Some(mb), Some(md), Some(nb), Some(nd)) = (
            slice(mu_breakpoints, mu_len + 1),
            slice(mu_densities, mu_len),
            slice(nu_breakpoints, nu_len + 1),
            slice(nu_densities, nu_len),
        ) else {
            return fail(Monge1dStatus::NullPointer, "null array");
        };
        if out.is_null() {
            return fail(Monge1dStatus::NullPointer, "null out pointer");
        }
        let build = |b: &[f64], d: &[f64], which: &str| {
            Measure1D::from_piecewise(b, d, normalize != 0).map_err(|e| format!("{which}: {e}"))
        };
        match build(mb, md, "mu").and_then(|mu| Ok((mu, build(nb, nd, "nu")?))) {
            Ok((mu, nu)) => {
                *out = Box::into_raw(Box::new(Monge1dInstance { label: None, mu, nu }));
                Monge1dStatus::Ok
            }
            Err(e) => fail(Monge1dStatus::InvalidInstance, e),
        }
    })
}

/// # Safety
/// `inst` must come from a constructor above and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn monge1d_instance_free(inst: *mut Monge1dInstance) {
    if !inst.is_null() {
        drop(Box::from_raw(inst));
    }
}

unsafe fn with_instance(
    inst: *const Monge1dInstance,
    out: *mut f64,
    f: impl FnOnce(&Monge1dInstance) -> Result<f64, Monge1dStatus>,
) -> Monge1dStatus {
    guard(|| {
        if inst.is_null() || out.is_null() {
            return fail(Monge1dStatus::NullPointer, "null argument");
        }
        match f(&*inst) {
            Ok(v) => {
                *out = v;
                Monge1dStatus::Ok
            }
            Err(s) => s,
        }
    })
}

/// Wasserstein-1 distance.
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn monge1d_w1(inst: *const Monge1dInstance, out: *mut f64) -> Monge1dStatus {
    with_instance(inst, out, |i| Ok(w1(&i.mu, &i.nu)))
}

/// Mass of `mu` on the set where the two CDFs agree.
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn monge1d_zero_mass(inst: *const Monge1dInstance, out: *mut f64) -> Monge1dStatus {
    with_instance(inst, out, |i| {
        Ok(sign_decompose(&i.mu, &i.nu, DEFAULT_TAU_SIGN).zero_mass(&i.mu))
    })
}

/// Minimum of the limit functional, i.e. the relative entropy of the
/// selected optimal plan with the diagonal term.
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn monge1d_min_f(inst: *const Monge1dInstance, out: *mut f64) -> Monge1dStatus {
    with_instance(inst, out, |i| {
        let dec = sign_decompose(&i.mu, &i.nu, DEFAULT_TAU_SIGN);
        build_limit_plan(&i.mu, &i.nu, &dec)
            .and_then(|lp| limit_functional_value(&lp))
            .map_err(|e| fail(Monge1dStatus::LimitPlanError, e))
    })
}

/// Full analysis report as JSON. Free the string with
/// [`monge1d_string_free`].
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn monge1d_analyze_json(
    inst: *const Monge1dInstance,
    out: *mut *mut c_char,
) -> Monge1dStatus {
    guard(|| {
        if inst.is_null() || out.is_null() {
            return fail(Monge1dStatus::NullPointer, "null argument");
        }
        let i = &*inst;
        match analyze(&i.mu, &i.nu, i.label.as_deref(), DEFAULT_TAU_SIGN) {
            Ok(r) => match CString::new(to_json(&r)) {
                Ok(s) => {
                    *out = s.into_raw();
                    Monge1dStatus::Ok
                }
                Err(e) => fail(Monge1dStatus::Panic, e),
            },
            Err(e) => fail(Monge1dStatus::LimitPlanError, e),
        }
    })
}

/// # Safety
/// `s` must come from this library and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn monge1d_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Entropic plan at `eps` on an `n`-cell grid over the common hull.
///
/// # Safety
/// `inst` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn monge1d_sinkhorn(
    inst: *const Monge1dInstance,
    eps: f64,
    n: usize,
    tol: f64,
    max_iter: usize,
    out: *mut *mut Monge1dSolution,
) -> Monge1dStatus {
    guard(|| {
        if inst.is_null() || out.is_null() {
            return fail(Monge1dStatus::NullPointer, "null argument");
        }
        let i = &*inst;
        let result = make_grid(&i.mu, &i.nu, n).and_then(|g| sinkhorn(&g, eps, tol, max_iter));
        match result {
            Ok(result) => {
                *out = Box::into_raw(Box::new(Monge1dSolution { n, result }));
                Monge1dStatus::Ok
            }
            Err(e) => fail(Monge1dStatus::SolverError, e),
        }
    })
}

/// # Safety
/// `sol` must come from [`monge1d_sinkhorn`] and not be freed twice.
#[no_mangle]
pub unsafe extern "C" fn monge1d_solution_free(sol: *mut Monge1dSolution) {
    if !sol.is_null() {
        drop(Box::from_raw(sol));
    }
}

/// Grid size; 0 for a null handle.
///
/// # Safety
/// `sol` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn monge1d_solution_n(sol: *const Monge1dSolution) -> usize {
    sol.as_ref().map_or(0, |s| s.n)
}

/// `<C, P> + eps KL(P | a (x) b)`; NaN for a null handle.
///
/// # Safety
/// `sol` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn monge1d_solution_j_eps(sol: *const Monge1dSolution) -> f64 {
    sol.as_ref().map_or(f64::NAN, |s| s.result.j_eps)
}

/// 1 if the marginal residual reached the tolerance, else 0.
///
/// # Safety
/// `sol` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn monge1d_solution_converged(sol: *const Monge1dSolution) -> i32 {
    sol.as_ref().map_or(0, |s| s.result.converged as i32)
}

/// Copies the plan row-major into `buf`, which must hold `n * n` doubles.
///
/// # Safety
/// `sol` must be a live handle; `buf` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn monge1d_solution_plan(
    sol: *const Monge1dSolution,
    buf: *mut f64,
    len: usize,
) -> Monge1dStatus {
    guard(|| {
        let Some(s) = sol.as_ref() else {
            return fail(Monge1dStatus::NullPointer, "null handle");
        };
        if buf.is_null() {
            return fail(Monge1dStatus::NullPointer, "null buffer");
        }
        let data = s.result.plan.as_slice();
        if len < data.len() {
            return fail(
                Monge1dStatus::BufferTooSmall,
                format!("buffer holds {len} values, plan has {}", data.len()),
            );
        }
        std::slice::from_raw_parts_mut(buf, data.len()).copy_from_slice(data);
        Monge1dStatus::Ok
    })
}
