//! C ABI over `pullback-optim`.
//!
//! Every function returns a status code (`PO_OK` on success) and writes its
//! results through out-pointers. On failure, `po_last_error_message` returns a
//! description of the most recent error on the calling thread. Panics never
//! cross the boundary; they surface as `PO_PANIC`.
//!
//! Optimizers are opaque handles created by `po_optimizer_new` and released
//! with `po_optimizer_free`. Strings returned by the library are released
//! with `po_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use pullback_optim::geometry::{induced_update_flat, induced_update_log, InverseMetric};
use pullback_optim::harness::{self, RunConfig};
use pullback_optim::landscapes::make_landscape;
use pullback_optim::optim::{HyperParams, Optimizer, OptimizerConfig, OptimizerKind};
use pullback_optim::{Error, ParamVector};

pub const PO_OK: i32 = 0;
pub const PO_NULL_POINTER: i32 = 1;
pub const PO_DIMENSION: i32 = 2;
pub const PO_DOMAIN: i32 = 3;
pub const PO_NON_FINITE: i32 = 4;
pub const PO_INVALID_CONFIG: i32 = 5;
pub const PO_USAGE: i32 = 6;
pub const PO_IO: i32 = 7;
pub const PO_PANIC: i32 = 8;

/// Optimizer hyperparameters. Fill with `po_hyper_default` or
/// `po_hyper_for_dimension` and adjust.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct PoHyperParams {
    pub eta: f64,
    pub mu: f64,
    pub xi: f64,
    pub beta: f64,
    pub lambda: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl From<HyperParams> for PoHyperParams {
    fn from(h: HyperParams) -> Self {
        Self {
            eta: h.eta,
            mu: h.mu,
            xi: h.xi,
            beta: h.beta,
            lambda: h.lambda,
            beta2: h.beta2,
            epsilon: h.epsilon,
        }
    }
}

impl From<PoHyperParams> for HyperParams {
    fn from(h: PoHyperParams) -> Self {
        Self {
            eta: h.eta,
            mu: h.mu,
            xi: h.xi,
            beta: h.beta,
            lambda: h.lambda,
            beta2: h.beta2,
            epsilon: h.epsilon,
        }
    }
}

/// Opaque optimizer handle.
pub struct PoOptimizer {
    inner: Optimizer,
    dim: usize,
}

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_last_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = c);
}

fn status_of(err: &Error) -> i32 {
    match err {
        Error::Dimension { .. } => PO_DIMENSION,
        Error::NonFinite(_) => PO_NON_FINITE,
        Error::Domain(_) => PO_DOMAIN,
        Error::Usage(_) => PO_USAGE,
        Error::InvalidField { .. } | Error::Json(_) => PO_INVALID_CONFIG,
        Error::Io(_) | Error::Csv(_) => PO_IO,
    }
}

enum Fail {
    Null(&'static str),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

/// Runs `f`, converting errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), Fail>) -> i32 {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_last_error("");
            PO_OK
        }
        Ok(Err(Fail::Null(what))) => {
            set_last_error(&format!("null pointer passed for `{what}`"));
            PO_NULL_POINTER
        }
        Ok(Err(Fail::Lib(e))) => {
            set_last_error(&e.to_string());
            status_of(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("internal panic: {msg}"));
            PO_PANIC
        }
    }
}

unsafe fn slice<'a>(p: *const f64, n: usize, what: &'static str) -> Result<&'a [f64], Fail> {
    if n == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, n))
}

unsafe fn slice_mut<'a>(p: *mut f64, n: usize, what: &'static str) -> Result<&'a mut [f64], Fail> {
    if n == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, n))
}

unsafe fn string<'a>(p: *const c_char, what: &'static str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail::Lib(Error::invalid("string", format!("`{what}` is not valid UTF-8"))))
}

unsafe fn vector(p: *const f64, n: usize, what: &'static str) -> Result<ParamVector, Fail> {
    Ok(ParamVector::new(slice(p, n, what)?.to_vec())?)
}

fn inverse_metric(diag: Option<&[f64]>) -> Result<InverseMetric, Fail> {
    match diag {
        None => Ok(InverseMetric::Euclidean),
        Some(d) => Ok(InverseMetric::diagonal(ParamVector::new(d.to_vec())?)?),
    }
}

/// Message for the last failed call on this thread; empty after a success.
/// The pointer stays valid until the next library call on this thread.
#[no_mangle]
pub extern "C" fn po_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn po_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Writes the default hyperparameters to `out`.
///
/// # Safety
/// `out` must be null or point to writable memory for one `PoHyperParams`.
#[no_mangle]
pub unsafe extern "C" fn po_hyper_default(out: *mut PoHyperParams) -> i32 {
    guard(|| {
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        *out = HyperParams::default().into();
        Ok(())
    })
}

/// Defaults with ξ = 1/n.
///
/// # Safety
/// `out` must be null or point to writable memory for one `PoHyperParams`.
#[no_mangle]
pub unsafe extern "C" fn po_hyper_for_dimension(n: usize, out: *mut PoHyperParams) -> i32 {
    guard(|| {
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        *out = HyperParams::for_dimension(n).into();
        Ok(())
    })
}

/// Creates an optimizer for `n` parameters. `kind` is one of `sgd`,
/// `rms-prop`, `adam`, `adam-w`, `im-sgd`, `im-log-sgd`, `im-rms`.
///
/// # Safety
/// `kind` must be a NUL-terminated string, `hyper` must point to one
/// `PoHyperParams` and `out` to writable storage for a handle pointer.
#[no_mangle]
pub unsafe extern "C" fn po_optimizer_new(
    kind: *const c_char,
    hyper: *const PoHyperParams,
    n: usize,
    out: *mut *mut PoOptimizer,
) -> i32 {
    guard(|| {
        let out = out.as_mut().ok_or(Fail::Null("out"))?;
        *out = ptr::null_mut();
        let kind: OptimizerKind = string(kind, "kind")?.parse()?;
        let hyper = *hyper.as_ref().ok_or(Fail::Null("hyper"))?;
        let inner = Optimizer::new(
            OptimizerConfig {
                kind,
                hyper: hyper.into(),
            },
            n,
        )?;
        *out = Box::into_raw(Box::new(PoOptimizer { inner, dim: n }));
        Ok(())
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `opt` must be null or a handle from `po_optimizer_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn po_optimizer_free(opt: *mut PoOptimizer) {
    if !opt.is_null() {
        drop(Box::from_raw(opt));
    }
}

/// Applies one step: reads `theta` and `grad` (both length `n`), writes the
/// new parameters back into `theta`. `loss` is required by `im-log-sgd`
/// (positive) and ignored otherwise. `r_t_out` may be null. On failure
/// `theta` and the optimizer state are left unchanged.
///
/// # Safety
/// `opt` must be a live handle; `theta` and `grad` must point to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn po_optimizer_step(
    opt: *mut PoOptimizer,
    theta: *mut f64,
    grad: *const f64,
    n: usize,
    loss: f64,
    r_t_out: *mut f64,
) -> i32 {
    guard(|| {
        let opt = opt.as_mut().ok_or(Fail::Null("opt"))?;
        if n != opt.dim {
            return Err(Error::Dimension {
                expected: opt.dim,
                got: n,
            }
            .into());
        }
        let theta_buf = slice_mut(theta, n, "theta")?;
        let current = ParamVector::new(theta_buf.to_vec())?;
        let g = vector(grad, n, "grad")?;
        let (next, trace) = opt.inner.step(&current, &g, loss)?;
        theta_buf.copy_from_slice(next.as_slice());
        if let Some(r) = r_t_out.as_mut() {
            *r = trace.r_t;
        }
        Ok(())
    })
}

/// Number of steps taken so far.
///
/// # Safety
/// `opt` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn po_optimizer_steps(opt: *const PoOptimizer, out: *mut u64) -> i32 {
    guard(|| {
        let opt = opt.as_ref().ok_or(Fail::Null("opt"))?;
        *out.as_mut().ok_or(Fail::Null("out"))? = opt.inner.state().t;
        Ok(())
    })
}

/// Evaluates a named test landscape (`rosenbrock`, `rastrigin`,
/// `himmelblau`, `beale`, `ackley`) at `theta`.
///
/// # Safety
/// `name` must be a NUL-terminated string, `theta` must point to `n` doubles
/// and `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn po_landscape_eval(
    name: *const c_char,
    theta: *const f64,
    n: usize,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let l = make_landscape(string(name, "name")?)?;
        let value = l.eval(&vector(theta, n, "theta")?)?;
        *out.as_mut().ok_or(Fail::Null("out"))? = value;
        Ok(())
    })
}

/// Gradient of a named landscape, written to `grad_out` (length `n`).
///
/// # Safety
/// `name` must be a NUL-terminated string; `theta` and `grad_out` must point
/// to `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn po_landscape_grad(
    name: *const c_char,
    theta: *const f64,
    n: usize,
    grad_out: *mut f64,
) -> i32 {
    guard(|| {
        let l = make_landscape(string(name, "name")?)?;
        let g = l.grad(&vector(theta, n, "theta")?)?;
        slice_mut(grad_out, n, "grad_out")?.copy_from_slice(g.as_slice());
        Ok(())
    })
}

/// Single induced step `-η γ⁻¹g / (1 + ξ gᵀγ⁻¹g)` into `out`.
/// `gamma_inv_diag` may be null for the Euclidean metric.
///
/// # Safety
/// `g` and `out` must point to `n` doubles; `gamma_inv_diag` to `n` doubles
/// or null.
#[no_mangle]
pub unsafe extern "C" fn po_induced_update_flat(
    g: *const f64,
    gamma_inv_diag: *const f64,
    n: usize,
    eta: f64,
    xi: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let g = vector(g, n, "g")?;
        let diag = if gamma_inv_diag.is_null() {
            None
        } else {
            Some(slice(gamma_inv_diag, n, "gamma_inv_diag")?)
        };
        let step = induced_update_flat(&g, &inverse_metric(diag)?, eta, xi)?;
        slice_mut(out, n, "out")?.copy_from_slice(step.as_slice());
        Ok(())
    })
}

/// Single log-embedding step `-η L γ⁻¹g / (L² + ξ gᵀγ⁻¹g)` into `out`.
///
/// # Safety
/// As for `po_induced_update_flat`.
#[no_mangle]
pub unsafe extern "C" fn po_induced_update_log(
    g: *const f64,
    loss: f64,
    gamma_inv_diag: *const f64,
    n: usize,
    eta: f64,
    xi: f64,
    out: *mut f64,
) -> i32 {
    guard(|| {
        let g = vector(g, n, "g")?;
        let diag = if gamma_inv_diag.is_null() {
            None
        } else {
            Some(slice(gamma_inv_diag, n, "gamma_inv_diag")?)
        };
        let step = induced_update_log(&g, loss, &inverse_metric(diag)?, eta, xi)?;
        slice_mut(out, n, "out")?.copy_from_slice(step.as_slice());
        Ok(())
    })
}

/// Runs one benchmark from a JSON run configuration and returns the record as
/// a JSON string in `out_json`, to be released with `po_string_free`.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out_json` writable.
#[no_mangle]
pub unsafe extern "C" fn po_run_json(config_json: *const c_char, out_json: *mut *mut c_char) -> i32 {
    guard(|| {
        let out = out_json.as_mut().ok_or(Fail::Null("out_json"))?;
        *out = ptr::null_mut();
        let cfg: RunConfig = serde_json::from_str(string(config_json, "config_json")?).map_err(Error::from)?;
        cfg.validate()?;
        let rec = if cfg.task.is_some() {
            harness::run_nn(&cfg)?
        } else {
            harness::run_lowdim(&cfg)?
        };
        let text = serde_json::to_string(&rec).map_err(Error::from)?;
        *out = CString::new(text)
            .map_err(|_| Error::Usage("record contains a NUL byte".into()))?
            .into_raw();
        Ok(())
    })
}

/// Releases a string returned by the library. Null is ignored.
///
/// # Safety
/// `s` must be null or a string from this library not yet freed.
#[no_mangle]
pub unsafe extern "C" fn po_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
