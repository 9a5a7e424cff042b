//! C ABI for `transfit`.
//!
//! Objects cross the boundary as opaque handles (`TfDataset`, `TfFitResult`)
//! that the caller releases with the matching `*_free` function. Every
//! fallible function returns a `TfStatus`; on failure a description is
//! available from `tf_last_error` on the same thread until the next call.
//! Panics are caught at the boundary and reported as `TF_STATUS_PANIC`.
//!
//! Strings returned by the library (`tf_fit_to_json`) are owned by the caller
//! and must be released with `tf_string_free`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use transfit::{Dataset, Error, FitOptions, FitResult, LinkSpec, Scenario, SimConfig};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TfStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Parse = 3,
    InvalidData = 4,
    Io = 5,
    Numerical = 6,
    /// The fit stopped without meeting its convergence rule; the handle is
    /// still produced and holds the best iterate.
    NotConverged = 7,
    BufferTooSmall = 8,
    Panic = 9,
}

/// Opaque dataset handle.
pub struct TfDataset(Dataset);

/// Opaque fit handle.
pub struct TfFitResult(FitResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(message: impl Into<String>) {
    let text = message.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(text).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> TfStatus {
    match err {
        Error::Domain(_) => TfStatus::InvalidArgument,
        Error::Parse { .. } => TfStatus::Parse,
        Error::InvalidData(_) | Error::Dimension { .. } => TfStatus::InvalidData,
        Error::Io(_) => TfStatus::Io,
        _ => TfStatus::Numerical,
    }
}

fn fail(err: Error) -> TfStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

/// Runs `f` behind a panic guard and records the outcome.
fn guard<F>(f: F) -> TfStatus
where
    F: FnOnce() -> Result<(), TfStatus>,
{
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => TfStatus::Ok,
        Ok(Err(status)) => status,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            TfStatus::Panic
        }
    }
}

fn null(what: &str) -> TfStatus {
    set_error(format!("{what} is null"));
    TfStatus::NullPointer
}

unsafe fn c_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, TfStatus> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error(format!("{what} is not valid UTF-8"));
        TfStatus::InvalidArgument
    })
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, TfStatus> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn copy_out(values: &[f64], out: *mut f64, len: usize) -> Result<(), TfStatus> {
    if out.is_null() {
        return Err(null("output buffer"));
    }
    if len < values.len() {
        set_error(format!("buffer holds {len} values, {} needed", values.len()));
        return Err(TfStatus::BufferTooSmall);
    }
    ptr::copy_nonoverlapping(values.as_ptr(), out, values.len());
    Ok(())
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next library call on the same thread.
#[no_mangle]
pub extern "C" fn tf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn tf_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Parses dataset CSV text.
///
/// # Safety
/// `csv` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_dataset_parse_csv(csv: *const c_char, out: *mut *mut TfDataset) -> TfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let text = c_str(csv, "csv")?;
        let ds = transfit::parse_dataset(text).map_err(fail)?;
        *out = Box::into_raw(Box::new(TfDataset(ds)));
        Ok(())
    })
}

/// Reads a dataset CSV file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_dataset_read(path: *const c_char, out: *mut *mut TfDataset) -> TfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let path = c_str(path, "path")?;
        let ds = transfit::read_dataset(path).map_err(fail)?;
        *out = Box::into_raw(Box::new(TfDataset(ds)));
        Ok(())
    })
}

/// Simulates a dataset from scenario `config` (1, 2 or 3) with generating
/// link parameter `alpha`, `n` subjects and `seed`.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_dataset_simulate(
    config: u32,
    alpha: f64,
    n: usize,
    seed: u64,
    out: *mut *mut TfDataset,
) -> TfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let scenario = match config {
            1 => Scenario::C1,
            2 => Scenario::C2,
            3 => Scenario::C3,
            other => {
                set_error(format!("config must be 1, 2 or 3, got {other}"));
                return Err(TfStatus::InvalidArgument);
            }
        };
        let ds = transfit::simulate_dataset(&SimConfig::new(scenario, alpha, n, seed)).map_err(fail)?;
        *out = Box::into_raw(Box::new(TfDataset(ds)));
        Ok(())
    })
}

/// Number of subjects; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn tf_dataset_len(ds: *const TfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.len())
}

/// Number of covariates; 0 for a null handle.
///
/// # Safety
/// `ds` must be null or a live dataset handle.
#[no_mangle]
pub unsafe extern "C" fn tf_dataset_dim(ds: *const TfDataset) -> usize {
    ds.as_ref().map_or(0, |d| d.0.dim())
}

/// # Safety
/// `ds` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn tf_dataset_free(ds: *mut TfDataset) {
    if !ds.is_null() {
        drop(Box::from_raw(ds));
    }
}

/// Fits the model with link parameter `alpha` (0 for proportional hazards,
/// 1 for proportional odds). `interior_knots == 0` selects the default rule.
///
/// Returns `TF_STATUS_NOT_CONVERGED` with a valid handle when the fit ran but
/// missed a convergence rule; other failures leave `*out` untouched.
///
/// # Safety
/// `ds` must be a live dataset handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn tf_fit(
    ds: *const TfDataset,
    alpha: f64,
    interior_knots: usize,
    out: *mut *mut TfFitResult,
) -> TfStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let ds = handle(ds, "dataset")?;
        let link = LinkSpec::new(alpha).map_err(fail)?;
        let options = FitOptions {
            interior_knots: (interior_knots > 0).then_some(interior_knots),
            ..FitOptions::default()
        };
        let (res, status) = match transfit::fit(&ds.0, link, &options) {
            Ok(res) if res.converged => (res, None),
            Ok(res) => {
                set_error(res.diagnostics.messages.join("; "));
                (res, Some(TfStatus::NotConverged))
            }
            Err(Error::OuterNonConvergence { best, iterations }) => {
                set_error(format!("smoothing-parameter loop did not converge in {iterations} iterations"));
                (*best, Some(TfStatus::NotConverged))
            }
            Err(e) => return Err(fail(e)),
        };
        *out = Box::into_raw(Box::new(TfFitResult(res)));
        status.map_or(Ok(()), Err)
    })
}

/// Number of regression coefficients; 0 for a null handle.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn tf_fit_dim(fit: *const TfFitResult) -> usize {
    fit.as_ref().map_or(0, |f| f.0.beta().len())
}

/// Copies the coefficient estimates into `out[0..len]`.
///
/// # Safety
/// `fit` must be a live fit handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tf_fit_beta(fit: *const TfFitResult, out: *mut f64, len: usize) -> TfStatus {
    guard(|| copy_out(handle(fit, "fit")?.0.beta(), out, len))
}

/// Copies the standard errors into `out[0..len]`; `TF_STATUS_NUMERICAL` when
/// the information matrix was singular.
///
/// # Safety
/// `fit` must be a live fit handle and `out` must hold `len` doubles.
#[no_mangle]
pub unsafe extern "C" fn tf_fit_std_errors(fit: *const TfFitResult, out: *mut f64, len: usize) -> TfStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        match &f.0.std_errors {
            Some(se) => copy_out(se, out, len),
            None => {
                set_error("standard errors are unavailable: singular information matrix");
                Err(TfStatus::Numerical)
            }
        }
    })
}

/// Selected smoothing parameter; NaN for a null handle.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn tf_fit_lambda(fit: *const TfFitResult) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.lambda)
}

/// Penalized log-likelihood at the estimate; NaN for a null handle.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn tf_fit_penloglik(fit: *const TfFitResult) -> f64 {
    fit.as_ref().map_or(f64::NAN, |f| f.0.penloglik)
}

/// Whether all convergence rules were met; false for a null handle.
///
/// # Safety
/// `fit` must be null or a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn tf_fit_converged(fit: *const TfFitResult) -> bool {
    fit.as_ref().is_some_and(|f| f.0.converged)
}

/// Evaluates the estimated baseline transformation at each of `n` times.
///
/// # Safety
/// `fit` must be a live fit handle; `t` and `out` must hold `n` doubles.
#[no_mangle]
pub unsafe extern "C" fn tf_fit_phi(fit: *const TfFitResult, t: *const f64, n: usize, out: *mut f64) -> TfStatus {
    guard(|| {
        let f = handle(fit, "fit")?;
        if t.is_null() {
            return Err(null("t"));
        }
        let times = std::slice::from_raw_parts(t, n);
        if times.iter().any(|v| !v.is_finite()) {
            set_error("times must be finite");
            return Err(TfStatus::InvalidArgument);
        }
        let values: Vec<f64> = times.iter().map(|&v| f.0.phi(v)).collect();
        copy_out(&values, out, n)
    })
}

/// The fit as a JSON document; null on failure. Release with `tf_string_free`.
///
/// # Safety
/// `fit` must be a live fit handle.
#[no_mangle]
pub unsafe extern "C" fn tf_fit_to_json(fit: *const TfFitResult) -> *mut c_char {
    let mut text = None;
    let status = guard(|| {
        let f = handle(fit, "fit")?;
        let json = CString::new(f.0.to_json()).map_err(|_| {
            set_error("JSON contains a NUL byte");
            TfStatus::Numerical
        })?;
        text = Some(json);
        Ok(())
    });
    match (status, text) {
        (TfStatus::Ok, Some(s)) => s.into_raw(),
        _ => ptr::null_mut(),
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not freed before.
#[no_mangle]
pub unsafe extern "C" fn tf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// # Safety
/// `fit` must be null or a handle not freed before.
#[no_mangle]
pub unsafe extern "C" fn tf_fit_free(fit: *mut TfFitResult) {
    if !fit.is_null() {
        drop(Box::from_raw(fit));
    }
}
