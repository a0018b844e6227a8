//! C ABI for the fegp library.
//!
//! Objects cross the boundary as opaque handles created by a `*_new`-style
//! call and released by the matching `*_free`. Every fallible call returns a
//! [`FegpStatus`]; on failure `fegp_last_error` describes what went wrong on
//! the calling thread. Panics never unwind into C; they surface as
//! `FEGP_STATUS_PANIC`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use chrono::TimeDelta;
use fegp::config::RunConfig;
use fegp::error::Error;
use fegp::eval;
use fegp::forecast::{map_point, risk, MixturePosterior, Posterior};
use fegp::gp::ModelDocument;
use fegp::series::{synthesize, synthetic_epoch, SyntheticSpec, TrafficSeries};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FegpStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    InsufficientHistory = 3,
    Numerical = 4,
    Io = 5,
    Parse = 6,
    Panic = 7,
}

/// Traffic series with a fixed slot width.
pub struct FegpSeries(TrafficSeries);

/// Trained feature-embedded model together with its daily baseline.
pub struct FegpModel(ModelDocument);

/// Posterior mixture for one forecast slot, in raw traffic units.
pub struct FegpMixture(MixturePosterior);

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FegpComponent {
    pub mu: f64,
    pub var: f64,
    /// Training index the component was conditioned on.
    pub source_index: usize,
}

#[repr(C)]
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct FegpRisk {
    pub prob_below: f64,
    pub prob_within: f64,
    pub prob_above: f64,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(err: &Error) -> FegpStatus {
    match err {
        Error::Stage { source, .. } => status_of(source),
        Error::InsufficientHistory { .. } | Error::TooShort { .. } => {
            FegpStatus::InsufficientHistory
        }
        Error::Factorization { .. } | Error::NonFinite | Error::NoConvergence(_) => {
            FegpStatus::Numerical
        }
        Error::Io(_) => FegpStatus::Io,
        Error::Parse { .. }
        | Error::Gap { .. }
        | Error::NonIncreasing { .. }
        | Error::Misaligned { .. }
        | Error::NegativeValue { .. }
        | Error::Json(_)
        | Error::Csv(_) => FegpStatus::Parse,
        _ => FegpStatus::InvalidArgument,
    }
}

struct Failure(FegpStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Failure {
    Failure(FegpStatus::NullPointer, format!("{what} is null"))
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> FegpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FegpStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_last_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(format!("panic: {msg}"));
            FegpStatus::Panic
        }
    }
}

unsafe fn get<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    unsafe { p.as_ref() }.ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { *out = Box::into_raw(Box::new(value)) };
    Ok(())
}

unsafe fn write<T>(out: *mut T, value: T) -> Result<(), Failure> {
    if out.is_null() {
        return Err(null("output pointer"));
    }
    unsafe { *out = value };
    Ok(())
}

/// Message for the last failed call on this thread, or null if none failed.
/// Valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn fegp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn fegp_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Copies `len` values into a new series with the given slot width.
///
/// # Safety
/// `values` must point to `len` readable doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_series_new(
    values: *const f64,
    len: usize,
    slot_minutes: i64,
    out: *mut *mut FegpSeries,
) -> FegpStatus {
    guard(|| {
        if values.is_null() {
            return Err(null("values"));
        }
        if slot_minutes <= 0 {
            return Err(Failure(
                FegpStatus::InvalidArgument,
                format!("slot_minutes must be positive, got {slot_minutes}"),
            ));
        }
        let v = unsafe { std::slice::from_raw_parts(values, len) }.to_vec();
        let s = TrafficSeries::new(synthetic_epoch(), TimeDelta::minutes(slot_minutes), v)?;
        unsafe { put(out, FegpSeries(s)) }
    })
}

/// Synthetic spiky series from the default generator settings with the given
/// seed and length in days.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_series_synthesize(
    seed: u64,
    days: usize,
    out: *mut *mut FegpSeries,
) -> FegpStatus {
    guard(|| {
        let spec = SyntheticSpec {
            seed,
            days,
            ..SyntheticSpec::default()
        };
        unsafe { put(out, FegpSeries(synthesize(&spec)?)) }
    })
}

/// Number of values, or 0 for a null handle.
///
/// # Safety
/// `series` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fegp_series_len(series: *const FegpSeries) -> usize {
    unsafe { series.as_ref() }.map_or(0, |s| s.0.len())
}

/// Copies up to `cap` values into `buf` and stores the count in `written`.
///
/// # Safety
/// `buf` must have room for `cap` doubles; `written` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_series_copy_values(
    series: *const FegpSeries,
    buf: *mut f64,
    cap: usize,
    written: *mut usize,
) -> FegpStatus {
    guard(|| {
        let s = unsafe { get(series, "series") }?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        let n = cap.min(s.0.len());
        unsafe { ptr::copy_nonoverlapping(s.0.values().as_ptr(), buf, n) };
        unsafe { write(written, n) }
    })
}

/// # Safety
/// `series` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fegp_series_free(series: *mut FegpSeries) {
    if !series.is_null() {
        drop(unsafe { Box::from_raw(series) });
    }
}

/// Trains the feature-embedded model on `series[..train_end]` with default
/// settings. `train_end` must cover at least one whole day and leave at
/// least one value after it.
///
/// # Safety
/// `series` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_model_train(
    series: *const FegpSeries,
    train_end: usize,
    seed: u64,
    out: *mut *mut FegpModel,
) -> FegpStatus {
    guard(|| {
        let s = unsafe { get(series, "series") }?;
        let cfg = RunConfig {
            train_end: Some(train_end),
            seed,
            ..RunConfig::default()
        };
        let p = eval::prepare_series(&cfg, s.0.clone(), Vec::new())?;
        let t = eval::train_fegp(&p, &cfg)?;
        unsafe { put(out, FegpModel(t.document(&p))) }
    })
}

/// Parses a model document produced by `fegp_model_to_json` or `fegp train`.
///
/// # Safety
/// `json` must be a NUL-terminated UTF-8 string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_model_from_json(
    json: *const c_char,
    out: *mut *mut FegpModel,
) -> FegpStatus {
    guard(|| {
        if json.is_null() {
            return Err(null("json"));
        }
        let text = unsafe { CStr::from_ptr(json) }
            .to_str()
            .map_err(|e| Failure(FegpStatus::Parse, format!("json is not UTF-8: {e}")))?;
        unsafe { put(out, FegpModel(ModelDocument::from_json(text)?)) }
    })
}

/// Serializes the model; release the string with `fegp_string_free`.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_model_to_json(
    model: *const FegpModel,
    out: *mut *mut c_char,
) -> FegpStatus {
    guard(|| {
        let m = unsafe { get(model, "model") }?;
        let c = CString::new(m.0.to_json()?)
            .map_err(|e| Failure(FegpStatus::InvalidArgument, e.to_string()))?;
        unsafe { write(out, c.into_raw()) }
    })
}

/// Number of points in the model's training window.
///
/// # Safety
/// `model` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fegp_model_window_len(model: *const FegpModel) -> usize {
    unsafe { model.as_ref() }.map_or(0, |m| m.0.window.indices.len())
}

/// # Safety
/// `model` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fegp_model_free(model: *mut FegpModel) {
    if !model.is_null() {
        drop(unsafe { Box::from_raw(model) });
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fegp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Posterior for slot `t` of `series`, reading only values before `t`.
///
/// # Safety
/// `model` and `series` must be live handles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_model_forecast(
    model: *const FegpModel,
    series: *const FegpSeries,
    t: usize,
    out: *mut *mut FegpMixture,
) -> FegpStatus {
    guard(|| {
        let m = unsafe { get(model, "model") }?;
        let s = unsafe { get(series, "series") }?;
        let mix = eval::mixture_from_document(&m.0, s.0.values(), t)?;
        unsafe { put(out, FegpMixture(mix)) }
    })
}

/// Number of components, or 0 for a null handle.
///
/// # Safety
/// `mixture` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn fegp_mixture_len(mixture: *const FegpMixture) -> usize {
    unsafe { mixture.as_ref() }.map_or(0, |m| m.0.len())
}

/// # Safety
/// `mixture` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_mixture_component(
    mixture: *const FegpMixture,
    i: usize,
    out: *mut FegpComponent,
) -> FegpStatus {
    guard(|| {
        let m = unsafe { get(mixture, "mixture") }?;
        let c = m.0.components().get(i).ok_or_else(|| {
            Failure(
                FegpStatus::InvalidArgument,
                format!("component {i} out of range 0..{}", m.0.len()),
            )
        })?;
        unsafe {
            write(
                out,
                FegpComponent {
                    mu: c.mu,
                    var: c.var,
                    source_index: c.source_index,
                },
            )
        }
    })
}

/// # Safety
/// `mixture` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_mixture_pdf(
    mixture: *const FegpMixture,
    x: f64,
    out: *mut f64,
) -> FegpStatus {
    guard(|| unsafe { write(out, get(mixture, "mixture")?.0.pdf(x)) })
}

/// # Safety
/// `mixture` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_mixture_cdf(
    mixture: *const FegpMixture,
    x: f64,
    out: *mut f64,
) -> FegpStatus {
    guard(|| unsafe { write(out, get(mixture, "mixture")?.0.cdf(x)) })
}

/// Most probable value of the mixture.
///
/// # Safety
/// `mixture` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_mixture_map(
    mixture: *const FegpMixture,
    out: *mut f64,
) -> FegpStatus {
    guard(|| unsafe { write(out, map_point(&get(mixture, "mixture")?.0)) })
}

/// Probability mass below, inside and above `[low, high]`.
///
/// # Safety
/// `mixture` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn fegp_mixture_risk(
    mixture: *const FegpMixture,
    low: f64,
    high: f64,
    out: *mut FegpRisk,
) -> FegpStatus {
    guard(|| {
        let m = unsafe { get(mixture, "mixture") }?;
        let r = risk(&m.0, low, high)?;
        unsafe {
            write(
                out,
                FegpRisk {
                    prob_below: r.prob_below,
                    prob_within: r.prob_within,
                    prob_above: r.prob_above,
                },
            )
        }
    })
}

/// # Safety
/// `mixture` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn fegp_mixture_free(mixture: *mut FegpMixture) {
    if !mixture.is_null() {
        drop(unsafe { Box::from_raw(mixture) });
    }
}
