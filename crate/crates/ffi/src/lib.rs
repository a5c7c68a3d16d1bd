//! C ABI over the FAAR engine.
//!
//! All objects are opaque handles created by `faar_*_new`/`_fit`/`_read`
//! and released with the matching `_free`. Every fallible call returns a
//! [`FaarStatus`]; on failure `faar_last_error()` describes the cause
//! until the next failing call on the same thread. Panics never cross the
//! boundary; they surface as `FAAR_STATUS_INTERNAL`.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use faar::faar::{FaarConfig, FaarRejector as CoreRejector};
use faar::io::stream::{Handshake, StreamConfig, StreamEngine};
use faar::model::default_channel_names;
use faar::{EpochTensor, FaarError};
use ndarray::{Array3, ArrayView2};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FaarStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    NonFinite = 4,
    /// Not enough epochs, windows or clean data for the requested step.
    InsufficientData = 5,
    /// Malformed FaarFile or JSON.
    Format = 6,
    Io = 7,
    Internal = 8,
}

impl From<&FaarError> for FaarStatus {
    fn from(e: &FaarError) -> Self {
        use FaarError::*;
        match e {
            ShapeMismatch(_) | ModelMismatch(_) | SubjectMismatch(_) => FaarStatus::ShapeMismatch,
            NonFinite(_) => FaarStatus::NonFinite,
            EmptyInput(_) | TooShort { .. } | WindowTooShort { .. } | TooFewWindows { .. } | TooFewPoints { .. }
            | TooFewEpochs { .. } | TooFewSubjects { .. } | InsufficientFolds(_) | ReferenceUnavailable(_)
            | ZeroVariance | DegenerateFeatures | SingleClass => FaarStatus::InsufficientData,
            BadMagic | BadVersion(_) | HeaderMismatch(_) | TruncatedPayload { .. } | Json(_) => FaarStatus::Format,
            Io(_) => FaarStatus::Io,
            _ => FaarStatus::InvalidArgument,
        }
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: FaarStatus, msg: impl Into<String>) -> FaarStatus {
    set_error(msg);
    status
}

/// Runs `f`, turning errors and panics into status codes.
fn guard(f: impl FnOnce() -> Result<(), FaarStatus>) -> FaarStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => FaarStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => fail(FaarStatus::Internal, "internal panic"),
    }
}

fn check<T>(r: faar::Result<T>) -> Result<T, FaarStatus> {
    r.map_err(|e| fail(FaarStatus::from(&e), e.to_string()))
}

fn non_null<T>(p: *const T, what: &str) -> Result<(), FaarStatus> {
    if p.is_null() {
        Err(fail(FaarStatus::NullPointer, format!("{what} is null")))
    } else {
        Ok(())
    }
}

/// Message for the most recent failure on this thread, or null. The
/// pointer stays valid until the next failing call on this thread.
#[no_mangle]
pub extern "C" fn faar_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn faar_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Epoch batch `[epochs × channels × samples]` in microvolts.
pub struct FaarEpochs {
    inner: EpochTensor,
}

pub struct FaarRejector {
    inner: CoreRejector,
}

pub struct FaarStream {
    inner: StreamEngine,
}

/// One streaming decision. `threshold` is `+inf` while nothing can be rejected.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FaarDecision {
    pub epoch_id: u64,
    pub sqi: f64,
    pub threshold: f64,
    pub rejected: bool,
}

/// Copies a row-major `[n_epochs × n_channels × n_samples]` array of doubles.
///
/// # Safety
/// `data` must point to `n_epochs * n_channels * n_samples` readable doubles
/// and `out` must be a valid pointer to a handle slot.
#[no_mangle]
pub unsafe extern "C" fn faar_epochs_new(
    data: *const f64,
    n_epochs: usize,
    n_channels: usize,
    n_samples: usize,
    fs: f64,
    out: *mut *mut FaarEpochs,
) -> FaarStatus {
    guard(|| {
        non_null(data, "data")?;
        non_null(out, "out")?;
        let len = n_epochs
            .checked_mul(n_channels)
            .and_then(|v| v.checked_mul(n_samples))
            .ok_or_else(|| fail(FaarStatus::InvalidArgument, "shape overflows"))?;
        let values = std::slice::from_raw_parts(data, len).to_vec();
        let arr = Array3::from_shape_vec((n_epochs, n_channels, n_samples), values)
            .map_err(|e| fail(FaarStatus::ShapeMismatch, e.to_string()))?;
        let inner = check(EpochTensor::new(arr, fs, default_channel_names(n_channels)))?;
        *out = Box::into_raw(Box::new(FaarEpochs { inner }));
        Ok(())
    })
}

/// Reads an epochs FaarFile.
///
/// # Safety
/// `path` must be a NUL-terminated UTF-8 string and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn faar_epochs_read(path: *const c_char, out: *mut *mut FaarEpochs) -> FaarStatus {
    guard(|| {
        let path = c_path(path)?;
        non_null(out, "out")?;
        let inner = check(faar::io::read_faar(path).and_then(|d| d.into_epochs()))?;
        *out = Box::into_raw(Box::new(FaarEpochs { inner }));
        Ok(())
    })
}

/// # Safety
/// `epochs` must be a live handle and `path` a NUL-terminated UTF-8 string.
#[no_mangle]
pub unsafe extern "C" fn faar_epochs_write(epochs: *const FaarEpochs, path: *const c_char) -> FaarStatus {
    guard(|| {
        non_null(epochs, "epochs")?;
        let path = c_path(path)?;
        check(faar::io::write_epochs(path, &(*epochs).inner))
    })
}

/// # Safety
/// `epochs` must be a live handle; the output pointers may be null.
#[no_mangle]
pub unsafe extern "C" fn faar_epochs_shape(
    epochs: *const FaarEpochs,
    n_epochs: *mut usize,
    n_channels: *mut usize,
    n_samples: *mut usize,
) -> FaarStatus {
    guard(|| {
        non_null(epochs, "epochs")?;
        let (n, c, t) = (*epochs).inner.data.dim();
        for (p, v) in [(n_epochs, n), (n_channels, c), (n_samples, t)] {
            if !p.is_null() {
                *p = v;
            }
        }
        Ok(())
    })
}

/// # Safety
/// `epochs` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn faar_epochs_free(epochs: *mut FaarEpochs) {
    if !epochs.is_null() {
        drop(Box::from_raw(epochs));
    }
}

/// Calibrates on `epochs` and picks the knee threshold of their SQIs.
/// Pass `sensitivity <= 0` for the default.
///
/// # Safety
/// `epochs` must be a live handle and `out` a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn faar_rejector_fit(
    epochs: *const FaarEpochs,
    sensitivity: f64,
    out: *mut *mut FaarRejector,
) -> FaarStatus {
    guard(|| {
        non_null(epochs, "epochs")?;
        non_null(out, "out")?;
        let mut cfg = FaarConfig::default();
        if sensitivity > 0.0 {
            cfg.sensitivity = sensitivity;
        }
        let inner = check(CoreRejector::fit(&(*epochs).inner, &cfg))?;
        *out = Box::into_raw(Box::new(FaarRejector { inner }));
        Ok(())
    })
}

/// # Safety
/// `rejector` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn faar_rejector_threshold(rejector: *const FaarRejector, out: *mut f64) -> FaarStatus {
    guard(|| {
        non_null(rejector, "rejector")?;
        non_null(out, "out")?;
        *out = (*rejector).inner.threshold;
        Ok(())
    })
}

/// Scores `epochs` and writes one SQI and one 0/1 verdict per epoch.
/// `len` must equal the epoch count; either output may be null.
///
/// # Safety
/// Handles must be live; non-null outputs must hold `len` elements.
#[no_mangle]
pub unsafe extern "C" fn faar_rejector_decide(
    rejector: *const FaarRejector,
    epochs: *const FaarEpochs,
    sqi_out: *mut f64,
    rejected_out: *mut u8,
    len: usize,
) -> FaarStatus {
    guard(|| {
        non_null(rejector, "rejector")?;
        non_null(epochs, "epochs")?;
        let e = &(*epochs).inner;
        if len != e.n_epochs() {
            return Err(fail(FaarStatus::ShapeMismatch, format!("buffer of {len} for {} epochs", e.n_epochs())));
        }
        let d = check((*rejector).inner.decide(e))?;
        for (i, x) in d.iter().enumerate() {
            if !sqi_out.is_null() {
                *sqi_out.add(i) = x.sqi;
            }
            if !rejected_out.is_null() {
                *rejected_out.add(i) = u8::from(x.rejected);
            }
        }
        Ok(())
    })
}

/// Reference model as JSON; release with `faar_string_free`.
///
/// # Safety
/// `rejector` must be a live handle and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn faar_rejector_model_json(rejector: *const FaarRejector, out: *mut *mut c_char) -> FaarStatus {
    guard(|| {
        non_null(rejector, "rejector")?;
        non_null(out, "out")?;
        let json = check((*rejector).inner.model.to_json())?;
        *out = CString::new(json).map_err(|e| fail(FaarStatus::Internal, e.to_string()))?.into_raw();
        Ok(())
    })
}

/// # Safety
/// `rejector` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn faar_rejector_free(rejector: *mut FaarRejector) {
    if !rejector.is_null() {
        drop(Box::from_raw(rejector));
    }
}

/// # Safety
/// `s` must be null or a string returned by this library and not yet freed.
#[no_mangle]
pub unsafe extern "C" fn faar_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Streaming scorer. Non-positive `warmup_s`, `lambda` or `buffer` select
/// the defaults.
///
/// # Safety
/// `out` must be a valid handle slot.
#[no_mangle]
pub unsafe extern "C" fn faar_stream_new(
    fs: f64,
    channels: usize,
    window_len_s: f64,
    epoch_len_s: f64,
    warmup_s: f64,
    lambda: f64,
    buffer: usize,
    out: *mut *mut FaarStream,
) -> FaarStatus {
    guard(|| {
        non_null(out, "out")?;
        let defaults = StreamConfig::default();
        let cfg = StreamConfig {
            warmup_s: if warmup_s > 0.0 { warmup_s } else { defaults.warmup_s },
            lambda: if lambda > 0.0 { lambda } else { defaults.lambda },
            buffer: if buffer > 0 { buffer } else { defaults.buffer },
            ..defaults
        };
        let hs = Handshake { fs, channels, window_len_s, epoch_len_s };
        let inner = check(StreamEngine::new(hs, cfg))?;
        *out = Box::into_raw(Box::new(FaarStream { inner }));
        Ok(())
    })
}

/// Pushes one row-major `[channels × window_samples]` window. When it
/// completes an epoch, `*has_decision` is set and `*decision` filled.
///
/// # Safety
/// `stream` must be live; `window` must hold `len` floats; outputs writable.
#[no_mangle]
pub unsafe extern "C" fn faar_stream_push(
    stream: *mut FaarStream,
    window: *const f32,
    len: usize,
    decision: *mut FaarDecision,
    has_decision: *mut bool,
) -> FaarStatus {
    guard(|| {
        non_null(stream, "stream")?;
        non_null(window, "window")?;
        non_null(decision, "decision")?;
        non_null(has_decision, "has_decision")?;
        let engine = &mut (*stream).inner;
        let channels = engine.handshake().channels;
        let samples = check(engine.handshake().window_samples())?;
        if len != channels * samples {
            return Err(fail(FaarStatus::ShapeMismatch, format!("window of {len}, expected {}", channels * samples)));
        }
        let values: Vec<f64> = std::slice::from_raw_parts(window, len).iter().map(|v| f64::from(*v)).collect();
        if values.iter().any(|v| !v.is_finite()) {
            return Err(fail(FaarStatus::NonFinite, "window holds a non-finite sample"));
        }
        let view = ArrayView2::from_shape((channels, samples), &values).expect("length checked");
        *has_decision = false;
        if let Some(d) = check(engine.push_window(view))? {
            *decision = FaarDecision { epoch_id: d.epoch_id, sqi: d.sqi, threshold: d.threshold, rejected: d.rejected };
            *has_decision = true;
        }
        Ok(())
    })
}

/// # Safety
/// `stream` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn faar_stream_free(stream: *mut FaarStream) {
    if !stream.is_null() {
        drop(Box::from_raw(stream));
    }
}

unsafe fn c_path<'a>(p: *const c_char) -> Result<&'a str, FaarStatus> {
    non_null(p, "path")?;
    CStr::from_ptr(p).to_str().map_err(|_| fail(FaarStatus::InvalidArgument, "path is not UTF-8"))
}
