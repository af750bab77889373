//! C ABI over the `cmgai` library.
//!
//! Every function returns a [`CmgaiStatus`]. On failure a message is kept in
//! thread-local storage and can be read with [`cmgai_last_error`]. Handles
//! are opaque and must be released with their matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use cmgai::cli::config::RunConfig;
use cmgai::cli::experiment::{generate_at, run_experiment};
use cmgai::ot_discrete::{solve_monge, DiscreteDistribution};
use cmgai::transport::{CmGaiModel, MeanData};
use cmgai::Error;

/// Result codes. Values 2 to 4 match the command-line exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CmgaiStatus {
    Ok = 0,
    NullPointer = 1,
    Validation = 2,
    Diverged = 3,
    Io = 4,
    BufferTooSmall = 5,
    Panic = 6,
}

/// A trained (or loaded) transport model.
pub struct CmgaiModel {
    inner: CmGaiModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(err: Error) -> CmgaiStatus {
    let status = match err.exit_code() {
        3 => CmgaiStatus::Diverged,
        4 => CmgaiStatus::Io,
        _ => CmgaiStatus::Validation,
    };
    set_error(err.to_string());
    status
}

fn guard(f: impl FnOnce() -> CmgaiStatus) -> CmgaiStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            CmgaiStatus::Panic
        }
    }
}

/// # Safety
/// `p` must be null or a valid NUL-terminated string.
unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, CmgaiStatus> {
    if p.is_null() {
        set_error("path argument is null");
        return Err(CmgaiStatus::NullPointer);
    }
    match CStr::from_ptr(p).to_str() {
        Ok(s) => Ok(PathBuf::from(s)),
        Err(_) => {
            set_error("path is not valid UTF-8");
            Err(CmgaiStatus::Validation)
        }
    }
}

macro_rules! try_status {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(s) => return s,
        }
    };
}

/// Message for the last failed call on this thread, or null. The pointer is
/// valid until the next `cmgai_*` call on the same thread.
#[no_mangle]
pub extern "C" fn cmgai_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn cmgai_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a model JSON written by `cmgai train` or `cmgai_model_save`.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmgai_model_load(path: *const c_char, out: *mut *mut CmgaiModel) -> CmgaiStatus {
    guard(|| {
        if out.is_null() {
            set_error("out is null");
            return CmgaiStatus::NullPointer;
        }
        let path = try_status!(path_arg(path));
        match CmGaiModel::load(&path) {
            Ok(inner) => {
                *out = Box::into_raw(Box::new(CmgaiModel { inner }));
                CmgaiStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `model` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn cmgai_model_save(model: *const CmgaiModel, path: *const c_char) -> CmgaiStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            set_error("model is null");
            return CmgaiStatus::NullPointer;
        };
        let path = try_status!(path_arg(path));
        match m.inner.save(&path) {
            Ok(()) => CmgaiStatus::Ok,
            Err(e) => fail(e),
        }
    })
}

/// Releases a model handle. Null is ignored.
///
/// # Safety
/// `model` must come from `cmgai_model_load` and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn cmgai_model_free(model: *mut CmgaiModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

/// # Safety
/// `model` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn cmgai_model_is_trained(model: *const CmgaiModel, out: *mut bool) -> CmgaiStatus {
    guard(|| {
        let (Some(m), false) = (model.as_ref(), out.is_null()) else {
            set_error("model or out is null");
            return CmgaiStatus::NullPointer;
        };
        *out = m.inner.is_trained();
        CmgaiStatus::Ok
    })
}

/// Generates the mean curve or field at a raw condition.
///
/// Values (stresses or field entries) go to `values`; for curve models the
/// matching strains go to `strains` when it is non-null. `len` receives the
/// number of entries. If `capacity` is too small nothing is written except
/// `len` and `CMGAI_STATUS_BUFFER_TOO_SMALL` is returned.
///
/// # Safety
/// `model` must be a live handle, `values` (and `strains` if non-null) must
/// hold `capacity` doubles, `len` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmgai_generate_mean(
    model: *const CmgaiModel,
    condition: f64,
    strains: *mut f64,
    values: *mut f64,
    capacity: usize,
    len: *mut usize,
) -> CmgaiStatus {
    guard(|| {
        let Some(m) = model.as_ref() else {
            set_error("model is null");
            return CmgaiStatus::NullPointer;
        };
        if len.is_null() {
            set_error("len is null");
            return CmgaiStatus::NullPointer;
        }
        let generated = match generate_at(&m.inner, condition) {
            Ok(g) => g,
            Err(e) => return fail(e),
        };
        let vals = generated.mean.values();
        *len = vals.len();
        if vals.len() > capacity {
            set_error(format!("need {} entries, capacity is {capacity}", vals.len()));
            return CmgaiStatus::BufferTooSmall;
        }
        if values.is_null() {
            set_error("values is null");
            return CmgaiStatus::NullPointer;
        }
        ptr::copy_nonoverlapping(vals.as_ptr(), values, vals.len());
        if let (MeanData::Curve { strains: s, .. }, false) = (&generated.mean, strains.is_null()) {
            ptr::copy_nonoverlapping(s.as_ptr(), strains, s.len());
        }
        CmgaiStatus::Ok
    })
}

/// Runs the full pipeline from a JSON config file and returns the report
/// JSON through `report`, to be released with `cmgai_string_free`.
///
/// # Safety
/// `config_path` must be a NUL-terminated string; `report` writable.
#[no_mangle]
pub unsafe extern "C" fn cmgai_run_experiment(config_path: *const c_char, report: *mut *mut c_char) -> CmgaiStatus {
    guard(|| {
        if report.is_null() {
            set_error("report is null");
            return CmgaiStatus::NullPointer;
        }
        let path = try_status!(path_arg(config_path));
        let result = RunConfig::load(&path)
            .and_then(|cfg| run_experiment(&cfg))
            .and_then(|r| r.to_json());
        match result {
            Ok(json) => {
                *report = CString::new(json).expect("JSON has no NUL bytes").into_raw();
                CmgaiStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}

/// # Safety
/// `s` must be null or a string returned by this library.
#[no_mangle]
pub unsafe extern "C" fn cmgai_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Exact Monge assignment between two uniform point sets of `n` points in
/// `dim` dimensions (row-major). Writes `n` target indices to `assignment`
/// and the transport cost to `cost`.
///
/// # Safety
/// `src` and `dst` must hold `n * dim` doubles, `assignment` `n` entries,
/// and `cost` must be writable.
#[no_mangle]
pub unsafe extern "C" fn cmgai_solve_monge(
    src: *const f64,
    dst: *const f64,
    n: usize,
    dim: usize,
    assignment: *mut usize,
    cost: *mut f64,
) -> CmgaiStatus {
    guard(|| {
        if src.is_null() || dst.is_null() || assignment.is_null() || cost.is_null() {
            set_error("null argument");
            return CmgaiStatus::NullPointer;
        }
        if n == 0 || dim == 0 {
            set_error("n and dim must be positive");
            return CmgaiStatus::Validation;
        }
        let rows = |p: *const f64| -> Vec<Vec<f64>> {
            std::slice::from_raw_parts(p, n * dim)
                .chunks(dim)
                .map(<[f64]>::to_vec)
                .collect()
        };
        let result = DiscreteDistribution::uniform(rows(src))
            .and_then(|s| DiscreteDistribution::uniform(rows(dst)).map(|d| (s, d)))
            .and_then(|(s, d)| solve_monge(&s, &d));
        match result {
            Ok((map, c)) => {
                ptr::copy_nonoverlapping(map.assignment.as_ptr(), assignment, n);
                *cost = c;
                CmgaiStatus::Ok
            }
            Err(e) => fail(e),
        }
    })
}
