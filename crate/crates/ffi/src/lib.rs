//! C ABI for the stripres resonance library.
//!
//! A run is created from a JSON config, owned by the caller through an
//! opaque handle and released with `stripres_run_free`. Every fallible call
//! returns a `StripresStatus`; on failure the message is available from
//! `stripres_last_error` on the same thread until the next failing call.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use stripres::config::ExperimentConfig;
use stripres::output::write_run;
use stripres::pipeline::{self, RunOutput};
use stripres::{Error, ErrorKind};

/// Status of an FFI call. Values 2 to 4 match the CLI exit codes.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StripresStatus {
    Ok = 0,
    InvalidArgument = 1,
    Config = 2,
    Assumption = 3,
    Numerical = 4,
    Panic = 5,
}

/// One located resonance with its interaction-matrix prediction.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StripresRoot {
    pub re: f64,
    pub im: f64,
    pub multiplicity: u32,
    pub predicted_re: f64,
    pub predicted_im: f64,
    /// |lambda - lambda0 - Lambda| against the nearest prediction.
    pub residual: f64,
}

/// Opaque result of a completed run.
pub struct StripresRun {
    out: RunOutput,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(e: &Error) -> StripresStatus {
    let background = e.background().map(|b| format!(" background={b}")).unwrap_or_default();
    set_error(format!("{}{background}: {e}", e.code()));
    match e.kind() {
        ErrorKind::Config => StripresStatus::Config,
        ErrorKind::Assumption => StripresStatus::Assumption,
        ErrorKind::Numerical => StripresStatus::Numerical,
    }
}

fn invalid(msg: &str) -> StripresStatus {
    set_error(format!("InvalidArgument: {msg}"));
    StripresStatus::InvalidArgument
}

fn guarded(f: impl FnOnce() -> StripresStatus) -> StripresStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| {
        set_error("Panic: internal error".into());
        StripresStatus::Panic
    })
}

/// # Safety
/// `s` must be null or a valid NUL-terminated string.
unsafe fn utf8<'a>(s: *const c_char, what: &str) -> Result<&'a str, StripresStatus> {
    if s.is_null() {
        return Err(invalid(&format!("{what} is null")));
    }
    CStr::from_ptr(s).to_str().map_err(|_| invalid(&format!("{what} is not UTF-8")))
}

/// Parse `config_json`, run the configured sweep with up to `jobs` parallel
/// entries and store the result in `*out`. `*out` is set to null on failure.
///
/// # Safety
/// `config_json` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stripres_run_json(config_json: *const c_char, jobs: u32, out: *mut *mut StripresRun) -> StripresStatus {
    if out.is_null() {
        return invalid("out is null");
    }
    *out = ptr::null_mut();
    guarded(|| {
        let text = match utf8(config_json, "config_json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        let result = ExperimentConfig::from_json(text)
            .and_then(|cfg| cfg.validate().map(|_| cfg))
            .and_then(|cfg| pipeline::run(&cfg, jobs.max(1) as usize));
        match result {
            Ok(run) => {
                *out = Box::into_raw(Box::new(StripresRun { out: run }));
                StripresStatus::Ok
            }
            Err(e) => fail(&e),
        }
    })
}

/// Release a run. Null is ignored.
///
/// # Safety
/// `run` must be null or a handle from `stripres_run_json` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn stripres_run_free(run: *mut StripresRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// # Safety
/// `run` must be null or a live handle.
unsafe fn handle<'a>(run: *const StripresRun) -> Option<&'a RunOutput> {
    run.as_ref().map(|r| &r.out)
}

/// Unperturbed eigenvalue lambda0, or NaN for a null handle.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stripres_run_lambda0(run: *const StripresRun) -> f64 {
    handle(run).map_or(f64::NAN, |o| o.prepared.lambda0)
}

/// Total number N of bound states at lambda0 (0 for a null handle).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stripres_run_bound_states(run: *const StripresRun) -> usize {
    handle(run).map_or(0, |o| o.prepared.size())
}

/// Number of solved spacing entries.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stripres_run_spacings(run: *const StripresRun) -> usize {
    handle(run).map_or(0, |o| o.results.len())
}

/// Smallness scale eta of spacing entry `entry`, or NaN when out of range.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stripres_run_eta(run: *const StripresRun, entry: usize) -> f64 {
    handle(run).and_then(|o| o.results.get(entry)).map_or(f64::NAN, |r| r.interaction.scales.eta)
}

/// Number of located roots of spacing entry `entry` (0 when out of range).
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stripres_run_root_count(run: *const StripresRun, entry: usize) -> usize {
    handle(run).and_then(|o| o.results.get(entry)).map_or(0, |r| r.resonance.located.len())
}

/// Copy root `index` of spacing entry `entry` into `*out`.
///
/// # Safety
/// `run` must be null or a live handle and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn stripres_run_root(
    run: *const StripresRun,
    entry: usize,
    index: usize,
    out: *mut StripresRoot,
) -> StripresStatus {
    let Some(o) = handle(run) else {
        return invalid("run is null");
    };
    if out.is_null() {
        return invalid("out is null");
    }
    let Some(r) = o.results.get(entry) else {
        return invalid("spacing entry out of range");
    };
    let Some(root) = r.resonance.located.get(index) else {
        return invalid("root index out of range");
    };
    let pred = r
        .resonance
        .predicted
        .iter()
        .map(|p| p.value)
        .min_by(|a, b| (a - root.value).norm().total_cmp(&(b - root.value).norm()))
        .unwrap_or(stripres::C64::new(f64::NAN, f64::NAN));
    *out = StripresRoot {
        re: root.value.re,
        im: root.value.im,
        multiplicity: root.multiplicity as u32,
        predicted_re: pred.re,
        predicted_im: pred.im,
        residual: root.residual,
    };
    StripresStatus::Ok
}

/// Fitted slope of log max|lambda - lambda0| against the spacing; NaN when no fit was made.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stripres_run_rate_slope(run: *const StripresRun) -> f64 {
    handle(run).and_then(|o| o.rate_fit.as_ref()).map_or(f64::NAN, |f| f.slope)
}

/// 1 when every built-in check passed, 0 otherwise.
///
/// # Safety
/// `run` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn stripres_run_checks_passed(run: *const StripresRun) -> i32 {
    handle(run).is_some_and(|o| o.checks.iter().all(|c| c.passed)) as i32
}

/// Write all artifacts of the run into directory `dir`, creating it if needed.
///
/// # Safety
/// `run` must be a live handle and `dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn stripres_run_write(run: *const StripresRun, dir: *const c_char) -> StripresStatus {
    let Some(o) = handle(run) else {
        return invalid("run is null");
    };
    guarded(|| {
        let dir = match utf8(dir, "dir") {
            Ok(d) => d,
            Err(s) => return s,
        };
        match write_run(o, Path::new(dir)) {
            Ok(_) => StripresStatus::Ok,
            Err(e) => fail(&e),
        }
    })
}

/// Message of the last failure on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn stripres_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn stripres_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
