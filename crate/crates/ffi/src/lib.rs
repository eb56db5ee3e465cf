//! C ABI over the hlmpc runner.
//!
//! Every function returns an [`HlmpcStatus`]; on failure the message is
//! available from [`hlmpc_last_error_message`] on the same thread. Runners are
//! opaque handles created by `hlmpc_runner_from_*` and released with
//! [`hlmpc_runner_free`]. Panics never cross the boundary.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use hlmpc::config::{load_config, RunConfig};
use hlmpc::orchestrator::Runner;
use hlmpc::output::emit_outputs;
use hlmpc::Error;

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HlmpcStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidString = 2,
    Config = 3,
    Io = 4,
    Initialization = 5,
    NoFeasiblePlan = 6,
    Invariant = 7,
    OutOfRange = 8,
    Internal = 9,
}

/// Opaque runner handle.
pub struct HlmpcRunner {
    inner: Runner,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn status_of(err: &Error) -> HlmpcStatus {
    match err {
        Error::Config(_) | Error::Input(_) => HlmpcStatus::Config,
        Error::Io { .. } => HlmpcStatus::Io,
        Error::Initialization(_) => HlmpcStatus::Initialization,
        Error::NoFeasiblePlan { .. } => HlmpcStatus::NoFeasiblePlan,
        Error::Refused(_) | Error::Domain(_) => HlmpcStatus::OutOfRange,
        Error::Invariant(_) | Error::InfeasibleRoute(_) | Error::Protocol(_) => HlmpcStatus::Invariant,
    }
}

fn guard(f: impl FnOnce() -> Result<(), HlmpcStatus>) -> HlmpcStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => HlmpcStatus::Ok,
        Ok(Err(status)) => status,
        Err(_) => {
            set_error("internal panic");
            HlmpcStatus::Internal
        }
    }
}

fn fail(err: Error) -> HlmpcStatus {
    let status = status_of(&err);
    set_error(err.to_string());
    status
}

unsafe fn str_arg<'a>(p: *const c_char) -> Result<&'a str, HlmpcStatus> {
    if p.is_null() {
        set_error("null string argument");
        return Err(HlmpcStatus::NullPointer);
    }
    CStr::from_ptr(p).to_str().map_err(|_| {
        set_error("string argument is not UTF-8");
        HlmpcStatus::InvalidString
    })
}

unsafe fn runner_ref<'a>(p: *const HlmpcRunner) -> Result<&'a HlmpcRunner, HlmpcStatus> {
    p.as_ref().ok_or_else(|| {
        set_error("null runner");
        HlmpcStatus::NullPointer
    })
}

unsafe fn runner_mut<'a>(p: *mut HlmpcRunner) -> Result<&'a mut HlmpcRunner, HlmpcStatus> {
    p.as_mut().ok_or_else(|| {
        set_error("null runner");
        HlmpcStatus::NullPointer
    })
}

unsafe fn store<T>(out: *mut T, value: T) -> Result<(), HlmpcStatus> {
    if out.is_null() {
        set_error("null output pointer");
        return Err(HlmpcStatus::NullPointer);
    }
    out.write(value);
    Ok(())
}

fn create(cfg: Result<RunConfig, Error>, out: *mut *mut HlmpcRunner) -> Result<(), HlmpcStatus> {
    if out.is_null() {
        set_error("null output pointer");
        return Err(HlmpcStatus::NullPointer);
    }
    let runner = cfg.and_then(|cfg| Runner::from_config(&cfg)).map_err(fail)?;
    let handle = Box::into_raw(Box::new(HlmpcRunner { inner: runner }));
    // SAFETY: checked non-null above.
    unsafe { out.write(handle) };
    Ok(())
}

/// Loads and validates a configuration file, then builds the initial
/// iteration. On success `*out` receives a new handle.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hlmpc_runner_from_path(path: *const c_char, out: *mut *mut HlmpcRunner) -> HlmpcStatus {
    guard(|| {
        let path = str_arg(path)?;
        create(load_config(path), out)
    })
}

/// Same as [`hlmpc_runner_from_path`] with the configuration given as JSON.
///
/// # Safety
/// `json` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hlmpc_runner_from_json(json: *const c_char, out: *mut *mut HlmpcRunner) -> HlmpcStatus {
    guard(|| {
        let json = str_arg(json)?;
        create(RunConfig::from_json(json), out)
    })
}

/// Runs one more iteration.
///
/// # Safety
/// `runner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hlmpc_runner_run_iteration(runner: *mut HlmpcRunner) -> HlmpcStatus {
    guard(|| {
        let r = runner_mut(runner)?;
        r.inner.run_iteration().map(|_| ()).map_err(fail)
    })
}

/// Runs `iterations` more iterations.
///
/// # Safety
/// `runner` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn hlmpc_runner_run(runner: *mut HlmpcRunner, iterations: usize) -> HlmpcStatus {
    guard(|| {
        let r = runner_mut(runner)?;
        r.inner.run(iterations).map_err(fail)
    })
}

/// Number of archived iterations, the initial one included.
///
/// # Safety
/// `runner` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hlmpc_runner_iteration_count(runner: *const HlmpcRunner, out: *mut usize) -> HlmpcStatus {
    guard(|| {
        let r = runner_ref(runner)?;
        store(out, r.inner.archive.len())
    })
}

fn metrics(r: &HlmpcRunner, iteration: usize) -> Result<&hlmpc::orchestrator::IterationMetrics, HlmpcStatus> {
    r.inner.metrics.get(iteration).ok_or_else(|| {
        set_error(format!("iteration {iteration} not archived"));
        HlmpcStatus::OutOfRange
    })
}

/// Tasks completed in `iteration`.
///
/// # Safety
/// `runner` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn hlmpc_runner_tasks(runner: *const HlmpcRunner, iteration: usize, out: *mut usize) -> HlmpcStatus {
    guard(|| {
        let m = metrics(runner_ref(runner)?, iteration)?;
        store(out, m.tasks)
    })
}

/// Charge used and time elapsed over `iteration`.
///
/// # Safety
/// `runner` must be a live handle; both outputs must be writable.
#[no_mangle]
pub unsafe extern "C" fn hlmpc_runner_totals(
    runner: *const HlmpcRunner,
    iteration: usize,
    soc: *mut f64,
    time: *mut f64,
) -> HlmpcStatus {
    guard(|| {
        let m = metrics(runner_ref(runner)?, iteration)?;
        if soc.is_null() || time.is_null() {
            set_error("null output pointer");
            return Err(HlmpcStatus::NullPointer);
        }
        store(soc, m.total_soc)?;
        store(time, m.total_time)
    })
}

/// Writes the output files into `out_dir`.
///
/// # Safety
/// `runner` must be a live handle; `out_dir` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn hlmpc_runner_write_outputs(
    runner: *const HlmpcRunner,
    out_dir: *const c_char,
    dump_learning: bool,
) -> HlmpcStatus {
    guard(|| {
        let r = runner_ref(runner)?;
        let dir = str_arg(out_dir)?;
        emit_outputs(&r.inner, Path::new(dir), dump_learning).map(|_| ()).map_err(fail)
    })
}

/// Releases a handle. Null is ignored.
///
/// # Safety
/// `runner` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn hlmpc_runner_free(runner: *mut HlmpcRunner) {
    if !runner.is_null() {
        drop(Box::from_raw(runner));
    }
}

/// Message of the last failure on this thread, or null. Valid until the next
/// failing call on the same thread.
#[no_mangle]
pub extern "C" fn hlmpc_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn hlmpc_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
