//! C interface to the simulator.
//!
//! Every fallible call returns an [`InjsimStatus`]. On failure the message is
//! available from [`injsim_last_error_message`] on the same thread. Strings
//! handed out by the library must be released with [`injsim_string_free`].

use std::cell::RefCell;
use std::ffi::{c_char, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use injsim::audit::audit_text;
use injsim::engine::{run, run_with_baselines, RunError, RunOutput};
use injsim::scenario::{parse_scenario, Mode, Scenario};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InjsimStatus {
    Ok = 0,
    ScenarioError = 1,
    RuntimeError = 2,
    InvalidArgument = 3,
    Io = 4,
    AuditFailed = 5,
}

/// Opaque parsed scenario.
pub struct InjsimScenario(Scenario);

/// Opaque finished run.
pub struct InjsimRun(RunOutput);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn fail(status: InjsimStatus, msg: impl Into<String>) -> InjsimStatus {
    set_error(msg);
    status
}

fn guard(f: impl FnOnce() -> InjsimStatus) -> InjsimStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(s) => s,
        Err(_) => fail(InjsimStatus::RuntimeError, "internal panic"),
    }
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, InjsimStatus> {
    if p.is_null() {
        return Err(fail(InjsimStatus::InvalidArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| fail(InjsimStatus::InvalidArgument, format!("{what} is not UTF-8")))
}

unsafe fn hand_out(s: String, out: *mut *mut c_char) -> InjsimStatus {
    match CString::new(s) {
        Ok(c) => {
            *out = c.into_raw();
            InjsimStatus::Ok
        }
        Err(_) => fail(InjsimStatus::RuntimeError, "output contains a NUL byte"),
    }
}

/// Parses a scenario from a NUL-terminated JSON document.
///
/// # Safety
/// `json` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn injsim_scenario_parse(json: *const c_char, out: *mut *mut InjsimScenario) -> InjsimStatus {
    guard(|| {
        if out.is_null() {
            return fail(InjsimStatus::InvalidArgument, "out is null");
        }
        *out = ptr::null_mut();
        let text = match read_str(json, "json") {
            Ok(t) => t,
            Err(s) => return s,
        };
        match parse_scenario(text) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(InjsimScenario(s)));
                InjsimStatus::Ok
            }
            Err(e) => fail(InjsimStatus::ScenarioError, e.to_string()),
        }
    })
}

/// Reads and parses a scenario file.
///
/// # Safety
/// `path` must be a valid C string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn injsim_scenario_load(path: *const c_char, out: *mut *mut InjsimScenario) -> InjsimStatus {
    guard(|| {
        if out.is_null() {
            return fail(InjsimStatus::InvalidArgument, "out is null");
        }
        *out = ptr::null_mut();
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        let text = match std::fs::read_to_string(path) {
            Ok(t) => t,
            Err(e) => return fail(InjsimStatus::Io, format!("{path}: {e}")),
        };
        match parse_scenario(&text) {
            Ok(s) => {
                *out = Box::into_raw(Box::new(InjsimScenario(s)));
                InjsimStatus::Ok
            }
            Err(e) => fail(InjsimStatus::ScenarioError, format!("{path}: {e}")),
        }
    })
}

/// # Safety
/// `scenario` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn injsim_scenario_free(scenario: *mut InjsimScenario) {
    if !scenario.is_null() {
        drop(Box::from_raw(scenario));
    }
}

/// # Safety
/// `scenario` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn injsim_scenario_set_seed(scenario: *mut InjsimScenario, seed: u64) -> InjsimStatus {
    guard(|| match scenario.as_mut() {
        Some(s) => {
            s.0.seed = seed;
            InjsimStatus::Ok
        }
        None => fail(InjsimStatus::InvalidArgument, "scenario is null"),
    })
}

/// `mode` is one of `injection`, `pure_backbone`, `pure_adhoc`.
///
/// # Safety
/// `scenario` must be a live handle and `mode` a valid C string.
#[no_mangle]
pub unsafe extern "C" fn injsim_scenario_set_mode(scenario: *mut InjsimScenario, mode: *const c_char) -> InjsimStatus {
    guard(|| {
        let Some(s) = scenario.as_mut() else {
            return fail(InjsimStatus::InvalidArgument, "scenario is null");
        };
        let text = match read_str(mode, "mode") {
            Ok(t) => t,
            Err(st) => return st,
        };
        match text.parse::<Mode>() {
            Ok(m) => {
                s.0.mode = m;
                InjsimStatus::Ok
            }
            Err(e) => fail(InjsimStatus::InvalidArgument, e),
        }
    })
}

/// Runs a scenario to completion. A non-zero `baselines` also runs the
/// pure-backbone and pure-ad-hoc comparisons and fills their metric columns.
///
/// # Safety
/// `scenario` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn injsim_run(scenario: *const InjsimScenario, baselines: c_int, out: *mut *mut InjsimRun) -> InjsimStatus {
    guard(|| {
        if out.is_null() {
            return fail(InjsimStatus::InvalidArgument, "out is null");
        }
        *out = ptr::null_mut();
        let Some(s) = scenario.as_ref() else {
            return fail(InjsimStatus::InvalidArgument, "scenario is null");
        };
        let result = if baselines != 0 { run_with_baselines(&s.0) } else { run(&s.0) };
        match result {
            Ok(o) => {
                *out = Box::into_raw(Box::new(InjsimRun(o)));
                InjsimStatus::Ok
            }
            Err(RunError::Scenario(e)) => fail(InjsimStatus::ScenarioError, e.to_string()),
            Err(e) => fail(InjsimStatus::RuntimeError, e.to_string()),
        }
    })
}

/// # Safety
/// `run` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn injsim_run_free(run: *mut InjsimRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

/// The run's trace as text. Free the result with `injsim_string_free`.
///
/// # Safety
/// `run` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn injsim_run_trace(run: *const InjsimRun, out: *mut *mut c_char) -> InjsimStatus {
    guard(|| match (run.as_ref(), out.is_null()) {
        (Some(r), false) => hand_out(r.0.trace_text(), out),
        _ => fail(InjsimStatus::InvalidArgument, "run or out is null"),
    })
}

/// The metrics table (header plus one row). Free the result with `injsim_string_free`.
///
/// # Safety
/// `run` must be a live handle and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn injsim_run_metrics_csv(run: *const InjsimRun, out: *mut *mut c_char) -> InjsimStatus {
    guard(|| match (run.as_ref(), out.is_null()) {
        (Some(r), false) => hand_out(r.0.metrics.to_csv(), out),
        _ => fail(InjsimStatus::InvalidArgument, "run or out is null"),
    })
}

/// One numeric metric column by name. Empty or non-numeric columns are an
/// `InvalidArgument`.
///
/// # Safety
/// `run` must be a live handle, `name` a valid C string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn injsim_run_metric(run: *const InjsimRun, name: *const c_char, out: *mut f64) -> InjsimStatus {
    guard(|| {
        let (Some(r), false) = (run.as_ref(), out.is_null()) else {
            return fail(InjsimStatus::InvalidArgument, "run or out is null");
        };
        let name = match read_str(name, "name") {
            Ok(n) => n,
            Err(s) => return s,
        };
        let cols = r.0.metrics.columns();
        let Some((_, value)) = cols.iter().find(|(k, _)| *k == name) else {
            return fail(InjsimStatus::InvalidArgument, format!("no metric `{name}`"));
        };
        match value.parse::<f64>() {
            Ok(v) => {
                *out = v;
                InjsimStatus::Ok
            }
            Err(_) => fail(InjsimStatus::InvalidArgument, format!("metric `{name}` is not numeric: `{value}`")),
        }
    })
}

/// Audits a trace against a metrics table. `passed` is set to 1 or 0 and, if
/// `report` is non-null, it receives the rendered report. A failed audit
/// returns `AuditFailed`; unparsable input returns `InvalidArgument`.
///
/// # Safety
/// `trace` and `metrics_csv` must be valid C strings; `passed` and `report`
/// must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn injsim_audit(
    trace: *const c_char,
    metrics_csv: *const c_char,
    passed: *mut c_int,
    report: *mut *mut c_char,
) -> InjsimStatus {
    guard(|| {
        if !report.is_null() {
            *report = ptr::null_mut();
        }
        let (t, m) = match (read_str(trace, "trace"), read_str(metrics_csv, "metrics_csv")) {
            (Ok(t), Ok(m)) => (t, m),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        let r = match audit_text(t, m) {
            Ok(r) => r,
            Err(e) => return fail(InjsimStatus::InvalidArgument, e),
        };
        if !passed.is_null() {
            *passed = c_int::from(r.passed());
        }
        if !report.is_null() {
            let st = hand_out(r.render(), report);
            if st != InjsimStatus::Ok {
                return st;
            }
        }
        if r.passed() {
            InjsimStatus::Ok
        } else {
            fail(InjsimStatus::AuditFailed, format!("audit failed with {} problem(s)", r.problems.len()))
        }
    })
}

/// # Safety
/// `s` must come from this library and not be used afterwards. Null is ignored.
#[no_mangle]
pub unsafe extern "C" fn injsim_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next library call on the same thread.
#[no_mangle]
pub extern "C" fn injsim_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}
