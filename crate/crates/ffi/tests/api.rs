use std::ffi::{c_char, c_int, CStr, CString};
use std::path::PathBuf;
use std::ptr;

use injsim_ffi::*;

fn scenario_path(name: &str) -> CString {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/scenarios").join(format!("{name}.json"));
    CString::new(p.to_str().unwrap()).unwrap()
}

fn last_error() -> String {
    let p = injsim_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

unsafe fn take(p: *mut c_char) -> String {
    let s = CStr::from_ptr(p).to_string_lossy().into_owned();
    injsim_string_free(p);
    s
}

unsafe fn load(name: &str) -> *mut InjsimScenario {
    let mut s = ptr::null_mut();
    assert_eq!(injsim_scenario_load(scenario_path(name).as_ptr(), &mut s), InjsimStatus::Ok);
    s
}

#[test]
fn run_and_audit_round_trip() {
    unsafe {
        let s = load("learning-groups");
        let mut r = ptr::null_mut();
        assert_eq!(injsim_run(s, 0, &mut r), InjsimStatus::Ok);
        let (mut trace, mut csv) = (ptr::null_mut(), ptr::null_mut());
        assert_eq!(injsim_run_trace(r, &mut trace), InjsimStatus::Ok);
        assert_eq!(injsim_run_metrics_csv(r, &mut csv), InjsimStatus::Ok);
        let mut passed: c_int = -1;
        let mut report = ptr::null_mut();
        assert_eq!(injsim_audit(trace, csv, &mut passed, &mut report), InjsimStatus::Ok);
        assert_eq!(passed, 1);
        assert!(!take(report).contains("FAIL"));

        let mut v = 0.0;
        let name = CString::new("coverage").unwrap();
        assert_eq!(injsim_run_metric(r, name.as_ptr(), &mut v), InjsimStatus::Ok);
        assert!((0.0..=1.0).contains(&v));
        let name = CString::new("ticks").unwrap();
        assert_eq!(injsim_run_metric(r, name.as_ptr(), &mut v), InjsimStatus::Ok);
        assert!(take(trace).lines().filter(|l| l.contains("\tTICK\t")).count() as f64 == v);
        injsim_string_free(csv);
        injsim_run_free(r);
        injsim_scenario_free(s);
    }
}

#[test]
fn seed_and_mode_overrides_apply() {
    unsafe {
        let s = load("bus-stop");
        let mode = CString::new("pure_adhoc").unwrap();
        assert_eq!(injsim_scenario_set_mode(s, mode.as_ptr()), InjsimStatus::Ok);
        assert_eq!(injsim_scenario_set_seed(s, 99), InjsimStatus::Ok);
        let mut r = ptr::null_mut();
        assert_eq!(injsim_run(s, 0, &mut r), InjsimStatus::Ok);
        let mut v = -1.0;
        let name = CString::new("backbone_messages").unwrap();
        assert_eq!(injsim_run_metric(r, name.as_ptr(), &mut v), InjsimStatus::Ok);
        assert_eq!(v, 0.0);
        let name = CString::new("seed").unwrap();
        assert_eq!(injsim_run_metric(r, name.as_ptr(), &mut v), InjsimStatus::Ok);
        assert_eq!(v, 99.0);

        let bad = CString::new("carrier_pigeon").unwrap();
        assert_eq!(injsim_scenario_set_mode(s, bad.as_ptr()), InjsimStatus::InvalidArgument);
        assert!(last_error().contains("carrier_pigeon"));
        injsim_run_free(r);
        injsim_scenario_free(s);
    }
}

#[test]
fn errors_map_to_status_codes() {
    unsafe {
        let mut s = ptr::null_mut();
        let bad = CString::new(r#"{ "name": "x", "duration": 5, "bounds": { "min": [0,0], "max": [1,1] }, "devices": [ { "id": 1, "register": ["ghost"] } ] }"#).unwrap();
        assert_eq!(injsim_scenario_parse(bad.as_ptr(), &mut s), InjsimStatus::ScenarioError);
        assert!(s.is_null());
        assert!(last_error().contains("devices[0].register[0]"));

        let missing = CString::new("/nonexistent/scenario.json").unwrap();
        assert_eq!(injsim_scenario_load(missing.as_ptr(), &mut s), InjsimStatus::Io);
        assert_eq!(injsim_scenario_parse(ptr::null(), &mut s), InjsimStatus::InvalidArgument);
        assert_eq!(injsim_run(ptr::null(), 0, &mut ptr::null_mut()), InjsimStatus::InvalidArgument);

        let s = load("bus-stop");
        let mut r = ptr::null_mut();
        assert_eq!(injsim_run(s, 0, &mut r), InjsimStatus::Ok);
        assert!(injsim_last_error_message().is_null());
        let mut v = 0.0;
        let name = CString::new("no_such_metric").unwrap();
        assert_eq!(injsim_run_metric(r, name.as_ptr(), &mut v), InjsimStatus::InvalidArgument);
        let name = CString::new("ledger_digest").unwrap();
        assert_eq!(injsim_run_metric(r, name.as_ptr(), &mut v), InjsimStatus::InvalidArgument);
        injsim_run_free(r);
        injsim_scenario_free(s);
        injsim_scenario_free(ptr::null_mut());
        injsim_string_free(ptr::null_mut());
    }
}

#[test]
fn tampered_artifacts_fail_the_audit() {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures");
    let trace = CString::new(std::fs::read_to_string(dir.join("deleted-record.trace")).unwrap()).unwrap();
    let csv = CString::new(std::fs::read_to_string(dir.join("deleted-record.csv")).unwrap()).unwrap();
    let mut passed: c_int = -1;
    let status = unsafe { injsim_audit(trace.as_ptr(), csv.as_ptr(), &mut passed, ptr::null_mut()) };
    assert_eq!(status, InjsimStatus::AuditFailed);
    assert_eq!(passed, 0);
    let junk = CString::new("not a trace").unwrap();
    let status = unsafe { injsim_audit(junk.as_ptr(), csv.as_ptr(), &mut passed, ptr::null_mut()) };
    assert_eq!(status, InjsimStatus::InvalidArgument);
}
