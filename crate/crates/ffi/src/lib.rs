//! C ABI over the synthesis pipeline: opaque handles, integer status codes,
//! JSON strings for structured data. See `include/ltlcbf.h`.

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::path::Path;
use std::ptr;

use ltlcbf::controller::{ControlContext, Schedule};
use ltlcbf::scenario::{default_t_end, load_scenario, plan_artifact, synthesize, Scenario, Synthesis};
use ltlcbf::sim::{simulate, write_outputs, FailureKind};

/// Status codes returned by every fallible function.
#[repr(C)]
pub enum LtlcbfStatus {
    Ok = 0,
    ConfigError = 2,
    InfeasibleOrViolation = 3,
    InternalError = 4,
    NullArgument = 5,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg).unwrap_or_else(|_| CString::new("invalid error text").unwrap());
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Loaded scenario plus its synthesized plan; opaque to C callers.
pub struct LtlcbfScenario {
    scenario: Scenario,
    synthesis: Synthesis,
}

/// Last error message for this thread, or NULL. Owned by the library;
/// valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn ltlcbf_last_error() -> *const c_char {
    LAST_ERROR.with(|e| match &*e.borrow() {
        Some(c) => c.as_ptr(),
        None => ptr::null(),
    })
}

/// Load a scenario JSON file and synthesize its plan.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` must be a valid pointer.
/// On success `*out` owns a handle that must be released with
/// [`ltlcbf_scenario_free`].
#[no_mangle]
pub unsafe extern "C" fn ltlcbf_scenario_load(
    path: *const c_char,
    run_index: c_int,
    no_guards: c_int,
    out: *mut *mut LtlcbfScenario,
) -> c_int {
    if path.is_null() || out.is_null() {
        return LtlcbfStatus::NullArgument as c_int;
    }
    let path = match CStr::from_ptr(path).to_str() {
        Ok(s) => s,
        Err(_) => {
            set_error("path is not valid UTF-8".into());
            return LtlcbfStatus::ConfigError as c_int;
        }
    };
    let scenario = match load_scenario(Path::new(path)) {
        Ok(s) => s,
        Err(e) => {
            set_error(e.to_string());
            return LtlcbfStatus::ConfigError as c_int;
        }
    };
    let run = if run_index < 0 { None } else { Some(run_index as usize) };
    let synthesis = match synthesize(&scenario, run, no_guards != 0) {
        Ok(s) => s,
        Err(e) => {
            set_error(e.to_string());
            return LtlcbfStatus::ConfigError as c_int;
        }
    };
    *out = Box::into_raw(Box::new(LtlcbfScenario { scenario, synthesis }));
    LtlcbfStatus::Ok as c_int
}

/// # Safety
/// `handle` must come from [`ltlcbf_scenario_load`] and not already be freed.
#[no_mangle]
pub unsafe extern "C" fn ltlcbf_scenario_free(handle: *mut LtlcbfScenario) {
    if !handle.is_null() {
        drop(Box::from_raw(handle));
    }
}

/// Plan artifact as a JSON string; free with [`ltlcbf_string_free`].
///
/// # Safety
/// `handle` must be a live scenario handle.
#[no_mangle]
pub unsafe extern "C" fn ltlcbf_plan_json(handle: *const LtlcbfScenario) -> *mut c_char {
    if handle.is_null() {
        return ptr::null_mut();
    }
    let h = &*handle;
    let artifact = plan_artifact(&h.scenario, &h.synthesis);
    match serde_json::to_string_pretty(&artifact) {
        Ok(json) => CString::new(json).map(CString::into_raw).unwrap_or(ptr::null_mut()),
        Err(_) => ptr::null_mut(),
    }
}

/// Simulate the closed loop, writing the trajectory CSV and verdict JSON to
/// the given paths. `dt` and `t_end` fall back to the scenario's values when
/// not positive. `simultaneous` collapses all spec windows (the comparison
/// baseline). Returns `Ok` when the run completed without failure,
/// `InfeasibleOrViolation` when the verdict records one.
///
/// # Safety
/// `handle` must be live; `csv_path` and `verdict_path` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn ltlcbf_simulate(
    handle: *const LtlcbfScenario,
    dt: c_double,
    t_end: c_double,
    simultaneous: c_int,
    csv_path: *const c_char,
    verdict_path: *const c_char,
) -> c_int {
    if handle.is_null() || csv_path.is_null() || verdict_path.is_null() {
        return LtlcbfStatus::NullArgument as c_int;
    }
    let h = &*handle;
    let (csv, verdict) = match (CStr::from_ptr(csv_path).to_str(), CStr::from_ptr(verdict_path).to_str()) {
        (Ok(a), Ok(b)) => (a, b),
        _ => {
            set_error("output path is not valid UTF-8".into());
            return LtlcbfStatus::ConfigError as c_int;
        }
    };
    let schedule = if simultaneous != 0 { Schedule::Simultaneous } else { Schedule::Windows };
    let ctx = ControlContext {
        plan: &h.synthesis.plan,
        barriers: &h.synthesis.barriers,
        model: &h.scenario.model,
        props: &h.scenario.props,
        params: &h.scenario.params,
        schedule,
    };
    let dt = if dt > 0.0 { dt } else { h.scenario.sim.dt };
    let t_end = if t_end > 0.0 {
        t_end
    } else {
        default_t_end(&h.scenario, &h.synthesis.plan)
    };
    let result = simulate(&ctx, &h.scenario.dra, dt, t_end);
    if let Err(e) = write_outputs(&result, &ctx, &h.scenario.dra, Path::new(csv), Path::new(verdict)) {
        set_error(e.to_string());
        return LtlcbfStatus::InternalError as c_int;
    }
    match &result.verdict.failure {
        None => LtlcbfStatus::Ok as c_int,
        Some(f) => {
            set_error(f.detail.clone());
            match f.kind {
                FailureKind::Internal => LtlcbfStatus::InternalError as c_int,
                _ => LtlcbfStatus::InfeasibleOrViolation as c_int,
            }
        }
    }
}

/// # Safety
/// `s` must be a pointer previously returned by this library's
/// string-returning functions, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn ltlcbf_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
