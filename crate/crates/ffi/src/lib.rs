//! C ABI over the `tspbmc` verifier.
//!
//! Conventions: every fallible call returns a [`TspStatus`]; on failure a
//! message is available from [`tsp_last_error_message`] on the same thread.
//! Strings handed out by the library are NUL-terminated, owned by the caller
//! and released with [`tsp_string_free`]. Models are opaque handles released
//! with [`tsp_model_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::ptr;
use std::time::Duration;

use tspbmc::encode::{encode, BmcProblem};
use tspbmc::library;
use tspbmc::model::{build_model, TiisModel};
use tspbmc::oracle::{explicit_reach, OracleOutcome};
use tspbmc::protocol::{parse_protocol, parse_scenario, ProtocolSpec, Scenario};
use tspbmc::solver::{iterate_bounds, Outcome, SolverConfig};
use tspbmc::witness::{decode, render_json, replay, Trace};

/// Result codes shared by all entry points.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TspStatus {
    Ok = 0,
    /// A required pointer argument was null.
    NullArgument = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// Protocol, scenario or parameters were rejected.
    InvalidInput = 3,
    /// The solver could not decide some bound (timeout, unknown, missing binary).
    Inconclusive = 4,
    /// A produced witness failed its own replay check.
    Internal = 5,
}

/// Outcome of an attack search.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TspVerdict {
    NoAttack = 0,
    AttackFound = 1,
}

/// Instantiated protocol model.
pub struct TspModel {
    inner: TiisModel,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl ToString) {
    let c = CString::new(msg.to_string().replace('\0', " ")).expect("NULs removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn fail(status: TspStatus, msg: impl ToString) -> TspStatus {
    set_error(msg);
    status
}

/// Borrows a C string; `Ok(None)` for a null pointer.
unsafe fn opt_str<'a>(p: *const c_char) -> Result<Option<&'a str>, TspStatus> {
    if p.is_null() {
        return Ok(None);
    }
    CStr::from_ptr(p)
        .to_str()
        .map(Some)
        .map_err(|_| fail(TspStatus::InvalidUtf8, "argument is not valid UTF-8"))
}

unsafe fn req_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, TspStatus> {
    opt_str(p)?.ok_or_else(|| fail(TspStatus::NullArgument, format!("{what} is null")))
}

fn into_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).expect("NULs removed").into_raw()
}

macro_rules! tri {
    ($e:expr) => {
        match $e {
            Ok(v) => v,
            Err(status) => return status,
        }
    };
}

fn instantiate(spec: &ProtocolSpec, scenario: Scenario, sessions: u32) -> Result<TiisModel, TspStatus> {
    let k = if sessions == 0 { scenario.default_sessions() } else { sessions };
    build_model(spec, &scenario, k).map_err(|e| fail(TspStatus::InvalidInput, e))
}

unsafe fn store_model(model: TiisModel, out: *mut *mut TspModel) -> TspStatus {
    *out = Box::into_raw(Box::new(TspModel { inner: model }));
    TspStatus::Ok
}

/// Builds a model from protocol source text and scenario JSON.
///
/// `scenario_json` may be null for the fair scenario; `sessions == 0` uses the
/// scenario's default session count.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsp_model_new(
    protocol: *const c_char,
    scenario_json: *const c_char,
    sessions: u32,
    out: *mut *mut TspModel,
) -> TspStatus {
    if out.is_null() {
        return fail(TspStatus::NullArgument, "out is null");
    }
    let text = tri!(req_str(protocol, "protocol"));
    let spec = tri!(parse_protocol(text).map_err(|e| fail(TspStatus::InvalidInput, e)));
    let scenario = match tri!(opt_str(scenario_json)) {
        None => Scenario::fair(),
        Some(j) => tri!(parse_scenario(j, &spec.signature()).map_err(|e| fail(TspStatus::InvalidInput, e))),
    };
    let model = tri!(instantiate(&spec, scenario, sessions));
    store_model(model, out)
}

/// Builds a model from a built-in protocol and one of its scenarios.
///
/// # Safety
/// String arguments must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsp_model_from_library(
    protocol: *const c_char,
    scenario: *const c_char,
    sessions: u32,
    out: *mut *mut TspModel,
) -> TspStatus {
    if out.is_null() {
        return fail(TspStatus::NullArgument, "out is null");
    }
    let name = tri!(req_str(protocol, "protocol"));
    let sname = tri!(req_str(scenario, "scenario"));
    let Some(entry) = library::find(name) else {
        return fail(TspStatus::InvalidInput, format!("no library protocol `{name}`"));
    };
    let Some(stext) = entry.scenario(sname) else {
        return fail(TspStatus::InvalidInput, format!("`{name}` has no scenario `{sname}`"));
    };
    let spec = tri!(parse_protocol(entry.protocol).map_err(|e| fail(TspStatus::Internal, e)));
    let sc = tri!(parse_scenario(stext, &spec.signature()).map_err(|e| fail(TspStatus::Internal, e)));
    let model = tri!(instantiate(&spec, sc, sessions));
    store_model(model, out)
}

/// Releases a model. Null is ignored.
///
/// # Safety
/// `model` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tsp_model_free(model: *mut TspModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

unsafe fn model_ref<'a>(model: *const TspModel) -> Result<&'a TiisModel, TspStatus> {
    model
        .as_ref()
        .map(|m| &m.inner)
        .ok_or_else(|| fail(TspStatus::NullArgument, "model is null"))
}

/// Number of sessions the model was instantiated with.
///
/// # Safety
/// `model` must be a live handle or null (returns 0).
#[no_mangle]
pub unsafe extern "C" fn tsp_model_sessions(model: *const TspModel) -> u32 {
    model.as_ref().map_or(0, |m| m.inner.sessions)
}

/// SMT-LIB2 script for exactly `bound` steps.
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsp_model_encode(model: *const TspModel, bound: usize, out: *mut *mut c_char) -> TspStatus {
    let m = tri!(model_ref(model));
    if out.is_null() {
        return fail(TspStatus::NullArgument, "out is null");
    }
    let script = tri!(encode(&BmcProblem { model: m, bound }).map_err(|e| fail(TspStatus::InvalidInput, e)));
    *out = into_c(script.text);
    TspStatus::Ok
}

/// The model as JSON (universe, rules, exec steps, initial knowledge).
///
/// # Safety
/// `model` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsp_model_dump_json(model: *const TspModel, out: *mut *mut c_char) -> TspStatus {
    let m = tri!(model_ref(model));
    if out.is_null() {
        return fail(TspStatus::NullArgument, "out is null");
    }
    *out = into_c(m.dump_json());
    TspStatus::Ok
}

unsafe fn write_result(
    model: &TiisModel,
    found: Option<(usize, Trace)>,
    limit: usize,
    out_verdict: *mut TspVerdict,
    out_bound: *mut usize,
    out_witness_json: *mut *mut c_char,
) -> TspStatus {
    let (verdict, bound, witness) = match found {
        Some((b, trace)) => {
            if let Err(v) = replay(&trace, model) {
                return fail(TspStatus::Internal, format!("witness failed replay: {v}"));
            }
            (TspVerdict::AttackFound, b, into_c(render_json(&trace)))
        }
        None => (TspVerdict::NoAttack, limit, ptr::null_mut()),
    };
    *out_verdict = verdict;
    if !out_bound.is_null() {
        *out_bound = bound;
    }
    if out_witness_json.is_null() {
        if !witness.is_null() {
            drop(CString::from_raw(witness));
        }
    } else {
        *out_witness_json = witness;
    }
    TspStatus::Ok
}

/// Explicit-state search up to `depth` steps.
///
/// On success `*out_verdict` is set; `*out_bound` receives the attack depth
/// (or `depth` when none was found) and `*out_witness_json` the witness (null
/// when no attack). `out_bound` and `out_witness_json` may be null.
///
/// # Safety
/// `model` must be a live handle; non-null out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsp_oracle(
    model: *const TspModel,
    depth: usize,
    out_verdict: *mut TspVerdict,
    out_bound: *mut usize,
    out_witness_json: *mut *mut c_char,
) -> TspStatus {
    let m = tri!(model_ref(model));
    if out_verdict.is_null() {
        return fail(TspStatus::NullArgument, "out_verdict is null");
    }
    let found = match tri!(explicit_reach(m, depth).map_err(|e| fail(TspStatus::InvalidInput, e))) {
        OracleOutcome::AttackFound { depth, trace } => Some((depth, trace)),
        OracleOutcome::NoAttackUpTo(_) => None,
    };
    write_result(m, found, depth, out_verdict, out_bound, out_witness_json)
}

/// SMT search with bound deepening.
///
/// `max_bound == 0` means twice the number of exec steps, `timeout_secs == 0`
/// means 60 seconds, and a null `solver` falls back to `$TSPBMC_SOLVER` and
/// then `z3 -in`. Outputs as for [`tsp_oracle`].
///
/// # Safety
/// `model` must be a live handle; `solver` null or NUL-terminated; non-null
/// out pointers must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsp_check(
    model: *const TspModel,
    max_bound: usize,
    solver: *const c_char,
    timeout_secs: u64,
    out_verdict: *mut TspVerdict,
    out_bound: *mut usize,
    out_witness_json: *mut *mut c_char,
) -> TspStatus {
    let m = tri!(model_ref(model));
    if out_verdict.is_null() {
        return fail(TspStatus::NullArgument, "out_verdict is null");
    }
    let mut config = SolverConfig::with_command(tri!(opt_str(solver)));
    if timeout_secs > 0 {
        config.timeout = Duration::from_secs(timeout_secs);
    }
    if max_bound > 0 {
        config.max_bound = Some(max_bound);
    }
    let verdict = tri!(iterate_bounds(m, &config).map_err(|e| fail(TspStatus::InvalidInput, e)));
    let found = match verdict.outcome {
        Outcome::AttackFound { bound, result, script } => {
            let trace = tri!(decode(&result, &script, m).map_err(|e| fail(TspStatus::Internal, e)));
            Some((bound, trace))
        }
        Outcome::NoAttackUpTo(_) => None,
        Outcome::Inconclusive(reason) => return fail(TspStatus::Inconclusive, reason),
    };
    let limit = config.effective_max_bound(m);
    write_result(m, found, limit, out_verdict, out_bound, out_witness_json)
}

/// Built-in library listing, one `protocol: scenario, scenario, ...` per line.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn tsp_library_list(out: *mut *mut c_char) -> TspStatus {
    if out.is_null() {
        return fail(TspStatus::NullArgument, "out is null");
    }
    let mut s = String::new();
    for e in library::LIBRARY {
        let names: Vec<&str> = e.scenarios.iter().map(|(n, _)| *n).collect();
        s.push_str(&format!("{}: {}\n", e.name, names.join(", ")));
    }
    *out = into_c(s);
    TspStatus::Ok
}

/// Message of the last failed call on this thread, or null. The pointer stays
/// valid until the next failing call on the same thread; do not free it.
#[no_mangle]
pub extern "C" fn tsp_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn tsp_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}
