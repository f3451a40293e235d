//! C ABI for signalroom. Sessions are opaque handles around a completed
//! pipeline run; every string returned to the caller is heap-allocated and
//! must be released with `sr_string_free`.
//!
//! All functions are null-safe: a null required argument yields
//! `SR_STATUS_NULL_POINTER` and leaves out-parameters untouched.

use std::ffi::{c_char, CStr, CString};

use signalroom::agent::{Agent, AgentConfig};
use signalroom::introspect::{answer_probe, AgentStores, ProbeQuery};
use signalroom::world::load_scenario;

/// Status codes returned by every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SrStatus {
    /// Success.
    Ok = 0,
    /// A required pointer argument was null.
    NullPointer = 1,
    /// A string argument was not valid UTF-8.
    InvalidUtf8 = 2,
    /// The scenario document failed to load or validate.
    BadScenario = 3,
    /// The agent pipeline failed (integrity fault, mining error, ...).
    RunFailed = 4,
    /// The probe query was malformed or referenced an unknown name.
    BadQuery = 5,
}

/// Opaque session: the stores of one completed run.
pub struct SrSession {
    stores: AgentStores,
}

fn read_str<'a>(p: *const c_char) -> Result<&'a str, SrStatus> {
    if p.is_null() {
        return Err(SrStatus::NullPointer);
    }
    unsafe { CStr::from_ptr(p) }
        .to_str()
        .map_err(|_| SrStatus::InvalidUtf8)
}

fn give_string(s: String, out: *mut *mut c_char) -> SrStatus {
    // interior NULs cannot occur in our JSON output, but stay defensive
    match CString::new(s) {
        Ok(c) => {
            unsafe { *out = c.into_raw() };
            SrStatus::Ok
        }
        Err(_) => SrStatus::RunFailed,
    }
}

/// Library version as a static string; never freed by the caller.
#[no_mangle]
pub extern "C" fn sr_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Run the full pipeline on a scenario JSON document and return a session
/// handle through `out_session`. The handle must be released with
/// `sr_session_free`.
#[no_mangle]
pub extern "C" fn sr_session_run(
    scenario_json: *const c_char,
    out_session: *mut *mut SrSession,
) -> SrStatus {
    if out_session.is_null() {
        return SrStatus::NullPointer;
    }
    let text = match read_str(scenario_json) {
        Ok(t) => t,
        Err(s) => return s,
    };
    let world = match load_scenario(text) {
        Ok(w) => w,
        Err(_) => return SrStatus::BadScenario,
    };
    let config = AgentConfig::for_world(&world);
    match Agent::run_full(world, config) {
        Ok((_, stores)) => {
            let handle = Box::new(SrSession { stores });
            unsafe { *out_session = Box::into_raw(handle) };
            SrStatus::Ok
        }
        Err(_) => SrStatus::RunFailed,
    }
}

/// Release a session handle. Null is a no-op.
#[no_mangle]
pub extern "C" fn sr_session_free(session: *mut SrSession) {
    if !session.is_null() {
        drop(unsafe { Box::from_raw(session) });
    }
}

/// Number of mined rules in the session, or -1 on null.
#[no_mangle]
pub extern "C" fn sr_session_rule_count(session: *const SrSession) -> i64 {
    match unsafe { session.as_ref() } {
        Some(s) => s.stores.rules.len() as i64,
        None => -1,
    }
}

/// Number of recall objects (qualia) in the session, or -1 on null.
#[no_mangle]
pub extern "C" fn sr_session_recall_object_count(session: *const SrSession) -> i64 {
    match unsafe { session.as_ref() } {
        Some(s) => s.stores.recall_objects.len() as i64,
        None => -1,
    }
}

/// Serialize the whole store bundle as JSON into `out_json` (caller frees
/// with `sr_string_free`).
#[no_mangle]
pub extern "C" fn sr_session_stores_json(
    session: *const SrSession,
    out_json: *mut *mut c_char,
) -> SrStatus {
    if out_json.is_null() {
        return SrStatus::NullPointer;
    }
    let Some(s) = (unsafe { session.as_ref() }) else {
        return SrStatus::NullPointer;
    };
    give_string(
        serde_json::to_string(&s.stores).expect("stores serialize"),
        out_json,
    )
}

/// Answer one probe query, given and returned as JSON. Unknown names and
/// malformed queries yield `SR_STATUS_BAD_QUERY` with no answer written.
#[no_mangle]
pub extern "C" fn sr_session_probe(
    session: *const SrSession,
    query_json: *const c_char,
    out_answer_json: *mut *mut c_char,
) -> SrStatus {
    if out_answer_json.is_null() {
        return SrStatus::NullPointer;
    }
    let Some(s) = (unsafe { session.as_ref() }) else {
        return SrStatus::NullPointer;
    };
    let text = match read_str(query_json) {
        Ok(t) => t,
        Err(st) => return st,
    };
    let query: ProbeQuery = match serde_json::from_str(text) {
        Ok(q) => q,
        Err(_) => return SrStatus::BadQuery,
    };
    let answer = answer_probe(&s.stores, &query);
    if answer.is_fault() {
        return SrStatus::BadQuery;
    }
    give_string(
        serde_json::to_string(&answer).expect("answer serialize"),
        out_answer_json,
    )
}

/// Release a string produced by this library. Null is a no-op.
#[no_mangle]
pub extern "C" fn sr_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(unsafe { CString::from_raw(s) });
    }
}
