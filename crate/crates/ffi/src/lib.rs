//! C ABI over scenario replay, metrics and alert validation.
//!
//! Every fallible call returns a [`TriageStatus`]; on failure the message is
//! available from [`triage_last_error`] on the same thread. Strings handed
//! out by this library are freed with [`triage_string_free`], replay handles
//! with [`triage_replay_free`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;

use triage_core::gateway::{ClockSource, Gateway};
use triage_core::incident::{read_ndjson, to_ndjson, write_ndjson, IncidentRecord};
use triage_core::metrics::{render_report, MetricsReport, ReportFormat};
use triage_core::replay::{replay, ReplayError, ReplayInputs, ReplayOptions, ReplayOutcome};

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriageStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    NotFound = 4,
    Io = 5,
    Runtime = 6,
    Panic = 7,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriageCohort {
    Agent = 0,
    Manual = 1,
}

/// Cohort metrics. Undefined values (no summarized incidents, no ground
/// truth, no step data) are NaN.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TriageMetrics {
    pub n_alerts: usize,
    pub n_incidents: usize,
    pub mtti_minutes: f64,
    pub ela: f64,
    pub eer: f64,
    pub ar: f64,
}

/// Result of one replay. Opaque to C.
pub struct TriageReplay {
    outcome: ReplayOutcome,
}

struct Failure(TriageStatus, String);

type FfiResult<T> = Result<T, Failure>;

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: &str) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status plus last-error.
fn guard(f: impl FnOnce() -> FfiResult<()>) -> TriageStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            TriageStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(&msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            TriageStatus::Panic
        }
    }
}

fn fail<T>(status: TriageStatus, msg: impl ToString) -> FfiResult<T> {
    Err(Failure(status, msg.to_string()))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(TriageStatus::NullArgument, format!("{what} is null"));
    }
    // SAFETY: caller passes a NUL-terminated string that outlives the call.
    unsafe { CStr::from_ptr(p) }.to_str().or_else(|_| fail(TriageStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn live<'a>(h: *const TriageReplay) -> FfiResult<&'a TriageReplay> {
    // SAFETY: non-null handles come from triage_replay_run and are live.
    unsafe { h.as_ref() }.map_or_else(|| fail(TriageStatus::NullArgument, "replay handle is null"), Ok)
}

unsafe fn give_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    if out.is_null() {
        return fail(TriageStatus::NullArgument, "output pointer is null");
    }
    let c = CString::new(s).or_else(|_| fail(TriageStatus::Runtime, "output contains NUL"))?;
    // SAFETY: checked non-null; caller owns the slot.
    unsafe { *out = c.into_raw() };
    Ok(())
}

fn cohort(h: &TriageReplay, c: TriageCohort) -> &[IncidentRecord] {
    match c {
        TriageCohort::Agent => &h.outcome.agent,
        TriageCohort::Manual => &h.outcome.manual,
    }
}

/// Library version, a static string.
#[no_mangle]
pub extern "C" fn triage_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn triage_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// # Safety
/// `s` must be NULL or a string returned by this library, not yet freed.
#[no_mangle]
pub unsafe extern "C" fn triage_string_free(s: *mut c_char) {
    if !s.is_null() {
        // SAFETY: per the contract above.
        drop(unsafe { CString::from_raw(s) });
    }
}

/// Replays the scenario file at `scenario_path`. `seed` overrides the
/// scenario's seed when `use_seed` is true; `workers` of 0 keeps the default.
///
/// # Safety
/// `scenario_path` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn triage_replay_run(
    scenario_path: *const c_char,
    seed: u64,
    use_seed: bool,
    workers: u32,
    out: *mut *mut TriageReplay,
) -> TriageStatus {
    guard(|| {
        if out.is_null() {
            return fail(TriageStatus::NullArgument, "output pointer is null");
        }
        let path = unsafe { text(scenario_path, "scenario_path") }?;
        if !Path::new(path).is_file() {
            return fail(TriageStatus::NotFound, format!("no such file: {path}"));
        }
        let inputs = ReplayInputs::load(Path::new(path)).or_else(|e| {
            let status = match e {
                ReplayError::Scenario(_) | ReplayError::Rules(_) | ReplayError::Knowledge(_) => {
                    TriageStatus::InvalidArgument
                }
                _ => TriageStatus::Runtime,
            };
            fail(status, e)
        })?;
        let opts = ReplayOptions {
            seed: use_seed.then_some(seed),
            workers: (workers > 0).then_some(workers as usize),
            ..Default::default()
        };
        let outcome = replay(&inputs, &opts).or_else(|e| fail(TriageStatus::Runtime, e))?;
        // SAFETY: checked non-null above.
        unsafe { *out = Box::into_raw(Box::new(TriageReplay { outcome })) };
        Ok(())
    })
}

/// # Safety
/// `handle` must be NULL or a live handle from [`triage_replay_run`].
#[no_mangle]
pub unsafe extern "C" fn triage_replay_free(handle: *mut TriageReplay) {
    if !handle.is_null() {
        // SAFETY: per the contract above.
        drop(unsafe { Box::from_raw(handle) });
    }
}

/// Number of incidents in a cohort, or 0 for a NULL handle.
///
/// # Safety
/// `handle` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn triage_replay_incident_count(handle: *const TriageReplay, which: TriageCohort) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| cohort(h, which).len())
}

/// # Safety
/// `handle` must be a live handle; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn triage_replay_metrics(
    handle: *const TriageReplay,
    which: TriageCohort,
    out: *mut TriageMetrics,
) -> TriageStatus {
    guard(|| {
        let h = unsafe { live(handle) }?;
        if out.is_null() {
            return fail(TriageStatus::NullArgument, "output pointer is null");
        }
        let name = match which {
            TriageCohort::Agent => "Agent",
            TriageCohort::Manual => "Manual",
        };
        let r = MetricsReport::compute(name, cohort(h, which));
        let m = TriageMetrics {
            n_alerts: r.n_alerts,
            n_incidents: r.n_incidents,
            mtti_minutes: r.mtti_minutes.unwrap_or(f64::NAN),
            ela: r.ela.unwrap_or(f64::NAN),
            eer: r.eer.unwrap_or(f64::NAN),
            ar: r.ar,
        };
        // SAFETY: checked non-null above.
        unsafe { *out = m };
        Ok(())
    })
}

/// Number of approval-safety violations found in the replay's audit log.
///
/// # Safety
/// `handle` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn triage_replay_audit_violations(handle: *const TriageReplay) -> usize {
    unsafe { handle.as_ref() }.map_or(0, |h| h.outcome.audit().violations.len())
}

/// One incident record as JSON. Free the result with
/// [`triage_string_free`].
///
/// # Safety
/// `handle` must be a live handle; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn triage_replay_incident_json(
    handle: *const TriageReplay,
    which: TriageCohort,
    index: usize,
    out_json: *mut *mut c_char,
) -> TriageStatus {
    guard(|| {
        let h = unsafe { live(handle) }?;
        let records = cohort(h, which);
        let Some(r) = records.get(index) else {
            return fail(TriageStatus::NotFound, format!("index {index} out of range ({} incidents)", records.len()));
        };
        let json = to_ndjson(std::slice::from_ref(r)).trim_end().to_string();
        unsafe { give_string(out_json, json) }
    })
}

/// Writes a cohort as NDJSON to `path`.
///
/// # Safety
/// `handle` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn triage_replay_write_ndjson(
    handle: *const TriageReplay,
    which: TriageCohort,
    path: *const c_char,
) -> TriageStatus {
    guard(|| {
        let h = unsafe { live(handle) }?;
        let path = unsafe { text(path, "path") }?;
        write_ndjson(Path::new(path), cohort(h, which)).or_else(|e| fail(TriageStatus::Io, e))
    })
}

/// Renders a metrics report over `n` NDJSON cohort files. `format` is
/// `table`, `csv` or `json`.
///
/// # Safety
/// `names` and `paths` must each point to `n` NUL-terminated strings;
/// `format` must be NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn triage_report_render(
    names: *const *const c_char,
    paths: *const *const c_char,
    n: usize,
    format: *const c_char,
    out: *mut *mut c_char,
) -> TriageStatus {
    guard(|| {
        if n > 0 && (names.is_null() || paths.is_null()) {
            return fail(TriageStatus::NullArgument, "names or paths is null");
        }
        let format: ReportFormat =
            unsafe { text(format, "format") }?.parse().or_else(|e| fail(TriageStatus::InvalidArgument, e))?;
        let mut reports = Vec::with_capacity(n);
        for i in 0..n {
            // SAFETY: both arrays hold n entries.
            let (name, path) = unsafe { (text(*names.add(i), "cohort name")?, text(*paths.add(i), "cohort path")?) };
            if !Path::new(path).is_file() {
                return fail(TriageStatus::NotFound, format!("no such file: {path}"));
            }
            let records = read_ndjson(Path::new(path)).or_else(|e| fail(TriageStatus::InvalidArgument, e))?;
            reports.push(MetricsReport::compute(name, &records));
        }
        unsafe { give_string(out, render_report(&reports, format)) }
    })
}

/// Validates one wire alert and returns its normalized JSON form. The
/// payload's own `fired_at` is kept.
///
/// # Safety
/// `json` must be NUL-terminated; `out_json` must be writable.
#[no_mangle]
pub unsafe extern "C" fn triage_alert_normalize(
    json: *const c_char,
    seed: u64,
    out_json: *mut *mut c_char,
) -> TriageStatus {
    guard(|| {
        let raw = unsafe { text(json, "json") }?;
        let alert = Gateway::new(seed)
            .ingest(raw.as_bytes(), ClockSource::Payload)
            .or_else(|e| fail(TriageStatus::InvalidArgument, format!("{}: {e}", e.code())))?;
        unsafe { give_string(out_json, alert.to_wire().to_string()) }
    })
}
