//! C ABI over the mentigo engine.
//!
//! Handles are opaque and owned by the caller until passed to the matching
//! `*_free`. Every function returns a [`MentigoStatus`]; on failure a message
//! is available from [`mentigo_last_error`] on the same thread. Strings handed
//! out through `out` parameters are heap-allocated UTF-8 and must be released
//! with [`mentigo_string_free`]. Structured results are JSON using the same
//! shapes as the HTTP API.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;
use std::sync::Arc;

use mentigo::clock::{Clock, ManualClock, SystemClock};
use mentigo::evalkit::ScriptBundle;
use mentigo::gateway::{BackendConfig, Gateway, LiveConfig, LlmBackend};
use mentigo::kb::KbError;
use mentigo::prompts::PromptSet;
use mentigo::session::store::render_log;
use mentigo::session::{ReportDraft, SessionError, SessionService};
use mentigo::{KnowledgeBase, StateId};

const DEMO_SCRIPT: &str = include_str!("../../../scripts/demo.json");

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MentigoStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    InvalidInput = 3,
    NotFound = 4,
    NotActive = 5,
    WrongStage = 6,
    Validation = 7,
    CorruptLog = 8,
    Io = 9,
    Environment = 10,
    BufferTooSmall = 11,
    Panic = 99,
}

/// A loaded, validated knowledge base.
pub struct MentigoKb {
    kb: Arc<KnowledgeBase>,
}

/// A session service with its backends and clock.
pub struct MentigoEngine {
    svc: SessionService,
    manual: Option<Arc<ManualClock>>,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

struct Failure(MentigoStatus, String);

type FfiResult<T> = Result<T, Failure>;

fn fail<T>(status: MentigoStatus, msg: impl Into<String>) -> FfiResult<T> {
    Err(Failure(status, msg.into()))
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::NotFound(_) => MentigoStatus::NotFound,
            SessionError::NotActive { .. } => MentigoStatus::NotActive,
            SessionError::WrongStage(_) => MentigoStatus::WrongStage,
            SessionError::Validation(_) => MentigoStatus::Validation,
            SessionError::CorruptLog { .. } => MentigoStatus::CorruptLog,
            SessionError::Io(_) => MentigoStatus::Io,
        };
        Failure(status, e.to_string())
    }
}

impl From<KbError> for Failure {
    fn from(e: KbError) -> Self {
        let status = match e {
            KbError::Io { .. } => MentigoStatus::Io,
            KbError::Validation(_) => MentigoStatus::Validation,
            _ => MentigoStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

fn set_error(msg: Option<String>) {
    let c = msg.map(|m| CString::new(m.replace('\0', " ")).expect("nul bytes removed"));
    LAST_ERROR.with(|slot| *slot.borrow_mut() = c);
}

/// Run `f`, record its error message, and turn panics into [`MentigoStatus::Panic`].
fn guard(f: impl FnOnce() -> FfiResult<()>) -> MentigoStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            set_error(None);
            MentigoStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(Some(msg));
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_error(Some(format!("internal panic: {msg}")));
            MentigoStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> FfiResult<&'a str> {
    if p.is_null() {
        return fail(MentigoStatus::NullArgument, format!("{what} is null"));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure(MentigoStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> FfiResult<&'a T> {
    p.as_ref()
        .ok_or_else(|| Failure(MentigoStatus::NullArgument, format!("{what} is null")))
}

unsafe fn put<T>(out: *mut T, value: T) -> FfiResult<()> {
    if out.is_null() {
        return fail(MentigoStatus::NullArgument, "output pointer is null");
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, s: String) -> FfiResult<()> {
    if out.is_null() {
        return fail(MentigoStatus::NullArgument, "output pointer is null");
    }
    let c = CString::new(s).map_err(|_| {
        Failure(
            MentigoStatus::InvalidInput,
            "output contains a nul byte".into(),
        )
    })?;
    out.write(c.into_raw());
    Ok(())
}

fn json<T: serde::Serialize>(value: &T) -> String {
    serde_json::to_string(value).expect("engine types serialize")
}

/// Message for the last failed call on this thread, or null. Valid until the
/// next call into this library on the same thread.
#[no_mangle]
pub extern "C" fn mentigo_last_error() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(ptr::null(), |c| c.as_ptr()))
}

/// Library version as a static string.
#[no_mangle]
pub extern "C" fn mentigo_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn mentigo_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Load the bundled knowledge base.
///
/// # Safety
/// `out` must be a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mentigo_kb_fixture(out: *mut *mut MentigoKb) -> MentigoStatus {
    guard(|| {
        let kb = Box::new(MentigoKb {
            kb: Arc::new(KnowledgeBase::fixture()),
        });
        put(out, Box::into_raw(kb))
    })
}

/// Load and validate a knowledge base file.
///
/// # Safety
/// `path` must be a nul-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn mentigo_kb_load(
    path: *const c_char,
    out: *mut *mut MentigoKb,
) -> MentigoStatus {
    guard(|| {
        let path = text(path, "path")?;
        let kb = KnowledgeBase::from_path(path)?;
        put(out, Box::into_raw(Box::new(MentigoKb { kb: Arc::new(kb) })))
    })
}

/// # Safety
/// `kb` must be null or a handle from `mentigo_kb_*`, freed once.
#[no_mangle]
pub unsafe extern "C" fn mentigo_kb_free(kb: *mut MentigoKb) {
    if !kb.is_null() {
        drop(Box::from_raw(kb));
    }
}

/// Stage, state and strategy counts.
///
/// # Safety
/// All pointers must be valid.
#[no_mangle]
pub unsafe extern "C" fn mentigo_kb_counts(
    kb: *const MentigoKb,
    stages: *mut u32,
    states: *mut u32,
    strategies: *mut u32,
) -> MentigoStatus {
    guard(|| {
        let kb = &handle(kb, "kb")?.kb;
        put(stages, kb.stages().len() as u32)?;
        put(states, kb.states().len() as u32)?;
        put(strategies, kb.strategies().len() as u32)
    })
}

/// Strategy ids mapped to `state` (1..=23). Writes up to `cap` ids to `out`
/// and the full count to `len`; returns `BUFFER_TOO_SMALL` if `cap < len`.
///
/// # Safety
/// `out` must point to `cap` writable bytes (may be null when `cap` is 0);
/// `len` must be valid.
#[no_mangle]
pub unsafe extern "C" fn mentigo_kb_strategies_for_state(
    kb: *const MentigoKb,
    state: u8,
    out: *mut u8,
    cap: usize,
    len: *mut usize,
) -> MentigoStatus {
    guard(|| {
        let kb = &handle(kb, "kb")?.kb;
        let id = StateId::listed(state).ok_or_else(|| {
            Failure(
                MentigoStatus::InvalidInput,
                format!("state {state} outside 1..=23"),
            )
        })?;
        let ids = kb.strategies_for_state(id)?;
        put(len, ids.len())?;
        if cap < ids.len() {
            return fail(
                MentigoStatus::BufferTooSmall,
                format!("need room for {} ids", ids.len()),
            );
        }
        if out.is_null() {
            return fail(MentigoStatus::NullArgument, "out is null");
        }
        for (i, s) in ids.iter().enumerate() {
            out.add(i).write(s.ordinal());
        }
        Ok(())
    })
}

fn engine(
    kb: &MentigoKb,
    controller: Arc<dyn LlmBackend>,
    mentor: Arc<dyn LlmBackend>,
    seed: Option<u64>,
    manual_clock: bool,
) -> *mut MentigoEngine {
    let mut svc = SessionService::new(
        kb.kb.clone(),
        Arc::new(PromptSet::bundled()),
        controller,
        mentor,
    );
    let manual = manual_clock.then(|| Arc::new(ManualClock::fixed()));
    let clock: Arc<dyn Clock> = match &manual {
        Some(c) => c.clone(),
        None => Arc::new(SystemClock),
    };
    svc = svc.with_clock(clock);
    if let Some(seed) = seed {
        svc = svc.with_seed(seed);
    }
    Box::into_raw(Box::new(MentigoEngine { svc, manual }))
}

/// Engine over scripted backends. `script_json` is a bundle
/// `{"controller": {...}, "mentor": {...}}`, or null for the built-in demo
/// script. With `manual_clock` the engine starts at a fixed instant and only
/// moves via `mentigo_engine_advance_ms`; session ids then follow `seed`.
///
/// # Safety
/// `kb` must be a live handle; `script_json` null or nul-terminated; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mentigo_engine_scripted(
    kb: *const MentigoKb,
    script_json: *const c_char,
    seed: u64,
    manual_clock: bool,
    out: *mut *mut MentigoEngine,
) -> MentigoStatus {
    guard(|| {
        let kb = handle(kb, "kb")?;
        let raw = if script_json.is_null() {
            DEMO_SCRIPT
        } else {
            text(script_json, "script_json")?
        };
        let bundle: ScriptBundle = serde_json::from_str(raw)
            .map_err(|e| Failure(MentigoStatus::InvalidInput, format!("script: {e}")))?;
        let build = |cfg| {
            Gateway::scripted(cfg)
                .map(|g| Arc::new(g) as Arc<dyn LlmBackend>)
                .map_err(|e| Failure(MentigoStatus::InvalidInput, e.to_string()))
        };
        let e = engine(
            kb,
            build(bundle.controller)?,
            build(bundle.mentor)?,
            Some(seed),
            manual_clock,
        );
        put(out, e)
    })
}

/// Engine over the live chat-completions backend configured from the
/// environment.
///
/// # Safety
/// `kb` must be a live handle; `out` valid.
#[no_mangle]
pub unsafe extern "C" fn mentigo_engine_live(
    kb: *const MentigoKb,
    out: *mut *mut MentigoEngine,
) -> MentigoStatus {
    guard(|| {
        let kb = handle(kb, "kb")?;
        let cfg = LiveConfig::from_env()
            .map_err(|e| Failure(MentigoStatus::Environment, e.to_string()))?;
        let build = || {
            Gateway::new(BackendConfig::Live(cfg.clone()))
                .map(|g| Arc::new(g) as Arc<dyn LlmBackend>)
                .map_err(|e| Failure(MentigoStatus::Environment, e.to_string()))
        };
        put(out, engine(kb, build()?, build()?, None, false))
    })
}

/// # Safety
/// `engine` must be null or a handle from `mentigo_engine_*`, freed once.
#[no_mangle]
pub unsafe extern "C" fn mentigo_engine_free(engine: *mut MentigoEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Move a manual clock forward. Fails with `INVALID_INPUT` on a wall-clock engine.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn mentigo_engine_advance_ms(
    engine: *const MentigoEngine,
    ms: u64,
) -> MentigoStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        let clock = e.manual.as_ref().ok_or_else(|| {
            Failure(
                MentigoStatus::InvalidInput,
                "engine uses the wall clock".into(),
            )
        })?;
        clock.advance_secs_f64(ms as f64 / 1000.0);
        Ok(())
    })
}

/// Create a session; writes its JSON to `out`.
///
/// # Safety
/// Pointers must be valid; `topic` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn mentigo_session_create(
    engine: *const MentigoEngine,
    topic: *const c_char,
    out: *mut *mut c_char,
) -> MentigoStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        let session = e.svc.create_session(text(topic, "topic")?)?;
        put_string(out, json(&session))
    })
}

/// Post a student message; writes `{"mentor_message", "decision"}` to `out`.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn mentigo_session_post(
    engine: *const MentigoEngine,
    session_id: *const c_char,
    message: *const c_char,
    out: *mut *mut c_char,
) -> MentigoStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        let (mentor_message, decision) = e
            .svc
            .post_student_message(text(session_id, "session_id")?, text(message, "message")?)?;
        put_string(
            out,
            serde_json::json!({"mentor_message": mentor_message, "decision": decision}).to_string(),
        )
    })
}

/// Current session state as JSON.
///
/// # Safety
/// Pointers must be valid; `session_id` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn mentigo_session_get(
    engine: *const MentigoEngine,
    session_id: *const c_char,
    out: *mut *mut c_char,
) -> MentigoStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        put_string(out, json(&e.svc.get(text(session_id, "session_id")?)?))
    })
}

/// Events with `seq > after` as JSON lines, exactly as logged.
///
/// # Safety
/// Pointers must be valid; `session_id` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn mentigo_session_events(
    engine: *const MentigoEngine,
    session_id: *const c_char,
    after: u64,
    out: *mut *mut c_char,
) -> MentigoStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        let events = e.svc.events(text(session_id, "session_id")?, after)?;
        put_string(out, render_log(&events))
    })
}

/// Run the quiet timer once. `out` receives the nudge JSON, or null when no
/// nudge was due.
///
/// # Safety
/// Pointers must be valid; `session_id` nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn mentigo_session_tick(
    engine: *const MentigoEngine,
    session_id: *const c_char,
    out: *mut *mut c_char,
) -> MentigoStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        match e.svc.tick(text(session_id, "session_id")?)? {
            Some(nudge) => put_string(out, json(&nudge)),
            None => put(out, ptr::null_mut()),
        }
    })
}

/// Submit the stage-6 report (a JSON object with the four report fields);
/// writes the updated session to `out`.
///
/// # Safety
/// Pointers must be valid; strings nul-terminated.
#[no_mangle]
pub unsafe extern "C" fn mentigo_session_submit_report(
    engine: *const MentigoEngine,
    session_id: *const c_char,
    report_json: *const c_char,
    out: *mut *mut c_char,
) -> MentigoStatus {
    guard(|| {
        let e = handle(engine, "engine")?;
        let draft: ReportDraft = serde_json::from_str(text(report_json, "report_json")?)
            .map_err(|err| Failure(MentigoStatus::InvalidInput, format!("report: {err}")))?;
        let session = e
            .svc
            .submit_report(text(session_id, "session_id")?, draft)?;
        put_string(out, json(&session))
    })
}
