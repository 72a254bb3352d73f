//! C ABI over the gazemetrics session engine.
//!
//! An engine is an opaque handle owning one reading session. Every call
//! returns a `GmStatus`; the message of the last failure on the calling
//! thread is available from `gm_last_error`. Strings handed out by the
//! library are freed with `gm_string_free`. Handles are not thread-safe:
//! serialize calls on one engine.

use std::cell::RefCell;
use std::collections::VecDeque;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::ptr;
use std::sync::{Arc, Mutex};

use gazemetrics::model::{GazeSample, LayoutManifest, ViewportState, WordMetrics};
use gazemetrics::protocol::ClientMessage;
use gazemetrics::session::{
    new_session_id, FileStore, Session, SessionConfig, SessionError, SessionStore, SinkError, SystemClock, ViewerSink,
};

/// Result code of every fallible call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GmStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidUtf8 = 2,
    InvalidArgument = 3,
    ParseError = 4,
    /// Input was well-formed but refused (out-of-order sample, bad layout).
    Rejected = 5,
    /// The session has ended.
    Closed = 6,
    /// Nothing to return (no pending event).
    Empty = 7,
    Io = 8,
    Panic = 9,
}

/// Opaque session handle.
pub struct GmEngine {
    session: Session,
    events: Option<Arc<Mutex<VecDeque<Arc<str>>>>>,
}

/// One gaze sample. `origin`/`pos` are read only when `has_3d` is true.
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct GmSample {
    pub t_us: i64,
    pub screen_x: f64,
    pub screen_y: f64,
    pub has_3d: bool,
    pub origin: [f64; 3],
    pub pos: [f64; 3],
    pub valid: bool,
}

/// Per-word metrics in microseconds. A `has_*` flag of false means the
/// value is undefined and the paired field is zero.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct GmWordMetrics {
    pub word_index: usize,
    pub tfd_us: i64,
    pub has_afd: bool,
    pub afd_us: f64,
    pub has_mifd: bool,
    pub mifd_us: i64,
    pub has_mafd: bool,
    pub mafd_us: i64,
    pub fixation_count: u32,
    pub has_tff_ts: bool,
    pub tff_ts_us: i64,
    pub has_ttff: bool,
    pub ttff_us: i64,
    pub has_ffd: bool,
    pub ffd_us: i64,
    pub has_fp_ffd: bool,
    pub fp_ffd_us: i64,
    pub has_fp_group: bool,
    pub fp_group: u64,
    pub has_fp_regression: bool,
    pub fp_regression: bool,
    pub has_fpd: bool,
    pub fpd_us: i64,
    pub has_rpd: bool,
    pub rpd_us: i64,
    pub has_srpd: bool,
    pub srpd_us: i64,
    pub rrd_us: i64,
}

impl From<&WordMetrics> for GmWordMetrics {
    fn from(m: &WordMetrics) -> Self {
        fn split<T: Default + Copy>(v: Option<T>) -> (bool, T) {
            (v.is_some(), v.unwrap_or_default())
        }
        let (has_afd, afd_us) = split(m.afd_us);
        let (has_mifd, mifd_us) = split(m.mifd_us);
        let (has_mafd, mafd_us) = split(m.mafd_us);
        let (has_tff_ts, tff_ts_us) = split(m.tff_ts_us);
        let (has_ttff, ttff_us) = split(m.ttff_us);
        let (has_ffd, ffd_us) = split(m.ffd_us);
        let (has_fp_ffd, fp_ffd_us) = split(m.fp_ffd_us);
        let (has_fp_group, fp_group) = split(m.fp_group);
        let (has_fp_regression, fp_regression) = split(m.fp_regression);
        let (has_fpd, fpd_us) = split(m.fpd_us);
        let (has_rpd, rpd_us) = split(m.rpd_us);
        let (has_srpd, srpd_us) = split(m.srpd_us);
        Self {
            word_index: m.word_index,
            tfd_us: m.tfd_us,
            has_afd,
            afd_us,
            has_mifd,
            mifd_us,
            has_mafd,
            mafd_us,
            fixation_count: m.fixation_count,
            has_tff_ts,
            tff_ts_us,
            has_ttff,
            ttff_us,
            has_ffd,
            ffd_us,
            has_fp_ffd,
            fp_ffd_us,
            has_fp_group,
            fp_group,
            has_fp_regression,
            fp_regression,
            has_fpd,
            fpd_us,
            has_rpd,
            rpd_us,
            has_srpd,
            srpd_us,
            rrd_us: m.rrd_us,
        }
    }
}

struct QueueSink(Arc<Mutex<VecDeque<Arc<str>>>>);

impl ViewerSink for QueueSink {
    fn try_send(&self, msg: Arc<str>) -> Result<(), SinkError> {
        self.0.lock().map_err(|_| SinkError::Closed)?.push_back(msg);
        Ok(())
    }
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(CString::new(msg).expect("nul bytes replaced")));
}

struct Failure(GmStatus, String);

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let status = match e {
            SessionError::Closed => GmStatus::Closed,
            SessionError::Malformed(_) => GmStatus::ParseError,
            SessionError::Config(_) => GmStatus::InvalidArgument,
            _ => GmStatus::Rejected,
        };
        Failure(status, e.to_string())
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> GmStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => GmStatus::Ok,
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("internal panic");
            GmStatus::Panic
        }
    }
}

unsafe fn engine<'a>(p: *mut GmEngine) -> Result<&'a mut GmEngine, Failure> {
    p.as_mut().ok_or_else(|| Failure(GmStatus::NullPointer, "engine is null".into()))
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(Failure(GmStatus::NullPointer, format!("{what} is null")));
    }
    CStr::from_ptr(p).to_str().map_err(|_| Failure(GmStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

unsafe fn out_ptr<'a, T>(p: *mut T) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| Failure(GmStatus::NullPointer, "output pointer is null".into()))
}

fn hand_out(s: String) -> *mut c_char {
    // internal strings never contain NUL; JSON escapes it
    CString::new(s).expect("no interior NUL").into_raw()
}

/// Creates an engine. `config_json` is a session configuration object
/// (null or `"{}"` for defaults). When `store_dir` is non-null the session
/// is persisted to `<store_dir>/<id>.jsonl`. Writes the handle to `out`.
///
/// # Safety
/// String arguments must be null or NUL-terminated; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_new(
    config_json: *const c_char,
    store_dir: *const c_char,
    out: *mut *mut GmEngine,
) -> GmStatus {
    guard(|| {
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let config: SessionConfig = if config_json.is_null() {
            SessionConfig::default()
        } else {
            serde_json::from_str(text(config_json, "config")?)
                .map_err(|e| Failure(GmStatus::ParseError, format!("config: {e}")))?
        };
        let id = new_session_id();
        let store: Option<Box<dyn SessionStore>> = if store_dir.is_null() {
            None
        } else {
            let dir = text(store_dir, "store_dir")?;
            let fs = FileStore::new(Path::new(dir), &id).map_err(|e| Failure(GmStatus::Io, format!("store: {e}")))?;
            Some(Box::new(fs))
        };
        let session = Session::new(Some(id), "", config, store, Arc::new(SystemClock::default()))
            .map_err(|e| Failure(GmStatus::InvalidArgument, e.to_string()))?;
        *out = Box::into_raw(Box::new(GmEngine { session, events: None }));
        Ok(())
    })
}

/// Ends the session (flushing any store) and releases the handle.
///
/// # Safety
/// `engine` must be null or a handle from `gm_engine_new` not yet freed.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_free(engine: *mut GmEngine) {
    if engine.is_null() {
        return;
    }
    let _ = catch_unwind(AssertUnwindSafe(|| {
        let mut e = Box::from_raw(engine);
        e.session.end_session();
    }));
}

/// Installs a layout manifest (JSON).
///
/// # Safety
/// `engine` must be a live handle; `manifest_json` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_set_layout(engine: *mut GmEngine, manifest_json: *const c_char) -> GmStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let m = LayoutManifest::from_json(text(manifest_json, "manifest")?)
            .map_err(|err| Failure(GmStatus::ParseError, err.to_string()))?;
        e.session.set_layout(m)?;
        Ok(())
    })
}

/// Records a viewport change effective from `t_us` (sample clock).
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_set_viewport(
    engine: *mut GmEngine,
    t_us: i64,
    win_x: f64,
    win_y: f64,
    scroll_x: f64,
    scroll_y: f64,
    dpr: f64,
) -> GmStatus {
    guard(|| {
        let e = self::engine(engine)?;
        e.session.set_viewport(ViewportState { t_us, win_x, win_y, scroll_x, scroll_y, dpr })?;
        Ok(())
    })
}

/// Feeds one gaze sample.
///
/// # Safety
/// `engine` must be a live handle; `sample` must point to a `GmSample`.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_push_sample(engine: *mut GmEngine, sample: *const GmSample) -> GmStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let s = sample.as_ref().ok_or_else(|| Failure(GmStatus::NullPointer, "sample is null".into()))?;
        let mut g = GazeSample::screen(s.t_us, s.screen_x, s.screen_y);
        if s.has_3d {
            g = g.with_geometry(s.origin, s.pos);
        }
        g.valid = s.valid;
        e.session.ingest(ClientMessage::Gaze((&g).into()))?;
        Ok(())
    })
}

/// Feeds one protocol message as JSON text (gaze, layout, viewport,
/// tabstate or end).
///
/// # Safety
/// `engine` must be a live handle; `message` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_ingest_json(engine: *mut GmEngine, message: *const c_char) -> GmStatus {
    guard(|| {
        let e = self::engine(engine)?;
        e.session.ingest_text(text(message, "message")?)?;
        Ok(())
    })
}

/// Current metrics of one word.
///
/// # Safety
/// `engine` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_word_metrics(
    engine: *mut GmEngine,
    word_index: usize,
    out: *mut GmWordMetrics,
) -> GmStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let out = out_ptr(out)?;
        let m =
            e.session.word_metrics(word_index).map_err(|err| Failure(GmStatus::InvalidArgument, err.to_string()))?;
        *out = GmWordMetrics::from(&m);
        Ok(())
    })
}

/// Number of fixations and saccades detected so far.
///
/// # Safety
/// `engine` must be a live handle; outputs may be null.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_event_counts(
    engine: *mut GmEngine,
    fixations: *mut usize,
    saccades: *mut usize,
) -> GmStatus {
    guard(|| {
        let e = self::engine(engine)?;
        if let Some(f) = fixations.as_mut() {
            *f = e.session.fixations().len();
        }
        if let Some(s) = saccades.as_mut() {
            *s = e.session.saccades().len();
        }
        Ok(())
    })
}

/// Ends the session: closes open fixations, finalizes first-pass
/// regressions and flushes. Idempotent.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_finish(engine: *mut GmEngine) -> GmStatus {
    guard(|| {
        self::engine(engine)?.session.end_session();
        Ok(())
    })
}

/// Metrics CSV (milliseconds), one row per word. Free with `gm_string_free`.
///
/// # Safety
/// `engine` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_export_csv(engine: *mut GmEngine, out: *mut *mut c_char) -> GmStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let out = out_ptr(out)?;
        *out = hand_out(e.session.metrics_csv());
        Ok(())
    })
}

/// Session identifier. Free with `gm_string_free`.
///
/// # Safety
/// `engine` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_session_id(engine: *mut GmEngine, out: *mut *mut c_char) -> GmStatus {
    guard(|| {
        let e = self::engine(engine)?;
        let out = out_ptr(out)?;
        *out = hand_out(e.session.id().to_string());
        Ok(())
    })
}

/// Starts queueing viewer messages (snapshot first, then fixation,
/// saccade and metrics updates) for `gm_engine_poll_event`. The queue is
/// unbounded; poll it regularly.
///
/// # Safety
/// `engine` must be a live handle.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_subscribe(engine: *mut GmEngine) -> GmStatus {
    guard(|| {
        let e = self::engine(engine)?;
        if e.events.is_none() {
            let q = Arc::new(Mutex::new(VecDeque::new()));
            e.session.add_viewer(Box::new(QueueSink(q.clone())));
            e.events = Some(q);
        }
        Ok(())
    })
}

/// Pops the oldest queued viewer message (JSON). Returns `Empty` when the
/// queue is empty or no subscription exists. Free with `gm_string_free`.
///
/// # Safety
/// `engine` must be a live handle; `out` writable.
#[no_mangle]
pub unsafe extern "C" fn gm_engine_poll_event(engine: *mut GmEngine, out: *mut *mut c_char) -> GmStatus {
    let mut empty = false;
    let status = guard(|| {
        let e = self::engine(engine)?;
        let out = out_ptr(out)?;
        *out = ptr::null_mut();
        let next = e.events.as_ref().and_then(|q| q.lock().ok()?.pop_front());
        match next {
            Some(m) => *out = hand_out(m.to_string()),
            None => empty = true,
        }
        Ok(())
    });
    if status == GmStatus::Ok && empty {
        GmStatus::Empty
    } else {
        status
    }
}

/// Frees a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must be null or a pointer obtained from this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn gm_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Message of the last failed call on this thread, or null. Valid until
/// the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn gm_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, static storage.
#[no_mangle]
pub extern "C" fn gm_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}
