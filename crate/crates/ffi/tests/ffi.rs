use std::ffi::{CStr, CString};
use std::path::PathBuf;
use std::process::Command;
use std::ptr;

use gazemetrics::model::ScreenModel;
use gazemetrics::session::{Session, SessionConfig};
use gazemetrics::toolkit::simulate::{simulate_reading, synthetic_layout, LayoutParams, ReadingProfile};
use gazemetrics_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(p: *mut std::ffi::c_char) -> String {
    assert!(!p.is_null());
    let s = CStr::from_ptr(p).to_str().unwrap().to_string();
    gm_string_free(p);
    s
}

unsafe fn new_engine(config: Option<&str>) -> *mut GmEngine {
    let cfg = config.map(cstr);
    let mut e = ptr::null_mut();
    let st = gm_engine_new(cfg.as_ref().map_or(ptr::null(), |c| c.as_ptr()), ptr::null(), &mut e);
    assert_eq!(st, GmStatus::Ok);
    assert!(!e.is_null());
    e
}

unsafe fn last_error() -> String {
    let p = gm_last_error();
    assert!(!p.is_null());
    CStr::from_ptr(p).to_string_lossy().into_owned()
}

fn sample(s: &gazemetrics::model::GazeSample) -> GmSample {
    GmSample {
        t_us: s.t_us,
        screen_x: s.screen_x,
        screen_y: s.screen_y,
        has_3d: s.origin_3d.is_some(),
        origin: s.origin_3d.unwrap_or_default(),
        pos: s.pos_3d.unwrap_or_default(),
        valid: s.valid,
    }
}

#[test]
fn engine_matches_in_process_session() {
    let layout = synthetic_layout(&LayoutParams { words: 40, paragraphs: 2, seed: 5, ..Default::default() });
    let profile =
        ReadingProfile { p_regress: 0.2, p_skip: 0.1, noise_px: 1.0, geometry_3d: true, seed: 9, ..Default::default() };
    let sim = simulate_reading(&layout, &profile, &ScreenModel::default());
    let manifest = cstr(&serde_json::to_string(&layout).unwrap());

    let mut reference = Session::in_memory(SessionConfig::default()).unwrap();
    reference.set_layout(layout.clone()).unwrap();
    reference.set_viewport(gazemetrics::model::ViewportState::identity(sim.samples[0].t_us)).unwrap();

    unsafe {
        let e = new_engine(Some("{}"));
        assert_eq!(gm_engine_set_layout(e, manifest.as_ptr()), GmStatus::Ok);
        assert_eq!(gm_engine_set_viewport(e, sim.samples[0].t_us, 0.0, 0.0, 0.0, 0.0, 1.0), GmStatus::Ok);
        for s in &sim.samples {
            assert_eq!(gm_engine_push_sample(e, &sample(s)), GmStatus::Ok);
            reference.ingest(gazemetrics::protocol::ClientMessage::Gaze(s.into())).unwrap();
        }
        let mut live = GmWordMetrics::default();
        assert_eq!(gm_engine_word_metrics(e, 0, &mut live), GmStatus::Ok);
        assert!(live.fixation_count > 0);

        assert_eq!(gm_engine_finish(e), GmStatus::Ok);
        assert_eq!(gm_engine_finish(e), GmStatus::Ok);
        reference.end_session();

        let (mut nf, mut ns) = (0usize, 0usize);
        assert_eq!(gm_engine_event_counts(e, &mut nf, &mut ns), GmStatus::Ok);
        assert_eq!((nf, ns), (reference.fixations().len(), reference.saccades().len()));

        let mut csv = ptr::null_mut();
        assert_eq!(gm_engine_export_csv(e, &mut csv), GmStatus::Ok);
        assert_eq!(take(csv), reference.metrics_csv());

        for w in 0..layout.words.len() {
            let mut m = GmWordMetrics::default();
            assert_eq!(gm_engine_word_metrics(e, w, &mut m), GmStatus::Ok);
            let r = reference.word_metrics(w).unwrap();
            assert_eq!(m, GmWordMetrics::from(&r));
            assert_eq!(m.has_ffd, r.ffd_us.is_some());
            if !m.has_ffd {
                assert_eq!(m.ffd_us, 0);
            }
        }
        gm_engine_free(e);
    }
}

#[test]
fn error_codes() {
    unsafe {
        assert_eq!(gm_engine_finish(ptr::null_mut()), GmStatus::NullPointer);
        let mut e = ptr::null_mut();
        assert_eq!(gm_engine_new(cstr("{bad").as_ptr(), ptr::null(), &mut e), GmStatus::ParseError);
        assert!(e.is_null());
        assert!(last_error().starts_with("config"));
        let bad_cfg = cstr(r#"{"ivt":{"threshold_dps":-1}}"#);
        assert_eq!(gm_engine_new(bad_cfg.as_ptr(), ptr::null(), &mut e), GmStatus::InvalidArgument);
        assert_eq!(gm_engine_new(ptr::null(), ptr::null(), ptr::null_mut()), GmStatus::NullPointer);

        let e = new_engine(None);
        let invalid = [0xffu8, 0xfe, 0];
        assert_eq!(gm_engine_ingest_json(e, invalid.as_ptr().cast()), GmStatus::InvalidUtf8);
        assert_eq!(gm_engine_ingest_json(e, cstr("not json").as_ptr()), GmStatus::ParseError);
        assert_eq!(gm_engine_set_layout(e, cstr("{}").as_ptr()), GmStatus::ParseError);
        assert_eq!(gm_engine_set_viewport(e, 0, 0.0, 0.0, 0.0, 0.0, 0.0), GmStatus::Rejected);

        let s = GmSample {
            t_us: 10,
            screen_x: 1.0,
            screen_y: 1.0,
            has_3d: false,
            origin: [0.0; 3],
            pos: [0.0; 3],
            valid: true,
        };
        assert_eq!(gm_engine_push_sample(e, &s), GmStatus::Ok);
        assert_eq!(gm_engine_push_sample(e, &s), GmStatus::Rejected);
        assert!(!last_error().is_empty());
        assert_eq!(gm_engine_push_sample(e, ptr::null()), GmStatus::NullPointer);

        let mut m = GmWordMetrics::default();
        assert_eq!(gm_engine_word_metrics(e, 0, &mut m), GmStatus::InvalidArgument);
        assert_eq!(gm_engine_export_csv(e, ptr::null_mut()), GmStatus::NullPointer);

        assert_eq!(gm_engine_ingest_json(e, cstr(r#"{"type":"end"}"#).as_ptr()), GmStatus::Ok);
        let s2 = GmSample { t_us: 20, ..s };
        assert_eq!(gm_engine_push_sample(e, &s2), GmStatus::Closed);
        gm_engine_free(e);
        gm_engine_free(ptr::null_mut());
        gm_string_free(ptr::null_mut());
        assert_eq!(CStr::from_ptr(gm_version()).to_str().unwrap(), env!("CARGO_PKG_VERSION"));
    }
}

#[test]
fn events_are_queued_after_subscribe() {
    let layout = synthetic_layout(&LayoutParams { words: 10, paragraphs: 1, ..Default::default() });
    let sim = simulate_reading(&layout, &ReadingProfile::default(), &ScreenModel::default());
    unsafe {
        let e = new_engine(None);
        let mut out = ptr::null_mut();
        assert_eq!(gm_engine_poll_event(e, &mut out), GmStatus::Empty);
        assert!(out.is_null());
        assert_eq!(gm_engine_subscribe(e), GmStatus::Ok);
        assert_eq!(gm_engine_subscribe(e), GmStatus::Ok);
        assert_eq!(gm_engine_poll_event(e, &mut out), GmStatus::Ok);
        assert!(take(out).contains(r#""type":"snapshot""#));
        assert_eq!(gm_engine_poll_event(e, &mut out), GmStatus::Empty);

        let manifest = cstr(&serde_json::to_string(&layout).unwrap());
        assert_eq!(gm_engine_set_layout(e, manifest.as_ptr()), GmStatus::Ok);
        assert_eq!(gm_engine_set_viewport(e, 0, 0.0, 0.0, 0.0, 0.0, 1.0), GmStatus::Ok);
        for s in &sim.samples {
            let msg = cstr(&gazemetrics::protocol::ClientMessage::Gaze(s.into()).to_json());
            assert_eq!(gm_engine_ingest_json(e, msg.as_ptr()), GmStatus::Ok);
        }
        assert_eq!(gm_engine_finish(e), GmStatus::Ok);
        let mut kinds = Vec::new();
        while gm_engine_poll_event(e, &mut out) == GmStatus::Ok {
            let v: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
            kinds.push(v["type"].as_str().unwrap().to_string());
        }
        // one snapshot on layout, one on end
        assert_eq!(kinds.first().map(String::as_str), Some("snapshot"));
        assert_eq!(kinds.last().map(String::as_str), Some("snapshot"));
        assert_eq!(kinds.iter().filter(|k| *k == "fixation_end").count(), 10);
        assert_eq!(kinds.iter().filter(|k| *k == "metrics_update").count(), 10);
        gm_engine_free(e);
    }
}

#[test]
fn store_dir_persists_session() {
    let dir = tempfile::tempdir().unwrap();
    let d = cstr(dir.path().to_str().unwrap());
    unsafe {
        let mut e = ptr::null_mut();
        assert_eq!(gm_engine_new(ptr::null(), d.as_ptr(), &mut e), GmStatus::Ok);
        let mut id = ptr::null_mut();
        assert_eq!(gm_engine_session_id(e, &mut id), GmStatus::Ok);
        let id = take(id);
        gm_engine_free(e);
        assert!(dir.path().join(format!("{id}.jsonl")).exists());
        assert!(dir.path().join(format!("{id}.metrics.csv")).exists());
    }
}

fn target_dir() -> PathBuf {
    // target/<profile>/deps/<test-binary>
    let exe = std::env::current_exe().unwrap();
    exe.parent().unwrap().parent().unwrap().to_path_buf()
}

#[test]
fn header_compiles_and_links_from_c() {
    let header_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("include");
    let lib = target_dir().join("libgazemetrics_ffi.a");
    if !lib.exists() || Command::new("cc").arg("--version").output().is_err() {
        eprintln!("skipped: no C compiler or static library at {}", lib.display());
        return;
    }
    let work = tempfile::tempdir().unwrap();
    let src = work.path().join("smoke.c");
    std::fs::write(
        &src,
        r#"
#include <stdio.h>
#include <string.h>
#include "gazemetrics.h"
int main(void) {
    GmEngine *e = NULL;
    if (gm_engine_new(NULL, NULL, &e) != GM_STATUS_OK) return 1;
    GmSample s = {0};
    s.valid = true;
    for (int i = 0; i < 100; i++) {
        s.t_us = 1000 + i * 3333;
        s.screen_x = 500; s.screen_y = 300;
        if (gm_engine_push_sample(e, &s) != GM_STATUS_OK) return 2;
    }
    if (gm_engine_push_sample(e, &s) != GM_STATUS_REJECTED) return 3;
    if (gm_last_error() == NULL) return 4;
    gm_engine_finish(e);
    size_t nf = 0, ns = 0;
    gm_engine_event_counts(e, &nf, &ns);
    char *csv = NULL;
    if (gm_engine_export_csv(e, &csv) != GM_STATUS_OK) return 5;
    printf("%zu %zu %s", nf, ns, strncmp(csv, "word_index", 10) == 0 ? "csv" : "bad");
    gm_string_free(csv);
    gm_engine_free(e);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = work.path().join("smoke");
    let st = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(&header_dir)
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(st.success(), "C compile/link failed");
    let out = Command::new(&exe).output().unwrap();
    assert!(out.status.success(), "exit {:?}", out.status);
    assert_eq!(String::from_utf8_lossy(&out.stdout), "1 0 csv");
}
