use std::ffi::{CStr, CString};
use std::ptr;

use mzlock_ffi::*;

fn last_error() -> String {
    unsafe { CStr::from_ptr(mz_last_error_message()) }
        .to_string_lossy()
        .into_owned()
}

fn short_config() -> *mut MzConfig {
    let text = CString::new("scenario.events = control_on@0, set_pm_voltage@0:auto, end@3\nseed = 11\n").unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { mz_config_parse(text.as_ptr(), &mut cfg) }, MzStatus::Ok);
    assert!(!cfg.is_null());
    cfg
}

#[test]
fn version_is_a_c_string() {
    let v = unsafe { CStr::from_ptr(mz_version()) }.to_str().unwrap();
    assert_eq!(v, env!("CARGO_PKG_VERSION"));
}

#[test]
fn run_round_trip() {
    let cfg = short_config();
    let mut run = ptr::null_mut();
    unsafe {
        assert_eq!(mz_run_scenario(cfg, &mut run), MzStatus::Ok);
        assert_eq!(mz_run_len(run), 3);
        assert!(!mz_run_lock_lost(run));
        let mut rec = MzRecord::default();
        assert_eq!(mz_run_record(run, 2, &mut rec), MzStatus::Ok);
        assert_eq!(rec.t_start, 2.0);
        assert!(rec.control_enabled);
        assert!(rec.counts_d2 > rec.counts_d1);
        assert_eq!(mz_run_record(run, 3, &mut rec), MzStatus::Range);
        assert!(last_error().contains("record 3 of 3"));

        let dir = tempfile::tempdir().unwrap();
        let ts = CString::new(dir.path().join("ts.csv").to_str().unwrap()).unwrap();
        let ev = CString::new(dir.path().join("ev.csv").to_str().unwrap()).unwrap();
        assert_eq!(mz_run_write_csv(run, ts.as_ptr(), ev.as_ptr()), MzStatus::Ok);
        assert_eq!(
            std::fs::read_to_string(dir.path().join("ts.csv"))
                .unwrap()
                .lines()
                .count(),
            4
        );
        assert!(dir.path().join("ev.csv").exists());

        let bad = CString::new("/nonexistent/dir/ts.csv").unwrap();
        assert_eq!(mz_run_write_csv(run, bad.as_ptr(), ptr::null()), MzStatus::Io);
        assert!(last_error().contains("/nonexistent/dir/ts.csv"));

        mz_run_free(run);
        mz_config_free(cfg);
    }
}

#[test]
fn runs_match_the_library() {
    let cfg = short_config();
    let mut run = ptr::null_mut();
    unsafe {
        assert_eq!(mz_config_set_seed(cfg, 42), MzStatus::Ok);
        assert_eq!(mz_run_scenario(cfg, &mut run), MzStatus::Ok);
    }
    let mut native =
        mzlock::harness::parse_config("scenario.events = control_on@0, set_pm_voltage@0:auto, end@3").unwrap();
    native.seed = 42;
    let expected = mzlock::harness::run_scenario(&native).unwrap();
    for (i, r) in expected.records.iter().enumerate() {
        let mut rec = MzRecord::default();
        assert_eq!(unsafe { mz_run_record(run, i, &mut rec) }, MzStatus::Ok);
        assert_eq!((rec.counts_d1, rec.counts_d2), (r.counts_d1, r.counts_d2));
        assert_eq!(rec.mean_pd_level, r.mean_pd_level);
    }
    unsafe {
        mz_run_free(run);
        mz_config_free(cfg);
    }
}

#[test]
fn config_errors_are_reported() {
    let mut cfg = ptr::null_mut();
    let bad = CString::new("optics.overlap = 1.5").unwrap();
    unsafe {
        assert_eq!(mz_config_parse(bad.as_ptr(), &mut cfg), MzStatus::Validation);
        assert!(cfg.is_null());
        assert!(last_error().contains("optics.overlap"));

        assert_eq!(mz_config_default(&mut cfg), MzStatus::Ok);
        assert_eq!(last_error(), "");
        let key = CString::new("optics.overlap").unwrap();
        let value = CString::new("2").unwrap();
        assert_eq!(mz_config_set(cfg, key.as_ptr(), value.as_ptr()), MzStatus::Validation);
        let value = CString::new("0.9").unwrap();
        assert_eq!(mz_config_set(cfg, key.as_ptr(), value.as_ptr()), MzStatus::Ok);
        let unknown = CString::new("optics.colour").unwrap();
        assert_eq!(
            mz_config_set(cfg, unknown.as_ptr(), value.as_ptr()),
            MzStatus::Validation
        );
        mz_config_free(cfg);
    }
}

#[test]
fn null_pointers_are_rejected() {
    unsafe {
        assert_eq!(mz_config_default(ptr::null_mut()), MzStatus::Null);
        assert_eq!(mz_config_parse(ptr::null(), &mut ptr::null_mut()), MzStatus::Null);
        assert_eq!(mz_run_scenario(ptr::null(), &mut ptr::null_mut()), MzStatus::Null);
        assert!(last_error().contains("cfg"));
        assert_eq!(mz_run_len(ptr::null()), 0);
        assert_eq!(mz_scan_len(ptr::null()), 0);
        assert_eq!(
            mz_visibility(1.0, 2.0, ptr::null_mut(), ptr::null_mut()),
            MzStatus::Null
        );
        mz_config_free(ptr::null_mut());
        mz_run_free(ptr::null_mut());
        mz_scan_free(ptr::null_mut());
    }
}

#[test]
fn scan_exposes_points_and_fits() {
    let text = CString::new("scan.points = 8\nscan.dwell_s = 2\nscan.settle_s = 1\n").unwrap();
    let mut cfg = ptr::null_mut();
    let mut scan = ptr::null_mut();
    unsafe {
        assert_eq!(mz_config_parse(text.as_ptr(), &mut cfg), MzStatus::Ok);
        assert_eq!(mz_scan_voltage(cfg, &mut scan), MzStatus::Ok);
        assert_eq!(mz_scan_len(scan), 8);
        assert!(!mz_scan_aborted(scan));
        let mut p = MzFringePoint::default();
        assert_eq!(mz_scan_point(scan, 7, &mut p), MzStatus::Ok);
        assert!((p.voltage - 6.8).abs() < 1e-12);
        let mut fit = MzFit::default();
        assert_eq!(mz_scan_fit(scan, 1, &mut fit), MzStatus::Ok);
        assert!((fit.v_pi - 5.0).abs() < 0.25, "v_pi {}", fit.v_pi);
        assert!(fit.r_squared > 0.98);
        assert_eq!(mz_scan_fit(scan, 3, &mut fit), MzStatus::Range);
        mz_scan_free(scan);
        mz_config_free(cfg);
    }
}

#[test]
fn analysis_helpers() {
    let (mut v, mut u) = (0.0, 0.0);
    unsafe {
        assert_eq!(mz_visibility(15.0, 1000.0, &mut v, &mut u), MzStatus::Ok);
        assert!((v - 985.0 / 1015.0).abs() < 1e-12);
        assert!(u > 0.0);
        assert_eq!(mz_visibility(0.0, 0.0, &mut v, ptr::null_mut()), MzStatus::Runtime);
        assert_eq!(
            mz_net_visibility(16.5, 1000.0, 1.55, 6.87, &mut v, ptr::null_mut()),
            MzStatus::Ok
        );
        assert!((v - 0.9703).abs() < 1e-4);

        let mut p = 0.0;
        assert_eq!(
            mz_gate_click_probability(0.0, 3.1, 0.15, 9.33e-6, 0.5, &mut p),
            MzStatus::Ok
        );
        assert!((p - 9.33e-6).abs() < 1e-18);
        assert_eq!(
            mz_gate_click_probability(0.1, 3.1, 1.5, 9.33e-6, 0.5, &mut p),
            MzStatus::Validation
        );
    }
}

#[test]
fn errors_are_per_thread() {
    unsafe {
        let mut v = 0.0;
        assert_eq!(mz_visibility(0.0, 0.0, &mut v, ptr::null_mut()), MzStatus::Runtime);
    }
    let other = std::thread::spawn(last_error).join().unwrap();
    assert_eq!(other, "");
    assert!(!last_error().is_empty());
}

#[test]
fn header_declares_the_api() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mzlock.h")).unwrap();
    for name in [
        "typedef struct MzConfig MzConfig;",
        "MZ_STATUS_PANIC = 5",
        "mz_config_parse(",
        "mz_run_record(",
        "mz_scan_fit(",
        "mz_last_error_message(void)",
        "mz_gate_click_probability(",
    ] {
        assert!(header.contains(name), "missing {name}");
    }
    // compile the header as both C and C++ when a compiler is around
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let Ok(status) = std::process::Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(concat!(env!("CARGO_MANIFEST_DIR"), "/include/mzlock.h"))
            .status()
        else {
            continue;
        };
        assert!(status.success(), "{compiler} rejected the header");
    }
}
