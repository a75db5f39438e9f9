use mzlock::analysis::summarize_timeseries;
use mzlock::harness::output::{read_fringe_csv, read_timeseries_csv, write_fringe_csv, write_timeseries_csv};
use mzlock::harness::{
    parse_config, print_defaults, render_config, run_replicas, run_scenario, scan_voltage, LogKind, SimConfig,
    Timeline, MONITOR_BAND,
};

fn config(events: &str) -> SimConfig {
    SimConfig {
        scenario: events.parse::<Timeline>().unwrap(),
        ..SimConfig::default()
    }
}

fn relative_gap(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        ((a - b) / a.abs().max(b.abs())).abs()
    }
}

#[test]
fn scan_starts_at_the_unmodulated_baseline() {
    let mut cfg = SimConfig::default();
    cfg.scan.points = 2;
    cfg.scan.v_end = 1.0;
    let scan = scan_voltage(&cfg).unwrap();
    let first = &scan.points[0];
    assert_eq!(first.voltage, 0.0);

    let run = run_scenario(&config("control_on@0, set_pm_voltage@0:0, end@40")).unwrap();
    let s = summarize_timeseries(&run.records, (10.0, 40.0), 0.0, 0.0).unwrap();
    for (scan_rate, run_rate) in [(first.mean_d1, s.d1.mean), (first.mean_d2, s.d2.mean)] {
        // Poisson error of a 10 s mean against a 30 s mean
        let sigma = (run_rate / 10.0 + run_rate / 30.0).sqrt();
        assert!((scan_rate - run_rate).abs() < 4.0 * sigma, "{scan_rate} vs {run_rate}");
    }
}

#[test]
fn modulator_pulses_leave_the_lock_alone() {
    let scan = scan_voltage(&SimConfig::default()).unwrap();
    assert!(scan.aborted.is_none());
    assert_eq!(scan.points.len(), 15);
    for p in &scan.points {
        assert!(
            p.max_monitor_dev < MONITOR_BAND,
            "{} V: deviation {}",
            p.voltage,
            p.max_monitor_dev
        );
    }
}

#[test]
fn lost_lock_aborts_the_scan_with_partial_data() {
    let mut cfg = SimConfig::default();
    // a safe band narrower than one fringe cannot be unwound into
    cfg.stretcher.v_lo = -0.6;
    cfg.stretcher.v_hi = 0.6;
    cfg.controller.guard_fraction = 0.5;
    cfg.controller.calibration_range_v = 1.2;
    cfg.noise.diffusion = 4.0;
    cfg.scan.settle_s = 1.0;
    let scan = scan_voltage(&cfg).unwrap();
    assert!(scan.aborted.is_some());
    assert!(scan.fit_d1.is_none());
    assert!(scan.points.len() < 15);
    assert!(scan.events.iter().any(|e| e.kind == LogKind::LockLost));
}

#[test]
fn timeseries_csv_round_trip() {
    let out = run_scenario(&config("control_on@0, set_pm_voltage@0:auto, control_off@5, end@8")).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("timeseries.csv");
    write_timeseries_csv(&out.records, &path).unwrap();
    let back = read_timeseries_csv(&path).unwrap();
    assert_eq!(back.len(), out.records.len());
    for (a, b) in out.records.iter().zip(&back) {
        assert_eq!(a.counts_d1, b.counts_d1);
        assert_eq!(a.counts_d2, b.counts_d2);
        assert_eq!(a.control_enabled, b.control_enabled);
        for (x, y) in [
            (a.t_start, b.t_start),
            (a.duration, b.duration),
            (a.mean_pd_level, b.mean_pd_level),
            (a.pm_voltage, b.pm_voltage),
        ] {
            assert!(relative_gap(x, y) <= 5e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn fringe_csv_round_trip() {
    let mut cfg = SimConfig::default();
    cfg.scan.dwell_s = 2.0;
    cfg.scan.settle_s = 1.0;
    let scan = scan_voltage(&cfg).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fringe.csv");
    write_fringe_csv(&scan.points, &path).unwrap();
    let back = read_fringe_csv(&path).unwrap();
    for (p, row) in scan.points.iter().zip(&back) {
        let orig = [p.voltage, p.mean_d1, p.sd_d1, p.mean_d2, p.sd_d2];
        for (x, y) in orig.iter().zip(row) {
            assert!(relative_gap(*x, *y) <= 5e-9, "{x} vs {y}");
        }
    }
}

#[test]
fn printed_defaults_parse_back_to_defaults() {
    assert_eq!(parse_config(&print_defaults()).unwrap(), SimConfig::default());
    let mut cfg = config("control_on@0, set_pm_voltage@2:1.25, control_off@40, end@50");
    cfg.seed = 99;
    cfg.optics.overlap = 0.9;
    assert_eq!(parse_config(&render_config(&cfg)).unwrap(), cfg);
}

#[test]
fn replica_zero_is_the_plain_run() {
    let cfg = config("control_on@0, end@3");
    let replicas = run_replicas(&cfg, 3, Some(2)).unwrap();
    assert_eq!(replicas[0], run_scenario(&cfg).unwrap());
    assert_ne!(replicas[1].records, replicas[2].records);
}

#[test]
fn lock_holds_through_range_resets() {
    // stronger drift forces the stretcher to unwind fringes
    let mut cfg = config("control_on@0, set_pm_voltage@0:auto, end@60");
    cfg.noise.diffusion = 40.0;
    let out = run_scenario(&cfg).unwrap();
    assert!(out.events.iter().any(|e| e.kind == LogKind::RangeReset));
    assert!(!out.lock_lost());
    let s = summarize_timeseries(&out.records, (5.0, 60.0), cfg.d1.dark_rate(), cfg.d2.dark_rate()).unwrap();
    assert!(s.net_visibility.mean > 0.95, "visibility {}", s.net_visibility.mean);
}
