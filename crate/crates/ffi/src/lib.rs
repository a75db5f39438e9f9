//! C ABI over the mzlock simulator.
//!
//! Objects cross the boundary as opaque handles created by `*_default`,
//! `*_parse` or the run functions and released with the matching `*_free`.
//! Every fallible call returns an [`MzStatus`]; on failure the message is
//! available from [`mz_last_error_message`] on the same thread.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use mzlock::analysis::{self, FringeFit};
use mzlock::detection::{self, DetectorParams, SourceParams};
use mzlock::harness::output::{write_events_csv, write_fringe_csv, write_timeseries_csv};
use mzlock::harness::{self, ScanOutcome, ScenarioOutput, SimConfig};
use mzlock::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MzStatus {
    Ok = 0,
    /// Configuration or argument rejected.
    Validation = 1,
    /// Simulation or analysis failed.
    Runtime = 2,
    Io = 3,
    /// A required pointer was null.
    Null = 4,
    /// A Rust panic was caught at the boundary.
    Panic = 5,
    /// Index out of range.
    Range = 6,
}

/// One time-series bin.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MzRecord {
    pub t_start: f64,
    pub duration: f64,
    pub counts_d1: u64,
    pub counts_d2: u64,
    pub mean_pd_level: f64,
    pub control_enabled: bool,
    pub pm_voltage: f64,
}

/// One scan voltage: mean rates (counts/s) and their sample sd.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MzFringePoint {
    pub voltage: f64,
    pub mean_d1: f64,
    pub sd_d1: f64,
    pub mean_d2: f64,
    pub sd_d2: f64,
}

/// Fit of `A (1 + visibility cos(pi V / v_pi + phi0))`.
#[repr(C)]
#[derive(Debug, Clone, Copy, Default)]
pub struct MzFit {
    pub amplitude: f64,
    pub v_pi: f64,
    pub phi0: f64,
    pub visibility: f64,
    pub r_squared: f64,
    pub visibility_sigma: f64,
    pub v_pi_sigma: f64,
    pub chi_squared: f64,
}

pub struct MzConfig(SimConfig);
pub struct MzRun(ScenarioOutput);
pub struct MzScan(ScanOutcome);

thread_local! {
    static LAST_ERROR: RefCell<CString> = RefCell::new(CString::default());
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).unwrap_or_default());
}

fn status_of(err: &Error) -> MzStatus {
    match err {
        Error::Parse { .. } | Error::Validation(_) | Error::InvalidArgument(_) => MzStatus::Validation,
        Error::Io { .. } => MzStatus::Io,
        _ => MzStatus::Runtime,
    }
}

struct Fail(MzStatus, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail(status_of(&e), e.to_string())
    }
}

fn null(what: &str) -> Fail {
    Fail(MzStatus::Null, format!("{what} is null"))
}

/// Run `body` behind the panic boundary and translate its outcome.
fn guard(body: impl FnOnce() -> Result<(), Fail>) -> MzStatus {
    match catch_unwind(AssertUnwindSafe(body)) {
        Ok(Ok(())) => {
            set_error("");
            MzStatus::Ok
        }
        Ok(Err(Fail(status, msg))) => {
            set_error(msg);
            status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            MzStatus::Panic
        }
    }
}

unsafe fn text<'a>(p: *const c_char, what: &str) -> Result<&'a str, Fail> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Fail(MzStatus::Validation, format!("{what} is not valid UTF-8")))
}

unsafe fn handle<'a, T>(p: *const T, what: &str) -> Result<&'a T, Fail> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn put<T>(out: *mut T, value: T, what: &str) -> Result<(), Fail> {
    if out.is_null() {
        return Err(null(what));
    }
    out.write(value);
    Ok(())
}

fn fit_of(f: &FringeFit) -> MzFit {
    MzFit {
        amplitude: f.amplitude,
        v_pi: f.v_pi_fit,
        phi0: f.phi0,
        visibility: f.visibility,
        r_squared: f.r_squared,
        visibility_sigma: f.visibility_sigma,
        v_pi_sigma: f.v_pi_sigma,
        chi_squared: f.chi_squared,
    }
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn mz_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message of the last failed call on this thread, empty after a success.
/// The pointer stays valid until the next mzlock call on this thread.
#[no_mangle]
pub extern "C" fn mz_last_error_message() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ptr())
}

/// # Safety
/// `out` must be a valid pointer to writable storage for a handle.
#[no_mangle]
pub unsafe extern "C" fn mz_config_default(out: *mut *mut MzConfig) -> MzStatus {
    guard(|| {
        let cfg = Box::into_raw(Box::new(MzConfig(SimConfig::default())));
        put(out, cfg, "out").inspect_err(|_| drop(Box::from_raw(cfg)))
    })
}

/// Parse `key = value` configuration text on top of the defaults.
///
/// # Safety
/// `config_text` must be a NUL-terminated string; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_config_parse(config_text: *const c_char, out: *mut *mut MzConfig) -> MzStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let cfg = harness::parse_config(text(config_text, "text")?)?;
        put(out, Box::into_raw(Box::new(MzConfig(cfg))), "out")
    })
}

/// Set one configuration key. The handle is left unchanged if the result
/// would not validate.
///
/// # Safety
/// `cfg` must come from this library; `key` and `value` must be
/// NUL-terminated strings.
#[no_mangle]
pub unsafe extern "C" fn mz_config_set(cfg: *mut MzConfig, key: *const c_char, value: *const c_char) -> MzStatus {
    guard(|| {
        let cfg = cfg.as_mut().ok_or_else(|| null("cfg"))?;
        let (key, value) = (text(key, "key")?, text(value, "value")?);
        let mut next = cfg.0.clone();
        next.set(key, value).map_err(|m| Fail(MzStatus::Validation, m))?;
        next.validate()?;
        cfg.0 = next;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library.
#[no_mangle]
pub unsafe extern "C" fn mz_config_set_seed(cfg: *mut MzConfig, seed: u64) -> MzStatus {
    guard(|| {
        cfg.as_mut().ok_or_else(|| null("cfg"))?.0.seed = seed;
        Ok(())
    })
}

/// # Safety
/// `cfg` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mz_config_free(cfg: *mut MzConfig) {
    if !cfg.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(cfg))));
    }
}

/// Simulate the configured timeline. A lost lock is reported through
/// `mz_run_lock_lost`, not as a failure.
///
/// # Safety
/// `cfg` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_run_scenario(cfg: *const MzConfig, out: *mut *mut MzRun) -> MzStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let run = harness::run_scenario(&handle(cfg, "cfg")?.0)?;
        put(out, Box::into_raw(Box::new(MzRun(run))), "out")
    })
}

/// Number of bins, or 0 for a null handle.
///
/// # Safety
/// `run` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mz_run_len(run: *const MzRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.records.len())
}

/// # Safety
/// `run` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mz_run_lock_lost(run: *const MzRun) -> bool {
    run.as_ref().is_some_and(|r| r.0.lock_lost())
}

/// # Safety
/// `run` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_run_record(run: *const MzRun, index: usize, out: *mut MzRecord) -> MzStatus {
    guard(|| {
        let run = handle(run, "run")?;
        let r = run
            .0
            .records
            .get(index)
            .ok_or_else(|| Fail(MzStatus::Range, format!("record {index} of {}", run.0.records.len())))?;
        let rec = MzRecord {
            t_start: r.t_start,
            duration: r.duration,
            counts_d1: r.counts_d1,
            counts_d2: r.counts_d2,
            mean_pd_level: r.mean_pd_level,
            control_enabled: r.control_enabled,
            pm_voltage: r.pm_voltage,
        };
        put(out, rec, "out")
    })
}

/// Write the time series to `path` and, if `events_path` is non-null, the
/// event log to `events_path`.
///
/// # Safety
/// `run` must come from this library; paths must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mz_run_write_csv(
    run: *const MzRun,
    path: *const c_char,
    events_path: *const c_char,
) -> MzStatus {
    guard(|| {
        let run = handle(run, "run")?;
        write_timeseries_csv(&run.0.records, Path::new(text(path, "path")?))?;
        if !events_path.is_null() {
            write_events_csv(&run.0.events, Path::new(text(events_path, "events_path")?))?;
        }
        Ok(())
    })
}

/// # Safety
/// `run` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mz_run_free(run: *mut MzRun) {
    if !run.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(run))));
    }
}

/// Lock and step the modulator through the configured scan. An aborted
/// scan still yields a handle with the points taken so far.
///
/// # Safety
/// `cfg` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_scan_voltage(cfg: *const MzConfig, out: *mut *mut MzScan) -> MzStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        let scan = harness::scan_voltage(&handle(cfg, "cfg")?.0)?;
        put(out, Box::into_raw(Box::new(MzScan(scan))), "out")
    })
}

/// # Safety
/// `scan` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mz_scan_len(scan: *const MzScan) -> usize {
    scan.as_ref().map_or(0, |s| s.0.points.len())
}

/// # Safety
/// `scan` must come from this library or be null.
#[no_mangle]
pub unsafe extern "C" fn mz_scan_aborted(scan: *const MzScan) -> bool {
    scan.as_ref().is_some_and(|s| s.0.aborted.is_some())
}

/// # Safety
/// `scan` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_scan_point(scan: *const MzScan, index: usize, out: *mut MzFringePoint) -> MzStatus {
    guard(|| {
        let scan = handle(scan, "scan")?;
        let p = scan
            .0
            .points
            .get(index)
            .ok_or_else(|| Fail(MzStatus::Range, format!("point {index} of {}", scan.0.points.len())))?;
        let point = MzFringePoint {
            voltage: p.voltage,
            mean_d1: p.mean_d1,
            sd_d1: p.sd_d1,
            mean_d2: p.mean_d2,
            sd_d2: p.sd_d2,
        };
        put(out, point, "out")
    })
}

/// Fringe fit of detector 1 or 2. Fails with `Runtime` when the scan was
/// aborted before a fit was possible.
///
/// # Safety
/// `scan` must come from this library; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_scan_fit(scan: *const MzScan, detector: u32, out: *mut MzFit) -> MzStatus {
    guard(|| {
        let scan = handle(scan, "scan")?;
        let fit = match detector {
            1 => scan.0.fit_d1.as_ref(),
            2 => scan.0.fit_d2.as_ref(),
            d => return Err(Fail(MzStatus::Range, format!("detector {d} is not 1 or 2"))),
        };
        let fit = fit.ok_or_else(|| {
            Fail(
                MzStatus::Runtime,
                scan.0
                    .aborted
                    .clone()
                    .unwrap_or_else(|| "scan has too few points to fit".into()),
            )
        })?;
        put(out, fit_of(fit), "out")
    })
}

/// # Safety
/// `scan` must come from this library; `path` must be NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn mz_scan_write_csv(scan: *const MzScan, path: *const c_char) -> MzStatus {
    guard(|| {
        let scan = handle(scan, "scan")?;
        write_fringe_csv(&scan.0.points, Path::new(text(path, "path")?))?;
        Ok(())
    })
}

/// # Safety
/// `scan` must come from this library or be null; it is invalid afterwards.
#[no_mangle]
pub unsafe extern "C" fn mz_scan_free(scan: *mut MzScan) {
    if !scan.is_null() {
        let _ = catch_unwind(AssertUnwindSafe(|| drop(Box::from_raw(scan))));
    }
}

/// Raw visibility of two count rates and its Poisson uncertainty.
/// `uncertainty` may be null.
///
/// # Safety
/// `value` must be writable; `uncertainty` must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn mz_visibility(c1: f64, c2: f64, value: *mut f64, uncertainty: *mut f64) -> MzStatus {
    guard(|| {
        let v = analysis::visibility(c1, c2)?;
        put(value, v.value, "value")?;
        if !uncertainty.is_null() {
            uncertainty.write(v.uncertainty);
        }
        Ok(())
    })
}

/// Visibility after subtracting the dark rates.
///
/// # Safety
/// `value` must be writable; `uncertainty` must be writable or null.
#[no_mangle]
pub unsafe extern "C" fn mz_net_visibility(
    c1: f64,
    c2: f64,
    dark1: f64,
    dark2: f64,
    value: *mut f64,
    uncertainty: *mut f64,
) -> MzStatus {
    guard(|| {
        let v = analysis::net_visibility(c1, c2, dark1, dark2)?;
        put(value, v.value, "value")?;
        if !uncertainty.is_null() {
            uncertainty.write(v.uncertainty);
        }
        Ok(())
    })
}

/// Per-gate click probability for a port receiving `port_fraction` of the
/// input light.
///
/// # Safety
/// `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn mz_gate_click_probability(
    mu: f64,
    post_path_loss_db: f64,
    efficiency: f64,
    dark_prob: f64,
    port_fraction: f64,
    out: *mut f64,
) -> MzStatus {
    guard(|| {
        let checks = [
            (mu >= 0.0 && mu.is_finite(), "mu must be finite and >= 0"),
            (post_path_loss_db.is_finite(), "post_path_loss_db must be finite"),
            ((0.0..=1.0).contains(&efficiency), "efficiency must lie in [0, 1]"),
            ((0.0..1.0).contains(&dark_prob), "dark_prob must lie in [0, 1)"),
            ((0.0..=1.0).contains(&port_fraction), "port_fraction must lie in [0, 1]"),
        ];
        if let Some((_, msg)) = checks.iter().find(|(ok, _)| !ok) {
            return Err(Fail(MzStatus::Validation, (*msg).into()));
        }
        let src = SourceParams { mu, post_path_loss_db };
        let det = DetectorParams {
            efficiency,
            dark_prob,
            ..DetectorParams::d1()
        };
        put(
            out,
            detection::gate_click_probability(&src, &det, port_fraction, 1.0),
            "out",
        )
    })
}
