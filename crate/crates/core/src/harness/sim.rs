//! Scenario engine: steps the plant and the feedback loop at the controller
//! rate, samples detector gates in between, and applies timeline events on
//! bin boundaries.

use std::collections::VecDeque;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::config::{EventKind, PmSetting, SimConfig};
use super::seed;
use crate::analysis::{fit_fringe, FitPoint, FringeFit};
use crate::control::{
    calibrate_setpoint, pid_update, probe_slope_sign, quadrature_error, range_reset, ControllerState, MonitorSample,
    RangeAction,
};
use crate::detection::{gate_click_probability, gate_pm_overlap, sample_counts, CountRecord, SourceParams};
use crate::error::{Error, Result};
use crate::plant::{
    monitor_level, port_fractions, quantum_phase_offset, step_environment, stretcher_response, wrap_phase, PlantState,
};

/// Monitor band around the setpoint counted as "on lock" (normalized units).
pub const MONITOR_BAND: f64 = 0.02;
/// Consecutive in-band samples that declare the lock acquired.
const ACQUIRE_SAMPLES: u32 = 500;
/// Normalized error beyond which a sample counts as off-lock.
const LOST_ERROR: f64 = 0.25;
/// Consecutive off-lock samples that declare the lock lost.
const LOST_SAMPLES: u32 = 50;
/// Stretcher dither used to pick the lock slope (V).
const DITHER_V: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LogKind {
    ControlEnabled,
    ControlDisabled,
    LockAcquired,
    LockLost,
    RangeReset,
    PmVoltage,
}

impl fmt::Display for LogKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LogKind::ControlEnabled => "control-enabled",
            LogKind::ControlDisabled => "control-disabled",
            LogKind::LockAcquired => "lock-acquired",
            LogKind::LockLost => "lock-lost",
            LogKind::RangeReset => "range-reset",
            LogKind::PmVoltage => "pm-voltage",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogEntry {
    pub time: f64,
    pub kind: LogKind,
    pub detail: String,
}

/// Loop-quality figures for one bin.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BinDiagnostics {
    /// RMS distance of the classical phase from the lock point (rad).
    pub phase_rms: f64,
    /// Fraction of loop samples with the monitor within the band.
    pub in_band_fraction: f64,
    pub max_monitor_dev: f64,
    /// Loop samples where the stretcher drive hit a rail.
    pub clamped_steps: u64,
}

#[derive(Debug, Default)]
struct BinAccumulator {
    counts_d1: u64,
    counts_d2: u64,
    pd_sum: f64,
    samples: u64,
    in_band: u64,
    phase_sq: f64,
    max_dev: f64,
    clamped: u64,
}

impl BinAccumulator {
    fn diagnostics(&self) -> BinDiagnostics {
        let n = self.samples.max(1) as f64;
        BinDiagnostics {
            phase_rms: (self.phase_sq / n).sqrt(),
            in_band_fraction: self.in_band as f64 / n,
            max_monitor_dev: self.max_dev,
            clamped_steps: self.clamped,
        }
    }
}

#[derive(Debug, Default)]
struct LockTracker {
    acquired: bool,
    in_band_run: u32,
    off_run: u32,
    rail_lost: bool,
    lost: bool,
}

/// One sequential simulation: plant, controller, detectors and clock.
pub struct Simulator<'a> {
    cfg: &'a SimConfig,
    src: SourceParams,
    plant: PlantState,
    ctl: ControllerState,
    env_rng: ChaCha8Rng,
    d1_rng: ChaCha8Rng,
    d2_rng: ChaCha8Rng,
    step: u64,
    pm_voltage: f64,
    q_offset: f64,
    overlap_d1: f64,
    overlap_d2: f64,
    pm_duty: f64,
    lock_phase: f64,
    delay_line: VecDeque<f64>,
    hold: u32,
    lock: LockTracker,
    log: Vec<LogEntry>,
}

impl<'a> Simulator<'a> {
    pub fn new(cfg: &'a SimConfig) -> Result<Self> {
        cfg.validate()?;
        let gain_sign = cfg.stretcher.gain_rad_per_v.signum();
        Ok(Self {
            cfg,
            src: cfg.source(),
            plant: PlantState::initial(&cfg.noise, 0.0),
            ctl: ControllerState::new(&cfg.controller, (cfg.stretcher.v_lo, cfg.stretcher.v_hi)),
            env_rng: seed::stream(cfg.seed, &cfg.noise.rng_stream),
            d1_rng: seed::stream(cfg.seed, seed::DETECTOR_D1),
            d2_rng: seed::stream(cfg.seed, seed::DETECTOR_D2),
            step: 0,
            pm_voltage: 0.0,
            q_offset: quantum_phase_offset(&cfg.optics),
            overlap_d1: gate_pm_overlap(&cfg.d1, &cfg.pm, 0.0),
            overlap_d2: gate_pm_overlap(&cfg.d2, &cfg.pm, 0.0),
            pm_duty: cfg.d1.rep_rate_hz * cfg.pm.pulse_width_ns * 1e-9,
            lock_phase: gain_sign * FRAC_PI_2,
            delay_line: VecDeque::from(vec![0.0; cfg.controller.loop_delay_steps as usize]),
            hold: 0,
            lock: LockTracker::default(),
            log: Vec::new(),
        })
    }

    pub fn time(&self) -> f64 {
        self.step as f64 * self.cfg.controller.dt
    }

    pub fn plant(&self) -> &PlantState {
        &self.plant
    }

    pub fn controller(&self) -> &ControllerState {
        &self.ctl
    }

    pub fn events(&self) -> &[LogEntry] {
        &self.log
    }

    pub fn into_events(self) -> Vec<LogEntry> {
        self.log
    }

    pub fn pm_voltage(&self) -> f64 {
        self.pm_voltage
    }

    /// The lock was declared lost since the last call.
    pub fn take_lock_lost(&mut self) -> bool {
        std::mem::take(&mut self.lock.lost)
    }

    fn emit(&mut self, kind: LogKind, detail: String) {
        let time = self.time();
        self.log.push(LogEntry { time, kind, detail });
    }

    /// Calibrate on the live fringe, pick the lock slope, and close the loop.
    pub fn enable_control(&mut self) -> Result<()> {
        let cfg = self.cfg;
        let cal = calibrate_setpoint(
            &cfg.optics,
            &cfg.stretcher,
            &self.plant,
            cfg.controller.calibration_range_v,
        )?;
        let slope = probe_slope_sign(&cfg.optics, &cfg.stretcher, &self.plant, DITHER_V);
        self.ctl.apply_calibration(&cal, slope);
        self.ctl.output_v = self.plant.stretcher_v;
        self.ctl.engage();
        self.lock_phase = slope * cfg.stretcher.gain_rad_per_v.signum() * FRAC_PI_2;
        self.lock = LockTracker::default();
        self.hold = 0;
        self.emit(
            LogKind::ControlEnabled,
            format!(
                "setpoint={:.6} range=[{:.6},{:.6}] slope={}",
                cal.setpoint, cal.i_min, cal.i_max, slope
            ),
        );
        Ok(())
    }

    pub fn disable_control(&mut self) {
        self.ctl.enabled = false;
        self.lock.acquired = false;
        self.emit(
            LogKind::ControlDisabled,
            format!("drive held at {:.6} V", self.ctl.output_v),
        );
    }

    /// Modulator drive that puts the quantum channel on a fringe extremum
    /// at the present lock point.
    pub fn alignment_voltage(&self) -> f64 {
        let reference = if self.ctl.enabled {
            self.lock_phase
        } else {
            self.plant.classical_phase()
        };
        let needed = (-(reference + self.q_offset)).rem_euclid(PI);
        if self.overlap_d1 <= 0.0 {
            return 0.0;
        }
        (needed / PI * self.cfg.pm.v_pi / self.overlap_d1).min(self.cfg.pm.v_max)
    }

    pub fn set_pm(&mut self, setting: PmSetting) {
        let v = match setting {
            PmSetting::Volts(v) => v,
            PmSetting::Auto => self.alignment_voltage(),
        };
        self.pm_voltage = v;
        let tag = if matches!(setting, PmSetting::Auto) {
            " (aligned)"
        } else {
            ""
        };
        self.emit(LogKind::PmVoltage, format!("{v:.9} V{tag}"));
    }

    fn gates_before(&self, step: u64) -> u64 {
        let x = step as f64 * self.cfg.controller.dt * self.cfg.d1.rep_rate_hz;
        (x - 1e-6).ceil().max(0.0) as u64
    }

    fn monitor(&self, phi_c: f64) -> f64 {
        let opt = &self.cfg.optics;
        let base = monitor_level(opt, phi_c);
        if self.pm_voltage == 0.0 {
            return base;
        }
        // The 1 MHz photodetector averages the short modulation pulses.
        let peak = PI * self.pm_voltage / self.cfg.pm.v_pi;
        (1.0 - self.pm_duty) * base + self.pm_duty * monitor_level(opt, phi_c + peak)
    }

    fn step_once(&mut self, acc: &mut BinAccumulator) -> Result<()> {
        let cfg = self.cfg;
        let dt = cfg.controller.dt;
        self.plant = step_environment(&self.plant, &cfg.noise, dt, &mut self.env_rng)?;
        let drive = match self.delay_line.pop_front() {
            Some(d) => {
                self.delay_line.push_back(self.ctl.output_v);
                d
            }
            None => self.ctl.output_v,
        };
        let st = stretcher_response(&self.plant, &cfg.stretcher, drive, dt)?;
        self.plant = st.state;
        if st.clamped {
            acc.clamped += 1;
        }

        let phi_c = self.plant.classical_phase();
        let pd = self.monitor(phi_c);

        let gates = self.gates_before(self.step + 1) - self.gates_before(self.step);
        if gates > 0 {
            let pm_phase = PI * self.pm_voltage / cfg.pm.v_pi;
            let base = phi_c + self.q_offset;
            let f_a = port_fractions(&cfg.optics, base + pm_phase * self.overlap_d1).a;
            let f_b = port_fractions(&cfg.optics, base + pm_phase * self.overlap_d2).b;
            let p1 = gate_click_probability(&self.src, &cfg.d1, f_a, self.overlap_d1);
            let p2 = gate_click_probability(&self.src, &cfg.d2, f_b, self.overlap_d2);
            acc.counts_d1 += sample_counts(p1, gates, &mut self.d1_rng);
            acc.counts_d2 += sample_counts(p2, gates, &mut self.d2_rng);
        }

        if self.ctl.enabled {
            if self.hold > 0 {
                self.hold -= 1;
            } else {
                let sample = MonitorSample {
                    pd_level: pd,
                    time: self.plant.time,
                };
                let error = quadrature_error(&sample, &self.ctl)?;
                let (next, _) = pid_update(&self.ctl, error, dt);
                let (next, action) = range_reset(&next, &cfg.stretcher, cfg.controller.guard_fraction);
                self.ctl = next;
                match action {
                    RangeAction::Unchanged => self.lock.rail_lost = false,
                    RangeAction::Reset { fringes, delta_v } => {
                        self.hold = cfg.controller.reset_hold_steps;
                        self.emit(
                            LogKind::RangeReset,
                            format!("unwound {fringes} fringe(s), drive shifted {delta_v:.6} V"),
                        );
                    }
                    RangeAction::LockLost => {
                        if !self.lock.rail_lost {
                            self.lock.rail_lost = true;
                            self.declare_lost(format!("drive {:.6} V at the rail", self.ctl.output_v));
                        }
                    }
                }
                self.track_lock(error);
            }
        }

        let dev = (pd - self.ctl.setpoint).abs();
        let residual = wrap_phase(phi_c - self.lock_phase);
        acc.pd_sum += pd;
        acc.samples += 1;
        acc.phase_sq += residual * residual;
        acc.max_dev = acc.max_dev.max(dev);
        if dev <= MONITOR_BAND {
            acc.in_band += 1;
        }
        self.step += 1;
        Ok(())
    }

    fn track_lock(&mut self, error: f64) {
        let band = MONITOR_BAND / (self.ctl.i_max - self.ctl.i_min);
        if error.abs() <= band {
            self.lock.in_band_run = self.lock.in_band_run.saturating_add(1);
        } else {
            self.lock.in_band_run = 0;
        }
        if error.abs() > LOST_ERROR {
            self.lock.off_run = self.lock.off_run.saturating_add(1);
        } else {
            self.lock.off_run = 0;
        }
        if !self.lock.acquired && self.lock.in_band_run >= ACQUIRE_SAMPLES {
            self.lock.acquired = true;
            self.emit(LogKind::LockAcquired, format!("drive {:.6} V", self.ctl.output_v));
        }
        if self.lock.acquired && self.lock.off_run >= LOST_SAMPLES {
            self.declare_lost(format!("error beyond {LOST_ERROR} for {LOST_SAMPLES} samples"));
        }
    }

    fn declare_lost(&mut self, reason: String) {
        self.lock.acquired = false;
        self.lock.lost = true;
        self.emit(LogKind::LockLost, reason);
    }

    /// Advance `steps` loop periods and integrate the detector counts.
    pub fn advance(&mut self, steps: u64) -> Result<(CountRecord, BinDiagnostics)> {
        let t_start = self.time();
        let control_enabled = self.ctl.enabled;
        let pm_voltage = self.pm_voltage;
        let mut acc = BinAccumulator::default();
        for _ in 0..steps {
            self.step_once(&mut acc)?;
        }
        let record = CountRecord {
            t_start,
            duration: steps as f64 * self.cfg.controller.dt,
            counts_d1: acc.counts_d1,
            counts_d2: acc.counts_d2,
            mean_pd_level: acc.pd_sum / acc.samples.max(1) as f64,
            control_enabled,
            pm_voltage,
        };
        Ok((record, acc.diagnostics()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub records: Vec<CountRecord>,
    pub diagnostics: Vec<BinDiagnostics>,
    pub events: Vec<LogEntry>,
}

impl ScenarioOutput {
    pub fn lock_lost(&self) -> bool {
        self.events.iter().any(|e| e.kind == LogKind::LockLost)
    }
}

/// Run the configured timeline, one record per bin.
pub fn run_scenario(cfg: &SimConfig) -> Result<ScenarioOutput> {
    let mut sim = Simulator::new(cfg)?;
    let end = cfg
        .scenario
        .end_time()
        .ok_or_else(|| Error::InvalidArgument("timeline has no end".into()))?;
    let bins = (end / cfg.bin_duration).round() as u64;
    let steps = cfg.steps_per_bin();
    let mut pending = cfg.scenario.events.iter().peekable();
    let mut records = Vec::with_capacity(bins as usize);
    let mut diagnostics = Vec::with_capacity(bins as usize);
    for b in 0..bins {
        let boundary = b as f64 * cfg.bin_duration;
        while let Some(ev) = pending.next_if(|e| e.time <= boundary + 1e-9 * cfg.bin_duration) {
            match ev.kind {
                EventKind::ControlOn => sim.enable_control()?,
                EventKind::ControlOff => sim.disable_control(),
                EventKind::SetPmVoltage(s) => sim.set_pm(s),
                EventKind::End => {}
            }
        }
        let (mut rec, diag) = sim.advance(steps)?;
        rec.t_start = boundary;
        records.push(rec);
        diagnostics.push(diag);
    }
    Ok(ScenarioOutput {
        records,
        diagnostics,
        events: sim.into_events(),
    })
}

/// Thread pool honoring `threads`, or `MZLOCK_THREADS` when `None`.
pub fn worker_pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = threads.or_else(|| {
        std::env::var("MZLOCK_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|n| *n > 0)
    });
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = n {
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))
}

/// Seed of replica `k`; replica 0 uses the configured seed.
pub fn replica_seed(master: u64, k: usize) -> u64 {
    if k == 0 {
        master
    } else {
        seed::derive_seed(master, &format!("replica.{k}"))
    }
}

/// Independent replicas of the scenario, returned in replica order.
pub fn run_replicas(cfg: &SimConfig, replicas: usize, threads: Option<usize>) -> Result<Vec<ScenarioOutput>> {
    cfg.validate()?;
    let pool = worker_pool(threads)?;
    pool.install(|| {
        (0..replicas)
            .into_par_iter()
            .map(|k| {
                let mut c = cfg.clone();
                c.seed = replica_seed(cfg.seed, k);
                run_scenario(&c)
            })
            .collect()
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct FringePoint {
    pub voltage: f64,
    pub mean_d1: f64,
    pub sd_d1: f64,
    pub mean_d2: f64,
    pub sd_d2: f64,
    pub counts_d1: u64,
    pub counts_d2: u64,
    pub dwell_s: f64,
    pub monitor_in_band_fraction: f64,
    pub max_monitor_dev: f64,
}

impl FringePoint {
    /// Dark-subtracted mean rate with its Poisson error.
    fn fit_point(&self, counts: u64, mean: f64, dark_rate: f64) -> FitPoint {
        FitPoint {
            voltage: self.voltage,
            rate: mean - dark_rate,
            sigma: (counts.max(1) as f64).sqrt() / self.dwell_s,
        }
    }

    pub fn net_fit_point_d1(&self, dark_rate: f64) -> FitPoint {
        self.fit_point(self.counts_d1, self.mean_d1, dark_rate)
    }

    pub fn net_fit_point_d2(&self, dark_rate: f64) -> FitPoint {
        self.fit_point(self.counts_d2, self.mean_d2, dark_rate)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutcome {
    pub points: Vec<FringePoint>,
    pub fit_d1: Option<FringeFit>,
    pub fit_d2: Option<FringeFit>,
    pub events: Vec<LogEntry>,
    /// Set when the lock was lost and the scan stopped early.
    pub aborted: Option<String>,
}

fn mean_sd(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (mean, sd)
}

/// Lock, settle, then step the modulator through the scan voltages in
/// ascending order and fit each detector's dark-subtracted fringe.
pub fn scan_voltage(cfg: &SimConfig) -> Result<ScanOutcome> {
    let mut sim = Simulator::new(cfg)?;
    let steps = cfg.steps_per_bin();
    sim.enable_control()?;
    let settle_bins = (cfg.scan.settle_s / cfg.bin_duration).round() as u64;
    for _ in 0..settle_bins {
        sim.advance(steps)?;
    }
    let mut aborted = sim.take_lock_lost().then(|| "lock lost while settling".to_string());

    let bins_per_point = (cfg.scan.dwell_s / cfg.bin_duration).round() as u64;
    let mut points = Vec::new();
    if aborted.is_none() {
        for v in cfg.scan.voltages() {
            sim.set_pm(PmSetting::Volts(v));
            let (mut r1, mut r2) = (Vec::new(), Vec::new());
            let (mut c1, mut c2) = (0u64, 0u64);
            let (mut in_band, mut max_dev) = (0.0, 0.0f64);
            for _ in 0..bins_per_point {
                let (rec, diag) = sim.advance(steps)?;
                r1.push(rec.rate_d1());
                r2.push(rec.rate_d2());
                c1 += rec.counts_d1;
                c2 += rec.counts_d2;
                in_band += diag.in_band_fraction;
                max_dev = max_dev.max(diag.max_monitor_dev);
            }
            if sim.take_lock_lost() {
                aborted = Some(format!("lock lost at {v} V"));
                break;
            }
            let (mean_d1, sd_d1) = mean_sd(&r1);
            let (mean_d2, sd_d2) = mean_sd(&r2);
            points.push(FringePoint {
                voltage: v,
                mean_d1,
                sd_d1,
                mean_d2,
                sd_d2,
                counts_d1: c1,
                counts_d2: c2,
                dwell_s: bins_per_point as f64 * cfg.bin_duration,
                monitor_in_band_fraction: in_band / bins_per_point as f64,
                max_monitor_dev: max_dev,
            });
        }
    }

    let (fit_d1, fit_d2) = if aborted.is_none() && points.len() >= 6 {
        let dark1 = cfg.d1.dark_rate();
        let dark2 = cfg.d2.dark_rate();
        let p1: Vec<FitPoint> = points.iter().map(|p| p.net_fit_point_d1(dark1)).collect();
        let p2: Vec<FitPoint> = points.iter().map(|p| p.net_fit_point_d2(dark2)).collect();
        (Some(fit_fringe(&p1)?), Some(fit_fringe(&p2)?))
    } else {
        (None, None)
    };
    Ok(ScanOutcome {
        points,
        fit_d1,
        fit_d2,
        events: sim.into_events(),
        aborted,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct InsetPoint {
    pub delay_ns: f64,
    /// Mean modulation envelope seen by the gate.
    pub envelope_factor: f64,
    pub pm_phase: f64,
    /// Expected D1 rate (counts/s).
    pub expected_d1: f64,
    /// Sampled D1 rate (counts/s).
    pub counts_d1: f64,
}

/// Sweep the D1 gate across the modulation pulse at the inset voltage.
///
/// The interferometer is taken as locked with D1 on its dark fringe, so the
/// counts trace the pulse shape. Each delay draws from its own stream.
pub fn inset_sweep(cfg: &SimConfig, threads: Option<usize>) -> Result<Vec<InsetPoint>> {
    cfg.validate()?;
    let src = cfg.source();
    let delays = cfg.inset.delays();
    let gates = (cfg.inset.dwell_s * cfg.d1.rep_rate_hz).round() as u64;
    let pool = worker_pool(threads)?;
    let points = pool.install(|| {
        delays
            .par_iter()
            .enumerate()
            .map(|(i, &delay)| {
                let g = gate_pm_overlap(&cfg.d1, &cfg.pm, delay);
                let pm_phase = PI * cfg.inset.voltage / cfg.pm.v_pi * g;
                let f_a = port_fractions(&cfg.optics, PI + pm_phase).a;
                let p = gate_click_probability(&src, &cfg.d1, f_a, g);
                let mut rng = seed::stream(cfg.seed, &format!("inset.{i}"));
                let n = sample_counts(p, gates, &mut rng);
                InsetPoint {
                    delay_ns: delay,
                    envelope_factor: g,
                    pm_phase,
                    expected_d1: p * cfg.d1.rep_rate_hz,
                    counts_d1: n as f64 / cfg.inset.dwell_s,
                }
            })
            .collect()
    });
    Ok(points)
}
