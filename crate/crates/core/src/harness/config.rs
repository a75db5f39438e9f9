//! Flat `key = value` configuration with dotted section keys.
//!
//! ```text
//! # comment
//! seed = 7
//! optics.overlap = 0.971
//! detectors.d1.dark_prob = 9.33e-6
//! scenario.events = control_on@0, set_pm_voltage@0:auto, control_off@250, end@300
//! ```

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use crate::control::ControllerParams;
use crate::detection::{DetectorParams, SourceParams};
use crate::error::{Error, Result, Violation};
use crate::plant::{NoiseParams, OpticalParams, OscComponent, PmParams, StretcherParams};

/// Modulator drive requested by a timeline event.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PmSetting {
    Volts(f64),
    /// Put the quantum channel on a fringe extremum at the current lock point.
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum EventKind {
    ControlOn,
    ControlOff,
    SetPmVoltage(PmSetting),
    End,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimelineEvent {
    pub time: f64,
    pub kind: EventKind,
}

impl fmt::Display for TimelineEvent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            EventKind::ControlOn => write!(f, "control_on@{}", self.time),
            EventKind::ControlOff => write!(f, "control_off@{}", self.time),
            EventKind::SetPmVoltage(PmSetting::Auto) => write!(f, "set_pm_voltage@{}:auto", self.time),
            EventKind::SetPmVoltage(PmSetting::Volts(v)) => write!(f, "set_pm_voltage@{}:{}", self.time, v),
            EventKind::End => write!(f, "end@{}", self.time),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub events: Vec<TimelineEvent>,
}

impl Default for Timeline {
    fn default() -> Self {
        use EventKind::*;
        let ev = |time, kind| TimelineEvent { time, kind };
        Self {
            events: vec![
                ev(0.0, ControlOn),
                ev(0.0, SetPmVoltage(PmSetting::Auto)),
                ev(250.0, ControlOff),
                ev(300.0, End),
            ],
        }
    }
}

impl Timeline {
    pub fn end_time(&self) -> Option<f64> {
        self.events.iter().find(|e| e.kind == EventKind::End).map(|e| e.time)
    }

    /// Replace the end time, dropping events at or after it.
    pub fn with_duration(&self, duration: f64) -> Self {
        let mut events: Vec<TimelineEvent> = self
            .events
            .iter()
            .filter(|e| e.kind != EventKind::End && e.time < duration)
            .copied()
            .collect();
        events.push(TimelineEvent {
            time: duration,
            kind: EventKind::End,
        });
        Self { events }
    }

    pub fn control_off_time(&self) -> Option<f64> {
        self.events
            .iter()
            .find(|e| e.kind == EventKind::ControlOff)
            .map(|e| e.time)
    }
}

impl fmt::Display for Timeline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.events.iter().map(ToString::to_string).collect();
        f.write_str(&parts.join(", "))
    }
}

impl FromStr for Timeline {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let mut events = Vec::new();
        for item in s.split(',').map(str::trim).filter(|i| !i.is_empty()) {
            let (name, rest) = item
                .split_once('@')
                .ok_or_else(|| format!("event `{item}` is not of the form kind@time"))?;
            let (time, arg) = match rest.split_once(':') {
                Some((t, a)) => (t, Some(a.trim())),
                None => (rest, None),
            };
            let time: f64 = time.trim().parse().map_err(|_| format!("event `{item}`: bad time"))?;
            let kind = match (name.trim(), arg) {
                ("control_on", None) => EventKind::ControlOn,
                ("control_off", None) => EventKind::ControlOff,
                ("end", None) => EventKind::End,
                ("set_pm_voltage", Some("auto")) => EventKind::SetPmVoltage(PmSetting::Auto),
                ("set_pm_voltage", Some(v)) => EventKind::SetPmVoltage(PmSetting::Volts(
                    v.parse().map_err(|_| format!("event `{item}`: bad voltage"))?,
                )),
                ("set_pm_voltage", None) => return Err(format!("event `{item}` needs :VOLTS or :auto")),
                (other, _) => return Err(format!("unknown event `{other}`")),
            };
            events.push(TimelineEvent { time, kind });
        }
        Ok(Self { events })
    }
}

/// Modulator voltage scan protocol.
#[derive(Debug, Clone, PartialEq)]
pub struct ScanSpec {
    pub v_start: f64,
    pub v_end: f64,
    pub points: usize,
    /// Integration time per voltage (s).
    pub dwell_s: f64,
    /// Locked settling time before the first point (s).
    pub settle_s: f64,
}

impl Default for ScanSpec {
    fn default() -> Self {
        Self {
            v_start: 0.0,
            v_end: 6.8,
            points: 15,
            dwell_s: 10.0,
            settle_s: 10.0,
        }
    }
}

impl ScanSpec {
    pub fn voltages(&self) -> Vec<f64> {
        if self.points == 1 {
            return vec![self.v_start];
        }
        (0..self.points)
            .map(|i| self.v_start + (self.v_end - self.v_start) * i as f64 / (self.points - 1) as f64)
            .collect()
    }
}

/// Gate-delay sweep reproducing the modulation pulse shape.
#[derive(Debug, Clone, PartialEq)]
pub struct InsetSpec {
    pub voltage: f64,
    pub delay_start_ns: f64,
    pub delay_end_ns: f64,
    pub delay_step_ns: f64,
    pub dwell_s: f64,
}

impl Default for InsetSpec {
    fn default() -> Self {
        Self {
            voltage: 6.8,
            delay_start_ns: -10.0,
            delay_end_ns: 70.0,
            delay_step_ns: 0.25,
            dwell_s: 1.0,
        }
    }
}

impl InsetSpec {
    pub fn delays(&self) -> Vec<f64> {
        let n = ((self.delay_end_ns - self.delay_start_ns) / self.delay_step_ns + 1e-9).floor() as usize;
        (0..=n)
            .map(|i| self.delay_start_ns + self.delay_step_ns * i as f64)
            .collect()
    }
}

/// Classical launch power and channel isolation used for the leakage check.
#[derive(Debug, Clone, PartialEq)]
pub struct CrosstalkParams {
    pub launch_dbm: f64,
    pub isolation_db: f64,
}

impl Default for CrosstalkParams {
    fn default() -> Self {
        Self {
            launch_dbm: -17.0,
            isolation_db: 100.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub seed: u64,
    /// Integration bin of the time series (s).
    pub bin_duration: f64,
    pub optics: OpticalParams,
    pub noise: NoiseParams,
    pub stretcher: StretcherParams,
    pub pm: PmParams,
    pub controller: ControllerParams,
    pub d1: DetectorParams,
    pub d2: DetectorParams,
    /// Mean photon number per gate at the interferometer input.
    pub mu: f64,
    pub crosstalk: CrosstalkParams,
    pub scenario: Timeline,
    pub scan: ScanSpec,
    pub inset: InsetSpec,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            seed: 1,
            bin_duration: 1.0,
            optics: OpticalParams::default(),
            noise: NoiseParams::default(),
            stretcher: StretcherParams::default(),
            pm: PmParams::default(),
            controller: ControllerParams::default(),
            d1: DetectorParams::d1(),
            d2: DetectorParams::d2(),
            mu: 0.1,
            crosstalk: CrosstalkParams::default(),
            scenario: Timeline::default(),
            scan: ScanSpec::default(),
            inset: InsetSpec::default(),
        }
    }
}

fn is_multiple(x: f64, unit: f64) -> bool {
    let r = x / unit;
    (r - r.round()).abs() <= 1e-9 * r.abs().max(1.0)
}

fn format_components(c: &[OscComponent]) -> String {
    c.iter()
        .map(|c| format!("{}:{}:{}", c.freq_hz, c.amplitude, c.phase))
        .collect::<Vec<_>>()
        .join(", ")
}

fn parse_components(s: &str) -> std::result::Result<Vec<OscComponent>, String> {
    s.split(',')
        .map(str::trim)
        .filter(|i| !i.is_empty())
        .map(|item| {
            let parts: Vec<&str> = item.split(':').map(str::trim).collect();
            let num = |p: &str| p.parse::<f64>().map_err(|_| format!("component `{item}`: bad number"));
            match parts.as_slice() {
                [f, a] => Ok(OscComponent {
                    freq_hz: num(f)?,
                    amplitude: num(a)?,
                    phase: 0.0,
                }),
                [f, a, p] => Ok(OscComponent {
                    freq_hz: num(f)?,
                    amplitude: num(a)?,
                    phase: num(p)?,
                }),
                _ => Err(format!("component `{item}` is not FREQ:AMP[:PHASE]")),
            }
        })
        .collect()
}

fn parse_value<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse `{value}`"))
}

impl SimConfig {
    /// Every key with its current value, in the order `print-defaults` emits.
    pub fn entries(&self) -> Vec<(String, String)> {
        let mut out: Vec<(String, String)> = Vec::new();
        let mut put = |k: &str, v: String| out.push((k.to_string(), v));
        put("seed", self.seed.to_string());
        put("bin_duration_s", self.bin_duration.to_string());

        let o = &self.optics;
        put("optics.lambda_q_nm", o.lambda_q_nm.to_string());
        put("optics.lambda_ph_nm", o.lambda_ph_nm.to_string());
        put("optics.group_index", o.group_index.to_string());
        put("optics.delta_l_mm", o.delta_l_mm.to_string());
        put("optics.t_arm1", o.t_arm1.to_string());
        put("optics.t_arm2", o.t_arm2.to_string());
        put("optics.overlap", o.overlap.to_string());
        put("optics.demux_loss_db", o.demux_loss_db.to_string());
        put("optics.filter_loss_db", o.filter_loss_db.to_string());

        let n = &self.noise;
        put("noise.diffusion", n.diffusion.to_string());
        put("noise.components", format_components(&n.components));
        put("noise.cutoff_hz", n.cutoff_hz.to_string());
        put("noise.rng_stream", n.rng_stream.clone());

        let s = &self.stretcher;
        put("stretcher.gain_rad_per_v", s.gain_rad_per_v.to_string());
        put("stretcher.corner_hz", s.corner_hz.to_string());
        put("stretcher.v_lo", s.v_lo.to_string());
        put("stretcher.v_hi", s.v_hi.to_string());

        let p = &self.pm;
        put("pm.v_pi", p.v_pi.to_string());
        put("pm.pulse_width_ns", p.pulse_width_ns.to_string());
        put("pm.ringing_amp", p.ringing_amp.to_string());
        put("pm.ringing_freq_hz", p.ringing_freq_hz.to_string());
        put("pm.ringing_decay_per_ns", p.ringing_decay_per_ns.to_string());
        put("pm.v_max", p.v_max.to_string());

        let c = &self.controller;
        put("controller.kp", c.kp.to_string());
        put("controller.ki", c.ki.to_string());
        put("controller.kd", c.kd.to_string());
        put("controller.dt_s", c.dt.to_string());
        put("controller.guard_fraction", c.guard_fraction.to_string());
        put("controller.loop_delay_steps", c.loop_delay_steps.to_string());
        put("controller.calibration_range_v", c.calibration_range_v.to_string());
        put("controller.reset_hold_steps", c.reset_hold_steps.to_string());

        for (name, d) in [("d1", &self.d1), ("d2", &self.d2)] {
            put(&format!("detectors.{name}.efficiency"), d.efficiency.to_string());
            put(&format!("detectors.{name}.dark_prob"), d.dark_prob.to_string());
            put(&format!("detectors.{name}.gate_width_ns"), d.gate_width_ns.to_string());
            put(&format!("detectors.{name}.rep_rate_hz"), d.rep_rate_hz.to_string());
            put(&format!("detectors.{name}.sync_delay_us"), d.sync_delay_us.to_string());
            put(
                &format!("detectors.{name}.gate_offset_ns"),
                d.gate_offset_ns.to_string(),
            );
        }

        put("source.mu", self.mu.to_string());
        put("crosstalk.launch_dbm", self.crosstalk.launch_dbm.to_string());
        put("crosstalk.isolation_db", self.crosstalk.isolation_db.to_string());
        put("scenario.events", self.scenario.to_string());

        let sc = &self.scan;
        put("scan.v_start", sc.v_start.to_string());
        put("scan.v_end", sc.v_end.to_string());
        put("scan.points", sc.points.to_string());
        put("scan.dwell_s", sc.dwell_s.to_string());
        put("scan.settle_s", sc.settle_s.to_string());

        let i = &self.inset;
        put("inset.voltage", i.voltage.to_string());
        put("inset.delay_start_ns", i.delay_start_ns.to_string());
        put("inset.delay_end_ns", i.delay_end_ns.to_string());
        put("inset.delay_step_ns", i.delay_step_ns.to_string());
        put("inset.dwell_s", i.dwell_s.to_string());
        out
    }

    /// Set one key. Unknown keys are an error.
    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        macro_rules! f {
            ($field:expr) => {
                $field = parse_value(key, value)?
            };
        }
        match key {
            "seed" => f!(self.seed),
            "bin_duration_s" => f!(self.bin_duration),
            "optics.lambda_q_nm" => f!(self.optics.lambda_q_nm),
            "optics.lambda_ph_nm" => f!(self.optics.lambda_ph_nm),
            "optics.group_index" => f!(self.optics.group_index),
            "optics.delta_l_mm" => f!(self.optics.delta_l_mm),
            "optics.t_arm1" => f!(self.optics.t_arm1),
            "optics.t_arm2" => f!(self.optics.t_arm2),
            "optics.overlap" => f!(self.optics.overlap),
            "optics.demux_loss_db" => f!(self.optics.demux_loss_db),
            "optics.filter_loss_db" => f!(self.optics.filter_loss_db),
            "noise.diffusion" => f!(self.noise.diffusion),
            "noise.components" => self.noise.components = parse_components(value)?,
            "noise.cutoff_hz" => f!(self.noise.cutoff_hz),
            "noise.rng_stream" => self.noise.rng_stream = value.to_string(),
            "stretcher.gain_rad_per_v" => f!(self.stretcher.gain_rad_per_v),
            "stretcher.corner_hz" => f!(self.stretcher.corner_hz),
            "stretcher.v_lo" => f!(self.stretcher.v_lo),
            "stretcher.v_hi" => f!(self.stretcher.v_hi),
            "pm.v_pi" => f!(self.pm.v_pi),
            "pm.pulse_width_ns" => f!(self.pm.pulse_width_ns),
            "pm.ringing_amp" => f!(self.pm.ringing_amp),
            "pm.ringing_freq_hz" => f!(self.pm.ringing_freq_hz),
            "pm.ringing_decay_per_ns" => f!(self.pm.ringing_decay_per_ns),
            "pm.v_max" => f!(self.pm.v_max),
            "controller.kp" => f!(self.controller.kp),
            "controller.ki" => f!(self.controller.ki),
            "controller.kd" => f!(self.controller.kd),
            "controller.dt_s" => f!(self.controller.dt),
            "controller.guard_fraction" => f!(self.controller.guard_fraction),
            "controller.loop_delay_steps" => f!(self.controller.loop_delay_steps),
            "controller.calibration_range_v" => f!(self.controller.calibration_range_v),
            "controller.reset_hold_steps" => f!(self.controller.reset_hold_steps),
            "source.mu" => f!(self.mu),
            "crosstalk.launch_dbm" => f!(self.crosstalk.launch_dbm),
            "crosstalk.isolation_db" => f!(self.crosstalk.isolation_db),
            "scenario.events" => self.scenario = value.parse()?,
            "scan.v_start" => f!(self.scan.v_start),
            "scan.v_end" => f!(self.scan.v_end),
            "scan.points" => f!(self.scan.points),
            "scan.dwell_s" => f!(self.scan.dwell_s),
            "scan.settle_s" => f!(self.scan.settle_s),
            "inset.voltage" => f!(self.inset.voltage),
            "inset.delay_start_ns" => f!(self.inset.delay_start_ns),
            "inset.delay_end_ns" => f!(self.inset.delay_end_ns),
            "inset.delay_step_ns" => f!(self.inset.delay_step_ns),
            "inset.dwell_s" => f!(self.inset.dwell_s),
            _ => {
                let det = key
                    .strip_prefix("detectors.d1.")
                    .map(|k| (&mut self.d1, k))
                    .or_else(|| key.strip_prefix("detectors.d2.").map(|k| (&mut self.d2, k)));
                let Some((d, field)) = det else {
                    return Err(format!("unknown key `{key}`"));
                };
                match field {
                    "efficiency" => f!(d.efficiency),
                    "dark_prob" => f!(d.dark_prob),
                    "gate_width_ns" => f!(d.gate_width_ns),
                    "rep_rate_hz" => f!(d.rep_rate_hz),
                    "sync_delay_us" => f!(d.sync_delay_us),
                    "gate_offset_ns" => f!(d.gate_offset_ns),
                    _ => return Err(format!("unknown key `{key}`")),
                }
            }
        }
        Ok(())
    }

    pub fn source(&self) -> SourceParams {
        SourceParams {
            mu: self.mu,
            post_path_loss_db: self.optics.post_path_loss_db(),
        }
    }

    /// Controller steps per time-series bin.
    pub fn steps_per_bin(&self) -> u64 {
        (self.bin_duration / self.controller.dt).round() as u64
    }

    /// Every violated invariant, not just the first.
    pub fn violations(&self) -> Vec<Violation> {
        let mut v = Vec::new();
        self.optics.check("optics", &mut v);
        self.noise.check("noise", &mut v);
        self.stretcher.check("stretcher", &mut v);
        self.pm.check("pm", &mut v);
        self.d1.check("detectors.d1", &mut v);
        self.d2.check("detectors.d2", &mut v);

        let c = &self.controller;
        for (k, x) in [
            ("controller.kp", c.kp),
            ("controller.ki", c.ki),
            ("controller.kd", c.kd),
        ] {
            if !x.is_finite() {
                v.push(Violation::new(k, "must be finite"));
            }
        }
        let dt_ok = c.dt.is_finite() && c.dt > 0.0;
        if !dt_ok {
            v.push(Violation::new("controller.dt_s", "must be positive"));
        } else {
            let f_max = self.noise.max_frequency();
            if f_max > 0.0 && c.dt > 1.0 / (10.0 * f_max) {
                v.push(Violation::new(
                    "controller.dt_s",
                    "must resolve the fastest noise component (dt <= 1/(10 f))",
                ));
            }
            if self.d1.rep_rate_hz.is_finite() && c.dt * self.d1.rep_rate_hz > 1e6 {
                v.push(Violation::new("controller.dt_s", "too many gates per loop period"));
            }
        }
        if !(c.guard_fraction > 0.0 && c.guard_fraction <= 1.0) {
            v.push(Violation::new("controller.guard_fraction", "must lie in (0, 1]"));
        }
        if !(c.calibration_range_v.is_finite() && c.calibration_range_v > 0.0) {
            v.push(Violation::new("controller.calibration_range_v", "must be positive"));
        } else if c.calibration_range_v > self.stretcher.v_hi - self.stretcher.v_lo + 1e-12 {
            v.push(Violation::new(
                "controller.calibration_range_v",
                "exceeds the stretcher voltage range",
            ));
        }

        if self.d1.rep_rate_hz != self.d2.rep_rate_hz {
            v.push(Violation::new(
                "detectors.d2.rep_rate_hz",
                "both detectors share one gate clock",
            ));
        }
        if !(self.mu.is_finite() && self.mu >= 0.0) {
            v.push(Violation::new("source.mu", "must be >= 0"));
        }
        if !(self.crosstalk.isolation_db >= 0.0) {
            v.push(Violation::new("crosstalk.isolation_db", "must be >= 0"));
        }
        if !self.crosstalk.launch_dbm.is_finite() {
            v.push(Violation::new("crosstalk.launch_dbm", "must be finite"));
        }

        let bin_ok = self.bin_duration.is_finite() && self.bin_duration > 0.0;
        if !bin_ok {
            v.push(Violation::new("bin_duration_s", "must be positive"));
        } else if dt_ok && !is_multiple(self.bin_duration, c.dt) {
            v.push(Violation::new(
                "bin_duration_s",
                "must be a whole number of controller steps",
            ));
        }
        self.check_timeline(bin_ok, &mut v);
        self.check_scan(bin_ok, &mut v);

        let i = &self.inset;
        if !(i.voltage >= 0.0 && i.voltage <= self.pm.v_max) {
            v.push(Violation::new("inset.voltage", "must lie in [0, pm.v_max]"));
        }
        if !(i.delay_step_ns > 0.0 && i.delay_end_ns > i.delay_start_ns) {
            v.push(Violation::new(
                "inset.delay_step_ns",
                "needs a positive step and end > start",
            ));
        } else if (i.delay_end_ns - i.delay_start_ns) / i.delay_step_ns > 1e6 {
            v.push(Violation::new("inset.delay_step_ns", "more than 1e6 delay points"));
        }
        if !(i.dwell_s > 0.0 && i.dwell_s.is_finite()) {
            v.push(Violation::new("inset.dwell_s", "must be positive"));
        }
        v
    }

    fn check_timeline(&self, bin_ok: bool, v: &mut Vec<Violation>) {
        let key = "scenario.events";
        let ev = &self.scenario.events;
        let ends = ev.iter().filter(|e| e.kind == EventKind::End).count();
        if ends != 1 {
            v.push(Violation::new(key, "exactly one end event is required"));
        }
        if let Some(last) = ev.last() {
            if ends == 1 && last.kind != EventKind::End {
                v.push(Violation::new(key, "end must be the last event"));
            }
        }
        for w in ev.windows(2) {
            if w[1].time < w[0].time {
                v.push(Violation::new(
                    key,
                    format!("events out of order at {} and {}", w[0], w[1]),
                ));
            }
        }
        if let Some(end) = self.scenario.end_time() {
            if ev.iter().any(|e| e.kind != EventKind::End && e.time >= end) {
                v.push(Violation::new(key, "events must precede end"));
            }
            if !(end > 0.0) {
                v.push(Violation::new(key, "end time must be positive"));
            }
        }
        for e in ev {
            if !(e.time.is_finite() && e.time >= 0.0) {
                v.push(Violation::new(key, format!("{e}: time must be >= 0")));
            } else if bin_ok && !is_multiple(e.time, self.bin_duration) {
                v.push(Violation::new(key, format!("{e}: time must fall on a bin boundary")));
            }
            if let EventKind::SetPmVoltage(PmSetting::Volts(x)) = e.kind {
                if !(x >= 0.0 && x <= self.pm.v_max) {
                    v.push(Violation::new(key, format!("{e}: voltage outside [0, pm.v_max]")));
                }
            }
        }
    }

    fn check_scan(&self, bin_ok: bool, v: &mut Vec<Violation>) {
        let s = &self.scan;
        for (k, x) in [("scan.v_start", s.v_start), ("scan.v_end", s.v_end)] {
            if !(x >= 0.0 && x <= self.pm.v_max) {
                v.push(Violation::new(k, "must lie in [0, pm.v_max]"));
            }
        }
        if s.points == 0 {
            v.push(Violation::new("scan.points", "must be >= 1"));
        }
        if !(s.dwell_s > 0.0) {
            v.push(Violation::new("scan.dwell_s", "must be positive"));
        } else if bin_ok && !is_multiple(s.dwell_s, self.bin_duration) {
            v.push(Violation::new("scan.dwell_s", "must be a whole number of bins"));
        }
        if !(s.settle_s >= 0.0) {
            v.push(Violation::new("scan.settle_s", "must be >= 0"));
        } else if bin_ok && !is_multiple(s.settle_s, self.bin_duration) {
            v.push(Violation::new("scan.settle_s", "must be a whole number of bins"));
        }
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Validation(v))
        }
    }
}

/// Parse configuration text on top of the defaults and validate it.
pub fn parse_config(text: &str) -> Result<SimConfig> {
    let mut cfg = SimConfig::default();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = match raw.find('#') {
            Some(i) => &raw[..i],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
            line: line_no,
            message: format!("expected `key = value`, got `{line}`"),
        })?;
        let key = key.trim();
        if !seen.insert(key.to_string()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate key `{key}`"),
            });
        }
        cfg.set(key, value.trim())
            .map_err(|message| Error::Parse { line: line_no, message })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// The full default configuration as parseable text.
pub fn print_defaults() -> String {
    render_config(&SimConfig::default())
}

pub fn render_config(cfg: &SimConfig) -> String {
    let mut out = String::from("# mzlock configuration; every key is optional\n");
    let mut section = String::new();
    for (k, v) in cfg.entries() {
        let s = k.split('.').next().unwrap_or_default().to_string();
        if s != section && k.contains('.') {
            out.push('\n');
            section = s;
        }
        out.push_str(&format!("{k} = {v}\n"));
    }
    out
}
