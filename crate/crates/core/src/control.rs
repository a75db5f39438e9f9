//! Discrete-time emulation of the feedback electronics: quadrature setpoint
//! calibration, PID update, and actuator range management.

use crate::error::{Error, Result};
use crate::plant::{monitor_level, OpticalParams, PlantState, StretcherParams};

/// Tunable controller settings, as they appear in the configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ControllerParams {
    /// Proportional gain (V per unit normalized error).
    pub kp: f64,
    /// Integral gain (V per unit error-second).
    pub ki: f64,
    /// Derivative gain (V per unit error per second).
    pub kd: f64,
    /// Control loop period (s).
    pub dt: f64,
    /// Fraction of the half voltage range usable before a range reset.
    pub guard_fraction: f64,
    /// Extra PD->driver latency, in whole loop periods.
    pub loop_delay_steps: u32,
    /// Stretcher sweep used to find the fringe extrema (V).
    pub calibration_range_v: f64,
    /// Loop periods the PID is held after a range reset.
    pub reset_hold_steps: u32,
}

impl Default for ControllerParams {
    fn default() -> Self {
        Self {
            kp: 0.5,
            ki: 10000.0,
            kd: 0.0,
            dt: 20e-6,
            guard_fraction: 0.9,
            loop_delay_steps: 0,
            calibration_range_v: 20.0,
            reset_hold_steps: 32,
        }
    }
}

/// Monitor photodetector reading.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonitorSample {
    /// Optical intensity normalized to the fringe maximum.
    pub pd_level: f64,
    pub time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ControllerState {
    pub kp: f64,
    pub ki: f64,
    pub kd: f64,
    pub integral: f64,
    pub prev_error: f64,
    pub setpoint: f64,
    pub i_min: f64,
    pub i_max: f64,
    pub calibrated: bool,
    /// +1 when the monitor falls with increasing drive at the lock point,
    /// -1 otherwise. Chosen so that positive gains give negative feedback.
    pub slope_sign: f64,
    pub output_v: f64,
    pub v_range: (f64, f64),
    pub enabled: bool,
}

impl ControllerState {
    pub fn new(params: &ControllerParams, v_range: (f64, f64)) -> Self {
        Self {
            kp: params.kp,
            ki: params.ki,
            kd: params.kd,
            integral: 0.0,
            prev_error: 0.0,
            setpoint: 0.5,
            i_min: 0.0,
            i_max: 1.0,
            calibrated: false,
            slope_sign: 1.0,
            output_v: 0.0,
            v_range,
            enabled: false,
        }
    }

    pub fn apply_calibration(&mut self, cal: &Calibration, slope_sign: f64) {
        self.i_min = cal.i_min;
        self.i_max = cal.i_max;
        self.setpoint = cal.setpoint;
        self.slope_sign = slope_sign.signum();
        self.calibrated = true;
    }

    /// Enable the loop, seeding the integrator so the drive does not jump.
    pub fn engage(&mut self) {
        self.integral = if self.ki != 0.0 {
            (self.output_v / self.ki).clamp(self.integral_bounds().0, self.integral_bounds().1)
        } else {
            0.0
        };
        self.prev_error = 0.0;
        self.enabled = true;
    }

    /// Integrator range equivalent to the drive voltage range.
    fn integral_bounds(&self) -> (f64, f64) {
        if self.ki == 0.0 {
            return (f64::NEG_INFINITY, f64::INFINITY);
        }
        let (a, b) = (self.v_range.0 / self.ki, self.v_range.1 / self.ki);
        (a.min(b), a.max(b))
    }
}

/// Observed monitor fringe extrema and the mid-fringe setpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Calibration {
    pub i_min: f64,
    pub i_max: f64,
    pub setpoint: f64,
}

fn steady_level(opt: &OpticalParams, st: &StretcherParams, state: &PlantState, v: f64) -> f64 {
    monitor_level(opt, state.phi_env + st.gain_rad_per_v * v)
}

/// Golden-section refinement of an extremum of `f` inside `[a, b]`.
fn refine_extremum(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, maximize: bool) -> f64 {
    let g = |x: f64| if maximize { -f(x) } else { f(x) };
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - r * (b - a);
    let mut d = a + r * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    for _ in 0..80 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - r * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + r * (b - a);
            fd = g(d);
        }
    }
    f(0.5 * (a + b))
}

/// Sweep the stretcher across `scan_range_v` (centered in its voltage
/// range, never past the rails) with the environment frozen and record the
/// monitor extrema.
pub fn calibrate_setpoint(
    opt: &OpticalParams,
    stretcher: &StretcherParams,
    state: &PlantState,
    scan_range_v: f64,
) -> Result<Calibration> {
    let scan_range_v = scan_range_v.min(stretcher.v_hi - stretcher.v_lo);
    let throw = stretcher.gain_rad_per_v.abs() * scan_range_v;
    if !(throw >= std::f64::consts::TAU) {
        return Err(Error::Calibration(format!(
            "scan of {scan_range_v} V covers {throw:.3} rad, less than one fringe"
        )));
    }
    let center = 0.5 * (stretcher.v_lo + stretcher.v_hi);
    let lo = center - 0.5 * scan_range_v;
    let fringes = throw / std::f64::consts::TAU;
    let n = (64.0 * fringes).ceil().max(256.0) as usize;
    let step = scan_range_v / n as f64;
    let level = |v: f64| steady_level(opt, stretcher, state, v);

    let (mut arg_min, mut arg_max) = (lo, lo);
    let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
    for i in 0..=n {
        let v = lo + step * i as f64;
        let l = level(v);
        if l < min {
            min = l;
            arg_min = v;
        }
        if l > max {
            max = l;
            arg_max = v;
        }
    }
    let i_min = refine_extremum(level, arg_min - step, arg_min + step, false).min(min);
    let i_max = refine_extremum(level, arg_max - step, arg_max + step, true).max(max);
    if !(i_max > i_min) {
        return Err(Error::Calibration("monitor shows no fringe contrast".into()));
    }
    Ok(Calibration {
        i_min,
        i_max,
        setpoint: 0.5 * (i_min + i_max),
    })
}

/// Dither the stretcher by `dither_v` around its present drive and return
/// the slope sign to lock on: +1 if the monitor falls with drive, else -1.
pub fn probe_slope_sign(opt: &OpticalParams, stretcher: &StretcherParams, state: &PlantState, dither_v: f64) -> f64 {
    let phase = state.classical_phase();
    let dphi = stretcher.gain_rad_per_v * dither_v;
    let up = monitor_level(opt, phase + dphi);
    let down = monitor_level(opt, phase - dphi);
    if up < down {
        1.0
    } else if up > down {
        -1.0
    } else {
        // sitting on an extremum: use the analytic slope a quarter-fringe on
        let ahead = monitor_level(opt, phase + std::f64::consts::FRAC_PI_2);
        if ahead < monitor_level(opt, phase) {
            1.0
        } else {
            -1.0
        }
    }
}

/// Normalized distance from the setpoint, signed for negative feedback.
pub fn quadrature_error(sample: &MonitorSample, ctl: &ControllerState) -> Result<f64> {
    if !ctl.calibrated {
        return Err(Error::Uncalibrated);
    }
    Ok(ctl.slope_sign * (sample.pd_level - ctl.setpoint) / (ctl.i_max - ctl.i_min))
}

/// One PID step. Disabled controllers hold their last drive.
pub fn pid_update(ctl: &ControllerState, error: f64, dt: f64) -> (ControllerState, f64) {
    if !ctl.enabled {
        return (ctl.clone(), ctl.output_v);
    }
    let mut next = ctl.clone();
    let (lo, hi) = ctl.integral_bounds();
    next.integral = (ctl.integral + error * dt).clamp(lo, hi);
    let derivative = (error - ctl.prev_error) / dt;
    let raw = ctl.kp * error + ctl.ki * next.integral + ctl.kd * derivative;
    let drive = raw.clamp(ctl.v_range.0, ctl.v_range.1);
    next.prev_error = error;
    next.output_v = drive;
    (next, drive)
}

#[derive(Debug, Clone, PartialEq)]
pub enum RangeAction {
    /// Drive is inside the safe band.
    Unchanged,
    /// Drive shifted by `delta_v`, i.e. `fringes` whole fringes of stretcher phase.
    Reset { fringes: i64, delta_v: f64 },
    /// No whole-fringe shift brings the drive back into the safe band.
    LockLost,
}

/// Keep the drive away from the rails by unwinding whole fringes.
pub fn range_reset(
    ctl: &ControllerState,
    stretcher: &StretcherParams,
    guard_fraction: f64,
) -> (ControllerState, RangeAction) {
    let (v_lo, v_hi) = ctl.v_range;
    let center = 0.5 * (v_lo + v_hi);
    let half = 0.5 * (v_hi - v_lo) * guard_fraction;
    let (safe_lo, safe_hi) = (center - half, center + half);
    let v = ctl.output_v;
    if (safe_lo..=safe_hi).contains(&v) {
        return (ctl.clone(), RangeAction::Unchanged);
    }
    let per_fringe = stretcher.volts_per_fringe();
    if per_fringe > v_hi - v_lo || ctl.ki == 0.0 {
        return (ctl.clone(), RangeAction::LockLost);
    }
    let k = if v > safe_hi {
        ((v - safe_hi) / per_fringe).ceil()
    } else {
        -((safe_lo - v) / per_fringe).ceil()
    };
    let shifted = v - k * per_fringe;
    if !(safe_lo..=safe_hi).contains(&shifted) {
        return (ctl.clone(), RangeAction::LockLost);
    }
    let delta_v = shifted - v;
    let mut next = ctl.clone();
    next.output_v = shifted;
    next.integral += delta_v / ctl.ki;
    (
        next,
        RangeAction::Reset {
            fringes: k as i64,
            delta_v,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::stretcher_response;
    use approx::assert_relative_eq;
    use std::f64::consts::{PI, TAU};

    fn calibrated() -> ControllerState {
        let mut ctl = ControllerState::new(&ControllerParams::default(), (-10.0, 10.0));
        ctl.apply_calibration(
            &Calibration {
                i_min: 0.1,
                i_max: 0.9,
                setpoint: 0.5,
            },
            1.0,
        );
        ctl
    }

    #[test]
    fn ideal_fringe_calibrates_to_half() {
        let opt = OpticalParams {
            t_arm1: 1.0,
            t_arm2: 1.0,
            overlap: 1.0,
            ..OpticalParams::default()
        };
        let cal = calibrate_setpoint(&opt, &StretcherParams::default(), &PlantState::default(), 20.0).unwrap();
        assert_relative_eq!(cal.i_min, 0.0, epsilon = 1e-10);
        assert_relative_eq!(cal.i_max, 1.0, epsilon = 1e-10);
        assert_relative_eq!(cal.setpoint, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn partial_overlap_setpoint_is_midpoint() {
        let opt = OpticalParams {
            t_arm1: 1.0,
            t_arm2: 1.0,
            overlap: 0.97,
            ..OpticalParams::default()
        };
        let state = PlantState {
            phi_env: 1.234,
            ..PlantState::default()
        };
        let cal = calibrate_setpoint(&opt, &StretcherParams::default(), &state, 3.0).unwrap();
        assert_relative_eq!(cal.i_min, (1.0 - 0.97) / 2.0, epsilon = 1e-10);
        assert_relative_eq!(cal.i_max, (1.0 + 0.97) / 2.0, epsilon = 1e-10);
        assert_relative_eq!(cal.setpoint, 0.5, epsilon = 1e-10);
    }

    #[test]
    fn half_fringe_scan_is_rejected() {
        let st = StretcherParams::default();
        let range = PI / st.gain_rad_per_v;
        let err = calibrate_setpoint(&OpticalParams::default(), &st, &PlantState::default(), range);
        assert!(matches!(err, Err(Error::Calibration(_))));

        let narrow = StretcherParams {
            v_lo: -0.4,
            v_hi: 0.4,
            ..st
        };
        let err = calibrate_setpoint(&OpticalParams::default(), &narrow, &PlantState::default(), 20.0);
        assert!(matches!(err, Err(Error::Calibration(_))));
    }

    #[test]
    fn quadrature_error_normalization() {
        let ctl = calibrated();
        let at = |pd| {
            quadrature_error(
                &MonitorSample {
                    pd_level: pd,
                    time: 0.0,
                },
                &ctl,
            )
            .unwrap()
        };
        assert_eq!(at(0.5), 0.0);
        assert_relative_eq!(at(0.9), 0.5);
        assert_relative_eq!(at(0.1), -0.5);

        let raw = ControllerState::new(&ControllerParams::default(), (-10.0, 10.0));
        let s = MonitorSample {
            pd_level: 0.5,
            time: 0.0,
        };
        assert!(matches!(quadrature_error(&s, &raw), Err(Error::Uncalibrated)));
    }

    #[test]
    fn pid_examples() {
        let mut ctl = calibrated();
        ctl.enabled = true;
        let (_, v) = pid_update(&ctl, 0.0, 20e-6);
        assert_eq!(v, 0.0);

        ctl.kp = 1.0;
        ctl.ki = 0.0;
        ctl.kd = 0.0;
        let (_, v) = pid_update(&ctl, 0.1, 20e-6);
        assert_relative_eq!(v, 0.1);
    }

    #[test]
    fn constant_error_integrates_linearly_until_clamp() {
        let mut ctl = calibrated();
        ctl.kp = 0.0;
        ctl.kd = 0.0;
        ctl.ki = 100.0;
        ctl.enabled = true;
        let (e, dt) = (0.2, 1e-3);
        let mut v = 0.0;
        for n in 1..=600 {
            let (next, drive) = pid_update(&ctl, e, dt);
            ctl = next;
            v = drive;
            let linear = ctl.ki * e * dt * n as f64;
            if linear < 10.0 {
                assert_relative_eq!(v, linear, max_relative = 1e-9);
            }
        }
        assert_eq!(v, 10.0);
        assert!(ctl.integral.is_finite() && ctl.integral <= 10.0 / 100.0 + 1e-12);
    }

    #[test]
    fn disabled_controller_holds_drive() {
        let mut ctl = calibrated();
        ctl.output_v = 3.3;
        let (next, v) = pid_update(&ctl, 0.4, 20e-6);
        assert_eq!(v, 3.3);
        assert_eq!(next, ctl);
    }

    #[test]
    fn pid_is_a_pure_function_of_its_inputs() {
        let mut ctl = calibrated();
        ctl.enabled = true;
        ctl.kd = 1e-4;
        ctl.integral = 1e-4;
        let a = pid_update(&ctl, 0.03, 20e-6);
        let b = pid_update(&ctl, 0.03, 20e-6);
        assert_eq!(a, b);
    }

    #[test]
    fn range_reset_near_rail() {
        // 2*pi of stretcher phase per 3 V
        let st = StretcherParams {
            gain_rad_per_v: TAU / 3.0,
            ..StretcherParams::default()
        };
        let mut ctl = calibrated();
        ctl.output_v = 9.5;
        ctl.integral = 9.5 / ctl.ki;
        let (next, action) = range_reset(&ctl, &st, 0.9);
        assert_eq!(
            action,
            RangeAction::Reset {
                fringes: 1,
                delta_v: -3.0
            }
        );
        assert_relative_eq!(next.output_v, 6.5);
        assert_relative_eq!(next.integral * next.ki, 6.5, max_relative = 1e-12);

        ctl.output_v = -9.95;
        let (next, action) = range_reset(&ctl, &st, 0.9);
        assert!(matches!(action, RangeAction::Reset { fringes: -1, .. }));
        assert_relative_eq!(next.output_v, -6.95, max_relative = 1e-12);
    }

    #[test]
    fn range_reset_mid_range_is_noop() {
        let mut ctl = calibrated();
        ctl.output_v = 1.2;
        let (next, action) = range_reset(&ctl, &StretcherParams::default(), 0.9);
        assert_eq!(action, RangeAction::Unchanged);
        assert_eq!(next, ctl);
    }

    #[test]
    fn range_narrower_than_a_fringe_loses_lock() {
        let st = StretcherParams {
            gain_rad_per_v: 0.1,
            ..StretcherParams::default()
        };
        let mut ctl = calibrated();
        ctl.output_v = 9.99;
        let (_, action) = range_reset(&ctl, &st, 0.9);
        assert_eq!(action, RangeAction::LockLost);
    }

    #[test]
    fn reset_preserves_monitor_level_without_noise() {
        let opt = OpticalParams::default();
        let st = StretcherParams::default();
        let mut ctl = calibrated();
        ctl.output_v = 9.4;
        let mut s = PlantState {
            phi_env: 0.3,
            ..PlantState::default()
        };
        for _ in 0..200 {
            s = stretcher_response(&s, &st, ctl.output_v, 20e-6).unwrap().state;
        }
        let before = monitor_level(&opt, s.classical_phase());
        let (next, action) = range_reset(&ctl, &st, 0.9);
        assert!(matches!(action, RangeAction::Reset { .. }));
        for _ in 0..64 {
            s = stretcher_response(&s, &st, next.output_v, 20e-6).unwrap().state;
        }
        let after = monitor_level(&opt, s.classical_phase());
        assert!((after - before).abs() < 1e-6, "{before} vs {after}");
    }

    #[test]
    fn slope_probe_picks_falling_side() {
        let opt = OpticalParams::default();
        let st = StretcherParams::default();
        // monitor ~ 1 + V cos(phi): falling for phi in (0, pi)
        let s = PlantState {
            phi_env: 1.0,
            ..PlantState::default()
        };
        assert_eq!(probe_slope_sign(&opt, &st, &s, 0.01), 1.0);
        let s = PlantState {
            phi_env: -1.0,
            ..PlantState::default()
        };
        assert_eq!(probe_slope_sign(&opt, &st, &s, 0.01), -1.0);
    }
}
