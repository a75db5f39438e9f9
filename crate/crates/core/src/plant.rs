//! Two-arm fiber interferometer: environmental phase drift, the piezo fiber
//! stretcher, the pulsed electro-optic phase modulator, and the per-port
//! output fractions seen by the classical monitor and the quantum channel.

use std::f64::consts::{PI, TAU};

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result, Violation};

/// Speed of light in vacuum (m/s).
pub const SPEED_OF_LIGHT: f64 = 2.997_924_58e8;

#[derive(Debug, Clone, PartialEq)]
pub struct OpticalParams {
    /// Quantum channel wavelength (nm).
    pub lambda_q_nm: f64,
    /// Classical feedback channel wavelength (nm).
    pub lambda_ph_nm: f64,
    pub group_index: f64,
    /// Residual arm length mismatch after balancing (mm).
    pub delta_l_mm: f64,
    /// Arm power transmissions (linear).
    pub t_arm1: f64,
    pub t_arm2: f64,
    /// Polarization mode overlap at the output coupler.
    pub overlap: f64,
    pub demux_loss_db: f64,
    pub filter_loss_db: f64,
}

impl Default for OpticalParams {
    fn default() -> Self {
        Self {
            lambda_q_nm: 1546.12,
            lambda_ph_nm: 1547.72,
            group_index: 1.468,
            delta_l_mm: 0.2,
            t_arm1: 0.8,
            t_arm2: 0.8,
            overlap: 0.971,
            demux_loss_db: 1.6,
            filter_loss_db: 1.5,
        }
    }
}

impl OpticalParams {
    /// Fringe visibility implied by the arm balance and mode overlap.
    pub fn fringe_visibility(&self) -> f64 {
        let sum = self.t_arm1 + self.t_arm2;
        if sum <= 0.0 {
            return 0.0;
        }
        2.0 * self.overlap * (self.t_arm1 * self.t_arm2).sqrt() / sum
    }

    /// Total loss between the output coupler and a detector (dB).
    pub fn post_path_loss_db(&self) -> f64 {
        self.demux_loss_db + self.filter_loss_db
    }

    pub fn check(&self, prefix: &str, out: &mut Vec<Violation>) {
        let key = |name: &str| format!("{prefix}.{name}");
        for (name, v) in [("lambda_q_nm", self.lambda_q_nm), ("lambda_ph_nm", self.lambda_ph_nm)] {
            if !(v.is_finite() && v > 0.0) {
                out.push(Violation::new(key(name), "wavelength must be positive"));
            }
        }
        if !(self.group_index.is_finite() && self.group_index > 0.0) {
            out.push(Violation::new(key("group_index"), "must be positive"));
        }
        if !(self.delta_l_mm.is_finite() && self.delta_l_mm >= 0.0) {
            out.push(Violation::new(key("delta_l_mm"), "must be >= 0"));
        }
        for (name, v) in [
            ("t_arm1", self.t_arm1),
            ("t_arm2", self.t_arm2),
            ("overlap", self.overlap),
        ] {
            if !(0.0..=1.0).contains(&v) {
                out.push(Violation::new(key(name), "must lie in [0, 1]"));
            }
        }
        for (name, v) in [
            ("demux_loss_db", self.demux_loss_db),
            ("filter_loss_db", self.filter_loss_db),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                out.push(Violation::new(key(name), "loss must be >= 0 dB"));
            }
        }
    }
}

/// One deterministic sinusoidal component of the environmental phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OscComponent {
    pub freq_hz: f64,
    pub amplitude: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NoiseParams {
    /// Random-walk phase diffusion (rad^2/s).
    pub diffusion: f64,
    pub components: Vec<OscComponent>,
    /// Highest admissible component frequency (Hz).
    pub cutoff_hz: f64,
    /// Label of the seed stream driving the random walk.
    pub rng_stream: String,
}

impl Default for NoiseParams {
    fn default() -> Self {
        Self {
            diffusion: 1.0,
            components: vec![OscComponent {
                freq_hz: 100.0,
                amplitude: 0.5,
                phase: 0.0,
            }],
            cutoff_hz: 100.0,
            rng_stream: "environment".to_string(),
        }
    }
}

impl NoiseParams {
    pub fn max_frequency(&self) -> f64 {
        self.components.iter().map(|c| c.freq_hz).fold(0.0, f64::max)
    }

    /// Deterministic part of the environmental phase at time `t`.
    pub fn oscillatory_phase(&self, t: f64) -> f64 {
        self.components
            .iter()
            .map(|c| c.amplitude * (TAU * c.freq_hz * t + c.phase).sin())
            .sum()
    }

    pub fn check(&self, prefix: &str, out: &mut Vec<Violation>) {
        if !(self.diffusion.is_finite() && self.diffusion >= 0.0) {
            out.push(Violation::new(format!("{prefix}.diffusion"), "must be >= 0"));
        }
        if !(self.cutoff_hz.is_finite() && self.cutoff_hz > 0.0) {
            out.push(Violation::new(format!("{prefix}.cutoff_hz"), "must be positive"));
        }
        for (i, c) in self.components.iter().enumerate() {
            if !(c.freq_hz.is_finite() && c.freq_hz >= 0.0 && c.freq_hz <= self.cutoff_hz) {
                out.push(Violation::new(
                    format!("{prefix}.components"),
                    format!("component {i}: frequency {} Hz outside [0, cutoff]", c.freq_hz),
                ));
            }
            if !(c.amplitude.is_finite() && c.amplitude >= 0.0) {
                out.push(Violation::new(
                    format!("{prefix}.components"),
                    format!("component {i}: amplitude must be >= 0"),
                ));
            }
            if !c.phase.is_finite() {
                out.push(Violation::new(
                    format!("{prefix}.components"),
                    format!("component {i}: phase must be finite"),
                ));
            }
        }
        if self.rng_stream.is_empty() {
            out.push(Violation::new(format!("{prefix}.rng_stream"), "must not be empty"));
        }
    }
}

/// Piezoelectric fiber stretcher: a first-order actuator with a voltage range.
#[derive(Debug, Clone, PartialEq)]
pub struct StretcherParams {
    pub gain_rad_per_v: f64,
    pub corner_hz: f64,
    pub v_lo: f64,
    pub v_hi: f64,
}

impl Default for StretcherParams {
    fn default() -> Self {
        // +-10 V at 2*pi rad/V gives a +-20*pi phase throw.
        Self {
            gain_rad_per_v: TAU,
            corner_hz: 5000.0,
            v_lo: -10.0,
            v_hi: 10.0,
        }
    }
}

impl StretcherParams {
    /// Drive voltage equivalent to one full fringe of stretcher phase.
    pub fn volts_per_fringe(&self) -> f64 {
        TAU / self.gain_rad_per_v.abs()
    }

    pub fn check(&self, prefix: &str, out: &mut Vec<Violation>) {
        if !(self.gain_rad_per_v.is_finite() && self.gain_rad_per_v != 0.0) {
            out.push(Violation::new(
                format!("{prefix}.gain_rad_per_v"),
                "must be finite and nonzero",
            ));
        }
        if !(self.corner_hz.is_finite() && self.corner_hz > 0.0) {
            out.push(Violation::new(format!("{prefix}.corner_hz"), "must be positive"));
        }
        if !(self.v_lo.is_finite() && self.v_hi.is_finite() && self.v_lo < self.v_hi) {
            out.push(Violation::new(
                format!("{prefix}.v_lo"),
                "voltage range must satisfy v_lo < v_hi",
            ));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PmParams {
    /// Half-wave voltage (V).
    pub v_pi: f64,
    pub pulse_width_ns: f64,
    /// Post-pulse ringing amplitude relative to the main pulse.
    pub ringing_amp: f64,
    pub ringing_freq_hz: f64,
    pub ringing_decay_per_ns: f64,
    /// Highest drive the pulse generator can deliver (V).
    pub v_max: f64,
}

impl Default for PmParams {
    fn default() -> Self {
        Self {
            v_pi: 5.0,
            pulse_width_ns: 10.0,
            ringing_amp: 0.2,
            ringing_freq_hz: 100e6,
            ringing_decay_per_ns: 0.05,
            v_max: 6.8,
        }
    }
}

impl PmParams {
    /// Normalized modulation pulse shape at `t_ns` after the leading edge:
    /// 0 before the pulse, 1 on the flat top, then a damped sinusoid.
    pub fn envelope(&self, t_ns: f64) -> f64 {
        if t_ns < 0.0 {
            0.0
        } else if t_ns <= self.pulse_width_ns {
            1.0
        } else {
            let tau = t_ns - self.pulse_width_ns;
            self.ringing_amp * (-self.ringing_decay_per_ns * tau).exp() * (self.ringing_omega_per_ns() * tau).sin()
        }
    }

    pub(crate) fn ringing_omega_per_ns(&self) -> f64 {
        TAU * self.ringing_freq_hz * 1e-9
    }

    /// Integral of the envelope over `[a_ns, b_ns]` (ns), in closed form.
    pub fn envelope_integral(&self, a_ns: f64, b_ns: f64) -> f64 {
        if b_ns <= a_ns {
            return 0.0;
        }
        let w = self.pulse_width_ns;
        let flat = (b_ns.min(w) - a_ns.max(0.0)).max(0.0);
        let lo = a_ns.max(w) - w;
        let hi = b_ns - w;
        let ring = if hi > lo {
            let g = self.ringing_decay_per_ns;
            let om = self.ringing_omega_per_ns();
            // antiderivative of e^{-g t} sin(om t)
            let prim = |t: f64| -(-g * t).exp() * (g * (om * t).sin() + om * (om * t).cos()) / (g * g + om * om);
            if g == 0.0 && om == 0.0 {
                0.0
            } else {
                self.ringing_amp * (prim(hi) - prim(lo))
            }
        } else {
            0.0
        };
        flat + ring
    }

    pub fn check(&self, prefix: &str, out: &mut Vec<Violation>) {
        if !(self.v_pi.is_finite() && self.v_pi > 0.0) {
            out.push(Violation::new(format!("{prefix}.v_pi"), "must be positive"));
        }
        if !(self.pulse_width_ns.is_finite() && self.pulse_width_ns > 0.0) {
            out.push(Violation::new(format!("{prefix}.pulse_width_ns"), "must be positive"));
        }
        if !(self.ringing_amp >= 0.0 && self.ringing_amp < 1.0) {
            out.push(Violation::new(format!("{prefix}.ringing_amp"), "must lie in [0, 1)"));
        }
        if !(self.ringing_freq_hz.is_finite() && self.ringing_freq_hz >= 0.0) {
            out.push(Violation::new(format!("{prefix}.ringing_freq_hz"), "must be >= 0"));
        }
        if !(self.ringing_decay_per_ns.is_finite() && self.ringing_decay_per_ns >= 0.0) {
            out.push(Violation::new(format!("{prefix}.ringing_decay_per_ns"), "must be >= 0"));
        }
        if !(self.v_max.is_finite() && self.v_max > 0.0) {
            out.push(Violation::new(format!("{prefix}.v_max"), "must be positive"));
        }
    }
}

/// Instantaneous interferometer state.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PlantState {
    /// Environmental phase difference (rad): random walk plus oscillations.
    pub phi_env: f64,
    /// Random-walk part of `phi_env` (rad).
    pub phi_drift: f64,
    /// Phase imposed by the fiber stretcher (rad).
    pub phi_stretcher: f64,
    /// Drive voltage currently applied to the stretcher (V).
    pub stretcher_v: f64,
    /// Simulation clock (s).
    pub time: f64,
}

impl PlantState {
    /// State at t = 0 with the given initial drift phase.
    pub fn initial(noise: &NoiseParams, phi_drift: f64) -> Self {
        Self {
            phi_env: phi_drift + noise.oscillatory_phase(0.0),
            phi_drift,
            ..Self::default()
        }
    }

    /// Interferometer phase seen by the classical monitor (PM excluded).
    pub fn classical_phase(&self) -> f64 {
        self.phi_env + self.phi_stretcher
    }

    fn ensure_finite(&self) -> Result<()> {
        let fields = [
            ("phi_env", self.phi_env),
            ("phi_drift", self.phi_drift),
            ("phi_stretcher", self.phi_stretcher),
            ("stretcher_v", self.stretcher_v),
            ("time", self.time),
        ];
        match fields.iter().find(|(_, v)| !v.is_finite()) {
            Some((name, v)) => Err(Error::Diagnostics(format!("{name} = {v}"))),
            None => Ok(()),
        }
    }
}

/// Advance the environmental phase by one step of `dt` seconds.
///
/// The drift takes a Wiener increment of variance `diffusion * dt`; the
/// oscillatory part is re-evaluated at the new time.
pub fn step_environment<R: Rng + ?Sized>(
    state: &PlantState,
    noise: &NoiseParams,
    dt: f64,
    rng: &mut R,
) -> Result<PlantState> {
    state.ensure_finite()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let f_max = noise.max_frequency();
    if f_max > 0.0 && dt > 1.0 / (10.0 * f_max) {
        return Err(Error::InvalidArgument(format!(
            "dt = {dt} s under-resolves the {f_max} Hz component"
        )));
    }
    let mut next = *state;
    if noise.diffusion > 0.0 {
        let z: f64 = rng.sample(StandardNormal);
        next.phi_drift += (noise.diffusion * dt).sqrt() * z;
    }
    next.time = state.time + dt;
    next.phi_env = next.phi_drift + noise.oscillatory_phase(next.time);
    Ok(next)
}

/// Result of driving the stretcher for one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StretcherStep {
    pub state: PlantState,
    /// The requested drive fell outside the voltage range and was clamped.
    pub clamped: bool,
}

/// Relax the stretcher phase toward `gain * drive_v` as a first-order
/// low-pass with corner `corner_hz`, exact for a drive held over `dt`.
pub fn stretcher_response(
    state: &PlantState,
    stretcher: &StretcherParams,
    drive_v: f64,
    dt: f64,
) -> Result<StretcherStep> {
    if !(dt > 0.0) || !(stretcher.corner_hz > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "stretcher step needs dt > 0 and corner > 0 (dt = {dt}, corner = {})",
            stretcher.corner_hz
        )));
    }
    if !drive_v.is_finite() {
        return Err(Error::Diagnostics(format!("stretcher drive = {drive_v}")));
    }
    let v = drive_v.clamp(stretcher.v_lo, stretcher.v_hi);
    let target = stretcher.gain_rad_per_v * v;
    let decay = (-TAU * stretcher.corner_hz * dt).exp();
    let mut next = *state;
    next.phi_stretcher = target + (state.phi_stretcher - target) * decay;
    next.stretcher_v = v;
    Ok(StretcherStep {
        state: next,
        clamped: v != drive_v,
    })
}

/// Phase imposed by the modulator at `t_rel_ns` after the pulse leading edge.
pub fn pm_phase(pm: &PmParams, drive_v: f64, t_rel_ns: f64) -> f64 {
    PI * drive_v / pm.v_pi * pm.envelope(t_rel_ns)
}

/// Constant phase offset of the quantum channel relative to the locked
/// classical channel, due to the residual arm mismatch.
pub fn quantum_phase_offset(opt: &OpticalParams) -> f64 {
    let delta_l_m = opt.delta_l_mm * 1e-3;
    let inv_q = 1.0 / (opt.lambda_q_nm * 1e-9);
    let inv_ph = 1.0 / (opt.lambda_ph_nm * 1e-9);
    TAU * opt.group_index * delta_l_m * (inv_q - inv_ph)
}

/// Fractions of the input power leaving output ports A and B.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PortFractions {
    pub a: f64,
    pub b: f64,
}

pub fn port_fractions(opt: &OpticalParams, phi_total: f64) -> PortFractions {
    let mean = (opt.t_arm1 + opt.t_arm2) / 4.0;
    let swing = opt.overlap * (opt.t_arm1 * opt.t_arm2).sqrt() / 2.0 * phi_total.cos();
    PortFractions {
        a: mean + swing,
        b: mean - swing,
    }
}

/// Port-A intensity normalized to the full transmitted power, i.e. the
/// monitor photodetector level in `[0, 1]`.
pub fn monitor_level(opt: &OpticalParams, phi: f64) -> f64 {
    let total = (opt.t_arm1 + opt.t_arm2) / 2.0;
    if total <= 0.0 {
        return 0.0;
    }
    port_fractions(opt, phi).a / total
}

/// Wrap a phase into `(-pi, pi]`.
pub fn wrap_phase(phi: f64) -> f64 {
    let w = phi.rem_euclid(TAU);
    if w > PI {
        w - TAU
    } else {
        w
    }
}
