//! Gated single-photon detection: click probabilities, count sampling,
//! gate/modulation-pulse timing overlap, and classical crosstalk leakage.

use rand::Rng;
use rand_distr::{Binomial, Distribution};

use crate::error::Violation;
use crate::plant::PmParams;

/// Planck constant (J s).
pub const PLANCK: f64 = 6.626_070_15e-34;

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorParams {
    /// Overall detection efficiency.
    pub efficiency: f64,
    /// Dark-count probability per gate.
    pub dark_prob: f64,
    pub gate_width_ns: f64,
    pub rep_rate_hz: f64,
    /// Pulse-generator to detector synchronization delay (us).
    pub sync_delay_us: f64,
    /// Gate start relative to the modulation pulse leading edge (ns).
    pub gate_offset_ns: f64,
}

impl DetectorParams {
    pub fn d1() -> Self {
        Self {
            efficiency: 0.15,
            dark_prob: 9.33e-6,
            gate_width_ns: 2.5,
            rep_rate_hz: 166_000.0,
            sync_delay_us: 5.8,
            gate_offset_ns: 0.0,
        }
    }

    pub fn d2() -> Self {
        Self {
            dark_prob: 4.14e-5,
            ..Self::d1()
        }
    }

    /// Mean dark counts per second.
    pub fn dark_rate(&self) -> f64 {
        self.dark_prob * self.rep_rate_hz
    }

    pub fn check(&self, prefix: &str, out: &mut Vec<Violation>) {
        let key = |name: &str| format!("{prefix}.{name}");
        if !(0.0..=1.0).contains(&self.efficiency) {
            out.push(Violation::new(key("efficiency"), "must lie in [0, 1]"));
        }
        if !(0.0..=1.0).contains(&self.dark_prob) {
            out.push(Violation::new(key("dark_prob"), "must lie in [0, 1]"));
        }
        if !(self.gate_width_ns.is_finite() && self.gate_width_ns > 0.0) {
            out.push(Violation::new(key("gate_width_ns"), "must be positive"));
        }
        if !(self.rep_rate_hz.is_finite() && self.rep_rate_hz > 0.0) {
            out.push(Violation::new(key("rep_rate_hz"), "must be positive"));
        }
        if !(self.sync_delay_us.is_finite() && self.sync_delay_us >= 0.0) {
            out.push(Violation::new(key("sync_delay_us"), "must be >= 0"));
        } else if self.sync_delay_us > 0.0 && self.rep_rate_hz > 1e6 / self.sync_delay_us {
            out.push(Violation::new(
                key("rep_rate_hz"),
                format!(
                    "{} Hz exceeds the {:.0} Hz allowed by the {} us sync path",
                    self.rep_rate_hz,
                    1e6 / self.sync_delay_us,
                    self.sync_delay_us
                ),
            ));
        }
        if self.rep_rate_hz.is_finite() && self.rep_rate_hz > 0.0 && self.gate_width_ns * 1e-9 > 1.0 / self.rep_rate_hz
        {
            out.push(Violation::new(key("gate_width_ns"), "gate longer than the gate period"));
        }
        if !self.gate_offset_ns.is_finite() {
            out.push(Violation::new(key("gate_offset_ns"), "must be finite"));
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SourceParams {
    /// Mean photon number per detection window at the interferometer input.
    pub mu: f64,
    /// Loss from the output coupler to each detector (dB).
    pub post_path_loss_db: f64,
}

/// Detector counts integrated over one bin.
#[derive(Debug, Clone, PartialEq)]
pub struct CountRecord {
    pub t_start: f64,
    pub duration: f64,
    pub counts_d1: u64,
    pub counts_d2: u64,
    /// Mean normalized monitor level over the bin.
    pub mean_pd_level: f64,
    pub control_enabled: bool,
    pub pm_voltage: f64,
}

impl CountRecord {
    pub fn rate_d1(&self) -> f64 {
        self.counts_d1 as f64 / self.duration
    }

    pub fn rate_d2(&self) -> f64 {
        self.counts_d2 as f64 / self.duration
    }
}

/// Probability that a gate registers a click at a port receiving
/// `port_fraction` of the input light.
///
/// `_gate_overlap` acts on the modulator phase upstream, never on the
/// photon number; it is accepted here to mirror the call sites.
pub fn gate_click_probability(src: &SourceParams, det: &DetectorParams, port_fraction: f64, _gate_overlap: f64) -> f64 {
    let transmission = 10f64.powf(-src.post_path_loss_db / 10.0);
    let mu_det = src.mu * port_fraction * transmission * det.efficiency;
    det.dark_prob - (1.0 - det.dark_prob) * (-mu_det).exp_m1()
}

/// Number of clicks in `n_gates` independent gates of click probability `p`.
pub fn sample_counts<R: Rng + ?Sized>(p: f64, n_gates: u64, rng: &mut R) -> u64 {
    if n_gates == 0 || p <= 0.0 {
        return 0;
    }
    if p >= 1.0 {
        return n_gates;
    }
    if n_gates <= 16 {
        (0..n_gates).filter(|_| rng.random::<f64>() < p).count() as u64
    } else {
        Binomial::new(n_gates, p).expect("p checked in (0, 1)").sample(rng)
    }
}

/// Mean of the modulation pulse envelope over a gate opening
/// `extra_delay_ns` after the nominal gate position.
pub fn gate_pm_overlap(det: &DetectorParams, pm: &PmParams, extra_delay_ns: f64) -> f64 {
    let start = det.gate_offset_ns + extra_delay_ns;
    pm.envelope_integral(start, start + det.gate_width_ns) / det.gate_width_ns
}

/// Click probability per gate from classical light leaking through
/// `isolation_db` of filtering (linear in the leaked flux).
pub fn crosstalk_click_probability(launch_dbm: f64, isolation_db: f64, lambda_nm: f64, det: &DetectorParams) -> f64 {
    let power_w = 10f64.powf((launch_dbm - isolation_db) / 10.0) * 1e-3;
    let photon_energy = PLANCK * crate::plant::SPEED_OF_LIGHT / (lambda_nm * 1e-9);
    let flux = power_w / photon_energy;
    flux * det.gate_width_ns * 1e-9 * det.efficiency
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn source(mu: f64) -> SourceParams {
        SourceParams {
            mu,
            post_path_loss_db: 0.0,
        }
    }

    #[test]
    fn dark_only_click_probability() {
        let p = gate_click_probability(&source(0.0), &DetectorParams::d1(), 0.7, 1.0);
        assert_relative_eq!(p, 9.33e-6, max_relative = 1e-12);
    }

    #[test]
    fn dark_port_without_dark_counts() {
        let det = DetectorParams {
            dark_prob: 0.0,
            ..DetectorParams::d1()
        };
        assert_eq!(gate_click_probability(&source(0.1), &det, 0.0, 1.0), 0.0);
    }

    #[test]
    fn bright_port_probability() {
        let det = DetectorParams {
            dark_prob: 0.0,
            ..DetectorParams::d1()
        };
        let p = gate_click_probability(&source(0.1), &det, 1.0, 1.0);
        // 1 - e^-x via its alternating series, independent of exp_m1/exp
        let x: f64 = 0.015;
        let mut term = x;
        let mut series = 0.0;
        for k in 1..20 {
            series += term;
            term *= -x / (k as f64 + 1.0);
        }
        assert_relative_eq!(p, series, max_relative = 1e-12);
        assert_relative_eq!(p, 1.4888e-2, epsilon = 1e-6);
    }

    #[test]
    fn loss_scales_mean_photon_number() {
        let det = DetectorParams {
            dark_prob: 0.0,
            ..DetectorParams::d1()
        };
        let lossy = SourceParams {
            mu: 0.2,
            post_path_loss_db: 10.0 * 2f64.log10(),
        };
        let p1 = gate_click_probability(&lossy, &det, 1.0, 1.0);
        let p2 = gate_click_probability(&source(0.1), &det, 1.0, 1.0);
        assert_relative_eq!(p1, p2, max_relative = 1e-12);
    }

    #[test]
    fn sample_counts_edges() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        assert_eq!(sample_counts(0.0, 166_000, &mut rng), 0);
        assert_eq!(sample_counts(1.0, 166_000, &mut rng), 166_000);
        assert_eq!(sample_counts(1.0, 3, &mut rng), 3);
        assert_eq!(sample_counts(0.5, 0, &mut rng), 0);
    }

    #[test]
    fn sample_counts_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (p, n) = (0.0149, 166_000u64);
        let reps = 100;
        let total: u64 = (0..reps).map(|_| sample_counts(p, n, &mut rng)).sum();
        let mean = total as f64 / reps as f64;
        let expected = n as f64 * p;
        assert_relative_eq!(expected, 2473.4, epsilon = 1e-9);
        let sigma_mean = (n as f64 * p * (1.0 - p) / reps as f64).sqrt();
        assert!((mean - expected).abs() < 3.0 * sigma_mean, "mean {mean}");
    }

    #[test]
    fn sample_counts_small_groups_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (p, n, reps) = (0.05, 4u64, 200_000);
        let total: u64 = (0..reps).map(|_| sample_counts(p, n, &mut rng)).sum();
        let expected = (n * reps) as f64 * p;
        let sigma = ((n * reps) as f64 * p * (1.0 - p)).sqrt();
        assert!((total as f64 - expected).abs() < 3.0 * sigma);
    }

    #[test]
    fn sample_counts_is_deterministic() {
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(77);
            (0..50)
                .map(|i| sample_counts(0.01, i * 40, &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn gate_overlap_limits() {
        let det = DetectorParams::d1();
        let pm = PmParams::default();
        assert_eq!(gate_pm_overlap(&det, &pm, 0.0), 1.0);
        assert_eq!(gate_pm_overlap(&det, &pm, 5.0), 1.0);
        assert_eq!(gate_pm_overlap(&det, &pm, -2.5), 0.0);
        assert_eq!(gate_pm_overlap(&det, &pm, -40.0), 0.0);
        let half = gate_pm_overlap(&det, &pm, -1.25);
        assert_relative_eq!(half, 0.5, epsilon = 1e-12);
    }

    #[test]
    fn crosstalk_through_full_isolation() {
        let det = DetectorParams::d1();
        let p = crosstalk_click_probability(-17.0, 100.0, 1547.72, &det);
        let energy = 6.626_070_15e-34 * 2.997_924_58e8 / 1547.72e-9;
        assert_relative_eq!(energy, 1.2835e-19, max_relative = 1e-4);
        let flux = 10f64.powf(-11.7) * 1e-3 / energy;
        assert_relative_eq!(flux, 1.554e4, max_relative = 1e-3);
        assert_relative_eq!(p, flux * 2.5e-9 * 0.15, max_relative = 1e-12);
        assert_relative_eq!(p, 5.83e-6, max_relative = 1e-3);
        assert!(p < DetectorParams::d2().dark_prob);
        assert_eq!(crosstalk_click_probability(-17.0, f64::INFINITY, 1547.72, &det), 0.0);
    }

    #[test]
    fn dark_rates_from_per_gate_probabilities() {
        assert_relative_eq!(DetectorParams::d1().dark_rate(), 1.54878, max_relative = 1e-5);
        assert_relative_eq!(DetectorParams::d2().dark_rate(), 6.8724, max_relative = 1e-5);
    }

    #[test]
    fn validation_flags_sync_limit() {
        let mut out = Vec::new();
        let det = DetectorParams {
            rep_rate_hz: 200_000.0,
            ..DetectorParams::d1()
        };
        det.check("detectors.d1", &mut out);
        assert!(out.iter().any(|v| v.key == "detectors.d1.rep_rate_hz"));
        let mut out = Vec::new();
        DetectorParams::d1().check("detectors.d1", &mut out);
        assert!(out.is_empty());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn click_probability_monotone(
                mu in 0.0..1.0f64, f in 0.0..1.0f64, eta in 0.0..1.0f64,
                dark in 0.0..1e-3f64, bump in 1e-3..0.5f64,
            ) {
                let det = DetectorParams { efficiency: eta, dark_prob: dark, ..DetectorParams::d1() };
                let src = SourceParams { mu, post_path_loss_db: 3.1 };
                let p = gate_click_probability(&src, &det, f, 1.0);
                prop_assert!(p >= dark);
                let more_mu = gate_click_probability(&SourceParams { mu: mu + bump, ..src.clone() }, &det, f, 1.0);
                let more_f = gate_click_probability(&src, &det, f + bump, 1.0);
                let det_eta = DetectorParams { efficiency: eta + bump, ..det.clone() };
                let more_eta = gate_click_probability(&src, &det_eta, f, 1.0);
                if f > 0.0 && eta > 0.0 {
                    prop_assert!(more_mu > p);
                }
                if mu > 0.0 && eta > 0.0 {
                    prop_assert!(more_f > p);
                }
                if mu > 0.0 && f > 0.0 {
                    prop_assert!(more_eta > p);
                }
            }
        }
    }
}
