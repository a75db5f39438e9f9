use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};

use mzlock::analysis::{fit_fringe, sign_runs, FitPoint};

const AMPLITUDE: f64 = 500.0;
const VISIBILITY: f64 = 0.97;
const V_PI: f64 = 5.0;
const PHI0: f64 = 0.3;
const DWELL: f64 = 10.0;

fn truth(v: f64) -> f64 {
    AMPLITUDE * (1.0 + VISIBILITY * (std::f64::consts::PI * v / V_PI + PHI0).cos())
}

fn noisy_scan(seed: u64) -> Vec<FitPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..15)
        .map(|i| {
            let v = 6.8 * i as f64 / 14.0;
            let n = Poisson::new(truth(v) * DWELL).unwrap().sample(&mut rng);
            FitPoint {
                voltage: v,
                rate: n / DWELL,
                sigma: n.max(1.0).sqrt() / DWELL,
            }
        })
        .collect()
}

#[test]
fn visibility_error_bars_cover_the_truth() {
    let trials = 100;
    let covered = (0..trials)
        .filter(|&s| {
            let fit = fit_fringe(&noisy_scan(s)).unwrap();
            (fit.visibility - VISIBILITY).abs() <= 2.0 * fit.visibility_sigma
        })
        .count();
    // nominal 2-sigma coverage is 95.4%; binomial sd over 100 trials is ~2%
    assert!(covered >= 89, "covered {covered}/{trials}");
}

#[test]
fn v_pi_error_bars_cover_the_truth() {
    let trials = 100;
    let covered = (0..trials)
        .filter(|&s| {
            let fit = fit_fringe(&noisy_scan(1000 + s)).unwrap();
            (fit.v_pi_fit - V_PI).abs() <= 2.0 * fit.v_pi_sigma
        })
        .count();
    assert!(covered >= 89, "covered {covered}/{trials}");
}

#[test]
fn residuals_of_a_good_fit_look_random() {
    // Fitting four parameters to 15 points removes slow structure, so runs
    // come out at or above the independent-sign expectation, never far below.
    let (mut runs, mut expected) = (0.0, 0.0);
    for s in 0..200 {
        let pts = noisy_scan(5000 + s);
        let fit = fit_fringe(&pts).unwrap();
        let (r, e) = sign_runs(&fit.residuals(&pts));
        runs += r as f64;
        expected += e;
    }
    assert!(
        runs > 0.95 * expected && runs < 1.3 * expected,
        "runs {runs} vs expected {expected}"
    );
}

#[test]
fn wrong_model_leaves_structured_residuals() {
    // a triangle wave fitted by a cosine shows long same-sign runs
    let pts: Vec<FitPoint> = (0..30)
        .map(|i| {
            let v = 6.8 * i as f64 / 29.0;
            let x = (v / 5.0).fract();
            let tri = if x < 0.5 { x } else { 1.0 - x };
            FitPoint {
                voltage: v,
                rate: 100.0 + 800.0 * tri * tri,
                sigma: 1.0,
            }
        })
        .collect();
    let fit = fit_fringe(&pts).unwrap();
    let (runs, expected) = sign_runs(&fit.residuals(&pts));
    assert!((runs as f64) < expected, "runs {runs} expected {expected}");
}
