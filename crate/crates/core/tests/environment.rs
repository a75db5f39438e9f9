use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mzlock::plant::{step_environment, NoiseParams, PlantState};

/// Free-running phase excursion over `seconds`, sampled every `dt`.
fn excursion(noise: &NoiseParams, seed: u64, seconds: f64, dt: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = PlantState::initial(noise, 0.0);
    let (mut lo, mut hi) = (state.phi_env, state.phi_env);
    for _ in 0..(seconds / dt).round() as u64 {
        state = step_environment(&state, noise, dt, &mut rng).unwrap();
        lo = lo.min(state.phi_env);
        hi = hi.max(state.phi_env);
    }
    hi - lo
}

#[test]
fn unlocked_drift_spans_a_fringe_within_100_s() {
    let noise = NoiseParams::default();
    let seeds = 200;
    let wide = (0..seeds)
        .filter(|&s| excursion(&noise, s, 100.0, 1e-3) > std::f64::consts::TAU)
        .count();
    assert!(wide as f64 >= 0.99 * seeds as f64, "{wide}/{seeds} seeds spanned 2π");
}

#[test]
fn drift_variance_grows_linearly() {
    // Var[phi(t)] = D t for the random-walk part
    let noise = NoiseParams {
        components: vec![],
        ..NoiseParams::default()
    };
    let (t, dt, n) = (2.0, 1e-3, 2000);
    let finals: Vec<f64> = (0..n)
        .map(|s| {
            let mut rng = ChaCha8Rng::seed_from_u64(10_000 + s);
            let mut st = PlantState::initial(&noise, 0.0);
            for _ in 0..(t / dt) as usize {
                st = step_environment(&st, &noise, dt, &mut rng).unwrap();
            }
            st.phi_drift
        })
        .collect();
    let var = finals.iter().map(|x| x * x).sum::<f64>() / n as f64;
    let expected = noise.diffusion * t;
    // the sample variance of n normals has relative sd sqrt(2/n)
    let tol = 4.0 * expected * (2.0 / n as f64).sqrt();
    assert!((var - expected).abs() < tol, "variance {var} vs {expected}");
}
