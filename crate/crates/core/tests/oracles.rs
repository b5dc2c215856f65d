//! Independent oracles and cross-module invariants.

mod common;

use std::path::PathBuf;

use common::*;
use lifecycle_core::validate::{
    check_gamma_substitution, check_hjb_scalar_identity, deterministic_value_quadrature,
    oracle_human_capital, oracle_value_consistency, random_state, run_suite, Suite, SuiteOptions,
};
use lifecycle_core::weights::{aligned_grids, solve_weights};
use lifecycle_core::*;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn short_bump() -> ModelConfig {
    let mut cfg = two_asset();
    cfg.income.d = 0.5;
    cfg.income.tau_r = 3.0;
    cfg.income.phi = DelayKernel::Bump { center: -0.25, width: Some(0.2), mass: 0.02 };
    cfg
}

/// Discounted deterministic income `int_0^tau e^{-(r+delta)s} y(s) ds`, with
/// `y' = mu_y y + int phi(zeta) y(s + zeta) dzeta` integrated by Heun's method
/// on a fine grid. Shares nothing with the weight solver.
fn deterministic_human_capital(cfg: &ModelConfig, hist: impl Fn(f64) -> f64, steps_per_year: usize) -> f64 {
    let inc = &cfg.income;
    let h = 1.0 / steps_per_year as f64;
    let lag = (inc.d / h).round() as usize;
    let n = (inc.tau_r / h).round() as usize;
    let phi: Vec<f64> = (0..=lag).map(|j| inc.phi.eval(-inc.d + j as f64 * h)).collect();
    let mut y: Vec<f64> = (0..=lag).map(|j| hist(-inc.d + j as f64 * h)).collect();
    let rate = |y: &[f64], k: usize| -> f64 {
        // y[k] is the current value; y[k - lag + j] sits at lag zeta_j.
        let base = k - lag;
        let mut s = 0.5 * (phi[0] * y[base] + phi[lag] * y[k]);
        for j in 1..lag {
            s += phi[j] * y[base + j];
        }
        inc.mu_y * y[k] + s * h
    };
    for _ in 0..n {
        let k = y.len() - 1;
        let k1 = rate(&y, k);
        y.push(y[k] + h * k1);
        let k2 = rate(&y, k + 1);
        y[k + 1] = y[k] + 0.5 * h * (k1 + k2);
    }
    let a = cfg.market.r + cfg.market.delta;
    let f = |i: usize| (-a * i as f64 * h).exp() * y[lag + i];
    h * ((1..n).map(f).sum::<f64>() + 0.5 * (f(0) + f(n)))
}

#[test]
fn human_capital_without_income_risk_matches_the_delay_ode() {
    let phis = [
        const_phi(0.02),
        DelayKernel::Bump { center: -1.0, width: Some(0.8), mass: 0.03 },
        DelayKernel::uniform_samples(2.0, vec![0.0, 0.02, 0.005, 0.01, 0.0]).unwrap(),
    ];
    for phi in phis {
        let mut cfg = calibration(0.0, phi, 10.0, 2.0);
        cfg.market.mu = vec![0.02];
        let m = Model::new(cfg.clone()).unwrap();
        let (tg, lg) = aligned_grids(10.0, 2.0, 200).unwrap();
        let tbl = solve_weights(&m, tg, lg).unwrap();
        let shape = |z: f64| 1.0 + 0.1 * z + 0.05 * (3.0 * z).sin();
        let hist = HistoryBuffer::from_fn(lg, shape);
        let closed = tbl.human_capital(0.0, shape(0.0), &hist).unwrap();
        let reference = deterministic_human_capital(&cfg, shape, 4000);
        let rel = (closed - reference).abs() / reference;
        assert!(rel < 1e-3, "{:?}: {closed} vs {reference}", cfg.income.phi);
    }
}

#[test]
fn human_capital_with_a_bump_kernel_matches_monte_carlo() {
    let m = Model::new(short_bump()).unwrap();
    let (tg, lg) = aligned_grids(3.0, 0.5, 100).unwrap();
    let tbl = solve_weights(&m, tg, lg).unwrap();
    let init = StateSnapshot::new(0.0, 0.0, 1.2, HistoryBuffer::from_fn(lg, |z| 1.0 - 0.2 * z));
    let pc = PathConfig::new(tg.dt, 3.0, 20_000, 41).antithetic(true);
    let rep = oracle_human_capital(&m, &tbl, &init, &pc).unwrap();
    assert!(rep.ok(), "{rep:?}");
    assert!(rep.standard_error < 1e-2 * rep.closed_form_value);
}

#[test]
fn deterministic_objective_matches_the_value_function() {
    for gamma in [0.5, 3.0] {
        let mut cfg = calibration(0.0, DelayKernel::Zero, 5.0, 1.0);
        cfg.market.mu = vec![0.02];
        cfg.preferences.gamma = gamma;
        cfg.preferences.rho = 0.04;
        let m = Model::new(cfg).unwrap();
        let (tg, lg) = aligned_grids(5.0, 1.0, 50).unwrap();
        let tbl = solve_weights(&m, tg, lg).unwrap();
        let pol = FeedbackPolicy::unified(&m, &tbl);
        let v = pol
            .value_function(&StateSnapshot::new(0.0, 1.5, 0.8, HistoryBuffer::flat(lg, 0.8)))
            .unwrap()
            .finite()
            .unwrap();
        let q = deterministic_value_quadrature(&m, 1.5, 0.8, 4000).unwrap();
        assert!((v - q).abs() <= 1e-8 * v.abs(), "gamma {gamma}: {v} vs {q}");
    }
}

#[test]
fn underconsumption_is_detected_on_a_small_budget() {
    let m = Model::new(calibration(0.05, const_phi(0.02), 2.0, 0.5)).unwrap();
    let (tg, lg) = aligned_grids(2.0, 0.5, 100).unwrap();
    let tbl = solve_weights(&m, tg, lg).unwrap();
    let init = StateSnapshot::new(0.0, 1.0, 1.0, HistoryBuffer::flat(lg, 1.0));
    let pc = PathConfig::new(tg.dt, 2.0, 20_000, 7).antithetic(true);
    let probe = oracle_value_consistency(&m, &tbl, &init, &pc, 0.5).unwrap();
    assert!(probe.probe && probe.ok(), "{probe:?}");
}

#[test]
fn shipped_configs_load_with_the_documented_scalars() {
    for (name, sigma_y) in [("calibration_sy10.toml", 0.1), ("calibration_sy06.toml", 0.06)] {
        let cfg = ModelConfig::from_path(configs_dir().join(name)).unwrap();
        assert_eq!(cfg.income.phi.constant_level(), Some(0.0075));
        let m = Model::new(cfg).unwrap();
        assert!((m.derived.kappa[0] - 0.2).abs() < 1e-15);
        assert!((m.derived.beta - (0.02 + sigma_y * 0.2)).abs() < 1e-15);
        assert!(validate_hypotheses(&m.config).passed());
    }
}

#[test]
fn identity_suite_passes_on_the_short_configs() {
    for name in ["short_single.toml", "short_two_asset.toml"] {
        let m = Model::new(ModelConfig::from_path(configs_dir().join(name)).unwrap()).unwrap();
        let opts = SuiteOptions { steps_per_year: 100, ..Default::default() };
        let reps = run_suite(&m, Suite::Identities, &opts).unwrap();
        for r in reps.iter().chain(&run_suite(&m, Suite::Hjb, &opts).unwrap()) {
            assert!(r.ok(), "{name}: {r:?}");
        }
    }
}

fn random_market() -> impl Strategy<Value = (f64, f64, f64, f64)> {
    (0.0f64..0.05, 0.0f64..0.08, 0.1f64..0.4, 0.001f64..0.05)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn hjb_identity_holds_wherever_the_value_is_finite(
        (r, premium, sigma, delta) in random_market(),
        rho in 0.0f64..0.08,
        gamma in prop_oneof![0.3f64..0.95, 1.05f64..8.0],
        big_k in 1.0f64..2.0,
        tau_r in 1.0f64..45.0,
    ) {
        let mut cfg = calibration(0.1, DelayKernel::Zero, tau_r, 1.0);
        cfg.market = MarketParams { r, mu: vec![r + premium], sigma: vec![vec![sigma]], delta };
        cfg.preferences = PreferenceParams { gamma, rho, k: 1.0, big_k };
        prop_assume!(validate_hypotheses(&cfg).passed());
        let m = Model::new(cfg).unwrap();
        let res = check_hjb_scalar_identity(&m, 200, 3, 1.0).unwrap();
        prop_assert!(res <= 1e-10, "residual {res}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn controls_replicate_the_hedge_on_random_models(
        premium in 0.01f64..0.06,
        sigma_y in 0.0f64..0.2,
        level in 0.0f64..0.04,
        gamma in 1.5f64..6.0,
        seed in 0u64..1000,
    ) {
        let mut cfg = calibration(sigma_y, const_phi(level), 2.0, 0.5);
        cfg.market.mu = vec![0.02 + premium];
        cfg.preferences.gamma = gamma;
        let m = Model::new(cfg).unwrap();
        let (tg, lg) = aligned_grids(2.0, 0.5, 20).unwrap();
        let tbl = solve_weights(&m, tg, lg).unwrap();
        let res = check_gamma_substitution(&m, &tbl, 50, seed).unwrap();
        prop_assert!(res <= 1e-12, "residual {res}");
    }

    #[test]
    fn human_capital_is_positive_and_homogeneous(
        level in 0.0f64..0.05,
        lambda in 0.1f64..10.0,
        seed in 0u64..1000,
    ) {
        let m = Model::new(calibration(0.1, const_phi(level), 3.0, 1.0)).unwrap();
        let (tg, lg) = aligned_grids(3.0, 1.0, 20).unwrap();
        let tbl = solve_weights(&m, tg, lg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = random_state(&tbl, &mut rng, 1.0);
        let hc = tbl.human_capital(s.t, s.y_now, &s.hist).unwrap();
        prop_assert!(hc >= tbl.eval_g(s.t) * s.y_now - 1e-14);
        let big = s.scaled(lambda);
        let hc2 = tbl.human_capital(big.t, big.y_now, &big.hist).unwrap();
        prop_assert!((hc2 - lambda * hc).abs() <= 1e-12 * hc2.abs().max(1.0));
    }
}
