use super::*;
use crate::kernel::DelayKernel;
use crate::params::test_configs::{calibration, two_asset};
use crate::params::ModelConfig;
use crate::weights::{aligned_grids, solve_weights};
use approx::assert_relative_eq;
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

fn short(mut cfg: ModelConfig, tau_r: f64, d: f64) -> ModelConfig {
    cfg.income.tau_r = tau_r;
    cfg.income.d = d;
    cfg
}

fn solved(cfg: ModelConfig) -> (Model, WeightTable) {
    let m = Model::new(cfg).unwrap();
    let (tg, lg) = aligned_grids(m.tau_r(), m.income().d, 50).unwrap();
    let tbl = solve_weights(&m, tg, lg).unwrap();
    (m, tbl)
}

fn sigma(m: &Model) -> DMatrix<f64> {
    let n = m.n_assets();
    DMatrix::from_fn(n, n, |i, j| m.sigma_entry(i, j))
}

fn state(tbl: &WeightTable, t: f64, w: f64, y: f64) -> StateSnapshot {
    StateSnapshot::new(t, w, y, HistoryBuffer::from_fn(tbl.lag, |z| 1.0 + 0.1 * z))
}

#[test]
fn total_wealth_examples() {
    let (m, tbl) = solved(short(calibration(0.1, DelayKernel::Constant { level: 0.01 }), 10.0, 2.0));
    let p = FeedbackPolicy::unified(&m, &tbl);
    assert_eq!(p.total_wealth(&state(&tbl, 10.0, 3.0, 1.0)).unwrap(), 3.0);
    assert_eq!(p.total_wealth(&state(&tbl, 12.0, 3.0, 1.0)).unwrap(), 3.0);
    let broke = StateSnapshot::new(4.0, 2.5, 0.0, HistoryBuffer::flat(tbl.lag, 0.0));
    assert_eq!(p.total_wealth(&broke).unwrap(), 2.5);

    let (m0, tbl0) = solved(short(calibration(0.1, DelayKernel::Zero), 10.0, 2.0));
    let p0 = FeedbackPolicy::unified(&m0, &tbl0);
    let t = 3.0;
    let s = StateSnapshot::new(t, -tbl0.eval_g(t), 1.0, HistoryBuffer::flat(tbl0.lag, 1.0));
    assert_eq!(p0.total_wealth(&s).unwrap(), 0.0);
}

#[test]
fn boundary_controls_only_hedge_income() {
    let (m, tbl) = solved(short(two_asset(), 6.0, 2.0));
    let p = FeedbackPolicy::unified(&m, &tbl);
    let t = 1.5;
    let mut s = state(&tbl, t, 0.0, 1.3);
    s.w = -p.total_wealth(&s).unwrap();
    let gamma = p.total_wealth(&s).unwrap();
    assert!(gamma.abs() < 1e-12);
    let ctl = p.controls_from_parts(t, 0.0, tbl.eval_g(t), 1.3).unwrap();
    assert_eq!((ctl.c, ctl.b), (0.0, 0.0));
    let sy = DVector::from_vec(m.income().sigma_y.clone());
    let expect = sigma(&m).transpose().lu().solve(&sy).unwrap() * (-tbl.eval_g(t) * 1.3);
    for (a, b) in ctl.theta.iter().zip(expect.iter()) {
        assert_relative_eq!(*a, *b, max_relative = 1e-12);
    }
}

#[test]
fn negative_total_wealth_is_inadmissible() {
    let (m, tbl) = solved(short(calibration(0.1, DelayKernel::Zero), 10.0, 2.0));
    let p = FeedbackPolicy::unified(&m, &tbl);
    let s = state(&tbl, 1.0, -100.0, 1.0);
    assert!(matches!(p.feedback_controls(&s), Err(Error::InadmissibleState { .. })));
    assert!(matches!(p.value_function(&s), Err(Error::InadmissibleState { .. })));
}

#[test]
fn retired_controls_are_merton() {
    let (m, tbl) = solved(short(two_asset(), 6.0, 2.0));
    let p = FeedbackPolicy::unified(&m, &tbl);
    let (cf, bf, thf) = merton_fractions(&m).unwrap();
    for t in [6.0, 9.0] {
        let ctl = p.feedback_controls(&state(&tbl, t, 4.0, 1.0)).unwrap();
        assert_relative_eq!(ctl.c, cf * 4.0, max_relative = 1e-14);
        assert_relative_eq!(ctl.b, bf * 4.0, max_relative = 1e-14);
        for (a, b) in ctl.theta.iter().zip(&thf) {
            assert_relative_eq!(*a, b * 4.0, max_relative = 1e-14);
        }
    }
    let post = FeedbackPolicy::new(&m, &tbl, PolicyMode::PostRetirement);
    let ctl = post.feedback_controls(&state(&tbl, 2.0, 4.0, 1.0)).unwrap();
    assert_relative_eq!(ctl.b, bf * 4.0, max_relative = 1e-14);
}

#[test]
fn unit_volatility_without_income_risk_is_merton_on_total_wealth() {
    let mut cfg = short(calibration(0.0, DelayKernel::Zero), 10.0, 2.0);
    cfg.market.sigma = vec![vec![1.0]];
    cfg.market.mu = vec![0.5];
    cfg.preferences.rho = 0.2;
    let (m, tbl) = solved(cfg);
    let p = FeedbackPolicy::unified(&m, &tbl);
    let s = state(&tbl, 2.0, 5.0, 1.0);
    let gamma = p.total_wealth(&s).unwrap();
    let th = p.feedback_controls(&s).unwrap().theta[0];
    assert_relative_eq!(th, m.derived.kappa[0] * gamma / m.prefs().gamma, max_relative = 1e-14);
}

#[test]
fn controls_maximise_the_hamiltonian_at_the_value_derivatives() {
    for cfg in [
        short(two_asset(), 6.0, 2.0),
        short(calibration(0.1, DelayKernel::Constant { level: 0.0075 }), 10.0, 2.0),
    ] {
        let (m, tbl) = solved(cfg);
        let p = FeedbackPolicy::unified(&m, &tbl);
        let g = m.prefs().gamma;
        let rd = m.prefs().rho + m.market().delta;
        let sig = sigma(&m);
        let cov_inv = (&sig * sig.transpose()).try_inverse().unwrap();
        let excess = DVector::from_vec(m.excess_return());
        let sy = DVector::from_vec(m.income().sigma_y.clone());
        for (t, w, y) in [(0.0, 2.0, 1.0), (2.7, -1.0, 0.8), (5.5, 10.0, 1.4)] {
            let s = state(&tbl, t, w, y);
            let gam = p.total_wealth(&s).unwrap();
            let big_f = p.F(t).unwrap();
            let v_w = big_f.powf(g) * gam.powf(-g);
            let v_ww = -g * v_w / gam;
            // dv_w/dy = v_ww g(t) through total wealth.
            let v_wy = v_ww * tbl.eval_g(t);

            let disc = (-rd * t).exp();
            let c = (v_w / disc).powf(-1.0 / g);
            let k = m.prefs().k;
            let b = (v_w / (disc * k.powf(1.0 - g))).powf(-1.0 / g);
            let theta = -(&cov_inv * (&excess * v_w + &sig * &sy * (y * v_wy))) / v_ww;

            let ctl = p.feedback_controls(&s).unwrap();
            assert_relative_eq!(ctl.c, c, max_relative = 1e-10);
            assert_relative_eq!(ctl.b, b, max_relative = 1e-10);
            for (a, e) in ctl.theta.iter().zip(theta.iter()) {
                assert_relative_eq!(*a, *e, max_relative = 1e-10, epsilon = 1e-12);
            }

            // The analytic v_w agrees with a difference quotient of V.
            let h = 1e-5 * gam;
            let v = |dw: f64| {
                let mut s2 = s.clone();
                s2.w += dw;
                p.value_function(&s2).unwrap().finite().unwrap()
            };
            assert_relative_eq!((v(h) - v(-h)) / (2.0 * h), v_w, max_relative = 1e-6);
        }
    }
}

#[test]
fn value_at_retirement_and_on_the_boundary() {
    let (m, tbl) = solved(short(calibration(0.1, DelayKernel::Constant { level: 0.01 }), 10.0, 2.0));
    let p = FeedbackPolicy::unified(&m, &tbl);
    let g = m.prefs().gamma;
    let rd = m.prefs().rho + m.market().delta;
    let v = p.value_function(&state(&tbl, 10.0, 2.0, 1.0)).unwrap().finite().unwrap();
    let expect = (-rd * 10.0).exp() * m.derived.eta_hat.powf(g) * 2.0f64.powf(1.0 - g) / (1.0 - g);
    assert_relative_eq!(v, expect, max_relative = 1e-12);
    assert_eq!(p.value_at(3.0, 0.0).unwrap(), ExtendedValue::NegInfinity);
    assert_eq!(ExtendedValue::NegInfinity.to_string(), "-inf");

    let mut cfg = short(calibration(0.1, DelayKernel::Zero), 10.0, 2.0);
    cfg.preferences.gamma = 0.5;
    cfg.preferences.rho = 0.06;
    let (m, tbl) = solved(cfg);
    let p = FeedbackPolicy::unified(&m, &tbl);
    assert_eq!(p.value_at(3.0, 0.0).unwrap(), ExtendedValue::Finite(0.0));
    assert!(p.value_at(3.0, 1.0).unwrap().finite().unwrap() > 0.0);
}

#[test]
fn consumption_jumps_at_retirement_while_bequest_and_allocation_do_not() {
    let (m, tbl) = solved(short(two_asset(), 6.0, 2.0));
    let p = FeedbackPolicy::unified(&m, &tbl);
    let eps = 1e-9;
    let before = p.feedback_controls(&state(&tbl, 6.0 - eps, 3.0, 1.0)).unwrap();
    let at = p.feedback_controls(&state(&tbl, 6.0, 3.0, 1.0)).unwrap();
    let k_b = m.prefs().big_k.powf(-m.derived.b);
    assert_relative_eq!(at.c / before.c, k_b, max_relative = 1e-6);
    assert_relative_eq!(at.b, before.b, max_relative = 1e-6);
    for (a, b) in at.theta.iter().zip(&before.theta) {
        assert!((a - b).abs() < 1e-6 * a.abs().max(1.0));
    }
    assert_relative_eq!(p.f(6.0).unwrap(), m.derived.eta_hat, max_relative = 1e-14);
}

#[test]
fn consumption_and_bequest_increase_with_total_wealth() {
    let (m, tbl) = solved(short(two_asset(), 6.0, 2.0));
    let p = FeedbackPolicy::unified(&m, &tbl);
    let g = tbl.eval_g(1.0);
    let mut last = (0.0, 0.0);
    for gamma in [0.5, 1.0, 2.0, 4.0] {
        let ctl = p.controls_from_parts(1.0, gamma, g, 1.0).unwrap();
        assert!(ctl.c > last.0 && ctl.b > last.1);
        last = (ctl.c, ctl.b);
    }
}

#[test]
fn hedging_delta_examples() {
    let base = short(calibration(0.1, DelayKernel::Constant { level: 0.01 }), 10.0, 2.0);
    let (m, tbl) = solved(base.clone());
    let (m0, tbl0) = solved(base.with_phi(DelayKernel::Zero));
    let s = state(&tbl, 2.0, 5.0, 1.1);

    let none = hedging_demand_delta(&m0, &s, &tbl0, &tbl0).unwrap();
    assert!(none.iter().all(|&v| v == 0.0));

    let delta = hedging_demand_delta(&m, &s, &tbl, &tbl0).unwrap();
    let a = FeedbackPolicy::unified(&m, &tbl).feedback_controls(&s).unwrap();
    let b = FeedbackPolicy::unified(&m0, &tbl0).feedback_controls(&s).unwrap();
    for (d, (x, y)) in delta.iter().zip(a.theta.iter().zip(&b.theta)) {
        assert!((d - (x - y)).abs() <= 1e-12 * x.abs().max(1.0));
    }

    assert!(matches!(
        hedging_demand_delta(&m, &s, &tbl, &tbl),
        Err(Error::ConfigMismatch(_))
    ));
    let mut other = base.with_phi(DelayKernel::Zero);
    other.income.mu_y = 0.02;
    let (_, tbl_other) = solved(other);
    assert!(matches!(
        hedging_demand_delta(&m, &s, &tbl, &tbl_other),
        Err(Error::ConfigMismatch(_))
    ));
}

#[test]
fn hedging_delta_without_the_annuity_term() {
    // sigma_y = kappa / gamma cancels the g2 contribution.
    let mut base = short(calibration(0.0, DelayKernel::Constant { level: 0.01 }), 10.0, 2.0);
    let kappa = 0.04 / 0.2;
    base.income.sigma_y = vec![kappa / base.preferences.gamma];
    let (m, tbl) = solved(base.clone());
    let (_, tbl0) = solved(base.with_phi(DelayKernel::Zero));
    let s = state(&tbl, 2.0, 5.0, 1.1);
    let delta = hedging_demand_delta(&m, &s, &tbl, &tbl0).unwrap();
    let hx = tbl.history_value(2.0, 1.1, &s.hist).unwrap();
    let expect = kappa / m.prefs().gamma * hx / 0.2;
    assert_relative_eq!(delta[0], expect, max_relative = 1e-12);
}

#[test]
fn merton_fraction_examples() {
    let mut cfg = short(two_asset(), 6.0, 2.0);
    cfg.preferences.k = 1.0;
    cfg.preferences.big_k = 1.0;
    let m = Model::new(cfg.clone()).unwrap();
    let (c, b, _) = merton_fractions(&m).unwrap();
    assert_relative_eq!(c, 1.0 / m.derived.eta_hat, max_relative = 1e-14);
    assert_relative_eq!(b, c, max_relative = 1e-14);

    let m = Model::new(two_asset()).unwrap();
    let (c, _, _) = merton_fractions(&m).unwrap();
    let k_b = m.prefs().big_k.powf(m.derived.b);
    assert_relative_eq!(c * m.derived.eta_hat * k_b, 1.0, max_relative = 1e-14);

    let mut prev = f64::INFINITY;
    for gamma in [2.0, 20.0, 200.0] {
        cfg.preferences.gamma = gamma;
        let m = Model::new(cfg.clone()).unwrap();
        let (_, _, th) = merton_fractions(&m).unwrap();
        let size = th.iter().map(|v| v.abs()).fold(0.0, f64::max);
        assert!(size < prev);
        prev = size;
    }
    assert!(prev < 0.02);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn controls_and_value_are_homogeneous(
        lambda in 0.1f64..10.0,
        t in 0.0f64..7.0,
        w in 0.0f64..20.0,
        y in 0.2f64..3.0,
    ) {
        let (m, tbl) = solved(short(two_asset(), 6.0, 2.0));
        let p = FeedbackPolicy::unified(&m, &tbl);
        let s = state(&tbl, t, w, y);
        let a = p.feedback_controls(&s).unwrap();
        let b = p.feedback_controls(&s.scaled(lambda)).unwrap();
        prop_assert!((b.c - lambda * a.c).abs() <= 1e-10 * b.c.abs().max(1.0));
        prop_assert!((b.b - lambda * a.b).abs() <= 1e-10 * b.b.abs().max(1.0));
        for (x, z) in a.theta.iter().zip(&b.theta) {
            prop_assert!((z - lambda * x).abs() <= 1e-10 * z.abs().max(1.0));
        }
        let va = p.value_function(&s).unwrap().finite().unwrap();
        let vb = p.value_function(&s.scaled(lambda)).unwrap().finite().unwrap();
        let g = m.prefs().gamma;
        prop_assert!((vb - lambda.powf(1.0 - g) * va).abs() <= 1e-10 * vb.abs());
    }
}
