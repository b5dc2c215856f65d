#![allow(dead_code)]

use lifecycle_core::*;

pub fn market_1(mu: f64) -> MarketParams {
    MarketParams { r: 0.02, mu: vec![mu], sigma: vec![vec![0.2]], delta: 0.01 }
}

pub fn prefs(gamma: f64, rho: f64) -> PreferenceParams {
    PreferenceParams { gamma, rho, k: 1.0, big_k: 1.2 }
}

/// The shipped illustrative calibration with a chosen horizon and window.
pub fn calibration(sigma_y: f64, phi: DelayKernel, tau_r: f64, d: f64) -> ModelConfig {
    ModelConfig {
        market: market_1(0.06),
        income: IncomeParams { mu_y: 0.01, sigma_y: vec![sigma_y], d, tau_r, phi },
        preferences: prefs(3.0, 0.02),
    }
}

pub fn const_phi(level: f64) -> DelayKernel {
    DelayKernel::Constant { level }
}

/// Two correlated assets, a bump kernel and a market-exposed income.
pub fn two_asset() -> ModelConfig {
    ModelConfig {
        market: MarketParams {
            r: 0.02,
            mu: vec![0.06, 0.05],
            sigma: vec![vec![0.2, 0.0], vec![0.06, 0.15]],
            delta: 0.01,
        },
        income: IncomeParams {
            mu_y: 0.015,
            sigma_y: vec![0.05, 0.04],
            d: 2.0,
            tau_r: 5.0,
            phi: DelayKernel::Bump { center: -1.0, width: Some(0.8), mass: 0.02 },
        },
        preferences: prefs(3.0, 0.02),
    }
}

/// Income drift above the discount rate, so `beta < 0`, with a sampled kernel.
pub fn negative_beta() -> ModelConfig {
    ModelConfig {
        market: market_1(0.06),
        income: IncomeParams {
            mu_y: 0.05,
            sigma_y: vec![0.05],
            d: 1.0,
            tau_r: 5.0,
            phi: DelayKernel::uniform_samples(1.0, vec![0.0, 0.03, 0.01, 0.02, 0.0]).unwrap(),
        },
        preferences: prefs(2.0, 0.03),
    }
}

/// `a (1 - cos(pi (zeta + d) / d)) / 2` sampled finely enough to be smooth on any test grid.
pub fn smooth_phi(a: f64, d: f64) -> DelayKernel {
    let n = 4000;
    let v = (0..=n)
        .map(|k| {
            let z = -d + d * k as f64 / n as f64;
            0.5 * a * (1.0 - (std::f64::consts::PI * (z + d) / d).cos())
        })
        .collect();
    DelayKernel::uniform_samples(d, v).unwrap()
}
