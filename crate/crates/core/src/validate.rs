//! Independent checks of the closed forms.
//!
//! Monte Carlo oracles pass when the closed form lies within three standard
//! errors of the estimate; deterministic identities carry their own absolute
//! tolerance. Probes are deliberately wrong inputs that must be detected.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::params::Model;
use crate::policy::{ExtendedValue, FeedbackPolicy, PolicyMode, StateSnapshot};
use crate::simulate::{
    gamma_drift_integral, simulate_income_discounted, simulate_lifecycle, HistoryBuffer,
    LifecycleOptions, PathConfig,
};
use crate::weights::{aligned_grids, annuity_factor, solve_weights_with, SolveOptions, WeightTable};

/// Width of the Monte Carlo acceptance band, in standard errors.
pub const Z_BAND: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub name: String,
    pub closed_form_value: f64,
    pub mc_estimate: f64,
    pub standard_error: f64,
    pub z_score: f64,
    /// `|z| <= 3` for Monte Carlo checks, residual within tolerance otherwise.
    pub pass: bool,
    /// Probes must fail their check to count as detected.
    pub probe: bool,
    /// Absolute tolerance of a deterministic check.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tolerance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_paths: Option<usize>,
    pub runtime_secs: f64,
    #[serde(skip_serializing_if = "String::is_empty")]
    pub detail: String,
}

impl OracleReport {
    pub fn monte_carlo(name: &str, closed: f64, estimate: f64, se: f64) -> Self {
        let z = if se > 0.0 {
            (estimate - closed) / se
        } else if estimate == closed {
            0.0
        } else {
            f64::INFINITY.copysign(estimate - closed)
        };
        OracleReport {
            name: name.to_string(),
            closed_form_value: closed,
            mc_estimate: estimate,
            standard_error: se,
            z_score: z,
            pass: z.abs() <= Z_BAND,
            probe: false,
            tolerance: None,
            seed: None,
            n_paths: None,
            runtime_secs: 0.0,
            detail: String::new(),
        }
    }

    /// Residual check: passes when `|residual| <= tolerance`.
    pub fn deterministic(name: &str, residual: f64, tolerance: f64) -> Self {
        OracleReport {
            name: name.to_string(),
            closed_form_value: 0.0,
            mc_estimate: residual,
            standard_error: 0.0,
            z_score: 0.0,
            pass: residual.abs() <= tolerance,
            probe: false,
            tolerance: Some(tolerance),
            seed: None,
            n_paths: None,
            runtime_secs: 0.0,
            detail: String::new(),
        }
    }

    /// Whether the check came out as intended: pass for checks, detection
    /// for probes.
    pub fn ok(&self) -> bool {
        if !self.probe {
            return self.pass;
        }
        if self.tolerance.is_some() {
            !self.pass
        } else {
            // suboptimal policies must fall below the value
            self.z_score < -Z_BAND
        }
    }

    fn as_probe(mut self) -> Self {
        self.probe = true;
        self
    }

    fn with_run(mut self, seed: u64, n_paths: usize, started: Instant) -> Self {
        self.seed = Some(seed);
        self.n_paths = Some(n_paths);
        self.runtime_secs = started.elapsed().as_secs_f64();
        self
    }

    fn timed(mut self, started: Instant) -> Self {
        self.runtime_secs = started.elapsed().as_secs_f64();
        self
    }
}

/// Monte Carlo `E[int_0^tau_R xi y du]` against `g(0) y_0 + <h(0, .), x_1>`.
pub fn oracle_human_capital(
    model: &Model,
    tbl: &WeightTable,
    initial: &StateSnapshot,
    pc: &PathConfig,
) -> Result<OracleReport> {
    let started = Instant::now();
    let closed = tbl.human_capital(initial.t, initial.y_now, &initial.hist)?;
    let mut pc = pc.clone();
    pc.horizon = model.tau_r() - initial.t;
    let out = simulate_income_discounted(model, &tbl.lag, &pc, initial.y_now, &initial.hist)?;
    let est = out.estimate("discounted_income").expect("estimate is always produced");
    let mut rep = OracleReport::monte_carlo("human_capital", closed, est.mean, est.std_error)
        .with_run(pc.seed, pc.n_paths, started);
    rep.detail = format!(
        "negative_income_fraction={:.3e}",
        out.negative_income_fraction
    );
    Ok(rep)
}

/// Monte Carlo policy evaluation of the feedback strategy against
/// `V(0, w, x)`. `consumption_scale != 1` gives the suboptimality probe.
pub fn oracle_value_consistency(
    model: &Model,
    tbl: &WeightTable,
    initial: &StateSnapshot,
    pc: &PathConfig,
    consumption_scale: f64,
) -> Result<OracleReport> {
    let started = Instant::now();
    let policy = FeedbackPolicy::unified(model, tbl);
    let v = match policy.value_function(initial)? {
        ExtendedValue::Finite(v) => v,
        ExtendedValue::NegInfinity => f64::NEG_INFINITY,
    };
    let mut pc = pc.clone();
    pc.horizon = model.tau_r();
    let opts = LifecycleOptions {
        record_every: usize::MAX,
        value: true,
        consumption_scale,
        ..Default::default()
    };
    let out = simulate_lifecycle(&policy, &pc, initial, &opts)?;
    let est = out.estimate("value").expect("value estimate requested");
    let probe = consumption_scale != 1.0;
    let name = if probe {
        format!("value_consistency_probe_c_x{consumption_scale}")
    } else {
        format!("value_consistency_gamma_{}", model.prefs().gamma)
    };
    let rep = OracleReport::monte_carlo(&name, v, est.mean, est.std_error)
        .with_run(pc.seed, pc.n_paths, started);
    Ok(if probe { rep.as_probe() } else { rep })
}

/// Objective of the feedback policy when nothing is random (`kappa = 0`,
/// `sigma_y = 0`, zero kernel), by composite Simpson on `n` intervals.
pub fn deterministic_value_quadrature(model: &Model, w0: f64, y0: f64, n: usize) -> Result<f64> {
    model.require_hypothesis()?;
    let tau = model.tau_r();
    let p = model.prefs();
    let g = p.gamma;
    let beta = model.derived.beta;
    let gamma0 = w0 + annuity_factor(beta, tau) * y0;
    let u = |x: f64| x.powf(1.0 - g) / (1.0 - g);
    let rd = p.rho + model.market().delta;
    let integrand = |s: f64| -> Result<f64> {
        let gs = gamma0 * gamma_drift_integral(model, s)?.exp();
        let f = model.f_factor(s)?;
        let c = gs / f;
        let b = model.bequest_scale() * gs / f;
        Ok((-rd * s).exp() * (u(c) + model.market().delta * u(p.k * b)))
    };
    let n = n + n % 2;
    let h = tau / n as f64;
    let mut sum = integrand(0.0)? + integrand(tau - 1e-12 * tau)?;
    for k in 1..n {
        let w = if k % 2 == 1 { 4.0 } else { 2.0 };
        sum += w * integrand(k as f64 * h)?;
    }
    let running = sum * h / 3.0;
    let w_tau = gamma0 * gamma_drift_integral(model, tau)?.exp();
    let terminal = (-rd * tau).exp() * model.derived.eta_hat.powf(g) * u(w_tau);
    Ok(running + terminal)
}

/// Evaluates the scalar ODE satisfied by `F` at `n_samples` random times in
/// `[0, tau_R]` plus `tau_R` itself and returns the largest `|residual|`.
///
/// `eta_shift` multiplies `eta` inside `f` (1 for the real check, 1.01 for
/// the sensitivity probe).
pub fn check_hjb_scalar_identity(model: &Model, n_samples: usize, seed: u64, eta_shift: f64) -> Result<f64> {
    model.require_hypothesis()?;
    let ds = &model.derived;
    let p = model.prefs();
    let g = p.gamma;
    let tau = model.tau_r();
    let q = (p.rho + model.market().delta) / g;
    let eta = ds.eta * eta_shift;
    let spend = 1.0 + model.market().delta * model.bequest_scale();
    let residual = |t: f64| {
        let e = (-(tau - t).max(0.0) / ds.nu).exp();
        let f = (ds.eta_hat - eta) * e + eta;
        let f_prime = (ds.eta_hat - eta) * e / ds.nu;
        let big_f = (-q * t).exp() * f;
        let big_f_prime = (-q * t).exp() * (f_prime - q * f);
        g / (1.0 - g) * big_f_prime / big_f
            + model.discount()
            + g / (1.0 - g) * (-q * t).exp() / big_f * spend
            + ds.kappa_sq() / (2.0 * g)
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = residual(tau).abs().max(residual(0.0).abs());
    for _ in 0..n_samples {
        let t = rng.random_range(0.0..=tau);
        worst = worst.max(residual(t).abs());
    }
    Ok(worst)
}

/// Random admissible state on the table's grid, scaled around `level`.
pub fn random_state(tbl: &WeightTable, rng: &mut ChaCha8Rng, level: f64) -> StateSnapshot {
    let lag = tbl.lag;
    let t = rng.random_range(0.0..tbl.tau_r());
    let y_now = level * rng.random_range(0.2..2.0);
    let a = rng.random_range(0.5..1.5);
    let b = rng.random_range(-0.5..0.5);
    let hist = HistoryBuffer::from_fn(lag, |z| level * (a + b * (z / lag.d)).abs());
    let hc = tbl.human_capital(t, y_now, &hist).expect("history is on the table grid");
    let gamma = if rng.random_bool(0.05) {
        0.0
    } else {
        level * rng.random_range(0.0..20.0)
    };
    StateSnapshot::new(t, gamma - hc, y_now, hist)
}

/// Largest relative violation of `theta^T sigma + g y sigma_y^T = (Gamma/gamma) kappa^T`
/// over random states.
pub fn check_gamma_substitution(model: &Model, tbl: &WeightTable, n_samples: usize, seed: u64) -> Result<f64> {
    let policy = FeedbackPolicy::new(model, tbl, PolicyMode::PreRetirement);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sy = &model.income().sigma_y;
    let kappa = &model.derived.kappa;
    let gpref = model.prefs().gamma;
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        let s = random_state(tbl, &mut rng, 1.0);
        let gamma = policy.total_wealth(&s)?.max(0.0);
        let ctl = policy.feedback_controls(&StateSnapshot {
            w: s.w + gamma - policy.total_wealth(&s)?,
            ..s.clone()
        })?;
        let g = tbl.eval_g(s.t);
        let ts = model.theta_sigma(&ctl.theta);
        for i in 0..model.n_assets() {
            let lhs = ts[i] + g * s.y_now * sy[i];
            let rhs = gamma / gpref * kappa[i];
            let scale = lhs.abs().max(rhs.abs()).max(ts[i].abs()).max(1.0);
            worst = worst.max((lhs - rhs).abs() / scale);
        }
    }
    Ok(worst)
}

/// Value after retirement ignores the income state, and before retirement
/// depends on the state only through total wealth. Returns the largest
/// relative discrepancy.
pub fn check_merton_limit(model: &Model, tbl: &WeightTable) -> Result<OracleReport> {
    let started = Instant::now();
    let policy = FeedbackPolicy::unified(model, tbl);
    let lag = tbl.lag;
    let tau = model.tau_r();
    let p = model.prefs();
    let rd = p.rho + model.market().delta;
    let g = p.gamma;
    let mut worst = 0.0f64;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-300);
    let finite = |v: ExtendedValue| v.finite().unwrap_or(f64::NAN);

    for (t, w) in [(tau, 1.3), (tau + 1.0, 2.0), (tau + 7.5, 0.4)] {
        let h1 = HistoryBuffer::flat(lag, 1.0);
        let h2 = HistoryBuffer::from_fn(lag, |z| 3.0 + z.sin());
        let v1 = finite(policy.value_function(&StateSnapshot::new(t, w, 1.0, h1))?);
        let v2 = finite(policy.value_function(&StateSnapshot::new(t, w, 5.0, h2))?);
        let merton = (-rd * t).exp() * model.derived.eta_hat.powf(g) * w.powf(1.0 - g) / (1.0 - g);
        worst = worst.max(rel(v1, v2)).max(rel(v1, merton));
    }
    for t in [0.0, 0.37 * tau, 0.9 * tau] {
        let hist = HistoryBuffer::from_fn(lag, |z| 1.0 - 0.1 * z);
        let hc = tbl.human_capital(t, 1.2, &hist)?;
        let a = finite(policy.value_function(&StateSnapshot::new(t, 2.0, 1.2, hist))?);
        let zero = HistoryBuffer::flat(lag, 0.0);
        let b = finite(policy.value_function(&StateSnapshot::new(t, 2.0 + hc, 0.0, zero))?);
        worst = worst.max(rel(a, b));
    }
    let sign_ok = (g < 1.0) == (finite(policy.value_at(0.0, 1.0)?) > 0.0);
    let mut rep = OracleReport::deterministic("merton_limit", worst, 1e-12).timed(started);
    if !sign_ok {
        rep.pass = false;
        rep.detail = "value has the wrong sign for this gamma".into();
    }
    Ok(rep)
}

/// Which oracles [`run_suite`] runs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Suite {
    /// Scalar ODE identity and its probe; no weight solve, no simulation.
    Hjb,
    /// Deterministic identities that need the weight table.
    Identities,
    /// Monte Carlo oracles and their probes.
    MonteCarlo,
    All,
}

impl std::str::FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "hjb" => Ok(Suite::Hjb),
            "identities" => Ok(Suite::Identities),
            "mc" | "monte-carlo" => Ok(Suite::MonteCarlo),
            "all" | "full" => Ok(Suite::All),
            other => Err(format!("unknown suite `{other}` (hjb, identities, mc, all)")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SuiteOptions {
    pub steps_per_year: usize,
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Initial financial wealth and income for the Monte Carlo oracles; the
    /// history is flat at `y0`.
    pub w0: f64,
    pub y0: f64,
    pub solve: SolveOptions,
}

impl Default for SuiteOptions {
    fn default() -> Self {
        SuiteOptions {
            steps_per_year: 500,
            n_paths: 100_000,
            seed: 0,
            antithetic: true,
            w0: 1.0,
            y0: 1.0,
            solve: SolveOptions::default(),
        }
    }
}

/// Runs the selected oracles on one model. Seeds are derived from
/// `opts.seed` by oracle so every report can be replayed on its own.
///
/// The Monte Carlo part includes the bias-versus-band check: the value
/// estimate at `dt` and `2 dt` must agree within the combined band, so the
/// Euler bias is below the statistical resolution.
pub fn run_suite(model: &Model, suite: Suite, opts: &SuiteOptions) -> Result<Vec<OracleReport>> {
    let mut out = Vec::new();
    let wants = |s: Suite| suite == s || suite == Suite::All;

    if wants(Suite::Hjb) {
        let started = Instant::now();
        let r = check_hjb_scalar_identity(model, 1000, opts.seed, 1.0)?;
        out.push(OracleReport::deterministic("hjb_scalar_identity", r, 1e-10).timed(started));
        let started = Instant::now();
        let r = check_hjb_scalar_identity(model, 1000, opts.seed, 1.01)?;
        out.push(
            OracleReport::deterministic("hjb_probe_eta_x1.01", r, 1e-10)
                .as_probe()
                .timed(started),
        );
    }
    if !(wants(Suite::Identities) || wants(Suite::MonteCarlo)) {
        return Ok(out);
    }

    let table_at = |spy: usize| -> Result<WeightTable> {
        let (tg, lg) = aligned_grids(model.tau_r(), model.income().d, spy)?;
        solve_weights_with(model, tg, lg, &opts.solve)
    };
    let tbl = table_at(opts.steps_per_year)?;

    if wants(Suite::Identities) {
        let started = Instant::now();
        let r = check_gamma_substitution(model, &tbl, 1000, opts.seed)?;
        out.push(OracleReport::deterministic("gamma_substitution", r, 1e-12).timed(started));
        out.push(check_merton_limit(model, &tbl)?);
        let started = Instant::now();
        let tol = 2.0 * opts.solve.tol;
        let mut rep = OracleReport::deterministic("weights_operator_defect", tbl.operator_defect(), tol)
            .timed(started);
        rep.detail = tbl.residual_check().to_string();
        out.push(rep);
    }

    if wants(Suite::MonteCarlo) {
        let hist = HistoryBuffer::flat(tbl.lag, opts.y0);
        let initial = StateSnapshot::new(0.0, opts.w0, opts.y0, hist);
        let pc = |dt: f64, seed: u64| {
            PathConfig::new(dt, model.tau_r(), opts.n_paths, seed).antithetic(opts.antithetic)
        };
        out.push(oracle_human_capital(model, &tbl, &initial, &pc(tbl.time.dt, opts.seed + 1))?);
        let fine = oracle_value_consistency(model, &tbl, &initial, &pc(tbl.time.dt, opts.seed + 2), 1.0)?;
        out.push(
            oracle_value_consistency(model, &tbl, &initial, &pc(tbl.time.dt, opts.seed + 3), 1.2)?,
        );

        let started = Instant::now();
        let coarse_tbl = table_at((opts.steps_per_year / 2).max(1))?;
        let coarse_init = StateSnapshot::new(
            0.0,
            opts.w0,
            opts.y0,
            HistoryBuffer::flat(coarse_tbl.lag, opts.y0),
        );
        let coarse = oracle_value_consistency(
            model,
            &coarse_tbl,
            &coarse_init,
            &pc(coarse_tbl.time.dt, opts.seed + 4),
            1.0,
        )?;
        let se = fine.standard_error.hypot(coarse.standard_error);
        let mut bias = OracleReport::monte_carlo("euler_bias_vs_band", coarse.mc_estimate, fine.mc_estimate, se)
            .with_run(opts.seed + 4, opts.n_paths, started);
        bias.detail = format!("dt = {:.3e} vs {:.3e}", tbl.time.dt, coarse_tbl.time.dt);
        out.push(fine);
        out.push(bias);
    }
    Ok(out)
}
