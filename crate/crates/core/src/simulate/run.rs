use rayon::prelude::*;

use super::{
    Dynamics, Estimate, HistoryBuffer, Moments, Noise, PathConfig, PathRecord, PathState,
    SeriesColumn, SimOutput,
};
use crate::error::{Error, Result};
use crate::params::Model;
use crate::policy::{ControlTriple, FeedbackPolicy, PolicyMode, StateSnapshot};
use crate::weights::LagGrid;

/// `A(t) = int_0^t a(s) ds` for the optimal total-wealth drift
/// `a(s) = r + delta + |kappa|^2/gamma - (K^{-bR(s)} + delta k^{-b}) / f(s)`.
///
/// Uses `(1 + delta k^{-b}) / f = 1/nu - f'/f` before retirement and
/// `(K^{-b} + delta k^{-b}) / f = 1/nu` after.
pub fn gamma_drift_integral(model: &Model, t: f64) -> Result<f64> {
    model.require_hypothesis()?;
    let ds = &model.derived;
    let rate = model.discount() + ds.kappa_sq() / model.prefs().gamma - 1.0 / ds.nu;
    let f0 = model.f_unchecked(0.0);
    let ft = model.f_unchecked(t.min(model.tau_r()));
    Ok(rate * t + (ft / f0).ln())
}

/// Drift rate `a(s)` with the retirement switch given explicitly, so the
/// trapezoid can take one-sided values at `tau_R`.
fn gamma_drift_rate(model: &Model, s: f64, retired: bool) -> f64 {
    let ds = &model.derived;
    let spend = model.consumption_scale(retired) + model.market().delta * model.bequest_scale();
    model.discount() + ds.kappa_sq() / model.prefs().gamma - spend / model.f_unchecked(s)
}

/// Trapezoid rule for `A(t)` with step close to `dt`, split at `tau_R`.
pub fn gamma_drift_integral_trapezoid(model: &Model, t: f64, dt: f64) -> Result<f64> {
    model.require_hypothesis()?;
    let tau = model.tau_r();
    let segment = |a: f64, b: f64, retired: bool| -> f64 {
        if b <= a {
            return 0.0;
        }
        let n = ((b - a) / dt).round().max(1.0) as usize;
        let h = (b - a) / n as f64;
        let rate = |s: f64| gamma_drift_rate(model, s, retired);
        let inner: f64 = (1..n).map(|k| rate(a + k as f64 * h)).sum();
        h * (inner + 0.5 * (rate(a) + rate(b)))
    };
    Ok(segment(0.0, t.min(tau), false) + segment(tau.min(t), t, true))
}

/// `E[Gamma*(t)] = Gamma(0) exp(A(t))`.
pub fn analytic_gamma_mean(model: &Model, gamma0: f64, t: f64) -> Result<f64> {
    Ok(gamma0 * gamma_drift_integral(model, t)?.exp())
}

#[derive(Clone, Debug, PartialEq)]
pub struct LifecycleOptions {
    /// Record means every this many steps (the last step is always recorded).
    pub record_every: usize,
    /// Keep full records for this many leading paths.
    pub keep_paths: usize,
    /// Accumulate the objective functional with the retired terminal value.
    pub value: bool,
    /// Multiplies the feedback consumption; 1 is optimal.
    pub consumption_scale: f64,
    /// Also run the exact total-wealth path on the same noise.
    pub compare_exact: bool,
}

impl Default for LifecycleOptions {
    fn default() -> Self {
        LifecycleOptions {
            record_every: 1,
            keep_paths: 0,
            value: false,
            consumption_scale: 1.0,
            compare_exact: false,
        }
    }
}

struct DrawResult {
    scalars: Vec<f64>,
    series: Vec<f64>,
    neg_steps: usize,
    steps: usize,
    neg_paths: usize,
    min_gamma: f64,
    max_abs_gamma: f64,
    max_slack_ratio: f64,
    kept: Vec<PathRecord>,
}

impl DrawResult {
    fn merge_pair(mut a: DrawResult, b: DrawResult) -> DrawResult {
        for (x, y) in a.scalars.iter_mut().zip(&b.scalars) {
            *x = 0.5 * (*x + y);
        }
        for (x, y) in a.series.iter_mut().zip(&b.series) {
            *x = 0.5 * (*x + y);
        }
        a.neg_steps += b.neg_steps;
        a.steps += b.steps;
        a.neg_paths += b.neg_paths;
        a.min_gamma = a.min_gamma.min(b.min_gamma);
        a.max_abs_gamma = a.max_abs_gamma.max(b.max_abs_gamma);
        a.max_slack_ratio = a.max_slack_ratio.max(b.max_slack_ratio);
        a.kept.extend(b.kept);
        a
    }
}

/// Runs `path(index, stream, mirror)` for every path and reduces in order.
fn run_paths<F>(
    pc: &PathConfig,
    scalar_names: &[&str],
    column_names: &[String],
    times: Vec<f64>,
    path: F,
) -> Result<SimOutput>
where
    F: Fn(usize, Noise) -> Result<DrawResult> + Sync,
{
    pc.validate()?;
    let draws: Vec<DrawResult> = (0..pc.n_draws())
        .into_par_iter()
        .map(|d| {
            if pc.antithetic {
                let a = path(2 * d, Noise::new(pc, d as u64, false))?;
                let b = path(2 * d + 1, Noise::new(pc, d as u64, true))?;
                Ok(DrawResult::merge_pair(a, b))
            } else {
                path(d, Noise::new(pc, d as u64, false))
            }
        })
        .collect::<Result<_>>()?;

    let n_rec = times.len();
    let n_col = column_names.len();
    let mut scal = vec![Moments::default(); scalar_names.len()];
    let mut ser = vec![Moments::default(); n_rec * n_col];
    let mut neg_steps = 0usize;
    let mut steps = 0usize;
    let mut neg_paths = 0usize;
    let mut min_gamma = f64::INFINITY;
    let mut max_abs = 0.0f64;
    let mut max_slack = 0.0f64;
    let mut paths = Vec::new();
    for d in draws {
        for (m, v) in scal.iter_mut().zip(&d.scalars) {
            m.push(*v);
        }
        for (m, v) in ser.iter_mut().zip(&d.series) {
            m.push(*v);
        }
        neg_steps += d.neg_steps;
        steps += d.steps;
        neg_paths += d.neg_paths;
        min_gamma = min_gamma.min(d.min_gamma);
        max_abs = max_abs.max(d.max_abs_gamma);
        max_slack = max_slack.max(d.max_slack_ratio);
        paths.extend(d.kept);
    }
    let estimates = scalar_names
        .iter()
        .zip(&scal)
        .map(|(n, m)| Estimate {
            name: n.to_string(),
            mean: m.mean(),
            std_error: m.std_error(),
        })
        .collect();
    let series = column_names
        .iter()
        .enumerate()
        .map(|(c, name)| SeriesColumn {
            name: name.clone(),
            mean: (0..n_rec).map(|k| ser[k * n_col + c].mean()).collect(),
            std_error: (0..n_rec).map(|k| ser[k * n_col + c].std_error()).collect(),
        })
        .collect();
    Ok(SimOutput {
        seed: pc.seed,
        n_paths: pc.n_paths,
        n_draws: pc.n_draws(),
        antithetic: pc.antithetic,
        dt: pc.dt,
        horizon: pc.horizon,
        estimates,
        times,
        series,
        paths,
        negative_income_fraction: if steps == 0 {
            0.0
        } else {
            neg_steps as f64 / steps as f64
        },
        paths_with_negative_income: neg_paths,
        min_gamma,
        max_abs_gamma: max_abs,
        max_slack_ratio: max_slack,
    })
}

fn record_steps(start: usize, n_steps: usize, every: usize) -> Vec<usize> {
    let every = every.max(1);
    let mut v: Vec<usize> = (start..=n_steps).step_by(every).collect();
    if v.last() != Some(&n_steps) {
        v.push(n_steps);
    }
    v
}

fn utility(x: f64, gamma: f64) -> f64 {
    x.powf(1.0 - gamma) / (1.0 - gamma)
}

/// Closed-loop simulation of `(W, y)` under the feedback policy.
///
/// Total wealth is recomputed from `W` and the weight table at every step.
/// When `Gamma(0) = 0` the exact dynamics are absorbed at zero, so the
/// boundary strategy is applied throughout and only discretisation noise
/// moves the simulated `Gamma`.
pub fn simulate_lifecycle(
    policy: &FeedbackPolicy,
    pc: &PathConfig,
    init: &StateSnapshot,
    opts: &LifecycleOptions,
) -> Result<SimOutput> {
    let model = policy.model;
    let tbl = policy.table;
    if (tbl.time.dt - pc.dt).abs() > 1e-9 * pc.dt {
        return Err(Error::GridMismatch(format!(
            "path step {} differs from the weight grid step {}",
            pc.dt, tbl.time.dt
        )));
    }
    model.require_hypothesis()?;
    let n_steps = pc.validate()?;
    let dyn_ = Dynamics::new(model, &tbl.lag, pc.dt)?;
    let start = (init.t / pc.dt).round() as usize;
    if start > n_steps || (start as f64 * pc.dt - init.t).abs() > 1e-9 * pc.dt.max(init.t) {
        return Err(Error::invalid("t", "initial time must be a grid node within the horizon"));
    }
    if opts.value && (start != 0 || (pc.horizon - model.tau_r()).abs() > 1e-9 * model.tau_r()) {
        return Err(Error::invalid(
            "horizon",
            "policy evaluation runs from t = 0 to retirement",
        ));
    }

    let mut hist0 = init.hist.clone();
    if !hist0.lag_grid().same_as(&tbl.lag) {
        return Err(Error::GridMismatch("initial history is not on the table's lag grid".into()));
    }
    hist0.set_current(init.y_now);
    let gamma0 = policy.total_wealth(init)?;
    if gamma0 < 0.0 {
        return Err(Error::InadmissibleState { gamma: gamma0 });
    }
    let y_scale = hist0.nodes().iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let absorbed = gamma0 == 0.0;
    if opts.value && !(gamma0 > 0.0) {
        return Err(Error::invalid("w", "policy evaluation needs Gamma(0) > 0"));
    }

    let n = model.n_assets();
    let prefs = model.prefs();
    let rd = prefs.rho + model.market().delta;
    let gamma_pref = prefs.gamma;
    let uses_hc = policy.mode != PolicyMode::PostRetirement;
    let n_t = tbl.time.n_t;
    let f_steps: Vec<f64> = (0..=n_steps)
        .map(|k| policy.f(k as f64 * pc.dt))
        .collect::<Result<_>>()?;
    let disc: Vec<f64> = (0..=n_steps).map(|k| (-rd * k as f64 * pc.dt).exp()).collect();
    let kv: Vec<f64> = model.derived.kappa.iter().map(|k| k / gamma_pref).collect();
    let kv2: f64 = kv.iter().map(|k| k * k).sum();
    let exact_log: Vec<f64> = if opts.compare_exact {
        (0..=n_steps)
            .map(|k| {
                let t = k as f64 * pc.dt;
                Ok(gamma_drift_integral(model, t)? - 0.5 * kv2 * t)
            })
            .collect::<Result<_>>()?
    } else {
        Vec::new()
    };
    let terminal_scale = (-rd * model.tau_r()).exp() * model.derived.eta_hat.powf(gamma_pref);

    let rec = record_steps(start, n_steps, opts.record_every);
    let times: Vec<f64> = rec.iter().map(|&k| k as f64 * pc.dt).collect();
    let mut cols: Vec<String> = ["W", "y", "Gamma", "c", "B", "xi"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    cols.extend((1..=n).map(|i| format!("theta_{i}")));
    cols.extend((1..=n).map(|i| format!("theta_over_gamma_{i}")));
    if opts.compare_exact {
        cols.push("Gamma_exact".into());
        cols.push("abs_error".into());
    }
    let n_col = cols.len();
    let mut scalar_names = vec!["Gamma_T"];
    if opts.value {
        scalar_names.push("value");
    }
    if opts.compare_exact {
        scalar_names.push("strong_error");
    }

    let path = |id: usize, mut noise: Noise| -> Result<DrawResult> {
        let mut s = PathState::new(init.w, hist0.clone());
        s.step = start;
        s.t = start as f64 * pc.dt;
        let mut ctl = ControlTriple {
            c: 0.0,
            b: 0.0,
            theta: vec![0.0; n],
        };
        let mut dw = vec![0.0; n];
        let mut z = vec![0.0; n];
        let mut series = Vec::with_capacity(rec.len() * n_col);
        let mut kept = (id < opts.keep_paths).then(|| PathRecord {
            path_id: id,
            t: Vec::new(),
            w: Vec::new(),
            y: Vec::new(),
            gamma: Vec::new(),
            c: Vec::new(),
            b: Vec::new(),
            theta: Vec::new(),
        });
        let mut next_rec = 0usize;
        let mut value = 0.0;
        let mut neg_steps = 0usize;
        let mut min_gamma = f64::INFINITY;
        let mut max_abs = 0.0f64;
        // At the boundary the slack follows the largest income seen so far.
        let mut max_slack_ratio = 0.0f64;
        let mut scale = if absorbed { y_scale.max(f64::MIN_POSITIVE) } else { gamma0 };
        let (gamma_t, exact_t) = loop {
            let k = s.step;
            let y = s.y();
            if absorbed {
                scale = scale.max(y.abs());
            }
            let tolerance = 10.0 * pc.dt * scale;
            let (hc, g) = if uses_hc && k < n_t {
                (tbl.human_capital_at_step(k, y, &s.hist), tbl.g_nodes()[k])
            } else {
                (0.0, 0.0)
            };
            let gamma = s.w + hc;
            if gamma < -tolerance || !gamma.is_finite() {
                return Err(Error::AdmissibilityBreach {
                    path: id,
                    t: s.t,
                    gamma,
                    tolerance,
                });
            }
            min_gamma = min_gamma.min(gamma);
            max_abs = max_abs.max(gamma.abs());
            max_slack_ratio = max_slack_ratio.max(gamma.abs() / tolerance);
            if y < 0.0 {
                neg_steps += 1;
            }
            let g_ctl = if absorbed { 0.0 } else { gamma.max(0.0) };
            policy.fill_controls(s.t, g_ctl, g, y, f_steps[k], &mut ctl);
            ctl.c *= opts.consumption_scale;
            let exact = if opts.compare_exact {
                let zk: f64 = kv.iter().zip(&z).map(|(a, b)| a * b).sum();
                gamma0 * (exact_log[k] + zk).exp()
            } else {
                0.0
            };

            if next_rec < rec.len() && rec[next_rec] == k {
                series.extend_from_slice(&[s.w, y, gamma, ctl.c, ctl.b, s.xi]);
                series.extend_from_slice(&ctl.theta);
                for th in &ctl.theta {
                    series.push(if gamma > 0.0 { th / gamma } else { 0.0 });
                }
                if opts.compare_exact {
                    series.push(exact);
                    series.push((gamma - exact).abs());
                }
                if let Some(p) = kept.as_mut() {
                    p.t.push(s.t);
                    p.w.push(s.w);
                    p.y.push(y);
                    p.gamma.push(gamma);
                    p.c.push(ctl.c);
                    p.b.push(ctl.b);
                    p.theta.push(ctl.theta.clone());
                }
                next_rec += 1;
            }
            if k == n_steps {
                break (gamma, exact);
            }
            if opts.value {
                let bequest = model.market().delta * utility(prefs.k * ctl.b, gamma_pref);
                value += disc[k] * (utility(ctl.c, gamma_pref) + bequest) * pc.dt;
            }
            noise.fill(&mut dw);
            if opts.compare_exact {
                for (zi, d) in z.iter_mut().zip(&dw) {
                    *zi += d;
                }
            }
            dyn_.step_wealth(&mut s, &ctl, &dw);
            dyn_.step_state_price(&mut s, &dw);
            dyn_.step_income(&mut s, &dw);
            dyn_.advance_clock(&mut s);
        };
        let mut scalars = vec![gamma_t];
        if opts.value {
            // W(tau_R) = Gamma(tau_R) since human capital is spent.
            value += terminal_scale * gamma_t.powf(1.0 - gamma_pref) / (1.0 - gamma_pref);
            scalars.push(value);
        }
        if opts.compare_exact {
            scalars.push((gamma_t - exact_t).abs());
        }
        Ok(DrawResult {
            scalars,
            series,
            neg_steps,
            steps: n_steps - start + 1,
            neg_paths: usize::from(neg_steps > 0),
            min_gamma,
            max_abs_gamma: max_abs,
            max_slack_ratio,
            kept: kept.into_iter().collect(),
        })
    };
    run_paths(pc, &scalar_names, &cols, times, path)
}

/// Joint simulation of income and the state-price density; estimates
/// `int_0^T xi(u) y(u) du` (trapezoid in time) and `xi(T)`.
pub fn simulate_income_discounted(
    model: &Model,
    lag: &LagGrid,
    pc: &PathConfig,
    y0: f64,
    hist: &HistoryBuffer,
) -> Result<SimOutput> {
    pc.validate()?;
    let n_steps = pc.n_steps()?;
    let dyn_ = Dynamics::new(model, lag, pc.dt)?;
    if !hist.lag_grid().same_as(lag) {
        return Err(Error::GridMismatch("history is not on the lag grid".into()));
    }
    let mut hist0 = hist.clone();
    hist0.set_current(y0);
    let n = model.n_assets();
    let path = |_id: usize, mut noise: Noise| -> Result<DrawResult> {
        let mut s = PathState::new(0.0, hist0.clone());
        let mut dw = vec![0.0; n];
        let mut prev = s.xi * s.y();
        let mut acc = 0.0;
        let mut neg_steps = usize::from(s.y() < 0.0);
        for _ in 0..n_steps {
            noise.fill(&mut dw);
            dyn_.step_state_price(&mut s, &dw);
            dyn_.step_income(&mut s, &dw);
            dyn_.advance_clock(&mut s);
            let cur = s.xi * s.y();
            acc += 0.5 * (prev + cur) * pc.dt;
            prev = cur;
            if s.y() < 0.0 {
                neg_steps += 1;
            }
        }
        Ok(DrawResult {
            scalars: vec![acc, s.xi],
            series: Vec::new(),
            neg_steps,
            steps: n_steps + 1,
            neg_paths: usize::from(neg_steps > 0),
            min_gamma: f64::INFINITY,
            max_abs_gamma: 0.0,
            max_slack_ratio: 0.0,
            kept: Vec::new(),
        })
    };
    run_paths(pc, &["discounted_income", "xi_T"], &[], Vec::new(), path)
}

/// Exact lognormal optimal total wealth
/// `Gamma*(t) = Gamma(0) exp(A(t) - |kappa/gamma|^2 t / 2 + (kappa/gamma) . Z(t))`.
pub fn simulate_gamma_exact(
    model: &Model,
    pc: &PathConfig,
    gamma0: f64,
    record_every: usize,
) -> Result<SimOutput> {
    if !(gamma0 >= 0.0) {
        return Err(Error::InadmissibleState { gamma: gamma0 });
    }
    let n_steps = pc.validate()?;
    let n = model.n_assets();
    let kv: Vec<f64> = model.derived.kappa.iter().map(|k| k / model.prefs().gamma).collect();
    let kv2: f64 = kv.iter().map(|k| k * k).sum();
    let log_drift: Vec<f64> = (0..=n_steps)
        .map(|k| {
            let t = k as f64 * pc.dt;
            Ok(gamma_drift_integral(model, t)? - 0.5 * kv2 * t)
        })
        .collect::<Result<_>>()?;
    let rec = record_steps(0, n_steps, record_every);
    let times = rec.iter().map(|&k| k as f64 * pc.dt).collect();
    let path = |_id: usize, mut noise: Noise| -> Result<DrawResult> {
        let mut dw = vec![0.0; n];
        let mut zk = 0.0;
        let mut series = Vec::with_capacity(rec.len());
        let mut next_rec = 0;
        let mut min_gamma = f64::INFINITY;
        let mut max_abs = 0.0f64;
        let mut last = gamma0;
        for k in 0..=n_steps {
            if k > 0 {
                noise.fill(&mut dw);
                zk += kv.iter().zip(&dw).map(|(a, b)| a * b).sum::<f64>();
            }
            let g = gamma0 * (log_drift[k] + zk).exp();
            min_gamma = min_gamma.min(g);
            max_abs = max_abs.max(g.abs());
            if next_rec < rec.len() && rec[next_rec] == k {
                series.push(g);
                next_rec += 1;
            }
            last = g;
        }
        Ok(DrawResult {
            scalars: vec![last],
            series,
            neg_steps: 0,
            steps: 0,
            neg_paths: 0,
            min_gamma,
            max_abs_gamma: max_abs,
            max_slack_ratio: 0.0,
            kept: Vec::new(),
        })
    };
    run_paths(pc, &["Gamma_T"], &["Gamma".to_string()], times, path)
}
