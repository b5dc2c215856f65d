//! Monte Carlo engine.
//!
//! Income and wealth use Euler-Maruyama; the state-price density and the
//! optimal total wealth use their exact lognormal updates. Each path (or
//! antithetic pair) owns a ChaCha stream selected by its index, and results
//! are reduced in path order, so output does not depend on thread count.

mod history;
mod run;

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::Model;
use crate::policy::ControlTriple;
use crate::weights::LagGrid;

pub use history::HistoryBuffer;
pub use run::{
    analytic_gamma_mean, gamma_drift_integral, gamma_drift_integral_trapezoid, simulate_gamma_exact,
    simulate_income_discounted, simulate_lifecycle, LifecycleOptions,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Number of paths; with antithetics this counts both members of a pair.
    pub n_paths: usize,
    pub seed: u64,
    pub antithetic: bool,
    /// Brownian increments are drawn on `dt / noise_substeps` and summed, so
    /// runs at `dt` and `dt / m` can share one driving path.
    pub noise_substeps: usize,
}

impl PathConfig {
    pub fn new(dt: f64, horizon: f64, n_paths: usize, seed: u64) -> Self {
        PathConfig {
            dt,
            horizon,
            n_paths,
            seed,
            antithetic: false,
            noise_substeps: 1,
        }
    }

    pub fn antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    pub fn substeps(mut self, m: usize) -> Self {
        self.noise_substeps = m.max(1);
        self
    }

    pub fn n_steps(&self) -> Result<usize> {
        if !(self.dt > 0.0 && self.horizon > 0.0) {
            return Err(Error::invalid("dt", "need dt > 0 and horizon > 0"));
        }
        let n = (self.horizon / self.dt).round();
        if (n * self.dt - self.horizon).abs() > 1e-9 * self.horizon {
            return Err(Error::invalid(
                "dt",
                format!("dt = {} does not divide horizon = {}", self.dt, self.horizon),
            ));
        }
        Ok(n as usize)
    }

    /// Independent draws: pairs when antithetic.
    pub fn n_draws(&self) -> usize {
        if self.antithetic {
            self.n_paths.div_ceil(2)
        } else {
            self.n_paths
        }
    }

    fn validate(&self) -> Result<usize> {
        if self.n_paths == 0 {
            return Err(Error::invalid("n_paths", "need at least one path"));
        }
        if self.antithetic && self.n_paths % 2 == 1 {
            return Err(Error::invalid("n_paths", "antithetic runs need an even path count"));
        }
        self.n_steps()
    }
}

/// Gaussian increments for one path.
pub(crate) struct Noise {
    rng: ChaCha8Rng,
    sign: f64,
    substeps: usize,
    sqrt_sub: f64,
}

impl Noise {
    /// Stream for draw `index`; `mirror` negates every normal.
    pub fn new(pc: &PathConfig, index: u64, mirror: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(pc.seed);
        rng.set_stream(index);
        let substeps = pc.noise_substeps.max(1);
        Noise {
            rng,
            sign: if mirror { -1.0 } else { 1.0 },
            substeps,
            sqrt_sub: (pc.dt / substeps as f64).sqrt(),
        }
    }

    /// Brownian increments over one step of length `dt`.
    pub fn fill(&mut self, dw: &mut [f64]) {
        dw.iter_mut().for_each(|v| *v = 0.0);
        for _ in 0..self.substeps {
            for v in dw.iter_mut() {
                let z: f64 = self.rng.sample(StandardNormal);
                *v += z;
            }
        }
        let s = self.sign * self.sqrt_sub;
        dw.iter_mut().for_each(|v| *v *= s);
    }
}

/// Pre-death state of one path.
#[derive(Clone, Debug, PartialEq)]
pub struct PathState {
    pub step: usize,
    pub t: f64,
    pub w: f64,
    pub hist: HistoryBuffer,
    pub xi: f64,
}

impl PathState {
    pub fn new(w: f64, hist: HistoryBuffer) -> Self {
        PathState {
            step: 0,
            t: 0.0,
            w,
            hist,
            xi: 1.0,
        }
    }

    pub fn y(&self) -> f64 {
        self.hist.current()
    }
}

#[derive(Clone, Debug)]
enum KernelRule {
    Zero,
    Constant(f64),
    Nodes(Vec<f64>),
}

/// One-step updates for a given model and step size.
#[derive(Clone, Debug)]
pub struct Dynamics<'a> {
    pub model: &'a Model,
    pub dt: f64,
    kernel: KernelRule,
    retire_step: usize,
    xi_drift: f64,
    excess: Vec<f64>,
}

impl<'a> Dynamics<'a> {
    pub fn new(model: &'a Model, lag: &LagGrid, dt: f64) -> Result<Self> {
        if (lag.dz - dt).abs() > 1e-9 * dt {
            return Err(Error::GridMismatch(format!(
                "step {dt} differs from the lag spacing {}",
                lag.dz
            )));
        }
        let inc = model.income();
        let kernel = match inc.phi.constant_level() {
            Some(c) if c == 0.0 => KernelRule::Zero,
            Some(c) => KernelRule::Constant(c),
            None => KernelRule::Nodes(inc.phi.nodes(inc.d, lag.n_z)),
        };
        let retire_step = (model.tau_r() / dt).round() as usize;
        let k2 = model.derived.kappa_sq();
        Ok(Dynamics {
            model,
            dt,
            kernel,
            retire_step,
            xi_drift: -(model.discount() + 0.5 * k2) * dt,
            excess: model.excess_return(),
        })
    }

    /// Step index of retirement; `R = 1` from this step on.
    pub fn retire_step(&self) -> usize {
        self.retire_step
    }

    /// `int phi(zeta) y(t + zeta) dzeta` over the buffer, by trapezoid.
    pub fn delay_integral(&self, hist: &HistoryBuffer) -> f64 {
        match &self.kernel {
            KernelRule::Zero => 0.0,
            KernelRule::Constant(c) => c * hist.integral(),
            KernelRule::Nodes(phi) => hist.trapezoid_sum(phi),
        }
    }

    /// `y += (y mu_y + I_phi) dt + y sigma_y . dW`, then shifts the buffer.
    pub fn step_income(&self, s: &mut PathState, dw: &[f64]) -> f64 {
        let inc = self.model.income();
        let y = s.y();
        let shock: f64 = inc.sigma_y.iter().zip(dw).map(|(a, b)| a * b).sum();
        let y_new = y + (y * inc.mu_y + self.delay_integral(&s.hist)) * self.dt + y * shock;
        s.hist.push(y_new);
        y_new
    }

    /// Euler step of financial wealth under `ctl`, using the current income.
    pub fn step_wealth(&self, s: &mut PathState, ctl: &ControlTriple, dw: &[f64]) {
        let m = self.model;
        let n = m.n_assets();
        let income = if s.step >= self.retire_step { 0.0 } else { s.y() };
        let premium: f64 = ctl.theta.iter().zip(&self.excess).map(|(a, b)| a * b).sum();
        let mut diffusion = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += m.sigma_entry(i, j) * dw[j];
            }
            diffusion += ctl.theta[i] * row;
        }
        let drift = m.discount() * s.w + premium + income - ctl.c - m.market().delta * ctl.b;
        s.w += drift * self.dt + diffusion;
    }

    /// Exact lognormal update of the state-price density.
    pub fn step_state_price(&self, s: &mut PathState, dw: &[f64]) {
        let k: f64 = self.model.derived.kappa.iter().zip(dw).map(|(a, b)| a * b).sum();
        s.xi *= (self.xi_drift - k).exp();
    }

    pub fn advance_clock(&self, s: &mut PathState) {
        s.step += 1;
        s.t = s.step as f64 * self.dt;
    }
}

/// Sample mean with its standard error.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Estimate {
    pub name: String,
    pub mean: f64,
    pub std_error: f64,
}

/// Per-time means of a recorded observable.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesColumn {
    pub name: String,
    pub mean: Vec<f64>,
    pub std_error: Vec<f64>,
}

/// One kept path, row per recorded time.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PathRecord {
    pub path_id: usize,
    pub t: Vec<f64>,
    pub w: Vec<f64>,
    pub y: Vec<f64>,
    pub gamma: Vec<f64>,
    pub c: Vec<f64>,
    pub b: Vec<f64>,
    pub theta: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SimOutput {
    pub seed: u64,
    pub n_paths: usize,
    /// Independent draws behind each standard error.
    pub n_draws: usize,
    pub antithetic: bool,
    pub dt: f64,
    pub horizon: f64,
    pub estimates: Vec<Estimate>,
    pub times: Vec<f64>,
    pub series: Vec<SeriesColumn>,
    pub paths: Vec<PathRecord>,
    /// Share of simulated (path, step) pairs with negative income.
    pub negative_income_fraction: f64,
    pub paths_with_negative_income: usize,
    /// Smallest total wealth seen on any path and step.
    pub min_gamma: f64,
    pub max_abs_gamma: f64,
    /// Largest `|Gamma|` over the admissibility slack of its step; only
    /// meaningful for lifecycle runs.
    pub max_slack_ratio: f64,
}

impl SimOutput {
    pub fn estimate(&self, name: &str) -> Option<&Estimate> {
        self.estimates.iter().find(|e| e.name == name)
    }

    pub fn column(&self, name: &str) -> Option<&SeriesColumn> {
        self.series.iter().find(|c| c.name == name)
    }

    /// Key/value summary.
    pub fn write_summary<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        writeln!(out, "seed = {}", self.seed)?;
        writeln!(out, "n_paths = {}", self.n_paths)?;
        writeln!(out, "n_draws = {}", self.n_draws)?;
        writeln!(out, "antithetic = {}", self.antithetic)?;
        writeln!(out, "dt = {}", self.dt)?;
        writeln!(out, "horizon = {}", self.horizon)?;
        for e in &self.estimates {
            writeln!(out, "{}.mean = {}", e.name, e.mean)?;
            writeln!(out, "{}.se = {}", e.name, e.std_error)?;
        }
        writeln!(out, "negative_income_fraction = {}", self.negative_income_fraction)?;
        writeln!(out, "paths_with_negative_income = {}", self.paths_with_negative_income)?;
        writeln!(out, "min_gamma = {}", self.min_gamma)?;
        writeln!(out, "max_abs_gamma = {}", self.max_abs_gamma)?;
        if self.max_slack_ratio > 0.0 {
            writeln!(out, "max_slack_ratio = {}", self.max_slack_ratio)?;
        }
        Ok(())
    }

    /// Long format `path_id, t, W, y, Gamma, c, B, theta_1..theta_n` for kept paths.
    pub fn write_paths_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let n = self.paths.first().and_then(|p| p.theta.first()).map_or(0, Vec::len);
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["path_id", "t", "W", "y", "Gamma", "c", "B"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((1..=n).map(|i| format!("theta_{i}")));
        w.write_record(&header)?;
        for p in &self.paths {
            for k in 0..p.t.len() {
                let mut rec = vec![
                    p.path_id.to_string(),
                    p.t[k].to_string(),
                    p.w[k].to_string(),
                    p.y[k].to_string(),
                    p.gamma[k].to_string(),
                    p.c[k].to_string(),
                    p.b[k].to_string(),
                ];
                rec.extend(p.theta[k].iter().map(f64::to_string));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Mean series as CSV: `t` then each column's mean.
    pub fn write_series_csv<W: Write>(&self, mut out: W, comments: &[String]) -> Result<()> {
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_string()];
        header.extend(self.series.iter().map(|c| c.name.clone()));
        w.write_record(&header)?;
        for (k, t) in self.times.iter().enumerate() {
            let mut rec = vec![t.to_string()];
            rec.extend(self.series.iter().map(|c| c.mean[k].to_string()));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Running mean and variance (Welford), fed in a fixed order.
#[derive(Clone, Debug, Default)]
pub(crate) struct Moments {
    n: usize,
    mean: f64,
    m2: f64,
}

impl Moments {
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let d = x - self.mean;
        self.mean += d / self.n as f64;
        self.m2 += d * (x - self.mean);
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Sample standard deviation over `sqrt(n)`.
    pub fn std_error(&self) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        (self.m2 / (self.n - 1) as f64 / self.n as f64).sqrt()
    }
}
