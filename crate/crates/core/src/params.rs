//! Model primitives, derived scalars and the finiteness hypothesis.
//!
//! All rates are per year and all times are in years.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::DelayKernel;

/// Condition number above which `sigma` is treated as singular.
pub const MAX_SIGMA_CONDITION: f64 = 1e12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketParams {
    /// Riskless rate.
    pub r: f64,
    /// Drift of the `n` risky assets.
    pub mu: Vec<f64>,
    /// `n x n` volatility matrix, row-major.
    pub sigma: Vec<Vec<f64>>,
    /// Mortality intensity.
    pub delta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IncomeParams {
    pub mu_y: f64,
    pub sigma_y: Vec<f64>,
    /// Length of the delay window.
    pub d: f64,
    /// Retirement date.
    pub tau_r: f64,
    #[serde(default)]
    pub phi: DelayKernel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PreferenceParams {
    /// Relative risk aversion, `gamma != 1`.
    pub gamma: f64,
    /// Time preference rate.
    pub rho: f64,
    /// Bequest intensity.
    pub k: f64,
    /// Weight on post-retirement consumption.
    #[serde(rename = "K")]
    pub big_k: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub market: MarketParams,
    pub income: IncomeParams,
    #[serde(alias = "prefs")]
    pub preferences: PreferenceParams,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DerivedScalars {
    /// Market price of risk `sigma^{-1} (mu - r 1)`.
    pub kappa: Vec<f64>,
    /// Effective discount rate of labor income.
    pub beta: f64,
    /// `1 - 1/gamma`.
    pub b: f64,
    pub nu: f64,
    /// Pre-retirement annuity scalar `(1 + delta k^{-b}) nu`.
    pub eta: f64,
    /// Post-retirement annuity scalar `(K^{-b} + delta k^{-b}) nu`.
    pub eta_hat: f64,
    /// `rho + delta - (1 - gamma)(r + delta + |kappa|^2 / (2 gamma))`;
    /// positive iff the value function is finite.
    pub nu_denominator: f64,
}

impl DerivedScalars {
    pub fn kappa_sq(&self) -> f64 {
        self.kappa.iter().map(|k| k * k).sum()
    }

    pub fn hypothesis_holds(&self) -> bool {
        self.nu_denominator > 0.0 && self.nu.is_finite() && self.nu > 0.0
    }
}

pub(crate) fn sigma_matrix(market: &MarketParams) -> Result<DMatrix<f64>> {
    let n = market.mu.len();
    if n == 0 {
        return Err(Error::invalid("mu", "need at least one risky asset"));
    }
    if market.sigma.len() != n || market.sigma.iter().any(|row| row.len() != n) {
        return Err(Error::invalid("sigma", format!("must be {n} x {n}")));
    }
    let m = DMatrix::from_fn(n, n, |i, j| market.sigma[i][j]);
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("sigma", "entries must be finite"));
    }
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition <= MAX_SIGMA_CONDITION) {
        return Err(Error::SingularSigma { condition });
    }
    Ok(m)
}

fn excess_return(market: &MarketParams) -> DVector<f64> {
    DVector::from_iterator(market.mu.len(), market.mu.iter().map(|m| m - market.r))
}

/// Market price of risk by LU solve of `sigma kappa = mu - r 1`.
pub fn solve_kappa(market: &MarketParams) -> Result<Vec<f64>> {
    let sigma = sigma_matrix(market)?;
    let rhs = excess_return(market);
    let cond = sigma_condition(&sigma);
    sigma
        .lu()
        .solve(&rhs)
        .map(|k| k.iter().copied().collect())
        .ok_or(Error::SingularSigma { condition: cond })
}

/// Market price of risk through the explicit inverse of `sigma`.
pub fn kappa_via_inverse(market: &MarketParams) -> Result<Vec<f64>> {
    let sigma = sigma_matrix(market)?;
    let cond = sigma_condition(&sigma);
    let inv = sigma
        .try_inverse()
        .ok_or(Error::SingularSigma { condition: cond })?;
    Ok((inv * excess_return(market)).iter().copied().collect())
}

fn sigma_condition(sigma: &DMatrix<f64>) -> f64 {
    let sv = sigma.singular_values();
    sv.max() / sv.min()
}

pub fn derive_scalars(
    market: &MarketParams,
    income: &IncomeParams,
    prefs: &PreferenceParams,
) -> Result<DerivedScalars> {
    if income.sigma_y.len() != market.mu.len() {
        return Err(Error::invalid(
            "sigma_y",
            format!("length {} does not match {} assets", income.sigma_y.len(), market.mu.len()),
        ));
    }
    let kappa = solve_kappa(market)?;
    let kappa_sq: f64 = kappa.iter().map(|k| k * k).sum();
    let sy_kappa: f64 = income.sigma_y.iter().zip(&kappa).map(|(s, k)| s * k).sum();
    let beta = market.r + market.delta - income.mu_y + sy_kappa;

    let gamma = prefs.gamma;
    let b = 1.0 - 1.0 / gamma;
    let nu_denominator = prefs.rho + market.delta
        - (1.0 - gamma) * (market.r + market.delta + kappa_sq / (2.0 * gamma));
    let nu = gamma / nu_denominator;
    let bequest = market.delta * prefs.k.powf(-b);
    let eta = (1.0 + bequest) * nu;
    let eta_hat = (prefs.big_k.powf(-b) + bequest) * nu;

    Ok(DerivedScalars {
        kappa,
        beta,
        b,
        nu,
        eta,
        eta_hat,
        nu_denominator,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ValidationReport {
    /// Parameter-level problems (empty when the primitives are well formed).
    pub parameter_errors: Vec<String>,
    pub nu_denominator: Option<f64>,
    pub nu: Option<f64>,
    /// Finiteness hypothesis on the preferences and market.
    pub hypothesis_holds: bool,
    pub beta: Option<f64>,
    /// Informational only; no sign of `beta` is required.
    pub notes: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.parameter_errors.is_empty() && self.hypothesis_holds
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "passed = {}", self.passed())?;
        writeln!(f, "hypothesis_holds = {}", self.hypothesis_holds)?;
        if let Some(v) = self.nu_denominator {
            writeln!(f, "nu_denominator = {v:.12e}")?;
        }
        if let Some(v) = self.nu {
            writeln!(f, "nu = {v:.12e}")?;
        }
        if let Some(v) = self.beta {
            writeln!(f, "beta = {v:.12e}")?;
        }
        for e in &self.parameter_errors {
            writeln!(f, "error = {e}")?;
        }
        for n in &self.notes {
            writeln!(f, "note = {n}")?;
        }
        Ok(())
    }
}

/// Checks the primitives and the finiteness hypothesis without aborting.
pub fn validate_hypotheses(cfg: &ModelConfig) -> ValidationReport {
    let mut report = ValidationReport {
        parameter_errors: cfg.parameter_errors(),
        nu_denominator: None,
        nu: None,
        hypothesis_holds: false,
        beta: None,
        notes: Vec::new(),
    };
    match derive_scalars(&cfg.market, &cfg.income, &cfg.preferences) {
        Ok(ds) => {
            report.hypothesis_holds = ds.hypothesis_holds();
            report.nu_denominator = Some(ds.nu_denominator);
            report.nu = Some(ds.nu);
            report.beta = Some(ds.beta);
            if !report.hypothesis_holds {
                report.notes.push(format!(
                    "rho + delta - (1 - gamma)(r + delta + |kappa|^2/(2 gamma)) = {:.6e} <= 0: value function is not finite",
                    ds.nu_denominator
                ));
            }
            if ds.beta <= 0.0 {
                report.notes.push(format!(
                    "beta = {:.6e} is not positive; accepted, the finite retirement date needs no sign condition",
                    ds.beta
                ));
            }
        }
        Err(e) => report.parameter_errors.push(e.to_string()),
    }
    report
}

impl ModelConfig {
    /// Problems with the primitives themselves (not the finiteness hypothesis).
    pub fn parameter_errors(&self) -> Vec<String> {
        let mut errs = Vec::new();
        let m = &self.market;
        let inc = &self.income;
        let p = &self.preferences;
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                errs.push(msg.to_string());
            }
        };
        check(m.r.is_finite(), "r must be finite");
        check(m.delta.is_finite() && m.delta >= 0.0, "delta must be >= 0");
        check(m.mu.iter().all(|v| v.is_finite()), "mu must be finite");
        check(inc.mu_y.is_finite(), "mu_y must be finite");
        check(inc.sigma_y.iter().all(|v| v.is_finite()), "sigma_y must be finite");
        check(inc.d.is_finite() && inc.d > 0.0, "d must be > 0");
        check(inc.tau_r.is_finite() && inc.tau_r > 0.0, "tau_r must be > 0");
        check(p.gamma.is_finite() && p.gamma > 0.0, "gamma must be > 0");
        check(p.gamma != 1.0, "gamma must differ from 1");
        check(p.rho.is_finite() && p.rho > 0.0, "rho must be > 0");
        check(p.k.is_finite() && p.k > 0.0, "k must be > 0");
        check(p.big_k.is_finite() && p.big_k >= 1.0, "K must be >= 1");
        if inc.d > 0.0 {
            if let Err(e) = inc.phi.validate(inc.d) {
                errs.push(e.to_string());
            }
        }
        if let Err(e) = sigma_matrix(m) {
            errs.push(e.to_string());
        }
        if inc.sigma_y.len() != m.mu.len() {
            errs.push(format!(
                "sigma_y has length {} but there are {} assets",
                inc.sigma_y.len(),
                m.mu.len()
            ));
        }
        errs
    }

    /// Parses a TOML or JSON config (by extension; TOML otherwise).
    ///
    /// The kernel may be given as `{ kind = "samples", values = [...] }`
    /// (uniform on `[-d, 0]`) or `{ kind = "samples", csv = "file.csv" }`
    /// with two columns `zeta, phi`; relative CSV paths resolve against the
    /// config's directory.
    pub fn from_path(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)?;
        let is_json = path
            .extension()
            .map(|e| e.eq_ignore_ascii_case("json"))
            .unwrap_or(false);
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        if is_json {
            Self::from_json_str(&text, &base)
        } else {
            Self::from_toml_str(&text, &base)
        }
    }

    pub fn from_toml_str(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.resolve(base_dir)
    }

    pub fn from_json_str(text: &str, base_dir: &Path) -> Result<Self> {
        let raw: RawConfig =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        raw.resolve(base_dir)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is always serialisable")
    }

    /// Same configuration with a different delay kernel.
    pub fn with_phi(&self, phi: DelayKernel) -> Self {
        let mut c = self.clone();
        c.income.phi = phi;
        c
    }
}

#[derive(Deserialize)]
struct RawConfig {
    market: MarketParams,
    income: RawIncome,
    #[serde(alias = "prefs")]
    preferences: PreferenceParams,
}

#[derive(Deserialize)]
struct RawIncome {
    mu_y: f64,
    sigma_y: Vec<f64>,
    d: f64,
    tau_r: f64,
    #[serde(default)]
    phi: Option<RawKernel>,
}

#[derive(Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum RawKernel {
    Zero,
    Constant {
        level: f64,
    },
    Samples {
        #[serde(default)]
        zeta: Option<Vec<f64>>,
        #[serde(default)]
        phi: Option<Vec<f64>>,
        #[serde(default)]
        values: Option<Vec<f64>>,
        #[serde(default)]
        csv: Option<PathBuf>,
    },
    Bump {
        center: f64,
        #[serde(default)]
        width: Option<f64>,
        mass: f64,
    },
}

impl RawConfig {
    fn resolve(self, base: &Path) -> Result<ModelConfig> {
        let d = self.income.d;
        let phi = match self.income.phi {
            None | Some(RawKernel::Zero) => DelayKernel::Zero,
            Some(RawKernel::Constant { level }) => DelayKernel::Constant { level },
            Some(RawKernel::Bump {
                center,
                width,
                mass,
            }) => DelayKernel::Bump {
                center,
                width,
                mass,
            },
            Some(RawKernel::Samples {
                zeta,
                phi,
                values,
                csv,
            }) => match (zeta, phi, values, csv) {
                (Some(zeta), Some(phi), None, None) => DelayKernel::Samples { zeta, phi },
                (None, None, Some(values), None) => DelayKernel::uniform_samples(d, values)?,
                (None, None, None, Some(file)) => {
                    let file = if file.is_absolute() { file } else { base.join(file) };
                    let (zeta, phi) = read_two_column_csv(&file)?;
                    DelayKernel::Samples { zeta, phi }
                }
                _ => {
                    return Err(Error::Config(
                        "samples kernel needs exactly one of (zeta + phi), values, csv".into(),
                    ))
                }
            },
        };
        Ok(ModelConfig {
            market: self.market,
            income: IncomeParams {
                mu_y: self.income.mu_y,
                sigma_y: self.income.sigma_y,
                d,
                tau_r: self.income.tau_r,
                phi,
            },
            preferences: self.preferences,
        })
    }
}

/// Reads `(x, y)` pairs from a CSV file with an optional header row and
/// `#` comment lines.
pub fn read_two_column_csv(path: &Path) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_path(path)?;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() < 2 {
            return Err(Error::Config(format!(
                "{}: line {} has fewer than two columns",
                path.display(),
                i + 1
            )));
        }
        match (rec[0].parse::<f64>(), rec[1].parse::<f64>()) {
            (Ok(x), Ok(y)) => {
                xs.push(x);
                ys.push(y);
            }
            // header row
            _ if i == 0 => continue,
            _ => {
                return Err(Error::Config(format!(
                    "{}: cannot parse line {}",
                    path.display(),
                    i + 1
                )))
            }
        }
    }
    Ok((xs, ys))
}

/// A validated model: primitives, derived scalars and the matrix products
/// every closed form needs.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub derived: DerivedScalars,
    /// Row-major `sigma`.
    sigma: Vec<f64>,
    /// `(sigma^T)^{-1} kappa`.
    sigma_t_inv_kappa: Vec<f64>,
    /// `(sigma^T)^{-1} sigma_y`.
    sigma_t_inv_sigma_y: Vec<f64>,
}

impl Model {
    /// Validates the primitives. The finiteness hypothesis is not required
    /// here: weights and simulation work without it, value functions and
    /// feedback controls refuse to evaluate.
    pub fn new(config: ModelConfig) -> Result<Self> {
        let errs = config.parameter_errors();
        if let Some(first) = errs.first() {
            // Surface the typed error for a singular sigma.
            sigma_matrix(&config.market)?;
            return Err(Error::Config(if errs.len() == 1 {
                first.clone()
            } else {
                errs.join("; ")
            }));
        }
        let derived = derive_scalars(&config.market, &config.income, &config.preferences)?;
        let sigma_m = sigma_matrix(&config.market)?;
        let n = sigma_m.nrows();
        let cond = sigma_condition(&sigma_m);
        let lu_t = sigma_m.transpose().lu();
        let solve_t = |v: &[f64]| -> Result<Vec<f64>> {
            lu_t.solve(&DVector::from_column_slice(v))
                .map(|x| x.iter().copied().collect())
                .ok_or(Error::SingularSigma { condition: cond })
        };
        let sigma_t_inv_kappa = solve_t(&derived.kappa)?;
        let sigma_t_inv_sigma_y = solve_t(&config.income.sigma_y)?;
        let sigma = (0..n)
            .flat_map(|i| (0..n).map(move |j| (i, j)))
            .map(|(i, j)| sigma_m[(i, j)])
            .collect();
        Ok(Model {
            config,
            derived,
            sigma,
            sigma_t_inv_kappa,
            sigma_t_inv_sigma_y,
        })
    }

    pub fn n_assets(&self) -> usize {
        self.config.market.mu.len()
    }

    pub fn market(&self) -> &MarketParams {
        &self.config.market
    }

    pub fn income(&self) -> &IncomeParams {
        &self.config.income
    }

    pub fn prefs(&self) -> &PreferenceParams {
        &self.config.preferences
    }

    pub fn tau_r(&self) -> f64 {
        self.config.income.tau_r
    }

    /// `r + delta`, the mortality-adjusted riskless rate.
    pub fn discount(&self) -> f64 {
        self.config.market.r + self.config.market.delta
    }

    pub fn sigma_entry(&self, i: usize, j: usize) -> f64 {
        self.sigma[i * self.n_assets() + j]
    }

    /// `sigma v` for a vector of Brownian increments.
    pub fn sigma_times(&self, v: &[f64], out: &mut [f64]) {
        let n = self.n_assets();
        for (i, o) in out.iter_mut().enumerate().take(n) {
            *o = (0..n).map(|j| self.sigma[i * n + j] * v[j]).sum();
        }
    }

    /// `theta^T sigma` as a vector.
    pub fn theta_sigma(&self, theta: &[f64]) -> Vec<f64> {
        let n = self.n_assets();
        (0..n)
            .map(|j| (0..n).map(|i| theta[i] * self.sigma[i * n + j]).sum())
            .collect()
    }

    pub fn sigma_t_inv_kappa(&self) -> &[f64] {
        &self.sigma_t_inv_kappa
    }

    pub fn sigma_t_inv_sigma_y(&self) -> &[f64] {
        &self.sigma_t_inv_sigma_y
    }

    pub fn excess_return(&self) -> Vec<f64> {
        let m = &self.config.market;
        m.mu.iter().map(|v| v - m.r).collect()
    }

    pub fn require_hypothesis(&self) -> Result<()> {
        if self.derived.hypothesis_holds() {
            Ok(())
        } else {
            Err(Error::HypothesisViolated {
                denominator: self.derived.nu_denominator,
            })
        }
    }

    /// Consumption-to-total-wealth denominator
    /// `f(t) = (eta_hat - eta) exp(-(tau_R - t)^+ / nu) + eta`.
    pub fn f_factor(&self, t: f64) -> Result<f64> {
        self.require_hypothesis()?;
        Ok(self.f_unchecked(t))
    }

    /// `F(t) = exp(-(rho + delta) t / gamma) f(t)`.
    #[allow(non_snake_case)]
    pub fn F_factor(&self, t: f64) -> Result<f64> {
        Ok(self.time_discount_root(t) * self.f_factor(t)?)
    }

    pub(crate) fn f_unchecked(&self, t: f64) -> f64 {
        let ds = &self.derived;
        let remaining = (self.tau_r() - t).max(0.0);
        (ds.eta_hat - ds.eta) * (-remaining / ds.nu).exp() + ds.eta
    }

    /// `exp(-(rho + delta) t / gamma)`.
    pub(crate) fn time_discount_root(&self, t: f64) -> f64 {
        let p = self.prefs();
        (-(p.rho + self.config.market.delta) * t / p.gamma).exp()
    }

    /// Retirement indicator, closed at `tau_R`.
    pub fn retired(&self, t: f64) -> bool {
        t >= self.tau_r()
    }

    /// `K^{-b R}`: the post-retirement consumption scale.
    pub fn consumption_scale(&self, retired: bool) -> f64 {
        if retired {
            self.prefs().big_k.powf(-self.derived.b)
        } else {
            1.0
        }
    }

    /// `k^{-b}`.
    pub fn bequest_scale(&self) -> f64 {
        self.prefs().k.powf(-self.derived.b)
    }
}

#[cfg(test)]
pub(crate) mod test_configs {
    use super::*;

    /// Single risky asset, `mu - r = 4%`, `sigma = 20%`.
    pub fn calibration(sigma_y: f64, phi: DelayKernel) -> ModelConfig {
        ModelConfig {
            market: MarketParams {
                r: 0.02,
                mu: vec![0.06],
                sigma: vec![vec![0.2]],
                delta: 0.01,
            },
            income: IncomeParams {
                mu_y: 0.01,
                sigma_y: vec![sigma_y],
                d: 5.0,
                tau_r: 40.0,
                phi,
            },
            preferences: PreferenceParams {
                gamma: 3.0,
                rho: 0.02,
                k: 1.0,
                big_k: 1.2,
            },
        }
    }

    pub fn two_asset() -> ModelConfig {
        ModelConfig {
            market: MarketParams {
                r: 0.02,
                mu: vec![0.06, 0.05],
                sigma: vec![vec![0.2, 0.0], vec![0.06, 0.15]],
                delta: 0.01,
            },
            income: IncomeParams {
                mu_y: 0.01,
                sigma_y: vec![0.05, 0.03],
                d: 2.0,
                tau_r: 10.0,
                phi: DelayKernel::Constant { level: 0.01 },
            },
            preferences: PreferenceParams {
                gamma: 2.5,
                rho: 0.03,
                k: 0.8,
                big_k: 1.3,
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::test_configs::*;
    use super::*;
    use approx::assert_relative_eq;

    fn one_asset(r: f64, mu: f64, sigma: f64) -> MarketParams {
        MarketParams {
            r,
            mu: vec![mu],
            sigma: vec![vec![sigma]],
            delta: 0.01,
        }
    }

    #[test]
    fn zero_excess_return_gives_zero_kappa() {
        let cfg = calibration(0.1, DelayKernel::Zero);
        let mut market = cfg.market.clone();
        market.mu = vec![market.r];
        let ds = derive_scalars(&market, &cfg.income, &cfg.preferences).unwrap();
        assert_eq!(ds.kappa, vec![0.0]);
        assert_eq!(ds.beta, market.r + market.delta - cfg.income.mu_y);
    }

    #[test]
    fn beta_cancels_to_zero() {
        let mut cfg = calibration(0.1, DelayKernel::Zero);
        cfg.market = one_asset(0.02, 0.02, 0.2);
        cfg.income.mu_y = 0.03;
        let ds = derive_scalars(&cfg.market, &cfg.income, &cfg.preferences).unwrap();
        assert!(ds.beta.abs() < 1e-17);
    }

    #[test]
    fn nu_matches_hand_calculation() {
        // |kappa|^2 = 0.09 with kappa = 0.3.
        let mut cfg = calibration(0.0, DelayKernel::Zero);
        cfg.market = one_asset(0.02, 0.02 + 0.3 * 0.5, 0.5);
        cfg.preferences.gamma = 2.0;
        cfg.preferences.rho = 0.02;
        let ds = derive_scalars(&cfg.market, &cfg.income, &cfg.preferences).unwrap();
        assert_relative_eq!(ds.kappa_sq(), 0.09, max_relative = 1e-13);
        // 0.02 + 0.01 + (0.02 + 0.01 + 0.09 / 4) = 0.0825
        assert_relative_eq!(ds.nu_denominator, 0.0825, max_relative = 1e-12);
        assert_relative_eq!(ds.nu, 2.0 / 0.0825, max_relative = 1e-12);
        assert_relative_eq!(ds.nu, 24.242424242424242, max_relative = 1e-12);

        let rep = validate_hypotheses(&cfg);
        assert!(rep.passed(), "{rep}");
    }

    #[test]
    fn hypothesis_failure_is_reported_not_raised() {
        let mut cfg = calibration(0.0, DelayKernel::Zero);
        cfg.market = one_asset(0.1, 0.1, 0.2);
        cfg.market.delta = 0.0;
        cfg.preferences.gamma = 0.5;
        cfg.preferences.rho = 0.0;
        let rep = validate_hypotheses(&cfg);
        assert!(!rep.hypothesis_holds);
        assert_relative_eq!(rep.nu_denominator.unwrap(), -0.05, max_relative = 1e-12);
        assert!(!rep.passed());
    }

    #[test]
    fn negative_beta_passes_with_note() {
        let mut cfg = calibration(0.0, DelayKernel::Zero);
        cfg.income.mu_y = 0.08;
        let rep = validate_hypotheses(&cfg);
        assert!(rep.beta.unwrap() < 0.0);
        assert!(rep.passed());
        assert!(rep.notes.iter().any(|n| n.contains("beta")));
    }

    #[test]
    fn singular_sigma_is_rejected() {
        let mut cfg = two_asset();
        cfg.market.sigma = vec![vec![0.2, 0.1], vec![0.4, 0.2]];
        assert!(matches!(Model::new(cfg), Err(Error::SingularSigma { .. })));
    }

    #[test]
    fn eta_definitions() {
        let m = Model::new(two_asset()).unwrap();
        let ds = &m.derived;
        let p = m.prefs();
        let bq = m.market().delta * p.k.powf(-ds.b);
        assert_relative_eq!(ds.eta_hat, (p.big_k.powf(-ds.b) + bq) * ds.nu, max_relative = 1e-15);
        assert_relative_eq!(ds.eta, (1.0 + bq) * ds.nu, max_relative = 1e-15);
    }

    #[test]
    fn kappa_routes_agree() {
        let cfg = two_asset();
        let a = solve_kappa(&cfg.market).unwrap();
        let b = kappa_via_inverse(&cfg.market).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(x, y, max_relative = 1e-10);
        }
        // residual of sigma kappa = mu - r 1
        let s = &cfg.market.sigma;
        for i in 0..2 {
            let lhs = s[i][0] * a[0] + s[i][1] * a[1];
            let rhs = cfg.market.mu[i] - cfg.market.r;
            assert!((lhs - rhs).abs() <= 1e-12 * rhs.abs());
        }
    }

    #[test]
    fn f_boundary_values() {
        let m = Model::new(calibration(0.1, DelayKernel::Zero)).unwrap();
        let ds = &m.derived;
        assert_eq!(m.f_factor(m.tau_r()).unwrap(), ds.eta_hat);
        assert_eq!(m.f_factor(m.tau_r() + 100.0).unwrap(), ds.eta_hat);
        assert_eq!(m.f_factor(1e9).unwrap(), ds.eta_hat);
        let expected_f0 = (ds.eta_hat - ds.eta) * (-m.tau_r() / ds.nu).exp() + ds.eta;
        assert_relative_eq!(m.f_factor(0.0).unwrap(), expected_f0, max_relative = 1e-15);
        let big_f = m.F_factor(3.0).unwrap();
        let p = m.prefs();
        let expected = (-(p.rho + 0.01) * 3.0 / p.gamma).exp() * m.f_factor(3.0).unwrap();
        assert_relative_eq!(big_f, expected, max_relative = 1e-15);
    }

    #[test]
    fn unit_consumption_weight_makes_f_constant() {
        let mut cfg = calibration(0.1, DelayKernel::Zero);
        cfg.preferences.big_k = 1.0;
        let m = Model::new(cfg).unwrap();
        assert_eq!(m.derived.eta, m.derived.eta_hat);
        for t in [0.0, 7.5, 39.9, 40.0, 60.0] {
            assert_relative_eq!(m.f_factor(t).unwrap(), m.derived.eta, max_relative = 1e-15);
        }
    }

    #[test]
    fn f_refuses_when_hypothesis_fails() {
        let mut cfg = calibration(0.0, DelayKernel::Zero);
        cfg.preferences.gamma = 0.5;
        cfg.preferences.rho = 0.001;
        cfg.market.delta = 0.0;
        let m = Model::new(cfg).unwrap();
        assert!(matches!(m.f_factor(1.0), Err(Error::HypothesisViolated { .. })));
    }

    #[test]
    fn toml_round_trip_and_kernel_forms() {
        let text = r#"
            [market]
            r = 0.02
            mu = [0.06]
            sigma = [[0.2]]
            delta = 0.01

            [income]
            mu_y = 0.01
            sigma_y = [0.1]
            d = 5.0
            tau_r = 40.0
            phi = { kind = "samples", values = [0.0, 0.01, 0.02] }

            [preferences]
            gamma = 3.0
            rho = 0.02
            k = 1.0
            K = 1.2
        "#;
        let cfg = ModelConfig::from_toml_str(text, Path::new(".")).unwrap();
        assert_eq!(cfg.preferences.big_k, 1.2);
        assert_eq!(cfg.income.phi.eval(-2.5), 0.01);
        let again = ModelConfig::from_toml_str(&cfg.to_toml_string(), Path::new(".")).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn csv_kernel_is_resolved_relative_to_config() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("phi.csv"), "zeta,phi\n-5,0.0\n0,0.02\n").unwrap();
        let json = r#"{
            "market": {"r": 0.02, "mu": [0.06], "sigma": [[0.2]], "delta": 0.01},
            "income": {"mu_y": 0.01, "sigma_y": [0.1], "d": 5.0, "tau_r": 40.0,
                       "phi": {"kind": "samples", "csv": "phi.csv"}},
            "preferences": {"gamma": 3.0, "rho": 0.02, "k": 1.0, "K": 1.2}
        }"#;
        let path = dir.path().join("model.json");
        std::fs::write(&path, json).unwrap();
        let cfg = ModelConfig::from_path(&path).unwrap();
        assert_relative_eq!(cfg.income.phi.eval(-2.5), 0.01, max_relative = 1e-15);
        Model::new(cfg).unwrap();
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn kappa_is_scale_invariant(lambda in 0.1f64..10.0, a in 0.05f64..0.5, c in -0.2f64..0.2, e in 0.05f64..0.5) {
                let mut cfg = two_asset();
                cfg.market.sigma = vec![vec![a, 0.0], vec![c, e]];
                let k1 = solve_kappa(&cfg.market).unwrap();
                let mut scaled = cfg.market.clone();
                scaled.sigma = scaled.sigma.iter().map(|row| row.iter().map(|v| v * lambda).collect()).collect();
                scaled.mu = scaled.mu.iter().map(|m| scaled.r + lambda * (m - scaled.r)).collect();
                let k2 = solve_kappa(&scaled).unwrap();
                for (x, y) in k1.iter().zip(&k2) {
                    prop_assert!((x - y).abs() <= 1e-10 * x.abs().max(1e-12));
                }
            }

            #[test]
            fn f_stays_between_eta_and_eta_hat(t in 0.0f64..120.0, big_k in 1.0f64..3.0, gamma in 0.3f64..6.0) {
                prop_assume!((gamma - 1.0).abs() > 1e-3);
                let mut cfg = calibration(0.1, DelayKernel::Zero);
                cfg.preferences.big_k = big_k;
                cfg.preferences.gamma = gamma;
                cfg.preferences.rho = 0.08;
                let m = Model::new(cfg).unwrap();
                prop_assume!(m.derived.hypothesis_holds());
                let f = m.f_factor(t).unwrap();
                let (lo, hi) = if m.derived.eta < m.derived.eta_hat {
                    (m.derived.eta, m.derived.eta_hat)
                } else {
                    (m.derived.eta_hat, m.derived.eta)
                };
                prop_assert!(f >= lo * (1.0 - 1e-14) && f <= hi * (1.0 + 1e-14));
            }
        }
    }
}
