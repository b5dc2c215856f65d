//! Closed-form value function and optimal feedback controls.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::params::Model;
use crate::simulate::HistoryBuffer;
use crate::weights::WeightTable;

/// State `(t, w, x)`; the lag-zero node of `hist` is taken from `y_now`.
#[derive(Clone, Debug, PartialEq)]
pub struct StateSnapshot {
    pub t: f64,
    pub w: f64,
    pub y_now: f64,
    pub hist: HistoryBuffer,
}

impl StateSnapshot {
    pub fn new(t: f64, w: f64, y_now: f64, hist: HistoryBuffer) -> Self {
        StateSnapshot { t, w, y_now, hist }
    }

    /// Scales `(w, y_now, hist)` by `lambda`.
    pub fn scaled(&self, lambda: f64) -> Self {
        let nodes = self.hist.nodes().into_iter().map(|v| v * lambda).collect();
        StateSnapshot {
            t: self.t,
            w: self.w * lambda,
            y_now: self.y_now * lambda,
            hist: HistoryBuffer::new(*self.hist.lag_grid(), nodes).expect("same grid"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ControlTriple {
    /// Consumption rate.
    pub c: f64,
    /// Bequest target.
    #[serde(rename = "B")]
    pub b: f64,
    /// Dollar amounts in each risky asset.
    pub theta: Vec<f64>,
}

/// Value that may be `-inf` on the boundary when `gamma > 1`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum ExtendedValue {
    Finite(f64),
    NegInfinity,
}

impl ExtendedValue {
    pub fn finite(self) -> Option<f64> {
        match self {
            ExtendedValue::Finite(v) => Some(v),
            ExtendedValue::NegInfinity => None,
        }
    }
}

impl std::fmt::Display for ExtendedValue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExtendedValue::Finite(v) => write!(f, "{v}"),
            ExtendedValue::NegInfinity => f.write_str("-inf"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    /// Working-life problem: human capital counts, no retirement switch.
    PreRetirement,
    /// Retired Merton problem: total wealth is financial wealth.
    PostRetirement,
    /// Switches from the first to the second at `tau_R` (closed).
    Unified,
}

#[derive(Clone, Copy, Debug)]
pub struct FeedbackPolicy<'a> {
    pub model: &'a Model,
    pub table: &'a WeightTable,
    pub mode: PolicyMode,
}

impl<'a> FeedbackPolicy<'a> {
    pub fn new(model: &'a Model, table: &'a WeightTable, mode: PolicyMode) -> Self {
        FeedbackPolicy { model, table, mode }
    }

    pub fn unified(model: &'a Model, table: &'a WeightTable) -> Self {
        Self::new(model, table, PolicyMode::Unified)
    }

    fn retired(&self, t: f64) -> bool {
        match self.mode {
            PolicyMode::PreRetirement => false,
            PolicyMode::PostRetirement => true,
            PolicyMode::Unified => self.model.retired(t),
        }
    }

    fn uses_human_capital(&self) -> bool {
        self.mode != PolicyMode::PostRetirement
    }

    /// `f(t)`, pinned to `eta_hat` in post-retirement mode.
    pub fn f(&self, t: f64) -> Result<f64> {
        if self.mode == PolicyMode::PostRetirement {
            self.model.require_hypothesis()?;
            Ok(self.model.derived.eta_hat)
        } else {
            self.model.f_factor(t)
        }
    }

    #[allow(non_snake_case)]
    pub fn F(&self, t: f64) -> Result<f64> {
        Ok(self.model.time_discount_root(t) * self.f(t)?)
    }

    /// `Gamma = w + g(t) y_now + <h(t, .), x>`.
    pub fn total_wealth(&self, s: &StateSnapshot) -> Result<f64> {
        if !self.uses_human_capital() {
            return Ok(s.w);
        }
        Ok(s.w + self.table.human_capital(s.t, s.y_now, &s.hist)?)
    }

    pub fn feedback_controls(&self, s: &StateSnapshot) -> Result<ControlTriple> {
        let gamma = self.total_wealth(s)?;
        if gamma < 0.0 {
            return Err(Error::InadmissibleState { gamma });
        }
        let g = if self.uses_human_capital() {
            self.table.eval_g(s.t)
        } else {
            0.0
        };
        self.controls_from_parts(s.t, gamma, g, s.y_now)
    }

    /// Controls given total wealth and `g(t)` directly.
    pub fn controls_from_parts(&self, t: f64, gamma: f64, g: f64, y_now: f64) -> Result<ControlTriple> {
        let f = self.f(t)?;
        let mut out = ControlTriple {
            c: 0.0,
            b: 0.0,
            theta: vec![0.0; self.model.n_assets()],
        };
        self.fill_controls(t, gamma, g, y_now, f, &mut out);
        Ok(out)
    }

    /// Allocation-free variant for the simulator; `f` is `f(t)`.
    pub(crate) fn fill_controls(
        &self,
        t: f64,
        gamma: f64,
        g: f64,
        y_now: f64,
        f: f64,
        out: &mut ControlTriple,
    ) {
        let m = self.model;
        let scale = m.consumption_scale(self.retired(t));
        out.c = scale * gamma / f;
        out.b = m.bequest_scale() * gamma / f;
        let merton = gamma / m.prefs().gamma;
        let hedge = g * y_now;
        for ((th, k), sy) in out
            .theta
            .iter_mut()
            .zip(m.sigma_t_inv_kappa())
            .zip(m.sigma_t_inv_sigma_y())
        {
            *th = k * merton - sy * hedge;
        }
    }

    /// `F(t)^gamma Gamma^{1-gamma} / (1 - gamma)`.
    pub fn value_function(&self, s: &StateSnapshot) -> Result<ExtendedValue> {
        let gamma = self.total_wealth(s)?;
        self.value_at(s.t, gamma)
    }

    /// Value as a function of `(t, Gamma)` only.
    pub fn value_at(&self, t: f64, total_wealth: f64) -> Result<ExtendedValue> {
        let big_f = self.F(t)?;
        if total_wealth < 0.0 {
            return Err(Error::InadmissibleState { gamma: total_wealth });
        }
        let g = self.model.prefs().gamma;
        if total_wealth == 0.0 {
            return Ok(if g < 1.0 {
                ExtendedValue::Finite(0.0)
            } else {
                ExtendedValue::NegInfinity
            });
        }
        let v = big_f.powf(g) * total_wealth.powf(1.0 - g) / (1.0 - g);
        if v.is_finite() {
            Ok(ExtendedValue::Finite(v))
        } else {
            Ok(ExtendedValue::NegInfinity)
        }
    }
}

/// Difference of the risky allocations with and without the delay kernel,
/// `(sigma^T)^{-1} [(kappa/gamma - sigma_y) g2 y + (kappa/gamma) <h, x>]`.
pub fn hedging_demand_delta(
    model: &Model,
    s: &StateSnapshot,
    tbl_phi: &WeightTable,
    tbl_zero: &WeightTable,
) -> Result<Vec<f64>> {
    let a = tbl_phi.config();
    let b = tbl_zero.config();
    if a.with_phi(Default::default()) != b.with_phi(Default::default()) {
        return Err(Error::ConfigMismatch("configs differ beyond the kernel".into()));
    }
    if a.with_phi(Default::default()) != model.config.with_phi(Default::default()) {
        return Err(Error::ConfigMismatch("model differs from the tables".into()));
    }
    if !tbl_zero.phi_is_zero() {
        return Err(Error::ConfigMismatch("reference table must have a zero kernel".into()));
    }
    if tbl_phi.time != tbl_zero.time || tbl_phi.lag != tbl_zero.lag {
        return Err(Error::ConfigMismatch("tables are on different grids".into()));
    }
    let g2 = tbl_phi.eval_g(s.t) - tbl_zero.eval_g(s.t);
    let hx = tbl_phi.history_value(s.t, s.y_now, &s.hist)?;
    let inv_gamma = 1.0 / model.prefs().gamma;
    Ok(model
        .sigma_t_inv_kappa()
        .iter()
        .zip(model.sigma_t_inv_sigma_y())
        .map(|(k, sy)| (k * inv_gamma - sy) * g2 * s.y_now + k * inv_gamma * hx)
        .collect())
}

/// Retired-agent fractions of wealth: `(K^{-b}/eta_hat, k^{-b}/eta_hat,
/// (sigma^T)^{-1} kappa / gamma)`.
pub fn merton_fractions(model: &Model) -> Result<(f64, f64, Vec<f64>)> {
    model.require_hypothesis()?;
    let eta_hat = model.derived.eta_hat;
    let g = model.prefs().gamma;
    Ok((
        model.consumption_scale(true) / eta_hat,
        model.bequest_scale() / eta_hat,
        model.sigma_t_inv_kappa().iter().map(|k| k / g).collect(),
    ))
}

#[cfg(test)]
mod tests;
