//! Human-capital weights `(g, h)`.
//!
//! `g(t)` prices a unit of current income and `h(t, zeta)` prices a unit of
//! income earned `-zeta` years ago, so human capital is
//! `g(t) y(t) + int h(t, zeta) y(t + zeta) dzeta`. Both vanish from
//! retirement on.

mod grid;
mod residual;
mod solve;

use std::borrow::Cow;
use std::io::Write;

use crate::error::{Error, Result};
use crate::kernel::trapezoid;
use crate::params::{Model, ModelConfig};
use crate::simulate::HistoryBuffer;

pub use grid::{aligned_grids, check_aligned, LagGrid, TimeGrid};
pub use residual::{adjoint_apply, ResidualReport};
pub use solve::{
    phi1, phi2, SolveOptions, SolveStats, SplitMode, Stencil, Storage, DENSE_LIMIT, LAZY_STRIDE,
};

use solve::Sweeper;

#[derive(Clone, Debug)]
enum HStorage {
    /// Row-major `(n_t + 1) x (n_z + 1)`.
    Dense(Vec<f64>),
    /// Rows `0, S, 2S, ...` and the last row; others are re-swept on demand.
    Lazy(Vec<Vec<f64>>),
}

#[derive(Clone, Debug)]
pub struct WeightTable {
    pub time: TimeGrid,
    pub lag: LagGrid,
    pub stats: SolveStats,
    g: Vec<f64>,
    hcol: Vec<f64>,
    h: HStorage,
    phi: Vec<f64>,
    h_st: Stencil,
    g_st: Stencil,
    beta: f64,
    mu_y: f64,
    discount: f64,
    phi_is_zero: bool,
    config: ModelConfig,
}

/// `solve_weights_with` using the default tolerance and iteration cap.
pub fn solve_weights(model: &Model, tg: TimeGrid, lg: LagGrid) -> Result<WeightTable> {
    solve_weights_with(model, tg, lg, &SolveOptions::default())
}

/// Fixed point of the discretised integral operator, iterated from zero.
pub fn solve_weights_with(
    model: &Model,
    tg: TimeGrid,
    lg: LagGrid,
    opts: &SolveOptions,
) -> Result<WeightTable> {
    check_aligned(&tg, &lg)?;
    let inc = model.income();
    if (tg.t_end - inc.tau_r).abs() > 1e-9 * inc.tau_r {
        return Err(Error::GridMismatch(format!(
            "time grid ends at {} but tau_R = {}",
            tg.t_end, inc.tau_r
        )));
    }
    if !lg.same_as(&LagGrid::new(inc.d, lg.n_z)?) {
        return Err(Error::GridMismatch(format!(
            "lag grid spans {} but d = {}",
            lg.d, inc.d
        )));
    }
    let phi = inc.phi.nodes(inc.d, lg.n_z);
    let phi_is_zero = phi.iter().all(|&v| v == 0.0);
    let discount = model.discount();
    let beta = model.derived.beta;
    let h_st = Stencil::new(discount, tg.dt);
    let g_st = Stencil::new(beta, tg.dt);
    let sw = Sweeper {
        phi: &phi,
        h_st,
        g_st,
        n_z: lg.n_z,
    };
    let (g, hcol, stats) = solve::solve(&sw, tg.n_t, phi_is_zero, opts)?;

    let entries = (tg.n_t + 1) * (lg.n_z + 1);
    let dense = match opts.storage {
        solve::Storage::Dense => true,
        solve::Storage::Lazy => false,
        solve::Storage::Auto => entries <= DENSE_LIMIT,
    };
    let width = lg.n_z + 1;
    let h = if phi_is_zero {
        HStorage::Lazy(Vec::new())
    } else if dense {
        let mut table = vec![0.0; entries];
        sw.transport(&g, None, |i, row| {
            table[i * width..(i + 1) * width].copy_from_slice(row);
        });
        HStorage::Dense(table)
    } else {
        let n_ck = tg.n_t / LAZY_STRIDE + 1;
        let mut ck = vec![Vec::new(); n_ck];
        sw.transport(&g, None, |i, row| {
            if i % LAZY_STRIDE == 0 {
                ck[i / LAZY_STRIDE] = row.to_vec();
            }
        });
        HStorage::Lazy(ck)
    };

    Ok(WeightTable {
        time: tg,
        lag: lg,
        stats,
        g,
        hcol,
        h,
        phi,
        h_st,
        g_st,
        beta,
        mu_y: inc.mu_y,
        discount,
        phi_is_zero,
        config: model.config.clone(),
    })
}

impl WeightTable {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn mu_y(&self) -> f64 {
        self.mu_y
    }

    /// `r + delta`.
    pub fn discount(&self) -> f64 {
        self.discount
    }

    pub fn tau_r(&self) -> f64 {
        self.time.t_end
    }

    pub fn phi_is_zero(&self) -> bool {
        self.phi_is_zero
    }

    /// Kernel values on the lag grid, as used by the solver.
    pub fn phi_nodes(&self) -> &[f64] {
        &self.phi
    }

    pub fn g_nodes(&self) -> &[f64] {
        &self.g
    }

    /// `h(t_i, 0)` for every time node.
    pub fn h_at_zero_lag(&self) -> &[f64] {
        &self.hcol
    }

    pub fn is_dense(&self) -> bool {
        matches!(self.h, HStorage::Dense(_))
    }

    fn sweeper(&self) -> Sweeper<'_> {
        Sweeper {
            phi: &self.phi,
            h_st: self.h_st,
            g_st: self.g_st,
            n_z: self.lag.n_z,
        }
    }

    /// Row `h(t_i, .)` on the lag grid; zero for `i >= n_t`.
    pub fn h_row(&self, i: usize) -> Cow<'_, [f64]> {
        let width = self.lag.n_z + 1;
        if i >= self.time.n_t || self.phi_is_zero {
            return Cow::Owned(vec![0.0; width]);
        }
        match &self.h {
            HStorage::Dense(t) => Cow::Borrowed(&t[i * width..(i + 1) * width]),
            HStorage::Lazy(ck) => {
                let c = i.div_ceil(LAZY_STRIDE) * LAZY_STRIDE;
                let (top, c) = if c >= self.time.n_t {
                    (None, self.time.n_t)
                } else {
                    (Some(ck[c / LAZY_STRIDE].as_slice()), c)
                };
                if c == i {
                    return Cow::Owned(top.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; width]));
                }
                let mut out = Vec::new();
                self.sweeper().transport(&self.g[i..=c], top, |k, row| {
                    if k == 0 {
                        out = row.to_vec();
                    }
                });
                Cow::Owned(out)
            }
        }
    }

    pub fn h_node(&self, i: usize, j: usize) -> f64 {
        if i >= self.time.n_t || self.phi_is_zero {
            return 0.0;
        }
        match &self.h {
            HStorage::Dense(t) => t[i * (self.lag.n_z + 1) + j],
            HStorage::Lazy(_) => self.h_row(i)[j],
        }
    }

    /// Index and weight for linear interpolation in time; `None` past `tau_R`.
    fn locate(&self, t: f64) -> Option<(usize, f64)> {
        if t >= self.tau_r() {
            return None;
        }
        let x = (t.max(0.0) / self.time.dt).min(self.time.n_t as f64);
        let i = (x.floor() as usize).min(self.time.n_t - 1);
        Some((i, x - i as f64))
    }

    /// Linear interpolation of `g`; exactly zero for `t >= tau_R`. Negative
    /// `t` is clamped to 0.
    pub fn eval_g(&self, t: f64) -> f64 {
        match self.locate(t) {
            None => 0.0,
            Some((i, s)) if s == 0.0 => self.g[i],
            Some((i, s)) => (1.0 - s) * self.g[i] + s * self.g[i + 1],
        }
    }

    /// Bilinear interpolation of `h`; exactly zero for `t >= tau_R`.
    pub fn eval_h(&self, t: f64, zeta: f64) -> Result<f64> {
        let d = self.lag.d;
        if !(zeta >= -d - 1e-12 * d && zeta <= 0.0) {
            return Err(Error::OutOfRange {
                what: "zeta",
                value: zeta,
                lo: -d,
                hi: 0.0,
            });
        }
        let Some((i, s)) = self.locate(t) else {
            return Ok(0.0);
        };
        let x = ((zeta + d) / self.lag.dz).clamp(0.0, self.lag.n_z as f64);
        let j = (x.floor() as usize).min(self.lag.n_z - 1);
        let u = x - j as f64;
        let at = |i: usize| (1.0 - u) * self.h_node(i, j) + u * self.h_node(i, j + 1);
        Ok(if s == 0.0 {
            at(i)
        } else {
            (1.0 - s) * at(i) + s * at(i + 1)
        })
    }

    /// Closed-form no-delay annuity `(1 - e^{-beta (tau_R - t)^+}) / beta`.
    pub fn g1(&self, t: f64) -> f64 {
        annuity_factor(self.beta, (self.tau_r() - t).max(0.0))
    }

    /// `(g1, g2)` with `g1` in closed form and `g2` the interpolated nodal
    /// remainder `g - g1` (exactly zero for a zero kernel).
    pub fn decompose_g(&self, t: f64) -> (f64, f64) {
        let g1 = self.g1(t);
        if self.phi_is_zero {
            return (g1, 0.0);
        }
        let g2 = match self.locate(t) {
            None => 0.0,
            Some((i, s)) => {
                let node = |k: usize| self.g[k] - self.g1(self.time.t(k));
                if s == 0.0 {
                    node(i)
                } else {
                    (1.0 - s) * node(i) + s * node(i + 1)
                }
            }
        };
        (g1, g2)
    }

    fn check_hist(&self, hist: &HistoryBuffer) -> Result<()> {
        if hist.lag_grid().same_as(&self.lag) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "history has {} lag steps over {}, table has {} over {}",
                hist.lag_grid().n_z,
                hist.lag_grid().d,
                self.lag.n_z,
                self.lag.d
            )))
        }
    }

    /// `<h(t_i, .), x>` by trapezoid, with `y_now` standing in at lag zero.
    fn pair_row(&self, row: &[f64], y_now: f64, hist: &HistoryBuffer) -> f64 {
        let n = self.lag.n_z;
        let s = hist.dot_nodes(row) - 0.5 * row[0] * hist.node(0) - row[n] * hist.node(n)
            + 0.5 * row[n] * y_now;
        s * self.lag.dz
    }

    /// `<h(t, .), x>` with linear interpolation between time rows.
    pub fn history_value(&self, t: f64, y_now: f64, hist: &HistoryBuffer) -> Result<f64> {
        self.check_hist(hist)?;
        let Some((i, s)) = self.locate(t) else {
            return Ok(0.0);
        };
        if self.phi_is_zero {
            return Ok(0.0);
        }
        let a = self.pair_row(&self.h_row(i), y_now, hist);
        if s == 0.0 {
            return Ok(a);
        }
        let b = self.pair_row(&self.h_row(i + 1), y_now, hist);
        Ok((1.0 - s) * a + s * b)
    }

    /// Human capital `g(t) y_now + <h(t, .), x>`; zero from `tau_R` on.
    pub fn human_capital(&self, t: f64, y_now: f64, hist: &HistoryBuffer) -> Result<f64> {
        let hv = self.history_value(t, y_now, hist)?;
        Ok(self.eval_g(t) * y_now + hv)
    }

    /// Human capital at time node `i`, without interpolation or grid checks.
    pub fn human_capital_at_step(&self, i: usize, y_now: f64, hist: &HistoryBuffer) -> f64 {
        if i >= self.time.n_t {
            return 0.0;
        }
        let hv = if self.phi_is_zero {
            0.0
        } else {
            self.pair_row(&self.h_row(i), y_now, hist)
        };
        self.g[i] * y_now + hv
    }

    /// Sup-norm change from applying the integral operator once more.
    pub fn operator_defect(&self) -> f64 {
        let sw = self.sweeper();
        let mut g_new = vec![0.0; self.g.len()];
        sw.annuity(&self.hcol, &mut g_new);
        let mut defect = g_new
            .iter()
            .zip(&self.g)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if !self.phi_is_zero {
            let width = self.lag.n_z + 1;
            let mut rows = Vec::with_capacity(self.time.n_t);
            sw.transport(&self.g, None, |i, row| rows.push((i, row.to_vec())));
            for (i, row) in rows {
                let cur = self.h_row(i);
                for j in 0..width {
                    defect = defect.max((row[j] - cur[j]).abs());
                }
            }
        }
        defect
    }

    /// `t, g, g1, g2` on the time grid, preceded by `#` comment lines.
    pub fn write_g_csv<W: Write>(&self, out: W, comments: &[String]) -> Result<()> {
        let mut out = out;
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "g", "g1", "g2"])?;
        for i in 0..=self.time.n_t {
            let t = self.time.t(i);
            let (g1, g2) = self.decompose_g(t);
            let g = if i == self.time.n_t { 0.0 } else { self.g[i] };
            w.write_record([t.to_string(), g.to_string(), g1.to_string(), g2.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Long-format `t, zeta, h`, keeping every `stride`-th node in each
    /// direction (the lag endpoints are always kept).
    pub fn write_h_csv<W: Write>(&self, out: W, comments: &[String], stride: usize) -> Result<()> {
        let stride = stride.max(1);
        let mut out = out;
        for c in comments {
            writeln!(out, "# {c}")?;
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["t", "zeta", "h"])?;
        let n_z = self.lag.n_z;
        let mut times: Vec<usize> = (0..=self.time.n_t).step_by(stride).collect();
        if times.last() != Some(&self.time.n_t) {
            times.push(self.time.n_t);
        }
        let mut lags: Vec<usize> = (0..=n_z).step_by(stride).collect();
        if lags.last() != Some(&n_z) {
            lags.push(n_z);
        }
        for &i in &times {
            let row = self.h_row(i);
            let t = self.time.t(i).to_string();
            for &j in &lags {
                w.write_record([t.clone(), self.lag.zeta(j).to_string(), row[j].to_string()])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Lag-grid integral of `h(t_i, .)`; handy for diagnostics.
    pub fn h_row_integral(&self, i: usize) -> f64 {
        trapezoid(&self.h_row(i), self.lag.dz)
    }
}

/// `(1 - e^{-beta s}) / beta`, with the limit `s` at `beta = 0`.
pub fn annuity_factor(beta: f64, s: f64) -> f64 {
    if s <= 0.0 {
        0.0
    } else if beta == 0.0 {
        s
    } else {
        -(-beta * s).exp_m1() / beta
    }
}
