use serde::Serialize;

use crate::error::{Error, Result};

/// Relative tolerance for "this product is an integer" and for `dt == dz`.
const ALIGN_TOL: f64 = 1e-9;

/// Uniform grid `t_i = i dt` on `[0, tau_R]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t_end: f64,
    pub n_t: usize,
    pub dt: f64,
}

impl TimeGrid {
    pub fn new(t_end: f64, n_t: usize) -> Result<Self> {
        if !(t_end > 0.0 && t_end.is_finite()) || n_t == 0 {
            return Err(Error::GridMismatch(format!(
                "time grid needs t_end > 0 and n_t >= 1 (got {t_end}, {n_t})"
            )));
        }
        Ok(TimeGrid {
            t_end,
            n_t,
            dt: t_end / n_t as f64,
        })
    }

    /// Grid with step `dt`, which must divide `t_end`.
    pub fn with_step(t_end: f64, dt: f64) -> Result<Self> {
        let n = whole_steps(t_end, dt)
            .ok_or_else(|| Error::GridMismatch(format!("dt = {dt} does not divide tau_R = {t_end}")))?;
        Self::new(t_end, n)
    }

    pub fn t(&self, i: usize) -> f64 {
        if i == self.n_t {
            self.t_end
        } else {
            i as f64 * self.dt
        }
    }
}

/// Uniform lag grid `zeta_j = -d + j dz`, `j = 0..=n_z`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LagGrid {
    pub d: f64,
    pub n_z: usize,
    pub dz: f64,
}

impl LagGrid {
    pub fn new(d: f64, n_z: usize) -> Result<Self> {
        if !(d > 0.0 && d.is_finite()) || n_z == 0 {
            return Err(Error::GridMismatch(format!(
                "lag grid needs d > 0 and n_z >= 1 (got {d}, {n_z})"
            )));
        }
        Ok(LagGrid {
            d,
            n_z,
            dz: d / n_z as f64,
        })
    }

    pub fn with_step(d: f64, dz: f64) -> Result<Self> {
        let n = whole_steps(d, dz)
            .ok_or_else(|| Error::GridMismatch(format!("dz = {dz} does not divide d = {d}")))?;
        Self::new(d, n)
    }

    pub fn zeta(&self, j: usize) -> f64 {
        if j == self.n_z {
            0.0
        } else {
            -self.d + j as f64 * self.dz
        }
    }

    pub fn len(&self) -> usize {
        self.n_z + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn same_as(&self, other: &LagGrid) -> bool {
        self.n_z == other.n_z && close(self.d, other.d)
    }
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= ALIGN_TOL * a.abs().max(b.abs()).max(1e-300)
}

fn whole_steps(len: f64, step: f64) -> Option<usize> {
    if !(step > 0.0 && len > 0.0) {
        return None;
    }
    let n = (len / step).round();
    if n >= 1.0 && close(n * step, len) {
        Some(n as usize)
    } else {
        None
    }
}

/// Checks that the time and lag grids share a step.
pub fn check_aligned(tg: &TimeGrid, lg: &LagGrid) -> Result<()> {
    if close(tg.dt, lg.dz) {
        Ok(())
    } else {
        Err(Error::GridMismatch(format!(
            "dt = {} and dz = {} must be equal",
            tg.dt, lg.dz
        )))
    }
}

/// Aligned grids with `dt = dz = 1/m` for the smallest `m >= steps_per_year`
/// making both `tau_R m` and `d m` whole numbers.
pub fn aligned_grids(tau_r: f64, d: f64, steps_per_year: usize) -> Result<(TimeGrid, LagGrid)> {
    let start = steps_per_year.max(1);
    for m in start..start.saturating_mul(64) {
        let step = 1.0 / m as f64;
        if let (Some(n_t), Some(n_z)) = (whole_steps(tau_r, step), whole_steps(d, step)) {
            let tg = TimeGrid::new(tau_r, n_t)?;
            let lg = LagGrid::new(d, n_z)?;
            return Ok((tg, lg));
        }
    }
    Err(Error::GridMismatch(format!(
        "no common step near 1/{steps_per_year} divides both tau_R = {tau_r} and d = {d}"
    )))
}
