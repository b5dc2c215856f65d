//! Finite-difference residuals of the differential form of the weight system.

use std::fmt;

use serde::Serialize;

use super::{LagGrid, WeightTable};
use crate::error::{Error, Result};
use crate::params::Model;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualReport {
    pub dt: f64,
    pub dz: f64,
    /// max |g' - beta g + h(., 0) + 1| over the time nodes before `tau_R`.
    pub ode_max: f64,
    /// max |-(r + delta) h + h_t - h_zeta + g phi| over the grid before `tau_R`.
    pub pde_max: f64,
    /// Second-order backward difference of `g` at `tau_R`.
    pub g_prime_left: f64,
    /// `g` vanishes past `tau_R`.
    pub g_prime_right: f64,
    pub jump: f64,
}

impl fmt::Display for ResidualReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "dt = {:e}", self.dt)?;
        writeln!(f, "dz = {:e}", self.dz)?;
        writeln!(f, "ode_residual_max = {:.6e}", self.ode_max)?;
        writeln!(f, "pde_residual_max = {:.6e}", self.pde_max)?;
        writeln!(f, "g_prime_left_limit = {:.9}", self.g_prime_left)?;
        writeln!(f, "g_prime_right_limit = {:.9}", self.g_prime_right)?;
        writeln!(f, "jump = {:.9}", self.jump)
    }
}

/// First derivative on a uniform grid: central inside, one-sided first order
/// at the two ends.
fn derivative(v: &[f64], k: usize, step: f64) -> f64 {
    let n = v.len() - 1;
    if k == 0 {
        (v[1] - v[0]) / step
    } else if k == n {
        (v[n] - v[n - 1]) / step
    } else {
        (v[k + 1] - v[k - 1]) / (2.0 * step)
    }
}

impl WeightTable {
    pub fn residual_check(&self) -> ResidualReport {
        let n_t = self.time.n_t;
        let n_z = self.lag.n_z;
        let dt = self.time.dt;
        let dz = self.lag.dz;
        let a = self.discount();
        let beta = self.beta();
        let g = self.g_nodes();
        let phi = self.phi_nodes();

        // g[n_t] = 0 is the left limit value at tau_R, so the sweep below
        // differences across the whole closed interval.
        let mut ode_max = 0.0f64;
        for i in 0..n_t {
            let gp = derivative(g, i, dt);
            let r = gp - beta * g[i] + self.h_node(i, n_z) + 1.0;
            ode_max = ode_max.max(r.abs());
        }

        let mut pde_max = 0.0f64;
        if !self.phi_is_zero() {
            let mut prev = self.h_row(0).into_owned();
            let mut cur = self.h_row(0).into_owned();
            let mut next = self.h_row(1).into_owned();
            for i in 0..n_t {
                if i > 0 {
                    std::mem::swap(&mut prev, &mut cur);
                    std::mem::swap(&mut cur, &mut next);
                    next = self.h_row(i + 1).into_owned();
                }
                for j in 0..=n_z {
                    let ht = if i == 0 {
                        (next[j] - cur[j]) / dt
                    } else {
                        (next[j] - prev[j]) / (2.0 * dt)
                    };
                    let hz = derivative(&cur, j, dz);
                    let r = -a * cur[j] + ht - hz + g[i] * phi[j];
                    pde_max = pde_max.max(r.abs());
                }
            }
        }

        let g_prime_left = if n_t >= 2 {
            (3.0 * g[n_t] - 4.0 * g[n_t - 1] + g[n_t - 2]) / (2.0 * dt)
        } else {
            (g[n_t] - g[n_t - 1]) / dt
        };
        let g_prime_right = 0.0;
        ResidualReport {
            dt,
            dz,
            ode_max,
            pde_max,
            g_prime_left,
            g_prime_right,
            jump: g_prime_right - g_prime_left,
        }
    }
}

/// `A*(z0, z1) = (mu_y z0 + z1(0), -z1' + z0 phi)` on the lag grid.
///
/// `z1'` uses central differences inside and second-order one-sided
/// differences at the ends.
pub fn adjoint_apply(model: &Model, lag: &LagGrid, z0: f64, z1: &[f64]) -> Result<(f64, Vec<f64>)> {
    let n = lag.n_z;
    if z1.len() != n + 1 {
        return Err(Error::GridMismatch(format!(
            "z1 has {} values, lag grid has {}",
            z1.len(),
            n + 1
        )));
    }
    let scale = z1.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let tolerance = 1e-9 * scale;
    if z1[0].abs() > tolerance {
        return Err(Error::BoundaryViolation {
            value: z1[0].abs(),
            tolerance,
        });
    }
    let inc = model.income();
    let phi = inc.phi.nodes(inc.d, n);
    let h = lag.dz;
    let dz1 = |j: usize| -> f64 {
        if n < 2 {
            return (z1[1] - z1[0]) / h;
        }
        match j {
            0 => (-3.0 * z1[0] + 4.0 * z1[1] - z1[2]) / (2.0 * h),
            j if j == n => (3.0 * z1[n] - 4.0 * z1[n - 1] + z1[n - 2]) / (2.0 * h),
            j => (z1[j + 1] - z1[j - 1]) / (2.0 * h),
        }
    };
    let first = inc.mu_y * z0 + z1[n];
    let second = (0..=n).map(|j| -dz1(j) + z0 * phi[j]).collect();
    Ok((first, second))
}
