//! Delay kernel `phi` weighting past income over the window `[-d, 0]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lag spacing used to size a bump whose width is left unspecified when the
/// kernel is evaluated off-grid. On a grid the default is four lag cells.
pub const DEFAULT_LAG_STEP: f64 = 1.0 / 250.0;

/// Number of grid cells spanned by the half-width of a default bump.
pub const DEFAULT_BUMP_CELLS: f64 = 4.0;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DelayKernel {
    #[default]
    Zero,
    Constant {
        level: f64,
    },
    /// Piecewise-linear kernel through `(zeta, phi)` knots, `zeta` increasing.
    Samples {
        zeta: Vec<f64>,
        phi: Vec<f64>,
    },
    /// Triangular bump of half-width `width` centred at `center`, scaled to
    /// integrate to `mass`. Approximates a point mass on a grid.
    Bump {
        center: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        width: Option<f64>,
        mass: f64,
    },
}

impl DelayKernel {
    /// Kernel sampled uniformly on `[-d, 0]` (first value at `-d`, last at `0`).
    pub fn uniform_samples(d: f64, values: Vec<f64>) -> Result<Self> {
        if values.len() < 2 {
            return Err(Error::invalid("phi", "need at least two samples"));
        }
        let n = values.len() - 1;
        let zeta = (0..=n).map(|j| -d + d * j as f64 / n as f64).collect();
        Ok(DelayKernel::Samples { zeta, phi: values })
    }

    pub fn is_zero(&self) -> bool {
        match self {
            DelayKernel::Zero => true,
            DelayKernel::Constant { level } => *level == 0.0,
            DelayKernel::Samples { phi, .. } => phi.iter().all(|&v| v == 0.0),
            DelayKernel::Bump { mass, .. } => *mass == 0.0,
        }
    }

    /// `Some(level)` when the kernel is constant on `[-d, 0]` (zero included).
    pub fn constant_level(&self) -> Option<f64> {
        match self {
            DelayKernel::Zero => Some(0.0),
            DelayKernel::Constant { level } => Some(*level),
            _ if self.is_zero() => Some(0.0),
            _ => None,
        }
    }

    pub fn is_nonnegative(&self) -> bool {
        match self {
            DelayKernel::Zero => true,
            DelayKernel::Constant { level } => *level >= 0.0,
            DelayKernel::Samples { phi, .. } => phi.iter().all(|&v| v >= 0.0),
            DelayKernel::Bump { mass, .. } => *mass >= 0.0,
        }
    }

    pub fn validate(&self, d: f64) -> Result<()> {
        match self {
            DelayKernel::Zero => {}
            DelayKernel::Constant { level } => {
                if !level.is_finite() {
                    return Err(Error::invalid("phi", "constant level must be finite"));
                }
            }
            DelayKernel::Samples { zeta, phi } => {
                if zeta.len() != phi.len() || zeta.len() < 2 {
                    return Err(Error::invalid(
                        "phi",
                        "samples need matching zeta/phi arrays of length >= 2",
                    ));
                }
                if zeta.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::invalid("phi", "sample abscissae must be increasing"));
                }
                let tol = 1e-9 * d.max(1.0);
                if zeta[0] > -d + tol || *zeta.last().unwrap() < -tol {
                    return Err(Error::invalid(
                        "phi",
                        format!("samples must cover [-{d}, 0]"),
                    ));
                }
                if phi.iter().any(|v| !v.is_finite()) {
                    return Err(Error::invalid("phi", "samples must be finite"));
                }
            }
            DelayKernel::Bump {
                center,
                width,
                mass,
            } => {
                if !(*center >= -d && *center <= 0.0) {
                    return Err(Error::invalid("phi", "bump centre must lie in [-d, 0]"));
                }
                if let Some(w) = width {
                    if !(*w > 0.0 && w.is_finite()) {
                        return Err(Error::invalid("phi", "bump width must be positive"));
                    }
                }
                if !mass.is_finite() {
                    return Err(Error::invalid("phi", "bump mass must be finite"));
                }
            }
        }
        let norm = self.l2_norm(d);
        if !norm.is_finite() {
            return Err(Error::invalid("phi", "kernel is not square integrable"));
        }
        Ok(())
    }

    /// Value at `zeta`. Samples are held constant past their end knots.
    pub fn eval(&self, zeta: f64) -> f64 {
        self.eval_with_width(zeta, DEFAULT_BUMP_CELLS * DEFAULT_LAG_STEP)
    }

    fn eval_with_width(&self, zeta: f64, default_width: f64) -> f64 {
        match self {
            DelayKernel::Zero => 0.0,
            DelayKernel::Constant { level } => *level,
            DelayKernel::Samples { zeta: z, phi } => interpolate(z, phi, zeta),
            DelayKernel::Bump {
                center,
                width,
                mass,
            } => {
                let w = width.unwrap_or(default_width);
                let x = (zeta - center).abs() / w;
                if x >= 1.0 {
                    0.0
                } else {
                    mass / w * (1.0 - x)
                }
            }
        }
    }

    /// Kernel values at the lag nodes `-d + j dz`, `j = 0..=n_z`.
    ///
    /// A bump is renormalised so that its trapezoid integral on this grid
    /// equals `mass` exactly; an unspecified width becomes four cells.
    pub fn nodes(&self, d: f64, n_z: usize) -> Vec<f64> {
        let dz = d / n_z as f64;
        let default_width = DEFAULT_BUMP_CELLS * dz;
        let mut out: Vec<f64> = (0..=n_z)
            .map(|j| {
                let zeta = if j == n_z { 0.0 } else { -d + j as f64 * dz };
                self.eval_with_width(zeta, default_width)
            })
            .collect();
        if let DelayKernel::Bump { mass, .. } = self {
            let integral = trapezoid(&out, dz);
            if integral != 0.0 {
                let scale = mass / integral;
                out.iter_mut().for_each(|v| *v *= scale);
            }
        }
        out
    }

    /// L2 norm on `[-d, 0]` by composite trapezoid on a fine grid.
    pub fn l2_norm(&self, d: f64) -> f64 {
        let n = 8192;
        let sq: Vec<f64> = self.nodes(d, n).into_iter().map(|v| v * v).collect();
        trapezoid(&sq, d / n as f64).sqrt()
    }
}

fn interpolate(z: &[f64], v: &[f64], x: f64) -> f64 {
    if x <= z[0] {
        return v[0];
    }
    let last = z.len() - 1;
    if x >= z[last] {
        return v[last];
    }
    let k = z.partition_point(|&zi| zi <= x) - 1;
    let s = (x - z[k]) / (z[k + 1] - z[k]);
    v[k] + s * (v[k + 1] - v[k])
}

pub(crate) fn trapezoid(values: &[f64], h: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            h * (inner + 0.5 * (values[0] + values[n - 1]))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn zero_kernel_is_zero_everywhere() {
        let k = DelayKernel::Zero;
        for j in 0..=10 {
            assert_eq!(k.eval(-5.0 + 0.5 * j as f64), 0.0);
        }
        assert!(k.nodes(5.0, 20).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bump_preserves_mass_on_grid() {
        let k = DelayKernel::Bump {
            center: -1.0,
            width: None,
            mass: 0.3,
        };
        for n_z in [250usize, 333, 1000] {
            let nodes = k.nodes(5.0, n_z);
            assert_relative_eq!(trapezoid(&nodes, 5.0 / n_z as f64), 0.3, max_relative = 1e-12);
        }
    }

    #[test]
    fn bump_off_grid_integrates_to_mass() {
        let k = DelayKernel::Bump {
            center: -2.5,
            width: Some(0.1),
            mass: 2.0,
        };
        // Exact on the fine grid because the hat's kinks land on nodes.
        let n = 5000;
        let vals: Vec<f64> = (0..=n).map(|j| k.eval(-5.0 + 5.0 * j as f64 / n as f64)).collect();
        assert_relative_eq!(trapezoid(&vals, 5.0 / n as f64), 2.0, max_relative = 1e-9);
    }

    #[test]
    fn samples_interpolate_linearly() {
        let k = DelayKernel::uniform_samples(2.0, vec![0.0, 1.0, 3.0]).unwrap();
        assert_eq!(k.eval(-2.0), 0.0);
        assert_eq!(k.eval(-1.5), 0.5);
        assert_eq!(k.eval(-0.5), 2.0);
        assert_eq!(k.eval(0.0), 3.0);
        k.validate(2.0).unwrap();
    }

    #[test]
    fn samples_must_cover_window() {
        let k = DelayKernel::Samples {
            zeta: vec![-1.0, 0.0],
            phi: vec![1.0, 1.0],
        };
        assert!(k.validate(2.0).is_err());
    }

    #[test]
    fn constant_l2_norm() {
        let k = DelayKernel::Constant { level: 0.5 };
        assert_relative_eq!(k.l2_norm(4.0), 0.5 * 2.0, max_relative = 1e-12);
    }
}
