//! Picard iteration for `(g, h)` on aligned grids.
//!
//! With `dt = dz` the transport part of the operator is a recursion along
//! characteristics,
//!
//! ```text
//! h[i][j] = w0 g[i] phi[j] + w1 g[i+1] phi[j-1] + e^{-a dt} h[i+1][j-1]
//! ```
//!
//! which is the trapezoid rule for the integral with the exponential factor
//! integrated exactly over each cell. `g` is advanced the same way with rate
//! `beta`. One sweep of either costs `O(n_t n_z)`.

use serde::Serialize;

use crate::error::{Error, Result};

/// Cell weights of the exponentially fitted trapezoid rule:
/// `int_0^dt e^{-a s} p(s) ds = w0 p(0) + w1 p(dt)` for linear `p`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Stencil {
    pub w0: f64,
    pub w1: f64,
    /// `e^{-a dt}`.
    pub decay: f64,
}

impl Stencil {
    pub fn new(rate: f64, dt: f64) -> Self {
        let x = rate * dt;
        let p1 = phi1(x);
        let p2 = phi2(x);
        Stencil {
            w0: dt * (p1 - p2),
            w1: dt * p2,
            decay: (-x).exp(),
        }
    }
}

/// `(1 - e^{-x}) / x`.
pub fn phi1(x: f64) -> f64 {
    if x.abs() < 0.5 {
        series(x, 1)
    } else {
        -(-x).exp_m1() / x
    }
}

/// `(1 - e^{-x}(1 + x)) / x^2`.
pub fn phi2(x: f64) -> f64 {
    if x.abs() < 0.5 {
        series(x, 2)
    } else {
        (1.0 - (-x).exp() * (1.0 + x)) / (x * x)
    }
}

// sum_n (-x)^n / (n! (n + shift))
fn series(x: f64, shift: u32) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0 / shift as f64;
    for n in 1..24u32 {
        term *= -x / n as f64;
        sum += term / (n + shift) as f64;
    }
    sum
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitMode {
    /// Global iteration; split into blocks only if the defect stalls.
    Auto,
    /// Always march backward block by block.
    Always,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Storage {
    /// Dense below [`DENSE_LIMIT`] entries, checkpointed above.
    Auto,
    Dense,
    /// Keep every `LAZY_STRIDE`-th row and rebuild the rest on demand.
    Lazy,
}

/// Largest dense `h` table, in entries (200 MB of `f64`).
pub const DENSE_LIMIT: usize = 25_000_000;

/// Row spacing of the checkpoints kept in lazy storage.
pub const LAZY_STRIDE: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    pub split: SplitMode,
    /// Block length in rows for the split solver; defaults to one delay window.
    pub block_rows: Option<usize>,
    pub storage: Storage,
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions {
            tol: 1e-10,
            max_iter: 10_000,
            split: SplitMode::Auto,
            block_rows: None,
            storage: Storage::Auto,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Sup-norm change over the last iteration.
    pub defect: f64,
    /// Per-iteration defects of the global iteration (and of each block if split).
    pub defect_history: Vec<f64>,
    /// Ratio of the last two defects of the global run, a contraction estimate.
    pub contraction_estimate: Option<f64>,
    pub split: bool,
    pub blocks: usize,
}

/// Everything the sweeps need, borrowed from the table being built.
pub(crate) struct Sweeper<'a> {
    pub phi: &'a [f64],
    pub h_st: Stencil,
    pub g_st: Stencil,
    pub n_z: usize,
}

impl Sweeper<'_> {
    /// Rows `len-2 ..= 0` of `F2(g)` over a local block, where `g[k]`
    /// belongs to local row `k` and the row at local index `len-1` is `top`
    /// (zero when `None`). `visit(k, row)` sees each finished row.
    pub fn transport(&self, g: &[f64], top: Option<&[f64]>, mut visit: impl FnMut(usize, &[f64])) {
        let n_z = self.n_z;
        let mut row = match top {
            Some(r) => r.to_vec(),
            None => vec![0.0; n_z + 1],
        };
        let Stencil { w0, w1, decay } = self.h_st;
        let phi = self.phi;
        for k in (0..g.len() - 1).rev() {
            let a = w0 * g[k];
            let b = w1 * g[k + 1];
            for j in (1..=n_z).rev() {
                row[j] = a * phi[j] + b * phi[j - 1] + decay * row[j - 1];
            }
            row[0] = 0.0;
            visit(k, &row);
        }
    }

    /// Backward sweep for `g` given `h(., 0)` on a local block; `g[len-1]` is
    /// the known value at the block's upper end.
    pub fn annuity(&self, hcol: &[f64], g: &mut [f64]) {
        let Stencil { w0, w1, decay } = self.g_st;
        for k in (0..g.len() - 1).rev() {
            g[k] = decay * g[k + 1] + w0 * (hcol[k] + 1.0) + w1 * (hcol[k + 1] + 1.0);
        }
    }
}

enum BlockEnd {
    Converged { iterations: usize, defect: f64 },
    Stalled { iterations: usize },
}

/// Picard iteration over rows `lo..hi` with everything at rows `>= hi`
/// final. `g` and `hcol` are global arrays of length `n_t + 1`.
#[allow(clippy::too_many_arguments)]
fn picard_block(
    sw: &Sweeper,
    g: &mut [f64],
    hcol: &mut [f64],
    lo: usize,
    hi: usize,
    top: Option<&[f64]>,
    tol: f64,
    max_iter: usize,
    stall_after: Option<usize>,
    history: &mut Vec<f64>,
) -> Result<BlockEnd> {
    let n_z = sw.n_z;
    let len = hi - lo + 1;
    // Local copies; index k is global row lo + k.
    let mut g_cur = vec![0.0; len];
    g_cur[len - 1] = g[hi];
    let mut g_prev = g_cur.clone();
    let mut g_next = g_cur.clone();
    let mut col = vec![0.0; len];
    col[len - 1] = hcol[hi];
    let mut delta = vec![0.0; len];

    let mut best = f64::INFINITY;
    let mut best_iter = 0usize;
    for iter in 0..max_iter {
        // g_{k+1} from h_k(., 0)
        sw.annuity(&col, &mut g_next);
        let mut defect = g_next
            .iter()
            .zip(&g_cur)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        // h_{k+1} - h_k = F2(g_k) - F2(g_{k-1}); the first step carries `top`.
        let mut sup_h = 0.0f64;
        {
            let mut on_row = |k: usize, row: &[f64]| {
                sup_h = row.iter().fold(sup_h, |m, v| m.max(v.abs()));
                col[k] += row[n_z];
            };
            if iter == 0 {
                sw.transport(&g_cur, top, &mut on_row);
            } else {
                for k in 0..len {
                    delta[k] = g_cur[k] - g_prev[k];
                }
                sw.transport(&delta, None, &mut on_row);
            }
        }
        defect = defect.max(sup_h);
        history.push(defect);

        std::mem::swap(&mut g_prev, &mut g_cur);
        std::mem::swap(&mut g_cur, &mut g_next);
        g_next[len - 1] = g[hi];

        if defect <= tol {
            g[lo..=hi].copy_from_slice(&g_cur);
            return Ok(BlockEnd::Converged {
                iterations: iter + 1,
                defect,
            });
        }
        if !defect.is_finite() {
            return Ok(BlockEnd::Stalled {
                iterations: iter + 1,
            });
        }
        if defect < best {
            best = defect;
            best_iter = iter;
        } else if let Some(limit) = stall_after {
            if iter - best_iter >= limit {
                return Ok(BlockEnd::Stalled {
                    iterations: iter + 1,
                });
            }
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        defect: history.last().copied().unwrap_or(f64::INFINITY),
    })
}

/// Solves for `g` and `h(., 0)` on the whole grid.
pub(crate) fn solve(
    sw: &Sweeper,
    n_t: usize,
    phi_is_zero: bool,
    opts: &SolveOptions,
) -> Result<(Vec<f64>, Vec<f64>, SolveStats)> {
    if !(opts.tol > 0.0) || opts.max_iter == 0 {
        return Err(Error::invalid("tol", "need tol > 0 and max_iter >= 1"));
    }
    let mut g = vec![0.0; n_t + 1];
    let mut hcol = vec![0.0; n_t + 1];
    let mut stats = SolveStats::default();

    if phi_is_zero {
        // h vanishes identically; one sweep is the fixed point.
        sw.annuity(&hcol, &mut g);
        stats.iterations = 1;
        stats.defect = 0.0;
        stats.defect_history = vec![0.0];
        return Ok((g, hcol, stats));
    }

    if opts.split == SplitMode::Auto {
        let stall = (opts.max_iter / 2).max(1);
        let mut hist = Vec::new();
        let end = picard_block(
            sw,
            &mut g,
            &mut hcol,
            0,
            n_t,
            None,
            opts.tol,
            opts.max_iter,
            Some(stall),
            &mut hist,
        )?;
        stats.contraction_estimate = match hist.as_slice() {
            [.., a, b] if *a > 0.0 => Some(b / a),
            _ => None,
        };
        stats.defect_history = hist;
        match end {
            BlockEnd::Converged { iterations, defect } => {
                stats.iterations = iterations;
                stats.defect = defect;
                finish_column(sw, &g, &mut hcol, 0, n_t, None);
                return Ok((g, hcol, stats));
            }
            BlockEnd::Stalled { iterations } => {
                stats.iterations = iterations;
                g.iter_mut().for_each(|v| *v = 0.0);
                hcol.iter_mut().for_each(|v| *v = 0.0);
            }
        }
    }

    // Backward march over sub-intervals.
    stats.split = true;
    let block = opts.block_rows.unwrap_or(sw.n_z).clamp(1, n_t);
    let mut hi = n_t;
    let mut top: Option<Vec<f64>> = None;
    let mut worst = 0.0f64;
    while hi > 0 {
        let lo = hi.saturating_sub(block);
        let mut hist = Vec::new();
        let end = picard_block(
            sw,
            &mut g,
            &mut hcol,
            lo,
            hi,
            top.as_deref(),
            opts.tol,
            opts.max_iter,
            None,
            &mut hist,
        )?;
        let BlockEnd::Converged { iterations, defect } = end else {
            unreachable!("blocks run without stall detection")
        };
        stats.iterations += iterations;
        worst = worst.max(defect);
        stats.defect_history.extend(hist);
        stats.blocks += 1;
        top = Some(finish_column(sw, &g, &mut hcol, lo, hi, top.as_deref()));
        hi = lo;
    }
    stats.defect = worst;
    Ok((g, hcol, stats))
}

/// Recomputes `h(., 0) = F2(g)` on rows `lo..hi` from the final `g` and
/// returns the full row at `lo`.
fn finish_column(
    sw: &Sweeper,
    g: &[f64],
    hcol: &mut [f64],
    lo: usize,
    hi: usize,
    top: Option<&[f64]>,
) -> Vec<f64> {
    let mut first = top.map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; sw.n_z + 1]);
    sw.transport(&g[lo..=hi], top, |k, row| {
        hcol[lo + k] = row[sw.n_z];
        if k == 0 {
            first.copy_from_slice(row);
        }
    });
    first
}
