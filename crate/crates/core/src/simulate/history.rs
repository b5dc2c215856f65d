use crate::error::{Error, Result};
use crate::weights::LagGrid;

/// Income over the trailing window `[t - d, t]` on the lag grid.
///
/// Node `j` holds `y(t + zeta_j)`; node `n_z` is the current income. With
/// `dt = dz` one push shifts every node by exactly one lag step.
#[derive(Clone, Debug, PartialEq)]
pub struct HistoryBuffer {
    lag: LagGrid,
    values: Vec<f64>,
    /// Slot of the current income.
    head: usize,
    sum: f64,
    pushes: usize,
}

impl HistoryBuffer {
    /// `nodes[j]` is the income at lag `zeta_j`, oldest first.
    pub fn new(lag: LagGrid, nodes: Vec<f64>) -> Result<Self> {
        if nodes.len() != lag.n_z + 1 {
            return Err(Error::GridMismatch(format!(
                "history has {} values, lag grid needs {}",
                nodes.len(),
                lag.n_z + 1
            )));
        }
        let sum = nodes.iter().sum();
        let head = lag.n_z;
        Ok(HistoryBuffer {
            lag,
            values: nodes,
            head,
            sum,
            pushes: 0,
        })
    }

    pub fn flat(lag: LagGrid, level: f64) -> Self {
        Self::new(lag, vec![level; lag.n_z + 1]).expect("length matches by construction")
    }

    pub fn from_fn(lag: LagGrid, f: impl Fn(f64) -> f64) -> Self {
        let nodes = (0..=lag.n_z).map(|j| f(lag.zeta(j))).collect();
        Self::new(lag, nodes).expect("length matches by construction")
    }

    pub fn lag_grid(&self) -> &LagGrid {
        &self.lag
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    fn slot(&self, j: usize) -> usize {
        let len = self.values.len();
        (self.head + 1 + j) % len
    }

    /// Value at lag node `zeta_j`.
    pub fn node(&self, j: usize) -> f64 {
        self.values[self.slot(j)]
    }

    /// Value recorded `k` steps ago (`k = 0` is the current income).
    pub fn lag(&self, k: usize) -> f64 {
        self.node(self.lag.n_z - k)
    }

    pub fn current(&self) -> f64 {
        self.values[self.head]
    }

    /// Overwrites the current income.
    pub fn set_current(&mut self, y: f64) {
        self.sum += y - self.values[self.head];
        self.values[self.head] = y;
    }

    /// Appends a new current value, dropping the oldest.
    pub fn push(&mut self, y: f64) {
        let len = self.values.len();
        self.head = (self.head + 1) % len;
        self.sum += y - self.values[self.head];
        self.values[self.head] = y;
        self.pushes += 1;
        if self.pushes % len == 0 {
            self.sum = self.values.iter().sum();
        }
    }

    /// Nodes oldest first.
    pub fn nodes(&self) -> Vec<f64> {
        (0..self.values.len()).map(|j| self.node(j)).collect()
    }

    /// `sum_j w_j x(zeta_j)`.
    pub fn dot_nodes(&self, w: &[f64]) -> f64 {
        // Oldest values sit after the head slot, newest up to and including it.
        let (newer, older) = self.values.split_at(self.head + 1);
        let (w_old, w_new) = w[..self.values.len()].split_at(older.len());
        dot(w_old, older) + dot(w_new, newer)
    }

    /// Trapezoid rule for `int phi(zeta) x(zeta) dzeta` with kernel nodes `phi`.
    pub fn trapezoid_sum(&self, phi: &[f64]) -> f64 {
        let n = self.lag.n_z;
        let inner = self.dot_nodes(phi);
        self.lag.dz * (inner - 0.5 * (phi[0] * self.node(0) + phi[n] * self.node(n)))
    }

    /// Trapezoid integral of the history itself, in O(1).
    pub fn integral(&self) -> f64 {
        let n = self.lag.n_z;
        self.lag.dz * (self.sum - 0.5 * (self.node(0) + self.node(n)))
    }
}

/// Dot product with independent partial sums so the loop vectorises.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [0.0f64; 8];
    let mut ca = a.chunks_exact(8);
    let mut cb = b.chunks_exact(8);
    for (x, y) in ca.by_ref().zip(cb.by_ref()) {
        let x: &[f64; 8] = x.try_into().expect("chunk of 8");
        let y: &[f64; 8] = y.try_into().expect("chunk of 8");
        for k in 0..8 {
            acc[k] += x[k] * y[k];
        }
    }
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    acc.iter().sum::<f64>() + tail
}
