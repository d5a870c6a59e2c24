//! Wealth grids on `[x_low, x_max]`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest number of cells accepted by [`Grid::new`].
pub const MIN_CELLS: usize = 100;

/// Fraction of the cells placed on the quadratic map near `x_low` by
/// [`Spacing::SqrtBoundary`].
pub const CLUSTER_FRACTION: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Spacing {
    #[default]
    Uniform,
    /// Quadratic node map `x_low + L (k/N)^2` on the first tenth of the nodes,
    /// uniform beyond. Resolves the square-root layer of low-income saving.
    SqrtBoundary,
}

#[derive(Debug, Clone, Serialize)]
pub struct Grid {
    pub x_low: f64,
    pub x_max: f64,
    pub spacing: Spacing,
    /// `N + 1` nodes.
    pub nodes: Vec<f64>,
    /// Number of quadratically placed cells (0 for uniform grids).
    k_switch: usize,
    /// Spacing of the uniform part.
    h_tail: f64,
}

impl Grid {
    /// A grid with `n` cells (`n + 1` nodes).
    pub fn new(x_low: f64, x_max: f64, n: usize, spacing: Spacing) -> Result<Self> {
        if !x_low.is_finite() || !x_max.is_finite() || x_max <= x_low {
            return Err(Error::BadGrid(format!("need x_low < x_max, got [{x_low}, {x_max}]")));
        }
        if n < MIN_CELLS {
            return Err(Error::BadGrid(format!("need at least {MIN_CELLS} cells, got {n}")));
        }
        let len = x_max - x_low;
        let k_switch = match spacing {
            Spacing::Uniform => 0,
            Spacing::SqrtBoundary => ((n as f64) * CLUSTER_FRACTION).round() as usize,
        };
        let x_switch = x_low + len * (k_switch as f64 / n as f64).powi(2);
        let h_tail = (x_max - x_switch) / (n - k_switch) as f64;
        let mut nodes = Vec::with_capacity(n + 1);
        for k in 0..=n {
            let x = if k <= k_switch {
                x_low + len * (k as f64 / n as f64).powi(2)
            } else {
                x_switch + h_tail * (k - k_switch) as f64
            };
            nodes.push(x);
        }
        nodes[n] = x_max;
        Ok(Grid { x_low, x_max, spacing, nodes, k_switch, h_tail })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of cells.
    pub fn cells(&self) -> usize {
        self.nodes.len() - 1
    }

    /// Distance to the right neighbour of node `i` (`i < N`).
    #[inline]
    pub fn h_plus(&self, i: usize) -> f64 {
        self.nodes[i + 1] - self.nodes[i]
    }

    /// Distance to the left neighbour of node `i` (`i > 0`).
    #[inline]
    pub fn h_minus(&self, i: usize) -> f64 {
        self.nodes[i] - self.nodes[i - 1]
    }

    /// Width of the dual cell of node `i` (half cells at both ends).
    pub fn dual_width(&self, i: usize) -> f64 {
        let n = self.cells();
        let left = if i > 0 { 0.5 * self.h_minus(i) } else { 0.0 };
        let right = if i < n { 0.5 * self.h_plus(i) } else { 0.0 };
        left + right
    }

    pub fn min_spacing(&self) -> f64 {
        self.nodes.windows(2).map(|w| w[1] - w[0]).fold(f64::INFINITY, f64::min)
    }

    /// Index `i` of the cell `[x_i, x_{i+1}]` containing `x`, in O(1).
    /// Points outside the grid map to the first or last cell.
    #[inline]
    pub fn locate(&self, x: f64) -> usize {
        let n = self.cells();
        if x <= self.x_low {
            return 0;
        }
        if x >= self.x_max {
            return n - 1;
        }
        let x_switch = self.nodes[self.k_switch];
        let guess = if x < x_switch {
            let u = (x - self.x_low) / (self.x_max - self.x_low);
            (n as f64 * u.sqrt()) as usize
        } else {
            self.k_switch + ((x - x_switch) / self.h_tail) as usize
        };
        let mut i = guess.min(n - 1);
        // Round-off can put the guess one cell off.
        while i > 0 && self.nodes[i] > x {
            i -= 1;
        }
        while i + 1 < n && self.nodes[i + 1] <= x {
            i += 1;
        }
        i
    }

    /// Piecewise-linear interpolation of nodal values `f` at `x`, constant
    /// beyond either end.
    #[inline]
    pub fn interpolate(&self, f: &[f64], x: f64) -> f64 {
        if x <= self.x_low {
            return f[0];
        }
        if x >= self.x_max {
            return f[f.len() - 1];
        }
        let i = self.locate(x);
        let t = (x - self.nodes[i]) / (self.nodes[i + 1] - self.nodes[i]);
        f[i] + t * (f[i + 1] - f[i])
    }
}
