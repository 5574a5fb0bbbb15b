use crate::error::{invalid, Result};

/// Uniform midpoint grid on D = (-1, 1).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid1D {
    n_cells: usize,
    h: f64,
    nodes: Vec<f64>,
}

impl Grid1D {
    pub fn new(n_cells: usize) -> Result<Self> {
        if n_cells == 0 {
            return invalid("grid needs at least one cell");
        }
        let h = 2.0 / n_cells as f64;
        // Built from both ends so that x_k = -x_{n-1-k} holds bit-exactly.
        let nodes = (0..n_cells)
            .map(|k| {
                let from_left = (2 * k + 1) as f64;
                let from_right = (2 * (n_cells - 1 - k) + 1) as f64;
                0.5 * (from_left - from_right) / n_cells as f64
            })
            .collect();
        Ok(Self { n_cells, h, nodes })
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    /// Cell width 2 / n_cells.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    /// Index of the node closest to `x` (ties resolve to the lower index).
    pub fn nearest_node(&self, x: f64) -> usize {
        let k = ((x + 1.0) / self.h - 0.5).round();
        k.clamp(0.0, (self.n_cells - 1) as f64) as usize
    }

    /// Whether node `k` lies in D_eps = {|y| <= 1 - eps}.
    pub fn in_shrunk(&self, k: usize, eps: f64) -> bool {
        self.nodes[k].abs() <= 1.0 - eps
    }

    /// Node indices in D_eps.
    pub fn shrunk_nodes(&self, eps: f64) -> Vec<usize> {
        (0..self.n_cells)
            .filter(|&k| self.in_shrunk(k, eps))
            .collect()
    }

    /// Distance from node `k` to the boundary, 1 - |x_k|.
    pub fn boundary_distance(&self, k: usize) -> f64 {
        1.0 - self.nodes[k].abs()
    }
}

/// Region of integration used by the kernel functionals.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Region {
    Full,
    /// D_eps = {|y| <= 1 - eps}, eps in (0, 1/2).
    Shrunk(f64),
}

impl Region {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Region::Full => Ok(()),
            Region::Shrunk(eps) if eps > 0.0 && eps < 0.5 => Ok(()),
            Region::Shrunk(eps) => invalid(format!("eps = {eps} outside (0, 1/2)")),
        }
    }

    pub fn contains(&self, grid: &Grid1D, k: usize) -> bool {
        match *self {
            Region::Full => true,
            Region::Shrunk(eps) => grid.in_shrunk(k, eps),
        }
    }

    pub fn nodes(&self, grid: &Grid1D) -> Vec<usize> {
        (0..grid.n_cells())
            .filter(|&k| self.contains(grid, k))
            .collect()
    }
}
