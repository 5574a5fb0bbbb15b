//! Deterministic second-moment oracles: renewal and Volterra equations, chaos
//! terms, simplex integrals, Mittag-Leffler functions and Gronwall checks.

mod chaos;
mod closure;
mod colored;
mod gronwall;
mod renewal;

pub use chaos::{
    chaos_series_bounds, chaos_series_ln, fit_series_constants, simplex_integral,
    simplex_integral_mc, SeriesConstants,
};
pub use closure::{closure_rate, ClosureFit, ClosureKernel};
pub use colored::{
    picard_chaos_terms, volterra_solve_colored, ChaosReport, ChaosTerm, ColoredSolution,
};
pub use gronwall::{gronwall_verify, ln_mittag_leffler, mittag_leffler, GronwallReport};
pub use renewal::renewal_solve_white;

use std::fmt::Write as _;

use crate::error::{invalid, Result};
use crate::grid::Grid1D;

/// Rescaling threshold for growing solutions; values are stored divided by
/// e^{log_scale}.
pub(crate) const RESCALE_AT: f64 = 1e200;

/// E|u_t(x)|² on a time grid at selected nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondMomentField {
    times: Vec<f64>,
    nodes: Vec<usize>,
    x: Vec<f64>,
    values: Vec<Vec<f64>>,
    log_scale: Vec<f64>,
}

impl SecondMomentField {
    pub(crate) fn new(grid: &Grid1D, times: Vec<f64>, nodes: Vec<usize>) -> Self {
        let x = nodes.iter().map(|&k| grid.node(k)).collect();
        SecondMomentField {
            values: Vec::with_capacity(times.len()),
            log_scale: Vec::with_capacity(times.len()),
            times,
            nodes,
            x,
        }
    }

    pub(crate) fn push(&mut self, values: Vec<f64>, log_scale: f64) {
        self.values.push(values);
        self.log_scale.push(log_scale);
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn nodes(&self) -> &[usize] {
        &self.nodes
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    /// Value at time index `ti` and reported-node index `j`; may overflow to
    /// infinity for strongly growing solutions, see [`Self::ln_value`].
    pub fn value(&self, ti: usize, j: usize) -> f64 {
        self.values[ti][j] * self.log_scale[ti].exp()
    }

    pub fn ln_value(&self, ti: usize, j: usize) -> f64 {
        self.values[ti][j].ln() + self.log_scale[ti]
    }

    /// Index of the time closest to `t`.
    pub fn time_index(&self, t: f64) -> usize {
        let mut best = 0;
        for (i, s) in self.times.iter().enumerate() {
            if (s - t).abs() < (self.times[best] - t).abs() {
                best = i;
            }
        }
        best
    }

    /// CSV `t,x,w,second_moment` with x = w on the diagonal.
    pub fn to_csv(&self, every: usize) -> String {
        let mut s = String::from("t,x,w,second_moment\n");
        let every = every.max(1);
        for ti in (0..self.times.len()).filter(|i| i % every == 0 || *i + 1 == self.times.len()) {
            for (j, x) in self.x.iter().enumerate() {
                let _ = writeln!(
                    s,
                    "{},{},{},{:.12e}",
                    self.times[ti],
                    x,
                    x,
                    self.value(ti, j)
                );
            }
        }
        s
    }
}

/// Checks 0 = t_0 < t_1 < ... and returns the step sizes.
pub(crate) fn grid_steps(t_grid: &[f64]) -> Result<Vec<f64>> {
    if t_grid.len() < 2 || t_grid[0] != 0.0 {
        return invalid("time grid must start at 0 and contain at least two points");
    }
    let steps: Vec<f64> = t_grid.windows(2).map(|w| w[1] - w[0]).collect();
    if steps.iter().any(|d| !(*d > 0.0 && d.is_finite())) {
        return invalid("time grid must be strictly increasing and finite");
    }
    Ok(steps)
}

/// 0, t_end/n, ..., t_end.
pub fn uniform_time_grid(t_end: f64, n_steps: usize) -> Vec<f64> {
    (0..=n_steps)
        .map(|i| t_end * i as f64 / n_steps as f64)
        .collect()
}

/// Decay and exact step weights for pair rates s_nm = μ_n + μ_m:
/// e^{-s Δ} and (1 - e^{-s Δ}) / s.
pub(crate) fn pair_weights(
    mu: &[f64],
    dt: f64,
) -> (nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>) {
    let n = mu.len();
    let decay = nalgebra::DMatrix::from_fn(n, n, |a, b| (-(mu[a] + mu[b]) * dt).exp());
    let weight = nalgebra::DMatrix::from_fn(n, n, |a, b| {
        let s = mu[a] + mu[b];
        -(-s * dt).exp_m1() / s
    });
    (decay, weight)
}
