//! Space-independent closure of the second-moment equation at the centre of
//! [-1, 1] for α = 2 and u_0 ≡ 1:
//! g(t) = h0(t, 0)² + λ² ∫_0^t K(t - s) g(s) ds,
//! K(τ) = ∫∫ p(τ, 0, y) p(τ, 0, z) f(y - z) dy dz.
//! K ~ A τ^{-γ} at the origin, so the growth rate of g behaves like
//! (λ² A Γ(1 - γ))^{1/(1 - γ)} for large λ.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::Grid1D;
use crate::noise::riesz_cell_average;
use crate::numerics::{erfc, fit_line, gamma, gauss_legendre};
use crate::spectral::{exact_basis_interval, exact_eigenvalue};

/// Kernel switch points between image sums and eigen series.
const IMAGE_LIMIT: f64 = 0.5;
const RIESZ_FREE_LIMIT: f64 = 0.01;
const RIESZ_CELLS: usize = 1024;
const RIESZ_MODES: usize = 61;
const N_STEPS: usize = 2000;

#[derive(Debug, Clone, PartialEq)]
pub enum ClosureKernel {
    White,
    Riesz {
        beta: f64,
        /// Σ over odd mode pairs: (μ_n + μ_m, Φ_n(0)Φ_m(0)F_nm)
        pairs: Vec<(f64, f64)>,
    },
}

impl ClosureKernel {
    pub fn white() -> Self {
        ClosureKernel::White
    }

    /// Riesz kernel |y - z|^{-β}; builds the mode-pair table once.
    pub fn riesz(beta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta < 1.0) {
            return invalid(format!("Riesz exponent must lie in (0, 1), got {beta}"));
        }
        let grid = Grid1D::new(RIESZ_CELLS)?;
        let basis = exact_basis_interval(RIESZ_MODES, &grid)?;
        let h = grid.h();
        let row: Vec<f64> = (0..RIESZ_CELLS)
            .map(|m| riesz_cell_average(beta, h, m))
            .collect();
        let odd: Vec<usize> = (0..RIESZ_MODES).step_by(2).collect();
        let phi = basis.phi();
        // M Φ_nᵀ for odd n
        let mphi: Vec<Vec<f64>> = odd
            .iter()
            .map(|&n| {
                (0..RIESZ_CELLS)
                    .map(|i| {
                        (0..RIESZ_CELLS)
                            .map(|j| row[i.abs_diff(j)] * phi[(n, j)])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        let mut pairs = Vec::with_capacity(odd.len() * odd.len());
        for &n in &odd {
            for (b, &m) in odd.iter().enumerate() {
                let f: f64 = (0..RIESZ_CELLS)
                    .map(|i| phi[(n, i)] * mphi[b][i])
                    .sum::<f64>()
                    * h
                    * h;
                let sign = centre_value(n + 1) * centre_value(m + 1);
                pairs.push((exact_eigenvalue(n + 1) + exact_eigenvalue(m + 1), sign * f));
            }
        }
        Ok(ClosureKernel::Riesz { beta, pairs })
    }

    /// γ with K(τ) ~ A τ^{-γ}.
    pub fn gamma(&self) -> f64 {
        match self {
            ClosureKernel::White => 0.5,
            ClosureKernel::Riesz { beta, .. } => beta / 2.0,
        }
    }

    pub fn prefactor(&self) -> f64 {
        match self {
            ClosureKernel::White => (8.0 * PI).powf(-0.5),
            ClosureKernel::Riesz { beta, .. } => {
                8f64.powf(-beta / 2.0) * gamma((1.0 - beta) / 2.0) / PI.sqrt()
            }
        }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        match self {
            ClosureKernel::White => {
                if tau < IMAGE_LIMIT {
                    let mut s = 0.0;
                    for k in -6i32..=6 {
                        let d = 2.0 * k as f64;
                        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                        s += sign * (-d * d / (8.0 * tau)).exp();
                    }
                    s / (8.0 * PI * tau).sqrt()
                } else {
                    (1..200)
                        .step_by(2)
                        .map(|n| (-2.0 * exact_eigenvalue(n) * tau).exp())
                        .sum()
                }
            }
            ClosureKernel::Riesz { beta, pairs } => {
                if tau < RIESZ_FREE_LIMIT {
                    self.prefactor() * tau.powf(-beta / 2.0)
                } else {
                    pairs.iter().map(|(s, c)| c * (-s * tau).exp()).sum()
                }
            }
        }
    }
}

/// Φ_n(0) = sin(nπ/2).
fn centre_value(n: usize) -> f64 {
    match n % 4 {
        1 => 1.0,
        3 => -1.0,
        _ => 0.0,
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// h0(t, 0) for u_0 ≡ 1.
pub(crate) fn survival_at_centre(t: f64) -> f64 {
    if t <= 0.0 {
        return 1.0;
    }
    if t < IMAGE_LIMIT {
        let sd = (2.0 * t).sqrt();
        let mut s = 0.0;
        for k in -6i32..=6 {
            let c = 2.0 * k as f64;
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            s += sign * (normal_cdf((1.0 - c) / sd) - normal_cdf((-1.0 - c) / sd));
        }
        s
    } else {
        (1..200)
            .step_by(2)
            .map(|n| (-exact_eigenvalue(n) * t).exp() * 4.0 / (n as f64 * PI) * centre_value(n))
            .sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ClosureFit {
    pub lambda: f64,
    /// growth rate of g
    pub rate: f64,
    /// (rate + 2μ_1) / 2
    pub lambda_part: f64,
    pub horizon: f64,
    pub r0: f64,
}

/// ∫_a^b K with 8-point Gauss-Legendre; the cell touching 0 uses v = s^{1-γ}.
fn cell_integrals(kernel: &ClosureKernel, dt: f64, n: usize) -> Vec<f64> {
    let (xs, ws) = gauss_legendre(8);
    let (xs16, ws16) = gauss_legendre(16);
    let gam = kernel.gamma();
    let mut out = Vec::with_capacity(n);
    // first cell: ∫_0^Δ K(s) ds = ∫_0^{Δ^{1-γ}} K(s) s^γ / (1-γ) dv
    let vmax = dt.powf(1.0 - gam);
    let mut first = 0.0;
    for (x, w) in xs16.iter().zip(&ws16) {
        let v = 0.5 * vmax * (x + 1.0);
        let s = v.powf(1.0 / (1.0 - gam));
        first += w * 0.5 * vmax * kernel.eval(s) * s.powf(gam) / (1.0 - gam);
    }
    out.push(first);
    for m in 1..n {
        let (a, b) = (m as f64 * dt, (m + 1) as f64 * dt);
        let (mid, r) = (0.5 * (a + b), 0.5 * (b - a));
        out.push(
            xs.iter()
                .zip(&ws)
                .map(|(x, w)| w * r * kernel.eval(mid + r * x))
                .sum(),
        );
    }
    out
}

/// Solves the closure equation on [0, T], T = 25 / max(r_0, 2μ_1), and fits the
/// exponential rate of g on [T/2, T].
pub fn closure_rate(kernel: &ClosureKernel, lambda: f64) -> Result<ClosureFit> {
    if !(lambda > 0.0 && lambda.is_finite()) {
        return invalid(format!("lambda must be positive, got {lambda}"));
    }
    let gam = kernel.gamma();
    let r0 = (lambda * lambda * kernel.prefactor() * gamma(1.0 - gam)).powf(1.0 / (1.0 - gam));
    let mu1 = exact_eigenvalue(1);
    let horizon = 25.0 / r0.max(2.0 * mu1);
    let dt = horizon / N_STEPS as f64;
    let omega = cell_integrals(kernel, dt, N_STEPS);
    let l2 = lambda * lambda;
    let diag = 1.0 - l2 * omega[0];
    if diag <= 0.0 {
        return Err(Error::InvalidGrid(format!(
            "closure step {dt} too coarse for λ = {lambda}"
        )));
    }
    let mut g = vec![0.0; N_STEPS + 1];
    g[0] = 1.0;
    for i in 1..=N_STEPS {
        let f = survival_at_centre(i as f64 * dt).powi(2);
        let hist: f64 = (1..i).map(|j| omega[i - j] * g[j]).sum();
        g[i] = (f + l2 * hist) / diag;
        if !(g[i].is_finite() && g[i] > 0.0) {
            return Err(Error::NumericFailure(format!(
                "closure solution degenerate at step {i}"
            )));
        }
    }
    let idx: Vec<usize> = (N_STEPS / 2..=N_STEPS).collect();
    let ts: Vec<f64> = idx.iter().map(|&i| i as f64 * dt).collect();
    let ls: Vec<f64> = idx.iter().map(|&i| g[i].ln()).collect();
    let rate = fit_line(&ts, &ls)?.slope;
    Ok(ClosureFit {
        lambda,
        rate,
        lambda_part: (rate + 2.0 * mu1) / 2.0,
        horizon,
        r0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Root of λ² tanh(πa/2)/(2πa) = 1, r = a²π²/2.
    fn white_root(lambda: f64) -> f64 {
        let f = |a: f64| lambda * lambda * (PI * a / 2.0).tanh() / (2.0 * PI * a) - 1.0;
        let (mut lo, mut hi) = (1e-9, 1e6);
        for _ in 0..200 {
            let m = 0.5 * (lo + hi);
            if f(m) > 0.0 {
                lo = m;
            } else {
                hi = m;
            }
        }
        lo * lo * PI * PI / 2.0
    }

    #[test]
    fn survival_branches_agree() {
        for t in [0.3f64, 0.5, 0.7] {
            let sd = (2.0 * t).sqrt();
            let img: f64 = (-6i32..=6)
                .map(|k| {
                    let c = 2.0 * k as f64;
                    let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                    sign * (normal_cdf((1.0 - c) / sd) - normal_cdf((-1.0 - c) / sd))
                })
                .sum();
            // statrs erfc is good to about 1e-10
            assert!(
                (img - survival_at_centre(t)).abs() < 1e-9,
                "{t}: {img} vs {}",
                survival_at_centre(t)
            );
        }
        assert!((survival_at_centre(1e-4) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn white_kernel_branches_agree() {
        let k = ClosureKernel::White;
        let eig: f64 = (1..200)
            .step_by(2)
            .map(|n| (-2.0 * exact_eigenvalue(n) * 0.3).exp())
            .sum();
        assert!((k.eval(0.3) - eig).abs() < 1e-12);
        assert!((k.eval(1e-4) * (1e-4f64).sqrt() - k.prefactor()).abs() < 1e-10);
    }

    #[test]
    fn riesz_kernel_branches_agree() {
        let k = ClosureKernel::riesz(0.5).unwrap();
        // just either side of the switch
        let (a, b) = (k.eval(0.0099999), k.eval(0.0100001));
        assert!(((a - b) / a).abs() < 1e-3, "{a} vs {b}");
    }

    #[test]
    fn white_rate_matches_exact_root() {
        for lambda in [4.0, 8.0] {
            let fit = closure_rate(&ClosureKernel::White, lambda).unwrap();
            let exact = white_root(lambda);
            assert!(
                ((fit.rate - exact) / exact).abs() < 0.02,
                "{lambda}: {} vs {exact}",
                fit.rate
            );
        }
    }

    #[test]
    fn white_root_large_lambda() {
        let r = white_root(30.0);
        assert!((r / (30f64.powi(4) / 8.0) - 1.0).abs() < 1e-3);
    }
}
