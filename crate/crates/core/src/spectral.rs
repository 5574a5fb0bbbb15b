//! Eigenpairs of the Dirichlet Laplacian and of the restricted fractional
//! Laplacian on D = (-1, 1), with discrete-L2 normalization on a [`Grid1D`].
//!
//! The eigenproblem is `-(-Δ)^{α/2} Φ_n = -μ_n Φ_n` in D with `Φ_n = 0` on the
//! complement. For α = 2 the pairs are known in closed form; for 1 < α < 2 they
//! come from a dense symmetric eigensolve of the quadrature matrix built by
//! [`fractional_laplacian_matrix`].

use std::f64::consts::PI;
use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Grid1D;
use crate::numerics::{fit_line, gamma};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Exact,
    Numeric,
}

/// Eigenvalues `mu` (ascending) and eigenfunctions sampled on grid nodes.
#[derive(Debug, Clone)]
pub struct SpectralBasis {
    alpha: f64,
    mu: Vec<f64>,
    /// Row `n` holds Φ_{n+1} on the grid nodes.
    phi: DMatrix<f64>,
    grid: Grid1D,
    provenance: Provenance,
}

/// μ_n = (nπ/2)^2 for the Dirichlet Laplacian on (-1, 1), n >= 1.
pub fn exact_eigenvalue(n: usize) -> f64 {
    let k = n as f64 * PI / 2.0;
    k * k
}

/// Φ_n(x) = sin(nπ(x+1)/2), which vanishes at x = ±1.
pub fn exact_eigenfunction(n: usize, x: f64) -> f64 {
    (n as f64 * PI * (x + 1.0) / 2.0).sin()
}

/// Closed-form eigenpairs for α = 2.
pub fn exact_basis_interval(n_modes: usize, grid: &Grid1D) -> Result<SpectralBasis> {
    if n_modes == 0 {
        return invalid("n_modes must be at least 1");
    }
    if n_modes >= grid.n_cells() {
        return invalid(format!(
            "exact basis needs n_modes < n_cells ({} >= {})",
            n_modes,
            grid.n_cells()
        ));
    }
    let phi = DMatrix::from_fn(n_modes, grid.n_cells(), |n, k| {
        exact_eigenfunction(n + 1, grid.node(k))
    });
    Ok(SpectralBasis {
        alpha: 2.0,
        mu: (1..=n_modes).map(exact_eigenvalue).collect(),
        phi,
        grid: grid.clone(),
        provenance: Provenance::Exact,
    })
}

/// Normalization constant of the 1-D fractional Laplacian,
/// C(α) = α 2^{α-1} Γ((α+1)/2) / (√π Γ(1 - α/2)).
pub fn fractional_constant(alpha: f64) -> f64 {
    alpha * 2f64.powf(alpha - 1.0) * gamma((alpha + 1.0) / 2.0)
        / (PI.sqrt() * gamma(1.0 - alpha / 2.0))
}

/// Matrix `A` of the restricted fractional Laplacian, `A u ≈ -(-Δ)^{α/2} u`,
/// with u = 0 outside (-1, 1).
///
/// The singular integral is split at |z| = h. Inside, the second difference
/// stands in for u''; outside, u is interpolated linearly between nodes of the
/// infinite extension of the grid (zero beyond the domain) and integrated
/// exactly against |z|^{-1-α}. The result is symmetric Toeplitz and its row sums
/// are minus the exterior killing weight.
pub fn fractional_laplacian_matrix(grid: &Grid1D, alpha: f64) -> Result<DMatrix<f64>> {
    if !(alpha > 1.0 && alpha < 2.0) {
        return invalid(format!("alpha = {alpha} outside (1, 2)"));
    }
    let n = grid.n_cells();
    let h = grid.h();
    let c = fractional_constant(alpha);
    let i0 = |lo: f64, hi: f64| (lo.powf(-alpha) - hi.powf(-alpha)) / alpha;
    let i1 = |lo: f64, hi: f64| (lo.powf(1.0 - alpha) - hi.powf(1.0 - alpha)) / (alpha - 1.0);

    // far-field weights W_j, j = 1..n-1, for the node at offset j
    let mut w = vec![0.0; n.max(2)];
    for j in 1..n.max(2) {
        let (lo, hi) = (j as f64 * h, (j + 1) as f64 * h);
        let left = ((j + 1) as f64 * h * i0(lo, hi) - i1(lo, hi)) / h;
        w[j] += left;
        if j + 1 < w.len() {
            w[j + 1] += (i1(lo, hi) - j as f64 * h * i0(lo, hi)) / h;
        }
    }
    let near = h.powf(-alpha) / (2.0 - alpha);
    let diag = c * h.powf(-alpha) * (2.0 / (2.0 - alpha) + 2.0 / alpha);
    let mut first_col = vec![0.0; n];
    first_col[0] = -diag;
    for j in 1..n {
        let off = w[j] + if j == 1 { near } else { 0.0 };
        first_col[j] = c * off;
    }
    Ok(DMatrix::from_fn(n, n, |i, k| first_col[i.abs_diff(k)]))
}

/// Dirichlet second-difference matrix on the midpoint grid (α = 2 numeric path).
/// Ghost values beyond ±1 are the negated boundary values, so the boundary
/// itself carries u = 0.
pub fn second_difference_matrix(grid: &Grid1D) -> DMatrix<f64> {
    let n = grid.n_cells();
    let inv_h2 = 1.0 / (grid.h() * grid.h());
    let mut a = DMatrix::zeros(n, n);
    for i in 0..n {
        a[(i, i)] = -2.0 * inv_h2;
        if i > 0 {
            a[(i, i - 1)] = inv_h2;
        }
        if i + 1 < n {
            a[(i, i + 1)] = inv_h2;
        }
    }
    a[(0, 0)] -= inv_h2;
    a[(n - 1, n - 1)] -= inv_h2;
    a
}

/// Lowest `n_modes` eigenpairs of `-matrix`, normalized in discrete L2.
pub fn numeric_basis(
    matrix: &DMatrix<f64>,
    n_modes: usize,
    grid: &Grid1D,
    alpha: f64,
) -> Result<SpectralBasis> {
    let n = grid.n_cells();
    if matrix.nrows() != n || matrix.ncols() != n {
        return invalid("matrix size does not match the grid");
    }
    if n_modes == 0 || n_modes > n {
        return invalid(format!("n_modes = {n_modes} outside 1..={n}"));
    }
    if !(alpha > 1.0 && alpha <= 2.0) {
        return invalid(format!("alpha = {alpha} outside (1, 2]"));
    }
    let scale = matrix.amax().max(f64::MIN_POSITIVE);
    let asym = (matrix - matrix.transpose()).amax();
    if asym > 1e-12 * scale {
        return invalid(format!("matrix not symmetric (max asymmetry {asym:e})"));
    }
    let eig = SymmetricEigen::try_new(-matrix.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::NumericFailure("symmetric eigensolver did not converge".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));

    let inv_sqrt_h = 1.0 / grid.h().sqrt();
    let mut phi = DMatrix::zeros(n_modes, n);
    let mut mu = Vec::with_capacity(n_modes);
    for (row, &col) in order.iter().take(n_modes).enumerate() {
        let v = eig.eigenvectors.column(col);
        let sign = if row == 0 {
            v.sum().signum()
        } else {
            let tol = 1e-8 * v.amax();
            v.iter().find(|x| x.abs() > tol).map_or(1.0, |x| x.signum())
        };
        for k in 0..n {
            phi[(row, k)] = sign * v[k] * inv_sqrt_h;
        }
        mu.push(eig.eigenvalues[col]);
    }
    if mu[0] <= 0.0 {
        return Err(Error::InvariantViolation(format!(
            "first eigenvalue {} is not positive",
            mu[0]
        )));
    }
    Ok(SpectralBasis {
        alpha,
        mu,
        phi,
        grid: grid.clone(),
        provenance: Provenance::Numeric,
    })
}

impl SpectralBasis {
    /// Spatial dimension; numerics are one-dimensional.
    pub fn d(&self) -> usize {
        1
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn n_modes(&self) -> usize {
        self.mu.len()
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn mu1(&self) -> f64 {
        self.mu[0]
    }

    pub fn phi(&self) -> &DMatrix<f64> {
        &self.phi
    }

    /// Φ_{n+1} at node k (0-based mode index).
    pub fn value(&self, n: usize, k: usize) -> f64 {
        self.phi[(n, k)]
    }

    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    /// A copy keeping only the first `n` modes.
    pub fn truncated(&self, n: usize) -> Result<SpectralBasis> {
        if n == 0 || n > self.n_modes() {
            return invalid(format!("cannot truncate to {n} modes"));
        }
        Ok(SpectralBasis {
            alpha: self.alpha,
            mu: self.mu[..n].to_vec(),
            phi: self.phi.rows(0, n).into_owned(),
            grid: self.grid.clone(),
            provenance: self.provenance,
        })
    }

    /// max_{n,m} |h Σ_k Φ_n Φ_m - δ_nm|.
    pub fn orthonormality_residual(&self) -> f64 {
        let gram = &self.phi * self.phi.transpose() * self.grid.h();
        let id = DMatrix::<f64>::identity(self.n_modes(), self.n_modes());
        (gram - id).amax()
    }

    /// Coefficients a_n = h Σ_k Φ_n(x_k) u_k.
    pub fn project(&self, values: &[f64]) -> DVector<f64> {
        let u = DVector::from_column_slice(values);
        &self.phi * u * self.grid.h()
    }

    /// Grid values Σ_n a_n Φ_n(x_k).
    pub fn synthesize(&self, coeffs: &DVector<f64>) -> Vec<f64> {
        (self.phi.transpose() * coeffs).as_slice().to_vec()
    }

    /// max_n ‖Φ_n‖_∞² over the available modes.
    pub fn max_sup_norm_sq(&self) -> f64 {
        let m = self.phi.amax();
        m * m
    }

    /// CSV export with header `n,mu,phi_at_node_0,...`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("n,mu");
        for k in 0..self.grid.n_cells() {
            let _ = write!(s, ",phi_at_node_{k}");
        }
        s.push('\n');
        for n in 0..self.n_modes() {
            let _ = write!(s, "{},{:.17e}", n + 1, self.mu[n]);
            for k in 0..self.grid.n_cells() {
                let _ = write!(s, ",{:.17e}", self.phi[(n, k)]);
            }
            s.push('\n');
        }
        s
    }
}

/// Power-law fit of the eigenvalue sequence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GrowthFit {
    pub exponent: f64,
    pub c_low: f64,
    pub c_high: f64,
    pub n_lo: usize,
    pub n_hi: usize,
}

/// Slope of log μ_n against log n over n in [4, 0.8 N], plus the extreme values
/// of μ_n / n^{α/d} on that window.
pub fn check_eigenvalue_growth(basis: &SpectralBasis) -> Result<GrowthFit> {
    let nm = basis.n_modes();
    if nm < 16 {
        return invalid(format!("growth check needs at least 16 modes, got {nm}"));
    }
    let n_lo = 4;
    let n_hi = (nm as f64 * 0.8).floor() as usize;
    let power = basis.alpha() / basis.d() as f64;
    let (mut xs, mut ys) = (Vec::new(), Vec::new());
    let (mut c_low, mut c_high) = (f64::INFINITY, 0.0f64);
    for n in n_lo..=n_hi {
        let mu = basis.mu()[n - 1];
        xs.push((n as f64).ln());
        ys.push(mu.ln());
        let ratio = mu / (n as f64).powf(power);
        c_low = c_low.min(ratio);
        c_high = c_high.max(ratio);
    }
    let fit = fit_line(&xs, &ys)?;
    Ok(GrowthFit {
        exponent: fit.slope,
        c_low,
        c_high,
        n_lo,
        n_hi,
    })
}

/// Smallest c with c^{-1}(1-|x|)^{α/2} <= Φ_1(x) <= c(1-|x|)^{α/2} on the nodes.
pub fn check_first_eigenfunction_bound(basis: &SpectralBasis) -> Result<f64> {
    let grid = basis.grid();
    let half_alpha = basis.alpha() / 2.0;
    let mut c_fit = 1.0f64;
    for k in 0..grid.n_cells() {
        let phi1 = basis.value(0, k);
        if phi1 <= 0.0 {
            return Err(Error::InvariantViolation(format!(
                "Φ_1 = {phi1} at interior node {k}"
            )));
        }
        let weight = grid.boundary_distance(k).powf(half_alpha);
        c_fit = c_fit.max(phi1 / weight).max(weight / phi1);
    }
    Ok(c_fit)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Grid1D {
        Grid1D::new(n).unwrap()
    }

    #[test]
    fn exact_eigenvalues_match_closed_form() {
        let b = exact_basis_interval(5, &grid(33)).unwrap();
        assert!((b.mu()[0] - 2.4674011002723395).abs() < 1e-12);
        assert!((b.mu()[2] - 22.206609902451056).abs() < 1e-12);
        assert_eq!(b.provenance(), Provenance::Exact);
        // node 16 is x = 0
        assert!((b.value(0, 16) - 1.0).abs() < 1e-15);
        assert!(b.value(0, 0) < 0.05 && b.value(0, 0) > 0.0);
    }

    #[test]
    fn exact_basis_rejects_bad_mode_counts() {
        assert!(exact_basis_interval(0, &grid(8)).is_err());
        assert!(exact_basis_interval(8, &grid(8)).is_err());
    }

    #[test]
    fn exact_basis_is_discretely_orthonormal() {
        for n in [16, 33, 64] {
            let b = exact_basis_interval(n - 1, &grid(n)).unwrap();
            assert!(b.orthonormality_residual() < 1e-10, "n = {n}");
        }
    }

    #[test]
    fn fractional_matrix_symmetric_with_positive_killing() {
        let g = grid(64);
        for alpha in [1.2, 1.5, 1.8] {
            let a = fractional_laplacian_matrix(&g, alpha).unwrap();
            assert_eq!((&a - a.transpose()).amax(), 0.0);
            let ones = DVector::from_element(64, 1.0);
            let killing = -(&a * ones);
            assert!(killing.iter().all(|&v| v > 0.0), "alpha = {alpha}");
        }
    }

    #[test]
    fn fractional_matrix_rejects_alpha_outside_open_interval() {
        let g = grid(16);
        for alpha in [1.0, 2.0, 0.5, 2.5] {
            assert!(fractional_laplacian_matrix(&g, alpha).is_err());
        }
    }

    #[test]
    fn center_diagonal_monotone_in_alpha() {
        let g = grid(256);
        let k = g.nearest_node(0.0);
        let d: Vec<f64> = [1.2, 1.5, 1.8]
            .iter()
            .map(|&a| -fractional_laplacian_matrix(&g, a).unwrap()[(k, k)])
            .collect();
        assert!(d[0] < d[1] && d[1] < d[2], "{d:?}");
    }

    #[test]
    fn alpha_near_two_is_consistent_with_laplacian() {
        let g = grid(256);
        let a = fractional_laplacian_matrix(&g, 1.99).unwrap();
        let b = numeric_basis(&a, 4, &g, 1.99).unwrap();
        let exact = exact_eigenvalue(1);
        assert!((b.mu1() - exact).abs() / exact < 0.10, "mu1 = {}", b.mu1());
    }

    #[test]
    fn second_difference_path_matches_exact() {
        let g = grid(512);
        let b = numeric_basis(&second_difference_matrix(&g), 8, &g, 2.0).unwrap();
        let exact = exact_eigenvalue(1);
        assert!((b.mu1() - exact).abs() / exact < 5e-3);
        assert!(b.orthonormality_residual() < 1e-10);
        // same eigenvectors as the closed form
        let e = exact_basis_interval(8, &g).unwrap();
        assert!((b.phi() - e.phi()).amax() < 1e-8);
    }

    #[test]
    fn second_difference_converges_at_second_order() {
        let errs: Vec<Vec<f64>> = [64, 128, 256]
            .iter()
            .map(|&n| {
                let g = grid(n);
                let b = numeric_basis(&second_difference_matrix(&g), 8, &g, 2.0).unwrap();
                (0..8)
                    .map(|m| (b.mu()[m] - exact_eigenvalue(m + 1)).abs())
                    .collect()
            })
            .collect();
        for m in 0..8 {
            for w in errs.windows(2) {
                let order = (w[0][m] / w[1][m]).log2();
                assert!((1.7..=2.3).contains(&order), "mode {} order {order}", m + 1);
            }
        }
    }

    #[test]
    fn numeric_fractional_basis_properties() {
        let g = grid(256);
        let b = numeric_basis(&fractional_laplacian_matrix(&g, 1.5).unwrap(), 64, &g, 1.5).unwrap();
        assert!(b.orthonormality_residual() < 1e-6);
        assert!(b.mu().windows(2).all(|w| w[0] <= w[1]));
        assert!((b.mu()[1] - b.mu()[0]) / b.mu()[0] > 0.1);
        let n = g.n_cells();
        for k in 0..n {
            assert!(b.value(0, k) > 0.0);
            assert!((b.value(0, k) - b.value(0, n - 1 - k)).abs() < 1e-8);
        }
        // reference constant of the discretization
        assert!((b.mu1() - 1.5975).abs() < 0.01, "mu1 = {}", b.mu1());
    }

    #[test]
    fn numeric_basis_rejects_asymmetric_matrix() {
        let g = grid(4);
        let mut a = second_difference_matrix(&g);
        a[(0, 1)] += 1.0;
        assert!(matches!(
            numeric_basis(&a, 2, &g, 2.0),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn growth_fit_exact_basis() {
        let b = exact_basis_interval(32, &grid(64)).unwrap();
        let f = check_eigenvalue_growth(&b).unwrap();
        assert!((f.exponent - 2.0).abs() < 1e-12);
        let c = exact_eigenvalue(1);
        assert!((f.c_low - c).abs() < 1e-12 && (f.c_high - c).abs() < 1e-12);
        assert!(check_eigenvalue_growth(&b.truncated(8).unwrap()).is_err());
    }

    #[test]
    fn growth_fit_fractional_bases() {
        let g = grid(512);
        for alpha in [1.2, 1.5] {
            let a = fractional_laplacian_matrix(&g, alpha).unwrap();
            let b = numeric_basis(&a, 128, &g, alpha).unwrap();
            let f = check_eigenvalue_growth(&b).unwrap();
            assert!((f.exponent - alpha).abs() / alpha < 0.05, "{alpha}: {f:?}");
            assert!(f.c_high / f.c_low < 10.0 && f.c_low > 0.0);
        }
    }

    #[test]
    fn first_eigenfunction_bound() {
        let b = exact_basis_interval(4, &grid(129)).unwrap();
        let c = check_first_eigenfunction_bound(&b).unwrap();
        assert!(c <= PI, "c_fit = {c}");
        let g = grid(256);
        let nb = numeric_basis(&fractional_laplacian_matrix(&g, 1.5).unwrap(), 4, &g, 1.5).unwrap();
        let c = check_first_eigenfunction_bound(&nb).unwrap();
        assert!(c.is_finite() && c < 10.0);
    }

    #[test]
    fn csv_export_header() {
        let b = exact_basis_interval(2, &grid(3)).unwrap();
        let csv = b.to_csv();
        let mut lines = csv.lines();
        assert_eq!(
            lines.next().unwrap(),
            "n,mu,phi_at_node_0,phi_at_node_1,phi_at_node_2"
        );
        assert_eq!(csv.lines().count(), 3);
    }

    #[test]
    fn project_synthesize_roundtrip_in_span() {
        let b = exact_basis_interval(10, &grid(21)).unwrap();
        let coeffs = DVector::from_fn(10, |i, _| 1.0 / (i + 1) as f64);
        let vals = b.synthesize(&coeffs);
        let back = b.project(&vals);
        assert!((back - coeffs).amax() < 1e-12);
    }
}
