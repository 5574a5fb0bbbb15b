//! Node-pair Volterra equation for M(t, x, w) = E[u_t(x) u_t(w)] with σ(u) = u,
//! M(t) = h0(t) ⊗ h0(t) + λ² ∫_0^t h² P(t-s) (F̄ ∘ M(s)) P(t-s) ds,
//! solved in eigencoordinates A(t) = E[a aᵀ], M = Φᵀ A Φ.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::{grid_steps, pair_weights, SecondMomentField, RESCALE_AT};
use crate::error::{invalid, Error, Result};
use crate::noise::SpatialCovariance;
use crate::spectral::SpectralBasis;

/// Largest grid and mode counts accepted by the node-pair solver.
pub const MAX_CELLS: usize = 128;
pub const MAX_MODES: usize = 48;

struct PairSystem<'a> {
    basis: &'a SpectralBasis,
    fbar: &'a DMatrix<f64>,
    steps: Vec<f64>,
    a0: DVector<f64>,
}

impl<'a> PairSystem<'a> {
    fn new(
        basis: &'a SpectralBasis,
        cov: &'a SpatialCovariance,
        u0: &[f64],
        t_grid: &[f64],
    ) -> Result<Self> {
        let n = basis.grid().n_cells();
        if cov.grid().n_cells() != n {
            return invalid("covariance grid does not match the basis grid");
        }
        if n > MAX_CELLS || basis.n_modes() > MAX_MODES {
            return invalid(format!(
                "node-pair solver limited to {MAX_CELLS} cells and {MAX_MODES} modes"
            ));
        }
        if u0.len() != n {
            return invalid("u0 length does not match the grid");
        }
        Ok(PairSystem {
            basis,
            fbar: cov.matrix(),
            steps: grid_steps(t_grid)?,
            a0: basis.project(u0),
        })
    }

    /// e^{-μt} a0 (e^{-μt} a0)ᵀ.
    fn free(&self, t: f64) -> DMatrix<f64> {
        let mu = self.basis.mu();
        let c = DVector::from_fn(mu.len(), |i, _| (-mu[i] * t).exp() * self.a0[i]);
        &c * c.transpose()
    }

    /// R(A) = h² Φ (F̄ ∘ (Φᵀ A Φ)) Φᵀ.
    fn apply(&self, a: &DMatrix<f64>) -> DMatrix<f64> {
        let phi = self.basis.phi();
        let h = self.basis.grid().h();
        let m = phi.transpose() * a * phi;
        phi * m.component_mul(self.fbar) * phi.transpose() * (h * h)
    }

    /// Matrix of A ↦ W ∘ R(A) on vec(A), index n * N + m.
    fn step_operator(&self, weight: &DMatrix<f64>) -> DMatrix<f64> {
        let phi = self.basis.phi();
        let nm = self.basis.n_modes();
        let n = phi.ncols();
        let h = self.basis.grid().h();
        let b = DMatrix::from_fn(nm * nm, n, |r, k| phi[(r / nm, k)] * phi[(r % nm, k)]);
        let q = &b * self.fbar * b.transpose() * (h * h);
        // L[(n,m),(p,q)] = Q[(n,p),(m,q)]
        DMatrix::from_fn(nm * nm, nm * nm, |row, col| {
            let (a, bb) = (row / nm, row % nm);
            let (p, qq) = (col / nm, col % nm);
            weight[(a, bb)] * q[(a * nm + p, bb * nm + qq)]
        })
    }
}

fn diag_at(basis: &SpectralBasis, a: &DMatrix<f64>, nodes: &[usize]) -> Vec<f64> {
    let phi = basis.phi();
    let ap = a * phi;
    nodes
        .iter()
        .map(|&k| (0..basis.n_modes()).map(|i| phi[(i, k)] * ap[(i, k)]).sum())
        .collect()
}

fn symmetrize(a: &mut DMatrix<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in i + 1..n {
            let v = 0.5 * (a[(i, j)] + a[(j, i)]);
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
    }
}

/// Solution of the colored Volterra equation; coefficient matrices are kept for
/// every grid time so node-pair values can be rebuilt.
#[derive(Debug, Clone)]
pub struct ColoredSolution {
    field: SecondMomentField,
    coeffs: Vec<DMatrix<f64>>,
    log_scale: Vec<f64>,
    phi: DMatrix<f64>,
}

impl ColoredSolution {
    /// Diagonal E|u_t(x)|² at the requested nodes.
    pub fn field(&self) -> &SecondMomentField {
        &self.field
    }

    /// Full n × n matrix M(t_i, ·, ·), bit-symmetric.
    pub fn pair_matrix(&self, ti: usize) -> DMatrix<f64> {
        let mut m = self.phi.transpose() * &self.coeffs[ti] * &self.phi * self.log_scale[ti].exp();
        symmetrize(&mut m);
        m
    }

    /// Eigencoordinate second moments E[a aᵀ] at time index `ti`.
    pub fn coefficients(&self, ti: usize) -> DMatrix<f64> {
        &self.coeffs[ti] * self.log_scale[ti].exp()
    }
}

pub fn volterra_solve_colored(
    basis: &SpectralBasis,
    cov: &SpatialCovariance,
    u0: &[f64],
    lambda: f64,
    t_grid: &[f64],
    nodes: &[usize],
) -> Result<ColoredSolution> {
    let sys = PairSystem::new(basis, cov, u0, t_grid)?;
    if !(lambda >= 0.0) {
        return invalid("lambda must be nonnegative");
    }
    let nm = basis.n_modes();
    let lam2 = lambda * lambda;
    let mut field = SecondMomentField::new(basis.grid(), t_grid.to_vec(), nodes.to_vec());
    let a_init = sys.free(0.0);
    field.push(diag_at(basis, &a_init, nodes), 0.0);
    let mut coeffs = vec![a_init];
    let mut scales = vec![0.0];
    let mut log_scale = 0.0f64;
    let mut hist = DMatrix::<f64>::zeros(nm, nm);
    let mut cache: HashMap<u64, (DMatrix<f64>, DMatrix<f64>, LU<f64, Dyn, Dyn>)> = HashMap::new();

    for (i, &dt) in sys.steps.iter().enumerate() {
        let t = t_grid[i + 1];
        if !cache.contains_key(&dt.to_bits()) {
            let (decay, weight) = pair_weights(basis.mu(), dt);
            let op = sys.step_operator(&weight);
            let system = DMatrix::<f64>::identity(nm * nm, nm * nm) - op * lam2;
            if let Some(k) = (0..nm * nm).find(|&k| system[(k, k)] <= 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "step {dt} too coarse: implicit weight nonpositive at pair {k}"
                )));
            }
            let lu = system.lu();
            if !lu.is_invertible() {
                return Err(Error::InvalidGrid(format!(
                    "singular step system for dt = {dt}"
                )));
            }
            cache.insert(dt.to_bits(), (decay, weight, lu));
        }
        let (decay, weight, lu) = &cache[&dt.to_bits()];
        hist.component_mul_assign(decay);
        let rhs_m = sys.free(t) * (-log_scale).exp() + &hist * lam2;
        // vec index n * N + m is the row-major layout, i.e. the transpose's storage
        let rhs = DVector::from_column_slice(rhs_m.transpose().as_slice());
        let sol = lu
            .solve(&rhs)
            .ok_or_else(|| Error::NumericFailure("Volterra step solve failed".into()))?;
        let mut a = DMatrix::from_row_slice(nm, nm, sol.as_slice());
        symmetrize(&mut a);
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "non-finite second moment at t = {t}"
            )));
        }
        hist += sys.apply(&a).component_mul(weight);
        let peak = a.amax();
        if peak > RESCALE_AT {
            a /= peak;
            hist /= peak;
            log_scale += peak.ln();
        }
        field.push(diag_at(basis, &a, nodes), log_scale);
        coeffs.push(a);
        scales.push(log_scale);
    }
    Ok(ColoredSolution {
        field,
        coeffs,
        log_scale: scales,
        phi: basis.phi().clone(),
    })
}

/// n-th chaos contribution λ^{2n} Vⁿ[h0 ⊗ h0] on the diagonal.
#[derive(Debug, Clone, PartialEq)]
pub struct ChaosTerm {
    pub n: usize,
    /// values[time index][reported node]
    pub values: Vec<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ChaosReport {
    pub times: Vec<f64>,
    pub nodes: Vec<usize>,
    pub terms: Vec<ChaosTerm>,
    /// Σ_{n <= n_max} of the terms, same layout as the term values.
    pub partial_sum: Vec<Vec<f64>>,
    /// Ratio of the last two terms at the final time (sup over nodes).
    pub ratio: f64,
    /// last · q / (1 - q), infinite when q >= 1.
    pub tail_bound: f64,
}

/// Picard iterates of the colored system: term 0 is h0 ⊗ h0 and term n is
/// λ² V applied to term n - 1, with V the same discrete Volterra operator the
/// implicit solver inverts.
pub fn picard_chaos_terms(
    basis: &SpectralBasis,
    cov: &SpatialCovariance,
    u0: &[f64],
    lambda: f64,
    t_grid: &[f64],
    nodes: &[usize],
    n_max: usize,
) -> Result<ChaosReport> {
    if n_max > 8 {
        return invalid(format!("n_max = {n_max} exceeds 8"));
    }
    let sys = PairSystem::new(basis, cov, u0, t_grid)?;
    let nm = basis.n_modes();
    let lam2 = lambda * lambda;
    let mut current: Vec<DMatrix<f64>> = t_grid.iter().map(|&t| sys.free(t)).collect();
    let mut terms = vec![ChaosTerm {
        n: 0,
        values: current.iter().map(|a| diag_at(basis, a, nodes)).collect(),
    }];
    let mut weights: HashMap<u64, (DMatrix<f64>, DMatrix<f64>)> = HashMap::new();
    for n in 1..=n_max {
        let mut next = Vec::with_capacity(t_grid.len());
        next.push(DMatrix::<f64>::zeros(nm, nm));
        let mut hist = DMatrix::<f64>::zeros(nm, nm);
        for (i, &dt) in sys.steps.iter().enumerate() {
            let (decay, weight) = weights
                .entry(dt.to_bits())
                .or_insert_with(|| pair_weights(basis.mu(), dt));
            hist.component_mul_assign(decay);
            hist += sys.apply(&current[i + 1]).component_mul(weight);
            let mut a = &hist * lam2;
            symmetrize(&mut a);
            next.push(a);
        }
        terms.push(ChaosTerm {
            n,
            values: next.iter().map(|a| diag_at(basis, a, nodes)).collect(),
        });
        current = next;
    }
    let k = t_grid.len();
    let mut partial = vec![vec![0.0; nodes.len()]; k];
    for term in &terms {
        for (p, v) in partial.iter_mut().zip(&term.values) {
            for (a, b) in p.iter_mut().zip(v) {
                *a += b;
            }
        }
    }
    let sup = |t: &ChaosTerm| t.values[k - 1].iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let (ratio, tail_bound) = if n_max == 0 {
        (f64::INFINITY, f64::INFINITY)
    } else {
        let last = sup(&terms[n_max]);
        let prev = sup(&terms[n_max - 1]);
        let q = if prev > 0.0 { last / prev } else { 0.0 };
        let tail = if q < 1.0 {
            last * q / (1.0 - q)
        } else {
            f64::INFINITY
        };
        (q, tail)
    };
    Ok(ChaosReport {
        times: t_grid.to_vec(),
        nodes: nodes.to_vec(),
        terms,
        partial_sum: partial,
        ratio,
        tail_bound,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;
    use crate::noise::{covariance_matrix, CovarianceModel};
    use crate::numerics::polynomial_fit;
    use crate::secondmoment::{renewal_solve_white, uniform_time_grid};
    use crate::spectral::exact_basis_interval;

    fn setup(n: usize, modes: usize, model: CovarianceModel) -> (SpectralBasis, SpatialCovariance) {
        let g = Grid1D::new(n).unwrap();
        (
            exact_basis_interval(modes, &g).unwrap(),
            covariance_matrix(&g, &model).unwrap(),
        )
    }

    #[test]
    fn zero_lambda_is_product_of_h0() {
        let (b, c) = setup(9, 8, CovarianceModel::Riesz { beta: 0.5 });
        let u0 = vec![1.0; 9];
        let grid = uniform_time_grid(0.5, 10);
        let s = volterra_solve_colored(&b, &c, &u0, 0.0, &grid, &[4]).unwrap();
        let a0 = b.project(&u0);
        for (ti, &t) in grid.iter().enumerate() {
            let coef = DVector::from_fn(8, |i, _| (-b.mu()[i] * t).exp() * a0[i]);
            let h0 = b.phi().transpose() * coef;
            let m = s.pair_matrix(ti);
            for i in 0..9 {
                for j in 0..9 {
                    assert!((m[(i, j)] - h0[i] * h0[j]).abs() < 1e-13);
                }
            }
        }
    }

    #[test]
    fn pair_matrix_bit_symmetric() {
        let (b, c) = setup(9, 8, CovarianceModel::Riesz { beta: 0.5 });
        let s = volterra_solve_colored(
            &b,
            &c,
            &vec![1.0; 9],
            1.0,
            &uniform_time_grid(0.3, 30),
            &[4],
        )
        .unwrap();
        let m = s.pair_matrix(30);
        for i in 0..9 {
            for j in 0..9 {
                assert_eq!(m[(i, j)], m[(j, i)]);
            }
        }
    }

    #[test]
    fn white_covariance_reproduces_renewal() {
        let (b, c) = setup(11, 10, CovarianceModel::White);
        let u0 = vec![1.0; 11];
        let grid = uniform_time_grid(0.4, 40);
        let nodes: Vec<usize> = (0..11).collect();
        let col = volterra_solve_colored(&b, &c, &u0, 1.5, &grid, &nodes).unwrap();
        let ren = renewal_solve_white(&b, &u0, 1.5, 1.0, &grid, &nodes).unwrap();
        for ti in 0..grid.len() {
            for j in 0..11 {
                let (x, y) = (col.field().value(ti, j), ren.value(ti, j));
                assert!((x - y).abs() < 1e-10 * y, "t{ti} n{j}: {x} vs {y}");
            }
        }
    }

    #[test]
    fn picard_terms_nonnegative_and_sum_to_solution() {
        let (b, c) = setup(9, 8, CovarianceModel::Riesz { beta: 0.5 });
        let u0 = vec![1.0; 9];
        let grid = uniform_time_grid(0.25, 25);
        let nodes = vec![2, 4];
        let rep = picard_chaos_terms(&b, &c, &u0, 1.0, &grid, &nodes, 8).unwrap();
        for t in &rep.terms {
            assert!(t.values.iter().flatten().all(|v| *v >= 0.0));
        }
        let sol = volterra_solve_colored(&b, &c, &u0, 1.0, &grid, &nodes).unwrap();
        let last = grid.len() - 1;
        for j in 0..2 {
            let gap = sol.field().value(last, j) - rep.partial_sum[last][j];
            assert!(
                gap >= -1e-12 && gap <= rep.tail_bound + 1e-12,
                "gap {gap} tail {}",
                rep.tail_bound
            );
        }
    }

    #[test]
    fn picard_terms_scale_with_lambda_power() {
        let (b, c) = setup(9, 8, CovarianceModel::Riesz { beta: 0.5 });
        let u0 = vec![1.0; 9];
        let grid = uniform_time_grid(0.25, 25);
        let r1 = picard_chaos_terms(&b, &c, &u0, 0.7, &grid, &[4], 5).unwrap();
        let r2 = picard_chaos_terms(&b, &c, &u0, 1.4, &grid, &[4], 5).unwrap();
        for n in 0..=5 {
            for ti in 1..grid.len() {
                let (a, bb) = (r1.terms[n].values[ti][0], r2.terms[n].values[ti][0]);
                let f = 4f64.powi(n as i32);
                assert!((bb - f * a).abs() <= 1e-10 * f * a.abs(), "n={n}");
            }
        }
    }

    #[test]
    fn picard_terms_are_taylor_coefficients() {
        let (b, c) = setup(9, 8, CovarianceModel::Riesz { beta: 0.5 });
        let u0 = vec![1.0; 9];
        let grid = uniform_time_grid(0.25, 25);
        let last = grid.len() - 1;
        let rep = picard_chaos_terms(&b, &c, &u0, 1.0, &grid, &[4], 3).unwrap();
        let l2s: Vec<f64> = (1..=8).map(|i| 0.01 * i as f64).collect();
        let ys: Vec<f64> = l2s
            .iter()
            .map(|l2| {
                volterra_solve_colored(&b, &c, &u0, l2.sqrt(), &grid, &[4])
                    .unwrap()
                    .field()
                    .value(last, 0)
            })
            .collect();
        let coef = polynomial_fit(&l2s, &ys, 7).unwrap();
        for n in 0..3 {
            let term = rep.terms[n].values[last][0];
            assert!(
                ((coef[n] - term) / term).abs() < 1e-6,
                "n={n}: {} vs {term}",
                coef[n]
            );
        }
    }

    #[test]
    fn size_limits_enforced() {
        let (b, c) = setup(130, 8, CovarianceModel::White);
        let r = volterra_solve_colored(&b, &c, &vec![1.0; 130], 1.0, &[0.0, 0.1], &[0]);
        assert!(r.is_err());
    }
}
