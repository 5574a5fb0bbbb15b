//! Spatial covariance models, well-posedness predicates, and correlated
//! Gaussian increments on the grid.

use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::grid::Grid1D;
use crate::rng::fill_standard_normal;

/// Spatial correlation f of the driving noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CovarianceModel {
    White,
    Riesz { beta: f64 },
    FractionalProduct { hurst: Vec<f64> },
    Bessel { eta: f64 },
}

impl CovarianceModel {
    /// Parameter ranges for spatial dimension `d`.
    pub fn validate(&self, d: usize) -> Result<()> {
        match self {
            CovarianceModel::White => Ok(()),
            CovarianceModel::Riesz { beta } => {
                if *beta > 0.0 && *beta < d as f64 {
                    Ok(())
                } else {
                    invalid(format!("riesz exponent {beta} outside (0, {d})"))
                }
            }
            CovarianceModel::FractionalProduct { hurst } => {
                if hurst.len() != d {
                    return invalid(format!("need {d} Hurst indices, got {}", hurst.len()));
                }
                if hurst.iter().all(|h| *h > 0.5 && *h < 1.0) {
                    Ok(())
                } else {
                    invalid("Hurst indices must lie in (1/2, 1)")
                }
            }
            CovarianceModel::Bessel { eta } => {
                if *eta > 0.0 {
                    Ok(())
                } else {
                    invalid(format!("bessel order {eta} must be positive"))
                }
            }
        }
    }

    /// Exponent of the small-scale singularity |x|^{-β}, or 1 for white noise
    /// in one dimension.
    pub fn singularity_exponent(&self) -> Option<f64> {
        match self {
            CovarianceModel::White => Some(1.0),
            CovarianceModel::Riesz { beta } => Some(*beta),
            _ => None,
        }
    }
}

impl fmt::Display for CovarianceModel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CovarianceModel::White => write!(f, "white"),
            CovarianceModel::Riesz { beta } => write!(f, "riesz:{beta}"),
            CovarianceModel::FractionalProduct { hurst } => {
                let hs: Vec<String> = hurst.iter().map(|h| h.to_string()).collect();
                write!(f, "frac:{}", hs.join(","))
            }
            CovarianceModel::Bessel { eta } => write!(f, "bessel:{eta}"),
        }
    }
}

impl FromStr for CovarianceModel {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let (kind, arg) = match s.split_once(':') {
            Some((k, a)) => (k, Some(a)),
            None => (s, None),
        };
        let num = |a: Option<&str>| -> Result<f64> {
            let a = a.ok_or_else(|| {
                Error::InvalidArgument(format!("noise spec '{s}' needs a parameter"))
            })?;
            a.trim()
                .parse::<f64>()
                .map_err(|_| Error::InvalidArgument(format!("bad number in noise spec '{s}'")))
        };
        match kind {
            "white" if arg.is_none() => Ok(CovarianceModel::White),
            "riesz" => Ok(CovarianceModel::Riesz { beta: num(arg)? }),
            "bessel" => Ok(CovarianceModel::Bessel { eta: num(arg)? }),
            "frac" => {
                let a =
                    arg.ok_or_else(|| Error::InvalidArgument("frac needs Hurst indices".into()))?;
                let hurst = a
                    .split(',')
                    .map(|h| {
                        h.trim()
                            .parse::<f64>()
                            .map_err(|_| Error::InvalidArgument(format!("bad Hurst index '{h}'")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok(CovarianceModel::FractionalProduct { hurst })
            }
            _ => invalid(format!("unknown noise spec '{s}'")),
        }
    }
}

/// Closed-form well-posedness predicate for each model family.
pub fn dalang_condition(model: &CovarianceModel, alpha: f64, d: usize) -> bool {
    let d = d as f64;
    match model {
        CovarianceModel::White => alpha > d,
        CovarianceModel::Riesz { beta } => *beta < alpha,
        CovarianceModel::FractionalProduct { hurst } => hurst.iter().sum::<f64>() > d - alpha / 2.0,
        CovarianceModel::Bessel { eta } => *eta > d - alpha,
    }
}

/// True iff the model is a Riesz kernel with 0 < β < α ∧ d.
pub fn hypothesis_h0_check(model: &CovarianceModel, alpha: f64, d: usize) -> bool {
    match model {
        CovarianceModel::Riesz { beta } => *beta > 0.0 && *beta < alpha.min(d as f64),
        _ => false,
    }
}

/// Cell-averaged Riesz covariance between cells `m` apart,
/// h^{-2} ∫_{cell_i} ∫_{cell_j} |y - z|^{-β} dy dz.
pub fn riesz_cell_average(beta: f64, h: f64, m: usize) -> f64 {
    let s = 2.0 - beta;
    let norm = (1.0 - beta) * s;
    if m == 0 {
        return 2.0 * h.powf(-beta) / norm;
    }
    if m < 32 {
        let f = |u: f64| u.powf(s) / norm;
        let mf = m as f64;
        return (f((mf + 1.0) * h) - 2.0 * f(mf * h) + f((mf - 1.0) * h)) / (h * h);
    }
    // second central difference of m^s expanded in 1/m^2 to avoid cancellation
    let mf = m as f64;
    let inv2 = 1.0 / (mf * mf);
    let mut sum = 1.0;
    let mut coeff = 1.0; // binom(s, 2k) * 2 / (s (s - 1))
    let mut pow = 1.0;
    for k in 2..20 {
        let j = 2 * k;
        coeff *= (s - (j - 2) as f64) * (s - (j - 1) as f64) / ((j - 1) as f64 * j as f64);
        pow *= inv2;
        let term = coeff * pow;
        sum += term;
        if term.abs() < 1e-18 * sum.abs() {
            break;
        }
    }
    (mf * h).powf(-beta) * sum
}

/// Cell-averaged covariance matrix on a grid, with a lazily computed factor.
#[derive(Debug)]
pub struct SpatialCovariance {
    grid: Grid1D,
    model: CovarianceModel,
    matrix: DMatrix<f64>,
    factor: OnceLock<std::result::Result<DMatrix<f64>, Error>>,
}

pub fn covariance_matrix(grid: &Grid1D, model: &CovarianceModel) -> Result<SpatialCovariance> {
    let n = grid.n_cells();
    let h = grid.h();
    let matrix = match model {
        CovarianceModel::White => DMatrix::from_diagonal_element(n, n, 1.0 / h),
        CovarianceModel::Riesz { beta } => {
            if !(*beta > 0.0 && *beta < 1.0) {
                return invalid(format!(
                    "riesz exponent {beta} outside (0, 1) in one dimension"
                ));
            }
            let by_offset: Vec<f64> = (0..n).map(|m| riesz_cell_average(*beta, h, m)).collect();
            DMatrix::from_fn(n, n, |i, j| by_offset[i.abs_diff(j)])
        }
        other => return invalid(format!("no covariance assembly for '{other}'")),
    };
    Ok(SpatialCovariance {
        grid: grid.clone(),
        model: model.clone(),
        matrix,
        factor: OnceLock::new(),
    })
}

impl Clone for SpatialCovariance {
    fn clone(&self) -> Self {
        SpatialCovariance {
            grid: self.grid.clone(),
            model: self.model.clone(),
            matrix: self.matrix.clone(),
            factor: OnceLock::new(),
        }
    }
}

impl SpatialCovariance {
    pub fn grid(&self) -> &Grid1D {
        &self.grid
    }

    pub fn model(&self) -> &CovarianceModel {
        &self.model
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn is_white(&self) -> bool {
        matches!(self.model, CovarianceModel::White)
    }

    /// Largest absolute row sum, an upper bound for the spectral norm.
    pub fn norm_bound(&self) -> f64 {
        self.matrix
            .row_iter()
            .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn min_eigenvalue(&self) -> f64 {
        SymmetricEigen::new(self.matrix.clone()).eigenvalues.min()
    }

    /// Lower-triangular L with L Lᵀ = M (+ jitter). Jitter of 1e-12 trace/n is
    /// added at most three times before giving up.
    pub fn factor(&self) -> Result<&DMatrix<f64>> {
        self.factor
            .get_or_init(|| {
                let n = self.matrix.nrows();
                if self.is_white() {
                    return Ok(DMatrix::from_diagonal_element(
                        n,
                        n,
                        self.matrix[(0, 0)].sqrt(),
                    ));
                }
                let jitter = 1e-12 * self.matrix.trace() / n as f64;
                let mut m = self.matrix.clone();
                for _ in 0..=3 {
                    if let Some(c) = Cholesky::new(m.clone()) {
                        return Ok(c.l());
                    }
                    for i in 0..n {
                        m[(i, i)] += jitter;
                    }
                }
                Err(Error::NumericFailure(
                    "covariance Cholesky failed after jitter".into(),
                ))
            })
            .as_ref()
            .map_err(Clone::clone)
    }
}

/// √dt · L ξ with ξ standard normal, so the covariance is dt · M.
pub fn sample_spatial_increment<R: Rng + ?Sized>(
    cov: &SpatialCovariance,
    rng: &mut R,
    dt: f64,
) -> Result<Vec<f64>> {
    if !(dt > 0.0) {
        return invalid(format!("dt = {dt} must be positive"));
    }
    let n = cov.grid.n_cells();
    let mut xi = vec![0.0; n];
    fill_standard_normal(rng, &mut xi);
    if cov.is_white() {
        let s = (dt * cov.matrix[(0, 0)]).sqrt();
        return Ok(xi.into_iter().map(|v| s * v).collect());
    }
    let l = cov.factor()?;
    let out = l * DVector::from_vec(xi) * dt.sqrt();
    Ok(out.as_slice().to_vec())
}
