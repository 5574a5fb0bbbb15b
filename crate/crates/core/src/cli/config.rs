use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Grid1D;
use crate::noise::{dalang_condition, CovarianceModel};
use crate::solver::{InitialCondition, SigmaSpec};
use crate::spectral::{
    exact_basis_interval, fractional_laplacian_matrix, numeric_basis, SpectralBasis,
};

/// Resolved experiment settings. Spec strings use the same syntax as the
/// command-line flags, e.g. `noise = "riesz:0.5"`, `u0 = "const:1"`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub alpha: f64,
    pub d: usize,
    pub n_cells: usize,
    pub n_modes: usize,
    pub noise: String,
    pub sigma: String,
    pub u0: String,
    pub lambda: Vec<f64>,
    pub t: Vec<f64>,
    pub p: Vec<f64>,
    pub n_paths: usize,
    pub seed: u64,
    pub eps: f64,
    /// time step for simulate; capped at the stability limit
    pub dt: f64,
    /// oracle time step
    pub oracle_dt: f64,
    pub out: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            alpha: 2.0,
            d: 1,
            n_cells: 33,
            n_modes: 32,
            noise: "white".into(),
            sigma: "linear".into(),
            u0: "const:1".into(),
            lambda: vec![1.0],
            t: vec![0.1, 0.25, 0.5],
            p: vec![2.0],
            n_paths: 1000,
            seed: 0,
            eps: 0.25,
            dt: 5e-4,
            oracle_dt: 1e-3,
            out: PathBuf::from("run"),
        }
    }
}

fn bad<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::ConfigInvalid(msg.into()))
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigInvalid(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::ConfigInvalid(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn model(&self) -> Result<CovarianceModel> {
        self.noise
            .parse()
            .map_err(|e: Error| Error::ConfigInvalid(e.to_string()))
    }

    pub fn sigma_spec(&self) -> Result<SigmaSpec> {
        self.sigma
            .parse()
            .map_err(|e: Error| Error::ConfigInvalid(e.to_string()))
    }

    pub fn initial(&self) -> Result<InitialCondition> {
        self.u0
            .parse()
            .map_err(|e: Error| Error::ConfigInvalid(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        if self.d != 1 {
            return bad(format!("only d = 1 is supported, got {}", self.d));
        }
        if !(self.alpha > 1.0 && self.alpha <= 2.0) {
            return bad(format!("alpha must lie in (1, 2], got {}", self.alpha));
        }
        if self.n_cells < 4 {
            return bad("n_cells must be at least 4");
        }
        if self.n_modes == 0 || self.n_modes >= self.n_cells {
            return bad("n_modes must lie in [1, n_cells)");
        }
        let model = self.model()?;
        if model.validate(self.d).is_err() || !dalang_condition(&model, self.alpha, self.d) {
            return bad(format!(
                "noise '{}' fails the Dalang condition for alpha = {}",
                self.noise, self.alpha
            ));
        }
        self.sigma_spec()?;
        self.initial()?;
        if self.lambda.is_empty() || self.lambda.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return bad("lambda list must be nonempty and nonnegative");
        }
        if self.t.is_empty() || self.t[0] <= 0.0 || self.t.windows(2).any(|w| w[1] <= w[0]) {
            return bad("t list must be positive and strictly increasing");
        }
        if self.p.is_empty() || self.p.iter().any(|p| !(*p >= 2.0)) {
            return bad("p list must be nonempty with p >= 2");
        }
        if self.n_paths == 0 {
            return bad("n_paths must be positive");
        }
        if !(self.eps > 0.0 && self.eps < 0.5) {
            return bad(format!("eps must lie in (0, 1/2), got {}", self.eps));
        }
        if !(self.dt > 0.0 && self.oracle_dt > 0.0) {
            return bad("time steps must be positive");
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<Grid1D> {
        Grid1D::new(self.n_cells)
    }

    /// Exact sine basis at α = 2, discretized fractional Laplacian otherwise.
    pub fn basis(&self) -> Result<SpectralBasis> {
        let g = self.grid()?;
        if self.alpha == 2.0 {
            exact_basis_interval(self.n_modes, &g)
        } else {
            let m = fractional_laplacian_matrix(&g, self.alpha)?;
            numeric_basis(&m, self.n_modes, &g, self.alpha)
        }
    }
}

/// Parses `1,2.5,4`.
pub fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(',')
        .map(|v| {
            v.trim()
                .parse::<f64>()
                .map_err(|_| Error::ConfigInvalid(format!("bad number '{v}' in list '{s}'")))
        })
        .collect()
}
