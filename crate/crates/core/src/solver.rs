//! Exponential-Euler sample paths of the mild formulation, in eigencoordinates.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::noise::{dalang_condition, SpatialCovariance};
use crate::rng::{fill_standard_normal, step_rng};
use crate::spectral::SpectralBasis;

/// Nonlinearity σ. `Additive` ignores u and exists for additive-noise checks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum SigmaSpec {
    Linear,
    Pinched { l: f64, big_l: f64 },
    Additive { c: f64 },
}

impl SigmaSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            SigmaSpec::Pinched { l, big_l } if !(l > 0.0 && l <= big_l && big_l.is_finite()) => {
                invalid(format!(
                    "pinched sigma needs 0 < l <= L, got ({l}, {big_l})"
                ))
            }
            SigmaSpec::Additive { c } if !c.is_finite() => invalid("additive sigma must be finite"),
            _ => Ok(()),
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        match *self {
            SigmaSpec::Linear => x,
            SigmaSpec::Pinched { l, big_l } => x * (l + (big_l - l) / (1.0 + x * x)),
            SigmaSpec::Additive { c } => c,
        }
    }

    /// Constants (l, L) with l|x| <= |σ(x)| <= L|x|; L also bounds the slope.
    pub fn growth_constants(&self) -> (f64, f64) {
        match *self {
            SigmaSpec::Linear => (1.0, 1.0),
            SigmaSpec::Pinched { l, big_l } => (l, big_l),
            SigmaSpec::Additive { c } => (0.0, c.abs()),
        }
    }

    pub fn is_linear(&self) -> bool {
        matches!(self, SigmaSpec::Linear)
    }
}

impl fmt::Display for SigmaSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SigmaSpec::Linear => write!(f, "linear"),
            SigmaSpec::Pinched { l, big_l } => write!(f, "pinched:{l},{big_l}"),
            SigmaSpec::Additive { c } => write!(f, "additive:{c}"),
        }
    }
}

fn parse_num(s: &str, what: &str) -> Result<f64> {
    s.trim()
        .parse::<f64>()
        .map_err(|_| Error::InvalidArgument(format!("bad number '{s}' in {what}")))
}

impl FromStr for SigmaSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let spec = match s.trim().split_once(':') {
            None if s.trim() == "linear" => SigmaSpec::Linear,
            Some(("pinched", rest)) => {
                let (l, big_l) = rest
                    .split_once(',')
                    .ok_or_else(|| Error::InvalidArgument(format!("sigma spec '{s}' needs l,L")))?;
                SigmaSpec::Pinched {
                    l: parse_num(l, "sigma")?,
                    big_l: parse_num(big_l, "sigma")?,
                }
            }
            Some(("additive", c)) => SigmaSpec::Additive {
                c: parse_num(c, "sigma")?,
            },
            _ => return invalid(format!("unknown sigma spec '{s}'")),
        };
        spec.validate()?;
        Ok(spec)
    }
}

/// Initial datum u0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitialCondition {
    Constant {
        c: f64,
    },
    FirstEigenfunction,
    /// `level` on |x| <= 1 - eps, decaying linearly to 0 at |x| = 1.
    Bump {
        eps: f64,
        level: f64,
    },
}

impl InitialCondition {
    pub fn validate(&self) -> Result<()> {
        match *self {
            InitialCondition::Constant { c } if !(c > 0.0 && c.is_finite()) => {
                invalid(format!("constant initial value {c} must be positive"))
            }
            InitialCondition::Bump { eps, level }
                if !(eps > 0.0 && eps < 0.5 && level > 0.0 && level.is_finite()) =>
            {
                invalid(format!(
                    "bump needs eps in (0, 1/2) and level > 0, got ({eps}, {level})"
                ))
            }
            _ => Ok(()),
        }
    }

    pub fn values(&self, basis: &SpectralBasis) -> Vec<f64> {
        let g = basis.grid();
        match *self {
            InitialCondition::Constant { c } => vec![c; g.n_cells()],
            InitialCondition::FirstEigenfunction => {
                (0..g.n_cells()).map(|k| basis.value(0, k)).collect()
            }
            InitialCondition::Bump { eps, level } => g
                .nodes()
                .iter()
                .map(|x| level * ((1.0 - x.abs()) / eps).min(1.0))
                .collect(),
        }
    }
}

impl fmt::Display for InitialCondition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InitialCondition::Constant { c } => write!(f, "const:{c}"),
            InitialCondition::FirstEigenfunction => write!(f, "phi1"),
            InitialCondition::Bump { eps, level } => write!(f, "bump:{eps}:{level}"),
        }
    }
}

impl FromStr for InitialCondition {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let ic = match parts.as_slice() {
            ["phi1"] => InitialCondition::FirstEigenfunction,
            ["const", c] => InitialCondition::Constant {
                c: parse_num(c, "u0")?,
            },
            ["bump", eps, level] => InitialCondition::Bump {
                eps: parse_num(eps, "u0")?,
                level: parse_num(level, "u0")?,
            },
            _ => return invalid(format!("unknown initial condition '{s}'")),
        };
        ic.validate()?;
        Ok(ic)
    }
}

/// Solution values on the grid at time `t` for one path.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldState {
    pub t: f64,
    pub values: Vec<f64>,
    pub path_id: u64,
}

/// Largest admissible step, (2 λ L ‖M‖^{1/2})^{-2}.
pub fn dt_max(lambda: f64, big_l: f64, cov: &SpatialCovariance) -> f64 {
    let denom = 2.0 * lambda * big_l * cov.norm_bound().sqrt();
    if denom > 0.0 {
        denom.powi(-2)
    } else {
        f64::INFINITY
    }
}

/// a = h Φ v.
fn project_into(basis: &SpectralBasis, v: &[f64], a: &mut [f64]) {
    let phi = basis.phi();
    let n_modes = basis.n_modes();
    let h = basis.grid().h();
    let data = phi.as_slice();
    a.iter_mut().for_each(|x| *x = 0.0);
    for (k, &vk) in v.iter().enumerate() {
        let col = &data[k * n_modes..(k + 1) * n_modes];
        for (an, &p) in a.iter_mut().zip(col) {
            *an += p * vk;
        }
    }
    a.iter_mut().for_each(|x| *x *= h);
}

/// u_k = Σ_n a_n Φ_n(x_k).
fn synthesize_into(basis: &SpectralBasis, a: &[f64], u: &mut [f64]) {
    let n_modes = basis.n_modes();
    let data = basis.phi().as_slice();
    for (k, uk) in u.iter_mut().enumerate() {
        let col = &data[k * n_modes..(k + 1) * n_modes];
        *uk = col.iter().zip(a).map(|(p, x)| p * x).sum();
    }
}

fn decay_factors(basis: &SpectralBasis, dt: f64, drift: bool) -> Vec<f64> {
    basis
        .mu()
        .iter()
        .map(|m| if drift { (-m * dt).exp() } else { 1.0 })
        .collect()
}

/// Applies the semigroup exactly: a_n ↦ e^{-μ_n dt} a_n.
pub fn deterministic_drift(basis: &SpectralBasis, state: &FieldState, dt: f64) -> FieldState {
    let mut a = vec![0.0; basis.n_modes()];
    project_into(basis, &state.values, &mut a);
    for (x, e) in a.iter_mut().zip(decay_factors(basis, dt, true)) {
        *x *= e;
    }
    let mut values = vec![0.0; state.values.len()];
    synthesize_into(basis, &a, &mut values);
    FieldState {
        t: state.t + dt,
        values,
        path_id: state.path_id,
    }
}

fn add_noise<R: Rng + ?Sized>(
    cov: &SpatialCovariance,
    sigma: SigmaSpec,
    lambda: f64,
    u: &[f64],
    dt: f64,
    rng: &mut R,
    xi: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    if lambda == 0.0 {
        out.copy_from_slice(u);
        return Ok(());
    }
    fill_standard_normal(rng, xi);
    if cov.is_white() {
        let s = (dt * cov.matrix()[(0, 0)]).sqrt();
        for ((o, &uk), &x) in out.iter_mut().zip(u).zip(xi.iter()) {
            *o = uk + lambda * sigma.eval(uk) * s * x;
        }
    } else {
        let l = cov.factor()?;
        let sdt = dt.sqrt();
        let n = u.len();
        for i in 0..n {
            let mut dw = 0.0;
            for j in 0..=i {
                dw += l[(i, j)] * xi[j];
            }
            out[i] = u[i] + lambda * sigma.eval(u[i]) * sdt * dw;
        }
    }
    Ok(())
}

/// One step u ↦ S(dt)[u + λ σ(u) ⊙ ΔW].
pub fn em_step<R: Rng + ?Sized>(
    basis: &SpectralBasis,
    cov: &SpatialCovariance,
    sigma: SigmaSpec,
    lambda: f64,
    state: &FieldState,
    dt: f64,
    rng: &mut R,
) -> Result<FieldState> {
    let n = state.values.len();
    let mut xi = vec![0.0; n];
    let mut pre = vec![0.0; n];
    add_noise(
        cov,
        sigma,
        lambda,
        &state.values,
        dt,
        rng,
        &mut xi,
        &mut pre,
    )?;
    let next = deterministic_drift(
        basis,
        &FieldState {
            t: state.t,
            values: pre,
            path_id: state.path_id,
        },
        dt,
    );
    if next.values.iter().any(|v| !v.is_finite()) {
        return Err(Error::BlowUp {
            path_id: state.path_id,
            t: next.t,
        });
    }
    Ok(next)
}

/// Everything needed to generate paths reproducibly.
#[derive(Debug, Clone)]
pub struct Simulation {
    basis: Arc<SpectralBasis>,
    cov: Arc<SpatialCovariance>,
    sigma: SigmaSpec,
    lambda: f64,
    u0: Vec<f64>,
    times: Vec<f64>,
    dt: f64,
    seed: u64,
    drift: bool,
}

impl Simulation {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        basis: Arc<SpectralBasis>,
        cov: Arc<SpatialCovariance>,
        sigma: SigmaSpec,
        lambda: f64,
        u0: &InitialCondition,
        times: &[f64],
        dt: f64,
        seed: u64,
    ) -> Result<Self> {
        sigma.validate()?;
        u0.validate()?;
        if basis.grid().n_cells() != cov.grid().n_cells() {
            return invalid("basis and covariance grids differ");
        }
        if !dalang_condition(cov.model(), basis.alpha(), basis.d()) {
            return invalid(format!(
                "'{}' fails the well-posedness condition at alpha = {}",
                cov.model(),
                basis.alpha()
            ));
        }
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return invalid(format!("lambda = {lambda} must be nonnegative"));
        }
        if times.is_empty() || times.iter().any(|t| !(*t >= 0.0 && t.is_finite())) {
            return invalid("output times must be nonnegative and finite");
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return invalid("output times must be strictly increasing");
        }
        let limit = dt_max(lambda, sigma.growth_constants().1, &cov);
        if !(dt > 0.0 && dt <= limit) {
            return invalid(format!("dt = {dt} outside (0, {limit:e}]"));
        }
        let u0 = u0.values(&basis);
        Ok(Simulation {
            basis,
            cov,
            sigma,
            lambda,
            u0,
            times: times.to_vec(),
            dt,
            seed,
            drift: true,
        })
    }

    /// Test hook: sets every μ_n to 0 in the time stepping.
    pub fn without_drift(mut self) -> Self {
        self.drift = false;
        self
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn u0(&self) -> &[f64] {
        &self.u0
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Snapshots at the requested times; each interval is split into equal
    /// steps no longer than `dt`.
    pub fn simulate_path(&self, path_id: u64) -> Result<Vec<FieldState>> {
        let basis = &*self.basis;
        let n = basis.grid().n_cells();
        let mut u = self.u0.clone();
        let mut pre = vec![0.0; n];
        let mut xi = vec![0.0; n];
        let mut a = vec![0.0; basis.n_modes()];
        let mut out = Vec::with_capacity(self.times.len());
        let mut t = 0.0;
        let mut step: u64 = 0;
        for &target in &self.times {
            let span = target - t;
            if span > 0.0 {
                let n_steps = (span / self.dt).ceil().max(1.0) as u64;
                let h = span / n_steps as f64;
                let decay = decay_factors(basis, h, self.drift);
                for s in 0..n_steps {
                    let mut rng = step_rng(self.seed, path_id, step);
                    add_noise(
                        &self.cov,
                        self.sigma,
                        self.lambda,
                        &u,
                        h,
                        &mut rng,
                        &mut xi,
                        &mut pre,
                    )?;
                    project_into(basis, &pre, &mut a);
                    for (x, e) in a.iter_mut().zip(&decay) {
                        *x *= e;
                    }
                    synthesize_into(basis, &a, &mut u);
                    step += 1;
                    if u.iter().any(|v| !v.is_finite()) {
                        return Err(Error::BlowUp {
                            path_id,
                            t: t + (s + 1) as f64 * h,
                        });
                    }
                }
            }
            t = target;
            out.push(FieldState {
                t,
                values: u.clone(),
                path_id,
            });
        }
        Ok(out)
    }

    /// Paths `0..n_paths`, computed in parallel and returned in path order.
    pub fn simulate_paths(&self, n_paths: u64) -> Vec<Result<Vec<FieldState>>> {
        (0..n_paths)
            .into_par_iter()
            .map(|p| self.simulate_path(p))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid1D;
    use crate::noise::{covariance_matrix, CovarianceModel};
    use crate::rng::path_rng;
    use crate::spectral::exact_basis_interval;

    fn setup(n: usize, model: CovarianceModel) -> (Arc<SpectralBasis>, Arc<SpatialCovariance>) {
        let g = Grid1D::new(n).unwrap();
        (
            Arc::new(exact_basis_interval(n - 1, &g).unwrap()),
            Arc::new(covariance_matrix(&g, &model).unwrap()),
        )
    }

    #[test]
    fn specs_parse() {
        assert_eq!("linear".parse::<SigmaSpec>().unwrap(), SigmaSpec::Linear);
        assert_eq!(
            "pinched:0.5,2".parse::<SigmaSpec>().unwrap(),
            SigmaSpec::Pinched { l: 0.5, big_l: 2.0 }
        );
        assert!("pinched:2,0.5".parse::<SigmaSpec>().is_err());
        assert_eq!(
            "bump:0.25:1".parse::<InitialCondition>().unwrap(),
            InitialCondition::Bump {
                eps: 0.25,
                level: 1.0
            }
        );
        assert!("bump:0.6:1".parse::<InitialCondition>().is_err());
        for s in ["const:1", "phi1", "bump:0.25:2"] {
            assert_eq!(s.parse::<InitialCondition>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn pinched_sigma_growth_bounds() {
        let s = SigmaSpec::Pinched { l: 0.5, big_l: 2.0 };
        for i in -50..=50 {
            let x = i as f64 * 0.37;
            let v = s.eval(x).abs();
            assert!(v >= 0.5 * x.abs() - 1e-15 && v <= 2.0 * x.abs() + 1e-15);
        }
    }

    #[test]
    fn bump_profile() {
        let (b, _) = setup(33, CovarianceModel::White);
        let ic = InitialCondition::Bump {
            eps: 0.25,
            level: 2.0,
        };
        let v = ic.values(&b);
        let g = b.grid();
        for k in g.shrunk_nodes(0.25) {
            assert_eq!(v[k], 2.0);
        }
        assert!(v[0] > 0.0 && v[0] < 2.0);
    }

    #[test]
    fn drift_on_first_eigenfunction() {
        let (b, _) = setup(33, CovarianceModel::White);
        let mut s = FieldState {
            t: 0.0,
            values: InitialCondition::FirstEigenfunction.values(&b),
            path_id: 0,
        };
        for _ in 0..7 {
            s = deterministic_drift(&b, &s, 0.1);
        }
        let f = (-b.mu1() * 0.7).exp();
        for k in 0..33 {
            assert!((s.values[k] - f * b.value(0, k)).abs() < 1e-10);
        }
    }

    #[test]
    fn drift_contracts_and_composes() {
        let (b, _) = setup(33, CovarianceModel::White);
        let s0 = FieldState {
            t: 0.0,
            values: vec![1.0; 33],
            path_id: 0,
        };
        let norm = |s: &FieldState| s.values.iter().map(|v| v * v).sum::<f64>();
        let mut s = s0.clone();
        let mut prev = norm(&s);
        for _ in 0..10 {
            s = deterministic_drift(&b, &s, 0.01);
            assert!(norm(&s) <= prev);
            prev = norm(&s);
        }
        let one = deterministic_drift(&b, &s0, 0.02);
        let two = deterministic_drift(&b, &deterministic_drift(&b, &s0, 0.01), 0.01);
        for k in 0..33 {
            assert!((one.values[k] - two.values[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_lambda_step_is_drift() {
        let (b, c) = setup(17, CovarianceModel::White);
        let s = FieldState {
            t: 0.0,
            values: vec![1.0; 17],
            path_id: 3,
        };
        let a = em_step(
            &b,
            &c,
            SigmaSpec::Linear,
            0.0,
            &s,
            0.01,
            &mut path_rng(1, 3),
        )
        .unwrap();
        assert_eq!(a, deterministic_drift(&b, &s, 0.01));
    }

    #[test]
    fn em_step_flags_blow_up() {
        let (b, c) = setup(9, CovarianceModel::White);
        let s = FieldState {
            t: 0.0,
            values: vec![f64::MAX; 9],
            path_id: 5,
        };
        let r = em_step(
            &b,
            &c,
            SigmaSpec::Linear,
            1.0,
            &s,
            0.01,
            &mut path_rng(1, 5),
        );
        assert!(matches!(r, Err(Error::BlowUp { path_id: 5, .. })));
    }

    #[test]
    fn replay_is_bitwise_identical_and_linear() {
        let (b, c) = setup(17, CovarianceModel::Riesz { beta: 0.5 });
        let times = [0.05, 0.1];
        let sim = |k: f64| {
            Simulation::new(
                b.clone(),
                c.clone(),
                SigmaSpec::Linear,
                1.0,
                &InitialCondition::Constant { c: k },
                &times,
                1e-3,
                99,
            )
            .unwrap()
        };
        let p = sim(1.0).simulate_path(4).unwrap();
        assert_eq!(p, sim(1.0).simulate_path(4).unwrap());
        let q = sim(3.0).simulate_path(4).unwrap();
        for (a, bb) in p.iter().zip(&q) {
            let scale = a.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            for (x, y) in a.values.iter().zip(&bb.values) {
                assert!((3.0 * x - y).abs() <= 1e-12 * 3.0 * scale);
            }
        }
        assert_ne!(p, sim(1.0).simulate_path(5).unwrap());
    }

    #[test]
    fn snapshots_at_requested_times() {
        let (b, c) = setup(17, CovarianceModel::White);
        let s = Simulation::new(
            b.clone(),
            c,
            SigmaSpec::Linear,
            0.0,
            &InitialCondition::FirstEigenfunction,
            &[0.0, 0.3, 1.0],
            0.07,
            1,
        )
        .unwrap();
        let p = s.simulate_path(0).unwrap();
        assert_eq!(
            p.iter().map(|f| f.t).collect::<Vec<_>>(),
            vec![0.0, 0.3, 1.0]
        );
        let f = (-b.mu1()).exp();
        for k in 0..17 {
            assert!((p[2].values[k] - f * b.value(0, k)).abs() < 1e-10);
        }
    }

    #[test]
    fn simulation_rejects_bad_configs() {
        let (b, c) = setup(17, CovarianceModel::White);
        let mk = |dt: f64, times: &[f64]| {
            Simulation::new(
                b.clone(),
                c.clone(),
                SigmaSpec::Linear,
                1.0,
                &InitialCondition::Constant { c: 1.0 },
                times,
                dt,
                0,
            )
        };
        assert!(mk(1.0, &[0.1]).is_err());
        assert!(mk(1e-3, &[0.2, 0.1]).is_err());
        assert!(mk(1e-3, &[]).is_err());
        assert!(mk(1e-3, &[0.1]).is_ok());
    }

    #[test]
    fn mean_follows_deterministic_solution() {
        let (b, c) = setup(17, CovarianceModel::White);
        let times = [0.05, 0.1, 0.25];
        let sim = Simulation::new(
            b.clone(),
            c,
            SigmaSpec::Linear,
            1.0,
            &InitialCondition::Constant { c: 1.0 },
            &times,
            2e-3,
            11,
        )
        .unwrap();
        let n_paths = 4000;
        let paths: Vec<_> = sim
            .simulate_paths(n_paths)
            .into_iter()
            .map(|p| p.unwrap())
            .collect();
        let mut det = FieldState {
            t: 0.0,
            values: vec![1.0; 17],
            path_id: 0,
        };
        let mut last = 0.0;
        for (ti, &t) in times.iter().enumerate() {
            det = deterministic_drift(&b, &det, t - last);
            last = t;
            for k in [2, 8, 14] {
                let xs: Vec<f64> = paths.iter().map(|p| p[ti].values[k]).collect();
                let nf = xs.len() as f64;
                let mean = xs.iter().sum::<f64>() / nf;
                let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
                let se = (var / nf).sqrt();
                assert!((mean - det.values[k]).abs() < 3.0 * se, "t={t} k={k}");
            }
        }
    }

    #[test]
    fn additive_noise_without_drift_has_linear_variance() {
        let (b, c) = setup(9, CovarianceModel::White);
        let t = 0.2;
        let sim = Simulation::new(
            b.clone(),
            c.clone(),
            SigmaSpec::Additive { c: 1.0 },
            1.0,
            &InitialCondition::Constant { c: 1.0 },
            &[t],
            0.01,
            5,
        )
        .unwrap()
        .without_drift();
        let xs: Vec<f64> = sim
            .simulate_paths(20_000)
            .into_iter()
            .map(|p| p.unwrap()[0].values[4])
            .collect();
        let nf = xs.len() as f64;
        let mean = xs.iter().sum::<f64>() / nf;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (nf - 1.0);
        // the increment is seen through the projection P = h Φᵀ Φ onto the kept modes
        let phi = b.phi();
        let h = b.grid().h();
        let p = phi.transpose() * phi * h;
        let target = t * (&p * c.matrix() * p.transpose())[(4, 4)];
        let se = var * (2.0 / (nf - 1.0)).sqrt();
        assert!((var - target).abs() < 3.0 * se, "var {var} target {target}");
    }
}
