//! Truncated eigen-series for the killed heat kernel p_D(t, x, y), its
//! two-sided closed-form bounds, and lattice sweeps of the mass and
//! square-mass estimates.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::Region;
use crate::noise::{hypothesis_h0_check, CovarianceModel, SpatialCovariance};
use crate::spectral::{Provenance, SpectralBasis};

/// Default certification times.
pub const CERT_TIMES: [f64; 7] = [0.05, 0.1, 0.2, 0.5, 1.0, 2.0, 5.0];

/// Default certification points, mapped to the nearest grid node.
pub const CERT_POINTS: [f64; 9] = [-0.95, -0.75, -0.5, -0.25, 0.0, 0.25, 0.5, 0.75, 0.95];

#[derive(Debug, Clone)]
pub struct KernelEvaluator {
    basis: Arc<SpectralBasis>,
    n_terms: usize,
    t_min: f64,
}

/// Kernel value with the truncation tail bound that accompanies it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub value: f64,
    pub tail: f64,
}

impl KernelEvaluator {
    /// Uses the first `n_terms` modes; evaluation is trusted for t >= 3/μ_N.
    pub fn new(basis: Arc<SpectralBasis>, n_terms: usize) -> Result<Self> {
        if n_terms == 0 || n_terms > basis.n_modes() {
            return invalid(format!(
                "n_terms = {n_terms} outside 1..={}",
                basis.n_modes()
            ));
        }
        let t_min = 3.0 / basis.mu()[n_terms - 1];
        Ok(KernelEvaluator {
            basis,
            n_terms,
            t_min,
        })
    }

    pub fn with_all_modes(basis: Arc<SpectralBasis>) -> Result<Self> {
        let n = basis.n_modes();
        Self::new(basis, n)
    }

    pub fn basis(&self) -> &SpectralBasis {
        &self.basis
    }

    pub fn n_terms(&self) -> usize {
        self.n_terms
    }

    pub fn t_min(&self) -> f64 {
        self.t_min
    }

    fn check_time(&self, t: f64) -> Result<()> {
        if t.is_finite() && t >= self.t_min {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "t = {t} below trusted minimum {}",
                self.t_min
            )))
        }
    }

    /// Eigenvalue μ_n (1-based) beyond the stored range, extrapolated with the
    /// n^{α} growth law when the basis is too short.
    fn mu_beyond(&self, n: usize) -> f64 {
        let mu = self.basis.mu();
        if n <= mu.len() {
            return mu[n - 1];
        }
        if self.basis.provenance() == Provenance::Exact {
            return crate::spectral::exact_eigenvalue(n);
        }
        let last = mu.len();
        mu[last - 1] * (n as f64 / last as f64).powf(self.basis.alpha())
    }

    /// e^{-μ_{N+1}t} max‖Φ_n‖²_∞ / (1 - e^{-(μ_{N+2} - μ_{N+1})t}).
    pub fn tail_bound(&self, t: f64) -> f64 {
        let m1 = self.mu_beyond(self.n_terms + 1);
        let m2 = self.mu_beyond(self.n_terms + 2);
        let sup = if self.basis.provenance() == Provenance::Exact {
            1.0
        } else {
            self.basis.max_sup_norm_sq()
        };
        (-m1 * t).exp() * sup / (1.0 - (-(m2 - m1) * t).exp())
    }

    fn decay(&self, t: f64) -> DVector<f64> {
        DVector::from_iterator(
            self.n_terms,
            self.basis.mu()[..self.n_terms]
                .iter()
                .map(|m| (-m * t).exp()),
        )
    }

    /// p_D(t, x_i, x_j) for node indices.
    pub fn eval(&self, t: f64, i: usize, j: usize) -> Result<f64> {
        self.check_time(t)?;
        let phi = self.basis.phi();
        let mut s = 0.0;
        // symmetric in (i, j) term by term, so the result is bit-symmetric
        for n in 0..self.n_terms {
            s += (-self.basis.mu()[n] * t).exp() * (phi[(n, i)] * phi[(n, j)]);
        }
        Ok(s)
    }

    pub fn eval_with_tail(&self, t: f64, i: usize, j: usize) -> Result<KernelValue> {
        Ok(KernelValue {
            value: self.eval(t, i, j)?,
            tail: self.tail_bound(t),
        })
    }

    /// Full node-by-node matrix P with P_ij = p_D(t, x_i, x_j).
    pub fn kernel_matrix(&self, t: f64) -> Result<DMatrix<f64>> {
        self.check_time(t)?;
        let phi = self.basis.phi().rows(0, self.n_terms);
        let mut scaled = phi.into_owned();
        let e = self.decay(t);
        for n in 0..self.n_terms {
            scaled.row_mut(n).scale_mut(e[n]);
        }
        let mut m = phi.transpose() * scaled;
        // mirror so that P is bit-symmetric
        for i in 0..m.nrows() {
            for j in 0..i {
                m[(i, j)] = m[(j, i)];
            }
        }
        Ok(m)
    }

    /// Row p_D(t, x_i, ·) on all nodes.
    pub fn kernel_row(&self, t: f64, i: usize) -> Result<DVector<f64>> {
        self.check_time(t)?;
        let phi = self.basis.phi().rows(0, self.n_terms);
        let e = self.decay(t);
        let coeff = DVector::from_fn(self.n_terms, |n, _| e[n] * phi[(n, i)]);
        Ok(phi.transpose() * coeff)
    }

    /// |p(t+s, x, y) - h Σ_z p(t, x, z) p(s, z, y)|.
    pub fn semigroup_residual(&self, t: f64, s: f64, i: usize, j: usize) -> Result<f64> {
        let a = self.kernel_row(t, i)?;
        let b = self.kernel_row(s, j)?;
        let conv = self.basis.grid().h() * a.dot(&b);
        Ok((self.eval(t + s, i, j)? - conv).abs())
    }

    /// h Σ_{y in region} p(t, x, y).
    pub fn mass_integral(&self, t: f64, i: usize, region: Region) -> Result<f64> {
        region.validate()?;
        let row = self.kernel_row(t, i)?;
        let g = self.basis.grid();
        Ok(g.h() * region.nodes(g).iter().map(|&k| row[k]).sum::<f64>())
    }

    /// h Σ_{y in region} p(t, x, y)².
    pub fn square_mass_integral(&self, t: f64, i: usize, region: Region) -> Result<f64> {
        region.validate()?;
        let row = self.kernel_row(t, i)?;
        let g = self.basis.grid();
        Ok(g.h()
            * region
                .nodes(g)
                .iter()
                .map(|&k| row[k] * row[k])
                .sum::<f64>())
    }

    /// h² Σ_{y,z in region} p(t, x, y) p(t, w, z) f̄(y, z) with f̄ the
    /// cell-averaged covariance.
    pub fn correlated_double_integral(
        &self,
        t: f64,
        i: usize,
        k: usize,
        cov: &SpatialCovariance,
        region: Region,
    ) -> Result<f64> {
        region.validate()?;
        let g = self.basis.grid();
        if cov.grid().n_cells() != g.n_cells() {
            return invalid("covariance grid does not match the basis grid");
        }
        match cov.model() {
            CovarianceModel::White => {}
            m @ CovarianceModel::Riesz { .. } => {
                if !hypothesis_h0_check(m, self.basis.alpha(), 1) {
                    return invalid(format!("'{m}' violates 0 < β < α ∧ d"));
                }
            }
            m => return invalid(format!("no double integral for '{m}'")),
        }
        let px = self.kernel_row(t, i)?;
        let pw = self.kernel_row(t, k)?;
        let nodes = region.nodes(g);
        let h = g.h();
        if cov.is_white() {
            let s: f64 = nodes.iter().map(|&y| px[y] * pw[y]).sum();
            return Ok(h * s);
        }
        let m = cov.matrix();
        let mut total = 0.0;
        for &y in &nodes {
            let mut inner = 0.0;
            for &z in &nodes {
                inner += m[(y, z)] * pw[z];
            }
            total += px[y] * inner;
        }
        Ok(h * h * total)
    }
}

/// Constants of the two-sided kernel bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundConstants {
    #[serde(rename = "C")]
    pub c: f64,
    pub c1: f64,
    pub c2: f64,
}

impl BoundConstants {
    pub fn new(c: f64, c1: f64, c2: f64) -> Result<Self> {
        if !(c >= 1.0 && c1 > 0.0 && c2 >= c1) {
            return invalid(format!(
                "need C >= 1 and 0 < c1 <= c2, got ({c}, {c1}, {c2})"
            ));
        }
        Ok(BoundConstants { c, c1, c2 })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Side {
    Upper,
    Lower,
}

fn side_factor(c: f64, side: Side) -> f64 {
    match side {
        Side::Upper => c,
        Side::Lower => 1.0 / c,
    }
}

/// Gaussian-regime bound (α = 2, d = 1). `phi1_x`, `phi1_y` are Φ_1 values.
pub fn bound_gaussian(
    t: f64,
    x: f64,
    y: f64,
    phi1_x: f64,
    phi1_y: f64,
    mu1: f64,
    consts: &BoundConstants,
    side: Side,
) -> f64 {
    let c = match side {
        Side::Upper => consts.c1,
        Side::Lower => consts.c2,
    };
    let tm = t.min(1.0);
    side_factor(consts.c, side)
        * (phi1_x * phi1_y / tm).min(1.0)
        * (-mu1 * t).exp()
        * (-c * (x - y).powi(2) / t).exp()
        / t.sqrt().min(1.0)
}

/// Stable-regime bound (1 < α < 2, d = 1).
pub fn bound_stable(
    t: f64,
    x: f64,
    y: f64,
    phi1_x: f64,
    phi1_y: f64,
    mu1: f64,
    alpha: f64,
    consts: &BoundConstants,
    side: Side,
) -> f64 {
    let f = side_factor(consts.c, side) * (-mu1 * t).exp();
    if t >= 1.0 {
        return f * phi1_x * phi1_y;
    }
    let st = t.sqrt();
    let dist = (x - y).abs();
    let profile = if dist > 0.0 {
        t.powf(-1.0 / alpha).min(t / dist.powf(alpha + 1.0))
    } else {
        t.powf(-1.0 / alpha)
    };
    f * (phi1_x / st).min(1.0) * (phi1_y / st).min(1.0) * profile
}

/// Node indices closest to the default certification points.
pub fn certification_nodes(basis: &SpectralBasis) -> Vec<usize> {
    let g = basis.grid();
    let mut v: Vec<usize> = CERT_POINTS.iter().map(|&x| g.nearest_node(x)).collect();
    v.dedup();
    v
}

fn bound_at(
    ke: &KernelEvaluator,
    t: f64,
    i: usize,
    j: usize,
    consts: &BoundConstants,
    side: Side,
) -> f64 {
    let b = ke.basis();
    let g = b.grid();
    let (x, y) = (g.node(i), g.node(j));
    let (px, py) = (b.value(0, i), b.value(0, j));
    if b.alpha() >= 2.0 {
        bound_gaussian(t, x, y, px, py, b.mu1(), consts, side)
    } else {
        bound_stable(t, x, y, px, py, b.mu1(), b.alpha(), consts, side)
    }
}

struct LatticePoint {
    t: f64,
    i: usize,
    j: usize,
    value: f64,
}

fn lattice_values(
    ke: &KernelEvaluator,
    times: &[f64],
    nodes: &[usize],
) -> Result<Vec<LatticePoint>> {
    let mut out = Vec::with_capacity(times.len() * nodes.len() * nodes.len());
    for &t in times {
        let p = ke.kernel_matrix(t)?;
        for &i in nodes {
            for &j in nodes {
                let value = p[(i, j)];
                if !(value > 0.0) {
                    return Err(Error::PropertyViolation(format!(
                        "kernel not positive at t={t}, nodes ({i},{j})"
                    )));
                }
                out.push(LatticePoint { t, i, j, value });
            }
        }
    }
    Ok(out)
}

/// Smallest C making both sides hold on the lattice for the given (c1, c2).
fn required_c(ke: &KernelEvaluator, lattice: &[LatticePoint], c1: f64, c2: f64) -> f64 {
    let unit = BoundConstants { c: 1.0, c1, c2 };
    lattice.iter().fold(1.0f64, |c, p| {
        let up = bound_at(ke, p.t, p.i, p.j, &unit, Side::Upper);
        let lo = bound_at(ke, p.t, p.i, p.j, &unit, Side::Lower);
        c.max(p.value / up).max(lo / p.value)
    })
}

/// Fits BoundConstants on a (t, node) lattice. For α = 2 the Gaussian rates are
/// chosen on a grid to minimize C; for α < 2 they play no role and are set to 1.
pub fn fit_bound_constants(
    ke: &KernelEvaluator,
    times: &[f64],
    nodes: &[usize],
) -> Result<BoundConstants> {
    let lattice = lattice_values(ke, times, nodes)?;
    if ke.basis().alpha() < 2.0 {
        return BoundConstants::new(required_c(ke, &lattice, 1.0, 1.0), 1.0, 1.0);
    }
    let mut best: Option<BoundConstants> = None;
    for a in 0..=23 {
        let c1 = 0.02 + 0.01 * a as f64;
        for b in 0..=25 {
            let c2 = 0.25 + 0.05 * b as f64;
            if c2 < c1 {
                continue;
            }
            let c = required_c(ke, &lattice, c1, c2);
            if best.map_or(true, |bc| c < bc.c) {
                best = Some(BoundConstants { c, c1, c2 });
            }
        }
    }
    let b = best.expect("non-empty search grid");
    BoundConstants::new(b.c, b.c1, b.c2)
}

/// Whether lower <= kernel <= upper holds at every lattice point.
pub fn sandwich_holds(
    ke: &KernelEvaluator,
    consts: &BoundConstants,
    times: &[f64],
    nodes: &[usize],
) -> Result<bool> {
    for &t in times {
        let p = ke.kernel_matrix(t)?;
        for &i in nodes {
            for &j in nodes {
                let v = p[(i, j)];
                let lo = bound_at(ke, t, i, j, consts, Side::Lower);
                let up = bound_at(ke, t, i, j, consts, Side::Upper);
                // relative slack for the rounding in the fitted constant
                if v < lo * (1.0 - 1e-12) || v > up * (1.0 + 1e-12) {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// One row of a certification report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CertificationRow {
    pub quantity: String,
    pub t: f64,
    pub x: f64,
    pub w: f64,
    pub value: f64,
    pub normalized: f64,
    pub fitted_constant: f64,
}

/// Outcome of one certification sweep.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub quantity: String,
    pub side: Side,
    pub fitted_constant: f64,
    pub min_normalized: f64,
    pub max_normalized: f64,
    pub ratio: f64,
    pub n_points: usize,
}

impl SweepSummary {
    pub fn finite_positive(&self) -> bool {
        self.n_points > 0
            && self.min_normalized > 0.0
            && self.max_normalized.is_finite()
            && self.ratio.is_finite()
    }
}

/// Settings for the certification sweeps.
#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub times: Vec<f64>,
    pub points: Vec<f64>,
    pub eps: f64,
    pub delta: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            times: CERT_TIMES.to_vec(),
            points: CERT_POINTS.to_vec(),
            eps: 0.25,
            delta: 0.1,
        }
    }
}

fn finish(quantity: &str, side: Side, rows: &mut [CertificationRow]) -> Result<SweepSummary> {
    if rows.is_empty() {
        return Err(Error::PropertyViolation(format!(
            "{quantity}: empty lattice"
        )));
    }
    let min = rows
        .iter()
        .map(|r| r.normalized)
        .fold(f64::INFINITY, f64::min);
    let max = rows
        .iter()
        .map(|r| r.normalized)
        .fold(f64::NEG_INFINITY, f64::max);
    let fitted = match side {
        Side::Upper => max,
        Side::Lower => min,
    };
    for r in rows.iter_mut() {
        r.fitted_constant = fitted;
    }
    Ok(SweepSummary {
        quantity: quantity.to_string(),
        side,
        fitted_constant: fitted,
        min_normalized: min,
        max_normalized: max,
        ratio: max / min,
        n_points: rows.len(),
    })
}

/// Runs the five mass / square-mass / correlated sweeps. `cov` drives the
/// correlated quantities; white noise uses exponent a = 1, Riesz uses a = β.
pub fn certification_sweeps(
    ke: &KernelEvaluator,
    cov: &SpatialCovariance,
    cfg: &SweepConfig,
) -> Result<(Vec<CertificationRow>, Vec<SweepSummary>)> {
    let b = ke.basis();
    let g = b.grid();
    let alpha = b.alpha();
    let mu1 = b.mu1();
    let shrunk = Region::Shrunk(cfg.eps);
    shrunk.validate()?;
    let mut nodes: Vec<usize> = cfg.points.iter().map(|&x| g.nearest_node(x)).collect();
    nodes.dedup();
    let inner: Vec<usize> = nodes
        .iter()
        .copied()
        .filter(|&k| g.in_shrunk(k, cfg.eps))
        .collect();
    let a = cov
        .model()
        .singularity_exponent()
        .ok_or_else(|| Error::InvalidArgument("sweeps need white or riesz noise".into()))?;

    let row = |q: &str, t, i: usize, k: usize, value: f64, normalized: f64| CertificationRow {
        quantity: q.to_string(),
        t,
        x: g.node(i),
        w: g.node(k),
        value,
        normalized,
        fitted_constant: f64::NAN,
    };

    let mut p11 = Vec::new();
    let mut p1 = Vec::new();
    let mut p2 = Vec::new();
    let mut p2bis = Vec::new();
    let mut p22 = Vec::new();
    for &t in &cfg.times {
        let e1 = (mu1 * t).exp();
        for &i in &nodes {
            let v = ke.mass_integral(t, i, Region::Full)?;
            p11.push(row("p11", t, i, i, v, e1 * v));
        }
        for &i in &inner {
            let v = ke.mass_integral(t, i, shrunk)?;
            p1.push(row("p1", t, i, i, v, e1 * v));
            let v = ke.square_mass_integral(t, i, shrunk)?;
            p2.push(row("p2", t, i, i, v, t.powf(1.0 / alpha) * e1 * e1 * v));
        }
        let reach = t.powf(1.0 / alpha);
        for &i in &inner {
            for &k in &inner {
                if (g.node(i) - g.node(k)).abs() > reach {
                    continue;
                }
                let v = ke.correlated_double_integral(t, i, k, cov, shrunk)?;
                p2bis.push(row("p2bis", t, i, k, v, t.powf(a / alpha) * e1 * e1 * v));
            }
        }
        let e22 = ((2.0 - cfg.delta) * mu1 * t).exp();
        for &i in &nodes {
            for &k in &nodes {
                let v = ke.correlated_double_integral(t, i, k, cov, Region::Full)?;
                p22.push(row("p22", t, i, k, v, t.powf(a / alpha) * e22 * v));
            }
        }
    }
    let mut summaries = Vec::new();
    let mut rows = Vec::new();
    for (name, side, mut set) in [
        ("p1", Side::Lower, p1),
        ("p2", Side::Lower, p2),
        ("p2bis", Side::Lower, p2bis),
        ("p11", Side::Upper, p11),
        ("p22", Side::Upper, p22),
    ] {
        summaries.push(finish(name, side, &mut set)?);
        rows.extend(set);
    }
    Ok((rows, summaries))
}

pub fn certification_csv(rows: &[CertificationRow]) -> String {
    let mut s = String::from("quantity,t,x,w,value,normalized,fitted_constant\n");
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{},{:.12e},{:.12e},{:.12e}\n",
            r.quantity, r.t, r.x, r.w, r.value, r.normalized, r.fitted_constant
        ));
    }
    s
}
