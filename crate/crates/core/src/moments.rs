//! Monte Carlo moment estimates, sup/inf aggregates, Lyapunov and excitation
//! fits, and the scalar-noise calibration.

use std::fmt;
use std::fmt::Write as _;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::Grid1D;
use crate::heatkernel::Side;
use crate::numerics::fit_line;
use crate::rng::path_rng;
use crate::secondmoment::SecondMomentField;
use crate::solver::FieldState;
use crate::spectral::SpectralBasis;

pub const N_BATCHES: usize = 20;
pub const MIN_PATHS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum Aggregate {
    #[serde(rename = "point")]
    Point,
    #[serde(rename = "sup_D")]
    SupD,
    #[serde(rename = "inf_Deps")]
    InfDeps,
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregate::Point => "point",
            Aggregate::SupD => "sup_D",
            Aggregate::InfDeps => "inf_Deps",
        })
    }
}

impl FromStr for Aggregate {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "point" => Ok(Aggregate::Point),
            "sup_D" => Ok(Aggregate::SupD),
            "inf_Deps" => Ok(Aggregate::InfDeps),
            _ => invalid(format!("unknown aggregate '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentRow {
    pub t: f64,
    /// node of the row; for aggregates, the node attaining the sup / inf
    pub x: f64,
    pub p: f64,
    pub lambda: f64,
    pub estimate: f64,
    /// infinite when some path blew up
    pub stderr: f64,
    pub n_paths: usize,
    pub aggregate: Aggregate,
}

impl MomentRow {
    pub fn reliable(&self) -> bool {
        self.stderr.is_finite()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MomentTable {
    alpha: f64,
    eps: f64,
    rows: Vec<MomentRow>,
}

/// Streaming log-sum-exp of values and of their squares.
#[derive(Debug, Clone, Copy)]
struct LogAccumulator {
    max: f64,
    sum: f64,
    sum_sq: f64,
    count: usize,
}

impl LogAccumulator {
    fn new() -> Self {
        LogAccumulator {
            max: f64::NEG_INFINITY,
            sum: 0.0,
            sum_sq: 0.0,
            count: 0,
        }
    }

    /// Adds e^l.
    fn add(&mut self, l: f64) {
        self.count += 1;
        if l == f64::NEG_INFINITY {
            return;
        }
        if l > self.max {
            let r = (self.max - l).exp();
            self.sum = self.sum * r + 1.0;
            self.sum_sq = self.sum_sq * r * r + 1.0;
            self.max = l;
        } else {
            let r = (l - self.max).exp();
            self.sum += r;
            self.sum_sq += r * r;
        }
    }

    /// ln of the sample mean.
    fn ln_mean(&self) -> f64 {
        if self.sum == 0.0 {
            return f64::NEG_INFINITY;
        }
        self.max + (self.sum / self.count as f64).ln()
    }

    /// (mean, standard error) from the per-sample spread.
    fn mean_and_stderr(&self) -> (f64, f64) {
        if self.sum == 0.0 {
            return (0.0, 0.0);
        }
        let n = self.count as f64;
        let m = self.sum / n;
        let var = ((self.sum_sq / n - m * m) * n / (n - 1.0)).max(0.0);
        let scale = self.max.exp();
        (m * scale, (var / n).sqrt() * scale)
    }
}

/// Batched-mean estimates of E|u_t(x)|^p.
///
/// Paths are split into 20 contiguous batches by path order; the estimate is
/// the mean of batch means and the standard error their spread. Point rows
/// are emitted for `nodes`, aggregates over all grid nodes.
#[allow(clippy::too_many_arguments)]
pub fn estimate_moments(
    paths: &[Result<Vec<FieldState>>],
    grid: &Grid1D,
    lambda: f64,
    alpha: f64,
    eps: f64,
    times: &[f64],
    nodes: &[usize],
    p_list: &[f64],
) -> Result<MomentTable> {
    if paths.len() < MIN_PATHS {
        return invalid(format!(
            "need at least {MIN_PATHS} paths, got {}",
            paths.len()
        ));
    }
    if p_list.iter().any(|p| !(*p >= 2.0)) {
        return invalid("moment orders must be >= 2");
    }
    if !(eps > 0.0 && eps < 0.5) {
        return invalid(format!("eps must lie in (0, 1/2), got {eps}"));
    }
    let n = grid.n_cells();
    if nodes.iter().any(|&k| k >= n) {
        return invalid("node index outside the grid");
    }
    let ok: Vec<&Vec<FieldState>> = paths.iter().filter_map(|p| p.as_ref().ok()).collect();
    let blown = ok.len() < paths.len();
    if ok.len() < N_BATCHES * 2 {
        return Err(Error::NumericFailure(format!(
            "only {} of {} paths finished",
            ok.len(),
            paths.len()
        )));
    }
    let ti_of: Vec<usize> = times
        .iter()
        .map(|&t| {
            ok[0]
                .iter()
                .position(|s| (s.t - t).abs() <= 1e-12 * t.abs().max(1.0))
                .ok_or_else(|| Error::InvalidArgument(format!("time {t} not among path snapshots")))
        })
        .collect::<Result<_>>()?;
    let shrunk = grid.shrunk_nodes(eps);
    if shrunk.is_empty() {
        return invalid("D_eps contains no grid node");
    }

    let n_ok = ok.len();
    let mut rows = Vec::new();
    for (&t, &ti) in times.iter().zip(&ti_of) {
        for &p in p_list {
            let mut est = vec![0.0; n];
            let mut se = vec![0.0; n];
            for k in 0..n {
                let mut batches = Vec::with_capacity(N_BATCHES);
                for b in 0..N_BATCHES {
                    let mut acc = LogAccumulator::new();
                    for path in &ok[b * n_ok / N_BATCHES..(b + 1) * n_ok / N_BATCHES] {
                        let u = path[ti].values[k].abs();
                        acc.add(p * u.ln());
                    }
                    batches.push(acc.ln_mean());
                }
                let mut outer = LogAccumulator::new();
                for &l in &batches {
                    outer.add(l);
                }
                let (m, s) = outer.mean_and_stderr();
                est[k] = m;
                se[k] = if blown { f64::INFINITY } else { s };
            }
            let row = |k: usize, aggregate| MomentRow {
                t,
                x: grid.node(k),
                p,
                lambda,
                estimate: est[k],
                stderr: se[k],
                n_paths: n_ok,
                aggregate,
            };
            for &k in nodes {
                rows.push(row(k, Aggregate::Point));
            }
            let sup = (0..n)
                .max_by(|&a, &b| est[a].total_cmp(&est[b]))
                .unwrap_or(0);
            let inf = shrunk
                .iter()
                .copied()
                .min_by(|&a, &b| est[a].total_cmp(&est[b]))
                .unwrap_or(0);
            rows.push(row(sup, Aggregate::SupD));
            rows.push(row(inf, Aggregate::InfDeps));
        }
    }
    Ok(MomentTable { alpha, eps, rows })
}

impl MomentTable {
    pub fn from_rows(alpha: f64, eps: f64, rows: Vec<MomentRow>) -> Self {
        MomentTable { alpha, eps, rows }
    }

    /// p = 2 table from a deterministic field; aggregates range over the
    /// field's nodes, so pass all grid nodes for true sup_D / inf_{D_ε}.
    pub fn from_field(
        field: &SecondMomentField,
        lambda: f64,
        alpha: f64,
        eps: f64,
    ) -> Result<Self> {
        if !(eps > 0.0 && eps < 0.5) {
            return invalid(format!("eps must lie in (0, 1/2), got {eps}"));
        }
        let x = field.x();
        let shrunk: Vec<usize> = (0..x.len()).filter(|&j| x[j].abs() <= 1.0 - eps).collect();
        if shrunk.is_empty() {
            return invalid("no field node lies in D_eps");
        }
        let mut rows = Vec::new();
        for (ti, &t) in field.times().iter().enumerate() {
            let v: Vec<f64> = (0..x.len()).map(|j| field.value(ti, j)).collect();
            let row = |j: usize, aggregate| MomentRow {
                t,
                x: x[j],
                p: 2.0,
                lambda,
                estimate: v[j],
                stderr: 0.0,
                n_paths: 0,
                aggregate,
            };
            for j in 0..x.len() {
                rows.push(row(j, Aggregate::Point));
            }
            let sup = (0..x.len())
                .max_by(|&a, &b| v[a].total_cmp(&v[b]))
                .unwrap_or(0);
            let inf = shrunk
                .iter()
                .copied()
                .min_by(|&a, &b| v[a].total_cmp(&v[b]))
                .unwrap_or(0);
            rows.push(row(sup, Aggregate::SupD));
            rows.push(row(inf, Aggregate::InfDeps));
        }
        Ok(MomentTable { alpha, eps, rows })
    }

    pub fn rows(&self) -> &[MomentRow] {
        &self.rows
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn all_reliable(&self) -> bool {
        self.rows.iter().all(MomentRow::reliable)
    }

    /// Point row nearest to (t, x) for order p.
    pub fn point(&self, t: f64, x: f64, p: f64) -> Option<&MomentRow> {
        self.rows
            .iter()
            .filter(|r| r.aggregate == Aggregate::Point && r.p == p)
            .min_by(|a, b| {
                let da = (a.t - t).abs() + (a.x - x).abs();
                let db = (b.t - t).abs() + (b.x - x).abs();
                da.total_cmp(&db)
            })
    }

    /// Time series (t, estimate) of an aggregate, sorted by t.
    pub fn series(&self, p: f64, lambda: f64, aggregate: Aggregate) -> Vec<(f64, f64)> {
        let mut v: Vec<(f64, f64)> = self
            .rows
            .iter()
            .filter(|r| r.aggregate == aggregate && r.p == p && r.lambda == lambda)
            .map(|r| (r.t, r.estimate))
            .collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0));
        v
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,p,lambda,estimate,stderr,n_paths,aggregate\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{},{},{},{:.12e},{:.6e},{},{}",
                r.t, r.x, r.p, r.lambda, r.estimate, r.stderr, r.n_paths, r.aggregate
            );
        }
        s
    }

    pub fn from_csv(text: &str, alpha: f64, eps: f64) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next().map(str::trim) != Some("t,x,p,lambda,estimate,stderr,n_paths,aggregate") {
            return invalid("unexpected moments CSV header");
        }
        let num = |s: &str| -> Result<f64> {
            match s.trim() {
                "inf" => Ok(f64::INFINITY),
                v => v
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad number '{v}'"))),
            }
        };
        let mut rows = Vec::new();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 8 {
                return invalid(format!("expected 8 fields in '{line}'"));
            }
            rows.push(MomentRow {
                t: num(f[0])?,
                x: num(f[1])?,
                p: num(f[2])?,
                lambda: num(f[3])?,
                estimate: num(f[4])?,
                stderr: num(f[5])?,
                n_paths: f[6]
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad count '{}'", f[6])))?,
                aggregate: f[7].trim().parse()?,
            });
        }
        Ok(MomentTable { alpha, eps, rows })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ExponentFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub window: (f64, f64),
    pub p: f64,
    pub lambda: f64,
    pub aggregate: Aggregate,
}

/// Least squares of ln(moment) against t. Upper fits use sup_D; lower fits use
/// inf_{D_ε} and start no earlier than 2 λ^{-2α/(α-1)}.
pub fn lyapunov_fit(
    table: &MomentTable,
    p: f64,
    lambda: f64,
    window: (f64, f64),
    side: Side,
) -> Result<ExponentFit> {
    let (aggregate, t_lo) = match side {
        Side::Upper => (Aggregate::SupD, window.0),
        Side::Lower => {
            let a = table.alpha;
            let start = if lambda > 0.0 {
                2.0 * lambda.powf(-2.0 * a / (a - 1.0))
            } else {
                0.0
            };
            (Aggregate::InfDeps, window.0.max(start))
        }
    };
    let pts: Vec<(f64, f64)> = table
        .series(p, lambda, aggregate)
        .into_iter()
        .filter(|(t, _)| *t >= t_lo && *t <= window.1)
        .collect();
    if pts.len() < 4 {
        return Err(Error::FitUndefined(format!(
            "{} time points in [{t_lo}, {}], need 4",
            pts.len(),
            window.1
        )));
    }
    if pts.iter().any(|(_, v)| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::FitUndefined(
            "nonpositive or non-finite estimate in window".into(),
        ));
    }
    let ts: Vec<f64> = pts.iter().map(|p| p.0).collect();
    let ls: Vec<f64> = pts.iter().map(|p| p.1.ln()).collect();
    let f = fit_line(&ts, &ls)?;
    Ok(ExponentFit {
        rate: f.slope,
        intercept: f.intercept,
        r_squared: f.r_squared,
        window: (ts[0], ts[ts.len() - 1]),
        p,
        lambda,
        aggregate,
    })
}

/// Slope of ln((rate + 2μ_1)/2) against ln λ over `(λ, p = 2 rate)` pairs.
pub fn excitation_index(rates: &[(f64, f64)], mu1: f64) -> Result<f64> {
    if rates.len() < 4 {
        return Err(Error::FitUndefined(format!(
            "need 4 λ values, got {}",
            rates.len()
        )));
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for &(l, r) in rates {
        let part = (r + 2.0 * mu1) / 2.0;
        if !(l > 0.0 && part > 0.0) {
            return Err(Error::FitUndefined(format!(
                "nonpositive corrected rate {part} at λ = {l}"
            )));
        }
        xs.push(l.ln());
        ys.push(part.ln());
    }
    Ok(fit_line(&xs, &ys)?.slope)
}

/// Result of the scalar-noise calibration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CalibrationFit {
    pub fit: ExponentFit,
    /// first mode (1-based) with a nonzero coefficient
    pub k0: usize,
    /// λ² - 2μ_{k0}
    pub target: f64,
}

/// du = Δu dt + λ u dW_t with one scalar Brownian motion, solved exactly per
/// mode: a_n(t) = a_n(0) e^{-μ_n t} e^{λ W_t - λ² t / 2}. Fits the growth rate
/// of E‖u_t‖² on `t_grid` by Monte Carlo.
pub fn space_independent_calibration(
    basis: &SpectralBasis,
    lambda: f64,
    u0: &[f64],
    t_grid: &[f64],
    n_paths: usize,
    seed: u64,
) -> Result<CalibrationFit> {
    if u0.len() != basis.grid().n_cells() {
        return invalid("u0 length does not match the grid");
    }
    if t_grid.len() < 4 || t_grid[0] <= 0.0 || t_grid.windows(2).any(|w| w[1] <= w[0]) {
        return invalid("need at least 4 strictly increasing positive times");
    }
    if n_paths < MIN_PATHS {
        return invalid(format!("need at least {MIN_PATHS} paths"));
    }
    let a0 = basis.project(u0);
    let amax = a0.amax();
    let k0 = a0
        .iter()
        .position(|a| a.abs() > 1e-10 * amax)
        .ok_or_else(|| Error::InvalidArgument("u0 projects to zero".into()))?;
    let mu = basis.mu();
    // ‖u_t‖² = e^{2λW_t - λ²t} Σ a_n² e^{-2μ_n t}
    let ln_det: Vec<f64> = t_grid
        .iter()
        .map(|&t| {
            let s: f64 = a0
                .iter()
                .zip(mu)
                .map(|(a, m)| a * a * (-2.0 * m * t).exp())
                .sum();
            s.ln()
        })
        .collect();
    let mut accs = vec![LogAccumulator::new(); t_grid.len()];
    for path in 0..n_paths {
        let mut rng = path_rng(seed, path as u64);
        let (mut w, mut prev) = (0.0, 0.0);
        for (i, &t) in t_grid.iter().enumerate() {
            let z: f64 = rng.sample(StandardNormal);
            w += z * (t - prev).sqrt();
            prev = t;
            accs[i].add(2.0 * lambda * w - lambda * lambda * t);
        }
    }
    let ls: Vec<f64> = accs
        .iter()
        .zip(&ln_det)
        .map(|(a, d)| a.ln_mean() + d)
        .collect();
    let f = fit_line(t_grid, &ls)?;
    Ok(CalibrationFit {
        fit: ExponentFit {
            rate: f.slope,
            intercept: f.intercept,
            r_squared: f.r_squared,
            window: (t_grid[0], t_grid[t_grid.len() - 1]),
            p: 2.0,
            lambda,
            aggregate: Aggregate::Point,
        },
        k0: k0 + 1,
        target: lambda * lambda - 2.0 * mu[k0],
    })
}
