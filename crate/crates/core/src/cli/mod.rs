//! Experiment runner behind the `fracshe` binary.

pub mod config;
pub mod plot;
pub mod record;

use std::fmt::Write as _;
use std::path::PathBuf;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

pub use config::{parse_list, ExperimentConfig};
pub use record::{sha256_hex, verify_manifest, FileEntry, RunDir, RunRecord};

use crate::error::{Error, Result};
use crate::heatkernel::{
    certification_csv, certification_nodes, certification_sweeps, fit_bound_constants,
    sandwich_holds, BoundConstants, KernelEvaluator, Side, SweepConfig, SweepSummary, CERT_TIMES,
};
use crate::moments::{
    estimate_moments, excitation_index, lyapunov_fit, Aggregate, ExponentFit, MomentTable,
};
use crate::noise::{covariance_matrix, CovarianceModel};
use crate::secondmoment::{
    gronwall_verify, picard_chaos_terms, renewal_solve_white, simplex_integral, uniform_time_grid,
    volterra_solve_colored, GronwallReport, SecondMomentField,
};
use crate::solver::{dt_max, Simulation};
use crate::spectral::{check_eigenvalue_growth, check_first_eigenfunction_bound, GrowthFit};
use plot::{line_chart, Series};

#[derive(Debug, Parser)]
#[command(
    name = "fracshe",
    version,
    about = "Fractional stochastic heat equation experiments on (-1, 1)"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Monte Carlo moments and Lyapunov fits
    Simulate(Overrides),
    /// Deterministic second moments, chaos terms, simplex and Gronwall checks
    Oracle(Overrides),
    /// Heat-kernel bounds, sweeps and spectral checks
    Certify(Overrides),
    /// Write the spectral basis
    Basis(Overrides),
}

#[derive(Debug, Clone, Default, Args)]
pub struct Overrides {
    /// TOML config file; flags override its values
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// white | riesz:<beta>
    #[arg(long)]
    pub noise: Option<String>,
    /// comma-separated list
    #[arg(long)]
    pub lambda: Option<String>,
    #[arg(long)]
    pub paths: Option<usize>,
    /// comma-separated output times
    #[arg(long)]
    pub t: Option<String>,
    /// comma-separated moment orders
    #[arg(long)]
    pub p: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub eps: Option<f64>,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub modes: Option<usize>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

impl Overrides {
    pub fn resolve(&self) -> Result<ExperimentConfig> {
        let mut c = match &self.config {
            Some(p) => ExperimentConfig::from_file(p)?,
            None => ExperimentConfig::default(),
        };
        if let Some(v) = self.alpha {
            c.alpha = v;
        }
        if let Some(v) = &self.noise {
            c.noise = v.clone();
        }
        if let Some(v) = &self.lambda {
            c.lambda = parse_list(v)?;
        }
        if let Some(v) = self.paths {
            c.n_paths = v;
        }
        if let Some(v) = &self.t {
            c.t = parse_list(v)?;
        }
        if let Some(v) = &self.p {
            c.p = parse_list(v)?;
        }
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = self.eps {
            c.eps = v;
        }
        if let Some(v) = self.cells {
            c.n_cells = v;
            if self.modes.is_none() && c.n_modes >= v {
                c.n_modes = v - 1;
            }
        }
        if let Some(v) = self.modes {
            c.n_modes = v;
        }
        if let Some(v) = &self.out {
            c.out = v.clone();
        }
        c.validate()?;
        Ok(c)
    }
}

pub fn run(cli: &Cli) -> Result<RunRecord> {
    match &cli.command {
        Command::Simulate(o) => cmd_simulate(&o.resolve()?),
        Command::Oracle(o) => cmd_oracle(&o.resolve()?),
        Command::Certify(o) => cmd_certify(&o.resolve()?),
        Command::Basis(o) => cmd_basis(&o.resolve()?),
    }
}

#[derive(Debug, Clone, Serialize)]
struct FitRecord {
    lambda: f64,
    p: f64,
    side: Side,
    fit: Option<ExponentFit>,
    error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
struct FitsFile {
    fits: Vec<FitRecord>,
    /// slope of ln((rate + 2μ_1)/2) against ln λ from the p = 2 upper fits
    excitation_index: Option<f64>,
}

fn fit_all(tables: &[(f64, MomentTable)], ps: &[f64], window: (f64, f64), mu1: f64) -> FitsFile {
    let mut fits = Vec::new();
    for (lambda, table) in tables {
        for &p in ps {
            for side in [Side::Upper, Side::Lower] {
                let r = lyapunov_fit(table, p, *lambda, window, side);
                fits.push(FitRecord {
                    lambda: *lambda,
                    p,
                    side,
                    error: r.as_ref().err().map(|e| e.to_string()),
                    fit: r.ok(),
                });
            }
        }
    }
    let rates: Vec<(f64, f64)> = fits
        .iter()
        .filter(|f| f.p == 2.0 && f.side == Side::Upper && f.lambda > 0.0)
        .filter_map(|f| f.fit.map(|x| (f.lambda, x.rate)))
        .collect();
    FitsFile {
        excitation_index: excitation_index(&rates, mu1).ok(),
        fits,
    }
}

fn moment_plot(tables: &[(f64, MomentTable)], ps: &[f64]) -> String {
    let mut series = Vec::new();
    for (lambda, t) in tables {
        for &p in ps {
            series.push(Series {
                label: format!("λ={lambda} p={p}"),
                points: t
                    .series(p, *lambda, Aggregate::SupD)
                    .into_iter()
                    .map(|(t, v)| (t, v.ln()))
                    .collect(),
            });
        }
    }
    line_chart("sup over D of the p-th moment", "t", "log moment", &series)
}

fn rate_plot(fits: &FitsFile, mu1: f64) -> String {
    let points = fits
        .fits
        .iter()
        .filter(|f| f.p == 2.0 && f.side == Side::Upper && f.lambda > 0.0)
        .filter_map(|f| {
            f.fit
                .map(|x| (f.lambda.ln(), ((x.rate + 2.0 * mu1) / 2.0).ln()))
        })
        .collect();
    line_chart(
        "λ-part of the p = 2 rate",
        "log λ",
        "log((rate + 2μ1)/2)",
        &[Series {
            label: "upper".into(),
            points,
        }],
    )
}

fn concat_csv(tables: &[(f64, MomentTable)]) -> String {
    let mut out = String::new();
    for (i, (_, t)) in tables.iter().enumerate() {
        let csv = t.to_csv();
        if i == 0 {
            out.push_str(&csv);
        } else {
            out.push_str(csv.split_once('\n').map_or("", |x| x.1));
        }
    }
    out
}

pub fn cmd_simulate(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut dir = RunDir::create("simulate", cfg)?;
    let grid = cfg.grid()?;
    let basis = Arc::new(cfg.basis()?);
    let cov = Arc::new(covariance_matrix(&grid, &cfg.model()?)?);
    let sigma = cfg.sigma_spec()?;
    let u0 = cfg.initial()?;
    let nodes: Vec<usize> = (0..grid.n_cells()).collect();
    let mut tables = Vec::new();
    let mut blow_ups = 0usize;
    for &lambda in &cfg.lambda {
        let dt = cfg
            .dt
            .min(0.99 * dt_max(lambda, sigma.growth_constants().1, &cov));
        let sim = Simulation::new(
            basis.clone(),
            cov.clone(),
            sigma,
            lambda,
            &u0,
            &cfg.t,
            dt,
            cfg.seed,
        )?;
        let paths = sim.simulate_paths(cfg.n_paths as u64);
        for p in &paths {
            match p {
                Err(Error::BlowUp { .. }) => blow_ups += 1,
                Err(e) => return Err(e.clone()),
                Ok(_) => {}
            }
        }
        let table = estimate_moments(
            &paths, &grid, lambda, cfg.alpha, cfg.eps, &cfg.t, &nodes, &cfg.p,
        )?;
        dir.constant(format!("dt[lambda={lambda}]"), dt);
        tables.push((lambda, table));
    }
    dir.constant("blow_ups", blow_ups as f64);
    dir.constant("mu1", basis.mu1());
    if blow_ups > 0 {
        dir.notes.push(format!(
            "{blow_ups} paths blew up; affected rows carry stderr = inf"
        ));
    }
    dir.write("moments.csv", &concat_csv(&tables))?;
    let fits = fit_all(
        &tables,
        &cfg.p,
        (cfg.t[0], cfg.t[cfg.t.len() - 1]),
        basis.mu1(),
    );
    for f in &fits.fits {
        if let Some(x) = f.fit {
            dir.constant(
                format!("rate[lambda={},p={},{:?}]", f.lambda, f.p, f.side),
                x.rate,
            );
        }
    }
    dir.write_json("fits.json", &fits)?;
    dir.write("moments.svg", &moment_plot(&tables, &cfg.p))?;
    if cfg.lambda.len() > 1 {
        dir.write("rates.svg", &rate_plot(&fits, basis.mu1()))?;
    }
    dir.finish()
}

fn field_csv(field: &SecondMomentField, indices: &[usize]) -> String {
    let mut s = String::from("t,x,w,second_moment\n");
    for &ti in indices {
        for (j, x) in field.x().iter().enumerate() {
            let _ = writeln!(
                s,
                "{},{},{},{:.12e}",
                field.times()[ti],
                x,
                x,
                field.value(ti, j)
            );
        }
    }
    s
}

pub fn cmd_oracle(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut dir = RunDir::create("oracle", cfg)?;
    let grid = cfg.grid()?;
    let basis = cfg.basis()?;
    let model = cfg.model()?;
    let cov = covariance_matrix(&grid, &model)?;
    let sigma = cfg.sigma_spec()?;
    let u0 = cfg.initial()?.values(&basis);
    let t_end = cfg.t[cfg.t.len() - 1];
    let n_steps = (t_end / cfg.oracle_dt).ceil().max(1.0) as usize;
    let t_grid = uniform_time_grid(t_end, n_steps);
    let nodes: Vec<usize> = (0..grid.n_cells()).collect();
    let big_l = sigma.growth_constants().1;
    if !sigma.is_linear() {
        dir.notes.push(format!(
            "sigma replaced by its upper linear bound with L = {big_l}"
        ));
    }

    let mut tables = Vec::new();
    for &lambda in &cfg.lambda {
        let field = match model {
            CovarianceModel::White => {
                renewal_solve_white(&basis, &u0, lambda, big_l, &t_grid, &nodes)?
            }
            _ => volterra_solve_colored(&basis, &cov, &u0, lambda * big_l, &t_grid, &nodes)?
                .field()
                .clone(),
        };
        let indices: Vec<usize> = cfg.t.iter().map(|&t| field.time_index(t)).collect();
        dir.write(
            &format!("oracle_l{lambda}.csv"),
            &field_csv(&field, &indices),
        )?;
        tables.push((
            lambda,
            MomentTable::from_field(&field, lambda, cfg.alpha, cfg.eps)?,
        ));
    }
    let fits = fit_all(&tables, &[2.0], (cfg.t[0], t_end), basis.mu1());
    for f in &fits.fits {
        if let Some(x) = f.fit {
            dir.constant(format!("rate[lambda={},{:?}]", f.lambda, f.side), x.rate);
        }
    }
    dir.write_json("fits.json", &fits)?;
    if cfg.lambda.len() > 1 {
        dir.write("rates.svg", &rate_plot(&fits, basis.mu1()))?;
    }
    dir.write("oracle.svg", &moment_plot(&tables, &[2.0]))?;

    // chaos terms at the node nearest 0 for the first λ
    let limits_ok = grid.n_cells() <= 128 && basis.n_modes() <= 48;
    if limits_ok {
        let lambda = cfg.lambda[0] * big_l;
        let centre = grid.nearest_node(0.0);
        let rep = picard_chaos_terms(&basis, &cov, &u0, lambda, &t_grid, &[centre], 6)?;
        let mut s = String::from("t,x,n,value\n");
        for &t in &cfg.t {
            let ti = t_grid
                .iter()
                .enumerate()
                .min_by(|a, b| (a.1 - t).abs().total_cmp(&(b.1 - t).abs()))
                .map_or(0, |x| x.0);
            for term in &rep.terms {
                let _ = writeln!(
                    s,
                    "{},{},{},{:.12e}",
                    t_grid[ti],
                    grid.node(centre),
                    term.n,
                    term.values[ti][0]
                );
            }
        }
        dir.write("chaos.csv", &s)?;
        dir.constant("chaos_ratio", rep.ratio);
        dir.constant("chaos_tail_bound", rep.tail_bound);
    } else {
        dir.notes
            .push("chaos terms skipped: grid exceeds 128 cells or 48 modes".into());
    }

    let mut s = String::from("n,a,b,t,value\n");
    for n in 1..=4 {
        for (a, b) in [(0.0, 0.5), (0.5, 0.5), (0.25, 0.25)] {
            let _ = writeln!(s, "{n},{a},{b},1,{:.15e}", simplex_integral(n, a, b, 1.0)?);
        }
    }
    dir.write("simplex.csv", &s)?;

    let gron_grid: Vec<f64> = (1..=50).map(|i| 0.1 * i as f64).collect();
    let mut reports: Vec<GronwallReport> = Vec::new();
    for rho in [0.5, 2.0 / 3.0, 1.0] {
        for side in [Side::Upper, Side::Lower] {
            reports.push(gronwall_verify(rho, 1.0, 1.0, &gron_grid, side)?);
        }
    }
    dir.write_json("gronwall.json", &reports)?;
    dir.finish()
}

#[derive(Debug, Serialize)]
struct CertifySummary {
    bounds: BoundConstants,
    sandwich_holds: bool,
    sweeps: Vec<SweepSummary>,
    eigen_growth: Option<GrowthFit>,
    first_eigenfunction_c: f64,
}

pub fn cmd_certify(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut dir = RunDir::create("certify", cfg)?;
    let grid = cfg.grid()?;
    let basis = Arc::new(cfg.basis()?);
    let cov = covariance_matrix(&grid, &cfg.model()?)?;
    let ke = KernelEvaluator::with_all_modes(basis.clone())?;
    let nodes = certification_nodes(&basis);
    let bounds = fit_bound_constants(&ke, &CERT_TIMES, &nodes)?;
    let holds = sandwich_holds(&ke, &bounds, &CERT_TIMES, &nodes)?;
    let sweep_cfg = SweepConfig {
        eps: cfg.eps,
        ..SweepConfig::default()
    };
    let (rows, sweeps) = certification_sweeps(&ke, &cov, &sweep_cfg)?;
    let eigen_growth = match check_eigenvalue_growth(&basis) {
        Ok(g) => Some(g),
        Err(e) => {
            dir.notes
                .push(format!("eigenvalue growth not checked: {e}"));
            None
        }
    };
    let c_fit = check_first_eigenfunction_bound(&basis)?;
    dir.write("certification.csv", &certification_csv(&rows))?;
    dir.constant("bound_C", bounds.c);
    dir.constant("bound_c1", bounds.c1);
    dir.constant("bound_c2", bounds.c2);
    dir.constant("first_eigenfunction_c", c_fit);
    if let Some(g) = eigen_growth {
        dir.constant("eigen_growth_exponent", g.exponent);
    }
    for s in &sweeps {
        dir.constant(format!("sweep[{}]", s.quantity), s.fitted_constant);
    }
    let bad: Vec<String> = sweeps
        .iter()
        .filter(|s| !s.finite_positive())
        .map(|s| s.quantity.clone())
        .collect();
    let summary = CertifySummary {
        bounds,
        sandwich_holds: holds,
        sweeps,
        eigen_growth,
        first_eigenfunction_c: c_fit,
    };
    dir.write_json("certify.json", &summary)?;
    let rec = dir.finish()?;
    if !holds {
        return Err(Error::PropertyViolation(
            "kernel bounds fail on the certification lattice".into(),
        ));
    }
    if !bad.is_empty() {
        return Err(Error::PropertyViolation(format!(
            "degenerate sweeps: {}",
            bad.join(", ")
        )));
    }
    Ok(rec)
}

pub fn cmd_basis(cfg: &ExperimentConfig) -> Result<RunRecord> {
    let mut dir = RunDir::create("basis", cfg)?;
    let basis = cfg.basis()?;
    dir.write("basis.csv", &basis.to_csv())?;
    dir.constant("mu1", basis.mu1());
    dir.constant("orthonormality_residual", basis.orthonormality_residual());
    let spectrum = Series {
        label: "μ_n".into(),
        points: basis
            .mu()
            .iter()
            .enumerate()
            .map(|(i, m)| (((i + 1) as f64).ln(), m.ln()))
            .collect(),
    };
    dir.write(
        "spectrum.svg",
        &line_chart("eigenvalues", "log n", "log μ_n", &[spectrum]),
    )?;
    dir.finish()
}
