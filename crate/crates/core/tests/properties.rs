use std::sync::Arc;

use proptest::prelude::*;

use fracshe::cli::ExperimentConfig;
use fracshe::heatkernel::{BoundConstants, KernelEvaluator};
use fracshe::moments::MomentTable;
use fracshe::noise::{covariance_matrix, CovarianceModel};
use fracshe::secondmoment::{
    ln_mittag_leffler, picard_chaos_terms, renewal_solve_white, simplex_integral, uniform_time_grid,
};
use fracshe::solver::SigmaSpec;
use fracshe::spectral::{exact_basis_interval, fractional_laplacian_matrix, numeric_basis};
use fracshe::Grid1D;

fn cfg() -> ProptestConfig {
    ProptestConfig::with_cases(32)
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn grid_is_symmetric(n in 1usize..600) {
        let g = Grid1D::new(n).unwrap();
        prop_assert!((g.h() * n as f64 - 2.0).abs() < 1e-12);
        for k in 0..n {
            prop_assert_eq!(g.node(k), -g.node(n - 1 - k));
        }
        prop_assert!(g.nodes().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn nearest_node_is_nearest(n in 2usize..300, x in -1.0f64..1.0) {
        let g = Grid1D::new(n).unwrap();
        let k = g.nearest_node(x);
        let d = (g.node(k) - x).abs();
        prop_assert!(g.nodes().iter().all(|y| (y - x).abs() >= d - 1e-12));
    }

    #[test]
    fn exact_basis_orthonormal(n_cells in 16usize..200, frac in 0.1f64..0.9) {
        let g = Grid1D::new(n_cells).unwrap();
        let nm = ((n_cells as f64 * frac) as usize).max(1);
        let b = exact_basis_interval(nm, &g).unwrap();
        prop_assert!(b.orthonormality_residual() < 1e-10);
        prop_assert!((0..n_cells).all(|k| b.value(0, k) > 0.0));
        prop_assert!(b.mu().windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn bound_constants_ordering(c in 0.0f64..5.0, c1 in -1.0f64..3.0, c2 in -1.0f64..3.0) {
        let ok = BoundConstants::new(c, c1, c2).is_ok();
        prop_assert_eq!(ok, c >= 1.0 && c1 > 0.0 && c2 >= c1);
    }

    #[test]
    fn pinched_sigma_bounds(l in 0.05f64..2.0, extra in 0.0f64..3.0, x in -50.0f64..50.0) {
        let s = SigmaSpec::Pinched { l, big_l: l + extra };
        prop_assert!(s.validate().is_ok());
        let (lo, hi) = s.growth_constants();
        let v = s.eval(x).abs();
        prop_assert!(lo * x.abs() <= v * (1.0 + 1e-12));
        prop_assert!(v <= hi * x.abs() * (1.0 + 1e-12));
    }

    #[test]
    fn simplex_time_scaling(n in 1usize..6, a in 0.0f64..0.9, b in 0.0f64..0.9, t in 0.1f64..4.0, s in 0.2f64..3.0) {
        let v1 = simplex_integral(n, a, b, t).unwrap();
        let v2 = simplex_integral(n, a, b, s * t).unwrap();
        let power = n as f64 * (1.0 - b) - a;
        prop_assert!(v1 > 0.0);
        prop_assert!((v2 / v1 / s.powf(power) - 1.0).abs() < 1e-10);
    }

    #[test]
    fn simplex_rejects_nonintegrable(n in 1usize..6, a in 1.0f64..3.0, b in 0.0f64..0.9) {
        prop_assert!(simplex_integral(n, a, b, 1.0).is_err());
        prop_assert!(simplex_integral(n, b, a, 1.0).is_err());
    }

    #[test]
    fn mittag_leffler_increasing(rho in 0.3f64..1.0, z in 0.0f64..50.0, dz in 0.01f64..5.0) {
        let a = ln_mittag_leffler(rho, z).unwrap();
        let b = ln_mittag_leffler(rho, z + dz).unwrap();
        prop_assert!(b > a);
        prop_assert!(ln_mittag_leffler(rho, -1.0).is_err());
    }

    #[test]
    fn config_alpha_range(alpha in 0.5f64..2.5) {
        let c = ExperimentConfig { alpha, ..ExperimentConfig::default() };
        prop_assert_eq!(c.validate().is_ok(), alpha > 1.0 && alpha <= 2.0);
    }

    #[test]
    fn config_eps_range(eps in -0.2f64..0.8) {
        let c = ExperimentConfig { eps, ..ExperimentConfig::default() };
        prop_assert_eq!(c.validate().is_ok(), eps > 0.0 && eps < 0.5);
    }

    #[test]
    fn config_toml_roundtrip(seed in any::<u64>(), lambda in 0.0f64..10.0, n_paths in 1usize..100_000) {
        let c = ExperimentConfig { seed, lambda: vec![lambda], n_paths, ..ExperimentConfig::default() };
        let back = ExperimentConfig::from_toml(&c.to_toml()).unwrap();
        prop_assert_eq!(back, c);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn riesz_covariance_symmetric_toeplitz(n in 8usize..96, beta in 0.1f64..0.95) {
        let g = Grid1D::new(n).unwrap();
        let cov = covariance_matrix(&g, &CovarianceModel::Riesz { beta }).unwrap();
        let m = cov.matrix();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(m[(i, j)], m[(j, i)]);
                if i > 0 && j > 0 {
                    prop_assert!((m[(i, j)] - m[(i - 1, j - 1)]).abs() <= 1e-12 * m[(0, 0)]);
                }
            }
        }
        prop_assert!(cov.min_eigenvalue() >= -1e-10 * cov.norm_bound());
    }

    #[test]
    fn kernel_symmetric_and_submarkov(n in 16usize..80, t in 0.05f64..3.0) {
        let g = Grid1D::new(n).unwrap();
        let b = Arc::new(exact_basis_interval(n - 1, &g).unwrap());
        let k = KernelEvaluator::with_all_modes(b).unwrap();
        prop_assume!(t >= k.t_min());
        let m = k.kernel_matrix(t).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(m[(i, j)], m[(j, i)]);
            }
            let mass = k.mass_integral(t, i, fracshe::Region::Full).unwrap();
            prop_assert!(mass <= 1.0 + k.tail_bound(t));
        }
    }

    #[test]
    fn fractional_diagonal_grows_with_alpha(n in 16usize..64) {
        let g = Grid1D::new(n).unwrap();
        let c = g.nearest_node(0.0);
        let d: Vec<f64> = [1.2, 1.5, 1.8]
            .iter()
            .map(|&a| -fractional_laplacian_matrix(&g, a).unwrap()[(c, c)])
            .collect();
        prop_assert!(d[0] < d[1] && d[1] < d[2]);
    }

    #[test]
    fn numeric_basis_first_mode_positive(n in 24usize..64, alpha in 1.1f64..1.95) {
        let g = Grid1D::new(n).unwrap();
        let a = fractional_laplacian_matrix(&g, alpha).unwrap();
        let b = numeric_basis(&a, n / 4, &g, alpha).unwrap();
        prop_assert!((0..n).all(|k| b.value(0, k) > 0.0));
        prop_assert!(b.mu().iter().all(|m| *m > 0.0));
        prop_assert!(b.mu().windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn renewal_field_nonnegative_and_monotone(lambda in 0.0f64..3.0, dl in 0.01f64..1.0, h0 in 0.1f64..2.0) {
        let g = Grid1D::new(17).unwrap();
        let b = exact_basis_interval(16, &g).unwrap();
        let u0 = vec![h0; 17];
        let nodes: Vec<usize> = (0..17).collect();
        let tg = uniform_time_grid(0.5, 100);
        let f1 = renewal_solve_white(&b, &u0, lambda, 1.0, &tg, &nodes).unwrap();
        let f2 = renewal_solve_white(&b, &u0, lambda + dl, 1.0, &tg, &nodes).unwrap();
        // t = 0 holds the square of the projected initial datum
        let proj = b.synthesize(&b.project(&u0));
        for j in 0..nodes.len() {
            prop_assert!((f1.value(0, j) - proj[j] * proj[j]).abs() < 1e-12);
        }
        for ti in 0..tg.len() {
            for j in 0..nodes.len() {
                prop_assert!(f1.value(ti, j) >= 0.0);
                prop_assert!(f2.value(ti, j) >= f1.value(ti, j) * (1.0 - 1e-12));
            }
        }
    }

    #[test]
    fn aggregates_bracket_points(lambda in 0.0f64..2.0) {
        let g = Grid1D::new(17).unwrap();
        let b = exact_basis_interval(16, &g).unwrap();
        let nodes: Vec<usize> = (0..17).collect();
        let tg = uniform_time_grid(0.3, 30);
        let f = renewal_solve_white(&b, &vec![1.0; 17], lambda, 1.0, &tg, &nodes).unwrap();
        let table = MomentTable::from_field(&f, lambda, 2.0, 0.25).unwrap();
        for &t in &tg[1..] {
            let sup = table.series(2.0, lambda, fracshe::moments::Aggregate::SupD);
            let inf = table.series(2.0, lambda, fracshe::moments::Aggregate::InfDeps);
            let s = sup.iter().find(|r| r.0 == t).unwrap().1;
            let i = inf.iter().find(|r| r.0 == t).unwrap().1;
            let p = table.point(t, 0.0, 2.0).unwrap().estimate;
            prop_assert!(i <= p && p <= s);
        }
    }
}

#[test]
fn chaos_terms_nonnegative() {
    let g = Grid1D::new(16).unwrap();
    let b = exact_basis_interval(12, &g).unwrap();
    let cov = covariance_matrix(&g, &CovarianceModel::Riesz { beta: 0.5 }).unwrap();
    let nodes: Vec<usize> = (0..16).collect();
    let tg = uniform_time_grid(0.5, 50);
    let rep = picard_chaos_terms(&b, &cov, &vec![1.0; 16], 1.0, &tg, &nodes, 4).unwrap();
    for term in &rep.terms {
        for row in &term.values {
            assert!(
                row.iter().all(|v| *v >= 0.0),
                "term {} has a negative entry",
                term.n
            );
        }
    }
}
