//! Renewal equation for E|u_t(x)|² under white noise,
//! w(t, x) = h0(t, x)² + λ² ∫_0^t h Σ_y p(t - s, x, y)² L² w(s, y) ds,
//! for the Galerkin system with the modes of `basis`.
//!
//! Writing p² in eigencoordinates turns the time integral into per-pair
//! exponentials, integrated exactly on each step with w held at the right
//! endpoint. The history is carried by a recursion in the pair coefficients, so
//! a step costs O(N² n) regardless of how many steps came before.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector, LU};

use super::{grid_steps, pair_weights, SecondMomentField, RESCALE_AT};
use crate::error::{invalid, Error, Result};
use crate::spectral::SpectralBasis;

pub fn renewal_solve_white(
    basis: &SpectralBasis,
    u0: &[f64],
    lambda: f64,
    l_or_l: f64,
    t_grid: &[f64],
    nodes: &[usize],
) -> Result<SecondMomentField> {
    let g = basis.grid();
    let n = g.n_cells();
    if u0.len() != n {
        return invalid("u0 length does not match the grid");
    }
    if nodes.iter().any(|&k| k >= n) {
        return invalid("node index outside the grid");
    }
    if !(lambda >= 0.0 && l_or_l >= 0.0) {
        return invalid("lambda and the sigma constant must be nonnegative");
    }
    let steps = grid_steps(t_grid)?;
    let h = g.h();
    let nm = basis.n_modes();
    let phi = basis.phi();
    let mu = basis.mu();
    let coupling = lambda * lambda * l_or_l * l_or_l;

    let a0 = basis.project(u0);
    // products Φ_n(x_k) Φ_m(x_k), row index n * nm + m
    let prod = DMatrix::from_fn(nm * nm, n, |r, k| phi[(r / nm, k)] * phi[(r % nm, k)]);

    let h0_sq = |t: f64| -> Vec<f64> {
        let c = DVector::from_fn(nm, |i, _| (-mu[i] * t).exp() * a0[i]);
        let v = phi.transpose() * c;
        v.iter().map(|x| x * x).collect()
    };

    let mut field = SecondMomentField::new(g, t_grid.to_vec(), nodes.to_vec());
    let mut log_scale = 0.0f64;
    let w0 = h0_sq(0.0);
    field.push(nodes.iter().map(|&k| w0[k]).collect(), 0.0);

    let mut hist = DMatrix::<f64>::zeros(nm, nm);
    let mut cache: HashMap<
        u64,
        (
            DMatrix<f64>,
            DMatrix<f64>,
            LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
        ),
    > = HashMap::new();

    for (i, &dt) in steps.iter().enumerate() {
        let t = t_grid[i + 1];
        if !cache.contains_key(&dt.to_bits()) {
            let (decay, weight) = pair_weights(mu, dt);
            // T(x, y) = h Σ_nm Φ_nΦ_m(x) W_nm Φ_nΦ_m(y)
            let wcol = DVector::from_column_slice(weight.transpose().as_slice());
            let scaled = DMatrix::from_fn(nm * nm, n, |r, k| prod[(r, k)] * wcol[r]);
            let kernel = prod.transpose() * scaled * h;
            let system = DMatrix::<f64>::identity(n, n) - kernel * coupling;
            if let Some(k) = (0..n).find(|&k| system[(k, k)] <= 0.0) {
                return Err(Error::InvalidGrid(format!(
                    "step {dt} too coarse: implicit weight nonpositive at node {k}"
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
        // b(x) = h0² + λ² Σ_nm Φ_n(x)Φ_m(x) (e^{-SΔ} ∘ Y)_nm
        let zphi = &hist * phi;
        let scale = (-log_scale).exp();
        let forcing = h0_sq(t);
        let rhs = DVector::from_fn(n, |k, _| {
            let mut s = 0.0;
            for a in 0..nm {
                s += phi[(a, k)] * zphi[(a, k)];
            }
            forcing[k] * scale + lambda * lambda * s
        });
        let mut w = lu
            .solve(&rhs)
            .ok_or_else(|| Error::NumericFailure("renewal step solve failed".into()))?;
        if w.iter().any(|v| !v.is_finite()) {
            return Err(Error::NumericFailure(format!(
                "non-finite second moment at t = {t}"
            )));
        }
        // Y ← e^{-SΔ} ∘ Y + W ∘ G, G_nm = h Σ_k Φ_nΦ_m(x_k) L² w_k
        let gvec = &prod * &w * (h * l_or_l * l_or_l);
        for a in 0..nm {
            for b in 0..nm {
                hist[(a, b)] += weight[(a, b)] * gvec[a * nm + b];
            }
        }
        let peak = w.amax();
        if peak > RESCALE_AT {
            w /= peak;
            hist /= peak;
            log_scale += peak.ln();
        }
        field.push(nodes.iter().map(|&k| w[k]).collect(), log_scale);
    }
    Ok(field)
}
