//! Mittag-Leffler functions and the fractional Gronwall comparison
//! g(t) = c_1 + k ∫_0^t (t - s)^{ρ-1} g(s) ds, solved by g = c_1 E_ρ(k Γ(ρ) t^ρ).

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::heatkernel::Side;
use crate::numerics::{gamma, gauss_legendre, ln_gamma, CompensatedSum};

const MAX_TERMS: usize = 200_000;

/// ln E_ρ(z) for z >= 0, summing the series in log space.
pub fn ln_mittag_leffler(rho: f64, z: f64) -> Result<f64> {
    if !(rho > 0.0 && rho.is_finite()) {
        return invalid(format!("Mittag-Leffler order must be positive, got {rho}"));
    }
    if !(z >= 0.0 && z.is_finite()) {
        return Err(Error::Domain(format!(
            "Mittag-Leffler argument must be >= 0, got {z}"
        )));
    }
    if z == 0.0 {
        return Ok(0.0);
    }
    // E_ρ(z) = e^{z^{1/ρ}}/ρ + O(1/z) for 0 < ρ < 2; the correction is below
    // e^{-60} relative once z^{1/ρ} > 60
    let r = z.powf(1.0 / rho);
    if rho < 2.0 && r > 60.0 {
        return Ok(r - rho.ln());
    }
    let lz = z.ln();
    let term = |k: usize| k as f64 * lz - ln_gamma(rho * k as f64 + 1.0);
    // terms peak near k ≈ z^{1/ρ}/ρ
    let mut peak = 0.0f64;
    let mut terms = Vec::new();
    for k in 0..MAX_TERMS {
        let l = term(k);
        peak = peak.max(l);
        terms.push(l);
        if k > 2 && l < peak - 40.0 && l < term(k - 1) {
            let mut s = CompensatedSum::default();
            for t in &terms {
                s.add((t - peak).exp());
            }
            return Ok(peak + s.value().ln());
        }
    }
    Err(Error::NumericFailure(format!(
        "Mittag-Leffler series did not converge for z = {z}"
    )))
}

/// E_ρ(z) for z >= 0.
pub fn mittag_leffler(rho: f64, z: f64) -> Result<f64> {
    let l = ln_mittag_leffler(rho, z)?;
    if l > 709.0 {
        return Err(Error::Overflow(format!(
            "E_{rho}({z}) exceeds f64; use ln_mittag_leffler"
        )));
    }
    Ok(l.exp())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GronwallReport {
    pub rho: f64,
    pub k: f64,
    pub c1: f64,
    pub direction: String,
    /// max over the grid of the relative residual of the integral equation
    pub max_residual: f64,
    /// slope of ln g per unit t, divided by k^{1/ρ}
    pub c3_fit: f64,
    /// Γ(ρ)^{1/ρ}
    pub c3_asymptotic: f64,
    pub c2_fit: f64,
    pub window: (f64, f64),
    pub window_ok: bool,
}

const RESIDUAL_TOL: f64 = 1e-6;

/// ∫_0^1 f(v) dv with Gauss-Legendre panels graded toward both ends.
fn graded_integral(mut f: impl FnMut(f64) -> f64) -> f64 {
    let (xs, ws) = gauss_legendre(16);
    let mut s = CompensatedSum::default();
    let mut panel = |a: f64, b: f64| {
        let (m, r) = (0.5 * (a + b), 0.5 * (b - a));
        for (x, w) in xs.iter().zip(&ws) {
            s.add(w * r * f(m + r * x));
        }
    };
    let levels = 40;
    // [0, 1/2] graded toward 0, [1/2, 1] graded toward 1
    let mut hi = 0.5;
    for _ in 0..levels {
        panel(0.5 * hi, hi);
        hi *= 0.5;
    }
    panel(0.0, hi);
    let mut lo = 0.5;
    for _ in 0..levels {
        let mid = 1.0 - 0.5 * (1.0 - lo);
        panel(lo, mid);
        lo = mid;
    }
    panel(lo, 1.0);
    s.value()
}

/// Checks g = c_1 E_ρ(k Γ(ρ) t^ρ) against the integral equation on `t_grid`
/// and fits g ≍ c_2 e^{c_3 k^{1/ρ} t}.
pub fn gronwall_verify(
    rho: f64,
    k: f64,
    c1: f64,
    t_grid: &[f64],
    direction: Side,
) -> Result<GronwallReport> {
    if !(rho > 0.0 && rho <= 1.0) {
        return invalid(format!("ρ must lie in (0, 1], got {rho}"));
    }
    if !(k > 0.0 && c1 > 0.0) {
        return invalid("k and c1 must be positive");
    }
    if t_grid.is_empty() || t_grid.iter().any(|t| !(*t > 0.0 && t.is_finite())) {
        return invalid("time grid must be nonempty and positive");
    }
    let g_rho = gamma(rho);
    let lam = k * g_rho;
    let ln_g = |t: f64| -> Result<f64> { Ok(c1.ln() + ln_mittag_leffler(rho, lam * t.powf(rho))?) };

    let mut max_residual = 0.0f64;
    for &t in t_grid {
        let lgt = ln_g(t)?;
        let mut err = None;
        let integral = graded_integral(|v| {
            let s = t * (1.0 - v.powf(1.0 / rho));
            match ln_g(s.max(0.0)) {
                Ok(l) => (l - lgt).exp(),
                Err(e) => {
                    err.get_or_insert(e);
                    0.0
                }
            }
        });
        if let Some(e) = err {
            return Err(e);
        }
        let r = ((c1.ln() - lgt).exp() + k * t.powf(rho) / rho * integral - 1.0).abs();
        max_residual = max_residual.max(r);
    }
    if max_residual > RESIDUAL_TOL {
        return Err(Error::PropertyViolation(format!(
            "Mittag-Leffler solution misses the integral equation by {max_residual:.3e}"
        )));
    }

    let tau = lam.powf(-1.0 / rho);
    let kr = k.powf(1.0 / rho);
    let ts: Vec<f64> = (0..50)
        .map(|i| tau * (5.0 + 15.0 * i as f64 / 49.0))
        .collect();
    let ls = ts.iter().map(|&t| ln_g(t)).collect::<Result<Vec<_>>>()?;
    let fit = crate::numerics::fit_line(&ts, &ls)?;
    let c3_fit = fit.slope / kr;

    let window: Vec<f64> = match direction {
        Side::Upper => t_grid.to_vec(),
        Side::Lower if (rho - 0.5).abs() < 1e-12 => t_grid.to_vec(),
        Side::Lower => {
            let start = std::f64::consts::E / rho * tau;
            t_grid.iter().copied().filter(|&t| t > start).collect()
        }
    };
    let mut c2 = match direction {
        Side::Upper => 0.0f64,
        Side::Lower => f64::INFINITY,
    };
    for &t in &window {
        let v = (ln_g(t)? - c3_fit * kr * t).exp();
        c2 = match direction {
            Side::Upper => c2.max(v),
            Side::Lower => c2.min(v),
        };
    }
    let window_ok = !window.is_empty() && c2.is_finite() && c2 > 0.0;
    if !window_ok {
        return Err(Error::PropertyViolation(format!(
            "no usable fitting window for ρ = {rho}, k = {k}"
        )));
    }
    let span = (
        window.iter().copied().fold(f64::INFINITY, f64::min),
        window.iter().copied().fold(0.0, f64::max),
    );
    Ok(GronwallReport {
        rho,
        k,
        c1,
        direction: match direction {
            Side::Upper => "upper".into(),
            Side::Lower => "lower".into(),
        },
        max_residual,
        c3_fit,
        c3_asymptotic: g_rho.powf(1.0 / rho),
        c2_fit: c2,
        window: span,
        window_ok,
    })
}
