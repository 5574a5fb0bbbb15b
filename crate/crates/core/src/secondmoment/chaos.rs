//! Simplex integrals and the two-sided chaos series.

use rand::Rng;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::numerics::{gamma, ln_gamma, log_sum_exp};
use crate::rng::path_rng;

/// ∫_{0<t_1<...<t_n<t} (t - t_n)^{-a} Π_{i=1}^{n} (t_i - t_{i-1})^{-b} dt, t_0 = 0,
/// = Γ(1-b)^n Γ(1-a) / Γ(n(1-b) + 1 - a) · t^{n(1-b) - a}.
pub fn simplex_integral(n: usize, a: f64, b: f64, t: f64) -> Result<f64> {
    check_exponents(n, a, b, t)?;
    let nf = n as f64;
    let ln = nf * ln_gamma(1.0 - b) + ln_gamma(1.0 - a) - ln_gamma(nf * (1.0 - b) + 1.0 - a)
        + (nf * (1.0 - b) - a) * t.ln();
    Ok(ln.exp())
}

fn check_exponents(n: usize, a: f64, b: f64, t: f64) -> Result<()> {
    if n == 0 {
        return invalid("simplex order must be at least 1");
    }
    if !(a < 1.0 && b < 1.0) {
        return Err(Error::NonIntegrable(format!(
            "exponents a = {a}, b = {b} must be < 1"
        )));
    }
    if !(a >= 0.0 && b >= 0.0 && t > 0.0) {
        return invalid("exponents must be nonnegative and t positive");
    }
    Ok(())
}

/// Monte Carlo estimate (mean, standard error) from uniform points in the
/// ordered simplex, volume tⁿ/n!. Finite variance needs a, b < 1/2.
pub fn simplex_integral_mc(
    n: usize,
    a: f64,
    b: f64,
    t: f64,
    n_points: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    check_exponents(n, a, b, t)?;
    if n_points < 2 {
        return invalid("need at least two points");
    }
    let mut rng = path_rng(seed, n as u64);
    let mut pts = vec![0.0; n];
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n_points {
        for p in pts.iter_mut() {
            *p = rng.random::<f64>() * t;
        }
        pts.sort_by(f64::total_cmp);
        let mut v = (t - pts[n - 1]).powf(-a);
        let mut prev = 0.0;
        for &p in &pts {
            v *= (p - prev).powf(-b);
            prev = p;
        }
        s += v;
        s2 += v * v;
    }
    let np = n_points as f64;
    let mean = s / np;
    let var = (s2 / np - mean * mean) * np / (np - 1.0);
    let vol = t.powi(n as i32) / gamma(n as f64 + 1.0);
    Ok((vol * mean, vol * (var / np).sqrt()))
}

/// ln Σ_{n=0}^{n_max} λ^{2n} Cⁿ (n!)^{β/α - 1} t^{n(1 - β/α)}.
pub fn chaos_series_ln(
    lambda: f64,
    t: f64,
    alpha: f64,
    beta: f64,
    c: f64,
    n_max: usize,
) -> Result<f64> {
    let r = beta / alpha;
    if !(r < 1.0 && r >= 0.0) {
        return invalid(format!("need 0 <= β/α < 1, got {r}"));
    }
    if !(c >= 0.0 && t > 0.0 && lambda >= 0.0) {
        return invalid("series needs C >= 0, t > 0, λ >= 0");
    }
    if lambda == 0.0 || c == 0.0 {
        return Ok(0.0);
    }
    let base = 2.0 * lambda.ln() + c.ln() + (1.0 - r) * t.ln();
    let terms: Vec<f64> = (0..=n_max)
        .map(|n| n as f64 * base + (r - 1.0) * ln_gamma(n as f64 + 1.0))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// Prefactors and rates of the two chaos series.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SeriesConstants {
    pub c_low: f64,
    pub c_high: f64,
    pub big_c_low: f64,
    pub big_c_high: f64,
}

/// (lower, upper) = c e^{-2μ_1 t} Σ_{n<=n_max} λ^{2n} Cⁿ (n!)^{β/α-1} t^{n(1-β/α)}
/// with (c_low, C_low) and (c_high, C_high).
pub fn chaos_series_bounds(
    lambda: f64,
    t: f64,
    alpha: f64,
    beta: f64,
    mu1: f64,
    consts: &SeriesConstants,
    n_max: usize,
) -> Result<(f64, f64)> {
    let lo = chaos_series_ln(lambda, t, alpha, beta, consts.big_c_low, n_max)?;
    let hi = chaos_series_ln(lambda, t, alpha, beta, consts.big_c_high, n_max)?;
    let pre = -2.0 * mu1 * t;
    let lower = consts.c_low * (pre + lo).exp();
    let upper = consts.c_high * (pre + hi).exp();
    if !lower.is_finite() || !upper.is_finite() {
        return Err(Error::Overflow(format!(
            "chaos series overflow at λ = {lambda}, t = {t}; use chaos_series_ln"
        )));
    }
    Ok((lower, upper))
}

/// Fits SeriesConstants to samples (λ, t, h0², E|u|²): prefactors from the
/// n = 0 term, rates by bisection in log C so that the series sandwich the data.
pub fn fit_series_constants(
    samples: &[(f64, f64, f64, f64)],
    alpha: f64,
    beta: f64,
    mu1: f64,
    n_max: usize,
) -> Result<SeriesConstants> {
    if samples.is_empty() {
        return invalid("no samples to fit");
    }
    let (mut c_low, mut c_high) = (f64::INFINITY, 0.0f64);
    for &(_, t, h0sq, _) in samples {
        let v = h0sq * (2.0 * mu1 * t).exp();
        c_low = c_low.min(v);
        c_high = c_high.max(v);
    }
    let fits_low = |c: f64| -> Result<bool> {
        for &(l, t, _, m) in samples {
            let s = chaos_series_ln(l, t, alpha, beta, c, n_max)?;
            if c_low.ln() - 2.0 * mu1 * t + s > m.ln() {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let fits_high = |c: f64| -> Result<bool> {
        for &(l, t, _, m) in samples {
            let s = chaos_series_ln(l, t, alpha, beta, c, n_max)?;
            if c_high.ln() - 2.0 * mu1 * t + s < m.ln() {
                return Ok(false);
            }
        }
        Ok(true)
    };
    let bisect = |ok_low: bool, test: &dyn Fn(f64) -> Result<bool>| -> Result<f64> {
        // ok_low: property holds for small C (lower series); otherwise for large C
        let (mut a, mut b) = (-30.0f64, 30.0f64);
        if ok_low && !test(a.exp())? || !ok_low && !test(b.exp())? {
            return Err(Error::PropertyViolation(
                "series cannot sandwich the data".into(),
            ));
        }
        for _ in 0..100 {
            let m = 0.5 * (a + b);
            let holds = test(m.exp())?;
            if holds == ok_low {
                a = m;
            } else {
                b = m;
            }
        }
        Ok(if ok_low { a.exp() } else { b.exp() })
    };
    Ok(SeriesConstants {
        c_low,
        c_high,
        big_c_low: bisect(true, &fits_low)?,
        big_c_high: bisect(false, &fits_high)?,
    })
}
