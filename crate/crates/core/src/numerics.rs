//! Special functions behind every threshold rule.
//!
//! Only five functions are exposed: the standard-normal upper tail and its
//! inverse, the Student-t upper tail, the Poisson upper tail and the
//! closed-form mean of the truncation transform `min(|Z|, c) / c` under a
//! standard normal `Z`. Everything is pure and thread-safe.

use std::f64::consts::{FRAC_1_SQRT_2, PI};

use statrs::function::beta::beta_reg;

use statrs::function::gamma::{gamma_lr, ln_gamma};

use crate::error::{domain, Result};

/// Stopping rule for the iterative solvers in this crate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_iter: usize,
}

impl Tolerance {
    pub fn new(abs_tol: f64, rel_tol: f64, max_iter: usize) -> Result<Self> {
        if !(abs_tol > 0.0) || !(rel_tol > 0.0) || max_iter == 0 {
            return domain(format!(
                "tolerance requires abs_tol > 0, rel_tol > 0, max_iter >= 1 \
                 (got {abs_tol}, {rel_tol}, {max_iter})"
            ));
        }
        Ok(Self {
            abs_tol,
            rel_tol,
            max_iter,
        })
    }

    /// True once the bracket `[lo, hi]` is narrow enough.
    pub fn converged(&self, lo: f64, hi: f64) -> bool {
        let width = (hi - lo).abs();
        width <= self.abs_tol || width <= self.rel_tol * lo.abs().max(hi.abs())
    }
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            abs_tol: 1e-12,
            rel_tol: 1e-15,
            max_iter: 200,
        }
    }
}

/// `P(Z >= t)` for a standard normal `Z`.
pub fn normal_tail(t: f64) -> Result<f64> {
    if !t.is_finite() {
        return domain(format!("normal_tail needs a finite argument, got {t}"));
    }
    Ok(phi_bar(t))
}

/// Unchecked upper tail for hot loops. `erfc` keeps full relative accuracy
/// in the far tail, where `1 - Phi(t)` would cancel to zero.
#[inline]
pub(crate) fn phi_bar(t: f64) -> f64 {
    0.5 * libm::erfc(t * FRAC_1_SQRT_2)
}

#[inline]
pub(crate) fn phi_density(t: f64) -> f64 {
    (-0.5 * t * t).exp() / (2.0 * PI).sqrt()
}

/// Upper quantile `z` with `P(Z >= z) = gamma`.
///
/// Newton steps on the tail function, kept inside a shrinking bisection
/// bracket so a wild step can never escape.
pub fn normal_upper_quantile(gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma < 1.0) {
        return domain(format!("quantile level must lie in (0, 1), got {gamma}"));
    }
    let tol = Tolerance::default();
    let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
    let mut z = 0.0_f64;
    for _ in 0..tol.max_iter {
        let f = phi_bar(z) - gamma;
        if f == 0.0 {
            return Ok(z);
        }
        // phi_bar is decreasing: a positive residual means z is too small.
        if f > 0.0 {
            lo = z;
        } else {
            hi = z;
        }
        let dens = phi_density(z);
        let newton = z + f / dens;
        let next = if dens > 0.0 && newton > lo && newton < hi {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if (next - z).abs() <= tol.abs_tol || tol.converged(lo, hi) {
            return Ok(next);
        }
        z = next;
    }
    Ok(z)
}

/// `P(X >= k)` for `X ~ Poisson(lambda)`.
///
/// Direct summation for `lambda <= 30`, regularized lower incomplete gamma
/// `P(k, lambda)` above. `k = 0` is the sure event.
pub fn poisson_tail(lambda: f64, k: u64) -> Result<f64> {
    if !(lambda >= 0.0) || !lambda.is_finite() {
        return domain(format!("Poisson rate must be finite and >= 0, got {lambda}"));
    }
    Ok(poisson_tail_unchecked(lambda, k))
}

pub(crate) fn poisson_tail_unchecked(lambda: f64, k: u64) -> f64 {
    if k == 0 {
        return 1.0;
    }
    if lambda == 0.0 {
        return 0.0;
    }
    if lambda > 30.0 {
        return gamma_lr(k as f64, lambda);
    }
    let kf = k as f64;
    if kf > lambda {
        // Upper terms decay geometrically once j > lambda.
        let mut term = (-lambda + kf * lambda.ln() - ln_gamma(kf + 1.0)).exp();
        let mut sum = 0.0;
        let mut j = kf;
        while term > 0.0 {
            sum += term;
            if term < sum * 1e-17 {
                break;
            }
            j += 1.0;
            term *= lambda / j;
        }
        sum.min(1.0)
    } else {
        let mut term = (-lambda).exp();
        let mut lower = 0.0;
        for j in 0..k {
            if j > 0 {
                term *= lambda / j as f64;
            }
            lower += term;
        }
        (1.0 - lower).clamp(0.0, 1.0)
    }
}

/// `P(T >= t)` for a central Student-t with `df` degrees of freedom.
///
/// `df` is real so Welch–Satterthwaite degrees of freedom can be used.
pub fn student_t_tail(t: f64, df: f64) -> Result<f64> {
    if !(df >= 1.0) || !df.is_finite() {
        return domain(format!("degrees of freedom must be >= 1, got {df}"));
    }
    if !t.is_finite() {
        return domain(format!("student_t_tail needs a finite argument, got {t}"));
    }
    Ok(student_t_tail_unchecked(t, df))
}

pub(crate) fn student_t_tail_unchecked(t: f64, df: f64) -> f64 {
    if t == 0.0 {
        return 0.5;
    }
    // P(|T| >= |t|) = I_x(df/2, 1/2) with x = df / (df + t^2).
    let x = df / (df + t * t);
    let two_sided = beta_reg(0.5 * df, 0.5, x);
    if t > 0.0 {
        0.5 * two_sided
    } else {
        1.0 - 0.5 * two_sided
    }
}

/// `E[min(|Z|, c) / c]` for standard normal `Z`, in closed form.
pub fn expected_gc(c: f64) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return domain(format!("truncation level must be finite and > 0, got {c}"));
    }
    Ok(expected_gc_unchecked(c))
}

pub(crate) fn expected_gc_unchecked(c: f64) -> f64 {
    let near = -(-0.5 * c * c).exp_m1();
    2.0 / (c * (2.0 * PI).sqrt()) * near + 2.0 * phi_bar(c)
}
