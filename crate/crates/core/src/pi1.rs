//! Estimation of the alternative proportion from t-statistics alone.
//!
//! Each statistic is mapped through the truncation transform
//! `g_c(x) = min(|x|, c) / c`, which is capped at 1. Under the null the mean
//! of `g_c` is known in closed form, so the normalized excess
//! `(g_hat_c - E g_c(Z)) / (1 - E g_c(Z))` bounds the alternative
//! proportion from below for every `c`; the estimate is its supremum over a
//! logarithmic grid of `c`.

use serde::{Deserialize, Serialize};

use crate::error::{domain, Error, Result};
use crate::numerics::expected_gc_unchecked;
use crate::tstats::TStatVector;

/// Logarithmically spaced truncation levels `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        Self {
            lo: 0.4,
            hi: 50.0,
            points: 200,
        }
    }
}

impl GridSpec {
    pub fn new(lo: f64, hi: f64, points: usize) -> Result<Self> {
        let spec = Self { lo, hi, points };
        spec.values()?;
        Ok(spec)
    }

    /// Grid values in ascending order. A grid needs `lo < hi` and at
    /// least two points.
    pub fn values(&self) -> Result<Vec<f64>> {
        let Self { lo, hi, points } = *self;
        if points == 0 {
            return domain("truncation grid is empty");
        }
        if !(lo > 0.0 && lo.is_finite() && hi.is_finite()) {
            return domain(format!("grid bounds must be finite and positive, got {lo}:{hi}"));
        }
        if points == 1 {
            return domain("a truncation grid needs at least two points");
        }
        if !(hi > lo) {
            return domain(format!("grid needs lo < hi, got {lo}:{hi}"));
        }
        let step = (hi / lo).ln() / (points - 1) as f64;
        Ok((0..points)
            .map(|i| {
                if i == points - 1 {
                    hi
                } else {
                    lo * (step * i as f64).exp()
                }
            })
            .collect())
    }
}

/// One evaluated truncation level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub c: f64,
    pub g_hat: f64,
    pub null_mean: f64,
    pub ratio: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pi1Estimate {
    pub pi1_hat: f64,
    pub c_star: f64,
    /// Supremum before clamping to `[0, 1]`.
    pub raw_sup: f64,
    pub clamped: bool,
    pub grid: Vec<GridPoint>,
}

/// Mean of `min(|T_i|, c) / c` over valid features.
pub fn g_hat(tv: &TStatVector, c: f64) -> Result<f64> {
    if !(c > 0.0) || !c.is_finite() {
        return domain(format!("truncation level must be finite and > 0, got {c}"));
    }
    let m = tv.m_valid();
    if m == 0 {
        return Err(Error::Data("no feature has a defined statistic".into()));
    }
    Ok(g_hat_unchecked(tv, c))
}

fn g_hat_unchecked(tv: &TStatVector, c: f64) -> f64 {
    (tv.truncated_sum(c) / (c * tv.m_valid() as f64)).min(1.0)
}

/// Supremum of the normalized excess over the grid, clamped to `[0, 1]`.
/// Ties go to the smallest `c`.
pub fn estimate_pi1(tv: &TStatVector, grid: &GridSpec) -> Result<Pi1Estimate> {
    if tv.m_valid() == 0 {
        return Err(Error::Data("no feature has a defined statistic".into()));
    }
    let cs = grid.values()?;
    let points: Vec<GridPoint> = cs
        .iter()
        .map(|&c| {
            let g = g_hat_unchecked(tv, c);
            let e = expected_gc_unchecked(c);
            GridPoint {
                c,
                g_hat: g,
                null_mean: e,
                ratio: (g - e) / (1.0 - e),
            }
        })
        .collect();
    let best = points
        .iter()
        .fold(None::<&GridPoint>, |acc, p| match acc {
            Some(b) if b.ratio >= p.ratio => Some(b),
            _ => Some(p),
        })
        .expect("grid is non-empty");
    let raw = best.ratio;
    let pi1_hat = raw.clamp(0.0, 1.0);
    Ok(Pi1Estimate {
        pi1_hat,
        c_star: best.c,
        raw_sup: raw,
        clamped: pi1_hat != raw,
        grid: points,
    })
}
