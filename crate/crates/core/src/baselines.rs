//! p-value baselines: Benjamini–Hochberg step-up and Storey–Tibshirani
//! q-values with a spline-smoothed `pi0(lambda)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::critical::DecisionSet;
use crate::error::{check_probability, domain, Result};
use crate::numerics::{phi_bar, student_t_tail_unchecked};
use crate::tstats::TStatVector;

/// Reference distribution for two-sided p-values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PValueSource {
    /// Student-t with the per-feature degrees of freedom of the statistic.
    #[default]
    StudentT,
    /// Standard normal.
    NormalApprox,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PValueVector {
    pub p: Vec<f64>,
    pub source: PValueSource,
    pub warnings: Vec<String>,
}

impl PValueVector {
    pub fn new(p: Vec<f64>, source: PValueSource) -> Result<Self> {
        if let Some(bad) = p.iter().find(|x| !(0.0..=1.0).contains(*x)) {
            return domain(format!("p-value {bad} outside [0, 1]"));
        }
        Ok(Self {
            p,
            source,
            warnings: Vec::new(),
        })
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Two-sided p-values `2 P(T >= |t|)`. Features without a statistic get
/// `p = 1`.
pub fn p_values(tv: &TStatVector, source: PValueSource) -> PValueVector {
    let mut flagged = 0usize;
    let p = tv
        .stats()
        .iter()
        .zip(tv.df())
        .map(|(s, &df)| match s {
            None => {
                flagged += 1;
                1.0
            }
            Some(t) => {
                let a = t.abs();
                let one_sided = match source {
                    PValueSource::StudentT => student_t_tail_unchecked(a, df),
                    PValueSource::NormalApprox => phi_bar(a),
                };
                (2.0 * one_sided).min(1.0)
            }
        })
        .collect();
    let mut warnings = Vec::new();
    if flagged > 0 {
        warnings.push(format!("{flagged} features without a statistic were given p = 1"));
    }
    PValueVector {
        p,
        source,
        warnings,
    }
}

fn sorted_order(p: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..p.len()).collect();
    idx.sort_by(|&a, &b| p[a].total_cmp(&p[b]));
    idx
}

/// Benjamini–Hochberg step-up at level `gamma`: with
/// `r = max{i : p_(i) <= gamma i / m}`, reject every `p <= p_(r)`.
pub fn bh_procedure(p: &PValueVector, gamma: f64) -> Result<DecisionSet> {
    check_probability("gamma", gamma)?;
    let m = p.len();
    let order = sorted_order(&p.p);
    let r = order
        .iter()
        .enumerate()
        .rev()
        .find(|&(i, &j)| p.p[j] <= gamma * (i + 1) as f64 / m as f64)
        .map(|(i, _)| i + 1);
    Ok(match r {
        None => DecisionSet::empty(m),
        Some(r) => {
            let cut = p.p[order[r - 1]];
            DecisionSet::from_mask(p.p.iter().map(|&x| x <= cut).collect())
        }
    })
}

/// Default `lambda` grid: 0, 0.05, ..., 0.95.
pub fn default_lambda_grid() -> Vec<f64> {
    (0..20).map(|i| i as f64 / 20.0).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Pi0Estimate {
    pub pi0_hat: f64,
    /// `(lambda, pi0(lambda))` pairs.
    pub lambda_grid: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QValueResult {
    pub pi0_hat: f64,
    pub q: Vec<f64>,
    pub lambda_grid: Vec<(f64, f64)>,
}

/// Storey's `pi0` estimate: `pi0(lambda) = #{p > lambda} / (m (1 - lambda))`
/// over the grid, smoothed by a cubic smoothing spline with three effective
/// degrees of freedom and read off at `lambda = 1`, clamped to `[1/m, 1]`.
pub fn storey_pi0(p: &PValueVector, lambda_grid: &[f64]) -> Result<Pi0Estimate> {
    let m = p.len();
    if m == 0 {
        return domain("no p-values");
    }
    if lambda_grid.len() < 4 {
        return domain(format!("lambda grid needs >= 4 points, got {}", lambda_grid.len()));
    }
    if lambda_grid.windows(2).any(|w| !(w[1] > w[0]))
        || lambda_grid[0] < 0.0
        || *lambda_grid.last().unwrap() > 0.95
    {
        return domain("lambda grid must be strictly increasing within [0, 0.95]");
    }
    let mut sorted = p.p.clone();
    sorted.sort_by(f64::total_cmp);
    let pairs: Vec<(f64, f64)> = lambda_grid
        .iter()
        .map(|&l| {
            let above = m - sorted.partition_point(|&x| x <= l);
            (l, above as f64 / (m as f64 * (1.0 - l)))
        })
        .collect();
    let ys: Vec<f64> = pairs.iter().map(|&(_, y)| y).collect();
    let raw = if ys.iter().all(|&y| y == ys[0]) {
        ys[0]
    } else {
        let xs: Vec<f64> = pairs.iter().map(|&(x, _)| x).collect();
        SmoothingSpline::fit_df(&xs, &ys, 3.0)?.eval(1.0)
    };
    let lower = 1.0 / m as f64;
    Ok(Pi0Estimate {
        pi0_hat: raw.clamp(lower, 1.0),
        lambda_grid: pairs,
    })
}

/// Storey q-values `q_(i) = min_{j >= i} pi0 m p_(j) / j`, capped at 1.
pub fn q_values(p: &PValueVector, pi0: f64) -> Result<Vec<f64>> {
    if !(pi0 > 0.0 && pi0 <= 1.0) {
        return domain(format!("pi0 must lie in (0, 1], got {pi0}"));
    }
    let m = p.len();
    let order = sorted_order(&p.p);
    let mut q = vec![0.0; m];
    let mut running = f64::INFINITY;
    for (rank, &j) in order.iter().enumerate().rev() {
        let v = pi0 * m as f64 * p.p[j] / (rank + 1) as f64;
        running = running.min(v);
        q[j] = running.min(1.0);
    }
    Ok(q)
}

/// `pi0` estimate and q-values in one pass.
pub fn storey_q_values(p: &PValueVector, lambda_grid: &[f64]) -> Result<QValueResult> {
    let est = storey_pi0(p, lambda_grid)?;
    let q = q_values(p, est.pi0_hat)?;
    Ok(QValueResult {
        pi0_hat: est.pi0_hat,
        q,
        lambda_grid: est.lambda_grid,
    })
}

/// Reject `{i : q_i <= gamma}`.
pub fn reject_by_q(q: &[f64], gamma: f64) -> DecisionSet {
    DecisionSet::from_mask(q.iter().map(|&x| x <= gamma).collect())
}

/// Natural cubic smoothing spline in value/second-derivative form,
/// `g = (I + lambda K)^{-1} y` with `K = Q R^{-1} Q^T`.
#[derive(Debug, Clone)]
pub struct SmoothingSpline {
    knots: Vec<f64>,
    fitted: Vec<f64>,
    // second derivatives at the knots, zero at both ends
    curvature: Vec<f64>,
}

impl SmoothingSpline {
    fn band(knots: &[f64]) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = knots.len();
        let h: Vec<f64> = knots.windows(2).map(|w| w[1] - w[0]).collect();
        let mut q = DMatrix::zeros(n, n - 2);
        let mut r = DMatrix::zeros(n - 2, n - 2);
        for j in 1..n - 1 {
            let c = j - 1;
            q[(j - 1, c)] = 1.0 / h[j - 1];
            q[(j, c)] = -1.0 / h[j - 1] - 1.0 / h[j];
            q[(j + 1, c)] = 1.0 / h[j];
            r[(c, c)] = (h[j - 1] + h[j]) / 3.0;
            if c + 1 < n - 2 {
                r[(c, c + 1)] = h[j] / 6.0;
                r[(c + 1, c)] = h[j] / 6.0;
            }
        }
        (q, r)
    }

    /// Fit with smoothing parameter `lambda`.
    pub fn fit(knots: &[f64], y: &[f64], lambda: f64) -> Result<Self> {
        let (q, r) = Self::prepare(knots, y)?;
        let k = Self::penalty(&q, &r)?;
        Self::solve(knots, y, &q, &r, &k, lambda)
    }

    /// Fit with `lambda` chosen so the smoother matrix has trace `df`.
    pub fn fit_df(knots: &[f64], y: &[f64], df: f64) -> Result<Self> {
        let n = knots.len();
        if !(df > 2.0 && df < n as f64) {
            return domain(format!("effective df must lie in (2, {n}), got {df}"));
        }
        let (q, r) = Self::prepare(knots, y)?;
        let k = Self::penalty(&q, &r)?;
        let lambda = Self::lambda_for_df(&k, df);
        Self::solve(knots, y, &q, &r, &k, lambda)
    }

    /// `trace((I + lambda K)^{-1}) = sum 1 / (1 + lambda e_i)` over the
    /// eigenvalues of `K` decreases in `lambda`; bisect on `ln lambda`.
    fn lambda_for_df(k: &DMatrix<f64>, df: f64) -> f64 {
        let eig = k.clone().symmetric_eigen().eigenvalues;
        let trace = |lambda: f64| eig.iter().map(|&e| 1.0 / (1.0 + lambda * e.max(0.0))).sum::<f64>();
        let (mut lo, mut hi) = (-30.0_f64, 30.0_f64);
        while hi - lo > 1e-12 {
            let mid = 0.5 * (lo + hi);
            if trace(mid.exp()) > df {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        (0.5 * (lo + hi)).exp()
    }

    fn prepare(knots: &[f64], y: &[f64]) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if knots.len() != y.len() {
            return domain("knots and values differ in length");
        }
        if knots.len() < 3 {
            return domain("smoothing spline needs at least 3 knots");
        }
        if knots.windows(2).any(|w| !(w[1] > w[0])) {
            return domain("knots must be strictly increasing");
        }
        Ok(Self::band(knots))
    }

    fn penalty(q: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let r_inv = r
            .clone()
            .try_inverse()
            .ok_or_else(|| crate::error::Error::Domain("singular spline band matrix".into()))?;
        Ok(q * r_inv * q.transpose())
    }

    fn solve(
        knots: &[f64],
        y: &[f64],
        q: &DMatrix<f64>,
        r: &DMatrix<f64>,
        k: &DMatrix<f64>,
        lambda: f64,
    ) -> Result<Self> {
        let n = knots.len();
        let a = DMatrix::identity(n, n) + k * lambda;
        let g = a
            .lu()
            .solve(&DVector::from_column_slice(y))
            .ok_or_else(|| crate::error::Error::Domain("singular smoother system".into()))?;
        let inner = r
            .clone()
            .lu()
            .solve(&(q.transpose() * &g))
            .ok_or_else(|| crate::error::Error::Domain("singular spline band matrix".into()))?;
        let mut curvature = vec![0.0; n];
        curvature[1..n - 1].copy_from_slice(inner.as_slice());
        Ok(Self {
            knots: knots.to_vec(),
            fitted: g.as_slice().to_vec(),
            curvature,
        })
    }

    pub fn fitted(&self) -> &[f64] {
        &self.fitted
    }

    /// Spline value at `x`; linear beyond the boundary knots.
    pub fn eval(&self, x: f64) -> f64 {
        let (t, g, c) = (&self.knots, &self.fitted, &self.curvature);
        let n = t.len();
        if x <= t[0] {
            let h = t[1] - t[0];
            let slope = (g[1] - g[0]) / h - h / 6.0 * c[1];
            return g[0] + slope * (x - t[0]);
        }
        if x >= t[n - 1] {
            let h = t[n - 1] - t[n - 2];
            let slope = (g[n - 1] - g[n - 2]) / h + h / 6.0 * c[n - 2];
            return g[n - 1] + slope * (x - t[n - 1]);
        }
        let i = t.partition_point(|&k| k <= x).min(n - 1) - 1;
        let h = t[i + 1] - t[i];
        let (a, b) = (x - t[i], t[i + 1] - x);
        ((a * g[i + 1] + b * g[i]) / h)
            - a * b / 6.0 * ((1.0 + a / h) * c[i + 1] + (1.0 + b / h) * c[i])
    }
}
