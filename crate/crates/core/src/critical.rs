//! Critical values for FDTP, FDR and k-FWER control.
//!
//! The data-driven rules replace the unknown null and alternative tail
//! functions with the Gaussian tail `PhiBar` and the empirical exceedance
//! `p_hat(t)`, plugging in an estimate of the alternative proportion. The
//! oracle rules use the true labels and noncentralities and serve as
//! validation targets.
//!
//! FDTP and FDR criteria are step functions of `t` that change only at the
//! observed `|T_i|`, so their infima are found by scanning the sorted
//! candidate set. The k-FWER criterion is continuous and monotone in `t`
//! and is solved by bisection.

use serde::{Deserialize, Serialize};

use crate::error::{check_probability, domain, Error, Result};
use crate::numerics::{normal_upper_quantile, phi_bar, poisson_tail_unchecked, Tolerance};
use crate::tstats::TStatVector;

const TAU_SQ_FLOOR: f64 = 1e-12;
const PI1_CLIP: f64 = 1e-4;
const SEARCH_MAX: f64 = 40.0;
const BISECT_TOL: f64 = 1e-8;

/// Which error criterion to control.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "lowercase")]
pub enum Method {
    /// `P(V >= alpha R) <= gamma`
    Fdtp { alpha: f64, gamma: f64 },
    /// `E[V / R] <= gamma`
    Fdr { gamma: f64 },
    /// `P(V >= k) <= gamma`
    Kfwer { k: u64, gamma: f64 },
}

impl Method {
    pub fn gamma(&self) -> f64 {
        match *self {
            Method::Fdtp { gamma, .. } | Method::Fdr { gamma } | Method::Kfwer { gamma, .. } => {
                gamma
            }
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Method::Fdtp { .. } => "fdtp",
            Method::Fdr { .. } => "fdr",
            Method::Kfwer { .. } => "kfwer",
        }
    }

    /// Same method at a different level `gamma`.
    pub fn with_gamma(self, gamma: f64) -> Self {
        match self {
            Method::Fdtp { alpha, .. } => Method::Fdtp { alpha, gamma },
            Method::Fdr { .. } => Method::Fdr { gamma },
            Method::Kfwer { k, .. } => Method::Kfwer { k, gamma },
        }
    }
}

/// Variance formula for the FDTP criterion.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dependence {
    /// Hidden-label dependence; the default.
    #[default]
    Dependent,
    /// Independent `(T_i, H_i)` pairs.
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlSpec {
    #[serde(flatten)]
    pub method: Method,
    #[serde(default)]
    pub dependence: Dependence,
}

impl ControlSpec {
    pub fn new(method: Method, dependence: Dependence) -> Result<Self> {
        let spec = Self { method, dependence };
        spec.validate()?;
        Ok(spec)
    }

    pub fn fdr(gamma: f64) -> Result<Self> {
        Self::new(Method::Fdr { gamma }, Dependence::Dependent)
    }

    pub fn fdtp(alpha: f64, gamma: f64) -> Result<Self> {
        Self::new(Method::Fdtp { alpha, gamma }, Dependence::Dependent)
    }

    pub fn kfwer(k: u64, gamma: f64) -> Result<Self> {
        Self::new(Method::Kfwer { k, gamma }, Dependence::Dependent)
    }

    pub fn validate(&self) -> Result<()> {
        check_probability("gamma", self.method.gamma())?;
        match self.method {
            Method::Fdtp { alpha, .. } => check_probability("alpha", alpha),
            Method::Kfwer { k, .. } if k == 0 => domain("k-FWER needs k >= 1"),
            _ => Ok(()),
        }
    }
}

/// Rejection threshold on `|T|`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(untagged)]
pub enum Threshold {
    At(f64),
    /// No threshold satisfies the rule; nothing is rejected.
    NoRejection,
}

impl Threshold {
    pub fn value(&self) -> Option<f64> {
        match *self {
            Threshold::At(t) => Some(t),
            Threshold::NoRejection => None,
        }
    }

    /// The threshold as an extended real, `NoRejection` being `+inf`.
    pub fn extended(&self) -> f64 {
        self.value().unwrap_or(f64::INFINITY)
    }
}

/// Criterion value at one trial threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PathPoint {
    pub t: f64,
    pub value: f64,
    /// The alternative-mass term of the dependent variance left `[0, pi1]`.
    pub clamped: bool,
    /// The variance hit its floor.
    pub floored: bool,
}

impl PathPoint {
    fn plain(t: f64, value: f64) -> Self {
        Self {
            t,
            value,
            clamped: false,
            floored: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CriticalValue {
    pub threshold: Threshold,
    pub spec: ControlSpec,
    pub pi1_used: f64,
    pub m: usize,
    pub path: Vec<PathPoint>,
    /// The rule already holds at `t = 0` (k-FWER only).
    pub degenerate: bool,
    pub warnings: Vec<String>,
}

impl CriticalValue {
    pub fn t_hat(&self) -> Option<f64> {
        self.threshold.value()
    }

    /// Number of path points where the variance clamp or floor was active.
    pub fn activations(&self) -> usize {
        self.path.iter().filter(|p| p.clamped || p.floored).count()
    }
}

/// Truth and noncentralities for the oracle rules. `deltas[i]` is the
/// noncentrality of feature `i` (`sqrt(n) mu_i / sigma_i` for one sample,
/// `(mu_i - nu_i) / B` for two) and is ignored for nulls.
#[derive(Debug, Clone, PartialEq)]
pub struct OracleModel {
    labels: Vec<bool>,
    deltas: Vec<f64>,
}

impl OracleModel {
    pub fn new(labels: Vec<bool>, deltas: Vec<f64>) -> Result<Self> {
        if labels.len() != deltas.len() {
            return domain(format!(
                "{} labels but {} noncentralities",
                labels.len(),
                deltas.len()
            ));
        }
        if labels.is_empty() {
            return domain("oracle model has no hypotheses");
        }
        if labels.iter().zip(&deltas).any(|(&h, d)| h && !d.is_finite()) {
            return domain("alternative noncentralities must be finite");
        }
        Ok(Self { labels, deltas })
    }

    pub fn m(&self) -> usize {
        self.labels.len()
    }

    pub fn m1(&self) -> usize {
        self.labels.iter().filter(|&&h| h).count()
    }

    pub fn m0(&self) -> usize {
        self.m() - self.m1()
    }

    fn alt_deltas(&self) -> Vec<f64> {
        self.labels
            .iter()
            .zip(&self.deltas)
            .filter(|(&h, _)| h)
            .map(|(_, &d)| d.abs())
            .collect()
    }
}

/// `F0(t) = P(|Z| >= t)`.
fn null_tail(t: f64) -> f64 {
    2.0 * phi_bar(t)
}

/// `F1(t)`: mean of `P(|Z + delta| >= t)` over the alternatives.
fn alt_tail(alt: &[f64], t: f64) -> f64 {
    if alt.is_empty() {
        return 0.0;
    }
    let s: f64 = alt.iter().map(|&d| phi_bar(t - d) + phi_bar(t + d)).sum();
    (s / alt.len() as f64).min(1.0)
}

/// Rejected features and their count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionSet {
    pub rejected: Vec<bool>,
    pub num_rejected: usize,
}

impl DecisionSet {
    pub fn from_mask(rejected: Vec<bool>) -> Self {
        let num_rejected = rejected.iter().filter(|&&r| r).count();
        Self {
            rejected,
            num_rejected,
        }
    }

    pub fn empty(m: usize) -> Self {
        Self::from_mask(vec![false; m])
    }

    /// True when every rejection in `other` is also a rejection here.
    pub fn contains(&self, other: &DecisionSet) -> bool {
        self.rejected
            .iter()
            .zip(&other.rejected)
            .all(|(&a, &b)| a || !b)
    }
}

// Scalar forms of the criteria. `p_hat` is the empirical exceedance at t,
// `tail` is PhiBar(t).

/// `alpha p_hat - 2 (1 - pi1) tail`
pub fn nu_value(p_hat: f64, pi1: f64, alpha: f64, tail: f64) -> f64 {
    alpha * p_hat - 2.0 * (1.0 - pi1) * tail
}

/// Dependent-case variance. Returns `(tau^2, clamped, floored)`.
pub fn tau_sq_dependent_value(p_hat: f64, pi1: f64, alpha: f64, tail: f64) -> (f64, bool, bool) {
    let raw = p_hat - 2.0 * (1.0 - pi1) * tail;
    let a = raw.clamp(0.0, pi1);
    let clamped = a != raw;
    let v = alpha * alpha * a * (1.0 - a / pi1)
        + 2.0 * (1.0 - alpha).powi(2) * (1.0 - pi1) * tail * (1.0 - 2.0 * tail);
    let floored = !(v > TAU_SQ_FLOOR);
    (if floored { TAU_SQ_FLOOR } else { v }, clamped, floored)
}

/// Independent-case variance. Returns `(tau^2, floored)`.
pub fn tau_sq_independent_value(p_hat: f64, pi1: f64, alpha: f64, tail: f64) -> (f64, bool) {
    let pi0 = 1.0 - pi1;
    let v = alpha * alpha * p_hat * (1.0 - p_hat)
        + 4.0 * alpha * pi0 * p_hat * tail
        + 2.0 * pi0 * tail * (1.0 - 2.0 * alpha - 2.0 * pi0 * tail);
    let floored = !(v > TAU_SQ_FLOOR);
    (if floored { TAU_SQ_FLOOR } else { v }, floored)
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        domain(format!("{name} must lie in [0, 1], got {x}"))
    }
}

fn check_t(t: f64) -> Result<()> {
    if t >= 0.0 {
        Ok(())
    } else {
        domain(format!("threshold must be >= 0, got {t}"))
    }
}

/// `nu_m(t) = alpha p_hat(t) - 2 (1 - pi1) PhiBar(t)`.
pub fn nu_m(tv: &TStatVector, pi1: f64, alpha: f64, t: f64) -> Result<f64> {
    check_t(t)?;
    Ok(nu_value(tv.empirical_tail(t), pi1, alpha, phi_bar(t)))
}

/// Dependent-case `tau_m^2(t)`, with the alternative-mass term clamped to
/// `[0, pi1]` and the result floored at 1e-12.
pub fn tau_sq_dependent(tv: &TStatVector, pi1: f64, alpha: f64, t: f64) -> Result<f64> {
    check_t(t)?;
    if !(pi1 > 0.0) {
        return domain("dependent variance divides by pi1, which must be > 0");
    }
    Ok(tau_sq_dependent_value(tv.empirical_tail(t), pi1, alpha, phi_bar(t)).0)
}

/// Independent-case `tau_m^2(t)`, floored at 1e-12.
pub fn tau_sq_independent(tv: &TStatVector, pi1: f64, alpha: f64, t: f64) -> Result<f64> {
    check_t(t)?;
    Ok(tau_sq_independent_value(tv.empirical_tail(t), pi1, alpha, phi_bar(t)).0)
}

/// Smallest candidate `t` with `sqrt(m) nu_m(t) / tau_m(t) >= z_gamma`.
///
/// `pi1` outside `(0, 1 - alpha)` is clipped into
/// `[1e-4, 1 - alpha - 1e-4]` and a warning is recorded.
pub fn critical_fdtp(
    tv: &TStatVector,
    pi1: f64,
    alpha: f64,
    gamma: f64,
    dependence: Dependence,
) -> Result<CriticalValue> {
    let spec = ControlSpec::new(Method::Fdtp { alpha, gamma }, dependence)?;
    check_unit("pi1", pi1)?;
    let m = tv.m_valid();
    if m < 2 {
        return Err(Error::Data(format!("FDTP needs at least 2 valid features, got {m}")));
    }
    let mut warnings = Vec::new();
    let hi = 1.0 - alpha - PI1_CLIP;
    let pi1_used = if pi1 > 0.0 && pi1 < 1.0 - alpha {
        pi1
    } else {
        warnings.push(format!(
            "pi1 = {pi1} violates 0 < pi1 < 1 - alpha; clipped for the FDTP rule"
        ));
        pi1.clamp(PI1_CLIP, hi.max(PI1_CLIP))
    };
    let z = normal_upper_quantile(gamma)?;
    let sqrt_m = (m as f64).sqrt();
    let mut threshold = Threshold::NoRejection;
    let candidates = tv.candidates();
    let mut path = Vec::with_capacity(candidates.len());
    for t in candidates {
        let p = tv.empirical_tail(t);
        let tail = phi_bar(t);
        let nu = nu_value(p, pi1_used, alpha, tail);
        let (tau_sq, clamped, floored) = match dependence {
            Dependence::Dependent => tau_sq_dependent_value(p, pi1_used, alpha, tail),
            Dependence::Independent => {
                let (v, f) = tau_sq_independent_value(p, pi1_used, alpha, tail);
                (v, false, f)
            }
        };
        let value = sqrt_m * nu / tau_sq.sqrt();
        if threshold == Threshold::NoRejection && value >= z {
            threshold = Threshold::At(t);
        }
        path.push(PathPoint {
            t,
            value,
            clamped,
            floored,
        });
    }
    Ok(CriticalValue {
        threshold,
        spec,
        pi1_used,
        m,
        path,
        degenerate: false,
        warnings,
    })
}

/// Smallest candidate `t` with `2 (1 - pi1) PhiBar(t) / p_hat(t) <= gamma`.
pub fn critical_fdr(tv: &TStatVector, pi1: f64, gamma: f64) -> Result<CriticalValue> {
    let spec = ControlSpec::fdr(gamma)?;
    check_unit("pi1", pi1)?;
    let m = tv.m_valid();
    if m == 0 {
        return Err(Error::Data("no feature has a defined statistic".into()));
    }
    let mut threshold = Threshold::NoRejection;
    let candidates = tv.candidates();
    let mut path = Vec::with_capacity(candidates.len());
    for t in candidates {
        let p = tv.empirical_tail(t);
        if p <= 0.0 {
            continue;
        }
        let value = 2.0 * (1.0 - pi1) * phi_bar(t) / p;
        if threshold == Threshold::NoRejection && value <= gamma {
            threshold = Threshold::At(t);
        }
        path.push(PathPoint::plain(t, value));
    }
    Ok(CriticalValue {
        threshold,
        spec,
        pi1_used: pi1,
        m,
        path,
        degenerate: false,
        warnings: Vec::new(),
    })
}

/// Smallest `t >= 0` with `P(Poisson(theta(t)) >= k) <= gamma`, where
/// `theta` is continuous and decreasing in `t`. Returns the satisfying end
/// of the final bracket, the bisection trace and whether `t = 0` already
/// satisfied the rule.
fn solve_poisson_rule(theta: impl Fn(f64) -> f64, k: u64, gamma: f64) -> (f64, Vec<PathPoint>, bool) {
    let crit = |t: f64| poisson_tail_unchecked(theta(t), k);
    let mut path = Vec::new();
    let at_zero = crit(0.0);
    path.push(PathPoint::plain(0.0, at_zero));
    if at_zero <= gamma {
        return (0.0, path, true);
    }
    let tol = Tolerance::new(BISECT_TOL, f64::EPSILON, 200).expect("valid tolerance");
    let (mut lo, mut hi) = (0.0, SEARCH_MAX);
    for _ in 0..tol.max_iter {
        if tol.converged(lo, hi) {
            break;
        }
        let mid = 0.5 * (lo + hi);
        let v = crit(mid);
        path.push(PathPoint::plain(mid, v));
        if v <= gamma {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    (hi, path, false)
}

/// k-FWER critical value from the Poisson rule with rate
/// `2 m (1 - pi1) PhiBar(t)`. Depends only on `m`, `pi1`, `k` and `gamma`.
pub fn critical_kfwer(m: usize, pi1: f64, k: u64, gamma: f64) -> Result<CriticalValue> {
    let spec = ControlSpec::kfwer(k, gamma)?;
    check_unit("pi1", pi1)?;
    if m == 0 {
        return Err(Error::Data("k-FWER needs m >= 1".into()));
    }
    let scale = 2.0 * m as f64 * (1.0 - pi1);
    let (t, path, degenerate) = solve_poisson_rule(|t| scale * phi_bar(t), k, gamma);
    let mut warnings = Vec::new();
    if degenerate {
        warnings.push("rule already satisfied at t = 0; every feature is rejected".into());
    }
    Ok(CriticalValue {
        threshold: Threshold::At(t),
        spec,
        pi1_used: pi1,
        m,
        path,
        degenerate,
        warnings,
    })
}

/// Scan `crit_ok` on a grid over `[0, 40]`, then bisect the first
/// transition to `BISECT_TOL`. Returns the smallest satisfying `t`.
fn scan_then_bisect(
    mut eval: impl FnMut(f64) -> (f64, bool),
    path: &mut Vec<PathPoint>,
) -> Option<f64> {
    let mut grid = Vec::new();
    let mut t = 0.0;
    while t < 15.0 {
        grid.push(t);
        t += 0.01;
    }
    let mut t = 15.0;
    while t <= SEARCH_MAX {
        grid.push(t);
        t += 0.1;
    }
    let mut prev: Option<f64> = None;
    for &t in &grid {
        let (v, ok) = eval(t);
        path.push(PathPoint::plain(t, v));
        if ok {
            let Some(mut lo) = prev else {
                return Some(t);
            };
            let mut hi = t;
            while hi - lo > BISECT_TOL {
                let mid = 0.5 * (lo + hi);
                let (v, ok) = eval(mid);
                path.push(PathPoint::plain(mid, v));
                if ok {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Some(hi);
        }
        prev = Some(t);
    }
    None
}

/// Oracle critical value from the true labels and noncentralities, with
/// `F0(t) = 2 PhiBar(t)` and `F1(t)` the mean of
/// `PhiBar(t - delta) + PhiBar(t + delta)` over the alternatives.
pub fn oracle_critical(model: &OracleModel, spec: &ControlSpec) -> Result<CriticalValue> {
    spec.validate()?;
    let m = model.m();
    let m0 = model.m0() as f64;
    let m1 = model.m1() as f64;
    let alt = model.alt_deltas();
    let mut path = Vec::new();
    let (threshold, degenerate) = match spec.method {
        Method::Fdtp { alpha, gamma } => {
            if m1 == 0.0 {
                return domain("oracle FDTP needs at least one alternative");
            }
            let z = normal_upper_quantile(gamma)?;
            let t = scan_then_bisect(
                |t| {
                    let f0 = null_tail(t);
                    let f1 = alt_tail(&alt, t);
                    let mu = alpha * m1 * f1 - (1.0 - alpha) * m0 * f0;
                    let var = alpha * alpha * m1 * f1 * (1.0 - f1)
                        + (1.0 - alpha).powi(2) * m0 * f0 * (1.0 - f0);
                    let v = if var > 0.0 {
                        mu / var.sqrt()
                    } else if mu > 0.0 {
                        f64::INFINITY
                    } else {
                        f64::NEG_INFINITY
                    };
                    (v, v >= z)
                },
                &mut path,
            );
            (t.map_or(Threshold::NoRejection, Threshold::At), false)
        }
        Method::Fdr { gamma } => {
            if m1 == 0.0 {
                return domain("oracle FDR needs at least one alternative");
            }
            let t = scan_then_bisect(
                |t| {
                    let a = m0 * null_tail(t);
                    let b = m1 * alt_tail(&alt, t);
                    if a + b > 0.0 {
                        let v = a / (a + b);
                        (v, v <= gamma)
                    } else {
                        (f64::NAN, false)
                    }
                },
                &mut path,
            );
            (t.map_or(Threshold::NoRejection, Threshold::At), false)
        }
        Method::Kfwer { k, gamma } => {
            let (t, trace, degenerate) = solve_poisson_rule(|t| m0 * null_tail(t), k, gamma);
            path = trace;
            (Threshold::At(t), degenerate)
        }
    };
    Ok(CriticalValue {
        threshold,
        spec: *spec,
        pi1_used: m1 / m as f64,
        m,
        path,
        degenerate,
        warnings: Vec::new(),
    })
}

/// Reject every valid feature with `|T_i| >= t_hat`.
pub fn reject(tv: &TStatVector, cv: &CriticalValue) -> DecisionSet {
    reject_at(tv, cv.threshold)
}

pub fn reject_at(tv: &TStatVector, threshold: Threshold) -> DecisionSet {
    match threshold {
        Threshold::NoRejection => DecisionSet::empty(tv.len()),
        Threshold::At(t) => DecisionSet::from_mask(
            tv.stats()
                .iter()
                .map(|s| s.is_some_and(|x| x.abs() >= t))
                .collect(),
        ),
    }
}
