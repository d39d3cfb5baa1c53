//! Observation matrices and per-feature t-statistics.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Sampling design of a [`Dataset`].
#[derive(Debug, Clone, PartialEq)]
pub enum Design {
    /// Every column is a replicate of the same condition.
    OneSample,
    /// Columns split into two groups; `second[j]` places column `j` in the
    /// second group. The statistic is mean(first) - mean(second).
    TwoSample { second: Vec<bool> },
}

/// Feature-by-sample matrix, row-major.
#[derive(Debug, Clone)]
pub struct Dataset {
    values: Vec<f64>,
    n_cols: usize,
    feature_ids: Vec<String>,
    design: Design,
}

impl Dataset {
    pub fn new(
        values: Vec<f64>,
        n_cols: usize,
        feature_ids: Vec<String>,
        design: Design,
    ) -> Result<Self> {
        let m = feature_ids.len();
        if m == 0 {
            return Err(Error::Data("dataset has no features".into()));
        }
        if values.len() != m * n_cols {
            return Err(Error::Data(format!(
                "expected {m} x {n_cols} = {} values, got {}",
                m * n_cols,
                values.len()
            )));
        }
        if let Some(pos) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value in feature {} column {}",
                feature_ids[pos / n_cols],
                pos % n_cols
            )));
        }
        match &design {
            Design::OneSample => {
                if n_cols < 2 {
                    return Err(Error::Data(format!(
                        "one-sample design needs at least 2 samples, got {n_cols}"
                    )));
                }
            }
            Design::TwoSample { second } => {
                if second.len() != n_cols {
                    return Err(Error::Data(format!(
                        "{} group labels for {n_cols} columns",
                        second.len()
                    )));
                }
                let n2 = second.iter().filter(|&&s| s).count();
                let n1 = n_cols - n2;
                if n1 < 2 || n2 < 2 {
                    return Err(Error::Data(format!(
                        "two-sample design needs at least 2 samples per group, got {n1} and {n2}"
                    )));
                }
            }
        }
        Ok(Self {
            values,
            n_cols,
            feature_ids,
            design,
        })
    }

    /// Dataset with generated feature ids `f1, f2, ...`.
    pub fn from_rows(values: Vec<f64>, n_cols: usize, design: Design) -> Result<Self> {
        if n_cols == 0 {
            return Err(Error::Data("dataset has no columns".into()));
        }
        let m = values.len() / n_cols;
        let ids = (1..=m).map(|i| format!("f{i}")).collect();
        Self::new(values, n_cols, ids, design)
    }

    pub fn m(&self) -> usize {
        self.feature_ids.len()
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn design(&self) -> &Design {
        &self.design
    }

    pub fn feature_ids(&self) -> &[String] {
        &self.feature_ids
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    /// One- or two-sample statistics according to the design.
    pub fn t_statistics(&self) -> TStatVector {
        match self.design {
            Design::OneSample => one_sample_t(self),
            Design::TwoSample { .. } => two_sample_t(self),
        }
    }
}

/// Sample sizes behind a [`TStatVector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleDesign {
    OneSample { n: usize },
    TwoSample { n1: usize, n2: usize },
}

/// Per-feature t-statistics plus the sorted `|T|` used as candidate
/// thresholds. Features whose statistic is undefined (zero variance) are
/// kept as `None` and excluded from every count.
#[derive(Debug, Clone)]
pub struct TStatVector {
    stats: Vec<Option<f64>>,
    df: Vec<f64>,
    design: SampleDesign,
    abs_sorted: Vec<f64>,
    // prefix[i] = sum of abs_sorted[..i]
    prefix: Vec<f64>,
}

impl TStatVector {
    /// Build from precomputed statistics. `df` gives the per-feature
    /// degrees of freedom used for distributional p-values.
    pub fn new(stats: Vec<Option<f64>>, df: Vec<f64>, design: SampleDesign) -> Result<Self> {
        if stats.len() != df.len() {
            return Err(Error::Data(format!(
                "{} statistics but {} degrees of freedom",
                stats.len(),
                df.len()
            )));
        }
        if stats.iter().flatten().any(|t| t.is_nan()) {
            return Err(Error::Data("NaN t-statistic".into()));
        }
        let mut abs_sorted: Vec<f64> = stats.iter().flatten().map(|t| t.abs()).collect();
        abs_sorted.sort_by(f64::total_cmp);
        let mut prefix = Vec::with_capacity(abs_sorted.len() + 1);
        let mut acc = 0.0;
        prefix.push(acc);
        for &a in &abs_sorted {
            acc += a;
            prefix.push(acc);
        }
        Ok(Self {
            stats,
            df,
            design,
            abs_sorted,
            prefix,
        })
    }

    /// Statistics with the design's nominal degrees of freedom
    /// (`n - 1`, or `n1 + n2 - 2` for two samples).
    pub fn from_values(stats: Vec<f64>, design: SampleDesign) -> Result<Self> {
        let df = match design {
            SampleDesign::OneSample { n } => n.saturating_sub(1) as f64,
            SampleDesign::TwoSample { n1, n2 } => (n1 + n2).saturating_sub(2) as f64,
        };
        let len = stats.len();
        Self::new(stats.into_iter().map(Some).collect(), vec![df; len], design)
    }

    pub fn stats(&self) -> &[Option<f64>] {
        &self.stats
    }

    pub fn df(&self) -> &[f64] {
        &self.df
    }

    pub fn design(&self) -> SampleDesign {
        self.design
    }

    /// Number of features, flagged ones included.
    pub fn len(&self) -> usize {
        self.stats.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stats.is_empty()
    }

    /// Number of features with a defined statistic.
    pub fn m_valid(&self) -> usize {
        self.abs_sorted.len()
    }

    /// Indices of features whose statistic is undefined.
    pub fn flagged(&self) -> Vec<usize> {
        self.stats
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.is_none().then_some(i))
            .collect()
    }

    pub fn abs_sorted(&self) -> &[f64] {
        &self.abs_sorted
    }

    /// Distinct `|T|` values in ascending order.
    pub fn candidates(&self) -> Vec<f64> {
        let mut out = self.abs_sorted.clone();
        out.dedup();
        out
    }

    /// `#{i : |T_i| >= t}` over valid features.
    pub fn count_at_least(&self, t: f64) -> usize {
        self.abs_sorted.len() - self.abs_sorted.partition_point(|&a| a < t)
    }

    /// Empirical exceedance `(1/m) #{i : |T_i| >= t}`.
    pub fn empirical_tail(&self, t: f64) -> f64 {
        let m = self.m_valid();
        if m == 0 {
            return 0.0;
        }
        self.count_at_least(t) as f64 / m as f64
    }

    /// `sum_i min(|T_i|, c)` over valid features, in O(log m).
    pub(crate) fn truncated_sum(&self, c: f64) -> f64 {
        let below = self.abs_sorted.partition_point(|&a| a < c);
        self.prefix[below] + c * (self.abs_sorted.len() - below) as f64
    }
}

/// Threshold below which a standard deviation is treated as zero, relative
/// to the magnitude of the data. Rounding in the mean of a constant row
/// otherwise leaves a spurious ~1e-17 spread.
fn degenerate_sd(sd: f64, scale: f64) -> bool {
    sd <= 16.0 * f64::EPSILON * scale
}

fn mean_and_ss(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64, f64, usize) {
    let mut n = 0usize;
    let mut sum = 0.0;
    let mut scale = 0.0f64;
    for x in xs.clone() {
        n += 1;
        sum += x;
        scale = scale.max(x.abs());
    }
    let mean0 = sum / n as f64;
    // Second pass with a correction term for the rounding in `mean0`.
    let mut ss = 0.0;
    let mut corr = 0.0;
    for x in xs {
        let d = x - mean0;
        ss += d * d;
        corr += d;
    }
    let nf = n as f64;
    let mean = mean0 + corr / nf;
    let ss = (ss - corr * corr / nf).max(0.0);
    (mean, ss, scale, n)
}

/// One-sample statistic `sqrt(n) * mean / sd` per row (sd with divisor n-1).
pub fn one_sample_t(data: &Dataset) -> TStatVector {
    let n = data.n_cols();
    let stats: Vec<Option<f64>> = (0..data.m())
        .into_par_iter()
        .map(|i| one_sample_row(data.row(i)))
        .collect();
    let df = vec![(n - 1) as f64; stats.len()];
    TStatVector::new(stats, df, SampleDesign::OneSample { n }).expect("lengths agree")
}

pub(crate) fn one_sample_row(row: &[f64]) -> Option<f64> {
    let (mean, ss, scale, n) = mean_and_ss(row.iter().copied());
    let sd = (ss / (n - 1) as f64).sqrt();
    if degenerate_sd(sd, scale) {
        return None;
    }
    Some((n as f64).sqrt() * mean / sd)
}

/// Welch statistic `(mean1 - mean2) / sqrt(s1^2/n1 + s2^2/n2)` per row,
/// with Welch–Satterthwaite degrees of freedom recorded per feature.
///
/// # Panics
/// If the dataset is not two-sample.
pub fn two_sample_t(data: &Dataset) -> TStatVector {
    let Design::TwoSample { second } = data.design() else {
        panic!("two_sample_t called on a one-sample dataset");
    };
    let n2 = second.iter().filter(|&&s| s).count();
    let n1 = second.len() - n2;
    let rows: Vec<(Option<f64>, f64)> = (0..data.m())
        .into_par_iter()
        .map(|i| two_sample_row(data.row(i), second))
        .collect();
    let (stats, df) = rows.into_iter().unzip();
    TStatVector::new(stats, df, SampleDesign::TwoSample { n1, n2 }).expect("lengths agree")
}

pub(crate) fn two_sample_row(row: &[f64], second: &[bool]) -> (Option<f64>, f64) {
    let first_vals = row.iter().zip(second).filter(|(_, &s)| !s).map(|(&x, _)| x);
    let second_vals = row.iter().zip(second).filter(|(_, &s)| s).map(|(&x, _)| x);
    let (m1, ss1, sc1, n1) = mean_and_ss(first_vals);
    let (m2, ss2, sc2, n2) = mean_and_ss(second_vals);
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let v1 = ss1 / (n1f - 1.0);
    let v2 = ss2 / (n2f - 1.0);
    let z1 = degenerate_sd(v1.sqrt(), sc1);
    let z2 = degenerate_sd(v2.sqrt(), sc2);
    if z1 && z2 {
        return (None, f64::NAN);
    }
    let a = if z1 { 0.0 } else { v1 / n1f };
    let b = if z2 { 0.0 } else { v2 / n2f };
    let se2 = a + b;
    let df = se2 * se2 / (a * a / (n1f - 1.0) + b * b / (n2f - 1.0));
    (Some((m1 - m2) / se2.sqrt()), df)
}
