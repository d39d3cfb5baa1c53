//! Monte-Carlo harness for the numerical studies.
//!
//! A replicate draws truth labels (i.i.d. or from a two-state Markov chain
//! started at its stationary law), one effect per alternative row and an
//! `m x n` block of errors, then computes the row statistics. Replicates are
//! independent, each with its own random stream, and run on the rayon pool.
//! Results are collected in replicate order before any summation, so every
//! aggregate is bit-identical for any number of worker threads.

pub mod rng;

use rand::Rng;
use rand_distr::{Cauchy, Distribution, Exp1, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{
    bh_procedure, default_lambda_grid, p_values, reject_by_q, storey_q_values, PValueSource,
    PValueVector, QValueResult,
};
use crate::critical::{
    critical_fdr, critical_fdtp, critical_kfwer, reject, ControlSpec, DecisionSet, Dependence,
    Method, Threshold,
};
use crate::error::{check_probability, domain, Error, Result};
use crate::pi1::{estimate_pi1, GridSpec, Pi1Estimate};
use crate::tstats::{one_sample_row, two_sample_row, Dataset, Design, SampleDesign, TStatVector};

pub use rng::{rep_stream, splitmix64, Stream};

/// Two-state chain on truth labels. `p1` is the 0 -> 1 transition
/// probability and `p0` the 1 -> 0 transition probability.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HmmParams {
    pub p0: f64,
    pub p1: f64,
}

impl HmmParams {
    pub fn new(p0: f64, p1: f64) -> Result<Self> {
        check_probability("p0", p0)?;
        check_probability("p1", p1)?;
        Ok(Self { p0, p1 })
    }

    /// Long-run share of alternatives, `p1 / (p0 + p1)`.
    pub fn stationary_pi1(&self) -> f64 {
        self.p1 / (self.p0 + self.p1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Truth {
    Iid { pi1: f64 },
    Hmm { p0: f64, p1: f64 },
}

impl Truth {
    pub fn pi1(&self) -> f64 {
        match *self {
            Truth::Iid { pi1 } => pi1,
            Truth::Hmm { p0, p1 } => HmmParams { p0, p1 }.stationary_pi1(),
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            Truth::Iid { pi1 } if !(0.0..=1.0).contains(&pi1) => {
                domain(format!("truth.pi1 must lie in [0, 1], got {pi1}"))
            }
            Truth::Iid { .. } => Ok(()),
            Truth::Hmm { p0, p1 } => HmmParams::new(p0, p1).map(|_| ()),
        }
    }
}

/// Law of the mean shift of an alternative row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectLaw {
    /// `Unif(lo, hi)` or `Unif(-hi, -lo)` with equal probability.
    MirroredUniform { lo: f64, hi: f64 },
    Uniform { lo: f64, hi: f64 },
}

impl EffectLaw {
    fn bounds(&self) -> (f64, f64) {
        match *self {
            EffectLaw::MirroredUniform { lo, hi } | EffectLaw::Uniform { lo, hi } => (lo, hi),
        }
    }

    fn sample(&self, rng: &mut Stream) -> f64 {
        let (lo, hi) = self.bounds();
        let u = lo + (hi - lo) * rng.random::<f64>();
        match self {
            EffectLaw::MirroredUniform { .. } if rng.random::<bool>() => -u,
            _ => u,
        }
    }
}

/// Error distribution. Exponential errors are `Exp(1) - 1`; Cauchy errors
/// are standard Cauchy and have no mean to center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ErrorModel {
    Normal,
    StudentT { df: f64 },
    Cauchy,
    Laplace,
    Exponential,
}

impl ErrorModel {
    /// Standard deviation of one error, when finite.
    pub fn sd(&self) -> Option<f64> {
        match *self {
            ErrorModel::Normal | ErrorModel::Exponential => Some(1.0),
            ErrorModel::Laplace => Some(std::f64::consts::SQRT_2),
            ErrorModel::StudentT { df } if df > 2.0 => Some((df / (df - 2.0)).sqrt()),
            ErrorModel::StudentT { .. } | ErrorModel::Cauchy => None,
        }
    }

    fn validate(&self) -> Result<()> {
        match *self {
            ErrorModel::StudentT { df } if !(df > 0.0 && df.is_finite()) => {
                domain(format!("error.df must be finite and > 0, got {df}"))
            }
            _ => Ok(()),
        }
    }
}

enum ErrorSampler {
    Normal,
    StudentT(StudentT<f64>),
    Cauchy(Cauchy<f64>),
    Laplace,
    Exponential,
}

impl ErrorSampler {
    fn new(model: ErrorModel) -> Self {
        match model {
            ErrorModel::Normal => Self::Normal,
            ErrorModel::StudentT { df } => {
                Self::StudentT(StudentT::new(df).expect("df validated"))
            }
            ErrorModel::Cauchy => Self::Cauchy(Cauchy::new(0.0, 1.0).expect("unit scale")),
            ErrorModel::Laplace => Self::Laplace,
            ErrorModel::Exponential => Self::Exponential,
        }
    }

    #[inline]
    fn sample(&self, rng: &mut Stream) -> f64 {
        match self {
            Self::Normal => rng.sample(StandardNormal),
            Self::StudentT(d) => d.sample(rng),
            Self::Cauchy(d) => d.sample(rng),
            Self::Laplace => {
                // inverse CDF of the unit-scale Laplace law
                let u: f64 = rng.random::<f64>() - 0.5;
                -u.signum() * (-2.0 * u.abs()).ln_1p()
            }
            Self::Exponential => {
                let e: f64 = rng.sample(Exp1);
                e - 1.0
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SimDesign {
    OneSample { n: usize },
    /// Group one has mean zero; group two carries the effect.
    TwoSample { n1: usize, n2: usize },
}

impl SimDesign {
    pub fn n_cols(&self) -> usize {
        match *self {
            SimDesign::OneSample { n } => n,
            SimDesign::TwoSample { n1, n2 } => n1 + n2,
        }
    }

    fn second_mask(&self) -> Option<Vec<bool>> {
        match *self {
            SimDesign::OneSample { .. } => None,
            SimDesign::TwoSample { n1, n2 } => {
                Some((0..n1 + n2).map(|j| j >= n1).collect())
            }
        }
    }

    fn sample_design(&self) -> SampleDesign {
        match *self {
            SimDesign::OneSample { n } => SampleDesign::OneSample { n },
            SimDesign::TwoSample { n1, n2 } => SampleDesign::TwoSample { n1, n2 },
        }
    }
}

fn default_alpha() -> f64 {
    0.1
}

fn default_k() -> u64 {
    10
}

/// Everything that determines a study's random draws and its estimators.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub m: usize,
    pub design: SimDesign,
    pub truth: Truth,
    pub effect: EffectLaw,
    pub error: ErrorModel,
    pub reps: usize,
    pub seed: u64,
    /// Truncation grid for the alternative-proportion estimate.
    #[serde(default)]
    pub pi1_grid: GridSpec,
    /// Null law used for baseline p-values.
    #[serde(default)]
    pub pvalues: PValueSource,
    /// `alpha` in the tally `P(FDP >= alpha)` for procedures without one.
    #[serde(default = "default_alpha")]
    pub eval_alpha: f64,
    /// `k` in the tally `P(V >= k)` for procedures without one.
    #[serde(default = "default_k")]
    pub eval_k: u64,
}

impl SimConfig {
    /// Config with default grid, p-values and evaluation parameters.
    pub fn new(
        m: usize,
        design: SimDesign,
        truth: Truth,
        effect: EffectLaw,
        error: ErrorModel,
        reps: usize,
        seed: u64,
    ) -> Result<Self> {
        let cfg = Self {
            m,
            design,
            truth,
            effect,
            error,
            reps,
            seed,
            pi1_grid: GridSpec::default(),
            pvalues: PValueSource::default(),
            eval_alpha: default_alpha(),
            eval_k: default_k(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.m == 0 {
            return domain("m must be positive");
        }
        if self.reps == 0 {
            return domain("reps must be positive");
        }
        match self.design {
            SimDesign::OneSample { n } if n < 2 => {
                return domain(format!("design.n must be at least 2, got {n}"))
            }
            SimDesign::TwoSample { n1, n2 } if n1 < 2 || n2 < 2 => {
                return domain(format!("design.n1 and design.n2 must be at least 2, got {n1}, {n2}"))
            }
            _ => {}
        }
        self.truth.validate()?;
        let (lo, hi) = self.effect.bounds();
        if !(lo.is_finite() && hi.is_finite() && lo < hi) {
            return domain(format!("effect needs finite lo < hi, got {lo}, {hi}"));
        }
        self.error.validate()?;
        self.pi1_grid.values()?;
        check_probability("eval_alpha", self.eval_alpha)?;
        Ok(())
    }
}

/// Truth labels, `true` marking an alternative.
pub fn gen_labels(truth: &Truth, m: usize, rng: &mut Stream) -> Vec<bool> {
    match *truth {
        Truth::Iid { pi1 } => (0..m).map(|_| rng.random::<f64>() < pi1).collect(),
        Truth::Hmm { p0, p1 } => {
            let mut labels = Vec::with_capacity(m);
            if m == 0 {
                return labels;
            }
            let pi1 = HmmParams { p0, p1 }.stationary_pi1();
            let mut state = rng.random::<f64>() < pi1;
            labels.push(state);
            for _ in 1..m {
                let u = rng.random::<f64>();
                state = if state { u >= p0 } else { u < p1 };
                labels.push(state);
            }
            labels
        }
    }
}

/// Draws one row into `row` and returns its mean shift.
fn fill_row(
    cfg: &SimConfig,
    sampler: &ErrorSampler,
    alternative: bool,
    row: &mut [f64],
    rng: &mut Stream,
) -> f64 {
    let mu = if alternative { cfg.effect.sample(rng) } else { 0.0 };
    let shift_from = match cfg.design {
        SimDesign::OneSample { .. } => 0,
        SimDesign::TwoSample { n1, .. } => n1,
    };
    for (j, x) in row.iter_mut().enumerate() {
        let e = sampler.sample(rng);
        *x = if j >= shift_from { mu + e } else { e };
    }
    mu
}

/// Full observation matrix for the given labels. Feature ids are `f0`,
/// `f1`, ... and two-sample columns put group one first.
pub fn gen_dataset(cfg: &SimConfig, labels: &[bool], rng: &mut Stream) -> Result<Dataset> {
    Ok(gen_dataset_with_effects(cfg, labels, rng)?.0)
}

/// As [`gen_dataset`], also returning the per-row mean shifts.
pub fn gen_dataset_with_effects(
    cfg: &SimConfig,
    labels: &[bool],
    rng: &mut Stream,
) -> Result<(Dataset, Vec<f64>)> {
    cfg.validate()?;
    if labels.len() != cfg.m {
        return Err(Error::Data(format!(
            "{} labels for m = {}",
            labels.len(),
            cfg.m
        )));
    }
    let n = cfg.design.n_cols();
    let sampler = ErrorSampler::new(cfg.error);
    let mut values = vec![0.0; cfg.m * n];
    let effects: Vec<f64> = values
        .chunks_mut(n)
        .zip(labels)
        .map(|(row, &alt)| fill_row(cfg, &sampler, alt, row, rng))
        .collect();
    let design = match cfg.design.second_mask() {
        None => Design::OneSample,
        Some(second) => Design::TwoSample { second },
    };
    let ids = (0..cfg.m).map(|i| format!("f{i}")).collect();
    Ok((Dataset::new(values, n, ids, design)?, effects))
}

/// One replicate's truth and statistics.
#[derive(Debug, Clone)]
pub struct Replicate {
    pub labels: Vec<bool>,
    pub effects: Vec<f64>,
    pub tstats: TStatVector,
}

impl Replicate {
    pub fn m1(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }
}

/// Replicate `rep` of the study. Draws exactly the numbers that
/// [`gen_labels`] followed by [`gen_dataset`] would on the same stream,
/// without holding the matrix in memory.
pub fn replicate(cfg: &SimConfig, rep: u64) -> Replicate {
    let mut rng = rep_stream(cfg.seed, rep);
    let labels = gen_labels(&cfg.truth, cfg.m, &mut rng);
    let sampler = ErrorSampler::new(cfg.error);
    let second = cfg.design.second_mask();
    let mut row = vec![0.0; cfg.design.n_cols()];
    let mut effects = Vec::with_capacity(cfg.m);
    let mut stats = Vec::with_capacity(cfg.m);
    let mut dfs = Vec::with_capacity(cfg.m);
    let nominal_df = (cfg.design.n_cols() - 1) as f64;
    for &alt in &labels {
        effects.push(fill_row(cfg, &sampler, alt, &mut row, &mut rng));
        match &second {
            None => {
                stats.push(one_sample_row(&row));
                dfs.push(nominal_df);
            }
            Some(mask) => {
                let (t, df) = two_sample_row(&row, mask);
                stats.push(t);
                dfs.push(df);
            }
        }
    }
    let tstats =
        TStatVector::new(stats, dfs, cfg.design.sample_design()).expect("lengths agree");
    Replicate {
        labels,
        effects,
        tstats,
    }
}

/// Standardized effects `delta_i` for the oracle critical values: the
/// mean shift over the standard error of the mean difference. Errors
/// without a finite variance use unit scale.
pub fn oracle_deltas(cfg: &SimConfig, effects: &[f64]) -> Vec<f64> {
    let sd = cfg.error.sd().unwrap_or(1.0);
    let se = match cfg.design {
        SimDesign::OneSample { n } => sd / (n as f64).sqrt(),
        SimDesign::TwoSample { n1, n2 } => sd * (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt(),
    };
    effects.iter().map(|mu| mu / se).collect()
}

/// A thresholding procedure evaluated by [`run_study`]. The level `gamma`
/// is supplied per study level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Procedure {
    /// Data-driven FDR critical value.
    Fdr,
    /// Data-driven FDTP critical value.
    Fdtp {
        alpha: f64,
        #[serde(default)]
        dependence: Dependence,
    },
    /// Data-driven k-FWER critical value.
    Kfwer { k: u64 },
    /// Benjamini–Hochberg step-up on p-values.
    Bh,
    /// Storey q-values.
    St,
}

impl Procedure {
    pub fn name(&self) -> String {
        match self {
            Procedure::Fdr => "ck-fdr".into(),
            Procedure::Fdtp { alpha, .. } => format!("ck-fdtp(alpha={alpha})"),
            Procedure::Kfwer { k } => format!("ck-kfwer(k={k})"),
            Procedure::Bh => "bh".into(),
            Procedure::St => "st".into(),
        }
    }

    fn needs_pvalues(&self) -> bool {
        matches!(self, Procedure::Bh | Procedure::St)
    }

    fn control(&self, gamma: f64) -> Result<ControlSpec> {
        let method = match *self {
            Procedure::Fdr => Method::Fdr { gamma },
            Procedure::Fdtp { alpha, .. } => Method::Fdtp { alpha, gamma },
            Procedure::Kfwer { k } => Method::Kfwer { k, gamma },
            Procedure::Bh | Procedure::St => return domain("baselines have no control spec"),
        };
        let dependence = match *self {
            Procedure::Fdtp { dependence, .. } => dependence,
            _ => Dependence::default(),
        };
        ControlSpec::new(method, dependence)
    }
}

/// One procedure's decision on one replicate.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub decisions: DecisionSet,
    /// Alternative-proportion estimate the procedure used.
    pub pi1_hat: Option<f64>,
    pub t_hat: Option<f64>,
    /// The procedure errored and was scored as rejecting nothing.
    pub failed: bool,
}

/// Per-replicate quantities shared by all procedures and levels.
pub struct Analysis<'a> {
    tstats: &'a TStatVector,
    pi1: Result<Pi1Estimate>,
    pvalues: Option<PValueVector>,
    storey: Option<Result<QValueResult>>,
}

impl<'a> Analysis<'a> {
    pub fn new(cfg: &SimConfig, rep: &'a Replicate, procedures: &[Procedure]) -> Self {
        let tstats = &rep.tstats;
        let pvalues = procedures
            .iter()
            .any(Procedure::needs_pvalues)
            .then(|| p_values(tstats, cfg.pvalues));
        let storey = procedures
            .contains(&Procedure::St)
            .then(|| storey_q_values(pvalues.as_ref().expect("computed above"), &default_lambda_grid()));
        Self {
            tstats,
            pi1: estimate_pi1(tstats, &cfg.pi1_grid),
            pvalues,
            storey,
        }
    }

    pub fn pi1(&self) -> Option<&Pi1Estimate> {
        self.pi1.as_ref().ok()
    }

    pub fn decide(&self, procedure: &Procedure, gamma: f64) -> Outcome {
        let m = self.tstats.len();
        let failed = |pi1_hat| Outcome {
            decisions: DecisionSet::empty(m),
            pi1_hat,
            t_hat: None,
            failed: true,
        };
        match procedure {
            Procedure::Bh => match bh_procedure(self.pvalues.as_ref().expect("p-values"), gamma) {
                Ok(decisions) => Outcome {
                    decisions,
                    pi1_hat: None,
                    t_hat: None,
                    failed: false,
                },
                Err(_) => failed(None),
            },
            Procedure::St => match self.storey.as_ref().expect("q-values") {
                Ok(q) => Outcome {
                    decisions: reject_by_q(&q.q, gamma),
                    pi1_hat: Some(1.0 - q.pi0_hat),
                    t_hat: None,
                    failed: false,
                },
                Err(_) => failed(None),
            },
            _ => {
                let Ok(est) = &self.pi1 else {
                    return failed(None);
                };
                let pi1 = est.pi1_hat;
                let cv = procedure.control(gamma).and_then(|spec| match spec.method {
                    Method::Fdr { gamma } => critical_fdr(self.tstats, pi1, gamma),
                    Method::Fdtp { alpha, gamma } => {
                        critical_fdtp(self.tstats, pi1, alpha, gamma, spec.dependence)
                    }
                    Method::Kfwer { k, gamma } => {
                        critical_kfwer(self.tstats.m_valid(), pi1, k, gamma)
                    }
                });
                match cv {
                    Ok(cv) => Outcome {
                        decisions: reject(self.tstats, &cv),
                        pi1_hat: Some(pi1),
                        t_hat: cv.t_hat(),
                        failed: false,
                    },
                    Err(_) => failed(Some(pi1)),
                }
            }
        }
    }
}

/// Outcome table counts for one procedure on one replicate.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub m0: usize,
    pub m1: usize,
    /// Rejections.
    pub r: usize,
    /// False rejections.
    pub v: usize,
    /// True rejections.
    pub s: usize,
    /// `V / R`, zero when nothing is rejected.
    pub fdp: f64,
    pub pi1_hat: Option<f64>,
    pub t_hat: Option<f64>,
    pub failed: bool,
}

impl RepRecord {
    fn tally(rep: usize, labels: &[bool], outcome: &Outcome) -> Self {
        let m1 = labels.iter().filter(|&&l| l).count();
        let (mut r, mut v) = (0, 0);
        for (&rej, &alt) in outcome.decisions.rejected.iter().zip(labels) {
            if rej {
                r += 1;
                v += usize::from(!alt);
            }
        }
        Self {
            rep,
            m0: labels.len() - m1,
            m1,
            r,
            v,
            s: r - v,
            fdp: if r == 0 { 0.0 } else { v as f64 / r as f64 },
            pi1_hat: outcome.pi1_hat,
            t_hat: outcome.t_hat,
            failed: outcome.failed,
        }
    }

    /// True non-rejections.
    pub fn u(&self) -> usize {
        self.m0 - self.v
    }

    /// False non-rejections.
    pub fn f(&self) -> usize {
        self.m1 - self.s
    }

    /// Non-rejections.
    pub fn w(&self) -> usize {
        self.m0 + self.m1 - self.r
    }
}

/// Monte-Carlo summary of one procedure at one level.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct McEvaluation {
    pub procedure: Procedure,
    pub name: String,
    pub level: f64,
    /// `alpha` used for the `fdtp` tally.
    pub alpha: f64,
    /// `k` used for the `kfwer` tally.
    pub k: u64,
    pub fdr: f64,
    /// Share of replicates with `FDP >= alpha`.
    pub fdtp: f64,
    /// Share of replicates with `V >= k`.
    pub kfwer: f64,
    /// `mean(S) / mean(m1)`; absent when no replicate has an alternative.
    pub ndr: Option<f64>,
    /// RMSE of the procedure's alternative-proportion estimate against
    /// the realized `m1 / m`.
    pub rmse_pi1: Option<f64>,
    pub failures: usize,
    pub records: Vec<RepRecord>,
}

impl McEvaluation {
    fn aggregate(procedure: Procedure, level: f64, alpha: f64, k: u64, m: usize, records: Vec<RepRecord>) -> Self {
        let n = records.len() as f64;
        let fdr = records.iter().map(|r| r.fdp).sum::<f64>() / n;
        let fdtp = records.iter().filter(|r| r.fdp >= alpha).count() as f64 / n;
        let kfwer = records.iter().filter(|r| r.v as u64 >= k).count() as f64 / n;
        let total_m1: usize = records.iter().map(|r| r.m1).sum();
        let total_s: usize = records.iter().map(|r| r.s).sum();
        let ndr = (total_m1 > 0).then(|| total_s as f64 / total_m1 as f64);
        let pairs: Option<Vec<(f64, f64)>> = records
            .iter()
            .map(|r| r.pi1_hat.map(|p| (p, r.m1 as f64 / m as f64)))
            .collect();
        let rmse_pi1 = pairs.and_then(|p| {
            let (est, truth): (Vec<f64>, Vec<f64>) = p.into_iter().unzip();
            rmse(&est, &truth).ok()
        });
        Self {
            procedure,
            name: procedure.name(),
            level,
            alpha,
            k,
            fdr,
            fdtp,
            kfwer,
            ndr,
            rmse_pi1,
            failures: records.iter().filter(|r| r.failed).count(),
            records,
        }
    }
}

/// Runs `cfg.reps` replicates and scores every procedure at every level.
/// Evaluations are ordered by procedure, then level.
pub fn run_study(
    cfg: &SimConfig,
    procedures: &[Procedure],
    levels: &[f64],
) -> Result<Vec<McEvaluation>> {
    cfg.validate()?;
    if procedures.is_empty() || levels.is_empty() {
        return domain("a study needs at least one procedure and one level");
    }
    for &g in levels {
        check_probability("level", g)?;
    }
    for p in procedures {
        match *p {
            Procedure::Fdtp { alpha, .. } => check_probability("alpha", alpha)?,
            Procedure::Kfwer { k: 0 } => return domain("k must be at least 1"),
            _ => {}
        }
    }
    let per_rep: Vec<Vec<RepRecord>> = (0..cfg.reps)
        .into_par_iter()
        .map(|r| {
            let rep = replicate(cfg, r as u64);
            let analysis = Analysis::new(cfg, &rep, procedures);
            let mut out = Vec::with_capacity(procedures.len() * levels.len());
            for p in procedures {
                for &g in levels {
                    out.push(RepRecord::tally(r, &rep.labels, &analysis.decide(p, g)));
                }
            }
            out
        })
        .collect();
    let cells = procedures.len() * levels.len();
    let mut columns: Vec<Vec<RepRecord>> = (0..cells).map(|_| Vec::with_capacity(cfg.reps)).collect();
    for rep in per_rep {
        for (col, rec) in columns.iter_mut().zip(rep) {
            col.push(rec);
        }
    }
    let mut columns = columns.into_iter();
    let mut evals = Vec::with_capacity(cells);
    for &p in procedures {
        let (alpha, k) = match p {
            Procedure::Fdtp { alpha, .. } => (alpha, cfg.eval_k),
            Procedure::Kfwer { k } => (cfg.eval_alpha, k),
            _ => (cfg.eval_alpha, cfg.eval_k),
        };
        for &g in levels {
            let records = columns.next().expect("one column per cell");
            evals.push(McEvaluation::aggregate(p, g, alpha, k, cfg.m, records));
        }
    }
    Ok(evals)
}

/// Sorted `|T|` of all valid features and of the valid nulls.
struct Exceedances {
    all: Vec<f64>,
    null: Vec<f64>,
}

impl Exceedances {
    fn new(rep: &Replicate) -> Self {
        let null = {
            let mut v: Vec<f64> = rep
                .tstats
                .stats()
                .iter()
                .zip(&rep.labels)
                .filter(|(_, &alt)| !alt)
                .filter_map(|(s, _)| s.map(f64::abs))
                .collect();
            v.sort_by(f64::total_cmp);
            v
        };
        Self {
            all: rep.tstats.abs_sorted().to_vec(),
            null,
        }
    }

    fn counts(&self, t: f64) -> (usize, usize) {
        let at_least = |v: &[f64]| v.len() - v.partition_point(|&a| a < t);
        (at_least(&self.all), at_least(&self.null))
    }
}

fn gold_grid() -> impl Iterator<Item = f64> {
    let fine = (0..12_000).map(|i| i as f64 * 1e-3);
    let coarse = (0..=280).map(|i| 12.0 + i as f64 * 0.1);
    fine.chain(coarse)
}

/// Threshold at which the Monte-Carlo estimate of the controlled quantity
/// first drops to `gamma`: `inf { t : estimate(t) <= gamma }`.
///
/// The estimate is evaluated from shared replicate statistics on a grid of
/// step 0.001 up to 12 and 0.1 up to 40, and the crossing is then refined
/// by bisection. Returns `NoRejection` when the target is never reached.
pub fn gold_standard_critical(cfg: &SimConfig, spec: &ControlSpec, reps: usize) -> Result<Threshold> {
    cfg.validate()?;
    spec.validate()?;
    if reps < 100 {
        return domain(format!("gold-standard search needs at least 100 replicates, got {reps}"));
    }
    let exceed: Vec<Exceedances> = (0..reps)
        .into_par_iter()
        .map(|r| Exceedances::new(&replicate(cfg, r as u64)))
        .collect();
    let estimate = |t: f64| -> f64 {
        let hits = exceed.iter().map(|e| {
            let (r, v) = e.counts(t);
            let fdp = if r == 0 { 0.0 } else { v as f64 / r as f64 };
            match spec.method {
                Method::Fdr { .. } => fdp,
                Method::Fdtp { alpha, .. } => f64::from(u8::from(fdp >= alpha)),
                Method::Kfwer { k, .. } => f64::from(u8::from(v as u64 >= k)),
            }
        });
        hits.sum::<f64>() / reps as f64
    };
    let gamma = spec.method.gamma();
    let mut prev = None;
    for t in gold_grid() {
        if estimate(t) <= gamma {
            let Some(mut lo) = prev else {
                return Ok(Threshold::At(t));
            };
            let mut hi = t;
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if estimate(mid) <= gamma {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            return Ok(Threshold::At(hi));
        }
        prev = Some(t);
    }
    Ok(Threshold::NoRejection)
}

/// Root-mean-square difference between paired estimates and truths.
pub fn rmse(estimates: &[f64], truths: &[f64]) -> Result<f64> {
    if estimates.is_empty() || estimates.len() != truths.len() {
        return domain("rmse needs equally long, non-empty inputs");
    }
    let ss: f64 = estimates
        .iter()
        .zip(truths)
        .map(|(e, t)| (e - t) * (e - t))
        .sum();
    Ok((ss / estimates.len() as f64).sqrt())
}

/// RMSE of the alternative-proportion estimate against each replicate's
/// realized `m1 / m`, over replicates `0..reps`.
pub fn rmse_pi1(cfg: &SimConfig, reps: usize) -> Result<f64> {
    cfg.validate()?;
    if reps < 2 {
        return domain(format!("rmse needs at least 2 replicates, got {reps}"));
    }
    let pairs: Vec<Result<(f64, f64)>> = (0..reps)
        .into_par_iter()
        .map(|r| {
            let rep = replicate(cfg, r as u64);
            let est = estimate_pi1(&rep.tstats, &cfg.pi1_grid)?;
            Ok((est.pi1_hat, rep.m1() as f64 / cfg.m as f64))
        })
        .collect();
    let (est, truth): (Vec<f64>, Vec<f64>) = pairs.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    rmse(&est, &truth)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(truth: Truth, error: ErrorModel) -> SimConfig {
        SimConfig::new(
            300,
            SimDesign::OneSample { n: 12 },
            truth,
            EffectLaw::MirroredUniform { lo: 0.5, hi: 1.0 },
            error,
            4,
            7,
        )
        .unwrap()
    }

    #[test]
    fn stationary_share() {
        let h = HmmParams::new(0.8, 0.2).unwrap();
        assert!((h.stationary_pi1() - 0.2).abs() < 1e-15);
        assert!(HmmParams::new(0.0, 0.2).is_err());
        assert!(HmmParams::new(0.3, 1.0).is_err());
    }

    #[test]
    fn vanishing_entry_rate_gives_all_null() {
        let mut rng = rep_stream(1, 0);
        let labels = gen_labels(&Truth::Hmm { p0: 0.5, p1: 1e-15 }, 10_000, &mut rng);
        assert!(labels.iter().all(|&l| !l));
    }

    #[test]
    fn iid_extremes() {
        let mut rng = rep_stream(1, 0);
        assert!(gen_labels(&Truth::Iid { pi1: 0.0 }, 500, &mut rng).iter().all(|&l| !l));
        assert!(gen_labels(&Truth::Iid { pi1: 1.0 }, 500, &mut rng).iter().all(|&l| l));
    }

    #[test]
    fn replicate_matches_materialized_dataset() {
        for design in [SimDesign::OneSample { n: 6 }, SimDesign::TwoSample { n1: 3, n2: 5 }] {
            let mut cfg = small(Truth::Hmm { p0: 0.6, p1: 0.3 }, ErrorModel::Laplace);
            cfg.design = design;
            let rep = replicate(&cfg, 2);
            let mut rng = rep_stream(cfg.seed, 2);
            let labels = gen_labels(&cfg.truth, cfg.m, &mut rng);
            let (data, effects) = gen_dataset_with_effects(&cfg, &labels, &mut rng).unwrap();
            let tv = data.t_statistics();
            assert_eq!(labels, rep.labels);
            assert_eq!(effects, rep.effects);
            assert_eq!(tv.stats(), rep.tstats.stats());
            assert_eq!(tv.df(), rep.tstats.df());
        }
    }

    #[test]
    fn null_rows_have_zero_shift_and_effects_respect_law() {
        let cfg = small(Truth::Iid { pi1: 0.5 }, ErrorModel::Normal);
        let rep = replicate(&cfg, 0);
        for (&alt, &mu) in rep.labels.iter().zip(&rep.effects) {
            if alt {
                assert!((0.5..=1.0).contains(&mu.abs()));
            } else {
                assert_eq!(mu, 0.0);
            }
        }
        let signs = rep.effects.iter().filter(|&&mu| mu < 0.0).count();
        assert!(signs > 0 && signs < rep.m1());
    }

    #[test]
    fn uniform_effect_stays_positive() {
        let mut cfg = small(Truth::Iid { pi1: 1.0 }, ErrorModel::Normal);
        cfg.effect = EffectLaw::Uniform { lo: 0.5, hi: 1.0 };
        let rep = replicate(&cfg, 0);
        assert!(rep.effects.iter().all(|mu| (0.5..=1.0).contains(mu)));
    }

    #[test]
    fn config_validation() {
        let ok = small(Truth::Iid { pi1: 0.2 }, ErrorModel::Normal);
        let mut bad = ok.clone();
        bad.reps = 0;
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.effect = EffectLaw::Uniform { lo: 1.0, hi: 0.5 };
        assert!(bad.validate().is_err());
        let mut bad = ok.clone();
        bad.design = SimDesign::TwoSample { n1: 1, n2: 4 };
        assert!(bad.validate().is_err());
        let mut bad = ok;
        bad.error = ErrorModel::StudentT { df: -1.0 };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn config_json_round_trip() {
        let cfg = small(Truth::Hmm { p0: 0.8, p1: 0.2 }, ErrorModel::StudentT { df: 4.0 });
        let text = serde_json::to_string(&cfg).unwrap();
        let back: SimConfig = serde_json::from_str(&text).unwrap();
        assert_eq!(cfg, back);
        let unknown = text.replace("\"student_t\"", "\"gumbel\"");
        assert!(serde_json::from_str::<SimConfig>(&unknown).is_err());
    }

    #[test]
    fn rmse_hand_example() {
        assert!((rmse(&[0.1, 0.3], &[0.2, 0.2]).unwrap() - 0.1).abs() < 1e-15);
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn all_null_study_has_no_ndr_and_zero_fdp_without_rejections() {
        let cfg = small(Truth::Iid { pi1: 0.0 }, ErrorModel::Normal);
        let evals = run_study(&cfg, &[Procedure::Fdr, Procedure::Bh, Procedure::St], &[0.1]).unwrap();
        for e in &evals {
            assert_eq!(e.ndr, None);
            for r in &e.records {
                if r.r == 0 {
                    assert_eq!(r.fdp, 0.0);
                }
            }
        }
    }

    #[test]
    fn record_identities() {
        let cfg = small(Truth::Hmm { p0: 0.8, p1: 0.2 }, ErrorModel::Normal);
        let evals = run_study(
            &cfg,
            &[Procedure::Fdr, Procedure::Kfwer { k: 3 }, Procedure::Bh, Procedure::St],
            &[0.05, 0.2],
        )
        .unwrap();
        assert_eq!(evals.len(), 8);
        for e in &evals {
            assert_eq!(e.records.len(), cfg.reps);
            for r in &e.records {
                assert!(r.v <= r.r && r.r <= cfg.m);
                assert_eq!(r.s, r.r - r.v);
                assert_eq!(r.u() + r.v, r.m0);
                assert_eq!(r.f() + r.s, r.m1);
                assert_eq!(r.w(), cfg.m - r.r);
            }
            for x in [e.fdr, e.fdtp, e.kfwer] {
                assert!((0.0..=1.0).contains(&x));
            }
        }
    }

    #[test]
    fn gold_needs_enough_replicates() {
        let cfg = small(Truth::Iid { pi1: 0.2 }, ErrorModel::Normal);
        let spec = ControlSpec::fdr(0.1).unwrap();
        assert!(gold_standard_critical(&cfg, &spec, 10).is_err());
    }

    #[test]
    fn exponential_errors_are_centered() {
        let sampler = ErrorSampler::new(ErrorModel::Exponential);
        let mut rng = rep_stream(3, 0);
        let n = 1_000_000;
        let mean = (0..n).map(|_| sampler.sample(&mut rng)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.005, "mean = {mean}");
    }

    #[test]
    fn laplace_errors_have_unit_scale() {
        let sampler = ErrorSampler::new(ErrorModel::Laplace);
        let mut rng = rep_stream(4, 0);
        let n = 400_000;
        let xs: Vec<f64> = (0..n).map(|_| sampler.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let mad = xs.iter().map(|x| x.abs()).sum::<f64>() / n as f64;
        assert!(mean.abs() < 0.01);
        assert!((mad - 1.0).abs() < 0.01);
    }
}
