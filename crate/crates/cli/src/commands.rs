use std::time::Instant;

use serde::{Deserialize, Serialize};
use simcrit::baselines::{
    bh_procedure, default_lambda_grid, p_values, reject_by_q, storey_q_values, PValueSource,
};
use simcrit::critical::{critical_fdr, critical_fdtp, critical_kfwer, reject};
use simcrit::simulate::{gold_standard_critical, rmse_pi1, run_study, McEvaluation, Procedure, SimConfig};
use simcrit::{ControlSpec, Dependence, Method, SampleDesign, Threshold};

use crate::args::{DependenceArg, EstimateArgs, MethodArg, PValueArg, Pi1Arg, SimulateArgs, TestArgs};
use crate::error::CliError;
use crate::input::load_dataset;
use crate::output::{float, opt_float, with_suffix, write_json, Tsv};

const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize)]
struct Comparison {
    bh_rejected: usize,
    st_rejected: usize,
    st_pi0_hat: f64,
}

#[derive(Serialize)]
struct RunReport {
    schema_version: u32,
    design: &'static str,
    n1: usize,
    n2: Option<usize>,
    method: &'static str,
    gamma: f64,
    alpha: Option<f64>,
    k: Option<u64>,
    dependence: Dependence,
    pi1_hat: f64,
    pi1_source: &'static str,
    c_star: Option<f64>,
    t_hat: Option<f64>,
    num_rejected: usize,
    m: usize,
    m_valid: usize,
    clamp_activations: usize,
    degenerate: bool,
    warnings: Vec<String>,
    pvalues: PValueSource,
    features_table: String,
    compare: Option<Comparison>,
}

fn method_spec(args: &TestArgs) -> Result<ControlSpec, CliError> {
    let gamma = args.gamma;
    let method = match args.method {
        MethodArg::Fdr => Method::Fdr { gamma },
        MethodArg::Fdtp => Method::Fdtp {
            alpha: args
                .alpha
                .ok_or_else(|| CliError::Usage("--method fdtp needs --alpha".into()))?,
            gamma,
        },
        MethodArg::Kfwer => Method::Kfwer {
            k: args
                .k
                .ok_or_else(|| CliError::Usage("--method kfwer needs --k".into()))?,
            gamma,
        },
    };
    let dependence = match args.dependence {
        DependenceArg::Dependent => Dependence::Dependent,
        DependenceArg::Independent => Dependence::Independent,
    };
    Ok(ControlSpec::new(method, dependence)?)
}

pub fn test(args: &TestArgs) -> Result<(), CliError> {
    let started = Instant::now();
    let spec = method_spec(args)?;
    let data = load_dataset(&args.data.input, args.data.groups.as_deref())?;
    let tv = data.t_statistics();
    if tv.m_valid() == 0 {
        return Err(CliError::Data("no feature has a defined t-statistic".into()));
    }

    let grid = args.grid.unwrap_or_default();
    let (pi1, c_star, pi1_source) = match args.pi1 {
        Pi1Arg::Auto => {
            let est = simcrit::estimate_pi1(&tv, &grid)?;
            (est.pi1_hat, Some(est.c_star), "estimated")
        }
        Pi1Arg::Fixed(v) => (v, None, "fixed"),
    };
    let cv = match spec.method {
        Method::Fdr { gamma } => critical_fdr(&tv, pi1, gamma),
        Method::Fdtp { alpha, gamma } => critical_fdtp(&tv, pi1, alpha, gamma, spec.dependence),
        Method::Kfwer { k, gamma } => critical_kfwer(tv.m_valid(), pi1, k, gamma),
    }?;
    let decisions = reject(&tv, &cv);

    let source = match args.pvalues {
        PValueArg::T => PValueSource::StudentT,
        PValueArg::Normal => PValueSource::NormalApprox,
    };
    let p = p_values(&tv, source);
    let q = storey_q_values(&p, &default_lambda_grid())?;

    let table_path = with_suffix(&args.out, ".features.tsv");
    let mut table = Tsv::create(
        &table_path,
        &["feature_id", "t_stat", "abs_t", "rejected", "p_value", "q_value"],
    )?;
    for (i, id) in data.feature_ids().iter().enumerate() {
        let t = tv.stats()[i];
        table.row(&[
            id.clone(),
            opt_float(t),
            opt_float(t.map(f64::abs)),
            if decisions.rejected[i] { "1" } else { "0" }.to_string(),
            float(p.p[i]),
            float(q.q[i]),
        ])?;
    }
    table.finish()?;

    let compare = if args.compare {
        Some(Comparison {
            bh_rejected: bh_procedure(&p, args.gamma)?.num_rejected,
            st_rejected: reject_by_q(&q.q, args.gamma).num_rejected,
            st_pi0_hat: q.pi0_hat,
        })
    } else {
        None
    };
    let (design, n1, n2) = match tv.design() {
        SampleDesign::OneSample { n } => ("one_sample", n, None),
        SampleDesign::TwoSample { n1, n2 } => ("two_sample", n1, Some(n2)),
    };
    let mut warnings = cv.warnings.clone();
    warnings.extend(p.warnings.iter().cloned());
    let report = RunReport {
        schema_version: SCHEMA_VERSION,
        design,
        n1,
        n2,
        method: spec.method.name(),
        gamma: spec.method.gamma(),
        alpha: match spec.method {
            Method::Fdtp { alpha, .. } => Some(alpha),
            _ => None,
        },
        k: match spec.method {
            Method::Kfwer { k, .. } => Some(k),
            _ => None,
        },
        dependence: spec.dependence,
        pi1_hat: pi1,
        pi1_source,
        c_star,
        t_hat: cv.t_hat(),
        num_rejected: decisions.num_rejected,
        m: tv.len(),
        m_valid: tv.m_valid(),
        clamp_activations: cv.activations(),
        degenerate: cv.degenerate,
        warnings,
        pvalues: source,
        features_table: table_path.display().to_string(),
        compare,
    };
    write_json(&with_suffix(&args.out, ".summary.json"), &report)?;

    println!("pi1_hat\t{}", float(report.pi1_hat));
    println!("t_hat\t{}", opt_float(report.t_hat));
    println!("num_rejected\t{}", report.num_rejected);
    if let Some(c) = &report.compare {
        println!("bh_rejected\t{}", c.bh_rejected);
        println!("st_rejected\t{}", c.st_rejected);
    }
    // timing stays off the report so reruns are byte-identical
    eprintln!("elapsed_ms\t{}", started.elapsed().as_millis());
    Ok(())
}

fn default_procedures() -> Vec<Procedure> {
    vec![Procedure::Fdr, Procedure::Bh, Procedure::St]
}

fn default_levels() -> Vec<f64> {
    vec![0.05, 0.1, 0.15, 0.2]
}

fn default_gold_reps() -> usize {
    200
}

/// JSON study description read by `simulate`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyFile {
    sim: SimConfig,
    #[serde(default = "default_procedures")]
    procedures: Vec<Procedure>,
    #[serde(default = "default_levels")]
    levels: Vec<f64>,
    /// Control specs whose Monte-Carlo gold-standard threshold is wanted.
    #[serde(default)]
    gold: Vec<ControlSpec>,
    #[serde(default = "default_gold_reps")]
    gold_reps: usize,
    /// Also report the RMSE of the proportion estimate over `sim.reps`.
    #[serde(default)]
    rmse: bool,
}

#[derive(Serialize)]
struct EvaluationSummary<'a> {
    name: &'a str,
    procedure: &'a Procedure,
    level: f64,
    alpha: f64,
    k: u64,
    fdr: f64,
    fdtp: f64,
    kfwer: f64,
    ndr: Option<f64>,
    rmse_pi1: Option<f64>,
    failures: usize,
}

impl<'a> From<&'a McEvaluation> for EvaluationSummary<'a> {
    fn from(e: &'a McEvaluation) -> Self {
        Self {
            name: &e.name,
            procedure: &e.procedure,
            level: e.level,
            alpha: e.alpha,
            k: e.k,
            fdr: e.fdr,
            fdtp: e.fdtp,
            kfwer: e.kfwer,
            ndr: e.ndr,
            rmse_pi1: e.rmse_pi1,
            failures: e.failures,
        }
    }
}

#[derive(Serialize)]
struct GoldSummary {
    spec: ControlSpec,
    reps: usize,
    /// `null` when the target level is never reached.
    threshold: Threshold,
}

#[derive(Serialize)]
struct StudySummary<'a> {
    schema_version: u32,
    config: &'a StudyFile,
    evaluations: Vec<EvaluationSummary<'a>>,
    gold: Vec<GoldSummary>,
    rmse_pi1: Option<f64>,
}

fn config_error(e: simcrit::Error) -> CliError {
    CliError::Data(format!("invalid config: {e}"))
}

pub fn simulate(args: &SimulateArgs) -> Result<(), CliError> {
    let text = std::fs::read_to_string(&args.config).map_err(CliError::io(&args.config))?;
    let de = &mut serde_json::Deserializer::from_str(&text);
    let study: StudyFile = serde_path_to_error::deserialize(de).map_err(|e| {
        CliError::Data(format!(
            "{}: field `{}`: {}",
            args.config.display(),
            e.path(),
            e.inner()
        ))
    })?;
    study.sim.validate().map_err(config_error)?;
    for spec in &study.gold {
        spec.validate().map_err(config_error)?;
    }

    let evals = run_study(&study.sim, &study.procedures, &study.levels).map_err(config_error)?;
    let gold = study
        .gold
        .iter()
        .map(|spec| {
            gold_standard_critical(&study.sim, spec, study.gold_reps)
                .map(|threshold| GoldSummary {
                    spec: *spec,
                    reps: study.gold_reps,
                    threshold,
                })
                .map_err(config_error)
        })
        .collect::<Result<Vec<_>, _>>()?;
    let rmse = if study.rmse {
        Some(rmse_pi1(&study.sim, study.sim.reps.max(2)).map_err(config_error)?)
    } else {
        None
    };

    let mut reps = Tsv::create(
        &with_suffix(&args.out, ".reps.tsv"),
        &["procedure", "level", "rep", "m0", "m1", "r", "v", "s", "fdp", "pi1_hat", "t_hat", "failed"],
    )?;
    for e in &evals {
        for r in &e.records {
            reps.row(&[
                e.name.clone(),
                float(e.level),
                r.rep.to_string(),
                r.m0.to_string(),
                r.m1.to_string(),
                r.r.to_string(),
                r.v.to_string(),
                r.s.to_string(),
                float(r.fdp),
                opt_float(r.pi1_hat),
                opt_float(r.t_hat),
                u8::from(r.failed).to_string(),
            ])?;
        }
    }
    reps.finish()?;

    // nominal against realized, one row per procedure and level
    let mut curve = Tsv::create(
        &with_suffix(&args.out, ".curve.tsv"),
        &["procedure", "nominal", "fdr", "fdtp", "kfwer", "ndr"],
    )?;
    for e in &evals {
        curve.row(&[
            e.name.clone(),
            float(e.level),
            float(e.fdr),
            float(e.fdtp),
            float(e.kfwer),
            opt_float(e.ndr),
        ])?;
    }
    curve.finish()?;

    let summary = StudySummary {
        schema_version: SCHEMA_VERSION,
        config: &study,
        evaluations: evals.iter().map(EvaluationSummary::from).collect(),
        gold,
        rmse_pi1: rmse,
    };
    write_json(&with_suffix(&args.out, ".summary.json"), &summary)?;
    for e in &evals {
        println!("{}\t{}\tfdr={}\tndr={}", e.name, e.level, e.fdr, opt_float(e.ndr));
    }
    Ok(())
}

pub fn estimate_pi1(args: &EstimateArgs) -> Result<(), CliError> {
    let data = load_dataset(&args.data.input, args.data.groups.as_deref())?;
    let tv = data.t_statistics();
    if tv.m_valid() == 0 {
        return Err(CliError::Data("no feature has a defined t-statistic".into()));
    }
    let grid = args.grid.unwrap_or_default();
    let est = simcrit::estimate_pi1(&tv, &grid)?;
    if let Some(path) = &args.dump_grid {
        let mut t = Tsv::create(path, &["c", "g_hat", "null_mean", "ratio"])?;
        for p in &est.grid {
            t.row(&[float(p.c), float(p.g_hat), float(p.null_mean), float(p.ratio)])?;
        }
        t.finish()?;
    }
    println!("pi1_hat\t{}", float(est.pi1_hat));
    println!("c_star\t{}", float(est.c_star));
    Ok(())
}
