use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use simcrit::GridSpec;

#[derive(Debug, Parser)]
#[command(name = "simcrit", version, about = "Simultaneous critical values for many t-tests")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Threshold the t-statistics of an expression matrix.
    Test(TestArgs),
    /// Run a Monte-Carlo study from a JSON config.
    Simulate(SimulateArgs),
    /// Estimate the proportion of alternatives.
    #[command(name = "estimate-pi1")]
    EstimatePi1(EstimateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Fdr,
    Fdtp,
    Kfwer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DependenceArg {
    Dependent,
    Independent,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PValueArg {
    T,
    Normal,
}

/// `auto` or a fixed proportion in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Pi1Arg {
    Auto,
    Fixed(f64),
}

impl FromStr for Pi1Arg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        if s.eq_ignore_ascii_case("auto") {
            return Ok(Pi1Arg::Auto);
        }
        match s.parse::<f64>() {
            Ok(v) if (0.0..=1.0).contains(&v) => Ok(Pi1Arg::Fixed(v)),
            _ => Err(format!("expected `auto` or a number in [0, 1], got `{s}`")),
        }
    }
}

/// `lo:hi:points`.
pub fn parse_grid(s: &str) -> Result<GridSpec, String> {
    let parts: Vec<&str> = s.split(':').collect();
    let [lo, hi, points] = parts.as_slice() else {
        return Err(format!("expected lo:hi:points, got `{s}`"));
    };
    let lo: f64 = lo.parse().map_err(|_| format!("bad grid lower bound `{lo}`"))?;
    let hi: f64 = hi.parse().map_err(|_| format!("bad grid upper bound `{hi}`"))?;
    let points: usize = points.parse().map_err(|_| format!("bad grid point count `{points}`"))?;
    GridSpec::new(lo, hi, points).map_err(|e| e.to_string())
}

fn parse_probability(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        _ => Err(format!("expected a number in (0, 1), got `{s}`")),
    }
}

#[derive(Debug, Args)]
pub struct DataArgs {
    /// Matrix file (.tsv or .csv): header row of sample names, first column
    /// feature ids.
    #[arg(long)]
    pub input: PathBuf,
    /// One group label per line, matching the matrix columns. Without it the
    /// one-sample statistic is used.
    #[arg(long)]
    pub groups: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TestArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long, value_enum, default_value = "fdr")]
    pub method: MethodArg,
    /// Target level of the controlled error rate.
    #[arg(long, value_parser = parse_probability)]
    pub gamma: f64,
    /// FDP bound for `fdtp`.
    #[arg(long, value_parser = parse_probability)]
    pub alpha: Option<f64>,
    /// Number of tolerated false rejections for `kfwer`.
    #[arg(long)]
    pub k: Option<u64>,
    #[arg(long, value_enum, default_value = "dependent")]
    pub dependence: DependenceArg,
    /// Proportion of alternatives: `auto` estimates it, a number fixes it.
    #[arg(long, default_value = "auto")]
    pub pi1: Pi1Arg,
    /// Null law for the baseline p-value and q-value columns.
    #[arg(long, value_enum, default_value = "t")]
    pub pvalues: PValueArg,
    /// Truncation grid for the proportion estimate, as `lo:hi:points` [default: 0.4:50:200].
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<GridSpec>,
    /// Also report Benjamini–Hochberg and Storey rejection counts.
    #[arg(long)]
    pub compare: bool,
    /// Output prefix.
    #[arg(long)]
    pub out: PathBuf,
    /// Accepted for uniformity with `simulate`; nothing here is random.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Study description (JSON).
    #[arg(long)]
    pub config: PathBuf,
    /// Output prefix.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    /// Truncation grid as `lo:hi:points` [default: 0.4:50:200].
    #[arg(long, value_parser = parse_grid)]
    pub grid: Option<GridSpec>,
    /// Write every grid point to this TSV file.
    #[arg(long)]
    pub dump_grid: Option<PathBuf>,
}
