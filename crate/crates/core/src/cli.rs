//! Command-line front end. `run` parses arguments, builds the worker pool and
//! dispatches to the library; the binary only maps its result to an exit code.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::attack::{read_scores_csv, run_attack, AttackConfig};
use crate::data::{load_dataset, save_dataset, Dtype};
use crate::error::{Error, Result};
use crate::estimators::{Estimator, Pooling};
use crate::evaluation::{
    covariance_study, eval_rows_to_csv, evaluate_scores, roc, sweep_rows_to_csv,
    sweep_shadow_models, CovStudyOptions, RelativeErrorMode,
};
use crate::plot::chart_for_csv;
use crate::report::{write_atomic, CsvTable};
use crate::synthetic::{generate, CovModel, ShiftPattern, SyntheticSpec};
use crate::transform::{ReductionSpec, TransformSpec};

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 1;
pub const EXIT_RUNTIME: i32 = 2;

#[derive(Debug, Parser)]
#[command(name = "seqmia", version, about = "Membership inference on per-token sequence scores")]
pub struct Cli {
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, env = "SQMI_THREADS")]
    pub threads: Option<usize>,

    #[arg(short, long, global = true)]
    pub verbose: bool,

    /// Relative output paths are resolved against this directory.
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic Gaussian fixture with known ground truth.
    Synth(SynthArgs),
    /// Load a dataset and report its dimensions and warnings.
    Validate(ValidateArgs),
    /// Run the leave-one-out attack and write per-cell scores.
    Attack(AttackArgs),
    /// ROC summary (AUC, TPR at fixed FPR) of a scores CSV.
    Eval(EvalArgs),
    /// Covariance approximation error against a gold standard.
    Covstudy(CovstudyArgs),
    /// Attack TPR as a function of the number of shadow models.
    Sweep(SweepArgs),
    /// Render a report CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum CovKind {
    Isotropic,
    Diagonal,
    Dense,
    Ar1,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum PatternArg {
    Constant,
    Alternating,
    Random,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DtypeArg {
    Float32,
    Float64,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum RelativeArg {
    MeanOfRatios,
    RatioOfMeans,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub m: usize,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub t: usize,
    #[arg(long, value_enum, default_value = "ar1")]
    pub cov: CovKind,
    #[arg(long, default_value_t = 0.8)]
    pub rho: f64,
    #[arg(long, default_value_t = 1.0)]
    pub sigma2: f64,
    /// Condition number for `--cov dense`.
    #[arg(long, default_value_t = 50.0)]
    pub cond: f64,
    /// Per-token log-scale spread for `--cov dense`.
    #[arg(long, default_value_t = 0.5)]
    pub spread: f64,
    /// Variance range for `--cov diagonal`.
    #[arg(long, default_value_t = 0.5)]
    pub var_low: f64,
    #[arg(long, default_value_t = 2.0)]
    pub var_high: f64,
    #[arg(long, default_value_t = 0.3)]
    pub shift: f64,
    #[arg(long, value_enum, default_value = "alternating")]
    pub pattern: PatternArg,
    /// Scale of the IN covariance relative to OUT.
    #[arg(long)]
    pub in_scale: Option<f64>,
    #[arg(long, value_enum, default_value = "float64")]
    pub dtype: DtypeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    #[arg(long)]
    pub input: PathBuf,
}

#[derive(Debug, Args)]
pub struct AttackArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "oas")]
    pub estimator: Estimator,
    #[arg(long, default_value = "shared")]
    pub pooling: Pooling,
    #[arg(long, default_value = "none")]
    pub reduce: String,
    #[arg(long)]
    pub reduce_param: Option<usize>,
    #[arg(long, default_value = "identity")]
    pub transform: TransformSpec,
    #[arg(long)]
    pub max_shadow: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Scores CSV; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long, value_delimiter = ',', default_value = "1e-4,1e-3")]
    pub fpr: Vec<f64>,
    /// Also report one row set per target model.
    #[arg(long)]
    pub per_target: bool,
    /// Write the pooled ROC curve here.
    #[arg(long)]
    pub roc_out: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CovstudyArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Rows per class used for each fit.
    #[arg(long, value_delimiter = ',', default_value = "4,8,16,32,64")]
    pub grid: Vec<usize>,
    /// Rows per class for the full-MLE gold standard.
    #[arg(long, default_value_t = 64)]
    pub gold: usize,
    /// Number of canaries studied, taken from the start of the dataset.
    #[arg(long)]
    pub canaries: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "mean-of-ratios")]
    pub relative_mode: RelativeArg,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Comma-separated `estimator:pooling` pairs.
    #[arg(long, value_delimiter = ',', default_value = "univariate:classwise,oas:shared")]
    pub variants: Vec<String>,
    #[arg(long, value_delimiter = ',', default_value = "8,16,32,64")]
    pub grid: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1e-3")]
    pub fpr: Vec<f64>,
    #[arg(long, default_value = "none")]
    pub reduce: String,
    #[arg(long)]
    pub reduce_param: Option<usize>,
    #[arg(long, default_value = "identity")]
    pub transform: TransformSpec,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PlotArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
        }
    };
    let level = if cli.verbose { "debug" } else { "warn" };
    let _ = env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .try_init();

    let pool = match rayon::ThreadPoolBuilder::new()
        .num_threads(cli.threads.unwrap_or(0))
        .build()
    {
        Ok(pool) => pool,
        Err(e) => {
            eprintln!("error: cannot build thread pool: {e}");
            return EXIT_RUNTIME;
        }
    };
    match pool.install(|| dispatch(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                EXIT_VALIDATION
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    let out = |p: &Path| match &cli.out_dir {
        Some(dir) if p.is_relative() => dir.join(p),
        _ => p.to_path_buf(),
    };
    match &cli.command {
        Command::Synth(a) => synth(a, &out(&a.out)),
        Command::Validate(a) => validate(a),
        Command::Attack(a) => {
            let table = attack(a)?;
            emit(&table, a.out.as_deref().map(out).as_deref())
        }
        Command::Eval(a) => {
            let records = read_scores_csv(&a.scores)?;
            let scores: Vec<f64> = records.iter().map(|r| r.score).collect();
            let labels: Vec<bool> = records.iter().map(|r| r.label).collect();
            let groups: Vec<usize> = records.iter().map(|r| r.target).collect();
            check_fprs(&a.fpr)?;
            if let Some(p) = &a.roc_out {
                roc(&scores, &labels)?.to_csv().write_to(&out(p))?;
            }
            let rows = evaluate_scores(&scores, &labels, &groups, &a.fpr, a.per_target)?;
            emit(&eval_rows_to_csv(&rows), a.out.as_deref().map(out).as_deref())
        }
        Command::Covstudy(a) => {
            let table = covstudy(a)?;
            emit(&table, a.out.as_deref().map(out).as_deref())
        }
        Command::Sweep(a) => {
            let table = sweep(a)?;
            emit(&table, a.out.as_deref().map(out).as_deref())
        }
        Command::Plot(a) => {
            let svg = chart_for_csv(&a.input)?.render();
            write_atomic(&out(&a.out), svg.as_bytes())
        }
    }
}

fn emit(table: &CsvTable, path: Option<&Path>) -> Result<()> {
    match path {
        Some(p) => table.write_to(p),
        None => {
            print!("{}", table.as_str());
            Ok(())
        }
    }
}

fn check_fprs(fprs: &[f64]) -> Result<()> {
    match fprs.iter().find(|f| !(**f > 0.0 && **f < 1.0)) {
        Some(f) => Err(Error::Validation(format!("FPR target {f} outside (0, 1)"))),
        None => Ok(()),
    }
}

fn synth(a: &SynthArgs, out: &Path) -> Result<()> {
    let cov_model = match a.cov {
        CovKind::Isotropic => CovModel::Isotropic { sigma2: a.sigma2 },
        CovKind::Diagonal => CovModel::DiagonalRandom {
            low: a.var_low,
            high: a.var_high,
        },
        CovKind::Dense => CovModel::Dense {
            condition: a.cond,
            scale_spread: a.spread,
        },
        CovKind::Ar1 => CovModel::Ar1 {
            sigma2: a.sigma2,
            rho: a.rho,
        },
    };
    let mut spec = SyntheticSpec::new(a.m, a.n, a.t, cov_model);
    spec.shift = a.shift;
    spec.pattern = match a.pattern {
        PatternArg::Constant => ShiftPattern::Constant,
        PatternArg::Alternating => ShiftPattern::Alternating,
        PatternArg::Random => ShiftPattern::Random,
    };
    spec.in_scale = a.in_scale;
    spec.seed = a.seed;
    spec.dtype = match a.dtype {
        DtypeArg::Float32 => Dtype::Float32,
        DtypeArg::Float64 => Dtype::Float64,
    };
    let (dataset, _) = generate(&spec)?;
    save_dataset(&dataset, out)
}

fn validate(a: &ValidateArgs) -> Result<()> {
    let ds = load_dataset(&a.input)?;
    let (m, n, t) = ds.tensor.dims();
    println!("ok: M={m} N={n} T={t} dtype={:?}", ds.manifest.dtype);
    for w in ds.warnings() {
        println!("warning: {w}");
    }
    Ok(())
}

fn attack_config(
    estimator: Estimator,
    pooling: Pooling,
    reduce: &str,
    reduce_param: Option<usize>,
    transform: TransformSpec,
    seed: u64,
) -> Result<AttackConfig> {
    let mut cfg = AttackConfig::new(estimator, pooling);
    cfg.reduction = ReductionSpec::from_parts(reduce, reduce_param)?;
    cfg.transform = transform;
    cfg.seed = seed;
    Ok(cfg)
}

fn attack(a: &AttackArgs) -> Result<CsvTable> {
    let mut cfg = attack_config(
        a.estimator,
        a.pooling,
        &a.reduce,
        a.reduce_param,
        a.transform,
        a.seed,
    )?;
    cfg.max_shadow_models = a.max_shadow;
    let ds = load_dataset(&a.input)?;
    cfg.validate(ds.tensor.models(), ds.tensor.tokens())?;
    let result = run_attack(&ds.tensor, &ds.mask, &cfg)?;
    for f in &result.fallbacks {
        log::info!(
            "fallback target {} canary {}: {:?} ({})",
            f.target,
            f.canary,
            f.flag,
            f.reason
        );
    }
    if !result.fallbacks.is_empty() {
        log::warn!("{} cells used a fallback fit", result.fallbacks.len());
    }
    Ok(result.to_csv())
}

fn covstudy(a: &CovstudyArgs) -> Result<CsvTable> {
    let ds = load_dataset(&a.input)?;
    let n = ds.tensor.canaries();
    let k = a.canaries.unwrap_or(n);
    if k == 0 || k > n {
        return Err(Error::Validation(format!("--canaries {k} outside [1, {n}]")));
    }
    let mut opts = CovStudyOptions::new(a.grid.clone(), a.gold, a.seed);
    opts.relative_mode = match a.relative_mode {
        RelativeArg::MeanOfRatios => RelativeErrorMode::MeanOfRatios,
        RelativeArg::RatioOfMeans => RelativeErrorMode::RatioOfMeans,
    };
    let subset: Vec<usize> = (0..k).collect();
    Ok(covariance_study(&ds.tensor, &ds.mask, &subset, &opts)?.to_csv())
}

fn parse_variant(s: &str) -> Result<(Estimator, Pooling)> {
    let (e, p) = s
        .split_once(':')
        .ok_or_else(|| Error::Validation(format!("variant {s:?} is not estimator:pooling")))?;
    Ok((e.parse()?, p.parse()?))
}

fn sweep(a: &SweepArgs) -> Result<CsvTable> {
    check_fprs(&a.fpr)?;
    let configs = a
        .variants
        .iter()
        .map(|v| {
            let (est, pool) = parse_variant(v)?;
            attack_config(est, pool, &a.reduce, a.reduce_param, a.transform, a.seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let ds = load_dataset(&a.input)?;
    for c in &configs {
        c.validate(ds.tensor.models(), ds.tensor.tokens())?;
    }
    let rows = sweep_shadow_models(&ds.tensor, &ds.mask, &configs, &a.grid, &a.fpr)?;
    Ok(sweep_rows_to_csv(&rows))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_exits_zero_and_unknown_flag_exits_one() {
        assert_eq!(run(["seqmia", "--help"]), EXIT_OK);
        assert_eq!(run(["seqmia", "attack", "--bogus"]), EXIT_VALIDATION);
        assert_eq!(run(["seqmia"]), EXIT_VALIDATION);
    }

    #[test]
    fn variant_parsing() {
        assert_eq!(
            parse_variant("oas:shared").unwrap(),
            (Estimator::Oas, Pooling::Shared)
        );
        assert!(parse_variant("oas").is_err());
        assert!(parse_variant("oas:nope").is_err());
    }

    #[test]
    fn missing_input_is_runtime_error() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.sqmi");
        assert_eq!(
            run(["seqmia", "validate", "--input", missing.to_str().unwrap()]),
            EXIT_RUNTIME
        );
    }
}
