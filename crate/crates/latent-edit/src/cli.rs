//! Command-line front end.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use latent_edit_core::editor::{apply_multi_edit, EditMode, EditRequest};
use latent_edit_core::experiment::{stream_seed, Scenario};
use latent_edit_core::geometry::{orthonormalize_in, project_out};
use latent_edit_core::linfit::{extract_direction, fit_directions, fit_logistic, fit_ridge};
use latent_edit_core::metrics::{binarize, correlation_matrix, data_multiplier, f1_scores, fit_pow3, mae_to_target, pair_fpr};
use latent_edit_core::neutralizer::{neutralize, predict_aus, train_neutralizer, NeutralizeConfig, StopReason};
use latent_edit_core::sampler::{
    accept_reject_sample, balanced_demographic_plan, oracle_sample, presets, GeneratorSource, OracleSpec, PredictorSet,
};
use latent_edit_core::{AttributeKind, AttributeRole, AttributeTable, DirectionBank, TableBuilder};
use rayon::prelude::*;
use toml::Value;

use crate::config::{RunConfig, CONFIG_ENV};
use crate::error::{Error, Result};
use crate::num::fmt_f64;
use crate::provenance::Record;
use crate::report::{self, Tsv};
use crate::{bank, files, model, oracle, predictors, runner, table};

#[derive(Debug, Parser)]
#[command(name = "latent-edit", version, about = "Fit, edit, neutralize and evaluate attribute directions in generator latent spaces")]
pub struct Cli {
    /// TOML config with flat dotted keys.
    #[arg(long, global = true, env = CONFIG_ENV, value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Override one config key, e.g. `--param neutralize.lambda=0.01`.
    #[arg(long = "param", global = true, value_name = "KEY=VALUE")]
    pub params: Vec<String>,
    /// Seed for stochastic commands (same as `seed` in the config).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit linear predictors on a table and store their edit directions.
    FitDirections(FitDirectionsArgs),
    /// Fit demographic predictors and bin boundaries for balanced sampling.
    FitPredictors(FitPredictorsArgs),
    /// Remove nuisance directions from one direction of a bank.
    Project(ProjectArgs),
    /// Apply calibrated edits to every row of a table.
    Edit(EditArgs),
    /// Train the neutralization network on a labeled table.
    TrainNeutralizer(TrainNeutralizerArgs),
    /// Drive every row of a table to a neutral (zero-AU) code.
    Neutralize(NeutralizeArgs),
    /// Draw a labeled table from an oracle.
    Sample(SampleArgs),
    /// Draw a demographically balanced table by acceptance-rejection.
    SampleBalanced(SampleBalancedArgs),
    /// Evaluation metrics.
    #[command(subcommand)]
    Metrics(MetricsCommand),
    /// Downstream augmentation experiments.
    #[command(subcommand)]
    Experiment(ExperimentCommand),
}

fn comma_list(s: &str) -> Vec<String> {
    s.split(',').map(str::trim).filter(|x| !x.is_empty()).map(str::to_string).collect()
}

#[derive(Debug, Args)]
pub struct FitDirectionsArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Comma-separated targets; all AU attributes when omitted.
    #[arg(long)]
    pub targets: Option<String>,
    /// Condition each AU on every other AU attribute.
    #[arg(long)]
    pub condition_on_peers: bool,
    /// Explicit covariates for every target (instead of peers).
    #[arg(long, conflicts_with = "condition_on_peers")]
    pub covariates: Option<String>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitPredictorsArgs {
    #[arg(long)]
    pub table: PathBuf,
    /// Comma-separated binary attributes.
    #[arg(long, default_value = "")]
    pub binary: String,
    /// Comma-separated `name:bins` continuous attributes.
    #[arg(long, default_value = "")]
    pub binned: String,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    #[arg(long)]
    pub bank: PathBuf,
    #[arg(long)]
    pub target: String,
    /// Comma-separated nuisance directions.
    #[arg(long)]
    pub against: String,
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum ModeArg {
    Relative,
    Absolute,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub bank: PathBuf,
    /// Steps such as `au12=+1,au6=+0.5`.
    #[arg(long = "set", value_name = "NAME=STEP,...", allow_hyphen_values = true)]
    pub steps: String,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainNeutralizerArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Per-epoch losses and recall as TSV.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct NeutralizeArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
    /// Directory for objective traces.
    #[arg(long)]
    pub trace: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    /// Oracle spec file.
    #[arg(long)]
    pub oracle: PathBuf,
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleBalancedArgs {
    /// Comma-separated attributes; a binned attribute may carry its bin
    /// count as a suffix (`age3`).
    #[arg(long)]
    pub filter: String,
    #[arg(long)]
    pub per_cell: usize,
    #[arg(long)]
    pub predictors: PathBuf,
    /// Draw from an oracle spec file.
    #[arg(long, required_unless_present = "pool", conflicts_with = "pool")]
    pub oracle: Option<PathBuf>,
    /// Draw from the rows of a table, in order.
    #[arg(long)]
    pub pool: Option<PathBuf>,
    #[arg(long)]
    pub max_draws: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum MetricsCommand {
    /// Pearson correlation between attribute columns.
    Corr(CorrArgs),
    /// Per-attribute and macro F1.
    F1(ClassArgs),
    /// False-positive rates over attribute pairs.
    PairFpr(ClassArgs),
    /// Mean absolute error between edited rows and their targets.
    Mae(MaeArgs),
    /// POW3 learning-curve fit and data multiplier.
    LearningCurve(CurveArgs),
}

#[derive(Debug, Args)]
pub struct Columns {
    /// Comma-separated columns; all AU attributes when omitted.
    #[arg(long)]
    pub columns: Option<String>,
}

#[derive(Debug, Args)]
pub struct CorrArgs {
    #[arg(long)]
    pub table: PathBuf,
    #[command(flatten)]
    pub columns: Columns,
    /// Use factors recovered from the codes by this oracle instead of labels.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ClassArgs {
    /// Table whose labels are the ground truth.
    #[arg(long)]
    pub truth: PathBuf,
    /// Table whose labels are predictions (rows aligned with `--truth`).
    #[arg(long, required_unless_present = "model", conflicts_with = "model")]
    pub pred: Option<PathBuf>,
    /// Predict with a neutralizer model on the truth table's codes.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub columns: Columns,
    #[arg(long)]
    pub threshold: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct MaeArgs {
    /// Edited table; its nonzero AU labels count as edited attributes.
    #[arg(long)]
    pub edited: PathBuf,
    /// Target table, rows aligned with `--edited`.
    #[arg(long)]
    pub target: PathBuf,
    /// Compare model predictions instead of labels.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[command(flatten)]
    pub columns: Columns,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CurveArgs {
    /// TSV with columns `n` and `score` (header line first).
    #[arg(long)]
    pub points: PathBuf,
    /// Score to reach; reports the data multiplier.
    #[arg(long, requires = "n_current")]
    pub reference: Option<f64>,
    #[arg(long)]
    pub n_current: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum ExperimentCommand {
    /// Run scenarios over several seeds and write reports.
    Run(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Comma-separated scenarios, or `all`.
    #[arg(long, default_value = "baseline,augmented")]
    pub scenario: String,
    /// Number of consecutive seeds, starting at the configured seed.
    #[arg(long, default_value_t = 5)]
    pub seeds: u64,
    /// Oracle spec file; otherwise the configured preset, instantiated per seed.
    #[arg(long)]
    pub oracle: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

/// Parses `argv` (program name first), runs, and returns the exit status.
pub fn main_with<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
        }
    };
    let args: Vec<String> = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, &args) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &cli.config {
        cfg.apply_file(p)?;
    }
    for p in &cli.params {
        cfg.apply_override(p)?;
    }
    if let Some(s) = cli.seed {
        cfg.set("seed", &Value::Integer(s as i64))?;
    }
    Ok(cfg)
}

fn set_f64(cfg: &mut RunConfig, key: &str, v: Option<f64>) -> Result<()> {
    match v {
        Some(x) => cfg.set(key, &Value::Float(x)),
        None => Ok(()),
    }
}

pub fn run(cli: Cli, args: &[String]) -> Result<()> {
    let mut cfg = load_config(&cli)?;
    let mut ctx = Ctx { args, inputs: Vec::new() };
    if let Some(p) = &cli.config {
        ctx.inputs.push(p.clone());
    }
    match cli.command {
        Command::FitDirections(a) => {
            set_f64(&mut cfg, "fit.alpha", a.alpha)?;
            if a.condition_on_peers {
                cfg.set("fit.condition_on_peers", &Value::Boolean(true))?;
            }
            fit_directions_cmd(&cfg, &mut ctx, a)
        }
        Command::FitPredictors(a) => fit_predictors_cmd(&cfg, &mut ctx, a),
        Command::Project(a) => {
            set_f64(&mut cfg, "project.tol", a.tol)?;
            project_cmd(&cfg, &mut ctx, a)
        }
        Command::Edit(a) => {
            if let Some(m) = a.mode {
                let s = match m {
                    ModeArg::Relative => "relative",
                    ModeArg::Absolute => "absolute",
                };
                cfg.set("edit.mode", &Value::String(s.to_string()))?;
            }
            edit_cmd(&cfg, &mut ctx, a)
        }
        Command::TrainNeutralizer(a) => train_cmd(&cfg, &mut ctx, a),
        Command::Neutralize(a) => {
            set_f64(&mut cfg, "neutralize.lambda", a.lambda)?;
            set_f64(&mut cfg, "neutralize.dropout", a.dropout)?;
            neutralize_cmd(&cfg, &mut ctx, a)
        }
        Command::Sample(a) => sample_cmd(&cfg, &mut ctx, a),
        Command::SampleBalanced(a) => sample_balanced_cmd(&cfg, &mut ctx, a),
        Command::Metrics(m) => metrics_cmd(&mut cfg, &mut ctx, m),
        Command::Experiment(ExperimentCommand::Run(a)) => experiment_cmd(&cfg, &mut ctx, a),
    }
}

struct Ctx<'a> {
    args: &'a [String],
    inputs: Vec<PathBuf>,
}

impl Ctx<'_> {
    fn input(&mut self, p: &Path) -> PathBuf {
        self.inputs.push(p.to_path_buf());
        p.to_path_buf()
    }

    fn provenance(&self, command: &str, cfg: &RunConfig, output: &Path) -> Result<()> {
        Record { command, args: self.args, config: cfg, inputs: self.inputs.iter().map(PathBuf::as_path).collect() }
            .write_for(output)
    }
}

fn warn(msg: impl AsRef<str>) {
    eprintln!("warning: {}", msg.as_ref());
}

fn fit_directions_cmd(cfg: &RunConfig, ctx: &mut Ctx, a: FitDirectionsArgs) -> Result<()> {
    let t = table::load(&ctx.input(&a.table))?;
    let targets = match &a.targets {
        Some(s) => comma_list(s),
        None => t.names_with_role(AttributeRole::Au),
    };
    if targets.is_empty() {
        return Err(Error::Invalid("no targets: the table has no AU attributes and --targets is empty".to_string()));
    }
    let mut out = DirectionBank::new(t.dimension());
    match &a.covariates {
        Some(c) => {
            let cov = comma_list(c);
            for name in &cov {
                if t.attribute(name)?.role != AttributeRole::Au {
                    warn(format!("covariate `{name}` is not an AU; conditioning on a collider can open a spurious path"));
                }
            }
            for target in &targets {
                let cv: Vec<String> = cov.iter().filter(|c| *c != target).cloned().collect();
                let pred = match t.attribute(target)?.kind {
                    AttributeKind::Continuous => fit_ridge(&t, target, &cv, cfg.fit.alpha)?,
                    AttributeKind::Binary => fit_logistic(&t, target, &cv, cfg.fit.logistic_l2)?,
                };
                out.insert(extract_direction(&pred))?;
            }
        }
        None => {
            for (_, d) in fit_directions(&t, &targets, &cfg.fit)? {
                out.insert(d)?;
            }
        }
    }
    for d in out.iter().filter(|d| d.is_degenerate()) {
        warn(format!("direction `{}` is degenerate (zero fit) and cannot be used for edits", d.name()));
    }
    bank::save(&out, &a.out)?;
    ctx.provenance("fit-directions", cfg, &a.out)
}

fn fit_predictors_cmd(cfg: &RunConfig, ctx: &mut Ctx, a: FitPredictorsArgs) -> Result<()> {
    let t = table::load(&ctx.input(&a.table))?;
    let binary = comma_list(&a.binary);
    let binned = comma_list(&a.binned)
        .into_iter()
        .map(|s| {
            let (n, b) = s.split_once(':').ok_or_else(|| Error::Usage(format!("--binned expects `name:bins`, found `{s}`")))?;
            let b = b.parse().map_err(|_| Error::Usage(format!("bad bin count in `{s}`")))?;
            Ok((n.to_string(), b))
        })
        .collect::<Result<Vec<(String, usize)>>>()?;
    if binary.is_empty() && binned.is_empty() {
        return Err(Error::Usage("give --binary and/or --binned attributes".to_string()));
    }
    let set = PredictorSet::fit(&t, &binary, &binned, cfg.fit.alpha, cfg.fit.logistic_l2)?;
    predictors::save(&set, &a.out)?;
    ctx.provenance("fit-predictors", cfg, &a.out)
}

fn project_cmd(cfg: &RunConfig, ctx: &mut Ctx, a: ProjectArgs) -> Result<()> {
    let mut b = bank::load(&ctx.input(&a.bank))?;
    let against = comma_list(&a.against);
    let dirs = against.iter().map(|n| b.get(n)).collect::<latent_edit_core::Result<Vec<_>>>()?;
    let basis = orthonormalize_in(b.dimension(), &dirs, cfg.project_tol)?;
    for n in basis.dropped() {
        warn(format!("`{n}` is linearly dependent on earlier nuisance directions and was dropped"));
    }
    let projected = project_out(b.get(&a.target)?, &basis)?;
    if projected.is_degenerate() {
        warn(format!("`{}` lies inside the nuisance span; the projected direction is degenerate", a.target));
    }
    b.insert(projected)?;
    bank::save(&b, &a.out)?;
    ctx.provenance("project", cfg, &a.out)
}

fn parse_steps(s: &str) -> Result<Vec<(String, f64)>> {
    comma_list(s)
        .into_iter()
        .map(|item| {
            let (n, v) = item.split_once('=').ok_or_else(|| Error::Usage(format!("--set expects `name=step`, found `{item}`")))?;
            let v: f64 = v.trim().parse().map_err(|_| Error::Usage(format!("bad step in `{item}`")))?;
            Ok((n.trim().to_string(), v))
        })
        .collect()
}

fn edit_cmd(cfg: &RunConfig, ctx: &mut Ctx, a: EditArgs) -> Result<()> {
    let t = table::load(&ctx.input(&a.table))?;
    let b = bank::load_expecting(&ctx.input(&a.bank), t.dimension())?;
    let req = EditRequest { targets: parse_steps(&a.steps)?, mode: cfg.edit_mode };
    req.validate(&b)?;
    // Continuous labels of edited attributes follow the commanded change.
    let relabel: Vec<(usize, f64)> = req
        .targets
        .iter()
        .filter_map(|(n, s)| t.attribute_index(n).ok().filter(|&i| t.meta()[i].kind == AttributeKind::Continuous).map(|i| (i, *s)))
        .collect();
    let mut out = TableBuilder::new(t.dimension(), t.meta().to_vec())?;
    for r in 0..t.n_rows() {
        let z = apply_multi_edit(&t.latent(r), &b, &req)?;
        let mut labels = t.labels(r).to_vec();
        for &(i, s) in &relabel {
            labels[i] = match req.mode {
                EditMode::Relative => (labels[i] + s).clamp(0.0, 1.0),
                EditMode::AbsoluteAfterNeutralization => s,
            };
        }
        out.push(&z, &labels)?;
    }
    table::save(&out.finish(), &a.out)?;
    ctx.provenance("edit", cfg, &a.out)
}

fn train_cmd(cfg: &RunConfig, ctx: &mut Ctx, a: TrainNeutralizerArgs) -> Result<()> {
    let seed = cfg.require_seed("train-neutralizer")?;
    let t = table::load(&ctx.input(&a.table))?;
    let ncfg = latent_edit_core::neutralizer::NeutralizerConfig { seed, ..cfg.neutralizer.clone() };
    let trained = train_neutralizer(&t, &ncfg)?;
    eprintln!(
        "trained {} epochs; best epoch {} with balanced recall {}",
        trained.history.len(),
        trained.best_epoch,
        fmt_f64(trained.best_recall)
    );
    model::save(&trained.model, &a.out)?;
    ctx.provenance("train-neutralizer", cfg, &a.out)?;
    if let Some(h) = &a.history {
        let mut tsv = Tsv::new(&["epoch", "train_loss", "val_loss", "recall"]);
        for e in &trained.history {
            tsv.push(vec![e.epoch.to_string(), fmt_f64(e.train_loss), fmt_f64(e.val_loss), fmt_f64(e.recall)]);
        }
        files::write(h, tsv.render().as_bytes())?;
        ctx.provenance("train-neutralizer", cfg, h)?;
    }
    Ok(())
}

fn neutralize_cmd(cfg: &RunConfig, ctx: &mut Ctx, a: NeutralizeArgs) -> Result<()> {
    let seed = cfg.require_seed("neutralize")?;
    let t = table::load(&ctx.input(&a.table))?;
    let m = model::load(&ctx.input(&a.model))?;
    if m.dimension() != t.dimension() {
        return Err(latent_edit_core::Error::DimensionMismatch { expected: m.dimension(), found: t.dimension() }.into());
    }
    let base = NeutralizeConfig { seed: 0, ..cfg.neutralize.clone() };
    let results = (0..t.n_rows())
        .into_par_iter()
        .map(|r| {
            let c = NeutralizeConfig { seed: stream_seed(seed, r as u64), ..base.clone() };
            let out = neutralize(&t.latent(r), &m, &c)?;
            let p = predict_aus(&m, &out.code)?;
            Ok((out, p))
        })
        .collect::<latent_edit_core::Result<Vec<_>>>()?;
    let au_cols: Vec<usize> = m.au_names().iter().filter_map(|n| t.attribute_index(n).ok()).collect();
    let mut b = TableBuilder::new(t.dimension(), t.meta().to_vec())?;
    let mut summary = Tsv::new(&["row", "steps", "stop", "objective", "max_au"]);
    let mut trace = Tsv::new(&["row", "step", "objective"]);
    let mut failed = 0usize;
    for (r, (out, p)) in results.iter().enumerate() {
        let mut labels = t.labels(r).to_vec();
        for &i in &au_cols {
            labels[i] = 0.0;
        }
        b.push(&out.code, &labels)?;
        let max_au = p.iter().copied().fold(0.0, f64::max);
        if max_au >= cfg.threshold {
            failed += 1;
        }
        let stop = match out.stop_reason {
            StopReason::Converged => "converged",
            StopReason::MaxSteps => "max_steps",
        };
        let last = out.trace.last().copied();
        summary.push(vec![r.to_string(), out.trace.len().to_string(), stop.to_string(), report::cell(last), fmt_f64(max_au)]);
        for (s, v) in out.trace.iter().enumerate() {
            trace.push(vec![r.to_string(), (s + 1).to_string(), fmt_f64(*v)]);
        }
    }
    if failed > 0 {
        warn(format!("{failed} of {} rows still have an AU prediction at or above {}", t.n_rows(), fmt_f64(cfg.threshold)));
    }
    table::save(&b.finish(), &a.out)?;
    ctx.provenance("neutralize", cfg, &a.out)?;
    if let Some(dir) = &a.trace {
        files::write(&dir.join("summary.tsv"), summary.render().as_bytes())?;
        files::write(&dir.join("trace.tsv"), trace.render().as_bytes())?;
        ctx.provenance("neutralize", cfg, dir)?;
    }
    Ok(())
}

fn sample_cmd(cfg: &RunConfig, ctx: &mut Ctx, a: SampleArgs) -> Result<()> {
    let seed = cfg.require_seed("sample")?;
    let spec = oracle::load(&ctx.input(&a.oracle))?;
    let t = oracle_sample(&spec, a.n, seed)?;
    table::save(&t, &a.out)?;
    ctx.provenance("sample", cfg, &a.out)
}

/// Splits `gender,age3` into binary and binned attributes.
fn parse_filter(spec: &str, set: &PredictorSet) -> Result<(Vec<String>, Vec<(String, Vec<f64>)>)> {
    let mut binary = Vec::new();
    let mut binned = Vec::new();
    for item in comma_list(spec) {
        if let Ok(b) = set.boundaries(&item) {
            binned.push((item.clone(), b.to_vec()));
            continue;
        }
        let stem = item.trim_end_matches(|c: char| c.is_ascii_digit());
        if stem.len() < item.len() {
            if let Ok(b) = set.boundaries(stem) {
                let bins: usize = item[stem.len()..].parse().map_err(|_| Error::Usage(format!("bad bin count in `{item}`")))?;
                if bins != b.len() + 1 {
                    return Err(Error::Invalid(format!("`{item}` asks for {bins} bins but the predictors define {}", b.len() + 1)));
                }
                binned.push((stem.to_string(), b.to_vec()));
                continue;
            }
        }
        set.get(&item)?;
        binary.push(item);
    }
    Ok((binary, binned))
}

fn sample_balanced_cmd(cfg: &RunConfig, ctx: &mut Ctx, a: SampleBalancedArgs) -> Result<()> {
    let set = predictors::load(&ctx.input(&a.predictors))?;
    let (binary, binned) = parse_filter(&a.filter, &set)?;
    let plan = balanced_demographic_plan(&binary, &binned, a.per_cell)?;
    let pool = a.pool.as_ref().map(|p| table::load(&ctx.input(p))).transpose()?;
    let spec = a.oracle.as_ref().map(|p| oracle::load(&ctx.input(p))).transpose()?;
    let seed = if spec.is_some() { Some(cfg.require_seed("sample-balanced")?) } else { cfg.seed };
    let max_draws = a.max_draws.unwrap_or(a.per_cell.saturating_mul(cfg.max_draws_per_target));
    let mut out: Option<AttributeTable> = None;
    for (i, (filter, count)) in plan.iter().enumerate() {
        let source = match (&spec, &pool) {
            (Some(s), _) => GeneratorSource::Oracle { spec: s.clone(), seed: stream_seed(seed.unwrap_or(0), i as u64) },
            (None, Some(t)) => GeneratorSource::Table(t.clone()),
            (None, None) => unreachable!("clap requires a source"),
        };
        let got = accept_reject_sample(&source, filter, &set, *count, max_draws)?;
        eprintln!("cell {}: {} accepted from {} draws", filter.label(), got.table.n_rows(), got.draws);
        out = Some(match out {
            None => got.table,
            Some(t) => t.concat(&got.table)?,
        });
    }
    table::save(&out.expect("plan has at least one cell"), &a.out)?;
    ctx.provenance("sample-balanced", cfg, &a.out)
}

fn columns_of(t: &AttributeTable, c: &Columns) -> Result<Vec<String>> {
    let names = match &c.columns {
        Some(s) => comma_list(s),
        None => t.names_with_role(AttributeRole::Au),
    };
    if names.is_empty() {
        return Err(Error::Invalid("no columns selected".to_string()));
    }
    for n in &names {
        t.attribute_index(n)?;
    }
    Ok(names)
}

/// Row-major `n x names.len()` label block.
fn label_block(t: &AttributeTable, names: &[String]) -> Result<Vec<f64>> {
    let idx = names.iter().map(|n| t.attribute_index(n)).collect::<latent_edit_core::Result<Vec<_>>>()?;
    Ok((0..t.n_rows()).flat_map(|r| idx.iter().map(move |&i| t.labels(r)[i])).collect())
}

fn model_block(m: &latent_edit_core::neutralizer::NeutralizerModel, t: &AttributeTable, names: &[String]) -> Result<Vec<f64>> {
    let idx = names
        .iter()
        .map(|n| m.au_names().iter().position(|a| a == n).ok_or_else(|| latent_edit_core::Error::UnknownAttribute(n.clone())))
        .collect::<latent_edit_core::Result<Vec<_>>>()?;
    let rows = (0..t.n_rows()).into_par_iter().map(|r| predict_aus(m, &t.latent(r))).collect::<latent_edit_core::Result<Vec<_>>>()?;
    Ok(rows.iter().flat_map(|p| idx.iter().map(move |&i| p[i])).collect())
}

fn write_metric(dir: &Path, name: &str, tsv: &Tsv, text: &str) -> Result<()> {
    files::write(&dir.join(format!("{name}.tsv")), tsv.render().as_bytes())?;
    files::write(&dir.join(format!("{name}.txt")), text.as_bytes())?;
    print!("{text}");
    Ok(())
}

fn metrics_cmd(cfg: &mut RunConfig, ctx: &mut Ctx, m: MetricsCommand) -> Result<()> {
    let out = match m {
        MetricsCommand::Corr(a) => {
            let t = table::load(&ctx.input(&a.table))?;
            let names = columns_of(&t, &a.columns)?;
            let values = match &a.oracle {
                Some(p) => {
                    let spec = oracle::load(&ctx.input(p))?;
                    let idx = names.iter().map(|n| spec.factor_index(n)).collect::<latent_edit_core::Result<Vec<_>>>()?;
                    let mut v = Vec::with_capacity(t.n_rows() * idx.len());
                    for r in 0..t.n_rows() {
                        let f = spec.recover_factors(t.code(r))?;
                        v.extend(idx.iter().map(|&i| f[i]));
                    }
                    v
                }
                None => label_block(&t, &names)?,
            };
            let rep = correlation_matrix(&values, names.len())?;
            write_metric(&a.out, "corr", &report::correlation_tsv(&rep, &names), &report::correlation_text(&rep, &names))?;
            a.out
        }
        MetricsCommand::F1(a) => {
            set_f64(cfg, "metrics.threshold", a.threshold)?;
            let (pred, truth, names) = class_inputs(ctx, &a)?;
            let rep = f1_scores(&pred, &truth, names.len(), cfg.threshold)?;
            write_metric(&a.out, "f1", &report::f1_tsv(&rep, &names), &report::f1_text(&rep, &names, cfg.threshold))?;
            a.out
        }
        MetricsCommand::PairFpr(a) => {
            set_f64(cfg, "metrics.threshold", a.threshold)?;
            let (pred, truth, names) = class_inputs(ctx, &a)?;
            let rep = pair_fpr(&binarize(&pred, cfg.threshold), &binarize(&truth, cfg.threshold), names.len())?;
            write_metric(
                &a.out,
                "pair_fpr",
                &report::pair_fpr_tsv(&rep, &names),
                &report::pair_fpr_text(&rep, &names, cfg.threshold),
            )?;
            a.out
        }
        MetricsCommand::Mae(a) => {
            let e = table::load(&ctx.input(&a.edited))?;
            let t = table::load(&ctx.input(&a.target))?;
            if e.n_rows() != t.n_rows() {
                return Err(latent_edit_core::Error::DimensionMismatch { expected: e.n_rows(), found: t.n_rows() }.into());
            }
            let names = columns_of(&e, &a.columns)?;
            let (pe, pt) = match &a.model {
                Some(p) => {
                    let m = model::load(&ctx.input(p))?;
                    (model_block(&m, &e, &names)?, model_block(&m, &t, &names)?)
                }
                None => (label_block(&e, &names)?, label_block(&t, &names)?),
            };
            let aus = e.indices_with_role(AttributeRole::Au);
            let counts: Vec<usize> = (0..e.n_rows()).map(|r| aus.iter().filter(|&&i| e.labels(r)[i] > 0.0).count()).collect();
            let groups = mae_to_target(&pe, &pt, names.len(), &counts)?;
            let text = format!("metric: mae\nattributes: {}\ngroups: {}\n", names.join(","), groups.len());
            write_metric(&a.out, "mae", &report::mae_tsv(&groups), &text)?;
            a.out
        }
        MetricsCommand::LearningCurve(a) => {
            let text = files::read_string(&ctx.input(&a.points))?;
            let origin = a.points.display().to_string();
            let mut points = Vec::new();
            for (no, line) in crate::files::content_lines(&text).skip(1) {
                let f: Vec<&str> = line.split_whitespace().collect();
                let [n, s] = f[..] else {
                    return Err(Error::format(&origin, no, "expected two columns: n score"));
                };
                let p = |x: &str| crate::num::parse_f64(x).ok_or_else(|| Error::format(&origin, no, format!("bad number `{x}`")));
                points.push((p(n)?, p(s)?));
            }
            let fit = fit_pow3(&points)?;
            let mult = match (a.reference, a.n_current) {
                (Some(r), Some(n)) => Some(data_multiplier(&fit, r, n).map_err(|e| e.to_string())),
                _ => None,
            };
            let mut tsv = Tsv::new(&["n", "score", "fitted"]);
            for (n, s) in &points {
                tsv.push(vec![fmt_f64(*n), fmt_f64(*s), fmt_f64(fit.eval(*n))]);
            }
            write_metric(&a.out, "learning_curve", &tsv, &report::pow3_text(&fit, mult))?;
            a.out
        }
    };
    ctx.provenance("metrics", cfg, &out)
}

fn class_inputs(ctx: &mut Ctx, a: &ClassArgs) -> Result<(Vec<f64>, Vec<f64>, Vec<String>)> {
    let truth = table::load(&ctx.input(&a.truth))?;
    let names = columns_of(&truth, &a.columns)?;
    let pred = match (&a.pred, &a.model) {
        (Some(p), _) => {
            let pt = table::load(&ctx.input(p))?;
            if pt.n_rows() != truth.n_rows() {
                return Err(latent_edit_core::Error::DimensionMismatch { expected: truth.n_rows(), found: pt.n_rows() }.into());
            }
            label_block(&pt, &names)?
        }
        (None, Some(m)) => model_block(&model::load(&ctx.input(m))?, &truth, &names)?,
        (None, None) => unreachable!("clap requires a prediction source"),
    };
    Ok((pred, label_block(&truth, &names)?, names))
}

fn experiment_cmd(cfg: &RunConfig, ctx: &mut Ctx, a: RunArgs) -> Result<()> {
    let seed = cfg.require_seed("experiment run")?;
    let scenarios: Vec<Scenario> = if a.scenario.trim() == "all" {
        Scenario::ALL.to_vec()
    } else {
        comma_list(&a.scenario).iter().map(|s| Scenario::parse(s)).collect::<latent_edit_core::Result<Vec<_>>>()?
    };
    if scenarios.is_empty() || a.seeds == 0 {
        return Err(Error::Usage("need at least one scenario and one seed".to_string()));
    }
    let fixed: Option<OracleSpec> = a.oracle.as_ref().map(|p| oracle::load(&ctx.input(p))).transpose()?;
    let preset = cfg.experiment_oracle.clone();
    presets::by_name(&preset, 0)?;
    let seeds: Vec<u64> = (0..a.seeds).map(|i| seed + i).collect();
    let outcomes = runner::run(
        |s| match &fixed {
            Some(spec) => Ok(spec.clone()),
            None => Ok(presets::by_name(&preset, s)?),
        },
        &scenarios,
        &seeds,
        &cfg.experiment,
    )?;
    runner::write_reports(&a.out, &outcomes, &scenarios)?;
    print!("{}", files::read_string(&a.out.join("report.txt"))?);
    ctx.provenance("experiment run", cfg, &a.out)
}
