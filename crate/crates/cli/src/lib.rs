//! `rau` command-line driver: dataset generation, training, evaluation,
//! gradient checks and early-stop schedule inspection.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rau_core::checkpoint;
use rau_core::files;
use rau_core::gradcheck::{self, DEFAULT_TOL};
use rau_core::model::{ModelDims, RauModel};
use rau_core::rau::forward_batch;
use rau_core::taskgen::{self, Dataset, DatasetConfig, QAExample};
use rau_core::tensor::Tensor;
use rau_core::trainer::{self, RunOptions};

pub mod config;

pub use config::Config;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_NUMERIC: i32 = 2;
pub const EXIT_IO: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Core(#[from] rau_core::Error),
    #[error("gradient check failed: {0}")]
    GradCheck(String),
}

impl CliError {
    pub(crate) fn config(key: &str, msg: impl Into<String>) -> Self {
        CliError::Core(rau_core::Error::Config {
            key: key.to_string(),
            msg: msg.into(),
        })
    }

    pub fn exit_code(&self) -> i32 {
        use rau_core::Error as E;
        match self {
            CliError::Usage(_) => EXIT_USAGE,
            CliError::GradCheck(_) => EXIT_NUMERIC,
            CliError::Core(e) => match e {
                E::Config { .. } | E::Contract(_) => EXIT_USAGE,
                E::Divergence { .. } | E::Domain { .. } => EXIT_NUMERIC,
                E::Io { .. } | E::Format { .. } | E::Shape { .. } => EXIT_IO,
            },
        }
    }
}

#[derive(Parser, Debug)]
#[command(name = "rau", version, about = "Recurrent answering unit training lab")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate the synthetic grid question-answering dataset.
    GenData(GenDataArgs),
    /// Train a model and write metrics, checkpoints and the early-stop log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on one split.
    Eval(EvalArgs),
    /// Compare backpropagated gradients with central differences.
    GradCheck(GradCheckArgs),
    /// Print the per-unit stop epochs of the exponential schedule.
    Schedule(ScheduleArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 4)]
    pub grid: usize,
    #[arg(long, default_value_t = 8000)]
    pub train: usize,
    #[arg(long, default_value_t = 1000)]
    pub val: usize,
    #[arg(long, default_value_t = 1000)]
    pub test: usize,
    /// Proportions of depth 1, 2 and 3 questions.
    #[arg(long, default_value = "0.4,0.4,0.2")]
    pub depths: String,
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 3)]
    pub min_objects: usize,
    #[arg(long, default_value_t = 8)]
    pub max_objects: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Flat key=value configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    /// formula, validation or off.
    #[arg(long)]
    pub early_stop: Option<String>,
    /// Same as `--early-stop off`.
    #[arg(long)]
    pub no_early_stop: bool,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub t_max: Option<usize>,
    /// Any configuration key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Print per-epoch progress to stderr.
    #[arg(long)]
    pub verbose: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// train, val or test.
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Number of units to measure.
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    /// Report file; defaults to `eval-<split>.txt` beside the checkpoint.
    #[arg(long)]
    pub report: Option<PathBuf>,
    /// Write every unit's attention map for every example.
    #[arg(long)]
    pub dump_attention: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_TOL)]
    pub tol: f64,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
}

#[derive(Args, Debug)]
pub struct ScheduleArgs {
    #[arg(long)]
    pub k: usize,
    #[arg(long)]
    pub t_min: usize,
    #[arg(long)]
    pub t_max: usize,
    #[arg(long)]
    pub lambda: f64,
}

/// Parses `args` (including the program name), runs the command, prints
/// errors to stderr and returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match run(cli.command) {
        Ok(out) => {
            print!("{out}");
            EXIT_OK
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

/// Runs one command, returning what it prints on success.
pub fn run(command: Command) -> Result<String, CliError> {
    match command {
        Command::GenData(a) => gen_data(&a),
        Command::Train(a) => train(&a),
        Command::Eval(a) => eval(&a),
        Command::GradCheck(a) => grad_check(&a),
        Command::Schedule(a) => schedule(&a),
    }
}

fn parse_depths(s: &str) -> Result<[f64; 3], CliError> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::config("depths", format!("cannot parse `{s}`")))?;
    parts
        .try_into()
        .map_err(|_| CliError::config("depths", "expected three comma-separated proportions"))
}

pub fn gen_data(a: &GenDataArgs) -> Result<String, CliError> {
    let cfg = DatasetConfig {
        grid: a.grid,
        train: a.train,
        val: a.val,
        test: a.test,
        depths: parse_depths(&a.depths)?,
        min_objects: a.min_objects,
        max_objects: a.max_objects,
        seed: a.seed,
    };
    let ds = taskgen::build_dataset(&cfg)?;
    ds.write(&a.out)?;
    Ok(format!(
        "wrote {} train, {} val, {} test examples to {}\n",
        ds.train.examples.len(),
        ds.val.examples.len(),
        ds.test.examples.len(),
        a.out.display()
    ))
}

/// Model dimensions implied by a configuration and a dataset.
pub fn model_dims(config: &Config, ds: &Dataset) -> Result<ModelDims, CliError> {
    let grid = ds.train.examples[0].scene.grid;
    if grid != config.grid {
        return Err(CliError::config(
            "grid",
            format!("configured {} but the dataset uses {grid}", config.grid),
        ));
    }
    Ok(ModelDims {
        vocab: ds.vocab.len(),
        word_dim: config.word_dim,
        question_hidden: config.question_hidden,
        channels: taskgen::CHANNELS,
        locations: grid * grid,
        hidden: config.hidden,
        attention: config.attention,
        classes: ds.answers.len(),
    })
}

pub fn train_config(a: &TrainArgs) -> Result<Config, CliError> {
    let text = match &a.config {
        Some(p) => Some(files::read_to_string(p)?),
        None => None,
    };
    let mut overrides = a
        .set
        .iter()
        .map(|s| config::parse_override(s))
        .collect::<Result<Vec<_>, _>>()?;
    let mut push = |k: &str, v: Option<String>| {
        if let Some(v) = v {
            overrides.push((k.to_string(), v));
        }
    };
    push("data", a.data.as_ref().map(|p| p.display().to_string()));
    push("out", a.out.as_ref().map(|p| p.display().to_string()));
    push("k", a.k.map(|v| v.to_string()));
    push("early_stop", a.early_stop.clone());
    push("seed", a.seed.map(|v| v.to_string()));
    push("t_max", a.t_max.map(|v| v.to_string()));
    if a.no_early_stop {
        push("early_stop", Some("off".into()));
    }
    Config::resolve(text.as_deref(), &overrides)
}

pub fn train(a: &TrainArgs) -> Result<String, CliError> {
    let config = train_config(a)?;
    let ds = Dataset::load(&config.data)?;
    let dims = model_dims(&config, &ds)?;
    std::fs::create_dir_all(&config.out).map_err(|e| rau_core::Error::Io {
        path: config.out.clone(),
        source: e,
    })?;
    let out = &config.out;
    files::write_atomic(&out.join("config.effective"), config.effective().as_bytes())?;
    let model = trainer::init_model(dims, config.train.seed)?;
    let options = RunOptions {
        checkpoint_dir: Some(out.clone()),
        verbose: a.verbose,
    };
    let outcome = trainer::run_training(model, &ds.train.examples, &ds.val.examples, &config.train, &options)?;
    files::write_atomic(&out.join("metrics.csv"), trainer::metrics_csv(&outcome.metrics).as_bytes())?;
    let log: String = outcome.events.iter().map(|e| format!("{e}\n")).collect();
    files::write_atomic(&out.join("earlystop.log"), log.as_bytes())?;
    Ok(format!(
        "trained {} epochs; best unit-1 validation accuracy {:.6} at epoch {}; {} unit(s) stopped early\n",
        outcome.epochs_run,
        outcome.best_val_unit1,
        outcome.best_epoch,
        outcome.events.len()
    ))
}

fn check_compatible(model: &RauModel, ds: &Dataset, path: &Path) -> Result<(), CliError> {
    let d = &model.dims;
    let first = &ds.train.examples[0];
    let expected = [
        ("vocabulary size", d.vocab, ds.vocab.len()),
        ("feature channels", d.channels, first.features.rows()),
        ("locations", d.locations, first.features.cols()),
        ("answer classes", d.classes, ds.answers.len()),
    ];
    for (what, got, want) in expected {
        if got != want {
            return Err(rau_core::Error::Format {
                path: path.to_path_buf(),
                msg: format!("checkpoint has {what} {got}, dataset needs {want}"),
            }
            .into());
        }
    }
    Ok(())
}

/// One line per example and unit: `id=<id> step=<k>` then the `L`
/// attention probabilities.
pub fn attention_dump(model: &RauModel, examples: &[QAExample], k: usize) -> Result<String, CliError> {
    let mut out = String::new();
    for chunk in examples.chunks(128) {
        let maps: Vec<&Tensor> = chunk.iter().map(|e| &e.features).collect();
        let qs: Vec<&[usize]> = chunk.iter().map(|e| e.question.as_slice()).collect();
        let steps = forward_batch(model, &maps, &qs, k)?;
        for (ex, per_step) in chunk.iter().zip(&steps) {
            for (s, step) in per_step.iter().enumerate() {
                write!(out, "id={} step={}", ex.id, s + 1).unwrap();
                for p in &step.f_loc {
                    write!(out, " {p:.6}").unwrap();
                }
                out.push('\n');
            }
        }
    }
    Ok(out)
}

pub fn eval(a: &EvalArgs) -> Result<String, CliError> {
    if a.k < 1 {
        return Err(CliError::config("k", "must be at least 1"));
    }
    let model = checkpoint::load(&a.checkpoint)?;
    let ds = Dataset::load(&a.data)?;
    check_compatible(&model, &ds, &a.checkpoint)?;
    let split = ds
        .split(&a.split)
        .ok_or_else(|| CliError::config("split", format!("expected train, val or test, got `{}`", a.split)))?;
    let report = trainer::evaluate_split(&model, &split.examples, a.k)?;
    let mut text = format!("split={} examples={}\n", a.split, report.examples);
    for (k, (acc, loss)) in report.accuracy.iter().zip(&report.loss).enumerate() {
        writeln!(text, "unit={} accuracy={acc:.6} loss={loss:.6}", k + 1).unwrap();
    }
    let report_path = a.report.clone().unwrap_or_else(|| {
        a.checkpoint
            .with_file_name(format!("eval-{}.txt", a.split))
    });
    files::write_atomic(&report_path, text.as_bytes())?;
    if let Some(p) = &a.dump_attention {
        files::write_atomic(p, attention_dump(&model, &split.examples, a.k)?.as_bytes())?;
    }
    Ok(text)
}

pub fn grad_check(a: &GradCheckArgs) -> Result<String, CliError> {
    if a.k < 1 {
        return Err(CliError::config("k", "must be at least 1"));
    }
    let report = gradcheck::grad_check(gradcheck::tiny_dims(), a.k, a.seed)?;
    let mut text = String::new();
    let mut failed = Vec::new();
    for (group, err) in &report {
        let ok = *err < a.tol;
        writeln!(text, "{group:<10} max_rel_err={err:.3e} {}", if ok { "ok" } else { "FAIL" }).unwrap();
        if !ok {
            failed.push(group.clone());
        }
    }
    if failed.is_empty() {
        writeln!(text, "PASS (tol {:e})", a.tol).unwrap();
        Ok(text)
    } else {
        print!("{text}");
        Err(CliError::GradCheck(format!(
            "{} above tolerance {:e}",
            failed.join(", "),
            a.tol
        )))
    }
}

pub fn schedule(a: &ScheduleArgs) -> Result<String, CliError> {
    let stops = trainer::schedule_stop_epochs(a.t_min, a.t_max, a.lambda, a.k)?;
    let mut text = String::from("unit t_stop\n");
    for (k, t) in stops.iter().enumerate() {
        writeln!(text, "{} {t}", k + 1).unwrap();
    }
    Ok(text)
}
