//! Command-line front end. Exit codes: 0 success, 1 usage error, 2 data or model error.

pub mod config;

use std::ffi::OsString;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, CommandFactory, Parser, Subcommand};

use crate::corpus::{build_vocabulary, load_corpus, split_train_test};
use crate::error::Error;
use crate::evaluation::{
    capacity_csv, capacity_experiment, evaluate, shrink_csv, shrink_experiment, CapacityPlan, LanguageOrder, ShrinkPlan,
};
use crate::langspace::{
    cluster, curve_csv, estimate_vector, generate, interpolate, interpolation_curve, language_vectors, parse_grid,
    EstimationConfig, EstimationInit, Linkage, Metric, SamplerConfig,
};
use crate::model::Model;
use crate::training::{load_checkpoint, save_checkpoint, train, Checkpoint};

pub use config::RunConfig;

#[derive(Debug, Parser)]
#[command(
    name = "langvec",
    version,
    about = "Character-level language model with continuous language vectors"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train a model on a verse-aligned corpus.
    Train(TrainArgs),
    /// Held-out cross-entropy per language.
    Eval(EvalArgs),
    /// Generate text from a language vector.
    Sample(SampleArgs),
    /// Cross-entropy of a text along the line between two language vectors.
    Interpolate(InterpolateArgs),
    /// Hierarchical clustering of the learned language vectors.
    Cluster(ClusterArgs),
    /// Fit a language vector to new sentences with the model frozen.
    Estimate(EstimateArgs),
    /// Train on growing language sets and track held-out cross-entropy.
    Capacity(CapacityArgs),
    /// Monolingual training with repeatedly halved hidden size.
    Shrink(ShrinkArgs),
}

#[derive(Debug, Args)]
pub struct ConfigArgs {
    /// Run configuration file (`key = value` lines).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Override a configuration key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Corpus directory with `<lang>.txt` files.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Output directory (checkpoint, metrics, effective config).
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: u64,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub corpus: PathBuf,
    /// Comma-separated language codes (default: all in the checkpoint).
    #[arg(long, value_delimiter = ',')]
    pub languages: Vec<String>,
    /// Held-out size (default: the one used in training).
    #[arg(long)]
    pub holdout: Option<usize>,
    /// Output CSV path or `-`.
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Language code to sample from.
    #[arg(long)]
    pub lang: String,
    /// Second language; samples from the interpolated vector.
    #[arg(long)]
    pub to: Option<String>,
    /// Interpolation weight of `--to`.
    #[arg(long, default_value_t = 0.5)]
    pub alpha: f64,
    /// Softmax temperature; 0 decodes greedily.
    #[arg(long, default_value_t = 0.5)]
    pub temperature: f64,
    #[arg(long, default_value_t = 200)]
    pub max_len: usize,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct InterpolateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub from: String,
    #[arg(long)]
    pub to: String,
    /// Inclusive grid `start:end:step`.
    #[arg(long, default_value = "0:1:0.01")]
    pub grid: String,
    /// Test text, one sentence per line.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct ClusterArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// cosine or euclidean.
    #[arg(long, default_value = "cosine")]
    pub metric: String,
    /// average, complete or single.
    #[arg(long, default_value = "average")]
    pub linkage: String,
    /// newick or json.
    #[arg(long, default_value = "newick")]
    pub format: String,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Sentences of the new variety, one per line.
    #[arg(long)]
    pub sentences: PathBuf,
    /// Initial language code, or `nearest`.
    #[arg(long, default_value = "nearest")]
    pub init: String,
    #[arg(long, default_value_t = 200)]
    pub steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub lr: f64,
    /// Use at most this many sentences.
    #[arg(long, default_value_t = 32)]
    pub budget: usize,
    #[arg(long, default_value = "-")]
    pub out: String,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Comma-separated language counts, strictly increasing.
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,8")]
    pub schedule: Vec<usize>,
    /// Comma-separated language order; omitted means a seeded shuffle.
    #[arg(long, value_delimiter = ',')]
    pub order: Vec<String>,
    /// Languages to report (default: all trained ones).
    #[arg(long, value_delimiter = ',')]
    pub tracked: Vec<String>,
    #[arg(long)]
    pub seed: u64,
    /// Output directory or `-` for the CSV on stdout.
    #[arg(long, default_value = "-")]
    pub out: String,
    #[command(flatten)]
    pub config: ConfigArgs,
}

#[derive(Debug, Args)]
pub struct ShrinkArgs {
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub language: String,
    #[arg(long, default_value_t = 64)]
    pub base_hidden: usize,
    #[arg(long, default_value_t = 4)]
    pub sizes: usize,
    #[arg(long)]
    pub seed: u64,
    /// Output directory or `-` for the CSV on stdout.
    #[arg(long, default_value = "-")]
    pub out: String,
    #[command(flatten)]
    pub config: ConfigArgs,
}

/// Failure classes mapped onto exit codes.
#[derive(Debug)]
pub enum Failure {
    Usage(String),
    Data(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Parse { .. } => Failure::Usage(e.to_string()),
            e => Failure::Data(e),
        }
    }
}

type Outcome = std::result::Result<(), Failure>;

/// Parses `args` (including the program name), runs the command and returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = e.print();
                return 0;
            }
            let _ = e.print();
            print_subcommand_help(&args);
            return 1;
        }
    };
    let subcommand = args.get(1).cloned();
    match dispatch(cli.command) {
        Ok(()) => 0,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            print_subcommand_help(subcommand.as_slice());
            1
        }
        Err(Failure::Data(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

fn print_subcommand_help(args: &[OsString]) {
    let mut cmd = Cli::command();
    let name = args.iter().skip(1).find_map(|a| a.to_str()).unwrap_or("");
    let help = match cmd.find_subcommand_mut(name) {
        Some(sub) => sub.render_help(),
        None => cmd.render_help(),
    };
    eprintln!("\n{help}");
}

fn dispatch(command: Command) -> Outcome {
    match command {
        Command::Train(a) => cmd_train(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Sample(a) => cmd_sample(a),
        Command::Interpolate(a) => cmd_interpolate(a),
        Command::Cluster(a) => cmd_cluster(a),
        Command::Estimate(a) => cmd_estimate(a),
        Command::Capacity(a) => cmd_capacity(a),
        Command::Shrink(a) => cmd_shrink(a),
    }
}

/// Writes to a file, or to stdout for `-`.
fn write_out(target: &str, content: &str) -> Outcome {
    if target == "-" {
        let mut out = std::io::stdout().lock();
        out.write_all(content.as_bytes()).map_err(|e| Failure::Data(e.into()))?;
        return Ok(());
    }
    fs::write(target, content).map_err(|e| Failure::Data(e.into()))
}

fn read_lines(path: &Path) -> std::result::Result<Vec<String>, Failure> {
    let text = fs::read_to_string(path).map_err(|e| Failure::Data(e.into()))?;
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(String::from)
        .collect())
}

fn load_model(path: &Path) -> std::result::Result<Checkpoint, Failure> {
    load_checkpoint(path).map_err(Failure::Data)
}

fn run_config(args: &ConfigArgs) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = match &args.config {
        Some(p) => RunConfig::load(p).map_err(|e| match e {
            Error::Io(_) => Failure::Data(e),
            e => Failure::from(e),
        })?,
        None => RunConfig::default(),
    };
    cfg.set_pairs(&args.overrides)?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir).map_err(|e| Failure::Data(e.into()))
}

fn cmd_train(a: TrainArgs) -> Outcome {
    let mut cfg = run_config(&a.config)?;
    cfg.set("seed", a.seed)?;
    if let Some(c) = &a.corpus {
        cfg.set("corpus", c.display())?;
    }
    if let Some(o) = &a.out {
        cfg.set("out", o.display())?;
    }
    let out = cfg.path("out")?;
    if out.as_os_str() == "-" {
        return Err(Failure::Usage(
            "train writes a directory; `--out -` is not supported".into(),
        ));
    }
    let train_cfg = cfg.train_config()?;
    let shape = cfg.model_shape()?;
    let corpus = load_corpus(&cfg.path("corpus")?).map_err(Failure::Data)?;
    let split = split_train_test(&corpus, train_cfg.holdout)?;
    let vocab = build_vocabulary(&corpus, cfg.require("vocab_cap")?)?;
    let model_cfg = shape.config(vocab.len(), corpus.num_languages());
    create_dir(&out)?;
    write_out(&path_str(&out.join("effective-config.txt")), &cfg.render())?;
    match train(&corpus, &split, &vocab, &model_cfg, &train_cfg) {
        Ok(outcome) => {
            save_checkpoint(&outcome.checkpoint, &out.join("model.ckpt"))?;
            write_out(&path_str(&out.join("metrics.csv")), &outcome.log.to_csv())?;
            eprintln!(
                "trained {} steps ({:?}); best held-out {:.4} bits/char at step {}",
                outcome.final_step,
                outcome.stop,
                outcome
                    .checkpoint
                    .history
                    .iter()
                    .map(|h| h.1)
                    .fold(f64::INFINITY, f64::min),
                outcome.checkpoint.step
            );
            Ok(())
        }
        Err(Error::Diverged { step, last_good }) => {
            save_checkpoint(&last_good, &out.join("last-good.ckpt"))?;
            Err(Failure::Data(Error::Diverged { step, last_good }))
        }
        Err(e) => Err(e.into()),
    }
}

fn path_str(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

fn cmd_eval(a: EvalArgs) -> Outcome {
    let ckpt = load_model(&a.model)?;
    let corpus = load_corpus(&a.corpus).map_err(Failure::Data)?;
    let split = split_train_test(&corpus, a.holdout.unwrap_or(ckpt.holdout))?;
    let langs = if a.languages.is_empty() {
        ckpt.languages
            .iter()
            .filter(|l| corpus.contains_language(l))
            .cloned()
            .collect()
    } else {
        a.languages.clone()
    };
    let report = evaluate(&ckpt, &corpus, &split, &langs).map_err(Failure::Data)?;
    write_out(&a.out, &report.to_csv())
}

fn cmd_sample(a: SampleArgs) -> Outcome {
    let ckpt = load_model(&a.model)?;
    let model: Model<f64> = ckpt.model.cast();
    let mut lang = ckpt.language_vector(&a.lang).map_err(Failure::Data)?.cast();
    if let Some(to) = &a.to {
        if !(0.0..=1.0).contains(&a.alpha) {
            return Err(Failure::Usage(format!("alpha {} outside [0, 1]", a.alpha)));
        }
        let other = ckpt.language_vector(to).map_err(Failure::Data)?.cast();
        lang = interpolate(&lang, &other, a.alpha)?;
    }
    let mut text = String::new();
    for i in 0..a.count {
        let cfg = SamplerConfig {
            temperature: a.temperature,
            max_len: a.max_len,
            seed: a.seed.wrapping_add(i as u64),
        };
        let g = generate(&model, &ckpt.vocab, &lang, &cfg)?;
        text.push_str(&g.text);
        text.push('\n');
    }
    write_out(&a.out, &text)
}

fn cmd_interpolate(a: InterpolateArgs) -> Outcome {
    let grid = parse_grid(&a.grid)?;
    let ckpt = load_model(&a.model)?;
    let texts = read_lines(&a.test)?;
    let rows = interpolation_curve(&ckpt, &a.from, &a.to, &texts, &grid).map_err(|e| match e {
        Error::Config(_) => Failure::Data(e),
        e => e.into(),
    })?;
    write_out(&a.out, &curve_csv(&rows))
}

fn cmd_cluster(a: ClusterArgs) -> Outcome {
    let metric: Metric = a.metric.parse()?;
    let linkage: Linkage = a.linkage.parse()?;
    if a.format != "newick" && a.format != "json" {
        return Err(Failure::Usage(format!("unknown format `{}` (newick, json)", a.format)));
    }
    let ckpt = load_model(&a.model)?;
    let vectors = language_vectors(&ckpt)?;
    let tree = cluster(&vectors, metric, linkage).map_err(Failure::Data)?;
    let text = if a.format == "newick" {
        tree.to_newick()
    } else {
        tree.to_json()
    };
    write_out(&a.out, &format!("{text}\n"))
}

fn cmd_estimate(a: EstimateArgs) -> Outcome {
    let ckpt = load_model(&a.model)?;
    let mut sentences = read_lines(&a.sentences)?;
    sentences.truncate(a.budget);
    let init = match a.init.as_str() {
        "nearest" => EstimationInit::Nearest,
        code => EstimationInit::Language(code.to_string()),
    };
    let cfg = EstimationConfig {
        steps: a.steps,
        learning_rate: a.lr,
        init,
        ..Default::default()
    };
    let est = estimate_vector(&ckpt, &sentences, &cfg).map_err(|e| match e {
        Error::Config(_) => Failure::Data(e),
        e => e.into(),
    })?;
    let mut out = String::new();
    if let Some(code) = &est.init_language {
        out.push_str(&format!("init = {code}\n"));
    }
    out.push_str(&format!(
        "optimize_sentences = {}\nheldout_sentences = {}\nbefore_bits_per_char = {}\nafter_bits_per_char = {}\nbest_step = {}\n",
        est.optimize_sentences, est.heldout_sentences, est.before_bits_per_char, est.after_bits_per_char, est.best_step
    ));
    for (k, seg) in est.vector.segments().iter().enumerate() {
        let vals: Vec<String> = seg.iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&format!("segment.{k} = {}\n", vals.join(" ")));
    }
    write_out(&a.out, &out)
}

/// Output directory handling shared by the experiment commands: `-` sends the
/// CSV to stdout, anything else is a directory that also receives the config.
fn experiment_out(out: &str, cfg: &RunConfig, file: &str, csv: &str) -> Outcome {
    if out == "-" {
        return write_out("-", csv);
    }
    let dir = PathBuf::from(out);
    create_dir(&dir)?;
    write_out(&path_str(&dir.join("effective-config.txt")), &cfg.render())?;
    write_out(&path_str(&dir.join(file)), csv)
}

fn experiment_config(
    args: &ConfigArgs,
    corpus: &Option<PathBuf>,
    seed: u64,
) -> std::result::Result<RunConfig, Failure> {
    let mut cfg = run_config(args)?;
    cfg.set("seed", seed)?;
    if let Some(c) = corpus {
        cfg.set("corpus", c.display())?;
    }
    Ok(cfg)
}

fn cmd_capacity(a: CapacityArgs) -> Outcome {
    let cfg = experiment_config(&a.config, &a.corpus, a.seed)?;
    let corpus = load_corpus(&cfg.path("corpus")?).map_err(Failure::Data)?;
    let plan = CapacityPlan {
        order: if a.order.is_empty() {
            LanguageOrder::Random { seed: a.seed }
        } else {
            LanguageOrder::Given(a.order.clone())
        },
        schedule: a.schedule.clone(),
        tracked: a.tracked.clone(),
        shape: cfg.model_shape()?,
        train: cfg.train_config()?,
        vocab_cap: cfg.require("vocab_cap")?,
    };
    plan.validate(&corpus)?;
    match capacity_experiment(&corpus, &plan) {
        Ok(rows) => experiment_out(&a.out, &cfg, "capacity.csv", &capacity_csv(&rows)),
        Err(partial) => {
            experiment_out(&a.out, &cfg, "capacity.csv", &capacity_csv(&partial.completed))?;
            Err(partial.error.into())
        }
    }
}

fn cmd_shrink(a: ShrinkArgs) -> Outcome {
    let cfg = experiment_config(&a.config, &a.corpus, a.seed)?;
    let corpus = load_corpus(&cfg.path("corpus")?).map_err(Failure::Data)?;
    let plan = ShrinkPlan {
        language: a.language.clone(),
        base_hidden: a.base_hidden,
        num_sizes: a.sizes,
        shape: cfg.model_shape()?,
        train: cfg.train_config()?,
        vocab_cap: cfg.require("vocab_cap")?,
    };
    plan.sizes()?;
    match shrink_experiment(&corpus, &plan) {
        Ok(rows) => experiment_out(&a.out, &cfg, "shrink.csv", &shrink_csv(&rows)),
        Err(partial) => {
            experiment_out(&a.out, &cfg, "shrink.csv", &shrink_csv(&partial.completed))?;
            Err(partial.error.into())
        }
    }
}
