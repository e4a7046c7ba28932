//! `vstruct`: train, evaluate and cross-validate voted sequence labelers,
//! inject label noise and report complexity estimates and margin bounds.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use vstruct_core::bounds::{bound_report, BoundSettings};
use vstruct_core::complexity::{complexity_report, FactorSample, WeightNorm};
use vstruct_core::data::{inject_noise, load_corpus, parse_with_alphabet, Corpus, CorpusFormat};
use vstruct_core::features::{FeatureTemplate, PenaltyFormula};
use vstruct_core::losses::LossFn;
use vstruct_core::model::{load_model, save_model, ModelKind};
use vstruct_core::optim::TrainConfig;
use vstruct_core::protocol::{self, CvConfig, Metrics, NoiseSpec, DEFAULT_GRID, DEFAULT_TEMPLATES};
use vstruct_core::synthetic::{self, SyntheticConfig};
use vstruct_core::Error;

#[derive(Parser)]
#[command(name = "vstruct", version, about = "Voted CRF and voted structured boosting for sequence labeling")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one model and write it with its feature bank and training log.
    Train(TrainArgs),
    /// Label a corpus with a trained model.
    Predict(PredictArgs),
    /// Token and sentence error of a model on a labeled corpus.
    Eval(PredictArgs),
    /// Five-fold cross-validation with a (lambda, beta) grid search.
    Cv(CvArgs),
    /// Flip labels of frequent tokens at random.
    Noise(NoiseArgs),
    /// Monte-Carlo factor-graph complexity against its closed-form bounds.
    Complexity(ComplexityArgs),
    /// Margin bounds of a trained model on held-out data.
    Bound(BoundArgs),
    /// Write a synthetic corpus sampled from a second-order label chain.
    Synth(SynthArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Conllu,
    TwoColumn,
}

impl From<Format> for CorpusFormat {
    fn from(f: Format) -> Self {
        match f {
            Format::Conllu => CorpusFormat::Conllu,
            Format::TwoColumn => CorpusFormat::TwoColumn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Vcrf,
    Structboost,
}

#[derive(Clone, Copy, ValueEnum)]
enum Loss {
    Hamming,
    HammingUnnormalized,
}

#[derive(Clone, Copy, ValueEnum)]
enum Penalty {
    Rademacher,
    FactorCount,
}

#[derive(Clone, Copy, ValueEnum)]
enum Norm {
    L1,
    L2,
}

impl From<Norm> for WeightNorm {
    fn from(n: Norm) -> Self {
        match n {
            Norm::L1 => WeightNorm::L1,
            Norm::L2 => WeightNorm::L2,
        }
    }
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long, value_enum, default_value = "conllu")]
    format: Format,
}

#[derive(Args)]
struct ModelArgs {
    /// Feature families as `k1,k2,k3;k1,k2,k3;...`.
    #[arg(long, default_value = DEFAULT_TEMPLATES)]
    templates: String,
    /// Markov order of the label chain.
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, value_enum, default_value = "vcrf")]
    kind: Kind,
    #[arg(long, value_enum, default_value = "hamming")]
    loss: Loss,
    #[arg(long, value_enum, default_value = "rademacher")]
    penalty: Penalty,
    #[arg(long, default_value_t = 50)]
    epochs: usize,
    #[arg(long, default_value_t = 0.5)]
    eta0: f64,
    #[arg(long, default_value_t = 1)]
    batch_size: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl ModelArgs {
    fn templates(&self) -> Result<Vec<FeatureTemplate>> {
        let t = FeatureTemplate::parse_list(&self.templates)?;
        if t.is_empty() {
            return Err(Error::Domain("at least one feature template is required".into()).into());
        }
        Ok(t)
    }

    fn kind(&self) -> ModelKind {
        match self.kind {
            Kind::Vcrf => ModelKind::Vcrf,
            Kind::Structboost => ModelKind::StructBoost,
        }
    }

    fn config(&self, lambda: f64, beta: f64) -> Result<TrainConfig> {
        let mut cfg = TrainConfig::new(lambda, beta, self.order);
        cfg.loss = match self.loss {
            Loss::Hamming => LossFn::hamming(),
            Loss::HammingUnnormalized => LossFn::hamming_unnormalized(),
        };
        cfg.penalty_formula = match self.penalty {
            Penalty::Rademacher => PenaltyFormula::Rademacher,
            Penalty::FactorCount => PenaltyFormula::FactorCount,
        };
        cfg.optim.epochs = self.epochs;
        cfg.optim.eta0 = self.eta0;
        cfg.optim.batch_size = self.batch_size;
        cfg.optim.seed = self.seed;
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long, default_value_t = 0.0)]
    beta: f64,
    /// Model file; the bank goes to `<out>.bank`, the log to `<out>.log.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Output file (predict) or directory for metrics.tsv and metrics.json (eval).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CvArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID)]
    lambda_grid: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_GRID)]
    beta_grid: Vec<f64>,
    /// Label noise injected into the training folds only.
    #[arg(long, default_value_t = 0.0)]
    noise_rate: f64,
    #[arg(long, default_value_t = 5)]
    min_count: usize,
    /// Directory for cv.tsv and cv.json.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct NoiseArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 0.2)]
    noise_rate: f64,
    #[arg(long, default_value_t = 5)]
    min_count: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Noisy corpus, written in the input format.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ComplexityArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value = DEFAULT_TEMPLATES)]
    templates: String,
    #[arg(long, default_value_t = 2)]
    order: usize,
    #[arg(long, value_enum, default_value = "l1")]
    norm: Norm,
    /// Radius of the weight ball.
    #[arg(long, default_value_t = 1.0)]
    lambda_cap: f64,
    #[arg(long, default_value_t = 200)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[arg(long, default_value_t = 1.0)]
    rho: f64,
    #[arg(long, default_value_t = 0.05)]
    delta: f64,
    #[arg(long, value_enum, default_value = "l1")]
    norm: Norm,
    /// Radius of the weight ball; defaults to the model's own norm.
    #[arg(long)]
    lambda_cap: Option<f64>,
    #[arg(long, default_value_t = 200)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// JSON report.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 2000)]
    sentences: usize,
    #[arg(long, default_value_t = 8)]
    labels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "two-column")]
    format: Format,
    #[arg(long)]
    out: PathBuf,
}

/// A problem with the input data rather than with the invocation.
#[derive(Debug)]
struct DataError(String);

impl std::fmt::Display for DataError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for DataError {}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn json(value: &impl serde::Serialize) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    Ok(s)
}

fn check_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() || grid.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::Domain(format!("{name} must be a nonempty list of finite nonnegative values")).into());
    }
    Ok(())
}

fn load(args: &DataArgs) -> Result<Corpus> {
    Ok(load_corpus(&args.data, args.format.into())?)
}

fn train(args: TrainArgs) -> Result<()> {
    let corpus = load(&args.data)?;
    let cfg = args.model.config(args.lambda, args.beta)?;
    let (model, log) = protocol::fit(args.model.kind(), &args.model.templates()?, &corpus.sentences, &corpus.alphabet, &cfg)?;
    save_model(&args.out, &model)?;
    write_file(&args.out.with_extension("log.json"), &json(&log)?)?;
    println!("objective\t{}", log.epoch_objectives.last().copied().unwrap_or(f64::NAN));
    println!("epochs\t{}", log.epoch_objectives.len());
    println!("converged\t{}", log.converged);
    println!("dimension\t{}", model.weights.len());
    println!("nonzero\t{}", log.nonzero);
    Ok(())
}

fn labeled_for_model(args: &PredictArgs) -> Result<(vstruct_core::model::Model, Corpus)> {
    let model = load_model(&args.model)?;
    let text = fs::read_to_string(&args.data.data).map_err(|e| Error::Io { path: args.data.data.clone(), source: e })?;
    let corpus = parse_with_alphabet(&text, args.data.format.into(), &args.data.data, model.alphabet.clone())?;
    if corpus.alphabet.len() != model.alphabet.len() {
        let unknown = &corpus.alphabet.labels()[model.alphabet.len()..];
        bail!(DataError(format!("labels {unknown:?} are not in the model's alphabet")));
    }
    Ok((model, corpus))
}

fn predict(args: PredictArgs) -> Result<()> {
    let (model, corpus) = labeled_for_model(&args)?;
    let predicted = protocol::predict_all(&model, &corpus.sentences)?;
    let relabeled = corpus
        .sentences
        .iter()
        .zip(predicted)
        .map(|(s, y)| vstruct_core::types::LabeledSequence::new(s.tokens().clone(), y, model.alphabet.len()))
        .collect::<Result<Vec<_>, _>>()?;
    let text = Corpus::new(relabeled, model.alphabet.clone())?.to_text(args.data.format.into());
    match &args.out {
        Some(path) => write_file(path, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn eval(args: PredictArgs) -> Result<()> {
    let (model, corpus) = labeled_for_model(&args)?;
    let metrics = protocol::evaluate(&model, &corpus.sentences)?;
    let tsv = format!("{}\n{}\n", Metrics::tsv_header(), metrics.tsv_row());
    print!("{tsv}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        write_file(&dir.join("metrics.tsv"), &tsv)?;
        write_file(&dir.join("metrics.json"), &json(&metrics.to_json())?)?;
    }
    Ok(())
}

fn cv(args: CvArgs) -> Result<()> {
    check_grid("--lambda-grid", &args.lambda_grid)?;
    check_grid("--beta-grid", &args.beta_grid)?;
    let corpus = load(&args.data)?;
    let cfg = CvConfig {
        kind: args.model.kind(),
        templates: args.model.templates()?,
        base: args.model.config(0.0, 0.0)?,
        lambdas: args.lambda_grid,
        betas: args.beta_grid,
        seed: args.model.seed,
        train_noise: (args.noise_rate > 0.0).then_some(NoiseSpec { rate: args.noise_rate, min_count: args.min_count }),
    };
    let report = protocol::cross_validate(&corpus, &cfg)?;
    let tsv = report.to_tsv();
    print!("{tsv}");
    if let Some(dir) = &args.out {
        fs::create_dir_all(dir)?;
        write_file(&dir.join("cv.tsv"), &tsv)?;
        write_file(&dir.join("cv.json"), &json(&report)?)?;
    }
    Ok(())
}

fn noise(args: NoiseArgs) -> Result<()> {
    let corpus = load(&args.data)?;
    let (noisy, report) = inject_noise(&corpus, args.noise_rate, args.min_count, args.seed)?;
    noisy.write_to(&args.out, args.data.format.into())?;
    println!("{}", serde_json::to_string(&report)?);
    Ok(())
}

fn complexity(args: ComplexityArgs) -> Result<()> {
    let corpus = load(&args.data)?;
    let templates = FeatureTemplate::parse_list(&args.templates)?;
    let r = corpus.alphabet.len();
    let (bank, _) = protocol::build_bank(&templates, &corpus.sentences, r)?;
    let inputs: Vec<_> = corpus.sentences.iter().map(|s| s.tokens()).collect();
    let sample = FactorSample::new(&inputs, &bank, r, args.order)?;
    let report = complexity_report(&sample, args.norm.into(), args.lambda_cap, args.draws, args.seed)?;
    print!("{}", report.to_key_value());
    if let Some(path) = &args.out {
        write_file(path, &json(&report)?)?;
    }
    Ok(())
}

fn bound(args: BoundArgs) -> Result<()> {
    let predict_args =
        PredictArgs { model: args.model.clone(), data: DataArgs { data: args.data.data.clone(), format: args.data.format }, out: None };
    let (model, corpus) = labeled_for_model(&predict_args)?;
    let settings = BoundSettings {
        rho: args.rho,
        delta: args.delta,
        norm: args.norm.into(),
        lambda_cap: args.lambda_cap,
        draws: args.draws,
        seed: args.seed,
    };
    let report = bound_report(&model, &corpus.sentences, &settings)?;
    let text = json(&report)?;
    print!("{text}");
    if let Some(path) = &args.out {
        write_file(path, &text)?;
    }
    Ok(())
}

fn synth(args: SynthArgs) -> Result<()> {
    let corpus = synthetic::generate(&SyntheticConfig {
        sentences: args.sentences,
        labels: args.labels,
        seed: args.seed,
        ..SyntheticConfig::default()
    })?;
    corpus.write_to(&args.out, args.format.into())?;
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<DataError>().is_some() {
        return 3;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Domain(_) | Error::UnsupportedLoss(_)) => 2,
        Some(Error::Numeric(_)) => 4,
        Some(Error::Parse { .. } | Error::Format(_) | Error::Io { .. } | Error::Json(_)) => 3,
        _ if err.downcast_ref::<std::io::Error>().is_some() => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Predict(a) => predict(a),
        Command::Eval(a) => eval(a),
        Command::Cv(a) => cv(a),
        Command::Noise(a) => noise(a),
        Command::Complexity(a) => complexity(a),
        Command::Bound(a) => bound(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}
