//! Training from a corpus, error metrics and the five-fold model-selection
//! protocol.
//!
//! Each run builds its feature bank and penalty statistics from the training
//! folds only, trains one model per `(λ, β)` grid cell, keeps the cell with
//! the lowest validation token error and only then touches the test fold.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complexity::family_penalty_vector;
use crate::data::{inject_noise, make_folds, Corpus, CorpusStats, FoldPlan, NUM_FOLDS};
use crate::error::{Error, Result};
use crate::features::{FeatureBank, FeatureTemplate, PenaltyStats};
use crate::model::{Model, ModelKind};
use crate::optim::{TrainConfig, TrainLog, TrainingSet};
use crate::structboost::train_structboost;
use crate::types::{Label, LabelAlphabet, LabeledSequence};
use crate::vcrf::{self, train_vcrf};
use crate::weights::WeightVector;

/// `{1, 0.5, 1e-1, ..., 1e-5, 0}`.
pub const DEFAULT_GRID: [f64; 8] = [1.0, 0.5, 1e-1, 1e-2, 1e-3, 1e-4, 1e-5, 0.0];

/// Word, label, suffix/prefix and mixed families up to label order 2.
pub const DEFAULT_TEMPLATES: &str = "0,1,0;1,1,0;0,2,0;0,1,1;0,1,2;0,1,3;2,1,0;1,2,0;3,1,0";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Metrics {
    pub tokens: usize,
    pub token_errors: usize,
    pub sentences: usize,
    pub sentence_errors: usize,
}

impl Metrics {
    pub fn token_error(&self) -> f64 {
        ratio(self.token_errors, self.tokens)
    }

    pub fn sentence_error(&self) -> f64 {
        ratio(self.sentence_errors, self.sentences)
    }

    pub fn tsv_header() -> &'static str {
        "tokens\ttoken_errors\ttoken_error\tsentences\tsentence_errors\tsentence_error"
    }

    pub fn tsv_row(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}\t{}",
            self.tokens,
            self.token_errors,
            self.token_error(),
            self.sentences,
            self.sentence_errors,
            self.sentence_error()
        )
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::json!({
            "tokens": self.tokens,
            "token_errors": self.token_errors,
            "token_error": self.token_error(),
            "sentences": self.sentences,
            "sentence_errors": self.sentence_errors,
            "sentence_error": self.sentence_error(),
        })
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

pub fn score(gold: &[LabeledSequence], predicted: &[Vec<Label>]) -> Result<Metrics> {
    if gold.len() != predicted.len() {
        return Err(Error::domain(format!("{} predictions for {} sentences", predicted.len(), gold.len())));
    }
    let mut m = Metrics::default();
    for (g, p) in gold.iter().zip(predicted) {
        if g.len() != p.len() {
            return Err(Error::domain(format!("prediction of length {} for a sentence of length {}", p.len(), g.len())));
        }
        let wrong = g.labels().iter().zip(p).filter(|(a, b)| a != b).count();
        m.tokens += g.len();
        m.token_errors += wrong;
        m.sentences += 1;
        m.sentence_errors += usize::from(wrong > 0);
    }
    Ok(m)
}

pub fn predict_all(model: &Model, sentences: &[LabeledSequence]) -> Result<Vec<Vec<Label>>> {
    sentences.par_iter().map(|s| model.predict(s.tokens())).collect()
}

pub fn evaluate(model: &Model, sentences: &[LabeledSequence]) -> Result<Metrics> {
    score(sentences, &predict_all(model, sentences)?)
}

/// Bank grown on the gold windows of `train`, with the penalty statistics
/// of `train`.
pub fn build_bank(templates: &[FeatureTemplate], train: &[LabeledSequence], alphabet_size: usize) -> Result<(FeatureBank, PenaltyStats)> {
    let stats = CorpusStats::compute(train, alphabet_size).penalty_stats();
    let mut bank = FeatureBank::with_stats(templates.to_vec(), &stats)?;
    bank.grow_from(train)?;
    bank.freeze();
    Ok((bank, stats))
}

/// Per-family penalties. Features are indicators, so `r_inf = 1`.
pub fn penalties_for(bank: &FeatureBank, stats: &PenaltyStats, cfg: &TrainConfig) -> Result<Vec<f64>> {
    family_penalty_vector(bank, stats, cfg.penalty_formula, 1.0)
}

fn train_kind(kind: ModelKind, set: &TrainingSet<'_>, cfg: &TrainConfig) -> Result<(WeightVector, TrainLog)> {
    match kind {
        ModelKind::Vcrf => train_vcrf(set, cfg),
        ModelKind::StructBoost => train_structboost(set, cfg),
    }
}

pub fn fit(
    kind: ModelKind,
    templates: &[FeatureTemplate],
    train: &[LabeledSequence],
    alphabet: &LabelAlphabet,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    let (bank, stats) = build_bank(templates, train, alphabet.len())?;
    let penalties = penalties_for(&bank, &stats, cfg)?;
    let set = TrainingSet::new(&bank, train, alphabet.len(), cfg.markov_order, penalties.clone())?;
    let (weights, log) = train_kind(kind, &set, cfg)?;
    drop(set);
    Ok((Model { kind, config: cfg.clone(), alphabet: alphabet.clone(), bank, penalties, weights }, log))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub kind: ModelKind,
    pub templates: Vec<FeatureTemplate>,
    /// `λ`, `β` and the SGD seed are overwritten per cell and run.
    pub base: TrainConfig,
    pub lambdas: Vec<f64>,
    pub betas: Vec<f64>,
    pub seed: u64,
    /// Label noise applied to the training folds only.
    pub train_noise: Option<NoiseSpec>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub rate: f64,
    pub min_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellResult {
    pub lambda: f64,
    pub beta: f64,
    pub validation: Metrics,
    /// Test-fold metrics; never consulted during selection.
    pub test: Metrics,
    pub nonzero: usize,
    pub epochs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub run: usize,
    pub validation_fold: usize,
    pub test_fold: usize,
    pub train_sentences: usize,
    pub dimension: usize,
    pub grid: Vec<CellResult>,
    /// Index into `grid`, chosen on validation token error alone.
    pub selected: usize,
    pub test: Metrics,
}

impl RunResult {
    pub fn selected_cell(&self) -> &CellResult {
        &self.grid[self.selected]
    }

    /// The cell trained with `(lambda, beta)`, if it was on the grid.
    pub fn cell(&self, lambda: f64, beta: f64) -> Option<&CellResult> {
        self.grid.iter().find(|c| c.lambda == lambda && c.beta == beta)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub std: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        if values.is_empty() {
            return Self { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 { 0.0 } else { (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt() };
        Self { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvReport {
    pub kind: ModelKind,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
    pub runs: Vec<RunResult>,
    pub token_error: Summary,
    pub sentence_error: Summary,
    pub nonzero: Summary,
}

/// Model selection restricted to part of the grid, e.g. `λ = 0` for the
/// L1-CRF baseline of a VCRF grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Restricted {
    pub selected: Vec<CellResult>,
    pub token_error: Summary,
    pub sentence_error: Summary,
    pub nonzero: Summary,
}

impl CvReport {
    pub fn restricted(&self, admissible: impl Fn(&CellResult) -> bool) -> Option<Restricted> {
        let selected =
            self.runs.iter().map(|r| select_on_validation(&r.grid, &admissible).map(|k| r.grid[k].clone())).collect::<Option<Vec<_>>>()?;
        let summarize = |f: &dyn Fn(&CellResult) -> f64| Summary::of(&selected.iter().map(f).collect::<Vec<_>>());
        Some(Restricted {
            token_error: summarize(&|c| c.test.token_error()),
            sentence_error: summarize(&|c| c.test.sentence_error()),
            nonzero: summarize(&|c| c.nonzero as f64),
            selected,
        })
    }

    pub fn to_tsv(&self) -> String {
        let mut out = String::from("run\tlambda\tbeta\tvalidation_token_error\tnonzero\t");
        out.push_str(Metrics::tsv_header());
        out.push('\n');
        for r in &self.runs {
            let c = r.selected_cell();
            let _ =
                writeln!(out, "{}\t{}\t{}\t{}\t{}\t{}", r.run, c.lambda, c.beta, c.validation.token_error(), c.nonzero, r.test.tsv_row());
        }
        let _ = writeln!(
            out,
            "# token_error {:.6} ± {:.6}; sentence_error {:.6} ± {:.6}; nonzero {:.1} ± {:.1}",
            self.token_error.mean,
            self.token_error.std,
            self.sentence_error.mean,
            self.sentence_error.std,
            self.nonzero.mean,
            self.nonzero.std
        );
        out
    }
}

pub fn cross_validate(corpus: &Corpus, cfg: &CvConfig) -> Result<CvReport> {
    if cfg.lambdas.is_empty() || cfg.betas.is_empty() {
        return Err(Error::domain("hyperparameter grids must be nonempty"));
    }
    let plan = make_folds(corpus.len(), cfg.seed)?;
    let noisy = match cfg.train_noise {
        Some(n) => Some(inject_noise(corpus, n.rate, n.min_count, cfg.seed)?.0),
        None => None,
    };
    let train_source = noisy.as_ref().unwrap_or(corpus);
    let runs = (0..NUM_FOLDS).map(|run| cv_run(corpus, train_source, &plan, run, cfg)).collect::<Result<Vec<_>>>()?;
    let token: Vec<f64> = runs.iter().map(|r| r.test.token_error()).collect();
    let sentence: Vec<f64> = runs.iter().map(|r| r.test.sentence_error()).collect();
    let nonzero: Vec<f64> = runs.iter().map(|r| r.selected_cell().nonzero as f64).collect();
    Ok(CvReport {
        kind: cfg.kind,
        seed: cfg.seed,
        folds: plan.folds().to_vec(),
        runs,
        token_error: Summary::of(&token),
        sentence_error: Summary::of(&sentence),
        nonzero: Summary::of(&nonzero),
    })
}

fn cv_run(corpus: &Corpus, train_source: &Corpus, plan: &FoldPlan, run: usize, cfg: &CvConfig) -> Result<RunResult> {
    let roles = plan.run(run);
    let train = train_source.subset(&roles.train);
    let validation = corpus.subset(&roles.validation);
    let r = corpus.alphabet.len();
    let p = cfg.base.markov_order;
    let (bank, stats) = build_bank(&cfg.templates, &train, r)?;
    let penalties = penalties_for(&bank, &stats, &cfg.base)?;
    let set = TrainingSet::new(&bank, &train, r, p, penalties)?;

    let cells: Vec<(f64, f64)> = cfg.lambdas.iter().flat_map(|&l| cfg.betas.iter().map(move |&b| (l, b))).collect();
    let test_set = corpus.subset(&roles.test);
    let label = |w: &WeightVector, data: &[LabeledSequence]| -> Result<Vec<Vec<Label>>> {
        data.iter().map(|s| vcrf::predict(w, s.tokens(), &bank, r, p)).collect()
    };
    let grid = cells
        .par_iter()
        .map(|&(lambda, beta)| {
            let mut c = cfg.base.clone();
            c.lambda = lambda;
            c.beta = beta;
            c.optim.seed = cfg.seed;
            let (w, log) = train_kind(cfg.kind, &set, &c)?;
            Ok(CellResult {
                lambda,
                beta,
                validation: score(&validation, &label(&w, &validation)?)?,
                test: score(&test_set, &label(&w, &test_set)?)?,
                nonzero: log.nonzero,
                epochs: log.epoch_objectives.len(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let selected = select_on_validation(&grid, |_| true).expect("nonempty grid");
    Ok(RunResult {
        run,
        validation_fold: FoldPlan::validation_fold(run),
        test_fold: FoldPlan::test_fold(run),
        train_sentences: train.len(),
        dimension: bank.dimension(),
        test: grid[selected].test,
        grid,
        selected,
    })
}

/// Index of the admissible cell with the fewest validation token errors;
/// the first in grid order wins ties.
fn select_on_validation(grid: &[CellResult], admissible: impl Fn(&CellResult) -> bool) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (k, cell) in grid.iter().enumerate() {
        if admissible(cell) && best.map_or(true, |b| cell.validation.token_errors < grid[b].validation.token_errors) {
            best = Some(k);
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{parse_corpus, CorpusFormat};
    use crate::types::TokenSequence;

    fn sentence(tokens: &[&str], labels: Vec<Label>, r: usize) -> LabeledSequence {
        LabeledSequence::new(TokenSequence::from_strs(tokens).unwrap(), labels, r).unwrap()
    }

    #[test]
    fn metrics_cases() {
        let gold = vec![sentence(&["a"; 5], vec![0; 5], 2), sentence(&["b"; 5], vec![1; 5], 2)];
        let perfect = score(&gold, &[vec![0; 5], vec![1; 5]]).unwrap();
        assert_eq!((perfect.token_error(), perfect.sentence_error()), (0.0, 0.0));
        let one_off = score(&gold, &[vec![0, 0, 1, 0, 0], vec![1; 5]]).unwrap();
        assert_eq!(one_off.token_error(), 0.1);
        assert_eq!(one_off.sentence_error(), 0.5);
        assert!(score(&gold, &[vec![0; 5]]).is_err());
    }

    #[test]
    fn sentence_error_dominates_token_error_over_max_length() {
        let gold = vec![sentence(&["a"; 3], vec![0; 3], 2), sentence(&["b"; 7], vec![1; 7], 2)];
        for mask in 0u32..1024 {
            let flip = |k: usize| (mask >> k) & 1 == 1;
            let p0: Vec<Label> = (0..3).map(|k| usize::from(flip(k))).collect();
            let p1: Vec<Label> = (0..7).map(|k| usize::from(!flip(k + 3))).collect();
            let m = score(&gold, &[p0, p1]).unwrap();
            assert!(m.sentence_error() + 1e-15 >= m.token_error() * m.tokens as f64 / (7.0 * m.sentences as f64));
        }
    }

    #[test]
    fn summary_stats() {
        let s = Summary::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-15);
        assert_eq!(Summary::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn separable_corpus_cv_is_perfect_and_deterministic() {
        let mut text = String::new();
        for k in 0..10 {
            let (w1, w2) = if k % 2 == 0 { ("the", "dog") } else { ("a", "cat") };
            text.push_str(&format!("{w1}\tD\n{w2}\tN\nruns\tV\n\n"));
        }
        let corpus = parse_corpus(&text, CorpusFormat::TwoColumn, std::path::Path::new("mem")).unwrap();
        let mut base = TrainConfig::new(0.0, 0.0, 1);
        base.optim.epochs = 10;
        let cfg = CvConfig {
            kind: ModelKind::Vcrf,
            templates: FeatureTemplate::parse_list("1,1,0;0,1,0").unwrap(),
            base,
            lambdas: vec![0.0],
            betas: vec![0.0],
            seed: 4,
            train_noise: None,
        };
        let a = cross_validate(&corpus, &cfg).unwrap();
        assert_eq!(a.token_error.mean, 0.0);
        assert_eq!(a.token_error.std, 0.0);
        assert_eq!(a.runs.len(), 5);
        assert!(a.runs.iter().all(|r| r.grid.len() == 1));
        assert_eq!(a, cross_validate(&corpus, &cfg).unwrap());
    }
}
