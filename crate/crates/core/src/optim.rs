//! Shared training harness: precompiled training sets, the smooth-term
//! interface and proximal stochastic gradient descent with per-family L1
//! soft-thresholding.
//!
//! Untouched coordinates are thresholded lazily. Consecutive soft-thresholds
//! of a coordinate compose into a single one with the summed threshold, so
//! each coordinate only records the cumulative step size at its last update
//! and catches up when it is next touched or at the end of an epoch.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{CompiledSequence, FeatureBank, PenaltyFormula, SparseVec};
use crate::losses::LossFn;
use crate::rng::indexed_substream;
use crate::types::{encode_window, Label, LabeledSequence};
use crate::weights::{column_rates, soft_threshold, vrm_penalty, GradBuf, WeightVector};

/// A frozen bank, the examples compiled against it and the family penalties.
#[derive(Debug)]
pub struct TrainingSet<'a> {
    pub bank: &'a FeatureBank,
    pub data: &'a [LabeledSequence],
    pub alphabet_size: usize,
    pub markov_order: usize,
    compiled: Vec<CompiledSequence>,
    gold: Vec<SparseVec>,
    penalties: Vec<f64>,
}

impl<'a> TrainingSet<'a> {
    pub fn new(
        bank: &'a FeatureBank,
        data: &'a [LabeledSequence],
        alphabet_size: usize,
        markov_order: usize,
        penalties: Vec<f64>,
    ) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::domain("empty training set"));
        }
        if penalties.len() != bank.num_families() {
            return Err(Error::domain(format!("{} penalties for {} families", penalties.len(), bank.num_families())));
        }
        if penalties.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::domain("family penalties must be finite and nonnegative"));
        }
        for seq in data {
            if let Some(&bad) = seq.labels().iter().find(|&&y| y >= alphabet_size) {
                return Err(Error::domain(format!("label {bad} outside alphabet of {alphabet_size}")));
            }
        }
        let compiled = data.par_iter().map(|seq| bank.compile(seq.tokens(), alphabet_size, markov_order)).collect::<Result<Vec<_>>>()?;
        let gold = data.iter().zip(&compiled).map(|(seq, c)| gold_features(c, seq.labels())).collect();
        Ok(Self { bank, data, alphabet_size, markov_order, compiled, gold, penalties })
    }

    /// Same data, zero penalties for every family.
    pub fn unpenalized(bank: &'a FeatureBank, data: &'a [LabeledSequence], alphabet_size: usize, markov_order: usize) -> Result<Self> {
        Self::new(bank, data, alphabet_size, markov_order, vec![0.0; bank.num_families()])
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.bank.dimension()
    }

    pub fn compiled(&self, i: usize) -> &CompiledSequence {
        &self.compiled[i]
    }

    /// `Ψ(x_i, y_i)`.
    pub fn gold(&self, i: usize) -> &SparseVec {
        &self.gold[i]
    }

    pub fn labels(&self, i: usize) -> &[Label] {
        self.data[i].labels()
    }

    pub fn penalties(&self) -> &[f64] {
        &self.penalties
    }
}

/// `Σ_s ψ̃(x, y_{s-p+1..s}, s)` read off a compiled sequence.
pub fn gold_features(seq: &CompiledSequence, y: &[Label]) -> SparseVec {
    let p = seq.markov_order();
    let r = seq.alphabet_size();
    let mut pairs = Vec::new();
    for s in 1..=y.len() {
        let z = encode_window(&y[s.saturating_sub(p)..s], r);
        pairs.extend(seq.columns(s, z).map(|c| (c, 1.0)));
    }
    SparseVec::from_pairs(pairs)
}

/// A per-example smooth loss `F_i(w)`; the data term is `(1/m) Σ_i F_i`.
pub trait SmoothTerm: Sync {
    fn name(&self) -> &'static str;

    /// Returns `F_i(w)` and, if `grad` is given, adds `scale · ∇F_i(w)` to it.
    fn evaluate(&self, set: &TrainingSet<'_>, i: usize, w: &[f64], grad: Option<(&mut GradBuf, f64)>) -> Result<f64>;
}

/// `(1/m) Σ_i F_i(w)`, summed in example order.
pub fn data_term(term: &dyn SmoothTerm, set: &TrainingSet<'_>, w: &[f64]) -> Result<f64> {
    let values = (0..set.len()).into_par_iter().map(|i| term.evaluate(set, i, w, None)).collect::<Result<Vec<f64>>>()?;
    Ok(values.iter().sum::<f64>() / set.len() as f64)
}

/// Data term plus `Σ_k (λ r_k + β) ||w_k||_1`.
pub fn objective(term: &dyn SmoothTerm, set: &TrainingSet<'_>, w: &WeightVector, lambda: f64, beta: f64) -> Result<f64> {
    Ok(data_term(term, set, w.as_slice())? + vrm_penalty(w, set.bank, set.penalties(), lambda, beta))
}

/// `(1/m) ∇F_i(w)`.
pub fn example_gradient(term: &dyn SmoothTerm, set: &TrainingSet<'_>, i: usize, w: &[f64]) -> Result<SparseVec> {
    let mut buf = GradBuf::new(set.dimension());
    term.evaluate(set, i, w, Some((&mut buf, 1.0 / set.len() as f64)))?;
    Ok(buf.take())
}

/// Gradient of the full data term.
pub fn full_gradient(term: &dyn SmoothTerm, set: &TrainingSet<'_>, w: &[f64]) -> Result<SparseVec> {
    let mut buf = GradBuf::new(set.dimension());
    let scale = 1.0 / set.len() as f64;
    for i in 0..set.len() {
        term.evaluate(set, i, w, Some((&mut buf, scale)))?;
    }
    Ok(buf.take())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimConfig {
    /// Maximum passes over the data.
    pub epochs: usize,
    /// Initial step size `η_0`.
    pub eta0: f64,
    /// `T` in `η_t = η_0 / (1 + t / T)`; `None` uses the number of examples.
    pub decay: Option<f64>,
    /// Stop when the relative objective change between epochs drops below this.
    pub tol: f64,
    /// Examples per proximal step; 1 is plain SGD.
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self { epochs: 50, eta0: 0.5, decay: None, tol: 1e-6, batch_size: 1, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    /// VRM coefficient `λ`.
    pub lambda: f64,
    /// Flat L1 coefficient `β`.
    pub beta: f64,
    pub markov_order: usize,
    pub loss: LossFn,
    pub penalty_formula: PenaltyFormula,
    pub optim: OptimConfig,
}

impl TrainConfig {
    pub fn new(lambda: f64, beta: f64, markov_order: usize) -> Self {
        Self {
            lambda,
            beta,
            markov_order,
            loss: LossFn::hamming(),
            penalty_formula: PenaltyFormula::Rademacher,
            optim: OptimConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite() && self.beta >= 0.0 && self.beta.is_finite()) {
            return Err(Error::domain(format!("lambda {} and beta {} must be finite and nonnegative", self.lambda, self.beta)));
        }
        if self.optim.epochs == 0 {
            return Err(Error::domain("epochs must be at least 1"));
        }
        if self.optim.batch_size == 0 {
            return Err(Error::domain("batch size must be at least 1"));
        }
        if !(self.optim.eta0 > 0.0 && self.optim.eta0.is_finite()) {
            return Err(Error::domain("step size must be positive"));
        }
        if self.markov_order == 0 {
            return Err(Error::domain("markov order must be at least 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub objective: String,
    /// Objective after each completed epoch.
    pub epoch_objectives: Vec<f64>,
    pub converged: bool,
    pub nonzero: usize,
    pub nonzero_by_family: Vec<usize>,
}

/// Lazy proximal state over a dense weight vector.
struct ProxState {
    w: Vec<f64>,
    rates: Vec<f64>,
    last: Vec<f64>,
    cumulative: f64,
}

impl ProxState {
    fn catch_up(&mut self, j: usize) {
        let pending = self.cumulative - self.last[j];
        if pending > 0.0 {
            self.w[j] = soft_threshold(self.w[j], self.rates[j] * pending);
        }
        self.last[j] = self.cumulative;
    }

    fn catch_up_sequence(&mut self, seq: &CompiledSequence) {
        for c in seq.all_columns() {
            self.catch_up(c as usize);
        }
    }

    fn step(&mut self, grad: &SparseVec, eta: f64) {
        for (c, _) in grad.iter() {
            self.catch_up(c as usize);
        }
        self.cumulative += eta;
        for (c, g) in grad.iter() {
            let j = c as usize;
            self.w[j] = soft_threshold(self.w[j] - eta * g, self.rates[j] * eta);
            self.last[j] = self.cumulative;
        }
    }

    fn flush(&mut self) {
        for j in 0..self.w.len() {
            self.catch_up(j);
        }
    }
}

/// Proximal SGD from zero on `(1/m) Σ F_i + Σ_k (λ r_k + β) ||w_k||_1`.
pub fn train(term: &dyn SmoothTerm, set: &TrainingSet<'_>, cfg: &TrainConfig) -> Result<(WeightVector, TrainLog)> {
    cfg.validate()?;
    if cfg.markov_order != set.markov_order {
        return Err(Error::domain(format!(
            "config markov order {} differs from training set order {}",
            cfg.markov_order, set.markov_order
        )));
    }
    let m = set.len();
    let n = set.dimension();
    let mut state = ProxState {
        w: vec![0.0; n],
        rates: column_rates(set.bank, set.penalties(), cfg.lambda, cfg.beta),
        last: vec![0.0; n],
        cumulative: 0.0,
    };
    let opt = &cfg.optim;
    let decay = opt.decay.unwrap_or(m as f64).max(1.0);
    let batch = opt.batch_size.min(m);
    let mut order: Vec<usize> = (0..m).collect();
    let mut buf = GradBuf::new(n);
    let mut log = TrainLog {
        objective: term.name().to_string(),
        epoch_objectives: Vec::new(),
        converged: false,
        nonzero: 0,
        nonzero_by_family: Vec::new(),
    };
    let mut step = 0usize;
    let mut previous = f64::NAN;

    for epoch in 0..opt.epochs {
        let mut rng = indexed_substream(opt.seed, "sgd-shuffle", epoch as u64);
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let eta = opt.eta0 / (1.0 + step as f64 / decay);
            for &i in chunk {
                state.catch_up_sequence(set.compiled(i));
            }
            // stochastic estimate of the data-term gradient: mean of ∇F_i
            let grad = if chunk.len() == 1 {
                let i = chunk[0];
                let value = term.evaluate(set, i, &state.w, Some((&mut buf, 1.0)))?;
                check_finite(value, epoch, i)?;
                buf.take()
            } else {
                let snapshot = &state.w;
                let parts = chunk
                    .par_iter()
                    .map_init(
                        || GradBuf::new(n),
                        |local, &i| {
                            let value = term.evaluate(set, i, snapshot, Some((local, 1.0 / chunk.len() as f64)))?;
                            check_finite(value, epoch, i)?;
                            Ok(local.take())
                        },
                    )
                    .collect::<Result<Vec<SparseVec>>>()?;
                for part in &parts {
                    buf.add_sparse(part, 1.0);
                }
                buf.take()
            };
            state.step(&grad, eta);
            step += 1;
        }
        state.flush();
        let w = WeightVector::from_dense(state.w.clone());
        let value = objective(term, set, &w, cfg.lambda, cfg.beta)?;
        if !value.is_finite() {
            return Err(Error::Numeric(format!(
                "{} objective became {value} after epoch {}; last step size {:.3e}",
                term.name(),
                epoch + 1,
                opt.eta0 / (1.0 + step as f64 / decay)
            )));
        }
        log.epoch_objectives.push(value);
        if previous.is_finite() && (previous - value).abs() <= opt.tol * previous.abs().max(f64::MIN_POSITIVE) {
            log.converged = true;
            break;
        }
        previous = value;
    }
    let w = WeightVector::from_dense(state.w);
    log.nonzero = w.nnz();
    log.nonzero_by_family = w.nnz_by_family(set.bank);
    Ok((w, log))
}

fn check_finite(value: f64, epoch: usize, i: usize) -> Result<()> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("loss of example {i} became {value} in epoch {}", epoch + 1)))
    }
}

/// One full-batch proximal gradient step; used to check descent on tiny
/// instances.
pub fn proximal_gradient_step(
    term: &dyn SmoothTerm,
    set: &TrainingSet<'_>,
    w: &WeightVector,
    lambda: f64,
    beta: f64,
    eta: f64,
) -> Result<WeightVector> {
    let grad = full_gradient(term, set, w.as_slice())?;
    let rates = column_rates(set.bank, set.penalties(), lambda, beta);
    let mut out = w.as_slice().to_vec();
    for (c, g) in grad.iter() {
        out[c as usize] -= eta * g;
    }
    for (v, r) in out.iter_mut().zip(rates) {
        *v = soft_threshold(*v, eta * r);
    }
    Ok(WeightVector::from_dense(out))
}
