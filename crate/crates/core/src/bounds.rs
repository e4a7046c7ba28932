//! Margin bounds for a trained model on a held-out sample.
//!
//! Empirical margin losses need `max_{y' ≠ y}` of a loss-dependent margin
//! expression. For Hamming losses the expression only depends on the score
//! of `y'` and on its number of mismatches, so the best score at each
//! mismatch count (a stratified Viterbi pass) is enough.

use serde::{Deserialize, Serialize};

use crate::automaton::{best_weight_by_distance, ChainWfa};
use crate::complexity::{generalization_bound, mc_factor_graph_complexity, vrm_bound, BoundInputs, FactorSample, McEstimate, WeightNorm};
use crate::error::{Error, Result};
use crate::losses::{empirical_margin_loss, MarginExample, MarginVariant};
use crate::model::Model;
use crate::types::LabeledSequence;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundSettings {
    pub rho: f64,
    pub delta: f64,
    pub norm: WeightNorm,
    /// Radius `Λ` of the hypothesis class; `None` uses the model's own norm.
    pub lambda_cap: Option<f64>,
    pub draws: usize,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleBound {
    pub alpha: Vec<f64>,
    pub complexities: Vec<f64>,
    pub margin_loss: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub settings: BoundSettings,
    pub m: usize,
    pub loss_bound: f64,
    /// `Λ` actually used for the complexity term.
    pub lambda: f64,
    pub heldout_loss: f64,
    pub margin_loss: f64,
    pub complexity: McEstimate,
    pub bound: f64,
    pub ensemble: Option<EnsembleBound>,
    pub note: String,
}

/// Margin examples of `data` under scores `w·Ψ / scale`.
fn margin_examples(model: &Model, data: &[LabeledSequence], w: &[f64]) -> Result<(Vec<MarginExample>, f64)> {
    let loss = &model.config.loss;
    let (r, p) = (model.alphabet.len(), model.markov_order());
    let mut out = Vec::with_capacity(data.len());
    let mut heldout = 0.0;
    for seq in data {
        let compiled = model.bank.compile(seq.tokens(), r, p)?;
        let wfa = ChainWfa::build(&compiled, w, None)?;
        let best = best_weight_by_distance(&wfa, seq.labels())?;
        let l = seq.len();
        let per_mismatch = loss.bound(l) / l as f64;
        let competitors =
            best.iter().enumerate().skip(1).filter(|(_, s)| s.is_finite()).map(|(k, &s)| (s, k as f64 * per_mismatch)).collect();
        let predicted = crate::automaton::viterbi_path(&wfa).0;
        heldout += loss.loss(&predicted, seq.labels())?;
        out.push(MarginExample { gold_score: wfa.path_weight(seq.labels())?, competitors });
    }
    Ok((out, heldout / data.len() as f64))
}

/// Generalization bound with the empirical factor-graph complexity of the
/// held-out inputs, plus the ensemble bound over the model's families when
/// it is defined.
pub fn bound_report(model: &Model, data: &[LabeledSequence], settings: &BoundSettings) -> Result<BoundReport> {
    if !model.config.loss.is_hamming() {
        return Err(Error::UnsupportedLoss("margin bounds are implemented for Hamming losses".into()));
    }
    if data.is_empty() {
        return Err(Error::domain("bound on an empty sample"));
    }
    let m = data.len();
    let loss_bound = data.iter().map(|s| model.config.loss.bound(s.len())).fold(0.0, f64::max);
    let w = model.weights.as_slice();
    let lambda = match settings.lambda_cap {
        Some(cap) => cap,
        None => match settings.norm {
            WeightNorm::L1 => model.weights.l1(),
            WeightNorm::L2 => w.iter().map(|v| v * v).sum::<f64>().sqrt(),
        },
    };
    let (examples, heldout_loss) = margin_examples(model, data, w)?;
    let margin_loss = empirical_margin_loss(MarginVariant::Additive, &examples, settings.rho, 0.0, loss_bound)?;
    let inputs: Vec<_> = data.iter().map(|s| s.tokens()).collect();
    let sample = FactorSample::new(&inputs, &model.bank, model.alphabet.len(), model.markov_order())?;
    let complexity = mc_factor_graph_complexity(&sample, settings.norm, lambda, settings.draws, settings.seed)?;
    let bound =
        generalization_bound(MarginVariant::Additive, margin_loss, complexity.mean, settings.rho, settings.delta, loss_bound, m, true)?;

    let (ensemble, note) = match ensemble_bound(model, data, settings, loss_bound) {
        Ok(e) => (Some(e), String::new()),
        Err(e) => (None, format!("ensemble bound unavailable: {e}")),
    };
    Ok(BoundReport { settings: settings.clone(), m, loss_bound, lambda, heldout_loss, margin_loss, complexity, bound, ensemble, note })
}

/// Scores normalized by `||w||_1`, mixture weights `||w_k||_1 / ||w||_1`,
/// family complexities from the model's penalties, margin offset `τ = 1`.
fn ensemble_bound(model: &Model, data: &[LabeledSequence], settings: &BoundSettings, loss_bound: f64) -> Result<EnsembleBound> {
    let total = model.weights.l1();
    if total == 0.0 {
        return Err(Error::domain("zero weight vector"));
    }
    let alpha: Vec<f64> = model.weights.block_l1(&model.bank).iter().map(|v| v / total).collect();
    let w: Vec<f64> = model.weights.as_slice().iter().map(|v| v / total).collect();
    let (examples, _) = margin_examples(model, data, &w)?;
    let margin_loss = empirical_margin_loss(MarginVariant::Additive, &examples, settings.rho, 1.0, loss_bound)?;
    let max_len = data.iter().map(LabeledSequence::len).max().unwrap_or(1);
    let inputs = BoundInputs {
        rho: settings.rho,
        delta: settings.delta,
        loss_bound,
        m: data.len(),
        output_count: (model.alphabet.len() as f64).powi(max_len as i32),
        alpha,
        complexities: model.penalties.clone(),
    };
    let bound = margin_loss + vrm_bound(&inputs, MarginVariant::Additive, false)?;
    Ok(EnsembleBound { alpha: inputs.alpha, complexities: inputs.complexities, margin_loss, bound })
}
