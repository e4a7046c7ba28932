//! Voted CRF: loss-augmented log-partition data term with per-family
//! complexity-weighted L1 penalties.
//!
//! `F_i(w) = log Σ_y exp(L(y, y_i) + w·Ψ(x_i, y)) - w·Ψ(x_i, y_i)`, computed
//! on the automaton with the loss absorbed into its transition weights. Its
//! gradient is the marginal-weighted sum of window features minus the gold
//! features.

use crate::automaton::{forward_backward, transition_marginals, viterbi_path, ChainWfa};
use crate::error::Result;
use crate::features::{FeatureBank, SparseVec};
use crate::losses::LossFn;
use crate::optim::{self, SmoothTerm, TrainConfig, TrainLog, TrainingSet};
use crate::types::{Label, TokenSequence};
use crate::weights::{GradBuf, WeightVector};

#[derive(Debug, Clone)]
pub struct VcrfTerm {
    pub loss: LossFn,
}

impl VcrfTerm {
    pub fn new(loss: LossFn) -> Self {
        Self { loss }
    }
}

impl SmoothTerm for VcrfTerm {
    fn name(&self) -> &'static str {
        "vcrf"
    }

    fn evaluate(&self, set: &TrainingSet<'_>, i: usize, w: &[f64], grad: Option<(&mut GradBuf, f64)>) -> Result<f64> {
        let seq = set.compiled(i);
        let wfa = ChainWfa::build(seq, w, Some((&self.loss, set.labels(i))))?;
        let flows = forward_backward(&wfa);
        let gold = set.gold(i);
        let value = flows.log_z - gold.dot(w);
        if let Some((buf, scale)) = grad {
            let q = transition_marginals(&wfa, &flows);
            for t in 1..=seq.len() {
                for (z, &mass) in q.q[t - 1].iter().enumerate() {
                    if mass != 0.0 {
                        for c in seq.columns(t, z) {
                            buf.add(c, scale * mass);
                        }
                    }
                }
            }
            buf.add_sparse(gold, -scale);
        }
        Ok(value)
    }
}

/// Full objective `(1/m) Σ_i F_i + Σ_k (λ r_k + β) ||w_k||_1`.
pub fn vcrf_objective(w: &WeightVector, set: &TrainingSet<'_>, cfg: &TrainConfig) -> Result<f64> {
    optim::objective(&VcrfTerm::new(cfg.loss.clone()), set, w, cfg.lambda, cfg.beta)
}

/// `(1/m) ∇F_i(w)`.
pub fn vcrf_gradient(w: &WeightVector, set: &TrainingSet<'_>, i: usize, loss: &LossFn) -> Result<SparseVec> {
    optim::example_gradient(&VcrfTerm::new(loss.clone()), set, i, w.as_slice())
}

/// L1-regularized CRF objective `(1/m) Σ_i F_i + β ||w||_1`, evaluated with
/// the global L1 norm rather than family blocks.
pub fn l1_crf_objective(w: &WeightVector, set: &TrainingSet<'_>, loss: &LossFn, beta: f64) -> Result<f64> {
    Ok(optim::data_term(&VcrfTerm::new(loss.clone()), set, w.as_slice())? + beta * w.l1())
}

pub fn train_vcrf(set: &TrainingSet<'_>, cfg: &TrainConfig) -> Result<(WeightVector, TrainLog)> {
    optim::train(&VcrfTerm::new(cfg.loss.clone()), set, cfg)
}

/// `argmax_y w·Ψ(x, y)`, no loss term.
pub fn predict(w: &WeightVector, x: &TokenSequence, bank: &FeatureBank, alphabet_size: usize, p: usize) -> Result<Vec<Label>> {
    let seq = bank.compile(x, alphabet_size, p)?;
    let wfa = ChainWfa::build(&seq, w.as_slice(), None)?;
    Ok(viterbi_path(&wfa).0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::FeatureTemplate;
    use crate::types::{all_windows, LabeledSequence};

    fn toy() -> (FeatureBank, Vec<LabeledSequence>) {
        let data = vec![
            LabeledSequence::new(TokenSequence::from_strs(&["a", "b", "a"]).unwrap(), vec![0, 1, 0], 2).unwrap(),
            LabeledSequence::new(TokenSequence::from_strs(&["b", "b"]).unwrap(), vec![1, 1], 2).unwrap(),
        ];
        let mut bank = FeatureBank::new(vec![FeatureTemplate::new(1, 1, 0).unwrap(), FeatureTemplate::new(0, 2, 0).unwrap()]).unwrap();
        bank.grow_from(&data).unwrap();
        bank.freeze();
        (bank, data)
    }

    #[test]
    fn zero_weights_zero_loss_gives_uniform_partition() {
        let (bank, data) = toy();
        let set = TrainingSet::unpenalized(&bank, &data, 2, 2).unwrap();
        let mut cfg = TrainConfig::new(0.0, 0.0, 2);
        cfg.loss = LossFn::zero(2);
        let w = WeightVector::zeros(bank.dimension());
        let v = vcrf_objective(&w, &set, &cfg).unwrap();
        assert!((v - (3.0 + 2.0) * 2f64.ln() / 2.0).abs() < 1e-14);
    }

    #[test]
    fn single_position_gradient_is_expected_minus_observed() {
        let data = vec![LabeledSequence::new(TokenSequence::from_strs(&["a"]).unwrap(), vec![1], 2).unwrap()];
        let mut bank = FeatureBank::new(vec![FeatureTemplate::new(1, 1, 0).unwrap()]).unwrap();
        bank.extract_grow(data[0].tokens(), &crate::types::LabelWindow::new(vec![0]), 1).unwrap();
        bank.extract_grow(data[0].tokens(), &crate::types::LabelWindow::new(vec![1]), 1).unwrap();
        bank.freeze();
        let set = TrainingSet::unpenalized(&bank, &data, 2, 1).unwrap();
        let g = vcrf_gradient(&WeightVector::zeros(bank.dimension()), &set, 0, &LossFn::zero(2)).unwrap();
        let fired_a = bank.extract(data[0].tokens(), &crate::types::LabelWindow::new(vec![0]), 1).unwrap();
        let fired_b = bank.extract(data[0].tokens(), &crate::types::LabelWindow::new(vec![1]), 1).unwrap();
        let expected = fired_a.scale(0.5).add(&fired_b.scale(0.5)).add(&fired_b.scale(-1.0));
        assert_eq!(g, expected);
    }

    #[test]
    fn objective_matches_enumeration() {
        let (bank, data) = toy();
        let set = TrainingSet::unpenalized(&bank, &data, 2, 2).unwrap();
        let w: Vec<f64> = (0..bank.dimension()).map(|j| (j as f64 * 1.7).sin()).collect();
        let loss = LossFn::hamming();
        let mut total = 0.0;
        for seq in &data {
            let l = seq.len();
            let gold = bank.global_features(seq.tokens(), seq.labels()).unwrap().dot(&w);
            let mut z = 0.0;
            for y in all_windows(l, 2) {
                let score = bank.global_features(seq.tokens(), y.labels()).unwrap().dot(&w);
                z += (loss.loss(y.labels(), seq.labels()).unwrap() + score - gold).exp();
            }
            total += z.ln();
        }
        let mut cfg = TrainConfig::new(0.0, 0.0, 2);
        cfg.loss = loss;
        let got = vcrf_objective(&WeightVector::from_dense(w), &set, &cfg).unwrap();
        assert!((got - total / 2.0).abs() < 1e-12);
    }

    #[test]
    fn lambda_zero_matches_l1_crf() {
        let (bank, data) = toy();
        let set = TrainingSet::new(&bank, &data, 2, 2, vec![0.4, 0.9]).unwrap();
        let w = WeightVector::from_dense((0..bank.dimension()).map(|j| (j as f64).cos()).collect());
        let mut cfg = TrainConfig::new(0.0, 0.3, 2);
        cfg.loss = LossFn::hamming();
        let a = vcrf_objective(&w, &set, &cfg).unwrap();
        let b = l1_crf_objective(&w, &set, &cfg.loss, 0.3).unwrap();
        assert!((a - b).abs() <= 1e-12 * a.abs());
    }

    #[test]
    fn training_fits_separable_toy() {
        let (bank, data) = toy();
        let set = TrainingSet::unpenalized(&bank, &data, 2, 2).unwrap();
        let cfg = TrainConfig::new(0.0, 0.0, 2);
        let (w, log) = train_vcrf(&set, &cfg).unwrap();
        assert!(log.epoch_objectives.windows(2).all(|p| p[1].is_finite()));
        for seq in &data {
            assert_eq!(predict(&w, seq.tokens(), &bank, 2, 2).unwrap(), seq.labels());
        }
    }

    #[test]
    fn zero_weights_predict_first_labels() {
        let (bank, _) = toy();
        let x = TokenSequence::from_strs(&["q", "r", "s"]).unwrap();
        assert_eq!(predict(&WeightVector::zeros(bank.dimension()), &x, &bank, 2, 2).unwrap(), vec![0, 0, 0]);
    }
}
