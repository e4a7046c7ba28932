//! Voted structured boosting.
//!
//! `F_i(w) = Σ_y L(y, y_i) exp(w·Ψ(x_i, y) - w·Ψ(x_i, y_i))`. The loss-weighted
//! sum is computed with first moments over the unabsorbed automaton: each
//! state carries the expected accumulated loss of its prefix (forward) and
//! suffix (backward) paths under the Gibbs distribution, so that
//! `S / Z = backward(initial)` and the loss-weighted window marginal is
//! `q(z, t) · (forward(src) + L_t(z) + backward(tgt))`.

use crate::automaton::{forward_backward, transition_marginals, ChainWfa, FlowTables};
use crate::error::{Error, Result};
use crate::features::SparseVec;
use crate::losses::LossFn;
use crate::optim::{self, SmoothTerm, TrainConfig, TrainLog, TrainingSet};
use crate::types::{decode_window, window_at, Label};
use crate::weights::{GradBuf, WeightVector};

/// Expected accumulated loss per state, in both directions.
#[derive(Debug, Clone)]
pub struct MomentTables {
    pub flows: FlowTables,
    /// `loss[t - 1][z]`: `L_t` of window `z` against the reference.
    pub loss: Vec<Vec<f64>>,
    pub forward: Vec<Vec<f64>>,
    pub backward: Vec<Vec<f64>>,
}

impl MomentTables {
    /// `log Z`.
    pub fn log_z(&self) -> f64 {
        self.flows.log_z
    }

    /// `S / Z`, the Gibbs expectation of the loss.
    pub fn expected_loss(&self) -> f64 {
        self.backward[0][0]
    }

    /// `log S`, or `-inf` when `S = 0`.
    pub fn log_s(&self) -> f64 {
        self.flows.log_z + self.expected_loss().ln()
    }
}

/// Per-window loss terms `L_t(z, y_i window)` for an automaton layout.
pub fn loss_layers(wfa: &ChainWfa, loss: &LossFn, reference: &[Label]) -> Result<Vec<Vec<f64>>> {
    let (l, r, p) = (wfa.len(), wfa.alphabet_size(), wfa.markov_order());
    if loss.markov_order() > p {
        return Err(Error::UnsupportedLoss(format!("loss of order {} is not Markovian within order {p}", loss.markov_order())));
    }
    if reference.len() != l {
        return Err(Error::domain(format!("reference has {} labels for length {l}", reference.len())));
    }
    (1..=l)
        .map(|t| {
            let rw = window_at(reference, t, p)?;
            let wlen = t.min(p);
            Ok((0..wfa.windows_at(t)).map(|z| loss.term(t, l, &decode_window(z, wlen, r), rw.labels())).collect())
        })
        .collect()
}

pub fn moment_tables(wfa: &ChainWfa, loss: &LossFn, reference: &[Label]) -> Result<MomentTables> {
    let loss_l = loss_layers(wfa, loss, reference)?;
    let flows = forward_backward(wfa);
    let (l, r) = (wfa.len(), wfa.alphabet_size());

    let mut forward = Vec::with_capacity(l + 1);
    forward.push(vec![0.0]);
    for t in 1..=l {
        let n = wfa.states_at(t);
        let mut next = vec![0.0; n];
        for (z, &lw) in wfa.layer(t).iter().enumerate() {
            let (src, tgt) = (z / r, z % n);
            let share = (flows.alpha[t - 1][src] + lw - flows.alpha[t][tgt]).exp();
            next[tgt] += share * (forward[t - 1][src] + loss_l[t - 1][z]);
        }
        forward.push(next);
    }

    let mut backward = vec![Vec::new(); l + 1];
    backward[l] = vec![0.0; wfa.states_at(l)];
    for t in (1..=l).rev() {
        let n = wfa.states_at(t);
        let layer = wfa.layer(t);
        backward[t - 1] = (0..wfa.states_at(t - 1))
            .map(|u| {
                (0..r)
                    .map(|b| {
                        let z = u * r + b;
                        let tgt = z % n;
                        let share = (layer[z] + flows.beta[t][tgt] - flows.beta[t - 1][u]).exp();
                        share * (loss_l[t - 1][z] + backward[t][tgt])
                    })
                    .sum()
            })
            .collect();
    }
    Ok(MomentTables { flows, loss: loss_l, forward, backward })
}

#[derive(Debug, Clone)]
pub struct StructBoostTerm {
    pub loss: LossFn,
}

impl StructBoostTerm {
    pub fn new(loss: LossFn) -> Self {
        Self { loss }
    }
}

impl SmoothTerm for StructBoostTerm {
    fn name(&self) -> &'static str {
        "structboost"
    }

    fn evaluate(&self, set: &TrainingSet<'_>, i: usize, w: &[f64], grad: Option<(&mut GradBuf, f64)>) -> Result<f64> {
        let seq = set.compiled(i);
        let wfa = ChainWfa::build(seq, w, None)?;
        let moments = moment_tables(&wfa, &self.loss, set.labels(i))?;
        let gold = set.gold(i);
        let factor = (moments.log_z() - gold.dot(w)).exp();
        let ratio = moments.expected_loss();
        let value = factor * ratio;
        if let Some((buf, scale)) = grad {
            let q = transition_marginals(&wfa, &moments.flows);
            let r = wfa.alphabet_size();
            for t in 1..=seq.len() {
                let n = wfa.states_at(t);
                for (z, &mass) in q.q[t - 1].iter().enumerate() {
                    if mass == 0.0 {
                        continue;
                    }
                    let weighted = mass * (moments.forward[t - 1][z / r] + moments.loss[t - 1][z] + moments.backward[t][z % n]);
                    if weighted != 0.0 {
                        for c in seq.columns(t, z) {
                            buf.add(c, scale * factor * weighted);
                        }
                    }
                }
            }
            buf.add_sparse(gold, -scale * value);
        }
        Ok(value)
    }
}

pub fn structboost_objective(w: &WeightVector, set: &TrainingSet<'_>, cfg: &TrainConfig) -> Result<f64> {
    optim::objective(&StructBoostTerm::new(cfg.loss.clone()), set, w, cfg.lambda, cfg.beta)
}

/// `(1/m) ∇F_i(w)`.
pub fn structboost_gradient(w: &WeightVector, set: &TrainingSet<'_>, i: usize, loss: &LossFn) -> Result<SparseVec> {
    optim::example_gradient(&StructBoostTerm::new(loss.clone()), set, i, w.as_slice())
}

pub fn train_structboost(set: &TrainingSet<'_>, cfg: &TrainConfig) -> Result<(WeightVector, TrainLog)> {
    optim::train(&StructBoostTerm::new(cfg.loss.clone()), set, cfg)
}
