//! Random small instances and brute-force oracles shared by the
//! integration tests.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use vstruct_core::automaton::{forward_backward, transition_marginals, ChainWfa};
use vstruct_core::features::SparseVec;
use vstruct_core::features::{FeatureBank, FeatureTemplate};
use vstruct_core::losses::LossFn;
use vstruct_core::optim::{TrainConfig, TrainingSet};
use vstruct_core::types::{all_windows, encode_window, window_at, Label, LabeledSequence, TokenSequence};
use vstruct_core::weights::WeightVector;

const VOCAB: [&str; 6] = ["a", "b", "c", "ab", "ba", "cab"];
const TEMPLATES: [(usize, usize, usize); 7] = [(0, 1, 0), (1, 1, 0), (0, 2, 0), (1, 2, 0), (2, 1, 0), (0, 1, 1), (1, 0, 0)];

pub struct Instance {
    pub bank: FeatureBank,
    pub data: Vec<LabeledSequence>,
    pub r: usize,
    pub p: usize,
    pub w: Vec<f64>,
}

fn random_tokens(rng: &mut ChaCha8Rng, len: usize) -> TokenSequence {
    TokenSequence::new((0..len).map(|_| VOCAB[rng.gen_range(0..VOCAB.len())].to_string()).collect()).unwrap()
}

fn random_labels(rng: &mut ChaCha8Rng, len: usize, r: usize) -> Vec<Label> {
    (0..len).map(|_| rng.gen_range(0..r)).collect()
}

/// `l ≤ max_len`, `|Δ| ∈ {2, 3}`, `p ∈ {1, 2}`, 1 to 3 sequences and a
/// sparse random weight vector.
pub fn random_instance(seed: u64, max_len: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let r = rng.gen_range(2..=3);
    let p = rng.gen_range(1..=2);
    let mut templates: Vec<FeatureTemplate> =
        TEMPLATES.iter().filter(|t| t.1 <= p && rng.gen_bool(0.6)).map(|&(a, b, c)| FeatureTemplate::new(a, b, c).unwrap()).collect();
    if templates.is_empty() {
        templates.push(FeatureTemplate::new(1, 1, 0).unwrap());
    }
    let n_seq = rng.gen_range(1..=3);
    let data: Vec<LabeledSequence> = (0..n_seq)
        .map(|_| {
            let len = rng.gen_range(1..=max_len);
            let x = random_tokens(&mut rng, len);
            let y = random_labels(&mut rng, len, r);
            LabeledSequence::new(x, y, r).unwrap()
        })
        .collect();
    let mut bank = FeatureBank::new(templates).unwrap();
    // grow on the gold data and on random relabelings so that many windows fire
    let mut grow = data.clone();
    for s in &data {
        for _ in 0..3 {
            grow.push(LabeledSequence::new(s.tokens().clone(), random_labels(&mut rng, s.len(), r), r).unwrap());
        }
    }
    bank.grow_from(&grow).unwrap();
    bank.freeze();
    let w = (0..bank.dimension()).map(|_| if rng.gen_bool(0.6) { rng.gen_range(-1.5..1.5) } else { 0.0 }).collect();
    Instance { bank, data, r, p, w }
}

pub fn sequences(len: usize, r: usize) -> Vec<Vec<Label>> {
    all_windows(len, r).map(|w| w.labels().to_vec()).collect()
}

pub fn score(inst: &Instance, x: &TokenSequence, y: &[Label], w: &[f64]) -> f64 {
    inst.bank.global_features(x, y).unwrap().dot(w)
}

pub fn wfa(inst: &Instance, i: usize, w: &[f64], absorb: Option<&LossFn>) -> ChainWfa {
    let seq = &inst.data[i];
    let c = inst.bank.compile(seq.tokens(), inst.r, inst.p).unwrap();
    ChainWfa::build(&c, w, absorb.map(|l| (l, seq.labels()))).unwrap()
}

/// `log Σ_y exp(L(y, y_i) + w·Ψ(x_i, y))`, with `L = 0` when `loss` is `None`.
pub fn brute_log_z(inst: &Instance, i: usize, w: &[f64], loss: Option<&LossFn>) -> f64 {
    let seq = &inst.data[i];
    let terms: Vec<f64> = sequences(seq.len(), inst.r)
        .iter()
        .map(|y| score(inst, seq.tokens(), y, w) + loss.map_or(0.0, |l| l.loss(y, seq.labels()).unwrap()))
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// `Σ_y L(y, y_i) exp(w·Ψ(x_i, y) - w·Ψ(x_i, y_i))`.
pub fn brute_structboost(inst: &Instance, i: usize, w: &[f64], loss: &LossFn) -> f64 {
    let seq = &inst.data[i];
    let gold = score(inst, seq.tokens(), seq.labels(), w);
    sequences(seq.len(), inst.r).iter().map(|y| loss.loss(y, seq.labels()).unwrap() * (score(inst, seq.tokens(), y, w) - gold).exp()).sum()
}

/// `q[t - 1][z]`: Gibbs probability that the window ending at `t` has code `z`.
pub fn brute_marginals(inst: &Instance, i: usize, w: &[f64]) -> Vec<Vec<f64>> {
    let seq = &inst.data[i];
    let (l, r, p) = (seq.len(), inst.r, inst.p);
    let log_z = brute_log_z(inst, i, w, None);
    let mut q: Vec<Vec<f64>> = (1..=l).map(|t| vec![0.0; r.pow(t.min(p) as u32)]).collect();
    for y in sequences(l, r) {
        let prob = (score(inst, seq.tokens(), &y, w) - log_z).exp();
        for t in 1..=l {
            q[t - 1][encode_window(window_at(&y, t, p).unwrap().labels(), r)] += prob;
        }
    }
    q
}

/// Highest-scoring labeling; among paths within `1e-12` of the best, the
/// lexicographically smallest.
pub fn brute_viterbi(inst: &Instance, i: usize, w: &[f64]) -> Vec<Label> {
    let seq = &inst.data[i];
    let mut all = sequences(seq.len(), inst.r);
    all.sort();
    let scores: Vec<f64> = all.iter().map(|y| score(inst, seq.tokens(), y, w)).collect();
    let best = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let k = scores.iter().position(|s| *s >= best - 1e-12).unwrap();
    all.swap_remove(k)
}

pub fn automaton_marginals(inst: &Instance, i: usize, w: &[f64]) -> Vec<Vec<f64>> {
    let a = wfa(inst, i, w, None);
    transition_marginals(&a, &forward_backward(&a)).q
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || (a - b).abs() <= tol * 1e-3
}

/// Chain automaton whose transition weights cycle through `weights`.
pub fn layered(r: usize, p: usize, weights: &[f64], len: usize) -> ChainWfa {
    let mut k = 0;
    let layers = (1..=len)
        .map(|t| {
            (0..r.pow(t.min(p) as u32))
                .map(|_| {
                    k += 1;
                    weights[k % weights.len()]
                })
                .collect()
        })
        .collect();
    ChainWfa::from_layers(r, p, layers).unwrap()
}

pub type Objective = fn(&WeightVector, &TrainingSet<'_>, &TrainConfig) -> vstruct_core::Result<f64>;
pub type Gradient = fn(&WeightVector, &TrainingSet<'_>, usize, &LossFn) -> vstruct_core::Result<SparseVec>;

/// `||g - fd||_2 / max(||g||_2, ||fd||_2)` for central differences with step `h`.
/// Falls back to the absolute difference when both norms are below `1e-8`.
pub fn relative_gradient_error(seed: u64, objective: Objective, gradient: Gradient, loss: LossFn) -> f64 {
    let inst = random_instance(seed, 4);
    let set = TrainingSet::unpenalized(&inst.bank, &inst.data, inst.r, inst.p).unwrap();
    let mut cfg = TrainConfig::new(0.0, 0.0, inst.p);
    cfg.loss = loss;
    let w = WeightVector::from_dense(inst.w.iter().map(|v| v * 0.5).collect());
    let n = w.len();
    let mut analytic = vec![0.0; n];
    for i in 0..inst.data.len() {
        for (c, v) in gradient(&w, &set, i, &cfg.loss).unwrap().iter() {
            analytic[c as usize] += v;
        }
    }
    let h = 1e-5;
    let numeric: Vec<f64> = (0..n)
        .map(|j| {
            let mut plus = w.clone();
            plus.as_mut_slice()[j] += h;
            let mut minus = w.clone();
            minus.as_mut_slice()[j] -= h;
            (objective(&plus, &set, &cfg).unwrap() - objective(&minus, &set, &cfg).unwrap()) / (2.0 * h)
        })
        .collect();
    let diff = analytic.iter().zip(&numeric).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
    let scale = analytic.iter().map(|a| a * a).sum::<f64>().sqrt().max(numeric.iter().map(|b| b * b).sum::<f64>().sqrt());
    // below the central-difference noise floor (about eps |F| / h) the true
    // gradient is zero and only round-off is compared
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}
