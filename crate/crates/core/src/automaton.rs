//! Layered order-`p` chain automaton over label sequences.
//!
//! A state at layer `t` is the window of the last `min(t, p - 1)` labels.
//! The transition leaving state `u` at layer `t - 1` with label `b` carries
//! the window `z = u·b` of `min(t, p)` labels and lands on the suffix of `z`
//! of length `min(t, p - 1)`. With the window encoding of
//! [`crate::types::encode_window`], `src = z / r` and `tgt = z mod r^{..}`,
//! so each layer is a flat array indexed by window code.
//!
//! All `(+, ×)` flows run in log space. Viterbi uses max-plus on the same
//! layout and maximizes the score; ties go to the lexicographically smallest
//! label sequence.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::features::{CompiledSequence, FeatureBank};
use crate::losses::LossFn;
use crate::types::{decode_window, window_at, Label, TokenSequence};

/// `log(Σ exp(v))` over a slice; `-inf` for an empty or all `-inf` slice.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let m = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    if m == f64::INFINITY {
        return m;
    }
    m + values.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

#[derive(Debug, Clone)]
pub struct ChainWfa {
    len: usize,
    r: usize,
    p: usize,
    /// `weights[t - 1][z]`: log-weight of the transition with window `z` at layer `t`.
    weights: Vec<Vec<f64>>,
}

impl ChainWfa {
    /// Builds the automaton from a compiled sequence and dense weights,
    /// optionally adding `L_t(z, y_i window)` to every log-weight.
    pub fn build(seq: &CompiledSequence, w: &[f64], absorb: Option<(&LossFn, &[Label])>) -> Result<Self> {
        let (l, r, p) = (seq.len(), seq.alphabet_size(), seq.markov_order());
        if let Some((loss, reference)) = absorb {
            if loss.markov_order() > p {
                return Err(Error::domain(format!("loss order {} exceeds markov order {p}", loss.markov_order())));
            }
            if reference.len() != l {
                return Err(Error::domain(format!("reference has {} labels for {l} tokens", reference.len())));
            }
            if let Some(&bad) = reference.iter().find(|&&y| y >= r) {
                return Err(Error::domain(format!("reference label {bad} outside alphabet of {r}")));
            }
        }
        let mut weights = Vec::with_capacity(l);
        for t in 1..=l {
            let count = seq.windows_at(t);
            let wlen = t.min(p);
            let ref_window = match absorb {
                Some((_, reference)) => Some(window_at(reference, t, p)?),
                None => None,
            };
            let layer = (0..count)
                .map(|z| {
                    let mut v = seq.score(t, z, w);
                    if let (Some((loss, _)), Some(rw)) = (absorb, &ref_window) {
                        v += loss.term(t, l, &decode_window(z, wlen, r), rw.labels());
                    }
                    v
                })
                .collect();
            weights.push(layer);
        }
        Ok(Self { len: l, r, p, weights })
    }

    /// Builds from raw weights and explicit per-layer tables; `weights[t-1]`
    /// must have `r^{min(t, p)}` entries.
    pub fn from_layers(r: usize, p: usize, weights: Vec<Vec<f64>>) -> Result<Self> {
        if r == 0 || p == 0 || weights.is_empty() {
            return Err(Error::domain("automaton needs r >= 1, p >= 1 and at least one layer"));
        }
        for (i, layer) in weights.iter().enumerate() {
            let expect = r.pow((i + 1).min(p) as u32);
            if layer.len() != expect {
                return Err(Error::domain(format!("layer {} has {} weights, expected {expect}", i + 1, layer.len())));
            }
        }
        Ok(Self { len: weights.len(), r, p, weights })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn alphabet_size(&self) -> usize {
        self.r
    }

    pub fn markov_order(&self) -> usize {
        self.p
    }

    /// Number of states at layer `t ∈ [0, l]`.
    pub fn states_at(&self, t: usize) -> usize {
        self.r.pow(t.min(self.p - 1) as u32)
    }

    /// Number of transitions entering layer `t ∈ [1, l]`.
    pub fn windows_at(&self, t: usize) -> usize {
        self.weights[t - 1].len()
    }

    pub fn transition_count(&self) -> usize {
        self.weights.iter().map(Vec::len).sum()
    }

    pub fn log_weight(&self, t: usize, z: usize) -> f64 {
        self.weights[t - 1][z]
    }

    pub fn layer(&self, t: usize) -> &[f64] {
        &self.weights[t - 1]
    }

    /// Source state code of window `z` at layer `t`.
    pub fn source(&self, _t: usize, z: usize) -> usize {
        z / self.r
    }

    /// Target state code of window `z` at layer `t`.
    pub fn target(&self, t: usize, z: usize) -> usize {
        z % self.states_at(t)
    }

    /// Window codes of the path labeled `y`, one per layer.
    pub fn path_windows(&self, y: &[Label]) -> Result<Vec<usize>> {
        if y.len() != self.len {
            return Err(Error::domain(format!("{} labels for automaton of length {}", y.len(), self.len)));
        }
        let mut codes = Vec::with_capacity(self.len);
        let mut state = 0usize;
        for (i, &b) in y.iter().enumerate() {
            if b >= self.r {
                return Err(Error::domain(format!("label {b} outside alphabet of {}", self.r)));
            }
            let t = i + 1;
            let z = state * self.r + b;
            codes.push(z);
            state = self.target(t, z);
        }
        Ok(codes)
    }

    /// Log-weight of the unique accepting path labeled `y`.
    pub fn path_weight(&self, y: &[Label]) -> Result<f64> {
        let codes = self.path_windows(y)?;
        Ok(codes.iter().enumerate().map(|(i, &z)| self.weights[i][z]).sum())
    }

    /// Text edge list, one transition per line:
    /// `t-1:(source)\tlabel\tlogweight\tt:(target)`.
    pub fn to_edge_list(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# chain automaton len={} r={} p={}", self.len, self.r, self.p);
        for t in 1..=self.len {
            let src_len = (t - 1).min(self.p - 1);
            let tgt_len = t.min(self.p - 1);
            for (z, &lw) in self.weights[t - 1].iter().enumerate() {
                let src = decode_window(self.source(t, z), src_len, self.r);
                let tgt = decode_window(self.target(t, z), tgt_len, self.r);
                let _ = writeln!(out, "{}:{}\t{}\t{lw:e}\t{t}:{}", t - 1, fmt_state(&src), z % self.r, fmt_state(&tgt));
            }
        }
        out
    }
}

fn fmt_state(labels: &[Label]) -> String {
    let body: Vec<String> = labels.iter().map(|y| y.to_string()).collect();
    format!("({})", body.join(","))
}

/// Builds the automaton for `x` directly from a bank.
pub fn build_chain_wfa(
    x: &TokenSequence,
    w: &[f64],
    bank: &FeatureBank,
    alphabet_size: usize,
    p: usize,
    absorb: Option<(&LossFn, &[Label])>,
) -> Result<ChainWfa> {
    let seq = bank.compile(x, alphabet_size, p)?;
    ChainWfa::build(&seq, w, absorb)
}

/// Forward and backward log masses, indexed `[t][state]` for `t ∈ [0, l]`.
#[derive(Debug, Clone)]
pub struct FlowTables {
    pub alpha: Vec<Vec<f64>>,
    pub beta: Vec<Vec<f64>>,
    pub log_z: f64,
}

impl FlowTables {
    /// `log Σ_u exp(alpha[t][u] + beta[t][u])`, equal to `log_z` at every layer.
    pub fn layer_mass(&self, t: usize) -> f64 {
        let v: Vec<f64> = self.alpha[t].iter().zip(&self.beta[t]).map(|(a, b)| a + b).collect();
        log_sum_exp(&v)
    }
}

pub fn forward_backward(wfa: &ChainWfa) -> FlowTables {
    let l = wfa.len;
    let r = wfa.r;
    let mut alpha = Vec::with_capacity(l + 1);
    alpha.push(vec![0.0]);
    for t in 1..=l {
        let prev: &Vec<f64> = &alpha[t - 1];
        let n = wfa.states_at(t);
        let layer = &wfa.weights[t - 1];
        let mut maxes = vec![f64::NEG_INFINITY; n];
        for (z, &lw) in layer.iter().enumerate() {
            let v = prev[z / r] + lw;
            let tgt = z % n;
            if v > maxes[tgt] {
                maxes[tgt] = v;
            }
        }
        let mut sums = vec![0.0; n];
        for (z, &lw) in layer.iter().enumerate() {
            let tgt = z % n;
            if maxes[tgt].is_finite() {
                sums[tgt] += (prev[z / r] + lw - maxes[tgt]).exp();
            }
        }
        let next = maxes.iter().zip(&sums).map(|(&m, &s)| if m.is_finite() { m + s.ln() } else { m }).collect();
        alpha.push(next);
    }

    let mut beta = vec![Vec::new(); l + 1];
    beta[l] = vec![0.0; wfa.states_at(l)];
    let mut buf = Vec::with_capacity(r);
    for t in (1..=l).rev() {
        let n_src = wfa.states_at(t - 1);
        let n_tgt = wfa.states_at(t);
        let layer = &wfa.weights[t - 1];
        let mut out = Vec::with_capacity(n_src);
        for u in 0..n_src {
            buf.clear();
            for b in 0..r {
                let z = u * r + b;
                buf.push(layer[z] + beta[t][z % n_tgt]);
            }
            out.push(log_sum_exp(&buf));
        }
        beta[t - 1] = out;
    }
    let log_z = beta[0][0];
    FlowTables { alpha, beta, log_z }
}

/// `q[t - 1][z]`: probability that the path uses window `z` at layer `t`.
#[derive(Debug, Clone)]
pub struct TransitionMarginals {
    pub q: Vec<Vec<f64>>,
}

impl TransitionMarginals {
    pub fn at(&self, t: usize, z: usize) -> f64 {
        self.q[t - 1][z]
    }

    /// Unary marginals of the label at position `t`.
    pub fn unary(&self, t: usize, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; r];
        for (z, &v) in self.q[t - 1].iter().enumerate() {
            out[z % r] += v;
        }
        out
    }

    /// Unary marginals of the label at position `t - 1` read off layer `t`.
    pub fn unary_previous(&self, t: usize, r: usize) -> Vec<f64> {
        let mut out = vec![0.0; r];
        for (z, &v) in self.q[t - 1].iter().enumerate() {
            out[(z / r) % r] += v;
        }
        out
    }
}

pub fn transition_marginals(wfa: &ChainWfa, flows: &FlowTables) -> TransitionMarginals {
    let q = (1..=wfa.len)
        .map(|t| {
            let n = wfa.states_at(t);
            wfa.weights[t - 1]
                .iter()
                .enumerate()
                .map(|(z, &lw)| (flows.alpha[t - 1][z / wfa.r] + lw + flows.beta[t][z % n] - flows.log_z).exp())
                .collect()
        })
        .collect();
    TransitionMarginals { q }
}

/// Max-plus decoding: the highest-weight path and its weight.
pub fn viterbi_path(wfa: &ChainWfa) -> (Vec<Label>, f64) {
    let l = wfa.len;
    let r = wfa.r;
    // best[t][u]: best weight of a suffix path from state u at layer t
    let mut best = vec![Vec::new(); l + 1];
    best[l] = vec![0.0; wfa.states_at(l)];
    for t in (1..=l).rev() {
        let n_tgt = wfa.states_at(t);
        let layer = &wfa.weights[t - 1];
        best[t - 1] = (0..wfa.states_at(t - 1))
            .map(|u| {
                (0..r)
                    .map(|b| {
                        let z = u * r + b;
                        layer[z] + best[t][z % n_tgt]
                    })
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
    }
    let mut labels = Vec::with_capacity(l);
    let mut state = 0usize;
    for t in 1..=l {
        let n_tgt = wfa.states_at(t);
        let layer = &wfa.weights[t - 1];
        let goal = best[t - 1][state];
        let b = (0..r)
            .find(|&b| {
                let z = state * r + b;
                layer[z] + best[t][z % n_tgt] == goal
            })
            .unwrap_or(0);
        labels.push(b);
        state = (state * r + b) % n_tgt;
    }
    (labels, best[0][0])
}

/// `argmax_y w·Ψ(x, y)` with lexicographic tie-breaking.
pub fn viterbi(x: &TokenSequence, w: &[f64], bank: &FeatureBank, alphabet_size: usize, p: usize) -> Result<Vec<Label>> {
    let wfa = build_chain_wfa(x, w, bank, alphabet_size, p, None)?;
    Ok(viterbi_path(&wfa).0)
}

/// `out[k]` is the best path weight among labelings at Hamming distance
/// exactly `k` from `gold` (`-inf` if none exists), for `k ∈ [0, l]`.
pub fn best_weight_by_distance(wfa: &ChainWfa, gold: &[Label]) -> Result<Vec<f64>> {
    let l = wfa.len;
    if gold.len() != l {
        return Err(Error::domain(format!("{} gold labels for automaton of length {l}", gold.len())));
    }
    let r = wfa.r;
    // cur[u * (l + 1) + k]
    let width = l + 1;
    let mut cur = vec![f64::NEG_INFINITY; width];
    cur[0] = 0.0;
    for t in 1..=l {
        let n_tgt = wfa.states_at(t);
        let layer = &wfa.weights[t - 1];
        let mut next = vec![f64::NEG_INFINITY; n_tgt * width];
        for (z, &lw) in layer.iter().enumerate() {
            let src = z / r;
            let tgt = z % n_tgt;
            let miss = usize::from(z % r != gold[t - 1]);
            for k in 0..t {
                let v = cur[src * width + k];
                if v == f64::NEG_INFINITY {
                    continue;
                }
                let slot = &mut next[tgt * width + k + miss];
                if v + lw > *slot {
                    *slot = v + lw;
                }
            }
        }
        cur = next;
    }
    let n_final = wfa.states_at(l);
    Ok((0..width).map(|k| (0..n_final).map(|u| cur[u * width + k]).fold(f64::NEG_INFINITY, f64::max)).collect())
}
