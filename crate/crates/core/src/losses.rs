//! Markovian losses, surrogate functions `Φ_u(v)` and the clipped empirical
//! margin losses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{encode_window, window_at, Label};

/// Per-position window table `L_t(z, z')` over windows of up to `order`
/// labels. Windows at the same position always have the same length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowLossTable {
    order: usize,
    alphabet_size: usize,
    values: Vec<f64>,
}

impl WindowLossTable {
    /// Tabulates `f(z, z_ref)` for every pair of equal-length windows.
    pub fn from_fn(order: usize, alphabet_size: usize, f: impl Fn(&[Label], &[Label]) -> f64) -> Result<Self> {
        if order == 0 || alphabet_size == 0 {
            return Err(Error::domain("window loss needs order >= 1 and a nonempty alphabet"));
        }
        let mut values = Vec::new();
        for len in 1..=order {
            let count = alphabet_size.pow(len as u32);
            for a in 0..count {
                let za = crate::types::decode_window(a, len, alphabet_size);
                for b in 0..count {
                    let zb = crate::types::decode_window(b, len, alphabet_size);
                    let v = f(&za, &zb);
                    if !v.is_finite() || v < 0.0 {
                        return Err(Error::domain(format!("loss table entry {v} must be finite and nonnegative")));
                    }
                    values.push(v);
                }
            }
        }
        Ok(Self { order, alphabet_size, values })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    fn offset(&self, len: usize) -> usize {
        (1..len).map(|k| self.alphabet_size.pow(2 * k as u32)).sum()
    }

    fn get(&self, z: &[Label], z_ref: &[Label]) -> f64 {
        debug_assert_eq!(z.len(), z_ref.len());
        let len = z.len();
        let count = self.alphabet_size.pow(len as u32);
        self.values[self.offset(len) + encode_window(z, self.alphabet_size) * count + encode_window(z_ref, self.alphabet_size)]
    }

    fn max_value(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossKind {
    Hamming,
    Window(WindowLossTable),
}

/// A bounded Markovian loss `L(y, y') = scale * Σ_t L_t(y window, y' window)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossFn {
    pub kind: LossKind,
    /// Divide by the sequence length, giving values in `[0, 1]` for Hamming.
    pub normalize: bool,
}

impl LossFn {
    /// Hamming loss normalized by `1/l`.
    pub fn hamming() -> Self {
        Self { kind: LossKind::Hamming, normalize: true }
    }

    pub fn hamming_unnormalized() -> Self {
        Self { kind: LossKind::Hamming, normalize: false }
    }

    pub fn window(table: WindowLossTable, normalize: bool) -> Self {
        Self { kind: LossKind::Window(table), normalize }
    }

    /// The identically-zero loss (not definite; used to drop the loss term).
    pub fn zero(alphabet_size: usize) -> Self {
        let table = WindowLossTable::from_fn(1, alphabet_size.max(1), |_, _| 0.0).expect("valid table");
        Self::window(table, false)
    }

    pub fn markov_order(&self) -> usize {
        match &self.kind {
            LossKind::Hamming => 1,
            LossKind::Window(t) => t.order(),
        }
    }

    pub fn is_hamming(&self) -> bool {
        matches!(self.kind, LossKind::Hamming)
    }

    fn scale(&self, len: usize) -> f64 {
        if self.normalize {
            1.0 / len as f64
        } else {
            1.0
        }
    }

    /// `L_t` at 1-based position `t` of a length-`len` sequence. `z` and
    /// `z_ref` may be longer than the loss order; only their suffixes count.
    pub fn term(&self, t: usize, len: usize, z: &[Label], z_ref: &[Label]) -> f64 {
        self.raw_term(t, z, z_ref) * self.scale(len)
    }

    /// `L_t` before the length normalization.
    pub fn raw_term(&self, t: usize, z: &[Label], z_ref: &[Label]) -> f64 {
        let q = self.markov_order().min(t);
        let za = &z[z.len().saturating_sub(q)..];
        let zb = &z_ref[z_ref.len().saturating_sub(q)..];
        match &self.kind {
            LossKind::Hamming => {
                if za.last() != zb.last() {
                    1.0
                } else {
                    0.0
                }
            }
            LossKind::Window(table) => table.get(za, zb),
        }
    }

    /// `L(y, y2)`; Hamming uses the direct count.
    pub fn loss(&self, y: &[Label], y2: &[Label]) -> Result<f64> {
        check_lengths(y, y2)?;
        match &self.kind {
            LossKind::Hamming => {
                let diff = y.iter().zip(y2).filter(|(a, b)| a != b).count();
                Ok(diff as f64 * self.scale(y.len()))
            }
            LossKind::Window(_) => self.markovian_sum(y, y2),
        }
    }

    /// `Σ_t L_t(y_{t-q+1..t}, y2_{t-q+1..t})`, normalized once at the end.
    pub fn markovian_sum(&self, y: &[Label], y2: &[Label]) -> Result<f64> {
        check_lengths(y, y2)?;
        let q = self.markov_order();
        let mut total = 0.0;
        for t in 1..=y.len() {
            let a = window_at(y, t, q)?;
            let b = window_at(y2, t, q)?;
            total += self.raw_term(t, a.labels(), b.labels());
        }
        Ok(total * self.scale(y.len()))
    }

    /// `M = max_{y,y'} L(y, y')` over sequences of length `len`.
    pub fn bound(&self, len: usize) -> f64 {
        let per_position = match &self.kind {
            LossKind::Hamming => 1.0,
            LossKind::Window(t) => t.max_value(),
        };
        per_position * len as f64 * self.scale(len)
    }
}

fn check_lengths(y: &[Label], y2: &[Label]) -> Result<()> {
    if y.len() != y2.len() {
        return Err(Error::domain(format!("length mismatch: {} vs {}", y.len(), y2.len())));
    }
    if y.is_empty() {
        return Err(Error::domain("loss of empty sequences"));
    }
    Ok(())
}

/// Convex upper bounds `Φ_u(v)` on `u · 1{v <= 0}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateKind {
    /// `max(0, u (1 - v))`
    StructSvm,
    /// `max(0, u - v)`
    M3n,
    /// `log(1 + e^{u - v})`
    Crf,
    /// `u e^{-v}`
    StructBoost,
    /// `e^{u - v}`
    ExpAdd,
}

impl SurrogateKind {
    pub const ALL: [SurrogateKind; 5] =
        [SurrogateKind::StructSvm, SurrogateKind::M3n, SurrogateKind::Crf, SurrogateKind::StructBoost, SurrogateKind::ExpAdd];
}

pub fn surrogate(kind: SurrogateKind, u: f64, v: f64) -> f64 {
    match kind {
        SurrogateKind::StructSvm => (u * (1.0 - v)).max(0.0),
        SurrogateKind::M3n => (u - v).max(0.0),
        SurrogateKind::Crf => softplus(u - v),
        SurrogateKind::StructBoost => u * (-v).exp(),
        SurrogateKind::ExpAdd => (u - v).exp(),
    }
}

/// `log(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// `min(M, max(0, r))`.
pub fn clip(r: f64, bound: f64) -> f64 {
    r.max(0.0).min(bound)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MarginVariant {
    Additive,
    Multiplicative,
}

/// Scores of one example: the gold output and every competitor `y' != y`
/// with its loss `L(y', y)`.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginExample {
    pub gold_score: f64,
    pub competitors: Vec<(f64, f64)>,
}

impl MarginExample {
    /// `max_{y' != y}` of the unclipped margin expression.
    pub fn worst_term(&self, variant: MarginVariant, rho: f64, tau: f64) -> f64 {
        self.competitors
            .iter()
            .map(|&(score, loss)| margin_term(variant, loss, self.gold_score - score, rho, tau))
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// The expression inside the clip for one competitor with loss `loss` and
/// score gap `gap = h(x,y) - h(x,y')`.
pub fn margin_term(variant: MarginVariant, loss: f64, gap: f64, rho: f64, tau: f64) -> f64 {
    match variant {
        MarginVariant::Additive => loss + tau - gap / rho,
        MarginVariant::Multiplicative => loss * (1.0 + tau - gap / rho),
    }
}

/// Mean over examples of `F(max_{y'≠y} ...)` with `F(r) = min(M, max(0, r))`.
pub fn empirical_margin_loss(variant: MarginVariant, data: &[MarginExample], rho: f64, tau: f64, bound: f64) -> Result<f64> {
    check_margin_args(rho, tau)?;
    if data.is_empty() {
        return Err(Error::domain("empirical margin loss of an empty sample"));
    }
    let total: f64 =
        data.iter().map(|ex| if ex.competitors.is_empty() { 0.0 } else { clip(ex.worst_term(variant, rho, tau), bound) }).sum();
    Ok(total / data.len() as f64)
}

pub(crate) fn check_margin_args(rho: f64, tau: f64) -> Result<()> {
    if !(rho > 0.0) {
        return Err(Error::domain(format!("margin rho must be positive, got {rho}")));
    }
    if !(tau >= 0.0) {
        return Err(Error::domain(format!("offset tau must be nonnegative, got {tau}")));
    }
    Ok(())
}
