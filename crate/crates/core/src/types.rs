//! Alphabets, sequences, label windows and the chain factor-graph shape.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense index of a label in a [`LabelAlphabet`].
pub type Label = usize;

/// Finite output alphabet. Indices are assigned in first-seen order.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "Vec<String>", into = "Vec<String>")]
pub struct LabelAlphabet {
    labels: Vec<String>,
    index: HashMap<String, Label>,
}

impl LabelAlphabet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds an alphabet from distinct labels, rejecting duplicates.
    pub fn from_labels<I, S>(labels: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut alphabet = Self::new();
        for label in labels {
            let label = label.into();
            if alphabet.index.contains_key(&label) {
                return Err(Error::domain(format!("duplicate label {label:?}")));
            }
            alphabet.intern(&label);
        }
        if alphabet.is_empty() {
            return Err(Error::domain("label alphabet must not be empty"));
        }
        Ok(alphabet)
    }

    /// Returns the index of `label`, assigning the next free one if unseen.
    pub fn intern(&mut self, label: &str) -> Label {
        if let Some(&i) = self.index.get(label) {
            return i;
        }
        let i = self.labels.len();
        self.labels.push(label.to_owned());
        self.index.insert(label.to_owned(), i);
        i
    }

    pub fn index_of(&self, label: &str) -> Option<Label> {
        self.index.get(label).copied()
    }

    pub fn label(&self, index: Label) -> Option<&str> {
        self.labels.get(index).map(String::as_str)
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl From<Vec<String>> for LabelAlphabet {
    fn from(labels: Vec<String>) -> Self {
        let mut alphabet = Self::new();
        for label in &labels {
            alphabet.intern(label);
        }
        alphabet
    }
}

impl From<LabelAlphabet> for Vec<String> {
    fn from(alphabet: LabelAlphabet) -> Self {
        alphabet.labels
    }
}

/// Input tokens `x_1..x_l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence(Vec<String>);

impl TokenSequence {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::domain("token sequence must not be empty"));
        }
        Ok(Self(tokens))
    }

    pub fn from_strs(tokens: &[&str]) -> Result<Self> {
        Self::new(tokens.iter().map(|t| (*t).to_owned()).collect())
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.0
    }

    /// Token at 1-based position `s`, or `None` outside `[1, l]`.
    pub fn at(&self, s: isize) -> Option<&str> {
        if s < 1 {
            return None;
        }
        self.0.get(s as usize - 1).map(String::as_str)
    }
}

/// A token sequence with its aligned gold labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledSequence {
    tokens: TokenSequence,
    labels: Vec<Label>,
}

impl LabeledSequence {
    pub fn new(tokens: TokenSequence, labels: Vec<Label>, alphabet_size: usize) -> Result<Self> {
        if labels.len() != tokens.len() {
            return Err(Error::domain(format!("{} labels for {} tokens", labels.len(), tokens.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= alphabet_size) {
            return Err(Error::domain(format!("label index {bad} outside alphabet of size {alphabet_size}")));
        }
        Ok(Self { tokens, labels })
    }

    pub fn tokens(&self) -> &TokenSequence {
        &self.tokens
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Same tokens, different labels. Used by noise injection.
    pub(crate) fn with_labels(&self, labels: Vec<Label>) -> Self {
        debug_assert_eq!(labels.len(), self.tokens.len());
        Self { tokens: self.tokens.clone(), labels }
    }
}

/// Labels `y_{s-p+1}..y_s`, with positions `<= 0` dropped (the empty symbol).
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct LabelWindow(Vec<Label>);

impl LabelWindow {
    pub fn new(labels: Vec<Label>) -> Self {
        Self(labels)
    }

    pub fn labels(&self) -> &[Label] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The last `k` labels (all of them if the window is shorter).
    pub fn suffix(&self, k: usize) -> &[Label] {
        &self.0[self.0.len().saturating_sub(k)..]
    }

    /// Mixed-radix code of the window over an alphabet of size `r`,
    /// most recent label in the least significant digit.
    pub fn code(&self, r: usize) -> usize {
        encode_window(&self.0, r)
    }

    pub fn from_code(code: usize, len: usize, r: usize) -> Self {
        Self(decode_window(code, len, r))
    }
}

impl fmt::Display for LabelWindow {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, y) in self.0.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{y}")?;
        }
        write!(f, ")")
    }
}

pub fn encode_window(labels: &[Label], r: usize) -> usize {
    labels.iter().fold(0, |code, &y| code * r + y)
}

pub fn decode_window(mut code: usize, len: usize, r: usize) -> Vec<Label> {
    let mut out = vec![0; len];
    for slot in out.iter_mut().rev() {
        *slot = code % r;
        code /= r;
    }
    out
}

/// Returns `(y_{s-p+1}, ..., y_s)` for 1-based position `s`.
pub fn window_at(y: &[Label], s: usize, p: usize) -> Result<LabelWindow> {
    if s < 1 || s > y.len() {
        return Err(Error::domain(format!("position {s} outside [1, {}]", y.len())));
    }
    let start = s.saturating_sub(p);
    Ok(LabelWindow(y[start..s].to_vec()))
}

/// Chain factor graph of Markov order `p`: one factor per position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainGraphSpec {
    markov_order: usize,
}

impl ChainGraphSpec {
    pub fn new(markov_order: usize) -> Result<Self> {
        if markov_order == 0 {
            return Err(Error::domain("markov order must be at least 1"));
        }
        Ok(Self { markov_order })
    }

    pub fn markov_order(&self) -> usize {
        self.markov_order
    }

    /// `|F_i|` for an example of length `len`.
    pub fn factor_count(&self, len: usize) -> usize {
        len
    }

    /// `d_i = |Δ|^p`, the number of local assignments per factor.
    pub fn assignments_per_factor(&self, alphabet_size: usize) -> usize {
        alphabet_size.pow(self.markov_order as u32)
    }
}

/// Iterates over every window of exactly `len` labels, in code order.
pub fn all_windows(len: usize, r: usize) -> impl Iterator<Item = LabelWindow> {
    let count = r.pow(len as u32);
    (0..count).map(move |code| LabelWindow::from_code(code, len, r))
}
