//! Markovian indicator feature families.
//!
//! A family `H_{k1,k2,k3}` is the product of three indicator sets evaluated
//! at a position `s`:
//!
//! * a word window of `k1` tokens `x_{s-t+1..s+r}` for every split `t + r = k1`,
//! * the last `k2` labels `y_{s-k2+1..s}` (shorter near the start),
//! * a suffix of length `t` and a prefix of length `r` of `x_s` for every
//!   split `t + r = k3`.
//!
//! Each combination of splits is an [`Atom`]; an atom fires at most one
//! column per position. Columns are assigned by a [`FeatureBank`] the first
//! time a pattern is seen during a grow pass, and the bank is frozen before
//! training.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::types::{window_at, Label, LabelWindow, LabeledSequence, TokenSequence};

const FIELD_SEP: char = '\u{1f}';
const BOS: &str = "\u{2}BOS";
const EOS: &str = "\u{3}EOS";
const BANK_MAGIC: &str = "vstruct-feature-bank";
const BANK_VERSION: u32 = 1;
const NO_COLUMN: u32 = u32::MAX;

/// One feature family `H_{k1,k2,k3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FeatureTemplate {
    /// Word-window order.
    pub k1: usize,
    /// Label-window order.
    pub k2: usize,
    /// Total suffix plus prefix length.
    pub k3: usize,
}

impl FeatureTemplate {
    pub fn new(k1: usize, k2: usize, k3: usize) -> Result<Self> {
        if k1 + k2 + k3 == 0 {
            return Err(Error::domain("template needs k1 + k2 + k3 >= 1"));
        }
        Ok(Self { k1, k2, k3 })
    }

    /// Parses `"k1,k2,k3;k1,k2,k3;..."`.
    pub fn parse_list(spec: &str) -> Result<Vec<Self>> {
        let mut out: Vec<Self> = Vec::new();
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let fields: Vec<&str> = part.split(',').map(str::trim).collect();
            if fields.len() != 3 {
                return Err(Error::domain(format!("template {part:?} must have three comma-separated orders")));
            }
            let mut k = [0usize; 3];
            for (slot, f) in k.iter_mut().zip(&fields) {
                *slot = f.parse().map_err(|_| Error::domain(format!("bad order {f:?} in template {part:?}")))?;
            }
            let t = Self::new(k[0], k[1], k[2])?;
            if out.contains(&t) {
                return Err(Error::domain(format!("template {part:?} listed twice")));
            }
            out.push(t);
        }
        Ok(out)
    }

    /// Expands the family into its split atoms.
    pub fn atoms(&self) -> Vec<Atom> {
        let mut atoms = Vec::new();
        for left in (0..=self.k1).rev() {
            for suffix in (0..=self.k3).rev() {
                atoms.push(Atom { word_left: left, word_right: self.k1 - left, tag_order: self.k2, suffix, prefix: self.k3 - suffix });
            }
        }
        atoms
    }
}

impl std::fmt::Display for FeatureTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{},{},{}", self.k1, self.k2, self.k3)
    }
}

/// A single split of a family: fires at most once per position.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    /// Word window covers `x_{s-word_left+1 ..= s+word_right}`.
    pub word_left: usize,
    pub word_right: usize,
    pub tag_order: usize,
    pub suffix: usize,
    pub prefix: usize,
}

impl Atom {
    fn id(&self) -> String {
        format!("w{}+{}|y{}|s{}|p{}", self.word_left, self.word_right, self.tag_order, self.suffix, self.prefix)
    }

    /// The input-dependent half of the pattern at 1-based position `s`, or
    /// `None` when the affix indicators cannot fire (word too short).
    fn input_key(&self, x: &TokenSequence, s: usize) -> Option<String> {
        let mut key = self.id();
        let s = s as isize;
        let first = s - self.word_left as isize + 1;
        let last = s + self.word_right as isize;
        for pos in first..=last {
            key.push(FIELD_SEP);
            match x.at(pos) {
                Some(tok) => key.push_str(tok),
                None if pos < 1 => key.push_str(BOS),
                None => key.push_str(EOS),
            }
        }
        let word = x.at(s).expect("position checked by caller");
        let chars: Vec<char> = word.chars().collect();
        key.push(FIELD_SEP);
        if self.suffix > 0 {
            if chars.len() < self.suffix {
                return None;
            }
            key.extend(&chars[chars.len() - self.suffix..]);
        }
        key.push(FIELD_SEP);
        if self.prefix > 0 {
            if chars.len() < self.prefix {
                return None;
            }
            key.extend(&chars[..self.prefix]);
        }
        key.push(FIELD_SEP);
        Some(key)
    }
}

fn push_tags(key: &mut String, tags: &[Label]) {
    for (i, y) in tags.iter().enumerate() {
        if i > 0 {
            key.push(',');
        }
        let _ = write!(key, "{y}");
    }
}

/// Sparse vector with strictly increasing columns and no explicit zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SparseVec {
    entries: Vec<(u32, f64)>,
}

impl SparseVec {
    pub fn new() -> Self {
        Self::default()
    }

    /// Sorts, merges duplicate columns by summation and drops zeros.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (u32, f64)>) -> Self {
        let mut raw: Vec<(u32, f64)> = pairs.into_iter().collect();
        raw.sort_by_key(|&(c, _)| c);
        let mut entries: Vec<(u32, f64)> = Vec::with_capacity(raw.len());
        for (c, v) in raw {
            match entries.last_mut() {
                Some(last) if last.0 == c => last.1 += v,
                _ => entries.push((c, v)),
            }
        }
        entries.retain(|&(_, v)| v != 0.0);
        Self { entries }
    }

    /// Builds from a dense vector, keeping nonzero entries.
    pub fn from_dense(dense: &[f64]) -> Self {
        Self { entries: dense.iter().enumerate().filter(|(_, &v)| v != 0.0).map(|(c, &v)| (c as u32, v)).collect() }
    }

    pub fn entries(&self) -> &[(u32, f64)] {
        &self.entries
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.entries.iter().copied()
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, column: u32) -> f64 {
        self.entries.binary_search_by_key(&column, |&(c, _)| c).map(|i| self.entries[i].1).unwrap_or(0.0)
    }

    pub fn dot(&self, dense: &[f64]) -> f64 {
        self.entries.iter().map(|&(c, v)| v * dense.get(c as usize).copied().unwrap_or(0.0)).sum()
    }

    pub fn add(&self, other: &SparseVec) -> SparseVec {
        Self::from_pairs(self.iter().chain(other.iter()))
    }

    pub fn scale(&self, factor: f64) -> SparseVec {
        Self::from_pairs(self.iter().map(|(c, v)| (c, v * factor)))
    }

    pub fn norm_inf(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, &(_, v)| m.max(v.abs()))
    }

    pub fn norm_l2(&self) -> f64 {
        self.entries.iter().map(|&(_, v)| v * v).sum::<f64>().sqrt()
    }
}

/// Corpus quantities entering the complexity penalty of a family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PenaltyStats {
    /// Sample size `m`.
    pub sample_size: usize,
    /// Vocabulary size `|V|`.
    pub vocab: usize,
    /// Label alphabet size `|Δ|`.
    pub labels: usize,
    /// Character alphabet size `|Σ|`.
    pub chars: usize,
}

/// Which expression to use for the per-family complexity `r_k`.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyFormula {
    /// `sqrt(2 (k1 log|V| + k2 log|Δ| + k3 log|Σ|) / m)`.
    #[default]
    Rademacher,
    /// `r_inf * |F(k)| * sqrt(log N)`, with `|F(k)|` taken as the number of
    /// atoms of the family.
    FactorCount,
}

/// `sqrt(2 (k1 ln|V| + k2 ln|Δ| + k3 ln|Σ|) / m)`.
pub fn family_penalty(template: &FeatureTemplate, stats: &PenaltyStats) -> Result<f64> {
    penalty_value(template, stats.sample_size as f64, stats.vocab as f64, stats.labels as f64, stats.chars as f64)
}

/// [`family_penalty`] over real-valued cardinalities.
pub fn penalty_value(template: &FeatureTemplate, m: f64, vocab: f64, labels: f64, chars: f64) -> Result<f64> {
    if !(m >= 1.0 && vocab >= 1.0 && labels >= 1.0 && chars >= 1.0) {
        return Err(Error::domain("penalty needs m >= 1 and cardinalities >= 1"));
    }
    let exponent = template.k1 as f64 * vocab.ln() + template.k2 as f64 * labels.ln() + template.k3 as f64 * chars.ln();
    Ok((2.0 * exponent / m).sqrt())
}

/// Orders templates by nondecreasing penalty (stable for ties).
pub fn sort_by_complexity(templates: &mut [FeatureTemplate], stats: &PenaltyStats) -> Result<()> {
    let mut keyed = Vec::with_capacity(templates.len());
    for t in templates.iter() {
        keyed.push((family_penalty(t, stats)?, *t));
    }
    keyed.sort_by(|a, b| a.0.total_cmp(&b.0));
    for (slot, (_, t)) in templates.iter_mut().zip(keyed) {
        *slot = t;
    }
    Ok(())
}

/// How [`FeatureBank`] treats patterns it has not indexed yet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractMode {
    /// Unseen patterns are dropped.
    Frozen,
    /// Unseen patterns get fresh columns.
    Grow,
}

/// Indexed union of feature families.
#[derive(Debug, Clone)]
pub struct FeatureBank {
    templates: Vec<FeatureTemplate>,
    atoms: Vec<(Atom, u32)>,
    index: HashMap<String, u32>,
    patterns: Vec<String>,
    family_of: Vec<u32>,
    frozen: bool,
}

impl FeatureBank {
    /// Families keep the given order: family `k` is `templates[k]`.
    pub fn new(templates: Vec<FeatureTemplate>) -> Result<Self> {
        for (i, t) in templates.iter().enumerate() {
            if t.k1 + t.k2 + t.k3 == 0 {
                return Err(Error::domain(format!("template {i} is empty")));
            }
            if templates[..i].contains(t) {
                return Err(Error::domain(format!("template {t} listed twice")));
            }
        }
        let atoms = templates.iter().enumerate().flat_map(|(k, t)| t.atoms().into_iter().map(move |a| (a, k as u32))).collect();
        Ok(Self { templates, atoms, index: HashMap::new(), patterns: Vec::new(), family_of: Vec::new(), frozen: false })
    }

    /// Families reordered by nondecreasing penalty under `stats`.
    pub fn with_stats(mut templates: Vec<FeatureTemplate>, stats: &PenaltyStats) -> Result<Self> {
        sort_by_complexity(&mut templates, stats)?;
        Self::new(templates)
    }

    pub fn templates(&self) -> &[FeatureTemplate] {
        &self.templates
    }

    pub fn num_families(&self) -> usize {
        self.templates.len()
    }

    pub fn num_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Atoms per family.
    pub fn family_atom_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.templates.len()];
        for &(_, k) in &self.atoms {
            counts[k as usize] += 1;
        }
        counts
    }

    /// Dimension `N`.
    pub fn dimension(&self) -> usize {
        self.patterns.len()
    }

    pub fn family_of(&self, column: u32) -> usize {
        self.family_of[column as usize] as usize
    }

    pub fn families(&self) -> &[u32] {
        &self.family_of
    }

    pub fn pattern(&self, column: u32) -> Option<&str> {
        self.patterns.get(column as usize).map(String::as_str)
    }

    pub fn column(&self, pattern: &str) -> Option<u32> {
        self.index.get(pattern).copied()
    }

    /// Largest label order of any family; windows longer than this are
    /// rejected by [`FeatureBank::extract`].
    pub fn max_tag_order(&self) -> usize {
        self.templates.iter().map(|t| t.k2).max().unwrap_or(0)
    }

    /// Smallest usable Markov order for this bank.
    pub fn markov_order(&self) -> usize {
        self.max_tag_order().max(1)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    fn check_window(&self, x: &TokenSequence, z: &LabelWindow, s: usize) -> Result<()> {
        if s < 1 || s > x.len() {
            return Err(Error::domain(format!("position {s} outside [1, {}]", x.len())));
        }
        if z.len() > self.max_tag_order().max(1) {
            return Err(Error::domain(format!("window of length {} exceeds template order {}", z.len(), self.max_tag_order())));
        }
        if z.len() > s {
            return Err(Error::domain(format!("window of length {} at position {s} reaches before the sequence start", z.len())));
        }
        Ok(())
    }

    /// `ψ̃(x, z, s)` without indexing new patterns.
    pub fn extract(&self, x: &TokenSequence, z: &LabelWindow, s: usize) -> Result<SparseVec> {
        self.check_window(x, z, s)?;
        let mut pairs = Vec::with_capacity(self.atoms.len());
        for (atom, _) in &self.atoms {
            if let Some(key) = self.pattern_key(atom, x, z, s) {
                if let Some(&c) = self.index.get(&key) {
                    pairs.push((c, 1.0));
                }
            }
        }
        Ok(SparseVec::from_pairs(pairs))
    }

    /// `ψ̃(x, z, s)`, assigning fresh columns to unseen patterns.
    pub fn extract_grow(&mut self, x: &TokenSequence, z: &LabelWindow, s: usize) -> Result<SparseVec> {
        if self.frozen {
            return Err(Error::domain("feature bank is frozen"));
        }
        self.check_window(x, z, s)?;
        let mut pairs = Vec::with_capacity(self.atoms.len());
        for i in 0..self.atoms.len() {
            let (atom, family) = self.atoms[i];
            if let Some(key) = self.pattern_key(&atom, x, z, s) {
                let c = match self.index.get(&key) {
                    Some(&c) => c,
                    None => {
                        let c = u32::try_from(self.patterns.len())
                            .ok()
                            .filter(|&c| c != NO_COLUMN)
                            .ok_or_else(|| Error::domain("feature dimension overflow"))?;
                        self.index.insert(key.clone(), c);
                        self.patterns.push(key);
                        self.family_of.push(family);
                        c
                    }
                };
                pairs.push((c, 1.0));
            }
        }
        Ok(SparseVec::from_pairs(pairs))
    }

    /// Indexes every pattern fired along the gold labeling of each example.
    pub fn grow_from(&mut self, data: &[LabeledSequence]) -> Result<()> {
        let order = self.markov_order();
        for seq in data {
            for s in 1..=seq.len() {
                let z = window_at(seq.labels(), s, order)?;
                self.extract_grow(seq.tokens(), &z, s)?;
            }
        }
        Ok(())
    }

    fn pattern_key(&self, atom: &Atom, x: &TokenSequence, z: &LabelWindow, s: usize) -> Option<String> {
        let mut key = atom.input_key(x, s)?;
        push_tags(&mut key, z.suffix(atom.tag_order.min(s)));
        Some(key)
    }

    /// Precomputes the columns fired at every position for every label
    /// window, for an alphabet of `r` labels and Markov order `p`.
    pub fn compile(&self, x: &TokenSequence, r: usize, p: usize) -> Result<CompiledSequence> {
        if p < self.max_tag_order() {
            return Err(Error::domain(format!("markov order {p} below template label order {}", self.max_tag_order())));
        }
        if p == 0 || r == 0 {
            return Err(Error::domain("markov order and alphabet size must be positive"));
        }
        let l = x.len();
        let mut offsets = Vec::with_capacity(l * self.atoms.len() + 1);
        let mut window_lens = Vec::with_capacity(l * self.atoms.len());
        let mut cols = Vec::new();
        for s in 1..=l {
            for (atom, _) in &self.atoms {
                let wlen = atom.tag_order.min(s);
                offsets.push(cols.len() as u32);
                window_lens.push(wlen as u8);
                let count = r.pow(wlen as u32);
                match atom.input_key(x, s) {
                    None => cols.extend(std::iter::repeat_n(NO_COLUMN, count)),
                    Some(base) => {
                        for code in 0..count {
                            let mut key = base.clone();
                            push_tags(&mut key, &crate::types::decode_window(code, wlen, r));
                            cols.push(self.index.get(&key).copied().unwrap_or(NO_COLUMN));
                        }
                    }
                }
            }
        }
        offsets.push(cols.len() as u32);
        Ok(CompiledSequence { len: l, r, p, atoms: self.atoms.len(), offsets, window_lens, cols })
    }

    /// `Ψ(x, y) = Σ_s ψ̃(x, y_{s-p+1..s}, s)` in frozen mode.
    pub fn global_features(&self, x: &TokenSequence, y: &[Label]) -> Result<SparseVec> {
        if x.len() != y.len() {
            return Err(Error::domain(format!("{} labels for {} tokens", y.len(), x.len())));
        }
        let order = self.markov_order();
        let mut pairs = Vec::new();
        for s in 1..=x.len() {
            pairs.extend(self.extract(x, &window_at(y, s, order)?, s)?.iter());
        }
        Ok(SparseVec::from_pairs(pairs))
    }

    /// Serialized bank, as written by [`FeatureBank::write_to`].
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{BANK_MAGIC}\t{BANK_VERSION}");
        let _ = writeln!(out, "dimension\t{}", self.dimension());
        let _ = writeln!(out, "templates\t{}", self.templates.len());
        for (k, t) in self.templates.iter().enumerate() {
            let _ = writeln!(out, "template\t{k}\t{}\t{}\t{}", t.k1, t.k2, t.k3);
        }
        for (c, pattern) in self.patterns.iter().enumerate() {
            let _ = writeln!(out, "{}\t{c}\t{}", escape(pattern), self.family_of[c]);
        }
        out
    }

    /// Hex SHA-256 of [`FeatureBank::to_text`].
    pub fn content_hash(&self) -> String {
        format!("{:x}", Sha256::digest(self.to_text().as_bytes()))
    }

    pub fn write_to(&self, path: &Path) -> Result<()> {
        let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        file.write_all(self.to_text().as_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Reads a bank written by [`FeatureBank::write_to`]. The result is frozen.
    pub fn read_from(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let reader = std::io::BufReader::new(file);
        let mut lines = Vec::new();
        for line in reader.lines() {
            lines.push(line.map_err(|e| Error::io(path, e))?);
        }
        Self::parse(path, &lines)
    }

    fn parse(path: &Path, lines: &[String]) -> Result<Self> {
        let parse_err = |line: usize, msg: String| Error::Parse { path: path.to_path_buf(), line, msg };
        let header: Vec<&str> = lines.first().map(|l| l.split('\t').collect()).unwrap_or_default();
        if header.first() != Some(&BANK_MAGIC) {
            return Err(Error::Format(format!("{} is not a feature bank", path.display())));
        }
        if header.get(1) != Some(&BANK_VERSION.to_string().as_str()) {
            return Err(Error::Format(format!("unsupported feature bank version {:?}", header.get(1))));
        }
        let field = |i: usize, name: &str| -> Result<usize> {
            let line = lines.get(i).ok_or_else(|| parse_err(i + 1, format!("missing {name}")))?;
            let (key, value) = line.split_once('\t').ok_or_else(|| parse_err(i + 1, format!("expected {name}")))?;
            if key != name {
                return Err(parse_err(i + 1, format!("expected {name}, found {key}")));
            }
            value.parse().map_err(|_| parse_err(i + 1, format!("bad {name} {value:?}")))
        };
        let dimension = field(1, "dimension")?;
        let n_templates = field(2, "templates")?;
        let mut templates = Vec::with_capacity(n_templates);
        for k in 0..n_templates {
            let i = 3 + k;
            let line = lines.get(i).ok_or_else(|| parse_err(i + 1, "missing template".into()))?;
            let f: Vec<&str> = line.split('\t').collect();
            let nums: Option<Vec<usize>> = f.get(1..5).map(|v| v.iter().filter_map(|s| s.parse().ok()).collect());
            match (f.first(), nums) {
                (Some(&"template"), Some(n)) if n.len() == 4 && n[0] == k => templates.push(FeatureTemplate::new(n[1], n[2], n[3])?),
                _ => return Err(parse_err(i + 1, format!("bad template line {line:?}"))),
            }
        }
        let mut bank = Self::new(templates)?;
        let body = &lines[3 + n_templates..];
        if body.len() != dimension {
            return Err(Error::Format(format!("feature bank declares {dimension} columns but lists {}", body.len())));
        }
        for (c, line) in body.iter().enumerate() {
            let lineno = 4 + n_templates + c;
            let mut parts = line.rsplitn(3, '\t');
            let family = parts.next().and_then(|s| s.parse::<u32>().ok());
            let column = parts.next().and_then(|s| s.parse::<usize>().ok());
            let pattern = parts.next();
            match (pattern, column, family) {
                (Some(p), Some(col), Some(fam)) if col == c && (fam as usize) < bank.num_families() => {
                    let p = unescape(p);
                    if bank.index.insert(p.clone(), c as u32).is_some() {
                        return Err(parse_err(lineno, "duplicate pattern".into()));
                    }
                    bank.patterns.push(p);
                    bank.family_of.push(fam);
                }
                _ => return Err(parse_err(lineno, format!("bad column line {line:?}"))),
            }
        }
        bank.frozen = true;
        Ok(bank)
    }
}

fn escape(s: &str) -> String {
    s.replace('\\', "\\\\").replace('\t', "\\t").replace('\n', "\\n")
}

fn unescape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c == '\\' {
            match chars.next() {
                Some('t') => out.push('\t'),
                Some('n') => out.push('\n'),
                Some(other) => out.push(other),
                None => out.push('\\'),
            }
        } else {
            out.push(c);
        }
    }
    out
}

/// `ψ̃(x, z, s)` in the requested mode.
pub fn extract_position(x: &TokenSequence, z: &LabelWindow, s: usize, bank: &mut FeatureBank, mode: ExtractMode) -> Result<SparseVec> {
    match mode {
        ExtractMode::Frozen => bank.extract(x, z, s),
        ExtractMode::Grow => bank.extract_grow(x, z, s),
    }
}

/// Per-sequence lookup table of fired columns for every `(s, z)`.
///
/// Window codes follow [`crate::types::encode_window`]: at position `s` a
/// window has `min(s, p)` labels.
#[derive(Debug, Clone)]
pub struct CompiledSequence {
    len: usize,
    r: usize,
    p: usize,
    atoms: usize,
    offsets: Vec<u32>,
    window_lens: Vec<u8>,
    cols: Vec<u32>,
}

impl CompiledSequence {
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

    /// Number of label windows at 1-based position `s`.
    pub fn windows_at(&self, s: usize) -> usize {
        self.r.pow(s.min(self.p) as u32)
    }

    /// Columns fired at position `s` by the window with code `zcode`.
    pub fn columns(&self, s: usize, zcode: usize) -> impl Iterator<Item = u32> + '_ {
        let base = (s - 1) * self.atoms;
        (base..base + self.atoms).filter_map(move |slot| {
            let wlen = self.window_lens[slot] as u32;
            let off = self.offsets[slot] as usize;
            let c = self.cols[off + zcode % self.r.pow(wlen)];
            (c != NO_COLUMN).then_some(c)
        })
    }

    pub fn score(&self, s: usize, zcode: usize, weights: &[f64]) -> f64 {
        self.columns(s, zcode).map(|c| weights[c as usize]).sum()
    }

    /// Every column that can fire anywhere in the sequence, with repeats.
    pub fn all_columns(&self) -> impl Iterator<Item = u32> + '_ {
        self.cols.iter().copied().filter(|&c| c != NO_COLUMN)
    }

    pub fn features(&self, s: usize, zcode: usize) -> SparseVec {
        SparseVec::from_pairs(self.columns(s, zcode).map(|c| (c, 1.0)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::LabelAlphabet;
    use proptest::prelude::*;

    fn sentence() -> (TokenSequence, LabelAlphabet, Vec<Label>) {
        let x = TokenSequence::from_strs(&["The", "cat", "was", "surprisingly", "agile"]).unwrap();
        let alphabet = LabelAlphabet::from_labels(["DET", "NN", "VBD", "RB", "JJ"]).unwrap();
        (x, alphabet, vec![0, 1, 2, 3, 4])
    }

    #[test]
    fn pos_example_fires_trigram_tag_bigram_and_suffix() {
        let (x, alphabet, y) = sentence();
        let mut bank = FeatureBank::new(vec![FeatureTemplate::new(3, 2, 2).unwrap()]).unwrap();
        let s = 4;
        let z = window_at(&y, s, 2).unwrap();
        let v = bank.extract_grow(&x, &z, s).unwrap();
        assert!(v.iter().all(|(_, val)| val == 1.0));
        assert_eq!(v.nnz(), bank.num_atoms());
        let vbd = alphabet.index_of("VBD").unwrap();
        let rb = alphabet.index_of("RB").unwrap();
        // the (t=2, r=1) word split with the length-2 suffix
        let expected =
            format!("w2+1|y2|s2|p0{FIELD_SEP}was{FIELD_SEP}surprisingly{FIELD_SEP}agile{FIELD_SEP}ly{FIELD_SEP}{FIELD_SEP}{vbd},{rb}");
        let col = bank.column(&expected).expect("product feature indexed");
        assert_eq!(v.get(col), 1.0);
        bank.freeze();
        assert_eq!(bank.extract(&x, &z, s).unwrap(), v);
        assert_eq!(bank.extract(&x, &z, s).unwrap(), bank.extract(&x, &z, s).unwrap());
    }

    #[test]
    fn empty_template_list_extracts_nothing() {
        let (x, _, y) = sentence();
        let bank = FeatureBank::new(vec![]).unwrap();
        let z = window_at(&y, 2, 1).unwrap();
        assert!(bank.extract(&x, &z, 2).unwrap().is_empty());
    }

    #[test]
    fn window_longer_than_order_is_rejected() {
        let (x, _, y) = sentence();
        let bank = FeatureBank::new(vec![FeatureTemplate::new(1, 1, 0).unwrap()]).unwrap();
        let z = window_at(&y, 3, 2).unwrap();
        assert!(bank.extract(&x, &z, 3).is_err());
        let mut frozen = bank.clone();
        frozen.freeze();
        assert!(frozen.extract_grow(&x, &window_at(&y, 3, 1).unwrap(), 3).is_err());
    }

    #[test]
    fn global_features_single_position_and_repeats() {
        let templates = vec![FeatureTemplate::new(1, 1, 0).unwrap(), FeatureTemplate::new(0, 1, 0).unwrap()];
        let mut bank = FeatureBank::new(templates).unwrap();
        let x1 = TokenSequence::from_strs(&["a"]).unwrap();
        let x2 = TokenSequence::from_strs(&["a", "a"]).unwrap();
        let data = [LabeledSequence::new(x1.clone(), vec![0], 2).unwrap(), LabeledSequence::new(x2.clone(), vec![0, 0], 2).unwrap()];
        bank.grow_from(&data).unwrap();
        bank.freeze();
        let single = bank.global_features(&x1, &[0]).unwrap();
        assert_eq!(single, bank.extract(&x1, &LabelWindow::new(vec![0]), 1).unwrap());
        // tag-unigram column fires at both positions; word columns differ by
        // right context only under k1=1 split (0,1), which sees "a" then EOS.
        let both = bank.global_features(&x2, &[0, 0]).unwrap();
        let tag_col = bank.column(&format!("w0+0|y1|s0|p0{FIELD_SEP}{FIELD_SEP}{FIELD_SEP}0")).unwrap();
        assert_eq!(both.get(tag_col), 2.0);
        let word_col = bank.column(&format!("w1+0|y1|s0|p0{FIELD_SEP}a{FIELD_SEP}{FIELD_SEP}{FIELD_SEP}0")).unwrap();
        assert_eq!(both.get(word_col), 2.0);
        assert!(bank.global_features(&x2, &[0]).is_err());
    }

    #[test]
    fn penalty_examples() {
        let stats = |m, v, d, c| PenaltyStats { sample_size: m, vocab: v, labels: d, chars: c };
        // zero orders give zero even though the template itself is invalid
        let zero = FeatureTemplate { k1: 0, k2: 0, k3: 0 };
        assert_eq!(family_penalty(&zero, &stats(10, 5, 5, 5)).unwrap(), 0.0);
        let t = FeatureTemplate::new(1, 0, 0).unwrap();
        let got = penalty_value(&t, 2.0, std::f64::consts::E, 1.0, 1.0).unwrap();
        assert!((got - 1.0).abs() < 1e-15);
        let basque = family_penalty(&FeatureTemplate::new(2, 1, 0).unwrap(), &stats(121_443, 10_000, 16, 30)).unwrap();
        let expected = (2.0 * (2.0 * 10_000f64.ln() + 16f64.ln()) / 121_443.0).sqrt();
        assert!((basque - expected).abs() < 1e-15);
        assert!((basque - 0.018_682_187_839_137_734).abs() < 1e-15);
        assert!(family_penalty(&t, &stats(0, 3, 1, 1)).is_err());
    }

    #[test]
    fn bank_text_roundtrip_preserves_columns() {
        let (x, _, y) = sentence();
        let mut bank = FeatureBank::new(FeatureTemplate::parse_list("1,1,0;0,2,0;0,1,2").unwrap()).unwrap();
        let data = [LabeledSequence::new(x.clone(), y.clone(), 5).unwrap()];
        bank.grow_from(&data).unwrap();
        bank.freeze();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bank.tsv");
        bank.write_to(&path).unwrap();
        let back = FeatureBank::read_from(&path).unwrap();
        assert_eq!(back.to_text(), bank.to_text());
        assert_eq!(back.content_hash(), bank.content_hash());
        assert_eq!(back.global_features(&x, &y).unwrap(), bank.global_features(&x, &y).unwrap());

        std::fs::write(&path, "vstruct-feature-bank\t99\n").unwrap();
        assert!(matches!(FeatureBank::read_from(&path), Err(Error::Format(_))));
    }

    #[test]
    fn parse_list_rejects_bad_input() {
        assert!(FeatureTemplate::parse_list("1,1").is_err());
        assert!(FeatureTemplate::parse_list("0,0,0").is_err());
        assert!(FeatureTemplate::parse_list("1,1,0;1,1,0").is_err());
        assert_eq!(FeatureTemplate::parse_list("1,1,0; 0,2,0").unwrap().len(), 2);
    }

    #[test]
    fn atoms_enumerate_all_splits() {
        let t = FeatureTemplate::new(2, 1, 1).unwrap();
        assert_eq!(t.atoms().len(), 3 * 2);
        assert!(t.atoms().iter().all(|a| a.word_left + a.word_right == 2 && a.suffix + a.prefix == 1));
    }

    fn word() -> impl Strategy<Value = String> {
        prop::sample::select(vec!["a", "bb", "ccc", "dad", "e"]).prop_map(str::to_owned)
    }

    proptest! {
        #[test]
        fn global_features_is_sum_of_positions(
            tokens in prop::collection::vec(word(), 1..6),
            seed_labels in prop::collection::vec(0usize..3, 6),
        ) {
            let l = tokens.len();
            let y: Vec<Label> = seed_labels[..l].to_vec();
            let x = TokenSequence::new(tokens).unwrap();
            let templates = FeatureTemplate::parse_list("1,1,0;0,2,0;1,2,1").unwrap();
            let mut bank = FeatureBank::new(templates).unwrap();
            bank.grow_from(&[LabeledSequence::new(x.clone(), y.clone(), 3).unwrap()]).unwrap();
            bank.freeze();
            let global = bank.global_features(&x, &y).unwrap();
            // position-wise oracle with a dense accumulator
            let mut dense = vec![0.0; bank.dimension()];
            for s in 1..=l {
                let start = s.saturating_sub(2);
                let z = LabelWindow::new(y[start..s].to_vec());
                for (c, v) in bank.extract(&x, &z, s).unwrap().iter() {
                    dense[c as usize] += v;
                }
            }
            prop_assert_eq!(&global, &SparseVec::from_dense(&dense));
            prop_assert!(global.nnz() <= l * bank.num_atoms());

            let compiled = bank.compile(&x, 3, 2).unwrap();
            for s in 1..=l {
                let start = s.saturating_sub(2);
                let z = LabelWindow::new(y[start..s].to_vec());
                prop_assert_eq!(compiled.features(s, z.code(3)), bank.extract(&x, &z, s).unwrap());
            }
        }

        #[test]
        fn penalty_monotone(k1 in 0usize..4, k2 in 0usize..4, k3 in 0usize..4, m in 1usize..1000) {
            let stats = PenaltyStats { sample_size: m, vocab: 50, labels: 7, chars: 20 };
            let base = family_penalty(&FeatureTemplate { k1, k2, k3 }, &stats).unwrap();
            for t in [FeatureTemplate { k1: k1 + 1, k2, k3 }, FeatureTemplate { k1, k2: k2 + 1, k3 }, FeatureTemplate { k1, k2, k3: k3 + 1 }] {
                prop_assert!(family_penalty(&t, &stats).unwrap() >= base);
            }
            let bigger = PenaltyStats { sample_size: m + 1, ..stats };
            let next = family_penalty(&FeatureTemplate { k1, k2, k3 }, &bigger).unwrap();
            prop_assert!(next < base || base == 0.0);
        }
    }
}
