//! Corpus loading, sentence-level folds and label-noise injection.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::PenaltyStats;
use crate::rng::substream;
use crate::types::{LabelAlphabet, LabeledSequence, TokenSequence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    /// Ten tab-separated columns; word form in column 2, UPOS in column 4.
    Conllu,
    /// `token<TAB>label`, one token per line.
    TwoColumn,
}

impl FromStr for CorpusFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "conllu" => Ok(Self::Conllu),
            "two-column" => Ok(Self::TwoColumn),
            other => Err(Error::domain(format!("unknown corpus format `{other}`"))),
        }
    }
}

/// Dataset description: sentences, tokens, unique tokens, labels, plus the
/// character alphabet used by prefix/suffix families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub sentences: usize,
    pub tokens: usize,
    pub vocab: usize,
    pub chars: usize,
    pub labels: usize,
}

impl CorpusStats {
    pub fn compute(sentences: &[LabeledSequence], alphabet_size: usize) -> Self {
        let mut vocab = BTreeSet::new();
        let mut chars = BTreeSet::new();
        let mut tokens = 0;
        for s in sentences {
            tokens += s.len();
            for tok in s.tokens().tokens() {
                chars.extend(tok.chars());
                vocab.insert(tok.as_str());
            }
        }
        Self { sentences: sentences.len(), tokens, vocab: vocab.len(), chars: chars.len(), labels: alphabet_size }
    }

    /// Penalty inputs with `m` taken as the sentence count.
    pub fn penalty_stats(&self) -> PenaltyStats {
        PenaltyStats { sample_size: self.sentences, vocab: self.vocab.max(1), labels: self.labels.max(1), chars: self.chars.max(1) }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub sentences: Vec<LabeledSequence>,
    pub alphabet: LabelAlphabet,
    pub stats: CorpusStats,
}

impl Corpus {
    pub fn new(sentences: Vec<LabeledSequence>, alphabet: LabelAlphabet) -> Result<Self> {
        if sentences.is_empty() {
            return Err(Error::domain("empty corpus"));
        }
        let stats = CorpusStats::compute(&sentences, alphabet.len());
        Ok(Self { sentences, alphabet, stats })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// The sentences at `indices`, in that order.
    pub fn subset(&self, indices: &[usize]) -> Vec<LabeledSequence> {
        indices.iter().map(|&i| self.sentences[i].clone()).collect()
    }

    /// Serializes in `format`. CoNLL-U output fills the unused columns with `_`.
    pub fn to_text(&self, format: CorpusFormat) -> String {
        let mut out = String::new();
        for s in &self.sentences {
            for (i, (tok, &y)) in s.tokens().tokens().iter().zip(s.labels()).enumerate() {
                let label = self.alphabet.label(y).unwrap_or("_");
                match format {
                    CorpusFormat::TwoColumn => writeln!(out, "{tok}\t{label}"),
                    CorpusFormat::Conllu => writeln!(out, "{}\t{tok}\t_\t{label}\t_\t_\t_\t_\t_\t_", i + 1),
                }
                .expect("writing to a String");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_to(&self, path: &Path, format: CorpusFormat) -> Result<()> {
        std::fs::write(path, self.to_text(format)).map_err(|e| Error::io(path, e))
    }
}

pub fn load_corpus(path: &Path, format: CorpusFormat) -> Result<Corpus> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text, format, path)
}

/// Parses corpus text. `origin` only labels error messages.
pub fn parse_corpus(text: &str, format: CorpusFormat, origin: &Path) -> Result<Corpus> {
    parse_with_alphabet(text, format, origin, LabelAlphabet::new())
}

/// Like [`parse_corpus`] but starting from an existing alphabet, so label
/// indices agree with a trained model. New labels are appended.
pub fn parse_with_alphabet(text: &str, format: CorpusFormat, origin: &Path, mut alphabet: LabelAlphabet) -> Result<Corpus> {
    let parse_err = |line: usize, msg: String| Error::Parse { path: PathBuf::from(origin), line, msg };
    let mut raw: Vec<(Vec<String>, Vec<usize>)> = Vec::new();
    let mut tokens = Vec::new();
    let mut labels = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            if !tokens.is_empty() {
                raw.push((std::mem::take(&mut tokens), std::mem::take(&mut labels)));
            }
            continue;
        }
        let (form, tag) = match format {
            CorpusFormat::TwoColumn => {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 2 {
                    return Err(parse_err(lineno, format!("expected 2 tab-separated columns, found {}", cols.len())));
                }
                (cols[0], cols[1])
            }
            CorpusFormat::Conllu => {
                if line.starts_with('#') {
                    continue;
                }
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() != 10 {
                    return Err(parse_err(lineno, format!("expected 10 tab-separated columns, found {}", cols.len())));
                }
                let id = cols[0];
                if id.contains('-') || id.contains('.') {
                    continue;
                }
                if id.parse::<usize>().is_err() {
                    return Err(parse_err(lineno, format!("bad token id `{id}`")));
                }
                (cols[1], cols[3])
            }
        };
        if form.is_empty() || tag.is_empty() {
            return Err(parse_err(lineno, "empty token or label".into()));
        }
        tokens.push(form.to_string());
        labels.push(alphabet.intern(tag));
    }
    if !tokens.is_empty() {
        raw.push((tokens, labels));
    }
    if raw.is_empty() {
        return Err(parse_err(0, "corpus contains no sentences".into()));
    }
    let r = alphabet.len();
    let sentences = raw.into_iter().map(|(t, y)| LabeledSequence::new(TokenSequence::new(t)?, y, r)).collect::<Result<Vec<_>>>()?;
    Corpus::new(sentences, alphabet)
}

pub const NUM_FOLDS: usize = 5;

/// Random sentence-level partition into five folds. Run `i` validates on
/// fold `i`, tests on fold `i + 1 (mod 5)` and trains on the rest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    folds: Vec<Vec<usize>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldRun {
    pub train: Vec<usize>,
    pub validation: Vec<usize>,
    pub test: Vec<usize>,
}

impl FoldPlan {
    pub fn folds(&self) -> &[Vec<usize>] {
        &self.folds
    }

    pub fn validation_fold(run: usize) -> usize {
        run % NUM_FOLDS
    }

    pub fn test_fold(run: usize) -> usize {
        (run + 1) % NUM_FOLDS
    }

    pub fn run(&self, run: usize) -> FoldRun {
        let (v, t) = (Self::validation_fold(run), Self::test_fold(run));
        let mut train: Vec<usize> = (0..NUM_FOLDS).filter(|&k| k != v && k != t).flat_map(|k| self.folds[k].iter().copied()).collect();
        train.sort_unstable();
        FoldRun { train, validation: self.folds[v].clone(), test: self.folds[t].clone() }
    }
}

pub fn make_folds(num_sentences: usize, seed: u64) -> Result<FoldPlan> {
    if num_sentences < NUM_FOLDS {
        return Err(Error::domain(format!("{num_sentences} sentences cannot fill {NUM_FOLDS} folds")));
    }
    let mut order: Vec<usize> = (0..num_sentences).collect();
    order.shuffle(&mut substream(seed, "folds"));
    let mut folds = vec![Vec::new(); NUM_FOLDS];
    for (k, i) in order.into_iter().enumerate() {
        folds[k % NUM_FOLDS].push(i);
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(FoldPlan { folds })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub eligible: usize,
    pub flipped: usize,
    pub ineligible: usize,
}

/// Flips, with probability `rate`, the label of every token whose surface
/// form occurs at least `min_count` times in the whole corpus. The new
/// label is uniform over the other labels.
pub fn inject_noise(corpus: &Corpus, rate: f64, min_count: usize, seed: u64) -> Result<(Corpus, NoiseReport)> {
    if !(0.0..=1.0).contains(&rate) {
        return Err(Error::domain(format!("noise rate {rate} outside [0, 1]")));
    }
    let r = corpus.alphabet.len();
    if r < 2 {
        return Err(Error::domain("cannot flip labels over an alphabet of size 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for s in &corpus.sentences {
        for tok in s.tokens().tokens() {
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut rng = substream(seed, "noise");
    let mut report = NoiseReport { eligible: 0, flipped: 0, ineligible: 0 };
    let sentences = corpus
        .sentences
        .iter()
        .map(|s| {
            let mut labels = s.labels().to_vec();
            for (tok, y) in s.tokens().tokens().iter().zip(labels.iter_mut()) {
                if counts[tok.as_str()] < min_count {
                    report.ineligible += 1;
                    continue;
                }
                report.eligible += 1;
                if rng.gen::<f64>() < rate {
                    let shift = rng.gen_range(1..r);
                    *y = (*y + shift) % r;
                    report.flipped += 1;
                }
            }
            s.with_labels(labels)
        })
        .collect();
    Ok((Corpus::new(sentences, corpus.alphabet.clone())?, report))
}
