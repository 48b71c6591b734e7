// SPDX-License-Identifier: MIT OR Apache-2.0

//! Lexical-bias audit: TF-IDF bag of words, balanced logistic regression,
//! stratified k-fold cross-validation.

use std::collections::{BTreeMap, HashMap};
use std::io::BufRead;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize};

use crate::analysis::metrics::{compute_metrics, Metrics};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::store::Source;
use crate::training::solver::{balanced_sample_weights, solve_logistic, LogisticFit, SolverOptions, SparseRows};

pub const DEFAULT_MAX_FEATURES: usize = 5000;
pub const DEFAULT_FOLDS: usize = 5;
pub const DEFAULT_CV_SEED: u64 = 42;
pub const TOP_UNIGRAMS: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasExample {
    pub id: String,
    pub title: String,
    pub passage: String,
    /// Accepts `0`/`1` or `"contextual"`/`"parametric"`.
    #[serde(deserialize_with = "source_from_any")]
    pub label: Source,
}

fn source_from_any<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<Source, D::Error> {
    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Int(u8),
        Name(Source),
    }
    match Repr::deserialize(d)? {
        Repr::Int(v) => Source::from_label(v).ok_or_else(|| serde::de::Error::custom(format!("label {v} not in {{0, 1}}"))),
        Repr::Name(s) => Ok(s),
    }
}

/// Reads JSON lines, skipping blank lines. Empty passages are rejected.
pub fn read_bias_examples<R: BufRead>(reader: R) -> Result<Vec<BiasExample>> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ex: BiasExample = serde_json::from_str(&line)
            .map_err(|e| Error::Validation(format!("line {}: {e}", i + 1)))?;
        if ex.passage.is_empty() {
            return Err(Error::Validation(format!("line {}: empty passage for {}", i + 1, ex.id)));
        }
        out.push(ex);
    }
    Ok(out)
}

/// Lowercase, split on non-alphanumeric characters, drop tokens shorter than two characters.
pub fn tokenize(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| t.chars().count() >= 2)
        .map(str::to_owned)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TfidfConfig {
    /// Longest n-gram, 1 or 2.
    pub ngram_max: usize,
    pub max_features: usize,
}

impl Default for TfidfConfig {
    fn default() -> Self {
        Self { ngram_max: 2, max_features: DEFAULT_MAX_FEATURES }
    }
}

/// Unigrams, then (when enabled) space-joined bigrams of adjacent tokens.
pub fn terms_of(text: &str, ngram_max: usize) -> Vec<String> {
    let toks = tokenize(text);
    let mut out = toks.clone();
    if ngram_max >= 2 {
        out.extend(toks.windows(2).map(|w| format!("{} {}", w[0], w[1])));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TfidfVocabulary {
    /// Sorted lexicographically; a term's index is its column.
    pub terms: Vec<String>,
    pub document_frequencies: Vec<usize>,
    pub n_docs: usize,
    pub config: TfidfConfig,
}

impl TfidfVocabulary {
    /// Keeps the `max_features` terms with the highest total count,
    /// ties broken lexicographically.
    pub fn fit<S: AsRef<str>>(corpus: &[S], config: TfidfConfig) -> Result<Self> {
        if corpus.is_empty() {
            return Err(Error::InsufficientData("TF-IDF needs a non-empty corpus".into()));
        }
        let mut counts: HashMap<String, (usize, usize)> = HashMap::new();
        for doc in corpus {
            let mut seen: HashMap<&str, ()> = HashMap::new();
            let terms = terms_of(doc.as_ref(), config.ngram_max);
            for t in &terms {
                let e = counts.entry(t.clone()).or_default();
                e.0 += 1;
                if seen.insert(t.as_str(), ()).is_none() {
                    e.1 += 1;
                }
            }
        }
        let mut ranked: Vec<(String, (usize, usize))> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1 .0.cmp(&a.1 .0).then_with(|| a.0.cmp(&b.0)));
        ranked.truncate(config.max_features);
        ranked.sort_by(|a, b| a.0.cmp(&b.0));
        let (terms, document_frequencies) = ranked.into_iter().map(|(t, (_, df))| (t, df)).unzip();
        Ok(Self { terms, document_frequencies, n_docs: corpus.len(), config })
    }

    pub fn len(&self) -> usize {
        self.terms.len()
    }

    pub fn is_empty(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn index_of(&self, term: &str) -> Option<usize> {
        self.terms.binary_search_by(|t| t.as_str().cmp(term)).ok()
    }

    /// `ln((1 + N) / (1 + df)) + 1`.
    pub fn idf(&self) -> Vec<f64> {
        let n = self.n_docs as f64;
        self.document_frequencies
            .iter()
            .map(|&df| ((1.0 + n) / (1.0 + df as f64)).ln() + 1.0)
            .collect()
    }

    /// Raw-count tf times idf, each row ℓ2-normalized. Out-of-vocabulary terms
    /// are dropped; a document with no known terms is an all-zero row.
    pub fn transform<S: AsRef<str>>(&self, corpus: &[S]) -> SparseRows {
        let idf = self.idf();
        let rows = corpus
            .iter()
            .map(|doc| {
                let mut tf: BTreeMap<u32, f64> = BTreeMap::new();
                for t in terms_of(doc.as_ref(), self.config.ngram_max) {
                    if let Some(j) = self.index_of(&t) {
                        *tf.entry(j as u32).or_default() += 1.0;
                    }
                }
                let mut row: Vec<(u32, f64)> = tf.into_iter().map(|(j, c)| (j, c * idf[j as usize])).collect();
                let norm = row.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
                if norm > 0.0 {
                    row.iter_mut().for_each(|e| e.1 /= norm);
                }
                row
            })
            .collect();
        SparseRows { rows, cols: self.len() }
    }
}

/// Fits a vocabulary on `corpus` and returns it with the transformed matrix.
pub fn tfidf_features<S: AsRef<str>>(corpus: &[S], config: TfidfConfig) -> Result<(TfidfVocabulary, SparseRows)> {
    let vocab = TfidfVocabulary::fit(corpus, config)?;
    let x = vocab.transform(corpus);
    Ok((vocab, x))
}

/// Stratified fold index for each example: each class is shuffled and dealt
/// round-robin over the folds.
pub fn stratified_folds(labels: &[Source], k: usize, seed: u64) -> Result<Vec<usize>> {
    if k < 2 {
        return Err(Error::Fold(format!("need at least 2 folds, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fold = vec![0; labels.len()];
    for class in [Source::Contextual, Source::Parametric] {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        if idx.len() < k {
            return Err(Error::Fold(format!(
                "class {class:?} has {} examples, fewer than {k} folds",
                idx.len()
            )));
        }
        idx.shuffle(&mut rng);
        for (j, i) in idx.into_iter().enumerate() {
            fold[i] = j % k;
        }
    }
    Ok(fold)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub fold: usize,
    /// Binary F1 of the parametric class.
    pub f1: f64,
    pub macro_f1: f64,
    pub accuracy: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub vocabulary_size: usize,
}

struct FittedText {
    vocab: TfidfVocabulary,
    fit: LogisticFit,
}

fn fit_text(train: &[&BiasExample], config: TfidfConfig, opts: SolverOptions) -> Result<FittedText> {
    let passages: Vec<&str> = train.iter().map(|e| e.passage.as_str()).collect();
    let (vocab, x) = tfidf_features(&passages, config)?;
    let y: Vec<f64> = train.iter().map(|e| e.label.target()).collect();
    let pos = y.iter().filter(|v| **v > 0.5).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::DegenerateDataset("training folds hold a single class".into()));
    }
    let w = balanced_sample_weights(&y);
    let (fit, _) = solve_logistic(&x, &y, &w, opts);
    Ok(FittedText { vocab, fit })
}

fn predict(model: &FittedText, test: &[&BiasExample]) -> Vec<Source> {
    let passages: Vec<&str> = test.iter().map(|e| e.passage.as_str()).collect();
    let x = model.vocab.transform(&passages);
    (0..test.len())
        .map(|i| if model.fit.decision(&x, i) >= 0.0 { Source::Parametric } else { Source::Contextual })
        .collect()
}

fn fold_metrics(train: &[&BiasExample], test: &[&BiasExample], config: TfidfConfig, opts: SolverOptions) -> Result<(Metrics, usize)> {
    let model = fit_text(train, config, opts)?;
    let pred = predict(&model, test);
    let labels: Vec<Source> = test.iter().map(|e| e.label).collect();
    Ok((compute_metrics(&pred, &labels)?, model.vocab.len()))
}

/// Fits vocabulary and classifier on `train` only and scores `test`.
pub fn evaluate_fold(train: &[BiasExample], test: &[BiasExample], config: TfidfConfig) -> Result<FoldResult> {
    let tr: Vec<&BiasExample> = train.iter().collect();
    let te: Vec<&BiasExample> = test.iter().collect();
    let (m, v) = fold_metrics(&tr, &te, config, SolverOptions::default())?;
    Ok(FoldResult {
        fold: 0,
        f1: m.positive_f1(),
        macro_f1: m.macro_f1,
        accuracy: m.accuracy,
        n_train: tr.len(),
        n_test: te.len(),
        vocabulary_size: v,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightedTerm {
    pub term: String,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopUnigrams {
    /// Largest positive coefficients.
    pub parametric: Vec<WeightedTerm>,
    /// Most negative coefficients.
    pub contextual: Vec<WeightedTerm>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    pub k: usize,
    pub seed: u64,
    pub stratified: bool,
    pub n_examples: usize,
    pub folds: Vec<FoldResult>,
    pub mean_f1: f64,
    pub mean_macro_f1: f64,
    pub top_unigrams: TopUnigrams,
}

fn top_unigrams(model: &FittedText, n: usize) -> TopUnigrams {
    let mut uni: Vec<(&str, f64)> = model
        .vocab
        .terms
        .iter()
        .zip(&model.fit.w)
        .filter(|(t, _)| !t.contains(' '))
        .map(|(t, w)| (t.as_str(), *w))
        .collect();
    let take = |v: &[(&str, f64)]| {
        v.iter().take(n).map(|(t, c)| WeightedTerm { term: (*t).to_owned(), coefficient: *c }).collect()
    };
    uni.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    let parametric = take(&uni);
    uni.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(b.0)));
    let contextual = take(&uni);
    TopUnigrams { parametric, contextual }
}

pub fn cross_validate_bias(
    examples: &[BiasExample],
    k: usize,
    seed: u64,
    config: TfidfConfig,
    exec: Execution,
) -> Result<BiasReport> {
    let labels: Vec<Source> = examples.iter().map(|e| e.label).collect();
    let folds = stratified_folds(&labels, k, seed)?;
    let opts = SolverOptions::default();
    let results = exec.map_range(k, |f| -> Result<FoldResult> {
        let (test, train): (Vec<_>, Vec<_>) = examples.iter().zip(&folds).partition(|(_, &g)| g == f);
        let train: Vec<&BiasExample> = train.into_iter().map(|p| p.0).collect();
        let test: Vec<&BiasExample> = test.into_iter().map(|p| p.0).collect();
        let (m, v) = fold_metrics(&train, &test, config, opts)?;
        Ok(FoldResult {
            fold: f,
            f1: m.positive_f1(),
            macro_f1: m.macro_f1,
            accuracy: m.accuracy,
            n_train: train.len(),
            n_test: test.len(),
            vocabulary_size: v,
        })
    });
    let folds: Vec<FoldResult> = results.into_iter().collect::<Result<_>>()?;
    let mean = |f: fn(&FoldResult) -> f64| folds.iter().map(f).sum::<f64>() / folds.len() as f64;
    let (mean_f1, mean_macro_f1) = (mean(|r| r.f1), mean(|r| r.macro_f1));
    let all: Vec<&BiasExample> = examples.iter().collect();
    let full = fit_text(&all, config, opts)?;
    Ok(BiasReport {
        k,
        seed,
        stratified: true,
        n_examples: examples.len(),
        folds,
        mean_f1,
        mean_macro_f1,
        top_unigrams: top_unigrams(&full, TOP_UNIGRAMS),
    })
}
