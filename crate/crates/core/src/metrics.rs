//! Corpus-level BLEU and NIST, and greedy evaluation of a trained model.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::decoder::{generate, Strategy};
use crate::model::Model;
use crate::pipeline::{inference_context, DialogPair, Pipeline};
use crate::tensor::TensorError;
use crate::text::Vocabulary;

/// Highest n-gram order NIST counts.
pub const NIST_ORDER: usize = 5;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("empty corpus")]
    Empty,
    #[error("{candidates} candidates but {references} references")]
    CountMismatch { candidates: usize, references: usize },
    #[error("BLEU order must be 1..=4, got {0}")]
    Order(usize),
}

fn check<S>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<(), MetricError> {
    if candidates.len() != references.len() {
        return Err(MetricError::CountMismatch { candidates: candidates.len(), references: references.len() });
    }
    if candidates.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut out = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *out.entry(w.iter().map(AsRef::as_ref).collect()).or_insert(0) += 1;
        }
    }
    out
}

/// Corpus BLEU with one reference per candidate, uniform weights over orders
/// `1..=n`, clipped counts and the brevity penalty. No smoothing: any order with no
/// matches gives 0.
pub fn bleu_n<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>], n: usize) -> Result<f64, MetricError> {
    check(candidates, references)?;
    if !(1..=4).contains(&n) {
        return Err(MetricError::Order(n));
    }
    let mut log_sum = 0.0;
    for order in 1..=n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (c, r) in candidates.iter().zip(references) {
            let cand = ngram_counts(c, order);
            let refs = ngram_counts(r, order);
            matched += cand.iter().map(|(g, &k)| k.min(refs.get(g).copied().unwrap_or(0))).sum::<usize>();
            total += cand.values().sum::<usize>();
        }
        if matched == 0 {
            return Ok(0.0);
        }
        log_sum += (matched as f64 / total as f64).ln();
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    let bp = if c > r { 1.0 } else { (1.0 - r as f64 / c as f64).exp() };
    Ok(bp * (log_sum / n as f64).exp())
}

/// Corpus NIST up to order 5. Information weights come from the reference side:
/// `log2(count(w1..w(n-1)) / count(w1..wn))`, with the total reference length as
/// the unigram prefix count. Orders that no candidate reaches contribute nothing.
pub fn nist<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<f64, MetricError> {
    check(candidates, references)?;
    let ref_words: usize = references.iter().map(Vec::len).sum();
    let mut freq: HashMap<Vec<&str>, usize> = HashMap::new();
    for r in references {
        for order in 1..=NIST_ORDER {
            for (g, k) in ngram_counts(r, order) {
                *freq.entry(g).or_insert(0) += k;
            }
        }
    }
    let info = |g: &[&str]| -> f64 {
        let prefix = if g.len() == 1 { ref_words } else { freq[&g[..g.len() - 1]] };
        (prefix as f64 / freq[g] as f64).log2()
    };
    let mut score = 0.0;
    for order in 1..=NIST_ORDER {
        let (mut num, mut den) = (0.0, 0usize);
        for (c, r) in candidates.iter().zip(references) {
            let cand = ngram_counts(c, order);
            let refs = ngram_counts(r, order);
            for (g, &k) in &cand {
                let hit = k.min(refs.get(g).copied().unwrap_or(0));
                if hit > 0 {
                    num += info(g) * hit as f64;
                }
            }
            den += cand.values().sum::<usize>();
        }
        if den > 0 {
            score += num / den as f64;
        }
    }
    let sys: usize = candidates.iter().map(Vec::len).sum();
    Ok(score * nist_brevity(sys as f64, ref_words as f64))
}

/// `exp(β ln²(min(sys/ref, 1)))` with β chosen so a 2/3 length ratio scores 0.5.
fn nist_brevity(sys: f64, reference: f64) -> f64 {
    let ratio = if reference > 0.0 { sys / reference } else { 0.0 };
    if ratio <= 0.0 {
        0.0
    } else if ratio >= 1.0 {
        1.0
    } else {
        let beta = 0.5f64.ln() / 1.5f64.ln().powi(2);
        (beta * ratio.ln().powi(2)).exp()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu1: f64,
    pub bleu2: f64,
    pub bleu3: f64,
    pub bleu4: f64,
    pub nist: f64,
    pub exact_match: f64,
}

impl MetricsReport {
    pub fn from_tokens<S: AsRef<str>>(candidates: &[Vec<S>], references: &[Vec<S>]) -> Result<Self, MetricError> {
        let exact = candidates
            .iter()
            .zip(references)
            .filter(|(c, r)| c.len() == r.len() && c.iter().zip(r.iter()).all(|(a, b)| a.as_ref() == b.as_ref()))
            .count();
        Ok(Self {
            bleu1: bleu_n(candidates, references, 1)?,
            bleu2: bleu_n(candidates, references, 2)?,
            bleu3: bleu_n(candidates, references, 3)?,
            bleu4: bleu_n(candidates, references, 4)?,
            nist: nist(candidates, references)?,
            exact_match: exact as f64 / candidates.len() as f64,
        })
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Greedy responses for each pair, as token strings.
pub fn generate_responses(
    model: &Model,
    vocab: &Vocabulary,
    pipeline: &Pipeline,
    pairs: &[DialogPair],
    max_len: usize,
) -> Result<Vec<Vec<String>>, TensorError> {
    pairs
        .par_iter()
        .map(|pair| {
            let (inputs, _) = pipeline.context_inputs(vocab, &pair.context);
            let (ctx, _, _) = inference_context(model, &inputs)?;
            let ids = generate(model, &ctx, max_len, Strategy::Greedy)?;
            Ok(ids.iter().map(|&i| vocab.token(i).to_string()).collect())
        })
        .collect()
}

/// Greedy-generates every response and scores it against the ground truth.
pub fn evaluate(
    model: &Model,
    vocab: &Vocabulary,
    pipeline: &Pipeline,
    pairs: &[DialogPair],
    max_len: usize,
) -> Result<MetricsReport, EvalError> {
    let candidates = generate_responses(model, vocab, pipeline, pairs, max_len)?;
    let references: Vec<Vec<String>> = pairs.iter().map(|p| p.response.clone()).collect();
    Ok(MetricsReport::from_tokens(&candidates, &references)?)
}
