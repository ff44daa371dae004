//! Corpus BLEU, nearest-utterance matching and classification accuracy.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::corpus::Utterance;
use crate::error::{Error, Result};
use crate::tokenizer::tokenize;

pub const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BleuReport {
    /// 0–100.
    pub score: f64,
    /// Per-order precision after smoothing; 0 for orders with no n-grams.
    pub precisions: [f64; MAX_ORDER],
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

fn ngram_counts<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts
                .entry(w.iter().map(|t| t.as_ref()).collect::<Vec<_>>())
                .or_insert(0) += 1;
        }
    }
    counts
}

/// Corpus-level BLEU over pre-tokenized sentences, one reference each.
///
/// Clipped n-gram matches and totals are summed over the corpus for orders
/// 1–4. An order with matches = 0 but totals > 0 gets precision
/// `1 / (2^k · totals)`, where `k` counts the zero-match orders so far.
/// Orders with totals = 0 are left out of the geometric mean.
pub fn corpus_bleu<H, R>(hypotheses: &[H], references: &[R]) -> Result<BleuReport>
where
    H: AsRef<[String]>,
    R: AsRef<[String]>,
{
    if hypotheses.len() != references.len() {
        return Err(Error::validation(format!(
            "{} hypotheses but {} references",
            hypotheses.len(),
            references.len()
        )));
    }
    if hypotheses.is_empty() {
        return Err(Error::validation("BLEU of an empty corpus is undefined"));
    }

    let mut matches = [0usize; MAX_ORDER];
    let mut totals = [0usize; MAX_ORDER];
    let (mut hyp_len, mut ref_len) = (0, 0);
    for (h, r) in hypotheses.iter().zip(references) {
        let (h, r) = (h.as_ref(), r.as_ref());
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=MAX_ORDER {
            let hc = ngram_counts(h, n);
            let rc = ngram_counts(r, n);
            for (gram, c) in &hc {
                matches[n - 1] += (*c).min(rc.get(gram).copied().unwrap_or(0));
            }
            totals[n - 1] += h.len().saturating_sub(n - 1);
        }
    }

    let mut precisions = [0.0; MAX_ORDER];
    let mut log_sum = 0.0;
    let mut used = 0;
    let mut smooth = 1.0;
    for n in 0..MAX_ORDER {
        if totals[n] == 0 {
            continue;
        }
        let p = if matches[n] == 0 {
            smooth *= 2.0;
            1.0 / (smooth * totals[n] as f64)
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        precisions[n] = p;
        log_sum += p.ln();
        used += 1;
    }

    let brevity_penalty = if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let geo = if used == 0 {
        1.0
    } else {
        (log_sum / used as f64).exp()
    };
    let score = (brevity_penalty * geo * 100.0).clamp(0.0, 100.0);

    Ok(BleuReport {
        score,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hyp_len,
        ref_len,
    })
}

/// Token-level Levenshtein distance.
pub fn edit_distance<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x.as_ref() != y.as_ref());
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Match<'a> {
    pub utterance: &'a Utterance,
    pub distance: usize,
}

/// Nearest in-corpus utterance to `generated` by token edit distance over
/// normalized text; ties go to the smallest id. `None` only when the
/// dictionary has no in-corpus entries.
pub fn nearest_utterance<'a>(generated: &str, dict: &'a [Utterance]) -> Option<Match<'a>> {
    let gen = tokenize(generated);
    dict.iter()
        .filter(|u| u.in_corpus)
        .map(|u| Match {
            utterance: u,
            distance: edit_distance(&gen, &tokenize(&u.surface)),
        })
        .min_by(|a, b| {
            a.distance
                .cmp(&b.distance)
                .then_with(|| a.utterance.id.cmp(&b.utterance.id))
        })
}

pub fn classify_output(generated: &str, dict: &[Utterance]) -> Result<String> {
    nearest_utterance(generated, dict)
        .map(|m| m.utterance.id.clone())
        .ok_or_else(|| Error::validation("dictionary has no in-corpus utterances"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub n_correct: usize,
    pub n_total: usize,
    pub accuracy: f64,
    /// gold id → predicted id → count.
    pub confusion: BTreeMap<String, BTreeMap<String, usize>>,
}

pub fn accuracy<P, G>(predictions: &[P], golds: &[G]) -> Result<ClassificationReport>
where
    P: AsRef<str>,
    G: AsRef<str>,
{
    if predictions.len() != golds.len() {
        return Err(Error::validation(format!(
            "{} predictions but {} gold labels",
            predictions.len(),
            golds.len()
        )));
    }
    if golds.is_empty() {
        return Err(Error::validation("accuracy of an empty set is undefined"));
    }
    let mut confusion: BTreeMap<String, BTreeMap<String, usize>> = BTreeMap::new();
    let mut n_correct = 0;
    for (p, g) in predictions.iter().zip(golds) {
        let (p, g) = (p.as_ref(), g.as_ref());
        n_correct += usize::from(p == g);
        *confusion
            .entry(g.to_string())
            .or_default()
            .entry(p.to_string())
            .or_default() += 1;
    }
    Ok(ClassificationReport {
        n_correct,
        n_total: golds.len(),
        accuracy: n_correct as f64 / golds.len() as f64,
        confusion,
    })
}
