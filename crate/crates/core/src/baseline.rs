//! Multinomial naive Bayes over bag-of-words English features.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::ParallelPair;
use crate::error::{Error, Result};
use crate::tokenizer::tokenize;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NaiveBayesModel {
    pub alpha: f64,
    /// Feature vocabulary, sorted.
    pub vocabulary: Vec<String>,
    pub class_log_priors: BTreeMap<String, f64>,
    /// Per class, log P(token | class) aligned with `vocabulary`.
    pub token_log_likelihoods: BTreeMap<String, Vec<f64>>,
}

impl NaiveBayesModel {
    /// Fits on the English side of `train_pairs`. Features are unigram
    /// counts of normalized tokens; the vocabulary is every token seen in
    /// training.
    pub fn fit(train_pairs: &[ParallelPair], alpha: f64) -> Result<Self> {
        if !(alpha > 0.0) || !alpha.is_finite() {
            return Err(Error::validation(format!(
                "alpha must be positive, got {alpha}"
            )));
        }
        if train_pairs.is_empty() {
            return Err(Error::validation(
                "naive Bayes needs at least one training pair",
            ));
        }
        let docs: Vec<(&str, Vec<String>)> = train_pairs
            .iter()
            .map(|p| (p.utterance_id.as_str(), tokenize(&p.english)))
            .collect();

        let mut vocabulary: Vec<String> =
            docs.iter().flat_map(|(_, t)| t.iter().cloned()).collect();
        vocabulary.sort();
        vocabulary.dedup();
        let index: BTreeMap<&str, usize> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i))
            .collect();

        let mut doc_counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut token_counts: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for (class, toks) in &docs {
            *doc_counts.entry(class).or_default() += 1;
            let row = token_counts
                .entry(class)
                .or_insert_with(|| vec![0.0; vocabulary.len()]);
            for t in toks {
                row[index[t.as_str()]] += 1.0;
            }
        }

        let n_docs = docs.len() as f64;
        let class_log_priors = doc_counts
            .iter()
            .map(|(c, &n)| (c.to_string(), (n as f64 / n_docs).ln()))
            .collect();
        let v = vocabulary.len() as f64;
        let token_log_likelihoods = token_counts
            .into_iter()
            .map(|(c, counts)| {
                let total: f64 = counts.iter().sum();
                let denom = (total + alpha * v).ln();
                let row = counts.iter().map(|&n| (n + alpha).ln() - denom).collect();
                (c.to_string(), row)
            })
            .collect();

        Ok(Self {
            alpha,
            vocabulary,
            class_log_priors,
            token_log_likelihoods,
        })
    }

    /// Joint log score per class; tokens outside the vocabulary are skipped.
    pub fn class_scores(&self, english: &str) -> BTreeMap<&str, f64> {
        let ids: Vec<usize> = tokenize(english)
            .iter()
            .filter_map(|t| self.vocabulary.binary_search(t).ok())
            .collect();
        self.class_log_priors
            .iter()
            .map(|(c, prior)| {
                let row = &self.token_log_likelihoods[c];
                (c.as_str(), prior + ids.iter().map(|&i| row[i]).sum::<f64>())
            })
            .collect()
    }

    /// Highest-scoring class; ties go to the smallest id.
    pub fn predict(&self, english: &str) -> String {
        let mut best: Option<(&str, f64)> = None;
        for (c, s) in self.class_scores(english) {
            // Classes arrive in ascending order, so only a strictly better
            // score replaces the incumbent.
            if best.map_or(true, |(_, b)| s > b) {
                best = Some((c, s));
            }
        }
        best.expect("fit guarantees at least one class")
            .0
            .to_string()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("model serializes")
    }
}
