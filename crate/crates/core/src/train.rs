//! Teacher-forced training with per-epoch dev BLEU and checkpoint selection.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::FoldPlan;
use crate::error::{Error, Result};
use crate::metrics::corpus_bleu;
use crate::model::Model;
use crate::numerics::AdamState;
use crate::rng;
use crate::tokenizer::SPECIAL_TOKENS;

use rand::seq::SliceRandom;

/// An encoded (source, `BOS … EOS` target) pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub src: Vec<usize>,
    pub tgt: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Selection {
    /// Keep the epoch with the highest dev BLEU, earliest on ties.
    BestDev,
    Last,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
    pub selection: Selection,
    /// Generated-token limit for dev decodes; `None` uses the model's
    /// `max_len`.
    pub max_decode_len: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            learning_rate: 1e-3,
            seed: 0,
            selection: Selection::BestDev,
            max_decode_len: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean batch loss over the epoch, with dropout active.
    pub train_loss: f64,
    pub dev_bleu: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub model: Model,
    pub trace: Vec<EpochStats>,
    /// 0 means the untrained initial model was kept.
    pub best_epoch: usize,
}

fn strip_specials(ids: &[usize]) -> Vec<String> {
    ids.iter()
        .filter(|&&i| i >= SPECIAL_TOKENS.len())
        .map(|i| i.to_string())
        .collect()
}

/// Corpus BLEU of greedy decodes against the targets, over token ids.
pub fn greedy_bleu(model: &Model, examples: &[Example], max_len: usize) -> Result<f64> {
    let mut hyps = Vec::with_capacity(examples.len());
    let mut refs = Vec::with_capacity(examples.len());
    for ex in examples {
        let out = model.greedy_decode(&ex.src, max_len)?;
        hyps.push(strip_specials(&out.ids));
        refs.push(strip_specials(&ex.tgt));
    }
    Ok(corpus_bleu(&hyps, &refs)?.score)
}

/// Mean teacher-forced loss in evaluation mode, weighted by target tokens.
pub fn evaluation_loss(model: &Model, examples: &[Example], batch_size: usize) -> Result<f64> {
    let mut total = 0.0;
    let mut tokens = 0usize;
    for chunk in examples.chunks(batch_size.max(1)) {
        let src: Vec<&[usize]> = chunk.iter().map(|e| e.src.as_slice()).collect();
        let tgt: Vec<&[usize]> = chunk.iter().map(|e| e.tgt.as_slice()).collect();
        let n: usize = chunk.iter().map(|e| e.tgt.len().saturating_sub(1)).sum();
        total += model.batch_loss(&src, &tgt)? * n as f64;
        tokens += n;
    }
    Ok(if tokens == 0 {
        0.0
    } else {
        total / tokens as f64
    })
}

/// Trains on `train`, scoring dev BLEU after every epoch.
pub fn fit(
    mut model: Model,
    train: &[Example],
    dev: &[Example],
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    if train.is_empty() {
        return Err(Error::validation("training set is empty"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::validation("batch_size must be positive"));
    }
    let mut adam = AdamState::new(cfg.learning_rate);
    let mut order_rng = rng::stream(cfg.seed, "train/order");
    let mut dropout_rng = rng::stream(cfg.seed, "train/dropout");
    let mut order: Vec<usize> = (0..train.len()).collect();

    let mut trace = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, Model)> = None;

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut order_rng);
        let mut loss_sum = 0.0;
        let mut batches = 0;
        for idx in order.chunks(cfg.batch_size) {
            let src: Vec<&[usize]> = idx.iter().map(|&i| train[i].src.as_slice()).collect();
            let tgt: Vec<&[usize]> = idx.iter().map(|&i| train[i].tgt.as_slice()).collect();
            loss_sum += model.accumulate_gradients(&src, &tgt, Some(&mut dropout_rng))?;
            batches += 1;
            adam.step(&mut model.params)?;
            model.params.zero_grad();
        }

        let dev_bleu = if dev.is_empty() {
            None
        } else {
            Some(greedy_bleu(
                &model,
                dev,
                cfg.max_decode_len.unwrap_or(model.config.max_len),
            )?)
        };
        trace.push(EpochStats {
            epoch,
            train_loss: loss_sum / batches as f64,
            dev_bleu,
        });

        if cfg.selection == Selection::BestDev {
            if let Some(score) = dev_bleu {
                if best.as_ref().map_or(true, |(b, _, _)| score > *b) {
                    best = Some((score, epoch, model.clone()));
                }
            }
        }
    }

    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => (model, cfg.epochs),
    };
    Ok(TrainedModel {
        model,
        trace,
        best_epoch,
    })
}

/// Trains one crossvalidation fold: fits on its train ids and selects on
/// its dev ids.
pub fn train(
    model: Model,
    examples: &BTreeMap<String, Example>,
    plan: &FoldPlan,
    fold_index: usize,
    cfg: &TrainConfig,
) -> Result<TrainedModel> {
    let fold = plan.fold(fold_index)?;
    let pick = |ids: &[String]| -> Result<Vec<Example>> {
        ids.iter()
            .map(|id| {
                examples.get(id).cloned().ok_or_else(|| {
                    Error::validation(format!("fold references unknown pair {id:?}"))
                })
            })
            .collect()
    };
    fit(model, &pick(&fold.train)?, &pick(&fold.dev)?, cfg)
}
