//! Crossvalidated experiments over the transformer and the naive-Bayes
//! baseline, report assembly, and the synthetic corpus generator.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::baseline::NaiveBayesModel;
use crate::corpus::{
    make_folds_with, ClassSizePolicy, Corpus, FoldPlan, ParallelPair, Source, Utterance,
};
use crate::error::{Error, Result, ResultExt};
use crate::metrics::{accuracy, corpus_bleu, nearest_utterance, BleuReport, ClassificationReport};
use crate::model::{Model, ModelConfig, SizePreset};
use crate::rng::{self, RngExt};
use crate::tokenizer::{build_vocab, tokenize, Side, Vocabulary};
use crate::train::{self, EpochStats, Example, TrainConfig};

use rand::seq::SliceRandom;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum System {
    Transformer,
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassificationMode {
    /// Greedy decode, then nearest dictionary surface by edit distance.
    GenerateThenMatch,
    /// Highest mean log-likelihood among all in-corpus surfaces.
    LikelihoodRanking,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dictionary_path: Option<PathBuf>,
    pub corpus_path: Option<PathBuf>,
    pub sizes: Vec<SizePreset>,
    pub train: TrainConfig,
    pub dropout: f64,
    pub seed: u64,
    pub mode: ClassificationMode,
    pub systems: BTreeSet<System>,
    pub alpha: f64,
    pub min_freq: usize,
    pub lenient_folds: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dictionary_path: None,
            corpus_path: None,
            sizes: vec![SizePreset::Small],
            train: TrainConfig::default(),
            dropout: 0.1,
            seed: 0,
            mode: ClassificationMode::GenerateThenMatch,
            systems: [System::Transformer, System::Baseline]
                .into_iter()
                .collect(),
            alpha: 1.0,
            min_freq: 1,
            lenient_folds: false,
        }
    }
}

impl ExperimentConfig {
    pub fn validate(&self) -> Result<()> {
        for p in [&self.dictionary_path, &self.corpus_path]
            .into_iter()
            .flatten()
        {
            if !p.exists() {
                return Err(Error::validation(format!("{} does not exist", p.display())));
            }
        }
        if self.systems.is_empty() {
            return Err(Error::validation("no systems selected"));
        }
        if self.systems.contains(&System::Transformer) && self.sizes.is_empty() {
            return Err(Error::validation("no model sizes selected"));
        }
        Ok(())
    }

    fn load_corpus(&self) -> Result<Corpus> {
        match (&self.dictionary_path, &self.corpus_path) {
            (Some(d), Some(c)) => Corpus::load(d, c),
            _ => Err(Error::validation(
                "both dictionary and corpus paths are required",
            )),
        }
    }

    fn policy(&self) -> ClassSizePolicy {
        if self.lenient_folds {
            ClassSizePolicy::Lenient
        } else {
            ClassSizePolicy::Strict
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitEval {
    pub bleu: BleuReport,
    pub classification: ClassificationReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldEval {
    pub fold: usize,
    pub dev: SplitEval,
    pub test: SplitEval,
    pub best_epoch: Option<usize>,
    pub dev_trace: Vec<EpochStats>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Means {
    pub dev_bleu: f64,
    pub dev_accuracy: f64,
    pub test_bleu: f64,
    pub test_accuracy: f64,
}

impl Means {
    pub fn of(folds: &[FoldEval]) -> Self {
        let mean =
            |f: &dyn Fn(&FoldEval) -> f64| folds.iter().map(f).sum::<f64>() / folds.len() as f64;
        Self {
            dev_bleu: mean(&|f| f.dev.bleu.score),
            dev_accuracy: mean(&|f| f.dev.classification.accuracy),
            test_bleu: mean(&|f| f.test.bleu.score),
            test_accuracy: mean(&|f| f.test.classification.accuracy),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemRun {
    pub system: System,
    pub size: Option<SizePreset>,
    /// `generate_then_match`, `likelihood_ranking`, or `argmax` for the baseline.
    pub mode: String,
    pub folds: Vec<FoldEval>,
    pub mean: Means,
}

impl SystemRun {
    pub fn label(&self) -> String {
        match (self.system, self.size) {
            (System::Transformer, Some(s)) => format!("transformer-{}", s.name()),
            (System::Transformer, None) => "transformer".into(),
            (System::Baseline, _) => "naive-bayes".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigEcho {
    pub sizes: Vec<SizePreset>,
    pub train: TrainConfig,
    pub dropout: f64,
    pub seed: u64,
    pub mode: ClassificationMode,
    pub systems: BTreeSet<System>,
    pub alpha: f64,
    pub min_freq: usize,
    pub lenient_folds: bool,
}

impl From<&ExperimentConfig> for ConfigEcho {
    fn from(c: &ExperimentConfig) -> Self {
        Self {
            sizes: c.sizes.clone(),
            train: c.train.clone(),
            dropout: c.dropout,
            seed: c.seed,
            mode: c.mode,
            systems: c.systems.clone(),
            alpha: c.alpha,
            min_freq: c.min_freq,
            lenient_folds: c.lenient_folds,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub config: ConfigEcho,
    pub corpus_fingerprint: String,
    pub n_pairs: usize,
    pub n_classes: usize,
    pub folds: FoldPlan,
    pub runs: Vec<SystemRun>,
}

/// Rounds to 9 significant digits.
fn round_sig(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.8e}").parse().expect("formatted float parses")
}

fn round_floats(v: &mut serde_json::Value) {
    match v {
        serde_json::Value::Number(n) if n.is_f64() => {
            let r = round_sig(n.as_f64().expect("f64"));
            *v = serde_json::Number::from_f64(r).map_or(serde_json::Value::Null, Into::into);
        }
        serde_json::Value::Array(a) => a.iter_mut().for_each(round_floats),
        serde_json::Value::Object(o) => o.values_mut().for_each(round_floats),
        _ => {}
    }
}

impl EvalReport {
    /// Sorted keys, floats at 9 significant digits, trailing newline.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("report serializes");
        round_floats(&mut v);
        let mut s = serde_json::to_string_pretty(&v).expect("value serializes");
        s.push('\n');
        s
    }

    /// Aligned text table with one row per system run.
    pub fn table(&self) -> String {
        let mut out = String::new();
        let label = match self.config.mode {
            ClassificationMode::GenerateThenMatch => "generate-then-match",
            ClassificationMode::LikelihoodRanking => "likelihood-ranking",
        };
        let _ = writeln!(
            out,
            "Average translation performance over {} folds (transformer accuracy: {label})",
            self.folds.n_folds
        );
        let _ = writeln!(
            out,
            "{:<20} {:>9} {:>9} {:>9} {:>9}",
            "", "Dev.", "", "Test", ""
        );
        let _ = writeln!(
            out,
            "{:<20} {:>9} {:>9} {:>9} {:>9}",
            "Model", "BLEU", "Acc.", "BLEU", "Acc."
        );
        let _ = writeln!(out, "{}", "-".repeat(60));
        for run in &self.runs {
            let m = &run.mean;
            let _ = writeln!(
                out,
                "{:<20} {:>9.1} {:>8.1}% {:>9.1} {:>8.1}%",
                run.label(),
                m.dev_bleu,
                100.0 * m.dev_accuracy,
                m.test_bleu,
                100.0 * m.test_accuracy
            );
        }
        let ladder: Vec<&SystemRun> = self
            .runs
            .iter()
            .filter(|r| r.system == System::Transformer)
            .collect();
        if ladder.len() > 1 {
            let monotone = ladder
                .windows(2)
                .all(|w| w[1].mean.test_accuracy >= w[0].mean.test_accuracy);
            let _ = writeln!(
                out,
                "test accuracy {} with model size",
                if monotone {
                    "improves monotonically"
                } else {
                    "does not improve monotonically"
                }
            );
        }
        out
    }
}

/// Twice the longest `… EOS` target: enough for any dictionary surface,
/// and it stops runaway decodes from untrained models early.
pub fn decode_limit(corpus: &Corpus) -> usize {
    2 * corpus
        .classes()
        .map(|u| tokenize(&u.surface).len() + 1)
        .max()
        .unwrap_or(1)
}

/// Longest encoded source or target in the corpus.
fn longest_sequence(corpus: &Corpus) -> usize {
    let prompt = crate::tokenizer::prompt_tokens().len();
    let src = corpus
        .pairs
        .iter()
        .map(|p| tokenize(&p.english).len() + prompt);
    let tgt = corpus.classes().map(|u| tokenize(&u.surface).len() + 2);
    src.chain(tgt).max().unwrap_or(0)
}

/// Everything a fold needs to train and evaluate the transformer.
pub struct FoldData {
    pub vocab: Vocabulary,
    pub examples: BTreeMap<String, Example>,
    /// In-corpus utterance ids in ascending order and their encoded surfaces.
    pub candidates: Vec<(String, Vec<usize>)>,
}

impl FoldData {
    pub fn new(corpus: &Corpus, train_ids: &[String], min_freq: usize) -> Result<Self> {
        let index = corpus.pair_index();
        let train_pairs: Vec<ParallelPair> = train_ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .map(|p| (*p).clone())
                    .ok_or_else(|| Error::validation(format!("unknown pair {id:?}")))
            })
            .collect::<Result<_>>()?;
        let vocab = build_vocab(&train_pairs, &corpus.dictionary, min_freq)?;
        Ok(Self::with_vocab(corpus, vocab))
    }

    pub fn with_vocab(corpus: &Corpus, vocab: Vocabulary) -> Self {
        let surfaces: BTreeMap<&str, &str> = corpus
            .dictionary
            .iter()
            .map(|u| (u.id.as_str(), u.surface.as_str()))
            .collect();
        let examples = corpus
            .pairs
            .iter()
            .map(|p| {
                let ex = Example {
                    src: vocab.encode(&p.english, Side::Source).ids,
                    tgt: vocab
                        .encode(surfaces[p.utterance_id.as_str()], Side::Target)
                        .ids,
                };
                (p.pair_id.clone(), ex)
            })
            .collect();
        let mut candidates: Vec<(String, Vec<usize>)> = corpus
            .classes()
            .map(|u| (u.id.clone(), vocab.encode(&u.surface, Side::Target).ids))
            .collect();
        candidates.sort_by(|a, b| a.0.cmp(&b.0));
        Self {
            vocab,
            examples,
            candidates,
        }
    }
}

/// Utterance id with the highest candidate score; ties go to the first
/// (smallest) id.
pub fn rank_by_likelihood(
    model: &Model,
    src: &[usize],
    candidates: &[(String, Vec<usize>)],
) -> Result<String> {
    let seqs: Vec<&[usize]> = candidates.iter().map(|(_, s)| s.as_slice()).collect();
    let scores = model.score_candidates(src, &seqs)?;
    let mut best = 0;
    for (i, &s) in scores.iter().enumerate() {
        if s > scores[best] {
            best = i;
        }
    }
    Ok(candidates[best].0.clone())
}

fn split_eval(
    hyps: Vec<Vec<String>>,
    refs: Vec<Vec<String>>,
    preds: &[String],
    golds: &[String],
) -> Result<SplitEval> {
    Ok(SplitEval {
        bleu: corpus_bleu(&hyps, &refs)?,
        classification: accuracy(preds, golds)?,
    })
}

fn surface_tokens(corpus: &Corpus, id: &str) -> Vec<String> {
    corpus
        .utterance(id)
        .map(|u| tokenize(&u.surface))
        .unwrap_or_default()
}

fn evaluate_transformer(
    model: &Model,
    data: &FoldData,
    corpus: &Corpus,
    ids: &[String],
    mode: ClassificationMode,
) -> Result<SplitEval> {
    let index = corpus.pair_index();
    let (mut hyps, mut refs, mut preds, mut golds) = (vec![], vec![], vec![], vec![]);
    for id in ids {
        let ex = &data.examples[id];
        let gold = &index[id.as_str()].utterance_id;
        let out = model.greedy_decode(&ex.src, decode_limit(corpus))?;
        let text = data.vocab.decode(&out)?;
        let pred = match mode {
            ClassificationMode::GenerateThenMatch => nearest_utterance(&text, &corpus.dictionary)
                .map(|m| m.utterance.id.clone())
                .ok_or_else(|| Error::validation("dictionary has no in-corpus utterances"))?,
            ClassificationMode::LikelihoodRanking => {
                rank_by_likelihood(model, &ex.src, &data.candidates)?
            }
        };
        hyps.push(tokenize(&text));
        refs.push(surface_tokens(corpus, gold));
        preds.push(pred);
        golds.push(gold.clone());
    }
    split_eval(hyps, refs, &preds, &golds)
}

fn evaluate_baseline(nb: &NaiveBayesModel, corpus: &Corpus, ids: &[String]) -> Result<SplitEval> {
    let index = corpus.pair_index();
    let (mut hyps, mut refs, mut preds, mut golds) = (vec![], vec![], vec![], vec![]);
    for id in ids {
        let pair = index[id.as_str()];
        let pred = nb.predict(&pair.english);
        hyps.push(surface_tokens(corpus, &pred));
        refs.push(surface_tokens(corpus, &pair.utterance_id));
        preds.push(pred);
        golds.push(pair.utterance_id.clone());
    }
    split_eval(hyps, refs, &preds, &golds)
}

fn pairs_for(corpus: &Corpus, ids: &[String]) -> Vec<ParallelPair> {
    let index = corpus.pair_index();
    ids.iter().map(|id| index[id.as_str()].clone()).collect()
}

/// Seed for one (size, fold) transformer run.
fn derived_seed(seed: u64, label: &str) -> u64 {
    rng::stream(seed, label).gen()
}

/// Model configuration used by the harness for `size`.
pub fn harness_model_config(
    config: &ExperimentConfig,
    corpus: &Corpus,
    size: SizePreset,
    seed: u64,
) -> ModelConfig {
    let mut mc = ModelConfig::preset(size).with_seed(seed);
    mc.dropout = config.dropout;
    mc.max_len = mc.max_len.max(longest_sequence(corpus) + 2);
    mc
}

fn run_transformer(
    config: &ExperimentConfig,
    corpus: &Corpus,
    plan: &FoldPlan,
    size: SizePreset,
) -> Result<SystemRun> {
    let mut folds = Vec::with_capacity(plan.n_folds);
    for (f, fold) in plan.folds.iter().enumerate() {
        let ctx = || format!("transformer-{} fold {f}", size.name());
        let data = FoldData::new(corpus, &fold.train, config.min_freq).context(ctx)?;
        let seed = derived_seed(config.seed, &format!("model/{}/fold{f}", size.name()));
        let mc = harness_model_config(config, corpus, size, seed);
        let model = Model::init(mc, data.vocab.len()).context(ctx)?;
        let tc = TrainConfig {
            seed: derived_seed(config.seed, &format!("train/{}/fold{f}", size.name())),
            max_decode_len: Some(decode_limit(corpus)),
            ..config.train.clone()
        };
        let trained = train::train(model, &data.examples, plan, f, &tc).context(ctx)?;
        folds.push(FoldEval {
            fold: f,
            dev: evaluate_transformer(&trained.model, &data, corpus, &fold.dev, config.mode)
                .context(ctx)?,
            test: evaluate_transformer(&trained.model, &data, corpus, &fold.test, config.mode)
                .context(ctx)?,
            best_epoch: Some(trained.best_epoch),
            dev_trace: trained.trace,
        });
    }
    let mode = match config.mode {
        ClassificationMode::GenerateThenMatch => "generate_then_match",
        ClassificationMode::LikelihoodRanking => "likelihood_ranking",
    };
    Ok(SystemRun {
        system: System::Transformer,
        size: Some(size),
        mode: mode.into(),
        mean: Means::of(&folds),
        folds,
    })
}

fn run_baseline(config: &ExperimentConfig, corpus: &Corpus, plan: &FoldPlan) -> Result<SystemRun> {
    let mut folds = Vec::with_capacity(plan.n_folds);
    for (f, fold) in plan.folds.iter().enumerate() {
        let ctx = || format!("naive-bayes fold {f}");
        let nb =
            NaiveBayesModel::fit(&pairs_for(corpus, &fold.train), config.alpha).context(ctx)?;
        folds.push(FoldEval {
            fold: f,
            dev: evaluate_baseline(&nb, corpus, &fold.dev).context(ctx)?,
            test: evaluate_baseline(&nb, corpus, &fold.test).context(ctx)?,
            best_epoch: None,
            dev_trace: Vec::new(),
        });
    }
    Ok(SystemRun {
        system: System::Baseline,
        size: None,
        mode: "argmax".into(),
        mean: Means::of(&folds),
        folds,
    })
}

/// Loads the configured corpus files and runs the experiment.
pub fn run_crossval(config: &ExperimentConfig) -> Result<EvalReport> {
    config.validate()?;
    let corpus = config.load_corpus()?;
    run_crossval_on(config, &corpus)
}

/// Five-fold crossvalidation of every requested system on one fold plan.
pub fn run_crossval_on(config: &ExperimentConfig, corpus: &Corpus) -> Result<EvalReport> {
    if config.systems.is_empty() {
        return Err(Error::validation("no systems selected"));
    }
    let plan = make_folds_with(&corpus.pairs, config.seed, config.policy())?;
    let mut runs = Vec::new();
    if config.systems.contains(&System::Transformer) {
        for &size in &config.sizes {
            runs.push(run_transformer(config, corpus, &plan, size)?);
        }
    }
    if config.systems.contains(&System::Baseline) {
        runs.push(run_baseline(config, corpus, &plan)?);
    }
    Ok(EvalReport {
        config: config.into(),
        corpus_fingerprint: corpus.fingerprint(),
        n_pairs: corpus.pairs.len(),
        n_classes: corpus.classes().count(),
        folds: plan,
        runs,
    })
}

const ONSETS: [&str; 14] = [
    "b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z",
];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const CODAS: [&str; 5] = ["", "n", "r", "sh", "k"];

/// Frames shared by every class; `{}` slots take the class's content words.
/// All frames use the same multiset of filler tokens, so word counts alone
/// carry no information about the frame.
const FRAMES: [&str; 6] = [
    "they saw the {} {} , at the {} .",
    "at the {} , they saw the {} {} .",
    "the {} saw they {} , at the {} .",
    "they saw {} at the {} , the {} .",
    "the {} at the {} , they saw {} .",
    "{} they saw , at the {} the {} .",
];

const FILLER: [&str; 5] = ["they", "saw", "the", "at", "his"];

fn pseudo_word(r: &mut rng::Rng) -> String {
    let syllables = r.gen_range(2..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(r).expect("non-empty"));
        w.push_str(VOWELS.choose(r).expect("non-empty"));
    }
    w.push_str(CODAS.choose(r).expect("non-empty"));
    w
}

fn capitalize(w: &str) -> String {
    let mut c = w.chars();
    c.next()
        .map(|f| f.to_uppercase().chain(c).collect())
        .unwrap_or_default()
}

/// Generates a labelled corpus with `n_classes` utterances of
/// `examples_per_class` sentences each. Every class owns a name, a phrase
/// word and three content words that no other class uses; each English
/// sentence places all three content words, in a random order, into one
/// of the shared frames.
pub fn make_synthetic_corpus(
    n_classes: usize,
    examples_per_class: usize,
    seed: u64,
) -> Result<Corpus> {
    if n_classes < 2 {
        return Err(Error::validation(
            "a synthetic corpus needs at least two classes",
        ));
    }
    let mut r = rng::stream(seed, "synth/words");
    let mut used: BTreeSet<String> = FILLER.iter().map(|s| s.to_string()).collect();
    let mut fresh = |r: &mut rng::Rng| loop {
        let w = pseudo_word(r);
        if used.insert(w.clone()) {
            return w;
        }
    };

    let mut dictionary = Vec::with_capacity(n_classes);
    let mut pairs = Vec::with_capacity(n_classes * examples_per_class);
    for c in 0..n_classes {
        let name = capitalize(&fresh(&mut r));
        let phrase = fresh(&mut r);
        let content = [fresh(&mut r), fresh(&mut r), fresh(&mut r)];
        let id = format!("syn-{c:03}");
        dictionary.push(Utterance {
            id: id.clone(),
            surface: format!("{name}, his {phrase}."),
            meaning: format!("synthetic meaning {c}"),
            source: if c % 2 == 0 {
                Source::Episode
            } else {
                Source::Novel
            },
            in_corpus: true,
        });
        let mut er = rng::stream(seed, &format!("synth/examples/{c}"));
        for e in 0..examples_per_class {
            let frame = FRAMES.choose(&mut er).expect("non-empty");
            let mut words = content.clone();
            words.shuffle(&mut er);
            let mut sentence = String::new();
            let mut it = words.iter();
            for (i, piece) in frame.split("{}").enumerate() {
                if i > 0 {
                    sentence.push_str(it.next().expect("three slots"));
                }
                sentence.push_str(piece);
            }
            pairs.push(ParallelPair {
                pair_id: format!("{id}-{e:02}"),
                english: sentence,
                utterance_id: id.clone(),
            });
        }
    }
    Corpus::new(dictionary, pairs)
}

/// Result of a one-shot translation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Translation {
    pub decoded: String,
    pub utterance_id: String,
    pub surface: String,
    pub meaning: String,
}

/// Greedy-decodes `english` and maps the output to the nearest utterance.
pub fn translate(
    model: &Model,
    vocab: &Vocabulary,
    dictionary: &[Utterance],
    english: &str,
) -> Result<Translation> {
    if vocab.len() != model.vocab_size {
        return Err(Error::validation(
            "vocabulary size does not match the model",
        ));
    }
    let src = vocab.encode(english, Side::Source);
    let out = model.greedy_decode(&src.ids, model.config.max_len)?;
    let decoded = vocab.decode(&out)?;
    let m = nearest_utterance(&decoded, dictionary)
        .ok_or_else(|| Error::validation("dictionary has no in-corpus utterances"))?;
    Ok(Translation {
        decoded,
        utterance_id: m.utterance.id.clone(),
        surface: m.utterance.surface.clone(),
        meaning: m.utterance.meaning.clone(),
    })
}
