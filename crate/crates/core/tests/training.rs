use std::time::Instant;

use tamarian::corpus::Corpus;
use tamarian::harness::{translate, FoldData};
use tamarian::metrics::classify_output;
use tamarian::model::{Model, ModelConfig, SizePreset};
use tamarian::numerics::Checkpoint;
use tamarian::tokenizer::{build_vocab, Side};
use tamarian::train::{fit, Example, Selection, TrainConfig, TrainedModel};

fn sample_data() -> (Corpus, FoldData) {
    let c = Corpus::sample();
    let ids: Vec<String> = c.pairs.iter().map(|p| p.pair_id.clone()).collect();
    let data = FoldData::new(&c, &ids, 1).unwrap();
    (c, data)
}

fn overfit(examples: &[Example], vocab: usize, epochs: usize) -> TrainedModel {
    let model = Model::init(ModelConfig::preset(SizePreset::Small), vocab).unwrap();
    let cfg = TrainConfig {
        epochs,
        selection: Selection::Last,
        ..TrainConfig::default()
    };
    fit(model, examples, &[], &cfg).unwrap()
}

#[test]
fn sample_overfit_and_translate() {
    let (c, data) = sample_data();
    let examples: Vec<Example> = data.examples.values().cloned().collect();
    let start = Instant::now();
    let trained = overfit(&examples, data.vocab.len(), 200);
    let last = trained.trace.last().unwrap();
    assert!(last.train_loss < 0.05, "final loss {}", last.train_loss);
    assert!(start.elapsed().as_secs() < 300);

    for p in &c.pairs {
        let t = translate(&trained.model, &data.vocab, &c.dictionary, &p.english).unwrap();
        assert_eq!(t.utterance_id, p.utterance_id, "{}", p.english);
    }
    let t = translate(
        &trained.model,
        &data.vocab,
        &c.dictionary,
        "The child offered his toy to his friend.",
    )
    .unwrap();
    assert_eq!(t.surface, "Temba, his arms wide.");
    assert_eq!(t.meaning, "Giving");
    assert_eq!(
        t,
        translate(
            &trained.model,
            &data.vocab,
            &c.dictionary,
            "The child offered his toy to his friend."
        )
        .unwrap()
    );
    // Prefix-only input still decodes.
    translate(&trained.model, &data.vocab, &c.dictionary, "").unwrap();

    // Checkpoints reload against the same vocabulary only.
    let json = trained.model.to_checkpoint(&data.vocab).to_json().unwrap();
    let reloaded =
        Model::from_checkpoint(&Checkpoint::from_json(&json).unwrap(), &data.vocab).unwrap();
    assert_eq!(reloaded, trained.model);
    let other = build_vocab(&c.pairs[..3], &c.dictionary, 1).unwrap();
    assert!(Model::from_checkpoint(&Checkpoint::from_json(&json).unwrap(), &other).is_err());
}

#[test]
fn single_pair_overfit_reproduces_target() {
    let (c, data) = sample_data();
    let ex = data.examples["p02"].clone();
    let trained = overfit(std::slice::from_ref(&ex), data.vocab.len(), 60);
    let out = trained.model.greedy_decode(&ex.src, 64).unwrap();
    assert_eq!(out.ids, ex.tgt[1..]);
    let text = data.vocab.decode(&out).unwrap();
    assert_eq!(
        classify_output(&text, &c.dictionary).unwrap(),
        "temba-arms-wide"
    );

    let surfaces: Vec<Vec<usize>> = c
        .dictionary
        .iter()
        .map(|u| data.vocab.encode(&u.surface, Side::Target).ids)
        .collect();
    let scores = trained.model.score_candidates(&ex.src, &surfaces).unwrap();
    let gold = c
        .dictionary
        .iter()
        .position(|u| u.id == "temba-arms-wide")
        .unwrap();
    for (i, s) in scores.iter().enumerate() {
        if i != gold {
            assert!(scores[gold] > *s);
        }
    }
}

#[test]
fn zero_epochs_returns_the_initial_model() {
    let (_, data) = sample_data();
    let examples: Vec<Example> = data.examples.values().cloned().collect();
    let init = Model::init(ModelConfig::preset(SizePreset::Small), data.vocab.len()).unwrap();
    let cfg = TrainConfig {
        epochs: 0,
        ..TrainConfig::default()
    };
    let trained = fit(init.clone(), &examples, &examples, &cfg).unwrap();
    assert_eq!(trained.model, init);
    assert!(trained.trace.is_empty());
    assert!(fit(init, &[], &[], &cfg).is_err());
}

#[test]
fn training_is_deterministic_and_selects_best_dev() {
    let (_, data) = sample_data();
    let examples: Vec<Example> = data.examples.values().cloned().collect();
    let (train, dev) = examples.split_at(8);
    let run = || {
        let m = Model::init(
            ModelConfig::preset(SizePreset::Small).with_seed(5),
            data.vocab.len(),
        )
        .unwrap();
        let cfg = TrainConfig {
            epochs: 6,
            seed: 9,
            ..TrainConfig::default()
        };
        fit(m, train, dev, &cfg).unwrap()
    };
    let (a, b) = (run(), run());
    assert_eq!(a.trace, b.trace);
    assert_eq!(a.model, b.model);

    let bleu: Vec<f64> = a.trace.iter().map(|s| s.dev_bleu.unwrap()).collect();
    let best = bleu.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let first_best = bleu.iter().position(|&x| x == best).unwrap() + 1;
    assert_eq!(a.best_epoch, first_best);
}
