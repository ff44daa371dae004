mod support;

use proptest::prelude::*;

use support::{oracle_bleu, random_corpus, rng};
use tamarian::metrics::corpus_bleu;
use tamarian::tokenizer::tokenize;

fn toks(s: &str) -> Vec<String> {
    tokenize(s)
}

#[test]
fn matches_brute_force_on_random_corpora() {
    let mut r = rng(2024);
    for case in 0..200 {
        let (h, refs) = random_corpus(&mut r);
        let got = corpus_bleu(&h, &refs).unwrap();
        let want = oracle_bleu(&h, &refs);
        assert!(
            (got.score - want.score).abs() < 1e-9,
            "case {case}: {} vs {}",
            got.score,
            want.score
        );
        assert!((got.brevity_penalty - want.brevity_penalty).abs() < 1e-12);
        for n in 0..4 {
            assert!(
                (got.precisions[n] - want.precisions[n]).abs() < 1e-12,
                "case {case} order {n}"
            );
        }
    }
}

#[test]
fn worked_examples() {
    let same = vec![
        toks("temba , his arms wide ."),
        toks("shaka , when the walls fell ."),
    ];
    let r = corpus_bleu(&same, &same).unwrap();
    assert_eq!((r.score, r.brevity_penalty), (100.0, 1.0));

    let r = corpus_bleu(&[toks("a b c d")], &[toks("a b c d e")]).unwrap();
    assert_eq!(r.precisions, [1.0; 4]);
    assert!((r.brevity_penalty - (-0.25f64).exp()).abs() < 1e-12);
    assert!((r.score - 77.880078307).abs() < 1e-6);

    let r = corpus_bleu(&[toks("a")], &[toks("a")]).unwrap();
    assert!((r.score - 100.0).abs() < 1e-6);
}

fn sentence() -> impl Strategy<Value = Vec<String>> {
    prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "d"]), 0..8)
        .prop_map(|v| v.into_iter().map(String::from).collect())
}

fn corpus() -> impl Strategy<Value = Vec<(Vec<String>, Vec<String>)>> {
    prop::collection::vec((sentence(), sentence()), 1..6)
}

proptest! {
    #[test]
    fn score_in_range_and_self_bleu_is_100(pairs in corpus()) {
        let (h, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let rep = corpus_bleu(&h, &r).unwrap();
        prop_assert!((0.0..=100.0).contains(&rep.score));
        prop_assert!(rep.precisions.iter().all(|p| p.is_finite()));
        if h.iter().any(|s| !s.is_empty()) {
            prop_assert_eq!(corpus_bleu(&h, &h).unwrap().score, 100.0);
        }
    }

    #[test]
    fn joint_permutation_leaves_report_unchanged(pairs in corpus(), rot in 0usize..6) {
        let mut rotated = pairs.clone();
        let k = rot % rotated.len();
        rotated.rotate_left(k);
        let (h, r): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
        let (h2, r2): (Vec<_>, Vec<_>) = rotated.into_iter().unzip();
        prop_assert_eq!(corpus_bleu(&h, &r).unwrap(), corpus_bleu(&h2, &r2).unwrap());
    }

    #[test]
    fn shorter_hypotheses_lower_the_score(len in 5usize..12, cut in 1usize..5) {
        // A prefix of the reference keeps every precision at 1, so only the
        // brevity penalty moves.
        let reference: Vec<String> = (0..len + cut).map(|i| format!("w{i}")).collect();
        let long = corpus_bleu(&[reference[..len].to_vec()], &[reference.clone()]).unwrap();
        let short = corpus_bleu(&[reference[..len - 1].to_vec()], &[reference.clone()]).unwrap();
        prop_assert!(short.score < long.score);
    }
}
