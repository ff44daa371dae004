//! Dictionary and parallel-corpus records, JSON Lines I/O, and stratified
//! fold construction.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng;

/// Number of crossvalidation folds.
pub const N_FOLDS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Episode,
    Novel,
}

/// One Tamarian metaphor and its inferred English meaning.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Utterance {
    pub id: String,
    pub surface: String,
    pub meaning: String,
    pub source: Source,
    pub in_corpus: bool,
}

/// An English sentence labelled with the utterance that translates it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParallelPair {
    pub pair_id: String,
    pub english: String,
    pub utterance_id: String,
}

/// Dictionary plus parallel corpus, already cross-validated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub dictionary: Vec<Utterance>,
    pub pairs: Vec<ParallelPair>,
}

const SAMPLE_DICTIONARY: &str = include_str!("../data/sample_dictionary.jsonl");
const SAMPLE_CORPUS: &str = include_str!("../data/sample_corpus.jsonl");

impl Corpus {
    pub fn new(dictionary: Vec<Utterance>, pairs: Vec<ParallelPair>) -> Result<Self> {
        validate_dictionary(&dictionary)?;
        validate_pairs(&pairs, &dictionary)?;
        Ok(Self { dictionary, pairs })
    }

    pub fn load(dictionary: impl AsRef<Path>, parallel: impl AsRef<Path>) -> Result<Self> {
        let dictionary = load_dictionary(dictionary)?;
        let pairs = load_parallel(parallel, &dictionary)?;
        Ok(Self { dictionary, pairs })
    }

    /// The bundled ten-utterance sample with one English example each.
    pub fn sample() -> Self {
        let dictionary = parse_dictionary(SAMPLE_DICTIONARY, Path::new("sample_dictionary.jsonl"))
            .expect("bundled dictionary is valid");
        let pairs = parse_parallel(SAMPLE_CORPUS, Path::new("sample_corpus.jsonl"), &dictionary)
            .expect("bundled corpus is valid");
        Self { dictionary, pairs }
    }

    pub fn utterance(&self, id: &str) -> Option<&Utterance> {
        self.dictionary.iter().find(|u| u.id == id)
    }

    /// Utterances that have parallel examples.
    pub fn classes(&self) -> impl Iterator<Item = &Utterance> {
        self.dictionary.iter().filter(|u| u.in_corpus)
    }

    pub fn pair_index(&self) -> HashMap<&str, &ParallelPair> {
        self.pairs.iter().map(|p| (p.pair_id.as_str(), p)).collect()
    }

    pub fn dictionary_jsonl(&self) -> String {
        to_jsonl(&self.dictionary)
    }

    pub fn pairs_jsonl(&self) -> String {
        to_jsonl(&self.pairs)
    }

    /// SHA-256 over the canonical JSON Lines rendering of both files.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.dictionary_jsonl().as_bytes());
        h.update([0u8]);
        h.update(self.pairs_jsonl().as_bytes());
        hex(&h.finalize())
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn to_jsonl<T: Serialize>(records: &[T]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).expect("plain records serialize"));
        out.push('\n');
    }
    out
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn parse_lines<T: for<'de> Deserialize<'de>>(text: &str, path: &Path) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(record);
    }
    Ok(out)
}

pub fn load_dictionary(path: impl AsRef<Path>) -> Result<Vec<Utterance>> {
    let path = path.as_ref();
    parse_dictionary(&read(path)?, path)
}

/// Parses dictionary JSON Lines; `path` is only used in error messages.
pub fn parse_dictionary(text: &str, path: &Path) -> Result<Vec<Utterance>> {
    let dict = parse_lines(text, path)?;
    validate_dictionary(&dict)?;
    Ok(dict)
}

pub fn validate_dictionary(dict: &[Utterance]) -> Result<()> {
    let mut seen = BTreeSet::new();
    for u in dict {
        if !seen.insert(u.id.as_str()) {
            return Err(Error::validation(format!(
                "duplicate utterance id {:?}",
                u.id
            )));
        }
        if u.surface.trim().is_empty() {
            return Err(Error::validation(format!(
                "utterance {:?} has an empty surface",
                u.id
            )));
        }
    }
    Ok(())
}

pub fn load_parallel(path: impl AsRef<Path>, dict: &[Utterance]) -> Result<Vec<ParallelPair>> {
    let path = path.as_ref();
    parse_parallel(&read(path)?, path, dict)
}

pub fn parse_parallel(text: &str, path: &Path, dict: &[Utterance]) -> Result<Vec<ParallelPair>> {
    let pairs = parse_lines(text, path)?;
    validate_pairs(&pairs, dict)?;
    Ok(pairs)
}

pub fn validate_pairs(pairs: &[ParallelPair], dict: &[Utterance]) -> Result<()> {
    let by_id: HashMap<&str, &Utterance> = dict.iter().map(|u| (u.id.as_str(), u)).collect();
    let mut seen = BTreeSet::new();
    for p in pairs {
        if !seen.insert(p.pair_id.as_str()) {
            return Err(Error::validation(format!(
                "duplicate pair id {:?}",
                p.pair_id
            )));
        }
        if p.english.trim().is_empty() {
            return Err(Error::validation(format!(
                "pair {:?} has empty english",
                p.pair_id
            )));
        }
        match by_id.get(p.utterance_id.as_str()) {
            None => {
                return Err(Error::validation(format!(
                    "pair {:?} references unknown utterance {:?}",
                    p.pair_id, p.utterance_id
                )))
            }
            Some(u) if !u.in_corpus => {
                return Err(Error::validation(format!(
                    "pair {:?} references utterance {:?}, which is not in the corpus",
                    p.pair_id, p.utterance_id
                )))
            }
            Some(_) => {}
        }
    }
    Ok(())
}

/// Train/dev/test pair ids of one fold, each list sorted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub train: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldPlan {
    pub n_folds: usize,
    pub seed: u64,
    pub folds: Vec<Fold>,
}

impl FoldPlan {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("fold plan serializes");
        s.push('\n');
        s
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn fold(&self, index: usize) -> Result<&Fold> {
        self.folds.get(index).ok_or_else(|| {
            Error::validation(format!(
                "fold index {index} out of range 0..{}",
                self.folds.len()
            ))
        })
    }
}

/// What to do with classes whose size is neither 5 nor 10.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ClassSizePolicy {
    #[default]
    Strict,
    /// Blocks of `floor(n / 5)` pairs; the `n mod 5` leftovers are always
    /// in train and therefore never tested.
    Lenient,
}

/// Stratified 5-fold plan with the strict class-size policy.
pub fn make_folds(pairs: &[ParallelPair], seed: u64) -> Result<FoldPlan> {
    make_folds_with(pairs, seed, ClassSizePolicy::Strict)
}

/// Each class is sorted by pair id, shuffled with the stream
/// `folds/<utterance_id>` and cut into five equal blocks. Fold `f` tests on
/// block `f`, develops on block `(f + 1) mod 5` and trains on the rest.
pub fn make_folds_with(
    pairs: &[ParallelPair],
    seed: u64,
    policy: ClassSizePolicy,
) -> Result<FoldPlan> {
    let mut classes: BTreeMap<&str, Vec<&str>> = BTreeMap::new();
    for p in pairs {
        classes
            .entry(p.utterance_id.as_str())
            .or_default()
            .push(p.pair_id.as_str());
    }

    let mut folds = vec![
        Fold {
            train: Vec::new(),
            dev: Vec::new(),
            test: Vec::new(),
        };
        N_FOLDS
    ];

    for (class, mut members) in classes {
        let n = members.len();
        if policy == ClassSizePolicy::Strict && n != 5 && n != 10 {
            return Err(Error::validation(format!(
                "class {class:?} has {n} pairs; strict folds need 5 or 10"
            )));
        }
        members.sort_unstable();
        let mut rng = rng::stream(seed, &format!("folds/{class}"));
        members.shuffle(&mut rng);

        let block = n / N_FOLDS;
        let blocks: Vec<&[&str]> = (0..N_FOLDS)
            .map(|b| &members[b * block..(b + 1) * block])
            .collect();
        let leftover = &members[N_FOLDS * block..];

        for (f, fold) in folds.iter_mut().enumerate() {
            let dev_block = (f + 1) % N_FOLDS;
            for (b, ids) in blocks.iter().enumerate() {
                let target = if b == f {
                    &mut fold.test
                } else if b == dev_block {
                    &mut fold.dev
                } else {
                    &mut fold.train
                };
                target.extend(ids.iter().map(|s| s.to_string()));
            }
            fold.train.extend(leftover.iter().map(|s| s.to_string()));
        }
    }

    for fold in &mut folds {
        fold.train.sort();
        fold.dev.sort();
        fold.test.sort();
    }

    Ok(FoldPlan {
        n_folds: N_FOLDS,
        seed,
        folds,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn pairs_for(sizes: &[usize]) -> Vec<ParallelPair> {
        let mut out = Vec::new();
        for (c, &n) in sizes.iter().enumerate() {
            for i in 0..n {
                out.push(ParallelPair {
                    pair_id: format!("c{c}-{i}"),
                    english: format!("sentence {i} of class {c}"),
                    utterance_id: format!("u{c}"),
                });
            }
        }
        out
    }

    fn class_counts(ids: &[String], pairs: &[ParallelPair], class: &str) -> usize {
        ids.iter()
            .filter(|id| {
                pairs
                    .iter()
                    .any(|p| &p.pair_id == *id && p.utterance_id == class)
            })
            .count()
    }

    #[test]
    fn parses_sample_row() {
        let line = r#"{"id":"temba-arms-wide","surface":"Temba, his arms wide.","meaning":"Giving","source":"episode","in_corpus":true}"#;
        let dict = parse_dictionary(line, Path::new("d.jsonl")).unwrap();
        assert_eq!(dict[0].meaning, "Giving");
        assert_eq!(dict[0].source, Source::Episode);
    }

    #[test]
    fn empty_dictionary_is_empty() {
        assert!(parse_dictionary("", Path::new("d.jsonl"))
            .unwrap()
            .is_empty());
    }

    #[test]
    fn duplicate_ids_rejected() {
        let text = concat!(
            r#"{"id":"x","surface":"A.","meaning":"a","source":"novel","in_corpus":true}"#,
            "\n",
            r#"{"id":"x","surface":"B.","meaning":"b","source":"novel","in_corpus":true}"#,
        );
        let err = parse_dictionary(text, Path::new("d.jsonl")).unwrap_err();
        assert!(matches!(err, Error::Validation(_)), "{err}");
    }

    #[test]
    fn malformed_line_names_line_number() {
        let text = concat!(
            r#"{"id":"x","surface":"A.","meaning":"a","source":"novel","in_corpus":true}"#,
            "\n{not json\n"
        );
        match parse_dictionary(text, Path::new("d.jsonl")).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn pair_references_are_checked() {
        let dict = Corpus::sample().dictionary;
        let ok = r#"{"pair_id":"p1","english":"The child offered his toy to his friend.","utterance_id":"temba-arms-wide"}"#;
        assert_eq!(parse_parallel(ok, Path::new("c"), &dict).unwrap().len(), 1);

        let dangling = r#"{"pair_id":"p1","english":"Hi.","utterance_id":"nonexistent"}"#;
        let err = parse_parallel(dangling, Path::new("c"), &dict).unwrap_err();
        assert!(err.to_string().contains("p1"), "{err}");

        let mut dict = dict;
        dict[1].in_corpus = false;
        assert!(parse_parallel(ok, Path::new("c"), &dict).is_err());
    }

    #[test]
    fn ten_example_class_splits_six_two_two() {
        let pairs = pairs_for(&[10]);
        let plan = make_folds(&pairs, 1).unwrap();
        for fold in &plan.folds {
            assert_eq!(
                (fold.train.len(), fold.dev.len(), fold.test.len()),
                (6, 2, 2)
            );
        }
    }

    #[test]
    fn five_example_class_splits_three_one_one() {
        let pairs = pairs_for(&[5]);
        let plan = make_folds(&pairs, 1).unwrap();
        for fold in &plan.folds {
            assert_eq!(
                (fold.train.len(), fold.dev.len(), fold.test.len()),
                (3, 1, 1)
            );
        }
    }

    #[test]
    fn strict_rejects_other_sizes_and_lenient_rounds() {
        let pairs = pairs_for(&[7]);
        assert!(make_folds(&pairs, 0).is_err());
        let plan = make_folds_with(&pairs, 0, ClassSizePolicy::Lenient).unwrap();
        for fold in &plan.folds {
            assert_eq!(
                (fold.train.len(), fold.dev.len(), fold.test.len()),
                (5, 1, 1)
            );
        }
    }

    #[test]
    fn make_folds_is_deterministic() {
        let pairs = pairs_for(&[10, 5, 10]);
        assert_eq!(
            make_folds(&pairs, 9).unwrap(),
            make_folds(&pairs, 9).unwrap()
        );
        assert_eq!(
            make_folds(&pairs, 9).unwrap().to_json(),
            make_folds(&pairs, 9).unwrap().to_json()
        );
    }

    #[test]
    fn bundled_sample_loads() {
        let c = Corpus::sample();
        assert_eq!(c.dictionary.len(), 10);
        assert_eq!(c.pairs.len(), 10);
        assert_eq!(c.utterance("temba-arms-wide").unwrap().meaning, "Giving");
    }

    proptest! {
        #[test]
        fn folds_partition_stratify_and_cover(
            sizes in proptest::collection::vec(prop_oneof![Just(5usize), Just(10usize)], 1..8),
            seed in any::<u64>(),
            rotate in 0usize..50,
        ) {
            let mut pairs = pairs_for(&sizes);
            let plan = make_folds(&pairs, seed).unwrap();
            let all: BTreeSet<&str> = pairs.iter().map(|p| p.pair_id.as_str()).collect();

            let mut tested = Vec::new();
            for fold in &plan.folds {
                let (tr, dv, te): (BTreeSet<_>, BTreeSet<_>, BTreeSet<_>) = (
                    fold.train.iter().map(String::as_str).collect(),
                    fold.dev.iter().map(String::as_str).collect(),
                    fold.test.iter().map(String::as_str).collect(),
                );
                prop_assert!(tr.is_disjoint(&dv) && tr.is_disjoint(&te) && dv.is_disjoint(&te));
                let union: BTreeSet<&str> = tr.union(&dv).chain(te.iter()).copied().collect();
                prop_assert_eq!(&union, &all);
                tested.extend(fold.test.iter().cloned());

                for (c, &n) in sizes.iter().enumerate() {
                    let class = format!("u{c}");
                    let want = if n == 10 { (6, 2, 2) } else { (3, 1, 1) };
                    let got = (
                        class_counts(&fold.train, &pairs, &class),
                        class_counts(&fold.dev, &pairs, &class),
                        class_counts(&fold.test, &pairs, &class),
                    );
                    prop_assert_eq!(got, want);
                }
            }
            tested.sort();
            let expected: Vec<String> = all.iter().map(|s| s.to_string()).collect();
            prop_assert_eq!(tested, expected);

            // Input order never matters.
            let len = pairs.len();
            pairs.rotate_left(rotate % len);
            prop_assert_eq!(make_folds(&pairs, seed).unwrap(), plan);
        }
    }
}
