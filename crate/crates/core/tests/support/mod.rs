//! Independent oracles shared by the integration tests and the acceptance
//! runner. Nothing here calls the library code it is checking.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use tamarian::model::{Model, ModelConfig};
use tamarian::numerics::{Graph, Tensor, Var};
use tamarian::tokenizer::{BOS, EOS, PAD};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------------------
// BLEU by brute force: n-grams are counted by linear scans over plain
// slices, with no hashing and no shared code with the library.

fn count_occurrences(gram: &[String], tokens: &[String]) -> usize {
    let n = gram.len();
    if tokens.len() < n {
        return 0;
    }
    (0..=tokens.len() - n)
        .filter(|&i| &tokens[i..i + n] == gram)
        .count()
}

pub struct OracleBleu {
    pub score: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
}

pub fn oracle_bleu(hyps: &[Vec<String>], refs: &[Vec<String>]) -> OracleBleu {
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut hyp_len = 0;
    let mut ref_len = 0;
    for (h, r) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        ref_len += r.len();
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let mut seen: Vec<&[String]> = Vec::new();
            for i in 0..=h.len() - n {
                let gram = &h[i..i + n];
                totals[n - 1] += 1;
                if seen.contains(&gram) {
                    continue;
                }
                seen.push(gram);
                matches[n - 1] += count_occurrences(gram, h).min(count_occurrences(gram, r));
            }
        }
    }
    let mut precisions = [0.0; 4];
    let mut logs = Vec::new();
    let mut zero_orders = 0;
    for n in 0..4 {
        if totals[n] == 0 {
            continue;
        }
        let p = if matches[n] > 0 {
            matches[n] as f64 / totals[n] as f64
        } else {
            zero_orders += 1;
            1.0 / (2f64.powi(zero_orders) * totals[n] as f64)
        };
        precisions[n] = p;
        logs.push(p.ln());
    }
    let bp = if hyp_len >= ref_len {
        1.0
    } else if hyp_len == 0 {
        0.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let geo = if logs.is_empty() {
        1.0
    } else {
        (logs.iter().sum::<f64>() / logs.len() as f64).exp()
    };
    OracleBleu {
        score: (100.0 * bp * geo).clamp(0.0, 100.0),
        precisions,
        brevity_penalty: bp,
    }
}

/// A random corpus over a tiny alphabet so that n-gram matches are common.
pub fn random_corpus(r: &mut ChaCha8Rng) -> (Vec<Vec<String>>, Vec<Vec<String>>) {
    let alphabet = ["a", "b", "c", "d", "e"];
    let size = r.gen_range(2..5);
    let n = r.gen_range(1..7);
    let sentence = |r: &mut ChaCha8Rng, max: usize| -> Vec<String> {
        let len = r.gen_range(0..=max);
        (0..len)
            .map(|_| alphabet[r.gen_range(0..size)].to_string())
            .collect()
    };
    let hyps = (0..n).map(|_| sentence(r, 9)).collect();
    let refs = (0..n).map(|_| sentence(r, 9)).collect();
    (hyps, refs)
}

// ---------------------------------------------------------------------------
// Finite differences.

/// `|a - n| / max(|a|, |n|, floor)`. The floor keeps gradients that are
/// zero up to rounding from dominating the maximum.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

pub const FD_STEP: f64 = 1e-5;
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_TOLERANCE: f64 = 1e-4;

/// Builds a scalar from `inputs` on a fresh graph.
pub type Builder<'a> = dyn Fn(&mut Graph, &[Var]) -> Var + 'a;

/// Largest relative error between backward() and central differences of
/// `f` over every entry of every input.
pub fn op_gradient_error(inputs: &[Tensor], f: &Builder) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars);
    let grads = g.backward(out).expect("scalar output");

    let eval = |inputs: &[Tensor]| -> f64 {
        let mut g = Graph::new();
        let vars: Vec<Var> = inputs.iter().map(|t| g.constant(t.clone())).collect();
        let out = f(&mut g, &vars);
        g.value(out).item().expect("scalar")
    };

    let mut worst = 0.0f64;
    for (k, v) in vars.iter().enumerate() {
        let analytic = grads
            .get(*v)
            .map(<[f64]>::to_vec)
            .unwrap_or_else(|| vec![0.0; inputs[k].len()]);
        for i in 0..inputs[k].len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[i], numeric, FD_FLOOR));
        }
    }
    worst
}

pub fn random_tensor(r: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
}

/// Contracts `x` against fixed random weights so every output entry
/// contributes a distinct amount to the scalar.
pub fn project(g: &mut Graph, x: Var, seed: u64) -> Var {
    let shape = g.shape(x).to_vec();
    let w = g.constant(random_tensor(&mut rng(seed), &shape));
    let y = g.mul(x, w).expect("same shape");
    g.sum(y)
}

pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        d_model: 16,
        n_heads: 2,
        n_layers: 2,
        d_ff: 32,
        max_len: 16,
        dropout: 0.0,
        seed,
        size_preset: None,
    }
}

/// A fixed two-pair batch for a vocabulary of `vocab` ids.
pub fn two_pair_batch() -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    let src = vec![vec![4, 5, 6, 7, 8, 9], vec![4, 5, 10, 11]];
    let tgt = vec![vec![BOS, 12, 13, 14, EOS], vec![BOS, 15, 13, EOS]];
    (src, tgt)
}

pub struct FullModelCheck {
    pub max_relative_error: f64,
    pub n_checked: usize,
}

/// Compares `accumulate_gradients` with central differences of
/// `batch_loss` over every scalar parameter.
pub fn full_model_gradient_check(seed: u64) -> FullModelCheck {
    let mut model = Model::init(tiny_config(seed), 18).expect("valid config");
    let (src, tgt) = two_pair_batch();
    model.params.zero_grad();
    model.accumulate_gradients(&src, &tgt, None).expect("loss");
    let ids: Vec<_> = model.params.ids().collect();
    let analytic: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| {
            model
                .params
                .grad(id)
                .expect("every parameter gets a gradient")
                .data()
                .to_vec()
        })
        .collect();

    let mut worst = 0.0f64;
    let mut n = 0;
    for (k, &id) in ids.iter().enumerate() {
        for i in 0..analytic[k].len() {
            let orig = model.params.value(id).data()[i];
            model.params.value_mut(id).data_mut()[i] = orig + FD_STEP;
            let plus = model.batch_loss(&src, &tgt).expect("loss");
            model.params.value_mut(id).data_mut()[i] = orig - FD_STEP;
            let minus = model.batch_loss(&src, &tgt).expect("loss");
            model.params.value_mut(id).data_mut()[i] = orig;
            let numeric = (plus - minus) / (2.0 * FD_STEP);
            worst = worst.max(relative_error(analytic[k][i], numeric, FD_FLOOR));
            n += 1;
        }
    }
    FullModelCheck {
        max_relative_error: worst,
        n_checked: n,
    }
}

// ---------------------------------------------------------------------------
// Mask invariants on randomly initialized tiny models.

const MASK_VOCAB: usize = 20;

fn random_ids(r: &mut ChaCha8Rng, len: usize) -> Vec<usize> {
    (0..len).map(|_| r.gen_range(4..MASK_VOCAB)).collect()
}

fn mask_model(r: &mut ChaCha8Rng) -> Model {
    let mut cfg = tiny_config(r.gen());
    cfg.n_layers = r.gen_range(1..3);
    Model::init(cfg, MASK_VOCAB).expect("valid config")
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Edits every decoder input after a random position `t` and returns the
/// largest change in logits at positions ≤ t.
pub fn causality_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let model = mask_model(&mut r);
    let n = r.gen_range(1..8);
    let src = random_ids(&mut r, n);
    let len = r.gen_range(2..10);
    let mut tgt = vec![BOS];
    tgt.extend(random_ids(&mut r, len - 1));
    let t = r.gen_range(0..len - 1);
    let mut edited = tgt.clone();
    for x in &mut edited[t + 1..] {
        *x = r.gen_range(0..MASK_VOCAB);
    }
    let a = model.forward(&[&src], &[&tgt]).expect("forward");
    let b = model.forward(&[&src], &[&edited]).expect("forward");
    let v = MASK_VOCAB;
    max_abs_diff(&a.data()[..(t + 1) * v], &b.data()[..(t + 1) * v])
}

/// Appends PAD to the source and to the target and batches the pair with a
/// longer one; returns the largest change in logits at the original
/// positions.
pub fn padding_case(seed: u64) -> f64 {
    let mut r = rng(seed);
    let model = mask_model(&mut r);
    let n = r.gen_range(1..7);
    let src = random_ids(&mut r, n);
    let mut tgt = vec![BOS];
    let tl = r.gen_range(0..6);
    tgt.extend(random_ids(&mut r, tl));
    let v = MASK_VOCAB;
    let base = model.forward(&[&src], &[&tgt]).expect("forward");
    let n = tgt.len() * v;

    let mut padded_src = src.clone();
    padded_src.extend(std::iter::repeat(PAD).take(r.gen_range(1..5)));
    let mut padded_tgt = tgt.clone();
    padded_tgt.extend(std::iter::repeat(PAD).take(r.gen_range(1..5)));
    let padded = model
        .forward(&[&padded_src], &[&padded_tgt])
        .expect("forward");

    let extra = r.gen_range(1..4);
    let other_src = random_ids(&mut r, src.len() + extra);
    let mut other_tgt = vec![BOS];
    let extra = r.gen_range(0..3);
    other_tgt.extend(random_ids(&mut r, tgt.len() + extra));
    let batched = model
        .forward(&[&src, &other_src], &[&tgt, &other_tgt])
        .expect("forward");

    max_abs_diff(&base.data()[..n], &padded.data()[..n])
        .max(max_abs_diff(&base.data()[..n], &batched.data()[..n]))
}

// ---------------------------------------------------------------------------
// Fold plans, checked against the raw pair list.

use std::collections::BTreeMap;

use tamarian::corpus::{FoldPlan, ParallelPair};

/// Returns a description of the first violated fold property, if any.
pub fn fold_violation(pairs: &[ParallelPair], plan: &FoldPlan) -> Option<String> {
    let class_of: BTreeMap<&str, &str> = pairs
        .iter()
        .map(|p| (p.pair_id.as_str(), p.utterance_id.as_str()))
        .collect();
    let mut sizes: BTreeMap<&str, usize> = BTreeMap::new();
    for p in pairs {
        *sizes.entry(p.utterance_id.as_str()).or_default() += 1;
    }
    if plan.folds.len() != 5 {
        return Some(format!("{} folds", plan.folds.len()));
    }
    let mut tested: BTreeMap<&str, usize> = BTreeMap::new();
    for (f, fold) in plan.folds.iter().enumerate() {
        let mut all: Vec<&str> = Vec::new();
        for split in [&fold.train, &fold.dev, &fold.test] {
            all.extend(split.iter().map(String::as_str));
        }
        all.sort();
        let mut expected: Vec<&str> = class_of.keys().copied().collect();
        expected.sort();
        if all != expected {
            return Some(format!("fold {f} is not a partition of the pairs"));
        }
        for id in &fold.test {
            *tested.entry(id.as_str()).or_default() += 1;
        }
        for (class, &n) in &sizes {
            let count = |split: &[String]| {
                split
                    .iter()
                    .filter(|id| class_of[id.as_str()] == *class)
                    .count()
            };
            let got = (count(&fold.train), count(&fold.dev), count(&fold.test));
            let want = match n {
                10 => (6, 2, 2),
                5 => (3, 1, 1),
                _ => return Some(format!("class {class} has unsupported size {n}")),
            };
            if got != want {
                return Some(format!(
                    "fold {f} class {class}: {got:?} instead of {want:?}"
                ));
            }
        }
    }
    if tested.len() != pairs.len() || tested.values().any(|&c| c != 1) {
        return Some("some pair is not tested exactly once".into());
    }
    None
}

/// Pairs for classes of the given sizes, ids chosen so that lexicographic
/// and insertion order differ.
pub fn pairs_with_sizes(sizes: &[usize]) -> Vec<ParallelPair> {
    let mut out = Vec::new();
    for (c, &n) in sizes.iter().enumerate() {
        for i in 0..n {
            out.push(ParallelPair {
                pair_id: format!("p{}-c{c}-{i}", (n - i) * 7 % 11),
                english: format!("sentence {i} of class {c}"),
                utterance_id: format!("u{c:02}"),
            });
        }
    }
    out
}
