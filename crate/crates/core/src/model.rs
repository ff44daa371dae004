//! Encoder–decoder transformer with pre-layer-norm blocks, sinusoidal
//! positions and an output projection tied to the shared embedding table.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::hex;
use crate::error::{Error, Result};
use crate::numerics::{
    softmax_rows, Checkpoint, CheckpointMeta, Graph, ParamId, ParamStore, Tensor, Var,
};
use crate::rng::{self, Rng, RngExt};
use crate::tokenizer::{Side, TokenSequence, Vocabulary, BOS, EOS, PAD, SPECIAL_TOKENS};

const MASKED: f64 = -1e9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizePreset {
    Small,
    Base,
    Large,
}

impl SizePreset {
    pub const ALL: [SizePreset; 3] = [SizePreset::Small, SizePreset::Base, SizePreset::Large];

    /// `(d_model, n_heads, n_layers, d_ff)`.
    pub fn dims(self) -> (usize, usize, usize, usize) {
        match self {
            SizePreset::Small => (64, 2, 2, 128),
            SizePreset::Base => (128, 4, 3, 256),
            SizePreset::Large => (256, 4, 4, 512),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SizePreset::Small => "small",
            SizePreset::Base => "base",
            SizePreset::Large => "large",
        }
    }
}

impl std::str::FromStr for SizePreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small" => Ok(SizePreset::Small),
            "base" => Ok(SizePreset::Base),
            "large" => Ok(SizePreset::Large),
            other => Err(Error::validation(format!("unknown size preset {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_heads: usize,
    pub n_layers: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
    pub size_preset: Option<SizePreset>,
}

impl ModelConfig {
    pub fn preset(preset: SizePreset) -> Self {
        let (d_model, n_heads, n_layers, d_ff) = preset.dims();
        Self {
            d_model,
            n_heads,
            n_layers,
            d_ff,
            max_len: 64,
            dropout: 0.1,
            seed: 0,
            size_preset: Some(preset),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 || self.max_len == 0 {
            return Err(Error::validation(format!(
                "model dimensions must be positive: {self:?}"
            )));
        }
        if self.d_model % self.n_heads != 0 {
            return Err(Error::validation(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::validation(format!(
                "dropout {} outside [0, 1)",
                self.dropout
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count for a vocabulary of `vocab` tokens.
    pub fn parameter_count(&self, vocab: usize) -> usize {
        let (d, f, l) = (self.d_model, self.d_ff, self.n_layers);
        let attention = 4 * (d * d + d);
        let ff = d * f + f + f * d + d;
        let norm = 2 * d;
        let encoder_layer = attention + ff + 2 * norm;
        let decoder_layer = 2 * attention + ff + 3 * norm;
        vocab * d + l * (encoder_layer + decoder_layer) + 2 * norm
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serializes");
        hex(&Sha256::digest(json.as_bytes()))
    }
}

#[derive(Debug, Clone)]
struct Linear {
    w: ParamId,
    b: ParamId,
}

#[derive(Debug, Clone)]
struct Norm {
    gain: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
struct Attention {
    q: Linear,
    k: Linear,
    v: Linear,
    o: Linear,
}

#[derive(Debug, Clone)]
struct FeedForward {
    up: Linear,
    down: Linear,
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn_norm: Norm,
    attn: Attention,
    ff_norm: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_norm: Norm,
    self_attn: Attention,
    cross_norm: Norm,
    cross_attn: Attention,
    ff_norm: Norm,
    ff: FeedForward,
}

#[derive(Debug, Clone)]
struct Layout {
    embed: ParamId,
    encoder: Vec<EncoderLayer>,
    encoder_norm: Norm,
    decoder: Vec<DecoderLayer>,
    decoder_norm: Norm,
}

struct Builder<'a> {
    store: &'a mut ParamStore,
    seed: u64,
}

impl Builder<'_> {
    fn uniform(&mut self, name: &str, rows: usize, cols: usize) -> Result<ParamId> {
        let bound = (6.0 / (rows + cols) as f64).sqrt();
        let mut r = rng::stream(self.seed, &format!("init/{name}"));
        let t = Tensor::from_fn(&[rows, cols], |_| r.gen_range(-bound..bound));
        self.store.insert(name, t)
    }

    fn filled(&mut self, name: &str, len: usize, value: f64) -> Result<ParamId> {
        self.store.insert(name, Tensor::full(&[len], value))
    }

    fn linear(&mut self, name: &str, fan_in: usize, fan_out: usize) -> Result<Linear> {
        Ok(Linear {
            w: self.uniform(&format!("{name}.w"), fan_in, fan_out)?,
            b: self.filled(&format!("{name}.b"), fan_out, 0.0)?,
        })
    }

    fn norm(&mut self, name: &str, d: usize) -> Result<Norm> {
        Ok(Norm {
            gain: self.filled(&format!("{name}.gain"), d, 1.0)?,
            bias: self.filled(&format!("{name}.bias"), d, 0.0)?,
        })
    }

    fn attention(&mut self, name: &str, d: usize) -> Result<Attention> {
        Ok(Attention {
            q: self.linear(&format!("{name}.q"), d, d)?,
            k: self.linear(&format!("{name}.k"), d, d)?,
            v: self.linear(&format!("{name}.v"), d, d)?,
            o: self.linear(&format!("{name}.o"), d, d)?,
        })
    }

    fn feed_forward(&mut self, name: &str, d: usize, f: usize) -> Result<FeedForward> {
        Ok(FeedForward {
            up: self.linear(&format!("{name}.up"), d, f)?,
            down: self.linear(&format!("{name}.down"), f, d)?,
        })
    }
}

/// Padded batch of token sequences, row-major `[batch, len]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Batch {
    pub ids: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl Batch {
    pub fn pad<S: AsRef<[usize]>>(seqs: &[S]) -> Self {
        let len = seqs.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            let s = s.as_ref();
            ids.extend_from_slice(s);
            ids.extend(std::iter::repeat(PAD).take(len - s.len()));
        }
        Self {
            ids,
            batch: seqs.len(),
            len,
        }
    }

    fn is_pad(&self, b: usize, t: usize) -> bool {
        self.ids[b * self.len + t] == PAD
    }
}

/// One forward pass: the graph plus lazily-inserted parameter leaves.
pub(crate) struct Pass<'m, 'r> {
    model: &'m Model,
    pub(crate) graph: Graph,
    leaves: Vec<Option<Var>>,
    dropout: Option<&'r mut Rng>,
}

impl<'m, 'r> Pass<'m, 'r> {
    pub(crate) fn new(model: &'m Model, dropout: Option<&'r mut Rng>) -> Self {
        Self {
            model,
            graph: Graph::new(),
            leaves: vec![None; model.params.len()],
            dropout,
        }
    }

    fn p(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.leaves[id.0] {
            return v;
        }
        let v = self.graph.param(&self.model.params, id);
        self.leaves[id.0] = Some(v);
        v
    }

    fn drop(&mut self, x: Var) -> Result<Var> {
        let p = self.model.config.dropout;
        match self.dropout.as_deref_mut() {
            Some(r) if p > 0.0 => self.graph.dropout(x, p, r),
            _ => Ok(x),
        }
    }

    fn linear(&mut self, x: Var, l: &Linear) -> Result<Var> {
        let (w, b) = (self.p(l.w), self.p(l.b));
        let y = self.graph.matmul(x, w)?;
        self.graph.add(y, b)
    }

    fn norm(&mut self, x: Var, n: &Norm) -> Result<Var> {
        let (g, b) = (self.p(n.gain), self.p(n.bias));
        self.graph.layer_norm(x, g, b)
    }

    fn feed_forward(&mut self, x: Var, ff: &FeedForward) -> Result<Var> {
        let h = self.linear(x, &ff.up)?;
        let h = self.graph.relu(h);
        self.linear(h, &ff.down)
    }

    /// Multi-head attention. `masked[(b·Tq + i)·Tk + j]` hides key `j` from
    /// query `i` in batch row `b`.
    fn attention(
        &mut self,
        queries: Var,
        keys: Var,
        masked: &[bool],
        a: &Attention,
    ) -> Result<Var> {
        let cfg = &self.model.config;
        let (h, dh) = (cfg.n_heads, cfg.d_model / cfg.n_heads);
        let qs = self.graph.shape(queries).to_vec();
        let ks = self.graph.shape(keys).to_vec();
        let (b, tq, tk) = (qs[0], qs[1], ks[1]);

        let q = self.linear(queries, &a.q)?;
        let q = self.graph.reshape(q, &[b, tq, h, dh])?;
        let q = self.graph.permute(q, &[0, 2, 1, 3])?;
        let k = self.linear(keys, &a.k)?;
        let k = self.graph.reshape(k, &[b, tk, h, dh])?;
        let k = self.graph.permute(k, &[0, 2, 3, 1])?;
        let v = self.linear(keys, &a.v)?;
        let v = self.graph.reshape(v, &[b, tk, h, dh])?;
        let v = self.graph.permute(v, &[0, 2, 1, 3])?;

        let scores = self.graph.matmul(q, k)?;
        let scores = self.graph.scale(scores, 1.0 / (dh as f64).sqrt());
        let mut full = Vec::with_capacity(b * h * tq * tk);
        for bi in 0..b {
            let row = &masked[bi * tq * tk..(bi + 1) * tq * tk];
            for _ in 0..h {
                full.extend_from_slice(row);
            }
        }
        let scores = self.graph.masked_fill(scores, &full, MASKED)?;
        let weights = self.graph.softmax(scores);
        let ctx = self.graph.matmul(weights, v)?;
        let ctx = self.graph.permute(ctx, &[0, 2, 1, 3])?;
        let ctx = self.graph.reshape(ctx, &[b, tq, cfg.d_model])?;
        self.linear(ctx, &a.o)
    }

    fn embed(&mut self, batch: &Batch) -> Result<Var> {
        let cfg = &self.model.config;
        if batch.len > cfg.max_len {
            return Err(Error::validation(format!(
                "sequence of length {} exceeds max_len {}",
                batch.len, cfg.max_len
            )));
        }
        let d = cfg.d_model;
        let table = self.p(self.model.layout.embed);
        let x = self.graph.embedding(table, &batch.ids)?;
        let x = self.graph.scale(x, (d as f64).sqrt());
        let x = self.graph.reshape(x, &[batch.batch, batch.len, d])?;
        let pos = Tensor::new(
            vec![batch.len, d],
            self.model.positions[..batch.len * d].to_vec(),
        )?;
        let pos = self.graph.constant(pos);
        let x = self.graph.add(x, pos)?;
        self.drop(x)
    }

    pub(crate) fn encode(&mut self, src: &Batch) -> Result<Var> {
        let layout = &self.model.layout;
        let mut masked = Vec::with_capacity(src.batch * src.len * src.len);
        for b in 0..src.batch {
            for _ in 0..src.len {
                masked.extend((0..src.len).map(|j| src.is_pad(b, j)));
            }
        }
        let mut x = self.embed(src)?;
        for layer in &layout.encoder {
            let h = self.norm(x, &layer.attn_norm)?;
            let a = self.attention(h, h, &masked, &layer.attn)?;
            let a = self.drop(a)?;
            x = self.graph.add(x, a)?;
            let h = self.norm(x, &layer.ff_norm)?;
            let f = self.feed_forward(h, &layer.ff)?;
            let f = self.drop(f)?;
            x = self.graph.add(x, f)?;
        }
        self.norm(x, &layout.encoder_norm)
    }

    /// Decoder logits `[batch, tgt_len, vocab]` given encoder states for `src`.
    pub(crate) fn decode(&mut self, memory: Var, src: &Batch, tgt_in: &Batch) -> Result<Var> {
        let layout = &self.model.layout;
        if src.batch != tgt_in.batch {
            return Err(Error::shape(
                "forward",
                format!(
                    "source batch {} vs target batch {}",
                    src.batch, tgt_in.batch
                ),
            ));
        }
        let (b, tq, tk) = (tgt_in.batch, tgt_in.len, src.len);
        let causal: Vec<bool> = (0..b * tq * tq).map(|i| (i % tq) > (i / tq) % tq).collect();
        let mut cross = Vec::with_capacity(b * tq * tk);
        for bi in 0..b {
            for _ in 0..tq {
                cross.extend((0..tk).map(|j| src.is_pad(bi, j)));
            }
        }

        let mut y = self.embed(tgt_in)?;
        for layer in &layout.decoder {
            let h = self.norm(y, &layer.self_norm)?;
            let a = self.attention(h, h, &causal, &layer.self_attn)?;
            let a = self.drop(a)?;
            y = self.graph.add(y, a)?;
            let h = self.norm(y, &layer.cross_norm)?;
            let c = self.attention(h, memory, &cross, &layer.cross_attn)?;
            let c = self.drop(c)?;
            y = self.graph.add(y, c)?;
            let h = self.norm(y, &layer.ff_norm)?;
            let f = self.feed_forward(h, &layer.ff)?;
            let f = self.drop(f)?;
            y = self.graph.add(y, f)?;
        }
        let y = self.norm(y, &layout.decoder_norm)?;
        let table = self.p(layout.embed);
        let tied = self.graph.permute(table, &[1, 0])?;
        self.graph.matmul(y, tied)
    }

    pub(crate) fn forward(&mut self, src: &Batch, tgt_in: &Batch) -> Result<Var> {
        let memory = self.encode(src)?;
        self.decode(memory, src, tgt_in)
    }

    /// Mean cross-entropy of `logits` over the non-PAD entries of `tgt_out`.
    pub(crate) fn loss(&mut self, logits: Var, tgt_out: &Batch) -> Result<Var> {
        sequence_loss(&mut self.graph, logits, tgt_out)
    }
}

fn sequence_loss(graph: &mut Graph, logits: Var, tgt_out: &Batch) -> Result<Var> {
    let shape = graph.shape(logits).to_vec();
    if shape.len() != 3 || shape[0] != tgt_out.batch || shape[1] != tgt_out.len {
        return Err(Error::shape(
            "loss",
            format!(
                "logits {shape:?} vs targets [{}, {}]",
                tgt_out.batch, tgt_out.len
            ),
        ));
    }
    let flat = graph.reshape(logits, &[shape[0] * shape[1], shape[2]])?;
    graph.cross_entropy(flat, &tgt_out.ids, Some(PAD))
}

/// Teacher-forced training loss of precomputed logits `[batch, len, vocab]`.
pub fn loss<S: AsRef<[usize]>>(logits: &Tensor, tgt_out: &[S]) -> Result<f64> {
    let mut g = Graph::new();
    let l = g.constant(logits.clone());
    let v = sequence_loss(&mut g, l, &Batch::pad(tgt_out))?;
    g.value(v).item()
}

/// Splits `BOS … EOS` targets into decoder inputs and shifted outputs.
pub fn teacher_forcing<S: AsRef<[usize]>>(targets: &[S]) -> (Vec<Vec<usize>>, Vec<Vec<usize>>) {
    targets
        .iter()
        .map(|t| {
            let t = t.as_ref();
            let n = t.len().max(1);
            (t[..n - 1].to_vec(), t[1..].to_vec())
        })
        .unzip()
}

#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab_size: usize,
    pub params: ParamStore,
    layout: Layout,
    positions: Vec<f64>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.vocab_size == other.vocab_size
            && self.params == other.params
    }
}

fn sinusoid(max_len: usize, d: usize) -> Vec<f64> {
    let mut pe = vec![0.0; max_len * d];
    for pos in 0..max_len {
        for i in (0..d).step_by(2) {
            let angle = pos as f64 / 10000f64.powf(i as f64 / d as f64);
            pe[pos * d + i] = angle.sin();
            if i + 1 < d {
                pe[pos * d + i + 1] = angle.cos();
            }
        }
    }
    pe
}

impl Model {
    pub fn init(config: ModelConfig, vocab_size: usize) -> Result<Self> {
        config.validate()?;
        if vocab_size < SPECIAL_TOKENS.len() + 1 {
            return Err(Error::validation(format!(
                "vocabulary of {vocab_size} tokens is too small; need the {} specials plus one",
                SPECIAL_TOKENS.len()
            )));
        }
        let (d, f) = (config.d_model, config.d_ff);
        let mut params = ParamStore::new();
        let mut b = Builder {
            store: &mut params,
            seed: config.seed,
        };
        let embed = b.uniform("embed", vocab_size, d)?;
        let mut encoder = Vec::new();
        for l in 0..config.n_layers {
            let p = format!("encoder.{l}");
            encoder.push(EncoderLayer {
                attn_norm: b.norm(&format!("{p}.attn_norm"), d)?,
                attn: b.attention(&format!("{p}.attn"), d)?,
                ff_norm: b.norm(&format!("{p}.ff_norm"), d)?,
                ff: b.feed_forward(&format!("{p}.ff"), d, f)?,
            });
        }
        let encoder_norm = b.norm("encoder.norm", d)?;
        let mut decoder = Vec::new();
        for l in 0..config.n_layers {
            let p = format!("decoder.{l}");
            decoder.push(DecoderLayer {
                self_norm: b.norm(&format!("{p}.self_norm"), d)?,
                self_attn: b.attention(&format!("{p}.self_attn"), d)?,
                cross_norm: b.norm(&format!("{p}.cross_norm"), d)?,
                cross_attn: b.attention(&format!("{p}.cross_attn"), d)?,
                ff_norm: b.norm(&format!("{p}.ff_norm"), d)?,
                ff: b.feed_forward(&format!("{p}.ff"), d, f)?,
            });
        }
        let decoder_norm = b.norm("decoder.norm", d)?;
        let positions = sinusoid(config.max_len, d);
        Ok(Self {
            config,
            vocab_size,
            params,
            layout: Layout {
                embed,
                encoder,
                encoder_norm,
                decoder,
                decoder_norm,
            },
            positions,
        })
    }

    pub fn num_parameters(&self) -> usize {
        self.params.num_scalars()
    }

    /// Evaluation-mode logits `[batch, tgt_len, vocab]`.
    pub fn forward<S: AsRef<[usize]>, T: AsRef<[usize]>>(
        &self,
        src: &[S],
        tgt_in: &[T],
    ) -> Result<Tensor> {
        let mut pass = Pass::new(self, None);
        let logits = pass.forward(&Batch::pad(src), &Batch::pad(tgt_in))?;
        Ok(pass.graph.value(logits).clone())
    }

    /// Teacher-forced loss of `BOS … EOS` targets in evaluation mode.
    pub fn batch_loss<S: AsRef<[usize]>, T: AsRef<[usize]>>(
        &self,
        src: &[S],
        targets: &[T],
    ) -> Result<f64> {
        let (tgt_in, tgt_out) = teacher_forcing(targets);
        let mut pass = Pass::new(self, None);
        let logits = pass.forward(&Batch::pad(src), &Batch::pad(&tgt_in))?;
        let loss = pass.loss(logits, &Batch::pad(&tgt_out))?;
        pass.graph.value(loss).item()
    }

    /// Teacher-forced loss with gradients added into `params`. Dropout is
    /// applied when `dropout` is given.
    pub fn accumulate_gradients<S: AsRef<[usize]>, T: AsRef<[usize]>>(
        &mut self,
        src: &[S],
        targets: &[T],
        dropout: Option<&mut Rng>,
    ) -> Result<f64> {
        let (tgt_in, tgt_out) = teacher_forcing(targets);
        let (graph, loss) = {
            let mut pass = Pass::new(self, dropout);
            let logits = pass.forward(&Batch::pad(src), &Batch::pad(&tgt_in))?;
            let loss = pass.loss(logits, &Batch::pad(&tgt_out))?;
            (pass.graph, loss)
        };
        let value = graph.value(loss).item()?;
        let grads = graph.backward(loss)?;
        self.params.accumulate(&graph, &grads);
        Ok(value)
    }

    fn memory(&self, src: &[usize]) -> Result<(Tensor, Batch)> {
        let src = Batch::pad(&[src]);
        let mut pass = Pass::new(self, None);
        let memory = pass.encode(&src)?;
        Ok((pass.graph.value(memory).clone(), src))
    }

    /// Greedy decoding from BOS: appends the argmax token (lowest id on
    /// ties) until EOS or `max_len` generated tokens. BOS is not included in
    /// the result; a terminal EOS is.
    pub fn greedy_decode(&self, src: &[usize], max_len: usize) -> Result<TokenSequence> {
        let limit = max_len.min(self.config.max_len);
        let (memory, src) = self.memory(src)?;
        let mut prefix = vec![BOS];
        let mut out = Vec::new();
        while out.len() < limit {
            let mut pass = Pass::new(self, None);
            let mem = pass.graph.constant(memory.clone());
            let tgt = Batch::pad(&[&prefix]);
            let logits = pass.decode(mem, &src, &tgt)?;
            let v = self.vocab_size;
            let last = &pass.graph.value(logits).data()[(prefix.len() - 1) * v..prefix.len() * v];
            let mut best = 0;
            for (i, &x) in last.iter().enumerate() {
                if x > last[best] {
                    best = i;
                }
            }
            out.push(best);
            if best == EOS {
                break;
            }
            prefix.push(best);
        }
        Ok(TokenSequence {
            ids: out,
            side: Side::Target,
        })
    }

    /// Mean per-token log-probability of each `BOS … EOS` candidate given
    /// `src`, under teacher forcing.
    pub fn score_candidates<S: AsRef<[usize]>>(
        &self,
        src: &[usize],
        candidates: &[S],
    ) -> Result<Vec<f64>> {
        if candidates.is_empty() {
            return Err(Error::validation("no candidates to score"));
        }
        let (memory, _) = self.memory(src)?;
        let n = candidates.len();
        let tiled: Vec<&[usize]> = vec![src; n];
        let src_batch = Batch::pad(&tiled);
        let mut mem_data = Vec::with_capacity(memory.len() * n);
        for _ in 0..n {
            mem_data.extend_from_slice(memory.data());
        }
        let mut shape = memory.shape().to_vec();
        shape[0] = n;

        let (tgt_in, tgt_out) = teacher_forcing(candidates);
        let tgt_in = Batch::pad(&tgt_in);
        let tgt_out = Batch::pad(&tgt_out);

        let mut pass = Pass::new(self, None);
        let mem = pass.graph.constant(Tensor::new(shape, mem_data)?);
        let logits = pass.decode(mem, &src_batch, &tgt_in)?;
        let mut logp = pass.graph.value(logits).data().to_vec();
        let v = self.vocab_size;
        softmax_rows(&mut logp, v);

        let mut scores = Vec::with_capacity(n);
        for (c, cand) in candidates.iter().enumerate() {
            let len = cand.as_ref().len().saturating_sub(1);
            let mut total = 0.0;
            for t in 0..len {
                let y = tgt_out.ids[c * tgt_out.len + t];
                total += logp[(c * tgt_out.len + t) * v + y].ln();
            }
            scores.push(if len == 0 { 0.0 } else { total / len as f64 });
        }
        Ok(scores)
    }

    pub fn to_checkpoint(&self, vocab: &Vocabulary) -> Checkpoint {
        let extra = serde_json::json!({
            "config": self.config,
            "vocab_size": self.vocab_size,
            "vocab_hash": vocab.hash(),
        });
        self.params.to_checkpoint(CheckpointMeta {
            seed: self.config.seed,
            config_hash: self.config.hash(),
            extra,
        })
    }

    /// Rebuilds a model from a checkpoint written for `vocab`.
    pub fn from_checkpoint(ckpt: &Checkpoint, vocab: &Vocabulary) -> Result<Self> {
        #[derive(Deserialize)]
        struct Extra {
            config: ModelConfig,
            vocab_size: usize,
            vocab_hash: String,
        }
        let extra: Extra = serde_json::from_value(ckpt.meta.extra.clone())?;
        if extra.vocab_hash != vocab.hash() || extra.vocab_size != vocab.len() {
            return Err(Error::validation(
                "checkpoint was trained with a different vocabulary",
            ));
        }
        if extra.config.hash() != ckpt.meta.config_hash {
            return Err(Error::validation(
                "checkpoint config hash does not match its config",
            ));
        }
        let mut model = Model::init(extra.config, extra.vocab_size)?;
        let loaded = ParamStore::from_checkpoint(ckpt)?;
        let want: BTreeSet<&str> = model.params.iter().map(|p| p.name.as_str()).collect();
        let got: BTreeSet<&str> = loaded.iter().map(|p| p.name.as_str()).collect();
        if want != got {
            return Err(Error::validation(
                "checkpoint parameter names do not match the model",
            ));
        }
        for id in model.params.ids().collect::<Vec<_>>() {
            let name = model.params.param(id).name.clone();
            let src = loaded.value(loaded.get(&name).expect("checked"));
            if src.shape() != model.params.value(id).shape() {
                return Err(Error::validation(format!(
                    "parameter {name} has shape {:?}",
                    src.shape()
                )));
            }
            *model.params.value_mut(id) = src.clone();
        }
        Ok(model)
    }
}
