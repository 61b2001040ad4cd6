//! Frozen toy encoders with low-rank adapters in their attention projections.
//!
//! Both encoders are pre-norm transformer stacks with single-head attention
//! and a frozen feed-forward sublayer. The vision encoder adapts the query,
//! key and value projections; the text encoder adapts query and value only.
//! Frozen weights come from one seeded stream and adapter factors from
//! another, so frozen weights depend on the seed alone.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{self, ParamSet, Tape, Tensor, Var};

pub const CLS_ID: u32 = 0;
pub const MASK_ID: u32 = 1;
pub const UNK_ID: u32 = 2;
/// Ids below this are reserved for special tokens.
pub const FIRST_WORD_ID: u32 = 3;

const LORA_INIT_STD: f64 = 0.02;

/// A frozen linear map plus a trainable low-rank update `(alpha/r)·B·A`.
#[derive(Debug, Clone, PartialEq)]
pub struct LoraLinear {
    w_frozen: Tensor,
    a: Tensor,
    b: Tensor,
    rank: usize,
    alpha: f64,
}

impl LoraLinear {
    pub fn new(w_frozen: Tensor, a: Tensor, b: Tensor, alpha: f64) -> Result<Self> {
        if w_frozen.rank() != 2 || a.rank() != 2 || b.rank() != 2 {
            return Err(Error::dimension("lora", w_frozen.shape(), a.shape()));
        }
        let (d_out, d_in) = (w_frozen.shape()[0], w_frozen.shape()[1]);
        let rank = a.shape()[0];
        if a.shape()[1] != d_in {
            return Err(Error::dimension("lora a", w_frozen.shape(), a.shape()));
        }
        if b.shape() != [d_out, rank] {
            return Err(Error::dimension("lora b", w_frozen.shape(), b.shape()));
        }
        if !(alpha > 0.0) {
            return Err(Error::Domain(format!("lora alpha must be positive, got {alpha}")));
        }
        Ok(Self {
            w_frozen,
            a,
            b,
            rank,
            alpha,
        })
    }

    /// Frozen weight ~ N(0, 1/d_in), `a` ~ N(0, 0.02²), `b` = 0.
    pub fn init(
        d_out: usize,
        d_in: usize,
        rank: usize,
        alpha: f64,
        frozen_rng: &mut ChaCha8Rng,
        adapter_rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if rank == 0 {
            return Err(Error::Domain("lora rank must be positive".into()));
        }
        let w = Tensor::randn(&[d_out, d_in], (1.0 / d_in as f64).sqrt(), frozen_rng);
        let a = Tensor::randn(&[rank, d_in], LORA_INIT_STD, adapter_rng);
        Self::new(w, a, Tensor::zeros(&[d_out, rank]), alpha)
    }

    pub fn scaling(&self) -> f64 {
        self.alpha / self.rank as f64
    }

    pub fn rank(&self) -> usize {
        self.rank
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn frozen_weight(&self) -> &Tensor {
        &self.w_frozen
    }

    pub fn a(&self) -> &Tensor {
        &self.a
    }

    pub fn b(&self) -> &Tensor {
        &self.b
    }

    pub fn a_mut(&mut self) -> &mut Tensor {
        &mut self.a
    }

    pub fn b_mut(&mut self) -> &mut Tensor {
        &mut self.b
    }

    pub fn d_in(&self) -> usize {
        self.w_frozen.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.w_frozen.shape()[0]
    }

    /// `y = W·x + (alpha/r)·B·(A·x)` applied to every row of `x`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (rows, cols) = x.rows_cols();
        if cols != self.d_in() {
            return Err(Error::dimension("lora_forward", x.shape(), self.w_frozen.shape()));
        }
        let x2 = x.clone().reshape(&[rows, cols])?;
        let base = numerics::matmul_nt(&x2, &self.w_frozen)?;
        let low = numerics::matmul_nt(&x2, &self.a)?;
        let update = numerics::matmul_nt(&low, &self.b)?;
        let s = self.scaling();
        let values = base
            .values()
            .iter()
            .zip(update.values())
            .map(|(w, u)| w + s * u)
            .collect();
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = self.d_out();
        Tensor::new(shape, values)
    }

    /// Dense equivalent `W + (alpha/r)·B·A`.
    pub fn merge(&self) -> Tensor {
        let ba = numerics::matmul(&self.b, &self.a).expect("shapes validated at construction");
        let s = self.scaling();
        let values = self
            .w_frozen
            .values()
            .iter()
            .zip(ba.values())
            .map(|(w, u)| w + s * u)
            .collect();
        Tensor::new(self.w_frozen.shape().to_vec(), values).expect("same shape")
    }

    pub(crate) fn forward_tape(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        let w = tape.constant_named(&format!("{name}.weight"), &self.w_frozen);
        let a = tape.param(&format!("{name}.lora_a"), &self.a);
        let b = tape.param(&format!("{name}.lora_b"), &self.b);
        let base = tape.matmul_nt(x, w)?;
        let low = tape.matmul_nt(x, a)?;
        let up = tape.matmul_nt(low, b)?;
        let up = tape.scale(up, self.scaling());
        tape.add(base, up)
    }
}

pub fn lora_forward(x: &Tensor, layer: &LoraLinear) -> Result<Tensor> {
    layer.forward(x)
}

pub fn lora_merge(layer: &LoraLinear) -> Tensor {
    layer.merge()
}

/// An attention projection: adapted or fully frozen.
#[derive(Debug, Clone, PartialEq)]
pub enum Projection {
    Adapted(LoraLinear),
    Frozen(Tensor),
}

impl Projection {
    fn forward_tape(&self, tape: &mut Tape, name: &str, x: Var) -> Result<Var> {
        match self {
            Projection::Adapted(l) => l.forward_tape(tape, name, x),
            Projection::Frozen(w) => {
                let w = tape.constant_named(&format!("{name}.weight"), w);
                tape.matmul_nt(x, w)
            }
        }
    }

    fn frozen_weight(&self) -> &Tensor {
        match self {
            Projection::Adapted(l) => l.frozen_weight(),
            Projection::Frozen(w) => w,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct AttentionBlock {
    q: Projection,
    k: Projection,
    v: Projection,
    out: Tensor,
    ff_in: Tensor,
    ff_out: Tensor,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Vision,
    Text,
}

impl Modality {
    pub fn prefix(self) -> &'static str {
        match self {
            Modality::Vision => "vision",
            Modality::Text => "text",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderConfig {
    pub modality: Modality,
    pub width: usize,
    pub depth: usize,
    pub rank: usize,
    pub alpha: f64,
    /// Vision: flattened frame length. Text: vocabulary size.
    pub input_dim: usize,
    /// Vision only: length of each patch the frame is split into.
    pub patch_dim: usize,
}

/// Per-frame embeddings `H` of one clip, `[T × d_v]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipFeatureSequence {
    features: Tensor,
}

impl ClipFeatureSequence {
    pub fn new(features: Tensor) -> Result<Self> {
        if features.rank() != 2 {
            return Err(Error::dimension("clip features", features.shape(), &[]));
        }
        Ok(Self { features })
    }

    pub fn features(&self) -> &Tensor {
        &self.features
    }

    pub fn frames(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Token ids with the summary token at position 0.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    ids: Vec<u32>,
}

impl TokenSequence {
    /// Prepends the summary token to `body`.
    pub fn from_body(body: &[u32]) -> Result<Self> {
        if body.is_empty() {
            return Err(Error::Domain("token sequence needs at least one token".into()));
        }
        let mut ids = Vec::with_capacity(body.len() + 1);
        ids.push(CLS_ID);
        ids.extend_from_slice(body);
        Ok(Self { ids })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn body(&self) -> &[u32] {
        &self.ids[1..]
    }

    /// Number of tokens excluding the summary token.
    pub fn len(&self) -> usize {
        self.ids.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Copy with body position `k` (0-based) replaced by the mask token.
    pub fn masked(&self, k: usize) -> Self {
        let mut ids = self.ids.clone();
        ids[k + 1] = MASK_ID;
        Self { ids }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ToyEncoder {
    config: EncoderConfig,
    seed: u64,
    /// Vision: patch embedding `[width × patch_dim]`. Text: table `[vocab × width]`.
    embed: Tensor,
    /// Vision summary-token embedding; text uses the table row of `CLS_ID`.
    summary: Tensor,
    blocks: Vec<AttentionBlock>,
}

impl ToyEncoder {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self> {
        if config.width < 2 || config.depth == 0 {
            return Err(Error::Config(format!(
                "encoder width {} / depth {} too small",
                config.width, config.depth
            )));
        }
        if config.modality == Modality::Vision
            && (config.patch_dim == 0 || config.input_dim % config.patch_dim != 0)
        {
            return Err(Error::Config(format!(
                "frame length {} is not a multiple of patch length {}",
                config.input_dim, config.patch_dim
            )));
        }
        if config.modality == Modality::Text && config.input_dim <= FIRST_WORD_ID as usize {
            return Err(Error::Config(format!("vocabulary of {} is too small", config.input_dim)));
        }
        let mut frozen = ChaCha8Rng::seed_from_u64(seed);
        let mut adapter = ChaCha8Rng::seed_from_u64(seed ^ 0x9E37_79B9_7F4A_7C15);
        let d = config.width;
        let embed = match config.modality {
            Modality::Vision => Tensor::randn(
                &[d, config.patch_dim],
                (1.0 / config.patch_dim as f64).sqrt(),
                &mut frozen,
            ),
            Modality::Text => Tensor::randn(&[config.input_dim, d], 1.0, &mut frozen),
        };
        let summary = Tensor::randn(&[d], 1.0, &mut frozen);
        let std = (1.0 / d as f64).sqrt();
        let mut blocks = Vec::with_capacity(config.depth);
        for _ in 0..config.depth {
            let q = LoraLinear::init(d, d, config.rank, config.alpha, &mut frozen, &mut adapter)?;
            let k = LoraLinear::init(d, d, config.rank, config.alpha, &mut frozen, &mut adapter)?;
            let v = LoraLinear::init(d, d, config.rank, config.alpha, &mut frozen, &mut adapter)?;
            let out = Tensor::randn(&[d, d], std, &mut frozen);
            let ff_in = Tensor::randn(&[d, d], std, &mut frozen);
            let ff_out = Tensor::randn(&[d, d], std, &mut frozen);
            let k = match config.modality {
                Modality::Vision => Projection::Adapted(k),
                Modality::Text => Projection::Frozen(k.frozen_weight().clone()),
            };
            blocks.push(AttentionBlock {
                q: Projection::Adapted(q),
                k,
                v: Projection::Adapted(v),
                out,
                ff_in,
                ff_out,
            });
        }
        Ok(Self {
            config,
            seed,
            embed,
            summary,
            blocks,
        })
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn width(&self) -> usize {
        self.config.width
    }

    pub fn modality(&self) -> Modality {
        self.config.modality
    }

    fn prefix(&self) -> &'static str {
        self.config.modality.prefix()
    }

    /// Copy whose adapted projections are replaced by their frozen weights.
    pub fn frozen(&self) -> Self {
        self.map_projections(|p| match p {
            Projection::Adapted(l) => Projection::Frozen(l.frozen_weight().clone()),
            other => other.clone(),
        })
    }

    /// Copy with every adapter merged into a dense frozen weight.
    pub fn merged(&self) -> Self {
        self.map_projections(|p| match p {
            Projection::Adapted(l) => Projection::Frozen(l.merge()),
            other => other.clone(),
        })
    }

    fn map_projections(&self, f: impl Fn(&Projection) -> Projection) -> Self {
        let mut out = self.clone();
        for block in &mut out.blocks {
            block.q = f(&block.q);
            block.k = f(&block.k);
            block.v = f(&block.v);
        }
        out
    }

    pub fn adapters(&self) -> Vec<(String, &LoraLinear)> {
        let mut out = Vec::new();
        for (i, block) in self.blocks.iter().enumerate() {
            for (tag, p) in [("q", &block.q), ("k", &block.k), ("v", &block.v)] {
                if let Projection::Adapted(l) = p {
                    out.push((format!("{}.blocks.{i}.{tag}", self.prefix()), l));
                }
            }
        }
        out
    }

    /// Visits every frozen tensor in a fixed order.
    pub fn for_each_frozen(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        let p = self.prefix();
        f(&format!("{p}.embed"), &self.embed);
        f(&format!("{p}.summary"), &self.summary);
        for (i, block) in self.blocks.iter().enumerate() {
            f(&format!("{p}.blocks.{i}.q.weight"), block.q.frozen_weight());
            f(&format!("{p}.blocks.{i}.k.weight"), block.k.frozen_weight());
            f(&format!("{p}.blocks.{i}.v.weight"), block.v.frozen_weight());
            f(&format!("{p}.blocks.{i}.out"), &block.out);
            f(&format!("{p}.blocks.{i}.ff_in"), &block.ff_in);
            f(&format!("{p}.blocks.{i}.ff_out"), &block.ff_out);
        }
    }

    fn frame_rows(&self, frames: &[&[f64]]) -> Result<(Tensor, Vec<usize>)> {
        if self.config.modality != Modality::Vision {
            return Err(Error::Contract("frames fed to a text encoder".into()));
        }
        if frames.is_empty() {
            return Err(Error::Domain("clip has no frames".into()));
        }
        let (d, pd) = (self.config.width, self.config.patch_dim);
        let patches = self.config.input_dim / pd;
        let seg = patches + 1;
        let mut rows = Vec::with_capacity(frames.len() * seg * d);
        for frame in frames {
            if frame.len() != self.config.input_dim {
                return Err(Error::dimension(
                    "encode_video_frames",
                    &[frame.len()],
                    &[self.config.input_dim],
                ));
            }
            rows.extend_from_slice(self.summary.values());
            for patch in frame.chunks(pd) {
                for r in 0..d {
                    rows.push(numerics::ops::dot(self.embed.row(r), patch));
                }
            }
        }
        let n = frames.len() * seg;
        Ok((Tensor::new(vec![n, d], rows)?, vec![seg; frames.len()]))
    }

    fn token_rows(&self, seqs: &[&TokenSequence]) -> Result<(Tensor, Vec<usize>)> {
        if self.config.modality != Modality::Text {
            return Err(Error::Contract("tokens fed to a vision encoder".into()));
        }
        if seqs.is_empty() {
            return Err(Error::Domain("no token sequences".into()));
        }
        let d = self.config.width;
        let vocab = self.config.input_dim;
        let mut rows = Vec::new();
        let mut lens = Vec::with_capacity(seqs.len());
        for s in seqs {
            for &id in s.ids() {
                if id as usize >= vocab {
                    return Err(Error::Vocabulary { id, vocab });
                }
                rows.extend_from_slice(self.embed.row(id as usize));
            }
            lens.push(s.ids().len());
        }
        let n = lens.iter().sum();
        Ok((Tensor::new(vec![n, d], rows)?, lens))
    }

    /// Runs the block stack on `x0` and returns the summary-token rows.
    fn forward_segments(&self, tape: &mut Tape, x0: Tensor, lens: &[usize]) -> Result<Var> {
        let p = self.prefix();
        let scale = 1.0 / (self.config.width as f64).sqrt();
        let mut x = tape.constant(x0);
        for (i, block) in self.blocks.iter().enumerate() {
            let h = tape.layer_norm(x)?;
            let q = block.q.forward_tape(tape, &format!("{p}.blocks.{i}.q"), h)?;
            let k = block.k.forward_tape(tape, &format!("{p}.blocks.{i}.k"), h)?;
            let v = block.v.forward_tape(tape, &format!("{p}.blocks.{i}.v"), h)?;
            let att = tape.segment_attention(q, k, v, lens, scale)?;
            let out_w = tape.constant_named(&format!("{p}.blocks.{i}.out"), &block.out);
            let o = tape.matmul_nt(att, out_w)?;
            x = tape.add(x, o)?;

            let h = tape.layer_norm(x)?;
            let w_in = tape.constant_named(&format!("{p}.blocks.{i}.ff_in"), &block.ff_in);
            let w_out = tape.constant_named(&format!("{p}.blocks.{i}.ff_out"), &block.ff_out);
            let f = tape.matmul_nt(h, w_in)?;
            let f = tape.gelu(f);
            let f = tape.matmul_nt(f, w_out)?;
            x = tape.add(x, f)?;
        }
        let starts: Vec<usize> = lens
            .iter()
            .scan(0, |acc, &l| {
                let s = *acc;
                *acc += l;
                Some(s)
            })
            .collect();
        tape.gather_rows(x, &starts)
    }

    /// Frame embeddings `[n_frames × width]`; each frame is encoded alone.
    pub fn encode_frames_tape(&self, tape: &mut Tape, frames: &[&[f64]]) -> Result<Var> {
        let (x0, lens) = self.frame_rows(frames)?;
        self.forward_segments(tape, x0, &lens)
    }

    /// Sentence embeddings `[n × width]` read at the summary token.
    pub fn encode_tokens_tape(&self, tape: &mut Tape, seqs: &[&TokenSequence]) -> Result<Var> {
        let (x0, lens) = self.token_rows(seqs)?;
        self.forward_segments(tape, x0, &lens)
    }
}

pub fn encode_video_frames(frames: &[Vec<f64>], encoder: &ToyEncoder) -> Result<ClipFeatureSequence> {
    let refs: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
    let mut tape = Tape::inference();
    let out = encoder.encode_frames_tape(&mut tape, &refs)?;
    ClipFeatureSequence::new(tape.value(out).clone())
}

pub fn encode_text(tokens: &TokenSequence, encoder: &ToyEncoder) -> Result<Tensor> {
    let mut tape = Tape::inference();
    let out = encoder.encode_tokens_tape(&mut tape, &[tokens])?;
    Ok(Tensor::vector(tape.value(out).values().to_vec()))
}

impl ParamSet for ToyEncoder {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (name, l) in self.adapters() {
            f(&format!("{name}.lora_a"), l.a());
            f(&format!("{name}.lora_b"), l.b());
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let p = self.prefix();
        for (i, block) in self.blocks.iter_mut().enumerate() {
            for (tag, proj) in [("q", &mut block.q), ("k", &mut block.k), ("v", &mut block.v)] {
                if let Projection::Adapted(l) = proj {
                    f(&format!("{p}.blocks.{i}.{tag}.lora_a"), &mut l.a);
                    f(&format!("{p}.blocks.{i}.{tag}.lora_b"), &mut l.b);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn vision(seed: u64) -> ToyEncoder {
        ToyEncoder::new(
            EncoderConfig {
                modality: Modality::Vision,
                width: 8,
                depth: 2,
                rank: 2,
                alpha: 4.0,
                input_dim: 12,
                patch_dim: 4,
            },
            seed,
        )
        .unwrap()
    }

    fn text(seed: u64) -> ToyEncoder {
        ToyEncoder::new(
            EncoderConfig {
                modality: Modality::Text,
                width: 8,
                depth: 2,
                rank: 2,
                alpha: 4.0,
                input_dim: 32,
                patch_dim: 0,
            },
            seed,
        )
        .unwrap()
    }

    fn randomize_b(enc: &mut ToyEncoder, seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        enc.for_each_param_mut(&mut |n, t| {
            if n.ends_with("lora_b") {
                for v in t.values_mut() {
                    *v = rng.gen_range(-0.5..0.5);
                }
            }
        });
    }

    #[test]
    fn zero_b_equals_frozen_layer() {
        let mut f = ChaCha8Rng::seed_from_u64(1);
        let mut a = ChaCha8Rng::seed_from_u64(2);
        let layer = LoraLinear::init(3, 4, 2, 4.0, &mut f, &mut a).unwrap();
        let x = Tensor::randn(&[5, 4], 1.0, &mut f);
        let y = layer.forward(&x).unwrap();
        let base = numerics::matmul_nt(&x, layer.frozen_weight()).unwrap();
        assert_eq!(y, base);
        assert_eq!(layer.merge(), *layer.frozen_weight());
    }

    #[test]
    fn analytic_scale_case() {
        let layer = LoraLinear::new(
            Tensor::zeros(&[2, 2]),
            Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap(),
            Tensor::matrix(2, 1, vec![1.0, 0.0]).unwrap(),
            2.0,
        )
        .unwrap();
        let y = lora_forward(&Tensor::vector(vec![1.0, 1.0]), &layer).unwrap();
        assert_eq!(y.values(), &[2.0, 0.0]);
        assert_eq!(y.shape(), &[2]);
    }

    #[test]
    fn shape_mismatch_is_dimension_error() {
        let mut f = ChaCha8Rng::seed_from_u64(1);
        let mut a = ChaCha8Rng::seed_from_u64(2);
        let layer = LoraLinear::init(3, 4, 2, 4.0, &mut f, &mut a).unwrap();
        assert!(matches!(
            layer.forward(&Tensor::zeros(&[2, 5])),
            Err(Error::Dimension { .. })
        ));
    }

    #[test]
    fn forward_matches_dense_materialization() {
        let mut f = ChaCha8Rng::seed_from_u64(9);
        let mut a = ChaCha8Rng::seed_from_u64(10);
        let mut layer = LoraLinear::init(6, 5, 3, 6.0, &mut f, &mut a).unwrap();
        *layer.b_mut() = Tensor::randn(&[6, 3], 0.5, &mut f);
        let x = Tensor::randn(&[7, 5], 1.0, &mut f);
        let dense = layer.merge();
        let expected = numerics::matmul_nt(&x, &dense).unwrap();
        assert!(layer.forward(&x).unwrap().max_abs_diff(&expected) < 1e-10);
        // merging is a pure function of the factors
        assert_eq!(layer.merge(), dense);
    }

    #[test]
    fn same_seed_same_frozen_weights() {
        let (a, b) = (vision(5), vision(5));
        let mut fa = Vec::new();
        a.for_each_frozen(&mut |_, t| fa.push(t.clone()));
        let mut fb = Vec::new();
        b.for_each_frozen(&mut |_, t| fb.push(t.clone()));
        assert_eq!(fa, fb);
        assert_ne!(vision(6).embed, a.embed);
    }

    #[test]
    fn text_stream_adapts_query_and_value_only() {
        let names = text(1).param_names();
        assert!(names.iter().all(|n| !n.contains(".k.")));
        assert_eq!(names.len(), 2 * 2 * 2);
        assert_eq!(vision(1).param_names().len(), 2 * 3 * 2);
    }

    #[test]
    fn zero_update_reproduces_frozen_encoder() {
        let enc = vision(3);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames: Vec<Vec<f64>> = (0..3)
            .map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let adapted = encode_video_frames(&frames, &enc).unwrap();
        let frozen = encode_video_frames(&frames, &enc.frozen()).unwrap();
        assert_eq!(adapted, frozen);

        let t = text(3);
        let toks = TokenSequence::from_body(&[5, 9, 17]).unwrap();
        assert_eq!(encode_text(&toks, &t).unwrap(), encode_text(&toks, &t.frozen()).unwrap());
    }

    #[test]
    fn frames_are_encoded_independently() {
        let mut enc = vision(3);
        randomize_b(&mut enc, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let frames: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let out = encode_video_frames(&frames, &enc).unwrap();
        let perm = [2, 0, 3, 1];
        let permuted: Vec<Vec<f64>> = perm.iter().map(|&i| frames[i].clone()).collect();
        let out_p = encode_video_frames(&permuted, &enc).unwrap();
        for (row, &src) in perm.iter().enumerate() {
            assert_eq!(out_p.features().row(row), out.features().row(src));
        }
        let single = encode_video_frames(&frames[1..2], &enc).unwrap();
        assert_eq!(single.features().row(0), out.features().row(1));
    }

    #[test]
    fn merged_encoder_matches_adapters() {
        let mut enc = vision(11);
        randomize_b(&mut enc, 12);
        let frames = vec![vec![0.3; 12], (0..12).map(|i| i as f64 / 12.0).collect()];
        let a = encode_video_frames(&frames, &enc).unwrap();
        let m = encode_video_frames(&frames, &enc.merged()).unwrap();
        assert!(a.features().max_abs_diff(m.features()) < 1e-10);
        assert_ne!(a, encode_video_frames(&frames, &enc.frozen()).unwrap());
    }

    #[test]
    fn text_errors_and_context_sensitivity() {
        let t = text(2);
        let bad = TokenSequence::from_body(&[40]).unwrap();
        assert!(matches!(encode_text(&bad, &t), Err(Error::Vocabulary { id: 40, .. })));
        assert!(TokenSequence::from_body(&[]).is_err());
        let short = encode_text(&TokenSequence::from_body(&[4, 5]).unwrap(), &t).unwrap();
        let long = encode_text(&TokenSequence::from_body(&[4, 5, 6]).unwrap(), &t).unwrap();
        let dist: f64 = short
            .values()
            .iter()
            .zip(long.values())
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            .sqrt();
        assert!(dist > 0.0);
        assert_eq!(short, encode_text(&TokenSequence::from_body(&[4, 5]).unwrap(), &t).unwrap());
    }

    #[test]
    fn empty_clip_is_domain_error() {
        assert!(matches!(encode_video_frames(&[], &vision(1)), Err(Error::Domain(_))));
    }
}
