use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::head::ProjectionHead;
use super::loss::{contrastive_loss_tape, TAU_MAX, TAU_MIN};
use crate::adapters::{EncoderConfig, Modality, TokenSequence, ToyEncoder};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, ParamSet, Tape, Tensor, Var};
use crate::pooling::TemporalPooler;

/// A clip as `T` flattened frames.
pub type Clip = Vec<Vec<f64>>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub d_v: usize,
    pub d_t: usize,
    pub embed_dim: usize,
    pub depth: usize,
    /// Flattened frame length fed to the vision encoder.
    pub frame_dim: usize,
    pub patch_dim: usize,
    pub vocab: usize,
    pub tau_init: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_v: 32,
            d_t: 32,
            embed_dim: 32,
            depth: 2,
            frame_dim: 64,
            patch_dim: 8,
            vocab: 256,
            tau_init: 0.07,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoraConfig {
    pub r: usize,
    pub alpha: f64,
}

impl Default for LoraConfig {
    fn default() -> Self {
        Self { r: 16, alpha: 32.0 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentModel {
    pub vision: ToyEncoder,
    pub text: ToyEncoder,
    pub pooler: TemporalPooler,
    pub proj_v: ProjectionHead,
    pub proj_t: ProjectionHead,
    log_tau: Tensor,
}

impl AlignmentModel {
    pub fn new(model: &ModelConfig, lora: &LoraConfig, seed: u64) -> Result<Self> {
        if !(TAU_MIN..=TAU_MAX).contains(&model.tau_init) {
            return Err(Error::Config(format!("tau_init {} outside [{TAU_MIN}, {TAU_MAX}]", model.tau_init)));
        }
        let vision = ToyEncoder::new(
            EncoderConfig {
                modality: Modality::Vision,
                width: model.d_v,
                depth: model.depth,
                rank: lora.r,
                alpha: lora.alpha,
                input_dim: model.frame_dim,
                patch_dim: model.patch_dim,
            },
            derive_seed(seed, 1),
        )?;
        let text = ToyEncoder::new(
            EncoderConfig {
                modality: Modality::Text,
                width: model.d_t,
                depth: model.depth,
                rank: lora.r,
                alpha: lora.alpha,
                input_dim: model.vocab,
                patch_dim: 0,
            },
            derive_seed(seed, 2),
        )?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 3));
        let pooler = TemporalPooler::init(model.d_v, &mut rng)?;
        let proj_v = ProjectionHead::init("proj_v", model.d_v, model.embed_dim, &mut rng)?;
        let proj_t = ProjectionHead::init("proj_t", model.d_t, model.embed_dim, &mut rng)?;
        Ok(Self {
            vision,
            text,
            pooler,
            proj_v,
            proj_t,
            log_tau: Tensor::scalar(model.tau_init.ln()),
        })
    }

    pub fn tau(&self) -> f64 {
        self.log_tau.values()[0].exp().clamp(TAU_MIN, TAU_MAX)
    }

    pub fn log_tau(&self) -> f64 {
        self.log_tau.values()[0]
    }

    pub fn set_log_tau(&mut self, v: f64) {
        self.log_tau.values_mut()[0] = v;
    }

    /// Keeps `exp(log_tau)` inside the temperature range.
    pub fn clamp_log_tau(&mut self) {
        let v = self.log_tau().clamp(TAU_MIN.ln(), TAU_MAX.ln());
        self.set_log_tau(v);
    }

    pub fn embed_dim(&self) -> usize {
        self.proj_v.d_out()
    }

    /// Unit clip embeddings `[B × D]`; every clip must have the same length.
    pub fn clips_tape(&self, tape: &mut Tape, clips: &[&Clip]) -> Result<Var> {
        let t = clips.first().map_or(0, |c| c.len());
        if t == 0 {
            return Err(Error::Domain("empty clip batch or clip without frames".into()));
        }
        if let Some(bad) = clips.iter().find(|c| c.len() != t) {
            return Err(Error::dimension("clip batch", &[t], &[bad.len()]));
        }
        let frames: Vec<&[f64]> = clips.iter().flat_map(|c| c.iter().map(Vec::as_slice)).collect();
        let h = self.vision.encode_frames_tape(tape, &frames)?;
        let pooled = self.pooler.pool_tape(tape, h, clips.len())?;
        self.proj_v.forward_tape(tape, pooled)
    }

    /// Unit text embeddings `[B × D]`.
    pub fn texts_tape(&self, tape: &mut Tape, texts: &[&TokenSequence]) -> Result<Var> {
        let h = self.text.encode_tokens_tape(tape, texts)?;
        self.proj_t.forward_tape(tape, h)
    }

    pub fn loss_tape(&self, tape: &mut Tape, clips: &[&Clip], texts: &[&TokenSequence], c: &[f64]) -> Result<Var> {
        if clips.len() != texts.len() {
            return Err(Error::dimension("batch", &[clips.len()], &[texts.len()]));
        }
        let zv = self.clips_tape(tape, clips)?;
        let zt = self.texts_tape(tape, texts)?;
        let log_tau = tape.param("log_tau", &self.log_tau);
        contrastive_loss_tape(tape, zv, zt, c, log_tau)
    }

    /// Pooled clip features `[B × d_v]` before projection.
    pub fn pooled_features(&self, clips: &[&Clip]) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let t = clips.first().map_or(0, |c| c.len());
        if t == 0 || clips.iter().any(|c| c.len() != t) {
            return Err(Error::Domain("clips must be nonempty and of equal length".into()));
        }
        let frames: Vec<&[f64]> = clips.iter().flat_map(|c| c.iter().map(Vec::as_slice)).collect();
        let h = self.vision.encode_frames_tape(&mut tape, &frames)?;
        let pooled = self.pooler.pool_tape(&mut tape, h, clips.len())?;
        Ok(tape.value(pooled).clone())
    }

    pub fn embed_clips(&self, clips: &[&Clip]) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let z = self.clips_tape(&mut tape, clips)?;
        Ok(tape.value(z).clone())
    }

    pub fn embed_texts(&self, texts: &[&TokenSequence]) -> Result<Tensor> {
        let mut tape = Tape::inference();
        let z = self.texts_tape(&mut tape, texts)?;
        Ok(tape.value(z).clone())
    }

    /// Visits every frozen tensor of both encoders.
    pub fn for_each_frozen(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.vision.for_each_frozen(f);
        self.text.for_each_frozen(f);
    }
}

impl ParamSet for AlignmentModel {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        self.vision.for_each_param(f);
        self.text.for_each_param(f);
        self.pooler.for_each_param(f);
        self.proj_v.for_each_param(f);
        self.proj_t.for_each_param(f);
        f("log_tau", &self.log_tau);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.vision.for_each_param_mut(f);
        self.text.for_each_param_mut(f);
        self.pooler.for_each_param_mut(f);
        self.proj_v.for_each_param_mut(f);
        self.proj_t.for_each_param_mut(f);
        f("log_tau", &mut self.log_tau);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_param_layout() {
        let m = AlignmentModel::new(&ModelConfig::default(), &LoraConfig::default(), 0).unwrap();
        assert!((m.tau() - 0.07).abs() < 1e-12);
        let names = m.param_names();
        assert_eq!(names.last().unwrap(), "log_tau");
        assert!(names.contains(&"vision.blocks.1.k.lora_a".to_string()));
        assert!(!names.contains(&"text.blocks.0.k.lora_a".to_string()));
        assert!(names.contains(&"pooler.w1".to_string()));
        assert!(names.contains(&"proj_t.l2.bias".to_string()));
    }

    #[test]
    fn same_seed_same_model() {
        let a = AlignmentModel::new(&ModelConfig::default(), &LoraConfig::default(), 9).unwrap();
        let b = AlignmentModel::new(&ModelConfig::default(), &LoraConfig::default(), 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ragged_clips_rejected() {
        let m = AlignmentModel::new(&ModelConfig::default(), &LoraConfig::default(), 0).unwrap();
        let a: Clip = vec![vec![0.1; 64]; 3];
        let b: Clip = vec![vec![0.1; 64]; 2];
        assert!(m.embed_clips(&[&a, &b]).is_err());
    }
}
