use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::model::{AlignmentModel, Clip, LoraConfig, ModelConfig};
use super::optim::{AdamW, OptimConfig};
use crate::adapters::{TokenSequence, FIRST_WORD_ID};
use crate::confidence::{rescale, Narrative, Rescale, CONFIDENCE_FLOOR};
use crate::error::{Error, Result};
use crate::numerics::{derive_seed, grad_check, GradCheckReport, ParamSet, Tape};

/// One aligned (clip, narrative) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub clip_id: String,
    pub clip: Clip,
    pub narrative: Narrative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfidenceConfig {
    /// When false every sample weighs 1 (the unweighted objective).
    pub enabled: bool,
    pub rescale: Rescale,
    pub floor: f64,
    pub scorer: String,
}

impl Default for ConfidenceConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            rescale: Rescale::None,
            floor: CONFIDENCE_FLOOR,
            scorer: "unigram".into(),
        }
    }
}

pub struct TrainingBatch<'a> {
    pub clips: Vec<&'a Clip>,
    pub texts: Vec<&'a TokenSequence>,
    pub weights: Vec<f64>,
}

impl<'a> TrainingBatch<'a> {
    pub fn from_samples(samples: &[&'a Sample], conf: &ConfidenceConfig) -> Self {
        let raw: Vec<f64> = samples.iter().map(|s| s.narrative.confidence).collect();
        let weights = if conf.enabled {
            rescale(&raw, conf.rescale, conf.floor)
        } else {
            vec![1.0; raw.len()]
        };
        Self {
            clips: samples.iter().map(|s| &s.clip).collect(),
            texts: samples.iter().map(|s| &s.narrative.tokens).collect(),
            weights,
        }
    }

    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }
}

pub fn batch_loss(batch: &TrainingBatch, model: &AlignmentModel) -> Result<f64> {
    let mut tape = Tape::inference();
    let l = model.loss_tape(&mut tape, &batch.clips, &batch.texts, &batch.weights)?;
    Ok(tape.scalar(l))
}

/// Forward, backward and one optimizer update. Returns the pre-update loss.
/// On a non-finite loss or gradient the model and optimizer are untouched.
pub fn train_step(batch: &TrainingBatch, model: &mut AlignmentModel, opt: &mut AdamW) -> Result<f64> {
    if batch.len() < 2 {
        return Err(Error::Contract(format!("training batch of {} (need at least 2)", batch.len())));
    }
    let step = opt.steps_taken();
    let mut tape = Tape::new();
    let root = model
        .loss_tape(&mut tape, &batch.clips, &batch.texts, &batch.weights)
        .map_err(|e| match e {
            Error::Instability(_) | Error::DegenerateVector { .. } => Error::Divergence {
                step,
                reason: e.to_string(),
            },
            other => other,
        })?;
    let loss = tape.scalar(root);
    if !loss.is_finite() {
        return Err(Error::Divergence {
            step,
            reason: format!("loss is {loss}"),
        });
    }
    let grads = tape.backward(root)?;
    if !grads.all_finite() {
        return Err(Error::Divergence {
            step,
            reason: "non-finite gradient".into(),
        });
    }
    opt.apply(model, &grads);
    model.clamp_log_tau();
    Ok(loss)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub epoch: usize,
    pub loss: f64,
    pub tau: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default)]
pub struct TrainReport {
    pub steps: Vec<StepRecord>,
    /// Mean pre-update batch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

fn epoch_batches(n: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1000 + epoch as u64));
    order.shuffle(&mut rng);
    order
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[usize]>::to_vec)
        .collect()
}

/// Runs `optim.epochs` epochs of shuffled mini-batch training.
pub fn train(
    model: &mut AlignmentModel,
    samples: &[Sample],
    optim: &OptimConfig,
    conf: &ConfidenceConfig,
    seed: u64,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<TrainReport> {
    optim.validate()?;
    if samples.len() < 2 {
        return Err(Error::Domain(format!("need at least 2 samples, got {}", samples.len())));
    }
    let per_epoch = epoch_batches(samples.len(), optim.batch_size, seed, 0).len();
    let mut opt = AdamW::new(optim.clone(), per_epoch * optim.epochs)?;
    let mut report = TrainReport::default();
    for epoch in 0..optim.epochs {
        let mut sum = 0.0;
        let batches = epoch_batches(samples.len(), optim.batch_size, seed, epoch);
        for idx in &batches {
            let members: Vec<&Sample> = idx.iter().map(|&i| &samples[i]).collect();
            let batch = TrainingBatch::from_samples(&members, conf);
            let lr = opt.current_lr();
            let loss = train_step(&batch, model, &mut opt)?;
            sum += loss;
            let rec = StepRecord {
                step: opt.steps_taken(),
                epoch,
                loss,
                tau: model.tau(),
                lr,
            };
            on_step(&rec);
            report.steps.push(rec);
        }
        let mean = sum / batches.len() as f64;
        log::info!("epoch {epoch}: mean loss {mean:.6}");
        report.epoch_losses.push(mean);
    }
    Ok(report)
}

/// A small random batch for verifying gradients of the whole pipeline.
pub struct GradCheckFixture {
    pub model: AlignmentModel,
    pub clips: Vec<Clip>,
    pub texts: Vec<TokenSequence>,
    pub weights: Vec<f64>,
}

impl GradCheckFixture {
    /// `batch` clips of `frames` frames at encoder width `width`. Adapter
    /// `b` factors are randomized so gradients reach every `a` factor.
    pub fn new(batch: usize, frames: usize, width: usize, seed: u64) -> Result<Self> {
        let model_cfg = ModelConfig {
            d_v: width,
            d_t: width,
            embed_dim: width,
            depth: 2,
            frame_dim: 32,
            patch_dim: 8,
            vocab: 256,
            tau_init: 0.07,
        };
        let lora = LoraConfig { r: 4, alpha: 8.0 };
        let mut model = AlignmentModel::new(&model_cfg, &lora, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 77));
        let normal = Normal::new(0.0, 0.1).expect("valid std");
        model.for_each_param_mut(&mut |name, t| {
            if name.ends_with("lora_b") || name.ends_with("bias") {
                for v in t.values_mut() {
                    *v = normal.sample(&mut rng);
                }
            }
        });
        model.set_log_tau(0.3f64.ln());
        let clips = (0..batch)
            .map(|_| {
                (0..frames)
                    .map(|_| (0..model_cfg.frame_dim).map(|_| rng.gen_range(-1.0..1.0)).collect())
                    .collect()
            })
            .collect();
        let texts = (0..batch)
            .map(|_| {
                let len = rng.gen_range(2..6);
                let ids: Vec<u32> = (0..len).map(|_| rng.gen_range(FIRST_WORD_ID..256)).collect();
                TokenSequence::from_body(&ids)
            })
            .collect::<Result<_>>()?;
        let weights = (0..batch).map(|_| rng.gen_range(0.2..=1.0)).collect();
        Ok(Self {
            model,
            clips,
            texts,
            weights,
        })
    }

    pub fn run(&mut self, h: f64) -> Result<GradCheckReport> {
        let clips: Vec<&Clip> = self.clips.iter().collect();
        let texts: Vec<&TokenSequence> = self.texts.iter().collect();
        let weights = self.weights.clone();
        grad_check(
            &mut self.model,
            |m, tape| m.loss_tape(tape, &clips, &texts, &weights),
            h,
        )
    }
}
