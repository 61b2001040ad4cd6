//! Synthetic phase-labelled clips with optionally corrupted captions.
//!
//! Each class has a prototype thumbnail; a clip is that prototype plus
//! Gaussian jitter on every frame. Clean captions spell the class pattern;
//! corrupted captions use words from a disjoint gibberish pool.

use std::collections::HashSet;
use std::path::Path;

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::confidence::{word_id, DEFAULT_VOCAB};
use crate::datapipe::{clip_sharpness, write_manifest, Frame, FrameSequence, ManifestRecord};
use crate::error::{Error, Result};
use crate::numerics::derive_seed;

const CLIP_SECONDS: f64 = 5.0;

const WORD_BANK: &[&str] = &[
    "trocar", "insertion", "port", "placement", "calot", "triangle", "dissection", "cystic", "duct",
    "clipping", "cutting", "artery", "gallbladder", "retraction", "liver", "bed", "packaging", "specimen",
    "bag", "cleaning", "coagulation", "irrigation", "suction", "hemostasis", "extraction", "umbilical",
    "closure", "suturing", "stapler", "hook", "grasper", "scissors", "bipolar", "forceps", "peritoneum",
    "omentum", "fundus", "infundibulum", "serosa", "fascia", "uterus", "ovary", "colpotomy", "vaginal",
    "cuff", "ligament", "ureter", "bladder", "mesentery", "bowel",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub n_classes: usize,
    pub clips_per_class: usize,
    pub test_clips_per_class: usize,
    /// Per-frame Gaussian jitter, in 0–255 pixel units.
    pub frame_noise: f64,
    /// Probability that a training caption is replaced by gibberish.
    pub corruption_rate: f64,
    pub words_per_class: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_classes: 4,
            clips_per_class: 50,
            test_clips_per_class: 25,
            frame_noise: 80.0,
            corruption_rate: 0.0,
            words_per_class: 4,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_classes < 2 {
            return Err(Error::Config("synth.n_classes must be at least 2".into()));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(Error::Config("synth.corruption_rate must lie in [0, 1]".into()));
        }
        if self.clips_per_class == 0 || self.words_per_class == 0 || !(self.frame_noise >= 0.0) {
            return Err(Error::Config("synth counts must be positive and noise nonnegative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub clip_id: String,
    pub label: usize,
    pub class_name: String,
    pub corrupted: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSplit {
    pub frames: FrameSequence,
    pub manifest: Vec<ManifestRecord>,
    pub labels: Vec<LabelRecord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthDataset {
    pub train: SynthSplit,
    pub test: SynthSplit,
    /// Class name to its caption pattern, in class order.
    pub patterns: IndexMap<String, String>,
}

/// Picks words whose token ids are unused so far.
fn pick_words(candidates: impl Iterator<Item = String>, n: usize, used: &mut HashSet<u32>) -> Vec<String> {
    let mut out = Vec::with_capacity(n);
    for w in candidates {
        if out.len() == n {
            break;
        }
        if used.insert(word_id(&w, DEFAULT_VOCAB)) {
            out.push(w);
        }
    }
    out
}

fn gibberish(rng: &mut ChaCha8Rng) -> String {
    const LETTERS: &[u8] = b"bcdfghjklmnpqrstvwxz";
    (0..6).map(|_| LETTERS[rng.gen_range(0..LETTERS.len())] as char).collect()
}

pub fn generate(spec: &SyntheticSpec, frames_per_clip: usize, thumb: usize, seed: u64) -> Result<SynthDataset> {
    spec.validate()?;
    if frames_per_clip == 0 || thumb < 3 {
        return Err(Error::Config("synthetic clips need ≥ 1 frame of at least 3x3".into()));
    }
    let mut used = HashSet::new();
    let needed = spec.n_classes * spec.words_per_class;
    let bank = pick_words(WORD_BANK.iter().map(|s| s.to_string()), needed, &mut used);
    if bank.len() < needed {
        return Err(Error::Config(format!(
            "only {} distinct class words available, {needed} requested",
            bank.len()
        )));
    }
    let mut word_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 10));
    let junk_pool = pick_words(
        std::iter::repeat_with(|| gibberish(&mut word_rng)).take(10_000),
        spec.words_per_class * 4,
        &mut used,
    );

    let mut patterns = IndexMap::new();
    for (k, words) in bank.chunks(spec.words_per_class).enumerate() {
        patterns.insert(format!("phase{k}"), words.join(" "));
    }

    let mut proto_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 11));
    let prototypes: Vec<Vec<f64>> = (0..spec.n_classes)
        .map(|_| (0..thumb * thumb).map(|_| proto_rng.gen_range(0.0..255.0)).collect())
        .collect();
    let fps = frames_per_clip as f64 / CLIP_SECONDS;

    let split = |name: &str, per_class: usize, rate: f64, stream: u64| -> Result<SynthSplit> {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, stream));
        let noise = Normal::new(0.0, spec.frame_noise.max(1e-12)).expect("valid std");
        let mut order: Vec<usize> = (0..spec.n_classes).flat_map(|k| vec![k; per_class]).collect();
        order.shuffle(&mut rng);
        let mut frames = Vec::with_capacity(order.len() * frames_per_clip);
        let mut manifest = Vec::with_capacity(order.len());
        let mut labels = Vec::with_capacity(order.len());
        for (i, &k) in order.iter().enumerate() {
            let clip: Vec<Frame> = (0..frames_per_clip)
                .map(|_| {
                    let px = prototypes[k]
                        .iter()
                        .map(|&p| (p + noise.sample(&mut rng)).round().clamp(0.0, 255.0) as u8)
                        .collect();
                    Frame::new(thumb, thumb, 1, px)
                })
                .collect::<Result<_>>()?;
            let corrupted = rng.gen::<f64>() < rate;
            let caption = if corrupted {
                (0..spec.words_per_class)
                    .map(|_| junk_pool[rng.gen_range(0..junk_pool.len())].as_str())
                    .collect::<Vec<_>>()
                    .join(" ")
            } else {
                patterns[k].clone()
            };
            let clip_id = format!("{name}-{i:05}");
            let start = i as f64 * CLIP_SECONDS;
            manifest.push(ManifestRecord {
                clip_id: clip_id.clone(),
                source_id: format!("synth-{name}"),
                start_s: start,
                end_s: start + CLIP_SECONDS,
                sharpness: clip_sharpness(&clip)?,
                caption,
                confidence: None,
            });
            labels.push(LabelRecord {
                clip_id,
                label: k,
                class_name: format!("phase{k}"),
                corrupted,
            });
            frames.extend(clip);
        }
        Ok(SynthSplit {
            frames: FrameSequence::new(fps, frames)?,
            manifest,
            labels,
        })
    };

    Ok(SynthDataset {
        train: split("train", spec.clips_per_class, spec.corruption_rate, 12)?,
        test: split("test", spec.test_clips_per_class.max(1), 0.0, 13)?,
        patterns,
    })
}

fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut buf = Vec::new();
    for it in items {
        serde_json::to_writer(&mut buf, it)?;
        buf.push(b'\n');
    }
    std::fs::write(path, buf)?;
    Ok(())
}

impl SynthDataset {
    /// Writes `{train,test}.limf`, `.manifest.jsonl`, `.labels.jsonl`,
    /// `prompts.json` and `corpus.txt` (clean training captions) to `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        for (name, split) in [("train", &self.train), ("test", &self.test)] {
            split.frames.save(&dir.join(format!("{name}.limf")))?;
            let mut buf = Vec::new();
            write_manifest(&mut buf, &split.manifest)?;
            std::fs::write(dir.join(format!("{name}.manifest.jsonl")), buf)?;
            write_jsonl(&dir.join(format!("{name}.labels.jsonl")), &split.labels)?;
        }
        let prompts: IndexMap<&String, Vec<&String>> = self.patterns.iter().map(|(k, v)| (k, vec![v])).collect();
        std::fs::write(dir.join("prompts.json"), serde_json::to_string_pretty(&prompts)? + "\n")?;
        let corpus: String = self
            .train
            .manifest
            .iter()
            .zip(&self.train.labels)
            .filter(|(_, l)| !l.corrupted)
            .map(|(r, _)| format!("{}\n", r.caption))
            .collect();
        std::fs::write(dir.join("corpus.txt"), corpus)?;
        Ok(())
    }
}
