//! Loading clip splits (LIMF frames + manifest + labels) for training and
//! evaluation.

use std::io::BufReader;
use std::path::{Path, PathBuf};

use crate::alignment::{Clip, ConfidenceConfig, Sample};
use crate::confidence::{build_scorer, encode_caption, score_all, Narrative};
use crate::datapipe::{read_manifest, Frame, FrameSequence, ManifestRecord};
use crate::error::{Error, Result};
use crate::synth::LabelRecord;

/// Pixel `p` maps to `p/127.5 − 1`, i.e. into [-1, 1].
pub fn frame_features(f: &Frame) -> Vec<f64> {
    f.pixels().iter().map(|&p| p as f64 / 127.5 - 1.0).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub manifest: Vec<ManifestRecord>,
    pub clips: Vec<Clip>,
    pub labels: Option<Vec<LabelRecord>>,
}

pub fn split_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf, PathBuf) {
    (
        dir.join(format!("{name}.limf")),
        dir.join(format!("{name}.manifest.jsonl")),
        dir.join(format!("{name}.labels.jsonl")),
    )
}

pub fn open(path: &Path) -> Result<std::fs::File> {
    std::fs::File::open(path).map_err(|e| {
        std::io::Error::new(e.kind(), format!("{}: {e}", path.display())).into()
    })
}

pub fn read_labels(path: &Path) -> Result<Vec<LabelRecord>> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

/// Reads `<name>.limf` and `<name>.manifest.jsonl` (and labels when present);
/// the frame file must hold `frames_per_clip` frames per manifest record.
pub fn load_split(dir: &Path, name: &str, frames_per_clip: usize) -> Result<Split> {
    let (limf, manifest_path, labels_path) = split_paths(dir, name);
    let manifest = read_manifest(BufReader::new(open(&manifest_path)?))?;
    let frames = FrameSequence::read_limf(&mut BufReader::new(open(&limf)?))?;
    if frames.frames.len() != manifest.len() * frames_per_clip {
        return Err(Error::format(
            "clip split",
            format!(
                "{} frames for {} records at {frames_per_clip} frames per clip",
                frames.frames.len(),
                manifest.len()
            ),
        ));
    }
    let clips = frames
        .frames
        .chunks(frames_per_clip)
        .map(|c| c.iter().map(frame_features).collect())
        .collect();
    let labels = if labels_path.exists() {
        let labels = read_labels(&labels_path)?;
        if labels.len() != manifest.len() || labels.iter().zip(&manifest).any(|(l, m)| l.clip_id != m.clip_id) {
            return Err(Error::format("labels", "records do not line up with the manifest"));
        }
        Some(labels)
    } else {
        None
    };
    Ok(Split {
        manifest,
        clips,
        labels,
    })
}

pub fn read_corpus(path: &Path) -> Result<Vec<String>> {
    Ok(std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

/// Pairs clips with tokenized captions. Records without a stored confidence
/// are scored with the configured scorer fitted on `corpus` (or on the
/// split's own captions when no corpus is given).
pub fn build_samples(split: &Split, conf: &ConfidenceConfig, vocab: usize, corpus: Option<&[String]>) -> Result<Vec<Sample>> {
    let tokens = split
        .manifest
        .iter()
        .map(|r| encode_caption(&r.caption, vocab))
        .collect::<Result<Vec<_>>>()?;
    let missing = split.manifest.iter().any(|r| r.confidence.is_none());
    let scored = if missing && conf.enabled {
        let fit_on = match corpus {
            Some(lines) => lines.iter().map(|l| encode_caption(l, vocab)).collect::<Result<Vec<_>>>()?,
            None => {
                log::warn!("no corpus given; fitting the scorer on the training captions");
                tokens.clone()
            }
        };
        let scorer = build_scorer(&conf.scorer, vocab, &fit_on)?;
        Some(score_all(&tokens, scorer.as_ref())?)
    } else {
        None
    };
    split
        .manifest
        .iter()
        .zip(tokens)
        .zip(&split.clips)
        .enumerate()
        .map(|(i, ((rec, toks), clip))| {
            let c = match (rec.confidence, &scored) {
                (Some(c), _) => c,
                (None, Some(s)) => s[i],
                (None, None) => 1.0,
            };
            Ok(Sample {
                clip_id: rec.clip_id.clone(),
                clip: clip.clone(),
                narrative: Narrative::new(toks, c)?,
            })
        })
        .collect()
}
