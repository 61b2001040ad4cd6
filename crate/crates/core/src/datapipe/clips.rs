use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShotSpan {
    pub start_s: f64,
    pub end_s: f64,
}

impl ShotSpan {
    pub fn length(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// Fixed-length windows `[start + k·stride, start + k·stride + window]`
/// that fit inside the shot; any shorter remainder is dropped.
pub fn window_clips(shot: ShotSpan, window: f64, stride: f64) -> Result<Vec<(f64, f64)>> {
    if !(window > 0.0 && stride > 0.0) {
        return Err(Error::Domain(format!("window {window} and stride {stride} must be positive")));
    }
    let len = shot.length();
    if len + TIME_EPS < window {
        return Err(Error::PruningContract { length: len, window });
    }
    let count = ((len - window) / stride + TIME_EPS).floor() as usize + 1;
    Ok((0..count)
        .map(|k| {
            let start = shot.start_s + k as f64 * stride;
            (start, start + window)
        })
        .collect())
}

/// Splits `[0, duration]` at `cuts` and drops shots shorter than `min_len`.
pub fn shots_from_cuts(cuts: &[f64], duration: f64, min_len: f64) -> Vec<ShotSpan> {
    let mut bounds: Vec<f64> = cuts.iter().copied().filter(|&c| c > 0.0 && c < duration).collect();
    bounds.sort_by(f64::total_cmp);
    bounds.dedup();
    let mut edges = vec![0.0];
    edges.extend(bounds);
    edges.push(duration);
    edges
        .windows(2)
        .map(|w| ShotSpan {
            start_s: w[0],
            end_s: w[1],
        })
        .filter(|s| s.length() + TIME_EPS >= min_len)
        .collect()
}

/// Keeps items whose sharpness reaches `threshold`, in input order.
pub fn prune_blurred<T, F: Fn(&T) -> f64>(items: Vec<T>, threshold: f64, sharpness: F) -> Vec<T> {
    items.into_iter().filter(|it| sharpness(it) >= threshold).collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionMetadata {
    pub title: String,
    pub surgery_type: String,
}

pub fn build_caption_prompt(meta: &CaptionMetadata) -> Result<String> {
    if meta.title.trim().is_empty() {
        return Err(Error::Domain("caption prompt needs a video title".into()));
    }
    Ok(format!(
        "Please act as a professional medical annotator. You are given a short clip from the \
surgical video \"{title}\" (surgery type: {kind}). Describe the clip, covering:\n\
(1) Field of view (circular vs. rectangular) and surgery type (robotic vs. non-robotic);\n\
(2) Surgical instruments utilized;\n\
(3) Anatomical structures and involved tissues;\n\
(4) Step-by-step actions and procedural maneuvers;\n\
(5) Camera perspective and lighting conditions.\n\
Write your answer as a single, concise paragraph.",
        title = meta.title,
        kind = meta.surgery_type,
    ))
}
