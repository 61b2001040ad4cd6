use std::io::{BufRead, Write};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::clips::{build_caption_prompt, shots_from_cuts, window_clips, CaptionMetadata};
use super::frame::{clip_sharpness, standardize_frame, Frame, FrameSequence};
use super::providers::{CaptionProvider, CaptionRequest, ShotBoundaryProvider};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub target_w: usize,
    pub target_h: usize,
    pub window_s: f64,
    pub stride_s: f64,
    pub min_shot_s: f64,
    pub sharpness_threshold: f64,
    pub shot_provider: String,
    pub caption_provider: String,
    /// For network caption clients; the mock provider never waits.
    pub caption_timeout_s: f64,
    pub caption_retries: usize,
    /// Frames kept per clip for training, as square grayscale thumbnails.
    pub frames_per_clip: usize,
    pub thumb_size: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            target_w: 832,
            target_h: 480,
            window_s: 5.0,
            stride_s: 2.0,
            min_shot_s: 5.0,
            sharpness_threshold: 100.0,
            shot_provider: "histogram".into(),
            caption_provider: "mock".into(),
            caption_timeout_s: 30.0,
            caption_retries: 2,
            frames_per_clip: 8,
            thumb_size: 8,
        }
    }
}

/// One curated clip.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub clip_id: String,
    pub source_id: String,
    pub start_s: f64,
    pub end_s: f64,
    pub sharpness: f64,
    pub caption: String,
    /// Unset until the clip's caption has been scored.
    pub confidence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Source {
    pub source_id: String,
    pub metadata: CaptionMetadata,
    pub video: FrameSequence,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct PipelineStats {
    pub sources: usize,
    pub shots: usize,
    pub short_shots_pruned: usize,
    pub windows: usize,
    pub blurred_pruned: usize,
    pub caption_failures: usize,
    pub sources_skipped: usize,
    pub emitted: usize,
}

#[derive(Debug, Clone, Default)]
pub struct PipelineOutput {
    pub records: Vec<ManifestRecord>,
    /// Per record, `frames_per_clip` grayscale thumbnails.
    pub thumbnails: Vec<Vec<Frame>>,
    pub stats: PipelineStats,
}

/// `count` indices spread evenly over `lo..hi`.
fn spread(lo: usize, hi: usize, count: usize) -> Vec<usize> {
    let n = hi - lo;
    (0..count).map(|j| lo + j * n / count).collect()
}

fn process_source(
    src: &Source,
    shots: &dyn ShotBoundaryProvider,
    captions: &dyn CaptionProvider,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let mut out = PipelineOutput::default();
    out.stats.sources = 1;
    let frames = src
        .video
        .frames
        .iter()
        .map(|f| standardize_frame(f, cfg.target_w, cfg.target_h))
        .collect::<Result<Vec<_>>>()?;
    let video = FrameSequence::new(src.video.fps, frames)?;
    let cuts = match shots.boundaries(&video) {
        Ok(c) => c,
        Err(e) => {
            log::warn!("{}: shot provider `{}` failed, skipping source: {e}", src.source_id, shots.name());
            out.stats.sources_skipped = 1;
            return Ok(out);
        }
    };
    let all_shots = shots_from_cuts(&cuts, video.duration_s(), 0.0);
    let kept = shots_from_cuts(&cuts, video.duration_s(), cfg.min_shot_s);
    out.stats.shots = all_shots.len();
    out.stats.short_shots_pruned = all_shots.len() - kept.len();
    let prompt = build_caption_prompt(&src.metadata)?;
    let fps = video.fps;
    for shot in kept {
        for (start, end) in window_clips(shot, cfg.window_s, cfg.stride_s)? {
            out.stats.windows += 1;
            let lo = ((start * fps) - 1e-9).ceil().max(0.0) as usize;
            let hi = (((end * fps) - 1e-9).ceil() as usize).min(video.frames.len());
            if hi <= lo {
                continue;
            }
            let clip_frames = &video.frames[lo..hi];
            let sharpness = clip_sharpness(clip_frames)?;
            if sharpness < cfg.sharpness_threshold {
                out.stats.blurred_pruned += 1;
                continue;
            }
            let clip = FrameSequence::new(fps, clip_frames.to_vec())?;
            let request = CaptionRequest::new(prompt.clone(), &clip);
            let mut caption = None;
            for attempt in 0..=cfg.caption_retries {
                match captions.caption(&request) {
                    Ok(r) => {
                        caption = Some(r.caption);
                        break;
                    }
                    Err(e) => log::warn!(
                        "{} [{start:.1}s, {end:.1}s]: caption attempt {} failed: {e}",
                        src.source_id,
                        attempt + 1
                    ),
                }
            }
            let Some(caption) = caption else {
                out.stats.caption_failures += 1;
                continue;
            };
            let thumbs = spread(lo, hi, cfg.frames_per_clip)
                .into_iter()
                .map(|i| video.frames[i].thumbnail(cfg.thumb_size, cfg.thumb_size))
                .collect::<Result<Vec<_>>>()?;
            out.records.push(ManifestRecord {
                clip_id: format!("{}-{:06}", src.source_id, (start * 1000.0).round() as u64),
                source_id: src.source_id.clone(),
                start_s: start,
                end_s: end,
                sharpness,
                caption,
                confidence: None,
            });
            out.thumbnails.push(thumbs);
        }
    }
    Ok(out)
}

/// Standardize, cut into shots, window, prune blur, caption. Sources are
/// processed in parallel and merged in input order.
pub fn run_pipeline(
    sources: &[Source],
    shots: &dyn ShotBoundaryProvider,
    captions: &dyn CaptionProvider,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    if cfg.frames_per_clip == 0 || cfg.thumb_size < 3 {
        return Err(Error::Config("frames_per_clip must be ≥ 1 and thumb_size ≥ 3".into()));
    }
    let parts = sources
        .par_iter()
        .map(|s| process_source(s, shots, captions, cfg))
        .collect::<Result<Vec<_>>>()?;
    let mut out = PipelineOutput::default();
    for p in parts {
        out.records.extend(p.records);
        out.thumbnails.extend(p.thumbnails);
        let (a, b) = (&mut out.stats, p.stats);
        a.sources += b.sources;
        a.shots += b.shots;
        a.short_shots_pruned += b.short_shots_pruned;
        a.windows += b.windows;
        a.blurred_pruned += b.blurred_pruned;
        a.caption_failures += b.caption_failures;
        a.sources_skipped += b.sources_skipped;
    }
    out.stats.emitted = out.records.len();
    if out.stats.windows > 0 {
        log::info!(
            "pruned {} of {} windows as blurred ({:.1}%)",
            out.stats.blurred_pruned,
            out.stats.windows,
            100.0 * out.stats.blurred_pruned as f64 / out.stats.windows as f64
        );
    }
    Ok(out)
}

pub fn write_manifest<W: Write>(out: &mut W, records: &[ManifestRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_manifest<R: BufRead>(input: R) -> Result<Vec<ManifestRecord>> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ManifestRecord = serde_json::from_str(&line)
            .map_err(|e| Error::format("manifest", format!("line {}: {e}", i + 1)))?;
        out.push(rec);
    }
    Ok(out)
}
