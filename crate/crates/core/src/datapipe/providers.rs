use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::frame::FrameSequence;
use crate::error::{Error, Result};
use crate::registry::Registry;

/// Locates cuts between visually contiguous shots.
pub trait ShotBoundaryProvider: Send + Sync {
    fn name(&self) -> &str;
    /// Cut timestamps in seconds, ascending.
    fn boundaries(&self, video: &FrameSequence) -> Result<Vec<f64>>;
}

/// Cuts where consecutive normalized gray histograms differ by more than
/// `threshold` in L1 distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistogramShotProvider {
    pub bins: usize,
    pub threshold: f64,
}

impl Default for HistogramShotProvider {
    fn default() -> Self {
        Self {
            bins: 64,
            threshold: 0.5,
        }
    }
}

impl HistogramShotProvider {
    fn histogram(&self, pixels: &[u8]) -> Vec<f64> {
        let mut h = vec![0.0; self.bins];
        for &p in pixels {
            h[p as usize * self.bins / 256] += 1.0;
        }
        let n = pixels.len() as f64;
        h.iter_mut().for_each(|v| *v /= n);
        h
    }
}

impl ShotBoundaryProvider for HistogramShotProvider {
    fn name(&self) -> &str {
        "histogram"
    }

    fn boundaries(&self, video: &FrameSequence) -> Result<Vec<f64>> {
        if self.bins == 0 || self.bins > 256 {
            return Err(Error::Config(format!("histogram bins must be in 1..=256, got {}", self.bins)));
        }
        let hists: Vec<Vec<f64>> = video
            .frames
            .iter()
            .map(|f| self.histogram(f.to_gray().pixels()))
            .collect();
        Ok(hists
            .windows(2)
            .enumerate()
            .filter(|(_, w)| w[0].iter().zip(&w[1]).map(|(a, b)| (a - b).abs()).sum::<f64>() > self.threshold)
            .map(|(i, _)| (i + 1) as f64 / video.fps)
            .collect())
    }
}

/// Treats the whole video as one shot.
#[derive(Debug, Clone, Copy, Default)]
pub struct SingleShotProvider;

impl ShotBoundaryProvider for SingleShotProvider {
    fn name(&self) -> &str {
        "single-shot"
    }

    fn boundaries(&self, _video: &FrameSequence) -> Result<Vec<f64>> {
        Ok(Vec::new())
    }
}

/// Wire request for a captioning service.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaptionRequest {
    pub prompt: String,
    /// The clip as LIMF bytes, base64 encoded.
    pub frames: String,
}

impl CaptionRequest {
    pub fn new(prompt: String, clip: &FrameSequence) -> Self {
        Self {
            prompt,
            frames: STANDARD.encode(clip.to_limf_bytes()),
        }
    }

    pub fn clip(&self) -> Result<FrameSequence> {
        let bytes = STANDARD
            .decode(&self.frames)
            .map_err(|e| Error::format("caption request frames", e.to_string()))?;
        FrameSequence::from_limf_bytes(&bytes)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionResponse {
    pub caption: String,
}

pub trait CaptionProvider: Send + Sync {
    fn name(&self) -> &str;
    fn caption(&self, request: &CaptionRequest) -> Result<CaptionResponse>;
}

/// Returns a fixed caption and ignores the frames.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MockCaptionProvider {
    pub text: String,
}

impl Default for MockCaptionProvider {
    fn default() -> Self {
        Self {
            text: "Laparoscopic view with a grasper retracting tissue under even lighting.".into(),
        }
    }
}

impl CaptionProvider for MockCaptionProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn caption(&self, _request: &CaptionRequest) -> Result<CaptionResponse> {
        Ok(CaptionResponse {
            caption: self.text.clone(),
        })
    }
}

pub fn shot_provider_registry() -> Registry<(), dyn ShotBoundaryProvider> {
    let mut reg: Registry<(), dyn ShotBoundaryProvider> = Registry::new("shot provider");
    reg.register("histogram", |_: &()| {
        Ok(Box::new(HistogramShotProvider::default()) as Box<dyn ShotBoundaryProvider>)
    });
    reg.register("single-shot", |_: &()| {
        Ok(Box::new(SingleShotProvider) as Box<dyn ShotBoundaryProvider>)
    });
    reg
}

pub fn caption_provider_registry() -> Registry<(), dyn CaptionProvider> {
    let mut reg: Registry<(), dyn CaptionProvider> = Registry::new("caption provider");
    reg.register("mock", |_: &()| {
        Ok(Box::new(MockCaptionProvider::default()) as Box<dyn CaptionProvider>)
    });
    reg
}
