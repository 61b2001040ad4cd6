//! Run configuration: one JSON document plus dotted-path overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::alignment::{ConfidenceConfig, LoraConfig, ModelConfig, OptimConfig};
use crate::datapipe::PipelineConfig;
use crate::error::{Error, Result};
use crate::evalkit::ProbeConfig;
use crate::synth::SyntheticSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    /// Dataset directory read by `train` and the evaluation commands.
    pub data_dir: String,
    /// Output directory for runs and command results.
    pub out_dir: String,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            data_dir: "data".into(),
            out_dir: "runs/default".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub model: ModelConfig,
    pub lora: LoraConfig,
    pub optim: OptimConfig,
    /// Frames per clip, `T`.
    pub temporal_window: usize,
    pub confidence: ConfidenceConfig,
    pub pipeline: PipelineConfig,
    pub probe: ProbeConfig,
    pub synth: SyntheticSpec,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            model: ModelConfig::default(),
            lora: LoraConfig::default(),
            optim: OptimConfig::default(),
            temporal_window: 8,
            confidence: ConfidenceConfig::default(),
            pipeline: PipelineConfig::default(),
            probe: ProbeConfig::default(),
            synth: SyntheticSpec::default(),
            paths: PathsConfig::default(),
        }
    }
}

fn merge(base: &mut Value, patch: Value) {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

/// Sets `path` (dot separated) in `doc` to `raw`, parsed as JSON when it
/// parses and kept as a string otherwise.
pub fn apply_override(doc: &mut Value, path: &str, raw: &str) -> Result<()> {
    let value = serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()));
    let mut node = doc;
    let parts: Vec<&str> = path.split('.').collect();
    for (i, part) in parts.iter().enumerate() {
        let obj = node
            .as_object_mut()
            .ok_or_else(|| Error::Config(format!("`{}` is not a section", parts[..i].join("."))))?;
        if !obj.contains_key(*part) {
            return Err(Error::Config(format!("unknown config key `{path}`")));
        }
        node = obj.get_mut(*part).unwrap();
    }
    *node = value;
    Ok(())
}

impl RunConfig {
    /// Defaults, then the file at `path`, then `overrides` in order.
    pub fn load(path: Option<&Path>, overrides: &[(String, String)]) -> Result<Self> {
        let mut doc = serde_json::to_value(RunConfig::default())?;
        if let Some(p) = path {
            let text = std::fs::read_to_string(p)?;
            let file: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            merge(&mut doc, file);
        }
        for (k, v) in overrides {
            apply_override(&mut doc, k, v)?;
        }
        let cfg: RunConfig = serde_json::from_value(doc).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.optim.validate()?;
        let m = &self.model;
        if m.d_v % 2 != 0 || m.d_v < 2 || m.d_t < 2 || m.embed_dim == 0 || m.depth == 0 {
            return Err(Error::Config(format!("invalid model widths {m:?}")));
        }
        if self.lora.r == 0 || !(self.lora.alpha > 0.0) {
            return Err(Error::Config("lora.r and lora.alpha must be positive".into()));
        }
        if self.temporal_window == 0 {
            return Err(Error::Config("temporal_window must be at least 1".into()));
        }
        if self.pipeline.frames_per_clip != self.temporal_window {
            return Err(Error::Config(format!(
                "pipeline.frames_per_clip {} must equal temporal_window {}",
                self.pipeline.frames_per_clip, self.temporal_window
            )));
        }
        let thumb = self.pipeline.thumb_size;
        if m.frame_dim != thumb * thumb {
            return Err(Error::Config(format!(
                "model.frame_dim {} must equal pipeline.thumb_size² = {}",
                m.frame_dim,
                thumb * thumb
            )));
        }
        if !(self.confidence.floor > 0.0 && self.confidence.floor <= 1.0) {
            return Err(Error::Config("confidence.floor must be in (0, 1]".into()));
        }
        let p = &self.pipeline;
        if !(p.window_s > 0.0 && p.stride_s > 0.0 && p.sharpness_threshold >= 0.0) {
            return Err(Error::Config("pipeline window, stride and threshold must be positive".into()));
        }
        self.synth.validate()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}
