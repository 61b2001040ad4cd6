//! Clip curation: standardization, shot handling, windowing, blur pruning,
//! caption prompting and manifest emission.

mod clips;
mod frame;
mod pipeline;
mod providers;

pub use clips::{build_caption_prompt, prune_blurred, shots_from_cuts, window_clips, CaptionMetadata, ShotSpan};
pub use frame::{clip_sharpness, laplacian_sharpness, standardize_frame, Frame, FrameSequence, LIMF_MAGIC};
pub use pipeline::{
    read_manifest, run_pipeline, write_manifest, ManifestRecord, PipelineConfig, PipelineOutput, PipelineStats,
    Source,
};
pub use providers::{
    caption_provider_registry, shot_provider_registry, CaptionProvider, CaptionRequest, CaptionResponse,
    HistogramShotProvider, MockCaptionProvider, ShotBoundaryProvider, SingleShotProvider,
};
