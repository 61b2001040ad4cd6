//! End-to-end runs shared by the command line and the acceptance suite.

use std::path::Path;

use indexmap::IndexMap;

use crate::alignment::{train, AlignmentModel, StepRecord, TrainReport};
use crate::config::RunConfig;
use crate::dataset::{build_samples, load_split, Split};
use crate::error::{Error, Result};
use crate::evalkit::{
    clip_features, evaluate_zero_shot, linear_probe_fit, metrics, EvalResult, LabeledFeatureSet, PhasePromptSet,
};
use crate::numerics::derive_seed;

pub fn fresh_model(cfg: &RunConfig) -> Result<AlignmentModel> {
    AlignmentModel::new(&cfg.model, &cfg.lora, cfg.seed)
}

/// Trains a fresh model on the `train` split of `data_dir`.
pub fn train_on_dir(
    cfg: &RunConfig,
    data_dir: &Path,
    corpus: Option<&[String]>,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<(AlignmentModel, TrainReport)> {
    let split = load_split(data_dir, "train", cfg.temporal_window)?;
    train_on_split(cfg, &split, corpus, on_step)
}

pub fn train_on_split(
    cfg: &RunConfig,
    split: &Split,
    corpus: Option<&[String]>,
    on_step: &mut dyn FnMut(&StepRecord),
) -> Result<(AlignmentModel, TrainReport)> {
    cfg.validate()?;
    let samples = build_samples(split, &cfg.confidence, cfg.model.vocab, corpus)?;
    let mut model = fresh_model(cfg)?;
    let report = train(&mut model, &samples, &cfg.optim, &cfg.confidence, derive_seed(cfg.seed, 4), on_step)?;
    Ok((model, report))
}

fn labels_of(split: &Split, classes: &IndexMap<String, Vec<String>>) -> Result<Vec<usize>> {
    let labels = split
        .labels
        .as_ref()
        .ok_or_else(|| Error::format("clip split", "evaluation needs a labels file"))?;
    labels
        .iter()
        .map(|l| {
            classes
                .get_index_of(&l.class_name)
                .ok_or_else(|| Error::format("labels", format!("class `{}` has no prompts", l.class_name)))
        })
        .collect()
}

pub fn zero_shot(
    model: &AlignmentModel,
    split: &Split,
    classes: &IndexMap<String, Vec<String>>,
    vocab: usize,
) -> Result<EvalResult> {
    let prompts = PhasePromptSet::build(classes, model, vocab)?;
    let labels = labels_of(split, classes)?;
    let (_, m) = evaluate_zero_shot(&split.clips, &labels, model, &prompts)?;
    Ok(EvalResult::new("zero-shot", &m))
}

/// Fits a probe on frozen pooled features of `train` and scores `test`.
/// Class indices follow the order of first appearance in `train` labels.
pub fn linear_probe(cfg: &RunConfig, model: &AlignmentModel, train: &Split, test: &Split) -> Result<EvalResult> {
    let mut classes: IndexMap<String, Vec<String>> = IndexMap::new();
    let names = |s: &Split| -> Result<Vec<String>> {
        Ok(s.labels
            .as_ref()
            .ok_or_else(|| Error::format("clip split", "evaluation needs a labels file"))?
            .iter()
            .map(|l| l.class_name.clone())
            .collect())
    };
    let mut sorted = names(train)?;
    sorted.sort();
    for n in sorted {
        classes.entry(n).or_default();
    }
    let k = classes.len();
    let train_set = LabeledFeatureSet::new(clip_features(&train.clips, model)?, labels_of(train, &classes)?, k)?;
    let probe = linear_probe_fit(&train_set, &cfg.probe, derive_seed(cfg.seed, 5))?;
    let test_labels = labels_of(test, &classes)?;
    let preds = probe.predict(&clip_features(&test.clips, model)?)?;
    Ok(EvalResult::new("linear-probe", &metrics(&preds, &test_labels, k)?))
}
