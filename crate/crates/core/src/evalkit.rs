//! Zero-shot classification, linear probing, and accuracy / macro-F1.

use indexmap::IndexMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alignment::{AlignmentModel, Clip};
use crate::confidence::encode_caption;
use crate::error::{Error, Result};
use crate::numerics::{ops, Tensor};

const UNIT_TOL: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

pub fn metrics(preds: &[usize], labels: &[usize], k: usize) -> Result<Metrics> {
    if preds.len() != labels.len() {
        return Err(Error::dimension("metrics", &[preds.len()], &[labels.len()]));
    }
    if preds.is_empty() {
        return Err(Error::Domain("no predictions to score".into()));
    }
    if let Some(&bad) = preds.iter().chain(labels).find(|&&x| x >= k) {
        return Err(Error::Domain(format!("class {bad} outside 0..{k}")));
    }
    let mut tp = vec![0usize; k];
    let mut pred_count = vec![0usize; k];
    let mut label_count = vec![0usize; k];
    for (&p, &l) in preds.iter().zip(labels) {
        pred_count[p] += 1;
        label_count[l] += 1;
        if p == l {
            tp[l] += 1;
        }
    }
    let per_class_f1: Vec<f64> = (0..k)
        .map(|c| {
            let precision = if pred_count[c] > 0 { tp[c] as f64 / pred_count[c] as f64 } else { 0.0 };
            let recall = if label_count[c] > 0 { tp[c] as f64 / label_count[c] as f64 } else { 0.0 };
            if precision + recall > 0.0 {
                2.0 * precision * recall / (precision + recall)
            } else {
                0.0
            }
        })
        .collect();
    Ok(Metrics {
        accuracy: tp.iter().sum::<usize>() as f64 / preds.len() as f64,
        macro_f1: per_class_f1.iter().sum::<f64>() / k as f64,
        per_class_f1,
    })
}

/// Class names with one unit embedding per class.
#[derive(Debug, Clone, PartialEq)]
pub struct PhasePromptSet {
    pub class_names: Vec<String>,
    pub prompts: Vec<Vec<String>>,
    embeddings: Tensor,
}

fn check_unit(v: &[f64], what: &str) -> Result<()> {
    let n = ops::dot(v, v).sqrt();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(Error::Contract(format!("{what} has norm {n}, expected 1")));
    }
    Ok(())
}

impl PhasePromptSet {
    pub fn from_embeddings(class_names: Vec<String>, embeddings: Tensor) -> Result<Self> {
        if embeddings.rank() != 2 || embeddings.shape()[0] != class_names.len() {
            return Err(Error::dimension("prompt set", embeddings.shape(), &[class_names.len()]));
        }
        if class_names.len() < 2 {
            return Err(Error::Domain("zero-shot needs at least two classes".into()));
        }
        for (i, name) in class_names.iter().enumerate() {
            check_unit(embeddings.row(i), &format!("prompt embedding of `{name}`"))?;
        }
        let prompts = vec![Vec::new(); class_names.len()];
        Ok(Self {
            class_names,
            prompts,
            embeddings,
        })
    }

    /// Embeds every prompt, averages per class, and renormalizes.
    pub fn build(classes: &IndexMap<String, Vec<String>>, model: &AlignmentModel, vocab: usize) -> Result<Self> {
        let d = model.embed_dim();
        let mut rows = Vec::with_capacity(classes.len());
        for (name, prompts) in classes {
            if prompts.is_empty() {
                return Err(Error::Domain(format!("class `{name}` has no prompts")));
            }
            let seqs = prompts
                .iter()
                .map(|p| encode_caption(p, vocab))
                .collect::<Result<Vec<_>>>()?;
            let z = model.embed_texts(&seqs.iter().collect::<Vec<_>>())?;
            let mut mean = vec![0.0; d];
            for i in 0..seqs.len() {
                for (m, v) in mean.iter_mut().zip(z.row(i)) {
                    *m += v / seqs.len() as f64;
                }
            }
            ops::l2_normalize_in_place(&mut mean)?;
            rows.push(mean);
        }
        let mut set = Self::from_embeddings(classes.keys().cloned().collect(), Tensor::from_rows(&rows)?)?;
        set.prompts = classes.values().cloned().collect();
        Ok(set)
    }

    pub fn embeddings(&self) -> &Tensor {
        &self.embeddings
    }

    pub fn len(&self) -> usize {
        self.class_names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.class_names.is_empty()
    }
}

/// Reads a JSON object mapping class name to prompt strings, keeping file order.
pub fn read_prompt_file(text: &str) -> Result<IndexMap<String, Vec<String>>> {
    Ok(serde_json::from_str(text)?)
}

/// Index of the most similar class; ties go to the lowest index.
pub fn zero_shot_classify(clip_embedding: &[f64], prompts: &PhasePromptSet) -> Result<usize> {
    let e = prompts.embeddings();
    if clip_embedding.len() != e.shape()[1] {
        return Err(Error::dimension("zero_shot_classify", &[clip_embedding.len()], e.shape()));
    }
    check_unit(clip_embedding, "clip embedding")?;
    let mut best = (0, f64::NEG_INFINITY);
    for k in 0..prompts.len() {
        let s = ops::dot(clip_embedding, e.row(k));
        if s > best.1 {
            best = (k, s);
        }
    }
    Ok(best.0)
}

const EVAL_CHUNK: usize = 32;

/// Per-clip zero-shot predictions scored against `labels`.
pub fn evaluate_zero_shot(
    clips: &[Clip],
    labels: &[usize],
    model: &AlignmentModel,
    prompts: &PhasePromptSet,
) -> Result<(Vec<usize>, Metrics)> {
    if prompts.embeddings().shape()[1] != model.embed_dim() {
        return Err(Error::dimension(
            "evaluate_zero_shot",
            prompts.embeddings().shape(),
            &[model.embed_dim()],
        ));
    }
    let chunks: Vec<Vec<usize>> = clips
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| {
            let z = model.embed_clips(&chunk.iter().collect::<Vec<_>>())?;
            (0..chunk.len())
                .map(|i| zero_shot_classify(z.row(i), prompts))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let preds: Vec<usize> = chunks.into_iter().flatten().collect();
    let m = metrics(&preds, labels, prompts.len())?;
    Ok((preds, m))
}

/// Pooled clip features for probing, in input order.
pub fn clip_features(clips: &[Clip], model: &AlignmentModel) -> Result<Tensor> {
    let parts: Vec<Tensor> = clips
        .par_chunks(EVAL_CHUNK)
        .map(|chunk| model.pooled_features(&chunk.iter().collect::<Vec<_>>()))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = parts
        .iter()
        .flat_map(|t| (0..t.shape()[0]).map(move |i| t.row(i).to_vec()))
        .collect();
    Tensor::from_rows(&rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledFeatureSet {
    pub features: Tensor,
    pub labels: Vec<usize>,
    pub n_classes: usize,
}

impl LabeledFeatureSet {
    pub fn new(features: Tensor, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if features.rank() != 2 || features.shape()[0] != labels.len() {
            return Err(Error::dimension("labeled features", features.shape(), &[labels.len()]));
        }
        if n_classes < 2 {
            return Err(Error::Domain("need at least two classes".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Domain(format!("label {bad} outside 0..{n_classes}")));
        }
        Ok(Self {
            features,
            labels,
            n_classes,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub init_std: f64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            lr: 0.1,
            init_std: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearProbe {
    pub weights: Tensor,
    pub bias: Tensor,
}

impl LinearProbe {
    pub fn logits(&self, features: &Tensor) -> Result<Tensor> {
        let mut z = ops::matmul_nt(features, &self.weights)?;
        let k = self.bias.len();
        for row in z.values_mut().chunks_mut(k) {
            for (v, b) in row.iter_mut().zip(self.bias.values()) {
                *v += b;
            }
        }
        Ok(z)
    }

    pub fn predict(&self, features: &Tensor) -> Result<Vec<usize>> {
        let z = self.logits(features)?;
        let k = self.bias.len();
        Ok(z.values()
            .chunks(k)
            .map(|row| {
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect())
    }
}

/// Multinomial logistic regression by full-batch gradient descent on the
/// mean cross-entropy. Features are only read.
pub fn linear_probe_fit(train: &LabeledFeatureSet, cfg: &ProbeConfig, seed: u64) -> Result<LinearProbe> {
    let k = train.n_classes;
    let (n, d) = (train.features.shape()[0], train.features.shape()[1]);
    for class in 0..k {
        if !train.labels.contains(&class) {
            return Err(Error::DegenerateSplit { class });
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probe = LinearProbe {
        weights: Tensor::randn(&[k, d], cfg.init_std, &mut rng),
        bias: Tensor::zeros(&[k]),
    };
    for _ in 0..cfg.epochs {
        let mut probs = probe.logits(&train.features)?;
        for (row, &y) in probs.values_mut().chunks_mut(k).zip(&train.labels) {
            ops::softmax_in_place(row);
            row[y] -= 1.0;
        }
        // probs now holds dL/dlogits · n
        let mut gw = vec![0.0; k * d];
        ops::matmul_tn_into(probs.values(), train.features.values(), n, k, d, &mut gw);
        let mut gb = vec![0.0; k];
        for row in probs.values().chunks(k) {
            for (g, v) in gb.iter_mut().zip(row) {
                *g += v;
            }
        }
        let step = cfg.lr / n as f64;
        for (w, g) in probe.weights.values_mut().iter_mut().zip(&gw) {
            *w -= step * g;
        }
        for (b, g) in probe.bias.values_mut().iter_mut().zip(&gb) {
            *b -= step * g;
        }
    }
    Ok(probe)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResult {
    pub protocol: String,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: Vec<f64>,
}

impl EvalResult {
    pub fn new(protocol: &str, m: &Metrics) -> Self {
        Self {
            protocol: protocol.to_string(),
            accuracy: m.accuracy,
            macro_f1: m.macro_f1,
            per_class_f1: m.per_class_f1.clone(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_hand_cases() {
        let m = metrics(&[0, 1], &[0, 1], 2).unwrap();
        assert_eq!((m.accuracy, m.macro_f1), (1.0, 1.0));
        let m = metrics(&[0, 0], &[0, 1], 2).unwrap();
        assert_eq!(m.accuracy, 0.5);
        assert!((m.per_class_f1[0] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(m.per_class_f1[1], 0.0);
        assert!((m.macro_f1 - 1.0 / 3.0).abs() < 1e-15);
        assert!(metrics(&[], &[], 2).is_err());
    }

    fn unit(v: &[f64]) -> Vec<f64> {
        let n = ops::dot(v, v).sqrt();
        v.iter().map(|x| x / n).collect()
    }

    #[test]
    fn classify_self_and_ties() {
        let rows = vec![unit(&[1.0, 0.0, 0.0]), unit(&[0.0, 1.0, 0.0]), unit(&[0.0, 0.0, 1.0]), unit(&[1.0, 0.0, 0.0])];
        let names = (0..4).map(|i| format!("c{i}")).collect();
        let set = PhasePromptSet::from_embeddings(names, Tensor::from_rows(&rows).unwrap()).unwrap();
        assert_eq!(zero_shot_classify(&rows[2], &set).unwrap(), 2);
        // classes 0 and 3 share an embedding
        assert_eq!(zero_shot_classify(&rows[0], &set).unwrap(), 0);
        assert!(matches!(zero_shot_classify(&[2.0, 0.0, 0.0], &set), Err(Error::Contract(_))));
    }

    #[test]
    fn probe_separates_clusters_and_respects_zero_lr() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| {
                let s = if i % 2 == 0 { 1.0 } else { -1.0 };
                vec![s * (1.0 + 0.05 * i as f64), s * 0.5 + 0.01 * i as f64]
            })
            .collect();
        let labels: Vec<usize> = (0..20).map(|i| i % 2).collect();
        let set = LabeledFeatureSet::new(Tensor::from_rows(&rows).unwrap(), labels.clone(), 2).unwrap();
        let cfg = ProbeConfig {
            epochs: 200,
            ..ProbeConfig::default()
        };
        let probe = linear_probe_fit(&set, &cfg, 3).unwrap();
        assert_eq!(probe.predict(&set.features).unwrap(), labels);

        let frozen = linear_probe_fit(&set, &ProbeConfig { lr: 0.0, ..cfg.clone() }, 3).unwrap();
        let init = linear_probe_fit(&set, &ProbeConfig { epochs: 0, ..cfg }, 3).unwrap();
        assert_eq!(frozen, init);
    }

    #[test]
    fn missing_class_is_degenerate_split() {
        let set = LabeledFeatureSet::new(Tensor::zeros(&[3, 2]), vec![0, 0, 2], 3).unwrap();
        assert!(matches!(
            linear_probe_fit(&set, &ProbeConfig::default(), 0),
            Err(Error::DegenerateSplit { class: 1 })
        ));
    }
}
