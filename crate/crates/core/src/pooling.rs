//! Temporal attention pooling of per-frame embeddings into one clip vector.

use rand::Rng;

use crate::adapters::ClipFeatureSequence;
use crate::error::{Error, Result};
use crate::numerics::{self, ops, ParamSet, Tape, Tensor, Var};

/// Scores `s_t = w2·tanh(w1·h_t)`, weights `softmax(s)`, output `Σ a_t h_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalPooler {
    w1: Tensor,
    w2: Tensor,
}

impl TemporalPooler {
    pub fn new(w1: Tensor, w2: Tensor) -> Result<Self> {
        if w1.rank() != 2 || w2.rank() != 2 || w2.shape()[0] != 1 || w2.shape()[1] != w1.shape()[0] {
            return Err(Error::dimension("pooler", w1.shape(), w2.shape()));
        }
        if !w1.is_finite() || !w2.is_finite() {
            return Err(Error::Domain("pooler weights must be finite".into()));
        }
        Ok(Self { w1, w2 })
    }

    /// `w1 ~ N(0, 1/d)`, `w2 ~ N(0, 2/d)` with hidden width `d/2`.
    pub fn init<R: Rng + ?Sized>(d: usize, rng: &mut R) -> Result<Self> {
        if d < 2 || d % 2 != 0 {
            return Err(Error::Config(format!("pooler width must be even and ≥ 2, got {d}")));
        }
        let df = d as f64;
        let w1 = Tensor::randn(&[d / 2, d], (1.0 / df).sqrt(), rng);
        let w2 = Tensor::randn(&[1, d / 2], (2.0 / df).sqrt(), rng);
        Self::new(w1, w2)
    }

    pub fn width(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn w1(&self) -> &Tensor {
        &self.w1
    }

    pub fn w2(&self) -> &Tensor {
        &self.w2
    }

    /// Attention weights over the frames of `h`.
    pub fn attention(&self, h: &ClipFeatureSequence) -> Result<Vec<f64>> {
        if h.frames() == 0 {
            return Err(Error::Domain("cannot pool an empty clip".into()));
        }
        if h.width() != self.width() {
            return Err(Error::dimension("pool", h.features().shape(), self.w1.shape()));
        }
        let hidden = numerics::tanh(&numerics::matmul_nt(h.features(), &self.w1)?);
        let mut scores = numerics::matmul_nt(&hidden, &self.w2)?.into_values();
        ops::softmax_in_place(&mut scores);
        Ok(scores)
    }

    /// Builds pooled rows `[B × d]` from stacked frames `[(B·T) × d]`.
    pub fn pool_tape(&self, tape: &mut Tape, h: Var, clips: usize) -> Result<Var> {
        let rows = tape.value(h).shape()[0];
        if clips == 0 || rows % clips != 0 || rows == 0 {
            return Err(Error::Domain(format!("{rows} frame rows do not split into {clips} clips")));
        }
        let w1 = tape.param("pooler.w1", &self.w1);
        let w2 = tape.param("pooler.w2", &self.w2);
        let hidden = tape.matmul_nt(h, w1)?;
        let hidden = tape.tanh(hidden);
        let scores = tape.matmul_nt(hidden, w2)?;
        let scores = tape.reshape(scores, &[clips, rows / clips])?;
        let weights = tape.softmax(scores)?;
        tape.segment_weighted_sum(weights, h)
    }
}

pub fn pool(h: &ClipFeatureSequence, p: &TemporalPooler) -> Result<Tensor> {
    let a = p.attention(h)?;
    let d = h.width();
    let mut out = vec![0.0; d];
    for (t, &w) in a.iter().enumerate() {
        for (o, x) in out.iter_mut().zip(h.features().row(t)) {
            *o += w * x;
        }
    }
    Ok(Tensor::vector(out))
}

impl ParamSet for TemporalPooler {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        f("pooler.w1", &self.w1);
        f("pooler.w2", &self.w2);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f("pooler.w1", &mut self.w1);
        f("pooler.w2", &mut self.w2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn seq(rows: usize, d: usize, rng: &mut ChaCha8Rng) -> ClipFeatureSequence {
        ClipFeatureSequence::new(Tensor::randn(&[rows, d], 1.0, rng)).unwrap()
    }

    #[test]
    fn single_frame_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = TemporalPooler::init(6, &mut rng).unwrap();
        let h = seq(1, 6, &mut rng);
        assert_eq!(pool(&h, &p).unwrap().values(), h.features().values());
    }

    #[test]
    fn zero_w2_is_mean_pooling() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = TemporalPooler::init(4, &mut rng).unwrap();
        let p = TemporalPooler::new(p.w1().clone(), Tensor::zeros(&[1, 2])).unwrap();
        let h = seq(5, 4, &mut rng);
        let out = pool(&h, &p).unwrap();
        for c in 0..4 {
            let mean: f64 = (0..5).map(|t| h.features().get2(t, c)).sum::<f64>() / 5.0;
            assert!((out.values()[c] - mean).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_three_to_one() {
        let w1 = Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap();
        let w2 = Tensor::matrix(1, 1, vec![3f64.ln() / 1f64.tanh()]).unwrap();
        let p = TemporalPooler::new(w1, w2).unwrap();
        let h = ClipFeatureSequence::new(Tensor::identity(2)).unwrap();
        let out = pool(&h, &p).unwrap();
        assert!((out.values()[0] - 0.75).abs() < 1e-12);
        assert!((out.values()[1] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn tape_matches_direct_evaluation() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = TemporalPooler::init(8, &mut rng).unwrap();
        let clips: Vec<_> = (0..3).map(|_| seq(4, 8, &mut rng)).collect();
        let mut stacked = Vec::new();
        for c in &clips {
            stacked.extend_from_slice(c.features().values());
        }
        let mut tape = Tape::inference();
        let h = tape.constant(Tensor::matrix(12, 8, stacked).unwrap());
        let out = p.pool_tape(&mut tape, h, 3).unwrap();
        for (i, c) in clips.iter().enumerate() {
            let direct = pool(c, &p).unwrap();
            let row = tape.value(out).row(i);
            let diff = row.iter().zip(direct.values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(diff < 1e-12);
        }
    }

    #[test]
    fn odd_width_and_empty_clip_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(TemporalPooler::init(5, &mut rng).is_err());
        let p = TemporalPooler::init(4, &mut rng).unwrap();
        let mut tape = Tape::inference();
        let h = tape.constant(Tensor::zeros(&[6, 4]));
        assert!(p.pool_tape(&mut tape, h, 4).is_err());
    }
}
