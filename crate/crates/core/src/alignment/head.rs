use rand::Rng;

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Tape, Tensor, Var};

/// Linear → LayerNorm → GELU → Linear, followed by unit normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionHead {
    prefix: String,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

impl ProjectionHead {
    /// Hidden width equals `d_in`; weights ~ N(0, 1/fan_in), biases zero.
    pub fn init<R: Rng + ?Sized>(prefix: &str, d_in: usize, d_out: usize, rng: &mut R) -> Result<Self> {
        if d_in < 2 || d_out == 0 {
            return Err(Error::Config(format!("projection {d_in}->{d_out} too small")));
        }
        let std = (1.0 / d_in as f64).sqrt();
        Ok(Self {
            prefix: prefix.to_string(),
            w1: Tensor::randn(&[d_in, d_in], std, rng),
            b1: Tensor::zeros(&[d_in]),
            w2: Tensor::randn(&[d_out, d_in], std, rng),
            b2: Tensor::zeros(&[d_out]),
        })
    }

    pub fn d_in(&self) -> usize {
        self.w1.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.w2.shape()[0]
    }

    /// Multiplies the final affine layer (weight and bias) by `k`.
    pub fn scale_output_layer(&mut self, k: f64) {
        for v in self.w2.values_mut().iter_mut().chain(self.b2.values_mut()) {
            *v *= k;
        }
    }

    /// Unit-norm rows `[n × D]` for input rows `[n × d_in]`.
    pub fn forward_tape(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let p = &self.prefix;
        let w1 = tape.param(&format!("{p}.l1.weight"), &self.w1);
        let b1 = tape.param(&format!("{p}.l1.bias"), &self.b1);
        let w2 = tape.param(&format!("{p}.l2.weight"), &self.w2);
        let b2 = tape.param(&format!("{p}.l2.bias"), &self.b2);
        let h = tape.matmul_nt(x, w1)?;
        let h = tape.add_bias(h, b1)?;
        let h = tape.layer_norm(h)?;
        let h = tape.gelu(h);
        let y = tape.matmul_nt(h, w2)?;
        let y = tape.add_bias(y, b2)?;
        tape.l2_normalize(y)
    }
}

pub fn project_and_normalize(feature: &Tensor, head: &ProjectionHead) -> Result<Tensor> {
    let (_, cols) = feature.rows_cols();
    if cols != head.d_in() {
        return Err(Error::dimension("project_and_normalize", feature.shape(), &[head.d_in()]));
    }
    let rows = feature.len() / cols;
    let mut tape = Tape::inference();
    let x = tape.constant(feature.clone().reshape(&[rows, cols])?);
    let z = head.forward_tape(&mut tape, x)?;
    let mut shape = feature.shape().to_vec();
    *shape.last_mut().unwrap() = head.d_out();
    tape.value(z).clone().reshape(&shape)
}

impl ParamSet for ProjectionHead {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        let p = &self.prefix;
        f(&format!("{p}.l1.weight"), &self.w1);
        f(&format!("{p}.l1.bias"), &self.b1);
        f(&format!("{p}.l2.weight"), &self.w2);
        f(&format!("{p}.l2.bias"), &self.b2);
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        let p = self.prefix.clone();
        f(&format!("{p}.l1.weight"), &mut self.w1);
        f(&format!("{p}.l1.bias"), &mut self.b1);
        f(&format!("{p}.l2.weight"), &mut self.w2);
        f(&format!("{p}.l2.bias"), &mut self.b2);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn norm(v: &[f64]) -> f64 {
        v.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    #[test]
    fn unit_norm_and_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let head = ProjectionHead::init("proj_v", 6, 4, &mut rng).unwrap();
        let x = Tensor::randn(&[6], 1.0, &mut rng);
        let z = project_and_normalize(&x, &head).unwrap();
        assert_eq!(z.shape(), &[4]);
        assert!((norm(z.values()) - 1.0).abs() < 1e-12);
        assert_eq!(z, project_and_normalize(&x, &head).unwrap());
    }

    #[test]
    fn output_layer_scale_cancels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let head = ProjectionHead::init("proj_t", 5, 3, &mut rng).unwrap();
        let x = Tensor::randn(&[2, 5], 1.0, &mut rng);
        let z = project_and_normalize(&x, &head).unwrap();
        for k in [2.0, 10.0] {
            let mut scaled = head.clone();
            scaled.scale_output_layer(k);
            assert!(project_and_normalize(&x, &scaled).unwrap().max_abs_diff(&z) < 1e-10);
        }
    }

    #[test]
    fn width_mismatch_is_dimension_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let head = ProjectionHead::init("proj_v", 4, 4, &mut rng).unwrap();
        assert!(matches!(
            project_and_normalize(&Tensor::zeros(&[3]), &head),
            Err(Error::Dimension { .. })
        ));
    }
}
