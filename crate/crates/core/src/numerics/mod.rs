//! Dense `f64` tensors, forward primitives, a gradient tape, and a
//! finite-difference verifier.

mod gradcheck;
pub mod ops;
mod tape;
mod tensor;

pub use gradcheck::{grad_check, GradCheckReport};
pub use ops::{gelu, l2_normalize, layer_norm, log_softmax, matmul, matmul_nt, softmax, tanh};
pub use tape::{Gradients, Tape, Var};
pub use tensor::{Tensor, LIMT_MAGIC};

/// A named, ordered collection of trainable tensors.
///
/// Iteration order must be stable; checkpoints and optimizers rely on it.
pub trait ParamSet {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor));
    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor));

    fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.for_each_param(&mut |n, _| names.push(n.to_string()));
        names
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.for_each_param(&mut |_, t| n += t.len());
        n
    }
}

/// Plain list of named tensors, mostly for tests and small experiments.
#[derive(Debug, Clone, Default)]
pub struct NamedParams(pub Vec<(String, Tensor)>);

impl NamedParams {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

impl ParamSet for NamedParams {
    fn for_each_param(&self, f: &mut dyn FnMut(&str, &Tensor)) {
        for (n, t) in &self.0 {
            f(n, t);
        }
    }

    fn for_each_param_mut(&mut self, f: &mut dyn FnMut(&str, &mut Tensor)) {
        for (n, t) in &mut self.0 {
            f(n, t);
        }
    }
}

/// Independent child seed for stream `stream` of `seed` (splitmix64 finalizer).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
