//! Network building blocks assembled from tensor ops.
//!
//! Every block owns its parameter tensors and reports them to a [`Registry`]
//! under a dotted path ("unet.enc1.c1.conv.weight", ...). The registry is
//! the single source of truth for optimization and checkpointing: each
//! learnable tensor appears exactly once, in deterministic order.

mod attention;
mod encoder;
mod layers;
mod patch_embed;
mod transformer;
mod wasp;

pub use attention::Mhsa;
pub use encoder::CnnEncoder;
pub use layers::{BatchNorm2d, Conv2d, ConvBlock, LayerNorm, Linear};
pub use patch_embed::PatchEmbed;
pub use transformer::TransformerBlock;
pub use wasp::{Wasp, WaspConfig};

use std::collections::HashSet;

use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Named collection of a model's tensors: learnable parameters plus
/// non-learnable state (batch-norm running statistics).
pub struct Registry<T: Scalar> {
    params: Vec<(String, Tensor<T>)>,
    states: Vec<(String, Tensor<T>)>,
    names: HashSet<String>,
    ids: HashSet<u64>,
}

impl<T: Scalar> Registry<T> {
    pub fn new() -> Self {
        Registry {
            params: Vec::new(),
            states: Vec::new(),
            names: HashSet::new(),
            ids: HashSet::new(),
        }
    }

    fn insert(&mut self, name: String, t: &Tensor<T>) {
        assert!(self.names.insert(name.clone()), "duplicate tensor name {name}");
        assert!(
            self.ids.insert(t.tensor_id()),
            "tensor registered twice under {name}"
        );
    }

    pub fn param(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let name = name.into();
        assert!(t.requires_grad(), "parameter {name} does not require grad");
        self.insert(name.clone(), t);
        self.params.push((name, t.clone()));
    }

    pub fn state(&mut self, name: impl Into<String>, t: &Tensor<T>) {
        let name = name.into();
        assert!(!t.requires_grad(), "state {name} must not require grad");
        self.insert(name.clone(), t);
        self.states.push((name, t.clone()));
    }

    pub fn params(&self) -> &[(String, Tensor<T>)] {
        &self.params
    }

    pub fn states(&self) -> &[(String, Tensor<T>)] {
        &self.states
    }

    /// Parameters followed by states, the checkpoint enumeration order.
    pub fn all(&self) -> impl Iterator<Item = &(String, Tensor<T>)> {
        self.params.iter().chain(self.states.iter())
    }

    /// Total learnable scalar count.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.numel()).sum()
    }
}

impl<T: Scalar> Default for Registry<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Kaiming-uniform fan-in init for conv weights: U(-b, b), b = sqrt(6/fan_in).
pub(crate) fn kaiming_uniform<T: Scalar>(
    shape: &[usize],
    fan_in: usize,
    rng: &mut SeededRng,
) -> Tensor<T> {
    let bound = (6.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_c(rng.uniform_in(-bound, bound)))
        .collect();
    Tensor::param(shape, data).expect("init shape")
}

/// Truncated normal init (mean 0, given std, clipped at 2 std) for
/// transformer-side weights and embeddings.
pub(crate) fn trunc_normal<T: Scalar>(shape: &[usize], std: f64, rng: &mut SeededRng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::from_f64_c(rng.truncated_normal(std)))
        .collect();
    Tensor::param(shape, data).expect("init shape")
}

pub(crate) fn zeros_param<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![T::zero(); n]).expect("init shape")
}

pub(crate) fn ones_param<T: Scalar>(shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::param(shape, vec![T::one(); n]).expect("init shape")
}
