//! Multi-head self-attention: h independent scaled dot-product heads over
//! the token sequence, concatenated and linearly projected.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{Linear, Registry};

pub struct Mhsa<T: Scalar> {
    q: Linear<T>,
    k: Linear<T>,
    v: Linear<T>,
    pub proj: Linear<T>,
    heads: usize,
    dim: usize,
}

impl<T: Scalar> Mhsa<T> {
    pub fn new(dim: usize, heads: usize, rng: &mut SeededRng) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::InvalidArg {
                op: "mhsa",
                msg: format!("embed dim {dim} not divisible by {heads} heads"),
            });
        }
        Ok(Mhsa {
            q: Linear::new(dim, dim, rng),
            k: Linear::new(dim, dim, rng),
            v: Linear::new(dim, dim, rng),
            proj: Linear::new(dim, dim, rng),
            heads,
            dim,
        })
    }

    /// `[N, T, D] -> [N, T, D]`; attention = softmax(Q K^T / sqrt(D/h)) V
    /// per head.
    pub fn forward(&self, tokens: &Tensor<T>) -> Result<Tensor<T>> {
        let (att, _) = self.forward_with_weights(tokens)?;
        Ok(att)
    }

    /// Forward that also returns the attention weights `[N, h, T, T]`
    /// (row-stochastic); tests assert the rows sum to one.
    pub fn forward_with_weights(&self, tokens: &Tensor<T>) -> Result<(Tensor<T>, Tensor<T>)> {
        let s = tokens.shape();
        if s.len() != 3 || s[2] != self.dim {
            return Err(Error::InvalidArg {
                op: "mhsa",
                msg: format!("expected [N, T, {}], got {s:?}", self.dim),
            });
        }
        let (n, t) = (s[0], s[1]);
        let (h, dh) = (self.heads, self.dim / self.heads);

        // [N, T, D] -> [N, h, T, dh]
        let split = |x: &Tensor<T>| -> Result<Tensor<T>> {
            x.reshape(&[n, t, h, dh])?.permute(&[0, 2, 1, 3])
        };
        let q = split(&self.q.forward(tokens)?)?;
        let k = split(&self.k.forward(tokens)?)?;
        let v = split(&self.v.forward(tokens)?)?;

        let scale = T::from_f64_c(1.0 / (dh as f64).sqrt());
        let logits = q.matmul(&k.transpose_last2()?)?.mul_scalar(scale);
        let weights = logits.softmax()?;
        let mixed = weights.matmul(&v)?; // [N, h, T, dh]
        let merged = mixed.permute(&[0, 2, 1, 3])?.reshape(&[n, t, self.dim])?;
        Ok((self.proj.forward(&merged)?, weights))
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        self.q.register(&format!("{prefix}.q"), reg);
        self.k.register(&format!("{prefix}.k"), reg);
        self.v.register(&format!("{prefix}.v"), reg);
        self.proj.register(&format!("{prefix}.proj"), reg);
    }

    pub fn param_count(&self) -> usize {
        self.q.param_count()
            + self.k.param_count()
            + self.v.param_count()
            + self.proj.param_count()
    }
}
