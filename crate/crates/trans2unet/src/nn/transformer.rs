//! Pre-norm transformer encoder block: x + MHSA(LN(x)), then x + MLP(LN(x)).
//! Dropout (when configured) sits on each sublayer output, so zeroed
//! sublayer projections leave the block an exact identity in any mode.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::ops::Mode;
use crate::tensor::Tensor;

use super::{LayerNorm, Linear, Mhsa, Registry};

pub struct TransformerBlock<T: Scalar> {
    ln1: LayerNorm<T>,
    pub attn: Mhsa<T>,
    ln2: LayerNorm<T>,
    fc1: Linear<T>,
    pub fc2: Linear<T>,
    dropout_p: f64,
}

impl<T: Scalar> TransformerBlock<T> {
    pub fn new(
        dim: usize,
        heads: usize,
        mlp_ratio: f64,
        dropout_p: f64,
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::InvalidArg {
                op: "transformer_block",
                msg: format!("dropout must lie in [0, 1), got {dropout_p}"),
            });
        }
        if mlp_ratio <= 0.0 {
            return Err(Error::InvalidArg {
                op: "transformer_block",
                msg: format!("mlp_ratio must be positive, got {mlp_ratio}"),
            });
        }
        let hidden = ((dim as f64 * mlp_ratio).round() as usize).max(1);
        Ok(TransformerBlock {
            ln1: LayerNorm::new(dim),
            attn: Mhsa::new(dim, heads, rng)?,
            ln2: LayerNorm::new(dim),
            fc1: Linear::new(dim, hidden, rng),
            fc2: Linear::new(hidden, dim, rng),
            dropout_p,
        })
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut SeededRng) -> Result<Tensor<T>> {
        let attended = self.attn.forward(&self.ln1.forward(x)?)?;
        let x = x.add(&attended.dropout(self.dropout_p, mode, rng)?)?;
        let h = self.fc2.forward(&self.fc1.forward(&self.ln2.forward(&x)?)?.gelu())?;
        x.add(&h.dropout(self.dropout_p, mode, rng)?)
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        self.ln1.register(&format!("{prefix}.ln1"), reg);
        self.attn.register(&format!("{prefix}.attn"), reg);
        self.ln2.register(&format!("{prefix}.ln2"), reg);
        self.fc1.register(&format!("{prefix}.mlp1"), reg);
        self.fc2.register(&format!("{prefix}.mlp2"), reg);
    }

    pub fn param_count(&self) -> usize {
        self.ln1.param_count()
            + self.attn.param_count()
            + self.ln2.param_count()
            + self.fc1.param_count()
            + self.fc2.param_count()
    }
}
