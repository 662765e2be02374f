//! Patch embedding: non-overlapping patches of the feature map are
//! linearly projected (a conv with kernel = stride = patch) and tagged with
//! learned position embeddings, initialized to zero.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::ops::Padding;
use crate::tensor::Tensor;

use super::{zeros_param, Conv2d, Registry};

pub struct PatchEmbed<T: Scalar> {
    proj: Conv2d<T>,
    pub pos: Tensor<T>,
    patch: usize,
    dim: usize,
    grid: (usize, usize),
}

impl<T: Scalar> PatchEmbed<T> {
    /// `grid` is the incoming feature-map size (Hf, Wf); the token count
    /// (Hf/patch)*(Wf/patch) is fixed here because the position table is
    /// learned per token.
    pub fn new(
        cin: usize,
        dim: usize,
        patch: usize,
        grid: (usize, usize),
        rng: &mut SeededRng,
    ) -> Result<Self> {
        if patch == 0 || grid.0 % patch != 0 || grid.1 % patch != 0 {
            return Err(Error::InvalidArg {
                op: "patch_embed",
                msg: format!("grid {grid:?} not divisible by patch {patch}"),
            });
        }
        let tokens = (grid.0 / patch) * (grid.1 / patch);
        Ok(PatchEmbed {
            proj: Conv2d::new_trunc(cin, dim, patch, patch, Padding::Valid, rng),
            pos: zeros_param(&[tokens, dim]),
            patch,
            dim,
            grid,
        })
    }

    pub fn token_grid(&self) -> (usize, usize) {
        (self.grid.0 / self.patch, self.grid.1 / self.patch)
    }

    /// `[N, C, Hf, Wf] -> [N, T, D]` with position embeddings added.
    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let s = x.shape();
        if s.len() != 4 || (s[2], s[3]) != self.grid {
            return Err(Error::InvalidArg {
                op: "patch_embed",
                msg: format!("expected [N, C, {}, {}], got {s:?}", self.grid.0, self.grid.1),
            });
        }
        let n = s[0];
        let (gh, gw) = self.token_grid();
        let projected = self.proj.forward(x)?; // [N, D, gh, gw]
        let tokens = projected
            .reshape(&[n, self.dim, gh * gw])?
            .permute(&[0, 2, 1])?; // [N, T, D]
        tokens.add_bias(&self.pos)
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        self.proj.register(&format!("{prefix}.proj"), reg);
        reg.param(format!("{prefix}.pos"), &self.pos);
    }

    pub fn param_count(&self) -> usize {
        self.proj.param_count() + self.pos.numel()
    }
}
