//! Layout ops: views are always materialized copies, so every tensor stays
//! contiguous row-major and kernels never deal with strides.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{strides, Tensor};

fn permute_buf<T: Copy>(src: &[T], src_shape: &[usize], perm: &[usize]) -> Vec<T> {
    let out_shape: Vec<usize> = perm.iter().map(|&p| src_shape[p]).collect();
    let src_strides = strides(src_shape);
    // Walking the output in order, the source index advances by the source
    // stride of the dimension each output coordinate indexes.
    let mapped: Vec<usize> = perm.iter().map(|&p| src_strides[p]).collect();
    let numel = src.len();
    let mut out = Vec::with_capacity(numel);
    let mut coord = vec![0usize; out_shape.len()];
    let mut src_idx = 0usize;
    for _ in 0..numel {
        out.push(src[src_idx]);
        for d in (0..out_shape.len()).rev() {
            coord[d] += 1;
            src_idx += mapped[d];
            if coord[d] < out_shape[d] {
                break;
            }
            coord[d] = 0;
            src_idx -= mapped[d] * out_shape[d];
        }
    }
    out
}

impl<T: Scalar> Tensor<T> {
    /// Same data, new shape. The element count must match.
    pub fn reshape(&self, new_shape: &[usize]) -> Result<Tensor<T>> {
        let numel: usize = new_shape.iter().product();
        if numel != self.numel() || new_shape.iter().any(|&d| d == 0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: new_shape.to_vec(),
            });
        }
        let a = self.clone();
        Ok(Tensor::from_op(
            new_shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            move |dy| a.add_to_grad(dy),
        ))
    }

    /// Reorder dimensions: output axis `i` is input axis `perm[i]`.
    pub fn permute(&self, perm: &[usize]) -> Result<Tensor<T>> {
        let nd = self.shape().len();
        let mut seen = vec![false; nd];
        let valid = perm.len() == nd
            && perm.iter().all(|&p| {
                if p >= nd || seen[p] {
                    false
                } else {
                    seen[p] = true;
                    true
                }
            });
        if !valid {
            return Err(Error::InvalidArg {
                op: "permute",
                msg: format!("{perm:?} is not a permutation of axes of {:?}", self.shape()),
            });
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| self.shape()[p]).collect();
        let out = permute_buf(&self.data(), self.shape(), perm);
        let mut inverse = vec![0usize; nd];
        for (i, &p) in perm.iter().enumerate() {
            inverse[p] = i;
        }
        let a = self.clone();
        let fwd_shape = out_shape.clone();
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone()],
            move |dy| {
                let da = permute_buf(dy, &fwd_shape, &inverse);
                a.add_to_grad(&da);
            },
        ))
    }

    /// Swap the last two dimensions.
    pub fn transpose_last2(&self) -> Result<Tensor<T>> {
        let nd = self.shape().len();
        if nd < 2 {
            return Err(Error::InvalidArg {
                op: "transpose_last2",
                msg: format!("needs at least 2 dims, got shape {:?}", self.shape()),
            });
        }
        let mut perm: Vec<usize> = (0..nd).collect();
        perm.swap(nd - 2, nd - 1);
        self.permute(&perm)
    }

    /// Add a bias whose shape is a trailing suffix of this tensor's shape.
    /// The bias gradient sums over the leading dimensions.
    pub fn add_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>> {
        let nd = self.shape().len();
        let bd = bias.shape().len();
        if bd > nd || bias.shape() != &self.shape()[nd - bd..] {
            return Err(Error::ShapeMismatch {
                op: "add_bias",
                lhs: self.shape().to_vec(),
                rhs: bias.shape().to_vec(),
            });
        }
        let tail = bias.numel();
        let out = {
            let (xd, bv) = (self.data(), bias.data());
            xd.iter()
                .enumerate()
                .map(|(i, &x)| x + bv[i % tail])
                .collect()
        };
        let (a, b) = (self.clone(), bias.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), bias.clone()],
            move |dy| {
                a.add_to_grad(dy);
                if b.requires_grad() {
                    let mut db = vec![T::zero(); tail];
                    for (i, &g) in dy.iter().enumerate() {
                        db[i % tail] += g;
                    }
                    b.add_to_grad(&db);
                }
            },
        ))
    }

    /// Repeat a `[N, C, 1, 1]` tensor over an `h x w` spatial grid.
    pub fn broadcast_spatial(&self, h: usize, w: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 || s[2] != 1 || s[3] != 1 {
            return Err(Error::InvalidArg {
                op: "broadcast_spatial",
                msg: format!("expected [N, C, 1, 1], got {s:?}"),
            });
        }
        if h == 0 || w == 0 {
            return Err(Error::InvalidArg {
                op: "broadcast_spatial",
                msg: format!("target size {h}x{w} must be positive"),
            });
        }
        let (n, c) = (s[0], s[1]);
        let plane = h * w;
        let mut out = Vec::with_capacity(n * c * plane);
        {
            let xd = self.data();
            for &v in xd.iter() {
                out.extend(std::iter::repeat(v).take(plane));
            }
        }
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![n, c, h, w],
            out,
            vec![self.clone()],
            move |dy| {
                let da: Vec<T> = dy
                    .chunks_exact(plane)
                    .map(|chunk| chunk.iter().copied().sum())
                    .collect();
                a.add_to_grad(&da);
            },
        ))
    }
}

/// Concatenate along `axis`. All other dimensions must agree.
pub fn concat<T: Scalar>(inputs: &[&Tensor<T>], axis: usize) -> Result<Tensor<T>> {
    let first = inputs.first().ok_or(Error::InvalidArg {
        op: "concat",
        msg: "needs at least one input".to_string(),
    })?;
    let nd = first.shape().len();
    if axis >= nd {
        return Err(Error::InvalidArg {
            op: "concat",
            msg: format!("axis {axis} out of range for shape {:?}", first.shape()),
        });
    }
    for t in &inputs[1..] {
        let compatible = t.shape().len() == nd
            && t.shape()
                .iter()
                .zip(first.shape().iter())
                .enumerate()
                .all(|(d, (a, b))| d == axis || a == b);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: first.shape().to_vec(),
                rhs: t.shape().to_vec(),
            });
        }
    }

    let outer: usize = first.shape()[..axis].iter().product();
    let inner: usize = first.shape()[axis + 1..].iter().product();
    // Per-input contiguous block length for one outer index.
    let blocks: Vec<usize> = inputs.iter().map(|t| t.shape()[axis] * inner).collect();
    let out_block: usize = blocks.iter().sum();

    let mut out_shape = first.shape().to_vec();
    out_shape[axis] = inputs.iter().map(|t| t.shape()[axis]).sum();
    let mut out = vec![T::zero(); outer * out_block];
    for o in 0..outer {
        let mut at = o * out_block;
        for (t, &block) in inputs.iter().zip(blocks.iter()) {
            let src = t.data();
            out[at..at + block].copy_from_slice(&src[o * block..(o + 1) * block]);
            at += block;
        }
    }

    let parents: Vec<Tensor<T>> = inputs.iter().map(|t| (*t).clone()).collect();
    let handles = parents.clone();
    Ok(Tensor::from_op(out_shape, out, parents, move |dy| {
        let mut offset = 0usize;
        for (t, &block) in handles.iter().zip(blocks.iter()) {
            if t.requires_grad() {
                let mut dt = vec![T::zero(); outer * block];
                for o in 0..outer {
                    let at = o * out_block + offset;
                    dt[o * block..(o + 1) * block].copy_from_slice(&dy[at..at + block]);
                }
                t.add_to_grad(&dt);
            }
            offset += block;
        }
    }))
}
