//! Spatial pooling over `[N, C, H, W]`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tensor<T> {
    /// 2x2 max pooling at stride 2. Both spatial dims must be even. Ties
    /// route the gradient to the first maximal element in row-major order.
    pub fn maxpool2d(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::InvalidArg {
                op: "maxpool2d",
                msg: format!("expected [N, C, H, W], got {s:?}"),
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if h % 2 != 0 || w % 2 != 0 {
            return Err(Error::InvalidArg {
                op: "maxpool2d",
                msg: format!("spatial dims must be even, got {h}x{w}"),
            });
        }
        let (ho, wo) = (h / 2, w / 2);
        let planes = n * c;
        let mut out = Vec::with_capacity(planes * ho * wo);
        // Per output element: flat index of its source within the input.
        let mut argmax = Vec::with_capacity(planes * ho * wo);
        {
            let xd = self.data();
            for p in 0..planes {
                let base = p * h * w;
                for oy in 0..ho {
                    for ox in 0..wo {
                        let corner = base + (2 * oy) * w + 2 * ox;
                        let window = [corner, corner + 1, corner + w, corner + w + 1];
                        let mut best = window[0];
                        for &idx in &window[1..] {
                            if xd[idx] > xd[best] {
                                best = idx;
                            }
                        }
                        out.push(xd[best]);
                        argmax.push(best);
                    }
                }
            }
        }
        let a = self.clone();
        let in_len = self.numel();
        Ok(Tensor::from_op(
            vec![n, c, ho, wo],
            out,
            vec![self.clone()],
            move |dy| {
                let mut da = vec![T::zero(); in_len];
                for (&idx, &g) in argmax.iter().zip(dy.iter()) {
                    da[idx] += g;
                }
                a.add_to_grad(&da);
            },
        ))
    }

    /// Mean over the spatial grid: `[N, C, H, W] -> [N, C, 1, 1]`.
    pub fn global_avg_pool(&self) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::InvalidArg {
                op: "global_avg_pool",
                msg: format!("expected [N, C, H, W], got {s:?}"),
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let plane = h * w;
        let inv = T::from_f64_c(1.0 / plane as f64);
        let out: Vec<T> = self
            .data()
            .chunks_exact(plane)
            .map(|p| p.iter().copied().sum::<T>() * inv)
            .collect();
        let a = self.clone();
        Ok(Tensor::from_op(
            vec![n, c, 1, 1],
            out,
            vec![self.clone()],
            move |dy| {
                let mut da = Vec::with_capacity(n * c * plane);
                for &g in dy.iter() {
                    da.extend(std::iter::repeat(g * inv).take(plane));
                }
                a.add_to_grad(&da);
            },
        ))
    }
}
