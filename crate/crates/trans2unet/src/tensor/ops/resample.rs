//! Bilinear upsampling by an integer factor, half-pixel convention
//! (align_corners = false): source coordinate `(o + 0.5) / f - 0.5`, taps
//! clamped to the image so edges replicate.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per output index along one axis: the two source taps and their weights.
fn axis_taps<T: Scalar>(size_in: usize, factor: usize) -> Vec<(usize, usize, T, T)> {
    let size_out = size_in * factor;
    (0..size_out)
        .map(|o| {
            let src = (o as f64 + 0.5) / factor as f64 - 0.5;
            let floor = src.floor();
            let w1 = src - floor;
            let clampi = |v: f64| (v.max(0.0) as usize).min(size_in - 1);
            let i0 = clampi(floor);
            let i1 = clampi(floor + 1.0);
            (i0, i1, T::from_f64_c(1.0 - w1), T::from_f64_c(w1))
        })
        .collect()
}

impl<T: Scalar> Tensor<T> {
    pub fn upsample_bilinear(&self, factor: usize) -> Result<Tensor<T>> {
        let s = self.shape();
        if s.len() != 4 {
            return Err(Error::InvalidArg {
                op: "upsample_bilinear",
                msg: format!("expected [N, C, H, W], got {s:?}"),
            });
        }
        if factor == 0 {
            return Err(Error::InvalidArg {
                op: "upsample_bilinear",
                msg: "factor must be >= 1".to_string(),
            });
        }
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        let (ho, wo) = (h * factor, w * factor);
        let ytaps = axis_taps::<T>(h, factor);
        let xtaps = axis_taps::<T>(w, factor);

        let planes = n * c;
        let mut out = Vec::with_capacity(planes * ho * wo);
        {
            let xd = self.data();
            for p in 0..planes {
                let plane = &xd[p * h * w..][..h * w];
                for &(y0, y1, wy0, wy1) in &ytaps {
                    let (r0, r1) = (&plane[y0 * w..][..w], &plane[y1 * w..][..w]);
                    for &(x0, x1, wx0, wx1) in &xtaps {
                        let top = wx0 * r0[x0] + wx1 * r0[x1];
                        let bot = wx0 * r1[x0] + wx1 * r1[x1];
                        out.push(wy0 * top + wy1 * bot);
                    }
                }
            }
        }

        let a = self.clone();
        Ok(Tensor::from_op(
            vec![n, c, ho, wo],
            out,
            vec![self.clone()],
            move |dy| {
                let mut da = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    let dplane = &mut da[p * h * w..][..h * w];
                    let dy_plane = &dy[p * ho * wo..][..ho * wo];
                    for (oy, &(y0, y1, wy0, wy1)) in ytaps.iter().enumerate() {
                        let dy_row = &dy_plane[oy * wo..][..wo];
                        for (&g, &(x0, x1, wx0, wx1)) in dy_row.iter().zip(xtaps.iter()) {
                            dplane[y0 * w + x0] += g * wy0 * wx0;
                            dplane[y0 * w + x1] += g * wy0 * wx1;
                            dplane[y1 * w + x0] += g * wy1 * wx0;
                            dplane[y1 * w + x1] += g * wy1 * wx1;
                        }
                    }
                }
                a.add_to_grad(&da);
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::tensor::Tensor;

    #[test]
    fn doubles_a_ramp_with_half_pixel_offsets() {
        let x = Tensor::<f64>::param(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let y = x.upsample_bilinear(2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 4]);
        // Both output rows interpolate the single input row.
        let got = y.to_vec();
        assert_eq!(&got[..4], &[1.0, 1.25, 1.75, 2.0]);
        assert_eq!(&got[4..], &[1.0, 1.25, 1.75, 2.0]);
    }

    #[test]
    fn corner_values_replicate_edges() {
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vec![0.0, 0.0, 0.0, 4.0]).unwrap();
        let y = x.upsample_bilinear(2).unwrap();
        let got = y.to_vec();
        assert_eq!(got[0], 0.0); // (0,0) clamps to the top-left texel
        assert_eq!(got[5], 0.25); // (1,1): 0.25 * 0.25 * 4
        assert_eq!(got[10], 2.25); // (2,2): 0.75 * 0.75 * 4
        assert_eq!(got[15], 4.0); // (3,3) clamps to the bottom-right texel
    }

    #[test]
    fn constant_input_stays_constant() {
        let x = Tensor::<f64>::param(&[1, 2, 2, 2], vec![3.25; 8]).unwrap();
        let y = x.upsample_bilinear(3).unwrap();
        assert_eq!(y.shape(), &[1, 2, 6, 6]);
        for v in y.to_vec() {
            assert!((v - 3.25).abs() < 1e-12);
        }
    }

    #[test]
    fn two_by_two_ramp_matches_direct_formula() {
        // x = [[0, 1], [2, 3]], factor 2, half-pixel taps worked per pixel.
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let y = x.upsample_bilinear(2).unwrap();
        let expect = [
            0.0, 0.25, 0.75, 1.0, //
            0.5, 0.75, 1.25, 1.5, //
            1.5, 1.75, 2.25, 2.5, //
            2.0, 2.25, 2.75, 3.0,
        ];
        for (g, e) in y.to_vec().into_iter().zip(expect) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }

    #[test]
    fn gradient_conserves_mass() {
        // With an all-ones output gradient each input receives the total
        // interpolation weight pointing at it; the sum equals the output count.
        let x = Tensor::<f64>::param(&[1, 1, 1, 2], vec![1.0, 2.0]).unwrap();
        let y = x.upsample_bilinear(2).unwrap();
        y.sum().backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 4.0]);
    }

    #[test]
    fn factor_one_is_identity() {
        let x = Tensor::<f64>::param(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = x.upsample_bilinear(1).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
        assert!(x.upsample_bilinear(0).is_err());
    }
}
