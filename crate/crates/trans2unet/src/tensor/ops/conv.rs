//! 2D convolution (cross-correlation) over `[N, C, H, W]` with stride,
//! dilation, and same/valid padding. Loops hoist the weight scalar and run
//! contiguous over output x, which keeps debug-opt builds fast enough to
//! train on a laptop-scale problem.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Spatial padding policy. `Same` preserves H and W at stride 1 and
/// requires odd kernel sides so the padding splits evenly.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Padding {
    Same,
    Valid,
}

struct ConvGeom {
    n: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    dilation: usize,
    ph: usize,
    pw: usize,
    ho: usize,
    wo: usize,
}

fn out_dim(op: &'static str, size: usize, pad: usize, eff_k: usize, stride: usize) -> Result<usize> {
    if size + 2 * pad < eff_k {
        return Err(Error::InvalidArg {
            op,
            msg: format!(
                "effective kernel {eff_k} exceeds padded input extent {}",
                size + 2 * pad
            ),
        });
    }
    Ok((size + 2 * pad - eff_k) / stride + 1)
}

fn conv_geometry<T: Scalar>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Result<ConvGeom> {
    if x.shape().len() != 4 || w.shape().len() != 4 {
        return Err(Error::InvalidArg {
            op: "conv2d",
            msg: format!(
                "expected 4-d input and weight, got {:?} and {:?}",
                x.shape(),
                w.shape()
            ),
        });
    }
    if stride == 0 || dilation == 0 {
        return Err(Error::InvalidArg {
            op: "conv2d",
            msg: format!("stride and dilation must be >= 1, got {stride} and {dilation}"),
        });
    }
    let (n, cin, h, wd) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (cout, wcin, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    if cin != wcin {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: x.shape().to_vec(),
            rhs: w.shape().to_vec(),
        });
    }
    if bias.shape() != [cout] {
        return Err(Error::ShapeMismatch {
            op: "conv2d",
            lhs: w.shape().to_vec(),
            rhs: bias.shape().to_vec(),
        });
    }
    let eff_kh = kh + (kh - 1) * (dilation - 1);
    let eff_kw = kw + (kw - 1) * (dilation - 1);
    let (ph, pw) = match padding {
        Padding::Valid => (0, 0),
        Padding::Same => {
            if kh % 2 == 0 || kw % 2 == 0 {
                return Err(Error::InvalidArg {
                    op: "conv2d",
                    msg: format!("same padding requires odd kernel sides, got {kh}x{kw}"),
                });
            }
            ((eff_kh - 1) / 2, (eff_kw - 1) / 2)
        }
    };
    let ho = out_dim("conv2d", h, ph, eff_kh, stride)?;
    let wo = out_dim("conv2d", wd, pw, eff_kw, stride)?;
    Ok(ConvGeom {
        n,
        cin,
        h,
        w: wd,
        cout,
        kh,
        kw,
        stride,
        dilation,
        ph,
        pw,
        ho,
        wo,
    })
}

impl<T: Scalar> Tensor<T> {
    pub fn conv2d(
        &self,
        weight: &Tensor<T>,
        bias: &Tensor<T>,
        stride: usize,
        dilation: usize,
        padding: Padding,
    ) -> Result<Tensor<T>> {
        let g = conv_geometry(self, weight, bias, stride, dilation, padding)?;
        let plane_in = g.h * g.w;
        let plane_out = g.ho * g.wo;

        let mut out = vec![T::zero(); g.n * g.cout * plane_out];
        {
            let (xd, wd, bd) = (self.data(), weight.data(), bias.data());
            for img in 0..g.n {
                for co in 0..g.cout {
                    let out_plane =
                        &mut out[(img * g.cout + co) * plane_out..][..plane_out];
                    out_plane.fill(bd[co]);
                    for ci in 0..g.cin {
                        let x_plane = &xd[(img * g.cin + ci) * plane_in..][..plane_in];
                        for ky in 0..g.kh {
                            for kx in 0..g.kw {
                                let wv = wd[((co * g.cin + ci) * g.kh + ky) * g.kw + kx];
                                accumulate_tap(out_plane, x_plane, wv, &g, ky, kx);
                            }
                        }
                    }
                }
            }
        }

        let (x, w, b) = (self.clone(), weight.clone(), bias.clone());
        Ok(Tensor::from_op(
            vec![g.n, g.cout, g.ho, g.wo],
            out,
            vec![self.clone(), weight.clone(), bias.clone()],
            move |dy| {
                let (need_dx, need_dw, need_db) =
                    (x.requires_grad(), w.requires_grad(), b.requires_grad());
                let (da, dw, db) = {
                    let (xd, wd) = (x.data(), w.data());
                    let mut da = if need_dx {
                        vec![T::zero(); xd.len()]
                    } else {
                        Vec::new()
                    };
                    let mut dw = if need_dw {
                        vec![T::zero(); wd.len()]
                    } else {
                        Vec::new()
                    };
                    let mut db = if need_db {
                        vec![T::zero(); g.cout]
                    } else {
                        Vec::new()
                    };
                    for img in 0..g.n {
                        for co in 0..g.cout {
                            let dy_plane =
                                &dy[(img * g.cout + co) * plane_out..][..plane_out];
                            if need_db {
                                db[co] += dy_plane.iter().copied().sum();
                            }
                            if !need_dx && !need_dw {
                                continue;
                            }
                            for ci in 0..g.cin {
                                let x_plane =
                                    &xd[(img * g.cin + ci) * plane_in..][..plane_in];
                                for ky in 0..g.kh {
                                    for kx in 0..g.kw {
                                        let widx =
                                            ((co * g.cin + ci) * g.kh + ky) * g.kw + kx;
                                        if need_dw {
                                            dw[widx] +=
                                                correlate_tap(dy_plane, x_plane, &g, ky, kx);
                                        }
                                        if need_dx {
                                            let da_plane = &mut da
                                                [(img * g.cin + ci) * plane_in..][..plane_in];
                                            scatter_tap(
                                                da_plane, dy_plane, wd[widx], &g, ky, kx,
                                            );
                                        }
                                    }
                                }
                            }
                        }
                    }
                    (da, dw, db)
                };
                if need_dx {
                    x.add_to_grad(&da);
                }
                if need_dw {
                    w.add_to_grad(&dw);
                }
                if need_db {
                    b.add_to_grad(&db);
                }
            },
        ))
    }
}

/// Row bounds for one kernel tap: the output-x range whose input column
/// stays inside the image, plus the input-x of the first in-range output.
fn tap_bounds(g: &ConvGeom, kx: usize) -> Option<(usize, usize, isize)> {
    let shift = (kx * g.dilation) as isize - g.pw as isize;
    if g.stride == 1 {
        let lo = (-shift).max(0) as usize;
        let hi_signed = g.w as isize - shift;
        let hi = hi_signed.clamp(0, g.wo as isize) as usize;
        (lo < hi).then_some((lo, hi, shift))
    } else {
        None
    }
}

fn accumulate_tap<T: Scalar>(
    out_plane: &mut [T],
    x_plane: &[T],
    wv: T,
    g: &ConvGeom,
    ky: usize,
    kx: usize,
) {
    let fast = tap_bounds(g, kx);
    for oy in 0..g.ho {
        let iy = (oy * g.stride + ky * g.dilation) as isize - g.ph as isize;
        if iy < 0 || iy >= g.h as isize {
            continue;
        }
        let x_row = &x_plane[iy as usize * g.w..][..g.w];
        let out_row = &mut out_plane[oy * g.wo..][..g.wo];
        match fast {
            Some((lo, hi, shift)) => {
                let xs = (lo as isize + shift) as usize;
                for (ov, &xv) in out_row[lo..hi].iter_mut().zip(&x_row[xs..xs + hi - lo]) {
                    *ov += wv * xv;
                }
            }
            None => {
                for (ox, ov) in out_row.iter_mut().enumerate() {
                    let ix = (ox * g.stride + kx * g.dilation) as isize - g.pw as isize;
                    if ix >= 0 && ix < g.w as isize {
                        *ov += wv * x_row[ix as usize];
                    }
                }
            }
        }
    }
}

fn correlate_tap<T: Scalar>(
    dy_plane: &[T],
    x_plane: &[T],
    g: &ConvGeom,
    ky: usize,
    kx: usize,
) -> T {
    let fast = tap_bounds(g, kx);
    let mut acc = T::zero();
    for oy in 0..g.ho {
        let iy = (oy * g.stride + ky * g.dilation) as isize - g.ph as isize;
        if iy < 0 || iy >= g.h as isize {
            continue;
        }
        let x_row = &x_plane[iy as usize * g.w..][..g.w];
        let dy_row = &dy_plane[oy * g.wo..][..g.wo];
        match fast {
            Some((lo, hi, shift)) => {
                let xs = (lo as isize + shift) as usize;
                for (&gv, &xv) in dy_row[lo..hi].iter().zip(&x_row[xs..xs + hi - lo]) {
                    acc += gv * xv;
                }
            }
            None => {
                for (ox, &gv) in dy_row.iter().enumerate() {
                    let ix = (ox * g.stride + kx * g.dilation) as isize - g.pw as isize;
                    if ix >= 0 && ix < g.w as isize {
                        acc += gv * x_row[ix as usize];
                    }
                }
            }
        }
    }
    acc
}

fn scatter_tap<T: Scalar>(
    da_plane: &mut [T],
    dy_plane: &[T],
    wv: T,
    g: &ConvGeom,
    ky: usize,
    kx: usize,
) {
    let fast = tap_bounds(g, kx);
    for oy in 0..g.ho {
        let iy = (oy * g.stride + ky * g.dilation) as isize - g.ph as isize;
        if iy < 0 || iy >= g.h as isize {
            continue;
        }
        let da_row = &mut da_plane[iy as usize * g.w..][..g.w];
        let dy_row = &dy_plane[oy * g.wo..][..g.wo];
        match fast {
            Some((lo, hi, shift)) => {
                let xs = (lo as isize + shift) as usize;
                for (dv, &gv) in da_row[xs..xs + hi - lo].iter_mut().zip(&dy_row[lo..hi]) {
                    *dv += wv * gv;
                }
            }
            None => {
                for (ox, &gv) in dy_row.iter().enumerate() {
                    let ix = (ox * g.stride + kx * g.dilation) as isize - g.pw as isize;
                    if ix >= 0 && ix < g.w as isize {
                        da_row[ix as usize] += wv * gv;
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::Padding;
    use crate::tensor::Tensor;

    fn image(h: usize, w: usize, vals: Vec<f64>) -> Tensor<f64> {
        Tensor::param(&[1, 1, h, w], vals).unwrap()
    }

    fn zero_bias(c: usize) -> Tensor<f64> {
        Tensor::from_vec(&[c], vec![0.0; c]).unwrap()
    }

    #[test]
    fn one_by_one_identity() {
        let x = image(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let w = Tensor::param(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = x.conv2d(&w, &zero_bias(1), 1, 1, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn valid_three_by_three_box_sums() {
        let x = image(4, 4, (1..=16).map(f64::from).collect());
        let w = Tensor::param(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = x.conv2d(&w, &zero_bias(1), 1, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![54.0, 63.0, 90.0, 99.0]);
    }

    #[test]
    fn center_weight_kernel_is_identity() {
        let x = image(3, 3, vec![4.0, -2.0, 7.0, 0.5, 1.0, -3.0, 2.0, 8.0, -1.0]);
        let mut kv = vec![0.0; 9];
        kv[4] = 1.0;
        let w = Tensor::param(&[1, 1, 3, 3], kv).unwrap();
        let y = x.conv2d(&w, &zero_bias(1), 1, 1, Padding::Same).unwrap();
        assert_eq!(y.to_vec(), x.to_vec());
    }

    #[test]
    fn dilated_box_filter_counts_in_range_taps() {
        // 5x5 of ones, all-ones 3x3 kernel at dilation 2, same padding:
        // the center sees all 9 taps, a corner only the 4 inside the image.
        let x = image(5, 5, vec![1.0; 25]);
        let w = Tensor::param(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = x.conv2d(&w, &zero_bias(1), 1, 2, Padding::Same).unwrap();
        let got = y.to_vec();
        assert_eq!(got[12], 9.0);
        assert_eq!(got[0], 4.0);
        assert_eq!(got[4], 4.0);
        assert_eq!(got[20], 4.0);
        assert_eq!(got[24], 4.0);
    }

    #[test]
    fn same_padding_keeps_size_delta_spreads() {
        // A centered delta through an all-ones 3x3 kernel lights up every
        // output whose window covers the center.
        let mut vals = vec![0.0; 9];
        vals[4] = 1.0;
        let x = image(3, 3, vals);
        let w = Tensor::param(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = x.conv2d(&w, &zero_bias(1), 1, 1, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert_eq!(y.to_vec(), vec![1.0; 9]);
    }

    #[test]
    fn stride_two_subsamples() {
        let x = image(4, 4, (1..=16).map(f64::from).collect());
        let w = Tensor::param(&[1, 1, 1, 1], vec![1.0]).unwrap();
        let y = x.conv2d(&w, &zero_bias(1), 2, 1, Padding::Valid).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert_eq!(y.to_vec(), vec![1.0, 3.0, 9.0, 11.0]);
    }

    #[test]
    fn dilation_two_reaches_every_other_pixel() {
        // Delta at (2,2) of a 5x5, all-ones 3x3 kernel at dilation 2 and
        // same padding: taps land on the even grid only.
        let mut vals = vec![0.0; 25];
        vals[12] = 1.0;
        let x = image(5, 5, vals);
        let w = Tensor::param(&[1, 1, 3, 3], vec![1.0; 9]).unwrap();
        let y = x.conv2d(&w, &zero_bias(1), 1, 2, Padding::Same).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 5]);
        let got = y.to_vec();
        for oy in 0..5 {
            for ox in 0..5 {
                let expect = if oy % 2 == 0 && ox % 2 == 0 { 1.0 } else { 0.0 };
                assert_eq!(got[oy * 5 + ox], expect, "at ({oy}, {ox})");
            }
        }
    }

    #[test]
    fn bias_and_channel_mixing() {
        // Two output channels scale a one-channel input by 2 and 3 and add
        // distinct biases.
        let x = image(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let w = Tensor::param(&[2, 1, 1, 1], vec![2.0, 3.0]).unwrap();
        let b = Tensor::param(&[2], vec![10.0, 20.0]).unwrap();
        let y = x.conv2d(&w, &b, 1, 1, Padding::Same).unwrap();
        assert_eq!(
            y.to_vec(),
            vec![12.0, 14.0, 16.0, 18.0, 23.0, 26.0, 29.0, 32.0]
        );
    }

    #[test]
    fn two_input_channels_sum() {
        let x = Tensor::<f64>::param(&[1, 2, 1, 2], vec![1.0, 2.0, 10.0, 20.0]).unwrap();
        let w = Tensor::param(&[1, 2, 1, 1], vec![1.0, 1.0]).unwrap();
        let y = x.conv2d(&w, &zero_bias(1), 1, 1, Padding::Same).unwrap();
        assert_eq!(y.to_vec(), vec![11.0, 22.0]);
    }

    #[test]
    fn gradients_of_one_by_one() {
        let x = image(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let w = Tensor::param(&[1, 1, 1, 1], vec![5.0]).unwrap();
        let b = Tensor::param(&[1], vec![0.0]).unwrap();
        let y = x.conv2d(&w, &b, 1, 1, Padding::Same).unwrap();
        y.sum().backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![10.0]); // sum of inputs
        assert_eq!(b.grad().unwrap(), vec![4.0]); // one per output pixel
        assert_eq!(x.grad().unwrap(), vec![5.0; 4]); // weight everywhere
    }

    #[test]
    fn dw_matches_cross_correlation() {
        // y = conv(x, w) valid 2x2 on 3x3; loss = sum(y).
        // dw[ky][kx] = sum over the 2x2 output window of x[oy+ky][ox+kx].
        let x = image(3, 3, (1..=9).map(f64::from).collect());
        let w = Tensor::param(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let y = x.conv2d(&w, &zero_bias(1), 1, 1, Padding::Valid).unwrap();
        y.sum().backward().unwrap();
        assert_eq!(w.grad().unwrap(), vec![12.0, 16.0, 24.0, 28.0]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let x = image(4, 4, vec![0.0; 16]);
        let w_ok = Tensor::<f64>::param(&[1, 1, 3, 3], vec![0.0; 9]).unwrap();
        let w_even = Tensor::<f64>::param(&[1, 1, 2, 2], vec![0.0; 4]).unwrap();
        let w_chan = Tensor::<f64>::param(&[1, 2, 3, 3], vec![0.0; 18]).unwrap();
        let w_big = Tensor::<f64>::param(&[1, 1, 5, 5], vec![0.0; 25]).unwrap();
        let b = zero_bias(1);
        assert!(x.conv2d(&w_ok, &b, 0, 1, Padding::Same).is_err());
        assert!(x.conv2d(&w_ok, &b, 1, 0, Padding::Same).is_err());
        assert!(x.conv2d(&w_even, &b, 1, 1, Padding::Same).is_err());
        assert!(x.conv2d(&w_chan, &b, 1, 1, Padding::Same).is_err());
        let x5 = image(5, 5, vec![0.0; 25]);
        assert!(x5.conv2d(&w_big, &b, 1, 1, Padding::Valid).is_ok());
        // Dilation 2 makes the 5x5 kernel effectively 9x9: too large valid.
        assert!(x5.conv2d(&w_big, &b, 1, 2, Padding::Valid).is_err());
        let b_bad = zero_bias(2);
        assert!(x.conv2d(&w_ok, &b_bad, 1, 1, Padding::Same).is_err());
    }
}
