//! The Unet branch: classic encoder/decoder with concat skips, minus the
//! final 1-channel conv so the branch contributes a feature map to fusion
//! rather than a prediction.

use crate::error::Result;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::ops::{concat, Mode};
use crate::tensor::Tensor;

use crate::nn::{ConvBlock, Registry};

/// Two 3x3 conv blocks back to back, the Unet workhorse.
pub(crate) struct DoubleConv<T: Scalar> {
    c1: ConvBlock<T>,
    c2: ConvBlock<T>,
}

impl<T: Scalar> DoubleConv<T> {
    pub(crate) fn new(cin: usize, cout: usize, rng: &mut SeededRng) -> Self {
        DoubleConv {
            c1: ConvBlock::new(cin, cout, 3, 1, true, rng),
            c2: ConvBlock::new(cout, cout, 3, 1, true, rng),
        }
    }

    pub(crate) fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        self.c2.forward(&self.c1.forward(x, mode)?, mode)
    }

    pub(crate) fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        self.c1.register(&format!("{prefix}.c1"), reg);
        self.c2.register(&format!("{prefix}.c2"), reg);
    }

    pub(crate) fn param_count(&self) -> usize {
        self.c1.param_count() + self.c2.param_count()
    }
}

pub struct UnetBranch<T: Scalar> {
    downs: [DoubleConv<T>; 3],
    bottleneck: DoubleConv<T>,
    ups: [DoubleConv<T>; 3],
}

impl<T: Scalar> UnetBranch<T> {
    /// `widths` are the three encoder widths plus the bottleneck width; the
    /// decoder mirrors the encoder and its last stage emits `out_channels`.
    pub fn new(
        in_channels: usize,
        widths: &[usize; 4],
        out_channels: usize,
        rng: &mut SeededRng,
    ) -> Self {
        let [w1, w2, w3, w4] = *widths;
        UnetBranch {
            downs: [
                DoubleConv::new(in_channels, w1, rng),
                DoubleConv::new(w1, w2, rng),
                DoubleConv::new(w2, w3, rng),
            ],
            bottleneck: DoubleConv::new(w3, w4, rng),
            // Each up stage consumes the upsampled features concatenated
            // with the same-resolution encoder skip.
            ups: [
                DoubleConv::new(w4 + w3, w3, rng),
                DoubleConv::new(w3 + w2, w2, rng),
                DoubleConv::new(w2 + w1, out_channels, rng),
            ],
        }
    }

    /// `[N, C, H, W] -> [N, out_channels, H, W]`; H and W divisible by 8.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let d1 = self.downs[0].forward(x, mode)?;
        let d2 = self.downs[1].forward(&d1.maxpool2d()?, mode)?;
        let d3 = self.downs[2].forward(&d2.maxpool2d()?, mode)?;
        let b = self.bottleneck.forward(&d3.maxpool2d()?, mode)?;
        let mut y = b;
        for (up, skip) in self.ups.iter().zip([&d3, &d2, &d1]) {
            y = up.forward(&concat(&[&y.upsample_bilinear(2)?, skip], 1)?, mode)?;
        }
        Ok(y)
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        for (i, d) in self.downs.iter().enumerate() {
            d.register(&format!("{prefix}.down{}", i + 1), reg);
        }
        self.bottleneck.register(&format!("{prefix}.bottleneck"), reg);
        for (i, u) in self.ups.iter().enumerate() {
            u.register(&format!("{prefix}.up{}", i + 1), reg);
        }
    }

    pub fn param_count(&self) -> usize {
        self.downs.iter().map(DoubleConv::param_count).sum::<usize>()
            + self.bottleneck.param_count()
            + self.ups.iter().map(DoubleConv::param_count).sum::<usize>()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    #[test]
    fn output_keeps_spatial_size_and_swaps_channels() {
        let mut rng = SeededRng::new(3, Stream::Init);
        let unet = UnetBranch::<f64>::new(1, &[8, 16, 32, 64], 16, &mut rng);
        let x = Tensor::from_vec(&[1, 1, 32, 32], vec![0.25; 1024]).unwrap();
        let y = unet.forward(&x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 16, 32, 32]);
    }

    #[test]
    fn param_count_matches_closed_form() {
        // DoubleConv(cin, w) = block(cin, w) + block(w, w) where
        // block(a, b) = 9ab + b (conv) + 2b (norm).
        let block = |a: usize, b: usize| 9 * a * b + 3 * b;
        let dc = |cin: usize, w: usize| block(cin, w) + block(w, w);
        let (w1, w2, w3, w4, out) = (2, 3, 4, 5, 4);
        let expected = dc(1, w1)
            + dc(w1, w2)
            + dc(w2, w3)
            + dc(w3, w4)
            + dc(w4 + w3, w3)
            + dc(w3 + w2, w2)
            + block(w2 + w1, out)
            + block(out, out);
        let mut rng = SeededRng::new(3, Stream::Init);
        let unet = UnetBranch::<f64>::new(1, &[w1, w2, w3, w4], out, &mut rng);
        assert_eq!(unet.param_count(), expected);
        let mut reg = Registry::new();
        unet.register("unet", &mut reg);
        assert_eq!(reg.param_count(), expected);
    }

    #[test]
    fn batch_dim_is_preserved() {
        let mut rng = SeededRng::new(5, Stream::Init);
        let unet = UnetBranch::<f64>::new(2, &[2, 3, 4, 5], 3, &mut rng);
        let x = Tensor::from_vec(&[2, 2, 16, 16], vec![0.5; 1024]).unwrap();
        let y = unet.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.shape(), &[2, 3, 16, 16]);
    }
}
