//! Small residual CNN encoder: three down-stages standing in for a heavy
//! pretrained backbone. Each stage halves the spatial dims (2x2 max pool),
//! widens to its configured channel count, and refines with a residual
//! pair of conv blocks. The first two stage outputs double as the decoder
//! skip connections.

use crate::error::Result;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::ops::Mode;
use crate::tensor::Tensor;

use super::{ConvBlock, Registry};

struct Stage<T: Scalar> {
    entry: ConvBlock<T>,
    res1: ConvBlock<T>,
    res2: ConvBlock<T>,
}

impl<T: Scalar> Stage<T> {
    fn new(cin: usize, cout: usize, rng: &mut SeededRng) -> Self {
        Stage {
            entry: ConvBlock::new(cin, cout, 3, 1, true, rng),
            res1: ConvBlock::new(cout, cout, 3, 1, true, rng),
            res2: ConvBlock::new(cout, cout, 3, 1, true, rng),
        }
    }

    /// pool -> entry conv block -> h + res2(res1(h)).
    fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let h = self.entry.forward(&x.maxpool2d()?, mode)?;
        let refined = self.res2.forward(&self.res1.forward(&h, mode)?, mode)?;
        h.add(&refined)
    }

    fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        self.entry.register(&format!("{prefix}.entry"), reg);
        self.res1.register(&format!("{prefix}.res1"), reg);
        self.res2.register(&format!("{prefix}.res2"), reg);
    }

    fn param_count(&self) -> usize {
        self.entry.param_count() + self.res1.param_count() + self.res2.param_count()
    }
}

pub struct CnnEncoder<T: Scalar> {
    stages: Vec<Stage<T>>,
}

impl<T: Scalar> CnnEncoder<T> {
    pub fn new(in_channels: usize, widths: &[usize; 3], rng: &mut SeededRng) -> Self {
        let mut stages = Vec::with_capacity(3);
        let mut cin = in_channels;
        for &w in widths {
            stages.push(Stage::new(cin, w, rng));
            cin = w;
        }
        CnnEncoder { stages }
    }

    /// Returns `(features at H/8, [skip at H/2, skip at H/4])`.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<(Tensor<T>, [Tensor<T>; 2])> {
        let s1 = self.stages[0].forward(x, mode)?;
        let s2 = self.stages[1].forward(&s1, mode)?;
        let s3 = self.stages[2].forward(&s2, mode)?;
        Ok((s3, [s1, s2]))
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        for (i, stage) in self.stages.iter().enumerate() {
            stage.register(&format!("{prefix}.stage{}", i + 1), reg);
        }
    }

    pub fn param_count(&self) -> usize {
        self.stages.iter().map(Stage::param_count).sum()
    }
}
