//! Waterfall atrous spatial context module, in its plain form and the
//! densely connected variant.
//!
//! Four units run in sequence. Unit i applies a dilated 3x3 conv block at
//! rate r_i to its input, then two 1x1 conv blocks; the waterfall feeds the
//! dilated output of unit i onward as the input of unit i+1. A parallel
//! global-average-pooling branch (plain 1x1 conv, no nonlinearity) is
//! broadcast back over the grid. The module output is the sum of the four
//! unit outputs and the pooled branch.
//!
//! With `dense_skip` each 1x1 conv sees the concatenation of every earlier
//! block output in its unit plus the unit input, most recent first, so the
//! first `branch_channels` input channels line up with the plain variant's
//! wiring and the dense module strictly generalizes it.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::ops::{concat, Mode, Padding};
use crate::tensor::Tensor;

use super::{Conv2d, ConvBlock, Registry};

#[derive(Clone, Debug, PartialEq)]
pub struct WaspConfig {
    pub in_channels: usize,
    pub branch_channels: usize,
    pub dilation_rates: [usize; 4],
    pub dense_skip: bool,
}

impl WaspConfig {
    pub fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.branch_channels == 0 {
            return Err(Error::Config(format!(
                "wasp channels must be positive, got in {} branch {}",
                self.in_channels, self.branch_channels
            )));
        }
        let r = &self.dilation_rates;
        if r[0] == 0 || !r.windows(2).all(|p| p[0] < p[1]) {
            return Err(Error::Config(format!(
                "wasp dilation rates must be positive and strictly increasing, got {r:?}"
            )));
        }
        Ok(())
    }
}

struct Unit<T: Scalar> {
    atrous: ConvBlock<T>,
    pw1: ConvBlock<T>,
    pw2: ConvBlock<T>,
}

pub struct Wasp<T: Scalar> {
    cfg: WaspConfig,
    units: Vec<Unit<T>>,
    gap: Conv2d<T>,
}

impl<T: Scalar> Wasp<T> {
    pub fn new(cfg: WaspConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let (c, b) = (cfg.in_channels, cfg.branch_channels);
        let mut units = Vec::with_capacity(4);
        for (i, &rate) in cfg.dilation_rates.iter().enumerate() {
            // Unit 1 consumes the module input; later units consume the
            // previous unit's dilated feature.
            let unit_in = if i == 0 { c } else { b };
            let (pw1_in, pw2_in) = if cfg.dense_skip {
                (b + unit_in, 2 * b + unit_in)
            } else {
                (b, b)
            };
            units.push(Unit {
                atrous: ConvBlock::new(unit_in, b, 3, rate, true, rng),
                pw1: ConvBlock::new(pw1_in, b, 1, 1, true, rng),
                pw2: ConvBlock::new(pw2_in, b, 1, 1, true, rng),
            });
        }
        let gap = Conv2d::new(c, b, 1, 1, 1, Padding::Same, rng);
        Ok(Wasp { cfg, units, gap })
    }

    pub fn config(&self) -> &WaspConfig {
        &self.cfg
    }

    /// `[N, C, Hf, Wf] -> [N, branch_channels, Hf, Wf]`.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (h, w) = (x.shape()[2], x.shape()[3]);
        let mut unit_input = x.clone();
        let mut total: Option<Tensor<T>> = None;
        for unit in &self.units {
            let d = unit.atrous.forward(&unit_input, mode)?;
            let e = if self.cfg.dense_skip {
                unit.pw1.forward(&concat(&[&d, &unit_input], 1)?, mode)?
            } else {
                unit.pw1.forward(&d, mode)?
            };
            let u = if self.cfg.dense_skip {
                unit.pw2.forward(&concat(&[&e, &d, &unit_input], 1)?, mode)?
            } else {
                unit.pw2.forward(&e, mode)?
            };
            total = Some(match total {
                Some(t) => t.add(&u)?,
                None => u,
            });
            unit_input = d;
        }
        let pooled = self.gap.forward(&x.global_avg_pool()?)?;
        total.unwrap().add(&pooled.broadcast_spatial(h, w)?)
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        for (i, unit) in self.units.iter().enumerate() {
            let up = format!("{prefix}.unit{}", i + 1);
            unit.atrous.register(&format!("{up}.atrous"), reg);
            unit.pw1.register(&format!("{up}.pw1"), reg);
            unit.pw2.register(&format!("{up}.pw2"), reg);
        }
        self.gap.register(&format!("{prefix}.gap"), reg);
    }

    pub fn param_count(&self) -> usize {
        let units: usize = self
            .units
            .iter()
            .map(|u| u.atrous.param_count() + u.pw1.param_count() + u.pw2.param_count())
            .sum();
        units + self.gap.param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;

    fn cfg(dense: bool) -> WaspConfig {
        WaspConfig {
            in_channels: 3,
            branch_channels: 4,
            dilation_rates: [1, 2, 4, 8],
            dense_skip: dense,
        }
    }

    fn rng() -> SeededRng {
        SeededRng::new(7, Stream::Init)
    }

    #[test]
    fn config_validation() {
        let mut c = cfg(false);
        c.dilation_rates = [1, 2, 2, 8];
        assert!(c.validate().is_err());
        c.dilation_rates = [0, 1, 2, 3];
        assert!(c.validate().is_err());
        c.dilation_rates = [1, 2, 4, 8];
        c.branch_channels = 0;
        assert!(c.validate().is_err());
        assert!(cfg(true).validate().is_ok());
    }

    #[test]
    fn output_shape_independent_of_rates() {
        for dense in [false, true] {
            let mut c = cfg(dense);
            c.dilation_rates = [2, 3, 5, 7];
            let wasp = Wasp::<f64>::new(c, &mut rng()).unwrap();
            let x = Tensor::param(&[2, 3, 8, 8], vec![0.1; 2 * 3 * 64]).unwrap();
            let y = wasp.forward(&x, Mode::Train).unwrap();
            assert_eq!(y.shape(), &[2, 4, 8, 8]);
        }
    }

    #[test]
    fn zero_weights_give_zero_output() {
        let wasp = Wasp::<f64>::new(cfg(true), &mut rng()).unwrap();
        for unit in &wasp.units {
            for blk in [&unit.atrous, &unit.pw1, &unit.pw2] {
                blk.conv.weight.update_data(|w| w.fill(0.0));
            }
        }
        wasp.gap.weight.update_data(|w| w.fill(0.0));
        let x = Tensor::param(&[1, 3, 4, 4], vec![0.7; 48]).unwrap();
        let y = wasp.forward(&x, Mode::Train).unwrap();
        assert_eq!(y.to_vec(), vec![0.0; 64]);
    }

    #[test]
    fn param_counts_and_dense_delta() {
        // Closed forms. Block(cin, cout, k) = cout*cin*k^2 + cout + 2*cout (BN).
        let block = |cin: usize, cout: usize, k: usize| cout * cin * k * k + 3 * cout;
        let (c, b) = (3usize, 4usize);
        let plain_units = block(c, b, 3) + 3 * block(b, b, 3) + 8 * block(b, b, 1);
        let gap = b * c + b;
        let plain_total = plain_units + gap;
        let dense_units = block(c, b, 3)
            + 3 * block(b, b, 3)
            + block(b + c, b, 1)
            + block(2 * b + c, b, 1)
            + 3 * (block(2 * b, b, 1) + block(3 * b, b, 1));
        let dense_total = dense_units + gap;
        let plain = Wasp::<f64>::new(cfg(false), &mut rng()).unwrap();
        let dense = Wasp::<f64>::new(cfg(true), &mut rng()).unwrap();
        assert_eq!(plain.param_count(), plain_total);
        assert_eq!(dense.param_count(), dense_total);
        // The dense wiring widens only 1x1 convs: delta = 10 B^2 + 2 B C.
        assert_eq!(
            dense.param_count() - plain.param_count(),
            10 * b * b + 2 * b * c
        );
        let mut reg = Registry::new();
        dense.register("wasp", &mut reg);
        assert_eq!(reg.param_count(), dense_total);
    }

    #[test]
    fn dense_with_zeroed_extra_channels_matches_plain() {
        let plain = Wasp::<f64>::new(cfg(false), &mut rng()).unwrap();
        let dense = Wasp::<f64>::new(cfg(true), &mut rng()).unwrap();
        let b = 4usize;
        // Copy the plain weights into the dense module: 1x1 convs keep the
        // plain kernel on their first B input channels and zero on the
        // concatenated extras; everything else copies verbatim.
        for (pu, du) in plain.units.iter().zip(dense.units.iter()) {
            du.atrous
                .conv
                .weight
                .set_data(pu.atrous.conv.weight.to_vec());
            du.atrous.conv.bias.set_data(pu.atrous.conv.bias.to_vec());
            for (pb, db) in [(&pu.pw1, &du.pw1), (&pu.pw2, &du.pw2)] {
                let src = pb.conv.weight.to_vec(); // [B, B, 1, 1]
                let cin_dense = db.conv.weight.shape()[1];
                let mut dst = vec![0.0; b * cin_dense];
                for co in 0..b {
                    dst[co * cin_dense..co * cin_dense + b]
                        .copy_from_slice(&src[co * b..(co + 1) * b]);
                }
                db.conv.weight.set_data(dst);
                db.conv.bias.set_data(pb.conv.bias.to_vec());
            }
        }
        dense.gap.weight.set_data(plain.gap.weight.to_vec());
        dense.gap.bias.set_data(plain.gap.bias.to_vec());
        let x = Tensor::param(
            &[1, 3, 4, 4],
            (0..48).map(|i| (i as f64) * 0.05 - 1.0).collect(),
        )
        .unwrap();
        let yp = plain.forward(&x, Mode::Eval).unwrap();
        let yd = dense.forward(&x, Mode::Eval).unwrap();
        assert_eq!(yp.to_vec(), yd.to_vec());
    }
}
