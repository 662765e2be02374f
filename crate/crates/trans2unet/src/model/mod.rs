//! The full two-branch segmentation model.
//!
//! A Unet branch and a transformer-augmented branch each map the input image
//! to a feature stack at input resolution; the stacks are concatenated,
//! passed through one fusion conv block, and a 1x1 head emits a single
//! foreground logit per pixel. Callers apply sigmoid at loss/metric time.
//!
//! The Unet branch is optional and the atrous module has three modes
//! (absent, plain waterfall, dense waterfall), which together express all
//! ablation variants from one config type.

mod checkpoint;
mod transunet;
mod unet;

pub use checkpoint::{load_checkpoint, save_checkpoint, CheckpointData};
pub use transunet::TransUnetBranch;
pub use unet::UnetBranch;

use std::fmt;

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvBlock, Registry, WaspConfig};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::ops::{concat, Mode, Padding};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WaspMode {
    None,
    Wasp,
    WaspKc,
}

impl WaspMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(WaspMode::None),
            "wasp" => Ok(WaspMode::Wasp),
            "waspkc" => Ok(WaspMode::WaspKc),
            other => Err(Error::Config(format!(
                "wasp.mode must be none, wasp, or waspkc, got {other:?}"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            WaspMode::None => "none",
            WaspMode::Wasp => "wasp",
            WaspMode::WaspKc => "waspkc",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct VitConfig {
    pub patch: usize,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub mlp_ratio: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub input_size: usize,
    pub in_channels: usize,
    pub use_unet: bool,
    pub unet_widths: [usize; 4],
    pub unet_out_channels: usize,
    pub cnn_widths: [usize; 3],
    pub wasp_mode: WaspMode,
    pub wasp_branch_channels: usize,
    pub wasp_rates: [usize; 4],
    pub vit: VitConfig,
    pub decoder_widths: [usize; 3],
    pub transunet_out_channels: usize,
    pub fusion_channels: usize,
    pub dropout_p: f64,
}

impl Default for ModelConfig {
    /// Desk-scale defaults: small enough to train on a CPU core in minutes,
    /// wide enough that every architectural element is exercised.
    fn default() -> Self {
        ModelConfig {
            input_size: 32,
            in_channels: 1,
            use_unet: true,
            unet_widths: [8, 16, 32, 64],
            unet_out_channels: 16,
            cnn_widths: [8, 16, 32],
            wasp_mode: WaspMode::WaspKc,
            wasp_branch_channels: 32,
            wasp_rates: [1, 2, 4, 8],
            vit: VitConfig {
                patch: 1,
                dim: 32,
                layers: 2,
                heads: 4,
                mlp_ratio: 2.0,
            },
            decoder_widths: [32, 16, 16],
            transunet_out_channels: 16,
            fusion_channels: 16,
            dropout_p: 0.2,
        }
    }
}

impl ModelConfig {
    /// Smallest config that still exercises every code path; used by the
    /// finite-difference gradient checks, so forward cost matters more than
    /// capacity. Uneven widths catch transposed channel arithmetic.
    pub fn micro() -> Self {
        ModelConfig {
            input_size: 16,
            in_channels: 1,
            use_unet: true,
            unet_widths: [2, 3, 4, 5],
            unet_out_channels: 4,
            cnn_widths: [2, 3, 4],
            wasp_mode: WaspMode::WaspKc,
            wasp_branch_channels: 4,
            wasp_rates: [1, 2, 3, 4],
            vit: VitConfig {
                patch: 1,
                dim: 4,
                layers: 1,
                heads: 2,
                mlp_ratio: 2.0,
            },
            decoder_widths: [4, 3, 3],
            transunet_out_channels: 4,
            fusion_channels: 4,
            dropout_p: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::Config(msg));
        if self.input_size == 0 || self.input_size % 16 != 0 {
            return err(format!(
                "input_size must be a positive multiple of 16, got {}",
                self.input_size
            ));
        }
        if self.in_channels == 0 {
            return err("in_channels must be positive".into());
        }
        if self.use_unet {
            if self.unet_widths.contains(&0) {
                return err(format!("unet_widths must be positive, got {:?}", self.unet_widths));
            }
            if self.unet_out_channels == 0 {
                return err("unet_out_channels must be positive".into());
            }
        }
        if self.cnn_widths.contains(&0) {
            return err(format!("cnn_widths must be positive, got {:?}", self.cnn_widths));
        }
        if let Some(wc) = self.wasp_config() {
            wc.validate()?;
        }
        if self.vit.dim == 0 || self.vit.heads == 0 {
            return err("vit.dim and vit.heads must be positive".into());
        }
        if self.vit.dim % self.vit.heads != 0 {
            return err(format!(
                "vit.dim {} not divisible by vit.heads {}",
                self.vit.dim, self.vit.heads
            ));
        }
        if self.vit.patch == 0 || (self.input_size / 8) % self.vit.patch != 0 {
            return err(format!(
                "feature grid {} not divisible by vit.patch {}",
                self.input_size / 8,
                self.vit.patch
            ));
        }
        if self.vit.mlp_ratio <= 0.0 {
            return err(format!("vit.mlp_ratio must be positive, got {}", self.vit.mlp_ratio));
        }
        if self.decoder_widths.contains(&0) {
            return err(format!(
                "decoder_widths must be positive, got {:?}",
                self.decoder_widths
            ));
        }
        if self.transunet_out_channels == 0 || self.fusion_channels == 0 {
            return err("transunet_out_channels and fusion_channels must be positive".into());
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return err(format!("dropout_p must lie in [0, 1), got {}", self.dropout_p));
        }
        Ok(())
    }

    /// The atrous-module config implied by the mode flags, if any. The
    /// module always consumes the deepest CNN features.
    pub fn wasp_config(&self) -> Option<WaspConfig> {
        match self.wasp_mode {
            WaspMode::None => None,
            mode => Some(WaspConfig {
                in_channels: self.cnn_widths[2],
                branch_channels: self.wasp_branch_channels,
                dilation_rates: self.wasp_rates,
                dense_skip: mode == WaspMode::WaspKc,
            }),
        }
    }
}

/// Learnable-scalar counts per architectural region. `fusion` includes the
/// 1x1 prediction head.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamBreakdown {
    pub unet: usize,
    pub cnn_encoder: usize,
    pub wasp: usize,
    pub vit: usize,
    pub decoder: usize,
    pub fusion: usize,
}

impl ParamBreakdown {
    pub fn total(&self) -> usize {
        self.unet + self.cnn_encoder + self.wasp + self.vit + self.decoder + self.fusion
    }
}

impl fmt::Display for ParamBreakdown {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "unet branch    {:>10}", self.unet)?;
        writeln!(f, "cnn encoder    {:>10}", self.cnn_encoder)?;
        writeln!(f, "wasp module    {:>10}", self.wasp)?;
        writeln!(f, "vit            {:>10}", self.vit)?;
        writeln!(f, "decoder        {:>10}", self.decoder)?;
        writeln!(f, "fusion + head  {:>10}", self.fusion)?;
        write!(f, "total          {:>10}", self.total())
    }
}

pub struct Trans2UnetModel<T: Scalar> {
    cfg: ModelConfig,
    unet: Option<UnetBranch<T>>,
    transunet: TransUnetBranch<T>,
    fusion: ConvBlock<T>,
    head: Conv2d<T>,
}

impl<T: Scalar> Trans2UnetModel<T> {
    pub fn new(cfg: ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        cfg.validate()?;
        let unet = if cfg.use_unet {
            Some(UnetBranch::new(
                cfg.in_channels,
                &cfg.unet_widths,
                cfg.unet_out_channels,
                rng,
            ))
        } else {
            None
        };
        let transunet = TransUnetBranch::new(&cfg, rng)?;
        let fused_in = if cfg.use_unet {
            cfg.unet_out_channels + cfg.transunet_out_channels
        } else {
            cfg.transunet_out_channels
        };
        let fusion = ConvBlock::new(fused_in, cfg.fusion_channels, 3, 1, true, rng);
        let head = Conv2d::new(cfg.fusion_channels, 1, 1, 1, 1, Padding::Same, rng);
        // Start the head at a background-prior logit (~15% foreground) so
        // initial predictions are a calibrated constant instead of 0.5;
        // training then never passes through a predict-the-majority-class
        // phase that inflates early validation loss.
        head.bias.set_data(vec![T::from_f64(-1.7).unwrap()]);
        Ok(Trans2UnetModel {
            cfg,
            unet,
            transunet,
            fusion,
            head,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn skip_wiring(&self) -> String {
        self.transunet.skip_wiring()
    }

    /// `[N, in_channels, S, S] -> [N, 1, S, S]` logits, S = input_size.
    /// `rng` drives dropout and is consumed only in train mode.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut SeededRng) -> Result<Tensor<T>> {
        let s = self.cfg.input_size;
        let want = vec![x.shape().first().copied().unwrap_or(0), self.cfg.in_channels, s, s];
        if x.shape() != want.as_slice() || x.shape()[0] == 0 {
            return Err(Error::ShapeMismatch {
                op: "model_forward",
                lhs: x.shape().to_vec(),
                rhs: want,
            });
        }
        let t = self.transunet.forward(x, mode, rng)?;
        let features = match &self.unet {
            Some(u) => concat(&[&u.forward(x, mode)?, &t], 1)?,
            None => t,
        };
        self.head.forward(&self.fusion.forward(&features, mode)?)
    }

    pub fn registry(&self) -> Registry<T> {
        let mut reg = Registry::new();
        if let Some(u) = &self.unet {
            u.register("unet", &mut reg);
        }
        self.transunet.register("transunet", &mut reg);
        self.fusion.register("fusion", &mut reg);
        self.head.register("head", &mut reg);
        reg
    }

    pub fn param_breakdown(&self) -> ParamBreakdown {
        ParamBreakdown {
            unet: self.unet.as_ref().map_or(0, UnetBranch::param_count),
            cnn_encoder: self.transunet.encoder_param_count(),
            wasp: self.transunet.wasp_param_count(),
            vit: self.transunet.vit_param_count(),
            decoder: self.transunet.decoder_param_count(),
            fusion: self.fusion.param_count() + self.head.param_count(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.param_breakdown().total()
    }
}
