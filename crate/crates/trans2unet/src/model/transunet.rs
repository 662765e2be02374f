//! The transformer-augmented branch: CNN encoder, optional waterfall atrous
//! module, patch embedding, transformer stack, and a cascaded upsampling
//! decoder wired back to the CNN encoder skips.

use crate::error::Result;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::ops::{concat, Mode};
use crate::tensor::Tensor;

use crate::nn::{CnnEncoder, ConvBlock, LayerNorm, PatchEmbed, Registry, TransformerBlock, Wasp};

use super::ModelConfig;

pub struct TransUnetBranch<T: Scalar> {
    encoder: CnnEncoder<T>,
    wasp: Option<Wasp<T>>,
    embed: PatchEmbed<T>,
    blocks: Vec<TransformerBlock<T>>,
    ln: LayerNorm<T>,
    dec: [ConvBlock<T>; 3],
    final_block: ConvBlock<T>,
    // skip_plan[k]: index into the encoder skip list concatenated before
    // decoder block k, chosen purely by resolution match (None otherwise).
    skip_plan: [Option<usize>; 3],
    patch: usize,
    dim: usize,
    dropout_p: f64,
}

impl<T: Scalar> TransUnetBranch<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut SeededRng) -> Result<Self> {
        let encoder = CnnEncoder::new(cfg.in_channels, &cfg.cnn_widths, rng);
        let wasp = match cfg.wasp_config() {
            Some(wc) => Some(Wasp::new(wc, rng)?),
            None => None,
        };
        let vit_in = if wasp.is_some() {
            cfg.wasp_branch_channels
        } else {
            cfg.cnn_widths[2]
        };
        let f8 = cfg.input_size / 8;
        let embed = PatchEmbed::new(vit_in, cfg.vit.dim, cfg.vit.patch, (f8, f8), rng)?;
        let mut blocks = Vec::with_capacity(cfg.vit.layers);
        for _ in 0..cfg.vit.layers {
            blocks.push(TransformerBlock::new(
                cfg.vit.dim,
                cfg.vit.heads,
                cfg.vit.mlp_ratio,
                cfg.dropout_p,
                rng,
            )?);
        }
        // Decoder wiring: the grid leaves the transformer at input/(8*patch)
        // and doubles three times. A step whose output resolution lands on
        // input/4 takes the stage-2 skip, input/2 the stage-1 skip; the
        // full-resolution step has no skip (the encoder never saw one).
        // With patch=1 that is: step 1 + stage 2, step 2 + stage 1, step 3
        // bare. Larger patches shift the skips to later steps.
        let mut skip_plan = [None; 3];
        let mut res = f8 / cfg.vit.patch;
        let mut chans = cfg.vit.dim;
        let mut dec = Vec::with_capacity(3);
        for k in 0..3 {
            res *= 2;
            let extra = if res == cfg.input_size / 4 {
                skip_plan[k] = Some(1);
                cfg.cnn_widths[1]
            } else if res == cfg.input_size / 2 {
                skip_plan[k] = Some(0);
                cfg.cnn_widths[0]
            } else {
                0
            };
            dec.push(ConvBlock::new(
                chans + extra,
                cfg.decoder_widths[k],
                3,
                1,
                true,
                rng,
            ));
            chans = cfg.decoder_widths[k];
        }
        let dec: [ConvBlock<T>; 3] = dec.try_into().ok().expect("three decoder blocks");
        let ln = LayerNorm::new(cfg.vit.dim);
        let final_block = ConvBlock::new(
            cfg.decoder_widths[2],
            cfg.transunet_out_channels,
            3,
            1,
            true,
            rng,
        );
        Ok(TransUnetBranch {
            encoder,
            wasp,
            embed,
            blocks,
            ln,
            dec,
            final_block,
            skip_plan,
            patch: cfg.vit.patch,
            dim: cfg.vit.dim,
            dropout_p: cfg.dropout_p,
        })
    }

    /// Human-readable decoder wiring, echoed into run configs so every
    /// artifact records which encoder stage feeds which up-step.
    pub fn skip_wiring(&self) -> String {
        let steps: Vec<String> = self
            .skip_plan
            .iter()
            .enumerate()
            .map(|(k, s)| match s {
                Some(i) => format!("up{} <- encoder stage {}", k + 1, i + 1),
                None => format!("up{} <- no skip", k + 1),
            })
            .collect();
        steps.join("; ")
    }

    /// `[N, C, H, W] -> [N, transunet_out_channels, H, W]`.
    pub fn forward(&self, x: &Tensor<T>, mode: Mode, rng: &mut SeededRng) -> Result<Tensor<T>> {
        let (feat, skips) = self.encoder.forward(x, mode)?;
        let feat = match &self.wasp {
            Some(w) => w.forward(&feat, mode)?,
            None => feat,
        };
        let mut tokens = self.embed.forward(&feat)?;
        for blk in &self.blocks {
            tokens = blk.forward(&tokens, mode, rng)?;
        }
        tokens = self.ln.forward(&tokens)?;
        let (gh, gw) = self.embed.token_grid();
        let n = x.shape()[0];
        let mut y = tokens
            .permute(&[0, 2, 1])?
            .reshape(&[n, self.dim, gh, gw])?;
        for (blk, skip) in self.dec.iter().zip(self.skip_plan) {
            y = y.upsample_bilinear(2)?;
            if let Some(i) = skip {
                y = concat(&[&y, &skips[i]], 1)?;
            }
            y = blk.forward(&y, mode)?;
        }
        if self.patch > 1 {
            y = y.upsample_bilinear(self.patch)?;
        }
        self.final_block.forward(&y, mode)
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        self.encoder.register(&format!("{prefix}.encoder"), reg);
        if let Some(w) = &self.wasp {
            w.register(&format!("{prefix}.wasp"), reg);
        }
        self.embed.register(&format!("{prefix}.embed"), reg);
        for (i, blk) in self.blocks.iter().enumerate() {
            blk.register(&format!("{prefix}.block{}", i + 1), reg);
        }
        self.ln.register(&format!("{prefix}.ln"), reg);
        for (i, d) in self.dec.iter().enumerate() {
            d.register(&format!("{prefix}.dec{}", i + 1), reg);
        }
        self.final_block.register(&format!("{prefix}.final"), reg);
    }

    pub fn encoder_param_count(&self) -> usize {
        self.encoder.param_count()
    }

    pub fn wasp_param_count(&self) -> usize {
        self.wasp.as_ref().map_or(0, Wasp::param_count)
    }

    pub fn vit_param_count(&self) -> usize {
        self.embed.param_count()
            + self.blocks.iter().map(TransformerBlock::param_count).sum::<usize>()
            + self.ln.param_count()
    }

    pub fn decoder_param_count(&self) -> usize {
        self.dec.iter().map(ConvBlock::param_count).sum::<usize>()
            + self.final_block.param_count()
    }

    pub fn param_count(&self) -> usize {
        self.encoder_param_count()
            + self.wasp_param_count()
            + self.vit_param_count()
            + self.decoder_param_count()
    }

    pub fn dropout_p(&self) -> f64 {
        self.dropout_p
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{VitConfig, WaspMode};
    use crate::rng::Stream;

    fn micro_cfg() -> ModelConfig {
        let mut cfg = ModelConfig::micro();
        cfg.input_size = 32;
        cfg
    }

    #[test]
    fn patch1_keeps_input_resolution_and_uses_both_skips() {
        let cfg = micro_cfg();
        let mut rng = SeededRng::new(11, Stream::Init);
        let branch = TransUnetBranch::<f64>::new(&cfg, &mut rng).unwrap();
        assert_eq!(branch.skip_plan, [Some(1), Some(0), None]);
        assert_eq!(
            branch.skip_wiring(),
            "up1 <- encoder stage 2; up2 <- encoder stage 1; up3 <- no skip"
        );
        let x = Tensor::from_vec(&[1, 1, 32, 32], vec![0.3; 1024]).unwrap();
        let mut drop = SeededRng::new(11, Stream::Dropout);
        let y = branch.forward(&x, Mode::Eval, &mut drop).unwrap();
        assert_eq!(y.shape(), &[1, cfg.transunet_out_channels, 32, 32]);
    }

    #[test]
    fn patch2_shifts_skips_and_final_upsample_restores_size() {
        let mut cfg = micro_cfg();
        cfg.vit.patch = 2;
        let mut rng = SeededRng::new(11, Stream::Init);
        let branch = TransUnetBranch::<f64>::new(&cfg, &mut rng).unwrap();
        // Grid starts at 2: 2 -> 4 (no match), 4 -> 8 = input/4, 8 -> 16 = input/2.
        assert_eq!(branch.skip_plan, [None, Some(1), Some(0)]);
        let x = Tensor::from_vec(&[2, 1, 32, 32], vec![0.1; 2048]).unwrap();
        let mut drop = SeededRng::new(11, Stream::Dropout);
        let y = branch.forward(&x, Mode::Eval, &mut drop).unwrap();
        assert_eq!(y.shape(), &[2, cfg.transunet_out_channels, 32, 32]);
    }

    #[test]
    fn zero_layers_still_runs() {
        let mut cfg = micro_cfg();
        cfg.vit.layers = 0;
        let mut rng = SeededRng::new(4, Stream::Init);
        let branch = TransUnetBranch::<f64>::new(&cfg, &mut rng).unwrap();
        assert_eq!(branch.vit_param_count(), {
            // Patch conv + pos table + final layer norm only.
            let d = cfg.vit.dim;
            let tokens = 4 * 4;
            d * cfg.wasp_branch_channels + d + tokens * d + 2 * d
        });
        let x = Tensor::from_vec(&[1, 1, 32, 32], vec![0.9; 1024]).unwrap();
        let mut drop = SeededRng::new(4, Stream::Dropout);
        let y = branch.forward(&x, Mode::Train, &mut drop).unwrap();
        assert_eq!(y.shape(), &[1, cfg.transunet_out_channels, 32, 32]);
    }

    #[test]
    fn wasp_mode_none_feeds_encoder_features_to_vit() {
        let mut cfg = micro_cfg();
        cfg.wasp_mode = WaspMode::None;
        cfg.vit = VitConfig {
            patch: 1,
            dim: 4,
            layers: 1,
            heads: 2,
            mlp_ratio: 2.0,
        };
        let mut rng = SeededRng::new(9, Stream::Init);
        let branch = TransUnetBranch::<f64>::new(&cfg, &mut rng).unwrap();
        assert_eq!(branch.wasp_param_count(), 0);
        let x = Tensor::from_vec(&[1, 1, 32, 32], vec![0.2; 1024]).unwrap();
        let mut drop = SeededRng::new(9, Stream::Dropout);
        let y = branch.forward(&x, Mode::Eval, &mut drop).unwrap();
        assert_eq!(y.shape(), &[1, cfg.transunet_out_channels, 32, 32]);
    }
}
