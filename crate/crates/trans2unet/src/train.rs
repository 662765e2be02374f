//! Training engine: seeded epoch loop with mini-batch Adam updates,
//! per-epoch validation, plateau schedule, best-checkpoint tracking, and
//! an incrementally written CSV metrics log.
//!
//! Everything downstream of the seed is deterministic: shuffling, dropout,
//! and augmentation each draw from their own named stream, so the epoch
//! record log of a rerun is bit-identical.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::data::{augment_flip, SegmentationSample};
use crate::error::{Error, Result};
use crate::loss::{self, LossConfig};
use crate::metrics::{confusion_counts, dsc, iou, ConfusionCounts};
use crate::model::{save_checkpoint, Trans2UnetModel};
use crate::optim::{Adam, AdamConfig, PlateauScheduler};
use crate::rng::{SeededRng, Stream};
use crate::tensor::ops::Mode;
use crate::tensor::Tensor;

pub const METRICS_HEADER: &str = "epoch,train_loss,val_loss,val_dsc,val_iou,lr";

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamConfig,
    pub plateau_patience: u32,
    pub plateau_factor: f64,
    pub min_lr: f64,
    pub loss: LossConfig,
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 4,
            optimizer: AdamConfig::default(),
            plateau_patience: 3,
            plateau_factor: 0.1,
            min_lr: 1e-6,
            loss: LossConfig::default(),
            augment: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("train.epochs must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("train.batch_size must be positive".into()));
        }
        if self.plateau_patience == 0 {
            return Err(Error::Config("train.plateau_patience must be positive".into()));
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return Err(Error::Config(format!(
                "train.plateau_factor must lie in (0, 1), got {}",
                self.plateau_factor
            )));
        }
        if self.min_lr <= 0.0 {
            return Err(Error::Config(format!(
                "train.min_lr must be positive, got {}",
                self.min_lr
            )));
        }
        self.optimizer.validate()?;
        self.loss.validate()
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_dsc: f64,
    pub val_iou: f64,
    /// Rate in effect during this epoch (the scheduler may lower it for
    /// the next one).
    pub lr: f64,
}

impl EpochRecord {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{:.6},{:.6},{:.6},{:.6},{:.6}",
            self.epoch, self.train_loss, self.val_loss, self.val_dsc, self.val_iou, self.lr
        )
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch whose checkpoint is `best.ckpt` (highest val DSC,
    /// earliest on ties).
    pub best_epoch: usize,
    pub best_val_dsc: f64,
}

/// Stacks samples into one `[B, C, H, W]` image batch and the matching
/// `[B, 1, H, W]` mask batch.
pub fn stack_batch(samples: &[&SegmentationSample]) -> Result<(Tensor<f32>, Tensor<f32>)> {
    let first = samples
        .first()
        .ok_or_else(|| Error::Data("cannot stack an empty batch".into()))?;
    let (c, h, w) = (first.channels(), first.height(), first.width());
    let mut images = Vec::with_capacity(samples.len() * c * h * w);
    let mut masks = Vec::with_capacity(samples.len() * h * w);
    for s in samples {
        if (s.channels(), s.height(), s.width()) != (c, h, w) {
            return Err(Error::Data(format!(
                "sample {} is {}x{}x{}, batch expects {c}x{h}x{w}",
                s.id,
                s.channels(),
                s.height(),
                s.width()
            )));
        }
        images.extend_from_slice(&s.image.data());
        masks.extend_from_slice(&s.mask.data());
    }
    Ok((
        Tensor::from_vec(&[samples.len(), c, h, w], images)?,
        Tensor::from_vec(&[samples.len(), 1, h, w], masks)?,
    ))
}

#[derive(Clone, Debug)]
pub struct ImageEval {
    pub id: String,
    pub loss: f64,
    pub dsc: f64,
    pub iou: f64,
    pub counts: ConfusionCounts,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub per_image: Vec<ImageEval>,
    pub mean_loss: f64,
    /// Mean of per-image metrics.
    pub macro_dsc: f64,
    pub macro_iou: f64,
    /// Metrics of the pooled per-image confusion counts.
    pub micro_dsc: f64,
    pub micro_iou: f64,
}

/// Deterministic eval-mode pass over a split: per-image loss and metrics
/// plus macro (image-averaged) and micro (count-pooled) aggregates.
pub fn evaluate(
    model: &Trans2UnetModel<f32>,
    samples: &[&SegmentationSample],
    loss_cfg: &LossConfig,
) -> Result<EvalReport> {
    if samples.is_empty() {
        return Err(Error::Data("cannot evaluate an empty split".into()));
    }
    // Dropout is inert in eval mode; the stream is never drawn from.
    let mut rng = SeededRng::new(0, Stream::Dropout);
    let mut per_image = Vec::with_capacity(samples.len());
    for s in samples {
        let (x, p) = stack_batch(&[s])?;
        let logits = model.forward(&x, Mode::Eval, &mut rng)?;
        let q = logits.sigmoid();
        let l = loss::loss(loss_cfg, &q, &p)?.item() as f64;
        let counts = confusion_counts(&q, &p, 0.5)?;
        per_image.push(ImageEval {
            id: s.id.clone(),
            loss: l,
            dsc: dsc(&counts),
            iou: iou(&counts),
            counts,
        });
    }
    let n = per_image.len() as f64;
    let pooled = per_image
        .iter()
        .fold(ConfusionCounts::default(), |acc, e| acc.merge(&e.counts));
    Ok(EvalReport {
        mean_loss: per_image.iter().map(|e| e.loss).sum::<f64>() / n,
        macro_dsc: per_image.iter().map(|e| e.dsc).sum::<f64>() / n,
        macro_iou: per_image.iter().map(|e| e.iou).sum::<f64>() / n,
        micro_dsc: dsc(&pooled),
        micro_iou: iou(&pooled),
        per_image,
    })
}

/// Runs the full epoch loop. When `out_dir` is given, `metrics.csv` is
/// appended to after every epoch and `best.ckpt` / `final.ckpt` are
/// written there; a non-finite loss aborts with the last best checkpoint
/// left on disk.
pub fn train(
    model: &Trans2UnetModel<f32>,
    train_set: &[&SegmentationSample],
    val_set: &[&SegmentationSample],
    cfg: &TrainConfig,
    seed: u64,
    config_echo: &str,
    out_dir: Option<&Path>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    if val_set.is_empty() {
        return Err(Error::Data("validation split is empty".into()));
    }

    let registry = model.registry();
    let mut adam = Adam::new(registry.params(), cfg.optimizer)?;
    let mut sched = PlateauScheduler::new(
        cfg.optimizer.lr,
        cfg.plateau_patience,
        cfg.plateau_factor,
        cfg.min_lr,
    );
    let mut shuffle_rng = SeededRng::new(seed, Stream::Shuffle);
    let mut dropout_rng = SeededRng::new(seed, Stream::Dropout);
    let mut augment_rng = SeededRng::new(seed, Stream::Augment);

    let mut csv = match out_dir {
        Some(dir) => {
            let mut f = File::create(dir.join("metrics.csv"))?;
            writeln!(f, "{METRICS_HEADER}")?;
            f.flush()?;
            Some(f)
        }
        None => None,
    };

    let mut records: Vec<EpochRecord> = Vec::with_capacity(cfg.epochs);
    let mut best_epoch = 0usize;
    let mut best_dsc = f64::NEG_INFINITY;

    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..train_set.len()).collect();
        shuffle_rng.shuffle(&mut order);
        let mut loss_sum = 0.0f64;
        for chunk in order.chunks(cfg.batch_size) {
            let picked: Vec<&SegmentationSample> =
                chunk.iter().map(|&i| train_set[i]).collect();
            let (x, p) = if cfg.augment {
                let flipped: Vec<SegmentationSample> = picked
                    .iter()
                    .map(|s| augment_flip(s, &mut augment_rng))
                    .collect();
                stack_batch(&flipped.iter().collect::<Vec<_>>())?
            } else {
                stack_batch(&picked)?
            };
            for (_, t) in registry.params() {
                t.zero_grad();
            }
            let logits = model.forward(&x, Mode::Train, &mut dropout_rng)?;
            let q = logits.sigmoid();
            let l = loss::loss(&cfg.loss, &q, &p)?;
            let lval = l.item() as f64;
            if !lval.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite training loss at epoch {epoch}; best checkpoint from \
                     epoch {best_epoch} retained"
                )));
            }
            l.backward()?;
            adam.step()?;
            loss_sum += lval * chunk.len() as f64;
        }

        let val = evaluate(model, val_set, &cfg.loss)?;
        let record = EpochRecord {
            epoch,
            train_loss: loss_sum / train_set.len() as f64,
            val_loss: val.mean_loss,
            val_dsc: val.macro_dsc,
            val_iou: val.macro_iou,
            lr: adam.lr(),
        };
        if let Some(f) = csv.as_mut() {
            writeln!(f, "{}", record.csv_line())?;
            f.flush()?;
        }
        records.push(record);

        if val.macro_dsc > best_dsc {
            best_dsc = val.macro_dsc;
            best_epoch = epoch;
            if let Some(dir) = out_dir {
                save_checkpoint(&dir.join("best.ckpt"), config_echo, &registry)?;
            }
        }
        adam.set_lr(sched.step(val.mean_loss));
    }

    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("final.ckpt"), config_echo, &registry)?;
    }
    Ok(TrainOutcome {
        records,
        best_epoch,
        best_val_dsc: best_dsc,
    })
}
