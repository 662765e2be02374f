//! Flat `key = value` run configuration.
//!
//! One format everywhere: `#` comments, dotted keys, no nesting. When no
//! config file is given every key takes its default; when a file IS given
//! it must list every key, so a run's config file is always a complete
//! record. `--set key=value` overrides apply last either way. The echo
//! produced by [`RunConfig::echo`] parses back to an identical config,
//! which is what makes checkpointed and logged configs replayable.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::loss::LossKind;
use crate::model::{ModelConfig, WaspMode};
use crate::train::TrainConfig;

/// Every recognized key, in echo order.
pub const KEYS: &[&str] = &[
    "input_size",
    "in_channels",
    "use_unet",
    "unet.widths",
    "unet.out_channels",
    "cnn.widths",
    "wasp.mode",
    "wasp.branch_channels",
    "wasp.rates",
    "vit.patch",
    "vit.dim",
    "vit.layers",
    "vit.heads",
    "vit.mlp_ratio",
    "decoder.widths",
    "transunet.out_channels",
    "fusion.channels",
    "dropout",
    "train.epochs",
    "train.batch_size",
    "train.augment",
    "optimizer.lr",
    "optimizer.beta1",
    "optimizer.beta2",
    "optimizer.eps",
    "scheduler.patience",
    "scheduler.factor",
    "scheduler.min_lr",
    "loss.kind",
    "loss.dice_smooth",
    "loss.bce_epsilon",
    "split.ratios",
];

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub split_ratios: (f64, f64, f64),
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            split_ratios: (0.8, 0.1, 0.1),
        }
    }
}

fn p_usize(key: &str, v: &str) -> Result<usize> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn p_u32(key: &str, v: &str) -> Result<u32> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a non-negative integer, got {v:?}")))
}

fn p_f64(key: &str, v: &str) -> Result<f64> {
    v.parse()
        .map_err(|_| Error::Config(format!("{key}: expected a number, got {v:?}")))
}

fn p_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" => Ok(true),
        "false" => Ok(false),
        _ => Err(Error::Config(format!("{key}: expected true or false, got {v:?}"))),
    }
}

fn p_usize_list<const N: usize>(key: &str, v: &str) -> Result<[usize; N]> {
    let items: Vec<usize> = v
        .split(',')
        .map(|s| p_usize(key, s.trim()))
        .collect::<Result<_>>()?;
    items.try_into().map_err(|items: Vec<usize>| {
        Error::Config(format!(
            "{key}: expected {N} comma-separated integers, got {}",
            items.len()
        ))
    })
}

fn p_ratios(key: &str, v: &str) -> Result<(f64, f64, f64)> {
    let items: Vec<f64> = v
        .split(',')
        .map(|s| p_f64(key, s.trim()))
        .collect::<Result<_>>()?;
    if items.len() != 3 {
        return Err(Error::Config(format!(
            "{key}: expected 3 comma-separated numbers, got {}",
            items.len()
        )));
    }
    Ok((items[0], items[1], items[2]))
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items
        .iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

impl RunConfig {
    pub fn micro() -> Self {
        RunConfig {
            model: ModelConfig::micro(),
            ..RunConfig::default()
        }
    }

    /// Defaults, then the config file (which must be complete), then
    /// overrides; validated as a whole before returning.
    pub fn from_sources(file: Option<&str>, overrides: &[(String, String)]) -> Result<Self> {
        let mut cfg = RunConfig::default();
        if let Some(text) = file {
            let mut seen = BTreeSet::new();
            for (key, value) in parse_kv(text)? {
                cfg.set(&key, &value)?;
                seen.insert(key);
            }
            for key in KEYS {
                if !seen.contains(*key) {
                    return Err(Error::Config(format!("config file is missing key {key}")));
                }
            }
        }
        for (key, value) in overrides {
            cfg.set(key, value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        let (rt, rv, rs) = self.split_ratios;
        if !(rt > 0.0 && rv >= 0.0 && rs >= 0.0) || (rt + rv + rs - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split.ratios must be non-negative and sum to 1, got {},{},{}",
                rt, rv, rs
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let m = &mut self.model;
        let t = &mut self.train;
        match key {
            "input_size" => m.input_size = p_usize(key, value)?,
            "in_channels" => m.in_channels = p_usize(key, value)?,
            "use_unet" => m.use_unet = p_bool(key, value)?,
            "unet.widths" => m.unet_widths = p_usize_list(key, value)?,
            "unet.out_channels" => m.unet_out_channels = p_usize(key, value)?,
            "cnn.widths" => m.cnn_widths = p_usize_list(key, value)?,
            "wasp.mode" => m.wasp_mode = WaspMode::parse(value)?,
            "wasp.branch_channels" => m.wasp_branch_channels = p_usize(key, value)?,
            "wasp.rates" => m.wasp_rates = p_usize_list(key, value)?,
            "vit.patch" => m.vit.patch = p_usize(key, value)?,
            "vit.dim" => m.vit.dim = p_usize(key, value)?,
            "vit.layers" => m.vit.layers = p_usize(key, value)?,
            "vit.heads" => m.vit.heads = p_usize(key, value)?,
            "vit.mlp_ratio" => m.vit.mlp_ratio = p_f64(key, value)?,
            "decoder.widths" => m.decoder_widths = p_usize_list(key, value)?,
            "transunet.out_channels" => m.transunet_out_channels = p_usize(key, value)?,
            "fusion.channels" => m.fusion_channels = p_usize(key, value)?,
            "dropout" => m.dropout_p = p_f64(key, value)?,
            "train.epochs" => t.epochs = p_usize(key, value)?,
            "train.batch_size" => t.batch_size = p_usize(key, value)?,
            "train.augment" => t.augment = p_bool(key, value)?,
            "optimizer.lr" => t.optimizer.lr = p_f64(key, value)?,
            "optimizer.beta1" => t.optimizer.beta1 = p_f64(key, value)?,
            "optimizer.beta2" => t.optimizer.beta2 = p_f64(key, value)?,
            "optimizer.eps" => t.optimizer.eps = p_f64(key, value)?,
            "scheduler.patience" => t.plateau_patience = p_u32(key, value)?,
            "scheduler.factor" => t.plateau_factor = p_f64(key, value)?,
            "scheduler.min_lr" => t.min_lr = p_f64(key, value)?,
            "loss.kind" => t.loss.kind = LossKind::parse(value)?,
            "loss.dice_smooth" => t.loss.dice_smooth = p_f64(key, value)?,
            "loss.bce_epsilon" => t.loss.bce_epsilon = p_f64(key, value)?,
            "split.ratios" => self.split_ratios = p_ratios(key, value)?,
            _ => return Err(Error::Config(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    fn get(&self, key: &str) -> String {
        let m = &self.model;
        let t = &self.train;
        match key {
            "input_size" => m.input_size.to_string(),
            "in_channels" => m.in_channels.to_string(),
            "use_unet" => m.use_unet.to_string(),
            "unet.widths" => join(&m.unet_widths),
            "unet.out_channels" => m.unet_out_channels.to_string(),
            "cnn.widths" => join(&m.cnn_widths),
            "wasp.mode" => m.wasp_mode.as_str().to_string(),
            "wasp.branch_channels" => m.wasp_branch_channels.to_string(),
            "wasp.rates" => join(&m.wasp_rates),
            "vit.patch" => m.vit.patch.to_string(),
            "vit.dim" => m.vit.dim.to_string(),
            "vit.layers" => m.vit.layers.to_string(),
            "vit.heads" => m.vit.heads.to_string(),
            "vit.mlp_ratio" => m.vit.mlp_ratio.to_string(),
            "decoder.widths" => join(&m.decoder_widths),
            "transunet.out_channels" => m.transunet_out_channels.to_string(),
            "fusion.channels" => m.fusion_channels.to_string(),
            "dropout" => m.dropout_p.to_string(),
            "train.epochs" => t.epochs.to_string(),
            "train.batch_size" => t.batch_size.to_string(),
            "train.augment" => t.augment.to_string(),
            "optimizer.lr" => t.optimizer.lr.to_string(),
            "optimizer.beta1" => t.optimizer.beta1.to_string(),
            "optimizer.beta2" => t.optimizer.beta2.to_string(),
            "optimizer.eps" => t.optimizer.eps.to_string(),
            "scheduler.patience" => t.plateau_patience.to_string(),
            "scheduler.factor" => t.plateau_factor.to_string(),
            "scheduler.min_lr" => t.min_lr.to_string(),
            "loss.kind" => t.loss.kind.as_str().to_string(),
            "loss.dice_smooth" => t.loss.dice_smooth.to_string(),
            "loss.bce_epsilon" => t.loss.bce_epsilon.to_string(),
            "split.ratios" => {
                let (a, b, c) = self.split_ratios;
                format!("{a},{b},{c}")
            }
            _ => unreachable!("get called with unknown key {key}"),
        }
    }

    /// Complete, re-parseable dump of the configuration. `skip_wiring`
    /// (from the built model) is recorded as a comment; floats print in
    /// shortest round-trip form, so echo -> parse -> echo is a fixpoint.
    pub fn echo(&self, skip_wiring: &str) -> String {
        let mut out = String::from("# run configuration; every key explicit\n");
        if !skip_wiring.is_empty() {
            let _ = writeln!(out, "# decoder skip wiring: {skip_wiring}");
        }
        for key in KEYS {
            let _ = writeln!(out, "{key} = {}", self.get(key));
        }
        out
    }
}

/// Splits config text into (key, value) pairs: one per line, `#` lines and
/// blanks skipped, duplicates rejected.
pub fn parse_kv(text: &str) -> Result<Vec<(String, String)>> {
    let mut pairs = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected `key = value`, got {raw:?}", i + 1))
        })?;
        let key = key.trim().to_string();
        if key.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", i + 1)));
        }
        if !seen.insert(key.clone()) {
            return Err(Error::Config(format!("line {}: duplicate key {key}", i + 1)));
        }
        pairs.push((key, value.trim().to_string()));
    }
    Ok(pairs)
}

/// Parses one `--set key=value` argument.
pub fn parse_override(s: &str) -> Result<(String, String)> {
    let (key, value) = s
        .split_once('=')
        .ok_or_else(|| Error::Config(format!("--set expects key=value, got {s:?}")))?;
    Ok((key.trim().to_string(), value.trim().to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn no_file_means_defaults() {
        let cfg = RunConfig::from_sources(None, &[]).unwrap();
        assert_eq!(cfg, RunConfig::default());
    }

    #[test]
    fn echo_parses_back_to_an_identical_config() {
        let mut custom = RunConfig::micro();
        custom.model.wasp_mode = WaspMode::Wasp;
        custom.model.vit.mlp_ratio = 1.5;
        custom.train.optimizer.lr = 3e-4;
        custom.train.loss.kind = LossKind::Dice;
        custom.train.augment = true;
        for cfg in [RunConfig::default(), RunConfig::micro(), custom] {
            let echo = cfg.echo("up1 <- encoder stage 2");
            let back = RunConfig::from_sources(Some(&echo), &[]).unwrap();
            assert_eq!(back, cfg);
            assert_eq!(back.echo("up1 <- encoder stage 2"), echo);
        }
    }

    #[test]
    fn missing_key_is_named() {
        let echo = RunConfig::default().echo("");
        let without: String = echo
            .lines()
            .filter(|l| !l.starts_with("vit.layers"))
            .map(|l| format!("{l}\n"))
            .collect();
        let err = RunConfig::from_sources(Some(&without), &[]).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("vit.layers")), "{err}");
    }

    #[test]
    fn unknown_keys_are_rejected_everywhere() {
        let mut echo = RunConfig::default().echo("");
        echo.push_str("mystery.knob = 3\n");
        let err = RunConfig::from_sources(Some(&echo), &[]).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("mystery.knob")));

        let over = vec![("mystery.knob".to_string(), "3".to_string())];
        let err = RunConfig::from_sources(None, &over).unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("mystery.knob")));
    }

    #[test]
    fn overrides_apply_after_the_file() {
        let echo = RunConfig::default().echo("");
        let over = vec![
            ("input_size".to_string(), "48".to_string()),
            ("wasp.mode".to_string(), "none".to_string()),
        ];
        let cfg = RunConfig::from_sources(Some(&echo), &over).unwrap();
        assert_eq!(cfg.model.input_size, 48);
        assert_eq!(cfg.model.wasp_mode, WaspMode::None);
    }

    #[test]
    fn comments_blanks_and_spacing_are_tolerated() {
        let text = "# leading comment\n\n  input_size   =  48  \n";
        let pairs = parse_kv(text).unwrap();
        assert_eq!(pairs, vec![("input_size".to_string(), "48".to_string())]);
        let cfg = RunConfig::from_sources(None, &pairs).unwrap();
        assert_eq!(cfg.model.input_size, 48);
    }

    #[test]
    fn malformed_lines_and_duplicates_are_rejected() {
        assert!(parse_kv("no equals sign").is_err());
        assert!(parse_kv("= 3").is_err());
        let err = parse_kv("a = 1\na = 2").unwrap_err();
        assert!(matches!(err, Error::Config(ref m) if m.contains("duplicate")));
    }

    #[test]
    fn typed_values_are_validated() {
        let mut cfg = RunConfig::default();
        assert!(cfg.set("use_unet", "yes").is_err());
        assert!(cfg.set("unet.widths", "1,2,3").is_err());
        assert!(cfg.set("vit.layers", "two").is_err());
        assert!(cfg.set("wasp.mode", "cascade").is_err());
        assert!(cfg.set("split.ratios", "0.5,0.5").is_err());
        assert!(cfg.set("loss.kind", "mse").is_err());

        // Whole-config validation still runs over override results.
        let over = vec![("dropout".to_string(), "1.5".to_string())];
        assert!(RunConfig::from_sources(None, &over).is_err());
        let over = vec![("split.ratios".to_string(), "0.5,0.4,0.3".to_string())];
        assert!(RunConfig::from_sources(None, &over).is_err());
    }

    #[test]
    fn override_argument_parsing() {
        assert_eq!(
            parse_override("vit.dim=64").unwrap(),
            ("vit.dim".to_string(), "64".to_string())
        );
        assert_eq!(
            parse_override(" dropout = 0.1 ").unwrap(),
            ("dropout".to_string(), "0.1".to_string())
        );
        assert!(parse_override("justakey").is_err());
    }
}
