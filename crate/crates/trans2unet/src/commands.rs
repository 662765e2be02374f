//! Implementations behind the CLI subcommands. Each takes plain typed
//! arguments (the binary crate owns argument parsing), validates before
//! touching the filesystem, prints human-readable results, and returns the
//! process outcome through `Result`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::checks;
use crate::config::{parse_override, RunConfig};
use crate::data::{
    generate_synthetic, load_dataset, read_pnm, select, split_dataset, write_pgm, DatasetSplit,
    SegmentationSample,
};
use crate::error::{Error, Result};
use crate::model::{load_checkpoint, Trans2UnetModel, WaspMode};
use crate::nn::{Wasp, WaspConfig};
use crate::rng::{SeededRng, Stream};
use crate::tensor::ops::Mode;
use crate::tensor::Tensor;
use crate::train::{evaluate, train, EvalReport, TrainOutcome};

/// Where samples come from: a directory of image/mask pairs, or the
/// deterministic synthetic generator.
#[derive(Clone, Debug)]
pub enum DataSource {
    Dir(PathBuf),
    Synthetic(usize),
}

impl DataSource {
    fn describe(&self) -> String {
        match self {
            DataSource::Dir(d) => format!("dir:{}", d.display()),
            DataSource::Synthetic(n) => format!("synthetic:{n}"),
        }
    }
}

/// Reads the optional config file and applies `--set` overrides.
pub fn resolve_config(config: Option<&Path>, sets: &[String]) -> Result<RunConfig> {
    let text = match config {
        Some(path) => Some(fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config {}: {e}", path.display()))
        })?),
        None => None,
    };
    let overrides: Vec<(String, String)> = sets
        .iter()
        .map(|s| parse_override(s))
        .collect::<Result<_>>()?;
    RunConfig::from_sources(text.as_deref(), &overrides)
}

fn build_model(cfg: &RunConfig, seed: u64) -> Result<Trans2UnetModel<f32>> {
    let mut rng = SeededRng::new(seed, Stream::Init);
    Trans2UnetModel::new(cfg.model.clone(), &mut rng)
}

fn load_samples(source: &DataSource, input_size: usize, seed: u64) -> Result<Vec<SegmentationSample>> {
    match source {
        DataSource::Dir(dir) => load_dataset(dir, input_size),
        DataSource::Synthetic(n) => generate_synthetic(*n, input_size, seed),
    }
}

fn format_eval(report: &EvalReport) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<12} {:>10} {:>8} {:>8}", "id", "loss", "dsc", "iou");
    for e in &report.per_image {
        let _ = writeln!(
            out,
            "{:<12} {:>10.6} {:>8.4} {:>8.4}",
            e.id, e.loss, e.dsc, e.iou
        );
    }
    let _ = writeln!(
        out,
        "macro: dsc {:.6}  iou {:.6}   (mean of per-image metrics)",
        report.macro_dsc, report.macro_iou
    );
    let _ = writeln!(
        out,
        "micro: dsc {:.6}  iou {:.6}   (pooled confusion counts)",
        report.micro_dsc, report.micro_iou
    );
    let _ = writeln!(out, "mean loss: {:.6}", report.mean_loss);
    out
}

struct RunResult {
    outcome: TrainOutcome,
    val: EvalReport,
    test: EvalReport,
    split: DatasetSplit,
    param_count: usize,
}

/// The one training path shared by `train` and `ablation`: split, train,
/// reload the best checkpoint, evaluate on val and test, write outputs.
fn run_training(
    cfg: &RunConfig,
    samples: &[SegmentationSample],
    seed: u64,
    out_dir: &Path,
) -> Result<RunResult> {
    fs::create_dir_all(out_dir)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = split_dataset(&ids, cfg.split_ratios, seed)?;
    let model = build_model(cfg, seed)?;
    let echo = cfg.echo(&model.skip_wiring());
    fs::write(out_dir.join("config.echo"), &echo)?;

    let train_refs = select(samples, &split.train)?;
    let val_refs = select(samples, &split.val)?;
    let test_refs = select(samples, &split.test)?;
    let outcome = train(
        &model,
        &train_refs,
        &val_refs,
        &cfg.train,
        seed,
        &echo,
        Some(out_dir),
    )?;

    // Report metrics of the checkpoint the run selected, not the final state.
    load_checkpoint(&out_dir.join("best.ckpt"))?.apply(&model.registry())?;
    let val = evaluate(&model, &val_refs, &cfg.train.loss)?;
    let test = evaluate(&model, &test_refs, &cfg.train.loss)?;
    Ok(RunResult {
        outcome,
        val,
        test,
        split,
        param_count: model.param_count(),
    })
}

fn write_summary(
    out_dir: &Path,
    source: &DataSource,
    seed: u64,
    r: &RunResult,
) -> Result<String> {
    let unix = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(s, "completed_unix = {unix}");
    let _ = writeln!(s, "seed = {seed}");
    let _ = writeln!(s, "data = {}", source.describe());
    let _ = writeln!(s, "split_hash = {:016x}", r.split.hash());
    let _ = writeln!(
        s,
        "split_sizes = {}/{}/{}",
        r.split.train.len(),
        r.split.val.len(),
        r.split.test.len()
    );
    let _ = writeln!(s, "epochs_run = {}", r.outcome.records.len());
    let _ = writeln!(s, "best_epoch = {}", r.outcome.best_epoch);
    let _ = writeln!(s, "parameters = {}", r.param_count);
    let _ = writeln!(s, "val_dsc_macro = {:.6}", r.val.macro_dsc);
    let _ = writeln!(s, "val_iou_macro = {:.6}", r.val.macro_iou);
    let _ = writeln!(s, "val_dsc_micro = {:.6}", r.val.micro_dsc);
    let _ = writeln!(s, "val_iou_micro = {:.6}", r.val.micro_iou);
    let _ = writeln!(s, "test_dsc_macro = {:.6}", r.test.macro_dsc);
    let _ = writeln!(s, "test_iou_macro = {:.6}", r.test.macro_iou);
    let _ = writeln!(s, "test_dsc_micro = {:.6}", r.test.micro_dsc);
    let _ = writeln!(s, "test_iou_micro = {:.6}", r.test.micro_iou);
    fs::write(out_dir.join("summary.txt"), &s)?;
    Ok(s)
}

pub fn cmd_train(
    config: Option<&Path>,
    sets: &[String],
    source: &DataSource,
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    let cfg = resolve_config(config, sets)?;
    let samples = load_samples(source, cfg.model.input_size, seed)?;
    let r = run_training(&cfg, &samples, seed, out_dir)?;
    let summary = write_summary(out_dir, source, seed, &r)?;
    print!("{summary}");
    println!(
        "wrote {}, metrics.csv, best.ckpt, final.ckpt, config.echo, summary.txt",
        out_dir.display()
    );
    Ok(())
}

pub fn cmd_eval(
    checkpoint: &Path,
    source: &DataSource,
    split_name: &str,
    seed: u64,
) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let cfg = RunConfig::from_sources(Some(&ckpt.config_echo), &[]).map_err(|e| {
        Error::Checkpoint(format!("checkpoint carries an unusable config echo: {e}"))
    })?;
    let model = build_model(&cfg, 0)?;
    ckpt.apply(&model.registry())?;

    let samples = load_samples(source, cfg.model.input_size, seed)?;
    let ids: Vec<String> = samples.iter().map(|s| s.id.clone()).collect();
    let split = split_dataset(&ids, cfg.split_ratios, seed)?;
    let chosen = match split_name {
        "train" => &split.train,
        "val" => &split.val,
        "test" => &split.test,
        other => {
            return Err(Error::InvalidArg {
                op: "eval",
                msg: format!("--split must be train, val, or test, got {other:?}"),
            })
        }
    };
    let report = evaluate(&model, &select(&samples, chosen)?, &cfg.train.loss)?;
    println!(
        "split {} ({} images, split hash {:016x})",
        split_name,
        chosen.len(),
        split.hash()
    );
    print!("{}", format_eval(&report));
    Ok(())
}

pub fn cmd_predict(checkpoint: &Path, image: &Path, out: &Path) -> Result<()> {
    let ckpt = load_checkpoint(checkpoint)?;
    let cfg = RunConfig::from_sources(Some(&ckpt.config_echo), &[]).map_err(|e| {
        Error::Checkpoint(format!("checkpoint carries an unusable config echo: {e}"))
    })?;
    let model = build_model(&cfg, 0)?;
    ckpt.apply(&model.registry())?;

    let img = read_pnm(image)?;
    let s = cfg.model.input_size;
    let c = cfg.model.in_channels;
    if (img.width, img.height, img.channels) != (s, s, c) {
        return Err(Error::Data(format!(
            "image is {}x{} with {} channel(s); this checkpoint expects {s}x{s} with {c}",
            img.width, img.height, img.channels
        )));
    }
    let maxval = img.maxval as f32;
    let plane = s * s;
    let mut data = Vec::with_capacity(c * plane);
    for ch in 0..c {
        data.extend((0..plane).map(|p| img.data[p * c + ch] as f32 / maxval));
    }
    let x = Tensor::from_vec(&[1, c, s, s], data)?;
    let mut rng = SeededRng::new(0, Stream::Dropout);
    let q = model.forward(&x, Mode::Eval, &mut rng)?.sigmoid();
    let probs = q.to_vec();

    let mask_bytes: Vec<u8> = probs.iter().map(|&p| if p >= 0.5 { 255 } else { 0 }).collect();
    let prob_bytes: Vec<u8> = probs
        .iter()
        .map(|&p| (p * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    write_pgm(out, s, s, &mask_bytes)?;
    let prob_path = out.with_extension("prob.pgm");
    write_pgm(&prob_path, s, s, &prob_bytes)?;
    let fg = mask_bytes.iter().filter(|&&b| b == 255).count();
    println!(
        "wrote mask {} and probabilities {} ({} of {} pixels foreground)",
        out.display(),
        prob_path.display(),
        fg,
        plane
    );
    Ok(())
}

pub fn cmd_gradcheck(op: &str, seed: u64) -> Result<()> {
    let reports = checks::run(op, seed)?;
    let mut failed = Vec::new();
    for r in &reports {
        println!("{r}");
        if !r.passed() {
            failed.push(r.name.clone());
        }
    }
    if failed.is_empty() {
        println!("gradcheck: {} suite(s) passed", reports.len());
        Ok(())
    } else {
        Err(Error::Numeric(format!(
            "gradient check failed for: {}",
            failed.join(", ")
        )))
    }
}

pub fn cmd_params(config: Option<&Path>, sets: &[String], seed: u64) -> Result<()> {
    let cfg = resolve_config(config, sets)?;
    let model = build_model(&cfg, seed)?;
    println!("{}", model.param_breakdown());
    println!("decoder skips: {}", model.skip_wiring());
    match cfg.model.wasp_config() {
        Some(wc) => {
            let count = |dense| -> Result<usize> {
                let mut rng = SeededRng::new(0, Stream::Init);
                let w: Wasp<f32> =
                    Wasp::new(WaspConfig { dense_skip: dense, ..wc.clone() }, &mut rng)?;
                Ok(w.param_count())
            };
            let plain = count(false)?;
            let dense = count(true)?;
            println!(
                "context module: wasp {plain} params, waspkc {dense} params, delta {}",
                dense - plain
            );
        }
        None => println!("context module: disabled (wasp.mode = none)"),
    }
    Ok(())
}

pub const ABLATION_VARIANTS: [(&str, bool, WaspMode); 3] = [
    ("transunet", false, WaspMode::None),
    ("trans2unet-wasp", true, WaspMode::Wasp),
    ("trans2unet-waspkc", true, WaspMode::WaspKc),
];

pub fn cmd_ablation(
    config: Option<&Path>,
    sets: &[String],
    synthetic: usize,
    out_dir: &Path,
    seed: u64,
) -> Result<()> {
    let base = resolve_config(config, sets)?;
    let samples = generate_synthetic(synthetic, base.model.input_size, seed)?;
    fs::create_dir_all(out_dir)?;

    let mut csv = String::from("variant,dsc,iou,params,split_hash\n");
    let mut table = format!(
        "{:<20} {:>8} {:>8} {:>9} {:>17}\n",
        "variant", "dsc", "iou", "params", "split_hash"
    );
    for (name, use_unet, wasp_mode) in ABLATION_VARIANTS {
        let mut cfg = base.clone();
        cfg.model.use_unet = use_unet;
        cfg.model.wasp_mode = wasp_mode;
        cfg.validate()?;
        let r = run_training(&cfg, &samples, seed, &out_dir.join(name))?;
        let _ = writeln!(
            csv,
            "{name},{:.6},{:.6},{},{:016x}",
            r.test.macro_dsc,
            r.test.macro_iou,
            r.param_count,
            r.split.hash()
        );
        let _ = writeln!(
            table,
            "{:<20} {:>8.4} {:>8.4} {:>9} {:>17}",
            name,
            r.test.macro_dsc,
            r.test.macro_iou,
            r.param_count,
            format!("{:016x}", r.split.hash())
        );
    }
    fs::write(out_dir.join("ablation.csv"), &csv)?;
    print!("{table}");
    println!("wrote {}", out_dir.join("ablation.csv").display());
    Ok(())
}

pub fn cmd_synth(out_dir: &Path, count: usize, size: usize, seed: u64) -> Result<()> {
    let samples = generate_synthetic(count, size, seed)?;
    let images = out_dir.join("images");
    let masks = out_dir.join("masks");
    fs::create_dir_all(&images)?;
    fs::create_dir_all(&masks)?;
    for s in &samples {
        let img: Vec<u8> = s
            .image
            .to_vec()
            .iter()
            .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        let msk: Vec<u8> = s
            .mask
            .to_vec()
            .iter()
            .map(|&v| if v == 1.0 { 255 } else { 0 })
            .collect();
        write_pgm(&images.join(format!("{}.pgm", s.id)), size, size, &img)?;
        write_pgm(&masks.join(format!("{}.pgm", s.id)), size, size, &msk)?;
    }
    println!(
        "wrote {count} synthetic {size}x{size} sample(s) under {}",
        out_dir.display()
    );
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quick_sets() -> Vec<String> {
        // Micro-ish model and a 2-epoch run keep command tests fast.
        [
            "input_size=16",
            "unet.widths=2,3,4,5",
            "unet.out_channels=4",
            "cnn.widths=2,3,4",
            "wasp.branch_channels=4",
            "wasp.rates=1,2,3,4",
            "vit.dim=4",
            "vit.layers=1",
            "vit.heads=2",
            "decoder.widths=4,3,3",
            "transunet.out_channels=4",
            "fusion.channels=4",
            "dropout=0",
            "train.epochs=2",
            "train.batch_size=4",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }

    #[test]
    fn train_writes_the_full_output_directory() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run1");
        cmd_train(None, &quick_sets(), &DataSource::Synthetic(5), &out, 7).unwrap();
        for f in ["config.echo", "metrics.csv", "best.ckpt", "final.ckpt", "summary.txt"] {
            assert!(out.join(f).is_file(), "missing {f}");
        }
        let echo = fs::read_to_string(out.join("config.echo")).unwrap();
        assert!(echo.contains("input_size = 16"));
        assert!(echo.contains("# decoder skip wiring"));
        let summary = fs::read_to_string(out.join("summary.txt")).unwrap();
        assert!(summary.contains("split_sizes = 3/1/1"));
        assert!(summary.contains("test_dsc_macro"));
    }

    #[test]
    fn train_twice_gives_identical_metrics_logs() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a"), dir.path().join("b"));
        cmd_train(None, &quick_sets(), &DataSource::Synthetic(5), &a, 7).unwrap();
        cmd_train(None, &quick_sets(), &DataSource::Synthetic(5), &b, 7).unwrap();
        let ma = fs::read(a.join("metrics.csv")).unwrap();
        let mb = fs::read(b.join("metrics.csv")).unwrap();
        assert_eq!(ma, mb);
        assert_eq!(
            fs::read(a.join("best.ckpt")).unwrap(),
            fs::read(b.join("best.ckpt")).unwrap()
        );
    }

    #[test]
    fn eval_runs_against_a_trained_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        cmd_train(None, &quick_sets(), &DataSource::Synthetic(5), &out, 7).unwrap();
        cmd_eval(&out.join("best.ckpt"), &DataSource::Synthetic(5), "val", 7).unwrap();
        let err = cmd_eval(&out.join("best.ckpt"), &DataSource::Synthetic(5), "nope", 7)
            .unwrap_err();
        assert!(matches!(err, Error::InvalidArg { .. }));
    }

    #[test]
    fn predict_writes_mask_and_probability_maps() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("run");
        cmd_train(None, &quick_sets(), &DataSource::Synthetic(5), &out, 7).unwrap();

        let data_dir = dir.path().join("data");
        cmd_synth(&data_dir, 1, 16, 99).unwrap();
        let image = data_dir.join("images/synth0000.pgm");
        let pred = dir.path().join("pred.pgm");
        cmd_predict(&out.join("best.ckpt"), &image, &pred).unwrap();
        assert!(pred.is_file());
        let prob_path = dir.path().join("pred.prob.pgm");
        assert!(prob_path.is_file());
        let mask = read_pnm(&pred).unwrap();
        assert_eq!((mask.width, mask.height), (16, 16));
        assert!(mask.data.iter().all(|&b| b == 0 || b == 255));

        // Wrong-size input is rejected with the expected size in the message.
        cmd_synth(&data_dir.join("big"), 1, 32, 99).unwrap();
        let err = cmd_predict(
            &out.join("best.ckpt"),
            &data_dir.join("big/images/synth0000.pgm"),
            &pred,
        )
        .unwrap_err();
        assert!(matches!(err, Error::Data(ref m) if m.contains("16x16")), "{err}");
    }

    #[test]
    fn gradcheck_command_passes_ops_and_fails_selftest() {
        cmd_gradcheck("relu", 3).unwrap();
        let err = cmd_gradcheck(checks::SELFTEST, 3).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn params_command_reports_for_all_wasp_modes() {
        cmd_params(None, &quick_sets(), 0).unwrap();
        let mut sets = quick_sets();
        sets.push("wasp.mode=none".into());
        cmd_params(None, &sets, 0).unwrap();
    }

    #[test]
    fn synth_output_round_trips_through_the_loader() {
        let dir = tempfile::tempdir().unwrap();
        cmd_synth(dir.path(), 4, 16, 5).unwrap();
        let loaded = load_dataset(dir.path(), 16).unwrap();
        assert_eq!(loaded.len(), 4);
        assert!(loaded.iter().all(|s| s.id.starts_with("synth")));
    }
}
