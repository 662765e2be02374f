//! Named finite-difference gradient suites, one per differentiable op plus
//! a whole-model check, all runnable from the command line.
//!
//! Every suite runs in f64 with the shared step/tolerance defaults. Inputs
//! for kinked ops (relu, clamp, maxpool) are fixed vectors chosen away from
//! their kinks so central differences stay two-sided.

use crate::error::{Error, Result};
use crate::loss::{bce_loss, dice_loss};
use crate::model::{ModelConfig, Trans2UnetModel};
use crate::nn::{Mhsa, Registry};
use crate::rng::{SeededRng, Stream};
use crate::tensor::gradcheck::{check, GradReport, DEFAULT_STEP, DEFAULT_TOL};
use crate::tensor::ops::{concat, Mode, Padding};
use crate::tensor::Tensor;

/// A check whose analytic gradient is deliberately wrong; it must FAIL,
/// proving the harness can catch a broken gradient. Excluded from `all`.
pub const SELFTEST: &str = "selftest-corrupt";

type Runner = fn(u64) -> Result<GradReport>;

const CHECKS: &[(&str, Runner)] = &[
    ("add", ck_add),
    ("sub", ck_sub),
    ("mul", ck_mul),
    ("div", ck_div),
    ("add-scalar", ck_add_scalar),
    ("mul-scalar", ck_mul_scalar),
    ("rsub-scalar", ck_rsub_scalar),
    ("clamp", ck_clamp),
    ("log", ck_log),
    ("relu", ck_relu),
    ("gelu", ck_gelu),
    ("sigmoid", ck_sigmoid),
    ("dropout", ck_dropout),
    ("matmul", ck_matmul),
    ("softmax", ck_softmax),
    ("layernorm", ck_layernorm),
    ("batchnorm2d", ck_batchnorm2d),
    ("conv2d", ck_conv2d),
    ("conv2d-valid", ck_conv2d_valid),
    ("conv2d-strided", ck_conv2d_strided),
    ("conv2d-dilated", ck_conv2d_dilated),
    ("maxpool2d", ck_maxpool2d),
    ("global-avg-pool", ck_global_avg_pool),
    ("upsample-bilinear", ck_upsample_bilinear),
    ("sum", ck_sum),
    ("mean", ck_mean),
    ("reshape", ck_reshape),
    ("permute", ck_permute),
    ("transpose-last2", ck_transpose_last2),
    ("add-bias", ck_add_bias),
    ("broadcast-spatial", ck_broadcast_spatial),
    ("concat", ck_concat),
    ("mhsa", ck_mhsa),
    ("bce-loss", ck_bce_loss),
    ("dice-loss", ck_dice_loss),
    ("model-micro", ck_model_micro),
];

pub fn op_names() -> Vec<&'static str> {
    CHECKS.iter().map(|(n, _)| *n).collect()
}

/// Runs one named suite, or every real suite for `"all"`.
pub fn run(op: &str, seed: u64) -> Result<Vec<GradReport>> {
    if op == "all" {
        return CHECKS.iter().map(|(_, f)| f(seed)).collect();
    }
    if op == SELFTEST {
        return Ok(vec![selftest_corrupt(seed)?]);
    }
    match CHECKS.iter().find(|(n, _)| *n == op) {
        Some((_, f)) => Ok(vec![f(seed)?]),
        None => Err(Error::InvalidArg {
            op: "gradcheck",
            msg: format!(
                "unknown op {op:?}; available: all, {}, {SELFTEST}",
                op_names().join(", ")
            ),
        }),
    }
}

fn rng_for(seed: u64) -> SeededRng {
    SeededRng::new(seed, Stream::GradCheck)
}

fn rand_param(rng: &mut SeededRng, shape: &[usize], lo: f64, hi: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.uniform_in(lo, hi)).collect();
    Tensor::param(shape, data).unwrap()
}

fn fixed_param(shape: &[usize], data: &[f64]) -> Tensor<f64> {
    Tensor::param(shape, data.to_vec()).unwrap()
}

/// Contracts a tensor to a scalar against fixed distinct weights, so every
/// element's gradient is distinct and transposition bugs show up.
fn weighted_sum(t: &Tensor<f64>) -> Result<Tensor<f64>> {
    let w: Vec<f64> = (0..t.numel())
        .map(|i| (0.25 + 0.13 * i as f64) * if i % 2 == 0 { 1.0 } else { -1.0 })
        .collect();
    Ok(t.mul(&Tensor::from_vec(t.shape(), w)?)?.sum())
}

fn ck_add(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[2, 3], -1.0, 1.0);
    let b = rand_param(&mut rng, &[2, 3], -1.0, 1.0);
    check("add", &[&a, &b], || weighted_sum(&a.add(&b)?), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_sub(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[2, 3], -1.0, 1.0);
    let b = rand_param(&mut rng, &[2, 3], -1.0, 1.0);
    check("sub", &[&a, &b], || weighted_sum(&a.sub(&b)?), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_mul(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[2, 3], -1.0, 1.0);
    let b = rand_param(&mut rng, &[2, 3], -1.0, 1.0);
    check("mul", &[&a, &b], || weighted_sum(&a.mul(&b)?), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_div(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[2, 3], -1.0, 1.0);
    // Denominator bounded away from zero.
    let b = rand_param(&mut rng, &[2, 3], 0.5, 1.5);
    check("div", &[&a, &b], || weighted_sum(&a.div(&b)?), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_add_scalar(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[5], -1.0, 1.0);
    check("add-scalar", &[&a], || weighted_sum(&a.add_scalar(0.7)), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_mul_scalar(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[5], -1.0, 1.0);
    check("mul-scalar", &[&a], || weighted_sum(&a.mul_scalar(-1.3)), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_rsub_scalar(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[5], -1.0, 1.0);
    check("rsub-scalar", &[&a], || weighted_sum(&a.rsub_scalar(1.0)), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_clamp(_seed: u64) -> Result<GradReport> {
    // Mix of clamped and passed-through values, all at least 0.1 from the
    // clamp bounds so the finite-difference step never crosses a kink.
    let a = fixed_param(&[6], &[-0.9, -0.35, -0.1, 0.2, 0.39, 0.8]);
    check(
        "clamp",
        &[&a],
        || weighted_sum(&a.clamp(-0.5, 0.5)),
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn ck_log(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[5], 0.2, 2.0);
    check("log", &[&a], || weighted_sum(&a.log()), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_relu(_seed: u64) -> Result<GradReport> {
    let a = fixed_param(&[6], &[-0.9, -0.4, -0.15, 0.2, 0.55, 1.1]);
    check("relu", &[&a], || weighted_sum(&a.relu()), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_gelu(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[6], -2.0, 2.0);
    check("gelu", &[&a], || weighted_sum(&a.gelu()), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_sigmoid(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[6], -3.0, 3.0);
    check("sigmoid", &[&a], || weighted_sum(&a.sigmoid()), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_dropout(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[4, 4], -1.0, 1.0);
    check(
        "dropout",
        &[&a],
        || {
            // Fresh stream per call: the mask must replay identically.
            let mut drop_rng = SeededRng::new(seed, Stream::Dropout);
            weighted_sum(&a.dropout(0.4, Mode::Train, &mut drop_rng)?)
        },
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn ck_matmul(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let b = rand_param(&mut rng, &[2, 4, 2], -1.0, 1.0);
    check("matmul", &[&a, &b], || weighted_sum(&a.matmul(&b)?), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_softmax(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[2, 5], -2.0, 2.0);
    check("softmax", &[&a], || weighted_sum(&a.softmax()?), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_layernorm(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[2, 6], -1.0, 1.0);
    let gamma = rand_param(&mut rng, &[6], 0.5, 1.5);
    let beta = rand_param(&mut rng, &[6], -0.5, 0.5);
    check(
        "layernorm",
        &[&x, &gamma, &beta],
        || weighted_sum(&x.layernorm(&gamma, &beta, 1e-5)?),
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn ck_batchnorm2d(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    let gamma = rand_param(&mut rng, &[3], 0.5, 1.5);
    let beta = rand_param(&mut rng, &[3], -0.5, 0.5);
    let rm = Tensor::from_vec(&[3], vec![0.0; 3])?;
    let rv = Tensor::from_vec(&[3], vec![1.0; 3])?;
    check(
        "batchnorm2d",
        &[&x, &gamma, &beta],
        // Train mode differentiates through the batch statistics; the
        // running-stat side writes do not feed the output.
        || weighted_sum(&x.batchnorm2d(&gamma, &beta, &rm, &rv, 0.1, 1e-5, Mode::Train)?),
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn conv_case(
    name: &'static str,
    seed: u64,
    stride: usize,
    dilation: usize,
    padding: Padding,
) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[1, 2, 5, 5], -1.0, 1.0);
    let w = rand_param(&mut rng, &[3, 2, 3, 3], -0.5, 0.5);
    let b = rand_param(&mut rng, &[3], -0.5, 0.5);
    check(
        name,
        &[&x, &w, &b],
        || weighted_sum(&x.conv2d(&w, &b, stride, dilation, padding)?),
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn ck_conv2d(seed: u64) -> Result<GradReport> {
    conv_case("conv2d", seed, 1, 1, Padding::Same)
}

fn ck_conv2d_valid(seed: u64) -> Result<GradReport> {
    conv_case("conv2d-valid", seed, 1, 1, Padding::Valid)
}

fn ck_conv2d_strided(seed: u64) -> Result<GradReport> {
    conv_case("conv2d-strided", seed, 2, 1, Padding::Same)
}

fn ck_conv2d_dilated(seed: u64) -> Result<GradReport> {
    conv_case("conv2d-dilated", seed, 1, 2, Padding::Same)
}

fn ck_maxpool2d(_seed: u64) -> Result<GradReport> {
    // Distinct values everywhere: no window ties, so the argmax is stable
    // under the probe step.
    let vals: Vec<f64> = (0..32).map(|i| ((i * 13) % 32) as f64 * 0.11 - 1.7).collect();
    let x = fixed_param(&[1, 2, 4, 4], &vals);
    check("maxpool2d", &[&x], || weighted_sum(&x.maxpool2d()?), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_global_avg_pool(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[2, 3, 4, 4], -1.0, 1.0);
    check(
        "global-avg-pool",
        &[&x],
        || weighted_sum(&x.global_avg_pool()?),
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn ck_upsample_bilinear(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[1, 2, 3, 3], -1.0, 1.0);
    check(
        "upsample-bilinear",
        &[&x],
        || weighted_sum(&x.upsample_bilinear(2)?),
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn ck_sum(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[2, 3], -1.0, 1.0);
    check("sum", &[&x], || Ok(x.mul(&x)?.sum()), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_mean(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[2, 3], -1.0, 1.0);
    check("mean", &[&x], || Ok(x.mul(&x)?.mean()), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_reshape(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[2, 6], -1.0, 1.0);
    check(
        "reshape",
        &[&x],
        || weighted_sum(&x.reshape(&[3, 4])?),
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn ck_permute(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[2, 3, 4], -1.0, 1.0);
    check(
        "permute",
        &[&x],
        || weighted_sum(&x.permute(&[2, 0, 1])?),
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn ck_transpose_last2(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[2, 3, 4], -1.0, 1.0);
    check(
        "transpose-last2",
        &[&x],
        || weighted_sum(&x.transpose_last2()?),
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn ck_add_bias(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[2, 3, 4], -1.0, 1.0);
    let b = rand_param(&mut rng, &[4], -0.5, 0.5);
    check("add-bias", &[&x, &b], || weighted_sum(&x.add_bias(&b)?), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_broadcast_spatial(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[2, 3, 1, 1], -1.0, 1.0);
    check(
        "broadcast-spatial",
        &[&x],
        || weighted_sum(&x.broadcast_spatial(3, 4)?),
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn ck_concat(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let a = rand_param(&mut rng, &[2, 2, 3], -1.0, 1.0);
    let b = rand_param(&mut rng, &[2, 4, 3], -1.0, 1.0);
    check(
        "concat",
        &[&a, &b],
        || weighted_sum(&concat(&[&a, &b], 1)?),
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

fn ck_mhsa(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let attn = Mhsa::new(4, 2, &mut rng)?;
    let x = rand_param(&mut rng, &[1, 5, 4], -1.0, 1.0);
    let mut reg = Registry::new();
    attn.register("attn", &mut reg);
    let mut params: Vec<&Tensor<f64>> = vec![&x];
    params.extend(reg.params().iter().map(|(_, t)| t));
    check("mhsa", &params, || weighted_sum(&attn.forward(&x)?), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_bce_loss(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    // Probabilities well inside (0,1): away from the clamp kink.
    let q = rand_param(&mut rng, &[3, 4], 0.05, 0.95);
    let p_data: Vec<f64> = (0..12).map(|_| if rng.coin(0.5) { 1.0 } else { 0.0 }).collect();
    let p = Tensor::from_vec(&[3, 4], p_data)?;
    check("bce-loss", &[&q], || bce_loss(&q, &p, 1e-7), DEFAULT_STEP, DEFAULT_TOL)
}

fn ck_dice_loss(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let q = rand_param(&mut rng, &[3, 4], 0.05, 0.95);
    let p_data: Vec<f64> = (0..12).map(|_| if rng.coin(0.5) { 1.0 } else { 0.0 }).collect();
    let p = Tensor::from_vec(&[3, 4], p_data)?;
    check("dice-loss", &[&q], || dice_loss(&q, &p, 1.0), DEFAULT_STEP, DEFAULT_TOL)
}

/// Every parameter of the full micro model against finite differences of
/// the end-to-end training loss.
///
/// Uses a smaller probe step than the per-op suites: the composed network
/// has relu and maxpool kinks, and a +-1e-4 window around thousands of
/// probed weights will occasionally straddle one (argmax flips, a clipped
/// activation turning on), which corrupts the numeric quotient without any
/// analytic gradient being wrong. At 1e-6 the window is narrow enough to
/// stay on one smooth piece while f64 roundoff is still ~1e-10.
const MODEL_STEP: f64 = 1e-6;

fn ck_model_micro(seed: u64) -> Result<GradReport> {
    let mut init = SeededRng::new(seed, Stream::Init);
    let model = Trans2UnetModel::<f64>::new(ModelConfig::micro(), &mut init)?;
    let mut rng = rng_for(seed);
    let x = {
        let data = (0..256).map(|_| rng.uniform_in(0.0, 1.0)).collect();
        Tensor::from_vec(&[1, 1, 16, 16], data)?
    };
    let mask = {
        let data = (0..256).map(|_| if rng.coin(0.3) { 1.0 } else { 0.0 }).collect();
        Tensor::from_vec(&[1, 1, 16, 16], data)?
    };
    let reg = model.registry();
    let params: Vec<&Tensor<f64>> = reg.params().iter().map(|(_, t)| t).collect();
    check(
        "model-micro",
        &params,
        || {
            let mut drop_rng = SeededRng::new(seed, Stream::Dropout);
            let logits = model.forward(&x, Mode::Train, &mut drop_rng)?;
            let q = logits.sigmoid();
            Ok(bce_loss(&q, &mask, 1e-7)?.add(&dice_loss(&q, &mask, 1.0)?)?)
        },
        MODEL_STEP,
        DEFAULT_TOL,
    )
}

/// First call builds the graph for one function, later (probe) calls
/// evaluate a different one, so the analytic gradient is wrong for what
/// the probes measure. The harness must flag it.
fn selftest_corrupt(seed: u64) -> Result<GradReport> {
    let mut rng = rng_for(seed);
    let x = rand_param(&mut rng, &[4], 0.3, 1.2);
    let first = std::cell::Cell::new(true);
    check(
        SELFTEST,
        &[&x],
        || {
            if first.replace(false) {
                Ok(x.mul(&x)?.sum())
            } else {
                Ok(x.mul(&x)?.mul_scalar(2.0).sum())
            }
        },
        DEFAULT_STEP,
        DEFAULT_TOL,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_op_suite_passes() {
        for report in run("all", 12).unwrap() {
            assert!(report.passed(), "{report}");
        }
    }

    #[test]
    fn single_op_lookup_and_unknown_names() {
        let reports = run("conv2d", 3).unwrap();
        assert_eq!(reports.len(), 1);
        assert_eq!(reports[0].name, "conv2d");
        assert!(reports[0].passed());

        let err = run("convolve9000", 3).unwrap_err();
        assert!(matches!(err, Error::InvalidArg { ref msg, .. } if msg.contains("convolve9000")));
    }

    #[test]
    fn corrupt_selftest_fails_as_designed() {
        let reports = run(SELFTEST, 5).unwrap();
        assert_eq!(reports.len(), 1);
        assert!(!reports[0].passed(), "harness failed to catch a wrong gradient");
        assert!(reports[0].max_rel_err > 0.1);
    }

    #[test]
    fn op_names_cover_the_public_op_surface() {
        let names = op_names();
        for required in [
            "add", "mul", "div", "clamp", "log", "relu", "gelu", "sigmoid", "dropout",
            "matmul", "softmax", "layernorm", "batchnorm2d", "conv2d", "maxpool2d",
            "global-avg-pool", "upsample-bilinear", "sum", "mean", "reshape", "permute",
            "transpose-last2", "add-bias", "broadcast-spatial", "concat", "model-micro",
        ] {
            assert!(names.contains(&required), "missing suite for {required}");
        }
    }
}
