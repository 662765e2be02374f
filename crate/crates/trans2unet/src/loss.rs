//! Segmentation losses over predicted probabilities.
//!
//! Both losses take probabilities (callers apply sigmoid to logits first)
//! and a binary target of the same shape, and reduce to a scalar tensor so
//! `backward` can seed the whole graph.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossKind {
    Bce,
    Dice,
    BcePlusDice,
}

impl LossKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "bce" => Ok(LossKind::Bce),
            "dice" => Ok(LossKind::Dice),
            "bce_plus_dice" => Ok(LossKind::BcePlusDice),
            other => Err(Error::Config(format!(
                "loss.kind must be bce, dice, or bce_plus_dice, got {other:?}"
            ))),
        }
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            LossKind::Bce => "bce",
            LossKind::Dice => "dice",
            LossKind::BcePlusDice => "bce_plus_dice",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub kind: LossKind,
    pub dice_smooth: f64,
    pub bce_epsilon: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            kind: LossKind::BcePlusDice,
            dice_smooth: 1.0,
            bce_epsilon: 1e-7,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dice_smooth <= 0.0 {
            return Err(Error::Config(format!(
                "loss.dice_smooth must be positive, got {}",
                self.dice_smooth
            )));
        }
        if self.bce_epsilon <= 0.0 || self.bce_epsilon >= 0.5 {
            return Err(Error::Config(format!(
                "loss.bce_epsilon must lie in (0, 0.5), got {}",
                self.bce_epsilon
            )));
        }
        Ok(())
    }
}

fn check_pair<T: Scalar>(op: &'static str, q: &Tensor<T>, p: &Tensor<T>) -> Result<()> {
    if q.shape() != p.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: q.shape().to_vec(),
            rhs: p.shape().to_vec(),
        });
    }
    Ok(())
}

/// Mean binary cross-entropy, with q clamped to [eps, 1-eps] so the logs
/// stay finite and the gradient is defined everywhere.
pub fn bce_loss<T: Scalar>(q: &Tensor<T>, p: &Tensor<T>, eps: f64) -> Result<Tensor<T>> {
    check_pair("bce_loss", q, p)?;
    let e = T::from_f64_c(eps);
    let qc = q.clamp(e, T::one() - e);
    let pos = p.mul(&qc.log())?;
    let neg = p.rsub_scalar(T::one()).mul(&qc.rsub_scalar(T::one()).log())?;
    Ok(pos.add(&neg)?.mean().mul_scalar(-T::one()))
}

/// Soft Dice loss: 1 - (2*sum(pq) + s) / (sum(p) + sum(q) + s). The
/// smoothing term keeps the empty-vs-empty case at zero loss.
pub fn dice_loss<T: Scalar>(q: &Tensor<T>, p: &Tensor<T>, smooth: f64) -> Result<Tensor<T>> {
    check_pair("dice_loss", q, p)?;
    let s = T::from_f64_c(smooth);
    let inter = q.mul(p)?.sum();
    let num = inter.mul_scalar(T::from_f64_c(2.0)).add_scalar(s);
    let den = q.sum().add(&p.sum())?.add_scalar(s);
    Ok(num.div(&den)?.rsub_scalar(T::one()))
}

/// The configured training loss; the combined form is the plain sum of the
/// two terms.
pub fn loss<T: Scalar>(cfg: &LossConfig, q: &Tensor<T>, p: &Tensor<T>) -> Result<Tensor<T>> {
    match cfg.kind {
        LossKind::Bce => bce_loss(q, p, cfg.bce_epsilon),
        LossKind::Dice => dice_loss(q, p, cfg.dice_smooth),
        LossKind::BcePlusDice => {
            bce_loss(q, p, cfg.bce_epsilon)?.add(&dice_loss(q, p, cfg.dice_smooth)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeededRng, Stream};
    use crate::tensor::gradcheck;

    fn t(values: &[f64]) -> Tensor<f64> {
        Tensor::param(&[values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn bce_perfect_prediction_vanishes() {
        let loss = bce_loss(&t(&[0.999_999]), &t(&[1.0]), 1e-7).unwrap().item();
        assert!(loss > 0.0 && loss < 1e-5);
        let saturated = bce_loss(&t(&[1.0]), &t(&[1.0]), 1e-7).unwrap().item();
        assert!(saturated >= 0.0 && saturated < 1e-6);
    }

    #[test]
    fn bce_half_confidence_is_ln2_both_ways() {
        let ln2 = std::f64::consts::LN_2;
        let a = bce_loss(&t(&[0.5]), &t(&[1.0]), 1e-7).unwrap().item();
        let b = bce_loss(&t(&[0.5]), &t(&[0.0]), 1e-7).unwrap().item();
        assert!((a - ln2).abs() < 1e-6, "got {a}");
        assert!((b - ln2).abs() < 1e-6, "got {b}");
    }

    #[test]
    fn dice_identities() {
        let zero_vs_zero = dice_loss(&t(&[0.0, 0.0]), &t(&[0.0, 0.0]), 1.0).unwrap();
        assert_eq!(zero_vs_zero.item(), 0.0);
        let single = dice_loss(&t(&[1.0]), &t(&[1.0]), 1.0).unwrap();
        assert_eq!(single.item(), 0.0);
        let half = dice_loss(&t(&[0.5, 0.5]), &t(&[1.0, 0.0]), 1.0).unwrap();
        assert!((half.item() - 1.0 / 3.0).abs() < 1e-9);
    }

    #[test]
    fn dice_prefers_the_true_mask() {
        let p = t(&[1.0, 0.0, 1.0, 0.0, 0.0]);
        let flipped = t(&[0.0, 1.0, 0.0, 1.0, 1.0]);
        let agree = dice_loss(&p, &p, 1.0).unwrap().item();
        let disagree = dice_loss(&flipped, &p, 1.0).unwrap().item();
        assert!(agree < disagree);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        assert!(bce_loss(&t(&[0.5]), &t(&[1.0, 0.0]), 1e-7).is_err());
        assert!(dice_loss(&t(&[0.5]), &t(&[1.0, 0.0]), 1.0).is_err());
    }

    #[test]
    fn combined_loss_is_the_sum() {
        let q = t(&[0.3, 0.8, 0.6]);
        let p = t(&[0.0, 1.0, 1.0]);
        let cfg = LossConfig::default();
        let both = loss(&cfg, &q, &p).unwrap().item();
        let bce = bce_loss(&q, &p, cfg.bce_epsilon).unwrap().item();
        let dice = dice_loss(&q, &p, cfg.dice_smooth).unwrap().item();
        assert!((both - (bce + dice)).abs() < 1e-12);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = SeededRng::new(17, Stream::GradCheck);
        let n = 24;
        let qv: Vec<f64> = (0..n).map(|_| rng.uniform_in(0.05, 0.95)).collect();
        let pv: Vec<f64> = (0..n).map(|_| if rng.coin(0.5) { 1.0 } else { 0.0 }).collect();
        let q = Tensor::param(&[n], qv).unwrap();
        let p = Tensor::from_vec(&[n], pv).unwrap();
        let report = gradcheck::check(
            "bce_loss",
            &[&q],
            || bce_loss(&q, &p, 1e-7),
            gradcheck::DEFAULT_STEP,
            gradcheck::DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
        let report = gradcheck::check(
            "dice_loss",
            &[&q],
            || dice_loss(&q, &p, 1.0),
            gradcheck::DEFAULT_STEP,
            gradcheck::DEFAULT_TOL,
        )
        .unwrap();
        assert!(report.passed(), "{report}");
    }

    #[test]
    fn config_validation() {
        assert!(LossConfig::default().validate().is_ok());
        let mut c = LossConfig::default();
        c.dice_smooth = 0.0;
        assert!(c.validate().is_err());
        c = LossConfig::default();
        c.bce_epsilon = 0.5;
        assert!(c.validate().is_err());
        assert!(LossKind::parse("dice").is_ok());
        assert!(LossKind::parse("mse").is_err());
    }
}
