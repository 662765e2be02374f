//! Confusion counts and the overlap metrics derived from them.
//!
//! Everything here is a pure function over plain values; tensors come in,
//! integers and floats come out, nothing touches the autodiff graph.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Pixel tallies from comparing a binarized prediction against a target.
/// `fneg` is the false-negative count (`fn` is reserved).
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    pub fneg: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fneg + self.tn
    }

    /// Pools two tallies, the micro-averaging primitive.
    pub fn merge(&self, other: &ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + other.tp,
            fp: self.fp + other.fp,
            fneg: self.fneg + other.fneg,
            tn: self.tn + other.tn,
        }
    }
}

/// Binarizes `q` at `threshold` (>= counts as positive) and tallies it
/// against the binary target `p`.
pub fn confusion_counts<T: Scalar>(
    q: &Tensor<T>,
    p: &Tensor<T>,
    threshold: f64,
) -> Result<ConfusionCounts> {
    if q.shape() != p.shape() {
        return Err(Error::ShapeMismatch {
            op: "confusion_counts",
            lhs: q.shape().to_vec(),
            rhs: p.shape().to_vec(),
        });
    }
    let thr = T::from_f64_c(threshold);
    let half = T::from_f64_c(0.5);
    let qd = q.data();
    let pd = p.data();
    let mut c = ConfusionCounts::default();
    for (&qv, &pv) in qd.iter().zip(pd.iter()) {
        match (qv >= thr, pv >= half) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fneg += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// Dice similarity coefficient 2TP/(2TP+FP+FN); 1 when both masks are empty.
pub fn dsc(c: &ConfusionCounts) -> f64 {
    let den = 2 * c.tp + c.fp + c.fneg;
    if den == 0 {
        1.0
    } else {
        2.0 * c.tp as f64 / den as f64
    }
}

/// Jaccard index TP/(TP+FP+FN); 1 when both masks are empty.
pub fn iou(c: &ConfusionCounts) -> f64 {
    let den = c.tp + c.fp + c.fneg;
    if den == 0 {
        1.0
    } else {
        c.tp as f64 / den as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{SeededRng, Stream};

    fn t(values: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn hand_tally() {
        let c = confusion_counts(&t(&[0.9, 0.2, 0.8, 0.1]), &t(&[1.0, 1.0, 0.0, 0.0]), 0.5)
            .unwrap();
        assert_eq!(
            c,
            ConfusionCounts { tp: 1, fp: 1, fneg: 1, tn: 1 }
        );
        assert_eq!(c.total(), 4);
    }

    #[test]
    fn exact_binary_agreement_has_no_errors() {
        let p = t(&[1.0, 0.0, 1.0, 1.0, 0.0]);
        let c = confusion_counts(&p, &p, 0.5).unwrap();
        assert_eq!(c.fp, 0);
        assert_eq!(c.fneg, 0);
        assert_eq!(c.tp, 3);
        assert_eq!(c.tn, 2);
    }

    #[test]
    fn threshold_is_inclusive() {
        let c = confusion_counts(&t(&[0.5]), &t(&[1.0]), 0.5).unwrap();
        assert_eq!(c.tp, 1);
    }

    #[test]
    fn random_pairs_match_brute_force() {
        let mut rng = SeededRng::new(5, Stream::GradCheck);
        for _ in 0..20 {
            let q: Vec<f64> = (0..256).map(|_| rng.uniform()).collect();
            let p: Vec<f64> = (0..256).map(|_| if rng.coin(0.4) { 1.0 } else { 0.0 }).collect();
            let c = confusion_counts(&t(&q), &t(&p), 0.5).unwrap();
            let mut want = ConfusionCounts::default();
            for i in 0..256 {
                let pos = q[i] >= 0.5;
                let truth = p[i] == 1.0;
                match (pos, truth) {
                    (true, true) => want.tp += 1,
                    (true, false) => want.fp += 1,
                    (false, true) => want.fneg += 1,
                    (false, false) => want.tn += 1,
                }
            }
            assert_eq!(c, want);
            assert_eq!(c.total(), 256);
        }
    }

    #[test]
    fn dsc_and_iou_hand_values() {
        let c = ConfusionCounts { tp: 6, fp: 1, fneg: 1, tn: 0 };
        assert!((dsc(&c) - 12.0 / 14.0).abs() < 1e-15);
        assert!((iou(&c) - 0.75).abs() < 1e-15);
        let perfect = ConfusionCounts { tp: 9, fp: 0, fneg: 0, tn: 7 };
        assert_eq!(dsc(&perfect), 1.0);
        assert_eq!(iou(&perfect), 1.0);
        let disjoint = ConfusionCounts { tp: 0, fp: 3, fneg: 2, tn: 11 };
        assert_eq!(dsc(&disjoint), 0.0);
        assert_eq!(iou(&disjoint), 0.0);
    }

    #[test]
    fn both_empty_convention_is_one() {
        let empty = ConfusionCounts { tp: 0, fp: 0, fneg: 0, tn: 64 };
        assert_eq!(dsc(&empty), 1.0);
        assert_eq!(iou(&empty), 1.0);
    }

    #[test]
    fn iou_dsc_identity_on_random_counts() {
        let mut rng = SeededRng::new(13, Stream::GradCheck);
        for _ in 0..200 {
            let c = ConfusionCounts {
                tp: rng.below(50) as u64,
                fp: rng.below(50) as u64,
                fneg: rng.below(50) as u64,
                tn: rng.below(50) as u64,
            };
            let d = dsc(&c);
            let j = iou(&c);
            assert!((j - d / (2.0 - d)).abs() < 1e-12, "counts {c:?}");
            assert!(j <= d + 1e-15);
        }
    }

    #[test]
    fn merge_pools_counts() {
        let a = ConfusionCounts { tp: 1, fp: 2, fneg: 3, tn: 4 };
        let b = ConfusionCounts { tp: 10, fp: 20, fneg: 30, tn: 40 };
        assert_eq!(
            a.merge(&b),
            ConfusionCounts { tp: 11, fp: 22, fneg: 33, tn: 44 }
        );
    }
}
