//! Batched matrix multiply with right-aligned broadcasting over the batch
//! dimensions, the rule the attention stack relies on for `[N, h, T, D] x
//! [N, h, D, T]` products and for batch-shared projection weights.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{strides, Tensor};

/// c[m, n] += a[m, k] @ b[k, n]
fn mm_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (kk, &av) in arow.iter().enumerate() {
            let brow = &b[kk * n..(kk + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    }
}

/// c[m, k] += a[m, n] @ b[k, n]^T
fn mm_bt_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, n: usize, k: usize) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let crow = &mut c[i * k..(i + 1) * k];
        for (p, cv) in crow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            let mut acc = T::zero();
            for (&av, &bv) in arow.iter().zip(brow.iter()) {
                acc += av * bv;
            }
            *cv += acc;
        }
    }
}

/// c[k, n] += a[m, k]^T @ b[m, n]
fn mm_at_acc<T: Scalar>(c: &mut [T], a: &[T], b: &[T], m: usize, k: usize, n: usize) {
    for row in 0..m {
        let arow = &a[row * k..(row + 1) * k];
        let brow = &b[row * n..(row + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let crow = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow.iter()) {
                *cv += av * bv;
            }
        }
    }
}

/// Batch-dimension bookkeeping shared by forward and backward.
struct BatchMap {
    out_batch: Vec<usize>,
    a_strides: Vec<usize>,
    b_strides: Vec<usize>,
}

impl BatchMap {
    fn build(op: &'static str, ash: &[usize], bsh: &[usize]) -> Result<BatchMap> {
        let ab = &ash[..ash.len() - 2];
        let bb = &bsh[..bsh.len() - 2];
        let nd = ab.len().max(bb.len());
        let pad = |dims: &[usize]| {
            let mut v = vec![1usize; nd];
            v[nd - dims.len()..].copy_from_slice(dims);
            v
        };
        let (pa, pb) = (pad(ab), pad(bb));
        let mut out_batch = vec![0usize; nd];
        for i in 0..nd {
            out_batch[i] = match (pa[i], pb[i]) {
                (x, y) if x == y => x,
                (1, y) => y,
                (x, 1) => x,
                _ => {
                    return Err(Error::ShapeMismatch {
                        op,
                        lhs: ash.to_vec(),
                        rhs: bsh.to_vec(),
                    })
                }
            };
        }
        // Strides count matrices, not elements; broadcast dims advance by 0.
        let zero_broadcast = |padded: &[usize]| {
            let mut s = strides(padded);
            for (si, &d) in s.iter_mut().zip(padded.iter()) {
                if d == 1 {
                    *si = 0;
                }
            }
            s
        };
        Ok(BatchMap {
            a_strides: zero_broadcast(&pa),
            b_strides: zero_broadcast(&pb),
            out_batch,
        })
    }

    fn total(&self) -> usize {
        self.out_batch.iter().product()
    }

    /// Matrix offsets (in units of matrices) for output batch index `flat`.
    fn offsets(&self, mut flat: usize) -> (usize, usize) {
        let (mut ao, mut bo) = (0usize, 0usize);
        for i in (0..self.out_batch.len()).rev() {
            let coord = flat % self.out_batch[i];
            flat /= self.out_batch[i];
            ao += coord * self.a_strides[i];
            bo += coord * self.b_strides[i];
        }
        (ao, bo)
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        let (ash, bsh) = (self.shape().to_vec(), rhs.shape().to_vec());
        if ash.len() < 2 || bsh.len() < 2 {
            return Err(Error::InvalidArg {
                op: "matmul",
                msg: format!("operands need at least 2 dims, got {ash:?} and {bsh:?}"),
            });
        }
        let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
        let (kb, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
        if k != kb {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: ash,
                rhs: bsh,
            });
        }
        let map = BatchMap::build("matmul", &ash, &bsh)?;
        let total = map.total();

        let mut out = vec![T::zero(); total * m * n];
        {
            let (ad, bd) = (self.data(), rhs.data());
            for flat in 0..total {
                let (ao, bo) = map.offsets(flat);
                mm_acc(
                    &mut out[flat * m * n..(flat + 1) * m * n],
                    &ad[ao * m * k..(ao + 1) * m * k],
                    &bd[bo * k * n..(bo + 1) * k * n],
                    m,
                    k,
                    n,
                );
            }
        }

        let mut out_shape = map.out_batch.clone();
        out_shape.push(m);
        out_shape.push(n);
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            out_shape,
            out,
            vec![self.clone(), rhs.clone()],
            move |dy| {
                let (need_da, need_db) = (a.requires_grad(), b.requires_grad());
                let (da, db) = {
                    let (ad, bd) = (a.data(), b.data());
                    let mut da = if need_da {
                        vec![T::zero(); ad.len()]
                    } else {
                        Vec::new()
                    };
                    let mut db = if need_db {
                        vec![T::zero(); bd.len()]
                    } else {
                        Vec::new()
                    };
                    for flat in 0..total {
                        let (ao, bo) = map.offsets(flat);
                        let dyb = &dy[flat * m * n..(flat + 1) * m * n];
                        if need_da {
                            // dA += dY @ B^T
                            mm_bt_acc(
                                &mut da[ao * m * k..(ao + 1) * m * k],
                                dyb,
                                &bd[bo * k * n..(bo + 1) * k * n],
                                m,
                                n,
                                k,
                            );
                        }
                        if need_db {
                            // dB += A^T @ dY
                            mm_at_acc(
                                &mut db[bo * k * n..(bo + 1) * k * n],
                                &ad[ao * m * k..(ao + 1) * m * k],
                                dyb,
                                m,
                                k,
                                n,
                            );
                        }
                    }
                    (da, db)
                };
                if need_da {
                    a.add_to_grad(&da);
                }
                if need_db {
                    b.add_to_grad(&db);
                }
            },
        ))
    }
}

#[cfg(test)]
mod tests {
    use crate::error::Error;
    use crate::tensor::Tensor;

    #[test]
    fn identity_returns_rhs() {
        let i = Tensor::<f64>::param(&[2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::<f64>::param(&[2, 2], vec![3.5, -1.0, 2.0, 0.25]).unwrap();
        assert_eq!(i.matmul(&b).unwrap().to_vec(), b.to_vec());
    }

    #[test]
    fn matrix_times_column_vector() {
        let a = Tensor::<f64>::param(&[2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = Tensor::<f64>::param(&[2, 1], vec![5.0, 6.0]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 1]);
        assert_eq!(c.to_vec(), vec![17.0, 39.0]);
    }

    #[test]
    fn two_by_three_times_three_by_two() {
        let a = Tensor::<f64>::param(&[2, 3], (1..=6).map(f64::from).collect()).unwrap();
        let b = Tensor::<f64>::param(&[3, 2], (1..=6).map(f64::from).collect()).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.to_vec(), vec![22.0, 28.0, 49.0, 64.0]);
    }

    #[test]
    fn inner_dim_mismatch_reports_both_shapes() {
        let a = Tensor::<f64>::param(&[2, 3], vec![0.0; 6]).unwrap();
        let b = Tensor::<f64>::param(&[2, 2], vec![0.0; 4]).unwrap();
        match a.matmul(&b) {
            Err(Error::ShapeMismatch { lhs, rhs, .. }) => {
                assert_eq!(lhs, vec![2, 3]);
                assert_eq!(rhs, vec![2, 2]);
            }
            other => panic!("expected shape mismatch, got {other:?}"),
        }
    }

    #[test]
    fn batched_multiplies_slice_by_slice() {
        let a = Tensor::<f64>::param(&[2, 2, 2], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let b = Tensor::<f64>::param(&[2, 2, 2], vec![1., 0., 0., 1., 2., 0., 0., 2.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 2]);
        assert_eq!(c.to_vec(), vec![1., 2., 3., 4., 10., 12., 14., 16.]);
    }

    #[test]
    fn broadcast_shares_rhs_across_batches() {
        let a = Tensor::<f64>::param(&[2, 2, 2], vec![1., 2., 3., 4., 5., 6., 7., 8.]).unwrap();
        let b = Tensor::<f64>::param(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        let c = a.matmul(&b).unwrap();
        assert_eq!(c.shape(), &[2, 2, 2]);
        assert_eq!(c.to_vec(), a.to_vec());
        // Gradient of the shared rhs accumulates over both batches:
        // dB = sum_batch A^T @ dY with dY = ones.
        c.sum().backward().unwrap();
        assert_eq!(b.grad().unwrap(), vec![16.0, 16.0, 20.0, 20.0]);
    }

    #[test]
    fn gradients_match_hand_derivation() {
        // y = a @ b, loss = sum(y): da = ones @ b^T, db = a^T @ ones.
        let a = Tensor::<f64>::param(&[2, 2], vec![1., 2., 3., 4.]).unwrap();
        let b = Tensor::<f64>::param(&[2, 2], vec![5., 6., 7., 8.]).unwrap();
        a.matmul(&b).unwrap().sum().backward().unwrap();
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    fn incompatible_batch_dims_rejected() {
        let a = Tensor::<f64>::param(&[2, 2, 2], vec![0.0; 8]).unwrap();
        let b = Tensor::<f64>::param(&[3, 2, 2], vec![0.0; 12]).unwrap();
        assert!(a.matmul(&b).is_err());
    }
}
