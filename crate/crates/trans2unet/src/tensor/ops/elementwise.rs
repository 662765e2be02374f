//! Pointwise ops: arithmetic on matching shapes, scalar variants, and the
//! nonlinearities used by the network.

use crate::error::{Error, Result};
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::Mode;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            op,
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(())
}

impl<T: Scalar> Tensor<T> {
    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("add", self, rhs)?;
        let out = {
            let (a, b) = (self.data(), rhs.data());
            a.iter().zip(b.iter()).map(|(&x, &y)| x + y).collect()
        };
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            move |dy| {
                a.add_to_grad(dy);
                b.add_to_grad(dy);
            },
        ))
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("sub", self, rhs)?;
        let out = {
            let (a, b) = (self.data(), rhs.data());
            a.iter().zip(b.iter()).map(|(&x, &y)| x - y).collect()
        };
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            move |dy| {
                a.add_to_grad(dy);
                if b.requires_grad() {
                    let neg: Vec<T> = dy.iter().map(|&g| -g).collect();
                    b.add_to_grad(&neg);
                }
            },
        ))
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("mul", self, rhs)?;
        let out = {
            let (a, b) = (self.data(), rhs.data());
            a.iter().zip(b.iter()).map(|(&x, &y)| x * y).collect()
        };
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            move |dy| {
                // Guards are dropped before each accumulate so mul(x, x)
                // never reads and writes the same cell at once.
                let da: Vec<T> = {
                    let bd = b.data();
                    dy.iter().zip(bd.iter()).map(|(&g, &v)| g * v).collect()
                };
                let db: Vec<T> = {
                    let ad = a.data();
                    dy.iter().zip(ad.iter()).map(|(&g, &v)| g * v).collect()
                };
                a.add_to_grad(&da);
                b.add_to_grad(&db);
            },
        ))
    }

    pub fn div(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        same_shape("div", self, rhs)?;
        let out = {
            let (a, b) = (self.data(), rhs.data());
            a.iter().zip(b.iter()).map(|(&x, &y)| x / y).collect()
        };
        let (a, b) = (self.clone(), rhs.clone());
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            move |dy| {
                let (da, db) = {
                    let (ad, bd) = (a.data(), b.data());
                    let da: Vec<T> =
                        dy.iter().zip(bd.iter()).map(|(&g, &v)| g / v).collect();
                    let db: Vec<T> = dy
                        .iter()
                        .zip(ad.iter().zip(bd.iter()))
                        .map(|(&g, (&x, &y))| -g * x / (y * y))
                        .collect();
                    (da, db)
                };
                a.add_to_grad(&da);
                b.add_to_grad(&db);
            },
        ))
    }

    pub fn add_scalar(&self, c: T) -> Tensor<T> {
        let out = self.data().iter().map(|&x| x + c).collect();
        let a = self.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |dy| {
            a.add_to_grad(dy);
        })
    }

    pub fn mul_scalar(&self, c: T) -> Tensor<T> {
        let out = self.data().iter().map(|&x| x * c).collect();
        let a = self.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |dy| {
            let da: Vec<T> = dy.iter().map(|&g| g * c).collect();
            a.add_to_grad(&da);
        })
    }

    /// `c - x`, used to form `1 - p` terms without a filled constant.
    pub fn rsub_scalar(&self, c: T) -> Tensor<T> {
        let out = self.data().iter().map(|&x| c - x).collect();
        let a = self.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |dy| {
            let da: Vec<T> = dy.iter().map(|&g| -g).collect();
            a.add_to_grad(&da);
        })
    }

    /// Clamps to `[lo, hi]`. Gradient passes through wherever the input
    /// already lies inside the closed interval and is zero outside.
    pub fn clamp(&self, lo: T, hi: T) -> Tensor<T> {
        let (out, pass): (Vec<T>, Vec<bool>) = self
            .data()
            .iter()
            .map(|&x| {
                let y = if x < lo {
                    lo
                } else if x > hi {
                    hi
                } else {
                    x
                };
                (y, x >= lo && x <= hi)
            })
            .unzip();
        let a = self.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |dy| {
            let da: Vec<T> = dy
                .iter()
                .zip(pass.iter())
                .map(|(&g, &p)| if p { g } else { T::zero() })
                .collect();
            a.add_to_grad(&da);
        })
    }

    /// Natural log. Callers clamp away from zero first; values at or below
    /// zero produce the usual non-finite results.
    pub fn log(&self) -> Tensor<T> {
        let out = self.data().iter().map(|&x| x.ln()).collect();
        let a = self.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |dy| {
            let da: Vec<T> = {
                let ad = a.data();
                dy.iter().zip(ad.iter()).map(|(&g, &x)| g / x).collect()
            };
            a.add_to_grad(&da);
        })
    }

    /// ReLU with gradient zero at exactly zero.
    pub fn relu(&self) -> Tensor<T> {
        let out = self
            .data()
            .iter()
            .map(|&x| if x > T::zero() { x } else { T::zero() })
            .collect();
        let a = self.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |dy| {
            let da: Vec<T> = {
                let ad = a.data();
                dy.iter()
                    .zip(ad.iter())
                    .map(|(&g, &x)| if x > T::zero() { g } else { T::zero() })
                    .collect()
            };
            a.add_to_grad(&da);
        })
    }

    /// GELU in the tanh approximation:
    /// `0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))`.
    pub fn gelu(&self) -> Tensor<T> {
        let k = T::from_f64_c(0.797_884_560_802_865_4); // sqrt(2/pi)
        let c3 = T::from_f64_c(0.044715);
        let half = T::from_f64_c(0.5);
        let out = self
            .data()
            .iter()
            .map(|&x| {
                let t = (k * (x + c3 * x * x * x)).tanh();
                half * x * (T::one() + t)
            })
            .collect();
        let a = self.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |dy| {
            let da: Vec<T> = {
                let ad = a.data();
                dy.iter()
                    .zip(ad.iter())
                    .map(|(&g, &x)| {
                        let t = (k * (x + c3 * x * x * x)).tanh();
                        let three = T::from_f64_c(3.0);
                        let inner = k * (T::one() + three * c3 * x * x);
                        let d = half * (T::one() + t)
                            + half * x * (T::one() - t * t) * inner;
                        g * d
                    })
                    .collect()
            };
            a.add_to_grad(&da);
        })
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        let out: Vec<T> = self
            .data()
            .iter()
            .map(|&x| {
                // Branch on sign so neither exp overflows.
                if x >= T::zero() {
                    T::one() / (T::one() + (-x).exp())
                } else {
                    let e = x.exp();
                    e / (T::one() + e)
                }
            })
            .collect();
        let a = self.clone();
        let saved = out.clone();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |dy| {
            let da: Vec<T> = dy
                .iter()
                .zip(saved.iter())
                .map(|(&g, &s)| g * s * (T::one() - s))
                .collect();
            a.add_to_grad(&da);
        })
    }

    /// Inverted dropout. In train mode each element is zeroed with
    /// probability `p` and survivors are scaled by `1/(1-p)`; eval mode is
    /// the identity (the returned handle is the input).
    pub fn dropout(&self, p: f64, mode: Mode, rng: &mut SeededRng) -> Result<Tensor<T>> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidArg {
                op: "dropout",
                msg: format!("rate must lie in [0, 1), got {p}"),
            });
        }
        if mode == Mode::Eval || p == 0.0 {
            return Ok(self.clone());
        }
        let scale = T::from_f64_c(1.0 / (1.0 - p));
        let mask: Vec<T> = (0..self.numel())
            .map(|_| if rng.coin(p) { T::zero() } else { scale })
            .collect();
        let out = {
            let ad = self.data();
            ad.iter().zip(mask.iter()).map(|(&x, &m)| x * m).collect()
        };
        let a = self.clone();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            move |dy| {
                let da: Vec<T> =
                    dy.iter().zip(mask.iter()).map(|(&g, &m)| g * m).collect();
                a.add_to_grad(&da);
            },
        ))
    }
}
