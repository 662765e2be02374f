//! Full reductions to a scalar. Losses are means over every element, so
//! axis-wise reductions are not needed; the normalization ops carry their
//! own internal statistics.

use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Tensor<T> {
    /// Sum of all elements as a `[1]` tensor.
    pub fn sum(&self) -> Tensor<T> {
        let total = self.data().iter().copied().sum();
        let a = self.clone();
        let n = self.numel();
        Tensor::from_op(vec![1], vec![total], vec![self.clone()], move |dy| {
            a.add_to_grad(&vec![dy[0]; n]);
        })
    }

    /// Mean of all elements as a `[1]` tensor.
    pub fn mean(&self) -> Tensor<T> {
        let n = self.numel();
        let inv = T::from_f64_c(1.0 / n as f64);
        let total: T = self.data().iter().copied().sum();
        let a = self.clone();
        Tensor::from_op(vec![1], vec![total * inv], vec![self.clone()], move |dy| {
            a.add_to_grad(&vec![dy[0] * inv; n]);
        })
    }
}
