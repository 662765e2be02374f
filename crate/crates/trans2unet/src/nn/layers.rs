//! Primitive layers: convolution, linear projection, the two norms, and
//! the conv -> BN -> ReLU block everything convolutional is built from.

use crate::error::Result;
use crate::rng::SeededRng;
use crate::scalar::Scalar;
use crate::tensor::ops::{Mode, Padding};
use crate::tensor::Tensor;

use super::{kaiming_uniform, ones_param, trunc_normal, zeros_param, Registry};

pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    stride: usize,
    dilation: usize,
    padding: Padding,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        dilation: usize,
        padding: Padding,
        rng: &mut SeededRng,
    ) -> Self {
        let weight = kaiming_uniform(&[cout, cin, k, k], cin * k * k, rng);
        Conv2d {
            weight,
            bias: zeros_param(&[cout]),
            stride,
            dilation,
            padding,
        }
    }

    /// Transformer-side variant (patch projection): truncated-normal weights.
    pub fn new_trunc(
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        padding: Padding,
        rng: &mut SeededRng,
    ) -> Self {
        Conv2d {
            weight: trunc_normal(&[cout, cin, k, k], 0.02, rng),
            bias: zeros_param(&[cout]),
            stride,
            dilation: 1,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.conv2d(&self.weight, &self.bias, self.stride, self.dilation, self.padding)
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        reg.param(format!("{prefix}.weight"), &self.weight);
        reg.param(format!("{prefix}.bias"), &self.bias);
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

pub struct Linear<T: Scalar> {
    /// Stored `[in, out]` so tokens multiply on the right.
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(din: usize, dout: usize, rng: &mut SeededRng) -> Self {
        Linear {
            weight: trunc_normal(&[din, dout], 0.02, rng),
            bias: zeros_param(&[dout]),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.matmul(&self.weight)?.add_bias(&self.bias)
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        reg.param(format!("{prefix}.weight"), &self.weight);
        reg.param(format!("{prefix}.bias"), &self.bias);
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.numel()
    }
}

pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    momentum: f64,
    eps: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(c: usize) -> Self {
        BatchNorm2d {
            gamma: ones_param(&[c]),
            beta: zeros_param(&[c]),
            running_mean: Tensor::zeros(&[c]),
            running_var: Tensor::full(&[c], T::one()),
            // Desk-scale runs take few optimizer steps per epoch, so the
            // running statistics must track the batch statistics quickly for
            // eval-mode outputs to reflect the trained model.
            momentum: 0.3,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        x.batchnorm2d(
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            self.momentum,
            self.eps,
            mode,
        )
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        reg.param(format!("{prefix}.gamma"), &self.gamma);
        reg.param(format!("{prefix}.beta"), &self.beta);
        reg.state(format!("{prefix}.running_mean"), &self.running_mean);
        reg.state(format!("{prefix}.running_var"), &self.running_var);
    }

    pub fn param_count(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }
}

pub struct LayerNorm<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    eps: f64,
}

impl<T: Scalar> LayerNorm<T> {
    pub fn new(d: usize) -> Self {
        LayerNorm {
            gamma: ones_param(&[d]),
            beta: zeros_param(&[d]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        x.layernorm(&self.gamma, &self.beta, self.eps)
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        reg.param(format!("{prefix}.gamma"), &self.gamma);
        reg.param(format!("{prefix}.beta"), &self.beta);
    }

    pub fn param_count(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }
}

/// Conv (same padding, stride 1) -> optional BatchNorm -> ReLU.
pub struct ConvBlock<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: Option<BatchNorm2d<T>>,
}

impl<T: Scalar> ConvBlock<T> {
    pub fn new(
        cin: usize,
        cout: usize,
        k: usize,
        dilation: usize,
        use_bn: bool,
        rng: &mut SeededRng,
    ) -> Self {
        ConvBlock {
            conv: Conv2d::new(cin, cout, k, 1, dilation, Padding::Same, rng),
            bn: use_bn.then(|| BatchNorm2d::new(cout)),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let mut h = self.conv.forward(x)?;
        if let Some(bn) = &self.bn {
            h = bn.forward(&h, mode)?;
        }
        Ok(h.relu())
    }

    pub fn register(&self, prefix: &str, reg: &mut Registry<T>) {
        self.conv.register(&format!("{prefix}.conv"), reg);
        if let Some(bn) = &self.bn {
            bn.register(&format!("{prefix}.bn"), reg);
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.as_ref().map_or(0, |bn| bn.param_count())
    }
}
