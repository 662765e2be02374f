//! Adam and the reduce-on-plateau learning-rate schedule.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lr < 0.0 || !self.lr.is_finite() {
            return Err(Error::Config(format!("optimizer.lr must be >= 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("optimizer.{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps <= 0.0 {
            return Err(Error::Config(format!("optimizer.eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

struct Slot<T: Scalar> {
    name: String,
    param: Tensor<T>,
    m: Vec<T>,
    v: Vec<T>,
}

/// Standard Adam with bias correction. Moments live outside the autodiff
/// graph; the parameter write goes through `update_data` so the shared
/// handles held by the model see the new values.
pub struct Adam<T: Scalar> {
    cfg: AdamConfig,
    t: u64,
    slots: Vec<Slot<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &[(String, Tensor<T>)], cfg: AdamConfig) -> Result<Self> {
        cfg.validate()?;
        let slots = params
            .iter()
            .map(|(name, p)| Slot {
                name: name.clone(),
                param: p.clone(),
                m: vec![T::zero(); p.numel()],
                v: vec![T::zero(); p.numel()],
            })
            .collect();
        Ok(Adam { cfg, t: 0, slots })
    }

    pub fn lr(&self) -> f64 {
        self.cfg.lr
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One update from the gradients currently stored on the parameters.
    /// A parameter with no gradient (unreached by the last backward) is
    /// treated as zero-gradient; a non-finite gradient aborts by name.
    pub fn step(&mut self) -> Result<()> {
        self.t += 1;
        let b1 = T::from_f64_c(self.cfg.beta1);
        let b2 = T::from_f64_c(self.cfg.beta2);
        let one = T::one();
        let c1 = one - b1.powi(self.t as i32);
        let c2 = one - b2.powi(self.t as i32);
        let lr = T::from_f64_c(self.cfg.lr);
        let eps = T::from_f64_c(self.cfg.eps);
        for slot in &mut self.slots {
            let grad = match slot.param.grad() {
                Some(g) => g,
                None => vec![T::zero(); slot.m.len()],
            };
            if let Some(bad) = grad.iter().find(|g| !g.is_finite()) {
                return Err(Error::Numeric(format!(
                    "non-finite gradient {bad} in parameter {}",
                    slot.name
                )));
            }
            for (i, g) in grad.iter().enumerate() {
                slot.m[i] = b1 * slot.m[i] + (one - b1) * *g;
                slot.v[i] = b2 * slot.v[i] + (one - b2) * *g * *g;
            }
            // lr == 0 must leave parameter bits untouched, so skip the
            // write entirely (a -0.0 parameter would otherwise flip sign).
            if self.cfg.lr != 0.0 {
                slot.param.update_data(|data| {
                    for (i, d) in data.iter_mut().enumerate() {
                        let mhat = slot.m[i] / c1;
                        let vhat = slot.v[i] / c2;
                        *d = *d - lr * mhat / (vhat.sqrt() + eps);
                    }
                });
            }
        }
        Ok(())
    }
}

/// Reduce-on-plateau: after `patience` epochs without the monitored loss
/// improving by at least `threshold`, multiply the rate by `factor`. The
/// rate never increases and never drops below `min_lr`.
#[derive(Clone, Debug)]
pub struct PlateauScheduler {
    lr: f64,
    patience: u32,
    factor: f64,
    min_lr: f64,
    threshold: f64,
    best: f64,
    since: u32,
}

impl PlateauScheduler {
    pub fn new(initial_lr: f64, patience: u32, factor: f64, min_lr: f64) -> Self {
        PlateauScheduler {
            lr: initial_lr,
            patience,
            factor,
            min_lr,
            threshold: 1e-6,
            best: f64::INFINITY,
            since: 0,
        }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    /// Call once per epoch with the validation loss; returns the rate to
    /// use from the next epoch on.
    pub fn step(&mut self, val_loss: f64) -> f64 {
        if self.best - val_loss >= self.threshold {
            self.best = val_loss;
            self.since = 0;
            return self.lr;
        }
        self.since += 1;
        if self.since >= self.patience {
            self.since = 0;
            self.lr = (self.lr * self.factor).max(self.min_lr).min(self.lr);
        }
        self.lr
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor<f64> {
        Tensor::param(&[1], vec![v]).unwrap()
    }

    fn named(p: &Tensor<f64>) -> Vec<(String, Tensor<f64>)> {
        vec![("theta".to_string(), p.clone())]
    }

    #[test]
    fn zero_gradient_leaves_parameters_alone() {
        let p = Tensor::param(&[3], vec![0.5, -1.5, 2.0]).unwrap();
        let mut adam = Adam::new(&[("p".into(), p.clone())], AdamConfig::default()).unwrap();
        p.zero_grad();
        let loss = p.mul_scalar(0.0).sum();
        loss.backward().unwrap();
        adam.step().unwrap();
        assert_eq!(p.to_vec(), vec![0.5, -1.5, 2.0]);
    }

    #[test]
    fn first_step_moves_by_about_lr_against_the_gradient() {
        let p = scalar_param(1.0);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut adam = Adam::new(&named(&p), cfg).unwrap();
        p.zero_grad();
        let loss = p.mul_scalar(2.5).sum();
        loss.backward().unwrap();
        adam.step().unwrap();
        let got = p.item();
        assert!((got - 0.9).abs() < 1e-6, "got {got}");
    }

    #[test]
    fn five_steps_match_a_scalar_hand_simulation() {
        let p = scalar_param(1.0);
        let cfg = AdamConfig { lr: 0.1, ..AdamConfig::default() };
        let mut adam = Adam::new(&named(&p), cfg).unwrap();

        let (mut theta, mut m, mut v) = (1.0f64, 0.0f64, 0.0f64);
        for t in 1..=5u32 {
            let g = 2.0 * theta;
            m = 0.9 * m + 0.1 * g;
            v = 0.999 * v + 0.001 * g * g;
            let mhat = m / (1.0 - 0.9f64.powi(t as i32));
            let vhat = v / (1.0 - 0.999f64.powi(t as i32));
            theta -= 0.1 * mhat / (vhat.sqrt() + 1e-8);

            p.zero_grad();
            let loss = p.mul(&p).unwrap().sum();
            loss.backward().unwrap();
            adam.step().unwrap();
            assert!((p.item() - theta).abs() < 1e-12, "step {t}: {} vs {theta}", p.item());
        }
    }

    #[test]
    fn nan_gradient_aborts_naming_the_parameter() {
        let p = scalar_param(1.0);
        let mut adam = Adam::new(&named(&p), AdamConfig::default()).unwrap();
        p.zero_grad();
        p.add_to_grad(&[f64::NAN]);
        let err = adam.step().unwrap_err();
        assert!(matches!(err, Error::Numeric(ref m) if m.contains("theta")));
    }

    #[test]
    fn zero_lr_is_a_bitwise_no_op() {
        let p: Tensor<f64> = Tensor::param(&[4], vec![0.1, -0.0, 3.25, -7.5]).unwrap();
        let bits: Vec<u64> = p.to_vec().iter().map(|x| x.to_bits()).collect();
        let cfg = AdamConfig { lr: 0.0, ..AdamConfig::default() };
        let mut adam = Adam::new(&[("p".into(), p.clone())], cfg).unwrap();
        p.zero_grad();
        let loss = p.mul(&p).unwrap().sum();
        loss.backward().unwrap();
        adam.step().unwrap();
        let after: Vec<u64> = p.to_vec().iter().map(|x| x.to_bits()).collect();
        assert_eq!(bits, after);
    }

    #[test]
    fn plateau_walkthrough_drops_after_fifth_epoch() {
        let mut sched = PlateauScheduler::new(3e-4, 3, 0.1, 1e-6);
        let losses = [1.0, 0.9, 0.91, 0.92, 0.93];
        let mut lrs = Vec::new();
        for l in losses {
            lrs.push(sched.step(l));
        }
        assert_eq!(&lrs[..4], &[3e-4; 4]);
        assert_eq!(lrs[4], 3e-4 * 0.1);
    }

    #[test]
    fn improving_losses_never_touch_the_rate() {
        let mut sched = PlateauScheduler::new(3e-4, 3, 0.1, 1e-6);
        for i in 0..50 {
            let lr = sched.step(1.0 - i as f64 * 0.01);
            assert_eq!(lr, 3e-4);
        }
    }

    #[test]
    fn rate_is_floored_and_never_increases() {
        let mut sched = PlateauScheduler::new(3e-4, 1, 0.1, 1e-6);
        let mut last = sched.lr();
        for _ in 0..20 {
            let lr = sched.step(5.0);
            assert!(lr <= last);
            last = lr;
        }
        assert_eq!(last, 1e-6);

        // An initial rate already below the floor must not be pulled up.
        let mut tiny = PlateauScheduler::new(1e-8, 1, 0.1, 1e-6);
        for _ in 0..5 {
            assert!(tiny.step(5.0) <= 1e-8);
        }
    }

    #[test]
    fn adam_config_validation() {
        assert!(AdamConfig::default().validate().is_ok());
        assert!(AdamConfig { lr: -1.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { beta1: 1.0, ..AdamConfig::default() }.validate().is_err());
        assert!(AdamConfig { eps: 0.0, ..AdamConfig::default() }.validate().is_err());
    }
}
