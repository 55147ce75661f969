//! Noise-prediction training with Adam, plus a finite-difference gradient check.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::neural::{Example, NeuralDenoiser};
use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(param_count: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn update(&mut self, params: &mut [f64], grad: &[f64]) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step as i32);
        let c2 = 1.0 - self.beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grad).zip(&mut self.m).zip(&mut self.v) {
            *m = self.beta1 * *m + (1.0 - self.beta1) * g;
            *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
            *p -= self.lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
        }
    }
}

/// Builds one batch of `(x_t, t, eps)` triples: `t` uniform on `1..=T`,
/// `eps ~ N(0, I)`, `x_t` from the closed-form forward process.
pub fn make_batch(x0: &[Tensor], sched: &Schedule, seed: u64) -> Vec<Example> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    x0.iter()
        .map(|x| {
            let t = rng.random_range(1..=sched.steps());
            let (a, b) = (sched.abar(t).sqrt(), (1.0 - sched.abar(t)).sqrt());
            let eps: Vec<f64> = (0..x.len()).map(|_| StandardNormal.sample(&mut rng)).collect();
            let x_t = x.iter().zip(&eps).map(|(x, e)| a * x + b * e).collect();
            Example { x_t, t, eps }
        })
        .collect()
}

/// One Adam step on the noise-prediction MSE. Returns the pre-update loss.
pub fn train_step(net: &mut NeuralDenoiser, opt: &mut Adam, x0: &[Tensor], sched: &Schedule, seed: u64) -> Result<f64> {
    if x0.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let batch = make_batch(x0, sched, seed);
    let (loss, grad) = net.loss_and_grad(&batch);
    if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFiniteLoss {
            step: opt.steps_taken() as usize,
        });
    }
    opt.update(net.params_mut(), &grad);
    Ok(loss)
}

/// Worst relative error between backpropagated gradients and central
/// differences with step `1e-4`.
pub fn grad_check(net: &NeuralDenoiser, probe: &[Example]) -> f64 {
    let (_, analytic) = net.loss_and_grad(probe);
    grad_check_against(net, probe, &analytic)
}

/// Compares a supplied gradient vector against central differences.
///
/// Relative error is `|a - n| / max(|a|, |n|, 1e-6)`; the floor keeps
/// parameters with vanishing gradients from dividing by zero.
pub fn grad_check_against(net: &NeuralDenoiser, probe: &[Example], analytic: &[f64]) -> f64 {
    const STEP: f64 = 1e-4;
    let mut probe_net = net.clone();
    let mut worst = 0.0f64;
    for (i, &a) in analytic.iter().enumerate() {
        let orig = probe_net.params()[i];
        probe_net.params_mut()[i] = orig + STEP;
        let up = probe_net.loss(probe);
        probe_net.params_mut()[i] = orig - STEP;
        let down = probe_net.loss(probe);
        probe_net.params_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::denoise::neural::Architecture;
    use crate::schedule::ScheduleConfig;

    fn probe(arch: &Architecture, n: usize, seed: u64) -> Vec<Example> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = arch.data_len();
        (0..n)
            .map(|_| Example {
                x_t: (0..d).map(|_| StandardNormal.sample(&mut rng)).collect(),
                t: rng.random_range(1..=200),
                eps: (0..d).map(|_| StandardNormal.sample(&mut rng)).collect(),
            })
            .collect()
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut opt = Adam::new(2, 1e-3);
        let mut p = vec![1.0, -1.0];
        opt.update(&mut p, &[0.5, -3.0]);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-9);
        assert!((p[1] - (-1.0 + 1e-3)).abs() < 1e-9);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mlp = Architecture::Mlp {
            dim: 2,
            hidden: 12,
            embed: 4,
        };
        let conv = Architecture::Conv {
            channels: 1,
            height: 4,
            width: 4,
            hidden: 4,
            embed: 2,
        };
        for arch in [mlp, conv] {
            assert!(arch.param_count() <= 1000);
            let net = NeuralDenoiser::new(arch, 21).unwrap();
            let batch = probe(&arch, 3, 22);
            let err = grad_check(&net, &batch);
            assert!(err < 1e-4, "{arch:?}: {err}");
        }
    }

    #[test]
    fn perturbed_gradient_fails_check() {
        let arch = Architecture::Mlp {
            dim: 2,
            hidden: 6,
            embed: 2,
        };
        let net = NeuralDenoiser::new(arch, 4).unwrap();
        let batch = probe(&arch, 2, 5);
        let (_, mut grad) = net.loss_and_grad(&batch);
        grad[3] += 0.05 * (1.0 + grad[3].abs());
        assert!(grad_check_against(&net, &batch, &grad) > 1e-2);
    }

    #[test]
    fn zero_network_initial_loss_is_unit() {
        let arch = Architecture::Mlp {
            dim: 2,
            hidden: 8,
            embed: 4,
        };
        let net = NeuralDenoiser::zeros(arch).unwrap();
        let sched = ScheduleConfig::desk(200).build().unwrap();
        let x0: Vec<Tensor> = (0..1024)
            .map(|i| Tensor::from_elem(vec![2], (i % 7) as f64 - 3.0))
            .collect();
        let batch = make_batch(&x0, &sched, 99);
        let loss = net.loss(&batch);
        assert!((loss - 1.0).abs() < 0.1, "{loss}");
    }

    #[test]
    fn identical_calls_are_bit_identical() {
        let arch = Architecture::Mlp {
            dim: 2,
            hidden: 8,
            embed: 4,
        };
        let sched = ScheduleConfig::desk(50).build().unwrap();
        let x0: Vec<Tensor> = (0..16).map(|i| Tensor::from_elem(vec![2], i as f64 * 0.1)).collect();
        let run = || {
            let mut net = NeuralDenoiser::new(arch, 1).unwrap();
            let mut opt = Adam::new(arch.param_count(), 1e-3);
            let loss = train_step(&mut net, &mut opt, &x0, &sched, 42).unwrap();
            (net, opt, loss.to_bits())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn rejects_empty_and_non_finite() {
        let arch = Architecture::Mlp {
            dim: 2,
            hidden: 4,
            embed: 2,
        };
        let sched = ScheduleConfig::desk(50).build().unwrap();
        let mut net = NeuralDenoiser::new(arch, 1).unwrap();
        let mut opt = Adam::new(arch.param_count(), 1e-3);
        assert!(train_step(&mut net, &mut opt, &[], &sched, 0).is_err());
        let bad = vec![Tensor::from_elem(vec![2], f64::NAN)];
        assert!(matches!(
            train_step(&mut net, &mut opt, &bad, &sched, 0),
            Err(Error::NonFiniteLoss { .. })
        ));
    }
}
