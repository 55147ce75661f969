//! Noise predictors `eps(x_t, t)` and the one-shot clean-data estimate.

mod gmm;
mod neural;
mod train;

pub(crate) use gmm::nearest_mean;
pub use gmm::GaussianMixture;
pub use neural::{time_embedding, Architecture, Example, NeuralDenoiser, CHECKPOINT_MAGIC};
pub use train::{grad_check, grad_check_against, make_batch, train_step, Adam};

use crate::error::{Error, Result};
use crate::schedule::Schedule;
use crate::Tensor;

/// Lower bound applied to `1 - abar_t` before dividing by its square root.
pub const NOISE_FLOOR: f64 = 1e-12;

/// Anything that predicts the noise in `x_t`.
#[derive(Debug, Clone, PartialEq)]
pub enum DenoiserModel {
    /// Bayes-optimal predictor for a known mixture.
    AnalyticGmm(GaussianMixture),
    Neural(NeuralDenoiser),
}

impl DenoiserModel {
    pub fn data_shape(&self) -> Vec<usize> {
        match self {
            DenoiserModel::AnalyticGmm(mix) => mix.shape().to_vec(),
            DenoiserModel::Neural(net) => net.data_shape(),
        }
    }

    fn check_input(&self, x_t: &Tensor, t: usize, sched: &Schedule) -> Result<()> {
        sched.check_step(t)?;
        let shape = self.data_shape();
        if x_t.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: x_t.shape().to_vec(),
            });
        }
        Ok(())
    }

    pub fn eps_predict(&self, x_t: &Tensor, t: usize, sched: &Schedule) -> Result<Tensor> {
        self.check_input(x_t, t, sched)?;
        match self {
            DenoiserModel::AnalyticGmm(mix) => {
                let abar = sched.abar(t);
                let flat = x_t.as_standard_layout();
                let flat = flat.as_slice().expect("standard layout");
                let x0 = mix.posterior_mean(flat, abar)?;
                let (root, noise) = (abar.sqrt(), (1.0 - abar).max(NOISE_FLOOR).sqrt());
                let eps = flat.iter().zip(&x0).map(|(x, m)| (x - root * m) / noise).collect();
                Ok(Tensor::from_shape_vec(x_t.raw_dim(), eps).expect("same length"))
            }
            DenoiserModel::Neural(net) => net.predict(x_t, t),
        }
    }

    /// `(x_t - sqrt(1 - abar_t) eps) / sqrt(abar_t)`.
    pub fn predict_x0(&self, x_t: &Tensor, t: usize, sched: &Schedule) -> Result<Tensor> {
        let eps = self.eps_predict(x_t, t, sched)?;
        Ok(x0_from_eps(x_t, &eps, sched.abar(t)))
    }
}

pub fn x0_from_eps(x_t: &Tensor, eps: &Tensor, abar: f64) -> Tensor {
    let (root, noise) = (abar.sqrt(), (1.0 - abar).max(NOISE_FLOOR).sqrt());
    let mut out = x_t.clone();
    out.zip_mut_with(eps, |x, e| *x = (*x - noise * e) / root);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schedule::ScheduleConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn sched() -> Schedule {
        ScheduleConfig::desk(200).build().unwrap()
    }

    fn randn(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let n = shape.iter().product();
        Tensor::from_shape_vec(shape.to_vec(), (0..n).map(|_| StandardNormal.sample(rng)).collect()).unwrap()
    }

    #[test]
    fn point_mass_eps_closed_form() {
        let mu = vec![0.5, -1.0];
        let mix = GaussianMixture::new(vec![1.0], vec![mu.clone()], vec![vec![0.0, 0.0]]).unwrap();
        let model = DenoiserModel::AnalyticGmm(mix);
        let s = sched();
        let x = Tensor::from_shape_vec(vec![2], vec![1.0, 2.0]).unwrap();
        for t in [1, 17, 200] {
            let eps = model.eps_predict(&x, t, &s).unwrap();
            let a = s.abar(t);
            for d in 0..2 {
                let want = (x[d] - a.sqrt() * mu[d]) / (1.0 - a).sqrt();
                assert!((eps[d] - want).abs() < 1e-9 * want.abs().max(1.0));
            }
        }
    }

    #[test]
    fn symmetric_mixture_has_zero_eps_at_origin() {
        let mix =
            GaussianMixture::new(vec![0.5, 0.5], vec![vec![2.0], vec![-2.0]], vec![vec![0.3], vec![0.3]]).unwrap();
        let model = DenoiserModel::AnalyticGmm(mix);
        let eps = model.eps_predict(&Tensor::zeros(vec![1]), 40, &sched()).unwrap();
        assert_eq!(eps[0], 0.0);
    }

    #[test]
    fn analytic_x0_is_posterior_mean() {
        let mix = GaussianMixture::new(
            vec![0.2, 0.8],
            vec![vec![1.0, -1.0, 0.0], vec![-0.5, 2.0, 1.0]],
            vec![vec![0.1, 0.2, 0.3], vec![0.5, 0.05, 0.0]],
        )
        .unwrap();
        let model = DenoiserModel::AnalyticGmm(mix.clone());
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for t in [1, 2, 50, 199, 200] {
            let x = randn(&[3], &mut rng);
            let got = model.predict_x0(&x, t, &s).unwrap();
            let want = mix.posterior_mean(x.as_slice().unwrap(), s.abar(t)).unwrap();
            for (g, w) in got.iter().zip(&want) {
                assert!((g - w).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_eps_model_rescales() {
        let arch = Architecture::Mlp {
            dim: 3,
            hidden: 4,
            embed: 2,
        };
        let model = DenoiserModel::Neural(NeuralDenoiser::zeros(arch).unwrap());
        let s = sched();
        let x = Tensor::from_shape_vec(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let x0 = model.predict_x0(&x, 30, &s).unwrap();
        for (a, b) in x0.iter().zip(&x) {
            assert!((a - b / s.abar(30).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn neural_round_trip_identity() {
        let arch = Architecture::Conv {
            channels: 1,
            height: 6,
            width: 6,
            hidden: 4,
            embed: 4,
        };
        let model = DenoiserModel::Neural(NeuralDenoiser::new(arch, 8).unwrap());
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for t in [1, 100, 200] {
            let x = randn(&[1, 6, 6], &mut rng);
            let x0 = model.predict_x0(&x, t, &s).unwrap();
            let eps = model.eps_predict(&x, t, &s).unwrap();
            let a = s.abar(t);
            let back = &x0 * a.sqrt() + &eps * (1.0 - a).sqrt();
            for (p, q) in back.iter().zip(&x) {
                assert!((p - q).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let arch = Architecture::Mlp {
            dim: 2,
            hidden: 4,
            embed: 2,
        };
        let model = DenoiserModel::Neural(NeuralDenoiser::zeros(arch).unwrap());
        let s = sched();
        let x = Tensor::zeros(vec![2]);
        assert!(matches!(
            model.eps_predict(&x, 0, &s),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(matches!(
            model.eps_predict(&x, 201, &s),
            Err(Error::StepOutOfRange { .. })
        ));
        assert!(model.eps_predict(&Tensor::zeros(vec![3]), 1, &s).is_err());
    }

    // The Bayes predictor beats every constant predictor in mean squared error.
    #[test]
    fn analytic_eps_is_optimal() {
        let mix = GaussianMixture::new(
            vec![0.4, 0.6],
            vec![vec![-1.5, 0.5], vec![1.0, -1.0]],
            vec![vec![0.2, 0.1], vec![0.3, 0.4]],
        )
        .unwrap();
        let model = DenoiserModel::AnalyticGmm(mix.clone());
        let s = sched();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for t in [5, 60, 150] {
            let a = s.abar(t);
            let (mut opt, mut zero) = (0.0, 0.0);
            let mut eps_sum = [0.0; 2];
            let mut eps_sq = 0.0;
            let n = 10_000;
            for _ in 0..n {
                let (_, x0) = mix.sample(&mut rng);
                let eps = randn(&[2], &mut rng);
                let x_t = &x0 * a.sqrt() + &eps * (1.0 - a).sqrt();
                let pred = model.eps_predict(&x_t, t, &s).unwrap();
                opt += (&pred - &eps).mapv(|v| v * v).sum();
                zero += eps.mapv(|v| v * v).sum();
                eps_sum[0] += eps[0];
                eps_sum[1] += eps[1];
                eps_sq += eps.mapv(|v| v * v).sum();
            }
            // Best constant predictor is the sample mean; its MSE is the
            // total variance.
            let best_const = eps_sq - (eps_sum[0].powi(2) + eps_sum[1].powi(2)) / n as f64;
            assert!(opt <= best_const, "t={t}: {opt} vs {best_const}");
            assert!(opt < zero);
        }
    }
}
