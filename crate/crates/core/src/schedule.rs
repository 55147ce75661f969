//! Variance schedule and the closed-form forward (noising) process.
//!
//! All accessors speak in diffusion steps `t = 1..=T`. Index `0` is accepted
//! only by [`Schedule::abar`], where it denotes the clean data (`abar(0) = 1`).

use ndarray::{ArrayD, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tensor;

/// How the reverse-step noise scale is derived from the betas.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SigmaMode {
    /// `sigma_t^2 = beta_t`.
    Beta,
    /// `sigma_t^2 = beta_t (1 - abar_{t-1}) / (1 - abar_t)`.
    #[default]
    Posterior,
}

impl std::str::FromStr for SigmaMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(Self::Beta),
            "posterior" => Ok(Self::Posterior),
            other => Err(Error::InvalidSchedule(format!("unknown sigma mode {other:?}"))),
        }
    }
}

/// Parameters of a linear schedule. Serialized into run manifests.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScheduleConfig {
    pub steps: usize,
    pub beta_start: f64,
    pub beta_end: f64,
    pub sigma_mode: SigmaMode,
}

impl ScheduleConfig {
    /// The conventional 1000-step schedule, beta from 1e-4 to 0.02.
    pub const fn standard() -> Self {
        Self {
            steps: 1000,
            beta_start: 1e-4,
            beta_end: 0.02,
            sigma_mode: SigmaMode::Posterior,
        }
    }

    /// A short schedule for desk-scale runs.
    ///
    /// The beta endpoints are the standard ones scaled by `1000 / steps`, so
    /// that `abar_T` still reaches ~`e^-10` and `x_T ~ N(0, I)` is a faithful
    /// start state.
    pub fn desk(steps: usize) -> Self {
        let scale = 1000.0 / steps.max(1) as f64;
        Self {
            steps,
            beta_start: 1e-4 * scale,
            beta_end: (0.02 * scale).min(0.999),
            sigma_mode: SigmaMode::Posterior,
        }
    }

    pub fn build(&self) -> Result<Schedule> {
        Schedule::linear(self.steps, self.beta_start, self.beta_end, self.sigma_mode)
    }
}

impl Default for ScheduleConfig {
    fn default() -> Self {
        Self::desk(200)
    }
}

/// Immutable table of betas, alphas, cumulative alphas and reverse-step sigmas.
#[derive(Debug, Clone, PartialEq)]
pub struct Schedule {
    betas: Vec<f64>,
    alphas: Vec<f64>,
    abars: Vec<f64>,
    sigmas: Vec<f64>,
}

impl Schedule {
    /// Linear schedule with `betas[1] = beta_start` and `betas[T] = beta_end`.
    pub fn linear(steps: usize, beta_start: f64, beta_end: f64, mode: SigmaMode) -> Result<Self> {
        if steps == 0 {
            return Err(Error::InvalidSchedule("T must be at least 1".into()));
        }
        if !(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0) {
            return Err(Error::InvalidSchedule(format!(
                "need 0 < beta_start <= beta_end < 1, got {beta_start}..{beta_end}"
            )));
        }
        let betas = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_start
                } else {
                    beta_start + (beta_end - beta_start) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        Self::from_betas(betas, mode)
    }

    /// Builds a schedule from explicit betas (`betas[0]` is step `t = 1`).
    pub fn from_betas(betas: Vec<f64>, mode: SigmaMode) -> Result<Self> {
        if betas.is_empty() {
            return Err(Error::InvalidSchedule("T must be at least 1".into()));
        }
        if let Some(b) = betas.iter().find(|b| !(**b > 0.0 && **b < 1.0)) {
            return Err(Error::InvalidSchedule(format!("beta {b} outside (0, 1)")));
        }
        let alphas: Vec<f64> = betas.iter().map(|b| 1.0 - b).collect();
        let mut abars = Vec::with_capacity(alphas.len());
        let mut running = 1.0;
        for a in &alphas {
            running *= a;
            abars.push(running);
        }
        let sigmas = betas
            .iter()
            .enumerate()
            .map(|(i, &beta)| match (i, mode) {
                (0, _) => 0.0,
                (_, SigmaMode::Beta) => beta.sqrt(),
                (_, SigmaMode::Posterior) => ((1.0 - abars[i - 1]) / (1.0 - abars[i]) * beta).sqrt(),
            })
            .collect();
        Ok(Self {
            betas,
            alphas,
            abars,
            sigmas,
        })
    }

    /// Number of diffusion steps `T`.
    pub fn steps(&self) -> usize {
        self.betas.len()
    }

    pub fn check_step(&self, t: usize) -> Result<()> {
        if t == 0 || t > self.steps() {
            Err(Error::StepOutOfRange { t, max: self.steps() })
        } else {
            Ok(())
        }
    }

    pub fn beta(&self, t: usize) -> f64 {
        self.betas[t - 1]
    }

    pub fn alpha(&self, t: usize) -> f64 {
        self.alphas[t - 1]
    }

    /// Cumulative product of alphas; `abar(0) = 1`.
    pub fn abar(&self, t: usize) -> f64 {
        if t == 0 {
            1.0
        } else {
            self.abars[t - 1]
        }
    }

    pub fn sigma(&self, t: usize) -> f64 {
        self.sigmas[t - 1]
    }

    pub fn betas(&self) -> &[f64] {
        &self.betas
    }

    pub fn abars(&self) -> &[f64] {
        &self.abars
    }

    pub fn sigmas(&self) -> &[f64] {
        &self.sigmas
    }

    /// Draws `x_t ~ q(x_t | x_0)` using the supplied standard-normal `eps`.
    pub fn q_sample(&self, x0: &Tensor, t: usize, eps: &Tensor) -> Result<Tensor> {
        self.check_step(t)?;
        q_sample_abar(x0, self.abar(t), eps)
    }
}

/// `sqrt(abar) * x0 + sqrt(1 - abar) * eps`, elementwise.
pub fn q_sample_abar(x0: &Tensor, abar: f64, eps: &Tensor) -> Result<Tensor> {
    if x0.shape() != eps.shape() {
        return Err(Error::ShapeMismatch {
            expected: x0.shape().to_vec(),
            actual: eps.shape().to_vec(),
        });
    }
    let (a, b) = (abar.sqrt(), (1.0 - abar).max(0.0).sqrt());
    let mut out = ArrayD::zeros(x0.raw_dim());
    Zip::from(&mut out)
        .and(x0)
        .and(eps)
        .for_each(|o, &x, &e| *o = a * x + b * e);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr0, ArrayD, IxDyn};
    use num_rational::BigRational;
    use num_traits::{One, ToPrimitive};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    #[test]
    fn single_step_schedule() {
        let s = Schedule::linear(1, 0.1, 0.1, SigmaMode::Posterior).unwrap();
        assert_eq!(s.betas(), &[0.1]);
        assert!((s.abar(1) - 0.9).abs() < 1e-15);
        assert_eq!(s.sigmas(), &[0.0]);
    }

    #[test]
    fn constant_beta_product() {
        let s = Schedule::linear(2, 0.5, 0.5, SigmaMode::Beta).unwrap();
        assert_eq!(s.abars(), &[0.5, 0.25]);
        assert_eq!(s.sigma(1), 0.0);
        assert!((s.sigma(2) - 0.5f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(Schedule::linear(0, 0.1, 0.2, SigmaMode::Beta).is_err());
        assert!(Schedule::linear(10, 0.0, 0.2, SigmaMode::Beta).is_err());
        assert!(Schedule::linear(10, 0.3, 0.2, SigmaMode::Beta).is_err());
        assert!(Schedule::linear(10, 0.1, 1.0, SigmaMode::Beta).is_err());
        assert!(Schedule::from_betas(vec![0.1, 1.5], SigmaMode::Beta).is_err());
    }

    #[test]
    fn endpoint_interpolation() {
        let s = Schedule::linear(1000, 1e-4, 0.02, SigmaMode::Posterior).unwrap();
        assert_eq!(s.beta(1), 1e-4);
        assert!((s.beta(1000) - 0.02).abs() < 1e-17);
        assert!(s.betas().windows(2).all(|w| w[0] <= w[1]));
    }

    // Exact rational product of the same f64 alphas, rounded once at the end.
    #[test]
    fn abar_matches_exact_rational_product() {
        let s = Schedule::linear(1000, 1e-4, 0.02, SigmaMode::Posterior).unwrap();
        let mut exact = BigRational::one();
        for &beta in s.betas() {
            let alpha = BigRational::from_float(1.0 - beta).unwrap();
            exact *= alpha;
        }
        let oracle = exact.to_f64().unwrap();
        let rel = (s.abar(1000) - oracle).abs() / oracle;
        assert!(rel < 1e-10, "relative error {rel}");
    }

    #[test]
    fn schedule_invariants() {
        for mode in [SigmaMode::Beta, SigmaMode::Posterior] {
            let s = ScheduleConfig {
                sigma_mode: mode,
                ..ScheduleConfig::desk(200)
            }
            .build()
            .unwrap();
            assert_eq!(s.abar(1), s.alpha(1));
            assert_eq!(s.sigma(1), 0.0);
            for t in 1..=s.steps() {
                assert!(s.beta(t) > 0.0 && s.beta(t) < 1.0);
                assert!(s.abar(t) > 0.0 && s.abar(t) < 1.0);
                assert!(s.sigma(t).powi(2) <= s.beta(t) * (1.0 + 1e-12));
                if t >= 2 {
                    assert!(s.abar(t) < s.abar(t - 1));
                    assert_eq!(s.abar(t), s.abar(t - 1) * s.alpha(t));
                }
            }
        }
    }

    #[test]
    fn desk_schedule_reaches_noise() {
        let s = ScheduleConfig::desk(200).build().unwrap();
        assert!(s.abar(200) < 1e-4);
    }

    #[test]
    fn q_sample_noiseless_endpoint() {
        let x0 = ArrayD::from_shape_vec(IxDyn(&[3]), vec![1.0, -2.0, 0.5]).unwrap();
        let eps = ArrayD::from_elem(IxDyn(&[3]), 7.0);
        assert_eq!(q_sample_abar(&x0, 1.0, &eps).unwrap(), x0);
    }

    #[test]
    fn q_sample_hand_values() {
        let x0 = ArrayD::zeros(IxDyn(&[2, 2]));
        let eps = ArrayD::ones(IxDyn(&[2, 2]));
        let out = q_sample_abar(&x0, 0.25, &eps).unwrap();
        assert!(out.iter().all(|v| (v - 0.75f64.sqrt()).abs() < 1e-12));

        let x0 = arr0(2.0).into_dyn();
        let eps = arr0(1.0).into_dyn();
        let out = q_sample_abar(&x0, 0.25, &eps).unwrap();
        assert!((out[[]] - (1.0 + 0.75f64.sqrt())).abs() < 1e-12);
        assert!((out[[]] - 1.8660).abs() < 1e-4);
    }

    #[test]
    fn q_sample_errors() {
        let s = Schedule::linear(5, 0.1, 0.2, SigmaMode::Beta).unwrap();
        let x = ArrayD::zeros(IxDyn(&[2]));
        let e = ArrayD::zeros(IxDyn(&[3]));
        assert!(matches!(s.q_sample(&x, 1, &e), Err(Error::ShapeMismatch { .. })));
        assert!(matches!(s.q_sample(&x, 0, &x), Err(Error::StepOutOfRange { .. })));
        assert!(matches!(s.q_sample(&x, 6, &x), Err(Error::StepOutOfRange { .. })));
    }

    #[test]
    fn markov_chain_matches_closed_form() {
        let s = ScheduleConfig::desk(50).build().unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x0 = 1.5;
        let trials = 20_000;
        for t in [1, 10, 50] {
            let mut sum = 0.0;
            let mut sum_sq = 0.0;
            for _ in 0..trials {
                let mut x: f64 = x0;
                for step in 1..=t {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x = s.alpha(step).sqrt() * x + s.beta(step).sqrt() * z;
                }
                sum += x;
                sum_sq += x * x;
            }
            let n = trials as f64;
            let mean = sum / n;
            let var = sum_sq / n - mean * mean;
            let want_var = 1.0 - s.abar(t);
            let se_mean = (want_var / n).sqrt();
            let se_var = want_var * (2.0 / (n - 1.0)).sqrt();
            assert!((mean - s.abar(t).sqrt() * x0).abs() < 4.0 * se_mean);
            assert!((var - want_var).abs() < 4.0 * se_var);
        }
    }
}
