//! Diagonal-covariance Gaussian mixtures and their exact denoiser.

use std::f64::consts::PI;
use std::path::Path;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::Tensor;

/// On-disk form of a mixture: `{weights, means, vars, shape?}`.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct MixtureFile {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    shape: Option<Vec<usize>>,
}

/// A weighted sum of axis-aligned Gaussians over `D`-dimensional data.
///
/// `shape` gives the tensor shape samples take (defaults to `[D]`); image
/// mixtures use `(C, H, W)` with `C * H * W = D`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MixtureFile", into = "MixtureFile")]
pub struct GaussianMixture {
    weights: Vec<f64>,
    means: Vec<Vec<f64>>,
    vars: Vec<Vec<f64>>,
    shape: Vec<usize>,
}

impl TryFrom<MixtureFile> for GaussianMixture {
    type Error = Error;

    fn try_from(f: MixtureFile) -> Result<Self> {
        let mix = GaussianMixture::new(f.weights, f.means, f.vars)?;
        match f.shape {
            Some(shape) => mix.with_shape(shape),
            None => Ok(mix),
        }
    }
}

impl From<GaussianMixture> for MixtureFile {
    fn from(m: GaussianMixture) -> Self {
        let shape = (m.shape.len() != 1).then(|| m.shape.clone());
        MixtureFile {
            weights: m.weights,
            means: m.means,
            vars: m.vars,
            shape,
        }
    }
}

impl GaussianMixture {
    pub fn new(weights: Vec<f64>, means: Vec<Vec<f64>>, vars: Vec<Vec<f64>>) -> Result<Self> {
        let bad = |msg: String| Err(Error::InvalidMixture(msg));
        if weights.is_empty() {
            return bad("at least one component required".into());
        }
        if means.len() != weights.len() || vars.len() != weights.len() {
            return bad(format!(
                "{} weights, {} means, {} variance vectors",
                weights.len(),
                means.len(),
                vars.len()
            ));
        }
        if weights.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return bad("weights must be finite and nonnegative".into());
        }
        let total: f64 = weights.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return bad(format!("weights sum to {total}, not 1"));
        }
        let dim = means[0].len();
        if dim == 0 {
            return bad("zero-dimensional components".into());
        }
        for (m, v) in means.iter().zip(&vars) {
            if m.len() != dim || v.len() != dim {
                return bad(format!("component dimensions differ from {dim}"));
            }
            if m.iter().any(|x| !x.is_finite()) {
                return bad("non-finite mean".into());
            }
            if v.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
                return bad("variances must be finite and nonnegative".into());
            }
        }
        Ok(Self {
            weights,
            means,
            vars,
            shape: vec![dim],
        })
    }

    /// Reinterprets samples as tensors of `shape`.
    pub fn with_shape(mut self, shape: Vec<usize>) -> Result<Self> {
        if shape.iter().product::<usize>() != self.dim() || shape.is_empty() {
            return Err(Error::InvalidMixture(format!(
                "shape {shape:?} does not hold {} values",
                self.dim()
            )));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    pub fn components(&self) -> usize {
        self.weights.len()
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn vars(&self) -> &[Vec<f64>] {
        &self.vars
    }

    /// Draws `(component, x0)` from the mixture.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> (usize, Tensor) {
        let k = WeightedIndex::new(&self.weights)
            .expect("validated weights")
            .sample(rng);
        let data = self.means[k]
            .iter()
            .zip(&self.vars[k])
            .map(|(m, v)| {
                let z: f64 = StandardNormal.sample(rng);
                m + v.sqrt() * z
            })
            .collect();
        let x = Tensor::from_shape_vec(self.shape.clone(), data).expect("shape holds dim values");
        (k, x)
    }

    /// Index of the component whose mean is closest in Euclidean distance.
    pub fn nearest_component(&self, x: &[f64]) -> usize {
        nearest_mean(&self.means, x)
    }

    /// Log responsibilities of each component for `x_t ~ q(x_t | x0)`,
    /// unnormalized.
    fn log_scores(&self, x_t: &[f64], abar: f64) -> Vec<f64> {
        let root = abar.sqrt();
        let noise = 1.0 - abar;
        self.weights
            .iter()
            .zip(self.means.iter().zip(&self.vars))
            .map(|(&w, (mu, var))| {
                if w == 0.0 {
                    return f64::NEG_INFINITY;
                }
                let ll: f64 = x_t
                    .iter()
                    .zip(mu.iter().zip(var))
                    .map(|(&x, (&m, &v))| {
                        let s = abar * v + noise;
                        let d = x - root * m;
                        -0.5 * ((2.0 * PI * s).ln() + d * d / s)
                    })
                    .sum();
                w.ln() + ll
            })
            .collect()
    }

    /// Normalized posterior component probabilities given `x_t`.
    pub fn responsibilities(&self, x_t: &[f64], abar: f64) -> Result<Vec<f64>> {
        check_abar(abar)?;
        self.check_len(x_t)?;
        Ok(softmax(&self.log_scores(x_t, abar)))
    }

    /// `E[x0 | x_t]` when `x_t = sqrt(abar) x0 + sqrt(1 - abar) eps`.
    pub fn posterior_mean(&self, x_t: &[f64], abar: f64) -> Result<Vec<f64>> {
        let resp = self.responsibilities(x_t, abar)?;
        let root = abar.sqrt();
        let noise = 1.0 - abar;
        let mut out = vec![0.0; self.dim()];
        for (r, (mu, var)) in resp.iter().zip(self.means.iter().zip(&self.vars)) {
            if *r == 0.0 {
                continue;
            }
            for (o, ((&x, &m), &v)) in out.iter_mut().zip(x_t.iter().zip(mu).zip(var)) {
                let gain = root * v / (abar * v + noise);
                *o += r * (m + gain * (x - root * m));
            }
        }
        Ok(out)
    }

    fn check_len(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.dim() {
            return Err(Error::ShapeMismatch {
                expected: self.shape.clone(),
                actual: vec![x.len()],
            });
        }
        Ok(())
    }
}

pub(crate) fn nearest_mean(means: &[Vec<f64>], x: &[f64]) -> usize {
    means
        .iter()
        .map(|m| m.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>())
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .map(|(k, _)| k)
        .unwrap_or(0)
}

fn check_abar(abar: f64) -> Result<()> {
    if abar > 0.0 && abar < 1.0 {
        Ok(())
    } else {
        Err(Error::InvalidConfig(format!("abar {abar} outside (0, 1)")))
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}
