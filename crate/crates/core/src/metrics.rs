//! Desk-scale evaluation: low-frequency consistency, pairwise diversity,
//! a pixel-space Fréchet distance and mixture-recovery statistics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::denoise::{nearest_mean, GaussianMixture};
use crate::error::{Error, Result};
use crate::lowpass::{Kernel, LowPassOp};
use crate::Tensor;

/// Configuration echoed next to a metric value.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub factor: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub stop_step: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kernel: Option<Kernel>,
    /// Free-form extras (pair counts, component index, ...).
    #[serde(flatten)]
    pub extra: serde_json::Map<String, serde_json::Value>,
}

impl ReportConfig {
    pub fn ilvr(factor: usize, stop_step: usize, kernel: Kernel) -> Self {
        Self {
            factor: Some(factor),
            stop_step: Some(stop_step),
            kernel: Some(kernel),
            extra: Default::default(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.extra.insert(key.to_owned(), value.into());
        self
    }
}

/// One named scalar result; serializes as `{metric, value, n, config}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub metric: String,
    pub value: f64,
    pub n: usize,
    pub config: ReportConfig,
}

impl EvalReport {
    pub fn new(metric: impl Into<String>, value: f64, n: usize, config: ReportConfig) -> Result<Self> {
        let metric = metric.into();
        if !value.is_finite() {
            return Err(Error::InvalidConfig(format!("{metric} is not finite")));
        }
        if n == 0 {
            return Err(Error::TooFewSamples { needed: 1, got: 0 });
        }
        Ok(Self {
            metric,
            value,
            n,
            config,
        })
    }
}

/// Plain-text table of reports, one row each.
pub fn format_table(reports: &[EvalReport]) -> String {
    let width = reports.iter().map(|r| r.metric.len()).max().unwrap_or(6).max(6);
    let mut out = format!("{:<width$}  {:>14}  {:>6}  config\n", "metric", "value", "n");
    for r in reports {
        let config = serde_json::to_string(&r.config).unwrap_or_default();
        let _ = writeln!(out, "{:<width$}  {:>14.6e}  {:>6}  {}", r.metric, r.value, r.n, config);
    }
    out
}

fn rms(a: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in a {
        sum += v * v;
        n += 1;
    }
    (sum / n.max(1) as f64).sqrt()
}

fn rms_distance(a: &Tensor, b: &Tensor) -> f64 {
    rms(a.iter().zip(b).map(|(x, y)| x - y))
}

fn check_same_shape(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch {
            expected: a.shape().to_vec(),
            actual: b.shape().to_vec(),
        });
    }
    Ok(())
}

/// Root-mean-square difference of the downsampled images.
pub fn lowfreq_error(x: &Tensor, y: &Tensor, factor: usize, kernel: Kernel) -> Result<f64> {
    check_same_shape(x, y)?;
    let op = LowPassOp::new(factor, kernel, x.shape())?;
    lowfreq_error_with(&op, x, y)
}

pub fn lowfreq_error_with(op: &LowPassOp, x: &Tensor, y: &Tensor) -> Result<f64> {
    check_same_shape(x, y)?;
    let dx = op.downsample(x)?;
    let dy = op.downsample(y)?;
    Ok(rms_distance(&dx, &dy))
}

/// Number of unordered pairs among `n` samples.
pub fn pair_count(n: usize) -> usize {
    n * n.saturating_sub(1) / 2
}

/// Mean RMS distance over all unordered sample pairs.
pub fn pairwise_diversity(samples: &[Tensor]) -> Result<f64> {
    if samples.len() < 2 {
        return Err(Error::TooFewSamples {
            needed: 2,
            got: samples.len(),
        });
    }
    for s in &samples[1..] {
        check_same_shape(&samples[0], s)?;
    }
    let mut total = 0.0;
    for (i, a) in samples.iter().enumerate() {
        for b in &samples[i + 1..] {
            total += rms_distance(a, b);
        }
    }
    Ok(total / pair_count(samples.len()) as f64)
}

/// Per-dimension mean and sample standard deviation (n - 1 denominator).
fn moments(set: &[Tensor]) -> (Vec<f64>, Vec<f64>) {
    let d = set[0].len();
    let n = set.len() as f64;
    let mut mean = vec![0.0; d];
    for x in set {
        for (m, v) in mean.iter_mut().zip(x.iter()) {
            *m += v / n;
        }
    }
    let mut var = vec![0.0; d];
    for x in set {
        for ((s, v), m) in var.iter_mut().zip(x.iter()).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let std = var.into_iter().map(|s| (s / (n - 1.0)).sqrt()).collect();
    (mean, std)
}

/// Fréchet distance between diagonal Gaussians fitted to each set:
/// `|mu_a - mu_b|^2 + sum_d (sd_a - sd_b)^2`.
pub fn frechet_pixel_distance(set_a: &[Tensor], set_b: &[Tensor]) -> Result<f64> {
    for set in [set_a, set_b] {
        if set.len() < 2 {
            return Err(Error::TooFewSamples {
                needed: 2,
                got: set.len(),
            });
        }
    }
    for s in set_a.iter().chain(set_b) {
        if s.len() != set_a[0].len() {
            return Err(Error::ShapeMismatch {
                expected: set_a[0].shape().to_vec(),
                actual: s.shape().to_vec(),
            });
        }
    }
    let (mu_a, sd_a) = moments(set_a);
    let (mu_b, sd_b) = moments(set_b);
    let mean_term: f64 = mu_a.iter().zip(&mu_b).map(|(a, b)| (a - b) * (a - b)).sum();
    let spread_term: f64 = sd_a.iter().zip(&sd_b).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok(mean_term + spread_term)
}

/// How well a sample set reproduces a known mixture.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureRecovery {
    /// Fraction of samples assigned to each component (nearest mean).
    pub occupancy: Vec<f64>,
    pub max_occupancy_deviation: f64,
    /// Euclidean distance between each component's empirical and true mean;
    /// `None` when fewer than two samples were assigned.
    pub mean_errors: Vec<Option<f64>>,
    /// Empirical over model variance, per component and dimension.
    pub variance_ratios: Vec<Option<Vec<f64>>>,
    pub n: usize,
}

impl MixtureRecovery {
    pub fn max_mean_error(&self) -> f64 {
        self.mean_errors.iter().flatten().copied().fold(0.0, f64::max)
    }

    /// Smallest and largest variance ratio over dimensions with nonzero
    /// model variance.
    pub fn variance_ratio_range(&self) -> (f64, f64) {
        self.variance_ratios
            .iter()
            .flatten()
            .flatten()
            .filter(|r| r.is_finite())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                (lo.min(r), hi.max(r))
            })
    }

    pub fn reports(&self) -> Result<Vec<EvalReport>> {
        let mut out = vec![EvalReport::new(
            "occupancy_max_deviation",
            self.max_occupancy_deviation,
            self.n,
            ReportConfig::default(),
        )?];
        for (k, occ) in self.occupancy.iter().enumerate() {
            let cfg = ReportConfig::default().with("component", k);
            out.push(EvalReport::new("occupancy", *occ, self.n, cfg.clone())?);
            if let Some(err) = self.mean_errors[k] {
                out.push(EvalReport::new("mean_error", err, self.n, cfg.clone())?);
            }
            if let Some(ratios) = &self.variance_ratios[k] {
                for (d, r) in ratios.iter().enumerate().filter(|(_, r)| r.is_finite()) {
                    out.push(EvalReport::new(
                        "variance_ratio",
                        *r,
                        self.n,
                        cfg.clone().with("dim", d),
                    )?);
                }
            }
        }
        Ok(out)
    }
}

/// Assigns samples to the nearest component mean and compares occupancy,
/// means and variances with the mixture.
pub fn mixture_recovery(samples: &[Tensor], mix: &GaussianMixture) -> Result<MixtureRecovery> {
    if samples.is_empty() {
        return Err(Error::TooFewSamples { needed: 1, got: 0 });
    }
    let k = mix.components();
    let d = mix.dim();
    let mut groups: Vec<Vec<&Tensor>> = vec![Vec::new(); k];
    for s in samples {
        if s.len() != d {
            return Err(Error::ShapeMismatch {
                expected: mix.shape().to_vec(),
                actual: s.shape().to_vec(),
            });
        }
        let flat = s.as_standard_layout();
        groups[nearest_mean(mix.means(), flat.as_slice().expect("standard layout"))].push(s);
    }
    let n = samples.len();
    let occupancy: Vec<f64> = groups.iter().map(|g| g.len() as f64 / n as f64).collect();
    let max_occupancy_deviation = occupancy
        .iter()
        .zip(mix.weights())
        .map(|(o, w)| (o - w).abs())
        .fold(0.0, f64::max);

    let mut mean_errors = Vec::with_capacity(k);
    let mut variance_ratios = Vec::with_capacity(k);
    for (c, group) in groups.iter().enumerate() {
        if group.len() < 2 {
            mean_errors.push(None);
            variance_ratios.push(None);
            continue;
        }
        let owned: Vec<Tensor> = group.iter().map(|t| (*t).clone()).collect();
        let (mean, std) = moments(&owned);
        let err = mean
            .iter()
            .zip(&mix.means()[c])
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        mean_errors.push(Some(err));
        let ratios = std
            .iter()
            .zip(&mix.vars()[c])
            .map(|(s, v)| if *v > 0.0 { s * s / v } else { f64::NAN })
            .collect();
        variance_ratios.push(Some(ratios));
    }
    Ok(MixtureRecovery {
        occupancy,
        max_occupancy_deviation,
        mean_errors,
        variance_ratios,
        n,
    })
}

/// Report form of [`mixture_recovery`].
pub fn mixture_recovery_report(samples: &[Tensor], mix: &GaussianMixture) -> Result<Vec<EvalReport>> {
    mixture_recovery(samples, mix)?.reports()
}
