//! Ancestral reverse-process sampling and ILVR conditioned generation.
//!
//! Every sample owns two independent random streams derived from its seed
//! (`seed + index`): one for the start state and the per-step proposal noise,
//! one for the noised reference `y_{t-1}`. Keeping them apart means an ILVR
//! run and an unconditional run with the same seed consume identical proposal
//! noise, so their trajectories differ only through refinement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::denoise::DenoiserModel;
use crate::error::{Error, Result};
use crate::lowpass::{Kernel, LowPassOp};
use crate::schedule::{q_sample_abar, Schedule};
use crate::Tensor;

const PROPOSAL_STREAM: u64 = 0;
const REFERENCE_STREAM: u64 = 1;

/// Seed of sample `index` in a run seeded with `seed`.
pub fn sample_seed(seed: u64, index: usize) -> u64 {
    seed.wrapping_add(index as u64)
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn standard_normal(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| StandardNormal.sample(rng)).collect();
    Tensor::from_shape_vec(shape.to_vec(), data).expect("length matches shape")
}

fn check_finite(x: &Tensor, t: usize) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite { t })
    }
}

fn check_same_shape(expected: &Tensor, actual: &Tensor) -> Result<()> {
    if expected.shape() != actual.shape() {
        return Err(Error::ShapeMismatch {
            expected: expected.shape().to_vec(),
            actual: actual.shape().to_vec(),
        });
    }
    Ok(())
}

/// One ancestral step `x_t -> x_{t-1}`:
/// `(x_t - (1 - alpha_t) / sqrt(1 - abar_t) * eps) / sqrt(alpha_t) + sigma_t z`.
pub fn reverse_step(model: &DenoiserModel, x_t: &Tensor, t: usize, z: &Tensor, sched: &Schedule) -> Result<Tensor> {
    check_same_shape(x_t, z)?;
    let eps = model.eps_predict(x_t, t, sched)?;
    Ok(reverse_step_with_eps(x_t, &eps, t, z, sched))
}

pub(crate) fn reverse_step_with_eps(x_t: &Tensor, eps: &Tensor, t: usize, z: &Tensor, sched: &Schedule) -> Tensor {
    let alpha = sched.alpha(t);
    let coef = (1.0 - alpha) / (1.0 - sched.abar(t)).max(crate::denoise::NOISE_FLOOR).sqrt();
    let inv_root = 1.0 / alpha.sqrt();
    let sigma = sched.sigma(t);
    let mut out = x_t.clone();
    ndarray::Zip::from(&mut out)
        .and(eps)
        .and(z)
        .for_each(|x, &e, &n| *x = inv_root * (*x - coef * e) + sigma * n);
    out
}

/// Replaces the low-frequency content of the proposal with that of `y_t`:
/// `x_prop + (phi(y_t) - phi(x_prop))`.
pub fn ilvr_refine(x_prop: &Tensor, y_t: &Tensor, op: &LowPassOp) -> Result<Tensor> {
    check_same_shape(x_prop, y_t)?;
    if op.factor() == 1 {
        if y_t.shape() != op.in_shape() {
            return Err(Error::ShapeMismatch {
                expected: op.in_shape().to_vec(),
                actual: y_t.shape().to_vec(),
            });
        }
        return Ok(y_t.clone());
    }
    let correction = op.apply(y_t)? - op.apply(x_prop)?;
    Ok(x_prop + &correction)
}

/// Recorded state `x_t`; `reference` holds the noised `y_t` when `x_t` was
/// produced by refinement against it.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub t: usize,
    pub x: Tensor,
    pub reference: Option<Tensor>,
}

/// Snapshots with strictly decreasing `t`, ending at `t = 0`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
}

impl Trajectory {
    pub fn final_state(&self) -> Option<&Tensor> {
        self.snapshots.last().map(|s| &s.x)
    }
}

/// Per-draw knobs that do not change the result.
#[derive(Clone, Copy, Default)]
pub struct DrawOptions<'a> {
    /// Record a snapshot every `stride` steps (plus `t = T` and `t = 0`).
    pub snapshot_stride: Option<usize>,
    /// Called with `t` before each reverse step.
    pub progress: Option<&'a (dyn Fn(usize) + Sync)>,
}

impl<'a> DrawOptions<'a> {
    pub fn with_trajectory(sched: &Schedule) -> Self {
        Self {
            snapshot_stride: Some((sched.steps() / 10).max(1)),
            progress: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub x0: Tensor,
    pub trajectory: Option<Trajectory>,
}

struct Recorder {
    stride: Option<usize>,
    trajectory: Trajectory,
}

impl Recorder {
    fn new(stride: Option<usize>) -> Self {
        Self {
            stride,
            trajectory: Trajectory::default(),
        }
    }

    fn record(&mut self, t: usize, steps: usize, x: &Tensor, reference: Option<&Tensor>) {
        let Some(stride) = self.stride else { return };
        if t == steps || t == 0 || t.is_multiple_of(stride) {
            self.trajectory.snapshots.push(Snapshot {
                t,
                x: x.clone(),
                reference: reference.cloned(),
            });
        }
    }

    fn finish(self) -> Option<Trajectory> {
        self.stride.map(|_| self.trajectory)
    }
}

/// Low-pass conditioning applied during reverse sampling.
struct Conditioning<'a> {
    reference: &'a Tensor,
    op: &'a LowPassOp,
    stop_step: usize,
}

fn draw(
    model: &DenoiserModel,
    sched: &Schedule,
    seed: u64,
    cond: Option<&Conditioning<'_>>,
    opts: &DrawOptions<'_>,
) -> Result<Sample> {
    let shape = model.data_shape();
    let steps = sched.steps();
    let mut proposal_rng = stream(seed, PROPOSAL_STREAM);
    let mut reference_rng = stream(seed, REFERENCE_STREAM);
    let mut recorder = Recorder::new(opts.snapshot_stride);

    let mut x = standard_normal(&shape, &mut proposal_rng);
    recorder.record(steps, steps, &x, None);
    let zeros = Tensor::zeros(shape.clone());
    for t in (1..=steps).rev() {
        if let Some(progress) = opts.progress {
            progress(t);
        }
        let z = if t > 1 {
            standard_normal(&shape, &mut proposal_rng)
        } else {
            zeros.clone()
        };
        let proposal = reverse_step(model, &x, t, &z, sched)?;
        let mut used_reference = None;
        x = match cond {
            Some(c) if t > c.stop_step => {
                let y_prev = if t > 1 {
                    let noise = standard_normal(&shape, &mut reference_rng);
                    q_sample_abar(c.reference, sched.abar(t - 1), &noise)?
                } else {
                    c.reference.clone()
                };
                let refined = ilvr_refine(&proposal, &y_prev, c.op)?;
                used_reference = Some(y_prev);
                refined
            }
            _ => proposal,
        };
        check_finite(&x, t)?;
        recorder.record(t - 1, steps, &x, used_reference.as_ref());
    }
    Ok(Sample {
        x0: x,
        trajectory: recorder.finish(),
    })
}

/// Draws sample `index` of an unconditional run seeded with `seed`.
pub fn draw_unconditional(
    model: &DenoiserModel,
    sched: &Schedule,
    seed: u64,
    index: usize,
    opts: &DrawOptions<'_>,
) -> Result<Sample> {
    draw(model, sched, sample_seed(seed, index), None, opts)
}

/// `count` unconditional samples, sample `i` seeded with `seed + i`.
pub fn sample_unconditional(model: &DenoiserModel, sched: &Schedule, seed: u64, count: usize) -> Result<Vec<Tensor>> {
    if count == 0 {
        return Err(Error::InvalidConfig("count must be at least 1".into()));
    }
    (0..count)
        .map(|i| draw_unconditional(model, sched, seed, i, &DrawOptions::default()).map(|s| s.x0))
        .collect()
}

/// Settings of one ILVR run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IlvrConfig {
    #[serde(skip)]
    pub reference: Tensor,
    pub factor: usize,
    pub kernel: Kernel,
    /// Refinement is applied while `t > stop_step`; 0 conditions every step.
    pub stop_step: usize,
    pub seed: u64,
    pub count: usize,
}

/// A validated ILVR configuration bound to a model and schedule.
pub struct IlvrSampler<'a> {
    model: &'a DenoiserModel,
    sched: &'a Schedule,
    cfg: IlvrConfig,
    op: LowPassOp,
}

impl<'a> IlvrSampler<'a> {
    pub fn new(model: &'a DenoiserModel, sched: &'a Schedule, cfg: IlvrConfig) -> Result<Self> {
        let shape = model.data_shape();
        if cfg.reference.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: cfg.reference.shape().to_vec(),
            });
        }
        if cfg.stop_step >= sched.steps() {
            return Err(Error::InvalidConfig(format!(
                "stop_step {} must be below T = {}",
                cfg.stop_step,
                sched.steps()
            )));
        }
        if cfg.count == 0 {
            return Err(Error::InvalidConfig("count must be at least 1".into()));
        }
        if cfg.reference.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("reference contains non-finite values".into()));
        }
        let op = LowPassOp::new(cfg.factor, cfg.kernel, &shape)?;
        Ok(Self { model, sched, cfg, op })
    }

    pub fn config(&self) -> &IlvrConfig {
        &self.cfg
    }

    pub fn op(&self) -> &LowPassOp {
        &self.op
    }

    /// Draws sample `index` (seeded `seed + index`).
    pub fn draw(&self, index: usize, opts: &DrawOptions<'_>) -> Result<Sample> {
        let cond = Conditioning {
            reference: &self.cfg.reference,
            op: &self.op,
            stop_step: self.cfg.stop_step,
        };
        draw(
            self.model,
            self.sched,
            sample_seed(self.cfg.seed, index),
            Some(&cond),
            opts,
        )
    }

    pub fn draw_all(&self) -> Result<Vec<Tensor>> {
        (0..self.cfg.count)
            .map(|i| self.draw(i, &DrawOptions::default()).map(|s| s.x0))
            .collect()
    }
}

/// `cfg.count` ILVR samples conditioned on `cfg.reference`.
pub fn sample_ilvr(model: &DenoiserModel, sched: &Schedule, cfg: IlvrConfig) -> Result<Vec<Tensor>> {
    IlvrSampler::new(model, sched, cfg)?.draw_all()
}
