use std::fmt::Write as _;
use std::fs;
use std::time::Instant;

use ilvr_core::denoise::{make_batch, train_step, Adam, Architecture};
use ilvr_core::metrics::ReportConfig;
use ilvr_core::{EvalReport, GaussianMixture, NeuralDenoiser, Tensor};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{create_dir, write_reports};
use crate::args::TrainArgs;
use crate::error::{CliError, CliResult, Context};
use crate::manifest::RunManifest;
use crate::model::{absolute, load_dir, CHECKPOINT_EXT};

pub const LOSS_FILE: &str = "loss.csv";

const BATCH_STREAM: u64 = 2;
const PROBE_STREAM: u64 = 3;

/// Training data: an endless mixture or a fixed set of samples.
pub enum Dataset {
    Mixture(GaussianMixture),
    Fixed(Vec<Tensor>),
}

impl Dataset {
    pub fn load(args: &TrainArgs) -> CliResult<Self> {
        if args.data.is_dir() {
            let xs = load_dir(&args.data)?;
            if xs.is_empty() {
                return Err(CliError::data(format!("no samples in {}", args.data.display())));
            }
            if xs.iter().any(|x| x.shape() != xs[0].shape()) {
                return Err(CliError::data("dataset samples differ in shape"));
            }
            Ok(Self::Fixed(xs))
        } else {
            let mix = GaussianMixture::load(&args.data).context_with(|| format!("loading {}", args.data.display()))?;
            Ok(Self::Mixture(mix))
        }
    }

    pub fn shape(&self) -> Vec<usize> {
        match self {
            Self::Mixture(m) => m.shape().to_vec(),
            Self::Fixed(xs) => xs[0].shape().to_vec(),
        }
    }

    fn batch(&self, n: usize, rng: &mut ChaCha8Rng) -> Vec<Tensor> {
        (0..n)
            .map(|_| match self {
                Self::Mixture(m) => m.sample(rng).1,
                Self::Fixed(xs) => xs[rng.random_range(0..xs.len())].clone(),
            })
            .collect()
    }
}

/// Dense net for vectors, convolutional net for (C, H, W) images.
pub fn architecture(shape: &[usize], hidden: usize, embed: usize) -> CliResult<Architecture> {
    match *shape {
        [dim] => Ok(Architecture::Mlp { dim, hidden, embed }),
        [channels, height, width] => Ok(Architecture::Conv {
            channels,
            height,
            width,
            hidden,
            embed,
        }),
        _ => Err(CliError::data(format!("cannot train on data of shape {shape:?}"))),
    }
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

pub fn checkpoint_file() -> String {
    format!("model.{CHECKPOINT_EXT}")
}

pub fn run(args: &TrainArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    if args.batch == 0 || args.probe == 0 {
        return Err(CliError::usage("--batch and --probe must be at least 1"));
    }
    if !(args.lr.is_finite() && args.lr > 0.0) {
        return Err(CliError::usage("--lr must be positive"));
    }
    let data = Dataset::load(args)?;
    let arch = architecture(&data.shape(), args.hidden, args.embed)?;
    let sched_cfg = args.schedule.config();
    let sched = sched_cfg.build()?;
    let mut net = NeuralDenoiser::new(arch, args.seed)?;
    let mut opt = Adam::new(arch.param_count(), args.lr);

    let mut probe_rng = stream(args.seed, PROBE_STREAM);
    let probe_x0 = data.batch(args.probe, &mut probe_rng);
    let probe = make_batch(&probe_x0, &sched, probe_rng.next_u64());
    let initial = net.loss(&probe);

    let mut rng = stream(args.seed, BATCH_STREAM);
    let mut curve = String::from("step,loss\n");
    for step in 0..args.steps {
        let x0 = data.batch(args.batch, &mut rng);
        let loss = train_step(&mut net, &mut opt, &x0, &sched, rng.next_u64())?;
        let _ = writeln!(curve, "{step},{loss:.9e}");
    }
    let last = net.loss(&probe);
    if !last.is_finite() {
        return Err(ilvr_core::Error::NonFiniteLoss { step: args.steps }.into());
    }

    create_dir(&args.out)?;
    let ckpt = args.out.join(checkpoint_file());
    net.save(&ckpt).context_with(|| format!("writing {}", ckpt.display()))?;
    let loss_path = args.out.join(LOSS_FILE);
    fs::write(&loss_path, curve).context_with(|| format!("writing {}", loss_path.display()))?;
    let cfg = ReportConfig::default()
        .with("steps", args.steps)
        .with("params", arch.param_count());
    let reports = vec![
        EvalReport::new("probe_loss_initial", initial, args.probe, cfg.clone())?,
        EvalReport::new("probe_loss_final", last, args.probe, cfg.clone())?,
        EvalReport::new("probe_loss_ratio", last / initial, args.probe, cfg)?,
    ];
    let mut written = vec![ckpt, loss_path];
    written.extend(write_reports(&args.out, &reports)?);

    let mut echo = args.clone();
    echo.data = absolute(&args.data);
    let mut manifest = RunManifest::new("train", &echo)?;
    manifest.seed = Some(args.seed);
    manifest.schedule = Some(sched_cfg);
    manifest.record_outputs(&args.out, &written)?;
    manifest.finish(started.elapsed());
    manifest.write(&args.out)?;
    Ok(manifest)
}
