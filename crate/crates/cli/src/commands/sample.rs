use std::time::Instant;

use ilvr_core::sampler::{draw_unconditional, DrawOptions};
use ilvr_core::Tensor;
use rayon::prelude::*;

use super::{create_dir, sample_stem, with_pool};
use crate::args::SampleArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::model::{absolute_spec, load_model, save_sample};

pub fn run(args: &SampleArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    if args.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let loaded = load_model(&args.model)?;
    let sched_cfg = args.schedule.config();
    let sched = sched_cfg.build()?;
    create_dir(&args.out)?;

    let model = &loaded.model;
    let samples: Vec<Tensor> = with_pool(args.jobs, || {
        (0..args.count)
            .into_par_iter()
            .map(|i| draw_unconditional(model, &sched, args.seed, i, &DrawOptions::default()).map(|s| s.x0))
            .collect::<ilvr_core::Result<Vec<_>>>()
    })??;
    let mut written = Vec::new();
    for (i, x) in samples.iter().enumerate() {
        written.extend(save_sample(&args.out, &sample_stem(i), x, args.raw)?);
    }

    let mut echo = args.clone();
    echo.model = absolute_spec(&args.model);
    let mut manifest = RunManifest::new("sample", &echo)?;
    manifest.seed = Some(args.seed);
    manifest.schedule = Some(sched_cfg);
    manifest.model_id = Some(loaded.id);
    manifest.record_outputs(&args.out, &written)?;
    manifest.finish(started.elapsed());
    manifest.write(&args.out)?;
    Ok(manifest)
}
