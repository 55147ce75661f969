use std::time::Instant;

use ilvr_core::metrics::{lowfreq_error_with, pair_count, pairwise_diversity, ReportConfig};
use ilvr_core::sampler::{DrawOptions, IlvrSampler};
use ilvr_core::{EvalReport, IlvrConfig, Tensor};
use rayon::prelude::*;

use super::{create_dir, sample_stem, with_pool, write_reports};
use crate::args::IlvrArgs;
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;
use crate::model::{absolute, absolute_spec, load_model, load_sample, save_sample};

pub fn factor_dir(factor: usize) -> String {
    format!("n{factor}")
}

pub fn run(args: &IlvrArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    if args.factor.is_empty() {
        return Err(CliError::usage("--factor needs at least one value"));
    }
    if args.count == 0 {
        return Err(CliError::usage("--count must be at least 1"));
    }
    let loaded = load_model(&args.model)?;
    let reference = load_sample(&args.reference)?;
    let sched_cfg = args.schedule.config();
    let sched = sched_cfg.build()?;
    create_dir(&args.out)?;

    let mut reports = Vec::new();
    let mut written = Vec::new();
    for &factor in &args.factor {
        let cfg = IlvrConfig {
            reference: reference.clone(),
            factor,
            kernel: args.kernel,
            stop_step: args.stop_step,
            seed: args.seed,
            count: args.count,
        };
        let sampler = IlvrSampler::new(&loaded.model, &sched, cfg)?;
        let samples: Vec<Tensor> = with_pool(args.jobs, || {
            (0..args.count)
                .into_par_iter()
                .map(|i| sampler.draw(i, &DrawOptions::default()).map(|s| s.x0))
                .collect::<ilvr_core::Result<Vec<_>>>()
        })??;

        let dir = args.out.join(factor_dir(factor));
        create_dir(&dir)?;
        let base = ReportConfig::ilvr(factor, args.stop_step, args.kernel);
        let mut worst = 0.0f64;
        for (i, x) in samples.iter().enumerate() {
            written.extend(save_sample(&dir, &sample_stem(i), x, args.raw)?);
            let err = lowfreq_error_with(sampler.op(), x, &reference)?;
            worst = worst.max(err);
            reports.push(EvalReport::new(
                "lowfreq_error",
                err,
                1,
                base.clone().with("sample", i),
            )?);
        }
        reports.push(EvalReport::new(
            "max_lowfreq_error",
            worst,
            samples.len(),
            base.clone(),
        )?);
        if samples.len() >= 2 {
            let div = pairwise_diversity(&samples)?;
            let cfg = base.with("pairs", pair_count(samples.len()));
            reports.push(EvalReport::new("pairwise_diversity", div, samples.len(), cfg)?);
        }
    }
    written.extend(write_reports(&args.out, &reports)?);

    let mut echo = args.clone();
    echo.model = absolute_spec(&args.model);
    echo.reference = absolute(&args.reference);
    let mut manifest = RunManifest::new("ilvr", &echo)?;
    manifest.seed = Some(args.seed);
    manifest.schedule = Some(sched_cfg);
    manifest.model_id = Some(loaded.id);
    manifest.record_outputs(&args.out, &written)?;
    manifest.finish(started.elapsed());
    manifest.write(&args.out)?;
    Ok(manifest)
}
