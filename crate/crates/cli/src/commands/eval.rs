use std::fs;
use std::path::Path;
use std::time::Instant;

use ilvr_core::metrics::{frechet_pixel_distance, pair_count, pairwise_diversity, ReportConfig};
use ilvr_core::{EvalReport, Tensor};

use super::{create_dir, write_reports};
use crate::args::EvalArgs;
use crate::error::{CliError, CliResult, Context};
use crate::manifest::RunManifest;
use crate::model::{absolute, list_samples, load_dir, load_sample};

/// A named set of samples generated for one reference.
pub struct Group {
    pub name: String,
    pub samples: Vec<Tensor>,
}

/// Subdirectories holding samples become groups; a flat directory is cut
/// into consecutive chunks of `group_size` files.
pub fn load_groups(dir: &Path, group_size: usize) -> CliResult<Vec<Group>> {
    let mut subdirs: Vec<_> = fs::read_dir(dir)
        .context_with(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    subdirs.sort();
    let mut groups = Vec::new();
    for sub in subdirs {
        let files = list_samples(&sub)?;
        if files.is_empty() {
            continue;
        }
        let samples = files.iter().map(|p| load_sample(p)).collect::<CliResult<Vec<_>>>()?;
        let name = sub.file_name().unwrap_or_default().to_string_lossy().into_owned();
        groups.push(Group { name, samples });
    }
    if groups.is_empty() {
        let all = load_dir(dir)?;
        for (i, chunk) in all.chunks(group_size).enumerate() {
            groups.push(Group {
                name: format!("group_{i:04}"),
                samples: chunk.to_vec(),
            });
        }
    }
    if groups.is_empty() {
        return Err(CliError::data(format!("no samples under {}", dir.display())));
    }
    if let Some(g) = groups.iter().find(|g| g.samples.len() < 2) {
        return Err(CliError::data(format!(
            "group {} has {} sample(s); diversity needs at least 2",
            g.name,
            g.samples.len()
        )));
    }
    Ok(groups)
}

pub fn evaluate(args: &EvalArgs) -> CliResult<Vec<EvalReport>> {
    if args.group_size < 2 {
        return Err(CliError::usage("--group-size must be at least 2"));
    }
    let groups = load_groups(&args.samples, args.group_size)?;
    let mut reports = Vec::new();
    let mut total = 0.0;
    for g in &groups {
        let div = pairwise_diversity(&g.samples)?;
        total += div;
        let cfg = ReportConfig::default()
            .with("group", g.name.clone())
            .with("pairs", pair_count(g.samples.len()));
        reports.push(EvalReport::new("pairwise_diversity", div, g.samples.len(), cfg)?);
    }
    let sizes: Vec<usize> = groups.iter().map(|g| g.samples.len()).collect();
    let mut cfg = ReportConfig::default().with("groups", groups.len());
    if sizes.iter().all(|&s| s == sizes[0]) {
        cfg = cfg.with("group_size", sizes[0]).with("pairs", pair_count(sizes[0]));
    }
    reports.push(EvalReport::new(
        "mean_pairwise_diversity",
        total / groups.len() as f64,
        groups.len(),
        cfg,
    )?);

    if let Some(real_dir) = &args.real {
        let real = load_dir(real_dir)?;
        let generated: Vec<Tensor> = groups.into_iter().flat_map(|g| g.samples).collect();
        let fd = frechet_pixel_distance(&generated, &real)?;
        let cfg = ReportConfig::default().with("real_n", real.len());
        reports.push(EvalReport::new("frechet_pixel_distance", fd, generated.len(), cfg)?);
    }
    Ok(reports)
}

pub fn run(args: &EvalArgs) -> CliResult<(RunManifest, Vec<EvalReport>)> {
    let started = Instant::now();
    let reports = evaluate(args)?;
    create_dir(&args.out)?;
    let written = write_reports(&args.out, &reports)?;

    let mut echo = args.clone();
    echo.samples = absolute(&args.samples);
    echo.real = args.real.as_deref().map(absolute);
    let mut manifest = RunManifest::new("eval", &echo)?;
    manifest.record_outputs(&args.out, &written)?;
    manifest.finish(started.elapsed());
    manifest.write(&args.out)?;
    Ok((manifest, reports))
}
