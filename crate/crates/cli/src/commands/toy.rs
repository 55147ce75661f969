use std::time::Instant;

use ilvr_core::toy;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::create_dir;
use crate::args::ToyArgs;
use crate::error::{CliResult, Context};
use crate::manifest::RunManifest;
use crate::model::save_sample;

pub const MIXTURE_FILE: &str = "mixture.json";

pub fn run(args: &ToyArgs) -> CliResult<RunManifest> {
    let started = Instant::now();
    let mix = toy::by_name(&args.name, args.side)?;
    create_dir(&args.out)?;
    let path = args.out.join(MIXTURE_FILE);
    mix.save(&path).context_with(|| format!("writing {}", path.display()))?;
    let mut written = vec![path];

    if args.draws > 0 {
        let dir = args.out.join("draws");
        create_dir(&dir)?;
        let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
        for i in 0..args.draws {
            let (_, x) = mix.sample(&mut rng);
            written.extend(save_sample(&dir, &draw_stem(i), &x, false)?);
        }
    }

    let mut manifest = RunManifest::new("toy", args)?;
    manifest.seed = Some(args.seed);
    manifest.record_outputs(&args.out, &written)?;
    manifest.finish(started.elapsed());
    manifest.write(&args.out)?;
    Ok(manifest)
}

pub fn draw_stem(index: usize) -> String {
    format!("draw_{index:04}")
}
