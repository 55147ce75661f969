use serde::de::DeserializeOwned;

use super::{eval, ilvr, sample, toy, train};
use crate::args::{EvalArgs, IlvrArgs, ReplayArgs, SampleArgs, ToyArgs, TrainArgs};
use crate::error::{CliError, CliResult};
use crate::manifest::RunManifest;

fn config<T: DeserializeOwned>(manifest: &RunManifest) -> CliResult<T> {
    serde_json::from_value(manifest.config.clone())
        .map_err(|e| CliError::data(format!("manifest config for {:?}: {e}", manifest.command)))
}

/// Re-runs the recorded command into `args.out` and returns the new manifest.
pub fn run(args: &ReplayArgs) -> CliResult<RunManifest> {
    let recorded = RunManifest::read(&args.manifest)?;
    let out = args.out.clone();
    let rerun = match recorded.command.as_str() {
        "ilvr" => ilvr::run(&IlvrArgs {
            out,
            ..config(&recorded)?
        })?,
        "sample" => sample::run(&SampleArgs {
            out,
            ..config(&recorded)?
        })?,
        "train" => train::run(&TrainArgs {
            out,
            ..config(&recorded)?
        })?,
        "toy" => toy::run(&ToyArgs {
            out,
            ..config(&recorded)?
        })?,
        "eval" => {
            eval::run(&EvalArgs {
                out,
                ..config(&recorded)?
            })?
            .0
        }
        other => return Err(CliError::data(format!("cannot replay command {other:?}"))),
    };
    if recorded.model_id != rerun.model_id {
        return Err(CliError::data(format!(
            "model changed since the recorded run: {:?} vs {:?}",
            recorded.model_id, rerun.model_id
        )));
    }
    if args.verify {
        recorded.verify(&args.out)?;
    }
    Ok(rerun)
}
