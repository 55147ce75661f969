//! Model specs (`analytic:<mixture.json>` or a checkpoint path), content ids
//! and sample file I/O.

use std::fs;
use std::path::{Path, PathBuf};

use ilvr_core::tensorio::{is_image_shape, load_image, read_tensor, save_image, write_tensor};
use ilvr_core::{DenoiserModel, GaussianMixture, NeuralDenoiser, Tensor};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult, Context};

pub const ANALYTIC_PREFIX: &str = "analytic:";
pub const TENSOR_EXT: &str = "ilvt";
pub const CHECKPOINT_EXT: &str = "ilvn";

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// A loaded model and the content id of the file it came from.
pub struct LoadedModel {
    pub model: DenoiserModel,
    pub id: String,
}

/// Splits a model spec into (is_analytic, path).
pub fn parse_spec(spec: &str) -> (bool, PathBuf) {
    match spec.strip_prefix(ANALYTIC_PREFIX) {
        Some(path) => (true, PathBuf::from(path)),
        None => (false, PathBuf::from(spec)),
    }
}

/// Rewrites the path inside a model spec as an absolute path.
pub fn absolute_spec(spec: &str) -> String {
    let (analytic, path) = parse_spec(spec);
    let abs = absolute(&path);
    if analytic {
        format!("{ANALYTIC_PREFIX}{}", abs.display())
    } else {
        abs.display().to_string()
    }
}

pub fn absolute(path: &Path) -> PathBuf {
    std::path::absolute(path).unwrap_or_else(|_| path.to_path_buf())
}

pub fn model_from_bytes(analytic: bool, bytes: &[u8]) -> CliResult<DenoiserModel> {
    Ok(if analytic {
        let mix: GaussianMixture = serde_json::from_slice(bytes)?;
        DenoiserModel::AnalyticGmm(mix)
    } else {
        DenoiserModel::Neural(NeuralDenoiser::read_checkpoint(bytes)?)
    })
}

pub fn load_model(spec: &str) -> CliResult<LoadedModel> {
    let (analytic, path) = parse_spec(spec);
    let bytes = fs::read(&path).context_with(|| format!("reading model {}", path.display()))?;
    let model = model_from_bytes(analytic, &bytes).context_with(|| format!("loading model {}", path.display()))?;
    let kind = if analytic { "analytic" } else { "neural" };
    Ok(LoadedModel {
        model,
        id: format!("{kind}:sha256:{}", sha256_hex(&bytes)),
    })
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

pub fn is_sample_file(path: &Path) -> bool {
    matches!(extension(path).as_deref(), Some("ppm" | "pgm" | "pnm" | TENSOR_EXT))
}

/// Reads a pixmap or tensor file, chosen by extension.
pub fn load_sample(path: &Path) -> CliResult<Tensor> {
    let x = match extension(path).as_deref() {
        Some("ppm" | "pgm" | "pnm") => load_image(path),
        Some(TENSOR_EXT) => read_tensor(path),
        _ => {
            return Err(CliError::data(format!(
                "{}: expected .ppm, .pgm, .pnm or .{TENSOR_EXT}",
                path.display()
            )))
        }
    };
    x.context_with(|| format!("reading {}", path.display()))
}

/// Writes `x` as a pixmap when image-shaped, else as a tensor file; with
/// `raw`, image samples also get a tensor file. Returns the written paths.
pub fn save_sample(dir: &Path, stem: &str, x: &Tensor, raw: bool) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::new();
    if is_image_shape(x.shape()) {
        let ext = if x.shape()[0] == 1 { "pgm" } else { "ppm" };
        let path = dir.join(format!("{stem}.{ext}"));
        save_image(&path, x).context_with(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    if raw || !is_image_shape(x.shape()) {
        let path = dir.join(format!("{stem}.{TENSOR_EXT}"));
        write_tensor(&path, x).context_with(|| format!("writing {}", path.display()))?;
        written.push(path);
    }
    Ok(written)
}

/// Sample files directly inside `dir`, sorted by name. Tensor twins of
/// pixmaps (same stem) are skipped so each sample counts once.
pub fn list_samples(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .context_with(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && is_sample_file(p))
        .collect();
    files.sort();
    let pixmap_stems: Vec<_> = files
        .iter()
        .filter(|p| extension(p).as_deref() != Some(TENSOR_EXT))
        .filter_map(|p| p.file_stem().map(|s| s.to_owned()))
        .collect();
    files.retain(|p| {
        extension(p).as_deref() != Some(TENSOR_EXT)
            || !p.file_stem().is_some_and(|s| pixmap_stems.iter().any(|q| q == s))
    });
    Ok(files)
}

pub fn load_dir(dir: &Path) -> CliResult<Vec<Tensor>> {
    list_samples(dir)?.iter().map(|p| load_sample(p)).collect()
}
