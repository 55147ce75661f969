use std::fs;
use std::path::{Path, PathBuf};

use ilvr_core::metrics::format_table;
use ilvr_core::EvalReport;

use crate::error::{CliError, CliResult, Context};

pub mod eval;
pub mod ilvr;
pub mod replay;
pub mod sample;
pub mod toy;
pub mod train;

pub const REPORTS_JSON: &str = "reports.json";
pub const REPORTS_TXT: &str = "reports.txt";

pub fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).context_with(|| format!("creating {}", dir.display()))
}

/// Writes the JSON list and the text table; returns both paths.
pub fn write_reports(dir: &Path, reports: &[EvalReport]) -> CliResult<Vec<PathBuf>> {
    let json = dir.join(REPORTS_JSON);
    let mut text = serde_json::to_string_pretty(reports)?;
    text.push('\n');
    fs::write(&json, text).context_with(|| format!("writing {}", json.display()))?;
    let table = dir.join(REPORTS_TXT);
    fs::write(&table, format_table(reports)).context_with(|| format!("writing {}", table.display()))?;
    Ok(vec![json, table])
}

/// Runs `f` on a rayon pool of `jobs` threads (default: all cores).
pub fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> CliResult<T> {
    if jobs == Some(0) {
        return Err(CliError::usage("--jobs must be at least 1"));
    }
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = jobs {
        builder = builder.num_threads(n);
    }
    let pool = builder
        .build()
        .map_err(|e| CliError::data(format!("starting worker pool: {e}")))?;
    Ok(pool.install(f))
}

pub fn sample_stem(index: usize) -> String {
    format!("sample_{index:04}")
}
