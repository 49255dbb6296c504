//! Data, evaluation, loss landscapes, configuration and the experiment driver.

mod config;
mod data;
mod eval;
mod experiment;
mod landscape;

use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub use config::{
    AttackConfig, DatasetConfig, ExperimentConfig, LandscapeConfig, ModelConfig, StandardConfig, SweepConfig,
    TrainConfig,
};
pub use data::{
    blob_means, encode_idx, load_idx_subset, make_blobs, make_blobs_split, make_blobs_with, parse_idx_images,
    parse_idx_labels, BlobSpec, Dataset, Normalization, PixelNormalization, Split,
};
pub use eval::{clean_error, evaluate, ClassErrors, EvalReport};
pub use experiment::{
    adversarial_phase, landscape_csv, load_datasets, run_eval, run_experiment, run_landscape, run_sweep, run_train,
    standard_phase, summary_csv, write_landscapes, RunOutcome, SummaryRow,
};
pub use landscape::{landscape, LandscapeGrid, LandscapeMode, DEFAULT_RESOLUTION};

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let name = path
        .file_name()
        .ok_or_else(|| Error::InvalidArgument(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if let Err(e) = result {
        let _ = fs::remove_file(&tmp);
        return Err(Error::io(path, e));
    }
    Ok(())
}
