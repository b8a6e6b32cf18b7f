//! Feature files, synthetic data, train/calibration partitioning and run configuration.

mod config;
mod features;
mod synth;

pub use config::{partition, select_rows, RunConfig};
pub use features::{
    load_features, load_features_as, read_features, save_features, write_features, FeatureFormat,
    BINARY_MAGIC, BINARY_VERSION,
};
pub use synth::{
    generate, CovarianceSpec, EigenShift, GaussianComponent, SynthKind, SynthSpec, Synthetic,
    PRESETS,
};

use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

/// Writes `bytes` to a temporary file beside `path`, then renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| Error::io(path, e))?;
    tmp.write_all(bytes).map_err(|e| Error::io(path, e))?;
    tmp.as_file().sync_all().map_err(|e| Error::io(path, e))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}
