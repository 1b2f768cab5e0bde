//! CSV rendering, atomic file writes and run manifests.
//!
//! CSV: header row, `,` separator, `\n` line endings, floats in `{:.16e}`
//! (17 significant digits, so every double round-trips exactly).

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::CliError;

/// A float cell with 17 significant digits; negative zero prints as zero.
pub fn float(v: f64) -> String {
    if v == 0.0 {
        format!("{:.16e}", 0.0)
    } else if v.is_finite() {
        format!("{v:.16e}")
    } else if v.is_nan() {
        "nan".into()
    } else if v > 0.0 {
        "inf".into()
    } else {
        "-inf".into()
    }
}

/// Row-by-row CSV builder.
#[derive(Debug, Default)]
pub struct Csv {
    buf: String,
    rows: u64,
    columns: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut buf = header.join(",");
        buf.push('\n');
        Csv { buf, rows: 0, columns: header.len() }
    }

    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns);
        for (i, c) in cells.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            let _ = write!(self.buf, "{c}");
        }
        self.buf.push('\n');
        self.rows += 1;
    }

    pub fn rows(&self) -> u64 {
        self.rows
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.buf.into_bytes()
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    std::fs::create_dir_all(dir)?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

/// How replicate streams are derived from the root seed.
pub const STREAM_RULE: &str = "ChaCha8 seeded with seed_from_u64(seed); replicate k uses stream k, \
chunk c of grid point i uses stream (i << 32) | c";

/// Record of one run, written next to its data file as `<data>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub toolkit_version: String,
    pub root_seed: u64,
    pub stream_rule: String,
    pub wall_time_secs: f64,
    pub rows: u64,
    pub outputs: Vec<PathBuf>,
    /// Free-form run facts such as initial-state snapping.
    #[serde(default)]
    pub notes: Vec<String>,
}

pub fn manifest_path(data: &Path) -> PathBuf {
    let mut name = data.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}
