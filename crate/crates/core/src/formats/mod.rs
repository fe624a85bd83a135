//! On-disk artifacts: rasters with world files, GeoJSON line collections,
//! feature tables and trained forests.
//!
//! Readers reject malformed input instead of guessing. Writers go through a
//! temporary file and a rename so a failed write never leaves a truncated
//! artifact behind.

mod geojson;
mod model;
mod raster;
mod table;

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::GeoError;

pub use geojson::{
    lines_from_str, lines_to_string, linestring_from_value, linestring_to_value, read_lines,
    write_lines, LineCollection, LineFeature, LineProperties,
};
pub use model::{model_from_str, model_to_string, read_model, write_model};
pub use raster::{
    meta_path, read_raster, world_path, write_raster, HeightEncoding, RasterEncoding, DSM_NODATA,
};
pub use table::{read_feature_table, table_from_str, table_to_string, write_feature_table, TABLE_HEADER};

#[derive(Debug, Error)]
pub enum FormatError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("georef missing: no world file at {0}")]
    GeorefMissing(PathBuf),
    #[error("malformed raster: {0}")]
    MalformedRaster(String),
    #[error("malformed world file: {0}")]
    MalformedWorldFile(String),
    #[error("unsupported rotation: world file rotation terms must be 0")]
    UnsupportedRotation,
    #[error("invalid likelihood {value} in feature {index}: must lie in [0, 1]")]
    InvalidLikelihood { index: usize, value: f64 },
    #[error("invalid geojson: {0}")]
    InvalidGeoJson(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("parse error at row {row}: {detail}")]
    Parse { row: usize, detail: String },
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Geo(#[from] GeoError),
}

impl FormatError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        FormatError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Input locations of a delineation project.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectPaths {
    pub rgb: PathBuf,
    #[serde(default)]
    pub dsm: Option<PathBuf>,
    pub network: PathBuf,
    #[serde(default)]
    pub model: Option<PathBuf>,
    #[serde(default)]
    pub reference: Option<PathBuf>,
}

pub(crate) fn read_to_string(path: &Path) -> Result<String, FormatError> {
    fs::read_to_string(path).map_err(|e| FormatError::io(path, e))
}

/// Writes several files so that either all of them appear or none do
/// (modulo a crash between renames).
pub fn write_files_atomic(files: &[(&Path, &[u8])]) -> Result<(), FormatError> {
    let mut staged: Vec<(PathBuf, &Path)> = Vec::with_capacity(files.len());
    for (path, bytes) in files {
        let tmp = temp_path(path);
        if let Err(e) = fs::write(&tmp, bytes) {
            for (t, _) in &staged {
                let _ = fs::remove_file(t);
            }
            return Err(FormatError::io(path, e));
        }
        staged.push((tmp, path));
    }
    for (tmp, path) in &staged {
        fs::rename(tmp, path).map_err(|e| FormatError::io(path, e))?;
    }
    Ok(())
}

pub fn write_file_atomic(path: &Path, bytes: &[u8]) -> Result<(), FormatError> {
    write_files_atomic(&[(path, bytes)])
}

fn temp_path(path: &Path) -> PathBuf {
    let mut name = path
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(format!(".tmp-{}", std::process::id()));
    path.with_file_name(name)
}
