use std::path::Path;

use super::{read_to_string, write_file_atomic, FormatError};
use crate::classifier::ForestModel;

pub fn read_model(path: &Path) -> Result<ForestModel, FormatError> {
    model_from_str(&read_to_string(path)?)
}

pub fn write_model(path: &Path, model: &ForestModel) -> Result<(), FormatError> {
    write_file_atomic(path, model_to_string(model).as_bytes())
}

pub fn model_to_string(model: &ForestModel) -> String {
    let mut s = serde_json::to_string(model).expect("forest serializes");
    s.push('\n');
    s
}

pub fn model_from_str(text: &str) -> Result<ForestModel, FormatError> {
    let model: ForestModel =
        serde_json::from_str(text).map_err(|e| FormatError::InvalidModel(e.to_string()))?;
    model
        .validate()
        .map_err(|e| FormatError::InvalidModel(e.to_string()))?;
    Ok(model)
}
