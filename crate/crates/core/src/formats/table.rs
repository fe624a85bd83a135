use std::path::Path;

use super::{read_to_string, write_file_atomic, FormatError};
use crate::features::LineFeatureRecord;

pub const TABLE_HEADER: [&str; 10] = [
    "id",
    "boundary",
    "vertices",
    "length",
    "azimuth",
    "sinuosity",
    "red_grad",
    "green_grad",
    "blue_grad",
    "dsm_grad",
];

pub fn read_feature_table(path: &Path) -> Result<Vec<LineFeatureRecord>, FormatError> {
    table_from_str(&read_to_string(path)?)
}

pub fn write_feature_table(path: &Path, records: &[LineFeatureRecord]) -> Result<(), FormatError> {
    write_file_atomic(path, table_to_string(records).as_bytes())
}

pub fn table_from_str(text: &str) -> Result<Vec<LineFeatureRecord>, FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(text.as_bytes());
    let header = reader
        .headers()
        .map_err(|e| FormatError::SchemaMismatch(e.to_string()))?;
    if header.iter().ne(TABLE_HEADER.iter().copied()) {
        return Err(FormatError::SchemaMismatch(format!(
            "expected header {}, found {}",
            TABLE_HEADER.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }

    let mut records = Vec::new();
    for (i, row) in reader.records().enumerate() {
        let row_no = i + 1;
        let row = row.map_err(|e| FormatError::Parse {
            row: row_no,
            detail: e.to_string(),
        })?;
        let parse_err = |col: &str, detail: String| FormatError::Parse {
            row: row_no,
            detail: format!("column {col}: {detail}"),
        };
        let int = |idx: usize| -> Result<u64, FormatError> {
            let cell = &row[idx];
            cell.parse::<u64>()
                .map_err(|_| parse_err(TABLE_HEADER[idx], format!("not an integer: {cell:?}")))
        };
        let real = |idx: usize| -> Result<f64, FormatError> {
            let cell = &row[idx];
            cell.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(TABLE_HEADER[idx], format!("not a number: {cell:?}")))
        };
        let record = LineFeatureRecord {
            id: int(0)?,
            boundary: real(1)?,
            vertices: int(2)? as usize,
            length: real(3)?,
            azimuth: real(4)?,
            sinuosity: real(5)?,
            red_grad: real(6)?,
            green_grad: real(7)?,
            blue_grad: real(8)?,
            dsm_grad: if row[9].is_empty() { None } else { Some(real(9)?) },
        };
        record
            .validate()
            .map_err(|detail| FormatError::Parse { row: row_no, detail })?;
        records.push(record);
    }
    Ok(records)
}

pub fn table_to_string(records: &[LineFeatureRecord]) -> String {
    let mut writer = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    writer.write_record(TABLE_HEADER).expect("in-memory write");
    for r in records {
        let dsm = r.dsm_grad.map(|v| v.to_string()).unwrap_or_default();
        writer
            .write_record([
                r.id.to_string(),
                r.boundary.to_string(),
                r.vertices.to_string(),
                r.length.to_string(),
                r.azimuth.to_string(),
                r.sinuosity.to_string(),
                r.red_grad.to_string(),
                r.green_grad.to_string(),
                r.blue_grad.to_string(),
                dsm,
            ])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("ascii output")
}
