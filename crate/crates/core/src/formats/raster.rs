//! Binary PPM/PGM rasters with a six-line world file and an optional
//! `.meta.json` sidecar for quantized heights.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{read_to_string, write_files_atomic, FormatError};
use crate::geo::{AffineGeoref, RasterGrid};

/// Height value used for nodata pixels of decoded height rasters.
pub const DSM_NODATA: f64 = -9999.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightEncoding {
    pub scale: f64,
    pub offset: f64,
    pub nodata: u16,
}

impl HeightEncoding {
    /// Centimeter quantization anchored at the lowest valid height.
    pub fn fit(grid: &RasterGrid) -> Self {
        let min = grid
            .band(0)
            .iter()
            .copied()
            .filter(|v| !grid.is_nodata(*v))
            .fold(f64::INFINITY, f64::min);
        let offset = if min.is_finite() { min.floor() } else { 0.0 };
        Self {
            scale: 0.01,
            offset,
            nodata: u16::MAX,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RasterEncoding {
    /// 8-bit PGM (1 band) or PPM (3 bands); values must be integers in 0..=255.
    Byte,
    /// 16-bit PGM plus a `.meta.json` sidecar: `height = raw * scale + offset`.
    Height(HeightEncoding),
}

pub fn world_path(raster: &Path) -> PathBuf {
    raster.with_extension("wld")
}

pub fn meta_path(raster: &Path) -> PathBuf {
    raster.with_extension("meta.json")
}

pub fn read_raster(path: &Path) -> Result<RasterGrid, FormatError> {
    let wld = world_path(path);
    if !wld.exists() {
        return Err(FormatError::GeorefMissing(wld));
    }
    let georef = parse_world_file(&read_to_string(&wld)?)?;
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    let (rows, cols, mut bands) = decode_pnm(&bytes)?;

    let meta = meta_path(path);
    let mut nodata = None;
    if meta.exists() {
        let enc: HeightEncoding = serde_json::from_str(&read_to_string(&meta)?)
            .map_err(|e| FormatError::MalformedRaster(format!("{}: {e}", meta.display())))?;
        if bands.len() != 1 {
            return Err(FormatError::MalformedRaster(
                "height sidecar given for a multi-band raster".into(),
            ));
        }
        if !(enc.scale.is_finite() && enc.scale > 0.0 && enc.offset.is_finite()) {
            return Err(FormatError::MalformedRaster(format!(
                "invalid height encoding {enc:?}"
            )));
        }
        for v in bands[0].iter_mut() {
            *v = if *v == enc.nodata as f64 {
                DSM_NODATA
            } else {
                *v * enc.scale + enc.offset
            };
        }
        nodata = Some(DSM_NODATA);
    }
    let bands = std::mem::take(&mut bands);
    Ok(RasterGrid::new(rows, cols, bands, georef, nodata)?)
}

pub fn write_raster(
    grid: &RasterGrid,
    path: &Path,
    encoding: RasterEncoding,
) -> Result<(), FormatError> {
    let world = world_file_string(grid.georef());
    match encoding {
        RasterEncoding::Byte => {
            let pnm = encode_bytes(grid)?;
            write_files_atomic(&[(path, &pnm), (&world_path(path), world.as_bytes())])
        }
        RasterEncoding::Height(enc) => {
            let pnm = encode_heights(grid, &enc)?;
            let meta = serde_json::to_string(&enc).expect("height encoding serializes");
            write_files_atomic(&[
                (path, &pnm),
                (&world_path(path), world.as_bytes()),
                (&meta_path(path), meta.as_bytes()),
            ])
        }
    }
}

fn parse_world_file(text: &str) -> Result<AffineGeoref, FormatError> {
    let lines: Vec<&str> = text.trim_end().lines().map(str::trim).collect();
    if lines.len() != 6 {
        return Err(FormatError::MalformedWorldFile(format!(
            "expected 6 lines, found {}",
            lines.len()
        )));
    }
    let mut v = [0.0f64; 6];
    for (slot, line) in v.iter_mut().zip(&lines) {
        *slot = line
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| FormatError::MalformedWorldFile(format!("not a number: {line:?}")))?;
    }
    // A, D, B, E, C, F
    if v[1] != 0.0 || v[2] != 0.0 {
        return Err(FormatError::UnsupportedRotation);
    }
    Ok(AffineGeoref::new(v[4], v[5], v[0], v[3])?)
}

fn world_file_string(g: &AffineGeoref) -> String {
    format!(
        "{}\n0\n0\n{}\n{}\n{}\n",
        g.pixel_size_x, g.pixel_size_y, g.origin_x, g.origin_y
    )
}

struct Header {
    bands: usize,
    cols: usize,
    rows: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8]) -> Result<Header, FormatError> {
    let malformed = |m: &str| FormatError::MalformedRaster(m.to_string());
    let bands = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(malformed("expected binary PGM (P5) or PPM (P6) magic")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // Whitespace and comments before each header number.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|b| *b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(malformed("truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(malformed("non-numeric header field"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| malformed("header field out of range"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(malformed("missing whitespace after maxval"));
    }
    let [cols, rows, maxval] = fields;
    if cols == 0 || rows == 0 {
        return Err(malformed("zero dimension"));
    }
    if maxval != 255 && maxval != 65535 {
        return Err(FormatError::MalformedRaster(format!(
            "unsupported maxval {maxval}"
        )));
    }
    Ok(Header {
        bands,
        cols,
        rows,
        maxval,
        data_start: pos + 1,
    })
}

fn decode_pnm(bytes: &[u8]) -> Result<(usize, usize, Vec<Vec<f64>>), FormatError> {
    let h = parse_header(bytes)?;
    let sample_bytes = if h.maxval == 255 { 1 } else { 2 };
    let n = h.rows * h.cols;
    let data = &bytes[h.data_start..];
    if data.len() != n * h.bands * sample_bytes {
        return Err(FormatError::MalformedRaster(format!(
            "expected {} data bytes for {}x{}x{}, found {}",
            n * h.bands * sample_bytes,
            h.rows,
            h.cols,
            h.bands,
            data.len()
        )));
    }
    let mut bands = vec![Vec::with_capacity(n); h.bands];
    for (i, sample) in data.chunks_exact(sample_bytes).enumerate() {
        let v = match sample {
            [b] => *b as f64,
            [hi, lo] => u16::from_be_bytes([*hi, *lo]) as f64,
            _ => unreachable!(),
        };
        bands[i % h.bands].push(v);
    }
    Ok((h.rows, h.cols, bands))
}

fn encode_bytes(grid: &RasterGrid) -> Result<Vec<u8>, FormatError> {
    let magic = match grid.band_count() {
        1 => "P5",
        3 => "P6",
        n => {
            return Err(FormatError::MalformedRaster(format!(
                "cannot encode {n} bands as PGM/PPM"
            )))
        }
    };
    let mut out = format!("{magic}\n{} {}\n255\n", grid.cols(), grid.rows()).into_bytes();
    let n = grid.rows() * grid.cols();
    out.reserve(n * grid.band_count());
    for i in 0..n {
        for band in grid.bands() {
            let v = band[i];
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(FormatError::MalformedRaster(format!(
                    "value {v} is not an 8-bit integer"
                )));
            }
            out.push(v as u8);
        }
    }
    Ok(out)
}

fn encode_heights(grid: &RasterGrid, enc: &HeightEncoding) -> Result<Vec<u8>, FormatError> {
    if grid.band_count() != 1 {
        return Err(FormatError::MalformedRaster(
            "height encoding needs a single band".into(),
        ));
    }
    if !(enc.scale.is_finite() && enc.scale > 0.0 && enc.offset.is_finite()) {
        return Err(FormatError::MalformedRaster(format!(
            "invalid height encoding {enc:?}"
        )));
    }
    let mut out = format!("P5\n{} {}\n65535\n", grid.cols(), grid.rows()).into_bytes();
    for &v in grid.band(0) {
        let raw = if grid.is_nodata(v) {
            enc.nodata
        } else {
            let q = ((v - enc.offset) / enc.scale).round();
            if !(0.0..=65535.0).contains(&q) || q as u16 == enc.nodata {
                return Err(FormatError::MalformedRaster(format!(
                    "height {v} does not fit the encoding {enc:?}"
                )));
            }
            q as u16
        };
        out.extend_from_slice(&raw.to_be_bytes());
    }
    Ok(out)
}
