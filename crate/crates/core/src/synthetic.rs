//! Deterministic synthetic scenes: rectangular buildings with distinct roof
//! colors on a noisy green background, a matching DSM, reference outlines and
//! scripted corner clicks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::evaluation::{ClickFile, ClickObject, ProjectData, ProjectSpec};
use crate::formats::{
    lines_to_string, write_file_atomic, write_raster, FormatError, HeightEncoding, LineFeature,
    RasterEncoding,
};
use crate::geo::{AffineGeoref, GeoError, Polyline, RasterGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneParams {
    pub rows: usize,
    pub cols: usize,
    pub gsd: f64,
    /// Buildings are placed one per cell of this grid (rows, cols).
    pub layout: (usize, usize),
    pub origin: (f64, f64),
    pub background_noise: f64,
    pub roof_noise: f64,
    /// Maximum click offset from the true corner, in meters.
    pub click_jitter: f64,
    pub seed: u64,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            rows: 500,
            cols: 500,
            gsd: 0.05,
            layout: (4, 5),
            origin: (1000.0, 2000.0),
            background_noise: 8.0,
            roof_noise: 3.0,
            click_jitter: 0.05,
            seed: 7,
        }
    }
}

/// Pixel rectangle `[row0, row1) × [col0, col1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Building {
    pub id: i64,
    pub row0: usize,
    pub col0: usize,
    pub row1: usize,
    pub col1: usize,
    pub height: f64,
    pub color: [u8; 3],
}

#[derive(Debug, Clone)]
pub struct SyntheticScene {
    pub rgb: RasterGrid,
    pub dsm: RasterGrid,
    pub buildings: Vec<Building>,
    pub reference: Vec<LineFeature>,
    pub clicks: ClickFile,
}

const ROOF_PALETTE: [[u8; 3]; 10] = [
    [178, 34, 34],
    [139, 69, 19],
    [128, 128, 128],
    [70, 90, 160],
    [200, 120, 60],
    [220, 220, 210],
    [90, 50, 70],
    [160, 82, 45],
    [60, 60, 60],
    [205, 92, 92],
];

fn clamp_byte(v: f64) -> f64 {
    v.round().clamp(0.0, 255.0)
}

pub fn generate_scene(p: &SceneParams) -> Result<SyntheticScene, GeoError> {
    let (lr, lc) = p.layout;
    if lr == 0 || lc == 0 || p.rows < lr * 20 || p.cols < lc * 20 {
        return Err(GeoError::InvalidRaster(format!(
            "layout {lr}x{lc} does not fit a {}x{} raster",
            p.rows, p.cols
        )));
    }
    let georef = AffineGeoref::north_up(p.origin.0, p.origin.1, p.gsd)?;
    let mut rng = ChaCha8Rng::seed_from_u64(p.seed);
    let (ch, cw) = (p.rows / lr, p.cols / lc);

    let mut buildings = Vec::with_capacity(lr * lc);
    for i in 0..lr {
        for j in 0..lc {
            let h = rng.gen_range(ch * 2 / 5..=ch * 7 / 10);
            let w = rng.gen_range(cw * 2 / 5..=cw * 7 / 10);
            let margin_r = (ch - h) / 2;
            let margin_c = (cw - w) / 2;
            let r0 = i * ch + rng.gen_range(margin_r / 2..=margin_r * 3 / 2);
            let c0 = j * cw + rng.gen_range(margin_c / 2..=margin_c * 3 / 2);
            let id = buildings.len() as i64 + 1;
            buildings.push(Building {
                id,
                row0: r0,
                col0: c0,
                row1: r0 + h,
                col1: c0 + w,
                height: rng.gen_range(3.0..=8.0),
                color: ROOF_PALETTE[(id as usize - 1) % ROOF_PALETTE.len()],
            });
        }
    }

    let n = p.rows * p.cols;
    let mut bands = vec![vec![0.0; n]; 3];
    let mut heights = vec![0.0; n];
    for r in 0..p.rows {
        for c in 0..p.cols {
            let k = r * p.cols + c;
            let noise = rng.gen_range(-p.background_noise..=p.background_noise);
            bands[0][k] = clamp_byte(70.0 + noise);
            bands[1][k] = clamp_byte(125.0 + noise * 1.5);
            bands[2][k] = clamp_byte(55.0 + noise);
            heights[k] = (rng.gen_range(0.0..0.05f64) * 100.0).round() / 100.0;
        }
    }
    for b in &buildings {
        for r in b.row0..b.row1 {
            for c in b.col0..b.col1 {
                let k = r * p.cols + c;
                let noise = rng.gen_range(-p.roof_noise..=p.roof_noise);
                for (band, base) in bands.iter_mut().zip(b.color) {
                    band[k] = clamp_byte(base as f64 + noise);
                }
                heights[k] = (b.height * 100.0).round() / 100.0;
            }
        }
    }
    let rgb = RasterGrid::new(p.rows, p.cols, bands, georef, None)?;
    let dsm = RasterGrid::new(p.rows, p.cols, vec![heights], georef, None)?;

    let mut reference = Vec::new();
    let mut objects = Vec::new();
    for (i, b) in buildings.iter().enumerate() {
        let corners = [
            georef.corner(b.row0, b.col0),
            georef.corner(b.row0, b.col1),
            georef.corner(b.row1, b.col1),
            georef.corner(b.row1, b.col0),
        ];
        let mut ring = corners.to_vec();
        ring.push(corners[0]);
        let mut f = LineFeature::new(Polyline::new(ring, true)?);
        f.properties.id = Some(b.id);
        f.properties.kind = Some("building".into());
        reference.push(f);

        let clicks = corners
            .iter()
            .map(|c| {
                [
                    c.x + rng.gen_range(-p.click_jitter..=p.click_jitter),
                    c.y + rng.gen_range(-p.click_jitter..=p.click_jitter),
                ]
            })
            .collect();
        let start = i as u64 * 20_000;
        objects.push(ClickObject {
            reference_id: Some(b.id),
            clicks,
            close: true,
            t_ms: Some((0..4).map(|k| start + k * 2_500).collect()),
        });
    }

    Ok(SyntheticScene {
        rgb,
        dsm,
        buildings,
        reference,
        clicks: ClickFile { objects },
    })
}

impl SyntheticScene {
    pub fn to_project(&self, name: &str) -> ProjectData {
        ProjectData {
            name: name.to_string(),
            rgb: self.rgb.clone(),
            dsm: Some(self.dsm.clone()),
            reference: self.reference.clone(),
            clicks: self.clicks.clone(),
        }
    }

    /// Writes `<name>_rgb.ppm`, `<name>_dsm.pgm`, `<name>_reference.geojson`
    /// and `<name>_clicks.json` into `dir` and returns their relative paths.
    pub fn write(&self, dir: &Path, name: &str) -> Result<ProjectSpec, FormatError> {
        std::fs::create_dir_all(dir).map_err(|e| FormatError::Io {
            path: dir.to_path_buf(),
            source: e,
        })?;
        let spec = ProjectSpec {
            name: Some(name.to_string()),
            rgb: format!("{name}_rgb.ppm").into(),
            dsm: Some(format!("{name}_dsm.pgm").into()),
            reference: format!("{name}_reference.geojson").into(),
            clicks: Some(format!("{name}_clicks.json").into()),
        };
        write_raster(&self.rgb, &dir.join(&spec.rgb), RasterEncoding::Byte)?;
        let enc = HeightEncoding::fit(&self.dsm);
        write_raster(
            &self.dsm,
            &dir.join(spec.dsm.as_ref().unwrap()),
            RasterEncoding::Height(enc),
        )?;
        write_file_atomic(&dir.join(&spec.reference), lines_to_string(&self.reference).as_bytes())?;
        let mut clicks = serde_json::to_string_pretty(&self.clicks).expect("clicks serialize");
        clicks.push('\n');
        write_file_atomic(&dir.join(spec.clicks.as_ref().unwrap()), clicks.as_bytes())?;
        Ok(spec)
    }
}
