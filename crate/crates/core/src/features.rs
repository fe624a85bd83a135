//! Per-line feature vectors: geometry plus the median-difference of band
//! values on either side of each line, and buffer-overlap auto-labeling.

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{buffer_mask, rasterize_polyline, AffineGeoref, Point2, Polyline, RasterGrid};
use crate::segmentation::LineNetwork;

/// Classifier feature columns in canonical order. `id` and `boundary` are
/// bookkeeping, never features.
pub const FEATURE_NAMES: [&str; 8] = [
    "vertices",
    "length",
    "azimuth",
    "sinuosity",
    "red_grad",
    "green_grad",
    "blue_grad",
    "dsm_grad",
];

pub const DEFAULT_HALF_WIDTH: f64 = 0.4;
pub const DEFAULT_LABEL_RADIUS: f64 = 0.30;
pub const DEFAULT_COVERAGE: f64 = 0.8;
pub const SINUOSITY_CAP: f64 = 1000.0;
const CHORD_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FeatureError {
    #[error("feature extraction needs a 3-band RGB raster, got {0} band(s)")]
    NotRgb(usize),
    #[error("DSM must be single-band, got {0} bands")]
    DsmBands(usize),
    #[error("reference lines are empty")]
    EmptyReference,
    #[error("record {0} has no matching network edge")]
    UnknownEdge(u64),
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LineFeatureRecord {
    pub id: u64,
    /// Label (0/1) for training, likelihood after prediction.
    pub boundary: f64,
    pub vertices: usize,
    pub length: f64,
    pub azimuth: f64,
    pub sinuosity: f64,
    pub red_grad: f64,
    pub green_grad: f64,
    pub blue_grad: f64,
    pub dsm_grad: Option<f64>,
}

impl LineFeatureRecord {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.boundary) {
            return Err(format!("boundary {} outside [0, 1]", self.boundary));
        }
        if self.vertices < 2 {
            return Err(format!("vertices {} < 2", self.vertices));
        }
        if self.length < 0.0 {
            return Err(format!("negative length {}", self.length));
        }
        if !(0.0..180.0).contains(&self.azimuth) {
            return Err(format!("azimuth {} outside [0, 180)", self.azimuth));
        }
        if self.sinuosity < 1.0 {
            return Err(format!("sinuosity {} < 1", self.sinuosity));
        }
        let grads = [
            ("red_grad", Some(self.red_grad)),
            ("green_grad", Some(self.green_grad)),
            ("blue_grad", Some(self.blue_grad)),
            ("dsm_grad", self.dsm_grad),
        ];
        for (name, v) in grads {
            if let Some(v) = v {
                if v < 0.0 {
                    return Err(format!("{name} {v} < 0"));
                }
            }
        }
        Ok(())
    }

    /// Value of a named feature column; `None` for unknown names or an
    /// absent `dsm_grad`.
    pub fn feature(&self, name: &str) -> Option<f64> {
        match name {
            "vertices" => Some(self.vertices as f64),
            "length" => Some(self.length),
            "azimuth" => Some(self.azimuth),
            "sinuosity" => Some(self.sinuosity),
            "red_grad" => Some(self.red_grad),
            "green_grad" => Some(self.green_grad),
            "blue_grad" => Some(self.blue_grad),
            "dsm_grad" => self.dsm_grad,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryFeatures {
    pub vertices: usize,
    pub length: f64,
    pub azimuth: f64,
    pub sinuosity: f64,
}

/// Direction-free bearing of the chord start→end, in degrees within [0, 180).
pub fn azimuth(start: Point2, end: Point2) -> f64 {
    // `+ 0.0` turns -0.0 into 0.0 so atan2 never lands on 180.
    let (mut dx, mut dy) = (end.x - start.x + 0.0, end.y - start.y + 0.0);
    if dx < 0.0 || (dx == 0.0 && dy < 0.0) {
        dx = -dx + 0.0;
        dy = -dy + 0.0;
    }
    let deg = dx.atan2(dy).to_degrees();
    if deg >= 180.0 {
        deg - 180.0
    } else {
        deg
    }
}

pub fn geometry_features(l: &Polyline) -> GeometryFeatures {
    let length = l.length();
    let chord = l.start().distance(&l.end());
    GeometryFeatures {
        vertices: l.vertices().len(),
        length,
        azimuth: azimuth(l.start(), l.end()),
        sinuosity: (length / chord.max(CHORD_FLOOR)).clamp(1.0, SINUOSITY_CAP),
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Values sampled to the left and right of `l`.
///
/// Each segment is walked in a canonical orientation (lexicographically
/// smaller endpoint first) so that reversing the line yields the same sample
/// points with the sides swapped. Samples are spaced at most one GSD apart
/// along the segment, and taken at perpendicular offsets `k·GSD ≤ half_width`.
pub fn side_samples(l: &Polyline, raster: &RasterGrid, band: usize, half_width: f64) -> (Vec<f64>, Vec<f64>) {
    let gsd = raster.georef().gsd();
    let steps = (half_width / gsd + 1e-9).floor() as usize;
    let mut left = Vec::new();
    let mut right = Vec::new();
    if steps == 0 {
        return (left, right);
    }
    for (a, b) in l.segments() {
        let flipped = (b.x, b.y) < (a.x, a.y);
        let (a, b) = if flipped { (b, a) } else { (a, b) };
        let len = a.distance(&b);
        let (tx, ty) = ((b.x - a.x) / len, (b.y - a.y) / len);
        let (nx, ny) = (-ty, tx);
        let n = (len / gsd).ceil() as usize + 1;
        for i in 0..n {
            let t = i as f64 / (n - 1) as f64;
            let p = Point2::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y));
            for k in 1..=steps {
                let off = k as f64 * gsd;
                let l_val = raster.sample(band, Point2::new(p.x + off * nx, p.y + off * ny));
                let r_val = raster.sample(band, Point2::new(p.x - off * nx, p.y - off * ny));
                let (l_out, r_out) = if flipped {
                    (&mut right, &mut left)
                } else {
                    (&mut left, &mut right)
                };
                l_out.extend(l_val);
                r_out.extend(r_val);
            }
        }
    }
    (left, right)
}

/// `|median(left) − median(right)|`, or 0 when either side is empty.
pub fn gradient_feature(l: &Polyline, raster: &RasterGrid, band: usize, half_width: f64) -> f64 {
    let (mut left, mut right) = side_samples(l, raster, band, half_width);
    if left.is_empty() || right.is_empty() {
        return 0.0;
    }
    (median(&mut left) - median(&mut right)).abs()
}

pub fn line_record(
    id: u64,
    l: &Polyline,
    rgb: &RasterGrid,
    dsm: Option<&RasterGrid>,
    half_width: f64,
) -> LineFeatureRecord {
    let geom = geometry_features(l);
    LineFeatureRecord {
        id,
        boundary: 0.0,
        vertices: geom.vertices,
        length: geom.length,
        azimuth: geom.azimuth,
        sinuosity: geom.sinuosity,
        red_grad: gradient_feature(l, rgb, 0, half_width),
        green_grad: gradient_feature(l, rgb, 1, half_width),
        blue_grad: gradient_feature(l, rgb, 2, half_width),
        dsm_grad: dsm.map(|d| gradient_feature(l, d, 0, half_width)),
    }
}

/// One record per network edge, in edge-id order, with `boundary = 0`.
pub fn build_feature_table(
    net: &LineNetwork,
    rgb: &RasterGrid,
    dsm: Option<&RasterGrid>,
    half_width: f64,
) -> Result<Vec<LineFeatureRecord>, FeatureError> {
    if rgb.band_count() != 3 {
        return Err(FeatureError::NotRgb(rgb.band_count()));
    }
    if let Some(d) = dsm {
        if d.band_count() != 1 {
            return Err(FeatureError::DsmBands(d.band_count()));
        }
    }
    if !(half_width >= 0.0 && half_width.is_finite()) {
        return Err(FeatureError::InvalidParam(format!("half_width {half_width}")));
    }
    let edges: Vec<_> = net.edges().iter().collect();
    Ok(edges
        .par_iter()
        .map(|(id, e)| line_record(**id, &e.polyline, rgb, dsm, half_width))
        .collect())
}

/// Sets `boundary` to 1 when at least `coverage_threshold` of an edge's
/// rasterized pixels fall inside the reference buffer, else 0.
#[allow(clippy::too_many_arguments)]
pub fn auto_label(
    records: &[LineFeatureRecord],
    net: &LineNetwork,
    reference: &[Polyline],
    radius: f64,
    coverage_threshold: f64,
    g: &AffineGeoref,
    rows: usize,
    cols: usize,
) -> Result<Vec<LineFeatureRecord>, FeatureError> {
    if reference.is_empty() {
        return Err(FeatureError::EmptyReference);
    }
    if !(radius >= 0.0 && radius.is_finite()) {
        return Err(FeatureError::InvalidParam(format!("radius {radius}")));
    }
    if !(0.0..=1.0).contains(&coverage_threshold) {
        return Err(FeatureError::InvalidParam(format!(
            "coverage threshold {coverage_threshold} outside [0, 1]"
        )));
    }
    let buffer = buffer_mask(reference, radius, g, rows, cols);
    records
        .par_iter()
        .map(|r| {
            let edge = net.edge(r.id).ok_or(FeatureError::UnknownEdge(r.id))?;
            let pixels = rasterize_polyline(&edge.polyline, g, rows, cols);
            let total = pixels.count();
            let inside = pixels.intersection_count(&buffer);
            let label = total > 0 && inside as f64 >= coverage_threshold * total as f64;
            Ok(LineFeatureRecord {
                boundary: if label { 1.0 } else { 0.0 },
                ..r.clone()
            })
        })
        .collect()
}

/// Boundary share of a labeled table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LabelSummary {
    pub lines: usize,
    pub boundary: usize,
}

impl LabelSummary {
    pub fn of(records: &[LineFeatureRecord]) -> Self {
        Self {
            lines: records.len(),
            boundary: records.iter().filter(|r| r.boundary >= 0.5).count(),
        }
    }

    pub fn boundary_percent(&self) -> f64 {
        if self.lines == 0 {
            0.0
        } else {
            100.0 * self.boundary as f64 / self.lines as f64
        }
    }
}

impl fmt::Display for LabelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} lines of which {:.0}% were labeled as 'boundary'",
            self.lines,
            self.boundary_percent()
        )
    }
}

/// Likelihood per edge id, as carried in the `boundary` column.
pub fn likelihood_map(records: &[LineFeatureRecord]) -> BTreeMap<u64, f64> {
    records.iter().map(|r| (r.id, r.boundary)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn line(pts: &[(f64, f64)]) -> Polyline {
        Polyline::from_vertices(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    /// 7×7 band at GSD 1 with pixel (r, c) centered on (c + 0.5, 6.5 − r).
    fn band7(f: impl Fn(usize, usize) -> f64) -> RasterGrid {
        let values = (0..49).map(|i| f(i / 7, i % 7)).collect();
        RasterGrid::new(7, 7, vec![values], AffineGeoref::north_up(0.5, 6.5, 1.0).unwrap(), None).unwrap()
    }

    #[test]
    fn geometry_examples() {
        let g = geometry_features(&line(&[(0.0, 0.0), (0.0, 100.0)]));
        assert_eq!((g.azimuth, g.sinuosity), (0.0, 1.0));
        assert_eq!(geometry_features(&line(&[(0.0, 0.0), (-100.0, 0.0)])).azimuth, 90.0);
        let g = geometry_features(&line(&[(0.0, 0.0), (3.0, 0.0), (3.0, 4.0)]));
        assert_eq!(g.vertices, 3);
        assert_eq!(g.length, 7.0);
        assert!((g.sinuosity - 1.4).abs() < 1e-12);
        assert!((g.azimuth - 36.86989764584402).abs() < 1e-9);
        let ring = geometry_features(&line(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 0.0)]));
        assert_eq!(ring.sinuosity, SINUOSITY_CAP);
        assert_eq!(ring.azimuth, 0.0);
    }

    #[test]
    fn azimuth_fold_matches_bearing_rule() {
        // Oracle: raw bearing mod 360, minus 180 when ≥ 180.
        let fold = |dx: f64, dy: f64| {
            let raw = dx.atan2(dy).to_degrees().rem_euclid(360.0);
            if raw >= 180.0 {
                raw - 180.0
            } else {
                raw
            }
        };
        for (dx, dy) in [(1.0, 1.0), (-1.0, 1.0), (-2.0, -3.0), (5.0, -0.5), (0.0, -4.0)] {
            let a = azimuth(Point2::new(0.0, 0.0), Point2::new(dx, dy));
            assert!((a - fold(dx, dy)).abs() < 1e-9, "({dx},{dy}) {a}");
        }
    }

    #[test]
    fn constant_band_has_zero_gradient() {
        let r = band7(|_, _| 42.0);
        assert_eq!(gradient_feature(&line(&[(0.7, 0.3), (6.1, 5.2)]), &r, 0, 2.0), 0.0);
    }

    #[test]
    fn two_valued_vertical_line() {
        let r = band7(|_, c| if c < 3 { 100.0 } else { 50.0 });
        let l = line(&[(3.0, 0.5), (3.0, 6.5)]);
        assert_eq!(gradient_feature(&l, &r, 0, 2.0), 50.0);
        assert_eq!(gradient_feature(&l.reversed(), &r, 0, 2.0), 50.0);
    }

    #[test]
    fn hand_placed_seven_by_seven() {
        // Northward line along column 3's centers. Offsets 1 and 2 reach
        // columns {2, 1} on the left and {4, 5} on the right; six samples at
        // y = 0.5..5.5 cover rows 6..1.
        let r = band7(|row, c| (10 * c + row) as f64);
        let l = line(&[(3.5, 0.5), (3.5, 5.5)]);
        let (left, right) = side_samples(&l, &r, 0, 2.0);
        let mut expect_left: Vec<f64> = (1..=6).flat_map(|row| [10.0 + row as f64, 20.0 + row as f64]).collect();
        let mut expect_right: Vec<f64> = (1..=6).flat_map(|row| [40.0 + row as f64, 50.0 + row as f64]).collect();
        let sorted = |mut v: Vec<f64>| {
            v.sort_by(f64::total_cmp);
            v
        };
        assert_eq!(sorted(left), sorted(expect_left.clone()));
        assert_eq!(sorted(right), sorted(expect_right.clone()));
        // Medians 18.5 and 48.5.
        assert_eq!(median(&mut expect_left), 18.5);
        assert_eq!(median(&mut expect_right), 48.5);
        assert_eq!(gradient_feature(&l, &r, 0, 2.0), 30.0);
    }

    #[test]
    fn empty_side_gives_zero() {
        let r = band7(|_, c| c as f64);
        // Along the west border: the left side is off-grid.
        let l = line(&[(0.5, 0.5), (0.5, 6.5)]);
        assert_eq!(gradient_feature(&l, &r, 0, 0.4), 0.0);
        assert_eq!(gradient_feature(&line(&[(-5.0, 1.0), (-5.0, 6.0)]), &r, 0, 2.0), 0.0);
    }

    #[test]
    fn nodata_is_dropped() {
        let values = (0..49).map(|i| if i % 7 == 1 { -9999.0 } else { (i % 7) as f64 }).collect();
        let r = RasterGrid::new(7, 7, vec![values], AffineGeoref::north_up(0.5, 6.5, 1.0).unwrap(), Some(-9999.0)).unwrap();
        let l = line(&[(3.5, 0.5), (3.5, 5.5)]);
        // Left side keeps column 2 only; right side columns 4 and 5.
        assert_eq!(gradient_feature(&l, &r, 0, 2.0), 2.5);
    }

    fn rgb7() -> RasterGrid {
        let g = AffineGeoref::north_up(0.5, 6.5, 1.0).unwrap();
        let bands = (0..3)
            .map(|b| (0..49).map(|i| ((i * (b + 3)) % 17) as f64 * 10.0).collect())
            .collect();
        RasterGrid::new(7, 7, bands, g, None).unwrap()
    }

    fn network(lines: &[Polyline]) -> LineNetwork {
        let coll = crate::formats::LineCollection {
            features: lines.iter().cloned().map(crate::formats::LineFeature::new).collect(),
            ..Default::default()
        };
        LineNetwork::from_lines(&coll).unwrap()
    }

    #[test]
    fn table_composes_per_line_features() {
        let lines = [
            line(&[(1.0, 1.0), (5.0, 1.0)]),
            line(&[(5.0, 1.0), (5.0, 6.0), (2.0, 6.0)]),
            line(&[(2.0, 6.0), (1.0, 1.0)]),
        ];
        let net = network(&lines);
        let rgb = rgb7();
        let table = build_feature_table(&net, &rgb, None, 2.0).unwrap();
        assert_eq!(table.len(), 3);
        for (r, l) in table.iter().zip(&lines) {
            let g = geometry_features(l);
            assert_eq!(r.boundary, 0.0);
            assert_eq!((r.vertices, r.length, r.azimuth, r.sinuosity), (g.vertices, g.length, g.azimuth, g.sinuosity));
            assert_eq!(r.red_grad, gradient_feature(l, &rgb, 0, 2.0));
            assert_eq!(r.blue_grad, gradient_feature(l, &rgb, 2, 2.0));
            assert_eq!(r.dsm_grad, None);
        }
        let dsm = band7(|r, c| (r * c) as f64);
        let with = build_feature_table(&net, &rgb, Some(&dsm), 2.0).unwrap();
        for (a, b) in table.iter().zip(&with) {
            assert!(b.dsm_grad.is_some());
            assert_eq!(LineFeatureRecord { dsm_grad: None, ..b.clone() }, *a);
        }
    }

    #[test]
    fn half_overlap_labeling() {
        let g = AffineGeoref::north_up(0.5, 9.5, 1.0).unwrap();
        // Edge through the centers of row 5, columns 0..9: ten pixels.
        let edge = line(&[(0.5, 4.5), (9.5, 4.5)]);
        let net = network(&[edge.clone()]);
        let records = build_feature_table(&net, &rgb10(&g), None, 0.4).unwrap();
        let reference = [line(&[(0.5, 4.5), (4.5, 4.5)])];
        let px = rasterize_polyline(&edge, &g, 10, 10);
        assert_eq!(px.count(), 10);
        assert_eq!(px.intersection_count(&buffer_mask(&reference, 0.3, &g, 10, 10)), 5);
        let at = |t| auto_label(&records, &net, &reference, 0.3, t, &g, 10, 10).unwrap()[0].boundary;
        assert_eq!(at(0.5), 1.0);
        assert_eq!(at(0.51), 0.0);
        let same = auto_label(&records, &net, &[edge], 0.3, 0.8, &g, 10, 10).unwrap();
        assert_eq!(same[0].boundary, 1.0);
        let far = [line(&[(0.5, 8.5), (9.5, 8.5)])];
        assert_eq!(auto_label(&records, &net, &far, 0.3, 0.8, &g, 10, 10).unwrap()[0].boundary, 0.0);
        assert_eq!(
            auto_label(&records, &net, &[], 0.3, 0.8, &g, 10, 10),
            Err(FeatureError::EmptyReference)
        );
    }

    fn rgb10(g: &AffineGeoref) -> RasterGrid {
        RasterGrid::new(10, 10, vec![vec![0.0; 100]; 3], *g, None).unwrap()
    }

    #[test]
    fn label_summary_format() {
        let mut records = Vec::new();
        for i in 0..1870u64 {
            records.push(LineFeatureRecord {
                id: i,
                boundary: if i < 561 { 1.0 } else { 0.0 },
                vertices: 2,
                length: 1.0,
                azimuth: 0.0,
                sinuosity: 1.0,
                red_grad: 0.0,
                green_grad: 0.0,
                blue_grad: 0.0,
                dsm_grad: None,
            });
        }
        assert_eq!(
            LabelSummary::of(&records).to_string(),
            "1870 lines of which 30% were labeled as 'boundary'"
        );
    }

    fn arb_line() -> impl Strategy<Value = Polyline> {
        prop::collection::vec((-1.0f64..8.0, -1.0f64..8.0), 2..8).prop_filter_map("valid", |pts| {
            Polyline::new(pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect(), false).ok()
        })
    }

    proptest! {
        #[test]
        fn reversal_invariance(l in arb_line()) {
            let r = rgb7();
            let rev = l.reversed();
            prop_assert_eq!(geometry_features(&l).azimuth, geometry_features(&rev).azimuth);
            for b in 0..3 {
                prop_assert_eq!(gradient_feature(&l, &r, b, 2.0), gradient_feature(&rev, &r, b, 2.0));
            }
            let s = geometry_features(&l).sinuosity;
            prop_assert!(s >= 1.0);
            let a = geometry_features(&l).azimuth;
            prop_assert!((0.0..180.0).contains(&a));
        }

        #[test]
        fn straight_lines_have_unit_sinuosity(x0 in -1e5f64..1e5, y0 in -1e5f64..1e5, dx in -1e3f64..1e3, dy in -1e3f64..1e3) {
            prop_assume!(dx != 0.0 || dy != 0.0);
            let l = line(&[(x0, y0), (x0 + dx, y0 + dy)]);
            prop_assert!((geometry_features(&l).sinuosity - 1.0).abs() <= 1e-9);
        }
    }
}
