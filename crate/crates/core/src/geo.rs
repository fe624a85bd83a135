//! Geometry and raster primitives shared by every stage of the pipeline.
//!
//! Rasters are north-up with world-file (pixel-center) georeferencing. Line
//! coordinates are projected meters. Pixel-space helpers use a continuous
//! frame where pixel `(row, col)` covers `[col, col + 1) x [row, row + 1)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Distance slack used when comparing pixel-center distances against a radius.
pub const DISTANCE_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeoError {
    #[error("invalid georeference: {0}")]
    InvalidGeoref(String),
    #[error("invalid polyline: {0}")]
    InvalidPolyline(String),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("degenerate output: resample factor {factor} exceeds raster dimensions {rows}x{cols}")]
    DegenerateOutput { factor: usize, rows: usize, cols: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

impl Point2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn distance(&self, other: &Point2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

/// North-up affine transform with world-file semantics: the origin is the
/// center of the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AffineGeoref {
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size_x: f64,
    pub pixel_size_y: f64,
}

impl AffineGeoref {
    pub fn new(
        origin_x: f64,
        origin_y: f64,
        pixel_size_x: f64,
        pixel_size_y: f64,
    ) -> Result<Self, GeoError> {
        let g = Self {
            origin_x,
            origin_y,
            pixel_size_x,
            pixel_size_y,
        };
        g.validate()?;
        Ok(g)
    }

    /// Square north-up pixels of the given ground sample distance.
    pub fn north_up(origin_x: f64, origin_y: f64, gsd: f64) -> Result<Self, GeoError> {
        Self::new(origin_x, origin_y, gsd, -gsd)
    }

    pub fn validate(&self) -> Result<(), GeoError> {
        if !(self.origin_x.is_finite() && self.origin_y.is_finite()) {
            return Err(GeoError::InvalidGeoref("non-finite origin".into()));
        }
        if !(self.pixel_size_x.is_finite() && self.pixel_size_x > 0.0) {
            return Err(GeoError::InvalidGeoref(format!(
                "pixel_size_x must be > 0, got {}",
                self.pixel_size_x
            )));
        }
        if !(self.pixel_size_y.is_finite() && self.pixel_size_y < 0.0) {
            return Err(GeoError::InvalidGeoref(format!(
                "pixel_size_y must be < 0 (north-up), got {}",
                self.pixel_size_y
            )));
        }
        Ok(())
    }

    /// Ground sample distance; equal to `pixel_size_x`.
    pub fn gsd(&self) -> f64 {
        self.pixel_size_x
    }

    pub fn pixel_center(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.origin_x + col as f64 * self.pixel_size_x,
            self.origin_y + row as f64 * self.pixel_size_y,
        )
    }

    /// World coordinates of the lattice corner shared by pixels
    /// `(row - 1, col - 1)` .. `(row, col)`.
    pub fn corner(&self, row: usize, col: usize) -> Point2 {
        Point2::new(
            self.origin_x + (col as f64 - 0.5) * self.pixel_size_x,
            self.origin_y + (row as f64 - 0.5) * self.pixel_size_y,
        )
    }

    /// Continuous pixel-space coordinates `(u, v)` where pixel `(row, col)`
    /// covers `u in [col, col + 1)`, `v in [row, row + 1)`.
    pub fn to_pixel_space(&self, p: Point2) -> (f64, f64) {
        (
            (p.x - self.origin_x) / self.pixel_size_x + 0.5,
            (p.y - self.origin_y) / self.pixel_size_y + 0.5,
        )
    }
}

/// Nearest pixel `(row, col)` for a world point. Indices may fall outside the
/// grid; callers filter.
pub fn world_to_pixel(p: Point2, g: &AffineGeoref) -> (i64, i64) {
    let col = ((p.x - g.origin_x) / g.pixel_size_x).round() as i64;
    let row = ((p.y - g.origin_y) / g.pixel_size_y).round() as i64;
    (row, col)
}

/// Multi-band raster. Band values are stored row-major as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    rows: usize,
    cols: usize,
    bands: Vec<Vec<f64>>,
    georef: AffineGeoref,
    nodata: Option<f64>,
}

impl RasterGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        bands: Vec<Vec<f64>>,
        georef: AffineGeoref,
        nodata: Option<f64>,
    ) -> Result<Self, GeoError> {
        if rows == 0 || cols == 0 {
            return Err(GeoError::InvalidRaster("rows and cols must be >= 1".into()));
        }
        if bands.is_empty() {
            return Err(GeoError::InvalidRaster("raster has no bands".into()));
        }
        georef.validate()?;
        for (i, band) in bands.iter().enumerate() {
            if band.len() != rows * cols {
                return Err(GeoError::InvalidRaster(format!(
                    "band {i} has {} values, expected {}",
                    band.len(),
                    rows * cols
                )));
            }
            let is_sentinel = |v: f64| match nodata {
                Some(nd) => v == nd || (nd.is_nan() && v.is_nan()),
                None => false,
            };
            if band.iter().any(|v| !v.is_finite() && !is_sentinel(*v)) {
                return Err(GeoError::InvalidRaster(format!("band {i} has non-finite values")));
            }
        }
        Ok(Self {
            rows,
            cols,
            bands,
            georef,
            nodata,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn band_count(&self) -> usize {
        self.bands.len()
    }

    pub fn georef(&self) -> &AffineGeoref {
        &self.georef
    }

    pub fn nodata(&self) -> Option<f64> {
        self.nodata
    }

    pub fn band(&self, index: usize) -> &[f64] {
        &self.bands[index]
    }

    pub fn bands(&self) -> &[Vec<f64>] {
        &self.bands
    }

    pub fn value(&self, band: usize, row: usize, col: usize) -> f64 {
        self.bands[band][row * self.cols + col]
    }

    /// Band value at a world point (nearest pixel), or `None` when the point
    /// is off-grid or the pixel holds nodata.
    pub fn sample(&self, band: usize, p: Point2) -> Option<f64> {
        let (row, col) = world_to_pixel(p, &self.georef);
        if row < 0 || col < 0 || row as usize >= self.rows || col as usize >= self.cols {
            return None;
        }
        let v = self.value(band, row as usize, col as usize);
        if self.is_nodata(v) {
            None
        } else {
            Some(v)
        }
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        match self.nodata {
            Some(nd) => v == nd || (nd.is_nan() && v.is_nan()),
            None => false,
        }
    }

    /// A single-band view of one band, sharing georef and nodata.
    pub fn single_band(&self, band: usize) -> RasterGrid {
        RasterGrid {
            rows: self.rows,
            cols: self.cols,
            bands: vec![self.bands[band].clone()],
            georef: self.georef,
            nodata: self.nodata,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    vertices: Vec<Point2>,
    closed: bool,
}

impl Polyline {
    pub fn new(vertices: Vec<Point2>, closed: bool) -> Result<Self, GeoError> {
        if vertices.len() < 2 {
            return Err(GeoError::InvalidPolyline(format!(
                "need at least 2 vertices, got {}",
                vertices.len()
            )));
        }
        if let Some(p) = vertices.iter().find(|p| !p.is_finite()) {
            return Err(GeoError::InvalidPolyline(format!("non-finite vertex {p:?}")));
        }
        if let Some(i) = vertices.windows(2).position(|w| w[0] == w[1]) {
            return Err(GeoError::InvalidPolyline(format!(
                "consecutive vertices {i} and {} coincide",
                i + 1
            )));
        }
        if closed && vertices.first() != vertices.last() {
            return Err(GeoError::InvalidPolyline(
                "closed polyline must end at its first vertex".into(),
            ));
        }
        Ok(Self { vertices, closed })
    }

    /// Builds a polyline, marking it closed when the first and last vertex
    /// coincide.
    pub fn from_vertices(vertices: Vec<Point2>) -> Result<Self, GeoError> {
        let closed = vertices.len() > 2 && vertices.first() == vertices.last();
        Self::new(vertices, closed)
    }

    pub fn vertices(&self) -> &[Point2] {
        &self.vertices
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn start(&self) -> Point2 {
        self.vertices[0]
    }

    pub fn end(&self) -> Point2 {
        self.vertices[self.vertices.len() - 1]
    }

    pub fn reversed(&self) -> Polyline {
        let mut vertices = self.vertices.clone();
        vertices.reverse();
        Polyline {
            vertices,
            closed: self.closed,
        }
    }

    pub fn segments(&self) -> impl Iterator<Item = (Point2, Point2)> + '_ {
        self.vertices.windows(2).map(|w| (w[0], w[1]))
    }

    pub fn length(&self) -> f64 {
        polyline_length(self)
    }
}

pub fn polyline_length(l: &Polyline) -> f64 {
    l.segments().map(|(a, b)| a.distance(&b)).sum()
}

/// Euclidean distance from `p` to the segment `a`-`b`.
pub fn point_segment_distance(p: Point2, a: Point2, b: Point2) -> f64 {
    let dx = b.x - a.x;
    let dy = b.y - a.y;
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.distance(&a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.distance(&Point2::new(a.x + t * dx, a.y + t * dy))
}

pub fn point_polyline_distance(p: Point2, l: &Polyline) -> f64 {
    l.segments()
        .map(|(a, b)| point_segment_distance(p, a, b))
        .fold(f64::INFINITY, f64::min)
}

/// Douglas-Peucker simplification. Endpoints (and closure) are preserved; a
/// tolerance of zero returns the input unchanged.
pub fn simplify(l: &Polyline, tol: f64) -> Polyline {
    if tol <= 0.0 || l.vertices.len() <= 2 {
        return l.clone();
    }
    let pts = &l.vertices;
    let mut keep = vec![false; pts.len()];
    keep[0] = true;
    keep[pts.len() - 1] = true;
    let mut stack = vec![(0usize, pts.len() - 1)];
    while let Some((first, last)) = stack.pop() {
        if last <= first + 1 {
            continue;
        }
        let (mut best, mut best_dist) = (first, -1.0);
        for i in first + 1..last {
            let d = point_segment_distance(pts[i], pts[first], pts[last]);
            if d > best_dist {
                best = i;
                best_dist = d;
            }
        }
        if best_dist > tol {
            keep[best] = true;
            stack.push((first, best));
            stack.push((best, last));
        }
    }
    let mut vertices: Vec<Point2> = pts
        .iter()
        .zip(&keep)
        .filter_map(|(p, k)| k.then_some(*p))
        .collect();
    // A closed ring must keep at least one vertex besides its endpoint.
    if l.closed && vertices.len() < 3 {
        let far = (1..pts.len() - 1)
            .max_by(|&a, &b| {
                pts[a]
                    .distance(&pts[0])
                    .total_cmp(&pts[b].distance(&pts[0]))
                    .then(b.cmp(&a))
            })
            .expect("closed ring with more than two vertices");
        vertices = vec![pts[0], pts[far], pts[0]];
    }
    Polyline {
        vertices,
        closed: l.closed,
    }
}

/// Row-major pixel set.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PixelMask {
    rows: usize,
    cols: usize,
    bits: Vec<bool>,
}

impl PixelMask {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            bits: vec![false; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.bits[row * self.cols + col]
    }

    pub fn set(&mut self, row: usize, col: usize) {
        self.bits[row * self.cols + col] = true;
    }

    /// Sets `(row, col)` if it lies on the grid.
    pub fn set_checked(&mut self, row: i64, col: i64) {
        if row >= 0 && col >= 0 && (row as usize) < self.rows && (col as usize) < self.cols {
            self.set(row as usize, col as usize);
        }
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn union_with(&mut self, other: &PixelMask) {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= *b;
        }
    }

    pub fn intersection_count(&self, other: &PixelMask) -> usize {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        self.bits
            .iter()
            .zip(&other.bits)
            .filter(|(a, b)| **a && **b)
            .count()
    }

    pub fn is_subset_of(&self, other: &PixelMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }

    pub fn iter_set(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let cols = self.cols;
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(move |(i, _)| (i / cols, i % cols))
    }
}

/// Supercover rasterization: every pixel whose half-open cell the line
/// passes through is set. Off-grid pixels are dropped.
pub fn rasterize_polyline(l: &Polyline, g: &AffineGeoref, rows: usize, cols: usize) -> PixelMask {
    let mut mask = PixelMask::new(rows, cols);
    rasterize_into(&mut mask, l, g);
    mask
}

pub fn rasterize_lines(lines: &[Polyline], g: &AffineGeoref, rows: usize, cols: usize) -> PixelMask {
    let mut mask = PixelMask::new(rows, cols);
    for l in lines {
        rasterize_into(&mut mask, l, g);
    }
    mask
}

fn rasterize_into(mask: &mut PixelMask, l: &Polyline, g: &AffineGeoref) {
    for (a, b) in l.segments() {
        let (u0, v0) = g.to_pixel_space(a);
        let (u1, v1) = g.to_pixel_space(b);
        traverse_segment(u0, v0, u1, v1, mask.rows, mask.cols, |row, col| {
            mask.set_checked(row, col)
        });
    }
}

/// Visits the cells `(floor(v(t)), floor(u(t)))` for `t in [0, 1]` along the
/// pixel-space segment, clipped to a one-cell margin around the grid.
fn traverse_segment(
    u0: f64,
    v0: f64,
    u1: f64,
    v1: f64,
    rows: usize,
    cols: usize,
    mut visit: impl FnMut(i64, i64),
) {
    let du = u1 - u0;
    let dv = v1 - v0;
    let Some((t_start, t_end)) = clip_parameter(u0, du, -1.0, cols as f64 + 1.0)
        .and_then(|(a, b)| {
            clip_parameter(v0, dv, -1.0, rows as f64 + 1.0).map(|(c, d)| (a.max(c), b.min(d)))
        })
        .filter(|(a, b)| a <= b)
    else {
        return;
    };

    let mut col = if t_start == 0.0 { u0 } else { u0 + t_start * du }.floor() as i64;
    let mut row = if t_start == 0.0 { v0 } else { v0 + t_start * dv }.floor() as i64;
    let step_u: i64 = if du > 0.0 { 1 } else { -1 };
    let step_v: i64 = if dv > 0.0 { 1 } else { -1 };

    // Parameter where the floor of the coordinate changes next. Moving in the
    // positive direction the change happens at the boundary itself; moving
    // negative it happens just after crossing the boundary at `col`.
    let next_t = |origin: f64, delta: f64, cell: i64| -> f64 {
        if delta > 0.0 {
            ((cell + 1) as f64 - origin) / delta
        } else if delta < 0.0 {
            (cell as f64 - origin) / delta
        } else {
            f64::INFINITY
        }
    };

    visit(row, col);
    loop {
        let tu = next_t(u0, du, col);
        let tv = next_t(v0, dv, row);
        let t = tu.min(tv);
        if t > t_end || !t.is_finite() {
            break;
        }
        // Negative-direction crossings exactly at t_end leave the cell only
        // after the segment has ended.
        let u_moves = tu == t;
        let v_moves = tv == t;
        if t == t_end {
            let u_enters = u_moves && du > 0.0;
            let v_enters = v_moves && dv > 0.0;
            if !(u_enters || v_enters) {
                break;
            }
            if u_enters {
                col += step_u;
            }
            if v_enters {
                row += step_v;
            }
            visit(row, col);
            break;
        }
        if u_moves && v_moves && (du > 0.0) != (dv > 0.0) {
            // Mixed-direction corner: the positive axis changes at the corner
            // itself, the negative axis right after it.
            if du > 0.0 {
                col += step_u;
            } else {
                row += step_v;
            }
            visit(row, col);
            if du > 0.0 {
                row += step_v;
            } else {
                col += step_u;
            }
        } else {
            if u_moves {
                col += step_u;
            }
            if v_moves {
                row += step_v;
            }
        }
        visit(row, col);
    }
}

/// Parameter interval of `origin + t * delta` within `[lo, hi]`, intersected
/// with `[0, 1]`.
fn clip_parameter(origin: f64, delta: f64, lo: f64, hi: f64) -> Option<(f64, f64)> {
    if delta == 0.0 {
        return (origin >= lo && origin <= hi).then_some((0.0, 1.0));
    }
    let a = (lo - origin) / delta;
    let b = (hi - origin) / delta;
    let (t0, t1) = if a < b { (a, b) } else { (b, a) };
    let (t0, t1) = (t0.max(0.0), t1.min(1.0));
    (t0 <= t1).then_some((t0, t1))
}

/// Pixels whose center lies within `r` meters of any input polyline.
pub fn buffer_mask(
    lines: &[Polyline],
    r: f64,
    g: &AffineGeoref,
    rows: usize,
    cols: usize,
) -> PixelMask {
    let mut mask = PixelMask::new(rows, cols);
    let gsd = g.gsd();
    let reach = r / gsd + 1.0;
    for l in lines {
        for (a, b) in l.segments() {
            let (ua, va) = g.to_pixel_space(a);
            let (ub, vb) = g.to_pixel_space(b);
            let c0 = ((ua.min(ub) - 0.5 - reach).floor().max(0.0)) as usize;
            let c1 = ((ua.max(ub) - 0.5 + reach).ceil().min(cols as f64 - 1.0)) as i64;
            let r0 = ((va.min(vb) - 0.5 - reach).floor().max(0.0)) as usize;
            let r1 = ((va.max(vb) - 0.5 + reach).ceil().min(rows as f64 - 1.0)) as i64;
            if c1 < 0 || r1 < 0 {
                continue;
            }
            for row in r0..=r1 as usize {
                for col in c0..=c1 as usize {
                    if mask.get(row, col) {
                        continue;
                    }
                    if point_segment_distance(g.pixel_center(row, col), a, b) <= r + DISTANCE_EPS {
                        mask.set(row, col);
                    }
                }
            }
        }
    }
    mask
}

/// Nearest-neighbour downsampling by an integer factor, sampling the source
/// pixel under each output pixel center.
pub fn resample_nearest(r: &RasterGrid, factor: usize) -> Result<RasterGrid, GeoError> {
    if factor == 0 {
        return Err(GeoError::InvalidRaster("resample factor must be >= 1".into()));
    }
    if factor > r.rows || factor > r.cols {
        return Err(GeoError::DegenerateOutput {
            factor,
            rows: r.rows,
            cols: r.cols,
        });
    }
    if factor == 1 {
        return Ok(r.clone());
    }
    let rows = r.rows / factor;
    let cols = r.cols / factor;
    let f = factor as f64;
    let src = |i: usize| ((i as f64 + 0.5) * f).floor() as usize;
    let bands = r
        .bands
        .iter()
        .map(|band| {
            let mut out = Vec::with_capacity(rows * cols);
            for i in 0..rows {
                let si = src(i);
                for j in 0..cols {
                    out.push(band[si * r.cols + src(j)]);
                }
            }
            out
        })
        .collect();
    let g = r.georef;
    let georef = AffineGeoref {
        origin_x: g.origin_x + (f - 1.0) * 0.5 * g.pixel_size_x,
        origin_y: g.origin_y + (f - 1.0) * 0.5 * g.pixel_size_y,
        pixel_size_x: g.pixel_size_x * f,
        pixel_size_y: g.pixel_size_y * f,
    };
    RasterGrid::new(rows, cols, bands, georef, r.nodata)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn georef() -> AffineGeoref {
        AffineGeoref::north_up(100.025, 200.975, 0.05).unwrap()
    }

    fn line(pts: &[(f64, f64)]) -> Polyline {
        Polyline::from_vertices(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap()
    }

    #[test]
    fn world_to_pixel_examples() {
        let g = georef();
        assert_eq!(world_to_pixel(Point2::new(g.origin_x, g.origin_y), &g), (0, 0));
        assert_eq!(world_to_pixel(Point2::new(g.origin_x + 0.30, g.origin_y), &g), (0, 6));
        assert_eq!(world_to_pixel(Point2::new(g.origin_x + 0.024, g.origin_y), &g), (0, 0));
        assert_eq!(world_to_pixel(Point2::new(g.origin_x + 0.026, g.origin_y), &g), (0, 1));
    }

    #[test]
    fn georef_rejects_bad_pixel_sizes() {
        assert!(AffineGeoref::new(0.0, 0.0, 0.05, 0.05).is_err());
        assert!(AffineGeoref::new(0.0, 0.0, -0.05, -0.05).is_err());
        assert!(AffineGeoref::new(0.0, 0.0, 0.0, -0.05).is_err());
    }

    #[test]
    fn pixel_center_round_trip() {
        let g = georef();
        for row in 0..40 {
            for col in 0..40 {
                let p = g.pixel_center(row, col);
                assert_eq!(world_to_pixel(p, &g), (row as i64, col as i64));
            }
        }
    }

    #[test]
    fn polyline_validation() {
        assert!(Polyline::new(vec![Point2::new(0.0, 0.0)], false).is_err());
        assert!(Polyline::new(vec![Point2::new(0.0, 0.0), Point2::new(0.0, 0.0)], false).is_err());
        assert!(Polyline::new(
            vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0), Point2::new(1.0, 1.0)],
            true
        )
        .is_err());
    }

    #[test]
    fn polyline_length_examples() {
        assert_eq!(line(&[(0.0, 0.0), (3.0, 4.0)]).length(), 5.0);
        assert_eq!(line(&[(0.0, 0.0), (3.0, 0.0), (3.0, 4.0)]).length(), 7.0);
        let square = line(&[(0.0, 0.0), (1.0, 0.0), (1.0, 1.0), (0.0, 1.0), (0.0, 0.0)]);
        assert!(square.is_closed());
        assert_eq!(square.length(), 4.0);
    }

    #[test]
    fn simplify_examples() {
        let collinear = line(&[(0.0, 0.0), (5.0, 0.0), (10.0, 0.0)]);
        assert_eq!(simplify(&collinear, 0.01), line(&[(0.0, 0.0), (10.0, 0.0)]));
        assert_eq!(simplify(&collinear, 0.0), collinear);

        let mut stairs = vec![(0.0, 0.0)];
        for k in 0..6 {
            let k = k as f64;
            stairs.push((k + 1.0, k));
            stairs.push((k + 1.0, k + 1.0));
        }
        let stairs = line(&stairs);
        let s = simplify(&stairs, 2.0);
        assert_eq!(s.vertices(), &[stairs.start(), stairs.end()]);
        let worst = stairs
            .vertices()
            .iter()
            .map(|p| point_polyline_distance(*p, &s))
            .fold(0.0, f64::max);
        assert!(worst <= 2.0, "{worst}");
    }

    #[test]
    fn simplify_keeps_ring_closed() {
        let ring = line(&[(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0), (0.0, 0.0)]);
        let s = simplify(&ring, 10.0);
        assert!(s.is_closed());
        assert_eq!(s.start(), s.end());
        assert!(s.vertices().len() >= 3);
        let s = simplify(&ring, 0.5);
        assert_eq!(s, ring);
    }

    /// Cells (row, col) whose half-open pixel-space square contains some point
    /// of the segment, by per-cell parameter intervals.
    fn cell_hit_oracle(u0: f64, v0: f64, u1: f64, v1: f64, row: i64, col: i64) -> bool {
        // Interval of t in [0,1] with floor(origin + t*delta) == cell, as
        // (lo, lo_inclusive, hi, hi_inclusive).
        fn axis(origin: f64, delta: f64, cell: i64) -> Option<(f64, bool, f64, bool)> {
            let lo = cell as f64;
            let hi = lo + 1.0;
            if delta == 0.0 {
                return (origin >= lo && origin < hi).then_some((0.0, true, 1.0, true));
            }
            if delta > 0.0 {
                Some(((lo - origin) / delta, true, (hi - origin) / delta, false))
            } else {
                Some(((hi - origin) / delta, false, (lo - origin) / delta, true))
            }
        }
        let (Some(a), Some(b)) = (axis(u0, u1 - u0, col), axis(v0, v1 - v0, row)) else {
            return false;
        };
        let mut lo = (0.0, true);
        let mut hi = (1.0, true);
        for (l, li, h, hi_inc) in [a, b] {
            if l > lo.0 || (l == lo.0 && !li) {
                lo = (l, li);
            }
            if h < hi.0 || (h == hi.0 && !hi_inc) {
                hi = (h, hi_inc);
            }
        }
        lo.0 < hi.0 || (lo.0 == hi.0 && lo.1 && hi.1)
    }

    fn oracle_mask(l: &Polyline, g: &AffineGeoref, rows: usize, cols: usize) -> PixelMask {
        let mut mask = PixelMask::new(rows, cols);
        for (a, b) in l.segments() {
            let (u0, v0) = g.to_pixel_space(a);
            let (u1, v1) = g.to_pixel_space(b);
            for row in 0..rows {
                for col in 0..cols {
                    if cell_hit_oracle(u0, v0, u1, v1, row as i64, col as i64) {
                        mask.set(row, col);
                    }
                }
            }
        }
        mask
    }

    #[test]
    fn rasterize_horizontal_row() {
        let g = AffineGeoref::north_up(0.0, 0.0, 1.0).unwrap();
        let l = line(&[(-0.5, -3.0), (9.5, -3.0)]);
        let m = rasterize_polyline(&l, &g, 10, 10);
        for row in 0..10 {
            for col in 0..10 {
                assert_eq!(m.get(row, col), row == 3, "({row},{col})");
            }
        }
    }

    #[test]
    fn rasterize_off_grid_is_empty() {
        let g = AffineGeoref::north_up(0.0, 0.0, 1.0).unwrap();
        let l = line(&[(50.0, 50.0), (60.0, 70.0)]);
        assert!(rasterize_polyline(&l, &g, 10, 10).is_empty());
    }

    #[test]
    fn rasterize_diagonal_matches_oracle() {
        let g = AffineGeoref::north_up(0.0, 0.0, 1.0).unwrap();
        let l = line(&[(0.0, 0.0), (9.0, -9.0)]);
        let m = rasterize_polyline(&l, &g, 10, 10);
        assert_eq!(m, oracle_mask(&l, &g, 10, 10));
        assert_eq!(m.count(), 10);
        let anti = line(&[(9.0, 0.0), (0.0, -9.0)]);
        assert_eq!(rasterize_polyline(&anti, &g, 10, 10), oracle_mask(&anti, &g, 10, 10));
    }

    #[test]
    fn rasterize_lattice_aligned_lines_match_oracle() {
        let g = AffineGeoref::north_up(0.0, 0.0, 1.0).unwrap();
        // Lines on cell edges and through lattice corners in all directions.
        let cases = [
            line(&[(-0.5, -0.5), (5.5, -0.5)]),
            line(&[(5.5, -0.5), (-0.5, -0.5)]),
            line(&[(2.5, -0.5), (2.5, -7.5)]),
            line(&[(2.5, -7.5), (2.5, -0.5)]),
            line(&[(-0.5, -0.5), (6.5, -7.5)]),
            line(&[(6.5, -7.5), (-0.5, -0.5)]),
            line(&[(6.5, -0.5), (-0.5, -7.5)]),
            line(&[(-0.5, -7.5), (6.5, -0.5)]),
            line(&[(0.5, -0.5), (3.5, -6.5), (8.5, -6.5), (8.5, -1.5)]),
        ];
        for l in &cases {
            assert_eq!(rasterize_polyline(l, &g, 10, 10), oracle_mask(l, &g, 10, 10), "{l:?}");
        }
    }

    #[test]
    fn buffer_examples() {
        let g = AffineGeoref::north_up(0.0, 0.0, 0.05).unwrap();
        let (rows, cols) = (40, 40);
        // Horizontal line through the centers of row 20.
        let y = g.pixel_center(20, 0).y;
        let l = line(&[(g.pixel_center(0, 0).x, y), (g.pixel_center(0, 39).x, y)]);
        let m = buffer_mask(std::slice::from_ref(&l), 0.30, &g, rows, cols);
        for row in 0..rows {
            let expected = (14..=26).contains(&row);
            for col in 0..cols {
                assert_eq!(m.get(row, col), expected, "({row},{col})");
            }
        }
        let zero = buffer_mask(std::slice::from_ref(&l), 0.0, &g, rows, cols);
        assert_eq!(zero.count(), 40);
        assert!((0..cols).all(|c| zero.get(20, c)));
    }

    #[test]
    fn resample_examples() {
        let g = AffineGeoref::north_up(0.025, -0.025, 0.05).unwrap();
        let mut values = vec![0.0; 60 * 60];
        for (i, v) in values.iter_mut().enumerate() {
            *v = (i % 251) as f64;
        }
        let r = RasterGrid::new(60, 60, vec![values], g, None).unwrap();
        assert_eq!(resample_nearest(&r, 1).unwrap(), r);
        let out = resample_nearest(&r, 6).unwrap();
        assert_eq!((out.rows(), out.cols()), (10, 10));
        assert!((out.georef().gsd() - 0.30).abs() < 1e-12);
        // New top-left center sits at the center of the first 6x6 block.
        assert!((out.georef().origin_x - 0.15).abs() < 1e-12);
        assert!((out.georef().origin_y + 0.15).abs() < 1e-12);
        assert!(matches!(
            resample_nearest(&r, 61),
            Err(GeoError::DegenerateOutput { .. })
        ));
    }

    #[test]
    fn resample_checkerboard_blocks() {
        let g = AffineGeoref::north_up(0.0, 0.0, 0.05).unwrap();
        let mut values = vec![0.0; 144];
        for row in 0..12 {
            for col in 0..12 {
                values[row * 12 + col] = if (row / 6 + col / 6) % 2 == 0 { 255.0 } else { 0.0 };
            }
        }
        let r = RasterGrid::new(12, 12, vec![values], g, None).unwrap();
        let out = resample_nearest(&r, 6).unwrap();
        assert_eq!(out.band(0), &[255.0, 0.0, 0.0, 255.0]);
    }

    fn arb_polyline() -> impl Strategy<Value = Polyline> {
        prop::collection::vec((0.0f64..2.0, 0.0f64..2.0), 2..8).prop_filter_map(
            "distinct consecutive vertices",
            |pts| {
                Polyline::new(pts.into_iter().map(|(x, y)| Point2::new(x, y)).collect(), false)
                    .ok()
            },
        )
    }

    proptest! {
        #[test]
        fn length_reversal_and_concatenation(l in arb_polyline(), extra in arb_polyline()) {
            prop_assert!((l.length() - l.reversed().length()).abs() < 1e-9);
            let mut joined = l.vertices().to_vec();
            let shift = Point2::new(l.end().x - extra.start().x, l.end().y - extra.start().y);
            joined.extend(extra.vertices()[1..].iter().map(|p| Point2::new(p.x + shift.x, p.y + shift.y)));
            if let Ok(j) = Polyline::new(joined, false) {
                let shifted_len: f64 = extra.length();
                prop_assert!((j.length() - (l.length() + shifted_len)).abs() < 1e-9);
            }
        }

        #[test]
        fn simplify_shortens_and_is_idempotent(l in arb_polyline(), tol in 0.0f64..0.5) {
            let s = simplify(&l, tol);
            prop_assert!(s.length() <= l.length() + 1e-12);
            prop_assert_eq!(simplify(&s, tol), s.clone());
            for p in l.vertices() {
                prop_assert!(point_polyline_distance(*p, &s) <= tol + 1e-12);
            }
        }

        #[test]
        fn rasterize_matches_oracle(l in arb_polyline()) {
            let g = AffineGeoref::north_up(0.025, 1.975, 0.05).unwrap();
            prop_assert_eq!(rasterize_polyline(&l, &g, 40, 40), oracle_mask(&l, &g, 40, 40));
        }

        #[test]
        fn rasterized_line_inside_half_diagonal_buffer(l in arb_polyline()) {
            let g = AffineGeoref::north_up(0.025, 1.975, 0.05).unwrap();
            let r = g.gsd() * std::f64::consts::SQRT_2 / 2.0;
            let raster = rasterize_polyline(&l, &g, 40, 40);
            let buffer = buffer_mask(std::slice::from_ref(&l), r, &g, 40, 40);
            prop_assert!(raster.is_subset_of(&buffer));
        }

        #[test]
        fn buffer_is_monotone(l in arb_polyline(), r1 in 0.0f64..0.3, dr in 0.0f64..0.3) {
            let g = AffineGeoref::north_up(0.025, 1.975, 0.05).unwrap();
            let small = buffer_mask(std::slice::from_ref(&l), r1, &g, 40, 40);
            let large = buffer_mask(std::slice::from_ref(&l), r1 + dr, &g, 40, 40);
            prop_assert!(small.is_subset_of(&large));
        }

        #[test]
        fn resampled_values_come_from_source(
            values in prop::collection::vec(0u8..=255, 15 * 13),
            factor in 1usize..=13,
        ) {
            let g = AffineGeoref::north_up(0.0, 0.0, 0.05).unwrap();
            let band: Vec<f64> = values.iter().map(|v| *v as f64).collect();
            let r = RasterGrid::new(15, 13, vec![band.clone()], g, None).unwrap();
            let out = resample_nearest(&r, factor).unwrap();
            prop_assert_eq!(out.rows(), 15 / factor);
            prop_assert_eq!(out.cols(), 13 / factor);
            for v in out.band(0) {
                prop_assert!(band.contains(v));
            }
        }
    }
}
