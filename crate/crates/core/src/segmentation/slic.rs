//! Simple Linear Iterative Clustering in CIELAB space.
//!
//! Assignment reads only the previous iteration's centers, so the row-parallel
//! assignment step gives the same labels as a serial one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::RasterGrid;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SegmentationError {
    #[error("too many clusters: {k} requested for {pixels} pixels")]
    TooManyClusters { k: usize, pixels: usize },
    #[error("invalid segmentation parameters: {0}")]
    InvalidParams(String),
    #[error("segmentation needs a 3-band RGB raster, got {0} band(s)")]
    NotRgb(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegParams {
    /// 0 = fewest superpixels, 1 = most.
    pub scale: f64,
    pub compactness: f64,
    pub iterations: usize,
    /// Douglas–Peucker tolerance in meters; `None` means one GSD.
    pub simplify_tol: Option<f64>,
}

impl Default for SegParams {
    fn default() -> Self {
        Self {
            scale: 0.5,
            compactness: 10.0,
            iterations: 10,
            simplify_tol: None,
        }
    }
}

impl SegParams {
    pub fn validate(&self) -> Result<(), SegmentationError> {
        if !(0.0..=1.0).contains(&self.scale) {
            return Err(SegmentationError::InvalidParams(format!(
                "scale must lie in [0, 1], got {}",
                self.scale
            )));
        }
        if !(self.compactness > 0.0 && self.compactness.is_finite()) {
            return Err(SegmentationError::InvalidParams(format!(
                "compactness must be positive, got {}",
                self.compactness
            )));
        }
        if let Some(tol) = self.simplify_tol {
            if !(tol >= 0.0 && tol.is_finite()) {
                return Err(SegmentationError::InvalidParams(format!(
                    "simplify_tol must be >= 0, got {tol}"
                )));
            }
        }
        Ok(())
    }

    pub fn simplify_tol_for(&self, gsd: f64) -> f64 {
        self.simplify_tol.unwrap_or(gsd)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    rows: usize,
    cols: usize,
    labels: Vec<u32>,
    regions: usize,
}

impl LabelGrid {
    /// Validates that labels cover `[0, K)` with no empty label.
    pub fn new(rows: usize, cols: usize, labels: Vec<u32>) -> Result<Self, SegmentationError> {
        if rows == 0 || cols == 0 || labels.len() != rows * cols {
            return Err(SegmentationError::InvalidParams(format!(
                "label grid {rows}x{cols} with {} labels",
                labels.len()
            )));
        }
        let regions = labels.iter().max().map_or(0, |m| *m as usize + 1);
        let mut seen = vec![false; regions];
        for &l in &labels {
            seen[l as usize] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(SegmentationError::InvalidParams(format!(
                "label {missing} is empty"
            )));
        }
        Ok(Self {
            rows,
            cols,
            labels,
            regions,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn region_count(&self) -> usize {
        self.regions
    }

    pub fn get(&self, row: usize, col: usize) -> u32 {
        self.labels[row * self.cols + col]
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn region_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.regions];
        for &l in &self.labels {
            sizes[l as usize] += 1;
        }
        sizes
    }
}

/// Requested cluster count for an image of `pixels` pixels.
pub fn target_clusters(pixels: usize, scale: f64) -> usize {
    let n = pixels as f64;
    let k_min = (n / 40_000.0).max(4.0);
    let k_max = (n / 100.0).max(k_min);
    (k_min + scale * (k_max - k_min)).round() as usize
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Center {
    lab: [f64; 3],
    x: f64,
    y: f64,
}

pub fn slic_segment(rgb: &RasterGrid, p: &SegParams, seed: u64) -> Result<LabelGrid, SegmentationError> {
    p.validate()?;
    if rgb.band_count() != 3 {
        return Err(SegmentationError::NotRgb(rgb.band_count()));
    }
    let (rows, cols) = (rgb.rows(), rgb.cols());
    let pixels = rows * cols;
    let k = target_clusters(pixels, p.scale);
    if k > pixels {
        return Err(SegmentationError::TooManyClusters { k, pixels });
    }

    let lab = to_lab(rgb);
    let s = (pixels as f64 / k as f64).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers = initial_centers(&lab, rows, cols, k, &mut rng);
    log::debug!("slic: k={k} realized={} S={s:.2}", centers.len());

    let mut labels = vec![0u32; pixels];
    for iter in 0..p.iterations.max(1) {
        labels = assign(&lab, rows, cols, &centers, s, p.compactness);
        if iter + 1 < p.iterations {
            update_centers(&lab, cols, &labels, &mut centers);
        }
    }
    Ok(enforce_connectivity(rows, cols, &labels))
}

fn srgb_to_linear(c: f64) -> f64 {
    let c = (c / 255.0).clamp(0.0, 1.0);
    if c <= 0.04045 {
        c / 12.92
    } else {
        ((c + 0.055) / 1.055).powf(2.4)
    }
}

fn lab_f(t: f64) -> f64 {
    const D: f64 = 6.0 / 29.0;
    if t > D * D * D {
        t.cbrt()
    } else {
        t / (3.0 * D * D) + 4.0 / 29.0
    }
}

/// sRGB (D65) to CIELAB.
pub(crate) fn rgb_to_lab(r: f64, g: f64, b: f64) -> [f64; 3] {
    let (r, g, b) = (srgb_to_linear(r), srgb_to_linear(g), srgb_to_linear(b));
    let x = (0.4124564 * r + 0.3575761 * g + 0.1804375 * b) / 0.95047;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = (0.0193339 * r + 0.1191920 * g + 0.9503041 * b) / 1.08883;
    let (fx, fy, fz) = (lab_f(x), lab_f(y), lab_f(z));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

fn to_lab(rgb: &RasterGrid) -> Vec<[f64; 3]> {
    let (r, g, b) = (rgb.band(0), rgb.band(1), rgb.band(2));
    (0..r.len())
        .into_par_iter()
        .map(|i| rgb_to_lab(r[i], g[i], b[i]))
        .collect()
}

fn lab_dist2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)
}

fn gradient(lab: &[[f64; 3]], rows: usize, cols: usize, r: usize, c: usize) -> f64 {
    let at = |r: usize, c: usize| &lab[r * cols + c];
    let (c0, c1) = (c.saturating_sub(1), (c + 1).min(cols - 1));
    let (r0, r1) = (r.saturating_sub(1), (r + 1).min(rows - 1));
    lab_dist2(at(r, c1), at(r, c0)) + lab_dist2(at(r1, c), at(r0, c))
}

/// Regular `nx × ny` grid with at least `k` cells, each center moved to the
/// lowest-gradient pixel of its 3×3 neighbourhood (ties drawn from `rng`).
fn initial_centers(
    lab: &[[f64; 3]],
    rows: usize,
    cols: usize,
    k: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Center> {
    let nx = ((k as f64 * cols as f64 / rows as f64).sqrt().ceil() as usize).clamp(1, cols);
    let ny = k.div_ceil(nx).clamp(1, rows);
    let mut centers = Vec::with_capacity(nx * ny);
    for i in 0..ny {
        for j in 0..nx {
            let r = (((i as f64 + 0.5) * rows as f64 / ny as f64) as usize).min(rows - 1);
            let c = (((j as f64 + 0.5) * cols as f64 / nx as f64) as usize).min(cols - 1);
            let mut best = f64::INFINITY;
            let mut ties: Vec<(usize, usize)> = Vec::new();
            for rr in r.saturating_sub(1)..=(r + 1).min(rows - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(cols - 1) {
                    let g = gradient(lab, rows, cols, rr, cc);
                    if g < best {
                        best = g;
                        ties.clear();
                    }
                    if g == best {
                        ties.push((rr, cc));
                    }
                }
            }
            let (rr, cc) = ties[rng.gen_range(0..ties.len())];
            centers.push(Center {
                lab: lab[rr * cols + cc],
                x: cc as f64,
                y: rr as f64,
            });
        }
    }
    centers
}

/// Bucket index of centers on a square grid of cell size `s`.
struct Buckets {
    size: f64,
    nx: usize,
    ny: usize,
    cells: Vec<Vec<u32>>,
}

impl Buckets {
    fn new(centers: &[Center], rows: usize, cols: usize, size: f64) -> Self {
        let nx = (cols as f64 / size).ceil().max(1.0) as usize;
        let ny = (rows as f64 / size).ceil().max(1.0) as usize;
        let mut cells = vec![Vec::new(); nx * ny];
        for (i, c) in centers.iter().enumerate() {
            let bx = ((c.x / size) as usize).min(nx - 1);
            let by = ((c.y / size) as usize).min(ny - 1);
            cells[by * nx + bx].push(i as u32);
        }
        Self {
            size,
            nx,
            ny,
            cells,
        }
    }
}

fn assign(
    lab: &[[f64; 3]],
    rows: usize,
    cols: usize,
    centers: &[Center],
    s: f64,
    compactness: f64,
) -> Vec<u32> {
    let buckets = Buckets::new(centers, rows, cols, s);
    let spatial = compactness / s;
    let mut labels = vec![0u32; rows * cols];
    labels
        .par_chunks_mut(cols)
        .enumerate()
        .for_each(|(r, out)| {
            let y = r as f64;
            let by = ((y / buckets.size) as usize).min(buckets.ny - 1);
            let mut candidates: Vec<u32> = Vec::new();
            for c in 0..cols {
                let x = c as f64;
                let bx = ((x / buckets.size) as usize).min(buckets.nx - 1);
                candidates.clear();
                for yy in by.saturating_sub(1)..=(by + 1).min(buckets.ny - 1) {
                    for xx in bx.saturating_sub(1)..=(bx + 1).min(buckets.nx - 1) {
                        candidates.extend(&buckets.cells[yy * buckets.nx + xx]);
                    }
                }
                candidates.sort_unstable();
                let px = &lab[r * cols + c];
                let distance = |k: u32| {
                    let ctr = &centers[k as usize];
                    let dxy = ((x - ctr.x).powi(2) + (y - ctr.y).powi(2)).sqrt();
                    lab_dist2(px, &ctr.lab).sqrt() + spatial * dxy
                };
                let mut best: Option<(f64, u32)> = None;
                for &k in &candidates {
                    let ctr = &centers[k as usize];
                    if (x - ctr.x).abs() > s || (y - ctr.y).abs() > s {
                        continue;
                    }
                    let d = distance(k);
                    if best.map_or(true, |(bd, _)| d < bd) {
                        best = Some((d, k));
                    }
                }
                // Centers drift; a pixel outside every 2S window falls back
                // to the globally nearest center.
                out[c] = match best {
                    Some((_, k)) => k,
                    None => (0..centers.len() as u32)
                        .map(|k| (distance(k), k))
                        .fold((f64::INFINITY, 0), |a, b| if b.0 < a.0 { b } else { a })
                        .1,
                };
            }
        });
    labels
}

fn update_centers(lab: &[[f64; 3]], cols: usize, labels: &[u32], centers: &mut [Center]) {
    let mut sums = vec![[0.0f64; 6]; centers.len()];
    for (i, &l) in labels.iter().enumerate() {
        let s = &mut sums[l as usize];
        let p = &lab[i];
        s[0] += p[0];
        s[1] += p[1];
        s[2] += p[2];
        s[3] += (i % cols) as f64;
        s[4] += (i / cols) as f64;
        s[5] += 1.0;
    }
    for (c, s) in centers.iter_mut().zip(&sums) {
        if s[5] > 0.0 {
            let n = s[5];
            *c = Center {
                lab: [s[0] / n, s[1] / n, s[2] / n],
                x: s[3] / n,
                y: s[4] / n,
            };
        }
    }
}

/// Keeps each label's largest 4-connected component and merges every other
/// component into the largest adjacent already-resolved region, then
/// relabels compactly in ascending original-label order.
fn enforce_connectivity(rows: usize, cols: usize, labels: &[u32]) -> LabelGrid {
    let n = rows * cols;
    let mut comp = vec![u32::MAX; n];
    let mut comp_label: Vec<u32> = Vec::new();
    let mut comp_size: Vec<usize> = Vec::new();
    let mut stack = Vec::new();
    for start in 0..n {
        if comp[start] != u32::MAX {
            continue;
        }
        let id = comp_label.len() as u32;
        let label = labels[start];
        comp[start] = id;
        stack.push(start);
        let mut size = 0;
        while let Some(i) = stack.pop() {
            size += 1;
            let (r, c) = (i / cols, i % cols);
            let mut visit = |j: usize| {
                if comp[j] == u32::MAX && labels[j] == label {
                    comp[j] = id;
                    stack.push(j);
                }
            };
            if r > 0 {
                visit(i - cols);
            }
            if r + 1 < rows {
                visit(i + cols);
            }
            if c > 0 {
                visit(i - 1);
            }
            if c + 1 < cols {
                visit(i + 1);
            }
        }
        comp_label.push(label);
        comp_size.push(size);
    }

    let n_comp = comp_label.len();
    let max_label = *labels.iter().max().unwrap_or(&0) as usize;
    // Kept component per label: the largest, first in scan order on ties.
    let mut kept: Vec<Option<u32>> = vec![None; max_label + 1];
    for c in 0..n_comp {
        let slot = &mut kept[comp_label[c] as usize];
        if slot.map_or(true, |k| comp_size[c] > comp_size[k as usize]) {
            *slot = Some(c as u32);
        }
    }

    let mut adjacency: Vec<Vec<u32>> = vec![Vec::new(); n_comp];
    for i in 0..n {
        let (r, c) = (i / cols, i % cols);
        let a = comp[i];
        for j in [(c + 1 < cols).then(|| i + 1), (r + 1 < rows).then(|| i + cols)]
            .into_iter()
            .flatten()
        {
            let b = comp[j];
            if a != b {
                adjacency[a as usize].push(b);
                adjacency[b as usize].push(a);
            }
        }
    }
    for adj in adjacency.iter_mut() {
        adj.sort_unstable();
        adj.dedup();
    }

    // target[c] = kept component the component is merged into.
    let mut target: Vec<Option<u32>> = (0..n_comp)
        .map(|c| (kept[comp_label[c] as usize] == Some(c as u32)).then_some(c as u32))
        .collect();
    let mut group_size: Vec<usize> = comp_size.clone();
    let mut pending: Vec<u32> = (0..n_comp as u32).filter(|c| target[*c as usize].is_none()).collect();
    while !pending.is_empty() {
        let mut next = Vec::new();
        for &c in &pending {
            let best = adjacency[c as usize]
                .iter()
                .filter_map(|&b| target[b as usize])
                .fold(None::<u32>, |best, t| match best {
                    Some(b) if group_size[b as usize] >= group_size[t as usize] => Some(b),
                    _ => Some(t),
                });
            match best {
                Some(t) => {
                    target[c as usize] = Some(t);
                    group_size[t as usize] += comp_size[c as usize];
                }
                None => next.push(c),
            }
        }
        assert!(next.len() < pending.len(), "connectivity merge made no progress");
        pending = next;
    }

    // Compact relabeling in ascending original label order.
    let mut new_id = vec![u32::MAX; max_label + 1];
    let mut count = 0u32;
    for (label, k) in kept.iter().enumerate() {
        if k.is_some() {
            new_id[label] = count;
            count += 1;
        }
    }
    let out: Vec<u32> = comp
        .iter()
        .map(|&c| {
            let t = target[c as usize].expect("every component resolved");
            new_id[comp_label[t as usize] as usize]
        })
        .collect();
    LabelGrid::new(rows, cols, out).expect("compact labels")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::AffineGeoref;

    fn raster(rows: usize, cols: usize, f: impl Fn(usize, usize) -> [f64; 3]) -> RasterGrid {
        let mut bands = vec![Vec::with_capacity(rows * cols); 3];
        for r in 0..rows {
            for c in 0..cols {
                let v = f(r, c);
                for b in 0..3 {
                    bands[b].push(v[b]);
                }
            }
        }
        RasterGrid::new(
            rows,
            cols,
            bands,
            AffineGeoref::north_up(0.025, 10.0, 0.05).unwrap(),
            None,
        )
        .unwrap()
    }

    #[test]
    fn cluster_count_formula() {
        assert_eq!(target_clusters(10_000, 0.0), 4);
        assert_eq!(target_clusters(10_000, 1.0), 100);
        assert_eq!(target_clusters(250_000, 0.5), 1253);
        let mut prev = 0;
        for i in 0..=100 {
            let k = target_clusters(123_456, i as f64 / 100.0);
            assert!(k >= prev);
            prev = k;
        }
    }

    #[test]
    fn uniform_image_splits_evenly() {
        let img = raster(100, 100, |_, _| [120.0, 120.0, 120.0]);
        for seed in 0..3 {
            let lg = slic_segment(&img, &SegParams { scale: 0.0, ..Default::default() }, seed).unwrap();
            assert_eq!(lg.region_count(), 4);
            for size in lg.region_sizes() {
                assert!((2250..=2750).contains(&size), "size {size}");
            }
        }
    }

    #[test]
    fn contrasting_halves_never_mix() {
        let img = raster(60, 80, |_, c| if c < 40 { [230.0, 20.0, 20.0] } else { [20.0, 30.0, 220.0] });
        for scale in [0.0, 0.3, 1.0] {
            let lg = slic_segment(&img, &SegParams { scale, ..Default::default() }, 5).unwrap();
            assert!(lg.region_count() >= 2);
            let mut side = vec![None; lg.region_count()];
            for r in 0..60 {
                for c in 0..80 {
                    let s = c < 40;
                    let slot = &mut side[lg.get(r, c) as usize];
                    assert!(slot.map_or(true, |v| v == s), "region spans both halves");
                    *slot = Some(s);
                }
            }
        }
    }

    #[test]
    fn deterministic_for_seed() {
        let img = raster(50, 70, |r, c| {
            let v = ((r * 31 + c * 17) % 97) as f64 * 2.0;
            [v, 255.0 - v, (r * 5) as f64]
        });
        let p = SegParams { scale: 0.6, ..Default::default() };
        assert_eq!(slic_segment(&img, &p, 3).unwrap(), slic_segment(&img, &p, 3).unwrap());
    }

    #[test]
    fn regions_are_connected() {
        let img = raster(40, 40, |r, c| {
            let v = (((r * 7919 + c * 104729) % 251) as f64).min(255.0);
            [v, v, v]
        });
        let lg = slic_segment(&img, &SegParams { scale: 1.0, ..Default::default() }, 1).unwrap();
        // Flood fill from each region's first pixel must cover the region.
        let sizes = lg.region_sizes();
        let mut seen = vec![false; 1600];
        let mut started = vec![false; lg.region_count()];
        for i in 0..1600 {
            let l = lg.labels()[i];
            if started[l as usize] {
                assert!(seen[i], "label {l} is disconnected");
                continue;
            }
            started[l as usize] = true;
            let mut stack = vec![i];
            seen[i] = true;
            let mut n = 0;
            while let Some(j) = stack.pop() {
                n += 1;
                let (r, c) = (j / 40, j % 40);
                let nb = [
                    (r > 0).then(|| j - 40),
                    (r < 39).then(|| j + 40),
                    (c > 0).then(|| j - 1),
                    (c < 39).then(|| j + 1),
                ];
                for k in nb.into_iter().flatten() {
                    if !seen[k] && lg.labels()[k] == l {
                        seen[k] = true;
                        stack.push(k);
                    }
                }
            }
            assert_eq!(n, sizes[l as usize]);
        }
    }

    #[test]
    fn errors() {
        let tiny = raster(1, 3, |_, _| [0.0; 3]);
        assert_eq!(
            slic_segment(&tiny, &SegParams::default(), 0),
            Err(SegmentationError::TooManyClusters { k: 4, pixels: 3 })
        );
        let img = raster(10, 10, |_, _| [0.0; 3]);
        assert!(slic_segment(&img, &SegParams { scale: 1.5, ..Default::default() }, 0).is_err());
        assert!(matches!(
            slic_segment(&img.single_band(0), &SegParams::default(), 0),
            Err(SegmentationError::NotRgb(1))
        ));
    }

    #[test]
    fn lab_reference_values() {
        let white = rgb_to_lab(255.0, 255.0, 255.0);
        assert!((white[0] - 100.0).abs() < 1e-3 && white[1].abs() < 1e-2 && white[2].abs() < 1e-2);
        let black = rgb_to_lab(0.0, 0.0, 0.0);
        assert!(black[0].abs() < 1e-9);
        let red = rgb_to_lab(255.0, 0.0, 0.0);
        assert!((red[0] - 53.24).abs() < 0.05 && (red[1] - 80.09).abs() < 0.05);
    }
}
