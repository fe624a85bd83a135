//! Candidate line network: planar graph of polylines between nodes.
//!
//! `extract_network` traces region outlines along pixel-cell edges. Lattice
//! corners become nodes where at least three labels meet (the area outside the
//! raster counts as one label), where four boundary edges meet (checkerboard
//! corners), and at the four raster corners. A closed outline that contains no
//! node gets one at its first corner in scan order, yielding a self-loop edge.

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;

use thiserror::Error;

use super::LabelGrid;
use crate::formats::{LineCollection, LineFeature, LineProperties};
use crate::geo::{simplify, AffineGeoref, Point2, Polyline};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("duplicate node id {0}")]
    DuplicateNode(u64),
    #[error("duplicate edge id {0}")]
    DuplicateEdge(u64),
    #[error("edge {edge} references unknown node {node}")]
    UnknownNode { edge: u64, node: u64 },
    #[error("edge {0}: endpoints do not coincide with its node coordinates")]
    EndpointMismatch(u64),
    #[error("node {0} appears with two different coordinates")]
    ConflictingNode(u64),
    #[error("negative edge id {0}")]
    NegativeId(i64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkEdge {
    pub polyline: Polyline,
    pub node_a: u64,
    pub node_b: u64,
}

impl NetworkEdge {
    pub fn length(&self) -> f64 {
        self.polyline.length()
    }

    pub fn is_self_loop(&self) -> bool {
        self.node_a == self.node_b
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LineNetwork {
    nodes: BTreeMap<u64, Point2>,
    edges: BTreeMap<u64, NetworkEdge>,
}

impl LineNetwork {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_node(&mut self, id: u64, p: Point2) -> Result<(), NetworkError> {
        match self.nodes.entry(id) {
            Entry::Occupied(_) => Err(NetworkError::DuplicateNode(id)),
            Entry::Vacant(v) => {
                v.insert(p);
                Ok(())
            }
        }
    }

    /// Adds an edge whose polyline runs from `node_a` to `node_b`.
    pub fn add_edge(
        &mut self,
        id: u64,
        polyline: Polyline,
        node_a: u64,
        node_b: u64,
    ) -> Result<(), NetworkError> {
        if self.edges.contains_key(&id) {
            return Err(NetworkError::DuplicateEdge(id));
        }
        for node in [node_a, node_b] {
            if !self.nodes.contains_key(&node) {
                return Err(NetworkError::UnknownNode { edge: id, node });
            }
        }
        if polyline.start() != self.nodes[&node_a] || polyline.end() != self.nodes[&node_b] {
            return Err(NetworkError::EndpointMismatch(id));
        }
        self.edges.insert(
            id,
            NetworkEdge {
                polyline,
                node_a,
                node_b,
            },
        );
        Ok(())
    }

    pub fn nodes(&self) -> &BTreeMap<u64, Point2> {
        &self.nodes
    }

    pub fn edges(&self) -> &BTreeMap<u64, NetworkEdge> {
        &self.edges
    }

    pub fn node(&self, id: u64) -> Option<Point2> {
        self.nodes.get(&id).copied()
    }

    pub fn edge(&self, id: u64) -> Option<&NetworkEdge> {
        self.edges.get(&id)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn polylines(&self) -> Vec<Polyline> {
        self.edges.values().map(|e| e.polyline.clone()).collect()
    }

    /// Builds a network from imported lines. When every feature carries
    /// `node_a`/`node_b` those ids are used; otherwise endpoints with identical
    /// coordinates are merged into nodes numbered by first appearance. Edge ids
    /// come from the `id` property when every feature has a distinct one,
    /// else from feature order.
    pub fn from_lines(lines: &LineCollection) -> Result<Self, NetworkError> {
        let features = &lines.features;
        let ids = import_edge_ids(lines)?;

        let mut net = LineNetwork::new();
        let explicit = !features.is_empty()
            && features
                .iter()
                .all(|f| f.properties.node_a.is_some() && f.properties.node_b.is_some());
        if explicit {
            for f in features {
                let (a, b) = (f.properties.node_a.unwrap(), f.properties.node_b.unwrap());
                for (node, p) in [(a, f.polyline.start()), (b, f.polyline.end())] {
                    match net.nodes.get(&node) {
                        Some(q) if *q != p => return Err(NetworkError::ConflictingNode(node)),
                        Some(_) => {}
                        None => {
                            net.nodes.insert(node, p);
                        }
                    }
                }
            }
            for (f, id) in features.iter().zip(&ids) {
                let (a, b) = (f.properties.node_a.unwrap(), f.properties.node_b.unwrap());
                net.add_edge(*id, f.polyline.clone(), a, b)?;
            }
        } else {
            let mut by_coord: BTreeMap<(u64, u64), u64> = BTreeMap::new();
            let mut node_for = |net: &mut LineNetwork, p: Point2| -> u64 {
                // +0.0 normalizes negative zero so equal points share a key.
                let key = ((p.x + 0.0).to_bits(), (p.y + 0.0).to_bits());
                *by_coord.entry(key).or_insert_with(|| {
                    let id = net.nodes.len() as u64;
                    net.nodes.insert(id, p);
                    id
                })
            };
            for (f, id) in features.iter().zip(&ids) {
                let a = node_for(&mut net, f.polyline.start());
                let b = node_for(&mut net, f.polyline.end());
                net.add_edge(*id, f.polyline.clone(), a, b)?;
            }
        }
        Ok(net)
    }

    /// Line features with `id`, `node_a`, `node_b` and, when given, the
    /// `boundary` likelihood of each edge.
    pub fn to_features(&self, likelihoods: Option<&BTreeMap<u64, f64>>) -> Vec<LineFeature> {
        self.edges
            .iter()
            .map(|(id, e)| LineFeature {
                polyline: e.polyline.clone(),
                properties: LineProperties {
                    id: Some(*id as i64),
                    boundary: likelihoods.map(|l| l.get(id).copied().unwrap_or(0.0)),
                    node_a: Some(e.node_a),
                    node_b: Some(e.node_b),
                    ..Default::default()
                },
            })
            .collect()
    }
}

/// Edge ids an import assigns: the `id` property when every feature has a
/// distinct one, else feature order.
fn import_edge_ids(lines: &LineCollection) -> Result<Vec<u64>, NetworkError> {
    let features = &lines.features;
    let given: Vec<Option<i64>> = features.iter().map(|f| f.properties.id).collect();
    if given.iter().all(Option::is_some) {
        let ids: Vec<i64> = given.into_iter().flatten().collect();
        if let Some(neg) = ids.iter().find(|i| **i < 0) {
            return Err(NetworkError::NegativeId(*neg));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() == ids.len() {
            return Ok(ids.into_iter().map(|i| i as u64).collect());
        }
    }
    Ok((0..features.len() as u64).collect())
}

/// Per-edge `boundary` values of imported lines, keyed like
/// [`LineNetwork::from_lines`] keys the edges. `None` unless every feature
/// carries one.
pub fn imported_likelihoods(lines: &LineCollection) -> Result<Option<BTreeMap<u64, f64>>, NetworkError> {
    let ids = import_edge_ids(lines)?;
    Ok(lines
        .features
        .iter()
        .zip(ids)
        .map(|(f, id)| f.properties.boundary.map(|b| (id, b)))
        .collect())
}

/// Lattice directions in tracing order: up, right, down, left.
const DIRS: [(i64, i64); 4] = [(-1, 0), (0, 1), (1, 0), (0, -1)];

struct Lattice<'a> {
    lg: &'a LabelGrid,
    rows: usize,
    cols: usize,
}

impl Lattice<'_> {
    /// Label of cell `(r, c)`, with `u32::MAX` for anything outside the raster.
    fn label(&self, r: i64, c: i64) -> u32 {
        if r < 0 || c < 0 || r as usize >= self.rows || c as usize >= self.cols {
            u32::MAX
        } else {
            self.lg.get(r as usize, c as usize)
        }
    }

    /// Whether the lattice edge leaving corner `(i, j)` in direction `d` is a
    /// region boundary.
    fn is_boundary(&self, i: usize, j: usize, d: usize) -> bool {
        let (i, j) = (i as i64, j as i64);
        let (di, dj) = DIRS[d];
        let (ni, nj) = (i + di, j + dj);
        if ni < 0 || nj < 0 || ni as usize > self.rows || nj as usize > self.cols {
            return false;
        }
        if di != 0 {
            // Vertical edge between corners rows min(i, ni)..; cells left/right.
            let r = i.min(ni);
            self.label(r, j - 1) != self.label(r, j)
        } else {
            let c = j.min(nj);
            self.label(i - 1, c) != self.label(i, c)
        }
    }

    fn degree(&self, i: usize, j: usize) -> usize {
        (0..4).filter(|&d| self.is_boundary(i, j, d)).count()
    }

    fn is_node(&self, i: usize, j: usize) -> bool {
        if (i == 0 || i == self.rows) && (j == 0 || j == self.cols) {
            return true;
        }
        let (ii, jj) = (i as i64, j as i64);
        let mut labels = [
            self.label(ii - 1, jj - 1),
            self.label(ii - 1, jj),
            self.label(ii, jj - 1),
            self.label(ii, jj),
        ];
        labels.sort_unstable();
        let distinct = 1 + labels.windows(2).filter(|w| w[0] != w[1]).count();
        distinct >= 3 || self.degree(i, j) == 4
    }

    /// Index of the undirected lattice edge leaving `(i, j)` in direction `d`.
    fn edge_index(&self, i: usize, j: usize, d: usize) -> usize {
        let horizontal = (self.rows + 1) * self.cols;
        match d {
            0 => horizontal + (i - 1) * (self.cols + 1) + j,
            1 => i * self.cols + j,
            2 => horizontal + i * (self.cols + 1) + j,
            _ => i * self.cols + j - 1,
        }
    }
}

pub fn extract_network(lg: &LabelGrid, g: &AffineGeoref, simplify_tol: f64) -> LineNetwork {
    let lat = Lattice {
        lg,
        rows: lg.rows(),
        cols: lg.cols(),
    };
    let (rows, cols) = (lat.rows, lat.cols);
    let n_edges = (rows + 1) * cols + rows * (cols + 1);
    let mut visited = vec![false; n_edges];
    let mut node_at: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    let mut net = LineNetwork::new();

    for i in 0..=rows {
        for j in 0..=cols {
            if lat.is_node(i, j) {
                let id = net.node_count() as u64;
                node_at.insert((i, j), id);
                net.add_node(id, g.corner(i, j)).expect("fresh node id");
            }
        }
    }

    let trace_from = |start: (usize, usize),
                      net: &mut LineNetwork,
                      visited: &mut Vec<bool>,
                      node_at: &BTreeMap<(usize, usize), u64>| {
        for d0 in 0..4 {
            let (i0, j0) = start;
            if !lat.is_boundary(i0, j0, d0) || visited[lat.edge_index(i0, j0, d0)] {
                continue;
            }
            let mut corners = vec![start];
            let (mut i, mut j, mut d) = (i0, j0, d0);
            loop {
                visited[lat.edge_index(i, j, d)] = true;
                i = (i as i64 + DIRS[d].0) as usize;
                j = (j as i64 + DIRS[d].1) as usize;
                corners.push((i, j));
                if node_at.contains_key(&(i, j)) {
                    break;
                }
                // A non-node boundary corner has exactly two boundary edges.
                let back = (d + 2) % 4;
                d = (0..4)
                    .find(|&e| e != back && lat.is_boundary(i, j, e))
                    .expect("boundary continues through degree-2 corner");
            }
            let pts: Vec<Point2> = corners.iter().map(|&(i, j)| g.corner(i, j)).collect();
            let closed = corners.first() == corners.last();
            let raw = Polyline::new(pts, closed).expect("traced outline is a valid polyline");
            let line = simplify(&raw, simplify_tol);
            let id = net.edge_count() as u64;
            let a = node_at[&start];
            let b = node_at[corners.last().unwrap()];
            net.add_edge(id, line, a, b).expect("traced edge is consistent");
        }
    };

    let node_corners: Vec<(usize, usize)> = {
        let mut v: Vec<_> = node_at.iter().map(|(k, id)| (*id, *k)).collect();
        v.sort_unstable();
        v.into_iter().map(|(_, k)| k).collect()
    };
    for corner in node_corners {
        trace_from(corner, &mut net, &mut visited, &node_at);
    }

    // Closed outlines that touch no node.
    for i in 0..=rows {
        for j in 0..=cols {
            let open = (0..4).any(|d| lat.is_boundary(i, j, d) && !visited[lat.edge_index(i, j, d)]);
            if open {
                let id = net.node_count() as u64;
                node_at.insert((i, j), id);
                net.add_node(id, g.corner(i, j)).expect("fresh node id");
                trace_from((i, j), &mut net, &mut visited, &node_at);
            }
        }
    }
    net
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geo::point_polyline_distance;

    fn georef() -> AffineGeoref {
        AffineGeoref::north_up(0.5, 9.5, 1.0).unwrap()
    }

    fn grid(rows: usize, cols: usize, f: impl Fn(usize, usize) -> u32) -> LabelGrid {
        let labels = (0..rows * cols).map(|i| f(i / cols, i % cols)).collect();
        LabelGrid::new(rows, cols, labels).unwrap()
    }

    #[test]
    fn two_region_split() {
        let lg = grid(10, 10, |_, c| (c >= 5) as u32);
        let net = extract_network(&lg, &georef(), 1.0);
        // Junctions where the divider meets the border plus the raster corners.
        assert_eq!(net.node_count(), 6);
        let interior: Vec<_> = net
            .edges()
            .values()
            .filter(|e| {
                e.polyline.vertices().iter().all(|p| p.x == 5.0)
            })
            .collect();
        assert_eq!(interior.len(), 1);
        assert_eq!(interior[0].length(), 10.0);
        assert_eq!(net.edge_count(), 7);
        let total: f64 = net.edges().values().map(|e| e.length()).sum();
        assert_eq!(total, 50.0);
    }

    #[test]
    fn single_region_is_border_ring() {
        let lg = grid(4, 6, |_, _| 0);
        let net = extract_network(&lg, &georef(), 0.0);
        assert_eq!(net.node_count(), 4);
        assert_eq!(net.edge_count(), 4);
        let total: f64 = net.edges().values().map(|e| e.length()).sum();
        assert_eq!(total, 20.0);
    }

    #[test]
    fn enclosed_region_becomes_self_loop() {
        let lg = grid(6, 6, |r, c| ((1..4).contains(&r) && (2..5).contains(&c)) as u32);
        let net = extract_network(&lg, &georef(), 0.0);
        let loops: Vec<_> = net.edges().values().filter(|e| e.is_self_loop()).collect();
        assert_eq!(loops.len(), 1);
        assert!(loops[0].polyline.is_closed());
        assert_eq!(loops[0].length(), 12.0);
        // Loop node at the hole's first corner in scan order: lattice (1, 2).
        assert_eq!(net.node(loops[0].node_a), Some(georef().corner(1, 2)));
    }

    #[test]
    fn checkerboard_corner_is_node() {
        let lg = grid(2, 2, |r, c| ((r + c) % 2) as u32);
        let net = extract_network(&lg, &georef(), 0.0);
        assert!(net.nodes().values().any(|p| *p == georef().corner(1, 1)));
        let total: f64 = net.edges().values().map(|e| e.length()).sum();
        assert_eq!(total, 12.0);
    }

    /// Every traced cell edge belongs to exactly one network edge: the
    /// network covers the boundary set exactly (before simplification).
    fn boundary_length(lg: &LabelGrid) -> usize {
        let (rows, cols) = (lg.rows(), lg.cols());
        let lab = |r: i64, c: i64| {
            if r < 0 || c < 0 || r >= rows as i64 || c >= cols as i64 {
                u32::MAX
            } else {
                lg.get(r as usize, c as usize)
            }
        };
        let mut n = 0;
        for i in 0..=rows as i64 {
            for j in 0..cols as i64 {
                n += (lab(i - 1, j) != lab(i, j)) as usize;
            }
        }
        for i in 0..rows as i64 {
            for j in 0..=cols as i64 {
                n += (lab(i, j - 1) != lab(i, j)) as usize;
            }
        }
        n
    }

    fn random_grid(seed: u64) -> LabelGrid {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let (rows, cols) = (rng.gen_range(2..9), rng.gen_range(2..9));
        let k = rng.gen_range(1..5u32);
        let raw: Vec<u32> = (0..rows * cols).map(|_| rng.gen_range(0..k)).collect();
        let mut map = BTreeMap::new();
        let labels = raw
            .iter()
            .map(|l| {
                let n = map.len() as u32;
                *map.entry(*l).or_insert(n)
            })
            .collect();
        LabelGrid::new(rows, cols, labels).unwrap()
    }

    #[test]
    fn network_covers_every_boundary_cell_edge() {
        for seed in 0..200 {
            let lg = random_grid(seed);
            let net = extract_network(&lg, &georef(), 0.0);
            let total: f64 = net.edges().values().map(|e| e.length()).sum();
            assert_eq!(total, boundary_length(&lg) as f64, "seed {seed}");
            for e in net.edges().values() {
                assert_eq!(Some(e.polyline.start()), net.node(e.node_a));
                assert_eq!(Some(e.polyline.end()), net.node(e.node_b));
            }
        }
    }

    /// Each region outline is a closed walk: every node has even degree in
    /// the sub-network of edges bordering that region.
    #[test]
    fn region_outlines_close() {
        let g = georef();
        for seed in 0..100 {
            let lg = random_grid(seed);
            let net = extract_network(&lg, &g, 0.0);
            for region in 0..lg.region_count() as u32 {
                let mut degree: BTreeMap<u64, usize> = BTreeMap::new();
                let mut count = 0;
                for e in net.edges().values() {
                    // An edge borders the region if a cell of the region lies
                    // just beside the midpoint of its first segment.
                    let v = e.polyline.vertices();
                    let (a, b) = (v[0], v[1]);
                    let mid = Point2::new((a.x + b.x) / 2.0, (a.y + b.y) / 2.0);
                    let (nx, ny) = (-(b.y - a.y) * 0.25, (b.x - a.x) * 0.25);
                    let touches = [1.0, -1.0].iter().any(|s| {
                        let p = Point2::new(mid.x + s * nx, mid.y + s * ny);
                        let (r, c) = crate::geo::world_to_pixel(p, &g);
                        r >= 0
                            && c >= 0
                            && (r as usize) < lg.rows()
                            && (c as usize) < lg.cols()
                            && lg.get(r as usize, c as usize) == region
                    });
                    if touches {
                        count += 1;
                        *degree.entry(e.node_a).or_default() += 1;
                        *degree.entry(e.node_b).or_default() += 1;
                    }
                }
                assert!(count > 0, "seed {seed} region {region} has no outline");
                assert!(degree.values().all(|d| d % 2 == 0), "seed {seed} region {region}");
            }
        }
    }

    #[test]
    fn simplification_stays_within_tolerance() {
        let lg = grid(30, 30, |r, c| (r + c > 30) as u32);
        let g = georef();
        let tol = 1.5;
        let raw = extract_network(&lg, &g, 0.0);
        let simple = extract_network(&lg, &g, tol);
        assert_eq!(raw.edge_count(), simple.edge_count());
        for (id, e) in raw.edges() {
            let s = &simple.edges()[id];
            assert!(s.polyline.vertices().len() <= e.polyline.vertices().len());
            for p in e.polyline.vertices() {
                assert!(point_polyline_distance(*p, &s.polyline) <= tol + 1e-9);
            }
            for p in s.polyline.vertices() {
                assert!(point_polyline_distance(*p, &e.polyline) <= 1e-9);
            }
        }
    }

    #[test]
    fn import_merges_shared_endpoints() {
        let l = |pts: &[(f64, f64)]| {
            LineFeature::new(
                Polyline::from_vertices(pts.iter().map(|&(x, y)| Point2::new(x, y)).collect()).unwrap(),
            )
        };
        let lines = LineCollection {
            features: vec![l(&[(0.0, 0.0), (1.0, 0.0)]), l(&[(1.0, 0.0), (1.0, 1.0)])],
            ..Default::default()
        };
        let net = LineNetwork::from_lines(&lines).unwrap();
        assert_eq!(net.node_count(), 3);
        assert_eq!(net.edges()[&1].node_a, net.edges()[&0].node_b);

        let exported = LineCollection {
            features: net.to_features(None),
            ..Default::default()
        };
        assert_eq!(LineNetwork::from_lines(&exported).unwrap(), net);
        assert_eq!(imported_likelihoods(&exported).unwrap(), None);

        let lk = BTreeMap::from([(0, 0.25), (1, 1.0)]);
        let exported = LineCollection {
            features: net.to_features(Some(&lk)),
            ..Default::default()
        };
        assert_eq!(imported_likelihoods(&exported).unwrap(), Some(lk));
    }

    #[test]
    fn import_rejects_inconsistent_nodes() {
        let mut f = LineFeature::new(
            Polyline::from_vertices(vec![Point2::new(0.0, 0.0), Point2::new(1.0, 0.0)]).unwrap(),
        );
        f.properties.node_a = Some(0);
        f.properties.node_b = Some(0);
        let lines = LineCollection {
            features: vec![f],
            ..Default::default()
        };
        assert_eq!(
            LineNetwork::from_lines(&lines),
            Err(NetworkError::ConflictingNode(0))
        );
    }
}
