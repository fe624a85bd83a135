//! Least-cost paths over the likelihood-weighted line network.
//!
//! Edge cost is `length · (1 − p + ε)`. Dijkstra runs on plain left-to-right
//! float sums, which makes its distances identical to the float cost of the
//! best path. Among equal-cost paths the one with the lexicographically
//! smallest edge-id sequence wins, so replays are deterministic.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BinaryHeap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{Point2, Polyline};
use crate::segmentation::LineNetwork;

pub const DEFAULT_EPSILON: f64 = 0.05;
pub const DEFAULT_SNAP_TOLERANCE: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DelineationError {
    #[error("network has no nodes")]
    EmptyNetwork,
    #[error("snap failed: nearest node is {distance:.3} m away (tolerance {tolerance} m)")]
    SnapFailed { distance: f64, tolerance: f64 },
    #[error("unknown node {0}")]
    UnknownNode(u64),
    #[error("path endpoints must differ (node {0} twice in a row)")]
    SameNode(u64),
    #[error("unreachable: leg {leg} from node {from} to node {to}")]
    Unreachable { leg: usize, from: u64, to: u64 },
    #[error("at least 2 nodes are required")]
    TooFewNodes,
    #[error("invalid likelihood {value} for edge {edge}")]
    InvalidLikelihood { edge: u64, value: f64 },
    #[error("epsilon must be positive and finite, got {0}")]
    InvalidEpsilon(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostParams {
    pub epsilon: f64,
}

impl Default for CostParams {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
        }
    }
}

pub fn edge_cost(length: f64, likelihood: f64, cp: &CostParams) -> f64 {
    length * (1.0 - likelihood + cp.epsilon)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GraphEdge {
    pub node_a: u64,
    pub node_b: u64,
    pub cost: f64,
    pub polyline: Polyline,
}

/// Immutable undirected weighted graph over a line network.
#[derive(Debug, Clone)]
pub struct CostGraph {
    node_ids: Vec<u64>,
    points: Vec<Point2>,
    index: BTreeMap<u64, usize>,
    /// Per node: `(edge id, neighbour index, cost)`, sorted by edge id.
    adjacency: Vec<Vec<(u64, usize, f64)>>,
    edges: BTreeMap<u64, GraphEdge>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PathResult {
    pub polyline: Polyline,
    pub total_cost: f64,
    pub edge_ids: Vec<u64>,
    /// Nodes visited in order, including both ends.
    pub nodes: Vec<u64>,
}

/// Builds the cost graph. Edges without a likelihood get 0; self-loops are
/// kept in the edge table but never traversed.
pub fn build_graph(
    net: &LineNetwork,
    likelihoods: &BTreeMap<u64, f64>,
    cp: &CostParams,
) -> Result<CostGraph, DelineationError> {
    if !(cp.epsilon > 0.0 && cp.epsilon.is_finite()) {
        return Err(DelineationError::InvalidEpsilon(cp.epsilon));
    }
    let node_ids: Vec<u64> = net.nodes().keys().copied().collect();
    let points: Vec<Point2> = net.nodes().values().copied().collect();
    let index: BTreeMap<u64, usize> = node_ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut adjacency = vec![Vec::new(); node_ids.len()];
    let mut edges = BTreeMap::new();
    for (&id, e) in net.edges() {
        let p = likelihoods.get(&id).copied().unwrap_or(0.0);
        if !(0.0..=1.0).contains(&p) {
            return Err(DelineationError::InvalidLikelihood { edge: id, value: p });
        }
        let cost = edge_cost(e.length(), p, cp);
        let (ia, ib) = (index[&e.node_a], index[&e.node_b]);
        if ia != ib {
            adjacency[ia].push((id, ib, cost));
            adjacency[ib].push((id, ia, cost));
        }
        edges.insert(
            id,
            GraphEdge {
                node_a: e.node_a,
                node_b: e.node_b,
                cost,
                polyline: e.polyline.clone(),
            },
        );
    }
    // Edges are visited in id order, so adjacency lists are already sorted.
    Ok(CostGraph {
        node_ids,
        points,
        index,
        adjacency,
        edges,
    })
}

impl CostGraph {
    pub fn edges(&self) -> &BTreeMap<u64, GraphEdge> {
        &self.edges
    }

    pub fn node_ids(&self) -> &[u64] {
        &self.node_ids
    }

    pub fn node_point(&self, id: u64) -> Option<Point2> {
        self.index.get(&id).map(|&i| self.points[i])
    }

    /// Nearest node within `tol`, lowest id on ties.
    pub fn snap_node(&self, click: Point2, tol: f64) -> Result<u64, DelineationError> {
        snap_points(self.node_ids.iter().copied().zip(self.points.iter().copied()), click, tol)
    }

    fn node_index(&self, id: u64) -> Result<usize, DelineationError> {
        self.index.get(&id).copied().ok_or(DelineationError::UnknownNode(id))
    }

    pub fn least_cost_path(&self, a: u64, b: u64) -> Result<PathResult, DelineationError> {
        self.leg(a, b, 0)
    }

    fn leg(&self, a: u64, b: u64, leg: usize) -> Result<PathResult, DelineationError> {
        let (ia, ib) = (self.node_index(a)?, self.node_index(b)?);
        if ia == ib {
            return Err(DelineationError::SameNode(a));
        }
        let dist = self.dijkstra(ia);
        if !dist[ib].is_finite() {
            return Err(DelineationError::Unreachable { leg, from: a, to: b });
        }

        // Nodes that reach `ib` along tight (shortest-path) edges.
        let n = self.node_ids.len();
        let tight = |u: usize, v: usize, c: f64| dist[u].is_finite() && dist[u] + c == dist[v];
        let mut reaches = vec![false; n];
        reaches[ib] = true;
        let mut stack = vec![ib];
        while let Some(v) = stack.pop() {
            for &(_, u, c) in &self.adjacency[v] {
                if !reaches[u] && tight(u, v, c) {
                    reaches[u] = true;
                    stack.push(u);
                }
            }
        }

        let mut edge_ids = Vec::new();
        let mut nodes = vec![a];
        let mut u = ia;
        while u != ib {
            let &(eid, v, _) = self.adjacency[u]
                .iter()
                .find(|&&(_, v, c)| reaches[v] && tight(u, v, c))
                .expect("a tight edge continues every shortest path");
            edge_ids.push(eid);
            nodes.push(self.node_ids[v]);
            u = v;
        }
        Ok(PathResult {
            polyline: self.path_geometry(&edge_ids, &nodes),
            total_cost: dist[ib],
            edge_ids,
            nodes,
        })
    }

    fn dijkstra(&self, source: usize) -> Vec<f64> {
        #[derive(PartialEq)]
        struct Item(f64, usize);
        impl Eq for Item {}
        impl PartialOrd for Item {
            fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
                Some(self.cmp(other))
            }
        }
        impl Ord for Item {
            fn cmp(&self, other: &Self) -> Ordering {
                self.0.total_cmp(&other.0).then(self.1.cmp(&other.1))
            }
        }

        let n = self.node_ids.len();
        let mut dist = vec![f64::INFINITY; n];
        let mut done = vec![false; n];
        let mut heap = BinaryHeap::new();
        dist[source] = 0.0;
        heap.push(Reverse(Item(0.0, source)));
        while let Some(Reverse(Item(d, u))) = heap.pop() {
            if done[u] {
                continue;
            }
            done[u] = true;
            for &(_, v, c) in &self.adjacency[u] {
                let nd = d + c;
                if nd < dist[v] {
                    dist[v] = nd;
                    heap.push(Reverse(Item(nd, v)));
                }
            }
        }
        dist
    }

    fn path_geometry(&self, edge_ids: &[u64], nodes: &[u64]) -> Polyline {
        let mut pts: Vec<Point2> = Vec::new();
        for (eid, from) in edge_ids.iter().zip(nodes) {
            let e = &self.edges[eid];
            let line = if e.node_a == *from {
                e.polyline.clone()
            } else {
                e.polyline.reversed()
            };
            let skip = usize::from(!pts.is_empty());
            pts.extend_from_slice(&line.vertices()[skip..]);
        }
        Polyline::from_vertices(pts).expect("joined network edges form a valid polyline")
    }

    /// Joins consecutive least-cost legs; with `close` and at least three
    /// nodes a final leg returns to the first node.
    pub fn connect_sequence(&self, nodes: &[u64], close: bool) -> Result<PathResult, DelineationError> {
        if nodes.len() < 2 {
            return Err(DelineationError::TooFewNodes);
        }
        let mut stops = nodes.to_vec();
        if close && nodes.len() >= 3 {
            stops.push(nodes[0]);
        }
        let mut edge_ids = Vec::new();
        let mut visited = vec![stops[0]];
        let mut total_cost = 0.0;
        for (leg, w) in stops.windows(2).enumerate() {
            let r = self.leg(w[0], w[1], leg)?;
            total_cost += r.total_cost;
            edge_ids.extend_from_slice(&r.edge_ids);
            visited.extend_from_slice(&r.nodes[1..]);
        }
        Ok(PathResult {
            polyline: self.path_geometry(&edge_ids, &visited),
            total_cost,
            edge_ids,
            nodes: visited,
        })
    }
}

fn snap_points(
    points: impl Iterator<Item = (u64, Point2)>,
    click: Point2,
    tol: f64,
) -> Result<u64, DelineationError> {
    let mut best: Option<(f64, u64)> = None;
    for (id, p) in points {
        let d = p.distance(&click);
        let better = match best {
            None => true,
            Some((bd, bid)) => d < bd || (d == bd && id < bid),
        };
        if better {
            best = Some((d, id));
        }
    }
    match best {
        None => Err(DelineationError::EmptyNetwork),
        Some((d, id)) if d <= tol => Ok(id),
        Some((distance, _)) => Err(DelineationError::SnapFailed {
            distance,
            tolerance: tol,
        }),
    }
}

/// Nearest network node within `tol`, lowest id on ties.
pub fn snap_node(click: Point2, net: &LineNetwork, tol: f64) -> Result<u64, DelineationError> {
    snap_points(net.nodes().iter().map(|(id, p)| (*id, *p)), click, tol)
}

pub fn least_cost_path(g: &CostGraph, a: u64, b: u64) -> Result<PathResult, DelineationError> {
    g.least_cost_path(a, b)
}

pub fn connect_sequence(g: &CostGraph, nodes: &[u64], close: bool) -> Result<PathResult, DelineationError> {
    g.connect_sequence(nodes, close)
}
