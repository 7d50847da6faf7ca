//! Patrol graphs: vertices are points of interest, arcs carry base traversal
//! times in seconds.
//!
//! Edges are stored as *links* exactly as they appear in the graph file. An
//! undirected link expands to two directed arcs that share one base weight and
//! one dynamic profile series. Arcs are addressed by [`EdgeId`]; for a directed
//! graph arc `i` is link `i`, for an undirected graph link `i` becomes arcs
//! `2i` (from→to) and `2i + 1` (to→from).

use std::collections::{HashSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, GraphViolation, Result};

pub type VertexId = usize;

/// Ordinal index into a graph's directed arc list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct EdgeId(pub usize);

impl EdgeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Link {
    pub from: VertexId,
    pub to: VertexId,
    pub base_weight: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Arc {
    pub from: VertexId,
    pub to: VertexId,
    pub base_weight: f64,
    /// Index of the stored link this arc was expanded from.
    pub link: usize,
}

/// A validated, immutable patrol graph.
#[derive(Clone, Debug, PartialEq)]
pub struct PatrolGraph {
    directed: bool,
    coords: Vec<Option<(f64, f64)>>,
    links: Vec<Link>,
    arcs: Vec<Arc>,
    out_arcs: Vec<Vec<EdgeId>>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct VertexRecord {
    id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    x: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    y: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct EdgeRecord {
    from: usize,
    to: usize,
    weight: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
struct GraphFile {
    directed: bool,
    vertices: Vec<VertexRecord>,
    edges: Vec<EdgeRecord>,
}

impl PatrolGraph {
    /// Builds and validates a graph from a vertex count and a link list.
    pub fn new(directed: bool, vertex_count: usize, links: Vec<Link>) -> Result<Self> {
        Self::with_coords(directed, vec![None; vertex_count], links)
    }

    pub fn with_coords(
        directed: bool,
        coords: Vec<Option<(f64, f64)>>,
        links: Vec<Link>,
    ) -> Result<Self> {
        let n = coords.len();
        if n < 2 {
            return Err(GraphViolation::TooFewVertices(n).into());
        }
        let mut seen = HashSet::with_capacity(links.len() * 2);
        for l in &links {
            for v in [l.from, l.to] {
                if v >= n {
                    return Err(GraphViolation::UnknownVertex(v).into());
                }
            }
            if l.from == l.to {
                return Err(GraphViolation::SelfLoop(l.from).into());
            }
            if !(l.base_weight.is_finite() && l.base_weight > 0.0) {
                return Err(GraphViolation::NonPositiveWeight {
                    from: l.from,
                    to: l.to,
                    weight: l.base_weight,
                }
                .into());
            }
            let key = if directed {
                (l.from, l.to)
            } else {
                (l.from.min(l.to), l.from.max(l.to))
            };
            if !seen.insert(key) {
                return Err(GraphViolation::DuplicateEdge { from: l.from, to: l.to }.into());
            }
        }

        let mut arcs = Vec::with_capacity(if directed { links.len() } else { 2 * links.len() });
        for (i, l) in links.iter().enumerate() {
            arcs.push(Arc { from: l.from, to: l.to, base_weight: l.base_weight, link: i });
            if !directed {
                arcs.push(Arc { from: l.to, to: l.from, base_weight: l.base_weight, link: i });
            }
        }
        let mut out_arcs = vec![Vec::new(); n];
        for (i, a) in arcs.iter().enumerate() {
            out_arcs[a.from].push(EdgeId(i));
        }

        let graph = PatrolGraph { directed, coords, links, arcs, out_arcs };
        if !graph.is_connected() {
            return Err(GraphViolation::Disconnected.into());
        }
        Ok(graph)
    }

    // Forward reachability from 0 plus, for directed graphs, reverse reachability.
    fn is_connected(&self) -> bool {
        let n = self.vertex_count();
        let reach = |forward: bool| {
            let mut adj = vec![Vec::new(); n];
            for a in &self.arcs {
                if forward {
                    adj[a.from].push(a.to);
                } else {
                    adj[a.to].push(a.from);
                }
            }
            let mut seen = vec![false; n];
            let mut queue = VecDeque::from([0]);
            seen[0] = true;
            let mut count = 1;
            while let Some(u) = queue.pop_front() {
                for &v in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        count += 1;
                        queue.push_back(v);
                    }
                }
            }
            count == n
        };
        reach(true) && (!self.directed || reach(false))
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn vertex_count(&self) -> usize {
        self.coords.len()
    }

    pub fn links(&self) -> &[Link] {
        &self.links
    }

    pub fn arcs(&self) -> &[Arc] {
        &self.arcs
    }

    pub fn arc(&self, e: EdgeId) -> &Arc {
        &self.arcs[e.0]
    }

    pub fn arc_count(&self) -> usize {
        self.arcs.len()
    }

    pub fn link_count(&self) -> usize {
        self.links.len()
    }

    pub fn out_arcs(&self, v: VertexId) -> &[EdgeId] {
        &self.out_arcs[v]
    }

    pub fn coords(&self, v: VertexId) -> Option<(f64, f64)> {
        self.coords[v]
    }

    pub fn find_arc(&self, from: VertexId, to: VertexId) -> Option<EdgeId> {
        self.out_arcs
            .get(from)?
            .iter()
            .copied()
            .find(|&e| self.arcs[e.0].to == to)
    }

    /// Arithmetic mean of base weights over all directed arcs.
    pub fn mean_base_weight(&self) -> f64 {
        self.arcs.iter().map(|a| a.base_weight).sum::<f64>() / self.arcs.len() as f64
    }

    /// The same arcs as an explicitly directed graph, one link per arc.
    pub fn to_directed(&self) -> PatrolGraph {
        if self.directed {
            return self.clone();
        }
        let links = self
            .arcs
            .iter()
            .map(|a| Link { from: a.from, to: a.to, base_weight: a.base_weight })
            .collect();
        PatrolGraph::with_coords(true, self.coords.clone(), links)
            .expect("expansion of a valid undirected graph is valid")
    }

    /// Replaces the base weight of every link; `weights` is indexed by link.
    pub fn with_link_weights(&self, weights: &[f64]) -> Result<PatrolGraph> {
        if weights.len() != self.links.len() {
            return Err(Error::Config(format!(
                "expected {} link weights, got {}",
                self.links.len(),
                weights.len()
            )));
        }
        let links = self
            .links
            .iter()
            .zip(weights)
            .map(|(l, &w)| Link { base_weight: w, ..l.clone() })
            .collect();
        PatrolGraph::with_coords(self.directed, self.coords.clone(), links)
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let file: GraphFile = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        let n = file.vertices.len();
        let mut coords = vec![None; n];
        let mut present = vec![false; n];
        for v in &file.vertices {
            if v.id >= n || present[v.id] {
                return Err(GraphViolation::NonDenseIds.into());
            }
            present[v.id] = true;
            coords[v.id] = match (v.x, v.y) {
                (Some(x), Some(y)) => Some((x, y)),
                _ => None,
            };
        }
        let links = file
            .edges
            .into_iter()
            .map(|e| Link { from: e.from, to: e.to, base_weight: e.weight })
            .collect();
        PatrolGraph::with_coords(file.directed, coords, links)
    }

    pub fn to_json_string(&self) -> String {
        let file = GraphFile {
            directed: self.directed,
            vertices: self
                .coords
                .iter()
                .enumerate()
                .map(|(id, c)| VertexRecord { id, x: c.map(|c| c.0), y: c.map(|c| c.1) })
                .collect(),
            edges: self
                .links
                .iter()
                .map(|l| EdgeRecord { from: l.from, to: l.to, weight: l.base_weight })
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("graph serialization cannot fail")
    }
}

pub fn load_graph(path: impl AsRef<Path>) -> Result<PatrolGraph> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    PatrolGraph::from_json_str(&text)
}

pub fn save_graph(graph: &PatrolGraph, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, graph.to_json_string()).map_err(|e| Error::io(path, e))
}

/// A 4-connected undirected lattice with uniform edge weights. Vertex
/// `r * cols + c` sits at `(c, r) * edge_weight` metres.
pub fn generate_grid_graph(rows: usize, cols: usize, edge_weight: f64) -> Result<PatrolGraph> {
    if rows < 2 || cols < 2 {
        return Err(Error::Config(format!("grid needs rows, cols >= 2 (got {rows}x{cols})")));
    }
    let id = |r: usize, c: usize| r * cols + c;
    let mut links = Vec::with_capacity(2 * rows * cols - rows - cols);
    for r in 0..rows {
        for c in 0..cols {
            if c + 1 < cols {
                links.push(Link { from: id(r, c), to: id(r, c + 1), base_weight: edge_weight });
            }
            if r + 1 < rows {
                links.push(Link { from: id(r, c), to: id(r + 1, c), base_weight: edge_weight });
            }
        }
    }
    let coords = (0..rows * cols)
        .map(|v| Some(((v % cols) as f64 * edge_weight, (v / cols) as f64 * edge_weight)))
        .collect();
    PatrolGraph::with_coords(false, coords, links)
}
