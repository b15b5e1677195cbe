use std::collections::{BTreeMap, BTreeSet};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::InstanceMap;
use crate::numeric::rng;

/// Inclusive pixel box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x_min: usize,
    pub y_min: usize,
    pub x_max: usize,
    pub y_max: usize,
}

impl BoundingBox {
    pub fn width(&self) -> usize {
        self.x_max - self.x_min + 1
    }

    pub fn height(&self) -> usize {
        self.y_max - self.y_min + 1
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x_min..=self.x_max).contains(&x) && (self.y_min..=self.y_max).contains(&y)
    }
}

/// Scales `bbox` about its center by `factor` in each dimension, rounding
/// outward to whole pixels, then clamps to a `width × height` image.
pub fn expand_bbox(bbox: BoundingBox, factor: f64, width: usize, height: usize) -> BoundingBox {
    fn axis(lo: usize, hi: usize, factor: f64, limit: usize) -> (usize, usize) {
        let center = (lo + hi) as f64 / 2.0;
        let half = ((hi - lo + 1) as f64 * factor - 1.0) / 2.0;
        let new_lo = (center - half + 1e-9).floor().max(0.0) as usize;
        let new_hi = ((center + half - 1e-9).ceil() as usize).min(limit - 1);
        (new_lo, new_hi)
    }
    let (x_min, x_max) = axis(bbox.x_min, bbox.x_max, factor, width);
    let (y_min, y_max) = axis(bbox.y_min, bbox.y_max, factor, height);
    BoundingBox {
        x_min,
        y_min,
        x_max,
        y_max,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    #[default]
    Spatial,
    FullyConnected,
    Chain,
    Unary,
}

impl Topology {
    pub const ALL: [Topology; 4] = [
        Topology::Spatial,
        Topology::FullyConnected,
        Topology::Chain,
        Topology::Unary,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Topology::Spatial => "spatial",
            Topology::FullyConnected => "fc",
            Topology::Chain => "chain",
            Topology::Unary => "unary",
        }
    }
}

impl std::str::FromStr for Topology {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "spatial" => Ok(Topology::Spatial),
            "fc" | "fully_connected" => Ok(Topology::FullyConnected),
            "chain" => Ok(Topology::Chain),
            "unary" => Ok(Topology::Unary),
            other => Err(Error::Config(format!("unknown topology `{other}`"))),
        }
    }
}

/// Pixel connectivity used to decide whether two instances touch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Connectivity {
    #[default]
    Four,
    Eight,
}

impl std::str::FromStr for Connectivity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "four" | "4" => Ok(Connectivity::Four),
            "eight" | "8" => Ok(Connectivity::Eight),
            other => Err(Error::Config(format!("unknown connectivity `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Node {
    pub instance_id: u32,
    pub class_id: usize,
    pub bbox: BoundingBox,
    pub pixel_count: usize,
}

/// Graph over the instances of one scene.
///
/// Nodes are ordered by instance id. `edges` holds node-index pairs: `(u, v)`
/// with `u < v` for undirected topologies, `(from, to)` for the chain. The
/// spatial adjacency is kept regardless of the active topology so any
/// variant can be derived from any other.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SceneGraph {
    nodes: Vec<Node>,
    spatial: BTreeSet<(usize, usize)>,
    edges: BTreeSet<(usize, usize)>,
    topology: Topology,
    chain_order: Option<Vec<usize>>,
    incoming: Vec<Vec<usize>>,
}

impl SceneGraph {
    /// Assembles a spatial graph from explicit nodes and undirected edges.
    pub fn from_parts(nodes: Vec<Node>, edges: impl IntoIterator<Item = (usize, usize)>) -> Result<Self> {
        if nodes.is_empty() {
            return Err(Error::EmptyScene);
        }
        let mut set = BTreeSet::new();
        for (u, v) in edges {
            if u == v || u >= nodes.len() || v >= nodes.len() {
                return Err(Error::Validation(format!(
                    "invalid edge ({u}, {v}) over {} nodes",
                    nodes.len()
                )));
            }
            set.insert((u.min(v), u.max(v)));
        }
        let mut g = SceneGraph {
            nodes,
            spatial: set.clone(),
            edges: set,
            topology: Topology::Spatial,
            chain_order: None,
            incoming: Vec::new(),
        };
        g.rebuild_incoming();
        Ok(g)
    }

    fn rebuild_incoming(&mut self) {
        let mut incoming = vec![Vec::new(); self.nodes.len()];
        for &(u, v) in &self.edges {
            incoming[v].push(u);
            if self.topology != Topology::Chain {
                incoming[u].push(v);
            }
        }
        for list in &mut incoming {
            list.sort_unstable();
        }
        self.incoming = incoming;
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn spatial_edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.spatial
    }

    pub fn topology(&self) -> Topology {
        self.topology
    }

    pub fn chain_order(&self) -> Option<&[usize]> {
        self.chain_order.as_deref()
    }

    /// Nodes whose messages reach `v`: all neighbors for undirected
    /// topologies, the predecessor for the chain.
    pub fn incoming(&self, v: usize) -> &[usize] {
        &self.incoming[v]
    }

    pub fn node_index(&self, instance_id: u32) -> Option<usize> {
        self.nodes.binary_search_by_key(&instance_id, |n| n.instance_id).ok()
    }

    /// Undirected hop distances from `source` over the active edges
    /// (`usize::MAX` when unreachable).
    pub fn hop_distances(&self, source: usize) -> Vec<usize> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        let mut dist = vec![usize::MAX; self.nodes.len()];
        dist[source] = 0;
        let mut queue = std::collections::VecDeque::from([source]);
        while let Some(u) = queue.pop_front() {
            for &w in &adj[u] {
                if dist[w] == usize::MAX {
                    dist[w] = dist[u] + 1;
                    queue.push_back(w);
                }
            }
        }
        dist
    }
}

/// One node per instance; an edge wherever two instances' pixels touch.
pub fn build_spatial_graph(map: &InstanceMap, connectivity: Connectivity) -> Result<SceneGraph> {
    let ids: Vec<u32> = map.instance_ids().collect();
    if ids.is_empty() {
        return Err(Error::EmptyScene);
    }
    let index: BTreeMap<u32, usize> = ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
    let (w, h) = (map.width(), map.height());
    let mut boxes: Vec<Option<BoundingBox>> = vec![None; ids.len()];
    let mut counts = vec![0usize; ids.len()];
    let mut edges = BTreeSet::new();

    let offsets: &[(isize, isize)] = match connectivity {
        Connectivity::Four => &[(1, 0), (0, 1)],
        Connectivity::Eight => &[(1, 0), (0, 1), (1, 1), (-1, 1)],
    };
    for y in 0..h {
        for x in 0..w {
            let id = map.at(x, y);
            if id == 0 {
                continue;
            }
            let u = index[&id];
            counts[u] += 1;
            let b = boxes[u].get_or_insert(BoundingBox {
                x_min: x,
                y_min: y,
                x_max: x,
                y_max: y,
            });
            b.x_min = b.x_min.min(x);
            b.x_max = b.x_max.max(x);
            b.y_min = b.y_min.min(y);
            b.y_max = b.y_max.max(y);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x as isize + dx, y as isize + dy);
                if nx < 0 || ny < 0 || nx as usize >= w || ny as usize >= h {
                    continue;
                }
                let other = map.at(nx as usize, ny as usize);
                if other != 0 && other != id {
                    let v = index[&other];
                    edges.insert((u.min(v), u.max(v)));
                }
            }
        }
    }
    let nodes = ids
        .iter()
        .zip(boxes)
        .zip(counts)
        .map(|((&instance_id, bbox), pixel_count)| Node {
            instance_id,
            class_id: map.class_of(instance_id).expect("validated map"),
            bbox: bbox.expect("every instance has pixels"),
            pixel_count,
        })
        .collect();
    SceneGraph::from_parts(nodes, edges)
}

/// Same nodes, edges replaced according to `topology`. The chain order is a
/// seeded permutation and is recorded on the result.
pub fn make_variant(graph: &SceneGraph, topology: Topology, seed: u64) -> SceneGraph {
    let m = graph.nodes.len();
    let (edges, chain_order) = match topology {
        Topology::Spatial => (graph.spatial.clone(), None),
        Topology::Unary => (BTreeSet::new(), None),
        Topology::FullyConnected => ((0..m).flat_map(|u| (u + 1..m).map(move |v| (u, v))).collect(), None),
        Topology::Chain => {
            let mut order: Vec<usize> = (0..m).collect();
            order.shuffle(&mut rng::derived(seed, "chain-order"));
            (order.windows(2).map(|p| (p[0], p[1])).collect(), Some(order))
        }
    };
    let mut g = SceneGraph {
        nodes: graph.nodes.clone(),
        spatial: graph.spatial.clone(),
        edges,
        topology,
        chain_order,
        incoming: Vec::new(),
    };
    g.rebuild_incoming();
    g
}
