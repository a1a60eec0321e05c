use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub type NodeId = usize;

/// A directed, capacitated link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: NodeId,
    pub dst: NodeId,
    pub capacity: f64,
}

#[derive(Debug, Serialize, Deserialize)]
struct TopologyFile {
    nodes: usize,
    edges: Vec<Edge>,
}

/// Capacitated directed graph. Edge ids are positions in the edge list, which
/// follows the order of the source file.
#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    node_count: usize,
    edges: Vec<Edge>,
    index: HashMap<(NodeId, NodeId), usize>,
    out: Vec<Vec<(NodeId, usize)>>,
}

impl Topology {
    /// Validates and builds a topology. Every violated invariant is reported,
    /// not only the first one.
    pub fn new(node_count: usize, edges: Vec<Edge>) -> Result<Self> {
        let mut violations = Vec::new();
        let mut index = HashMap::with_capacity(edges.len());
        for (i, e) in edges.iter().enumerate() {
            if !(e.capacity > 0.0) || !e.capacity.is_finite() {
                violations.push(format!(
                    "edge {i} ({}->{}): nonpositive capacity {}",
                    e.src, e.dst, e.capacity
                ));
            }
            if e.src >= node_count || e.dst >= node_count {
                violations.push(format!(
                    "edge {i} ({}->{}): dangling node id (node count {node_count})",
                    e.src, e.dst
                ));
            }
            if e.src == e.dst {
                violations.push(format!("edge {i}: self-loop on node {}", e.src));
            }
            if index.insert((e.src, e.dst), i).is_some() {
                violations.push(format!("edge {i}: duplicate edge {}->{}", e.src, e.dst));
            }
        }
        if !violations.is_empty() {
            return Err(Error::InvalidTopology(violations));
        }
        let mut out = vec![Vec::new(); node_count];
        for (i, e) in edges.iter().enumerate() {
            out[e.src].push((e.dst, i));
        }
        for adj in &mut out {
            adj.sort_unstable();
        }
        Ok(Self {
            node_count,
            edges,
            index,
            out,
        })
    }

    /// Each undirected link becomes two directed edges of equal capacity.
    pub fn from_undirected(node_count: usize, links: &[(NodeId, NodeId, f64)]) -> Result<Self> {
        let edges = links
            .iter()
            .flat_map(|&(a, b, capacity)| {
                [
                    Edge {
                        src: a,
                        dst: b,
                        capacity,
                    },
                    Edge {
                        src: b,
                        dst: a,
                        capacity,
                    },
                ]
            })
            .collect();
        Self::new(node_count, edges)
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: TopologyFile =
            serde_json::from_str(text).map_err(|e| Error::parse("topology", e))?;
        Self::new(file.nodes, file.edges)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let file = TopologyFile {
            nodes: self.node_count,
            edges: self.edges.clone(),
        };
        serde_json::to_string_pretty(&file).expect("topology serializes")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn edge(&self, id: usize) -> &Edge {
        &self.edges[id]
    }

    pub fn edge_id(&self, src: NodeId, dst: NodeId) -> Option<usize> {
        self.index.get(&(src, dst)).copied()
    }

    /// Outgoing `(neighbor, edge id)` pairs sorted by neighbor id.
    pub fn out_edges(&self, node: NodeId) -> &[(NodeId, usize)] {
        &self.out[node]
    }

    pub fn capacities(&self) -> Vec<f64> {
        self.edges.iter().map(|e| e.capacity).collect()
    }

    pub fn min_capacity(&self) -> f64 {
        self.edges
            .iter()
            .map(|e| e.capacity)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_capacity(&self) -> f64 {
        self.edges.iter().map(|e| e.capacity).fold(0.0, f64::max)
    }

    /// Nodes reachable from `src` when the edges flagged in `removed` are
    /// ignored.
    pub fn reachable_from(&self, src: NodeId, removed: &[bool]) -> Vec<bool> {
        let mut seen = vec![false; self.node_count];
        let mut queue = VecDeque::from([src]);
        seen[src] = true;
        while let Some(u) = queue.pop_front() {
            for &(v, e) in &self.out[u] {
                if !removed.get(e).copied().unwrap_or(false) && !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
        seen
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"{"nodes": 4, "edges": [
        {"src": 0, "dst": 3, "capacity": 1},
        {"src": 1, "dst": 3, "capacity": 1},
        {"src": 0, "dst": 2, "capacity": 1},
        {"src": 1, "dst": 2, "capacity": 1},
        {"src": 2, "dst": 3, "capacity": 1}]}"#;

    #[test]
    fn parses_toy_file() {
        let topo = Topology::from_json_str(TOY).unwrap();
        assert_eq!(topo.node_count(), 4);
        assert_eq!(topo.edge_count(), 5);
        assert_eq!(topo.edge_id(2, 3), Some(4));
        assert_eq!(topo.min_capacity(), 1.0);
    }

    #[test]
    fn empty_edge_list_is_valid() {
        let topo = Topology::from_json_str(r#"{"nodes": 3, "edges": []}"#).unwrap();
        assert_eq!(topo.edge_count(), 0);
    }

    #[test]
    fn zero_capacity_is_rejected() {
        let err = Topology::from_json_str(
            r#"{"nodes": 2, "edges": [{"src": 0, "dst": 1, "capacity": 0}]}"#,
        )
        .unwrap_err();
        assert!(err.to_string().contains("nonpositive capacity"), "{err}");
    }

    #[test]
    fn all_violations_are_listed() {
        let err = Topology::from_json_str(
            r#"{"nodes": 2, "edges": [
                {"src": 0, "dst": 1, "capacity": -1},
                {"src": 0, "dst": 7, "capacity": 1},
                {"src": 1, "dst": 1, "capacity": 1},
                {"src": 0, "dst": 1, "capacity": 2}]}"#,
        )
        .unwrap_err();
        match err {
            Error::InvalidTopology(v) => assert_eq!(v.len(), 4, "{v:?}"),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn malformed_json_is_a_parse_error() {
        assert!(matches!(
            Topology::from_json_str("{\"nodes\": 2"),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn json_round_trip() {
        let topo = Topology::from_json_str(TOY).unwrap();
        let again = Topology::from_json_str(&topo.to_json_string()).unwrap();
        assert_eq!(topo, again);
    }

    #[test]
    fn undirected_links_double_up() {
        let topo = Topology::from_undirected(3, &[(0, 1, 2.0), (1, 2, 3.0)]).unwrap();
        assert_eq!(topo.edge_count(), 4);
        assert_eq!(topo.edge(topo.edge_id(2, 1).unwrap()).capacity, 3.0);
    }
}
