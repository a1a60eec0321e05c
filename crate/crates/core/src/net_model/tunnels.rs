use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{NodeId, Topology};

/// A loop-free path, as the sequence of nodes it visits.
pub type Tunnel = Vec<NodeId>;

/// Tunnels per ordered `(src, dst)` pair. Pairs iterate in row-major order;
/// within a pair, tunnels keep their generation order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TunnelSet {
    pairs: BTreeMap<(NodeId, NodeId), Vec<Tunnel>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TunnelFile {
    pairs: Vec<PairRecord>,
}

#[derive(Debug, Serialize, Deserialize)]
struct PairRecord {
    src: NodeId,
    dst: NodeId,
    tunnels: Vec<Tunnel>,
}

impl TunnelSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, src: NodeId, dst: NodeId, tunnels: Vec<Tunnel>) {
        self.pairs.insert((src, dst), tunnels);
    }

    pub fn get(&self, src: NodeId, dst: NodeId) -> &[Tunnel] {
        self.pairs.get(&(src, dst)).map_or(&[], Vec::as_slice)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&(NodeId, NodeId), &Vec<Tunnel>)> {
        self.pairs.iter()
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn tunnel_count(&self) -> usize {
        self.pairs.values().map(Vec::len).sum()
    }

    pub fn max_tunnels_per_pair(&self) -> usize {
        self.pairs.values().map(Vec::len).max().unwrap_or(0)
    }

    /// Checks that every tunnel is a loop-free walk over existing edges from
    /// its source to its destination.
    pub fn validate(&self, topology: &Topology) -> Result<()> {
        for (&(s, t), tunnels) in &self.pairs {
            for tunnel in tunnels {
                tunnel_edges(topology, s, t, tunnel)?;
            }
        }
        Ok(())
    }

    /// Reports the first pair with positive demand in `trace` that has no tunnel.
    pub fn check_covers(&self, trace: &super::DemandTrace) -> Result<()> {
        for (s, t) in trace.active_pairs() {
            if self.get(s, t).is_empty() {
                return Err(Error::Unroutable { src: s, dst: t });
            }
        }
        Ok(())
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let file: TunnelFile =
            serde_json::from_str(text).map_err(|e| Error::parse("tunnels", e))?;
        let mut set = Self::new();
        for rec in file.pairs {
            if set.pairs.contains_key(&(rec.src, rec.dst)) {
                return Err(Error::parse(
                    "tunnels",
                    format!("pair ({},{}) listed twice", rec.src, rec.dst),
                ));
            }
            set.insert(rec.src, rec.dst, rec.tunnels);
        }
        Ok(set)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn to_json_string(&self) -> String {
        let file = TunnelFile {
            pairs: self
                .pairs
                .iter()
                .map(|(&(src, dst), tunnels)| PairRecord {
                    src,
                    dst,
                    tunnels: tunnels.clone(),
                })
                .collect(),
        };
        serde_json::to_string(&file).expect("tunnels serialize")
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_string()).map_err(|e| Error::io(path, e))
    }
}

/// Resolves a node sequence to edge ids, validating endpoints, edge existence
/// and loop-freeness.
pub fn tunnel_edges(
    topology: &Topology,
    src: NodeId,
    dst: NodeId,
    tunnel: &[NodeId],
) -> Result<Vec<usize>> {
    if tunnel.len() < 2 || tunnel[0] != src || tunnel[tunnel.len() - 1] != dst {
        return Err(Error::InvalidTunnel(format!(
            "{tunnel:?} does not run from {src} to {dst}"
        )));
    }
    let mut seen = BTreeSet::new();
    if let Some(dup) = tunnel.iter().find(|v| !seen.insert(**v)) {
        return Err(Error::InvalidTunnel(format!(
            "{tunnel:?} visits node {dup} twice"
        )));
    }
    tunnel
        .windows(2)
        .map(|w| {
            topology.edge_id(w[0], w[1]).ok_or_else(|| {
                Error::InvalidTunnel(format!("{tunnel:?} uses missing edge {}->{}", w[0], w[1]))
            })
        })
        .collect()
}

/// Shortest-path search by hop count. Among equally short paths the
/// lexicographically smallest node sequence wins.
struct PathFinder<'a> {
    topo: &'a Topology,
    incoming: Vec<Vec<(NodeId, usize)>>,
}

impl<'a> PathFinder<'a> {
    fn new(topo: &'a Topology) -> Self {
        let mut incoming = vec![Vec::new(); topo.node_count()];
        for (i, e) in topo.edges().iter().enumerate() {
            incoming[e.dst].push((e.src, i));
        }
        Self { topo, incoming }
    }

    fn shortest(
        &self,
        src: NodeId,
        dst: NodeId,
        banned_nodes: &[bool],
        banned_edges: &[bool],
    ) -> Option<Tunnel> {
        if banned_nodes[src] || banned_nodes[dst] {
            return None;
        }
        // Hop distances to dst over the allowed subgraph.
        let mut dist = vec![usize::MAX; self.topo.node_count()];
        dist[dst] = 0;
        let mut queue = VecDeque::from([dst]);
        while let Some(v) = queue.pop_front() {
            if v == src {
                break;
            }
            for &(u, e) in &self.incoming[v] {
                if !banned_edges[e] && !banned_nodes[u] && dist[u] == usize::MAX {
                    dist[u] = dist[v] + 1;
                    queue.push_back(u);
                }
            }
        }
        if dist[src] == usize::MAX {
            return None;
        }
        // Greedy walk choosing the smallest next node that stays on a shortest path.
        let mut path = vec![src];
        let mut u = src;
        while u != dst {
            let next = self
                .topo
                .out_edges(u)
                .iter()
                .find(|&&(v, e)| {
                    !banned_edges[e]
                        && !banned_nodes[v]
                        && dist[v] != usize::MAX
                        && dist[v] + 1 == dist[u]
                })
                .map(|&(v, _)| v)
                .expect("distance labels guarantee a successor");
            path.push(next);
            u = next;
        }
        Some(path)
    }
}

fn yen_pair(finder: &PathFinder<'_>, src: NodeId, dst: NodeId, k: usize) -> Vec<Tunnel> {
    let topo = finder.topo;
    let n = topo.node_count();
    let mut banned_nodes = vec![false; n];
    let mut banned_edges = vec![false; topo.edge_count()];
    let Some(first) = finder.shortest(src, dst, &banned_nodes, &banned_edges) else {
        return Vec::new();
    };
    let mut accepted: Vec<Tunnel> = vec![first];
    let mut candidates: BTreeSet<(usize, Tunnel)> = BTreeSet::new();

    while accepted.len() < k {
        let prev = accepted.last().expect("nonempty").clone();
        for i in 0..prev.len() - 1 {
            let spur = prev[i];
            let root = &prev[..=i];
            banned_nodes.iter_mut().for_each(|b| *b = false);
            banned_edges.iter_mut().for_each(|b| *b = false);
            for p in &accepted {
                if p.len() > i + 1 && p[..=i] == *root {
                    if let Some(e) = topo.edge_id(p[i], p[i + 1]) {
                        banned_edges[e] = true;
                    }
                }
            }
            for &v in &root[..i] {
                banned_nodes[v] = true;
            }
            if let Some(spur_path) = finder.shortest(spur, dst, &banned_nodes, &banned_edges) {
                let mut full = root[..i].to_vec();
                full.extend(spur_path);
                if !accepted.contains(&full) {
                    candidates.insert((full.len() - 1, full));
                }
            }
        }
        match candidates.pop_first() {
            Some((_, best)) => accepted.push(best),
            None => break,
        }
    }
    accepted
}

/// Up to `k` loop-free paths for every ordered pair, sorted by hop count with
/// lexicographic node-sequence tie-breaking. Unreachable pairs get an empty list.
pub fn yen_k_shortest(topology: &Topology, k: usize) -> TunnelSet {
    let n = topology.node_count();
    let pairs: Vec<_> = (0..n)
        .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
        .collect();
    yen_k_shortest_for_pairs(topology, k, &pairs)
}

/// As [`yen_k_shortest`], restricted to the listed pairs.
pub fn yen_k_shortest_for_pairs(
    topology: &Topology,
    k: usize,
    pairs: &[(NodeId, NodeId)],
) -> TunnelSet {
    assert!(k >= 1, "k must be positive");
    let finder = PathFinder::new(topology);
    let mut set = TunnelSet::new();
    for &(s, t) in pairs {
        set.insert(s, t, yen_pair(&finder, s, t, k));
    }
    set
}

/// Per pair: repeatedly take a shortest path and remove its edges until the
/// destination becomes unreachable.
pub fn edge_disjoint_paths(topology: &Topology) -> TunnelSet {
    let n = topology.node_count();
    let pairs: Vec<_> = (0..n)
        .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
        .collect();
    edge_disjoint_paths_for_pairs(topology, &pairs)
}

pub fn edge_disjoint_paths_for_pairs(topology: &Topology, pairs: &[(NodeId, NodeId)]) -> TunnelSet {
    let finder = PathFinder::new(topology);
    let no_nodes = vec![false; topology.node_count()];
    let mut set = TunnelSet::new();
    for &(s, t) in pairs {
        let mut banned_edges = vec![false; topology.edge_count()];
        let mut paths = Vec::new();
        while let Some(p) = finder.shortest(s, t, &no_nodes, &banned_edges) {
            for w in p.windows(2) {
                banned_edges[topology.edge_id(w[0], w[1]).expect("path edge")] = true;
            }
            paths.push(p);
        }
        set.insert(s, t, paths);
    }
    set
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::toy_topology;

    const A: usize = 0;
    const B: usize = 1;
    const C: usize = 2;
    const D: usize = 3;

    #[test]
    fn yen_on_toy() {
        let topo = toy_topology();
        let set = yen_k_shortest(&topo, 8);
        assert_eq!(set.get(A, D), &[vec![A, D], vec![A, C, D]]);
        assert_eq!(set.get(B, D), &[vec![B, D], vec![B, C, D]]);
        assert_eq!(set.get(C, D), &[vec![C, D]]);
        assert!(set.get(D, A).is_empty());
        let one = yen_k_shortest(&topo, 1);
        assert_eq!(one.get(A, D), &[vec![A, D]]);
    }

    #[test]
    fn disjoint_on_toy() {
        let topo = toy_topology();
        let set = edge_disjoint_paths(&topo);
        assert_eq!(set.get(A, D), &[vec![A, D], vec![A, C, D]]);
        assert_eq!(set.get(A, C), &[vec![A, C]]);
    }

    #[test]
    fn bridge_yields_single_disjoint_path() {
        // 0 -> 1 is a bridge; beyond it two parallel routes to 3.
        let topo =
            Topology::from_undirected(4, &[(0, 1, 1.0), (1, 2, 1.0), (1, 3, 1.0), (2, 3, 1.0)])
                .unwrap();
        let set = edge_disjoint_paths(&topo);
        assert_eq!(set.get(0, 3), &[vec![0, 1, 3]]);
        assert_eq!(yen_k_shortest(&topo, 8).get(0, 3).len(), 2);
    }

    #[test]
    fn tunnel_validation() {
        let topo = toy_topology();
        assert!(tunnel_edges(&topo, A, D, &[A, C, D]).is_ok());
        assert!(tunnel_edges(&topo, A, D, &[A, B, D]).is_err());
        assert!(tunnel_edges(&topo, A, D, &[A, C]).is_err());
        assert!(tunnel_edges(&topo, A, D, &[A]).is_err());
    }

    #[test]
    fn tunnel_file_round_trip() {
        let set = yen_k_shortest(&toy_topology(), 8);
        let again = TunnelSet::from_json_str(&set.to_json_string()).unwrap();
        assert_eq!(set, again);
    }
}
