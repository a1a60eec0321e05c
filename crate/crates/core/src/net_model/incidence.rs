use std::ops::Range;

use ndarray::{Array1, Array2};

use crate::Result;

use super::{tunnel_edges, DemandMatrix, NodeId, Topology, Tunnel, TunnelSet};

/// Flattened pair/tunnel/edge structure shared by every objective.
///
/// Pairs follow the row-major order of the tunnel set (pairs with an empty
/// tunnel list keep a row), tunnels are numbered pair by pair in generation
/// order, and edges keep the topology's order. The dense `A`, `B`, `C`
/// matrices are available on demand; the evaluators use the sparse lists.
#[derive(Debug, Clone, PartialEq)]
pub struct IncidenceMatrices {
    node_count: usize,
    pairs: Vec<(NodeId, NodeId)>,
    pair_tunnels: Vec<Range<usize>>,
    tunnel_pair: Vec<usize>,
    tunnels: Vec<Tunnel>,
    tunnel_edges: Vec<Vec<usize>>,
    edge_tunnels: Vec<Vec<usize>>,
    capacities: Vec<f64>,
}

impl IncidenceMatrices {
    pub fn build(topology: &Topology, tunnels: &TunnelSet) -> Result<Self> {
        let mut pairs = Vec::with_capacity(tunnels.pair_count());
        let mut pair_tunnels = Vec::with_capacity(tunnels.pair_count());
        let mut tunnel_pair = Vec::new();
        let mut paths = Vec::new();
        let mut tunnel_edge_ids = Vec::new();
        let mut edge_tunnels = vec![Vec::new(); topology.edge_count()];
        for (&(s, t), list) in tunnels.iter() {
            let start = paths.len();
            for tunnel in list {
                let edges = tunnel_edges(topology, s, t, tunnel)?;
                for &e in &edges {
                    edge_tunnels[e].push(paths.len());
                }
                tunnel_pair.push(pairs.len());
                tunnel_edge_ids.push(edges);
                paths.push(tunnel.clone());
            }
            pair_tunnels.push(start..paths.len());
            pairs.push((s, t));
        }
        Ok(Self {
            node_count: topology.node_count(),
            pairs,
            pair_tunnels,
            tunnel_pair,
            tunnels: paths,
            tunnel_edges: tunnel_edge_ids,
            edge_tunnels,
            capacities: topology.capacities(),
        })
    }

    pub fn node_count(&self) -> usize {
        self.node_count
    }

    pub fn pair_count(&self) -> usize {
        self.pairs.len()
    }

    pub fn tunnel_count(&self) -> usize {
        self.tunnels.len()
    }

    pub fn edge_count(&self) -> usize {
        self.capacities.len()
    }

    pub fn pairs(&self) -> &[(NodeId, NodeId)] {
        &self.pairs
    }

    /// Row of `(src, dst)`, if the pair is present.
    pub fn pair_index(&self, src: NodeId, dst: NodeId) -> Option<usize> {
        self.pairs.binary_search(&(src, dst)).ok()
    }

    /// Tunnel index range belonging to pair `i`.
    pub fn pair_tunnels(&self, i: usize) -> Range<usize> {
        self.pair_tunnels[i].clone()
    }

    pub fn tunnel_pair(&self, j: usize) -> usize {
        self.tunnel_pair[j]
    }

    pub fn tunnel(&self, j: usize) -> &Tunnel {
        &self.tunnels[j]
    }

    pub fn tunnel_edges(&self, j: usize) -> &[usize] {
        &self.tunnel_edges[j]
    }

    pub fn edge_tunnels(&self, e: usize) -> &[usize] {
        &self.edge_tunnels[e]
    }

    pub fn capacities(&self) -> &[f64] {
        &self.capacities
    }

    pub fn capacity(&self, e: usize) -> f64 {
        self.capacities[e]
    }

    /// Largest link capacity; bounds every normalized cap.
    pub fn c_max(&self) -> f64 {
        self.capacities.iter().copied().fold(0.0, f64::max)
    }

    pub fn c_min(&self) -> f64 {
        self.capacities
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_tunnels_per_pair(&self) -> usize {
        self.pair_tunnels.iter().map(|r| r.len()).max().unwrap_or(0)
    }

    /// Demand of each pair, in pair order.
    pub fn pair_demands(&self, dm: &DemandMatrix) -> Vec<f64> {
        self.pairs.iter().map(|&(s, t)| dm.get(s, t)).collect()
    }

    /// Rebuilds the tunnel set this structure was built from.
    pub fn tunnel_set(&self) -> TunnelSet {
        let mut set = TunnelSet::new();
        for (i, &(s, t)) in self.pairs.iter().enumerate() {
            set.insert(s, t, self.tunnels[self.pair_tunnels(i)].to_vec());
        }
        set
    }

    /// Dense pairs × tunnels membership matrix.
    pub fn a(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.pair_count(), self.tunnel_count()));
        for (j, &i) in self.tunnel_pair.iter().enumerate() {
            a[[i, j]] = 1.0;
        }
        a
    }

    /// Dense tunnels × edges membership matrix.
    pub fn b(&self) -> Array2<f64> {
        let mut b = Array2::zeros((self.tunnel_count(), self.edge_count()));
        for (j, edges) in self.tunnel_edges.iter().enumerate() {
            for &e in edges {
                b[[j, e]] = 1.0;
            }
        }
        b
    }

    /// Edge capacity vector.
    pub fn c(&self) -> Array1<f64> {
        Array1::from(self.capacities.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::traffic::toy_topology;

    #[test]
    fn toy_single_pair() {
        let topo = toy_topology();
        let mut set = TunnelSet::new();
        set.insert(0, 3, vec![vec![0, 3], vec![0, 2, 3]]);
        let inc = IncidenceMatrices::build(&topo, &set).unwrap();
        assert_eq!(inc.a(), ndarray::array![[1.0, 1.0]]);
        assert_eq!(
            inc.b(),
            ndarray::array![[1.0, 0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 1.0, 0.0, 1.0]]
        );
        assert_eq!(inc.c().to_vec(), vec![1.0; 5]);
    }

    #[test]
    fn empty_set() {
        let inc = IncidenceMatrices::build(&toy_topology(), &TunnelSet::new()).unwrap();
        assert_eq!(inc.a().dim(), (0, 0));
        assert_eq!(inc.b().dim(), (0, 5));
        assert_eq!(inc.c().len(), 5);
    }

    #[test]
    fn unknown_edge_is_rejected() {
        let mut set = TunnelSet::new();
        set.insert(0, 3, vec![vec![0, 1, 3]]);
        assert!(IncidenceMatrices::build(&toy_topology(), &set).is_err());
    }
}
