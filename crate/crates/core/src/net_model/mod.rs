//! Topologies, demand matrices and traces, tunnels, and incidence matrices.

mod demand;
mod incidence;
mod topology;
mod tunnels;

pub use demand::{history_windows, DemandMatrix, DemandTrace, HistorySample};
pub use incidence::IncidenceMatrices;
pub use topology::{Edge, NodeId, Topology};
pub use tunnels::{
    edge_disjoint_paths, edge_disjoint_paths_for_pairs, tunnel_edges, yen_k_shortest,
    yen_k_shortest_for_pairs, Tunnel, TunnelSet,
};
