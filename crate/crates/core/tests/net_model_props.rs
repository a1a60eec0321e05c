mod common;

use std::collections::HashSet;

use dote_core::net_model::{
    edge_disjoint_paths, history_windows, yen_k_shortest, DemandMatrix, DemandTrace,
    IncidenceMatrices, NodeId, Topology, Tunnel,
};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

use common::{random_topology, rng, routable_tunnels};

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(0x0d07e),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

/// Every simple path from `src` to `dst`, by depth-first enumeration.
fn all_simple_paths(topo: &Topology, src: NodeId, dst: NodeId) -> Vec<Tunnel> {
    fn dfs(
        topo: &Topology,
        path: &mut Tunnel,
        on_path: &mut [bool],
        dst: NodeId,
        out: &mut Vec<Tunnel>,
    ) {
        let u = *path.last().unwrap();
        if u == dst {
            out.push(path.clone());
            return;
        }
        for &(v, _) in topo.out_edges(u) {
            if !on_path[v] {
                on_path[v] = true;
                path.push(v);
                dfs(topo, path, on_path, dst, out);
                path.pop();
                on_path[v] = false;
            }
        }
    }
    let mut on_path = vec![false; topo.node_count()];
    on_path[src] = true;
    let mut out = Vec::new();
    dfs(topo, &mut vec![src], &mut on_path, dst, &mut out);
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

fn path_edges(topo: &Topology, path: &[NodeId]) -> Vec<usize> {
    path.windows(2)
        .map(|w| topo.edge_id(w[0], w[1]).expect("path follows edges"))
        .collect()
}

proptest! {
    #![proptest_config(config(120))]

    #[test]
    fn yen_matches_exhaustive_enumeration(seed in any::<u64>(), nodes in 2usize..=7) {
        let topo = random_topology(&mut rng(seed), nodes, 0.45);
        let yen = yen_k_shortest(&topo, 100_000);
        for s in 0..nodes {
            for t in (0..nodes).filter(|&t| t != s) {
                prop_assert_eq!(yen.get(s, t), &all_simple_paths(&topo, s, t)[..], "pair ({}, {})", s, t);
            }
        }
    }

    #[test]
    fn yen_prefix_is_the_k_shortest(seed in any::<u64>(), nodes in 3usize..=8, k in 1usize..6) {
        let topo = random_topology(&mut rng(seed), nodes, 0.4);
        let yen = yen_k_shortest(&topo, k);
        for s in 0..nodes {
            for t in (0..nodes).filter(|&t| t != s) {
                let all = all_simple_paths(&topo, s, t);
                prop_assert_eq!(yen.get(s, t), &all[..all.len().min(k)]);
            }
        }
    }

    #[test]
    fn yen_paths_are_sorted_distinct_and_loop_free(seed in any::<u64>(), nodes in 8usize..=14) {
        let topo = random_topology(&mut rng(seed), nodes, 0.25);
        let yen = yen_k_shortest(&topo, 4);
        for (&(s, t), paths) in yen.iter() {
            prop_assert!(paths.windows(2).all(|w| w[0].len() <= w[1].len()));
            let distinct: HashSet<&Tunnel> = paths.iter().collect();
            prop_assert_eq!(distinct.len(), paths.len());
            for p in paths {
                let nodes: HashSet<_> = p.iter().collect();
                prop_assert_eq!(nodes.len(), p.len());
                prop_assert_eq!((p[0], *p.last().unwrap()), (s, t));
                path_edges(&topo, p);
            }
        }
    }

    #[test]
    fn disjoint_paths_share_no_edge(seed in any::<u64>(), nodes in 3usize..=10) {
        let topo = random_topology(&mut rng(seed), nodes, 0.35);
        let set = edge_disjoint_paths(&topo);
        for (&(s, t), paths) in set.iter() {
            let mut used = HashSet::new();
            for p in paths {
                prop_assert_eq!((p[0], *p.last().unwrap()), (s, t));
                for e in path_edges(&topo, p) {
                    prop_assert!(used.insert(e), "edge {} reused for ({}, {})", e, s, t);
                }
            }
            // Removing all returned paths leaves t unreachable from s.
            let mut removed = vec![false; topo.edge_count()];
            used.iter().for_each(|&e| removed[e] = true);
            prop_assert!(!topo.reachable_from(s, &removed)[t]);
        }
    }

    #[test]
    fn incidence_sums_reproduce_counts(seed in any::<u64>(), nodes in 3usize..=9, k in 1usize..5) {
        let topo = random_topology(&mut rng(seed), nodes, 0.4);
        let set = routable_tunnels(&topo, k);
        let inc = IncidenceMatrices::build(&topo, &set).unwrap();
        let (a, b, c) = (inc.a(), inc.b(), inc.c());

        let mut membership = vec![0.0; topo.edge_count()];
        for (i, &(s, t)) in inc.pairs().iter().enumerate() {
            prop_assert_eq!(a.row(i).sum(), set.get(s, t).len() as f64);
            for p in set.get(s, t) {
                path_edges(&topo, p).into_iter().for_each(|e| membership[e] += 1.0);
            }
        }
        for j in 0..inc.tunnel_count() {
            prop_assert_eq!(a.column(j).sum(), 1.0);
        }
        for e in 0..topo.edge_count() {
            prop_assert_eq!(b.column(e).sum(), membership[e]);
            prop_assert_eq!(c[e], topo.edge(e).capacity);
        }
    }

    #[test]
    fn history_windows_cover_the_trace(len in 1usize..40, h in 1usize..15) {
        let trace = DemandTrace::new(
            (0..len)
                .map(|i| DemandMatrix::from_entries(2, &[(0, 1, i as f64)]).unwrap())
                .collect(),
        )
        .unwrap();
        match history_windows(&trace, h) {
            Ok(samples) => {
                prop_assert_eq!(samples.len() + h, len);
                for (i, s) in samples.iter().enumerate() {
                    prop_assert_eq!(s.epoch, i + h);
                    prop_assert_eq!(s.window, &trace.matrices()[i..i + h]);
                    prop_assert_eq!(s.target, trace.get(i + h));
                }
            }
            Err(_) => prop_assert!(len <= h),
        }
    }
}
