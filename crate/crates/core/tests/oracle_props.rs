mod common;

use common::{grid_instance, random_instance, rng};
use dote_core::baselines::{grid_search_oracle, oracle_optimize, OracleOptions};
use dote_core::net_model::{DemandMatrix, IncidenceMatrices};
use dote_core::objectives::{objective_value, ObjectiveKind, TeConfig};
use proptest::prelude::*;
use proptest::test_runner::RngSeed;

const KINDS: [ObjectiveKind; 3] = [
    ObjectiveKind::MinMlu,
    ObjectiveKind::MaxMultiCommodityFlow,
    ObjectiveKind::MaxConcurrentFlow(0.01),
];

#[test]
fn oracle_matches_fine_grid() {
    for (k, kind) in KINDS.into_iter().enumerate() {
        let mut r = rng(100 + k as u64);
        for case in 0..20 {
            let (inc, dm) = grid_instance(&mut r, kind, 2, 3);
            let sol = oracle_optimize(&inc, &dm, kind, &OracleOptions::default()).unwrap();
            let grid = grid_search_oracle(&inc, &dm, kind, 0.01).unwrap();
            assert!(
                (sol.value - grid).abs() <= 0.02,
                "{kind} case {case}: oracle {} grid {grid}",
                sol.value
            );
            // The grid only visits feasible decisions, so it never beats the oracle.
            if kind.maximizes() {
                assert!(sol.value >= grid - 1e-7, "{kind} case {case}");
            } else {
                assert!(sol.value <= grid + 1e-7, "{kind} case {case}");
            }
            if let TeConfig::Capped(c) = &sol.config {
                assert!(c.is_feasible(&inc));
            }
            let rescored = objective_value(&inc, &sol.config, &dm, kind).unwrap();
            assert!((rescored - sol.value).abs() <= 1e-12);
        }
    }
}

#[test]
fn oracle_dominates_coarse_grid_up_to_six_dimensions() {
    for (k, kind) in KINDS.into_iter().enumerate() {
        let mut r = rng(200 + k as u64);
        let resolution = if kind.is_flow() { 0.2 } else { 0.1 };
        for case in 0..20 {
            let (inc, dm) = grid_instance(&mut r, kind, 4, 6);
            let sol = oracle_optimize(&inc, &dm, kind, &OracleOptions::default()).unwrap();
            let grid = grid_search_oracle(&inc, &dm, kind, resolution).unwrap();
            if kind.maximizes() {
                assert!(
                    sol.value >= grid - 1e-7,
                    "{kind} case {case}: {} < {grid}",
                    sol.value
                );
            } else {
                assert!(
                    sol.value <= grid + 1e-7,
                    "{kind} case {case}: {} > {grid}",
                    sol.value
                );
            }
        }
    }
}

/// Lower bounds on the optimal MLU: all traffic leaving a source crosses the
/// first edges of that source's tunnels, all traffic reaching a destination
/// crosses their last edges, and total edge volume is at least demand times
/// shortest tunnel length.
fn mlu_cut_bound(inc: &IncidenceMatrices, dm: &DemandMatrix) -> f64 {
    let n = inc.node_count();
    let demands = inc.pair_demands(dm);
    let mut bound: f64 = 0.0;
    for endpoint in 0..2 {
        for v in 0..n {
            let mut volume = 0.0;
            let mut edges = std::collections::BTreeSet::new();
            for (i, &(s, t)) in inc.pairs().iter().enumerate() {
                if demands[i] == 0.0 || (if endpoint == 0 { s } else { t }) != v {
                    continue;
                }
                volume += demands[i];
                for j in inc.pair_tunnels(i) {
                    let e = inc.tunnel_edges(j);
                    edges.insert(if endpoint == 0 { e[0] } else { e[e.len() - 1] });
                }
            }
            let cap: f64 = edges.iter().map(|&e| inc.capacity(e)).sum();
            if volume > 0.0 {
                bound = bound.max(volume / cap);
            }
        }
    }
    let volume: f64 = (0..inc.pair_count())
        .filter(|&i| demands[i] > 0.0)
        .map(|i| {
            let hops = inc
                .pair_tunnels(i)
                .map(|j| inc.tunnel_edges(j).len())
                .min()
                .unwrap();
            demands[i] * hops as f64
        })
        .sum();
    bound.max(volume / inc.capacities().iter().sum::<f64>())
}

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        rng_seed: RngSeed::Fixed(0x0_4ac1e),
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

proptest! {
    #![proptest_config(config(200))]

    #[test]
    fn mlu_oracle_respects_cut_bounds(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (_, inc) = random_instance(&mut r, 7, 4);
        let dm = common::random_dm(&mut r, &inc, 3.0);
        let sol = oracle_optimize(&inc, &dm, ObjectiveKind::MinMlu, &OracleOptions::default()).unwrap();
        let bound = mlu_cut_bound(&inc, &dm);
        prop_assert!(sol.value >= bound - 1e-9, "{} < {}", sol.value, bound);
    }

    #[test]
    fn halving_tolerance_never_worsens_mlu(seed in any::<u64>()) {
        let mut r = rng(seed);
        let (_, inc) = random_instance(&mut r, 6, 3);
        let dm = common::random_dm(&mut r, &inc, 3.0);
        let mlu = |opts: OracleOptions| oracle_optimize(&inc, &dm, ObjectiveKind::MinMlu, &opts).unwrap().value;
        let mut tol = 1e-2;
        let (mut lp, mut fo) = (
            mlu(OracleOptions { tol, ..OracleOptions::default() }),
            mlu(OracleOptions::first_order(tol, 3000)),
        );
        for _ in 0..4 {
            tol /= 2.0;
            let next_lp = mlu(OracleOptions { tol, ..OracleOptions::default() });
            let next_fo = mlu(OracleOptions::first_order(tol, 3000));
            prop_assert!(next_lp <= lp + 1e-9, "lp {} -> {} at tol {}", lp, next_lp, tol);
            prop_assert!(next_fo <= fo + 1e-9, "first order {} -> {} at tol {}", fo, next_fo, tol);
            (lp, fo) = (next_lp, next_fo);
        }
    }
}
