//! Link failures, proportional rebalancing onto surviving tunnels, and
//! evaluation against a fault-aware oracle.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::baselines::{oracle_optimize, prediction_based_te, LinRegPredictor, OracleOptions};
use crate::engine::{infer, DoteModel};
use crate::net_model::{
    history_windows, DemandMatrix, DemandTrace, IncidenceMatrices, NodeId, Topology, TunnelSet,
};
use crate::objectives::{objective_value, CappedConfig, SplitConfig, TeConfig};
use crate::{Error, Result};

/// A set of failed directed edges.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FailureScenario {
    pub failed: BTreeSet<usize>,
    pub seed: u64,
    pub requested: usize,
}

impl FailureScenario {
    pub fn none() -> Self {
        Self {
            failed: BTreeSet::new(),
            seed: 0,
            requested: 0,
        }
    }

    pub fn from_edges(edges: impl IntoIterator<Item = usize>) -> Self {
        let failed: BTreeSet<usize> = edges.into_iter().collect();
        Self {
            requested: failed.len(),
            failed,
            seed: 0,
        }
    }

    /// Failing a node fails every edge into or out of it.
    pub fn node_failure(topology: &Topology, node: NodeId) -> Self {
        Self::from_edges(
            topology
                .edges()
                .iter()
                .enumerate()
                .filter(|(_, e)| e.src == node || e.dst == node)
                .map(|(id, _)| id),
        )
    }

    /// `true` at every failed edge id.
    pub fn edge_mask(&self, edge_count: usize) -> Vec<bool> {
        let mut mask = vec![false; edge_count];
        for &e in &self.failed {
            if e < edge_count {
                mask[e] = true;
            }
        }
        mask
    }
}

/// True if every pair with demand somewhere in `trace` stays connected once
/// the edges in `removed` are gone.
fn keeps_demand_connected(topology: &Topology, trace: &DemandTrace, removed: &[bool]) -> bool {
    let mut pairs = trace.active_pairs();
    pairs.sort_unstable();
    let mut reach: Option<(NodeId, Vec<bool>)> = None;
    for (s, t) in pairs {
        if reach.as_ref().is_none_or(|(src, _)| *src != s) {
            reach = Some((s, topology.reachable_from(s, removed)));
        }
        if !reach.as_ref().expect("set above").1[t] {
            return false;
        }
    }
    true
}

/// Draws `n` distinct edges uniformly at random, redrawing until no pair with
/// demand in `trace` is disconnected.
pub fn fail_links(
    topology: &Topology,
    n: usize,
    trace: &DemandTrace,
    seed: u64,
    max_retries: usize,
) -> Result<FailureScenario> {
    let m = topology.edge_count();
    if n >= m {
        return Err(Error::Config(format!(
            "cannot fail {n} of {m} edges; at least one must remain"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..max_retries.max(1) {
        let failed: BTreeSet<usize> = rand::seq::index::sample(&mut rng, m, n)
            .into_iter()
            .collect();
        let scenario = FailureScenario {
            failed,
            seed,
            requested: n,
        };
        if keeps_demand_connected(topology, trace, &scenario.edge_mask(m)) {
            return Ok(scenario);
        }
    }
    Err(Error::FailureRetriesExhausted {
        attempts: max_retries.max(1),
    })
}

/// Tunnels left after a failure, in the original pair order.
#[derive(Debug, Clone, PartialEq)]
pub struct SurvivingTunnels {
    pub tunnels: TunnelSet,
    /// `true` for every tunnel (original incidence order) crossing a failed edge.
    pub failed: Vec<bool>,
    /// Pairs that lost every tunnel.
    pub dead_pairs: Vec<(NodeId, NodeId)>,
}

pub fn surviving_tunnels(inc: &IncidenceMatrices, scenario: &FailureScenario) -> SurvivingTunnels {
    let failed: Vec<bool> = (0..inc.tunnel_count())
        .map(|j| {
            inc.tunnel_edges(j)
                .iter()
                .any(|e| scenario.failed.contains(e))
        })
        .collect();
    let mut tunnels = TunnelSet::new();
    let mut dead_pairs = Vec::new();
    for (i, &(s, t)) in inc.pairs().iter().enumerate() {
        let r = inc.pair_tunnels(i);
        let kept: Vec<_> = r
            .clone()
            .filter(|&j| !failed[j])
            .map(|j| inc.tunnel(j).clone())
            .collect();
        if kept.is_empty() && !r.is_empty() {
            dead_pairs.push((s, t));
        }
        tunnels.insert(s, t, kept);
    }
    SurvivingTunnels {
        tunnels,
        failed,
        dead_pairs,
    }
}

/// Zeroes failed entries and rescales the survivors to sum to one; shares
/// with nothing failed pass through untouched. The largest survivor takes
/// the remainder so the result sums to one as exactly as floating point
/// allows. `None` if nothing survives.
pub fn rebalance_shares(shares: &[f64], failed: &[bool]) -> Option<Vec<f64>> {
    if !failed.contains(&true) {
        return Some(shares.to_vec());
    }
    let alive: Vec<usize> = (0..shares.len()).filter(|&j| !failed[j]).collect();
    let total: f64 = alive.iter().map(|&j| shares[j]).sum();
    let mut out = vec![0.0; shares.len()];
    if alive.is_empty() {
        return None;
    }
    if !(total > 0.0) {
        // All surviving mass was zero: spread evenly.
        let even = 1.0 / alive.len() as f64;
        alive.iter().for_each(|&j| out[j] = even);
        return Some(out);
    }
    let largest = *alive
        .iter()
        .max_by(|&&a, &&b| shares[a].total_cmp(&shares[b]).then(b.cmp(&a)))
        .expect("nonempty");
    let mut rest = 0.0;
    for &j in &alive {
        if j != largest {
            out[j] = shares[j] / total;
            rest += out[j];
        }
    }
    out[largest] = (1.0 - rest).max(0.0);
    Some(out)
}

/// Proportional per-pair rebalancing of splits. Pairs left without a tunnel
/// keep all-zero shares; their indices are returned.
pub fn rebalance(
    inc: &IncidenceMatrices,
    config: &SplitConfig,
    failed: &[bool],
) -> (SplitConfig, Vec<usize>) {
    let mut splits = vec![0.0; config.splits.len()];
    let mut dead = Vec::new();
    for i in 0..inc.pair_count() {
        let r = inc.pair_tunnels(i);
        if r.is_empty() {
            continue;
        }
        match rebalance_shares(&config.splits[r.clone()], &failed[r.clone()]) {
            Some(s) => splits[r].copy_from_slice(&s),
            None => dead.push(i),
        }
    }
    (SplitConfig { splits }, dead)
}

/// Capped counterpart of [`rebalance`]: failed caps drop to zero, splits are
/// rebalanced and `gamma` is kept, so caps only shrink and stay feasible.
pub fn rebalance_capped(
    inc: &IncidenceMatrices,
    config: &CappedConfig,
    failed: &[bool],
) -> (CappedConfig, Vec<usize>) {
    let (splits, dead) = rebalance(
        inc,
        &SplitConfig {
            splits: config.splits.clone(),
        },
        failed,
    );
    let caps = config
        .caps
        .iter()
        .zip(failed)
        .map(|(&c, &f)| if f { 0.0 } else { c })
        .collect();
    let out = CappedConfig {
        caps,
        splits: splits.splits,
        gamma: config.gamma,
    };
    debug_assert!(out.is_feasible(inc));
    (out, dead)
}

pub fn rebalance_config(
    inc: &IncidenceMatrices,
    config: &TeConfig,
    failed: &[bool],
) -> (TeConfig, Vec<usize>) {
    match config {
        TeConfig::Split(s) => {
            let (s, dead) = rebalance(inc, s, failed);
            (TeConfig::Split(s), dead)
        }
        TeConfig::Capped(c) => {
            let (c, dead) = rebalance_capped(inc, c, failed);
            (TeConfig::Capped(c), dead)
        }
    }
}

/// Scores of every scheme on one (scenario, epoch).
#[derive(Debug, Clone, PartialEq)]
pub struct FailureRow {
    pub scenario: usize,
    /// Epoch index within the evaluated trace.
    pub epoch: usize,
    pub failed_edges: usize,
    /// Pairs with demand this epoch that lost every tunnel; their demand is
    /// dropped for every scheme.
    pub dead_pairs: usize,
    pub dote: f64,
    pub prediction: f64,
    pub fault_aware_prediction: f64,
    pub fault_aware_oracle: f64,
}

/// Compares, for every scenario and window of `test`: the model's decision
/// rebalanced onto surviving tunnels, the prediction-based decision
/// rebalanced likewise, prediction-based TE recomputed on the surviving
/// tunnels, and the oracle on the realized matrix over the surviving tunnels.
pub fn eval_under_failures(
    model: &DoteModel,
    predictor: &LinRegPredictor,
    test: &DemandTrace,
    topology: &Topology,
    inc: &IncidenceMatrices,
    scenarios: &[FailureScenario],
    opts: &OracleOptions,
) -> Result<Vec<FailureRow>> {
    let objective = model.objective();
    let samples = history_windows(test, model.history())?;
    // Decisions made without knowledge of the failure do not depend on it.
    let mut plain = Vec::with_capacity(samples.len());
    for s in &samples {
        let dote = infer(model, s.window, inc)?;
        let pred = prediction_based_te(predictor, s.window, inc, objective, opts)?.config;
        plain.push((dote, pred));
    }
    let mut rows = Vec::with_capacity(scenarios.len() * samples.len());
    for (k, scenario) in scenarios.iter().enumerate() {
        let surviving = surviving_tunnels(inc, scenario);
        let fa_inc = IncidenceMatrices::build(topology, &surviving.tunnels)?;
        for (s, (dote, pred)) in samples.iter().zip(&plain) {
            let realized = drop_dead_pairs(s.target, &surviving.dead_pairs);
            let dead_pairs = surviving
                .dead_pairs
                .iter()
                .filter(|&&(a, b)| s.target.get(a, b) > 0.0)
                .count();
            let score = |config: &TeConfig| {
                let (config, _) = rebalance_config(inc, config, &surviving.failed);
                objective_value(inc, &config, &realized, objective)
            };
            let fa_pred = prediction_based_te(predictor, s.window, &fa_inc, objective, opts)?;
            let fa_oracle = oracle_optimize(&fa_inc, &realized, objective, opts)?;
            rows.push(FailureRow {
                scenario: k,
                epoch: s.epoch,
                failed_edges: scenario.failed.len(),
                dead_pairs,
                dote: score(dote)?,
                prediction: score(pred)?,
                fault_aware_prediction: objective_value(
                    &fa_inc,
                    &fa_pred.config,
                    &realized,
                    objective,
                )?,
                fault_aware_oracle: fa_oracle.value,
            });
        }
    }
    Ok(rows)
}

fn drop_dead_pairs(dm: &DemandMatrix, dead: &[(NodeId, NodeId)]) -> DemandMatrix {
    if dead.is_empty() {
        return dm.clone();
    }
    dm.map_offdiag(|s, t, v| {
        if dead.binary_search(&(s, t)).is_ok() {
            0.0
        } else {
            v
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::baselines::{grid_search_oracle, linreg_fit};
    use crate::objectives::ObjectiveKind;
    use crate::traffic::{
        toy_bimodal_trace, toy_modes, toy_topology, ToyBimodalParams, TOY_A, TOY_B, TOY_C, TOY_D,
    };

    fn toy_inc() -> IncidenceMatrices {
        let mut set = TunnelSet::new();
        set.insert(
            TOY_A,
            TOY_D,
            vec![vec![TOY_A, TOY_D], vec![TOY_A, TOY_C, TOY_D]],
        );
        set.insert(
            TOY_B,
            TOY_D,
            vec![vec![TOY_B, TOY_D], vec![TOY_B, TOY_C, TOY_D]],
        );
        IncidenceMatrices::build(&toy_topology(), &set).unwrap()
    }

    fn edge(src: NodeId, dst: NodeId) -> usize {
        toy_topology().edge_id(src, dst).unwrap()
    }

    #[test]
    fn footnote_example() {
        let out = rebalance_shares(&[0.6, 0.3, 0.1], &[true, false, false]).unwrap();
        assert_eq!(out, vec![0.0, 0.75, 0.25]);
        assert_eq!(
            rebalance_shares(&[0.6, 0.3, 0.1], &[false; 3]).unwrap(),
            vec![0.6, 0.3, 0.1]
        );
        assert_eq!(rebalance_shares(&[0.6, 0.3, 0.1], &[true; 3]), None);
    }

    #[test]
    fn toy_failures() {
        let topo = toy_topology();
        let trace = toy_bimodal_trace(ToyBimodalParams {
            seed: 0,
            epochs: 20,
        })
        .unwrap();
        assert!(fail_links(&topo, 0, &trace, 1, 10)
            .unwrap()
            .failed
            .is_empty());
        assert!(fail_links(&topo, 5, &trace, 1, 10).is_err());
        // Failing C->D leaves both direct edges.
        let removed = FailureScenario::from_edges([edge(TOY_C, TOY_D)]).edge_mask(5);
        assert!(keeps_demand_connected(&topo, &trace, &removed));
        let removed =
            FailureScenario::from_edges([edge(TOY_A, TOY_D), edge(TOY_A, TOY_C)]).edge_mask(5);
        assert!(!keeps_demand_connected(&topo, &trace, &removed));
        for seed in 0..20 {
            let sc = fail_links(&topo, 1, &trace, seed, 50).unwrap();
            assert_eq!(sc.failed.len(), 1);
        }
    }

    #[test]
    fn survivors_and_dead_pairs() {
        let inc = toy_inc();
        let none = surviving_tunnels(&inc, &FailureScenario::none());
        assert_eq!(none.tunnels, inc.tunnel_set());
        assert!(none.dead_pairs.is_empty());

        let one = surviving_tunnels(&inc, &FailureScenario::from_edges([edge(TOY_A, TOY_D)]));
        assert_eq!(one.tunnels.get(TOY_A, TOY_D), &[vec![TOY_A, TOY_C, TOY_D]]);
        assert_eq!(one.failed, vec![true, false, false, false]);

        let both = surviving_tunnels(
            &inc,
            &FailureScenario::from_edges([edge(TOY_A, TOY_D), edge(TOY_A, TOY_C)]),
        );
        assert!(both.tunnels.get(TOY_A, TOY_D).is_empty());
        assert_eq!(both.dead_pairs, vec![(TOY_A, TOY_D)]);
        let (s, dead) = rebalance(&inc, &SplitConfig::uniform(&inc), &both.failed);
        assert_eq!(s.splits, vec![0.0, 0.0, 0.5, 0.5]);
        assert_eq!(dead, vec![0]);
    }

    #[test]
    fn capped_rebalance_only_shrinks() {
        let inc = toy_inc();
        let config = crate::objectives::normalize_caps(&inc, &[1.0, 0.5, 0.8, 0.9]);
        let failed = [false, true, false, false];
        let (out, dead) = rebalance_capped(&inc, &config, &failed);
        assert!(dead.is_empty());
        assert_eq!(out.caps[1], 0.0);
        assert_eq!(out.gamma, config.gamma);
        assert_eq!(&out.splits[..2], &[1.0, 0.0]);
        assert!(out.is_feasible(&inc));
    }

    #[test]
    fn fault_aware_oracle_matches_grid() {
        let inc = toy_inc();
        let topo = toy_topology();
        let sc = FailureScenario::from_edges([edge(TOY_A, TOY_D)]);
        let surv = surviving_tunnels(&inc, &sc);
        let fa_inc = IncidenceMatrices::build(&topo, &surv.tunnels).unwrap();
        let dm = &toy_modes()[0];
        let lp = oracle_optimize(
            &fa_inc,
            dm,
            ObjectiveKind::MinMlu,
            &OracleOptions::default(),
        )
        .unwrap()
        .value;
        let grid = grid_search_oracle(&fa_inc, dm, ObjectiveKind::MinMlu, 0.01).unwrap();
        assert!((lp - grid).abs() <= 0.02, "{lp} vs {grid}");
        // A's 5/3 must all cross C->D.
        assert!(lp >= 5.0 / 3.0 - 1e-9);
    }

    #[test]
    fn no_failure_matches_plain_evaluation() {
        let inc = toy_inc();
        let topo = toy_topology();
        let trace = toy_bimodal_trace(ToyBimodalParams {
            seed: 3,
            epochs: 60,
        })
        .unwrap();
        let model =
            DoteModel::new(&inc, 3, &[8], ObjectiveKind::MinMlu, trace.max_demand(), 0).unwrap();
        let predictor = linreg_fit(&trace.slice(0, 40), 3).unwrap();
        let test = trace.slice(40, 60);
        let scenarios = [
            FailureScenario::none(),
            FailureScenario::from_edges([edge(TOY_C, TOY_D)]),
        ];
        let rows = eval_under_failures(
            &model,
            &predictor,
            &test,
            &topo,
            &inc,
            &scenarios,
            &OracleOptions::default(),
        )
        .unwrap();
        let plain = crate::engine::evaluate(&model, &test, &inc).unwrap();
        assert_eq!(rows.len(), 2 * plain.len());
        for (row, v) in rows.iter().zip(&plain) {
            assert_eq!(row.dote, *v);
        }
        for row in &rows {
            for v in [row.dote, row.prediction, row.fault_aware_prediction] {
                assert!(crate::harness::normalized_ratio(v, row.fault_aware_oracle) >= 1.0 - 1e-9);
            }
        }
    }
}
