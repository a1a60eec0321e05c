//! The three TE objectives and their closed-form (sub/super)gradients.
//!
//! All decision vectors are flat, indexed by tunnel in the order fixed by
//! [`IncidenceMatrices`]. For MLU the decision is a vector of positive raw
//! weights normalized per pair into splitting ratios; for the flow objectives
//! it is a vector of nonnegative raw caps that [`normalize_caps`] scales into a
//! capacity-feasible [`CappedConfig`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::net_model::{DemandMatrix, IncidenceMatrices};
use crate::{Error, Result};

/// Tolerance used when checking simplex membership and capacity feasibility.
pub const FEASIBILITY_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum ObjectiveKind {
    MinMlu,
    MaxMultiCommodityFlow,
    /// Carries the smallest admissible positive demand.
    MaxConcurrentFlow(f64),
}

impl ObjectiveKind {
    pub fn is_flow(self) -> bool {
        !matches!(self, ObjectiveKind::MinMlu)
    }

    /// True when larger objective values are better.
    pub fn maximizes(self) -> bool {
        self.is_flow()
    }

    /// Concurrent flow with the default threshold: 1e-6 times the mean
    /// off-diagonal demand of `dms`.
    pub fn concurrent_for<'a>(dms: impl IntoIterator<Item = &'a DemandMatrix>) -> Self {
        let (mut sum, mut count) = (0.0, 0usize);
        for dm in dms {
            sum += dm.offdiag().sum::<f64>();
            count += dm.offdiag().count();
        }
        let mean = if count == 0 { 0.0 } else { sum / count as f64 };
        let eps = if mean > 0.0 {
            1e-6 * mean
        } else {
            f64::MIN_POSITIVE
        };
        ObjectiveKind::MaxConcurrentFlow(eps)
    }
}

impl fmt::Display for ObjectiveKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ObjectiveKind::MinMlu => f.write_str("mlu"),
            ObjectiveKind::MaxMultiCommodityFlow => f.write_str("mcf"),
            ObjectiveKind::MaxConcurrentFlow(eps) => write!(f, "conc:{eps:e}"),
        }
    }
}

impl FromStr for ObjectiveKind {
    type Err = Error;

    /// Accepts `mlu`, `mcf`, `conc` (threshold left at `f64::MIN_POSITIVE`,
    /// to be replaced by the caller) or `conc:<epsilon>`.
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlu" => Ok(ObjectiveKind::MinMlu),
            "mcf" => Ok(ObjectiveKind::MaxMultiCommodityFlow),
            "conc" => Ok(ObjectiveKind::MaxConcurrentFlow(f64::MIN_POSITIVE)),
            _ => {
                let eps = s
                    .strip_prefix("conc:")
                    .and_then(|e| e.parse::<f64>().ok())
                    .ok_or_else(|| Error::parse("objective", format!("unknown objective {s:?}")))?;
                if !(eps > 0.0) || !eps.is_finite() {
                    return Err(Error::Config(format!(
                        "concurrent-flow threshold must be positive, got {eps}"
                    )));
                }
                Ok(ObjectiveKind::MaxConcurrentFlow(eps))
            }
        }
    }
}

impl TryFrom<String> for ObjectiveKind {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<ObjectiveKind> for String {
    fn from(k: ObjectiveKind) -> String {
        k.to_string()
    }
}

/// Per-tunnel splitting ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitConfig {
    pub splits: Vec<f64>,
}

impl SplitConfig {
    /// Equal split across each pair's tunnels.
    pub fn uniform(inc: &IncidenceMatrices) -> Self {
        let mut splits = vec![0.0; inc.tunnel_count()];
        for i in 0..inc.pair_count() {
            let r = inc.pair_tunnels(i);
            let share = 1.0 / r.len() as f64;
            splits[r].iter_mut().for_each(|x| *x = share);
        }
        Self { splits }
    }

    /// Whether every pair with at least one tunnel sums to 1 with nonnegative
    /// shares.
    pub fn on_simplex(&self, inc: &IncidenceMatrices, tol: f64) -> bool {
        (0..inc.pair_count()).all(|i| {
            let r = inc.pair_tunnels(i);
            r.is_empty() || {
                let s = &self.splits[r];
                s.iter().all(|x| *x >= -tol) && (s.iter().sum::<f64>() - 1.0).abs() <= tol
            }
        })
    }
}

/// Per-tunnel caps and splits produced by cap normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct CappedConfig {
    pub caps: Vec<f64>,
    pub splits: Vec<f64>,
    /// Normalization constant that produced `caps`; at least 1.
    pub gamma: f64,
}

impl CappedConfig {
    /// Largest relative overshoot `max_e (sum_{p on e} caps_p - c_e)`, or 0 if
    /// every edge is within capacity.
    pub fn capacity_violation(&self, inc: &IncidenceMatrices) -> f64 {
        cap_loads(inc, &self.caps)
            .iter()
            .zip(inc.capacities())
            .map(|(l, c)| l - c)
            .fold(0.0, f64::max)
    }

    pub fn is_feasible(&self, inc: &IncidenceMatrices) -> bool {
        self.capacity_violation(inc) <= FEASIBILITY_TOL
    }
}

/// A TE decision for either family of objectives.
#[derive(Debug, Clone, PartialEq)]
pub enum TeConfig {
    Split(SplitConfig),
    Capped(CappedConfig),
}

impl TeConfig {
    pub fn splits(&self) -> &[f64] {
        match self {
            TeConfig::Split(s) => &s.splits,
            TeConfig::Capped(c) => &c.splits,
        }
    }
}

/// Normalizes raw weights per pair; a pair with zero mass gets an equal split.
pub fn normalize_splits(inc: &IncidenceMatrices, raw: &[f64]) -> SplitConfig {
    let mut splits = vec![0.0; raw.len()];
    for i in 0..inc.pair_count() {
        let r = inc.pair_tunnels(i);
        let sum: f64 = raw[r.clone()].iter().sum();
        let len = r.len() as f64;
        for j in r {
            splits[j] = if sum > 0.0 { raw[j] / sum } else { 1.0 / len };
        }
    }
    SplitConfig { splits }
}

fn check_len(inc: &IncidenceMatrices, v: &[f64], what: &str) -> Result<()> {
    if v.len() != inc.tunnel_count() {
        return Err(Error::Dimension(format!(
            "{what} has {} entries, expected {} tunnels",
            v.len(),
            inc.tunnel_count()
        )));
    }
    Ok(())
}

fn check_node_count(inc: &IncidenceMatrices, dm: &DemandMatrix) -> Result<()> {
    if dm.node_count() != inc.node_count() {
        return Err(Error::Dimension(format!(
            "demand matrix has {} nodes, topology has {}",
            dm.node_count(),
            inc.node_count()
        )));
    }
    Ok(())
}

/// Errors if some pair with positive demand has no tunnel row or no mass.
fn check_routable(inc: &IncidenceMatrices, weights: &[f64], dm: &DemandMatrix) -> Result<()> {
    for (s, t, _) in dm.positive_pairs() {
        let ok = inc
            .pair_index(s, t)
            .is_some_and(|i| weights[inc.pair_tunnels(i)].iter().sum::<f64>() > 0.0);
        if !ok {
            return Err(Error::Unroutable { src: s, dst: t });
        }
    }
    Ok(())
}

/// Traffic carried by each edge under the given splits.
pub fn edge_loads(inc: &IncidenceMatrices, splits: &[f64], dm: &DemandMatrix) -> Vec<f64> {
    let demands = inc.pair_demands(dm);
    let mut loads = vec![0.0; inc.edge_count()];
    for (j, x) in splits.iter().enumerate() {
        let d = demands[inc.tunnel_pair(j)];
        if d == 0.0 {
            continue;
        }
        for &e in inc.tunnel_edges(j) {
            loads[e] += d * x;
        }
    }
    loads
}

/// Per-edge utilization (load over capacity).
pub fn edge_utilization(inc: &IncidenceMatrices, splits: &[f64], dm: &DemandMatrix) -> Vec<f64> {
    let mut u = edge_loads(inc, splits, dm);
    for (u, c) in u.iter_mut().zip(inc.capacities()) {
        *u /= c;
    }
    u
}

/// Index and value of the first maximum; `None` for an empty slice.
fn argmax(v: &[f64]) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        if best.is_none_or(|(_, b)| x > b) {
            best = Some((i, x));
        }
    }
    best
}

/// Maximum link utilization of a split configuration.
pub fn mlu_of_splits(inc: &IncidenceMatrices, splits: &[f64], dm: &DemandMatrix) -> Result<f64> {
    check_len(inc, splits, "split vector")?;
    check_node_count(inc, dm)?;
    check_routable(inc, splits, dm)?;
    Ok(argmax(&edge_utilization(inc, splits, dm)).map_or(0.0, |(_, u)| u.max(0.0)))
}

/// MLU of the splits obtained by normalizing `raw` per pair.
pub fn mlu(inc: &IncidenceMatrices, raw: &[f64], dm: &DemandMatrix) -> Result<f64> {
    check_len(inc, raw, "raw weight vector")?;
    check_node_count(inc, dm)?;
    check_routable(inc, raw, dm)?;
    let splits = normalize_splits(inc, raw);
    mlu_of_splits(inc, &splits.splits, dm)
}

/// Subgradient of [`mlu_of_splits`] with respect to the splits themselves,
/// taken through the lowest-index most utilized edge.
pub fn mlu_split_subgradient(
    inc: &IncidenceMatrices,
    splits: &[f64],
    dm: &DemandMatrix,
) -> Result<Vec<f64>> {
    check_len(inc, splits, "split vector")?;
    check_node_count(inc, dm)?;
    let mut g = vec![0.0; inc.tunnel_count()];
    if dm.total() == 0.0 {
        return Ok(g);
    }
    let Some((e, _)) = argmax(&edge_utilization(inc, splits, dm)) else {
        return Ok(g);
    };
    let demands = inc.pair_demands(dm);
    let c = inc.capacity(e);
    for &j in inc.edge_tunnels(e) {
        g[j] = demands[inc.tunnel_pair(j)] / c;
    }
    Ok(g)
}

/// Subgradient of [`mlu`] with respect to the raw weights, differentiating the
/// lowest-index most utilized edge through the per-pair normalization.
pub fn mlu_subgradient(
    inc: &IncidenceMatrices,
    raw: &[f64],
    dm: &DemandMatrix,
) -> Result<Vec<f64>> {
    check_len(inc, raw, "raw weight vector")?;
    check_node_count(inc, dm)?;
    check_routable(inc, raw, dm)?;
    let mut g = vec![0.0; inc.tunnel_count()];
    if dm.total() == 0.0 {
        return Ok(g);
    }
    let splits = normalize_splits(inc, raw).splits;
    let Some((e, _)) = argmax(&edge_utilization(inc, &splits, dm)) else {
        return Ok(g);
    };
    let c = inc.capacity(e);
    let demands = inc.pair_demands(dm);
    let mut on_edge = vec![false; inc.tunnel_count()];
    for &j in inc.edge_tunnels(e) {
        on_edge[j] = true;
    }
    for i in 0..inc.pair_count() {
        let r = inc.pair_tunnels(i);
        let d = demands[i];
        if d == 0.0 || !r.clone().any(|j| on_edge[j]) {
            continue;
        }
        let sum: f64 = raw[r.clone()].iter().sum();
        let share_on_edge: f64 = r.clone().filter(|&j| on_edge[j]).map(|j| splits[j]).sum();
        for j in r {
            let ind = if on_edge[j] { 1.0 } else { 0.0 };
            g[j] = d / (c * sum) * (ind - share_on_edge);
        }
    }
    Ok(g)
}

/// Sum of caps crossing each edge.
pub fn cap_loads(inc: &IncidenceMatrices, caps: &[f64]) -> Vec<f64> {
    let mut loads = vec![0.0; inc.edge_count()];
    for (j, w) in caps.iter().enumerate() {
        for &e in inc.tunnel_edges(j) {
            loads[e] += w;
        }
    }
    loads
}

/// The normalization constant `max(max_e load_e / c_e, 1)` together with the
/// edge that attains the maximum when it exceeds 1.
fn gamma_with_edge(inc: &IncidenceMatrices, raw_w: &[f64]) -> (f64, Option<usize>) {
    let mut rel = cap_loads(inc, raw_w);
    for (l, c) in rel.iter_mut().zip(inc.capacities()) {
        *l /= c;
    }
    match argmax(&rel) {
        Some((e, g)) if g > 1.0 => (g, Some(e)),
        _ => (1.0, None),
    }
}

/// `gamma(w) = max(max_e sum_{p on e} w_p / c_e, 1)`.
pub fn cap_gamma(inc: &IncidenceMatrices, raw_w: &[f64]) -> f64 {
    gamma_with_edge(inc, raw_w).0
}

/// Scales raw caps so that no edge capacity is exceeded and derives
/// proportional splits.
pub fn normalize_caps(inc: &IncidenceMatrices, raw_w: &[f64]) -> CappedConfig {
    let gamma = cap_gamma(inc, raw_w);
    let caps: Vec<f64> = raw_w.iter().map(|w| w / gamma).collect();
    let splits = normalize_splits(inc, &caps).splits;
    let config = CappedConfig {
        caps,
        splits,
        gamma,
    };
    debug_assert!(
        config.is_feasible(inc),
        "normalized caps exceed capacity by {}",
        config.capacity_violation(inc)
    );
    config
}

/// Flow delivered to each pair: `sum_p min(x_p * D, caps_p)`.
pub fn pair_flows(inc: &IncidenceMatrices, config: &CappedConfig, dm: &DemandMatrix) -> Vec<f64> {
    let demands = inc.pair_demands(dm);
    (0..inc.pair_count())
        .map(|i| {
            let d = demands[i];
            inc.pair_tunnels(i)
                .map(|j| (config.splits[j] * d).min(config.caps[j]))
                .sum()
        })
        .collect()
}

/// Total delivered flow.
pub fn max_mcf(inc: &IncidenceMatrices, config: &CappedConfig, dm: &DemandMatrix) -> Result<f64> {
    check_len(inc, &config.caps, "cap vector")?;
    check_node_count(inc, dm)?;
    Ok(pair_flows(inc, config, dm).iter().sum())
}

fn check_epsilon(dm: &DemandMatrix, epsilon: f64) -> Result<()> {
    if let Some((s, t, v)) = dm.positive_pairs().find(|&(_, _, v)| v < epsilon) {
        return Err(Error::DemandBelowEpsilon {
            src: s,
            dst: t,
            value: v,
            epsilon,
        });
    }
    Ok(())
}

/// Smallest satisfied fraction over pairs with positive demand, capped at 1.
/// A demanded pair absent from the incidence structure receives nothing.
pub fn max_concurrent(
    inc: &IncidenceMatrices,
    config: &CappedConfig,
    dm: &DemandMatrix,
    epsilon: f64,
) -> Result<f64> {
    check_len(inc, &config.caps, "cap vector")?;
    check_node_count(inc, dm)?;
    check_epsilon(dm, epsilon)?;
    let flows = pair_flows(inc, config, dm);
    let mut alpha: f64 = 1.0;
    for (s, t, d) in dm.positive_pairs() {
        let f = inc.pair_index(s, t).map_or(0.0, |i| flows[i]);
        alpha = alpha.min(f / d);
    }
    Ok(alpha)
}

/// Value of a flow objective on a capped configuration.
pub fn flow_objective(
    inc: &IncidenceMatrices,
    config: &CappedConfig,
    dm: &DemandMatrix,
    kind: ObjectiveKind,
) -> Result<f64> {
    match kind {
        ObjectiveKind::MaxMultiCommodityFlow => max_mcf(inc, config, dm),
        ObjectiveKind::MaxConcurrentFlow(eps) => max_concurrent(inc, config, dm, eps),
        ObjectiveKind::MinMlu => Err(Error::Config("MLU is not a flow objective".into())),
    }
}

/// Value of any objective on a configuration of the matching family. A split
/// configuration scored under a flow objective is an error and vice versa,
/// except that capped configurations may be scored by MLU through their splits.
pub fn objective_value(
    inc: &IncidenceMatrices,
    config: &TeConfig,
    dm: &DemandMatrix,
    kind: ObjectiveKind,
) -> Result<f64> {
    match (kind, config) {
        (ObjectiveKind::MinMlu, c) => mlu_of_splits(inc, c.splits(), dm),
        (_, TeConfig::Capped(c)) => flow_objective(inc, c, dm, kind),
        (_, TeConfig::Split(_)) => Err(Error::Config(
            "flow objectives need a capped configuration".into(),
        )),
    }
}

/// The composed objective `raw caps -> normalize_caps -> flow objective`.
pub fn flow_value(
    inc: &IncidenceMatrices,
    raw_w: &[f64],
    dm: &DemandMatrix,
    kind: ObjectiveKind,
) -> Result<f64> {
    check_len(inc, raw_w, "raw cap vector")?;
    flow_objective(inc, &normalize_caps(inc, raw_w), dm, kind)
}

/// Gradient of [`flow_value`] with respect to the raw caps, differentiating
/// the active branch of every min/max (lowest index on ties; the cap branch
/// when a tunnel's demand share equals its cap).
pub fn flow_gradient(
    inc: &IncidenceMatrices,
    raw_w: &[f64],
    dm: &DemandMatrix,
    kind: ObjectiveKind,
) -> Result<Vec<f64>> {
    check_len(inc, raw_w, "raw cap vector")?;
    check_node_count(inc, dm)?;
    let mut g = vec![0.0; inc.tunnel_count()];
    let (gamma, gamma_edge) = gamma_with_edge(inc, raw_w);
    let demands = inc.pair_demands(dm);
    let pair_sum = |i: usize| raw_w[inc.pair_tunnels(i)].iter().sum::<f64>();

    // Accumulates d/dw of S_i / gamma scaled by `weight`.
    let add_scaled_mass = |g: &mut Vec<f64>, i: usize, weight: f64| {
        let s = pair_sum(i);
        for j in inc.pair_tunnels(i) {
            g[j] += weight / gamma;
        }
        if let Some(e) = gamma_edge {
            let c = inc.capacity(e);
            for &j in inc.edge_tunnels(e) {
                g[j] -= weight * s / (gamma * gamma * c);
            }
        }
    };

    match kind {
        ObjectiveKind::MinMlu => {
            return Err(Error::Config("MLU is not a flow objective".into()));
        }
        ObjectiveKind::MaxMultiCommodityFlow => {
            for i in 0..inc.pair_count() {
                let d = demands[i];
                if d > 0.0 && pair_sum(i) / gamma <= d {
                    add_scaled_mass(&mut g, i, 1.0);
                }
            }
        }
        ObjectiveKind::MaxConcurrentFlow(eps) => {
            check_epsilon(dm, eps)?;
            if dm
                .positive_pairs()
                .any(|(s, t, _)| inc.pair_index(s, t).is_none())
            {
                // Some demand can never be served, so the objective is pinned at 0.
                return Ok(g);
            }
            let mut best: Option<(usize, f64, f64)> = None;
            for i in 0..inc.pair_count() {
                let d = demands[i];
                if d == 0.0 {
                    continue;
                }
                let ratio = pair_sum(i) / (gamma * d);
                let value = ratio.min(1.0);
                if best.is_none_or(|(_, v, _)| value < v) {
                    best = Some((i, value, ratio));
                }
            }
            if let Some((i, _, ratio)) = best {
                if ratio <= 1.0 {
                    add_scaled_mass(&mut g, i, 1.0 / demands[i]);
                }
            }
        }
    }
    Ok(g)
}

/// [`flow_gradient`] scaled to unit Euclidean length (zero stays zero).
pub fn flow_supergradient(
    inc: &IncidenceMatrices,
    raw_w: &[f64],
    dm: &DemandMatrix,
    kind: ObjectiveKind,
) -> Result<Vec<f64>> {
    let mut g = flow_gradient(inc, raw_w, dm, kind)?;
    normalize_in_place(&mut g);
    Ok(g)
}

/// Scales `v` to unit length unless it is zero.
pub fn normalize_in_place(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}
