//! Seeded random instances shared by the integration suites.
#![allow(dead_code)]

use dote_core::net_model::{
    yen_k_shortest, DemandMatrix, Edge, IncidenceMatrices, Topology, TunnelSet,
};
use dote_core::neural::{backward, forward_batch, init_params, Activation, MlpParameters};
use dote_core::objectives::{
    cap_gamma, cap_loads, edge_utilization, normalize_splits, ObjectiveKind,
};
use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Directed graph where each ordered pair is an edge with probability
/// `density`; capacities uniform in `[0.5, 3]`.
pub fn random_topology(rng: &mut ChaCha8Rng, nodes: usize, density: f64) -> Topology {
    let mut edges = Vec::new();
    for s in 0..nodes {
        for t in 0..nodes {
            if s != t && rng.random_bool(density) {
                edges.push(Edge {
                    src: s,
                    dst: t,
                    capacity: rng.random_range(0.5..3.0),
                });
            }
        }
    }
    Topology::new(nodes, edges).expect("valid random topology")
}

/// Yen tunnels for every connected pair; pairs without a path are left out.
pub fn routable_tunnels(topology: &Topology, k: usize) -> TunnelSet {
    let all = yen_k_shortest(topology, k);
    let mut set = TunnelSet::new();
    for (&(s, t), paths) in all.iter() {
        if !paths.is_empty() {
            set.insert(s, t, paths.clone());
        }
    }
    set
}

/// A random instance with at least one routable pair.
pub fn random_instance(
    rng: &mut ChaCha8Rng,
    nodes: usize,
    k: usize,
) -> (Topology, IncidenceMatrices) {
    loop {
        let topo = random_topology(rng, nodes, 0.45);
        let set = routable_tunnels(&topo, k);
        if set.pair_count() > 0 {
            let inc = IncidenceMatrices::build(&topo, &set).expect("incidence");
            return (topo, inc);
        }
    }
}

/// Demand on a random subset of the instance's pairs (at least one), each in
/// `[0.1, d_max]`.
pub fn random_dm(rng: &mut ChaCha8Rng, inc: &IncidenceMatrices, d_max: f64) -> DemandMatrix {
    let mut entries: Vec<_> = inc
        .pairs()
        .iter()
        .filter_map(|&(s, t)| {
            let v = rng.random_range(0.1..d_max);
            rng.random_bool(0.6).then_some((s, t, v))
        })
        .collect();
    if entries.is_empty() {
        let (s, t) = inc.pairs()[rng.random_range(0..inc.pair_count())];
        entries.push((s, t, rng.random_range(0.1..d_max)));
    }
    DemandMatrix::from_entries(inc.node_count(), &entries).expect("valid demand")
}

pub fn random_vec(rng: &mut ChaCha8Rng, len: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..len).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn mix(lambda: f64, a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter()
        .zip(b)
        .map(|(x, y)| lambda * x + (1.0 - lambda) * y)
        .collect()
}

/// Decision dimension of the demanded `pairs` as the grid oracle counts it.
pub fn grid_dimension(inc: &IncidenceMatrices, pairs: &[usize], kind: ObjectiveKind) -> usize {
    pairs
        .iter()
        .map(|&i| inc.pair_tunnels(i).len() - usize::from(!kind.is_flow()))
        .sum()
}

/// Random instance whose demanded pairs give a grid dimension in `lo..=hi`.
pub fn grid_instance(
    r: &mut ChaCha8Rng,
    kind: ObjectiveKind,
    lo: usize,
    hi: usize,
) -> (IncidenceMatrices, DemandMatrix) {
    loop {
        let (_, inc) = random_instance(r, 5, 3);
        let mut order: Vec<usize> = (0..inc.pair_count()).collect();
        order.shuffle(r);
        let mut chosen = Vec::new();
        for i in order {
            chosen.push(i);
            if grid_dimension(&inc, &chosen, kind) > hi {
                chosen.pop();
            }
        }
        if grid_dimension(&inc, &chosen, kind) < lo {
            continue;
        }
        let entries: Vec<_> = chosen
            .iter()
            .map(|&i| {
                let (s, t) = inc.pairs()[i];
                (s, t, r.random_range(0.2..1.5))
            })
            .collect();
        let dm = DemandMatrix::from_entries(inc.node_count(), &entries).unwrap();
        return (inc, dm);
    }
}

pub const FD_STEP: f64 = 1e-6;
/// Points closer than this to a kink are skipped by gradient checks.
pub const TIE: f64 = 1e-6;

pub fn central_difference(x: &[f64], f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut y = x.to_vec();
    (0..x.len())
        .map(|j| {
            y[j] = x[j] + FD_STEP;
            let up = f(&y);
            y[j] = x[j] - FD_STEP;
            let down = f(&y);
            y[j] = x[j];
            (up - down) / (2.0 * FD_STEP)
        })
        .collect()
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

/// Largest componentwise gap relative to the larger vector's scale (at least
/// `floor`).
pub fn relative_error(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
    let err = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    err / max_abs(analytic).max(max_abs(numeric)).max(floor)
}

/// Gap between the two largest entries.
pub fn top_gap(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut v: Vec<f64> = values.into_iter().collect();
    v.sort_by(|a, b| b.total_cmp(a));
    if v.len() < 2 {
        f64::INFINITY
    } else {
        v[0] - v[1]
    }
}

/// Random positive raw weights and demand, or `None` at an MLU tie.
pub fn mlu_point(r: &mut ChaCha8Rng) -> Option<(IncidenceMatrices, Vec<f64>, DemandMatrix)> {
    let (_, inc) = random_instance(r, 6, 3);
    let dm = random_dm(r, &inc, 5.0);
    let raw = random_vec(r, inc.tunnel_count(), 0.2, 2.0);
    let splits = normalize_splits(&inc, &raw).splits;
    (top_gap(edge_utilization(&inc, &splits, &dm)) >= TIE).then_some((inc, raw, dm))
}

/// True when `raw` sits within `TIE` of a kink of the composed flow
/// objective: the gamma max, a per-pair demand/cap switch, or (for
/// concurrent flow) the pair minimum.
pub fn near_flow_kink(
    inc: &IncidenceMatrices,
    raw: &[f64],
    dm: &DemandMatrix,
    kind: ObjectiveKind,
) -> bool {
    let rel: Vec<f64> = cap_loads(inc, raw)
        .iter()
        .zip(inc.capacities())
        .map(|(l, c)| l / c)
        .collect();
    let gamma = cap_gamma(inc, raw);
    let top = rel.iter().cloned().fold(0.0, f64::max);
    if (top - 1.0).abs() < TIE || (top > 1.0 && top_gap(rel.iter().cloned()) < TIE) {
        return true;
    }
    let demands = inc.pair_demands(dm);
    let mut ratios = Vec::new();
    for (i, &d) in demands.iter().enumerate() {
        if d == 0.0 {
            continue;
        }
        let mass: f64 = raw[inc.pair_tunnels(i)].iter().sum::<f64>() / gamma;
        if (mass - d).abs() < TIE * d.max(1.0) {
            return true;
        }
        ratios.push(-(mass / d).min(1.0));
    }
    matches!(kind, ObjectiveKind::MaxConcurrentFlow(_)) && top_gap(ratios) < TIE
}

/// Random raw caps and demand, or `None` near a kink.
pub fn flow_point(
    r: &mut ChaCha8Rng,
    kind: ObjectiveKind,
) -> Option<(IncidenceMatrices, Vec<f64>, DemandMatrix)> {
    let (_, inc) = random_instance(r, 6, 3);
    let dm = random_dm(r, &inc, 5.0);
    let raw = random_vec(r, inc.tunnel_count(), 0.01, 1.5 * inc.c_max());
    (!near_flow_kink(&inc, &raw, &dm, kind)).then_some((inc, raw, dm))
}

/// A small network with ReLU hidden layers, a sigmoid or identity output and
/// parameters uniform in `[-1, 1]`.
pub fn random_net(r: &mut ChaCha8Rng) -> MlpParameters {
    let depth = r.random_range(1..=3);
    let mut dims = vec![r.random_range(1..=5)];
    dims.extend((0..depth).map(|_| r.random_range(2..=6)));
    dims.push(r.random_range(1..=4));
    let mut acts = vec![Activation::Relu; dims.len() - 2];
    acts.push(if r.random_bool(0.5) {
        Activation::Sigmoid
    } else {
        Activation::Identity
    });
    let mut params = init_params(r.random(), &dims, &acts).unwrap();
    let flat = random_vec(r, params.parameter_count(), -1.0, 1.0);
    params.set_flat(&flat).unwrap();
    params
}

/// Worst relative error between backprop and finite differences of
/// `sum(c * net(x))` over a random batch, or `None` if a ReLU input sits
/// within 1e-3 of its kink.
pub fn backprop_error(r: &mut ChaCha8Rng, params: &MlpParameters) -> Option<f64> {
    let batch = r.random_range(1..=4);
    let x = Array2::from_shape_fn((batch, params.input_dim()), |_| r.random_range(-1.0..1.0));
    let c = Array2::from_shape_fn((batch, params.output_dim()), |_| r.random_range(-1.0..1.0));
    let (_, cache) = forward_batch(params, x.view()).unwrap();
    let kink = (0..params.layers.len())
        .filter(|&l| params.activations[l] == Activation::Relu)
        .any(|l| cache.pre_activations(l).iter().any(|z| z.abs() < 1e-3));
    if kink {
        return None;
    }
    let grads = backward(params, &cache, c.view()).unwrap();
    let analytic = MlpParameters {
        layers: grads,
        activations: params.activations.clone(),
    }
    .to_flat();
    let loss = |flat: &[f64]| {
        let mut p = params.clone();
        p.set_flat(flat).unwrap();
        (forward_batch(&p, x.view()).unwrap().0 * &c).sum()
    };
    let numeric = central_difference(&params.to_flat(), loss);
    Some(
        analytic
            .iter()
            .zip(&numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(1e-3))
            .fold(0.0, f64::max),
    )
}
