//! Synthetic demand generators and topology fixtures.

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::net_model::{DemandMatrix, DemandTrace, Edge, Topology};
use crate::{Error, Result};

pub const TOY_A: usize = 0;
pub const TOY_B: usize = 1;
pub const TOY_C: usize = 2;
pub const TOY_D: usize = 3;

/// Four nodes A, B, C, D (ids 0..4) with unit-capacity links
/// A→D, B→D, A→C, B→C, C→D, in that order.
pub fn toy_topology() -> Topology {
    let edges = [
        (TOY_A, TOY_D),
        (TOY_B, TOY_D),
        (TOY_A, TOY_C),
        (TOY_B, TOY_C),
        (TOY_C, TOY_D),
    ]
    .into_iter()
    .map(|(src, dst)| Edge {
        src,
        dst,
        capacity: 1.0,
    })
    .collect();
    Topology::new(4, edges).expect("toy topology is valid")
}

/// The two equally likely demand realizations: A sends 5/3 and B sends 5/6 to
/// D, or the other way round.
pub fn toy_modes() -> [DemandMatrix; 2] {
    let hi = 5.0 / 3.0;
    let lo = 5.0 / 6.0;
    let mk = |a: f64, b: f64| {
        DemandMatrix::from_entries(4, &[(TOY_A, TOY_D, a), (TOY_B, TOY_D, b)])
            .expect("valid toy demand")
    };
    [mk(hi, lo), mk(lo, hi)]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ToyBimodalParams {
    pub seed: u64,
    pub epochs: usize,
}

/// I.i.d. draws from the two toy modes with probability 1/2 each.
pub fn toy_bimodal_trace(params: ToyBimodalParams) -> Result<DemandTrace> {
    if params.epochs == 0 {
        return Err(Error::Config("toy trace needs at least one epoch".into()));
    }
    let modes = toy_modes();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let matrices = (0..params.epochs)
        .map(|_| modes[usize::from(rng.random_bool(0.5))].clone())
        .collect();
    DemandTrace::new(matrices)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GravityParams {
    /// Per-node masses; drawn from Exp(1) when absent.
    pub masses: Option<Vec<f64>>,
    /// Sum of the base matrix.
    pub total_volume: f64,
    /// Shape of the per-entry, per-epoch lognormal jitter (median 1).
    pub sigma: f64,
}

/// `D_ij = T * m_i * m_j / sum_{k != l} m_k * m_l` off the diagonal.
pub fn gravity_base(masses: &[f64], total_volume: f64) -> Result<DemandMatrix> {
    let n = masses.len();
    let sum: f64 = masses.iter().sum();
    let sq: f64 = masses.iter().map(|m| m * m).sum();
    let norm = sum * sum - sq;
    if !(norm > 0.0) {
        return Err(Error::Config(
            "gravity model needs at least two positive masses".into(),
        ));
    }
    let base =
        DemandMatrix::zeros(n).map_offdiag(|i, j, _| total_volume * masses[i] * masses[j] / norm);
    DemandMatrix::new(n, base.values().to_vec())
}

pub fn gravity_trace(
    topology: &Topology,
    epochs: usize,
    params: &GravityParams,
    seed: u64,
) -> Result<DemandTrace> {
    let n = topology.node_count();
    if epochs == 0 {
        return Err(Error::Config(
            "gravity trace needs at least one epoch".into(),
        ));
    }
    if !(params.total_volume > 0.0) || !(params.sigma >= 0.0) {
        return Err(Error::Config(
            "gravity volume must be positive and jitter nonnegative".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let masses = match &params.masses {
        Some(m) => {
            if m.len() != n || m.iter().any(|x| !(*x > 0.0)) {
                return Err(Error::Config(format!(
                    "need {n} positive masses, got {m:?}"
                )));
            }
            m.clone()
        }
        None => (0..n).map(|_| Exp1.sample(&mut rng)).collect(),
    };
    let base = gravity_base(&masses, params.total_volume)?;
    let matrices = (0..epochs)
        .map(|_| {
            if params.sigma == 0.0 {
                return base.clone();
            }
            base.map_offdiag(|_, _, v| {
                let z: f64 = StandardNormal.sample(&mut rng);
                v * (params.sigma * z).exp()
            })
        })
        .collect();
    DemandTrace::new(matrices)
}

/// Scales every entry independently by a factor drawn from `U[1-alpha, 1+alpha]`.
pub fn perturb_trace(trace: &DemandTrace, alpha: f64, seed: u64) -> Result<DemandTrace> {
    if !(0.0..1.0).contains(&alpha) {
        return Err(Error::Config(format!(
            "perturbation level {alpha} outside [0, 1)"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let matrices = trace
        .matrices()
        .iter()
        .map(|m| {
            m.map_offdiag(|_, _, v| {
                let f = if alpha == 0.0 {
                    1.0
                } else {
                    rng.random_range(1.0 - alpha..=1.0 + alpha)
                };
                v * f
            })
        })
        .collect();
    let mut out = DemandTrace::new(matrices)?;
    out.epoch_length = trace.epoch_length;
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RingChordParams {
    pub nodes: usize,
    /// Extra undirected links between non-adjacent ring nodes.
    pub chords: usize,
    pub min_capacity: f64,
    pub max_capacity: f64,
}

/// Bidirectional ring plus random chords; capacities drawn uniformly from
/// `[min_capacity, max_capacity]`. Always strongly connected.
pub fn ring_chord_topology(params: RingChordParams, seed: u64) -> Result<Topology> {
    let n = params.nodes;
    if n < 3 {
        return Err(Error::Config("ring topology needs at least 3 nodes".into()));
    }
    if !(params.min_capacity > 0.0) || params.max_capacity < params.min_capacity {
        return Err(Error::Config("invalid capacity range".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cap = |rng: &mut ChaCha8Rng| {
        if params.max_capacity == params.min_capacity {
            params.min_capacity
        } else {
            rng.random_range(params.min_capacity..=params.max_capacity)
        }
    };
    let mut links: Vec<(usize, usize, f64)> =
        (0..n).map(|i| (i, (i + 1) % n, cap(&mut rng))).collect();
    let candidates: Vec<(usize, usize)> = (0..n)
        .flat_map(|a| (a + 2..n).map(move |b| (a, b)))
        .filter(|&(a, b)| !(a == 0 && b == n - 1))
        .collect();
    if params.chords > candidates.len() {
        return Err(Error::Config(format!(
            "at most {} chords fit on {n} nodes",
            candidates.len()
        )));
    }
    let mut picked = sample(&mut rng, candidates.len(), params.chords).into_vec();
    picked.sort_unstable();
    for i in picked {
        let (a, b) = candidates[i];
        links.push((a, b, cap(&mut rng)));
    }
    Topology::from_undirected(n, &links)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toy_shape() {
        let topo = toy_topology();
        assert_eq!(topo.node_count(), 4);
        assert_eq!(topo.edge_count(), 5);
        assert!(topo.edges().iter().all(|e| e.capacity == 1.0));
    }

    #[test]
    fn toy_trace_support_and_total() {
        let trace = toy_bimodal_trace(ToyBimodalParams {
            seed: 3,
            epochs: 10_000,
        })
        .unwrap();
        let modes = toy_modes();
        let mut first = 0usize;
        for m in trace.matrices() {
            assert_eq!(m.total(), 5.0 / 3.0 + 5.0 / 6.0);
            if *m == modes[0] {
                first += 1;
            } else {
                assert_eq!(*m, modes[1]);
            }
        }
        let freq = first as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
        let again = toy_bimodal_trace(ToyBimodalParams {
            seed: 3,
            epochs: 10_000,
        })
        .unwrap();
        assert_eq!(trace, again);
    }

    #[test]
    fn gravity_equal_masses() {
        let topo = ring_chord_topology(
            RingChordParams {
                nodes: 5,
                chords: 0,
                min_capacity: 1.0,
                max_capacity: 1.0,
            },
            0,
        )
        .unwrap();
        let params = GravityParams {
            masses: Some(vec![1.0; 5]),
            total_volume: 40.0,
            sigma: 0.0,
        };
        let trace = gravity_trace(&topo, 3, &params, 1).unwrap();
        for m in trace.matrices() {
            assert!(m.offdiag().all(|v| (v - 2.0).abs() < 1e-12));
            assert!((m.total() - 40.0).abs() < 1e-9);
            assert_eq!(m, trace.get(0));
        }
        let doubled = gravity_trace(
            &topo,
            3,
            &GravityParams {
                total_volume: 80.0,
                ..params
            },
            1,
        )
        .unwrap();
        assert_eq!(doubled.get(0), &trace.get(0).scaled(2.0));
    }

    #[test]
    fn gravity_jitter_is_seeded() {
        let topo = toy_topology();
        let params = GravityParams {
            masses: None,
            total_volume: 10.0,
            sigma: 0.3,
        };
        let a = gravity_trace(&topo, 5, &params, 9).unwrap();
        let b = gravity_trace(&topo, 5, &params, 9).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.get(0), a.get(1));
    }

    #[test]
    fn perturbation_bounds_and_mean() {
        let topo = toy_topology();
        let base = gravity_trace(
            &topo,
            1,
            &GravityParams {
                masses: Some(vec![1.0; 4]),
                total_volume: 12.0,
                sigma: 0.0,
            },
            0,
        )
        .unwrap();
        let long = DemandTrace::new(vec![base.get(0).clone(); 83_334]).unwrap();
        let noisy = perturb_trace(&long, 0.35, 4).unwrap();
        let mut sum = 0.0;
        let mut count = 0usize;
        for m in noisy.matrices() {
            for v in m.offdiag() {
                assert!((0.65..=1.35).contains(&v), "{v}");
                sum += v;
                count += 1;
            }
        }
        assert!(count >= 1_000_000);
        assert!((sum / count as f64 - 1.0).abs() < 1e-3);
        assert_eq!(perturb_trace(&long, 0.0, 4).unwrap(), long);
    }

    #[test]
    fn ring_is_connected() {
        let topo = ring_chord_topology(
            RingChordParams {
                nodes: 12,
                chords: 6,
                min_capacity: 5.0,
                max_capacity: 10.0,
            },
            2,
        )
        .unwrap();
        assert_eq!(topo.edge_count(), 2 * (12 + 6));
        assert!(topo.reachable_from(0, &[]).iter().all(|r| *r));
    }
}
