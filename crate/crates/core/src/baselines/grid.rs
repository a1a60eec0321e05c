use crate::net_model::{DemandMatrix, IncidenceMatrices};
use crate::objectives::{flow_value, mlu_of_splits, ObjectiveKind};
use crate::{Error, Result};

/// Largest decision dimension the exhaustive grid accepts.
pub const GRID_DIMENSION_LIMIT: usize = 6;

/// Exhaustive search over a regular grid.
///
/// For MLU every demanded pair's simplex is sampled at multiples of
/// `resolution` (dimension: tunnels minus one per pair). For the flow
/// objectives raw caps range over `{0, r C_max, 2 r C_max, .., C_max}` per
/// tunnel of a demanded pair (dimension: those tunnels). Returns the best
/// objective value found.
pub fn grid_search_oracle(
    inc: &IncidenceMatrices,
    dm: &DemandMatrix,
    objective: ObjectiveKind,
    resolution: f64,
) -> Result<f64> {
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::Config(format!(
            "grid resolution {resolution} outside (0, 1]"
        )));
    }
    let steps = (1.0 / resolution).round() as usize;
    let demands = inc.pair_demands(dm);
    let pairs: Vec<usize> = (0..inc.pair_count())
        .filter(|&i| demands[i] > 0.0 && !inc.pair_tunnels(i).is_empty())
        .collect();
    if objective.is_flow() {
        let tunnels: Vec<usize> = pairs.iter().flat_map(|&i| inc.pair_tunnels(i)).collect();
        if tunnels.len() > GRID_DIMENSION_LIMIT {
            return Err(Error::GridTooLarge {
                dimension: tunnels.len(),
                limit: GRID_DIMENSION_LIMIT,
            });
        }
        let unit = inc.c_max() / steps as f64;
        let mut w = vec![0.0; inc.tunnel_count()];
        let mut counter = vec![0usize; tunnels.len()];
        let mut best = f64::NEG_INFINITY;
        loop {
            for (k, &j) in tunnels.iter().enumerate() {
                w[j] = counter[k] as f64 * unit;
            }
            best = best.max(flow_value(inc, &w, dm, objective)?);
            if !advance(&mut counter, steps) {
                return Ok(best);
            }
        }
    }

    let dimension: usize = pairs.iter().map(|&i| inc.pair_tunnels(i).len() - 1).sum();
    if dimension > GRID_DIMENSION_LIMIT {
        return Err(Error::GridTooLarge {
            dimension,
            limit: GRID_DIMENSION_LIMIT,
        });
    }
    // Positive-demand pairs without tunnels surface as errors here.
    let mut splits = crate::objectives::SplitConfig::uniform(inc).splits;
    let per_pair: Vec<Vec<Vec<usize>>> = pairs
        .iter()
        .map(|&i| compositions(steps, inc.pair_tunnels(i).len()))
        .collect();
    let mut choice = vec![0usize; pairs.len()];
    let mut best = f64::INFINITY;
    loop {
        for (k, &i) in pairs.iter().enumerate() {
            let comp = &per_pair[k][choice[k]];
            for (j, &c) in inc.pair_tunnels(i).zip(comp) {
                splits[j] = c as f64 / steps as f64;
            }
        }
        best = best.min(mlu_of_splits(inc, &splits, dm)?);
        // Mixed-radix increment over the per-pair composition lists.
        let mut k = 0;
        loop {
            if k == choice.len() {
                return Ok(best);
            }
            choice[k] += 1;
            if choice[k] < per_pair[k].len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
    }
}

/// Increments a base-`(max + 1)` counter; false once it wraps around.
fn advance(counter: &mut [usize], max: usize) -> bool {
    for c in counter.iter_mut() {
        if *c < max {
            *c += 1;
            return true;
        }
        *c = 0;
    }
    false
}

/// All vectors of `parts` nonnegative integers summing to `total`.
fn compositions(total: usize, parts: usize) -> Vec<Vec<usize>> {
    if parts == 1 {
        return vec![vec![total]];
    }
    (0..=total)
        .flat_map(|first| {
            compositions(total - first, parts - 1)
                .into_iter()
                .map(move |mut rest| {
                    rest.insert(0, first);
                    rest
                })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net_model::{Topology, TunnelSet};
    use crate::traffic::{toy_modes, toy_topology, TOY_A, TOY_B, TOY_C, TOY_D};

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

    #[test]
    fn composition_counts() {
        assert_eq!(compositions(4, 1), vec![vec![4]]);
        assert_eq!(compositions(4, 2).len(), 5);
        assert_eq!(compositions(100, 3).len(), 5151);
    }

    #[test]
    fn toy_grid_values() {
        let inc = toy_inc();
        let dm = &toy_modes()[0];
        let fine = grid_search_oracle(&inc, dm, ObjectiveKind::MinMlu, 0.01).unwrap();
        assert!((fine - 5.0 / 6.0).abs() <= 0.02, "{fine}");
        let coarse = grid_search_oracle(&inc, dm, ObjectiveKind::MinMlu, 0.5).unwrap();
        assert!(coarse >= fine);
        // Worst cell of a 0.5 grid moves each split by at most 0.25.
        assert!(
            coarse - fine <= 0.25 * 2.0 * (5.0 / 3.0),
            "{coarse} vs {fine}"
        );
        // Four cap dimensions: a 0.05 grid keeps this to 21^4 points.
        let mcf = grid_search_oracle(&inc, dm, ObjectiveKind::MaxMultiCommodityFlow, 0.05).unwrap();
        assert!((mcf - 2.5).abs() <= 0.02, "{mcf}");
    }

    #[test]
    fn single_tunnel_is_resolution_free() {
        let topo = Topology::from_undirected(2, &[(0, 1, 2.0)]).unwrap();
        let mut set = TunnelSet::new();
        set.insert(0, 1, vec![vec![0, 1]]);
        let inc = IncidenceMatrices::build(&topo, &set).unwrap();
        let dm = DemandMatrix::from_entries(2, &[(0, 1, 3.0)]).unwrap();
        for r in [0.5, 0.1, 0.01] {
            assert_eq!(
                grid_search_oracle(&inc, &dm, ObjectiveKind::MinMlu, r).unwrap(),
                1.5
            );
        }
    }

    #[test]
    fn rejects_large_dimension() {
        let topo = crate::traffic::ring_chord_topology(
            crate::traffic::RingChordParams {
                nodes: 6,
                chords: 4,
                min_capacity: 1.0,
                max_capacity: 1.0,
            },
            1,
        )
        .unwrap();
        let set = crate::net_model::yen_k_shortest(&topo, 4);
        let inc = IncidenceMatrices::build(&topo, &set).unwrap();
        let dm = DemandMatrix::from_entries(6, &[(0, 3, 1.0), (1, 4, 1.0), (2, 5, 1.0)]).unwrap();
        assert!(matches!(
            grid_search_oracle(&inc, &dm, ObjectiveKind::MinMlu, 0.1),
            Err(Error::GridTooLarge { .. })
        ));
    }
}
