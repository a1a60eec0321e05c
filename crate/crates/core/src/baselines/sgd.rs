use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::net_model::{DemandMatrix, IncidenceMatrices};
use crate::objectives::{
    flow_gradient, flow_value, mlu_split_subgradient, normalize_in_place, ObjectiveKind,
    SplitConfig,
};
use crate::{Error, Result};

/// Euclidean projection onto the probability simplex (sort and threshold).
pub fn project_to_simplex(v: &[f64]) -> Vec<f64> {
    assert!(!v.is_empty(), "cannot project an empty vector");
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut tau = 0.0;
    for (k, u) in sorted.iter().enumerate() {
        cumulative += u;
        let t = (cumulative - 1.0) / (k + 1) as f64;
        if u - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

/// Instance constants that parameterize the convergence guarantee for
/// tabular SGD.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TheoryBounds {
    pub d_max: f64,
    pub c_min: f64,
    pub c_max: f64,
    pub p_max: usize,
    pub node_count: usize,
    pub history_count: usize,
    /// Lipschitz constant `D_max / c_min`.
    pub rho: f64,
    /// Diameter bound `sqrt(|H| n^2 (p_max - 1))`.
    pub b: f64,
}

impl TheoryBounds {
    pub fn new<'a>(
        inc: &IncidenceMatrices,
        dms: impl IntoIterator<Item = &'a DemandMatrix>,
        history_count: usize,
    ) -> Self {
        let d_max = dms.into_iter().map(DemandMatrix::max).fold(0.0, f64::max);
        let c_min = inc.c_min();
        let p_max = inc.max_tunnels_per_pair();
        let n = inc.node_count();
        Self {
            d_max,
            c_min,
            c_max: inc.c_max(),
            p_max,
            node_count: n,
            history_count,
            rho: d_max / c_min,
            b: ((history_count * n * n * p_max.saturating_sub(1)) as f64).sqrt(),
        }
    }

    /// `K = ceil(B^2 rho^2 / eps^2)`.
    pub fn iterations_for(&self, eps: f64) -> usize {
        (self.b * self.b * self.rho * self.rho / (eps * eps)).ceil() as usize
    }

    /// `eta = sqrt(B^2 / (rho^2 K))`.
    pub fn step_for(&self, iterations: usize) -> f64 {
        (self.b * self.b / (self.rho * self.rho * iterations as f64)).sqrt()
    }
}

/// Assigns dense ids to histories by exact equality of their matrices.
#[derive(Debug, Clone, Default)]
pub struct HistoryIndex {
    ids: HashMap<Vec<u64>, usize>,
}

impl HistoryIndex {
    fn key(window: &[DemandMatrix]) -> Vec<u64> {
        window
            .iter()
            .flat_map(|m| m.values().iter().map(|v| v.to_bits()))
            .collect()
    }

    /// Id of `window`, registering it if new.
    pub fn intern(&mut self, window: &[DemandMatrix]) -> usize {
        let next = self.ids.len();
        *self.ids.entry(Self::key(window)).or_insert(next)
    }

    pub fn get(&self, window: &[DemandMatrix]) -> Option<usize> {
        self.ids.get(&Self::key(window)).copied()
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// One split configuration per history id.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularPolicy {
    pub entries: Vec<SplitConfig>,
}

impl TabularPolicy {
    pub fn get(&self, history: usize) -> &SplitConfig {
        &self.entries[history]
    }
}

/// Per-sample projected subgradient iteration over a finite history set with
/// constant step `eta`, returning the uniform average of the iterates.
///
/// `sampler` draws a `(history id, next matrix)` pair; ids must be below
/// `history_count`.
pub fn tabular_sgd(
    inc: &IncidenceMatrices,
    history_count: usize,
    mut sampler: impl FnMut(&mut ChaCha8Rng) -> (usize, DemandMatrix),
    eta: f64,
    iterations: usize,
    seed: u64,
) -> Result<TabularPolicy> {
    if history_count == 0 || iterations == 0 || !(eta > 0.0) {
        return Err(Error::Config(
            "tabular SGD needs histories, iterations and a positive step".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let uniform = SplitConfig::uniform(inc).splits;
    let mut current = vec![uniform.clone(); history_count];
    let mut sums = vec![vec![0.0; uniform.len()]; history_count];
    // Iteration index since which each entry has held its current value.
    let mut since = vec![0usize; history_count];
    for k in 0..iterations {
        let (h, dm) = sampler(&mut rng);
        if h >= history_count {
            return Err(Error::Config(format!(
                "history id {h} out of range {history_count}"
            )));
        }
        let g = mlu_split_subgradient(inc, &current[h], &dm)?;
        let held = (k - since[h]) as f64;
        for (s, x) in sums[h].iter_mut().zip(&current[h]) {
            *s += held * x;
        }
        since[h] = k;
        let x = &mut current[h];
        for i in 0..inc.pair_count() {
            let r = inc.pair_tunnels(i);
            if r.is_empty() {
                continue;
            }
            let v: Vec<f64> = r.clone().map(|j| x[j] - eta * g[j]).collect();
            x[r].copy_from_slice(&project_to_simplex(&v));
        }
    }
    let entries = (0..history_count)
        .map(|h| {
            let held = (iterations - since[h]) as f64;
            let splits = sums[h]
                .iter()
                .zip(&current[h])
                .map(|(s, x)| (s + held * x) / iterations as f64)
                .collect();
            SplitConfig { splits }
        })
        .collect();
    Ok(TabularPolicy { entries })
}

/// Parameters of the stochastic normalized subgradient method.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedSgdParams {
    /// Minibatch size `b`.
    pub batch: usize,
    /// Constant step `eta`.
    pub eta: f64,
    /// Iteration count `K`.
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AscentResult {
    /// Iterate with the best minibatch value.
    pub x: Vec<f64>,
    /// That minibatch value.
    pub value: f64,
    pub iterations: usize,
}

/// Maximizes a stochastic objective over the box `[0, upper]^n`.
///
/// Each iteration calls `minibatch(x, rng)` for the average value and a
/// supergradient over a fresh minibatch at `x`, keeps the iterate with the
/// best minibatch value, steps `eta` along the normalized direction and
/// clips back into the box.
pub fn normalized_subgradient_ascent(
    start: Vec<f64>,
    upper: f64,
    params: &NormalizedSgdParams,
    seed: u64,
    mut minibatch: impl FnMut(&[f64], &mut ChaCha8Rng) -> Result<(f64, Vec<f64>)>,
) -> Result<AscentResult> {
    if params.batch == 0 || params.iterations == 0 || !(params.eta > 0.0) {
        return Err(Error::Config(
            "normalized subgradient method needs positive batch, step and iterations".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = start;
    let mut best: Option<(f64, Vec<f64>)> = None;
    for _ in 0..params.iterations {
        let (value, mut g) = minibatch(&x, &mut rng)?;
        if best.as_ref().is_none_or(|(b, _)| value > *b) {
            best = Some((value, x.clone()));
        }
        normalize_in_place(&mut g);
        for (x, g) in x.iter_mut().zip(&g) {
            *x = (*x + params.eta * g).clamp(0.0, upper);
        }
    }
    let (value, x) = best.expect("at least one iteration");
    Ok(AscentResult {
        x,
        value,
        iterations: params.iterations,
    })
}

/// The normalized subgradient method applied to a flow objective, with
/// minibatches drawn uniformly with replacement from `samples`. Raw caps
/// start at `C_max / 2` and stay in `[0, C_max]`.
pub fn flow_normalized_ascent(
    inc: &IncidenceMatrices,
    samples: &[DemandMatrix],
    kind: ObjectiveKind,
    params: &NormalizedSgdParams,
    seed: u64,
) -> Result<AscentResult> {
    if samples.is_empty() || !kind.is_flow() {
        return Err(Error::Config(
            "need demand samples and a flow objective".into(),
        ));
    }
    let c_max = inc.c_max();
    let start = vec![0.5 * c_max; inc.tunnel_count()];
    normalized_subgradient_ascent(start, c_max, params, seed, |w, rng| {
        let mut value = 0.0;
        let mut grad = vec![0.0; w.len()];
        for _ in 0..params.batch {
            let dm = &samples[rng.random_range(0..samples.len())];
            value += flow_value(inc, w, dm, kind)?;
            for (a, g) in grad.iter_mut().zip(flow_gradient(inc, w, dm, kind)?) {
                *a += g;
            }
        }
        let b = params.batch as f64;
        grad.iter_mut().for_each(|g| *g /= b);
        Ok((value / b, grad))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn projection_examples() {
        assert_eq!(project_to_simplex(&[0.3, 0.7]), vec![0.3, 0.7]);
        assert_eq!(project_to_simplex(&[2.0, 0.0]), vec![1.0, 0.0]);
        assert_eq!(project_to_simplex(&[0.0, 0.0]), vec![0.5, 0.5]);
    }

    #[test]
    fn scalar_ascent_reaches_peak() {
        let c = 0.37;
        let params = NormalizedSgdParams {
            batch: 1,
            eta: 0.01,
            iterations: 500,
        };
        let res = normalized_subgradient_ascent(vec![0.9], 1.0, &params, 0, |x, _| {
            Ok((-(x[0] - c).abs(), vec![(c - x[0]).signum()]))
        })
        .unwrap();
        assert!((res.x[0] - c).abs() <= params.eta, "{:?}", res);
    }

    #[test]
    fn history_ids_by_equality() {
        let a = DemandMatrix::from_entries(2, &[(0, 1, 1.0)]).unwrap();
        let b = DemandMatrix::from_entries(2, &[(0, 1, 2.0)]).unwrap();
        let mut idx = HistoryIndex::default();
        assert_eq!(idx.intern(&[a.clone(), b.clone()]), 0);
        assert_eq!(idx.intern(&[b.clone(), a.clone()]), 1);
        assert_eq!(idx.intern(&[a.clone(), b.clone()]), 0);
        assert_eq!(idx.get(&[b.clone(), b]), None);
    }
}
