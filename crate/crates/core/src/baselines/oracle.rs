use crate::lp::{IpmOptions, LinearProgram};
use crate::net_model::{DemandMatrix, IncidenceMatrices};
use crate::objectives::{
    flow_gradient, flow_objective, flow_value, mlu_of_splits, mlu_split_subgradient,
    normalize_caps, normalize_in_place, normalize_splits, ObjectiveKind, SplitConfig, TeConfig,
};
use crate::{Error, Result};

use super::sgd::project_to_simplex;

/// How the per-matrix optimum is computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OracleMethod {
    /// Exact linear program solved by the interior-point method.
    #[default]
    Lp,
    /// Projected subgradient descent (MLU) or normalized supergradient
    /// ascent (flow objectives) with diminishing steps.
    FirstOrder,
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct OracleOptions {
    pub method: OracleMethod,
    /// Convergence tolerance: the LP's relative residual target, or the
    /// relative improvement below which the first-order method stops.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for OracleOptions {
    fn default() -> Self {
        Self {
            method: OracleMethod::Lp,
            tol: 1e-10,
            max_iters: 200,
        }
    }
}

impl OracleOptions {
    pub fn first_order(tol: f64, max_iters: usize) -> Self {
        Self {
            method: OracleMethod::FirstOrder,
            tol,
            max_iters,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OracleSolution {
    pub config: TeConfig,
    /// Objective value of `config` on the demand matrix.
    pub value: f64,
    /// False when the iteration budget ran out first; `config` is then the
    /// best iterate seen.
    pub converged: bool,
    pub iterations: usize,
}

/// Best configuration for a single known demand matrix.
pub fn oracle_optimize(
    inc: &IncidenceMatrices,
    dm: &DemandMatrix,
    objective: ObjectiveKind,
    opts: &OracleOptions,
) -> Result<OracleSolution> {
    if dm.node_count() != inc.node_count() {
        return Err(Error::Dimension(format!(
            "demand matrix has {} nodes, topology has {}",
            dm.node_count(),
            inc.node_count()
        )));
    }
    let sol = match (objective, opts.method) {
        (ObjectiveKind::MinMlu, OracleMethod::Lp) => mlu_lp(inc, dm, opts),
        (ObjectiveKind::MinMlu, OracleMethod::FirstOrder) => mlu_first_order(inc, dm, opts),
        (_, OracleMethod::Lp) => flow_lp(inc, dm, objective, opts),
        (_, OracleMethod::FirstOrder) => flow_first_order(inc, dm, objective, opts),
    }?;
    if !sol.converged {
        log::warn!(
            "oracle stopped after {} iterations before reaching tolerance {}",
            sol.iterations,
            opts.tol
        );
    }
    if let TeConfig::Capped(c) = &sol.config {
        debug_assert!(c.is_feasible(inc), "oracle caps infeasible");
    }
    Ok(sol)
}

/// Rows of pairs with positive demand, erroring on a demanded pair that has
/// no tunnel.
fn demanded_pairs(inc: &IncidenceMatrices, dm: &DemandMatrix) -> Result<Vec<usize>> {
    let mut rows = Vec::new();
    for (s, t, _) in dm.positive_pairs() {
        match inc.pair_index(s, t) {
            Some(i) if !inc.pair_tunnels(i).is_empty() => rows.push(i),
            _ => return Err(Error::Unroutable { src: s, dst: t }),
        }
    }
    Ok(rows)
}

/// Coupling-row index for each edge crossed by a tunnel of `pairs`.
fn used_edges(inc: &IncidenceMatrices, pairs: &[usize]) -> (Vec<Option<usize>>, usize) {
    let mut map = vec![None; inc.edge_count()];
    let mut count = 0;
    for &i in pairs {
        for j in inc.pair_tunnels(i) {
            for &e in inc.tunnel_edges(j) {
                if map[e].is_none() {
                    map[e] = Some(count);
                    count += 1;
                }
            }
        }
    }
    (map, count)
}

fn mlu_lp(
    inc: &IncidenceMatrices,
    dm: &DemandMatrix,
    opts: &OracleOptions,
) -> Result<OracleSolution> {
    let pairs = demanded_pairs(inc, dm)?;
    if pairs.is_empty() {
        return Ok(OracleSolution {
            config: TeConfig::Split(SplitConfig::uniform(inc)),
            value: 0.0,
            converged: true,
            iterations: 0,
        });
    }
    let demands = inc.pair_demands(dm);
    let (edge_row, n_edges) = used_edges(inc, &pairs);
    let nb = pairs.len();
    let mut rhs = vec![0.0; nb + n_edges];
    rhs[..nb].iter_mut().for_each(|b| *b = 1.0);
    let mut lp = LinearProgram::new(rhs, nb);
    let mut columns = Vec::new();
    for (row, &i) in pairs.iter().enumerate() {
        for j in inc.pair_tunnels(i) {
            let mut entries = vec![(row, 1.0)];
            for &e in inc.tunnel_edges(j) {
                let r = edge_row[e].expect("used edge");
                entries.push((nb + r, demands[i] / inc.capacity(e)));
            }
            columns.push((j, lp.add_column(0.0, &entries)));
        }
    }
    let u_entries: Vec<(usize, f64)> = (0..n_edges).map(|r| (nb + r, -1.0)).collect();
    lp.add_column(1.0, &u_entries);
    for r in 0..n_edges {
        lp.add_column(0.0, &[(nb + r, 1.0)]);
    }

    let to_splits = |x: &[f64]| {
        let mut raw = vec![1.0; inc.tunnel_count()];
        for &(j, col) in &columns {
            raw[j] = x[col].max(0.0);
        }
        normalize_splits(inc, &raw).splits
    };
    let ipm = IpmOptions {
        tol: opts.tol,
        max_iters: opts.max_iters,
    };
    let sol = lp.solve_monitored(&ipm, |x| mlu_of_splits(inc, &to_splits(x), dm).ok())?;
    let splits = to_splits(&sol.x);
    let value = mlu_of_splits(inc, &splits, dm)?;
    Ok(OracleSolution {
        config: TeConfig::Split(SplitConfig { splits }),
        value,
        converged: sol.converged,
        iterations: sol.iterations,
    })
}

fn flow_lp(
    inc: &IncidenceMatrices,
    dm: &DemandMatrix,
    objective: ObjectiveKind,
    opts: &OracleOptions,
) -> Result<OracleSolution> {
    let demands = inc.pair_demands(dm);
    let concurrent = matches!(objective, ObjectiveKind::MaxConcurrentFlow(_));
    let unservable = dm.positive_pairs().any(|(s, t, _)| {
        inc.pair_index(s, t)
            .is_none_or(|i| inc.pair_tunnels(i).is_empty())
    });
    let pairs: Vec<usize> = (0..inc.pair_count())
        .filter(|&i| demands[i] > 0.0 && !inc.pair_tunnels(i).is_empty())
        .collect();
    let zero = vec![0.0; inc.tunnel_count()];
    if pairs.is_empty() || (concurrent && unservable) {
        // Nothing can be gained: either no demand is routable or some demand
        // can never be served, which pins the concurrent fraction at 0.
        let config = normalize_caps(inc, &zero);
        let value = flow_objective(inc, &config, dm, objective)?;
        return Ok(OracleSolution {
            config: TeConfig::Capped(config),
            value,
            converged: true,
            iterations: 0,
        });
    }
    let scale = inc.c_max();
    let (edge_row, n_edges) = used_edges(inc, &pairs);
    let np = pairs.len();
    let mut columns = Vec::new();
    let lp = if concurrent {
        // Rows: pairs (alpha D_i <= flow_i), edges, alpha <= 1. All coupling.
        let alpha_row = np + n_edges;
        let mut rhs = vec![0.0; np + n_edges + 1];
        rhs[np..].iter_mut().for_each(|b| *b = 1.0);
        let mut lp = LinearProgram::new(rhs, 0);
        for (row, &i) in pairs.iter().enumerate() {
            for j in inc.pair_tunnels(i) {
                let mut entries = vec![(row, scale / demands[i])];
                for &e in inc.tunnel_edges(j) {
                    entries.push((
                        np + edge_row[e].expect("used edge"),
                        scale / inc.capacity(e),
                    ));
                }
                columns.push((j, lp.add_column(0.0, &entries)));
            }
            lp.add_column(0.0, &[(row, -1.0)]);
        }
        let mut alpha = vec![(alpha_row, 1.0)];
        alpha.extend((0..np).map(|row| (row, -1.0)));
        lp.add_column(-1.0, &alpha);
        for r in np..=alpha_row {
            lp.add_column(0.0, &[(r, 1.0)]);
        }
        lp
    } else {
        // Block rows: per-pair demand bounds. Coupling rows: edge capacities.
        let mut rhs: Vec<f64> = pairs.iter().map(|&i| demands[i] / scale).collect();
        rhs.extend(std::iter::repeat_n(1.0, n_edges));
        let mut lp = LinearProgram::new(rhs, np);
        for (row, &i) in pairs.iter().enumerate() {
            for j in inc.pair_tunnels(i) {
                let mut entries = vec![(row, 1.0)];
                for &e in inc.tunnel_edges(j) {
                    entries.push((
                        np + edge_row[e].expect("used edge"),
                        scale / inc.capacity(e),
                    ));
                }
                columns.push((j, lp.add_column(-1.0, &entries)));
            }
            lp.add_column(0.0, &[(row, 1.0)]);
        }
        for r in 0..n_edges {
            lp.add_column(0.0, &[(np + r, 1.0)]);
        }
        lp
    };

    let to_config = |x: &[f64]| {
        let mut caps = zero.clone();
        for &(j, col) in &columns {
            caps[j] = x[col].max(0.0) * scale;
        }
        normalize_caps(inc, &caps)
    };
    let ipm = IpmOptions {
        tol: opts.tol,
        max_iters: opts.max_iters,
    };
    let sol = lp.solve_monitored(&ipm, |x| {
        flow_objective(inc, &to_config(x), dm, objective)
            .ok()
            .map(|v| -v)
    })?;
    let config = to_config(&sol.x);
    let value = flow_objective(inc, &config, dm, objective)?;
    Ok(OracleSolution {
        config: TeConfig::Capped(config),
        value,
        converged: sol.converged,
        iterations: sol.iterations,
    })
}

/// Stops when the best value improved by less than `tol` (relative) over the
/// last `window` iterations.
struct Stall {
    window: usize,
    mark: f64,
}

impl Stall {
    fn stalled(&mut self, it: usize, best: f64, tol: f64) -> bool {
        if it == 0 || it % self.window != 0 {
            return false;
        }
        let improvement = (self.mark - best).abs() / self.mark.abs().max(1e-300);
        self.mark = best;
        improvement < tol
    }
}

fn mlu_first_order(
    inc: &IncidenceMatrices,
    dm: &DemandMatrix,
    opts: &OracleOptions,
) -> Result<OracleSolution> {
    let pairs = demanded_pairs(inc, dm)?;
    let mut x = SplitConfig::uniform(inc).splits;
    let mut best = (mlu_of_splits(inc, &x, dm)?, x.clone());
    if pairs.is_empty() || best.0 == 0.0 {
        return Ok(OracleSolution {
            config: TeConfig::Split(SplitConfig { splits: x }),
            value: best.0,
            converged: true,
            iterations: 0,
        });
    }
    let rho = dm.max() / inc.c_min();
    let eta0 = 1.0 / rho;
    let mut stall = Stall {
        window: 100,
        mark: best.0,
    };
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=opts.max_iters {
        iterations = k;
        let g = mlu_split_subgradient(inc, &x, dm)?;
        let eta = eta0 / (k as f64).sqrt();
        for &i in &pairs {
            let r = inc.pair_tunnels(i);
            let v: Vec<f64> = r.clone().map(|j| x[j] - eta * g[j]).collect();
            x[r].copy_from_slice(&project_to_simplex(&v));
        }
        let value = mlu_of_splits(inc, &x, dm)?;
        if value < best.0 {
            best = (value, x.clone());
        }
        if stall.stalled(k, best.0, opts.tol) {
            converged = true;
            break;
        }
    }
    Ok(OracleSolution {
        config: TeConfig::Split(SplitConfig { splits: best.1 }),
        value: best.0,
        converged,
        iterations,
    })
}

fn flow_first_order(
    inc: &IncidenceMatrices,
    dm: &DemandMatrix,
    objective: ObjectiveKind,
    opts: &OracleOptions,
) -> Result<OracleSolution> {
    let c_max = inc.c_max();
    let demands = inc.pair_demands(dm);
    let active: Vec<bool> = (0..inc.tunnel_count())
        .map(|j| demands[inc.tunnel_pair(j)] > 0.0)
        .collect();
    let mut w: Vec<f64> = active
        .iter()
        .map(|&a| if a { 0.5 * c_max } else { 0.0 })
        .collect();
    let mut best = (flow_value(inc, &w, dm, objective)?, w.clone());
    let eta0 = 0.5 * c_max;
    let mut stall = Stall {
        window: 100,
        mark: best.0,
    };
    let mut converged = false;
    let mut iterations = 0;
    for k in 1..=opts.max_iters {
        iterations = k;
        let mut g = flow_gradient(inc, &w, dm, objective)?;
        for (g, a) in g.iter_mut().zip(&active) {
            if !a {
                *g = 0.0;
            }
        }
        normalize_in_place(&mut g);
        if g.iter().all(|v| *v == 0.0) {
            converged = true;
            break;
        }
        let eta = eta0 / (k as f64).sqrt();
        for (w, g) in w.iter_mut().zip(&g) {
            *w = (*w + eta * g).clamp(0.0, c_max);
        }
        let value = flow_value(inc, &w, dm, objective)?;
        if value > best.0 {
            best = (value, w.clone());
        }
        if stall.stalled(k, best.0, opts.tol) {
            converged = true;
            break;
        }
    }
    let config = normalize_caps(inc, &best.1);
    Ok(OracleSolution {
        config: TeConfig::Capped(config),
        value: best.0,
        converged,
        iterations,
    })
}
