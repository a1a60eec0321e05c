use crate::net_model::{history_windows, DemandMatrix, DemandTrace, IncidenceMatrices, NodeId};
use crate::objectives::ObjectiveKind;
use crate::{Error, Result};

use super::oracle::{oracle_optimize, OracleOptions, OracleSolution};

/// Conditioning term added to the normal equations, relative to their scale.
const RIDGE: f64 = 1e-8;

/// Per-pair linear model predicting the next demand from the previous
/// `history` values of the same pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LinRegPredictor {
    history: usize,
    node_count: usize,
    /// Off-diagonal pairs in row-major order.
    pairs: Vec<(NodeId, NodeId)>,
    coefficients: Vec<Vec<f64>>,
    intercepts: Vec<f64>,
}

/// Fits one least-squares model per pair on every window of `train`.
pub fn linreg_fit(train: &DemandTrace, history: usize) -> Result<LinRegPredictor> {
    let samples = history_windows(train, history)?;
    let n = train.node_count();
    let pairs: Vec<(NodeId, NodeId)> = (0..n)
        .flat_map(|s| (0..n).filter(move |&t| t != s).map(move |t| (s, t)))
        .collect();
    let m = samples.len() as f64;
    let mut coefficients = Vec::with_capacity(pairs.len());
    let mut intercepts = Vec::with_capacity(pairs.len());
    for &(s, t) in &pairs {
        let rows: Vec<Vec<f64>> = samples
            .iter()
            .map(|smp| smp.window.iter().map(|dm| dm.get(s, t)).collect())
            .collect();
        let ys: Vec<f64> = samples.iter().map(|smp| smp.target.get(s, t)).collect();
        let x_mean: Vec<f64> = (0..history)
            .map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / m)
            .collect();
        let y_mean = ys.iter().sum::<f64>() / m;

        let mut gram = vec![0.0; history * history];
        let mut rhs = vec![0.0; history];
        for (row, y) in rows.iter().zip(&ys) {
            let xc: Vec<f64> = row.iter().zip(&x_mean).map(|(x, mu)| x - mu).collect();
            let yc = y - y_mean;
            for a in 0..history {
                rhs[a] += xc[a] * yc;
                for b in 0..=a {
                    gram[a * history + b] += xc[a] * xc[b];
                }
            }
        }
        let scale = (0..history).map(|a| gram[a * history + a]).sum::<f64>() / history as f64;
        let lambda = if scale > 0.0 { RIDGE * scale } else { RIDGE };
        for a in 0..history {
            gram[a * history + a] += lambda;
        }
        let beta = solve_spd(&mut gram, history, rhs).ok_or_else(|| {
            Error::Singular(format!("regression normal equations for pair ({s},{t})"))
        })?;
        let intercept = y_mean - x_mean.iter().zip(&beta).map(|(x, b)| x * b).sum::<f64>();
        coefficients.push(beta);
        intercepts.push(intercept);
    }
    Ok(LinRegPredictor {
        history,
        node_count: n,
        pairs,
        coefficients,
        intercepts,
    })
}

impl LinRegPredictor {
    pub fn history(&self) -> usize {
        self.history
    }

    /// Coefficients (oldest lag first) and intercept of one pair's model.
    pub fn model(&self, src: NodeId, dst: NodeId) -> Option<(&[f64], f64)> {
        let k = self.pairs.binary_search(&(src, dst)).ok()?;
        Some((&self.coefficients[k], self.intercepts[k]))
    }

    /// Predicted next matrix; negative predictions are clamped to zero.
    pub fn predict(&self, window: &[DemandMatrix]) -> Result<DemandMatrix> {
        if window.len() != self.history {
            return Err(Error::Dimension(format!(
                "window of {} matrices, predictor expects {}",
                window.len(),
                self.history
            )));
        }
        if let Some(m) = window.iter().find(|m| m.node_count() != self.node_count) {
            return Err(Error::Dimension(format!(
                "window matrix has {} nodes, predictor expects {}",
                m.node_count(),
                self.node_count
            )));
        }
        let entries: Vec<(NodeId, NodeId, f64)> = self
            .pairs
            .iter()
            .enumerate()
            .map(|(k, &(s, t))| {
                let y = self.intercepts[k]
                    + window
                        .iter()
                        .zip(&self.coefficients[k])
                        .map(|(dm, b)| dm.get(s, t) * b)
                        .sum::<f64>();
                (s, t, y.max(0.0))
            })
            .collect();
        DemandMatrix::from_entries(self.node_count, &entries)
    }
}

/// Free-function form of [`LinRegPredictor::predict`].
pub fn linreg_predict(
    predictor: &LinRegPredictor,
    window: &[DemandMatrix],
) -> Result<DemandMatrix> {
    predictor.predict(window)
}

/// Optimizes for the predicted next matrix. Predicted demands on pairs
/// without tunnels, and (for concurrent flow) below the objective's minimum
/// demand, are dropped first since they cannot be acted upon.
pub fn prediction_based_te(
    predictor: &LinRegPredictor,
    window: &[DemandMatrix],
    inc: &IncidenceMatrices,
    objective: ObjectiveKind,
    opts: &OracleOptions,
) -> Result<OracleSolution> {
    let predicted = predictor.predict(window)?;
    let floor = match objective {
        ObjectiveKind::MaxConcurrentFlow(eps) => eps,
        _ => 0.0,
    };
    let predicted = predicted.map_offdiag(|s, t, v| {
        let routable = inc
            .pair_index(s, t)
            .is_some_and(|i| !inc.pair_tunnels(i).is_empty());
        if routable && v >= floor {
            v
        } else {
            0.0
        }
    });
    oracle_optimize(inc, &predicted, objective, opts)
}

/// Solves `A x = b` for symmetric positive definite `A` (lower triangle
/// stored row-major). Returns `None` if a pivot is not positive.
fn solve_spd(a: &mut [f64], n: usize, mut b: Vec<f64>) -> Option<Vec<f64>> {
    for k in 0..n {
        let mut d = a[k * n + k];
        for p in 0..k {
            d -= a[k * n + p] * a[k * n + p];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let l = d.sqrt();
        a[k * n + k] = l;
        for i in k + 1..n {
            let mut s = a[i * n + k];
            for p in 0..k {
                s -= a[i * n + p] * a[k * n + p];
            }
            a[i * n + k] = s / l;
        }
    }
    for i in 0..n {
        for p in 0..i {
            b[i] -= a[i * n + p] * b[p];
        }
        b[i] /= a[i * n + i];
    }
    for i in (0..n).rev() {
        for p in i + 1..n {
            b[i] -= a[p * n + i] * b[p];
        }
        b[i] /= a[i * n + i];
    }
    Some(b)
}
