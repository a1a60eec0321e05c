use std::io::{Read, Write};
use std::path::Path;

use crate::{Error, Result};

use super::NodeId;

/// Traffic volume per ordered node pair for one epoch, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandMatrix {
    n: usize,
    values: Vec<f64>,
}

impl DemandMatrix {
    pub fn new(n: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != n * n {
            return Err(Error::InvalidDemand(format!(
                "expected {} entries for {n} nodes, got {}",
                n * n,
                values.len()
            )));
        }
        for s in 0..n {
            for t in 0..n {
                let v = values[s * n + t];
                if !v.is_finite() || v < 0.0 {
                    return Err(Error::InvalidDemand(format!(
                        "entry ({s},{t}) = {v} is not a nonnegative finite number"
                    )));
                }
                if s == t && v != 0.0 {
                    return Err(Error::InvalidDemand(format!(
                        "diagonal entry ({s},{s}) = {v} must be zero"
                    )));
                }
            }
        }
        Ok(Self { n, values })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            values: vec![0.0; n * n],
        }
    }

    /// Builds a matrix from `(src, dst, volume)` entries; unspecified pairs are zero.
    pub fn from_entries(n: usize, entries: &[(NodeId, NodeId, f64)]) -> Result<Self> {
        let mut values = vec![0.0; n * n];
        for &(s, t, v) in entries {
            if s >= n || t >= n {
                return Err(Error::InvalidDemand(format!(
                    "pair ({s},{t}) out of range for {n} nodes"
                )));
            }
            values[s * n + t] = v;
        }
        Self::new(n, values)
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn get(&self, src: NodeId, dst: NodeId) -> f64 {
        self.values[src * self.n + dst]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total(&self) -> f64 {
        self.values.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(0.0, f64::max)
    }

    pub fn scaled(&self, k: f64) -> Self {
        Self {
            n: self.n,
            values: self.values.iter().map(|v| v * k).collect(),
        }
    }

    /// Applies `f(src, dst, value)` to every off-diagonal entry.
    pub fn map_offdiag(&self, mut f: impl FnMut(NodeId, NodeId, f64) -> f64) -> Self {
        let mut values = self.values.clone();
        for s in 0..self.n {
            for t in 0..self.n {
                if s != t {
                    values[s * self.n + t] = f(s, t, values[s * self.n + t]);
                }
            }
        }
        Self { n: self.n, values }
    }

    /// Off-diagonal entries in row-major `(s, t)` order; this is the pair
    /// ordering used for model inputs.
    pub fn offdiag(&self) -> impl Iterator<Item = f64> + '_ {
        let n = self.n;
        self.values
            .iter()
            .enumerate()
            .filter(move |(i, _)| i / n != i % n)
            .map(|(_, v)| *v)
    }

    /// Iterates `(src, dst, value)` over pairs with strictly positive demand.
    pub fn positive_pairs(&self) -> impl Iterator<Item = (NodeId, NodeId, f64)> + '_ {
        let n = self.n;
        self.values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(move |(i, v)| (i / n, i % n, *v))
    }
}

/// One training/evaluation example: `history` consecutive matrices followed by
/// the realized next matrix. Borrows from the trace it was cut from.
#[derive(Debug, Clone, Copy)]
pub struct HistorySample<'a> {
    pub window: &'a [DemandMatrix],
    pub target: &'a DemandMatrix,
    /// Index of `target` within the trace.
    pub epoch: usize,
}

/// Time-ordered sequence of demand matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandTrace {
    matrices: Vec<DemandMatrix>,
    /// Epoch length in seconds; informational only.
    pub epoch_length: Option<f64>,
}

impl DemandTrace {
    pub fn new(matrices: Vec<DemandMatrix>) -> Result<Self> {
        if let Some(first) = matrices.first() {
            let n = first.node_count();
            if let Some((i, m)) = matrices
                .iter()
                .enumerate()
                .find(|(_, m)| m.node_count() != n)
            {
                return Err(Error::InvalidDemand(format!(
                    "matrix {i} has {} nodes, trace has {n}",
                    m.node_count()
                )));
            }
        }
        Ok(Self {
            matrices,
            epoch_length: None,
        })
    }

    pub fn len(&self) -> usize {
        self.matrices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.matrices.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.matrices.first().map_or(0, |m| m.node_count())
    }

    pub fn matrices(&self) -> &[DemandMatrix] {
        &self.matrices
    }

    pub fn get(&self, epoch: usize) -> &DemandMatrix {
        &self.matrices[epoch]
    }

    pub fn max_demand(&self) -> f64 {
        self.matrices.iter().map(|m| m.max()).fold(0.0, f64::max)
    }

    pub fn mean_demand(&self) -> f64 {
        let n = self.node_count();
        let pairs = (n * n.saturating_sub(1)) as f64;
        if self.matrices.is_empty() || pairs == 0.0 {
            return 0.0;
        }
        self.matrices.iter().map(|m| m.total()).sum::<f64>() / (pairs * self.len() as f64)
    }

    /// Sub-trace of epochs `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            matrices: self.matrices[start..end].to_vec(),
            epoch_length: self.epoch_length,
        }
    }

    /// Temporal split: the earlier `train_fraction` of matrices for training,
    /// the remainder for testing.
    pub fn split(&self, train_fraction: f64) -> Result<(Self, Self)> {
        if !(train_fraction > 0.0 && train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train fraction {train_fraction} must lie in (0, 1)"
            )));
        }
        let cut = (self.len() as f64 * train_fraction).round() as usize;
        let cut = cut.min(self.len());
        Ok((self.slice(0, cut), self.slice(cut, self.len())))
    }

    /// Pairs with positive demand in any epoch.
    pub fn active_pairs(&self) -> Vec<(NodeId, NodeId)> {
        let n = self.node_count();
        let mut active = vec![false; n * n];
        for m in &self.matrices {
            for (i, v) in m.values().iter().enumerate() {
                if *v > 0.0 {
                    active[i] = true;
                }
            }
        }
        active
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| (i / n, i % n))
            .collect()
    }

    /// Reads the CSV trace format: one row per epoch, `N*N` columns in
    /// row-major `(s, t)` order, no header.
    pub fn read_csv(reader: impl Read) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(false)
            .from_reader(reader);
        let mut matrices = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(|e| Error::parse("trace", e))?;
            let values = record
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse("trace", format!("row {row}: {e}")))?;
            let n = (values.len() as f64).sqrt().round() as usize;
            if n * n != values.len() {
                return Err(Error::parse(
                    "trace",
                    format!("row {row} has {} columns, not a square count", values.len()),
                ));
            }
            matrices.push(DemandMatrix::new(n, values)?);
        }
        Self::new(matrices)
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(std::io::BufReader::new(file))
    }

    pub fn write_csv(&self, mut writer: impl Write) -> Result<()> {
        let mut line = String::new();
        for m in &self.matrices {
            line.clear();
            for (i, v) in m.values().iter().enumerate() {
                if i > 0 {
                    line.push(',');
                }
                line.push_str(&v.to_string());
            }
            line.push('\n');
            writer
                .write_all(line.as_bytes())
                .map_err(|e| Error::io("<trace writer>", e))?;
        }
        Ok(())
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        std::fs::write(path, buf).map_err(|e| Error::io(path, e))
    }
}

/// Cuts a trace into every `(history, next)` example. Sample `i` covers epochs
/// `[i, i + history]`.
pub fn history_windows(trace: &DemandTrace, history: usize) -> Result<Vec<HistorySample<'_>>> {
    if history == 0 {
        return Err(Error::Config("history length must be positive".into()));
    }
    if trace.len() < history + 1 {
        return Err(Error::TraceTooShort {
            len: trace.len(),
            needed: history + 1,
        });
    }
    let m = trace.matrices();
    Ok((0..trace.len() - history)
        .map(|i| HistorySample {
            window: &m[i..i + history],
            target: &m[i + history],
            epoch: i + history,
        })
        .collect())
}
