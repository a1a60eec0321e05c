//! A primal-dual interior-point solver for the linear programs behind the
//! per-matrix oracle.
//!
//! Problems are posed in standard form `min c^T x  s.t.  A x = b, x >= 0`
//! with sparse columns. The first `block_rows` rows may be declared as
//! *block rows*: every column has at most one nonzero among them. The pair
//! constraints of a routing LP have this shape, so the normal equations
//! `A D A^T` have a diagonal leading block that is eliminated explicitly and
//! only a dense Schur complement over the remaining *coupling* rows (one per
//! edge) is factored.

use crate::{Error, Result};

#[derive(Debug, Clone)]
pub struct LinearProgram {
    rows: usize,
    block_rows: usize,
    rhs: Vec<f64>,
    cost: Vec<f64>,
    /// Block-row entry of each column, if any.
    block: Vec<Option<(usize, f64)>>,
    /// Coupling-row entries of each column, rows relative to `block_rows`.
    coupling: Vec<Vec<(usize, f64)>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IpmOptions {
    /// Relative tolerance on primal and dual infeasibility and on the gap.
    pub tol: f64,
    pub max_iters: usize,
}

impl Default for IpmOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iters: 200,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution {
    /// Primal point: the final iterate, or the best one under the monitor.
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    /// `c^T x` of the returned point.
    pub objective: f64,
    pub iterations: usize,
    /// Whether the tolerance was met.
    pub converged: bool,
}

impl LinearProgram {
    /// An empty program with `rows` constraints, the first `block_rows` of
    /// which are block rows.
    pub fn new(rhs: Vec<f64>, block_rows: usize) -> Self {
        assert!(block_rows <= rhs.len());
        Self {
            rows: rhs.len(),
            block_rows,
            rhs,
            cost: Vec::new(),
            block: Vec::new(),
            coupling: Vec::new(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cost.len()
    }

    /// Adds a nonnegative variable and returns its index. Panics if the
    /// column touches more than one block row.
    pub fn add_column(&mut self, cost: f64, entries: &[(usize, f64)]) -> usize {
        let mut block = None;
        let mut coupling = Vec::new();
        for &(r, a) in entries {
            assert!(r < self.rows, "row {r} out of range");
            if a == 0.0 {
                continue;
            }
            if r < self.block_rows {
                assert!(block.is_none(), "column touches two block rows");
                block = Some((r, a));
            } else {
                coupling.push((r - self.block_rows, a));
            }
        }
        self.cost.push(cost);
        self.block.push(block);
        self.coupling.push(coupling);
        self.cost.len() - 1
    }

    fn mul(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.rows];
        for j in 0..self.cols() {
            if let Some((r, a)) = self.block[j] {
                out[r] += a * x[j];
            }
            for &(r, a) in &self.coupling[j] {
                out[self.block_rows + r] += a * x[j];
            }
        }
        out
    }

    fn mul_t(&self, y: &[f64]) -> Vec<f64> {
        (0..self.cols())
            .map(|j| {
                let mut s = self.block[j].map_or(0.0, |(r, a)| a * y[r]);
                for &(r, a) in &self.coupling[j] {
                    s += a * y[self.block_rows + r];
                }
                s
            })
            .collect()
    }

    /// Solves the program, returning the final iterate.
    pub fn solve(&self, opts: &IpmOptions) -> Result<LpSolution> {
        self.solve_monitored(opts, |_| None)
    }

    /// Solves the program while scoring every primal iterate with `monitor`
    /// (lower is better; `None` skips the iterate). The best-scored iterate is
    /// returned; without any score the final iterate is.
    pub fn solve_monitored(
        &self,
        opts: &IpmOptions,
        mut monitor: impl FnMut(&[f64]) -> Option<f64>,
    ) -> Result<LpSolution> {
        let n = self.cols();
        let m = self.rows;
        if n == 0 {
            if self.rhs.iter().any(|b| *b != 0.0) {
                return Err(Error::Singular("program without variables".into()));
            }
            return Ok(LpSolution {
                x: Vec::new(),
                y: vec![0.0; m],
                objective: 0.0,
                iterations: 0,
                converged: true,
            });
        }
        let b = &self.rhs;
        let c = &self.cost;
        let b_norm = 1.0 + norm(b);
        let c_norm = 1.0 + norm(c);

        // Starting point from the least-squares heuristic.
        let mut normal = NormalEquations::new(self);
        normal.factor(self, &vec![1.0; n])?;
        let w = normal.solve(self, b);
        let mut x = self.mul_t(&w);
        let mut y = normal.solve(self, &self.mul(c));
        let aty = self.mul_t(&y);
        let mut z: Vec<f64> = c.iter().zip(&aty).map(|(c, a)| c - a).collect();
        let dx = (-1.5 * x.iter().copied().fold(f64::INFINITY, f64::min)).max(0.0);
        let dz = (-1.5 * z.iter().copied().fold(f64::INFINITY, f64::min)).max(0.0);
        x.iter_mut().for_each(|v| *v += dx);
        z.iter_mut().for_each(|v| *v += dz);
        let xz = dot(&x, &z);
        let sx: f64 = x.iter().sum();
        let sz: f64 = z.iter().sum();
        let (ex, ez) = if xz > 0.0 {
            (0.5 * xz / sz, 0.5 * xz / sx)
        } else {
            (1.0, 1.0)
        };
        x.iter_mut().for_each(|v| *v = (*v + ex).max(1e-8));
        z.iter_mut().for_each(|v| *v = (*v + ez).max(1e-8));

        let mut best: Option<(f64, Vec<f64>, Vec<f64>)> = None;
        let mut converged = false;
        let mut iterations = 0;
        let mut last = (x.clone(), y.clone());
        for it in 0..opts.max_iters {
            iterations = it;
            let ax = self.mul(&x);
            let rp: Vec<f64> = b.iter().zip(&ax).map(|(b, a)| b - a).collect();
            let aty = self.mul_t(&y);
            let rd: Vec<f64> = (0..n).map(|j| c[j] - aty[j] - z[j]).collect();
            let mu = dot(&x, &z) / n as f64;
            let pobj = dot(c, &x);
            let dobj = dot(b, &y);
            if !(pobj.is_finite() && dobj.is_finite() && mu.is_finite()) {
                break;
            }
            last = (x.clone(), y.clone());
            if let Some(score) = monitor(&x) {
                if best.as_ref().is_none_or(|(s, _, _)| score < *s) {
                    best = Some((score, x.clone(), y.clone()));
                }
            }
            if norm(&rp) / b_norm < opts.tol
                && norm(&rd) / c_norm < opts.tol
                && (pobj - dobj).abs() / (1.0 + pobj.abs()) < opts.tol
            {
                converged = true;
                break;
            }

            let d: Vec<f64> = x.iter().zip(&z).map(|(x, z)| x / z).collect();
            if normal.factor(self, &d).is_err() {
                break;
            }
            let direction = |r_xz: &[f64], normal: &NormalEquations| {
                let t: Vec<f64> = (0..n).map(|j| d[j] * rd[j] - r_xz[j] / z[j]).collect();
                let at = self.mul(&t);
                let rhs: Vec<f64> = rp.iter().zip(&at).map(|(r, a)| r + a).collect();
                let dy = normal.solve(self, &rhs);
                let atdy = self.mul_t(&dy);
                let dz: Vec<f64> = (0..n).map(|j| rd[j] - atdy[j]).collect();
                let dx: Vec<f64> = (0..n).map(|j| (r_xz[j] - x[j] * dz[j]) / z[j]).collect();
                (dx, dy, dz)
            };

            let r_aff: Vec<f64> = (0..n).map(|j| -x[j] * z[j]).collect();
            let (dx_a, _, dz_a) = direction(&r_aff, &normal);
            let ap = max_step(&x, &dx_a).min(1.0);
            let ad = max_step(&z, &dz_a).min(1.0);
            let mu_aff = (0..n)
                .map(|j| (x[j] + ap * dx_a[j]) * (z[j] + ad * dz_a[j]))
                .sum::<f64>()
                / n as f64;
            let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
            let r_cc: Vec<f64> = (0..n)
                .map(|j| sigma * mu - x[j] * z[j] - dx_a[j] * dz_a[j])
                .collect();
            let (dx, dy, dz) = direction(&r_cc, &normal);
            if dx.iter().chain(&dy).chain(&dz).any(|v| !v.is_finite()) {
                break;
            }
            let eta = (1.0 - mu).clamp(0.9, 0.999);
            let ap = (eta * max_step(&x, &dx)).min(1.0);
            let ad = (eta * max_step(&z, &dz)).min(1.0);
            for j in 0..n {
                x[j] += ap * dx[j];
                z[j] += ad * dz[j];
            }
            for (yi, d) in y.iter_mut().zip(&dy) {
                *yi += ad * d;
            }
            iterations = it + 1;
        }
        if !converged {
            log::debug!("interior point stopped after {iterations} iterations without converging");
        }
        let (x, y) = match best {
            Some((_, x, y)) => (x, y),
            None => last,
        };
        Ok(LpSolution {
            objective: dot(c, &x),
            x,
            y,
            iterations,
            converged,
        })
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(a, b)| a * b).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Largest step `t` (possibly infinite) with `v + t dv >= 0`.
fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .map(|(v, d)| -v / d)
        .fold(f64::INFINITY, f64::min)
}

/// Factorization of `A D A^T`, block rows eliminated through their diagonal.
struct NormalEquations {
    nb: usize,
    nc: usize,
    /// Columns touching each block row.
    block_cols: Vec<Vec<usize>>,
    diag: Vec<f64>,
    /// Sparse coupling-row vectors `M_CB[:, b]`.
    cross: Vec<Vec<(usize, f64)>>,
    /// Lower Cholesky factor of the Schur complement, row-major.
    chol: Vec<f64>,
}

impl NormalEquations {
    fn new(lp: &LinearProgram) -> Self {
        let nb = lp.block_rows;
        let mut block_cols = vec![Vec::new(); nb];
        for (j, blk) in lp.block.iter().enumerate() {
            if let Some((r, _)) = blk {
                block_cols[*r].push(j);
            }
        }
        let nc = lp.rows - nb;
        Self {
            nb,
            nc,
            block_cols,
            diag: vec![0.0; nb],
            cross: vec![Vec::new(); nb],
            chol: vec![0.0; nc * nc],
        }
    }

    fn factor(&mut self, lp: &LinearProgram, d: &[f64]) -> Result<()> {
        let nc = self.nc;
        let s = &mut self.chol;
        s.iter_mut().for_each(|v| *v = 0.0);
        for (j, col) in lp.coupling.iter().enumerate() {
            for &(r, a) in col {
                let da = d[j] * a;
                for &(r2, a2) in col {
                    if r2 <= r {
                        s[r * nc + r2] += da * a2;
                    }
                }
            }
        }
        let mut scratch = vec![0.0; nc];
        let mut touched: Vec<usize> = Vec::new();
        for blk in 0..self.nb {
            let mut diag = 0.0;
            touched.clear();
            for &j in &self.block_cols[blk] {
                let (_, ab) = lp.block[j].expect("block column");
                diag += d[j] * ab * ab;
                for &(r, a) in &lp.coupling[j] {
                    if scratch[r] == 0.0 {
                        touched.push(r);
                    }
                    scratch[r] += d[j] * ab * a;
                    if scratch[r] == 0.0 {
                        scratch[r] = f64::MIN_POSITIVE;
                    }
                }
            }
            if !(diag > 0.0) {
                // An empty or fully degenerate row; keep it solvable.
                diag = 1.0;
            }
            touched.sort_unstable();
            let v: Vec<(usize, f64)> = touched.iter().map(|&r| (r, scratch[r])).collect();
            for &r in &touched {
                scratch[r] = 0.0;
            }
            for &(r, vr) in &v {
                let scale = vr / diag;
                for &(r2, vr2) in &v {
                    if r2 > r {
                        break;
                    }
                    s[r * nc + r2] -= scale * vr2;
                }
            }
            self.diag[blk] = diag;
            self.cross[blk] = v;
        }
        cholesky_in_place(s, nc)
    }

    fn solve(&self, lp: &LinearProgram, rhs: &[f64]) -> Vec<f64> {
        let (nb, nc) = (self.nb, self.nc);
        let mut rc = rhs[nb..].to_vec();
        for blk in 0..nb {
            let t = rhs[blk] / self.diag[blk];
            for &(r, v) in &self.cross[blk] {
                rc[r] -= v * t;
            }
        }
        cholesky_solve(&self.chol, nc, &mut rc);
        let mut out = vec![0.0; lp.rows];
        for blk in 0..nb {
            let mut r = rhs[blk];
            for &(row, v) in &self.cross[blk] {
                r -= v * rc[row];
            }
            out[blk] = r / self.diag[blk];
        }
        out[nb..].copy_from_slice(&rc);
        out
    }
}

/// In-place lower Cholesky of a symmetric matrix stored in the lower triangle.
/// Pivots that collapse relative to the original diagonal are replaced by a
/// huge value, which effectively drops the corresponding direction.
fn cholesky_in_place(a: &mut [f64], n: usize) -> Result<()> {
    let max_diag = (0..n).map(|i| a[i * n + i].abs()).fold(0.0, f64::max);
    let tiny = 1e-30 * max_diag.max(1.0);
    for k in 0..n {
        let row_k = k * n;
        let mut pivot = a[row_k + k] - dot(&a[row_k..row_k + k], &a[row_k..row_k + k]);
        if !pivot.is_finite() {
            return Err(Error::Singular(format!("non-finite pivot at {k}")));
        }
        if pivot <= tiny {
            pivot = 1e128;
        }
        let l_kk = pivot.sqrt();
        a[row_k + k] = l_kk;
        for i in k + 1..n {
            let row_i = i * n;
            let s = a[row_i + k] - dot(&a[row_i..row_i + k], &a[row_k..row_k + k]);
            a[row_i + k] = s / l_kk;
        }
    }
    Ok(())
}

fn cholesky_solve(l: &[f64], n: usize, b: &mut [f64]) {
    for i in 0..n {
        let s = b[i] - dot(&l[i * n..i * n + i], &b[..i]);
        b[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = b[i];
        for k in i + 1..n {
            s -= l[k * n + i] * b[k];
        }
        b[i] = s / l[i * n + i];
    }
}
