//! Sparse matrices in CSR form, a sparse direct solve, ILU(0) and
//! preconditioned BiCGSTAB.

use faer::prelude::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::Col;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
}

/// Assembles a CSR matrix one row at a time; duplicate columns in a row
/// are summed.
#[derive(Debug, Clone)]
pub struct CsrBuilder {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    row: Vec<(usize, f64)>,
}

impl CsrBuilder {
    pub fn new(n: usize, nnz_hint: usize) -> Self {
        let mut row_ptr = Vec::with_capacity(n + 1);
        row_ptr.push(0);
        Self {
            n,
            row_ptr,
            cols: Vec::with_capacity(nnz_hint),
            vals: Vec::with_capacity(nnz_hint),
            row: Vec::with_capacity(8),
        }
    }

    pub fn add(&mut self, col: usize, val: f64) {
        self.row.push((col, val));
    }

    pub fn finish_row(&mut self) {
        self.row.sort_unstable_by_key(|e| e.0);
        let mut last = usize::MAX;
        for &(c, v) in &self.row {
            if c == last {
                *self.vals.last_mut().expect("row has an entry") += v;
            } else {
                self.cols.push(c);
                self.vals.push(v);
                last = c;
            }
        }
        self.row.clear();
        self.row_ptr.push(self.cols.len());
    }

    pub fn build(self) -> CsrMatrix {
        assert_eq!(self.row_ptr.len(), self.n + 1, "every row must be finished");
        CsrMatrix {
            n: self.n,
            row_ptr: self.row_ptr,
            cols: self.cols,
            vals: self.vals,
        }
    }
}

impl CsrMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(self.vals[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.row(i).find(|e| e.0 == j).map_or(0.0, |e| e.1)
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n {
            let mut s = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                s += self.vals[k] * x[self.cols[k]];
            }
            y[i] = s;
        }
    }

    /// `b - A x`.
    pub fn residual(&self, x: &[f64], b: &[f64]) -> Vec<f64> {
        let mut r = vec![0.0; self.n];
        self.matvec(x, &mut r);
        for (ri, bi) in r.iter_mut().zip(b) {
            *ri = bi - *ri;
        }
        r
    }
}

/// Incomplete LU factorisation with the sparsity pattern of `A`.
#[derive(Debug, Clone)]
pub struct Ilu0 {
    lu: CsrMatrix,
    diag: Vec<usize>,
}

impl Ilu0 {
    pub fn new(a: &CsrMatrix) -> Result<Self> {
        let mut lu = a.clone();
        let n = lu.n;
        let mut diag = vec![usize::MAX; n];
        for (i, d) in diag.iter_mut().enumerate() {
            for k in lu.row_ptr[i]..lu.row_ptr[i + 1] {
                if lu.cols[k] == i {
                    *d = k;
                }
            }
            if *d == usize::MAX {
                return Err(Error::InvalidParameter(format!("row {i} has no diagonal entry")));
            }
        }
        let mut pos = vec![usize::MAX; n];
        for i in 0..n {
            let (start, end) = (lu.row_ptr[i], lu.row_ptr[i + 1]);
            for k in start..end {
                pos[lu.cols[k]] = k;
            }
            for k in start..end {
                let j = lu.cols[k];
                if j >= i {
                    break;
                }
                let pivot = lu.vals[diag[j]];
                if pivot == 0.0 {
                    return Err(Error::InvalidParameter(format!("zero pivot in row {j}")));
                }
                let m = lu.vals[k] / pivot;
                lu.vals[k] = m;
                for kk in (diag[j] + 1)..lu.row_ptr[j + 1] {
                    let p = pos[lu.cols[kk]];
                    if p != usize::MAX {
                        lu.vals[p] -= m * lu.vals[kk];
                    }
                }
            }
            for k in start..end {
                pos[lu.cols[k]] = usize::MAX;
            }
        }
        Ok(Self { lu, diag })
    }

    /// Solve `L U z = r` in place.
    pub fn apply(&self, z: &mut [f64]) {
        let lu = &self.lu;
        for i in 0..lu.n {
            let mut s = z[i];
            for k in lu.row_ptr[i]..self.diag[i] {
                s -= lu.vals[k] * z[lu.cols[k]];
            }
            z[i] = s;
        }
        for i in (0..lu.n).rev() {
            let mut s = z[i];
            for k in (self.diag[i] + 1)..lu.row_ptr[i + 1] {
                s -= lu.vals[k] * z[lu.cols[k]];
            }
            z[i] = s / lu.vals[self.diag[i]];
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolverMethod {
    /// Sparse LU with iterative refinement.
    SparseLu,
    /// ILU(0)-preconditioned BiCGSTAB.
    Bicgstab,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub method: SolverMethod,
    pub rel_tol: f64,
    /// Krylov iterations, or refinement sweeps for the direct method.
    pub max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            method: SolverMethod::SparseLu,
            rel_tol: 1e-10,
            max_iter: 20_000,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    /// Final `||b - A x|| / ||b||`, recomputed from scratch.
    pub rel_residual: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Right-preconditioned BiCGSTAB from the initial guess in `x`.
/// Restarts from the current iterate on breakdown.
pub fn bicgstab(a: &CsrMatrix, b: &[f64], x: &mut [f64], pc: &Ilu0, opts: SolverOptions) -> Result<SolveStats> {
    let n = a.n();
    let bnorm = norm(b);
    if bnorm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return Ok(SolveStats {
            iterations: 0,
            rel_residual: 0.0,
        });
    }
    let target = opts.rel_tol * bnorm;
    let mut it = 0;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = vec![0.0; n];
    let mut s = vec![0.0; n];
    let mut shat = vec![0.0; n];
    let mut t = vec![0.0; n];
    'restart: while it < opts.max_iter {
        let mut r = a.residual(x, b);
        if norm(&r) <= target {
            break;
        }
        let r0 = r.clone();
        let (mut rho, mut alpha, mut omega) = (1.0, 1.0, 1.0);
        v.iter_mut().for_each(|e| *e = 0.0);
        p.iter_mut().for_each(|e| *e = 0.0);
        while it < opts.max_iter {
            it += 1;
            let rho_new = dot(&r0, &r);
            if rho_new.abs() < 1e-300 || omega == 0.0 {
                continue 'restart;
            }
            let beta = (rho_new / rho) * (alpha / omega);
            rho = rho_new;
            for i in 0..n {
                p[i] = r[i] + beta * (p[i] - omega * v[i]);
            }
            phat.copy_from_slice(&p);
            pc.apply(&mut phat);
            a.matvec(&phat, &mut v);
            let den = dot(&r0, &v);
            if den == 0.0 {
                continue 'restart;
            }
            alpha = rho / den;
            for i in 0..n {
                s[i] = r[i] - alpha * v[i];
            }
            if norm(&s) <= target {
                for i in 0..n {
                    x[i] += alpha * phat[i];
                }
                break 'restart;
            }
            shat.copy_from_slice(&s);
            pc.apply(&mut shat);
            a.matvec(&shat, &mut t);
            let tt = dot(&t, &t);
            omega = if tt > 0.0 { dot(&t, &s) / tt } else { 0.0 };
            for i in 0..n {
                x[i] += alpha * phat[i] + omega * shat[i];
                r[i] = s[i] - omega * t[i];
            }
            if norm(&r) <= target {
                break 'restart;
            }
        }
    }
    let rel = norm(&a.residual(x, b)) / bnorm;
    // the recursive residual may drift from the true one
    if rel <= opts.rel_tol * 10.0 {
        Ok(SolveStats {
            iterations: it,
            rel_residual: rel,
        })
    } else {
        Err(Error::NonConvergence {
            iterations: it,
            residual: rel,
        })
    }
}

/// Sparse LU of `a`, refined until the true relative residual is below
/// `rel_tol` or `max_iter` sweeps have been made.
pub fn direct_solve(a: &CsrMatrix, b: &[f64], opts: SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    let n = a.n();
    let trip: Vec<Triplet<usize, usize, f64>> = (0..n)
        .flat_map(|i| a.row(i).map(move |(j, v)| Triplet::new(i, j, v)))
        .collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &trip)
        .map_err(|e| Error::InvalidParameter(format!("sparse matrix assembly failed: {e:?}")))?;
    let lu = mat.sp_lu().map_err(|e| Error::Factorization(format!("{e:?}")))?;
    let bnorm = norm(b);
    let mut x = vec![0.0; n];
    if bnorm == 0.0 {
        return Ok((
            x,
            SolveStats {
                iterations: 0,
                rel_residual: 0.0,
            },
        ));
    }
    let mut r = b.to_vec();
    let mut rel = 1.0;
    let mut sweeps = 0;
    while sweeps < opts.max_iter.max(1) {
        sweeps += 1;
        let dx = lu.solve(Col::<f64>::from_fn(n, |i| r[i]));
        for (xi, d) in x.iter_mut().zip(dx.iter()) {
            *xi += d;
        }
        r = a.residual(&x, b);
        let next = norm(&r) / bnorm;
        let stalled = next > 0.5 * rel;
        rel = next;
        if rel <= opts.rel_tol || (stalled && sweeps > 1) {
            break;
        }
    }
    if rel <= opts.rel_tol * 10.0 {
        Ok((
            x,
            SolveStats {
                iterations: sweeps,
                rel_residual: rel,
            },
        ))
    } else {
        Err(Error::NonConvergence {
            iterations: sweeps,
            residual: rel,
        })
    }
}

/// Solve `A x = b` from a zero guess with the configured method.
pub fn solve(a: &CsrMatrix, b: &[f64], opts: SolverOptions) -> Result<(Vec<f64>, SolveStats)> {
    match opts.method {
        SolverMethod::SparseLu => direct_solve(a, b, opts),
        SolverMethod::Bicgstab => {
            let pc = Ilu0::new(a)?;
            let mut x = vec![0.0; a.n()];
            let stats = bicgstab(a, b, &mut x, &pc, opts)?;
            Ok((x, stats))
        }
    }
}
