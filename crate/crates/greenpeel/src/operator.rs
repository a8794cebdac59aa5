//! Flux-form finite-difference discretization and the forcing→solution oracle.
//!
//! The assembled stiffness matrix is symmetric positive definite by
//! construction. In one and two dimensions it is banded with bandwidth `n^(d-1)`
//! under lexicographic ordering, so a banded Cholesky factorization gives exact
//! direct solves. In three dimensions the band becomes too wide to store and we
//! fall back to conjugate gradients driven to a 1e-11 relative residual.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::{DMatrix, DVector};

use crate::coeff::CoefficientField;
use crate::error::{Error, Result};
use crate::field::{FieldRole, FieldVector};
use crate::grid::Grid;
use crate::streams::{Purpose, Streams};

/// Default cap on the size of dense test kernels.
pub const DEFAULT_DENSE_CAP: usize = 4096;

const CG_RELATIVE_TOLERANCE: f64 = 1e-11;

/// Minimal compressed-sparse-row storage for the symmetric stencil.
#[derive(Debug, Clone)]
pub struct SparseMatrix {
    n: usize,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    data: Vec<f64>,
}

impl SparseMatrix {
    fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut indptr = Vec::with_capacity(n + 1);
        let mut indices = Vec::new();
        let mut data = Vec::new();
        indptr.push(0);
        for mut row in rows {
            row.sort_by_key(|&(j, _)| j);
            for (j, v) in row {
                indices.push(j);
                data.push(v);
            }
            indptr.push(indices.len());
        }
        Self { n, indptr, indices, data }
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn matvec(&self, x: &DVector<f64>) -> DVector<f64> {
        let mut y = DVector::zeros(self.n);
        for i in 0..self.n {
            let mut acc = 0.0;
            for k in self.indptr[i]..self.indptr[i + 1] {
                acc += self.data[k] * x[self.indices[k]];
            }
            y[i] = acc;
        }
        y
    }

    pub fn entry(&self, i: usize, j: usize) -> f64 {
        for k in self.indptr[i]..self.indptr[i + 1] {
            if self.indices[k] == j {
                return self.data[k];
            }
        }
        0.0
    }

    /// Exact entrywise symmetry check.
    pub fn is_symmetric(&self) -> bool {
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                let j = self.indices[k];
                if self.entry(j, i) != self.data[k] {
                    return false;
                }
            }
        }
        true
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for k in self.indptr[i]..self.indptr[i + 1] {
                m[(i, self.indices[k])] = self.data[k];
            }
        }
        m
    }
}

/// Lower-band Cholesky factor: `bands[b][i] = L[i + b, i]` for `b <= bw`.
#[derive(Debug, Clone)]
struct BandCholesky {
    n: usize,
    bw: usize,
    bands: Vec<Vec<f64>>,
}

impl BandCholesky {
    fn factor(matrix: &SparseMatrix, bw: usize) -> Result<Self> {
        let n = matrix.nrows();
        let mut bands = vec![vec![0.0; n]; bw + 1];
        for i in 0..n {
            for k in matrix.indptr[i]..matrix.indptr[i + 1] {
                let j = matrix.indices[k];
                if j <= i {
                    bands[i - j][j] = matrix.data[k];
                }
            }
        }
        // in-place banded Cholesky
        for j in 0..n {
            let mut diag = bands[0][j];
            let start = j.saturating_sub(bw);
            for k in start..j {
                let l_jk = bands[j - k][k];
                diag -= l_jk * l_jk;
            }
            if diag <= 0.0 || !diag.is_finite() {
                return Err(Error::NotPositiveDefinite { pivot: j });
            }
            let l_jj = diag.sqrt();
            bands[0][j] = l_jj;
            let end = (j + bw + 1).min(n);
            for i in (j + 1)..end {
                let mut v = bands[i - j][j];
                let start_k = i.saturating_sub(bw).max(start);
                for k in start_k..j {
                    v -= bands[i - k][k] * bands[j - k][k];
                }
                bands[i - j][j] = v / l_jj;
            }
        }
        Ok(Self { n, bw, bands })
    }

    fn solve(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let mut y = rhs.clone();
        // forward: L y = rhs
        for i in 0..self.n {
            let start = i.saturating_sub(self.bw);
            let mut v = y[i];
            for j in start..i {
                v -= self.bands[i - j][j] * y[j];
            }
            y[i] = v / self.bands[0][i];
        }
        // backward: L^T x = y
        for i in (0..self.n).rev() {
            let end = (i + self.bw + 1).min(self.n);
            let mut v = y[i];
            for j in (i + 1)..end {
                v -= self.bands[j - i][i] * y[j];
            }
            y[i] = v / self.bands[0][i];
        }
        y
    }
}

#[derive(Debug, Clone)]
enum Factorization {
    Band(BandCholesky),
    ConjugateGradient,
}

/// The "unknown PDE" black box: maps a forcing vector to the solution vector
/// of the discretized problem, counting every solve.
#[derive(Debug)]
pub struct DiscreteOperator {
    grid: Grid,
    stencil: SparseMatrix,
    factorization: Factorization,
    solves: AtomicU64,
}

/// Assemble the flux-form stencil for `-div(a grad u)` with zero Dirichlet
/// boundary values.
pub fn assemble(grid: &Grid, coeff: &CoefficientField) -> Result<DiscreteOperator> {
    coeff.validate(grid)?;
    let n = grid.points_per_dim();
    let total = grid.total_nodes();
    let h2 = grid.spacing() * grid.spacing();
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::with_capacity(2 * grid.dimension() + 1); total];
    for idx in 0..total {
        let m = grid.multi_index(idx);
        let mut diag = 0.0;
        for axis in 0..grid.dimension() {
            let a_minus = coeff.flux_value(grid, idx, axis, false);
            let a_plus = coeff.flux_value(grid, idx, axis, true);
            diag += (a_minus + a_plus) / h2;
            if m[axis] > 0 {
                let mut mm = m;
                mm[axis] -= 1;
                rows[idx].push((grid.node_index(mm), -a_minus / h2));
            }
            if m[axis] + 1 < n {
                let mut mm = m;
                mm[axis] += 1;
                rows[idx].push((grid.node_index(mm), -a_plus / h2));
            }
        }
        rows[idx].push((idx, diag));
    }
    let stencil = SparseMatrix::from_rows(rows);
    debug_assert!(stencil.is_symmetric());

    let factorization = if grid.dimension() <= 2 {
        let bw = if grid.dimension() == 1 { 1 } else { n };
        Factorization::Band(BandCholesky::factor(&stencil, bw)?)
    } else {
        Factorization::ConjugateGradient
    };
    Ok(DiscreteOperator { grid: *grid, stencil, factorization, solves: AtomicU64::new(0) })
}

impl DiscreteOperator {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn stencil(&self) -> &SparseMatrix {
        &self.stencil
    }

    /// Number of forcing→solution applications performed so far.
    pub fn solve_count(&self) -> u64 {
        self.solves.load(Ordering::Relaxed)
    }

    pub(crate) fn bump_solve_counter(&self) {
        self.solves.fetch_add(1, Ordering::Relaxed);
    }

    /// Apply the stiffness matrix (no counting; this is the forward map).
    pub fn apply_stiffness(&self, u: &DVector<f64>) -> DVector<f64> {
        self.stencil.matvec(u)
    }

    /// Solve `K u = f`. Each call counts as one consumed training pair.
    pub fn solve(&self, f: &FieldVector) -> Result<FieldVector> {
        f.check_grid(&self.grid)?;
        let u = self.solve_raw(&f.values)?;
        self.solves.fetch_add(1, Ordering::Relaxed);
        Ok(FieldVector { values: u, role: FieldRole::Solution })
    }

    /// Solve without touching the counter (internal and test-oracle use).
    pub fn solve_raw(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        if f.len() != self.grid.total_nodes() {
            return Err(Error::DimensionMismatch { expected: self.grid.total_nodes(), got: f.len() });
        }
        match &self.factorization {
            Factorization::Band(chol) => Ok(chol.solve(f)),
            Factorization::ConjugateGradient => self.solve_cg(f),
        }
    }

    fn solve_cg(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        let norm_f = f.norm();
        if norm_f == 0.0 {
            return Ok(DVector::zeros(f.len()));
        }
        let mut x = DVector::zeros(f.len());
        let mut r = f.clone();
        // Jacobi preconditioner
        let inv_diag: Vec<f64> = (0..f.len()).map(|i| 1.0 / self.stencil.entry(i, i)).collect();
        let mut z = DVector::from_fn(f.len(), |i, _| r[i] * inv_diag[i]);
        let mut p = z.clone();
        let mut rz = r.dot(&z);
        let max_iters = 20 * f.len() + 100;
        for it in 0..max_iters {
            let ap = self.stencil.matvec(&p);
            let alpha = rz / p.dot(&ap);
            x += alpha * &p;
            r -= alpha * &ap;
            let res = r.norm() / norm_f;
            if res <= CG_RELATIVE_TOLERANCE {
                return Ok(x);
            }
            z = DVector::from_fn(f.len(), |i, _| r[i] * inv_diag[i]);
            let rz_new = r.dot(&z);
            let beta = rz_new / rz;
            rz = rz_new;
            p = &z + beta * &p;
            if it + 1 == max_iters {
                return Err(Error::SolverFailure { residual: res, iterations: max_iters });
            }
        }
        unreachable!()
    }

    /// Dense kernel samples `Ghat = K^{-1} / h^d`, so that `u = h^d Ghat f`.
    /// Restricted to small grids; this is a test and evaluation oracle.
    pub fn dense_kernel(&self) -> Result<DMatrix<f64>> {
        self.dense_kernel_with_cap(DEFAULT_DENSE_CAP)
    }

    pub fn dense_kernel_with_cap(&self, cap: usize) -> Result<DMatrix<f64>> {
        let n = self.grid.total_nodes();
        if n > cap {
            return Err(Error::DenseCapExceeded { requested: n, cap });
        }
        let scale = 1.0 / self.grid.cell_weight();
        let mut out = DMatrix::zeros(n, n);
        let mut e = DVector::zeros(n);
        for j in 0..n {
            e[j] = 1.0;
            let col = self.solve_raw(&e)?;
            e[j] = 0.0;
            for i in 0..n {
                out[(i, j)] = col[i] * scale;
            }
        }
        Ok(out)
    }
}

/// Discrete Hilbert–Schmidt norm: `h^d` times the Frobenius norm of the kernel
/// samples, a quadrature of the squared kernel over the product domain.
pub fn hs_norm(kernel: &DMatrix<f64>, grid: &Grid) -> f64 {
    grid.cell_weight() * kernel.norm()
}

/// Discrete L2→L2 operator norm: `h^d` times the spectral norm, computed by
/// seeded power iteration on `K^T K` to 1e-8 relative accuracy.
pub fn op_norm(kernel: &DMatrix<f64>, grid: &Grid) -> f64 {
    op_norm_seeded(kernel, grid, 0)
}

pub fn op_norm_seeded(kernel: &DMatrix<f64>, grid: &Grid, seed: u64) -> f64 {
    let n = kernel.ncols();
    if n == 0 || kernel.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let streams = Streams::new(seed);
    let mut v = streams.normal_vector(n, Purpose::PowerIteration, 0, 0, 0);
    v /= v.norm();
    let mut sigma = 0.0f64;
    for _ in 0..1000 {
        let w = kernel * &v;
        let mut z = kernel.transpose() * w;
        let norm = z.norm();
        if norm == 0.0 {
            return 0.0;
        }
        z /= norm;
        let sigma_new = norm.sqrt();
        let rel = (sigma_new - sigma).abs() / sigma_new.max(f64::MIN_POSITIVE);
        v = z;
        sigma = sigma_new;
        if rel <= 1e-8 {
            break;
        }
    }
    grid.cell_weight() * sigma
}
