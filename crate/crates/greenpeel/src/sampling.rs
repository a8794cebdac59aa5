//! Gaussian-process forcing terms and training-data quality.
//!
//! Random forcings are multivariate Gaussians on the grid: `f = L z` where
//! `L L^T` approximates the covariance induced by the chosen kernel. Draws are
//! keyed by `(master seed, stream id, index)` so that parallel consumers see
//! identical vectors in any order.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::field::{FieldRole, FieldVector};
use crate::grid::Grid;
use crate::operator::DEFAULT_DENSE_CAP;
use crate::streams::{Purpose, Streams};

/// Covariance kernel of the sampling process.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `C(x,y) = exp(-|x-y|^2 / (2 l^2))`.
    SquaredExponential { length_scale: f64 },
    /// Uncorrelated unit-variance samples (identity covariance).
    White,
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        if let KernelSpec::SquaredExponential { length_scale } = self {
            if !(length_scale.is_finite() && *length_scale > 0.0) {
                return Err(Error::Domain(format!(
                    "squared_exponential length scale must be positive and finite, got {length_scale}"
                )));
            }
        }
        Ok(())
    }

    /// Kernel value for a squared distance. Unit diagonal for both kinds.
    pub fn eval_dist2(&self, dist2: f64) -> f64 {
        match self {
            KernelSpec::SquaredExponential { length_scale } => {
                (-dist2 / (2.0 * length_scale * length_scale)).exp()
            }
            KernelSpec::White => {
                if dist2 == 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Dense covariance matrix of the kernel sampled on all grid nodes.
pub fn covariance_matrix(grid: &Grid, kernel: &KernelSpec) -> Result<DMatrix<f64>> {
    covariance_matrix_with_cap(grid, kernel, DEFAULT_DENSE_CAP)
}

pub fn covariance_matrix_with_cap(
    grid: &Grid,
    kernel: &KernelSpec,
    cap: usize,
) -> Result<DMatrix<f64>> {
    kernel.validate()?;
    let n = grid.total_nodes();
    if n > cap {
        return Err(Error::DenseCapExceeded { requested: n, cap });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| kernel.eval_dist2(grid.dist2(i, j))))
}

/// Covariance of the kernel on an explicit point set (used for per-box probes).
pub fn covariance_from_points(points: &[[f64; 3]], kernel: &KernelSpec) -> DMatrix<f64> {
    let n = points.len();
    DMatrix::from_fn(n, n, |i, j| {
        let mut d2 = 0.0;
        for axis in 0..3 {
            let d = points[i][axis] - points[j][axis];
            d2 += d * d;
        }
        kernel.eval_dist2(d2)
    })
}

/// Factored covariance `C + tau I = L L^T` with the jitter `tau` recorded.
#[derive(Debug, Clone)]
pub struct CovarianceFactor {
    l: DMatrix<f64>,
    jitter: f64,
    master_seed: u64,
}

/// Cholesky with escalating jitter: start at `jitter_start * mean(diag C)` and
/// multiply by 10 until the factorization succeeds, at most 8 escalations.
pub fn factorize(c: &DMatrix<f64>, jitter_start: f64, master_seed: u64) -> Result<CovarianceFactor> {
    let n = c.nrows();
    if n != c.ncols() {
        return Err(Error::DimensionMismatch { expected: n, got: c.ncols() });
    }
    let sym_dev = (c - c.transpose()).norm();
    if sym_dev > 1e-10 * c.norm().max(1.0) {
        return Err(Error::Domain(format!(
            "covariance must be symmetric (deviation {sym_dev:.3e})"
        )));
    }
    let mean_diag = c.diagonal().iter().sum::<f64>() / n as f64;
    let mut tau = jitter_start * mean_diag.max(f64::MIN_POSITIVE);
    const MAX_ESCALATIONS: usize = 8;
    for attempt in 0..=MAX_ESCALATIONS {
        let mut cj = c.clone();
        for i in 0..n {
            cj[(i, i)] += tau;
        }
        if let Some(chol) = nalgebra::Cholesky::new(cj) {
            return Ok(CovarianceFactor { l: chol.unpack(), jitter: tau, master_seed });
        }
        if attempt == MAX_ESCALATIONS {
            break;
        }
        tau *= 10.0;
    }
    Err(Error::CovarianceNotFactorizable { escalations: MAX_ESCALATIONS, last_jitter: tau })
}

/// Identity factor of the given size (white kernel fast path).
pub fn identity_factor(n: usize, master_seed: u64) -> CovarianceFactor {
    CovarianceFactor { l: DMatrix::identity(n, n), jitter: 0.0, master_seed }
}

impl CovarianceFactor {
    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn jitter(&self) -> f64 {
        self.jitter
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn lower(&self) -> &DMatrix<f64> {
        &self.l
    }

    /// Apply the factor to one standard normal vector.
    pub fn color(&self, z: &DVector<f64>) -> DVector<f64> {
        &self.l * z
    }

    /// `count` reproducible Gaussian draws on the stream `(seed, stream_id, j)`.
    pub fn draw(&self, count: usize, stream_id: u64) -> Vec<FieldVector> {
        let streams = Streams::new(self.master_seed);
        (0..count)
            .map(|j| {
                let z = streams.normal_vector(self.dim(), Purpose::GpDraw, 0, stream_id, j as u64);
                FieldVector { values: self.color(&z), role: FieldRole::Forcing }
            })
            .collect()
    }
}

/// Zero the vector outside the support index set.
pub fn mask(f: &FieldVector, support: &[usize]) -> FieldVector {
    let mut out = DVector::zeros(f.values.len());
    for &i in support {
        out[i] = f.values[i];
    }
    FieldVector { values: out, role: f.role }
}

/// Labeled proxy for training-data quality: how strongly the probe covariance
/// excites the dominant modes of the operator, relative to its loudest
/// direction. Not the technical quality factor of the underlying theory; the
/// method tag says so.
#[derive(Debug, Clone)]
pub struct QualityReport {
    pub k: usize,
    pub gamma_hat: f64,
    pub method: String,
    pub underflowed: bool,
}

/// `gamma_hat = lambda_min(V^T C V) / lambda_max(C)` for orthonormal `V`.
pub fn quality_proxy(c: &DMatrix<f64>, v_k: &DMatrix<f64>) -> Result<QualityReport> {
    let k = v_k.ncols();
    let gram = v_k.transpose() * v_k;
    let deviation = (&gram - DMatrix::identity(k, k)).norm();
    if deviation > 1e-10 {
        return Err(Error::NotOrthonormal { deviation, tolerance: 1e-10 });
    }
    let projected = v_k.transpose() * c * v_k;
    let lambda_min = symmetric_eigen_bounds(&projected).0;
    let lambda_max = symmetric_eigen_bounds(c).1;
    let raw = lambda_min / lambda_max;
    let underflowed = !(raw > 0.0);
    let gamma_hat = raw.clamp(f64::MIN_POSITIVE, 1.0);
    Ok(QualityReport {
        k,
        gamma_hat,
        method: "mode-aligned covariance floor (proxy, not the theoretical quality factor)".into(),
        underflowed,
    })
}

fn symmetric_eigen_bounds(m: &DMatrix<f64>) -> (f64, f64) {
    let sym = 0.5 * (m + m.transpose());
    let eig = nalgebra::SymmetricEigen::new(sym);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in eig.eigenvalues.iter() {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    (lo, hi)
}
