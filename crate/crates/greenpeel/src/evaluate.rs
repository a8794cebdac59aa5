//! Error metrics, near-field floors, and the non-hierarchical baseline.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::approx::HierarchicalApprox;
use crate::error::{Error, Result};
use crate::field::{FieldRole, FieldVector};
use crate::grid::Grid;
use crate::hier::{block_lists, BoxTree};
use crate::lowrank::orthonormal_columns;
use crate::operator::{hs_norm, op_norm_seeded};
use crate::peel::SolveOracle;
use crate::sampling::CovarianceFactor;
use crate::streams::{Purpose, Streams};

/// Errors against the dense kernel oracle, both relative to the
/// Hilbert–Schmidt norm of the truth (the bound's normalization).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ExactErrors {
    /// `hs_norm(G - A) / hs_norm(G)`.
    pub err_hs_rel: f64,
    /// `op_norm(G - A) / hs_norm(G)`.
    pub err_op_rel: f64,
}

pub fn evaluate_exact(
    approx: &HierarchicalApprox,
    kernel: &DMatrix<f64>,
    grid: &Grid,
) -> Result<ExactErrors> {
    let dense = approx.to_dense(kernel.nrows())?;
    if dense.nrows() != kernel.nrows() {
        return Err(Error::DimensionMismatch { expected: kernel.nrows(), got: dense.nrows() });
    }
    let diff = kernel - dense;
    let hs_truth = hs_norm(kernel, grid);
    if hs_truth == 0.0 {
        return Err(Error::Domain("exact kernel has zero Hilbert–Schmidt norm".into()));
    }
    Ok(ExactErrors {
        err_hs_rel: hs_norm(&diff, grid) / hs_truth,
        err_op_rel: op_norm_seeded(&diff, grid, 0) / hs_truth,
    })
}

/// Errors on a sampled test set.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledErrors {
    /// Mean of `||u - A f|| / ||f||` over the pairs.
    pub mean_ratio: f64,
    /// Max of the same ratio.
    pub max_ratio: f64,
    /// `mean_ratio` normalized by the Hilbert–Schmidt estimate.
    pub mean_rel: f64,
    /// `max_ratio` normalized likewise.
    pub max_rel: f64,
}

pub fn evaluate_sampled(
    approx: &HierarchicalApprox,
    pairs: &[(FieldVector, FieldVector)],
    hs_estimate: f64,
) -> Result<SampledErrors> {
    if pairs.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let mut mean = 0.0;
    let mut max = 0.0f64;
    for (f, u) in pairs {
        let predicted = approx.apply(&f.values)?;
        let denom = f.values.norm();
        if denom == 0.0 {
            continue;
        }
        let ratio = (&u.values - predicted).norm() / denom;
        mean += ratio;
        max = max.max(ratio);
    }
    mean /= pairs.len() as f64;
    let hs = hs_estimate.max(f64::MIN_POSITIVE);
    Ok(SampledErrors { mean_ratio: mean, max_ratio: max, mean_rel: mean / hs, max_rel: max / hs })
}

/// Error floors left by neglecting the finest-level near field, computed from
/// the dense kernel: the norms of the kernel restricted to near index pairs,
/// relative to the full Hilbert–Schmidt norm.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NearFloor {
    pub hs_frac: f64,
    pub op_frac: f64,
}

pub fn near_field_floor(kernel: &DMatrix<f64>, tree: &BoxTree) -> NearFloor {
    let grid = tree.grid();
    let lists = block_lists(tree);
    let finest = tree.depth();
    let level = tree.level(finest);
    let mut near_part = DMatrix::zeros(kernel.nrows(), kernel.ncols());
    for &(t, s) in &lists[finest].near {
        let t_nodes = level.boxes[t].node_indices(grid);
        let s_nodes = level.boxes[s].node_indices(grid);
        for &r in &t_nodes {
            for &c in &s_nodes {
                near_part[(r, c)] = kernel[(r, c)];
            }
        }
    }
    let hs_truth = hs_norm(kernel, grid);
    NearFloor {
        hs_frac: hs_norm(&near_part, grid) / hs_truth,
        op_frac: op_norm_seeded(&near_part, grid, 0) / hs_truth,
    }
}

/// Randomized trace estimate of the operator-scale Hilbert–Schmidt norm:
/// `sqrt(mean ||solve(w)||^2)` over standard normal probes. Returns the
/// estimate and the number of solves consumed.
pub fn hs_estimate_probed<O: SolveOracle + ?Sized>(
    oracle: &O,
    probes: usize,
    seed: u64,
) -> Result<(f64, u64)> {
    let streams = Streams::new(seed);
    let n = oracle.grid().total_nodes();
    let mut acc = 0.0;
    for j in 0..probes {
        let w = streams.normal_vector(n, Purpose::HsEstimate, 1, 0, j as u64);
        acc += oracle.solve(j as u64, &w)?.norm_squared();
    }
    Ok(((acc / probes as f64).sqrt(), probes as u64))
}

/// Evaluation-only test pairs drawn from the factored process.
pub fn generate_test_pairs<O: SolveOracle + ?Sized>(
    oracle: &O,
    factor: &CovarianceFactor,
    count: usize,
    seed: u64,
) -> Result<Vec<(FieldVector, FieldVector)>> {
    let streams = Streams::new(seed);
    (0..count)
        .map(|j| {
            let z = streams.normal_vector(factor.dim(), Purpose::Evaluation, 0, 0, j as u64);
            let f = factor.color(&z);
            let u = oracle.solve(j as u64, &f)?;
            Ok((
                FieldVector { values: f, role: FieldRole::Forcing },
                FieldVector { values: u, role: FieldRole::Solution },
            ))
        })
        .collect()
}

/// Global (non-hierarchical) randomized SVD of the whole operator from
/// whatever probe process the factor encodes — the data-driven contrast
/// method. Both sides of the two-sided sketch are built from solves: `budget`
/// pairs give `budget/2` range probes and `budget/2` co-range probes; the core
/// is recovered by least squares exactly as in the per-block compression.
///
/// Returns the kernel-scale dense approximation and the solves consumed.
pub fn global_rsvd_baseline<O: SolveOracle + ?Sized>(
    oracle: &O,
    budget: usize,
    factor: &CovarianceFactor,
    seed: u64,
) -> Result<(DMatrix<f64>, u64)> {
    let grid = *oracle.grid();
    let n = grid.total_nodes();
    if factor.dim() != n {
        return Err(Error::DimensionMismatch { expected: n, got: factor.dim() });
    }
    let m = (budget / 2).max(1);
    let h_pow_d = grid.cell_weight();
    let streams = Streams::new(seed);

    let draw = |side: u64, j: usize| -> DVector<f64> {
        let z = streams.normal_vector(n, Purpose::Sketch, 10 + side as u32, side, j as u64);
        factor.color(&z)
    };
    let columns: Result<Vec<(DVector<f64>, DVector<f64>, DVector<f64>, DVector<f64>)>> = (0..m)
        .into_par_iter()
        .map(|j| {
            let omega = draw(0, j);
            let psi = draw(1, j);
            let y = oracle.solve(2 * j as u64, &omega)? / h_pow_d;
            let z = oracle.solve(2 * j as u64 + 1, &psi)? / h_pow_d;
            Ok((omega, y, psi, z))
        })
        .collect();
    let columns = columns?;

    let mut omega = DMatrix::zeros(n, m);
    let mut y = DMatrix::zeros(n, m);
    let mut z = DMatrix::zeros(n, m);
    for (j, (om, yy, _psi, zz)) in columns.into_iter().enumerate() {
        omega.set_column(j, &om);
        y.set_column(j, &yy);
        z.set_column(j, &zz);
    }
    let q = orthonormal_columns(&y, 1e-13);
    let w = orthonormal_columns(&z, 1e-13);
    if q.ncols() == 0 || w.ncols() == 0 {
        return Ok((DMatrix::zeros(n, n), 2 * m as u64));
    }
    let qty = q.transpose() * &y;
    let wtom = w.transpose() * &omega;
    // core via pseudo-inverse, as in the per-block path
    let svd = wtom.svd(true, true);
    let u_s = svd.u.as_ref().expect("svd u");
    let v_t = svd.v_t.as_ref().expect("svd v_t");
    let smax = svd.singular_values.max();
    let inv = DVector::from_fn(svd.singular_values.len(), |i, _| {
        let s = svd.singular_values[i];
        if s > 1e-12 * smax {
            1.0 / s
        } else {
            0.0
        }
    });
    let pinv = v_t.transpose() * DMatrix::from_diagonal(&inv) * u_s.transpose();
    let core = &qty * pinv;
    let approx = &q * core * w.transpose();
    Ok((approx, 2 * m as u64))
}
