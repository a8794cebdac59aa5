//! Randomized low-rank factorization of operator blocks.
//!
//! A block is only reachable through applications: `apply` maps a vector on
//! the source indices to the response on the target indices, `apply_transpose`
//! the reverse. The range is captured by probing with random vectors (standard
//! normal or Gaussian-process distributed), orthonormalizing the images, and
//! projecting; rank is either fixed or grown until a posterior randomized
//! residual estimate meets the requested tolerance.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::sampling::CovarianceFactor;
use crate::streams::{Purpose, Streams};

/// Relative pivot cutoff when orthonormalizing sketches.
const ORTH_REL_TOL: f64 = 1e-13;
/// Relative singular-value cutoff in pseudo-inverses.
const PINV_REL_TOL: f64 = 1e-12;

/// Low-rank factors `U diag(s) V^T` of one block.
#[derive(Debug, Clone, PartialEq)]
pub struct LowRankBlock {
    pub target_box: usize,
    pub source_box: usize,
    /// Orthonormal columns spanning the block's column space (rows x k).
    pub u: DMatrix<f64>,
    /// Nonincreasing, nonnegative singular values.
    pub s: DVector<f64>,
    /// Orthonormal columns spanning the row space (cols x k).
    pub v: DMatrix<f64>,
}

impl LowRankBlock {
    pub fn empty(target_box: usize, source_box: usize, rows: usize, cols: usize) -> Self {
        Self {
            target_box,
            source_box,
            u: DMatrix::zeros(rows, 0),
            s: DVector::zeros(0),
            v: DMatrix::zeros(cols, 0),
        }
    }

    pub fn rank(&self) -> usize {
        self.s.len()
    }

    pub fn rows(&self) -> usize {
        self.u.nrows()
    }

    pub fn cols(&self) -> usize {
        self.v.nrows()
    }

    /// `U diag(s) V^T x`.
    pub fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        assert_eq!(x.len(), self.cols(), "apply: dimension mismatch");
        if self.rank() == 0 {
            return DVector::zeros(self.rows());
        }
        let mut t = self.v.transpose() * x;
        t.component_mul_assign(&self.s);
        &self.u * t
    }

    /// `V diag(s) U^T y`.
    pub fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        assert_eq!(y.len(), self.rows(), "apply_transpose: dimension mismatch");
        if self.rank() == 0 {
            return DVector::zeros(self.cols());
        }
        let mut t = self.u.transpose() * y;
        t.component_mul_assign(&self.s);
        &self.v * t
    }

    /// Frobenius norm, `||s||_2`.
    pub fn frob(&self) -> f64 {
        self.s.norm()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        if self.rank() == 0 {
            return DMatrix::zeros(self.rows(), self.cols());
        }
        &self.u * DMatrix::from_diagonal(&self.s) * self.v.transpose()
    }

    /// Truncate to the leading `k` singular values.
    pub fn truncated(&self, k: usize) -> Self {
        let k = k.min(self.rank());
        Self {
            target_box: self.target_box,
            source_box: self.source_box,
            u: self.u.columns(0, k).into_owned(),
            s: DVector::from_fn(k, |i, _| self.s[i]),
            v: self.v.columns(0, k).into_owned(),
        }
    }

    /// Largest deviation of `U^T U` and `V^T V` from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let k = self.rank();
        if k == 0 {
            return 0.0;
        }
        let du = (self.u.transpose() * &self.u - DMatrix::identity(k, k)).amax();
        let dv = (self.v.transpose() * &self.v - DMatrix::identity(k, k)).amax();
        du.max(dv)
    }
}

/// How an oracle draws its probes.
#[derive(Debug, Clone)]
pub enum ProbeDistribution {
    StandardNormal,
    /// Gaussian-process colored probes; the factor dimension must equal the
    /// block's column count.
    Gp(Arc<CovarianceFactor>),
}

/// Access to a linear block through applications and a probe supply.
pub trait BlockOracle {
    fn rows(&self) -> usize;
    fn cols(&self) -> usize;
    fn apply(&self, x: &DVector<f64>) -> DVector<f64>;
    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64>;
    /// Sketch probe number `j` (deterministic per oracle).
    fn probe(&self, j: u64) -> DVector<f64>;
    /// Posterior probe number `j`, from a stream disjoint from `probe`.
    fn posterior_probe(&self, j: u64) -> DVector<f64>;
}

/// Dense-matrix-backed oracle for tests, fixtures and the global baseline.
#[derive(Debug, Clone)]
pub struct DenseOracle {
    pub matrix: DMatrix<f64>,
    streams: Streams,
    stream_id: u64,
    distribution: ProbeDistribution,
}

impl DenseOracle {
    pub fn new(matrix: DMatrix<f64>, seed: u64) -> Self {
        Self {
            matrix,
            streams: Streams::new(seed),
            stream_id: 0,
            distribution: ProbeDistribution::StandardNormal,
        }
    }

    pub fn with_distribution(mut self, distribution: ProbeDistribution) -> Self {
        self.distribution = distribution;
        self
    }

    pub fn with_stream_id(mut self, id: u64) -> Self {
        self.stream_id = id;
        self
    }

    fn draw(&self, purpose: Purpose, j: u64) -> DVector<f64> {
        let z = self.streams.normal_vector(self.cols(), purpose, 0, self.stream_id, j);
        match &self.distribution {
            ProbeDistribution::StandardNormal => z,
            ProbeDistribution::Gp(factor) => factor.color(&z),
        }
    }
}

impl BlockOracle for DenseOracle {
    fn rows(&self) -> usize {
        self.matrix.nrows()
    }

    fn cols(&self) -> usize {
        self.matrix.ncols()
    }

    fn apply(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.matrix * x
    }

    fn apply_transpose(&self, y: &DVector<f64>) -> DVector<f64> {
        self.matrix.transpose() * y
    }

    fn probe(&self, j: u64) -> DVector<f64> {
        self.draw(Purpose::Sketch, j)
    }

    fn posterior_probe(&self, j: u64) -> DVector<f64> {
        self.draw(Purpose::Posterior, j)
    }
}

/// Orthonormal basis of the numerical column space via pivoted QR; columns
/// whose pivot falls below `rel_tol` times the leading pivot are dropped. A
/// zero input yields a 0-column basis.
pub fn orthonormal_columns(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.ncols() == 0 || m.nrows() == 0 {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let qr = m.clone().col_piv_qr();
    let q = qr.q();
    let r = qr.r();
    let lead = r[(0, 0)].abs();
    if lead == 0.0 || !lead.is_finite() {
        return DMatrix::zeros(m.nrows(), 0);
    }
    let mut rank = 0;
    for i in 0..r.nrows().min(r.ncols()) {
        if r[(i, i)].abs() > rel_tol * lead {
            rank = i + 1;
        }
    }
    q.columns(0, rank).into_owned()
}

/// Moore–Penrose pseudo-inverse with relative truncation.
fn pinv(m: &DMatrix<f64>, rel_tol: f64) -> DMatrix<f64> {
    if m.nrows() == 0 || m.ncols() == 0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let svd = m.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(m.ncols(), m.nrows());
    }
    let inv = DVector::from_fn(svd.singular_values.len(), |i, _| {
        let s = svd.singular_values[i];
        if s > rel_tol * smax {
            1.0 / s
        } else {
            0.0
        }
    });
    v_t.transpose() * DMatrix::from_diagonal(&inv) * u.transpose()
}

/// Stage one of the randomized SVD: probe with `k + p` vectors and
/// orthonormalize the images. Breakdown (zero sketch) returns an empty basis.
pub fn range_finder<O: BlockOracle + ?Sized>(oracle: &O, k: usize, p: usize) -> DMatrix<f64> {
    let m = k + p;
    let mut sketch = DMatrix::zeros(oracle.rows(), m);
    for j in 0..m {
        let img = oracle.apply(&oracle.probe(j as u64));
        sketch.set_column(j, &img);
    }
    orthonormal_columns(&sketch, ORTH_REL_TOL)
}

/// Stage two: project onto the captured range. `B = Q^T A` is assembled by
/// applying the transpose to Q's columns; its small SVD yields the factors,
/// truncated to rank `k`.
pub fn truncated_svd_from_range<O: BlockOracle + ?Sized>(
    oracle: &O,
    q: &DMatrix<f64>,
    k: usize,
) -> LowRankBlock {
    let (rows, cols) = (oracle.rows(), oracle.cols());
    if q.ncols() == 0 || k == 0 {
        return LowRankBlock::empty(0, 0, rows, cols);
    }
    let mut b = DMatrix::zeros(q.ncols(), cols);
    for i in 0..q.ncols() {
        let bt = oracle.apply_transpose(&q.column(i).into_owned());
        b.set_row(i, &bt.transpose());
    }
    svd_of_projected(q, &b, k, 0, 0)
}

/// SVD of `A ~ Q B` given the small matrix `B = Q^T A`.
fn svd_of_projected(
    q: &DMatrix<f64>,
    b: &DMatrix<f64>,
    k: usize,
    target_box: usize,
    source_box: usize,
) -> LowRankBlock {
    let svd = b.clone().svd(true, true);
    let ub = svd.u.as_ref().expect("svd with u");
    let vtb = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.max();
    let mut keep = 0;
    for i in 0..svd.singular_values.len() {
        if svd.singular_values[i] > 1e-14 * smax && keep < k {
            keep += 1;
        }
    }
    let u = q * ub.columns(0, keep);
    let s = DVector::from_fn(keep, |i, _| svd.singular_values[i]);
    let v = vtb.rows(0, keep).transpose().into_owned();
    LowRankBlock { target_box, source_box, u, s, v }
}

/// Outcome of an adaptive factorization.
#[derive(Debug, Clone)]
pub struct AdaptiveOutcome {
    pub block: LowRankBlock,
    /// Posterior randomized residual estimate of the returned block.
    pub estimate: f64,
    /// Whether the estimate met the requested tolerance before `k_max`.
    pub met_tolerance: bool,
    pub tried_ranks: Vec<usize>,
}

/// Randomized residual estimate: worst response mismatch over fresh probes.
pub fn posterior_estimate(
    block: &LowRankBlock,
    probes: &DMatrix<f64>,
    responses: &DMatrix<f64>,
) -> f64 {
    let mut worst = 0.0f64;
    for j in 0..probes.ncols() {
        let w = probes.column(j).into_owned();
        let norm = w.norm();
        if norm == 0.0 {
            continue;
        }
        let predicted = block.apply(&w);
        let diff = responses.column(j) - predicted;
        worst = worst.max(diff.norm() / norm);
    }
    worst
}

/// Grow the rank in steps of `k_step` until the posterior estimate over 10
/// fresh probes drops to `tol`; returns the smallest tried rank that made it,
/// or the best block flagged as not meeting the tolerance.
pub fn rsvd_adaptive<O: BlockOracle + ?Sized>(
    oracle: &O,
    tol: f64,
    k_max: usize,
    k_step: usize,
    oversampling: usize,
) -> AdaptiveOutcome {
    assert!(tol > 0.0, "tolerance must be positive");
    let k_step = k_step.max(1);
    let q_probes = 10usize;
    let mut post_probes = DMatrix::zeros(oracle.cols(), q_probes);
    let mut post_images = DMatrix::zeros(oracle.rows(), q_probes);
    for j in 0..q_probes {
        let w = oracle.posterior_probe(j as u64);
        post_images.set_column(j, &oracle.apply(&w));
        post_probes.set_column(j, &w);
    }

    let dim_cap = oracle.rows().min(oracle.cols());
    let k_max = k_max.min(dim_cap).max(1);
    let mut sketch = DMatrix::<f64>::zeros(oracle.rows(), 0);
    let mut drawn = 0usize;
    let mut tried_ranks = Vec::new();
    let mut best: Option<(LowRankBlock, f64)> = None;

    let mut k_try = k_step.min(k_max);
    loop {
        let want = (k_try + oversampling).min(dim_cap.max(1));
        while drawn < want {
            let img = oracle.apply(&oracle.probe(drawn as u64));
            let cols = sketch.ncols();
            sketch = sketch.insert_column(cols, 0.0);
            sketch.set_column(drawn, &img);
            drawn += 1;
        }
        let q = orthonormal_columns(&sketch, ORTH_REL_TOL);
        let block = truncated_svd_from_range(oracle, &q, k_try);
        let estimate = posterior_estimate(&block, &post_probes, &post_images);
        tried_ranks.push(k_try);
        let better = best.as_ref().map(|(_, e)| estimate < *e).unwrap_or(true);
        if better {
            best = Some((block, estimate));
        }
        if estimate <= tol {
            let (block, estimate) = best.unwrap();
            return AdaptiveOutcome { block, estimate, met_tolerance: true, tried_ranks };
        }
        if k_try >= k_max {
            let (block, estimate) = best.unwrap();
            return AdaptiveOutcome { block, estimate, met_tolerance: false, tried_ranks };
        }
        k_try = (k_try + k_step).min(k_max);
    }
}

/// Both-sided sketch of one block, harvested from shared probing passes.
///
/// `images_tgt = A omega` for source probes `probes_src`, and `images_src`
/// collects `A^T psi` for the target-side probes `probes_tgt`. Posterior
/// columns are fresh draws reserved for error estimation.
#[derive(Debug, Clone)]
pub struct TwoSidedSketch {
    pub target_box: usize,
    pub source_box: usize,
    pub probes_src: DMatrix<f64>,
    pub images_tgt: DMatrix<f64>,
    pub probes_tgt: DMatrix<f64>,
    pub images_src: DMatrix<f64>,
    pub posterior_probes: DMatrix<f64>,
    pub posterior_images: DMatrix<f64>,
}

/// Rank policy for sketch compression.
#[derive(Debug, Clone, Copy)]
pub enum CompressionMode {
    FixedRank(usize),
    Adaptive { tol: f64, k_max: usize, k_step: usize },
}

/// Factor a block from its two-sided sketch without further applications.
///
/// Column space from `images_tgt`, row space from `images_src`; the core is
/// recovered by least squares from `Q^T Y = M (W^T Omega)`, which is exact
/// whenever the true rank is within the probe budget.
pub fn compress_two_sided(sketch: &TwoSidedSketch, mode: CompressionMode) -> AdaptiveOutcome {
    let rows = sketch.images_tgt.nrows();
    let cols = sketch.images_src.nrows();
    let q = orthonormal_columns(&sketch.images_tgt, ORTH_REL_TOL);
    let w = orthonormal_columns(&sketch.images_src, ORTH_REL_TOL);
    let empty = LowRankBlock::empty(sketch.target_box, sketch.source_box, rows, cols);
    if q.ncols() == 0 || w.ncols() == 0 {
        let estimate =
            posterior_estimate(&empty, &sketch.posterior_probes, &sketch.posterior_images);
        let met = match mode {
            CompressionMode::FixedRank(_) => true,
            CompressionMode::Adaptive { tol, .. } => estimate <= tol,
        };
        return AdaptiveOutcome {
            block: empty,
            estimate,
            met_tolerance: met,
            tried_ranks: vec![0],
        };
    }
    let qty = q.transpose() * &sketch.images_tgt;
    let wtom = w.transpose() * &sketch.probes_src;
    let core = &qty * pinv(&wtom, PINV_REL_TOL);
    let svd = core.svd(true, true);
    let ub = svd.u.as_ref().expect("svd with u");
    let vtb = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.max();
    let mut available = 0;
    for i in 0..svd.singular_values.len() {
        if svd.singular_values[i] > 1e-14 * smax {
            available = i + 1;
        }
    }
    let full = LowRankBlock {
        target_box: sketch.target_box,
        source_box: sketch.source_box,
        u: &q * ub.columns(0, available),
        s: DVector::from_fn(available, |i, _| svd.singular_values[i]),
        v: &w * vtb.rows(0, available).transpose(),
    };

    match mode {
        CompressionMode::FixedRank(k) => {
            let block = full.truncated(k);
            let estimate =
                posterior_estimate(&block, &sketch.posterior_probes, &sketch.posterior_images);
            AdaptiveOutcome {
                block,
                estimate,
                met_tolerance: true,
                tried_ranks: vec![k.min(available)],
            }
        }
        CompressionMode::Adaptive { tol, k_max, k_step } => {
            let k_step = k_step.max(1);
            let mut tried_ranks = Vec::new();
            let mut k_try = k_step.min(k_max.max(1));
            let mut best: Option<(LowRankBlock, f64)> = None;
            loop {
                let block = full.truncated(k_try);
                let estimate =
                    posterior_estimate(&block, &sketch.posterior_probes, &sketch.posterior_images);
                tried_ranks.push(k_try);
                let better = best.as_ref().map(|(_, e)| estimate < *e).unwrap_or(true);
                if better {
                    best = Some((block, estimate));
                }
                if estimate <= tol {
                    let (block, estimate) = best.unwrap();
                    return AdaptiveOutcome { block, estimate, met_tolerance: true, tried_ranks };
                }
                if k_try >= k_max || k_try >= available {
                    let (block, estimate) = best.unwrap();
                    return AdaptiveOutcome { block, estimate, met_tolerance: false, tried_ranks };
                }
                k_try = (k_try + k_step).min(k_max);
            }
        }
    }
}
