//! Solve oracles beyond the finite-difference operator: analytic and synthetic
//! fixtures, and a recording wrapper that captures training sets.

use std::sync::Mutex;

use nalgebra::{DMatrix, DVector};

use crate::approx::{HierarchicalApprox, NearField};
use crate::error::{Error, Result};
use crate::field::{FieldRole, FieldVector};
use crate::grid::Grid;
use crate::hier::{block_lists, BoxTree};
use crate::lowrank::{orthonormal_columns, LowRankBlock};
use crate::streams::{Purpose, Streams};

use super::passive::{Provenance, ProvenanceSource, TrainingSet};
use super::{PeelConfig, SolveOracle};

/// Oracle backed by explicit kernel samples: `u = h^d * K f`.
#[derive(Debug, Clone)]
pub struct DenseKernelOracle {
    grid: Grid,
    kernel: DMatrix<f64>,
}

impl DenseKernelOracle {
    pub fn new(grid: Grid, kernel: DMatrix<f64>) -> Result<Self> {
        if kernel.nrows() != grid.total_nodes() || kernel.ncols() != grid.total_nodes() {
            return Err(Error::DimensionMismatch {
                expected: grid.total_nodes(),
                got: kernel.nrows(),
            });
        }
        Ok(Self { grid, kernel })
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }
}

impl SolveOracle for DenseKernelOracle {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn solve(&self, _task: u64, f: &DVector<f64>) -> Result<DVector<f64>> {
        Ok(&self.kernel * f * self.grid.cell_weight())
    }
}

/// Synthetic self-adjoint operator with exact-rank admissible blocks and zero
/// near field, for exact-recovery fixtures.
#[derive(Debug)]
pub struct SyntheticOperator {
    approx: HierarchicalApprox,
}

impl SyntheticOperator {
    /// Random rank-`rank` blocks on every admissible pair; the (s,t) block is
    /// the transpose of (t,s), so the operator is exactly self-adjoint.
    pub fn exact_rank(grid: &Grid, depth: usize, rank: usize, seed: u64) -> Result<Self> {
        let tree = BoxTree::build(grid, depth)?;
        let lists = block_lists(&tree);
        let streams = Streams::new(seed);
        let mut blocks = vec![Vec::new(); depth + 1];
        for list in lists.iter().skip(tree.first_admissible_level()) {
            let level = list.level;
            let mut by_pair: std::collections::BTreeMap<(usize, usize), LowRankBlock> =
                Default::default();
            for &(t, s) in &list.admissible {
                if t > s {
                    continue;
                }
                let t_nodes = tree.level(level).boxes[t].node_count(grid);
                let s_nodes = tree.level(level).boxes[s].node_count(grid);
                let raw_u = DMatrix::from_fn(t_nodes, rank, |i, j| {
                    let mut rng = streams.rng(
                        Purpose::Synthetic,
                        level as u32,
                        (t * 7919 + s) as u64,
                        (i * rank + j) as u64,
                    );
                    use rand_distr::Distribution;
                    rand_distr::StandardNormal.sample(&mut rng)
                });
                let raw_v = DMatrix::from_fn(s_nodes, rank, |i, j| {
                    let mut rng = streams.rng(
                        Purpose::Synthetic,
                        level as u32,
                        (s * 7919 + t) as u64 + (1 << 40),
                        (i * rank + j) as u64,
                    );
                    use rand_distr::Distribution;
                    rand_distr::StandardNormal.sample(&mut rng)
                });
                let u = orthonormal_columns(&raw_u, 1e-14);
                let v = orthonormal_columns(&raw_v, 1e-14);
                let k = rank.min(u.ncols()).min(v.ncols());
                let s_vals = DVector::from_fn(k, |i, _| 1.0 / (1.0 + i as f64));
                let fwd = LowRankBlock {
                    target_box: t,
                    source_box: s,
                    u: u.columns(0, k).into_owned(),
                    s: s_vals.clone(),
                    v: v.columns(0, k).into_owned(),
                };
                let rev = LowRankBlock {
                    target_box: s,
                    source_box: t,
                    u: v.columns(0, k).into_owned(),
                    s: s_vals,
                    v: u.columns(0, k).into_owned(),
                };
                by_pair.insert((t, s), fwd);
                by_pair.insert((s, t), rev);
            }
            // keep the admissible-list order
            blocks[level] = list
                .admissible
                .iter()
                .map(|pair| by_pair.get(pair).expect("block for admissible pair").clone())
                .collect();
        }
        let approx = HierarchicalApprox::new(tree, blocks, NearField::Neglect);
        Ok(Self { approx })
    }

    /// Ground-truth blocks, in admissible-list order per level.
    pub fn truth(&self) -> &HierarchicalApprox {
        &self.approx
    }
}

impl SolveOracle for SyntheticOperator {
    fn grid(&self) -> &Grid {
        self.approx.tree().grid()
    }

    fn solve(&self, _task: u64, f: &DVector<f64>) -> Result<DVector<f64>> {
        self.approx.apply(f)
    }
}

/// Wrapper that records every (task, forcing, solution) triple so a run can be
/// replayed from disk later.
pub struct RecordingOracle<'a, O: SolveOracle + ?Sized> {
    inner: &'a O,
    log: Mutex<Vec<(u64, DVector<f64>, DVector<f64>)>>,
}

impl<'a, O: SolveOracle + ?Sized> RecordingOracle<'a, O> {
    pub fn new(inner: &'a O) -> Self {
        Self { inner, log: Mutex::new(Vec::new()) }
    }

    /// Recorded pairs in task order, packaged with provenance.
    pub fn into_training_set(self, config: &PeelConfig, coefficient: &str) -> TrainingSet {
        let grid = *self.inner.grid();
        let mut log = self.log.into_inner().expect("recording mutex");
        log.sort_by_key(|(task, _, _)| *task);
        let pairs = log
            .into_iter()
            .map(|(_, f, u)| {
                (
                    FieldVector { values: f, role: FieldRole::Forcing },
                    FieldVector { values: u, role: FieldRole::Solution },
                )
            })
            .collect();
        let (kernel_name, length_scale) = match config.kernel {
            crate::sampling::KernelSpec::White => ("white".to_string(), None),
            crate::sampling::KernelSpec::SquaredExponential { length_scale } => {
                ("squared_exponential".to_string(), Some(length_scale))
            }
        };
        TrainingSet {
            d: grid.dimension(),
            n: grid.points_per_dim(),
            pairs,
            provenance: Provenance {
                kernel_name,
                length_scale,
                master_seed: config.master_seed,
                coefficient: coefficient.to_string(),
                source: ProvenanceSource::ActiveRecording { config_fingerprint: config.fingerprint() },
            },
        }
    }
}

impl<'a, O: SolveOracle + ?Sized> SolveOracle for RecordingOracle<'a, O> {
    fn grid(&self) -> &Grid {
        self.inner.grid()
    }

    fn solve(&self, task: u64, f: &DVector<f64>) -> Result<DVector<f64>> {
        let u = self.inner.solve(task, f)?;
        self.log.lock().expect("recording mutex").push((task, f.clone(), u.clone()));
        Ok(u)
    }
}

/// Table-backed oracle replaying a recorded run by task id.
pub(super) struct ReplayOracle<'a> {
    grid: Grid,
    pairs: &'a [(FieldVector, FieldVector)],
}

impl<'a> ReplayOracle<'a> {
    pub(super) fn new(grid: Grid, pairs: &'a [(FieldVector, FieldVector)]) -> Self {
        Self { grid, pairs }
    }
}

impl<'a> SolveOracle for ReplayOracle<'a> {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn solve(&self, task: u64, f: &DVector<f64>) -> Result<DVector<f64>> {
        let idx = task as usize;
        let (rec_f, rec_u) = self.pairs.get(idx).ok_or_else(|| {
            Error::ProvenanceMismatch(format!(
                "replay requested task {idx} but the dataset holds only {} pairs",
                self.pairs.len()
            ))
        })?;
        if rec_f.values != *f {
            return Err(Error::ProvenanceMismatch(format!(
                "replayed forcing {idx} does not match the recorded probe"
            )));
        }
        Ok(rec_u.values.clone())
    }
}
