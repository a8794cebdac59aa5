//! Learning from a fixed dataset instead of a live solver.
//!
//! Two regimes:
//!
//! * **Replay** — the dataset was recorded by an active run with the identical
//!   configuration (checked by fingerprint). The pairs are fed back by task
//!   id, reproducing the active result bit for bit.
//! * **Passive** — arbitrary forcings. Masking is impossible, so the blocks of
//!   each level are extracted per target box by least squares against the
//!   forcings restricted to the box's interaction window, after subtracting
//!   the coarser learned scales. Requires the dataset to excite every source
//!   box; starved boxes are reported, not guessed around.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::approx::{HierarchicalApprox, NearBlock, NearField};
use crate::error::{Error, Result};
use crate::field::FieldVector;
use crate::grid::Grid;
use crate::hier::{block_lists, BoxTree};
use crate::lowrank::LowRankBlock;
use crate::operator::DiscreteOperator;
use crate::schedule::LevelSchedule;

use super::oracles::ReplayOracle;
use super::{learn, NearFieldPolicy, PeelConfig, RankMode};

/// Where a training set came from.
#[derive(Debug, Clone, PartialEq)]
pub enum ProvenanceSource {
    /// Recorded by an active run whose configuration fingerprint is stored.
    ActiveRecording { config_fingerprint: u64 },
    /// Anything else.
    External,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub kernel_name: String,
    pub length_scale: Option<f64>,
    pub master_seed: u64,
    pub coefficient: String,
    pub source: ProvenanceSource,
}

/// Forcing/solution pairs with grid metadata.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub d: usize,
    pub n: usize,
    pub pairs: Vec<(FieldVector, FieldVector)>,
    pub provenance: Provenance,
}

impl TrainingSet {
    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.d, self.n)
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let grid = self.grid()?;
        for (f, u) in &self.pairs {
            f.check_grid(&grid)?;
            u.check_grid(&grid)?;
        }
        Ok(())
    }

    /// Spot check that the pairs actually satisfy the discrete equation.
    pub fn consistency_check(&self, op: &DiscreteOperator, sample: usize) -> Result<()> {
        for (f, u) in self.pairs.iter().take(sample) {
            let residual = (op.apply_stiffness(&u.values) - &f.values).norm();
            let scale = f.values.norm().max(f64::MIN_POSITIVE);
            if residual / scale > 1e-9 {
                return Err(Error::Domain(format!(
                    "training pair violates the discrete equation: relative residual {:.3e}",
                    residual / scale
                )));
            }
        }
        Ok(())
    }
}

/// Which path `learn_from_dataset` took.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetLearnMode {
    Replay,
    Passive,
}

/// Diagnostics of a dataset run. `probe_energy` holds the smallest singular
/// value of the forcing restrictions per (level, box) — the practical measure
/// of whether the data excites that box at all.
#[derive(Debug, Clone)]
pub struct DatasetDiagnostics {
    pub mode: DatasetLearnMode,
    pub pairs_used: usize,
    pub probe_energy: Vec<(usize, usize, f64)>,
}

const STARVED_REL_TOL: f64 = 1e-10;

/// Learn from recorded pairs. See the module docs for the two regimes.
pub fn learn_from_dataset(
    data: &TrainingSet,
    config: &PeelConfig,
) -> Result<(HierarchicalApprox, DatasetDiagnostics)> {
    data.validate()?;
    let grid = data.grid()?;

    if let ProvenanceSource::ActiveRecording { config_fingerprint } = data.provenance.source {
        if config_fingerprint == config.fingerprint() {
            let oracle = ReplayOracle::new(grid, &data.pairs);
            let result = learn(&oracle, config)?;
            return Ok((
                result.approx,
                DatasetDiagnostics {
                    mode: DatasetLearnMode::Replay,
                    pairs_used: result.ledger.training_total() as usize,
                    probe_energy: Vec::new(),
                },
            ));
        }
    }
    passive_extraction(data, config, &grid)
}

fn passive_extraction(
    data: &TrainingSet,
    config: &PeelConfig,
    grid: &Grid,
) -> Result<(HierarchicalApprox, DatasetDiagnostics)> {
    if config.depth < 2 {
        return Err(Error::Domain("passive extraction needs depth >= 2".into()));
    }
    let tree = BoxTree::build(grid, config.depth)?;
    let lists = block_lists(&tree);
    let n_pairs = data.len();
    let h_pow_d = grid.cell_weight();

    // kernel-scale Frobenius estimate from the data, assuming roughly white
    // forcings; diagnostic-grade only, used for the adaptive cutoff share.
    let mean_u2 = data.pairs.iter().map(|(_, u)| u.values.norm_squared()).sum::<f64>()
        / n_pairs.max(1) as f64;
    let mean_f2 = data.pairs.iter().map(|(f, _)| f.values.norm_squared()).sum::<f64>()
        / n_pairs.max(1) as f64;
    let kernel_frob_est = if mean_f2 > 0.0 {
        (mean_u2 / (mean_f2 / grid.total_nodes() as f64)).sqrt() / h_pow_d
    } else {
        0.0
    };

    let schedule = match config.rank_mode {
        RankMode::Adaptive { epsilon, .. } => {
            Some(LevelSchedule::geometric(epsilon, tree.first_admissible_level(), config.depth)?)
        }
        RankMode::Fixed(_) => None,
    };

    let mut approx =
        HierarchicalApprox::new(tree.clone(), vec![Vec::new(); config.depth + 1], NearField::Neglect);
    let mut probe_energy = Vec::new();

    for level in tree.first_admissible_level()..=config.depth {
        let list = &lists[level];
        let boxes = &tree.level(level).boxes;
        let box_nodes: Vec<Vec<usize>> = boxes.iter().map(|b| b.node_indices(grid)).collect();

        // starvation scan: smallest singular value of the forcings restricted
        // to each box
        let energies: Vec<f64> = (0..boxes.len())
            .into_par_iter()
            .map(|b| {
                let nodes = &box_nodes[b];
                let f_b = DMatrix::from_fn(nodes.len(), n_pairs, |i, j| {
                    data.pairs[j].0.values[nodes[i]]
                });
                smallest_singular_value(&f_b)
            })
            .collect();
        let mut starved = Vec::new();
        for (b, &e) in energies.iter().enumerate() {
            probe_energy.push((level, b, e));
            let scale = (n_pairs as f64).sqrt();
            if n_pairs < box_nodes[b].len() || e <= STARVED_REL_TOL * scale {
                starved.push(b);
            }
        }
        if !starved.is_empty() {
            return Err(Error::InsufficientProbeDiversity { level, boxes: starved });
        }

        // residuals against coarser levels, kernel scale
        let residuals: Vec<DVector<f64>> = data
            .pairs
            .par_iter()
            .map(|(f, u)| (&u.values / h_pow_d) - approx.apply_kernel_scale(&f.values, level))
            .collect();

        let block_tol = schedule.as_ref().map(|s| {
            let blocks = list.admissible.len().max(1) as f64;
            s.tolerance(level) * kernel_frob_est / blocks.sqrt()
        });

        // per target box: window least squares, then split into blocks
        let targets: Vec<usize> = {
            let mut t: Vec<usize> = list.admissible.iter().map(|&(t, _)| t).collect();
            t.extend(list.near.iter().map(|&(t, _)| t));
            t.sort_unstable();
            t.dedup();
            t
        };
        let window_kernels: Vec<(usize, Vec<usize>, DMatrix<f64>)> = targets
            .par_iter()
            .map(|&t| {
                let mut sources: Vec<usize> = list
                    .admissible
                    .iter()
                    .chain(list.near.iter())
                    .filter(|&&(tt, _)| tt == t)
                    .map(|&(_, s)| s)
                    .collect();
                sources.sort_unstable();
                sources.dedup();
                let window_nodes: Vec<usize> =
                    sources.iter().flat_map(|&s| box_nodes[s].iter().copied()).collect();
                let f_w = DMatrix::from_fn(n_pairs, window_nodes.len(), |j, i| {
                    data.pairs[j].0.values[window_nodes[i]]
                });
                let t_nodes = &box_nodes[t];
                let r_t = DMatrix::from_fn(n_pairs, t_nodes.len(), |j, i| {
                    residuals[j][t_nodes[i]]
                });
                // K(t, window)^T = pinv(F_w) R_t
                let kt = ls_solve(&f_w, &r_t);
                (t, sources, kt.transpose())
            })
            .collect();

        let mut kernel_by_target: std::collections::BTreeMap<usize, (Vec<usize>, DMatrix<f64>)> =
            Default::default();
        for (t, sources, k) in window_kernels {
            kernel_by_target.insert(t, (sources, k));
        }

        let blocks: Vec<LowRankBlock> = list
            .admissible
            .par_iter()
            .map(|&(t, s)| {
                let (sources, k) = &kernel_by_target[&t];
                let sub = window_column_block(k, sources, s, &box_nodes);
                truncate_dense(&sub, t, s, config, block_tol)
            })
            .collect();
        approx.set_level_blocks(level, blocks);

        if level == config.depth && config.near_field == NearFieldPolicy::DenseProbe {
            let near: Vec<NearBlock> = list
                .near
                .par_iter()
                .map(|&(t, s)| {
                    let (sources, k) = &kernel_by_target[&t];
                    NearBlock {
                        target_box: t,
                        source_box: s,
                        matrix: window_column_block(k, sources, s, &box_nodes),
                    }
                })
                .collect();
            approx.set_near_field(NearField::Dense(near));
        }
    }

    Ok((
        approx,
        DatasetDiagnostics {
            mode: DatasetLearnMode::Passive,
            pairs_used: n_pairs,
            probe_energy,
        },
    ))
}

fn window_column_block(
    k: &DMatrix<f64>,
    sources: &[usize],
    s: usize,
    box_nodes: &[Vec<usize>],
) -> DMatrix<f64> {
    let mut offset = 0;
    for &src in sources {
        let width = box_nodes[src].len();
        if src == s {
            return k.columns(offset, width).into_owned();
        }
        offset += width;
    }
    unreachable!("source box must be part of its target's window");
}

fn truncate_dense(
    sub: &DMatrix<f64>,
    target: usize,
    source: usize,
    config: &PeelConfig,
    block_tol: Option<f64>,
) -> LowRankBlock {
    let svd = sub.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.max();
    let keep = match (config.rank_mode, block_tol) {
        (RankMode::Fixed(k), _) => {
            let mut keep = 0;
            for i in 0..svd.singular_values.len().min(k) {
                if svd.singular_values[i] > 1e-14 * smax {
                    keep = i + 1;
                }
            }
            keep
        }
        (RankMode::Adaptive { k_max, .. }, tol) => {
            let cutoff = tol.unwrap_or(0.0);
            let mut keep = 0;
            for i in 0..svd.singular_values.len().min(k_max) {
                if svd.singular_values[i] > cutoff.max(1e-14 * smax) {
                    keep = i + 1;
                }
            }
            keep
        }
    };
    LowRankBlock {
        target_box: target,
        source_box: source,
        u: u.columns(0, keep).into_owned(),
        s: DVector::from_fn(keep, |i, _| svd.singular_values[i]),
        v: v_t.rows(0, keep).transpose().into_owned(),
    }
}

fn smallest_singular_value(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    // fewer samples than box dimensions: the box is not fully excited
    if m.ncols() < m.nrows() {
        return 0.0;
    }
    m.clone().svd(false, false).singular_values.min()
}

/// Least squares `argmin_X ||A X - B||_F` via truncated SVD.
fn ls_solve(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, true);
    let u = svd.u.as_ref().expect("svd with u");
    let v_t = svd.v_t.as_ref().expect("svd with v_t");
    let smax = svd.singular_values.max();
    let inv = DVector::from_fn(svd.singular_values.len(), |i, _| {
        let s = svd.singular_values[i];
        if s > 1e-10 * smax {
            1.0 / s
        } else {
            0.0
        }
    });
    v_t.transpose() * DMatrix::from_diagonal(&inv) * (u.transpose() * b)
}
