//! Level-by-level reconstruction of the solution operator.
//!
//! For each level of the box tree, forcing terms are drawn from the level's
//! Gaussian process, masked onto every box of one color class, and sent
//! through the solver — one solve per probe, shared by all blocks whose source
//! lies in the class. Responses are residuals against everything already
//! learned at coarser levels; restricting a residual to a target box isolates
//! the one same-color source in its interaction window, which yields two-sided
//! sketches for every admissible block at once. Near pairs are refined further
//! and, at the finest level, either neglected or extracted densely with
//! indicator probes.

mod oracles;
mod passive;

pub use oracles::{DenseKernelOracle, RecordingOracle, SyntheticOperator};
pub use passive::{learn_from_dataset, DatasetDiagnostics, DatasetLearnMode, Provenance, ProvenanceSource, TrainingSet};

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::approx::{HierarchicalApprox, NearBlock, NearField};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::hier::{block_lists, coloring, coloring_is_valid, BlockList, BoxTree, Coloring};
use crate::ledger::{LedgerCounts, SolveLedger};
use crate::lowrank::{compress_two_sided, CompressionMode, LowRankBlock, TwoSidedSketch};
use crate::sampling::{covariance_from_points, factorize, identity_factor, CovarianceFactor, KernelSpec};
use crate::schedule::LevelSchedule;
use crate::streams::{Purpose, Streams};

/// Black-box access to the unknown PDE: one call, one training pair.
///
/// `task` is a stable enumeration of the solve requests of one `learn` run;
/// oracles backed by recorded datasets use it to replay pairs in order while
/// parallel workers consume them out of order.
pub trait SolveOracle: Sync {
    fn grid(&self) -> &Grid;
    fn solve(&self, task: u64, f: &DVector<f64>) -> Result<DVector<f64>>;
}

impl SolveOracle for crate::operator::DiscreteOperator {
    fn grid(&self) -> &Grid {
        crate::operator::DiscreteOperator::grid(self)
    }

    fn solve(&self, _task: u64, f: &DVector<f64>) -> Result<DVector<f64>> {
        let out = self.solve_raw(f)?;
        self.bump_solve_counter();
        Ok(out)
    }
}

/// Rank policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum RankMode {
    /// The same rank for every block; clean for scaling studies.
    Fixed(usize),
    /// Grow ranks until the per-block share of the level tolerance is met.
    Adaptive { epsilon: f64, k_max: usize, k_step: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NearFieldPolicy {
    Neglect,
    DenseProbe,
}

/// Reconstruction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct PeelConfig {
    /// Tree depth L; levels 2..=L carry admissible blocks.
    pub depth: usize,
    /// Coloring window W; 7 isolates the radius-3 interaction window.
    pub window: usize,
    pub rank_mode: RankMode,
    /// Extra probes beyond the target rank.
    pub oversampling: usize,
    /// Fresh probes per color class reserved for posterior error estimates.
    pub posterior_probes: usize,
    /// Probe process. For the squared-exponential kernel the stored length
    /// scale is the base value; level `l` samples with `base / 2^l` so finer
    /// levels probe with rougher functions.
    pub kernel: KernelSpec,
    pub near_field: NearFieldPolicy,
    pub master_seed: u64,
}

impl PeelConfig {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            window: 7,
            rank_mode: RankMode::Fixed(4),
            oversampling: 10,
            posterior_probes: 10,
            kernel: KernelSpec::SquaredExponential { length_scale: 0.2 },
            near_field: NearFieldPolicy::Neglect,
            master_seed: 0,
        }
    }

    pub fn with_rank(mut self, k: usize) -> Self {
        self.rank_mode = RankMode::Fixed(k);
        self
    }

    pub fn with_adaptive(mut self, epsilon: f64, k_max: usize, k_step: usize) -> Self {
        self.rank_mode = RankMode::Adaptive { epsilon, k_max, k_step };
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    pub fn with_near_field(mut self, policy: NearFieldPolicy) -> Self {
        self.near_field = policy;
        self
    }

    pub fn with_kernel(mut self, kernel: KernelSpec) -> Self {
        self.kernel = kernel;
        self
    }

    /// Probes per class used for sketches at any level.
    pub fn sketch_probes(&self) -> usize {
        match self.rank_mode {
            RankMode::Fixed(k) => k + self.oversampling,
            RankMode::Adaptive { k_max, .. } => k_max + self.oversampling,
        }
    }

    /// Stable fingerprint of every field, used to match recorded datasets.
    pub fn fingerprint(&self) -> u64 {
        let mut h = 0xcbf29ce484222325u64;
        let mut mix = |v: u64| {
            for byte in v.to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
        };
        mix(self.depth as u64);
        mix(self.window as u64);
        match self.rank_mode {
            RankMode::Fixed(k) => {
                mix(1);
                mix(k as u64);
            }
            RankMode::Adaptive { epsilon, k_max, k_step } => {
                mix(2);
                mix(epsilon.to_bits());
                mix(k_max as u64);
                mix(k_step as u64);
            }
        }
        mix(self.oversampling as u64);
        mix(self.posterior_probes as u64);
        match self.kernel {
            KernelSpec::White => mix(3),
            KernelSpec::SquaredExponential { length_scale } => {
                mix(4);
                mix(length_scale.to_bits());
            }
        }
        mix(match self.near_field {
            NearFieldPolicy::Neglect => 5,
            NearFieldPolicy::DenseProbe => 6,
        });
        mix(self.master_seed);
        h
    }
}

/// Diagnostics accumulated while learning.
#[derive(Debug, Clone, Default)]
pub struct LearnInfo {
    /// Operator-scale Hilbert–Schmidt estimate from the randomized trace
    /// probes (adaptive mode only).
    pub hs_estimate: Option<f64>,
    /// Blocks whose adaptive tolerance was not met at `k_max`.
    pub unmet_blocks: u64,
    /// Worst posterior estimate per level (kernel scale).
    pub worst_posterior_by_level: Vec<f64>,
}

#[derive(Debug)]
pub struct LearnResult {
    pub approx: HierarchicalApprox,
    pub ledger: LedgerCounts,
    pub info: LearnInfo,
}

/// Closed-form solve budget of a `learn` run: for each admissible level,
/// (number of color classes) x (sketch probes + posterior probes), plus the
/// indicator probes of the dense near-field pass and the Hilbert–Schmidt
/// estimation probes in adaptive mode. The ledger of every run must agree
/// with this exactly.
pub fn predicted_ledger(grid: &Grid, config: &PeelConfig) -> LedgerCounts {
    let d = grid.dimension();
    let mut counts = LedgerCounts {
        sketch_by_level: vec![0; config.depth + 1],
        posterior_by_level: vec![0; config.depth + 1],
        ..Default::default()
    };
    let m_sketch = config.sketch_probes() as u64;
    for level in 2..=config.depth {
        let classes = (1usize << level).min(config.window).pow(d as u32) as u64;
        counts.sketch_by_level[level] = classes * m_sketch;
        counts.posterior_by_level[level] = classes * config.posterior_probes as u64;
    }
    if config.near_field == NearFieldPolicy::DenseProbe {
        let classes = (1usize << config.depth).min(config.window).pow(d as u32) as u64;
        let leaf_nodes = (grid.points_per_dim() / (1 << config.depth)).pow(d as u32) as u64;
        counts.near_field = classes * leaf_nodes;
    }
    if matches!(config.rank_mode, RankMode::Adaptive { .. }) {
        counts.hs_estimate = HS_PROBES as u64;
    }
    counts
}

const HS_PROBES: usize = 10;

/// Learn the operator from the solve oracle.
pub fn learn<O: SolveOracle + ?Sized>(oracle: &O, config: &PeelConfig) -> Result<LearnResult> {
    let grid = *oracle.grid();
    if config.depth < 2 {
        return Err(Error::Domain(format!(
            "reconstruction needs at least 2 levels (first admissible level), got depth {}",
            config.depth
        )));
    }
    config.kernel.validate()?;
    let tree = BoxTree::build(&grid, config.depth)?;
    let lists = block_lists(&tree);
    let ledger = SolveLedger::new(config.depth);
    let streams = Streams::new(config.master_seed);
    let h_pow_d = grid.cell_weight();

    let mut tasks = TaskCounter::default();

    // Hilbert–Schmidt estimate feeds the per-block tolerance share.
    let mut info = LearnInfo::default();
    let schedule = match config.rank_mode {
        RankMode::Adaptive { epsilon, .. } => {
            Some(LevelSchedule::geometric(epsilon, tree.first_admissible_level(), config.depth)?)
        }
        RankMode::Fixed(_) => None,
    };
    let mut kernel_frob_estimate = 0.0;
    if schedule.is_some() {
        let probes: Vec<(u64, DVector<f64>)> = (0..HS_PROBES)
            .map(|j| {
                (tasks.next(), streams.normal_vector(grid.total_nodes(), Purpose::HsEstimate, 0, 0, j as u64))
            })
            .collect();
        let norms: Result<Vec<f64>> = probes
            .par_iter()
            .map(|(task, w)| oracle.solve(*task, w).map(|u| u.norm_squared()))
            .collect();
        let mean = norms?.iter().sum::<f64>() / HS_PROBES as f64;
        let hs_op_scale = mean.sqrt();
        info.hs_estimate = Some(hs_op_scale);
        kernel_frob_estimate = hs_op_scale / h_pow_d;
        ledger.record_hs_estimate(HS_PROBES as u64);
    }

    let mut approx =
        HierarchicalApprox::new(tree.clone(), vec![Vec::new(); config.depth + 1], NearField::Neglect);
    info.worst_posterior_by_level = vec![0.0; config.depth + 1];

    for level in tree.first_admissible_level()..=config.depth {
        let colors = coloring(&tree, level, config.window);
        debug_assert!(coloring_is_valid(&tree, &colors, 3));
        let list = &lists[level];
        let block_tol = schedule.as_ref().map(|s| {
            let level_tol = s.tolerance(level);
            let blocks = list.admissible.len().max(1) as f64;
            level_tol * kernel_frob_estimate / blocks.sqrt()
        });
        let (blocks, worst, unmet) = peel_level(
            oracle,
            &approx,
            &tree,
            list,
            &colors,
            config,
            block_tol,
            &ledger,
            &mut tasks,
        )?;
        info.worst_posterior_by_level[level] = worst;
        info.unmet_blocks += unmet;
        approx.set_level_blocks(level, blocks);
    }

    if config.near_field == NearFieldPolicy::DenseProbe {
        let near = extract_near_field(oracle, &approx, &tree, &lists, config, &ledger, &mut tasks)?;
        approx.set_near_field(NearField::Dense(near));
    }

    Ok(LearnResult { approx, ledger: ledger.counts(), info })
}

/// Sequential task ids, assigned in enumeration order before parallel dispatch.
#[derive(Debug, Default)]
struct TaskCounter(u64);

impl TaskCounter {
    fn next(&mut self) -> u64 {
        let id = self.0;
        self.0 += 1;
        id
    }
}

/// Covariance factor for the probe content of one box at one level. Boxes of
/// a level are congruent, so a single factor (built on box 0's nodes) serves
/// the whole level.
fn level_probe_factor(
    tree: &BoxTree,
    level: usize,
    kernel: &KernelSpec,
    seed: u64,
) -> Result<CovarianceFactor> {
    let grid = tree.grid();
    let template = &tree.level(level).boxes[0];
    let nodes = template.node_indices(grid);
    match kernel {
        KernelSpec::White => Ok(identity_factor(nodes.len(), seed)),
        KernelSpec::SquaredExponential { length_scale } => {
            let level_scale = length_scale / (1u64 << level) as f64;
            let points: Vec<[f64; 3]> = nodes.iter().map(|&i| grid.coords(i)).collect();
            let c = covariance_from_points(
                &points,
                &KernelSpec::SquaredExponential { length_scale: level_scale },
            );
            factorize(&c, 1e-12, seed)
        }
    }
}

struct ClassResponses {
    /// Probe content per box of the class: `content[box_pos]` is nodes x m.
    content: Vec<DMatrix<f64>>,
    /// Kernel-scale residual responses, one column per probe (full domain).
    residuals: Vec<DVector<f64>>,
}

#[allow(clippy::too_many_arguments)]
fn peel_level<O: SolveOracle + ?Sized>(
    oracle: &O,
    approx: &HierarchicalApprox,
    tree: &BoxTree,
    list: &BlockList,
    colors: &Coloring,
    config: &PeelConfig,
    block_tol: Option<f64>,
    ledger: &SolveLedger,
    tasks: &mut TaskCounter,
) -> Result<(Vec<LowRankBlock>, f64, u64)> {
    let grid = tree.grid();
    let level = list.level;
    let h_pow_d = grid.cell_weight();
    let m_sketch = config.sketch_probes();
    let q_post = config.posterior_probes;
    let m_total = m_sketch + q_post;
    let factor = level_probe_factor(tree, level, &config.kernel, config.master_seed)?;
    let streams = Streams::new(config.master_seed);

    // class position lookup per box
    let mut class_of_box = vec![usize::MAX; tree.level(level).boxes.len()];
    for (pos, (_, boxes)) in colors.classes.iter().enumerate() {
        for &b in boxes {
            class_of_box[b] = pos;
        }
    }

    // Enumerate all solves of this level up front so task ids are stable.
    struct Task {
        id: u64,
        class_pos: usize,
        probe: usize,
    }
    let mut level_tasks = Vec::with_capacity(colors.classes.len() * m_total);
    for class_pos in 0..colors.classes.len() {
        for probe in 0..m_total {
            level_tasks.push(Task { id: tasks.next(), class_pos, probe });
        }
    }

    // probe content for box `b`, probe `j`: colored normal from the stream
    // (level, box, j); sketch and posterior probes use distinct purposes.
    let box_nodes: Vec<Vec<usize>> =
        tree.level(level).boxes.iter().map(|b| b.node_indices(grid)).collect();
    let content_for = |box_id: usize, probe: usize| -> DVector<f64> {
        let n_box = box_nodes[box_id].len();
        let z = if probe < m_sketch {
            streams.normal_vector(n_box, Purpose::Sketch, level as u32, box_id as u64, probe as u64)
        } else {
            streams.normal_vector(
                n_box,
                Purpose::Posterior,
                level as u32,
                box_id as u64,
                (probe - m_sketch) as u64,
            )
        };
        factor.color(&z)
    };

    let solved: Result<Vec<(usize, usize, DVector<f64>)>> = level_tasks
        .par_iter()
        .map(|task| {
            let (_, class_boxes) = &colors.classes[task.class_pos];
            let mut f = DVector::zeros(grid.total_nodes());
            for &b in class_boxes {
                let content = content_for(b, task.probe);
                for (i, &node) in box_nodes[b].iter().enumerate() {
                    f[node] = content[i];
                }
            }
            let u = oracle.solve(task.id, &f)?;
            let learned = approx.apply_kernel_scale(&f, level);
            let residual = (u / h_pow_d) - learned;
            Ok((task.class_pos, task.probe, residual))
        })
        .collect();
    let solved = solved?;

    let classes_n = colors.classes.len();
    ledger.record_sketch(level, (classes_n * m_sketch) as u64);
    ledger.record_posterior(level, (classes_n * q_post) as u64);

    let mut responses: Vec<ClassResponses> = colors
        .classes
        .iter()
        .map(|(_, boxes)| ClassResponses {
            content: boxes
                .iter()
                .map(|&b| {
                    let n_box = box_nodes[b].len();
                    let mut m = DMatrix::zeros(n_box, m_total);
                    for probe in 0..m_total {
                        m.set_column(probe, &content_for(b, probe));
                    }
                    m
                })
                .collect(),
            residuals: vec![DVector::zeros(0); m_total],
        })
        .collect();
    for (class_pos, probe, residual) in solved {
        responses[class_pos].residuals[probe] = residual;
    }

    let box_pos_in_class: Vec<usize> = {
        let mut v = vec![usize::MAX; box_nodes.len()];
        for (_, boxes) in &colors.classes {
            for (pos, &b) in boxes.iter().enumerate() {
                v[b] = pos;
            }
        }
        v
    };

    let restrict = |vec: &DVector<f64>, nodes: &[usize]| -> DVector<f64> {
        DVector::from_fn(nodes.len(), |i, _| vec[nodes[i]])
    };

    let mode = match (config.rank_mode, block_tol) {
        (RankMode::Fixed(k), _) => CompressionMode::FixedRank(k),
        (RankMode::Adaptive { k_max, k_step, .. }, Some(tol)) => {
            CompressionMode::Adaptive { tol, k_max, k_step }
        }
        (RankMode::Adaptive { k_max, k_step, .. }, None) => {
            CompressionMode::Adaptive { tol: 0.0, k_max, k_step }
        }
    };

    let outcomes: Vec<(LowRankBlock, f64, bool)> = list
        .admissible
        .par_iter()
        .map(|&(t, s)| {
            let class_s = class_of_box[s];
            let class_t = class_of_box[t];
            let t_nodes = &box_nodes[t];
            let s_nodes = &box_nodes[s];
            let resp_s = &responses[class_s];
            let resp_t = &responses[class_t];
            let s_pos = box_pos_in_class[s];
            let t_pos = box_pos_in_class[t];

            let mut probes_src = DMatrix::zeros(s_nodes.len(), m_sketch);
            let mut images_tgt = DMatrix::zeros(t_nodes.len(), m_sketch);
            let mut probes_tgt = DMatrix::zeros(t_nodes.len(), m_sketch);
            let mut images_src = DMatrix::zeros(s_nodes.len(), m_sketch);
            for j in 0..m_sketch {
                probes_src.set_column(j, &resp_s.content[s_pos].column(j).into_owned());
                images_tgt.set_column(j, &restrict(&resp_s.residuals[j], t_nodes));
                probes_tgt.set_column(j, &resp_t.content[t_pos].column(j).into_owned());
                images_src.set_column(j, &restrict(&resp_t.residuals[j], s_nodes));
            }
            let mut posterior_probes = DMatrix::zeros(s_nodes.len(), q_post);
            let mut posterior_images = DMatrix::zeros(t_nodes.len(), q_post);
            for j in 0..q_post {
                posterior_probes
                    .set_column(j, &resp_s.content[s_pos].column(m_sketch + j).into_owned());
                posterior_images
                    .set_column(j, &restrict(&resp_s.residuals[m_sketch + j], t_nodes));
            }
            let sketch = TwoSidedSketch {
                target_box: t,
                source_box: s,
                probes_src,
                images_tgt,
                probes_tgt,
                images_src,
                posterior_probes,
                posterior_images,
            };
            let out = compress_two_sided(&sketch, mode);
            (out.block, out.estimate, out.met_tolerance)
        })
        .collect();

    let mut worst = 0.0f64;
    let mut unmet = 0u64;
    let mut blocks = Vec::with_capacity(outcomes.len());
    for (block, estimate, met) in outcomes {
        worst = worst.max(estimate);
        if !met {
            unmet += 1;
        }
        blocks.push(block);
    }
    Ok((blocks, worst, unmet))
}

/// Indicator-probe extraction of the finest-level near blocks. One solve per
/// (color class, leaf node position); the response at a target box, after
/// subtracting every learned admissible block, is the column of the unique
/// same-class near source.
fn extract_near_field<O: SolveOracle + ?Sized>(
    oracle: &O,
    approx: &HierarchicalApprox,
    tree: &BoxTree,
    lists: &[BlockList],
    config: &PeelConfig,
    ledger: &SolveLedger,
    tasks: &mut TaskCounter,
) -> Result<Vec<NearBlock>> {
    let grid = tree.grid();
    let level = tree.depth();
    let h_pow_d = grid.cell_weight();
    let colors = coloring(tree, level, config.window);
    let box_nodes: Vec<Vec<usize>> =
        tree.level(level).boxes.iter().map(|b| b.node_indices(grid)).collect();
    let leaf_nodes = box_nodes[0].len();

    struct Task {
        id: u64,
        class_pos: usize,
        local: usize,
    }
    let mut near_tasks = Vec::with_capacity(colors.classes.len() * leaf_nodes);
    for class_pos in 0..colors.classes.len() {
        for local in 0..leaf_nodes {
            near_tasks.push(Task { id: tasks.next(), class_pos, local });
        }
    }

    let solved: Result<Vec<(usize, usize, DVector<f64>)>> = near_tasks
        .par_iter()
        .map(|task| {
            let (_, class_boxes) = &colors.classes[task.class_pos];
            let mut f = DVector::zeros(grid.total_nodes());
            for &b in class_boxes {
                f[box_nodes[b][task.local]] = 1.0;
            }
            let u = oracle.solve(task.id, &f)?;
            let learned = approx.apply_kernel_scale(&f, level + 1);
            let residual = (u / h_pow_d) - learned;
            Ok((task.class_pos, task.local, residual))
        })
        .collect();
    let solved = solved?;
    ledger.record_near_field((colors.classes.len() * leaf_nodes) as u64);

    let mut residuals: Vec<Vec<DVector<f64>>> =
        vec![vec![DVector::zeros(0); leaf_nodes]; colors.classes.len()];
    for (class_pos, local, r) in solved {
        residuals[class_pos][local] = r;
    }
    let mut class_of_box = vec![usize::MAX; box_nodes.len()];
    for (pos, (_, boxes)) in colors.classes.iter().enumerate() {
        for &b in boxes {
            class_of_box[b] = pos;
        }
    }

    let near = lists[level]
        .near
        .par_iter()
        .map(|&(t, s)| {
            let class_s = class_of_box[s];
            let t_nodes = &box_nodes[t];
            let mut matrix = DMatrix::zeros(t_nodes.len(), leaf_nodes);
            for local in 0..leaf_nodes {
                let r = &residuals[class_s][local];
                for (i, &node) in t_nodes.iter().enumerate() {
                    matrix[(i, local)] = r[node];
                }
            }
            NearBlock { target_box: t, source_box: s, matrix }
        })
        .collect();
    Ok(near)
}
