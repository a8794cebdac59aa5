//! The learned operator: per-level low-rank blocks plus a near-field policy.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hier::BoxTree;
use crate::lowrank::LowRankBlock;

/// Dense near-field block at the finest level.
#[derive(Debug, Clone, PartialEq)]
pub struct NearBlock {
    pub target_box: usize,
    pub source_box: usize,
    pub matrix: DMatrix<f64>,
}

/// What happens to the finest-level near pairs.
#[derive(Debug, Clone, PartialEq)]
pub enum NearField {
    /// Drop them: the construction that yields the global approximant with a
    /// near-diagonal error floor.
    Neglect,
    /// Dense blocks extracted with indicator probes.
    Dense(Vec<NearBlock>),
}

/// Learned approximation of the solution operator.
///
/// Blocks store kernel-scale factors, so applying the operator multiplies by
/// the quadrature weight `h^d` once at the end: `u = h^d * (sum of blocks) f`.
#[derive(Debug, Clone)]
pub struct HierarchicalApprox {
    tree: BoxTree,
    /// `blocks[level]` holds the admissible blocks learned at that level.
    blocks: Vec<Vec<LowRankBlock>>,
    near: NearField,
    /// Node index sets per level per box, precomputed for application.
    level_nodes: Vec<Vec<Vec<usize>>>,
}

impl HierarchicalApprox {
    pub fn new(tree: BoxTree, blocks: Vec<Vec<LowRankBlock>>, near: NearField) -> Self {
        let grid = *tree.grid();
        let level_nodes = (0..=tree.depth())
            .map(|l| tree.level(l).boxes.iter().map(|b| b.node_indices(&grid)).collect())
            .collect();
        Self { tree, blocks, near, level_nodes }
    }

    pub fn tree(&self) -> &BoxTree {
        &self.tree
    }

    pub fn near_field(&self) -> &NearField {
        &self.near
    }

    pub fn blocks_at(&self, level: usize) -> &[LowRankBlock] {
        &self.blocks[level]
    }

    pub fn block_levels(&self) -> &[Vec<LowRankBlock>] {
        &self.blocks
    }

    pub fn node_indices(&self, level: usize, box_id: usize) -> &[usize] {
        &self.level_nodes[level][box_id]
    }

    /// Install the blocks learned for one level.
    pub fn set_level_blocks(&mut self, level: usize, blocks: Vec<LowRankBlock>) {
        self.blocks[level] = blocks;
    }

    pub fn set_near_field(&mut self, near: NearField) {
        self.near = near;
    }

    /// Apply the learned operator: `u = h^d * sum_blocks f`.
    pub fn apply(&self, f: &DVector<f64>) -> Result<DVector<f64>> {
        let total = self.tree.grid().total_nodes();
        if f.len() != total {
            return Err(Error::DimensionMismatch { expected: total, got: f.len() });
        }
        let mut out = self.apply_kernel_scale(f, self.tree.depth() + 1);
        out *= self.tree.grid().cell_weight();
        Ok(out)
    }

    /// Kernel-scale action of all blocks at levels strictly below `level_cap`,
    /// including the near field when `level_cap` exceeds the tree depth.
    /// Used by the reconstruction to subtract already-learned scales.
    pub fn apply_kernel_scale(&self, f: &DVector<f64>, level_cap: usize) -> DVector<f64> {
        let total = self.tree.grid().total_nodes();
        let mut out = DVector::zeros(total);
        for (level, level_blocks) in self.blocks.iter().enumerate() {
            if level >= level_cap {
                continue;
            }
            for block in level_blocks {
                if block.rank() == 0 {
                    continue;
                }
                let src = &self.level_nodes[level][block.source_box];
                let tgt = &self.level_nodes[level][block.target_box];
                let f_src = DVector::from_fn(src.len(), |i, _| f[src[i]]);
                let contribution = block.apply(&f_src);
                for (i, &node) in tgt.iter().enumerate() {
                    out[node] += contribution[i];
                }
            }
        }
        if level_cap > self.tree.depth() {
            if let NearField::Dense(near_blocks) = &self.near {
                let finest = self.tree.depth();
                for nb in near_blocks {
                    let src = &self.level_nodes[finest][nb.source_box];
                    let tgt = &self.level_nodes[finest][nb.target_box];
                    let f_src = DVector::from_fn(src.len(), |i, _| f[src[i]]);
                    let contribution = &nb.matrix * f_src;
                    for (i, &node) in tgt.iter().enumerate() {
                        out[node] += contribution[i];
                    }
                }
            }
        }
        out
    }

    /// Materialize the kernel-scale dense matrix (small problems only).
    pub fn to_dense(&self, cap: usize) -> Result<DMatrix<f64>> {
        let total = self.tree.grid().total_nodes();
        if total > cap {
            return Err(Error::DenseCapExceeded { requested: total, cap });
        }
        let mut out = DMatrix::zeros(total, total);
        for (level, level_blocks) in self.blocks.iter().enumerate() {
            for block in level_blocks {
                if block.rank() == 0 {
                    continue;
                }
                let dense = block.to_dense();
                let src = &self.level_nodes[level][block.source_box];
                let tgt = &self.level_nodes[level][block.target_box];
                for (i, &r) in tgt.iter().enumerate() {
                    for (j, &c) in src.iter().enumerate() {
                        out[(r, c)] += dense[(i, j)];
                    }
                }
            }
        }
        if let NearField::Dense(near_blocks) = &self.near {
            let finest = self.tree.depth();
            for nb in near_blocks {
                let src = &self.level_nodes[finest][nb.source_box];
                let tgt = &self.level_nodes[finest][nb.target_box];
                for (i, &r) in tgt.iter().enumerate() {
                    for (j, &c) in src.iter().enumerate() {
                        out[(r, c)] += nb.matrix[(i, j)];
                    }
                }
            }
        }
        Ok(out)
    }

    /// Structural fingerprint over every stored factor, bit-exact. Two
    /// approximations with equal digests were produced by identical arithmetic.
    pub fn digest(&self) -> u64 {
        let mut h = Fnv::new();
        for (level, level_blocks) in self.blocks.iter().enumerate() {
            h.write_usize(level);
            for block in level_blocks {
                h.write_usize(block.target_box);
                h.write_usize(block.source_box);
                h.write_usize(block.rank());
                for v in block.u.iter().chain(block.s.iter()).chain(block.v.iter()) {
                    h.write_u64(v.to_bits());
                }
            }
        }
        match &self.near {
            NearField::Neglect => h.write_usize(0),
            NearField::Dense(near_blocks) => {
                h.write_usize(near_blocks.len());
                for nb in near_blocks {
                    h.write_usize(nb.target_box);
                    h.write_usize(nb.source_box);
                    for v in nb.matrix.iter() {
                        h.write_u64(v.to_bits());
                    }
                }
            }
        }
        h.finish()
    }
}

/// FNV-1a, enough for fingerprinting factors in tests and summaries.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf29ce484222325)
    }

    fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    fn write_usize(&mut self, v: usize) {
        self.write_u64(v as u64);
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
