//! Dyadic partition of the index lattice, admissible block lists, colorings.
//!
//! Boxes live on the integer index lattice rather than in physical space;
//! for a uniform grid the two views coincide. A block (t, s) of level-l boxes
//! is *admissible* when its parents were near at level l-1 and the boxes are
//! separated by at least one box width (Chebyshev box distance >= 2), and
//! *near* when the distance is <= 1. Admissible blocks over all levels plus
//! the near blocks of the finest level tile the product index set exactly.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// One dyadic box: per-dimension box coordinates plus the node ranges it owns.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoxNode {
    /// Box coordinates within its level, one per active dimension.
    pub coords: [usize; 3],
    /// First owned node per dimension (inclusive).
    pub lo: [usize; 3],
    /// Nodes owned per dimension.
    pub width: usize,
}

impl BoxNode {
    /// Lexicographic node indices owned by this box.
    pub fn node_indices(&self, grid: &Grid) -> Vec<usize> {
        let d = grid.dimension();
        let mut out = Vec::with_capacity(self.width.pow(d as u32));
        let mut m = [0usize; 3];
        let count = self.width.pow(d as u32);
        for flat in 0..count {
            let mut rest = flat;
            for axis in 0..d {
                m[axis] = self.lo[axis] + rest % self.width;
                rest /= self.width;
            }
            out.push(grid.node_index(m));
        }
        out.sort_unstable();
        out
    }

    pub fn node_count(&self, grid: &Grid) -> usize {
        self.width.pow(grid.dimension() as u32)
    }
}

/// All boxes of one level, ordered lexicographically by box coordinates.
#[derive(Debug, Clone)]
pub struct TreeLevel {
    pub boxes: Vec<BoxNode>,
    pub boxes_per_dim: usize,
}

impl TreeLevel {
    /// Box index from box coordinates.
    pub fn box_index(&self, coords: [usize; 3], d: usize) -> usize {
        let mut idx = 0;
        for axis in (0..d).rev() {
            idx = idx * self.boxes_per_dim + coords[axis];
        }
        idx
    }
}

/// Dyadic box tree over the grid's index lattice.
#[derive(Debug, Clone)]
pub struct BoxTree {
    grid: Grid,
    levels: Vec<TreeLevel>,
}

impl BoxTree {
    /// Build `depth + 1` levels (root included); `n` must be divisible by
    /// `2^depth`.
    pub fn build(grid: &Grid, depth: usize) -> Result<Self> {
        let n = grid.points_per_dim();
        let divisor = 1usize << depth;
        if divisor > n || n % divisor != 0 {
            return Err(Error::Divisibility { n, levels: depth, divisor });
        }
        let d = grid.dimension();
        let mut levels = Vec::with_capacity(depth + 1);
        for level in 0..=depth {
            let boxes_per_dim = 1usize << level;
            let width = n / boxes_per_dim;
            let total = boxes_per_dim.pow(d as u32);
            let mut boxes = Vec::with_capacity(total);
            for flat in 0..total {
                let mut coords = [0usize; 3];
                let mut rest = flat;
                for item in coords.iter_mut().take(d) {
                    *item = rest % boxes_per_dim;
                    rest /= boxes_per_dim;
                }
                let mut lo = [0usize; 3];
                for axis in 0..d {
                    lo[axis] = coords[axis] * width;
                }
                boxes.push(BoxNode { coords, lo, width });
            }
            levels.push(TreeLevel { boxes, boxes_per_dim });
        }
        Ok(Self { grid: *grid, levels })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Number of levels below the root.
    pub fn depth(&self) -> usize {
        self.levels.len() - 1
    }

    pub fn level(&self, l: usize) -> &TreeLevel {
        &self.levels[l]
    }

    /// First level holding admissible pairs: below it every pair of boxes is
    /// within Chebyshev distance 1.
    pub fn first_admissible_level(&self) -> usize {
        2
    }
}

fn chebyshev(a: &BoxNode, b: &BoxNode, d: usize) -> usize {
    let mut dist = 0usize;
    for axis in 0..d {
        let delta = a.coords[axis].abs_diff(b.coords[axis]);
        dist = dist.max(delta);
    }
    dist
}

/// Block classification of one level.
#[derive(Debug, Clone)]
pub struct BlockList {
    pub level: usize,
    /// Ordered pairs (target, source) that are compressed at this level.
    pub admissible: Vec<(usize, usize)>,
    /// Ordered pairs too close for compression, refined further (or handled by
    /// the near-field policy at the finest level).
    pub near: Vec<(usize, usize)>,
}

/// Classify all levels. Level 0 starts from the root pair; each level refines
/// the near pairs of its parent.
pub fn block_lists(tree: &BoxTree) -> Vec<BlockList> {
    let d = tree.grid().dimension();
    let mut out = Vec::with_capacity(tree.depth() + 1);
    out.push(BlockList { level: 0, admissible: Vec::new(), near: vec![(0, 0)] });
    for level in 1..=tree.depth() {
        let parent = &out[level - 1];
        let lvl = tree.level(level);
        let parent_lvl = tree.level(level - 1);
        let mut admissible = Vec::new();
        let mut near = Vec::new();
        for &(pt, ps) in &parent.near {
            let pt_box = &parent_lvl.boxes[pt];
            let ps_box = &parent_lvl.boxes[ps];
            for ct in children(pt_box, lvl, d) {
                for cs in children(ps_box, lvl, d) {
                    let dist = chebyshev(&lvl.boxes[ct], &lvl.boxes[cs], d);
                    if dist >= 2 {
                        admissible.push((ct, cs));
                    } else {
                        near.push((ct, cs));
                    }
                }
            }
        }
        admissible.sort_unstable();
        near.sort_unstable();
        out.push(BlockList { level, admissible, near });
    }
    out
}

fn children(parent: &BoxNode, child_level: &TreeLevel, d: usize) -> Vec<usize> {
    let mut out = Vec::with_capacity(1 << d);
    let count = 1usize << d;
    for flat in 0..count {
        let mut coords = [0usize; 3];
        for (axis, item) in coords.iter_mut().enumerate().take(d) {
            *item = 2 * parent.coords[axis] + ((flat >> axis) & 1);
        }
        out.push(child_level.box_index(coords, d));
    }
    out
}

/// Assignment of boxes to spaced color classes: `color_d = coord_d mod W`.
/// Distinct boxes of one class are at least `W` apart in Chebyshev distance,
/// so a window of radius `(W-1)/2` around any target sees at most one source
/// per class.
#[derive(Debug, Clone)]
pub struct Coloring {
    pub level: usize,
    pub window: usize,
    /// Color id of each box at the level.
    pub color_of: Vec<usize>,
    /// Boxes per color, only non-empty classes, ordered by color id.
    pub classes: Vec<(usize, Vec<usize>)>,
}

pub fn coloring(tree: &BoxTree, level: usize, window: usize) -> Coloring {
    let d = tree.grid().dimension();
    let lvl = tree.level(level);
    let mut color_of = Vec::with_capacity(lvl.boxes.len());
    for b in &lvl.boxes {
        let mut color = 0usize;
        for axis in (0..d).rev() {
            color = color * window + (b.coords[axis] % window);
        }
        color_of.push(color);
    }
    let mut by_color: std::collections::BTreeMap<usize, Vec<usize>> = Default::default();
    for (idx, &c) in color_of.iter().enumerate() {
        by_color.entry(c).or_default().push(idx);
    }
    Coloring {
        level,
        window,
        color_of,
        classes: by_color.into_iter().collect(),
    }
}

/// Brute-force validity scan: no target may see two same-color sources within
/// Chebyshev distance `radius`.
pub fn coloring_is_valid(tree: &BoxTree, coloring: &Coloring, radius: usize) -> bool {
    let d = tree.grid().dimension();
    let lvl = tree.level(coloring.level);
    for t in &lvl.boxes {
        let mut seen = std::collections::BTreeSet::new();
        for (s_idx, s) in lvl.boxes.iter().enumerate() {
            if chebyshev(t, s, d) <= radius && !seen.insert(coloring.color_of[s_idx]) {
                return false;
            }
        }
    }
    true
}
