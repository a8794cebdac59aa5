//! Uniform grids of interior nodes on the unit box.

use crate::error::{Error, Result};

/// Default cap on the total number of nodes a grid may hold.
pub const DEFAULT_NODE_CAP: usize = 1 << 22;

/// Interior nodes of a uniform tensor grid on `(0,1)^d`.
///
/// With `n` interior points per dimension the spacing is `h = 1/(n+1)` and the
/// node at multi-index `m` sits at `(m + 1) * h` componentwise. Nodes are
/// numbered lexicographically with dimension 0 varying fastest.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    d: usize,
    n: usize,
    total: usize,
}

impl Grid {
    pub fn new(d: usize, n: usize) -> Result<Self> {
        Self::with_node_cap(d, n, DEFAULT_NODE_CAP)
    }

    pub fn with_node_cap(d: usize, n: usize, cap: usize) -> Result<Self> {
        if !(1..=3).contains(&d) {
            return Err(Error::InvalidDimension(d));
        }
        if n < 2 {
            return Err(Error::Domain(format!("need at least 2 points per dimension, got {n}")));
        }
        let mut total: usize = 1;
        for _ in 0..d {
            total = total
                .checked_mul(n)
                .ok_or(Error::MemoryCapExceeded { requested: usize::MAX, cap })?;
        }
        if total > cap {
            return Err(Error::MemoryCapExceeded { requested: total, cap });
        }
        Ok(Self { d, n, total })
    }

    pub fn dimension(&self) -> usize {
        self.d
    }

    /// Interior points per dimension.
    pub fn points_per_dim(&self) -> usize {
        self.n
    }

    /// Grid spacing `1/(n+1)`.
    pub fn spacing(&self) -> f64 {
        1.0 / (self.n as f64 + 1.0)
    }

    /// Total number of interior nodes, `n^d`.
    pub fn total_nodes(&self) -> usize {
        self.total
    }

    /// Quadrature weight `h^d` of one node.
    pub fn cell_weight(&self) -> f64 {
        self.spacing().powi(self.d as i32)
    }

    /// Multi-index of a node. Unused trailing components are zero.
    pub fn multi_index(&self, idx: usize) -> [usize; 3] {
        debug_assert!(idx < self.total);
        let mut m = [0usize; 3];
        let mut rest = idx;
        for item in m.iter_mut().take(self.d) {
            *item = rest % self.n;
            rest /= self.n;
        }
        m
    }

    /// Lexicographic node index of a multi-index.
    pub fn node_index(&self, m: [usize; 3]) -> usize {
        let mut idx = 0;
        for axis in (0..self.d).rev() {
            debug_assert!(m[axis] < self.n);
            idx = idx * self.n + m[axis];
        }
        idx
    }

    /// Physical coordinates of a node. Unused components are zero.
    pub fn coords(&self, idx: usize) -> [f64; 3] {
        let m = self.multi_index(idx);
        let h = self.spacing();
        let mut x = [0.0; 3];
        for axis in 0..self.d {
            x[axis] = (m[axis] as f64 + 1.0) * h;
        }
        x
    }

    /// Squared Euclidean distance between two nodes.
    pub fn dist2(&self, i: usize, j: usize) -> f64 {
        let a = self.coords(i);
        let b = self.coords(j);
        let mut acc = 0.0;
        for axis in 0..self.d {
            let d = a[axis] - b[axis];
            acc += d * d;
        }
        acc
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_dimensional_nodes() {
        let g = Grid::new(1, 4).unwrap();
        assert_eq!(g.spacing(), 0.2);
        let xs: Vec<f64> = (0..4).map(|i| g.coords(i)[0]).collect();
        for (x, want) in xs.iter().zip([0.2, 0.4, 0.6, 0.8]) {
            assert!((x - want).abs() < 1e-15);
        }
    }

    #[test]
    fn center_node_in_2d() {
        let g = Grid::new(2, 3).unwrap();
        assert_eq!(g.total_nodes(), 9);
        let c = g.coords(4);
        assert!((c[0] - 0.5).abs() < 1e-15 && (c[1] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn three_dimensional_grid() {
        let g = Grid::new(3, 2).unwrap();
        assert_eq!(g.total_nodes(), 8);
        assert!((g.spacing() - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_dimension_and_caps() {
        assert!(matches!(Grid::new(0, 4), Err(Error::InvalidDimension(0))));
        assert!(matches!(Grid::new(4, 4), Err(Error::InvalidDimension(4))));
        assert!(matches!(
            Grid::with_node_cap(2, 100, 100),
            Err(Error::MemoryCapExceeded { requested: 10000, cap: 100 })
        ));
    }

    #[test]
    fn index_roundtrip_is_bijective() {
        for (d, n) in [(1, 7), (2, 5), (3, 3)] {
            let g = Grid::new(d, n).unwrap();
            for idx in 0..g.total_nodes() {
                assert_eq!(g.node_index(g.multi_index(idx)), idx);
            }
        }
    }
}
