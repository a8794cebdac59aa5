//! Scalar diffusion coefficients `a(x)` evaluated at flux points.
//!
//! The stencil is flux-conservative: the coefficient enters through its values
//! at the midpoints between neighbouring nodes (and between boundary nodes and
//! the boundary). Both neighbours of a midpoint see the identical value, which
//! keeps the assembled matrix exactly symmetric.

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Named coefficient presets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preset {
    /// `a(x) = 1`.
    Identity,
    /// `a(x) = 1 + 0.5 sin(2 pi x_1) cos(2 pi x_2) cos(2 pi x_3)` restricted
    /// to the active dimensions. Smooth and bounded away from zero.
    Smooth,
    /// Piecewise-constant 2x..x2 checkerboard taking values 1 and 10.
    /// Discontinuous across the midplanes, exercising low-regularity
    /// coefficients.
    Checkerboard,
}

#[derive(Debug, Clone)]
pub enum CoefficientField {
    /// Constant 1 coefficient, reducing to the standard Laplacian stencil.
    Identity,
    /// Nodal samples of an isotropic scalar coefficient; flux values are the
    /// arithmetic mean of the two adjacent nodes (one-sided at the boundary).
    Isotropic(Vec<f64>),
    /// Analytic preset evaluated directly at flux midpoints.
    Preset(Preset),
}

impl CoefficientField {
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "identity" => Ok(Self::Identity),
            "smooth" => Ok(Self::Preset(Preset::Smooth)),
            "checkerboard" => Ok(Self::Preset(Preset::Checkerboard)),
            other => Err(Error::Domain(format!(
                "unknown coefficient preset `{other}` (expected identity, smooth or checkerboard)"
            ))),
        }
    }

    pub fn preset_name(&self) -> &'static str {
        match self {
            Self::Identity => "identity",
            Self::Isotropic(_) => "isotropic",
            Self::Preset(Preset::Identity) => "identity",
            Self::Preset(Preset::Smooth) => "smooth",
            Self::Preset(Preset::Checkerboard) => "checkerboard",
        }
    }

    fn eval_point(preset: Preset, x: [f64; 3], d: usize) -> f64 {
        match preset {
            Preset::Identity => 1.0,
            Preset::Smooth => {
                let two_pi = 2.0 * std::f64::consts::PI;
                let mut v = (two_pi * x[0]).sin();
                for item in x.iter().take(d).skip(1) {
                    v *= (two_pi * item).cos();
                }
                1.0 + 0.5 * v
            }
            Preset::Checkerboard => {
                let mut parity = 0usize;
                for item in x.iter().take(d) {
                    // cells [0, 1/2) and [1/2, 1) per dimension
                    if *item >= 0.5 {
                        parity += 1;
                    }
                }
                if parity % 2 == 0 {
                    10.0
                } else {
                    1.0
                }
            }
        }
    }

    /// Coefficient at the flux midpoint between node `idx` and its neighbour
    /// in direction `axis` (`upper` selects the +h side). The neighbour may be
    /// the boundary.
    pub fn flux_value(&self, grid: &Grid, idx: usize, axis: usize, upper: bool) -> f64 {
        match self {
            Self::Identity => 1.0,
            Self::Isotropic(samples) => {
                let m = grid.multi_index(idx);
                let n = grid.points_per_dim();
                let here = samples[idx];
                let neighbour = if upper {
                    if m[axis] + 1 < n {
                        let mut mm = m;
                        mm[axis] += 1;
                        Some(samples[grid.node_index(mm)])
                    } else {
                        None
                    }
                } else if m[axis] > 0 {
                    let mut mm = m;
                    mm[axis] -= 1;
                    Some(samples[grid.node_index(mm)])
                } else {
                    None
                };
                match neighbour {
                    Some(v) => 0.5 * (here + v),
                    None => here,
                }
            }
            Self::Preset(preset) => {
                // canonical closed form so both neighbours of a midpoint
                // compute bit-identical coordinates
                let m = grid.multi_index(idx);
                let h = grid.spacing();
                let d = grid.dimension();
                let mut x = [0.0; 3];
                for (a, item) in x.iter_mut().enumerate().take(d) {
                    *item = (m[a] as f64 + 1.0) * h;
                }
                x[axis] =
                    if upper { (m[axis] as f64 + 1.5) * h } else { (m[axis] as f64 + 0.5) * h };
                Self::eval_point(*preset, x, d)
            }
        }
    }

    /// Uniform-ellipticity check: every flux value must be strictly positive.
    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if let Self::Isotropic(samples) = self {
            if samples.len() != grid.total_nodes() {
                return Err(Error::DimensionMismatch {
                    expected: grid.total_nodes(),
                    got: samples.len(),
                });
            }
        }
        for idx in 0..grid.total_nodes() {
            for axis in 0..grid.dimension() {
                for upper in [false, true] {
                    let v = self.flux_value(grid, idx, axis, upper);
                    if !(v > 0.0) || !v.is_finite() {
                        return Err(Error::EllipticityViolation { node: idx, axis, value: v });
                    }
                }
            }
        }
        Ok(())
    }
}
