//! Per-level accuracy schedule.
//!
//! Coarse levels are learned first and their errors propagate into every finer
//! sketch, so the coarsest level gets the tightest tolerance. The geometric
//! schedule `eps_l = eps * 2^(l - L)` sums to less than `2 eps` over all
//! levels.

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct LevelSchedule {
    pub epsilon: f64,
    pub l_min: usize,
    pub l_max: usize,
    tols: Vec<f64>,
}

impl LevelSchedule {
    /// Geometric schedule over levels `l_min..=l_max`.
    pub fn geometric(epsilon: f64, l_min: usize, l_max: usize) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < 1.0) {
            return Err(Error::Domain(format!("epsilon must lie in (0,1), got {epsilon}")));
        }
        if l_max < l_min {
            return Err(Error::Domain(format!(
                "schedule needs l_max >= l_min, got {l_max} < {l_min}"
            )));
        }
        let tols = (l_min..=l_max)
            .map(|l| epsilon * 2f64.powi(l as i32 - l_max as i32))
            .collect();
        Ok(Self { epsilon, l_min, l_max, tols })
    }

    pub fn tolerance(&self, level: usize) -> f64 {
        assert!((self.l_min..=self.l_max).contains(&level));
        self.tols[level - self.l_min]
    }

    pub fn tolerances(&self) -> &[f64] {
        &self.tols
    }
}
