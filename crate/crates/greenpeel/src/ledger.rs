//! Accounting of consumed forcing→solution pairs.

use std::sync::atomic::{AtomicU64, Ordering};

/// Thread-safe counters of oracle solves by purpose. Evaluation solves are
/// tracked but excluded from the reported training size.
#[derive(Debug, Default)]
pub struct SolveLedger {
    sketch: Vec<AtomicU64>,
    posterior: Vec<AtomicU64>,
    near_field: AtomicU64,
    hs_estimate: AtomicU64,
    evaluation: AtomicU64,
}

/// Immutable snapshot of the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LedgerCounts {
    /// Sketch solves per level (index = level).
    pub sketch_by_level: Vec<u64>,
    /// Posterior-estimation solves per level.
    pub posterior_by_level: Vec<u64>,
    pub near_field: u64,
    pub hs_estimate: u64,
    pub evaluation: u64,
}

impl LedgerCounts {
    /// Training pairs consumed: everything except evaluation solves.
    pub fn training_total(&self) -> u64 {
        self.sketch_by_level.iter().sum::<u64>()
            + self.posterior_by_level.iter().sum::<u64>()
            + self.near_field
            + self.hs_estimate
    }

    pub fn grand_total(&self) -> u64 {
        self.training_total() + self.evaluation
    }
}

impl SolveLedger {
    pub fn new(levels: usize) -> Self {
        Self {
            sketch: (0..=levels).map(|_| AtomicU64::new(0)).collect(),
            posterior: (0..=levels).map(|_| AtomicU64::new(0)).collect(),
            near_field: AtomicU64::new(0),
            hs_estimate: AtomicU64::new(0),
            evaluation: AtomicU64::new(0),
        }
    }

    pub fn record_sketch(&self, level: usize, count: u64) {
        self.sketch[level].fetch_add(count, Ordering::Relaxed);
    }

    pub fn record_posterior(&self, level: usize, count: u64) {
        self.posterior[level].fetch_add(count, Ordering::Relaxed);
    }

    pub fn record_near_field(&self, count: u64) {
        self.near_field.fetch_add(count, Ordering::Relaxed);
    }

    pub fn record_hs_estimate(&self, count: u64) {
        self.hs_estimate.fetch_add(count, Ordering::Relaxed);
    }

    pub fn record_evaluation(&self, count: u64) {
        self.evaluation.fetch_add(count, Ordering::Relaxed);
    }

    pub fn counts(&self) -> LedgerCounts {
        LedgerCounts {
            sketch_by_level: self.sketch.iter().map(|a| a.load(Ordering::Relaxed)).collect(),
            posterior_by_level: self.posterior.iter().map(|a| a.load(Ordering::Relaxed)).collect(),
            near_field: self.near_field.load(Ordering::Relaxed),
            hs_estimate: self.hs_estimate.load(Ordering::Relaxed),
            evaluation: self.evaluation.load(Ordering::Relaxed),
        }
    }
}
