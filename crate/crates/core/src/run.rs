//! Options and summaries shared by the simulators.

use serde::Serialize;

/// How simultaneous service starts are resolved in the c.o.s. variant.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Uniformly at random among the tied servers.
    #[default]
    Uniform,
    /// Lowest server index first; matches the recursion's index rule.
    LowestIndex,
}

pub const DEFAULT_QUEUE_CAP: usize = 10_000_000;
pub const MIN_WARMUP: u64 = 100_000;

/// `max(10^5, 1% of n_jobs)`.
pub fn default_warmup(n_jobs: u64) -> u64 {
    MIN_WARMUP.max(n_jobs / 100)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RunOptions {
    /// Jobs (by arrival index) excluded from the tail sinks.
    pub warmup: u64,
    /// Abort once this many replicas are waiting system-wide.
    pub queue_cap: usize,
    pub tie_break: TieBreak,
}

impl RunOptions {
    pub fn for_jobs(n_jobs: u64) -> Self {
        RunOptions { warmup: default_warmup(n_jobs), ..Default::default() }
    }

    pub fn no_warmup() -> Self {
        RunOptions { warmup: 0, ..Default::default() }
    }

    pub fn with_tie_break(mut self, tie_break: TieBreak) -> Self {
        self.tie_break = tie_break;
        self
    }
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions { warmup: MIN_WARMUP, queue_cap: DEFAULT_QUEUE_CAP, tie_break: TieBreak::Uniform }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct RunSummary {
    pub jobs: u64,
    /// Jobs past warmup.
    pub recorded: u64,
    pub total_work: f64,
    pub elapsed: f64,
    /// Offered work per unit time over the run, `Σb / Σa`.
    pub measured_load: f64,
    pub max_workload: f64,
    pub max_queued: usize,
    pub integer_load_warning: bool,
}
