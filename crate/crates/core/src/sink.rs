//! Per-job outcome consumers.

use crate::error::Result;
use crate::tailstats::{TailCounter, TailGrid, TopReservoir};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplicaState {
    Queued,
    InService,
    Completed,
    Cancelled,
}

/// Final bookkeeping for one replica of a finished job.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReplicaOutcome {
    pub server: u16,
    pub size: f64,
    pub state: ReplicaState,
    /// Absolute time service first started, if it did.
    pub started: Option<f64>,
    /// Service actually rendered, including pieces before preemption.
    pub rendered: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct JobOutcome<'a> {
    /// Arrival index, starting at 0.
    pub index: u64,
    pub arrival: f64,
    pub waiting: f64,
    pub response: f64,
    /// Empty when the producer does not track replicas.
    pub replicas: &'a [ReplicaOutcome],
}

pub trait OutcomeSink {
    fn record(&mut self, outcome: &JobOutcome<'_>) -> Result<()>;
}

impl<S: OutcomeSink + ?Sized> OutcomeSink for &mut S {
    fn record(&mut self, outcome: &JobOutcome<'_>) -> Result<()> {
        (**self).record(outcome)
    }
}

/// Discards everything.
#[derive(Debug, Default, Clone, Copy)]
pub struct NullSink;

impl OutcomeSink for NullSink {
    fn record(&mut self, _: &JobOutcome<'_>) -> Result<()> {
        Ok(())
    }
}

/// Waiting and response exceedance counters plus a response reservoir, skipping warmup jobs.
#[derive(Debug, Clone)]
pub struct TailSinks {
    pub warmup: u64,
    pub waiting: TailCounter,
    pub response: TailCounter,
    pub reservoir: TopReservoir,
}

impl TailSinks {
    pub fn new(grid: TailGrid, warmup: u64, reservoir: usize) -> Self {
        TailSinks {
            warmup,
            waiting: TailCounter::new(grid.clone()),
            response: TailCounter::new(grid),
            reservoir: TopReservoir::new(reservoir),
        }
    }

    pub fn merge(&mut self, other: &TailSinks) -> Result<()> {
        self.waiting.merge(&other.waiting)?;
        self.response.merge(&other.response)?;
        self.reservoir.merge(&other.reservoir);
        Ok(())
    }
}

impl OutcomeSink for TailSinks {
    #[inline]
    fn record(&mut self, o: &JobOutcome<'_>) -> Result<()> {
        if o.index < self.warmup {
            return Ok(());
        }
        self.waiting.record(o.waiting)?;
        self.response.record(o.response)?;
        self.reservoir.offer(o.response);
        Ok(())
    }
}

/// Collects waiting and response times indexed by arrival order.
#[derive(Debug, Clone, Default)]
pub struct SequenceSink {
    pub waiting: Vec<f64>,
    pub response: Vec<f64>,
}

impl SequenceSink {
    pub fn with_capacity(n: usize) -> Self {
        SequenceSink { waiting: vec![f64::NAN; n], response: vec![f64::NAN; n] }
    }
}

impl OutcomeSink for SequenceSink {
    fn record(&mut self, o: &JobOutcome<'_>) -> Result<()> {
        let i = o.index as usize;
        if i >= self.waiting.len() {
            self.waiting.resize(i + 1, f64::NAN);
            self.response.resize(i + 1, f64::NAN);
        }
        self.waiting[i] = o.waiting;
        self.response[i] = o.response;
        Ok(())
    }
}

/// Fans each outcome out to two sinks.
pub struct Tee<A, B>(pub A, pub B);

impl<A: OutcomeSink, B: OutcomeSink> OutcomeSink for Tee<A, B> {
    fn record(&mut self, o: &JobOutcome<'_>) -> Result<()> {
        self.0.record(o)?;
        self.1.record(o)
    }
}

/// Invokes a closure per outcome.
pub struct FnSink<F>(pub F);

impl<F: FnMut(&JobOutcome<'_>) -> Result<()>> OutcomeSink for FnSink<F> {
    fn record(&mut self, o: &JobOutcome<'_>) -> Result<()> {
        (self.0)(o)
    }
}
