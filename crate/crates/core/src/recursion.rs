//! Workload-vector recursion for c.o.s. FCFS redundancy-d (equivalently JSW-d).
//!
//! Each arrival joins the sampled server with the smallest residual workload
//! (lowest index among ties), then every coordinate drains by the next
//! interarrival gap and is clamped at zero. No event list is needed, which
//! makes this the fast path for c.o.s. FCFS experiments.

use crate::error::{Error, Result};
use crate::run::{RunOptions, RunSummary};
use crate::scenario::{Discipline, ScenarioConfig, Variant};
use crate::sink::{JobOutcome, OutcomeSink};
use crate::stream::JobDraw;

/// Residual workloads indexed by server.
#[derive(Debug, Clone, PartialEq)]
pub struct WorkloadVector {
    by_server: Vec<f64>,
}

/// One arrival as seen by the recursion, carrying the gap until the next one.
#[derive(Debug, Clone, Copy)]
pub struct ArrivalEvent<'a> {
    pub servers: &'a [u16],
    /// `sizes[i]` is the replica size at `servers[i]`.
    pub sizes: &'a [f64],
    pub next_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Assignment {
    pub waiting: f64,
    pub server: u16,
    pub size: f64,
}

impl WorkloadVector {
    pub fn empty(servers: usize) -> Self {
        WorkloadVector { by_server: vec![0.0; servers] }
    }

    pub fn from_workloads(by_server: Vec<f64>) -> Self {
        assert!(by_server.iter().all(|&v| v >= 0.0), "workloads are nonnegative");
        WorkloadVector { by_server }
    }

    pub fn by_server(&self) -> &[f64] {
        &self.by_server
    }

    /// The ordered view `D = R(V)`, nondecreasing.
    pub fn ordered(&self) -> Vec<f64> {
        let mut d = self.by_server.clone();
        d.sort_unstable_by(f64::total_cmp);
        d
    }

    pub fn total(&self) -> f64 {
        self.by_server.iter().sum()
    }

    pub fn max(&self) -> f64 {
        self.by_server.iter().copied().fold(0.0, f64::max)
    }

    /// Joins the least-loaded sampled server; returns the waiting time `W_min`.
    #[inline]
    pub fn assign(&mut self, servers: &[u16], sizes: &[f64]) -> Assignment {
        let mut best = 0;
        for pos in 1..servers.len() {
            let (cand, cur) = (servers[pos], servers[best]);
            let (wc, wb) = (self.by_server[cand as usize], self.by_server[cur as usize]);
            if wc < wb || (wc == wb && cand < cur) {
                best = pos;
            }
        }
        let server = servers[best];
        let size = sizes[best];
        let waiting = self.by_server[server as usize];
        self.by_server[server as usize] += size;
        Assignment { waiting, server, size }
    }

    #[inline]
    pub fn advance(&mut self, gap: f64) {
        for v in &mut self.by_server {
            *v = (*v - gap).max(0.0);
        }
    }
}

/// One step of the recursion: assign the arrival, then drain by the next gap.
pub fn jsw_d_step(state: &mut WorkloadVector, ev: &ArrivalEvent<'_>) -> Assignment {
    let a = state.assign(ev.servers, ev.sizes);
    state.advance(ev.next_gap);
    a
}

/// The ordered recursion `D_{n+1} = R((D_n + e_j b_n - a_{n+1})^+)` where the
/// sample addresses ranks of the ordered vector rather than server identities.
///
/// Uniform rank samples are equal in law to uniform server samples, and with
/// shared rank samples two copies of the recursion can be compared pathwise.
#[derive(Debug, Clone, PartialEq)]
pub struct RankedWorkload {
    ordered: Vec<f64>,
}

impl RankedWorkload {
    pub fn empty(servers: usize) -> Self {
        RankedWorkload { ordered: vec![0.0; servers] }
    }

    pub fn ordered(&self) -> &[f64] {
        &self.ordered
    }

    /// Joins the lowest sampled rank; returns `W_min = D_j`.
    #[inline]
    pub fn assign(&mut self, ranks: &[u16], sizes: &[f64]) -> f64 {
        let (pos, &rank) = ranks.iter().enumerate().min_by_key(|(_, &r)| r).expect("nonempty sample");
        let j = rank as usize;
        let waiting = self.ordered[j];
        self.ordered[j] += sizes[pos];
        // restore order: only coordinate j grew
        let mut i = j;
        while i + 1 < self.ordered.len() && self.ordered[i] > self.ordered[i + 1] {
            self.ordered.swap(i, i + 1);
            i += 1;
        }
        waiting
    }

    #[inline]
    pub fn advance(&mut self, gap: f64) {
        for v in &mut self.ordered {
            *v = (*v - gap).max(0.0);
        }
    }
}

/// c.o.s. FCFS redundancy-d over a job stream. `n_F` replicas are sampled but
/// only the first to start is served, so `n_J` must be 1.
pub fn run_cos_fcfs<I, S>(
    cfg: &ScenarioConfig,
    jobs: I,
    n_jobs: u64,
    opts: &RunOptions,
    sink: &mut S,
) -> Result<RunSummary>
where
    I: IntoIterator<Item = JobDraw>,
    S: OutcomeSink + ?Sized,
{
    cfg.validate()?;
    if cfg.variant != Variant::Cos || cfg.discipline != Discipline::Fcfs || cfg.n_join != 1 {
        return Err(Error::config(format!("{}: the recursion covers c.o.s. FCFS with n_J = 1 only", cfg.name)));
    }
    cfg.check_stable()?;
    if n_jobs < opts.warmup {
        return Err(Error::config(format!("n_jobs {n_jobs} below warmup {}", opts.warmup)));
    }

    let mut state = WorkloadVector::empty(cfg.servers as usize);
    let mut summary = RunSummary { integer_load_warning: cfg.integer_load_warning(), ..Default::default() };
    let mut clock = 0.0;
    for (index, job) in jobs.into_iter().take(n_jobs as usize).enumerate() {
        if index > 0 {
            state.advance(job.gap);
        }
        clock += job.gap;
        summary.elapsed += job.gap;
        let a = state.assign(&job.servers, &job.sizes);
        summary.total_work += a.size;
        summary.max_workload = summary.max_workload.max(state.by_server[a.server as usize]);
        summary.jobs += 1;
        if index as u64 >= opts.warmup {
            summary.recorded += 1;
        }
        sink.record(&JobOutcome {
            index: index as u64,
            arrival: clock,
            waiting: a.waiting,
            response: a.waiting + a.size,
            replicas: &[],
        })?;
    }
    summary.measured_load = if summary.elapsed > 0.0 { summary.total_work / summary.elapsed } else { 0.0 };
    Ok(summary)
}
