//! Discrete-event simulator for all four variant/discipline combinations.
//!
//! Replicas of cancelled jobs are removed lazily: the queue entry stays in
//! place and is skipped when it reaches the head. Events at equal times are
//! processed completions first (lowest server index first), then the arrival.

use std::collections::VecDeque;

use rand::seq::SliceRandom;
use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::run::{RunOptions, RunSummary, TieBreak};
use crate::scenario::{Discipline, ScenarioConfig, Variant};
use crate::sink::{JobOutcome, OutcomeSink, ReplicaOutcome, ReplicaState};
use crate::stream::{JobDraw, Purpose, SimRng, StreamKey};

#[derive(Debug, Clone, Copy)]
struct Entry {
    slot: u32,
    job: u64,
    replica: u8,
}

#[derive(Debug)]
struct Server {
    /// Waiting replicas with their remaining work.
    queue: VecDeque<(Entry, f64)>,
    current: Option<Entry>,
    since: f64,
    completion: f64,
}

impl Server {
    fn idle(&self) -> bool {
        self.current.is_none()
    }
}

#[derive(Debug)]
struct JobRecord {
    index: u64,
    arrival: f64,
    replicas: SmallVec<[ReplicaOutcome; 4]>,
    started: u32,
    completed: u32,
}

struct Engine<'c> {
    variant: Variant,
    discipline: Discipline,
    n_join: u32,
    opts: &'c RunOptions,
    servers: Vec<Server>,
    slots: Vec<Option<JobRecord>>,
    free: Vec<u32>,
    queued: usize,
    tie_rng: SimRng,
    clock: f64,
    summary: RunSummary,
    /// Servers left idle by a cancellation, awaiting dispatch.
    freed: Vec<usize>,
    cand: Vec<usize>,
}

impl<'c> Engine<'c> {
    fn new(cfg: &ScenarioConfig, opts: &'c RunOptions, tie_rng: SimRng) -> Self {
        let servers = (0..cfg.servers)
            .map(|_| Server { queue: VecDeque::new(), current: None, since: 0.0, completion: f64::INFINITY })
            .collect();
        Engine {
            variant: cfg.variant,
            discipline: cfg.discipline,
            n_join: cfg.n_join,
            opts,
            servers,
            slots: Vec::new(),
            free: Vec::new(),
            queued: 0,
            tie_rng,
            clock: 0.0,
            summary: RunSummary { integer_load_warning: cfg.integer_load_warning(), ..Default::default() },
            freed: Vec::new(),
            cand: Vec::new(),
        }
    }

    fn record(&self, e: Entry) -> Option<&JobRecord> {
        self.slots[e.slot as usize].as_ref().filter(|j| j.index == e.job)
    }

    fn is_live_queued(&self, e: Entry) -> bool {
        self.record(e).is_some_and(|j| j.replicas[e.replica as usize].state == ReplicaState::Queued)
    }

    fn replica_mut(&mut self, e: Entry) -> &mut ReplicaOutcome {
        let job = self.slots[e.slot as usize].as_mut().expect("live job");
        &mut job.replicas[e.replica as usize]
    }

    fn next_completion(&self) -> (usize, f64) {
        let mut best = (usize::MAX, f64::INFINITY);
        for (i, s) in self.servers.iter().enumerate() {
            if s.completion < best.1 {
                best = (i, s.completion);
            }
        }
        best
    }

    fn insert(&mut self, rec: JobRecord) -> u32 {
        match self.free.pop() {
            Some(slot) => {
                self.slots[slot as usize] = Some(rec);
                slot
            }
            None => {
                self.slots.push(Some(rec));
                (self.slots.len() - 1) as u32
            }
        }
    }

    /// Chooses `k` of the positions in `cand` (given as replica positions).
    fn choose(&mut self, cand: &mut Vec<usize>, k: usize, servers: &[u16]) {
        if cand.len() <= k {
            return;
        }
        match self.opts.tie_break {
            TieBreak::LowestIndex => cand.sort_unstable_by_key(|&p| servers[p]),
            TieBreak::Uniform => {
                cand.partial_shuffle(&mut self.tie_rng, k);
            }
        }
        cand.truncate(k);
    }

    fn start(&mut self, server: usize, e: Entry, remaining: f64) -> Result<()> {
        let t = self.clock;
        let s = &mut self.servers[server];
        s.current = Some(e);
        s.since = t;
        s.completion = t + remaining;
        let n_join = self.n_join;
        let job = self.slots[e.slot as usize].as_mut().expect("live job");
        let rep = &mut job.replicas[e.replica as usize];
        rep.state = ReplicaState::InService;
        if rep.started.is_none() {
            rep.started = Some(t);
            job.started += 1;
            if self.variant == Variant::Cos && job.started == n_join {
                self.cancel_unfinished(e.slot, false);
            }
        }
        Ok(())
    }

    fn enqueue(&mut self, server: usize, e: Entry, remaining: f64) -> Result<()> {
        self.servers[server].queue.push_back((e, remaining));
        self.queued += 1;
        self.summary.max_queued = self.summary.max_queued.max(self.queued);
        if self.queued > self.opts.queue_cap {
            return Err(Error::ApparentInstability {
                queued: self.queued,
                jobs: self.summary.jobs,
                cap: self.opts.queue_cap,
            });
        }
        Ok(())
    }

    /// LCFS-PR: push the replica in service back onto its stack.
    fn preempt(&mut self, server: usize) -> Result<()> {
        let t = self.clock;
        let Some(e) = self.servers[server].current.take() else { return Ok(()) };
        let (since, completion) = (self.servers[server].since, self.servers[server].completion);
        self.servers[server].completion = f64::INFINITY;
        let rep = self.replica_mut(e);
        rep.rendered += t - since;
        rep.state = ReplicaState::Queued;
        self.enqueue(server, e, completion - t)
    }

    /// Cancels the job's queued replicas and, if `running`, those in service.
    /// Servers freed by this are collected in `freed`.
    fn cancel_unfinished(&mut self, slot: u32, running: bool) {
        let t = self.clock;
        let job = self.slots[slot as usize].as_mut().expect("live job");
        let index = job.index;
        for r in 0..job.replicas.len() {
            let rep = &mut job.replicas[r];
            match rep.state {
                ReplicaState::Queued => {
                    rep.state = ReplicaState::Cancelled;
                    self.queued -= 1;
                }
                ReplicaState::InService if running => {
                    let s = rep.server as usize;
                    let srv = &mut self.servers[s];
                    match srv.current {
                        Some(cur) if cur.slot == slot && cur.job == index && cur.replica as usize == r => {
                            rep.rendered += t - srv.since;
                            rep.state = ReplicaState::Cancelled;
                            srv.current = None;
                            srv.completion = f64::INFINITY;
                            self.freed.push(s);
                        }
                        _ => unreachable!("in-service replica not on its server"),
                    }
                }
                _ => {}
            }
        }
    }

    /// Starts the next live replica on an idle server, if any.
    fn dispatch(&mut self, server: usize) -> Result<()> {
        if !self.servers[server].idle() {
            return Ok(());
        }
        loop {
            let next = match self.discipline {
                Discipline::Fcfs => self.servers[server].queue.pop_front(),
                Discipline::LcfsPr => self.servers[server].queue.pop_back(),
            };
            let Some((e, remaining)) = next else { return Ok(()) };
            if self.is_live_queued(e) {
                self.queued -= 1;
                return self.start(server, e, remaining);
            }
        }
    }

    fn dispatch_freed(&mut self) -> Result<()> {
        while !self.freed.is_empty() {
            let mut freed = std::mem::take(&mut self.freed);
            freed.sort_unstable();
            freed.dedup();
            for s in freed {
                self.dispatch(s)?;
            }
        }
        Ok(())
    }

    fn arrive(&mut self, index: u64, draw: &JobDraw) -> Result<()> {
        let t = self.clock;
        let replicas = draw
            .servers
            .iter()
            .zip(&draw.sizes)
            .map(|(&server, &size)| ReplicaOutcome {
                server,
                size,
                state: ReplicaState::Queued,
                started: None,
                rendered: 0.0,
            })
            .collect();
        let slot = self.insert(JobRecord { index, arrival: t, replicas, started: 0, completed: 0 });
        let entry = |r: usize| Entry { slot, job: index, replica: r as u8 };
        let n = draw.servers.len();
        let n_join = self.n_join as usize;
        // every replica counts as queued until it starts or is cancelled
        self.queued += n;
        let mut cand = std::mem::take(&mut self.cand);
        cand.clear();

        match (self.variant, self.discipline) {
            (Variant::Cos, Discipline::Fcfs) => {
                cand.extend((0..n).filter(|&p| self.servers[draw.servers[p] as usize].idle()));
                self.choose(&mut cand, n_join, &draw.servers);
                let starts = std::mem::take(&mut cand);
                for &p in &starts {
                    self.queued -= 1;
                    self.start(draw.servers[p] as usize, entry(p), draw.sizes[p])?;
                }
                self.enqueue_remaining(slot, draw)?;
                cand = starts;
            }
            (Variant::Cos, Discipline::LcfsPr) => {
                cand.extend(0..n);
                self.choose(&mut cand, n_join, &draw.servers);
                let starts = std::mem::take(&mut cand);
                // unchosen replicas never start
                let job = self.slots[slot as usize].as_mut().expect("live job");
                for (p, rep) in job.replicas.iter_mut().enumerate() {
                    if !starts.contains(&p) {
                        rep.state = ReplicaState::Cancelled;
                        self.queued -= 1;
                    }
                }
                for &p in &starts {
                    let s = draw.servers[p] as usize;
                    self.preempt(s)?;
                    self.queued -= 1;
                    self.start(s, entry(p), draw.sizes[p])?;
                }
                cand = starts;
            }
            (Variant::Coc, Discipline::Fcfs) => {
                for p in 0..n {
                    let s = draw.servers[p] as usize;
                    if self.servers[s].idle() {
                        self.queued -= 1;
                        self.start(s, entry(p), draw.sizes[p])?;
                    }
                }
                self.enqueue_remaining(slot, draw)?;
            }
            (Variant::Coc, Discipline::LcfsPr) => {
                for p in 0..n {
                    let s = draw.servers[p] as usize;
                    self.preempt(s)?;
                    self.queued -= 1;
                    self.start(s, entry(p), draw.sizes[p])?;
                }
            }
        }
        self.cand = cand;
        self.summary.max_queued = self.summary.max_queued.max(self.queued);
        if self.queued > self.opts.queue_cap {
            return Err(Error::ApparentInstability {
                queued: self.queued,
                jobs: self.summary.jobs,
                cap: self.opts.queue_cap,
            });
        }
        Ok(())
    }

    /// Pushes the replicas that neither started nor were cancelled onto their queues.
    fn enqueue_remaining(&mut self, slot: u32, draw: &JobDraw) -> Result<()> {
        let job = self.slots[slot as usize].as_ref().expect("live job");
        let index = job.index;
        let pending: SmallVec<[usize; 8]> =
            (0..job.replicas.len()).filter(|&r| job.replicas[r].state == ReplicaState::Queued).collect();
        for p in pending {
            // counted in `queued` at arrival; enqueue() counts again
            self.queued -= 1;
            self.enqueue(draw.servers[p] as usize, Entry { slot, job: index, replica: p as u8 }, draw.sizes[p])?;
        }
        Ok(())
    }

    fn complete<S: OutcomeSink + ?Sized>(&mut self, server: usize, sink: &mut S) -> Result<()> {
        let t = self.clock;
        let srv = &mut self.servers[server];
        let e = srv.current.take().expect("completion on a busy server");
        let since = srv.since;
        srv.completion = f64::INFINITY;
        let job = self.slots[e.slot as usize].as_mut().expect("live job");
        let rep = &mut job.replicas[e.replica as usize];
        rep.rendered += t - since;
        rep.state = ReplicaState::Completed;
        job.completed += 1;
        let done = job.completed == self.n_join;
        self.freed.push(server);
        if done {
            self.cancel_unfinished(e.slot, true);
            let job = self.slots[e.slot as usize].take().expect("live job");
            self.free.push(e.slot);
            let mut starts: SmallVec<[f64; 8]> = job.replicas.iter().filter_map(|r| r.started).collect();
            starts.sort_unstable_by(f64::total_cmp);
            let waiting = starts[self.n_join as usize - 1] - job.arrival;
            sink.record(&JobOutcome {
                index: job.index,
                arrival: job.arrival,
                waiting,
                response: t - job.arrival,
                replicas: &job.replicas,
            })?;
        }
        self.dispatch_freed()
    }
}

/// Runs the event simulation over `n_jobs` arrivals of `jobs` until the system
/// empties. Outcomes reach the sink in completion order.
pub fn simulate<I, S>(
    cfg: &ScenarioConfig,
    jobs: I,
    n_jobs: u64,
    opts: &RunOptions,
    tie_rng: SimRng,
    sink: &mut S,
) -> Result<RunSummary>
where
    I: IntoIterator<Item = JobDraw>,
    S: OutcomeSink + ?Sized,
{
    cfg.validate()?;
    if cfg.variant == Variant::Cos {
        cfg.check_stable()?;
    }
    if n_jobs < opts.warmup {
        return Err(Error::config(format!("n_jobs {n_jobs} below warmup {}", opts.warmup)));
    }
    let mut eng = Engine::new(cfg, opts, tie_rng);
    let mut jobs = jobs.into_iter().take(n_jobs as usize);
    let mut next = jobs.next();
    let mut arrival_at = next.as_ref().map_or(f64::INFINITY, |j| j.gap);
    let mut index = 0u64;
    loop {
        let (server, done_at) = eng.next_completion();
        match next.take() {
            Some(draw) if arrival_at < done_at => {
                debug_assert!(arrival_at >= eng.clock);
                eng.clock = arrival_at;
                eng.summary.jobs += 1;
                eng.summary.total_work += draw.sizes.iter().sum::<f64>() / draw.sizes.len() as f64;
                if index >= opts.warmup {
                    eng.summary.recorded += 1;
                }
                eng.arrive(index, &draw)?;
                index += 1;
                next = jobs.next();
                if let Some(j) = &next {
                    arrival_at += j.gap;
                }
            }
            pending => {
                next = pending;
                if !done_at.is_finite() {
                    break;
                }
                debug_assert!(done_at >= eng.clock);
                eng.clock = done_at;
                eng.complete(server, sink)?;
            }
        }
    }
    // once the stream is exhausted `arrival_at` holds the last arrival time
    eng.summary.elapsed = if eng.summary.jobs == 0 { 0.0 } else { arrival_at };
    eng.summary.measured_load =
        if eng.summary.elapsed > 0.0 { eng.summary.total_work / eng.summary.elapsed } else { 0.0 };
    Ok(eng.summary)
}

fn check_kind(cfg: &ScenarioConfig, variant: Variant, discipline: Discipline) -> Result<()> {
    if cfg.variant != variant || cfg.discipline != discipline {
        return Err(Error::config(format!(
            "{}: scenario is {} {}, expected {variant} {discipline}",
            cfg.name, cfg.variant, cfg.discipline
        )));
    }
    Ok(())
}

/// Runs one replication drawn from `key`'s job and tie-break streams.
pub fn run_keyed<S: OutcomeSink + ?Sized>(
    cfg: &ScenarioConfig,
    n_jobs: u64,
    opts: &RunOptions,
    key: StreamKey,
    sink: &mut S,
) -> Result<RunSummary> {
    simulate(cfg, key.jobs(cfg), n_jobs, opts, key.rng(Purpose::TieBreak), sink)
}

pub fn run_coc_fcfs<S: OutcomeSink + ?Sized>(
    cfg: &ScenarioConfig,
    n_jobs: u64,
    opts: &RunOptions,
    key: StreamKey,
    sink: &mut S,
) -> Result<RunSummary> {
    check_kind(cfg, Variant::Coc, Discipline::Fcfs)?;
    run_keyed(cfg, n_jobs, opts, key, sink)
}

pub fn run_coc_lcfs_pr<S: OutcomeSink + ?Sized>(
    cfg: &ScenarioConfig,
    n_jobs: u64,
    opts: &RunOptions,
    key: StreamKey,
    sink: &mut S,
) -> Result<RunSummary> {
    check_kind(cfg, Variant::Coc, Discipline::LcfsPr)?;
    run_keyed(cfg, n_jobs, opts, key, sink)
}

pub fn run_cos_lcfs_pr<S: OutcomeSink + ?Sized>(
    cfg: &ScenarioConfig,
    n_jobs: u64,
    opts: &RunOptions,
    key: StreamKey,
    sink: &mut S,
) -> Result<RunSummary> {
    check_kind(cfg, Variant::Cos, Discipline::LcfsPr)?;
    run_keyed(cfg, n_jobs, opts, key, sink)
}
