//! Single-server bound systems and coupled-stream dominance checks.
//!
//! All systems here read the same [`JobStream`] as the engine, so a given
//! seed drives every system with identical gaps, samples, sizes and thinning
//! coins.

use std::fmt;

use serde::Serialize;

use crate::engine;
use crate::error::{Error, Result};
use crate::heavytail::ReplicaDependence;
use crate::recursion::RankedWorkload;
use crate::run::RunOptions;
use crate::scenario::{Discipline, ScenarioConfig, Variant};
use crate::sink::{FnSink, JobOutcome, OutcomeSink};
use crate::stream::{JobDraw, JobStream, Purpose, SimRng, StreamKey};
use crate::tailstats::{TailCounter, TailGrid};

/// Replayable source of the shared randomness for one scenario and replication.
#[derive(Debug, Clone)]
pub struct CoupledStreams {
    cfg: ScenarioConfig,
    key: StreamKey,
}

impl CoupledStreams {
    pub fn new(cfg: &ScenarioConfig, key: StreamKey) -> Self {
        CoupledStreams { cfg: cfg.clone(), key }
    }

    pub fn cfg(&self) -> &ScenarioConfig {
        &self.cfg
    }

    pub fn key(&self) -> StreamKey {
        self.key
    }

    /// A fresh copy of the job stream, bit-identical on every call.
    pub fn jobs(&self) -> JobStream {
        self.key.jobs(&self.cfg)
    }

    pub fn tie_rng(&self) -> SimRng {
        self.key.rng(Purpose::TieBreak)
    }

    pub fn auxiliary_rng(&self) -> SimRng {
        self.key.rng(Purpose::Auxiliary)
    }
}

/// A work-conserving single-server queue fed one job at a time in arrival order.
#[derive(Debug, Clone)]
pub struct SingleServer {
    discipline: Discipline,
    /// FCFS: departure time of the last admitted job.
    last_departure: f64,
    /// LCFS-PR: `(index, arrival, remaining)` with the job in service on top.
    stack: Vec<(u64, f64, f64)>,
    clock: f64,
}

impl SingleServer {
    pub fn new(discipline: Discipline) -> Self {
        SingleServer { discipline, last_departure: 0.0, stack: Vec::new(), clock: 0.0 }
    }

    /// Admits a job arriving at `t` (nondecreasing across calls).
    pub fn offer<S: OutcomeSink + ?Sized>(&mut self, index: u64, t: f64, size: f64, sink: &mut S) -> Result<()> {
        match self.discipline {
            Discipline::Fcfs => {
                let start = t.max(self.last_departure);
                self.last_departure = start + size;
                sink.record(&JobOutcome {
                    index,
                    arrival: t,
                    waiting: start - t,
                    response: self.last_departure - t,
                    replicas: &[],
                })
            }
            Discipline::LcfsPr => {
                self.serve_until(t, sink)?;
                self.stack.push((index, t, size));
                Ok(())
            }
        }
    }

    /// Serves the remaining work with no further arrivals.
    pub fn finish<S: OutcomeSink + ?Sized>(&mut self, sink: &mut S) -> Result<()> {
        self.serve_until(f64::INFINITY, sink)
    }

    fn serve_until<S: OutcomeSink + ?Sized>(&mut self, t: f64, sink: &mut S) -> Result<()> {
        while let Some(top) = self.stack.last_mut() {
            let done = self.clock + top.2;
            if done <= t {
                let (index, arrival, _) = *top;
                self.stack.pop();
                self.clock = done;
                sink.record(&JobOutcome { index, arrival, waiting: 0.0, response: done - arrival, replicas: &[] })?;
            } else {
                top.2 = done - t;
                break;
            }
        }
        if t.is_finite() {
            self.clock = t;
        }
        Ok(())
    }
}

/// Which arrivals the lower bound system admits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ThinningRule {
    /// Each arrival independently with probability `1/K`, using the stream's coin.
    Bernoulli,
    /// Arrivals whose sample contains this server. Admits a `1/K` fraction only when `n_F = 1`.
    RoutedTo(u16),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BoundRun {
    pub offered: u64,
    pub admitted: u64,
    /// Theoretical load of the bound system.
    pub load: f64,
}

fn feed<S, F>(
    discipline: Discipline,
    jobs: impl Iterator<Item = JobDraw>,
    n_jobs: u64,
    mut admit: F,
    sink: &mut S,
) -> Result<BoundRun>
where
    S: OutcomeSink + ?Sized,
    F: FnMut(&JobDraw) -> Option<f64>,
{
    let mut q = SingleServer::new(discipline);
    let mut t = 0.0;
    let mut run = BoundRun { offered: 0, admitted: 0, load: 0.0 };
    for (index, job) in jobs.take(n_jobs as usize).enumerate() {
        t += job.gap;
        run.offered += 1;
        if let Some(size) = admit(&job) {
            run.admitted += 1;
            q.offer(index as u64, t, size, sink)?;
        }
    }
    q.finish(sink)?;
    Ok(run)
}

/// Single server fed every arrival with the `n_J`-th smallest replica size.
/// Job indices in the sink are arrival indices of the original stream.
pub fn upper_gig1<S: OutcomeSink + ?Sized>(streams: &CoupledStreams, n_jobs: u64, sink: &mut S) -> Result<BoundRun> {
    let cfg = streams.cfg();
    let load = cfg.rho_upper();
    if !(load < 1.0) {
        return Err(Error::Unstable(format!("{}: upper bound system has rho_U = {load}", cfg.name)));
    }
    let n_join = cfg.n_join as usize;
    let mut run = feed(cfg.discipline, streams.jobs(), n_jobs, |j| Some(j.order_stat(n_join)), sink)?;
    run.load = load;
    Ok(run)
}

/// Single server fed a thinned subsequence of arrivals with the `n_J`-th smallest replica size.
pub fn lower_gig1<S: OutcomeSink + ?Sized>(
    streams: &CoupledStreams,
    n_jobs: u64,
    rule: ThinningRule,
    sink: &mut S,
) -> Result<BoundRun> {
    let cfg = streams.cfg();
    let n_join = cfg.n_join as usize;
    let p = 1.0 / cfg.k_factor();
    let mut run = match rule {
        ThinningRule::Bernoulli => {
            feed(cfg.discipline, streams.jobs(), n_jobs, |j| (j.thin_u <= p).then(|| j.order_stat(n_join)), sink)?
        }
        ThinningRule::RoutedTo(server) => {
            if cfg.n_fork != 1 || server as u32 >= cfg.servers {
                return Err(Error::config(format!(
                    "{}: routing-based thinning needs n_F = 1 and a valid server",
                    cfg.name
                )));
            }
            feed(
                cfg.discipline,
                streams.jobs(),
                n_jobs,
                |j| (j.servers[0] == server).then(|| j.order_stat(n_join)),
                sink,
            )?
        }
    };
    run.load = cfg.rho_lower();
    Ok(run)
}

/// Identical replicas that are all served in full: Bernoulli(`n_F/N`) thinning with the raw size.
pub fn identical_remark_upper<S: OutcomeSink + ?Sized>(
    streams: &CoupledStreams,
    n_jobs: u64,
    sink: &mut S,
) -> Result<BoundRun> {
    let cfg = streams.cfg();
    if cfg.dependence != ReplicaDependence::Identical {
        return Err(Error::domain(format!("{}: the all-replicas system needs identical replicas", cfg.name)));
    }
    let p = cfg.n_fork as f64 / cfg.servers as f64;
    let mut run = feed(cfg.discipline, streams.jobs(), n_jobs, |j| (j.thin_u <= p).then(|| j.sizes[0]), sink)?;
    run.load = cfg.rho_all_replicas();
    Ok(run)
}

/// Waiting times by the Lindley recursion `W_{n+1} = (W_n + b_n - a_{n+1})^+`,
/// where `jobs[n] = (a_n, b_n)` and `W_0 = 0`.
pub fn lindley_waiting(jobs: &[(f64, f64)]) -> Vec<f64> {
    let mut out = Vec::with_capacity(jobs.len());
    let mut w = 0.0_f64;
    for (n, &(_, b)) in jobs.iter().enumerate() {
        out.push(w);
        if let Some(&(a_next, _)) = jobs.get(n + 1) {
            w = (w + b - a_next).max(0.0);
        }
    }
    out
}

/// Admissible range of the slack `h` for the auxiliary batch systems.
pub fn batch_slack_interval(cfg: &ScenarioConfig) -> Result<(f64, f64)> {
    let a = cfg.mean_interarrival();
    let b = cfg
        .job_size
        .mean()
        .finite()
        .ok_or_else(|| Error::domain(format!("{}: batch systems need a finite mean job size", cfg.name)))?;
    let k = cfg
        .integer_part()
        .filter(|&k| k < cfg.servers)
        .ok_or_else(|| Error::Unstable(format!("{}: rho >= N", cfg.name)))? as f64;
    let hi = a - b / (k + 1.0);
    Ok((k / (k + 1.0) * hi, hi))
}

/// `N` parallel D/G/1 queues receiving one job each per batch, with batches
/// every `(k+1)(a' - h)`. Batch `n` puts job `n`'s size on its first sampled
/// server; the other queues get independent sizes from the auxiliary stream.
pub fn auxiliary_batch_dg1(streams: &CoupledStreams, n_batches: u64, h: f64) -> Result<Vec<Vec<f64>>> {
    let cfg = streams.cfg();
    let (lo, hi) = batch_slack_interval(cfg)?;
    if !(h > lo && h < hi) {
        return Err(Error::config(format!("{}: h = {h} outside ({lo}, {hi})", cfg.name)));
    }
    let k = cfg.integer_part().expect("checked above") as f64;
    let period = (k + 1.0) * (cfg.mean_interarrival() - h);
    let n = cfg.servers as usize;
    let mut aux = streams.auxiliary_rng();
    let mut waits = vec![Vec::with_capacity(n_batches as usize); n];
    let mut w = vec![0.0_f64; n];
    for job in streams.jobs().take(n_batches as usize) {
        let chosen = job.servers[0] as usize;
        for (i, wi) in w.iter_mut().enumerate() {
            waits[i].push(*wi);
            let b = if i == chosen { job.sizes[0] } else { cfg.job_size.sample(&mut aux) };
            *wi = (*wi + b - period).max(0.0);
        }
    }
    Ok(waits)
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckCount {
    pub checked: u64,
    pub violations: u64,
    /// Largest amount by which the inequality failed, 0 when it never did.
    pub worst_excess: f64,
    pub skipped: Option<String>,
}

impl CheckCount {
    fn skipped(reason: impl Into<String>) -> Self {
        CheckCount { checked: 0, violations: 0, worst_excess: 0.0, skipped: Some(reason.into()) }
    }

    fn new() -> Self {
        CheckCount { checked: 0, violations: 0, worst_excess: 0.0, skipped: None }
    }

    fn observe(&mut self, lhs: f64, rhs: f64, tol: f64) {
        self.checked += 1;
        if lhs > rhs + tol {
            self.violations += 1;
            self.worst_excess = self.worst_excess.max(lhs - rhs);
        }
    }

    pub fn passed(&self) -> bool {
        self.violations == 0
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DominanceReport {
    pub scenario: String,
    pub n_jobs: u64,
    pub seed: u64,
    /// Engine response at most the upper system's response, per job.
    pub upper: CheckCount,
    /// Random-interarrival recursion against the deterministic one plus `M_n`.
    pub coupling: CheckCount,
    /// Grid points where the lower system's waiting CCDF exceeds the engine's
    /// by more than three standard errors. Reported only.
    pub lower: CheckCount,
}

impl DominanceReport {
    /// The pathwise checks; the distributional one is informational.
    pub fn pathwise_ok(&self) -> bool {
        self.upper.passed() && self.coupling.passed()
    }
}

impl fmt::Display for DominanceReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "scenario {} (jobs {}, seed {})", self.scenario, self.n_jobs, self.seed)?;
        for (name, c) in [("upper", &self.upper), ("coupling", &self.coupling), ("lower", &self.lower)] {
            match &c.skipped {
                Some(why) => writeln!(f, "  {name:<9} skipped: {why}")?,
                None => writeln!(
                    f,
                    "  {name:<9} checked {:>10}  violations {:>6}  worst excess {:.3e}",
                    c.checked, c.violations, c.worst_excess
                )?,
            }
        }
        Ok(())
    }
}

fn pathwise_tol(scale: f64) -> f64 {
    1e-12 * scale.max(1.0)
}

/// Runs the three dominance checks on one seed.
pub fn verify_dominance(cfg: &ScenarioConfig, n_jobs: u64, seed: u64) -> Result<DominanceReport> {
    cfg.validate()?;
    let supported = cfg.variant == Variant::Coc || cfg.discipline == Discipline::Fcfs;
    if !supported {
        return Err(Error::config(format!("{}: dominance checks cover c.o.c. and c.o.s. FCFS", cfg.name)));
    }
    let streams = CoupledStreams::new(cfg, StreamKey::new(seed));
    Ok(DominanceReport {
        scenario: cfg.name.clone(),
        n_jobs,
        seed,
        upper: check_upper(&streams, n_jobs)?,
        coupling: check_coupling(&streams, n_jobs),
        lower: check_lower(&streams, n_jobs)?,
    })
}

fn check_upper(streams: &CoupledStreams, n_jobs: u64) -> Result<CheckCount> {
    let cfg = streams.cfg();
    if !(cfg.rho_upper() < 1.0) {
        return Ok(CheckCount::skipped(format!("rho_U = {:.4} >= 1", cfg.rho_upper())));
    }
    let mut upper = vec![f64::NAN; n_jobs as usize];
    upper_gig1(
        streams,
        n_jobs,
        &mut FnSink(|o: &JobOutcome<'_>| {
            upper[o.index as usize] = o.response;
            Ok(())
        }),
    )?;
    let mut count = CheckCount::new();
    let opts = RunOptions::no_warmup();
    engine::simulate(
        cfg,
        streams.jobs(),
        n_jobs,
        &opts,
        streams.tie_rng(),
        &mut FnSink(|o: &JobOutcome<'_>| {
            let tol = pathwise_tol(o.arrival + o.response);
            count.observe(o.response, upper[o.index as usize], tol);
            Ok(())
        }),
    )?;
    Ok(count)
}

fn check_coupling(streams: &CoupledStreams, n_jobs: u64) -> CheckCount {
    let cfg = streams.cfg();
    let a_det = cfg.mean_interarrival();
    let n = cfg.servers as usize;
    let (mut random, mut det) = (RankedWorkload::empty(n), RankedWorkload::empty(n));
    let mut slack = 0.0_f64;
    let mut count = CheckCount::new();
    let mut jobs = streams.jobs().take(n_jobs as usize).peekable();
    while let Some(job) = jobs.next() {
        let w = random.assign(&job.servers, &job.sizes);
        let w_det = det.assign(&job.servers, &job.sizes);
        count.observe(w, w_det + slack, pathwise_tol(w));
        if let Some(next) = jobs.peek() {
            random.advance(next.gap);
            det.advance(a_det);
            slack = (slack + a_det - next.gap).max(0.0);
        }
    }
    count
}

fn check_lower(streams: &CoupledStreams, n_jobs: u64) -> Result<CheckCount> {
    let cfg = streams.cfg();
    if cfg.variant != Variant::Coc {
        return Ok(CheckCount::skipped("lower bound system is stated for c.o.c."));
    }
    let grid = TailGrid::log_spaced(0.1, 1e3, 20)?;
    let warmup = n_jobs / 10;
    let mut lower = TailCounter::new(grid.clone());
    lower_gig1(
        streams,
        n_jobs,
        ThinningRule::Bernoulli,
        &mut FnSink(|o: &JobOutcome<'_>| if o.index >= warmup { lower.record(o.waiting) } else { Ok(()) }),
    )?;
    let mut sys = TailCounter::new(grid);
    let opts = RunOptions { warmup, ..RunOptions::default() };
    engine::simulate(
        cfg,
        streams.jobs(),
        n_jobs,
        &opts,
        streams.tie_rng(),
        &mut FnSink(|o: &JobOutcome<'_>| if o.index >= warmup { sys.record(o.waiting) } else { Ok(()) }),
    )?;
    let mut count = CheckCount::new();
    for (l, s) in lower.ccdf().iter().zip(sys.ccdf()) {
        let tol = 3.0 * (l.stderr.powi(2) + s.stderr.powi(2)).sqrt();
        count.observe(l.p, s.p, tol);
    }
    Ok(count)
}

/// Exact per-job agreement where the engine reduces to a bound system:
/// `n_F = 1` c.o.c. against the per-server lower systems (waiting times), and
/// `n_F = N` identical c.o.c. against the upper system (response times).
pub fn exact_equivalence(cfg: &ScenarioConfig, n_jobs: u64, seed: u64) -> Result<Option<(String, CheckCount)>> {
    if cfg.variant != Variant::Coc || cfg.n_join != 1 {
        return Ok(None);
    }
    let streams = CoupledStreams::new(cfg, StreamKey::new(seed));
    let n = n_jobs as usize;
    let full = cfg.n_fork == cfg.servers && cfg.dependence == ReplicaDependence::Identical;
    if cfg.n_fork != 1 && !full {
        return Ok(None);
    }
    if full && !(cfg.rho_upper() < 1.0) {
        return Ok(None);
    }
    let mut reference = vec![f64::NAN; n];
    let what = if full {
        upper_gig1(
            &streams,
            n_jobs,
            &mut FnSink(|o: &JobOutcome<'_>| {
                reference[o.index as usize] = o.response;
                Ok(())
            }),
        )?;
        "engine response equals the upper system's"
    } else {
        for server in 0..cfg.servers as u16 {
            lower_gig1(
                &streams,
                n_jobs,
                ThinningRule::RoutedTo(server),
                &mut FnSink(|o: &JobOutcome<'_>| {
                    reference[o.index as usize] = o.waiting;
                    Ok(())
                }),
            )?;
        }
        "engine waiting equals the per-server lower systems'"
    };
    let mut count = CheckCount::new();
    engine::simulate(
        cfg,
        streams.jobs(),
        n_jobs,
        &RunOptions::no_warmup(),
        streams.tie_rng(),
        &mut FnSink(|o: &JobOutcome<'_>| {
            let (got, want) = (if full { o.response } else { o.waiting }, reference[o.index as usize]);
            count.checked += 1;
            if got.to_bits() != want.to_bits() {
                count.violations += 1;
                count.worst_excess = count.worst_excess.max((got - want).abs());
            }
            Ok(())
        }),
    )?;
    Ok(Some((what.to_string(), count)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heavytail::Distribution;
    use crate::sink::SequenceSink;

    fn fig2(d: u32) -> ScenarioConfig {
        ScenarioConfig::redundancy(
            3,
            d,
            Variant::Coc,
            Discipline::Fcfs,
            ReplicaDependence::Identical,
            Distribution::pareto(1.5, 1.0 / 3.0).unwrap(),
            0.5,
        )
        .unwrap()
    }

    #[test]
    fn lindley_small_case() {
        let w = lindley_waiting(&[(0.0, 3.0), (1.0, 2.0), (5.0, 1.0)]);
        assert_eq!(w, vec![0.0, 2.0, 0.0]);
    }

    #[test]
    fn lcfs_single_server_by_hand() {
        let mut q = SingleServer::new(Discipline::LcfsPr);
        let mut out = SequenceSink::default();
        q.offer(0, 0.0, 4.0, &mut out).unwrap();
        q.offer(1, 1.0, 1.0, &mut out).unwrap();
        q.offer(2, 10.0, 1.0, &mut out).unwrap();
        q.finish(&mut out).unwrap();
        assert_eq!(out.response, vec![5.0, 1.0, 1.0]);
    }

    #[test]
    fn full_sample_identical_matches_upper_exactly() {
        let cfg = fig2(3);
        let streams = CoupledStreams::new(&cfg, StreamKey::new(42));
        let n = 20_000;
        let mut up = SequenceSink::with_capacity(n);
        upper_gig1(&streams, n as u64, &mut up).unwrap();
        let mut eng = SequenceSink::with_capacity(n);
        engine::simulate(&cfg, streams.jobs(), n as u64, &RunOptions::no_warmup(), streams.tie_rng(), &mut eng)
            .unwrap();
        assert_eq!(up.response, eng.response);
    }

    fn bits(v: &[f64]) -> Vec<u64> {
        v.iter().map(|x| x.to_bits()).collect()
    }

    #[test]
    fn remark_system_collapses_to_the_other_bounds() {
        let n = 5_000u64;
        let full = CoupledStreams::new(&fig2(3), StreamKey::new(1));
        let (mut a, mut b) = (SequenceSink::default(), SequenceSink::default());
        identical_remark_upper(&full, n, &mut a).unwrap();
        upper_gig1(&full, n, &mut b).unwrap();
        assert_eq!(bits(&a.response), bits(&b.response));

        let single = CoupledStreams::new(&fig2(1), StreamKey::new(1));
        let (mut a, mut b) = (SequenceSink::default(), SequenceSink::default());
        let ra = identical_remark_upper(&single, n, &mut a).unwrap();
        let rb = lower_gig1(&single, n, ThinningRule::Bernoulli, &mut b).unwrap();
        assert!(ra.admitted > 1_000 && ra.admitted == rb.admitted);
        assert_eq!(bits(&a.response), bits(&b.response));
        assert_eq!(ra.load, rb.load);
    }

    #[test]
    fn remark_system_rejects_iid() {
        let mut cfg = fig2(2);
        cfg.dependence = ReplicaDependence::Iid;
        let err =
            identical_remark_upper(&CoupledStreams::new(&cfg, StreamKey::new(0)), 10, &mut SequenceSink::default());
        assert!(matches!(err, Err(Error::Domain(_))));
    }

    #[test]
    fn slack_interval_endpoints() {
        let mut cfg = fig2(1);
        cfg.job_size = Distribution::deterministic(1.0).unwrap();
        cfg.arrival = Distribution::deterministic(0.4).unwrap();
        let (lo, hi) = batch_slack_interval(&cfg).unwrap();
        assert!((lo - 2.0 / 3.0 * (0.4 - 1.0 / 3.0)).abs() < 1e-15);
        assert!((hi - (0.4 - 1.0 / 3.0)).abs() < 1e-15);
        cfg.arrival = Distribution::deterministic(2.0).unwrap();
        assert_eq!(batch_slack_interval(&cfg).unwrap().0, 0.0);
    }

    #[test]
    fn batch_queues_reject_bad_slack() {
        let mut cfg = fig2(1);
        cfg.arrival = Distribution::deterministic(0.4).unwrap();
        let streams = CoupledStreams::new(&cfg, StreamKey::new(0));
        assert!(matches!(auxiliary_batch_dg1(&streams, 10, 0.5), Err(Error::Config(_))));
        let waits = auxiliary_batch_dg1(&streams, 1000, 0.05).unwrap();
        assert_eq!(waits.len(), 3);
        assert!(waits.iter().all(|w| w.len() == 1000 && w[0] == 0.0));
    }

    #[test]
    fn exact_equivalences_hold() {
        for d in [1, 3] {
            let (_, c) = exact_equivalence(&fig2(d), 20_000, 5).unwrap().unwrap();
            assert_eq!((c.checked, c.violations), (20_000, 0), "d={d}");
        }
        assert!(exact_equivalence(&fig2(2), 100, 5).unwrap().is_none());
    }

    #[test]
    fn dominance_holds_on_small_runs() {
        for d in 1..=3 {
            let r = verify_dominance(&fig2(d), 20_000, 7).unwrap();
            assert!(r.pathwise_ok(), "{r}");
            assert_eq!(r.upper.checked, 20_000);
        }
    }
}
