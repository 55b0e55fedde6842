//! Seeded job streams.
//!
//! Every random quantity of a run comes from a ChaCha stream selected by
//! `(seed, scenario, replication, purpose)`, so outputs do not depend on how
//! replications are scheduled across threads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use smallvec::SmallVec;

use crate::heavytail::{draw_replicas, uniform_open0, Distribution, ReplicaDependence, Sizes};
use crate::scenario::ScenarioConfig;

pub type SimRng = ChaCha8Rng;

pub type ServerSet = SmallVec<[u16; 8]>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Purpose {
    Jobs = 0,
    TieBreak = 1,
    Auxiliary = 2,
}

pub fn stream_id(scenario: u32, replication: u32, purpose: Purpose) -> u64 {
    ((scenario as u64) << 32) | ((replication as u64) << 8) | purpose as u64
}

pub fn stream_rng(seed: u64, stream: u64) -> SimRng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Identifies one replication's family of streams.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StreamKey {
    pub seed: u64,
    pub scenario: u32,
    pub replication: u32,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        StreamKey { seed, scenario: 0, replication: 0 }
    }

    pub fn rng(&self, purpose: Purpose) -> SimRng {
        stream_rng(self.seed, stream_id(self.scenario, self.replication, purpose))
    }

    pub fn jobs(&self, cfg: &ScenarioConfig) -> JobStream {
        JobStream::new(cfg, self.rng(Purpose::Jobs))
    }
}

/// One arrival: the gap since the previous arrival, the sampled servers and
/// the replica sizes (`sizes[i]` goes to `servers[i]`).
#[derive(Debug, Clone, PartialEq)]
pub struct JobDraw {
    pub gap: f64,
    pub servers: ServerSet,
    pub sizes: Sizes,
    /// Uniform on (0, 1] for Bernoulli thinning in the bound systems.
    pub thin_u: f64,
}

impl JobDraw {
    pub fn new(gap: f64, servers: &[u16], sizes: &[f64]) -> Self {
        assert_eq!(servers.len(), sizes.len(), "one size per sampled server");
        JobDraw { gap, servers: servers.iter().copied().collect(), sizes: sizes.iter().copied().collect(), thin_u: 1.0 }
    }

    /// `n_J`-th smallest replica size.
    pub fn order_stat(&self, n_join: usize) -> f64 {
        let mut s: Sizes = self.sizes.clone();
        s.sort_unstable_by(f64::total_cmp);
        s[n_join - 1]
    }
}

/// Infinite stream of [`JobDraw`]s for one scenario.
///
/// Servers are the prefix of a uniformly shuffled permutation, so the `d`-sample
/// is nested in the `(d+1)`-sample. With identical replicas the consumption per
/// job does not depend on `n_F` either, so streams for different `d` stay aligned.
#[derive(Debug, Clone)]
pub struct JobStream {
    arrival: Distribution,
    job_size: Distribution,
    dependence: ReplicaDependence,
    n_fork: usize,
    perm: Vec<u16>,
    rng: SimRng,
}

impl JobStream {
    pub fn new(cfg: &ScenarioConfig, rng: SimRng) -> Self {
        JobStream {
            arrival: cfg.arrival,
            job_size: cfg.job_size,
            dependence: cfg.dependence,
            n_fork: cfg.n_fork as usize,
            perm: (0..cfg.servers as u16).collect(),
            rng,
        }
    }

    pub fn from_seed(cfg: &ScenarioConfig, seed: u64, stream: u64) -> Self {
        Self::new(cfg, stream_rng(seed, stream))
    }

    /// Replace the arrival law (keeps everything else, including the RNG position).
    pub fn with_arrival(mut self, arrival: Distribution) -> Self {
        self.arrival = arrival;
        self
    }
}

impl Iterator for JobStream {
    type Item = JobDraw;

    fn next(&mut self) -> Option<JobDraw> {
        let gap = self.arrival.sample(&mut self.rng);
        let n = self.perm.len();
        for i in 0..n.saturating_sub(1) {
            let j = self.rng.random_range(i..n);
            self.perm.swap(i, j);
        }
        let servers: ServerSet = self.perm[..self.n_fork].iter().copied().collect();
        let mut sizes = Sizes::new();
        draw_replicas(&self.job_size, self.dependence, self.n_fork, &mut self.rng, &mut sizes);
        let thin_u = uniform_open0(&mut self.rng);
        Some(JobDraw { gap, servers, sizes, thin_u })
    }
}
