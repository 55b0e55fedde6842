//! Experiment specs, orchestration and output files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{
    coc_fcfs_bound_curves, cos_fcfs_bound_curves, lcfs_busy_period_asymptote, tail_index_prediction, BoundCurve,
    TailPrediction, DEFAULT_DELTA,
};
use crate::boundsys::{exact_equivalence, verify_dominance, DominanceReport};
use crate::engine;
use crate::error::{Error, Result};
use crate::heavytail::{Distribution, ReplicaDependence};
use crate::recursion;
use crate::run::{default_warmup, RunOptions, RunSummary};
use crate::scenario::{DerivedLoads, Discipline, ScenarioConfig, Variant};
use crate::sink::TailSinks;
use crate::stream::StreamKey;
use crate::tailstats::{
    fit_tail_slope, hill_estimate, CcdfPoint, HillEstimate, SlopeFit, TailGrid, DEFAULT_FIT_WINDOW, DEFAULT_GRID_MAX,
    DEFAULT_GRID_MIN, DEFAULT_GRID_POINTS, DEFAULT_MIN_COUNT, DEFAULT_RESERVOIR,
};

pub const DEFAULT_JOBS: u64 = 10_000_000;
pub const DEFAULT_TOLERANCE: f64 = 0.1;
pub const DEFAULT_VERIFY_JOBS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub min: f64,
    pub max: f64,
    pub points: usize,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec { min: DEFAULT_GRID_MIN, max: DEFAULT_GRID_MAX, points: DEFAULT_GRID_POINTS }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FitSpec {
    pub lo: f64,
    pub hi: f64,
    #[serde(default = "default_min_count")]
    pub min_count: u64,
}

fn default_min_count() -> u64 {
    DEFAULT_MIN_COUNT
}

impl Default for FitSpec {
    fn default() -> Self {
        FitSpec { lo: DEFAULT_FIT_WINDOW.0, hi: DEFAULT_FIT_WINDOW.1, min_count: DEFAULT_MIN_COUNT }
    }
}

/// One `[[scenario]]` table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSpec {
    pub name: String,
    pub servers: u32,
    #[serde(alias = "d")]
    pub fork: u32,
    #[serde(default = "one")]
    pub join: u32,
    pub variant: Variant,
    pub discipline: Discipline,
    #[serde(default = "identical")]
    pub dependence: ReplicaDependence,
    pub job_size: Distribution,
    /// Interarrival law; give either this or `load`.
    pub arrival: Option<Distribution>,
    /// Shorthand for exponential arrivals at `rho = E[B]/E[A]`.
    pub load: Option<f64>,
    pub fit: Option<FitSpec>,
    pub tolerance: Option<f64>,
}

fn one() -> u32 {
    1
}

fn identical() -> ReplicaDependence {
    ReplicaDependence::Identical
}

impl ScenarioSpec {
    pub fn to_config(&self) -> Result<ScenarioConfig> {
        let arrival = match (self.arrival, self.load) {
            (Some(a), None) => a,
            (None, Some(rho)) => {
                let mean = self.job_size.mean().finite().ok_or_else(|| {
                    Error::config(format!("{}: `load` needs a finite-mean job size; give `arrival`", self.name))
                })?;
                if !(rho > 0.0) {
                    return Err(Error::config(format!("{}: load must be positive", self.name)));
                }
                Distribution::exponential(rho / mean)?
            }
            _ => return Err(Error::config(format!("{}: give exactly one of `arrival` and `load`", self.name))),
        };
        let cfg = ScenarioConfig {
            name: self.name.clone(),
            servers: self.servers,
            n_fork: self.fork,
            n_join: self.join,
            variant: self.variant,
            discipline: self.discipline,
            dependence: self.dependence,
            arrival,
            job_size: self.job_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSpec {
    pub name: String,
    /// Jobs per replication.
    #[serde(default = "default_jobs")]
    pub n_jobs: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "one")]
    pub replications: u32,
    pub warmup: Option<u64>,
    #[serde(default)]
    pub grid: GridSpec,
    #[serde(default)]
    pub fit: FitSpec,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// Also run the dominance checks during `simulate`.
    #[serde(default)]
    pub verify: bool,
    #[serde(default = "default_verify_jobs")]
    pub verify_jobs: u64,
    #[serde(rename = "scenario", default)]
    pub scenarios: Vec<ScenarioSpec>,
}

fn default_jobs() -> u64 {
    DEFAULT_JOBS
}

fn default_delta() -> f64 {
    DEFAULT_DELTA
}

fn default_verify_jobs() -> u64 {
    DEFAULT_VERIFY_JOBS
}

const PRESETS: [&str; 4] = [
    include_str!("../presets/figure1.toml"),
    include_str!("../presets/figure2.toml"),
    include_str!("../presets/figure3.toml"),
    include_str!("../presets/figure4.toml"),
];

impl ExperimentSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        let spec: ExperimentSpec = toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Built-in figure presets, numbered 1 to 4.
    pub fn preset(figure: u32) -> Result<Self> {
        let text = figure
            .checked_sub(1)
            .and_then(|i| PRESETS.get(i as usize))
            .ok_or_else(|| Error::config(format!("no preset for figure {figure}; choose 1 to 4")))?;
        Self::from_toml(text)
    }

    pub fn preset_source(figure: u32) -> Option<&'static str> {
        figure.checked_sub(1).and_then(|i| PRESETS.get(i as usize)).copied()
    }

    /// Checks everything and reports all problems at once.
    pub fn validate(&self) -> Result<()> {
        let mut problems = Vec::new();
        if self.scenarios.is_empty() {
            problems.push("no [[scenario]] tables".to_string());
        }
        if self.n_jobs == 0 {
            problems.push("n_jobs must be positive".into());
        }
        if self.replications == 0 {
            problems.push("replications must be positive".into());
        }
        if let Some(w) = self.warmup {
            if w >= self.n_jobs {
                problems.push(format!("warmup {w} must be below n_jobs {}", self.n_jobs));
            }
        }
        if let Err(e) = TailGrid::log_spaced(self.grid.min, self.grid.max, self.grid.points) {
            problems.push(e.to_string());
        }
        if !(self.delta > 0.0) {
            problems.push(format!("delta must be positive, got {}", self.delta));
        }
        let mut names = std::collections::HashSet::new();
        for s in &self.scenarios {
            if !names.insert(&s.name) {
                problems.push(format!("duplicate scenario name {}", s.name));
            }
            if s.name.is_empty() || s.name.contains(['/', '\\']) {
                problems.push(format!("scenario name {:?} is not usable as a file name", s.name));
            }
            match s.to_config() {
                Ok(cfg) => {
                    if let Err(e) = cfg.check_stable() {
                        problems.push(e.to_string());
                    }
                }
                Err(e) => problems.push(e.to_string()),
            }
            for fit in [Some(self.fit), s.fit].into_iter().flatten() {
                if !(fit.lo > 0.0 && fit.lo < fit.hi) {
                    problems.push(format!("{}: fit window needs 0 < lo < hi", s.name));
                }
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems.join("; ")))
        }
    }

    pub fn with_jobs(mut self, n_jobs: u64) -> Result<Self> {
        self.n_jobs = n_jobs;
        self.validate()?;
        Ok(self)
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Explicit warmup, else `max(10^5, n/100)` capped at a tenth of the run.
    pub fn effective_warmup(&self) -> u64 {
        self.warmup.unwrap_or_else(|| default_warmup(self.n_jobs).min(self.n_jobs / 10))
    }

    pub fn grid(&self) -> TailGrid {
        TailGrid::log_spaced(self.grid.min, self.grid.max, self.grid.points).expect("validated grid")
    }

    pub fn configs(&self) -> Result<Vec<ScenarioConfig>> {
        self.scenarios.iter().map(ScenarioSpec::to_config).collect()
    }
}

/// Runs one replication of a scenario into fresh tail sinks.
pub fn run_replication(
    cfg: &ScenarioConfig,
    n_jobs: u64,
    warmup: u64,
    grid: &TailGrid,
    key: StreamKey,
) -> Result<(RunSummary, TailSinks, f64)> {
    let mut sinks = TailSinks::new(grid.clone(), warmup, DEFAULT_RESERVOIR);
    let opts = RunOptions { warmup, ..RunOptions::default() };
    let n_join = cfg.n_join as usize;
    let mut order_stat_total = 0.0;
    let jobs = key.jobs(cfg).inspect(|j| order_stat_total += j.order_stat(n_join));
    let summary = if cfg.variant == Variant::Cos && cfg.discipline == Discipline::Fcfs && cfg.n_join == 1 {
        recursion::run_cos_fcfs(cfg, jobs, n_jobs, &opts, &mut sinks)?
    } else {
        engine::simulate(cfg, jobs, n_jobs, &opts, key.rng(crate::stream::Purpose::TieBreak), &mut sinks)?
    };
    let mean_order_stat = order_stat_total / n_jobs as f64;
    Ok((summary, sinks, mean_order_stat))
}

/// Lower and upper curves written to the CSV columns.
pub type CsvBounds = (Option<BoundCurve>, Option<BoundCurve>);

#[derive(Debug, Clone, Serialize)]
pub struct ScenarioResult {
    pub name: String,
    pub config: ScenarioConfig,
    pub loads: DerivedLoads,
    pub jobs: u64,
    pub recorded: u64,
    pub measured_load: f64,
    /// Sample mean of the `n_J`-th smallest replica size over all jobs.
    pub mean_order_stat: f64,
    pub max_queued: usize,
    pub fit_window: (f64, f64),
    pub fit: Option<SlopeFit>,
    pub fit_error: Option<String>,
    pub hill: Option<HillEstimate>,
    pub prediction: Option<TailPrediction>,
    pub prediction_error: Option<String>,
    pub tolerance: f64,
    pub pass: Option<bool>,
    pub bounds: Vec<BoundCurve>,
    pub dominance: Option<DominanceReport>,
    #[serde(skip)]
    pub response: Vec<CcdfPoint>,
    #[serde(skip)]
    pub waiting: Vec<CcdfPoint>,
    #[serde(skip)]
    pub csv_bounds: CsvBounds,
    #[serde(skip)]
    pub asymptote: Vec<Option<f64>>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ExperimentResult {
    pub name: String,
    pub seed: u64,
    pub n_jobs: u64,
    pub replications: u32,
    pub warmup: u64,
    pub scenarios: Vec<ScenarioResult>,
}

impl ExperimentResult {
    pub fn all_pass(&self) -> bool {
        self.scenarios.iter().all(|s| s.pass == Some(true))
    }
}

/// Runs every scenario and replication; output depends only on the spec.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentResult> {
    spec.validate()?;
    let configs = spec.configs()?;
    let grid = spec.grid();
    let warmup = spec.effective_warmup();
    let tasks: Vec<(usize, u32)> =
        (0..configs.len()).flat_map(|s| (0..spec.replications).map(move |r| (s, r))).collect();
    let runs: Vec<Result<(RunSummary, TailSinks, f64)>> = tasks
        .par_iter()
        .map(|&(s, r)| {
            let key = StreamKey { seed: spec.seed, scenario: s as u32, replication: r };
            run_replication(&configs[s], spec.n_jobs, warmup, &grid, key)
        })
        .collect();

    let mut runs = runs.into_iter();
    let mut scenarios = Vec::with_capacity(configs.len());
    for (s, cfg) in configs.iter().enumerate() {
        let mut merged: Option<(RunSummary, TailSinks, f64)> = None;
        for _ in 0..spec.replications {
            let (summary, sinks, mos) = runs.next().expect("one run per task")?;
            merged = Some(match merged {
                None => (summary, sinks, mos),
                Some((mut acc, mut acc_sinks, acc_mos)) => {
                    acc.jobs += summary.jobs;
                    acc.recorded += summary.recorded;
                    acc.total_work += summary.total_work;
                    acc.elapsed += summary.elapsed;
                    acc.max_workload = acc.max_workload.max(summary.max_workload);
                    acc.max_queued = acc.max_queued.max(summary.max_queued);
                    acc_sinks.merge(&sinks)?;
                    (acc, acc_sinks, acc_mos + mos)
                }
            });
        }
        let (summary, sinks, mos) = merged.expect("at least one replication");
        let scenario_spec = &spec.scenarios[s];
        let fit = scenario_spec.fit.unwrap_or(spec.fit);
        let tolerance = scenario_spec.tolerance.unwrap_or(DEFAULT_TOLERANCE);
        let mut result = summarize(cfg, spec, &sinks, fit, tolerance)?;
        result.jobs = summary.jobs;
        result.recorded = summary.recorded;
        result.measured_load = if summary.elapsed > 0.0 { summary.total_work / summary.elapsed } else { 0.0 };
        result.mean_order_stat = mos / spec.replications as f64;
        result.max_queued = summary.max_queued;
        if spec.verify {
            result.dominance = Some(verify_dominance(cfg, spec.verify_jobs, spec.seed)?);
        }
        scenarios.push(result);
    }
    Ok(ExperimentResult {
        name: spec.name.clone(),
        seed: spec.seed,
        n_jobs: spec.n_jobs,
        replications: spec.replications,
        warmup,
        scenarios,
    })
}

fn summarize(
    cfg: &ScenarioConfig,
    spec: &ExperimentSpec,
    sinks: &TailSinks,
    fit: FitSpec,
    tolerance: f64,
) -> Result<ScenarioResult> {
    let response = sinks.response.ccdf();
    let waiting = sinks.waiting.ccdf();
    let (fit_result, fit_error) = match fit_tail_slope(&response, (fit.lo, fit.hi), fit.min_count) {
        Ok(f) => (Some(f), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let top = sinks.reservoir.sorted_desc();
    let hill = hill_estimate(&top, (top.len() / 10).max(10)).ok();
    let (prediction, prediction_error) = match tail_index_prediction(cfg) {
        Ok(p) => (Some(p), None),
        Err(e) => (None, Some(e.to_string())),
    };
    let pass = match (&fit_result, &prediction) {
        (Some(f), Some(p)) => Some((f.slope - p.exponent).abs() <= tolerance),
        _ => None,
    };
    let xs: Vec<f64> = response.iter().map(|c| c.x).collect();
    let (bounds, csv_bounds) = bound_curves(cfg, &xs, spec.delta)?;
    let asymptote = anchored_asymptote(&response, prediction.as_ref(), fit_result.as_ref());
    Ok(ScenarioResult {
        name: cfg.name.clone(),
        config: cfg.clone(),
        loads: cfg.derived(),
        jobs: 0,
        recorded: 0,
        measured_load: 0.0,
        mean_order_stat: 0.0,
        max_queued: 0,
        fit_window: (fit.lo, fit.hi),
        fit: fit_result,
        fit_error,
        hill,
        prediction,
        prediction_error,
        tolerance,
        pass,
        bounds: bounds
            .into_iter()
            .map(|mut b| {
                b.points.clear();
                b
            })
            .collect(),
        dominance: None,
        response,
        waiting,
        csv_bounds,
        asymptote,
    })
}

/// All curves for the summary, plus the pair written to the CSV.
fn bound_curves(cfg: &ScenarioConfig, xs: &[f64], delta: f64) -> Result<(Vec<BoundCurve>, CsvBounds)> {
    let size_has_mean = !cfg.job_size.mean().is_infinite();
    let pick = |c: &BoundCurve| c.valid.then(|| c.clone());
    match (cfg.variant, cfg.discipline) {
        (Variant::Cos, Discipline::Fcfs) if cfg.n_join == 1 && size_has_mean => {
            let curves = cos_fcfs_bound_curves(cfg, xs, delta)?;
            let lower = pick(&curves[0]);
            let upper = curves[1..].iter().rev().find(|c| c.valid && c.name != "iii").or(curves.get(2)).and_then(pick);
            Ok((curves, (lower, upper)))
        }
        (Variant::Coc, Discipline::Fcfs) if cfg.order_stat_law().mean().finite().is_some() => {
            let (lo, hi) = coc_fcfs_bound_curves(cfg, xs)?;
            let pair = (pick(&lo), pick(&hi));
            Ok((vec![lo, hi], pair))
        }
        (_, Discipline::LcfsPr) if cfg.order_stat_law().tail_constant().is_some() => {
            let upper = lcfs_busy_period_asymptote(cfg, xs, None)?;
            let law = match cfg.variant {
                Variant::Coc => cfg.order_stat_law(),
                Variant::Cos => crate::heavytail::OrderStatLaw::new(cfg.job_size, ReplicaDependence::Identical, 1, 1)?,
            };
            let lower = BoundCurve {
                name: "job_size_tail".into(),
                source: "size of the served replica".into(),
                points: xs.iter().map(|&x| (x, law.ccdf(x))).collect(),
                valid: true,
                reason: None,
                asymptotic_only: false,
            };
            let pair = (pick(&lower), pick(&upper));
            Ok((vec![lower, upper], pair))
        }
        _ => Ok((Vec::new(), (None, None))),
    }
}

/// Predicted power law through the empirical CCDF at the fit's lower end.
fn anchored_asymptote(
    response: &[CcdfPoint],
    prediction: Option<&TailPrediction>,
    fit: Option<&SlopeFit>,
) -> Vec<Option<f64>> {
    let (Some(p), Some(f)) = (prediction, fit) else { return vec![None; response.len()] };
    let Some(anchor) = response.iter().find(|c| c.x == f.x_lo) else { return vec![None; response.len()] };
    response.iter().map(|c| Some(anchor.p * (c.x / anchor.x).powf(p.exponent))).collect()
}

fn field(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `x,ccdf,stderr,bound_lower,bound_upper,asymptote`.
pub fn ccdf_csv(result: &ScenarioResult) -> String {
    let mut out = String::from("x,ccdf,stderr,bound_lower,bound_upper,asymptote\n");
    let (lower, upper) = &result.csv_bounds;
    for (i, c) in result.response.iter().enumerate() {
        let lo = lower.as_ref().and_then(|b| b.value_at(c.x));
        let hi = upper.as_ref().and_then(|b| b.value_at(c.x));
        let asym = result.asymptote.get(i).copied().flatten();
        let _ = writeln!(out, "{},{},{},{},{},{}", c.x, c.p, c.stderr, field(lo), field(hi), field(asym));
    }
    out
}

pub fn summary_json(result: &ExperimentResult) -> Result<String> {
    serde_json::to_string_pretty(result).map_err(|e| Error::Parse(e.to_string()))
}

/// Writes one CSV per scenario, `summary.json`, and `verify.txt` when checks ran.
pub fn write_outputs(result: &ExperimentResult, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    for s in &result.scenarios {
        fs::write(dir.join(format!("{}.csv", s.name)), ccdf_csv(s))?;
    }
    fs::write(dir.join("summary.json"), summary_json(result)? + "\n")?;
    let reports: Vec<&DominanceReport> = result.scenarios.iter().filter_map(|s| s.dominance.as_ref()).collect();
    if !reports.is_empty() {
        let text: String = reports.iter().map(|r| r.to_string()).collect();
        fs::write(dir.join("verify.txt"), text)?;
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionRow {
    pub scenario: String,
    pub loads: DerivedLoads,
    pub prediction: Option<TailPrediction>,
    pub error: Option<String>,
}

/// Predicted exponents without simulating.
pub fn predict(spec: &ExperimentSpec) -> Result<Vec<PredictionRow>> {
    spec.configs()?
        .into_iter()
        .map(|cfg| {
            let (prediction, error) = match tail_index_prediction(&cfg) {
                Ok(p) => (Some(p), None),
                Err(e) => (None, Some(e.to_string())),
            };
            Ok(PredictionRow { scenario: cfg.name.clone(), loads: cfg.derived(), prediction, error })
        })
        .collect()
}

pub fn prediction_table(rows: &[PredictionRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>8} {:>4} {:>5} {:>6} {:>8} {:>8} {:>9}  notes",
        "scenario", "rho", "k", "d_cap", "K", "rho_L", "rho_U", "exponent"
    );
    for r in rows {
        let l = &r.loads;
        let exponent = r.prediction.as_ref().map(|p| format!("{:.4}", p.exponent)).unwrap_or_else(|| "-".into());
        let mut notes: Vec<String> = Vec::new();
        if let Some(p) = &r.prediction {
            notes.extend(p.preconditions.iter().filter(|(_, ok)| !ok).map(|(d, _)| format!("fails: {d}")));
            notes.extend(p.warnings.iter().cloned());
        }
        if let Some(e) = &r.error {
            notes.push(e.clone());
        }
        let _ = writeln!(
            out,
            "{:<24} {:>8.4} {:>4} {:>5} {:>6} {:>8.4} {:>8.4} {:>9}  {}",
            r.scenario,
            l.rho_tilde,
            l.k.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
            l.d_cap.map(|k| k.to_string()).unwrap_or_else(|| "-".into()),
            l.k_factor,
            l.rho_lower,
            l.rho_upper,
            exponent,
            notes.join("; ")
        );
    }
    out
}

#[derive(Debug, Clone, Serialize)]
pub struct VerifyOutcome {
    pub reports: Vec<DominanceReport>,
    /// `(scenario, description, check)` for scenarios with an exact equivalence.
    pub exact: Vec<(String, String, crate::boundsys::CheckCount)>,
}

impl VerifyOutcome {
    pub fn ok(&self) -> bool {
        self.reports.iter().all(DominanceReport::pathwise_ok) && self.exact.iter().all(|e| e.2.passed())
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for r in &self.reports {
            out.push_str(&r.to_string());
        }
        for (name, what, c) in &self.exact {
            let _ = writeln!(out, "exact {name}: {what}: {} of {} jobs differ", c.violations, c.checked);
        }
        out
    }
}

/// Dominance checks for every scenario and replication seed, plus the exact equivalences.
pub fn verify(spec: &ExperimentSpec) -> Result<VerifyOutcome> {
    let configs = spec.configs()?;
    let tasks: Vec<(usize, u64)> = (0..configs.len())
        .flat_map(|s| (0..spec.replications as u64).map(move |r| (s, spec.seed.wrapping_add(r))))
        .collect();
    let reports = tasks
        .par_iter()
        .filter(|(s, _)| {
            let c = &configs[*s];
            c.variant == Variant::Coc || c.discipline == Discipline::Fcfs
        })
        .map(|&(s, seed)| verify_dominance(&configs[s], spec.verify_jobs, seed))
        .collect::<Result<Vec<_>>>()?;
    let mut exact = Vec::new();
    for cfg in &configs {
        if let Some((what, count)) = exact_equivalence(cfg, spec.verify_jobs, spec.seed)? {
            exact.push((cfg.name.clone(), what, count));
        }
    }
    Ok(VerifyOutcome { reports, exact })
}
