//! Tail-index predictions and closed-form asymptotes for the simulated systems.
//!
//! Curves drop every `o(1)` term of the underlying limit statements. They are
//! asymptotes, not finite-`x` envelopes.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::heavytail::{Distribution, OrderStatLaw, ReplicaDependence};
use crate::scenario::{binomial, factorial, Discipline, ScenarioConfig, Variant};

pub const DEFAULT_DELTA: f64 = 0.05;

/// Predicted CCDF exponent with the preconditions it relies on.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailPrediction {
    /// Slope of `log P(R > x)` against `log x`.
    pub exponent: f64,
    /// `(description, holds)` pairs.
    pub preconditions: Vec<(String, bool)>,
    pub warnings: Vec<String>,
}

impl TailPrediction {
    pub fn preconditions_hold(&self) -> bool {
        self.preconditions.iter().all(|(_, ok)| *ok)
    }
}

/// Regular-variation index `ν` of the job size (positive).
fn size_index(cfg: &ScenarioConfig) -> Result<f64> {
    cfg.job_size
        .tail_index()
        .map(|i| -i)
        .ok_or_else(|| Error::domain(format!("{}: job size {} is not regularly varying", cfg.name, cfg.job_size)))
}

/// Exponent of the response-time tail for the scenario.
pub fn tail_index_prediction(cfg: &ScenarioConfig) -> Result<TailPrediction> {
    cfg.validate()?;
    let nu = size_index(cfg)?;
    let mut pre = Vec::new();
    let mut warnings = Vec::new();
    if cfg.integer_load_warning() {
        warnings.push(format!("load {} is an integer; the prediction excludes this case", cfg.rho_tilde()));
    }
    // (n_F + 1 - n_J) ν for iid replicas, ν for identical ones
    let order_nu = match cfg.dependence {
        ReplicaDependence::Identical => nu,
        ReplicaDependence::Iid => (cfg.n_fork + 1 - cfg.n_join) as f64 * nu,
    };
    let exponent = match (cfg.variant, cfg.discipline) {
        (Variant::Cos, Discipline::Fcfs) => {
            if cfg.n_join != 1 {
                return Err(Error::domain(format!("{}: c.o.s. FCFS prediction needs n_J = 1", cfg.name)));
            }
            if nu <= 1.0 {
                return Err(Error::domain(format!("{}: nu = {nu} <= 1 leaves the residual law undefined", cfg.name)));
            }
            let rho = cfg.rho_tilde();
            pre.push((format!("rho {rho} < N {}", cfg.servers), rho < cfg.servers as f64));
            let d_cap = cfg.d_cap().ok_or_else(|| Error::Unstable(format!("{}: rho >= N", cfg.name)))? as f64;
            -(d_cap * (nu - 1.0)).min(nu)
        }
        (Variant::Coc, Discipline::Fcfs) => {
            if order_nu <= 1.0 {
                return Err(Error::domain(format!(
                    "{}: order statistic index {order_nu} <= 1 leaves the residual law undefined",
                    cfg.name
                )));
            }
            let rho_u = cfg.rho_upper();
            pre.push((format!("rho_U {rho_u} < 1"), rho_u < 1.0));
            1.0 - order_nu
        }
        (Variant::Cos, Discipline::LcfsPr) => {
            let per_server = cfg.rho_tilde() * cfg.n_join as f64 / cfg.servers as f64;
            pre.push((format!("per-server load {per_server} < 1"), per_server < 1.0));
            -nu
        }
        (Variant::Coc, Discipline::LcfsPr) => {
            let rho_u = cfg.rho_upper();
            pre.push((format!("rho_U {rho_u} < 1"), rho_u < 1.0));
            -order_nu
        }
    };
    Ok(TailPrediction { exponent, preconditions: pre, warnings })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BoundCurve {
    pub name: String,
    /// Which limit statement the curve comes from.
    pub source: String,
    pub points: Vec<(f64, f64)>,
    pub valid: bool,
    pub reason: Option<String>,
    pub asymptotic_only: bool,
}

impl BoundCurve {
    fn sampled(name: &str, source: &str, grid: &[f64], f: impl Fn(f64) -> Result<f64>) -> Result<Self> {
        let points = grid.iter().map(|&x| Ok((x, f(x)?))).collect::<Result<Vec<_>>>()?;
        Ok(BoundCurve {
            name: name.to_string(),
            source: source.to_string(),
            points,
            valid: true,
            reason: None,
            asymptotic_only: true,
        })
    }

    fn invalid(name: &str, source: &str, reason: impl Into<String>) -> Self {
        BoundCurve {
            name: name.to_string(),
            source: source.to_string(),
            points: Vec::new(),
            valid: false,
            reason: Some(reason.into()),
            asymptotic_only: true,
        }
    }

    pub fn value_at(&self, x: f64) -> Option<f64> {
        self.points.iter().find(|p| p.0 == x).map(|p| p.1)
    }
}

fn geometric_prefactor(rho: f64) -> f64 {
    rho / (1.0 - rho)
}

/// `ρ/(1-ρ) · P(B^res > x)`, the subexponential single-server FCFS waiting asymptote.
pub fn single_server_fcfs_asymptote(rho: f64, size: &Distribution, grid: &[f64]) -> Result<BoundCurve> {
    const NAME: &str = "single_server_fcfs";
    if !(rho < 1.0) {
        return Ok(BoundCurve::invalid(NAME, "single-server waiting", format!("rho = {rho} >= 1")));
    }
    let c = geometric_prefactor(rho);
    BoundCurve::sampled(NAME, "single-server waiting", grid, |x| Ok(c * size.residual_ccdf(x)?))
}

/// Lower and upper asymptotes for c.o.c. FCFS from the thinned and full single-server systems.
pub fn coc_fcfs_bound_curves(cfg: &ScenarioConfig, grid: &[f64]) -> Result<(BoundCurve, BoundCurve)> {
    const SRC: &str = "c.o.c. FCFS bound systems";
    let (rho_l, rho_u) = (cfg.rho_lower(), cfg.rho_upper());
    if !(rho_u < 1.0) {
        let why = format!("rho_U = {rho_u} >= 1");
        return Ok((BoundCurve::invalid("lower", SRC, why.clone()), BoundCurve::invalid("upper", SRC, why)));
    }
    let law = cfg.order_stat_law();
    let curve = |name: &str, rho: f64| {
        let c = geometric_prefactor(rho);
        BoundCurve::sampled(name, SRC, grid, |x| Ok(c * law.residual_ccdf(x)?))
    };
    Ok((curve("lower", rho_l)?, curve("upper", rho_u)?))
}

/// The four asymptotic bounds for c.o.s. FCFS waiting times, in order i to iv.
pub fn cos_fcfs_bound_curves(cfg: &ScenarioConfig, grid: &[f64], delta: f64) -> Result<Vec<BoundCurve>> {
    if !(delta > 0.0) {
        return Err(Error::config(format!("delta must be positive, got {delta}")));
    }
    if cfg.variant != Variant::Cos || cfg.discipline != Discipline::Fcfs {
        return Err(Error::domain(format!("{}: not a c.o.s. FCFS scenario", cfg.name)));
    }
    cfg.check_stable()?;
    let size = cfg.job_size;
    if size.mean().is_infinite() {
        return Err(Error::domain(format!("{}: residual law needs a finite mean", cfg.name)));
    }
    let n = cfg.servers;
    let d = cfg.n_fork;
    let rho = cfg.rho_tilde();
    let k = cfg.integer_part().expect("finite load");
    let kf = (k + 1) as f64;
    let res = |x: f64| size.residual_ccdf(x);
    let src = "c.o.s. FCFS waiting";
    let mut curves = Vec::new();

    let c1 = rho.powi(d as i32) / factorial(d) / binomial(n, d);
    curves.push(BoundCurve::sampled("i", src, grid, |x| Ok(c1 * res((1.0 + delta) * x)?.powi(d as i32)))?);

    let lead = kf * rho / (kf - rho);
    if rho < (n - d) as f64 {
        let c2 = binomial(n, d) * lead.powi(d as i32);
        curves.push(BoundCurve::sampled("ii", src, grid, |x| Ok(c2 * res(x * (1.0 - delta) / kf)?.powi(d as i32)))?);
    } else {
        curves.push(BoundCurve::invalid("ii", src, format!("needs rho < N - d = {}", n - d)));
    }

    let m = (n - k) as i32;
    if rho > k as f64 && !cfg.integer_load_warning() {
        let c3 = rho.powi(m) / factorial(n - k);
        let stretch = (rho + delta) / (rho - k as f64);
        curves.push(BoundCurve::sampled("iii", src, grid, |x| Ok(c3 * res(stretch * x)?.powi(m)))?);
    } else {
        curves.push(BoundCurve::invalid("iii", src, format!("needs rho > k = {k}")));
    }

    if rho > (n - d) as f64 {
        let c4 = binomial(n, k) * lead.powi(m);
        let shrink = (kf - (n - d) as f64) * (1.0 - delta) / kf;
        curves.push(BoundCurve::sampled("iv", src, grid, |x| Ok(c4 * res(shrink * x)?.powi(m)))?);
    } else {
        curves.push(BoundCurve::invalid("iv", src, format!("needs rho > N - d = {}", n - d)));
    }
    Ok(curves)
}

/// Mean number of jobs served in a busy period started by one job, by simulation.
pub fn estimate_busy_period_jobs<R: Rng + ?Sized>(
    arrival: &Distribution,
    size: &Distribution,
    periods: u64,
    rng: &mut R,
) -> Result<f64> {
    if periods == 0 {
        return Err(Error::config("need at least one busy period"));
    }
    let mut total = 0u64;
    for _ in 0..periods {
        let mut work = size.sample(rng);
        let mut jobs = 1u64;
        loop {
            let gap = arrival.sample(rng);
            if gap >= work {
                break;
            }
            work += size.sample(rng) - gap;
            jobs += 1;
            if jobs > 1 << 40 {
                return Err(Error::Estimation("busy period does not end; load >= 1?".into()));
            }
        }
        total += jobs;
    }
    Ok(total as f64 / periods as f64)
}

/// Busy-period asymptote `E[N_bp] (1-ρ)^{-ν} L x^{-ν}` for LCFS-PR response times.
///
/// c.o.c. uses the upper system (load `ρ_U`, size `B_(n_J)`); c.o.s. uses the
/// per-server system (load `n_J ρ/N`, size `B`). With non-exponential
/// arrivals the mean busy-period job count must be supplied.
pub fn lcfs_busy_period_asymptote(
    cfg: &ScenarioConfig,
    grid: &[f64],
    busy_period_jobs: Option<f64>,
) -> Result<BoundCurve> {
    const NAME: &str = "lcfs_busy_period";
    const SRC: &str = "LCFS-PR busy period";
    if cfg.discipline != Discipline::LcfsPr {
        return Err(Error::domain(format!("{}: not an LCFS-PR scenario", cfg.name)));
    }
    let (rho, law) = match cfg.variant {
        Variant::Coc => (cfg.rho_upper(), cfg.order_stat_law()),
        Variant::Cos => (
            cfg.rho_tilde() * cfg.n_join as f64 / cfg.servers as f64,
            OrderStatLaw::new(cfg.job_size, ReplicaDependence::Identical, 1, 1)?,
        ),
    };
    if !(rho < 1.0) {
        return Ok(BoundCurve::invalid(NAME, SRC, format!("load {rho} >= 1")));
    }
    let (Some(index), Some(constant)) = (law.tail_index(), law.tail_constant()) else {
        return Err(Error::domain(format!("{}: busy-period asymptote needs Pareto job sizes", cfg.name)));
    };
    let nu = -index;
    let e_nbp = match (busy_period_jobs, cfg.arrival) {
        (Some(v), _) => v,
        (None, Distribution::Exponential { .. }) => 1.0 / (1.0 - rho),
        (None, _) => {
            return Ok(BoundCurve::invalid(NAME, SRC, "non-exponential arrivals need a simulated E[N_bp]"));
        }
    };
    let c = busy_period_prefactor(rho, nu, constant, e_nbp);
    BoundCurve::sampled(NAME, SRC, grid, |x| Ok(c * x.powf(-nu)))
}

/// `E[N_bp] (1-ρ)^{-ν} L`.
pub fn busy_period_prefactor(rho: f64, nu: f64, tail_constant: f64, busy_period_jobs: f64) -> f64 {
    busy_period_jobs * (1.0 - rho).powf(-nu) * tail_constant
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::stream_rng;

    fn cfg(
        n: u32,
        d: u32,
        variant: Variant,
        discipline: Discipline,
        dep: ReplicaDependence,
        rho: f64,
    ) -> ScenarioConfig {
        ScenarioConfig::redundancy(n, d, variant, discipline, dep, Distribution::pareto(1.5, 1.0 / 3.0).unwrap(), rho)
            .unwrap()
    }

    #[test]
    fn figure_one_exponent() {
        let c = cfg(3, 2, Variant::Cos, Discipline::Fcfs, ReplicaDependence::Identical, 2.5);
        let p = tail_index_prediction(&c).unwrap();
        assert!((p.exponent + 0.5).abs() < 1e-12);
        assert!(p.preconditions_hold());
    }

    #[test]
    fn coc_iid_and_lcfs_exponents() {
        let c = cfg(3, 2, Variant::Coc, Discipline::Fcfs, ReplicaDependence::Iid, 0.5);
        assert!((tail_index_prediction(&c).unwrap().exponent + 2.0).abs() < 1e-12);
        for d in 1..=3 {
            let c = cfg(3, d, Variant::Coc, Discipline::LcfsPr, ReplicaDependence::Identical, 0.5);
            assert!((tail_index_prediction(&c).unwrap().exponent + 1.5).abs() < 1e-12);
        }
    }

    #[test]
    fn non_rv_size_is_rejected() {
        let mut c = cfg(3, 2, Variant::Coc, Discipline::Fcfs, ReplicaDependence::Identical, 0.5);
        c.job_size = Distribution::exponential(1.0).unwrap();
        assert!(matches!(tail_index_prediction(&c), Err(Error::Domain(_))));
    }

    #[test]
    fn integer_load_warns() {
        let c = cfg(3, 2, Variant::Cos, Discipline::Fcfs, ReplicaDependence::Identical, 2.0);
        assert_eq!(tail_index_prediction(&c).unwrap().warnings.len(), 1);
    }

    #[test]
    fn single_server_value() {
        let curve = single_server_fcfs_asymptote(0.5, &Distribution::pareto(1.5, 1.0 / 3.0).unwrap(), &[3.0]).unwrap();
        assert!((curve.points[0].1 - 2.0 / 9.0).abs() < 1e-15);
        let bad = single_server_fcfs_asymptote(1.0, &Distribution::pareto(1.5, 1.0).unwrap(), &[3.0]).unwrap();
        assert!(!bad.valid);
    }

    #[test]
    fn coc_prefactors() {
        let c = cfg(3, 2, Variant::Coc, Discipline::Fcfs, ReplicaDependence::Identical, 0.5);
        let (lo, hi) = coc_fcfs_bound_curves(&c, &[3.0]).unwrap();
        let res = 2.0 / 9.0;
        assert!((hi.points[0].1 - res).abs() < 1e-15);
        assert!((lo.points[0].1 - 0.2 * res).abs() < 1e-15);
    }

    #[test]
    fn cos_part_two_prefactor_and_omissions() {
        let c = cfg(3, 2, Variant::Cos, Discipline::Fcfs, ReplicaDependence::Identical, 0.5);
        let curves = cos_fcfs_bound_curves(&c, &[100.0], DEFAULT_DELTA).unwrap();
        let ii = &curves[1];
        let x = 100.0 * (1.0 - DEFAULT_DELTA);
        let expect = 3.0 * Distribution::pareto(1.5, 1.0 / 3.0).unwrap().residual_ccdf(x).unwrap().powi(2);
        assert!((ii.points[0].1 - expect).abs() < 1e-15 * expect.max(1.0));
        assert!(!curves[3].valid);
        let int = cfg(3, 2, Variant::Cos, Discipline::Fcfs, ReplicaDependence::Identical, 2.0);
        assert!(!cos_fcfs_bound_curves(&int, &[100.0], DEFAULT_DELTA).unwrap()[2].valid);
    }

    #[test]
    fn busy_period_prefactor_value() {
        let c = cfg(3, 2, Variant::Coc, Discipline::LcfsPr, ReplicaDependence::Identical, 0.5);
        let curve = lcfs_busy_period_asymptote(&c, &[1.0], None).unwrap();
        assert!((curve.points[0].1 - 1.0887).abs() < 1e-4);
    }

    #[test]
    fn busy_period_jobs_match_identity() {
        let arrival = Distribution::exponential(0.5).unwrap();
        let size = Distribution::pareto(1.5, 1.0 / 3.0).unwrap();
        let est = estimate_busy_period_jobs(&arrival, &size, 400_000, &mut stream_rng(3, 0)).unwrap();
        assert!((est - 2.0).abs() < 0.05, "{est}");
    }
}
