//! One parallel-server system and the loads derived from it.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heavytail::{Distribution, Mean, OrderStatLaw, ReplicaDependence};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Cancel-on-start.
    Cos,
    /// Cancel-on-completion.
    Coc,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Discipline {
    Fcfs,
    LcfsPr,
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Cos => "cos",
            Variant::Coc => "coc",
        })
    }
}

impl fmt::Display for Discipline {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Discipline::Fcfs => "fcfs",
            Discipline::LcfsPr => "lcfs_pr",
        })
    }
}

/// Loads within this distance of an integer trigger the integer-load warning.
pub const INTEGER_LOAD_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioConfig {
    pub name: String,
    /// Number of servers `N`.
    pub servers: u32,
    /// Replicas per job `n_F` (the `d` of redundancy-d).
    pub n_fork: u32,
    /// Replicas that must start (c.o.s.) or finish (c.o.c.) `n_J`.
    pub n_join: u32,
    pub variant: Variant,
    pub discipline: Discipline,
    pub dependence: ReplicaDependence,
    pub arrival: Distribution,
    pub job_size: Distribution,
}

impl ScenarioConfig {
    /// Redundancy-d with the given job size law and exponential arrivals at load `rho`.
    pub fn redundancy(
        servers: u32,
        d: u32,
        variant: Variant,
        discipline: Discipline,
        dependence: ReplicaDependence,
        job_size: Distribution,
        rho: f64,
    ) -> Result<Self> {
        let mean =
            job_size.mean().finite().ok_or_else(|| Error::config("load shorthand needs a finite-mean job size"))?;
        let cfg = ScenarioConfig {
            name: format!("{variant}_{discipline}_{dependence}_n{servers}_d{d}"),
            servers,
            n_fork: d,
            n_join: 1,
            variant,
            discipline,
            dependence,
            arrival: Distribution::exponential(rho / mean)?,
            job_size,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.servers == 0 || self.servers > u16::MAX as u32 {
            return Err(Error::config(format!("{}: N must be in 1..=65535", self.name)));
        }
        if self.n_fork == 0 || self.n_fork > self.servers {
            return Err(Error::config(format!(
                "{}: need 1 <= n_F <= N, got n_F={} N={}",
                self.name, self.n_fork, self.servers
            )));
        }
        if self.n_join == 0 || self.n_join > self.n_fork {
            return Err(Error::config(format!(
                "{}: need 1 <= n_J <= n_F, got n_J={} n_F={}",
                self.name, self.n_join, self.n_fork
            )));
        }
        if self.n_fork > 64 {
            return Err(Error::config(format!("{}: n_F above 64 is not supported", self.name)));
        }
        if self.arrival.mean().finite().is_none_or(|m| m <= 0.0) {
            return Err(Error::config(format!("{}: interarrival law needs a positive finite mean", self.name)));
        }
        self.arrival.validated()?;
        self.job_size.validated()?;
        Ok(())
    }

    pub fn mean_interarrival(&self) -> f64 {
        self.arrival.mean().finite().expect("validated arrival law")
    }

    /// `ρ̃ = E[B]/E[A]`, infinite for infinite-mean job sizes.
    pub fn rho_tilde(&self) -> f64 {
        match self.job_size.mean() {
            Mean::Finite(b) => b / self.mean_interarrival(),
            Mean::Infinite => f64::INFINITY,
        }
    }

    /// `k = ⌊ρ̃⌋`, when the load is finite.
    pub fn integer_part(&self) -> Option<u32> {
        let rho = self.rho_tilde();
        rho.is_finite().then(|| rho.floor() as u32)
    }

    /// `d_cap = min{d, N - k}`; meaningful for c.o.s. below the stability limit.
    pub fn d_cap(&self) -> Option<u32> {
        let k = self.integer_part()?;
        (k < self.servers).then(|| self.n_fork.min(self.servers - k))
    }

    pub fn integer_load_warning(&self) -> bool {
        let rho = self.rho_tilde();
        rho.is_finite() && (rho - rho.round()).abs() < INTEGER_LOAD_EPS
    }

    /// Thinning factor `K = C(N, n_F) · n_F! / (n_F - n_J + 1)!` of the lower bound system.
    pub fn k_factor(&self) -> f64 {
        k_factor(self.servers, self.n_fork, self.n_join)
    }

    pub fn order_stat_law(&self) -> OrderStatLaw {
        OrderStatLaw::new(self.job_size, self.dependence, self.n_fork, self.n_join).expect("validated fork/join counts")
    }

    /// `ρ_U = E[B_(n_J)]/E[A]`.
    pub fn rho_upper(&self) -> f64 {
        match self.order_stat_law().mean() {
            Mean::Finite(b) => b / self.mean_interarrival(),
            Mean::Infinite => f64::INFINITY,
        }
    }

    /// `ρ_L = ρ_U / K`.
    pub fn rho_lower(&self) -> f64 {
        self.rho_upper() / self.k_factor()
    }

    /// Load of the system in which every identical replica is fully served: `(n_F/N) ρ̃`.
    pub fn rho_all_replicas(&self) -> f64 {
        self.n_fork as f64 / self.servers as f64 * self.rho_tilde()
    }

    /// Stability check applied before a run, per variant and discipline.
    pub fn check_stable(&self) -> Result<()> {
        let rho = self.rho_tilde();
        let n = self.servers as f64;
        match (self.variant, self.discipline) {
            (Variant::Cos, Discipline::Fcfs) if !(rho < n) => {
                Err(Error::Unstable(format!("{}: c.o.s. FCFS needs rho < N, got rho={rho} N={n}", self.name)))
            }
            (Variant::Cos, Discipline::LcfsPr) if !(rho < n / self.n_join as f64) => Err(Error::Unstable(format!(
                "{}: c.o.s. LCFS-PR needs rho < N/n_J, got rho={rho} N/n_J={}",
                self.name,
                n / self.n_join as f64
            ))),
            _ => Ok(()),
        }
    }

    /// The same system with every time value multiplied by `c`.
    pub fn rescaled(&self, c: f64) -> Self {
        ScenarioConfig { arrival: self.arrival.rescaled(c), job_size: self.job_size.rescaled(c), ..self.clone() }
    }

    pub fn derived(&self) -> DerivedLoads {
        DerivedLoads {
            rho_tilde: self.rho_tilde(),
            k: self.integer_part(),
            d_cap: self.d_cap(),
            k_factor: self.k_factor(),
            rho_upper: self.rho_upper(),
            rho_lower: self.rho_lower(),
            integer_load: self.integer_load_warning(),
        }
    }
}

/// Snapshot of the derived quantities, for reports.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedLoads {
    pub rho_tilde: f64,
    pub k: Option<u32>,
    pub d_cap: Option<u32>,
    pub k_factor: f64,
    pub rho_upper: f64,
    pub rho_lower: f64,
    pub integer_load: bool,
}

pub fn binomial(n: u32, k: u32) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k as u128 {
        acc = acc * (n as u128 - i) / (i + 1);
    }
    acc as f64
}

pub fn factorial(n: u32) -> f64 {
    (1..=n as u128).product::<u128>() as f64
}

pub fn k_factor(servers: u32, n_fork: u32, n_join: u32) -> f64 {
    // n_F! / (n_F - n_J + 1)! = n_F · (n_F - 1) ⋯ (n_F - n_J + 2)
    let falling: u128 = ((n_fork - n_join + 2) as u128..=n_fork as u128).product();
    binomial(servers, n_fork) * falling as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fig(servers: u32, d: u32, variant: Variant, rho: f64) -> ScenarioConfig {
        ScenarioConfig::redundancy(
            servers,
            d,
            variant,
            Discipline::Fcfs,
            ReplicaDependence::Identical,
            Distribution::pareto(1.5, 1.0 / 3.0).unwrap(),
            rho,
        )
        .unwrap()
    }

    #[test]
    fn k_factor_values() {
        assert_eq!(k_factor(3, 2, 1), 3.0);
        assert_eq!(k_factor(3, 1, 1), 3.0);
        assert_eq!(k_factor(3, 3, 3), 6.0);
        assert_eq!(k_factor(5, 3, 3), 60.0);
        assert_eq!(k_factor(4, 3, 2), 4.0 * 3.0);
    }

    #[test]
    fn figure_one_loads() {
        let cfg = fig(3, 2, Variant::Cos, 2.5);
        assert!((cfg.rho_tilde() - 2.5).abs() < 1e-12);
        assert_eq!(cfg.integer_part(), Some(2));
        assert_eq!(cfg.d_cap(), Some(1));
        assert!(!cfg.integer_load_warning());
        assert!(cfg.check_stable().is_ok());
        assert!(fig(3, 2, Variant::Cos, 3.0).check_stable().is_err());
        assert!(fig(3, 2, Variant::Cos, 2.0).integer_load_warning());
    }

    #[test]
    fn figure_two_loads() {
        let cfg = fig(3, 2, Variant::Coc, 0.5);
        assert!((cfg.rho_upper() - 0.5).abs() < 1e-12);
        assert_eq!(cfg.k_factor(), 3.0);
        assert!((cfg.rho_lower() - 1.0 / 6.0).abs() < 1e-12);
        assert!((cfg.rho_all_replicas() - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn validation_rejects_bad_counts() {
        let mut cfg = fig(3, 2, Variant::Coc, 0.5);
        cfg.n_fork = 4;
        assert!(cfg.validate().is_err());
        cfg.n_fork = 2;
        cfg.n_join = 3;
        assert!(cfg.validate().is_err());
    }
}
