//! Fixtures shared by the benchmarks.

use redtail_core::heavytail::ReplicaDependence;
use redtail_core::{Discipline, Distribution, ScenarioConfig, Variant};

/// Three servers, pareto(1.5, 1/3) sizes, exponential arrivals at `rho`.
pub fn three_servers(d: u32, variant: Variant, discipline: Discipline, rho: f64) -> ScenarioConfig {
    let size = Distribution::pareto(1.5, 1.0 / 3.0).expect("valid pareto");
    ScenarioConfig::redundancy(3, d, variant, discipline, ReplicaDependence::Identical, size, rho)
        .expect("valid scenario")
}
