//! Simulation and tail analysis for redundancy-d and fork-join queueing systems
//! with heavy-tailed job sizes.
//!
//! The c.o.s. FCFS case runs on a workload recursion ([`recursion`]); every
//! other combination goes through the event simulator ([`engine`]). Bound
//! systems and their dominance checks live in [`boundsys`], closed-form
//! predictions in [`asymptotics`], and [`experiment`] ties it together.

// negated float comparisons are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod boundsys;
pub mod engine;
pub mod error;
pub mod experiment;
pub mod heavytail;
pub mod recursion;
pub mod run;
pub mod scenario;
pub mod sink;
pub mod stream;
pub mod tailstats;

pub use asymptotics::{tail_index_prediction, BoundCurve, TailPrediction};
pub use boundsys::{verify_dominance, CoupledStreams, DominanceReport};
pub use error::{Error, Result};
pub use experiment::{run_experiment, ExperimentResult, ExperimentSpec, ScenarioSpec};
pub use heavytail::{Distribution, Mean, OrderStatLaw, ReplicaDependence, TailClass};
pub use run::{RunOptions, RunSummary, TieBreak};
pub use scenario::{DerivedLoads, Discipline, ScenarioConfig, Variant};
pub use sink::{JobOutcome, OutcomeSink, ReplicaOutcome, ReplicaState};
pub use stream::{JobDraw, JobStream, StreamKey};
pub use tailstats::{CcdfPoint, SlopeFit, TailCounter, TailGrid};
