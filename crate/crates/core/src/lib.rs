//! Simulation engine and experiment harness for decentralised multi-robot
//! patrol on graphs whose edge traversability changes over time.
//!
//! A team shares beliefs about arc traversal times under one of four handling
//! methods ([`belief::HandlingMethod`]); the `decay` method relaxes stale
//! beliefs towards the team's mean belief so that long-unobserved edges look
//! neither better nor worse than average.

pub mod analysis;
pub mod belief;
pub mod dynamics;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod metrics;
pub mod par;
pub mod seed;
pub mod sim;
pub mod strategy;

pub use belief::{BeliefState, HandlingMethod, NoiseSpec, DEFAULT_PHI};
pub use dynamics::{DynamicProfile, GeneratorSpec, ProfileKind};
pub use error::{Error, GraphViolation, Result};
pub use experiment::{run_batch, run_batch_sequential, run_experiment, ExperimentPlan, Manifest, RunSummary};
pub use graph::{generate_grid_graph, load_graph, save_graph, EdgeId, PatrolGraph, VertexId};
pub use metrics::{mean_graph_idleness, relative_idleness, wilcoxon_signed_rank, MetricsEntry};
pub use sim::{observed_weight_integral_check, run_simulation, run_simulation_with, RunRecord, SimConfig};
pub use strategy::{DecisionContext, PatrolStrategy, StrategyKind};
