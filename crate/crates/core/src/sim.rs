//! Fixed-tick simulation of a patrol team.
//!
//! Each tick of length `dt` starting at `t`:
//!
//! 1. every travelling agent advances by `dt * s(e, t) / w0(e)`;
//! 2. agents whose progress reaches 1 arrive at `t + dt`, reset the idleness
//!    of the vertex they reach and broadcast the observed traversal time;
//! 3. observations are applied to the shared beliefs, then arrived agents
//!    decide in ascending id order, each announcing its intention before the
//!    next one decides;
//! 4. idleness of every vertex is sampled.
//!
//! Broadcasts have zero latency. A run is single-threaded and fully
//! determined by its config and seed.

use std::path::Path;

use rand::seq::index::sample;
use serde::{Deserialize, Serialize};

use crate::belief::{BeliefState, HandlingMethod, NoiseSpec, DEFAULT_PHI};
use crate::dynamics::DynamicProfile;
use crate::error::{Error, Result};
use crate::graph::{EdgeId, PatrolGraph, VertexId};
use crate::seed::{derive_seed, stream_rng};
use crate::strategy::{DecisionContext, NeighborArc, PatrolStrategy, StrategyKind};

/// Progress within this distance of 1 counts as arrived, so that exact
/// traversal times are not pushed one tick late by rounding.
const ARRIVAL_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub team_size: usize,
    pub strategy: StrategyKind,
    pub method: HandlingMethod,
    #[serde(default = "default_phi")]
    pub phi: f64,
    /// Standard deviation of multiplicative prior-belief noise; `None` or 0 disables it.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    #[serde(default = "default_dt")]
    pub dt: f64,
    pub duration: f64,
    pub seed: u64,
    /// Keep the full per-tick idleness trace in the record.
    #[serde(default)]
    pub record_trace: bool,
}

fn default_phi() -> f64 {
    DEFAULT_PHI
}

fn default_dt() -> f64 {
    1.0
}

impl SimConfig {
    pub fn new(team_size: usize, strategy: StrategyKind, method: HandlingMethod, duration: f64, seed: u64) -> Self {
        SimConfig {
            team_size,
            strategy,
            method,
            phi: DEFAULT_PHI,
            noise_sigma: None,
            dt: 1.0,
            duration,
            seed,
            record_trace: false,
        }
    }

    /// Number of ticks, or an error if `duration` is not a multiple of `dt`.
    pub fn ticks(&self) -> Result<usize> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.duration.is_finite() && self.duration > 0.0) {
            return Err(Error::Config(format!("duration must be positive, got {}", self.duration)));
        }
        let k = (self.duration / self.dt).round();
        if (k * self.dt - self.duration).abs() > 1e-9 * self.duration {
            return Err(Error::Config(format!(
                "duration {} is not a multiple of dt {}",
                self.duration, self.dt
            )));
        }
        Ok(k as usize)
    }

    /// Validates against a graph and optional profile before any work is done.
    pub fn validate(&self, graph: &PatrolGraph, profile: Option<&DynamicProfile>) -> Result<usize> {
        let ticks = self.ticks()?;
        if self.team_size == 0 {
            return Err(Error::Config("team size must be at least 1".into()));
        }
        if self.team_size > graph.vertex_count() {
            return Err(Error::Config(format!(
                "team size {} exceeds vertex count {}",
                self.team_size,
                graph.vertex_count()
            )));
        }
        if let Some(s) = self.noise_sigma {
            if !(s.is_finite() && s >= 0.0) {
                return Err(Error::Config(format!("noise sigma must be >= 0, got {s}")));
            }
        }
        if let Some(p) = profile {
            p.check_graph(graph)?;
            if p.horizon() < self.duration {
                return Err(Error::Config(format!(
                    "profile horizon {} is shorter than duration {}",
                    p.horizon(),
                    self.duration
                )));
            }
        }
        Ok(ticks)
    }

    fn noise(&self) -> Option<NoiseSpec> {
        self.noise_sigma
            .filter(|&s| s > 0.0)
            .map(|sigma| NoiseSpec { sigma, seed: derive_seed(self.seed, &["belief-noise"]) })
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Location {
    AtVertex(VertexId),
    OnEdge { edge: EdgeId, progress: f64, start_time: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentState {
    pub agent_id: usize,
    pub location: Location,
    pub intention: Option<VertexId>,
    pub last_decision_time: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub t: f64,
    pub edge: EdgeId,
    pub observed_weight: f64,
    pub observer: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub config: SimConfig,
    pub vertex_count: usize,
    pub ticks: usize,
    /// Sum of sampled idleness over all ticks and vertices.
    pub idleness_sum: f64,
    /// Largest idleness reached, including the value at the instant of a visit.
    pub max_idleness: f64,
    pub visits: usize,
    pub initial_positions: Vec<VertexId>,
    pub observations: Vec<Observation>,
    /// Row-major `ticks x vertex_count` idleness samples when tracing is on.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trace: Option<Vec<f64>>,
}

impl RunRecord {
    pub fn mean_idleness(&self) -> Result<f64> {
        crate::metrics::mean_graph_idleness(self)
    }

    /// Writes the trace as `t,vertex,idleness` rows.
    pub fn write_trace_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let trace = self
            .trace
            .as_ref()
            .ok_or_else(|| Error::InsufficientData("run was recorded without a trace".into()))?;
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
        w.write_record(["t", "vertex", "idleness"]).map_err(|e| Error::Parse(e.to_string()))?;
        for (i, idle) in trace.iter().enumerate() {
            let tick = i / self.vertex_count + 1;
            let v = i % self.vertex_count;
            let t = tick as f64 * self.config.dt;
            w.write_record([t.to_string(), v.to_string(), idle.to_string()])
                .map_err(|e| Error::Parse(e.to_string()))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Runs one simulation with the configured built-in strategy.
pub fn run_simulation(graph: &PatrolGraph, profile: Option<&DynamicProfile>, cfg: &SimConfig) -> Result<RunRecord> {
    run_simulation_with(graph, profile, cfg, &cfg.strategy)
}

/// Runs one simulation with an arbitrary strategy implementation.
pub fn run_simulation_with(
    graph: &PatrolGraph,
    profile: Option<&DynamicProfile>,
    cfg: &SimConfig,
    strategy: &dyn PatrolStrategy,
) -> Result<RunRecord> {
    let ticks = cfg.validate(graph, profile)?;
    let n_vertices = graph.vertex_count();
    let dt = cfg.dt;

    let mut beliefs = BeliefState::new(graph, cfg.method, cfg.phi, cfg.noise())?;
    let mut placement_rng = stream_rng(cfg.seed, 0);
    let initial_positions: Vec<VertexId> = sample(&mut placement_rng, n_vertices, cfg.team_size).into_vec();

    let mut agents: Vec<AgentState> = initial_positions
        .iter()
        .enumerate()
        .map(|(agent_id, &v)| AgentState {
            agent_id,
            location: Location::AtVertex(v),
            intention: None,
            last_decision_time: 0.0,
        })
        .collect();

    let mut last_visit = vec![0.0f64; n_vertices];
    let mut idleness = vec![0.0f64; n_vertices];
    let mut intentions = vec![0u32; n_vertices];
    let mut neighbors: Vec<NeighborArc> = Vec::new();
    let mut observations = Vec::new();
    let mut trace = cfg.record_trace.then(|| Vec::with_capacity(ticks * n_vertices));
    let mut idleness_sum = 0.0;
    let mut max_idleness = 0.0f64;
    let mut visits = 0usize;

    let decide = |agent: &mut AgentState,
                      t: f64,
                      beliefs: &BeliefState,
                      idleness: &[f64],
                      intentions: &mut [u32],
                      neighbors: &mut Vec<NeighborArc>|
     -> Result<()> {
        let Location::AtVertex(here) = agent.location else {
            unreachable!("only agents at a vertex decide");
        };
        neighbors.clear();
        for &e in graph.out_arcs(here) {
            neighbors.push(NeighborArc {
                edge: e,
                vertex: graph.arc(e).to,
                believed_weight: beliefs.believed_weight(e, t, Some((profile, graph)))?,
            });
        }
        let ctx = DecisionContext {
            agent_id: agent.agent_id,
            current_vertex: here,
            t_now: t,
            neighbors,
            idleness,
            intentions,
        };
        let target = strategy.decide(&ctx);
        let edge = graph
            .find_arc(here, target)
            .ok_or_else(|| Error::Config(format!("strategy chose non-neighbour {target} from {here}")))?;
        intentions[target] += 1;
        agent.intention = Some(target);
        agent.last_decision_time = t;
        agent.location = Location::OnEdge { edge, progress: 0.0, start_time: t };
        Ok(())
    };

    for agent in agents.iter_mut() {
        decide(agent, 0.0, &beliefs, &idleness, &mut intentions, &mut neighbors)?;
    }

    let mut arrived: Vec<(usize, EdgeId, f64)> = Vec::with_capacity(cfg.team_size);
    for k in 1..=ticks {
        let t_prev = (k - 1) as f64 * dt;
        let t = k as f64 * dt;

        arrived.clear();
        for agent in agents.iter_mut() {
            if let Location::OnEdge { edge, progress, start_time } = &mut agent.location {
                let scale = profile.map_or(1.0, |p| p.scale_at(*edge, t_prev));
                *progress += dt * scale / graph.arc(*edge).base_weight;
                if *progress >= 1.0 - ARRIVAL_EPS {
                    arrived.push((agent.agent_id, *edge, *start_time));
                }
            }
        }

        for &(id, edge, start) in &arrived {
            let dest = graph.arc(edge).to;
            let agent = &mut agents[id];
            agent.location = Location::AtVertex(dest);
            agent.intention = None;
            intentions[dest] -= 1;

            max_idleness = max_idleness.max(t - last_visit[dest]);
            last_visit[dest] = t;
            visits += 1;

            let observed = t - start;
            observations.push(Observation { t, edge, observed_weight: observed, observer: id });
            beliefs.record_observation(edge, observed, t)?;
        }

        if !arrived.is_empty() {
            for (v, idle) in idleness.iter_mut().enumerate() {
                *idle = t - last_visit[v];
            }
            for &(id, _, _) in &arrived {
                decide(&mut agents[id], t, &beliefs, &idleness, &mut intentions, &mut neighbors)?;
            }
        }

        for (v, idle) in idleness.iter_mut().enumerate() {
            *idle = t - last_visit[v];
            idleness_sum += *idle;
            max_idleness = max_idleness.max(*idle);
        }
        if let Some(tr) = trace.as_mut() {
            tr.extend_from_slice(&idleness);
        }
    }

    Ok(RunRecord {
        config: cfg.clone(),
        vertex_count: n_vertices,
        ticks,
        idleness_sum,
        max_idleness,
        visits,
        initial_positions,
        observations,
        trace,
    })
}

/// Exact completion time of a traversal of an arc with base weight
/// `base_weight` starting at `t_start`: the smallest `t` with
/// `∫_{t_start}^{t} s(e, τ) / w0 dτ >= 1`, integrated segment by segment over
/// the piecewise-constant profile. Returns the duration `t - t_start`.
pub fn observed_weight_integral_check(
    profile: Option<&DynamicProfile>,
    e: EdgeId,
    t_start: f64,
    base_weight: f64,
) -> Result<f64> {
    let Some(p) = profile else {
        return Ok(base_weight);
    };
    if !(0.0..=p.horizon()).contains(&t_start) {
        return Err(Error::OutOfHorizon { t: t_start, horizon: p.horizon() });
    }
    let mut remaining = base_weight; // progress still needed, in scale-seconds
    let mut t = t_start;
    while t < p.horizon() {
        let (_, seg_end) = p.segment_bounds(t);
        let seg_end = seg_end.min(p.horizon());
        let s = p.scale_at(e, t);
        let span = seg_end - t;
        if s * span >= remaining {
            return Ok(t + remaining / s - t_start);
        }
        remaining -= s * span;
        t = seg_end;
    }
    Err(Error::NeverCompletes { edge: e.0, start: t_start })
}
