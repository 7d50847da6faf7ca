//! Short-horizon online patrol strategies. At each arrival an agent picks the
//! next neighbour from believed arc weights, vertex idleness and teammates'
//! announced intentions.
//!
//! All built-in strategies share one tie-break chain: highest score, then
//! smallest believed weight, then smallest vertex id.

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, VertexId};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NeighborArc {
    pub edge: EdgeId,
    pub vertex: VertexId,
    pub believed_weight: f64,
}

#[derive(Clone, Copy, Debug)]
pub struct DecisionContext<'a> {
    pub agent_id: usize,
    pub current_vertex: VertexId,
    pub t_now: f64,
    pub neighbors: &'a [NeighborArc],
    /// Idleness of every vertex, indexed by vertex id.
    pub idleness: &'a [f64],
    /// Number of *other* agents currently heading to each vertex.
    pub intentions: &'a [u32],
}

/// Any deterministic decision rule; implement this to plug in a new strategy.
pub trait PatrolStrategy: Send + Sync {
    fn name(&self) -> &str;
    fn decide(&self, ctx: &DecisionContext<'_>) -> VertexId;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    GreedyReactive,
    ExpectedReactive,
    StateExchange,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] =
        [StrategyKind::GreedyReactive, StrategyKind::ExpectedReactive, StrategyKind::StateExchange];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyKind::GreedyReactive => "greedy_reactive",
            StrategyKind::ExpectedReactive => "expected_reactive",
            StrategyKind::StateExchange => "state_exchange",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown strategy '{s}'")))
    }
}

impl PatrolStrategy for StrategyKind {
    fn name(&self) -> &str {
        self.as_str()
    }

    fn decide(&self, ctx: &DecisionContext<'_>) -> VertexId {
        match self {
            StrategyKind::GreedyReactive => decide_greedy_reactive(ctx),
            StrategyKind::ExpectedReactive => decide_expected_reactive(ctx),
            StrategyKind::StateExchange => decide_state_exchange(ctx),
        }
    }
}

fn select_by(ctx: &DecisionContext<'_>, score: impl Fn(&NeighborArc) -> f64) -> VertexId {
    let better = |a: (f64, &NeighborArc), b: (f64, &NeighborArc)| -> Ordering {
        // Greater means `a` is preferred.
        a.0.total_cmp(&b.0)
            .then_with(|| b.1.believed_weight.total_cmp(&a.1.believed_weight))
            .then_with(|| b.1.vertex.cmp(&a.1.vertex))
    };
    ctx.neighbors
        .iter()
        .map(|n| (score(n), n))
        .max_by(|a, b| better(*a, *b))
        .expect("decision context has at least one neighbour")
        .1
        .vertex
}

/// Most idle neighbour.
pub fn decide_greedy_reactive(ctx: &DecisionContext<'_>) -> VertexId {
    select_by(ctx, |n| ctx.idleness[n.vertex])
}

/// Expected idleness on arrival per second of travel. A neighbour already
/// targeted by a teammate is expected to be freshly visited, so only the
/// travel time counts towards its arrival idleness.
pub fn decide_expected_reactive(ctx: &DecisionContext<'_>) -> VertexId {
    select_by(ctx, |n| {
        let w = n.believed_weight;
        let arrival = if ctx.intentions[n.vertex] == 0 { ctx.idleness[n.vertex] + w } else { w };
        arrival / w
    })
}

/// Idleness gain rate, halved for every teammate already heading there.
pub fn decide_state_exchange(ctx: &DecisionContext<'_>) -> VertexId {
    select_by(ctx, |n| {
        ctx.idleness[n.vertex] / n.believed_weight * 0.5f64.powi(ctx.intentions[n.vertex] as i32)
    })
}
