//! Team-shared edge-weight beliefs under one of four handling methods.
//!
//! Every observation overwrites the anchor of the traversed edge. Under the
//! decay method an anchor relaxes towards the collective mean `W̄` (the mean of
//! all anchors) at a per-second rate `phi`:
//!
//! ```text
//! w(t) = W̄ + (1 - phi)^(t - t_anchor) * (anchor - W̄)
//! ```
//!
//! which is the closed form of applying `w <- (1 - phi) w + phi W̄` once per
//! elapsed second. Anchors are never mutated on read.
//!
//! Anchors are kept per link, so both arcs of an undirected edge share one
//! belief, in the same way they share one ground-truth series.

use std::fmt;
use std::str::FromStr;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dynamics::DynamicProfile;
use crate::error::{Error, Result};
use crate::graph::{EdgeId, PatrolGraph};
use crate::seed::stream_rng;

pub const DEFAULT_PHI: f64 = 0.0025;

/// Lower clamp applied to multiplicative belief noise.
pub const NOISE_FLOOR: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HandlingMethod {
    Lazy,
    Simple,
    Omniscient,
    Decay,
}

impl HandlingMethod {
    pub const ALL: [HandlingMethod; 4] =
        [HandlingMethod::Lazy, HandlingMethod::Simple, HandlingMethod::Omniscient, HandlingMethod::Decay];

    pub fn as_str(self) -> &'static str {
        match self {
            HandlingMethod::Lazy => "lazy",
            HandlingMethod::Simple => "simple",
            HandlingMethod::Omniscient => "omniscient",
            HandlingMethod::Decay => "decay",
        }
    }

    fn records_observations(self) -> bool {
        matches!(self, HandlingMethod::Simple | HandlingMethod::Decay)
    }
}

impl fmt::Display for HandlingMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for HandlingMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        HandlingMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown handling method '{s}'")))
    }
}

/// Persistent multiplicative error on prior beliefs, `N(1, sigma^2)` per edge.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub sigma: f64,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BeliefState {
    method: HandlingMethod,
    phi: f64,
    link_of: Vec<usize>,
    anchor_value: Vec<f64>,
    anchor_time: Vec<f64>,
    collective_mean: f64,
    noise_multipliers: Option<Vec<f64>>,
}

impl BeliefState {
    pub fn new(graph: &PatrolGraph, method: HandlingMethod, phi: f64, noise: Option<NoiseSpec>) -> Result<Self> {
        if !(0.0..1.0).contains(&phi) {
            return Err(Error::Config(format!("phi must lie in [0, 1), got {phi}")));
        }
        let mut anchor_value: Vec<f64> = graph.links().iter().map(|l| l.base_weight).collect();
        let noise_multipliers = match noise {
            Some(NoiseSpec { sigma, seed }) => {
                let dist = Normal::new(1.0, sigma)
                    .map_err(|_| Error::Config(format!("noise sigma must be >= 0, got {sigma}")))?;
                let mut rng = stream_rng(seed, 0);
                let mult: Vec<f64> =
                    anchor_value.iter().map(|_| dist.sample(&mut rng).max(NOISE_FLOOR)).collect();
                for (a, m) in anchor_value.iter_mut().zip(&mult) {
                    *a *= m;
                }
                Some(mult)
            }
            None => None,
        };
        let anchor_time = vec![0.0; anchor_value.len()];
        let mut state = BeliefState {
            method,
            phi,
            link_of: graph.arcs().iter().map(|a| a.link).collect(),
            anchor_value,
            anchor_time,
            collective_mean: 0.0,
            noise_multipliers,
        };
        state.recompute_mean();
        Ok(state)
    }

    fn recompute_mean(&mut self) {
        self.collective_mean = self.anchor_value.iter().sum::<f64>() / self.anchor_value.len() as f64;
    }

    pub fn method(&self) -> HandlingMethod {
        self.method
    }

    pub fn phi(&self) -> f64 {
        self.phi
    }

    pub fn collective_mean(&self) -> f64 {
        self.collective_mean
    }

    pub fn anchor(&self, e: EdgeId) -> (f64, f64) {
        let l = self.link_of[e.0];
        (self.anchor_value[l], self.anchor_time[l])
    }

    pub fn noise_multipliers(&self) -> Option<&[f64]> {
        self.noise_multipliers.as_deref()
    }

    /// Records a traversal time for `e`. No-op for lazy and omniscient teams.
    pub fn record_observation(&mut self, e: EdgeId, observed_weight: f64, t_now: f64) -> Result<()> {
        if !(observed_weight.is_finite() && observed_weight > 0.0) {
            return Err(Error::NonPositiveObservation(observed_weight));
        }
        if !self.method.records_observations() {
            return Ok(());
        }
        let l = self.link_of[e.0];
        self.anchor_value[l] = observed_weight;
        self.anchor_time[l] = t_now;
        self.recompute_mean();
        Ok(())
    }

    /// The team's believed traversal time of `e` at `t_now`. Omniscient teams
    /// need the ground truth; a missing profile means a static environment.
    pub fn believed_weight(
        &self,
        e: EdgeId,
        t_now: f64,
        truth: Option<(Option<&DynamicProfile>, &PatrolGraph)>,
    ) -> Result<f64> {
        let l = self.link_of[e.0];
        let (anchor, at) = (self.anchor_value[l], self.anchor_time[l]);
        match self.method {
            HandlingMethod::Lazy | HandlingMethod::Simple => Ok(anchor),
            HandlingMethod::Omniscient => {
                let (profile, graph) = truth.ok_or(Error::MissingTruth)?;
                let base = graph.arc(e).base_weight;
                match profile {
                    Some(p) => Ok(base / p.speed_scale(e, t_now)?),
                    None => Ok(base),
                }
            }
            HandlingMethod::Decay => {
                if t_now < at {
                    return Err(Error::BeforeAnchor { t_now, anchor_time: at });
                }
                Ok(decayed(anchor, self.collective_mean, self.phi, t_now - at))
            }
        }
    }
}

/// `mean + (1 - phi)^elapsed * (anchor - mean)`; exact when `anchor == mean`.
#[inline]
pub fn decayed(anchor: f64, mean: f64, phi: f64, elapsed: f64) -> f64 {
    mean + (1.0 - phi).powf(elapsed) * (anchor - mean)
}
