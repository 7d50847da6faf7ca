//! Ground-truth traversability: per-edge time series of speed-scale factors.
//!
//! A profile holds a set of sample series and a map from [`EdgeId`] to series,
//! so both arcs of an undirected link can share one series. Lookups hold the
//! previous sample (piecewise constant). The effective traversal time of an
//! arc with base weight `w0` under constant scale `s` is `w0 / s`.

use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EdgeId, Link, PatrolGraph};
use crate::par;
use crate::seed::stream_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlockageParams {
    pub block_scale: f64,
    pub mean_block_duration: f64,
    pub mean_gap_duration: f64,
    pub sample_interval: f64,
}

impl Default for BlockageParams {
    fn default() -> Self {
        BlockageParams {
            block_scale: 0.1,
            mean_block_duration: 600.0,
            mean_gap_duration: 4000.0,
            sample_interval: 10.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FastWalkParams {
    pub step_sigma: f64,
    pub floor: f64,
    pub sample_interval: f64,
}

impl Default for FastWalkParams {
    fn default() -> Self {
        FastWalkParams { step_sigma: 0.15, floor: 0.05, sample_interval: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SmoothWalkParams {
    pub step_sigma: f64,
    pub momentum: f64,
    pub window: usize,
    pub floor: f64,
    pub sample_interval: f64,
}

impl Default for SmoothWalkParams {
    fn default() -> Self {
        SmoothWalkParams {
            step_sigma: 0.02,
            momentum: 0.9,
            window: 10,
            floor: 0.05,
            sample_interval: 10.0,
        }
    }
}

/// How a profile was produced, with the parameters needed to regenerate it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum ProfileKind {
    Blockages(BlockageParams),
    FastWalk(FastWalkParams),
    SmoothWalk(SmoothWalkParams),
    Ingested,
    Custom,
}

impl ProfileKind {
    pub fn name(&self) -> &'static str {
        match self {
            ProfileKind::Blockages(_) => "blockages",
            ProfileKind::FastWalk(_) => "fast_walk",
            ProfileKind::SmoothWalk(_) => "smooth_walk",
            ProfileKind::Ingested => "ingested",
            ProfileKind::Custom => "custom",
        }
    }

    fn bounded_by_one(&self) -> bool {
        matches!(self, ProfileKind::Blockages(_) | ProfileKind::FastWalk(_))
    }
}

/// Generator selection for the synthetic profiles.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "params", rename_all = "snake_case")]
pub enum GeneratorSpec {
    Blockages(#[serde(default)] BlockageParams),
    FastWalk(#[serde(default)] FastWalkParams),
    SmoothWalk(#[serde(default)] SmoothWalkParams),
}

impl GeneratorSpec {
    pub fn generate(&self, graph: &PatrolGraph, horizon: f64, seed: u64) -> Result<DynamicProfile> {
        match self {
            GeneratorSpec::Blockages(p) => generate_blockages(graph, horizon, seed, p),
            GeneratorSpec::FastWalk(p) => generate_fast_walk(graph, horizon, seed, p),
            GeneratorSpec::SmoothWalk(p) => generate_smooth_walk(graph, horizon, seed, p),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DynamicProfile {
    #[serde(flatten)]
    kind: ProfileKind,
    #[serde(default)]
    seed: Option<u64>,
    sample_interval: f64,
    horizon: f64,
    arc_series: Vec<usize>,
    series: Vec<Vec<f64>>,
}

impl DynamicProfile {
    /// Builds a profile from explicit series; `arc_series[e]` is the series
    /// used by arc `e`.
    pub fn from_series(
        kind: ProfileKind,
        seed: Option<u64>,
        sample_interval: f64,
        horizon: f64,
        arc_series: Vec<usize>,
        series: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let p = DynamicProfile { kind, seed, sample_interval, horizon, arc_series, series };
        p.validate()?;
        Ok(p)
    }

    /// One series per link of `graph`.
    pub fn from_link_series(
        graph: &PatrolGraph,
        kind: ProfileKind,
        seed: Option<u64>,
        sample_interval: f64,
        horizon: f64,
        series: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let arc_series = graph.arcs().iter().map(|a| a.link).collect();
        Self::from_series(kind, seed, sample_interval, horizon, arc_series, series)
    }

    fn required_samples(&self) -> usize {
        (self.horizon / self.sample_interval).floor() as usize + 1
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidProfile(m));
        if !(self.sample_interval.is_finite() && self.sample_interval > 0.0) {
            return bad(format!("sample_interval must be positive, got {}", self.sample_interval));
        }
        if !(self.horizon.is_finite() && self.horizon >= 0.0) {
            return bad(format!("horizon must be nonnegative, got {}", self.horizon));
        }
        if self.series.is_empty() {
            return bad("no series".into());
        }
        let need = self.required_samples();
        for (i, s) in self.series.iter().enumerate() {
            if s.len() < need {
                return bad(format!("series {i} has {} samples, horizon needs {need}", s.len()));
            }
            if let Some(x) = s.iter().find(|x| !(x.is_finite() && **x > 0.0)) {
                return bad(format!("series {i} has nonpositive sample {x}"));
            }
            if self.kind.bounded_by_one() && s.iter().any(|&x| x > 1.0) {
                return bad(format!("series {i} exceeds 1.0 for a {} profile", self.kind.name()));
            }
        }
        if let Some(&i) = self.arc_series.iter().find(|&&i| i >= self.series.len()) {
            return bad(format!("arc maps to missing series {i}"));
        }
        Ok(())
    }

    /// Checks that this profile covers every arc of `graph`.
    pub fn check_graph(&self, graph: &PatrolGraph) -> Result<()> {
        if self.arc_series.len() != graph.arc_count() {
            return Err(Error::InvalidProfile(format!(
                "profile covers {} arcs, graph has {}",
                self.arc_series.len(),
                graph.arc_count()
            )));
        }
        Ok(())
    }

    pub fn kind(&self) -> &ProfileKind {
        &self.kind
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn sample_interval(&self) -> f64 {
        self.sample_interval
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn arc_count(&self) -> usize {
        self.arc_series.len()
    }

    pub fn series(&self) -> &[Vec<f64>] {
        &self.series
    }

    pub fn series_for(&self, e: EdgeId) -> &[f64] {
        &self.series[self.arc_series[e.0]]
    }

    /// Speed-scale factor of arc `e` at time `t`, holding the previous sample.
    pub fn speed_scale(&self, e: EdgeId, t: f64) -> Result<f64> {
        if !(0.0..=self.horizon).contains(&t) {
            return Err(Error::OutOfHorizon { t, horizon: self.horizon });
        }
        Ok(self.scale_at(e, t))
    }

    /// Unchecked lookup; callers guarantee `0 <= t <= horizon`.
    #[inline]
    pub(crate) fn scale_at(&self, e: EdgeId, t: f64) -> f64 {
        let s = self.series_for(e);
        let k = (t / self.sample_interval).floor() as usize;
        s[k.min(s.len() - 1)]
    }

    /// Start and end of the hold segment containing `t`.
    pub(crate) fn segment_bounds(&self, t: f64) -> (f64, f64) {
        let k = (t / self.sample_interval).floor();
        (k * self.sample_interval, (k + 1.0) * self.sample_interval)
    }

    /// Mean pairwise Pearson correlation of the scale series over all
    /// unordered arc pairs. Constant series contribute `r = 0`.
    pub fn edge_correlation(&self) -> Result<f64> {
        let arcs = self.arc_series.len();
        let len = self.series.iter().map(Vec::len).min().unwrap_or(0);
        if arcs < 2 || len < 3 {
            return Err(Error::InsufficientData(format!(
                "edge correlation needs >= 2 edges and >= 3 samples (have {arcs}, {len})"
            )));
        }
        struct Centered {
            dev: Vec<f64>,
            sxx: f64,
            constant: bool,
        }
        let centered: Vec<Centered> = par::map_slice(&self.series, |s| {
            let s = &s[..len];
            let constant = s.iter().all(|&x| x == s[0]);
            let mean = s.iter().sum::<f64>() / len as f64;
            let dev: Vec<f64> = s.iter().map(|x| x - mean).collect();
            let sxx = dev.iter().map(|d| d * d).sum();
            Centered { dev, sxx, constant }
        });
        let pearson = |a: &Centered, b: &Centered| -> f64 {
            if a.constant || b.constant {
                return 0.0;
            }
            let sxy: f64 = a.dev.iter().zip(&b.dev).map(|(x, y)| x * y).sum();
            sxy / (a.sxx * b.sxx).sqrt()
        };

        let mut counts = vec![0usize; self.series.len()];
        for &s in &self.arc_series {
            counts[s] += 1;
        }
        let used: Vec<usize> = (0..counts.len()).filter(|&s| counts[s] > 0).collect();
        let row_sums = par::map_slice(&used, |&i| {
            let ci = counts[i] as f64;
            let own = if centered[i].constant { 0.0 } else { 1.0 };
            let mut acc = ci * (ci - 1.0) / 2.0 * own;
            for &j in used.iter().filter(|&&j| j > i) {
                acc += ci * counts[j] as f64 * pearson(&centered[i], &centered[j]);
            }
            acc
        });
        let pairs = arcs as f64 * (arcs as f64 - 1.0) / 2.0;
        Ok(row_sums.iter().sum::<f64>() / pairs)
    }

    pub fn to_json_string(&self) -> String {
        serde_json::to_string(self).expect("profile serialization cannot fail")
    }

    pub fn from_json_str(s: &str) -> Result<Self> {
        let p: DynamicProfile = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        p.validate()?;
        Ok(p)
    }
}

pub fn load_profile(path: impl AsRef<Path>) -> Result<DynamicProfile> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    DynamicProfile::from_json_str(&text)
}

pub fn save_profile(profile: &DynamicProfile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, profile.to_json_string()).map_err(|e| Error::io(path, e))
}

fn sample_count(horizon: f64, interval: f64) -> Result<usize> {
    if !(horizon.is_finite() && horizon > 0.0) {
        return Err(Error::Config(format!("horizon must be positive, got {horizon}")));
    }
    if !(interval.is_finite() && interval > 0.0) {
        return Err(Error::Config(format!("sample_interval must be positive, got {interval}")));
    }
    Ok((horizon / interval).ceil() as usize + 1)
}

/// Long outages: each link alternates between free gaps (scale 1.0) and
/// blocks (`block_scale`), with exponentially distributed durations drawn on
/// an independent stream per link. The initial phase is drawn from the
/// renewal process's stationary split.
pub fn generate_blockages(
    graph: &PatrolGraph,
    horizon: f64,
    seed: u64,
    params: &BlockageParams,
) -> Result<DynamicProfile> {
    let n = sample_count(horizon, params.sample_interval)?;
    let (mb, mg) = (params.mean_block_duration, params.mean_gap_duration);
    if !(mb > 0.0 && mg > 0.0) {
        return Err(Error::Config("block and gap durations must be positive".into()));
    }
    if !(params.block_scale > 0.0 && params.block_scale <= 1.0) {
        return Err(Error::Config(format!("block_scale must lie in (0, 1], got {}", params.block_scale)));
    }
    // An infinite mean duration means the phase never ends.
    let draw = |rng: &mut rand_chacha::ChaCha8Rng, mean: f64| -> f64 {
        if mean.is_infinite() {
            f64::INFINITY
        } else {
            Exp::new(1.0 / mean).expect("positive rate").sample(rng)
        }
    };
    let p_block = if mg.is_infinite() {
        0.0
    } else if mb.is_infinite() {
        1.0
    } else {
        mb / (mb + mg)
    };
    let series = par::map_indexed(graph.link_count(), |link| {
        let mut rng = stream_rng(seed, link as u64);
        let mut blocked = rng.random::<f64>() < p_block;
        let mut switch_at = draw(&mut rng, if blocked { mb } else { mg });
        (0..n)
            .map(|k| {
                let t = k as f64 * params.sample_interval;
                while t >= switch_at {
                    blocked = !blocked;
                    switch_at += draw(&mut rng, if blocked { mb } else { mg });
                }
                if blocked {
                    params.block_scale
                } else {
                    1.0
                }
            })
            .collect()
    });
    DynamicProfile::from_link_series(
        graph,
        ProfileKind::Blockages(params.clone()),
        Some(seed),
        params.sample_interval,
        horizon,
        series,
    )
}

/// Clamped Gaussian random walk in `[floor, 1]`, starting at 1.0.
pub fn generate_fast_walk(
    graph: &PatrolGraph,
    horizon: f64,
    seed: u64,
    params: &FastWalkParams,
) -> Result<DynamicProfile> {
    let n = sample_count(horizon, params.sample_interval)?;
    if !(params.floor > 0.0 && params.floor < 1.0) {
        return Err(Error::Config(format!("floor must lie in (0, 1), got {}", params.floor)));
    }
    let step = Normal::new(0.0, params.step_sigma)
        .map_err(|_| Error::Config(format!("invalid step_sigma {}", params.step_sigma)))?;
    let series = par::map_indexed(graph.link_count(), |link| {
        let mut rng = stream_rng(seed, link as u64);
        let mut x = 1.0f64;
        let mut out = Vec::with_capacity(n);
        out.push(x);
        for _ in 1..n {
            x = (x + step.sample(&mut rng)).clamp(params.floor, 1.0);
            out.push(x);
        }
        out
    });
    DynamicProfile::from_link_series(
        graph,
        ProfileKind::FastWalk(params.clone()),
        Some(seed),
        params.sample_interval,
        horizon,
        series,
    )
}

/// Random walk with momentum, smoothed by a centred rolling mean and clamped
/// below at `floor`. Unlike the other generators it can exceed 1.
///
/// Velocity is an exponential moving average of Gaussian steps,
/// `v <- m v + (1 - m) N(0, sigma)`, so momentum slows the walk rather than
/// amplifying it.
pub fn generate_smooth_walk(
    graph: &PatrolGraph,
    horizon: f64,
    seed: u64,
    params: &SmoothWalkParams,
) -> Result<DynamicProfile> {
    let n = sample_count(horizon, params.sample_interval)?;
    if !(0.0..1.0).contains(&params.momentum) {
        return Err(Error::Config(format!("momentum must lie in [0, 1), got {}", params.momentum)));
    }
    if params.window == 0 {
        return Err(Error::Config("window must be at least 1".into()));
    }
    if !(params.floor.is_finite() && params.floor > 0.0) {
        return Err(Error::Config(format!("floor must be positive, got {}", params.floor)));
    }
    let step = Normal::new(0.0, params.step_sigma)
        .map_err(|_| Error::Config(format!("invalid step_sigma {}", params.step_sigma)))?;
    let series = par::map_indexed(graph.link_count(), |link| {
        let mut rng = stream_rng(seed, link as u64);
        let (mut x, mut v) = (1.0f64, 0.0f64);
        let mut raw = Vec::with_capacity(n);
        raw.push(x);
        for _ in 1..n {
            v = params.momentum * v + (1.0 - params.momentum) * step.sample(&mut rng);
            x += v;
            raw.push(x);
        }
        centred_rolling_mean(&raw, params.window)
            .into_iter()
            .map(|m| m.max(params.floor))
            .collect()
    });
    DynamicProfile::from_link_series(
        graph,
        ProfileKind::SmoothWalk(params.clone()),
        Some(seed),
        params.sample_interval,
        horizon,
        series,
    )
}

/// Mean over `[k - (w-1)/2, k + w/2]`, truncated at the series ends.
fn centred_rolling_mean(xs: &[f64], window: usize) -> Vec<f64> {
    let back = (window - 1) / 2;
    let fwd = window / 2;
    let mut prefix = Vec::with_capacity(xs.len() + 1);
    prefix.push(0.0);
    for x in xs {
        prefix.push(prefix.last().unwrap() + x);
    }
    (0..xs.len())
        .map(|k| {
            let lo = k.saturating_sub(back);
            let hi = (k + fwd + 1).min(xs.len());
            (prefix[hi] - prefix[lo]) / (hi - lo) as f64
        })
        .collect()
}

/// One row of the traffic CSV: `t_seconds,from,to,travel_seconds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TravelTimeRow {
    pub t_seconds: f64,
    pub from: usize,
    pub to: usize,
    pub travel_seconds: f64,
}

pub fn read_travel_csv(path: impl AsRef<Path>) -> Result<Vec<TravelTimeRow>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::Reader::from_reader(file);
    rdr.deserialize()
        .map(|r| r.map_err(|e| Error::Parse(format!("{}: {e}", path.display()))))
        .collect()
}

pub fn write_travel_csv(path: impl AsRef<Path>, rows: &[TravelTimeRow]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Parse(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Parse(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Converts observed travel times into a directed graph and a profile.
///
/// Each arc's base weight becomes its smallest observed travel time and its
/// scale series is `base / travel`. Timestamps must form one uniform grid
/// shared by all arcs; the grid is shifted to start at 0. Undirected input
/// graphs are expanded so each direction gets its own weight and series.
pub fn ingest_travel_times(
    graph: &PatrolGraph,
    rows: &[TravelTimeRow],
) -> Result<(PatrolGraph, DynamicProfile)> {
    let graph = graph.to_directed();
    let mut times: Vec<f64> = rows.iter().map(|r| r.t_seconds).collect();
    if let Some(bad) = times.iter().find(|t| !t.is_finite()) {
        return Err(Error::Ingest(format!("non-finite timestamp {bad}")));
    }
    times.sort_by(f64::total_cmp);
    times.dedup();
    if times.len() < 2 {
        return Err(Error::Ingest("need at least two distinct timestamps".into()));
    }
    let t0 = times[0];
    let m = times.len();
    let interval = (times[m - 1] - t0) / (m - 1) as f64;
    let tol = 1e-6 * interval.max(1.0);
    for (i, t) in times.iter().enumerate() {
        if (t - (t0 + i as f64 * interval)).abs() > tol {
            return Err(Error::Ingest(format!(
                "irregular timestamps: {t} is off the uniform {interval}s grid"
            )));
        }
    }

    let mut grid: Vec<Vec<Option<f64>>> = vec![vec![None; m]; graph.arc_count()];
    for r in rows {
        let Some(e) = graph.find_arc(r.from, r.to) else {
            return Err(Error::Ingest(format!("row references unknown arc {}->{}", r.from, r.to)));
        };
        if !(r.travel_seconds.is_finite() && r.travel_seconds > 0.0) {
            return Err(Error::Ingest(format!(
                "nonpositive travel time {} on {}->{} at t={}",
                r.travel_seconds, r.from, r.to, r.t_seconds
            )));
        }
        let k = ((r.t_seconds - t0) / interval).round() as usize;
        if grid[e.0][k].replace(r.travel_seconds).is_some() {
            return Err(Error::Ingest(format!(
                "duplicate row for {}->{} at t={}",
                r.from, r.to, r.t_seconds
            )));
        }
    }

    let mut bases = Vec::with_capacity(graph.arc_count());
    let mut series = Vec::with_capacity(graph.arc_count());
    for (i, arc) in graph.arcs().iter().enumerate() {
        let slots = &grid[i];
        let mut travel = Vec::with_capacity(m);
        for (k, s) in slots.iter().enumerate() {
            match s {
                Some(x) => travel.push(*x),
                None => {
                    return Err(Error::Ingest(format!(
                        "missing arc coverage: {}->{} has no row at t={}",
                        arc.from,
                        arc.to,
                        t0 + k as f64 * interval
                    )))
                }
            }
        }
        let base = travel.iter().copied().fold(f64::INFINITY, f64::min);
        series.push(travel.iter().map(|tt| base / tt).collect());
        bases.push(base);
    }
    let links: Vec<Link> = graph
        .arcs()
        .iter()
        .zip(&bases)
        .map(|(a, &w)| Link { from: a.from, to: a.to, base_weight: w })
        .collect();
    let coords = (0..graph.vertex_count()).map(|v| graph.coords(v)).collect();
    let graph = PatrolGraph::with_coords(true, coords, links)?;
    let horizon = (m - 1) as f64 * interval;
    let profile =
        DynamicProfile::from_link_series(&graph, ProfileKind::Ingested, None, interval, horizon, series)?;
    Ok((graph, profile))
}

/// Travel times implied by a profile: `base_weight / scale` for every arc at
/// every sample time.
pub fn export_travel_times(graph: &PatrolGraph, profile: &DynamicProfile) -> Result<Vec<TravelTimeRow>> {
    profile.check_graph(graph)?;
    let samples = profile.series.iter().map(Vec::len).min().unwrap_or(0);
    let mut rows = Vec::with_capacity(samples * graph.arc_count());
    for k in 0..samples {
        let t = k as f64 * profile.sample_interval;
        for (i, arc) in graph.arcs().iter().enumerate() {
            let s = profile.series_for(EdgeId(i))[k];
            rows.push(TravelTimeRow {
                t_seconds: t,
                from: arc.from,
                to: arc.to,
                travel_seconds: arc.base_weight / s,
            });
        }
    }
    Ok(rows)
}
