//! Factorial experiment plans, batch execution and run manifests.
//!
//! A plan expands to one run per (graph, profile, strategy, team size, noise
//! level, repeat, method). Runs that differ only in their handling method
//! share a seed, and therefore initial positions, belief noise and the
//! dynamic profile realisation, so they can be compared pairwise. Runs that
//! differ only in profile share initial positions too.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::belief::{HandlingMethod, DEFAULT_PHI};
use crate::dynamics::{load_profile, DynamicProfile, GeneratorSpec};
use crate::error::{Error, Result};
use crate::graph::{generate_grid_graph, load_graph, PatrolGraph};
use crate::metrics::MetricsEntry;
use crate::par;
use crate::seed::derive_seed;
use crate::sim::{run_simulation, SimConfig};
use crate::strategy::StrategyKind;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const RUNS_DIR: &str = "runs";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub rows: usize,
    pub cols: usize,
    pub edge_weight: f64,
}

/// A named graph, either generated or loaded from a graph file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

/// A named dynamics condition. With neither `generator` nor `path` the
/// environment is static.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileSpec {
    pub name: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub generator: Option<GeneratorSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

impl ProfileSpec {
    pub fn is_static(&self) -> bool {
        self.generator.is_none() && self.path.is_none()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentPlan {
    pub seed: u64,
    pub duration: f64,
    #[serde(default = "one")]
    pub dt: f64,
    #[serde(default = "default_phi")]
    pub phi: f64,
    pub graphs: Vec<GraphSpec>,
    pub profiles: Vec<ProfileSpec>,
    pub strategies: Vec<StrategyKind>,
    pub methods: Vec<HandlingMethod>,
    pub team_sizes: Vec<usize>,
    pub repeats: usize,
    /// Belief-noise levels; empty means noise-free only.
    #[serde(default)]
    pub noise_sigmas: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
}

fn one() -> f64 {
    1.0
}

fn default_phi() -> f64 {
    DEFAULT_PHI
}

impl ExperimentPlan {
    pub fn from_json_str(s: &str) -> Result<Self> {
        let plan: ExperimentPlan = serde_json::from_str(s).map_err(|e| Error::Parse(e.to_string()))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("experiment plan: {m}")));
        if self.graphs.is_empty()
            || self.profiles.is_empty()
            || self.strategies.is_empty()
            || self.methods.is_empty()
            || self.team_sizes.is_empty()
        {
            return fail("graphs, profiles, strategies, methods and team_sizes must be non-empty");
        }
        if self.repeats == 0 {
            return fail("repeats must be at least 1");
        }
        for g in &self.graphs {
            if g.grid.is_some() == g.path.is_some() {
                return fail(&format!("graph '{}' needs exactly one of grid or path", g.name));
            }
        }
        for p in &self.profiles {
            if p.generator.is_some() && p.path.is_some() {
                return fail(&format!("profile '{}' sets both generator and path", p.name));
            }
        }
        let unique = |names: Vec<&str>| {
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            sorted.len() == names.len()
        };
        if !unique(self.graphs.iter().map(|g| g.name.as_str()).collect())
            || !unique(self.profiles.iter().map(|p| p.name.as_str()).collect())
        {
            return fail("graph and profile names must be unique");
        }
        if self.noise_sigmas.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return fail("noise sigmas must be finite and >= 0");
        }
        // Surfaces dt/duration problems before any work.
        SimConfig::new(1, self.strategies[0], self.methods[0], self.duration, 0)
            .with_dt(self.dt)
            .ticks()?;
        Ok(())
    }

    pub fn noise_levels(&self) -> Vec<f64> {
        if self.noise_sigmas.is_empty() {
            vec![0.0]
        } else {
            self.noise_sigmas.clone()
        }
    }

    /// Total number of runs in the full factorial expansion.
    pub fn run_count(&self) -> usize {
        self.graphs.len()
            * self.profiles.len()
            * self.strategies.len()
            * self.team_sizes.len()
            * self.noise_levels().len()
            * self.repeats
            * self.methods.len()
    }
}

impl SimConfig {
    fn with_dt(mut self, dt: f64) -> Self {
        self.dt = dt;
        self
    }
}

/// Identifies one run within a plan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunLabel {
    pub graph: String,
    pub profile: String,
    pub strategy: StrategyKind,
    pub method: HandlingMethod,
    pub team_size: usize,
    pub noise_sigma: f64,
    pub repeat: usize,
}

impl RunLabel {
    /// File stem for this run's summary.
    pub fn file_stem(&self) -> String {
        let clean = |s: &str| -> String {
            s.chars().map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' }).collect()
        };
        format!(
            "{}__{}__{}__{}__n{}__noise{}__r{}",
            clean(&self.graph),
            clean(&self.profile),
            self.strategy,
            self.method,
            self.team_size,
            clean(&self.noise_sigma.to_string()),
            self.repeat
        )
    }
}

/// Result of one run as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(flatten)]
    pub label: RunLabel,
    pub seed: u64,
    pub dynamic: bool,
    pub dt: f64,
    pub duration: f64,
    pub phi: f64,
    pub mean_idleness: f64,
    pub max_idleness: f64,
    pub visits: usize,
    pub initial_positions: Vec<usize>,
}

impl RunSummary {
    pub fn metrics_entry(&self) -> MetricsEntry {
        MetricsEntry {
            graph: self.label.graph.clone(),
            profile: self.label.profile.clone(),
            strategy: self.label.strategy.to_string(),
            method: self.label.method.to_string(),
            team_size: self.label.team_size,
            noise_sigma: self.label.noise_sigma,
            repeat: self.label.repeat,
            seed: self.seed,
            mean_idleness: self.mean_idleness,
            max_idleness: self.max_idleness,
        }
    }
}

/// A fully resolved run: shared immutable graph/profile plus its config.
#[derive(Clone, Debug)]
pub struct RunJob {
    pub label: RunLabel,
    pub graph: Arc<PatrolGraph>,
    pub profile: Option<Arc<DynamicProfile>>,
    pub config: SimConfig,
}

impl RunJob {
    pub fn execute(&self) -> Result<RunSummary> {
        let rec = run_simulation(&self.graph, self.profile.as_deref(), &self.config)?;
        Ok(RunSummary {
            label: self.label.clone(),
            seed: self.config.seed,
            dynamic: self.profile.is_some(),
            dt: self.config.dt,
            duration: self.config.duration,
            phi: self.config.phi,
            mean_idleness: rec.mean_idleness()?,
            max_idleness: rec.max_idleness,
            visits: rec.visits,
            initial_positions: rec.initial_positions,
        })
    }
}

/// Per-run seed, shared by all methods and profiles of one scenario repeat.
pub fn run_seed(plan_seed: u64, graph: &str, strategy: StrategyKind, team_size: usize, noise: f64, repeat: usize) -> u64 {
    derive_seed(
        plan_seed,
        &["run", graph, strategy.as_str(), &team_size.to_string(), &noise.to_string(), &repeat.to_string()],
    )
}

/// Seed of the profile realisation used by one graph, profile and repeat.
pub fn profile_seed(plan_seed: u64, graph: &str, profile: &str, repeat: usize) -> u64 {
    derive_seed(plan_seed, &["profile", graph, profile, &repeat.to_string()])
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

/// Expands a plan into jobs in a fixed order. Relative paths in the plan are
/// resolved against `base_dir`.
pub fn expand_plan(plan: &ExperimentPlan, base_dir: &Path) -> Result<Vec<RunJob>> {
    plan.validate()?;
    let graphs: Vec<Arc<PatrolGraph>> = plan
        .graphs
        .iter()
        .map(|g| match (&g.grid, &g.path) {
            (Some(grid), _) => generate_grid_graph(grid.rows, grid.cols, grid.edge_weight).map(Arc::new),
            (None, Some(p)) => load_graph(resolve(base_dir, p)).map(Arc::new),
            (None, None) => unreachable!("validated"),
        })
        .collect::<Result<_>>()?;
    for (spec, g) in plan.graphs.iter().zip(&graphs) {
        if let Some(&n) = plan.team_sizes.iter().find(|&&n| n == 0 || n > g.vertex_count()) {
            return Err(Error::Config(format!(
                "team size {n} is invalid for graph '{}' with {} vertices",
                spec.name,
                g.vertex_count()
            )));
        }
    }

    // Profile realisations per (graph, profile, repeat), generated in parallel.
    let mut slots = Vec::new();
    for gi in 0..graphs.len() {
        for pi in 0..plan.profiles.len() {
            for r in 0..plan.repeats {
                slots.push((gi, pi, r));
            }
        }
    }
    let loaded: HashMap<usize, Arc<DynamicProfile>> = plan
        .profiles
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.path.as_ref().map(|path| (i, path)))
        .map(|(i, path)| load_profile(resolve(base_dir, path)).map(|p| (i, Arc::new(p))))
        .collect::<Result<_>>()?;
    let realised: Vec<Result<Option<Arc<DynamicProfile>>>> = par::map_slice(&slots, |&(gi, pi, r)| {
        let spec = &plan.profiles[pi];
        let graph = &graphs[gi];
        let profile = if let Some(gen) = &spec.generator {
            let seed = profile_seed(plan.seed, &plan.graphs[gi].name, &spec.name, r);
            Some(Arc::new(gen.generate(graph, plan.duration, seed)?))
        } else {
            loaded.get(&pi).cloned()
        };
        if let Some(p) = &profile {
            p.check_graph(graph)?;
        }
        Ok(profile)
    });
    let mut profiles = HashMap::with_capacity(slots.len());
    for (slot, p) in slots.into_iter().zip(realised) {
        profiles.insert(slot, p?);
    }

    let mut jobs = Vec::with_capacity(plan.run_count());
    for (gi, gspec) in plan.graphs.iter().enumerate() {
        for (pi, pspec) in plan.profiles.iter().enumerate() {
            for &strategy in &plan.strategies {
                for &team_size in &plan.team_sizes {
                    for noise in plan.noise_levels() {
                        for repeat in 0..plan.repeats {
                            let seed = run_seed(plan.seed, &gspec.name, strategy, team_size, noise, repeat);
                            for &method in &plan.methods {
                                let mut config = SimConfig::new(team_size, strategy, method, plan.duration, seed);
                                config.dt = plan.dt;
                                config.phi = plan.phi;
                                config.noise_sigma = (noise > 0.0).then_some(noise);
                                jobs.push(RunJob {
                                    label: RunLabel {
                                        graph: gspec.name.clone(),
                                        profile: pspec.name.clone(),
                                        strategy,
                                        method,
                                        team_size,
                                        noise_sigma: noise,
                                        repeat,
                                    },
                                    graph: graphs[gi].clone(),
                                    profile: profiles[&(gi, pi, repeat)].clone(),
                                    config,
                                });
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(jobs)
}

/// Executes jobs concurrently when the `parallel` feature is on.
pub fn run_batch(jobs: &[RunJob]) -> Vec<Result<RunSummary>> {
    par::map_slice(jobs, RunJob::execute)
}

/// Executes jobs one after another on the calling thread.
pub fn run_batch_sequential(jobs: &[RunJob]) -> Vec<Result<RunSummary>> {
    jobs.iter().map(RunJob::execute).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    #[serde(flatten)]
    pub label: RunLabel,
    pub seed: u64,
    /// Summary path relative to the manifest's directory.
    pub summary: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub plan_seed: u64,
    pub duration: f64,
    pub dt: f64,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
    }

    /// Loads every summary the manifest references; a missing or mismatched
    /// summary is an error.
    pub fn load_summaries(&self, manifest_dir: &Path) -> Result<Vec<RunSummary>> {
        self.entries
            .iter()
            .map(|e| {
                let path = manifest_dir.join(&e.summary);
                let s = read_summary(&path)?;
                if s.label != e.label || s.seed != e.seed {
                    return Err(Error::Config(format!("summary {} does not match its manifest entry", path.display())));
                }
                Ok(s)
            })
            .collect()
    }
}

fn read_summary(path: &Path) -> Result<RunSummary> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("serializable");
    // Write-then-rename so an interrupted batch never leaves a truncated summary.
    let tmp = path.with_extension("json.tmp");
    std::fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentOutcome {
    pub manifest: Manifest,
    pub manifest_path: PathBuf,
    pub executed: usize,
    pub reused: usize,
}

/// Runs a plan into `out_dir`, skipping runs whose summary already exists
/// and matches, then writes the manifest.
pub fn run_experiment(
    plan: &ExperimentPlan,
    base_dir: &Path,
    out_dir: &Path,
    threads: Option<usize>,
) -> Result<ExperimentOutcome> {
    let jobs = expand_plan(plan, base_dir)?;
    let runs_dir = out_dir.join(RUNS_DIR);
    std::fs::create_dir_all(&runs_dir).map_err(|e| Error::io(&runs_dir, e))?;

    let rel_path = |job: &RunJob| PathBuf::from(RUNS_DIR).join(format!("{}.json", job.label.file_stem()));
    let is_done = |job: &RunJob| -> bool {
        read_summary(&out_dir.join(rel_path(job))).is_ok_and(|s| {
            s.label == job.label
                && s.seed == job.config.seed
                && s.duration == job.config.duration
                && s.dt == job.config.dt
                && s.phi == job.config.phi
        })
    };
    let pending: Vec<&RunJob> = jobs.iter().filter(|j| !is_done(j)).collect();
    let executed = pending.len();

    let results = par::with_threads(threads, || {
        par::map_slice(&pending, |job| -> Result<()> {
            let summary = job.execute()?;
            write_json(&out_dir.join(rel_path(job)), &summary)
        })
    });
    results.into_iter().collect::<Result<Vec<()>>>()?;

    let manifest = Manifest {
        plan_seed: plan.seed,
        duration: plan.duration,
        dt: plan.dt,
        entries: jobs
            .iter()
            .map(|j| ManifestEntry { label: j.label.clone(), seed: j.config.seed, summary: rel_path(j) })
            .collect(),
    };
    let manifest_path = out_dir.join(MANIFEST_FILE);
    write_json(&manifest_path, &manifest)?;
    Ok(ExperimentOutcome { manifest, manifest_path, executed, reused: jobs.len() - executed })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plan(methods: &[HandlingMethod], repeats: usize) -> ExperimentPlan {
        ExperimentPlan {
            seed: 9,
            duration: 200.0,
            dt: 1.0,
            phi: DEFAULT_PHI,
            graphs: vec![GraphSpec {
                name: "grid".into(),
                grid: Some(GridSpec { rows: 3, cols: 3, edge_weight: 10.0 }),
                path: None,
            }],
            profiles: vec![ProfileSpec {
                name: "blockages".into(),
                generator: Some(GeneratorSpec::Blockages(Default::default())),
                path: None,
            }],
            strategies: vec![StrategyKind::StateExchange],
            methods: methods.to_vec(),
            team_sizes: vec![2],
            repeats,
            noise_sigmas: vec![],
            output_dir: None,
        }
    }

    #[test]
    fn factorial_count_and_shared_seeds() {
        let p = plan(&[HandlingMethod::Lazy, HandlingMethod::Decay], 2);
        let jobs = expand_plan(&p, Path::new(".")).unwrap();
        assert_eq!(jobs.len(), 4);
        assert_eq!(p.run_count(), 4);
        assert_eq!(jobs[0].config.seed, jobs[1].config.seed);
        assert_ne!(jobs[0].config.seed, jobs[2].config.seed);
        assert!(Arc::ptr_eq(jobs[0].profile.as_ref().unwrap(), jobs[1].profile.as_ref().unwrap()));
    }

    #[test]
    fn batch_paths_agree() {
        let p = plan(&HandlingMethod::ALL, 2);
        let jobs = expand_plan(&p, Path::new(".")).unwrap();
        let a: Vec<_> = run_batch(&jobs).into_iter().map(Result::unwrap).collect();
        let b: Vec<_> = run_batch_sequential(&jobs).into_iter().map(Result::unwrap).collect();
        assert_eq!(a, b);
    }

    #[test]
    fn plan_validation() {
        let mut p = plan(&[HandlingMethod::Lazy], 1);
        p.repeats = 0;
        assert!(p.validate().is_err());
        let mut p = plan(&[HandlingMethod::Lazy], 1);
        p.graphs[0].path = Some("x.json".into());
        assert!(p.validate().is_err());
        let mut p = plan(&[HandlingMethod::Lazy], 1);
        p.duration = 10.5;
        assert!(p.validate().is_err());
        let mut p = plan(&[HandlingMethod::Lazy], 1);
        p.team_sizes = vec![10];
        assert!(expand_plan(&p, Path::new(".")).is_err());
    }

    #[test]
    fn plan_json_shape() {
        let text = r#"{
            "seed": 1, "duration": 100,
            "graphs": [{"name": "g", "grid": {"rows": 2, "cols": 3, "edge_weight": 5}}],
            "profiles": [{"name": "none"},
                         {"name": "fw", "generator": {"kind": "fast_walk", "params": {"step_sigma": 0.1}}},
                         {"name": "bl", "generator": {"kind": "blockages", "params": {}}}],
            "strategies": ["greedy_reactive"], "methods": ["lazy", "decay"],
            "team_sizes": [1, 2], "repeats": 1
        }"#;
        let p = ExperimentPlan::from_json_str(text).unwrap();
        assert!(p.profiles[0].is_static());
        assert_eq!(p.dt, 1.0);
        match &p.profiles[1].generator {
            Some(GeneratorSpec::FastWalk(fw)) => {
                assert_eq!(fw.step_sigma, 0.1);
                assert_eq!(fw.floor, 0.05);
            }
            other => panic!("unexpected {other:?}"),
        }
        assert_eq!(p.run_count(), 12);
        assert_eq!(expand_plan(&p, Path::new(".")).unwrap().len(), 12);
    }
}
