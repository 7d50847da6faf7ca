use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use patrol_core::analysis::{analyze, write_report};
use patrol_core::dynamics::{
    ingest_travel_times, load_profile, read_travel_csv, save_profile, BlockageParams, FastWalkParams,
    GeneratorSpec, SmoothWalkParams,
};
use patrol_core::experiment::{run_experiment, ExperimentPlan, Manifest};
use patrol_core::{
    generate_grid_graph, load_graph, run_simulation, save_graph, HandlingMethod, SimConfig, StrategyKind,
    DEFAULT_PHI,
};

/// Relative output paths are resolved against this directory when set.
const OUTPUT_ROOT_ENV: &str = "PATROL_OUTPUT_ROOT";

#[derive(Parser)]
#[command(name = "patrol", version, about = "Multi-robot patrol simulation on dynamic graphs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a rows x cols grid graph.
    GenerateGrid(GridArgs),
    /// Generate a synthetic dynamic profile for a graph.
    GenerateProfile(ProfileArgs),
    /// Turn a travel-time CSV into a directed graph and an ingested profile.
    IngestTraffic(IngestArgs),
    /// Run one simulation.
    Simulate(SimulateArgs),
    /// Run every combination of an experiment plan.
    Experiment(ExperimentArgs),
    /// Build relative-idleness tables and significance tests from a manifest.
    Analyze(AnalyzeArgs),
}

#[derive(Args)]
struct GridArgs {
    #[arg(long)]
    rows: usize,
    #[arg(long)]
    cols: usize,
    #[arg(long, default_value_t = 30.0)]
    edge_weight: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Blockages,
    FastWalk,
    SmoothWalk,
}

#[derive(Args)]
struct ProfileArgs {
    #[arg(long, value_enum)]
    kind: Kind,
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    horizon: f64,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    sample_interval: Option<f64>,
    /// Blockages: speed scale while blocked.
    #[arg(long)]
    block_scale: Option<f64>,
    #[arg(long)]
    mean_block_duration: Option<f64>,
    #[arg(long)]
    mean_gap_duration: Option<f64>,
    /// Walks: standard deviation of each step.
    #[arg(long)]
    step_sigma: Option<f64>,
    #[arg(long)]
    floor: Option<f64>,
    #[arg(long)]
    momentum: Option<f64>,
    #[arg(long)]
    window: Option<usize>,
}

#[derive(Args)]
struct IngestArgs {
    #[arg(long)]
    graph: PathBuf,
    #[arg(long)]
    csv: PathBuf,
    #[arg(long)]
    out_graph: PathBuf,
    #[arg(long)]
    out_profile: PathBuf,
}

#[derive(Args)]
struct SimulateArgs {
    /// JSON file with any of the flag fields below; flags take precedence.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    graph: Option<PathBuf>,
    #[arg(long, conflicts_with = "dynamics")]
    profile: Option<PathBuf>,
    /// `none` runs without dynamics even if the config names a profile.
    #[arg(long, value_parser = ["none"])]
    dynamics: Option<String>,
    #[arg(long)]
    strategy: Option<StrategyKind>,
    #[arg(long)]
    method: Option<HandlingMethod>,
    #[arg(long)]
    team_size: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    duration: Option<f64>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long)]
    phi: Option<f64>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    /// Summary JSON destination.
    #[arg(long)]
    out: PathBuf,
    /// Per-tick idleness CSV destination.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    plan: PathBuf,
    /// Output directory; defaults to the plan's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; defaults to the number of cores.
    #[arg(long)]
    jobs: Option<usize>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "lazy")]
    reference: HandlingMethod,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateFile {
    graph: Option<PathBuf>,
    profile: Option<PathBuf>,
    strategy: Option<StrategyKind>,
    method: Option<HandlingMethod>,
    team_size: Option<usize>,
    seed: Option<u64>,
    duration: Option<f64>,
    dt: Option<f64>,
    phi: Option<f64>,
    noise_sigma: Option<f64>,
}

#[derive(Serialize)]
struct SimulateSummary {
    graph: PathBuf,
    profile: Option<PathBuf>,
    #[serde(flatten)]
    config: SimConfig,
    mean_idleness: f64,
    max_idleness: f64,
    visits: usize,
    observations: usize,
    initial_positions: Vec<usize>,
}

fn output_path(p: &Path) -> PathBuf {
    match std::env::var_os(OUTPUT_ROOT_ENV) {
        Some(root) if p.is_relative() => PathBuf::from(root).join(p),
        _ => p.to_path_buf(),
    }
}

fn ensure_parent(p: &Path) -> Result<()> {
    if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn generate_grid(a: GridArgs) -> Result<()> {
    let g = generate_grid_graph(a.rows, a.cols, a.edge_weight)?;
    let out = output_path(&a.out);
    ensure_parent(&out)?;
    save_graph(&g, &out)?;
    println!("wrote {} ({} vertices, {} edges)", out.display(), g.vertex_count(), g.link_count());
    Ok(())
}

fn generate_profile(a: ProfileArgs) -> Result<()> {
    let graph = load_graph(&a.graph)?;
    let spec = match a.kind {
        Kind::Blockages => {
            let mut p = BlockageParams::default();
            p.block_scale = a.block_scale.unwrap_or(p.block_scale);
            p.mean_block_duration = a.mean_block_duration.unwrap_or(p.mean_block_duration);
            p.mean_gap_duration = a.mean_gap_duration.unwrap_or(p.mean_gap_duration);
            p.sample_interval = a.sample_interval.unwrap_or(p.sample_interval);
            GeneratorSpec::Blockages(p)
        }
        Kind::FastWalk => {
            let mut p = FastWalkParams::default();
            p.step_sigma = a.step_sigma.unwrap_or(p.step_sigma);
            p.floor = a.floor.unwrap_or(p.floor);
            p.sample_interval = a.sample_interval.unwrap_or(p.sample_interval);
            GeneratorSpec::FastWalk(p)
        }
        Kind::SmoothWalk => {
            let mut p = SmoothWalkParams::default();
            p.step_sigma = a.step_sigma.unwrap_or(p.step_sigma);
            p.floor = a.floor.unwrap_or(p.floor);
            p.momentum = a.momentum.unwrap_or(p.momentum);
            p.window = a.window.unwrap_or(p.window);
            p.sample_interval = a.sample_interval.unwrap_or(p.sample_interval);
            GeneratorSpec::SmoothWalk(p)
        }
    };
    let profile = spec.generate(&graph, a.horizon, a.seed)?;
    let out = output_path(&a.out);
    ensure_parent(&out)?;
    save_profile(&profile, &out)?;
    println!("{}", serde_json::to_string(&spec)?);
    println!("seed {} horizon {} -> {}", a.seed, a.horizon, out.display());
    Ok(())
}

fn ingest_traffic(a: IngestArgs) -> Result<()> {
    let graph = load_graph(&a.graph)?;
    let rows = read_travel_csv(&a.csv)?;
    let (directed, profile) = ingest_travel_times(&graph, &rows)?;
    let (out_graph, out_profile) = (output_path(&a.out_graph), output_path(&a.out_profile));
    ensure_parent(&out_graph)?;
    ensure_parent(&out_profile)?;
    save_graph(&directed, &out_graph)?;
    save_profile(&profile, &out_profile)?;
    println!(
        "ingested {} rows: {} arcs, interval {} s, horizon {} s",
        rows.len(),
        directed.arc_count(),
        profile.sample_interval(),
        profile.horizon()
    );
    Ok(())
}

fn simulate(a: SimulateArgs) -> Result<()> {
    let file: SimulateFile = match &a.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SimulateFile::default(),
    };
    let graph_path = a.graph.or(file.graph).context("no graph given (--graph or config)")?;
    let profile_path = if a.dynamics.is_some() { None } else { a.profile.or(file.profile) };
    let mut cfg = SimConfig::new(
        a.team_size.or(file.team_size).context("no team size given")?,
        a.strategy.or(file.strategy).context("no strategy given")?,
        a.method.or(file.method).context("no handling method given")?,
        a.duration.or(file.duration).context("no duration given")?,
        a.seed.or(file.seed).unwrap_or(0),
    );
    cfg.dt = a.dt.or(file.dt).unwrap_or(1.0);
    cfg.phi = a.phi.or(file.phi).unwrap_or(DEFAULT_PHI);
    cfg.noise_sigma = a.noise_sigma.or(file.noise_sigma);
    cfg.record_trace = a.trace.is_some();

    let graph = load_graph(&graph_path)?;
    let profile = profile_path.as_ref().map(load_profile).transpose()?;
    cfg.validate(&graph, profile.as_ref())?;
    let rec = run_simulation(&graph, profile.as_ref(), &cfg)?;

    let summary = SimulateSummary {
        graph: graph_path,
        profile: profile_path,
        mean_idleness: rec.mean_idleness()?,
        max_idleness: rec.max_idleness,
        visits: rec.visits,
        observations: rec.observations.len(),
        initial_positions: rec.initial_positions.clone(),
        config: cfg,
    };
    let out = output_path(&a.out);
    ensure_parent(&out)?;
    std::fs::write(&out, serde_json::to_string_pretty(&summary)?)
        .with_context(|| format!("writing {}", out.display()))?;
    if let Some(t) = &a.trace {
        let t = output_path(t);
        ensure_parent(&t)?;
        rec.write_trace_csv(&t)?;
    }
    println!("mean idleness {:.4} max {:.4} -> {}", summary.mean_idleness, summary.max_idleness, out.display());
    Ok(())
}

fn experiment(a: ExperimentArgs) -> Result<()> {
    let plan = ExperimentPlan::load(&a.plan)?;
    let base = a.plan.parent().unwrap_or(Path::new("."));
    let out = match a.out.or_else(|| plan.output_dir.clone()) {
        Some(o) => output_path(&o),
        None => bail!("no output directory (--out or plan output_dir)"),
    };
    if a.jobs == Some(0) {
        bail!("--jobs must be at least 1");
    }
    let outcome = run_experiment(&plan, base, &out, a.jobs)?;
    println!(
        "{} runs ({} executed, {} reused) -> {}",
        outcome.manifest.entries.len(),
        outcome.executed,
        outcome.reused,
        outcome.manifest_path.display()
    );
    Ok(())
}

fn analyze_cmd(a: AnalyzeArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let dir = a.manifest.parent().unwrap_or(Path::new("."));
    let summaries = manifest.load_summaries(dir)?;
    let report = analyze(&summaries, a.reference)?;
    let out = output_path(&a.out);
    for name in write_report(&report, &out)? {
        println!("{}", out.join(name).display());
    }
    for c in &report.stats.comparisons {
        match (c.statistic, c.p_value) {
            (Some(w), Some(p)) => println!("{} vs {}: W={w} p={p:.4} ({} pairs)", c.method_a, c.method_b, c.pairs),
            _ => println!("{} vs {}: {}", c.method_a, c.method_b, c.error.as_deref().unwrap_or("no test")),
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenerateGrid(a) => generate_grid(a),
        Command::GenerateProfile(a) => generate_profile(a),
        Command::IngestTraffic(a) => ingest_traffic(a),
        Command::Simulate(a) => simulate(a),
        Command::Experiment(a) => experiment(a),
        Command::Analyze(a) => analyze_cmd(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
