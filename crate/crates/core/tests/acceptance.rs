//! End-to-end acceptance checks. Runs as a plain binary so every criterion
//! prints its verdict; exits non-zero if any fails.

use std::cell::OnceCell;
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use patrol_core::belief::BeliefState;
use patrol_core::dynamics::{
    export_travel_times, generate_smooth_walk, ingest_travel_times, read_travel_csv, write_travel_csv,
    ProfileKind, SmoothWalkParams, TravelTimeRow,
};
use patrol_core::experiment::{expand_plan, run_batch, ExperimentPlan, RunSummary};
use patrol_core::metrics::{average_ranks, exact_p_value, mean, wilcoxon_signed_rank};
use patrol_core::{
    generate_grid_graph, observed_weight_integral_check, run_simulation, DynamicProfile, EdgeId, HandlingMethod,
    SimConfig, StrategyKind, DEFAULT_PHI,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check<'a> = Box<dyn FnOnce() -> Verdict + 'a>;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: impl Into<String>) -> Verdict {
    Verdict { pass, detail: detail.into() }
}

fn run_plan(json: &str) -> Vec<RunSummary> {
    let plan = ExperimentPlan::from_json_str(json).expect("valid plan");
    let jobs = expand_plan(&plan, Path::new(".")).expect("plan expands");
    run_batch(&jobs).into_iter().map(|r| r.expect("run succeeds")).collect()
}

fn select<'a>(runs: &'a [RunSummary], profile: &str, method: HandlingMethod) -> Vec<&'a RunSummary> {
    let mut v: Vec<_> = runs.iter().filter(|r| r.label.profile == profile && r.label.method == method).collect();
    v.sort_by_key(|r| (r.label.strategy, r.label.team_size, r.label.repeat));
    v
}

/// Mean over matched runs of a/b.
fn mean_ratio(a: &[&RunSummary], b: &[&RunSummary]) -> f64 {
    assert_eq!(a.len(), b.len());
    mean(&a.iter().zip(b).map(|(x, y)| {
        assert_eq!(x.seed, y.seed);
        x.mean_idleness / y.mean_idleness
    }).collect::<Vec<_>>())
}

fn mean_idle(runs: &[&RunSummary]) -> f64 {
    mean(&runs.iter().map(|r| r.mean_idleness).collect::<Vec<_>>())
}

fn decay_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let g = generate_grid_graph(3, 4, 10.0).unwrap();
    let mut worst = 0.0f64;
    for trial in 0..20 {
        let phi = if trial == 0 { DEFAULT_PHI } else { rng.random_range(1e-4..0.05) };
        let mut b = BeliefState::new(&g, HandlingMethod::Decay, phi, None).unwrap();
        let t0: f64 = rng.random_range(0.0..1000.0);
        let anchors: Vec<f64> = (0..g.link_count()).map(|_| rng.random_range(1.0..500.0)).collect();
        for (l, &a) in anchors.iter().enumerate() {
            b.record_observation(EdgeId(2 * l), a, t0).unwrap();
        }
        let w_bar = anchors.iter().sum::<f64>() / anchors.len() as f64;
        let e = EdgeId(rng.random_range(0..g.arc_count()));
        let mut belief = anchors[g.arc(e).link];
        for delta in 1..=5000 {
            belief += phi * (w_bar - belief);
            let got = b.believed_weight(e, t0 + delta as f64, None).unwrap();
            worst = worst.max((got - belief).abs() / belief.abs());
        }
    }
    verdict(worst <= 1e-9, format!("max relative error {worst:.3e} over 20 x 5000 steps"))
}

fn traversal_oracle() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dt = 1.0;
    let (mut checked, mut worst) = (0usize, 0.0f64);
    let mut failures = 0usize;
    for i in 0..500 {
        let base = generate_grid_graph(3, 3, 10.0).unwrap();
        let weights: Vec<f64> = (0..base.link_count()).map(|_| rng.random_range(3.0..40.0)).collect();
        let g = base.with_link_weights(&weights).unwrap();
        let interval = rng.random_range(1..=20) as f64;
        let horizon = 400.0;
        let samples = (horizon / interval) as usize + 1;
        let series: Vec<Vec<f64>> = (0..g.link_count())
            .map(|_| (0..samples).map(|_| rng.random_range(0.05..2.0)).collect())
            .collect();
        let p = DynamicProfile::from_link_series(&g, ProfileKind::Custom, None, interval, horizon, series).unwrap();
        let strategy = StrategyKind::ALL[i % 3];
        let cfg = SimConfig::new(1 + i % 3, strategy, HandlingMethod::Lazy, horizon, i as u64);
        let rec = run_simulation(&g, Some(&p), &cfg).unwrap();
        for o in &rec.observations {
            let start = o.t - o.observed_weight;
            let exact = observed_weight_integral_check(Some(&p), o.edge, start, g.arc(o.edge).base_weight).unwrap();
            let diff = (o.observed_weight - exact).abs();
            worst = worst.max(diff);
            if diff > dt + 1e-9 {
                failures += 1;
            }
            checked += 1;
        }
    }
    verdict(
        failures == 0 && checked > 1000,
        format!("{checked} traversals, max |engine - exact| {worst:.3} s, {failures} beyond dt"),
    )
}

fn static_equivalence() -> Verdict {
    let g = generate_grid_graph(5, 5, 30.0).unwrap();
    let mut mismatches = Vec::new();
    let mut total = 0;
    for strategy in StrategyKind::ALL {
        for n in [1, 2, 4, 8] {
            for seed in 0..5 {
                let idle: Vec<f64> = HandlingMethod::ALL
                    .iter()
                    .map(|&m| {
                        let cfg = SimConfig::new(n, strategy, m, 2500.0, seed);
                        run_simulation(&g, None, &cfg).unwrap().mean_idleness().unwrap()
                    })
                    .collect();
                total += 1;
                if idle.iter().any(|x| x.to_bits() != idle[0].to_bits()) {
                    mismatches.push(format!("{strategy}/n={n}/seed={seed}: {idle:?}"));
                }
            }
        }
    }
    verdict(mismatches.is_empty(), format!("{total} scenarios x 4 methods, mismatches: {mismatches:?}"))
}

const MAIN_PLAN: &str = r#"{
    "seed": 2024, "duration": 2500,
    "graphs": [{"name": "grid", "grid": {"rows": 5, "cols": 5, "edge_weight": 30}}],
    "profiles": [{"name": "none"},
                 {"name": "smooth_walk", "generator": {"kind": "smooth_walk", "params": {}}},
                 {"name": "blockages", "generator": {"kind": "blockages", "params": {}}},
                 {"name": "fast_walk", "generator": {"kind": "fast_walk", "params": {}}}],
    "strategies": ["state_exchange"],
    "methods": ["lazy", "omniscient", "decay"],
    "team_sizes": [4],
    "repeats": 10
}"#;

fn dynamics_hurt_lazy(runs: &[RunSummary]) -> Verdict {
    let lazy = |p| select(runs, p, HandlingMethod::Lazy);
    let none = mean_idle(&lazy("none"));
    let rel = |p| mean_idle(&lazy(p)) / none;
    let (smooth, block, fast) = (rel("smooth_walk"), rel("blockages"), rel("fast_walk"));
    verdict(
        fast >= 1.5 && smooth < block && block < fast,
        format!("lazy relative to static: smooth {smooth:.3}, blockages {block:.3}, fast {fast:.3}"),
    )
}

fn decay_beats_lazy(runs: &[RunSummary]) -> Verdict {
    let lazy = select(runs, "blockages", HandlingMethod::Lazy);
    let decay = mean_ratio(&select(runs, "blockages", HandlingMethod::Decay), &lazy);
    let omni = mean_ratio(&select(runs, "blockages", HandlingMethod::Omniscient), &lazy);
    verdict(
        decay < 1.0 && omni <= decay,
        format!("blockages, relative to lazy: decay {decay:.3}, omniscient {omni:.3}"),
    )
}

const FACTORIAL_PLAN: &str = r#"{
    "seed": 77, "duration": 2500,
    "graphs": [{"name": "grid", "grid": {"rows": 5, "cols": 5, "edge_weight": 30}}],
    "profiles": [{"name": "smooth_walk", "generator": {"kind": "smooth_walk", "params": {}}},
                 {"name": "blockages", "generator": {"kind": "blockages", "params": {}}},
                 {"name": "fast_walk", "generator": {"kind": "fast_walk", "params": {}}}],
    "strategies": ["greedy_reactive", "expected_reactive", "state_exchange"],
    "methods": ["lazy", "simple", "decay"],
    "team_sizes": [2, 4, 8],
    "repeats": 3
}"#;

fn decay_vs_simple() -> Verdict {
    let runs = run_plan(FACTORIAL_PLAN);
    let by = |m| {
        let mut v: Vec<_> = runs.iter().filter(|r| r.label.method == m).collect();
        v.sort_by(|a, b| {
            (&a.label.profile, a.label.strategy, a.label.team_size, a.label.repeat)
                .cmp(&(&b.label.profile, b.label.strategy, b.label.team_size, b.label.repeat))
        });
        v
    };
    let (lazy, simple, decay) = (by(HandlingMethod::Lazy), by(HandlingMethod::Simple), by(HandlingMethod::Decay));
    let rel_simple = mean_ratio(&simple, &lazy);
    let rel_decay = mean_ratio(&decay, &lazy);
    let pairs: Vec<(f64, f64)> = decay.iter().zip(&simple).map(|(d, s)| (d.mean_idleness, s.mean_idleness)).collect();
    let w = wilcoxon_signed_rank(&pairs).unwrap();
    verdict(
        pairs.len() >= 24 && rel_decay <= rel_simple,
        format!(
            "{} matched scenarios; relative to lazy: decay {rel_decay:.4}, simple {rel_simple:.4}; \
             Wilcoxon W={} p={:.4} ({:?})",
            pairs.len(),
            w.statistic,
            w.p_value,
            w.method
        ),
    )
}

fn noise_robustness() -> Verdict {
    let g = generate_grid_graph(5, 5, 30.0).unwrap();
    let mut ok = true;
    let mut parts = Vec::new();
    for strategy in StrategyKind::ALL {
        let idle = |sigma: f64| {
            mean(&(0..10u64)
                .map(|seed| {
                    let mut cfg = SimConfig::new(4, strategy, HandlingMethod::Lazy, 2500.0, seed);
                    cfg.noise_sigma = (sigma > 0.0).then_some(sigma);
                    run_simulation(&g, None, &cfg).unwrap().mean_idleness().unwrap()
                })
                .collect::<Vec<_>>())
        };
        let clean = idle(0.0);
        let low = idle(0.05) / clean;
        let high = idle(1.6) / clean;
        // Greedy reactive only uses weights to break ties, so like a
        // weight-agnostic strategy it is exempt from the degradation check.
        let weight_scored = strategy != StrategyKind::GreedyReactive;
        ok &= (low - 1.0).abs() <= 0.03 && (!weight_scored || high > low);
        parts.push(format!("{strategy}: x{low:.3} at 0.05, x{high:.3} at 1.60"));
    }
    verdict(ok, parts.join("; "))
}

fn correlated_null() -> Verdict {
    let g = generate_grid_graph(5, 5, 30.0).unwrap();
    let mut ratios = Vec::new();
    let mut corr_ok = true;
    for seed in 0..10u64 {
        let one = generate_smooth_walk(&g, 2500.0, 500 + seed, &SmoothWalkParams::default()).unwrap();
        let shared = one.series()[0].clone();
        let p = DynamicProfile::from_series(
            ProfileKind::Custom,
            Some(500 + seed),
            one.sample_interval(),
            one.horizon(),
            vec![0; g.arc_count()],
            vec![shared],
        )
        .unwrap();
        corr_ok &= p.edge_correlation().unwrap() == 1.0;
        let run = |m| {
            let cfg = SimConfig::new(4, StrategyKind::StateExchange, m, 2500.0, seed);
            run_simulation(&g, Some(&p), &cfg).unwrap().mean_idleness().unwrap()
        };
        ratios.push(run(HandlingMethod::Omniscient) / run(HandlingMethod::Lazy));
    }
    let improvement = 1.0 - mean(&ratios);
    verdict(
        corr_ok && improvement < 0.03,
        format!("edge correlation exactly 1: {corr_ok}; omniscient improves on lazy by {:.2}%", 100.0 * improvement),
    )
}

fn traffic_round_trip() -> Verdict {
    let g = generate_grid_graph(4, 4, 1.0).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let interval = 600.0;
    let samples = 145;
    let mut rows = Vec::new();
    for arc in g.arcs() {
        let free_flow: f64 = rng.random_range(60.0..240.0);
        let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        for k in 0..samples {
            let t = k as f64 * interval;
            let daily = 1.0 + 0.6 * (0.5 + 0.5 * (std::f64::consts::TAU * t / 86400.0 + phase).sin());
            let jitter: f64 = rng.random_range(0.0..0.2);
            rows.push(TravelTimeRow { t_seconds: t, from: arc.from, to: arc.to, travel_seconds: free_flow * (daily + jitter) });
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let csv_in = dir.path().join("traffic.csv");
    write_travel_csv(&csv_in, &rows).unwrap();
    let (dg, p) = ingest_travel_times(&g, &read_travel_csv(&csv_in).unwrap()).unwrap();
    let shape_ok = dg.vertex_count() == 16
        && dg.is_directed()
        && p.horizon() == 86400.0
        && p.sample_interval() == interval
        && (0..dg.arc_count()).all(|e| p.series_for(EdgeId(e)).len() == samples);

    let mut sim_ok = true;
    for m in [HandlingMethod::Lazy, HandlingMethod::Decay, HandlingMethod::Omniscient] {
        let cfg = SimConfig::new(4, StrategyKind::StateExchange, m, 86400.0, 3);
        sim_ok &= run_simulation(&dg, Some(&p), &cfg).map(|r| r.visits > 0).unwrap_or(false);
    }

    let csv_out = dir.path().join("exported.csv");
    write_travel_csv(&csv_out, &export_travel_times(&dg, &p).unwrap()).unwrap();
    let (dg2, p2) = ingest_travel_times(&dg, &read_travel_csv(&csv_out).unwrap()).unwrap();
    let mut worst = 0.0f64;
    for e in 0..dg.arc_count() {
        let e = EdgeId(e);
        worst = worst.max((dg.arc(e).base_weight - dg2.arc(e).base_weight).abs() / dg.arc(e).base_weight);
        for (a, b) in p.series_for(e).iter().zip(p2.series_for(e)) {
            worst = worst.max((a - b).abs());
        }
    }
    verdict(
        shape_ok && sim_ok && worst <= 1e-9,
        format!(
            "{} rows, {} arcs x {samples} samples; simulated 86400 s: {sim_ok}; round-trip max diff {worst:.2e}",
            rows.len(),
            dg.arc_count()
        ),
    )
}

/// Two-sided p from all 2^n sign assignments.
fn brute_force_p(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len();
    let total: f64 = ranks.iter().sum();
    let mut extreme = 0u64;
    for mask in 0u32..(1 << n) {
        let plus: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if plus.min(total - plus) <= w + 1e-9 {
            extreme += 1;
        }
    }
    (extreme as f64 / (1u64 << n) as f64).min(1.0)
}

fn wilcoxon_correctness() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut worst = 0.0f64;
    for _ in 0..300 {
        let n = rng.random_range(5..=12);
        // Small integer magnitudes force plenty of ties.
        let diffs: Vec<f64> =
            (0..n).map(|_| rng.random_range(1..=6) as f64 * if rng.random_bool(0.5) { 1.0 } else { -1.0 }).collect();
        let pairs: Vec<(f64, f64)> = diffs.iter().map(|&d| (d, 0.0)).collect();
        let res = wilcoxon_signed_rank(&pairs).unwrap();
        let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
        let brute = brute_force_p(&ranks, res.statistic);
        worst = worst.max((res.p_value - brute).abs()).max((exact_p_value(&ranks, res.statistic) - brute).abs());
    }
    let five = wilcoxon_signed_rank(&[(1.0, 0.0), (2.0, 0.0), (3.0, 0.0), (4.0, 0.0), (5.0, 0.0)]).unwrap();
    verdict(
        worst < 1e-12 && five.p_value == 0.0625 && five.statistic == 0.0,
        format!("max |exact - brute force| {worst:.1e} over 300 samples; all-positive n=5: W={} p={}", five.statistic, five.p_value),
    )
}

fn main() -> ExitCode {
    // Criteria 4 and 5 share one batch.
    let main_runs = OnceCell::new();
    let main_batch = || main_runs.get_or_init(|| run_plan(MAIN_PLAN)).as_slice();
    let criteria: Vec<(&str, Duration, Check<'_>)> = vec![
        ("1 decay closed form matches recurrence", Duration::from_secs(1), Box::new(decay_oracle)),
        ("2 traversal times match exact integral", Duration::from_secs(10), Box::new(traversal_oracle)),
        ("3 static environment: methods identical", Duration::from_secs(60), Box::new(static_equivalence)),
        ("4 dynamics hurt lazy teams", Duration::from_secs(300), Box::new(|| dynamics_hurt_lazy(main_batch()))),
        ("5 decay beats lazy under blockages", Duration::from_secs(300), Box::new(|| decay_beats_lazy(main_batch()))),
        ("6 decay vs simple over factorial batch", Duration::from_secs(900), Box::new(decay_vs_simple)),
        ("7 noise robustness", Duration::from_secs(300), Box::new(noise_robustness)),
        ("8 correlated dynamics null result", Duration::from_secs(300), Box::new(correlated_null)),
        ("9 traffic ingestion round trip", Duration::from_secs(120), Box::new(traffic_round_trip)),
        ("10 Wilcoxon exact p", Duration::from_secs(1), Box::new(wilcoxon_correctness)),
    ];
    let mut failed = 0;
    for (name, budget, check) in criteria {
        let start = Instant::now();
        let v = check();
        let took = start.elapsed();
        let pass = v.pass && took <= budget;
        if !pass {
            failed += 1;
        }
        println!(
            "{} criterion {name}: {} [{:.2}s, budget {}s]",
            if pass { "PASS" } else { "FAIL" },
            v.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
    }
    println!("acceptance: {} of 10 criteria passed", 10 - failed);
    if failed == 0 { ExitCode::SUCCESS } else { ExitCode::FAILURE }
}
