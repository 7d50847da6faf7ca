//! Relative-idleness tables and paired significance tests over a batch of
//! run summaries.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::belief::HandlingMethod;
use crate::error::{Error, Result};
use crate::experiment::RunSummary;
use crate::metrics::{mean, relative_idleness_by, wilcoxon_signed_rank, MetricsEntry, PValueMethod};
use crate::strategy::StrategyKind;

/// One row per run, ready for plotting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LongRow {
    pub scenario: String,
    pub method: HandlingMethod,
    pub strategy: StrategyKind,
    pub n: usize,
    pub seed: u64,
    pub mean_idleness: f64,
}

/// A rectangular table of mean ratios. Cells without data are empty.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub row_header: String,
    pub columns: Vec<String>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl Table {
    pub fn cell(&self, row: &str, column: &str) -> Option<f64> {
        let c = self.columns.iter().position(|x| x == column)?;
        self.rows.iter().find(|(r, _)| r == row).and_then(|(_, v)| v[c])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        out.push_str(&self.row_header);
        for c in &self.columns {
            out.push(',');
            out.push_str(c);
        }
        out.push('\n');
        for (r, vals) in &self.rows {
            out.push_str(r);
            for v in vals {
                out.push(',');
                if let Some(v) = v {
                    let _ = write!(out, "{v:.6}");
                }
            }
            out.push('\n');
        }
        out
    }
}

/// Wilcoxon comparison of two handling methods over matched scenarios.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MethodComparison {
    pub method_a: HandlingMethod,
    pub method_b: HandlingMethod,
    pub pairs: usize,
    /// Mean of a/b over matched scenarios.
    pub mean_ratio: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p_method: Option<PValueMethod>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsBlock {
    pub reference: HandlingMethod,
    pub runs: usize,
    /// Mean idleness of each method relative to the reference, over every
    /// matched scenario.
    pub aggregate_relative: BTreeMap<String, f64>,
    pub comparisons: Vec<MethodComparison>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct AnalysisReport {
    pub long: Vec<LongRow>,
    pub by_profile: Table,
    pub by_team_size: Table,
    pub vs_static: Option<Table>,
    pub by_noise: Option<Table>,
    pub stats: StatsBlock,
}

fn first_seen<T: PartialEq + Clone>(items: impl Iterator<Item = T>) -> Vec<T> {
    let mut out: Vec<T> = Vec::new();
    for x in items {
        if !out.contains(&x) {
            out.push(x);
        }
    }
    out
}

fn by_method(summaries: &[RunSummary], m: HandlingMethod) -> Vec<&RunSummary> {
    summaries.iter().filter(|s| s.label.method == m).collect()
}

fn entries(runs: &[&RunSummary]) -> Vec<MetricsEntry> {
    runs.iter().map(|s| s.metrics_entry()).collect()
}

/// Accumulates ratios into (row, column) cells.
#[derive(Default)]
struct Cells(BTreeMap<(String, String), Vec<f64>>);

impl Cells {
    fn push(&mut self, row: String, col: String, ratio: f64) {
        self.0.entry((row, col)).or_default().push(ratio);
    }

    fn table(&self, row_header: &str, rows: &[String], columns: &[String]) -> Table {
        Table {
            row_header: row_header.to_string(),
            columns: columns.to_vec(),
            rows: rows
                .iter()
                .map(|r| {
                    let vals = columns
                        .iter()
                        .map(|c| self.0.get(&(r.clone(), c.clone())).map(|v| mean(v)))
                        .collect();
                    (r.clone(), vals)
                })
                .collect(),
        }
    }
}

/// Builds every table and the stats block. Fails with the list of missing
/// pairs if any run lacks its reference-method counterpart.
pub fn analyze(summaries: &[RunSummary], reference: HandlingMethod) -> Result<AnalysisReport> {
    if summaries.is_empty() {
        return Err(Error::InsufficientData("no runs to analyse".into()));
    }
    let refs = by_method(summaries, reference);
    if refs.is_empty() {
        return Err(Error::Config(format!("batch contains no '{reference}' runs to use as reference")));
    }
    let methods: Vec<HandlingMethod> =
        HandlingMethod::ALL.into_iter().filter(|m| summaries.iter().any(|s| s.label.method == *m)).collect();
    let strategies: Vec<StrategyKind> =
        StrategyKind::ALL.into_iter().filter(|k| summaries.iter().any(|s| s.label.strategy == *k)).collect();
    let profiles = first_seen(summaries.iter().map(|s| s.label.profile.clone()));
    let sizes: BTreeSet<usize> = summaries.iter().map(|s| s.label.team_size).collect();
    let sizes: Vec<String> = sizes.into_iter().map(|n| n.to_string()).collect();

    let columns: Vec<String> =
        strategies.iter().flat_map(|k| methods.iter().map(move |m| format!("{k}:{m}"))).collect();
    let ref_entries = entries(&refs);
    let mut profile_cells = Cells::default();
    let mut size_cells = Cells::default();
    let mut aggregate = BTreeMap::new();
    let mut missing = Vec::new();
    for &m in &methods {
        let runs = by_method(summaries, m);
        match relative_idleness_by(&entries(&runs), &ref_entries, MetricsEntry::scenario_key) {
            Ok(report) => {
                for (run, pair) in runs.iter().zip(&report.pairs) {
                    let col = format!("{}:{}", run.label.strategy, m);
                    profile_cells.push(run.label.profile.clone(), col.clone(), pair.ratio);
                    size_cells.push(run.label.team_size.to_string(), col, pair.ratio);
                }
                aggregate.insert(m.to_string(), report.mean);
            }
            Err(Error::Unmatched(keys)) => {
                missing.extend(keys.into_iter().map(|k| format!("{m} vs {reference}: {k}")));
            }
            Err(e) => return Err(e),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Unmatched(missing));
    }

    let comparisons = methods
        .iter()
        .enumerate()
        .flat_map(|(i, &a)| methods[i + 1..].iter().map(move |&b| (a, b)))
        .map(|(a, b)| compare(summaries, a, b))
        .collect::<Result<Vec<_>>>()?;

    Ok(AnalysisReport {
        long: summaries
            .iter()
            .map(|s| LongRow {
                scenario: s.metrics_entry().scenario_key(),
                method: s.label.method,
                strategy: s.label.strategy,
                n: s.label.team_size,
                seed: s.seed,
                mean_idleness: s.mean_idleness,
            })
            .collect(),
        by_profile: profile_cells.table("profile", &profiles, &columns),
        by_team_size: size_cells.table("n", &sizes, &columns),
        vs_static: vs_static(&refs, &strategies)?,
        by_noise: by_noise(&refs, &strategies)?,
        stats: StatsBlock { reference, runs: summaries.len(), aggregate_relative: aggregate, comparisons },
    })
}

fn compare(summaries: &[RunSummary], a: HandlingMethod, b: HandlingMethod) -> Result<MethodComparison> {
    let ra = entries(&by_method(summaries, a));
    let rb = entries(&by_method(summaries, b));
    let report = relative_idleness_by(&ra, &rb, MetricsEntry::scenario_key)?;
    let pairs: Vec<(f64, f64)> = report.pairs.iter().map(|p| (p.test, p.reference)).collect();
    let mut out = MethodComparison {
        method_a: a,
        method_b: b,
        pairs: pairs.len(),
        mean_ratio: report.mean,
        statistic: None,
        p_value: None,
        p_method: None,
        error: None,
    };
    match wilcoxon_signed_rank(&pairs) {
        Ok(w) => {
            out.statistic = Some(w.statistic);
            out.p_value = Some(w.p_value);
            out.p_method = Some(w.method);
        }
        Err(e) => out.error = Some(e.to_string()),
    }
    Ok(out)
}

/// Reference-method idleness under each dynamic profile relative to the
/// static runs of the same scenario. `None` if the batch has no static runs.
fn vs_static(refs: &[&RunSummary], strategies: &[StrategyKind]) -> Result<Option<Table>> {
    let (stat, dynamic): (Vec<&RunSummary>, Vec<&RunSummary>) = refs.iter().partition(|s| !s.dynamic);
    if stat.is_empty() || dynamic.is_empty() {
        return Ok(None);
    }
    let key = |e: &MetricsEntry| {
        format!("{}/{}/n={}/noise={}/repeat={}", e.graph, e.strategy, e.team_size, e.noise_sigma, e.repeat)
    };
    let report = relative_idleness_by(&entries(&dynamic), &entries(&stat), key)?;
    let profiles = first_seen(dynamic.iter().map(|s| s.label.profile.clone()));
    let columns: Vec<String> =
        profiles.iter().flat_map(|p| strategies.iter().map(move |k| format!("{p}:{k}"))).collect();
    let mut cells = Cells::default();
    for (run, pair) in dynamic.iter().zip(&report.pairs) {
        cells.push(run.label.team_size.to_string(), format!("{}:{}", run.label.profile, run.label.strategy), pair.ratio);
    }
    let sizes: BTreeSet<usize> = dynamic.iter().map(|s| s.label.team_size).collect();
    let rows: Vec<String> = sizes.into_iter().map(|n| n.to_string()).collect();
    Ok(Some(cells.table("n", &rows, &columns)))
}

/// Reference-method idleness at each noise level relative to noise-free runs.
fn by_noise(refs: &[&RunSummary], strategies: &[StrategyKind]) -> Result<Option<Table>> {
    let (clean, noisy): (Vec<&RunSummary>, Vec<&RunSummary>) = refs.iter().partition(|s| s.label.noise_sigma == 0.0);
    if clean.is_empty() || noisy.is_empty() {
        return Ok(None);
    }
    let key = |e: &MetricsEntry| format!("{}/{}/{}/n={}/repeat={}", e.graph, e.profile, e.strategy, e.team_size, e.repeat);
    let report = relative_idleness_by(&entries(&noisy), &entries(&clean), key)?;
    let mut cells = Cells::default();
    for (run, pair) in noisy.iter().zip(&report.pairs) {
        cells.push(run.label.noise_sigma.to_string(), run.label.strategy.to_string(), pair.ratio);
    }
    let mut sigmas: Vec<f64> = noisy.iter().map(|s| s.label.noise_sigma).collect();
    sigmas.sort_by(f64::total_cmp);
    sigmas.dedup();
    let rows: Vec<String> = sigmas.iter().map(|s| s.to_string()).collect();
    let columns: Vec<String> = strategies.iter().map(|k| k.to_string()).collect();
    Ok(Some(cells.table("noise_sigma", &rows, &columns)))
}

pub const LONG_CSV: &str = "long.csv";
pub const BY_PROFILE_CSV: &str = "relative_by_profile.csv";
pub const BY_TEAM_SIZE_CSV: &str = "relative_by_team_size.csv";
pub const VS_STATIC_CSV: &str = "relative_to_static.csv";
pub const BY_NOISE_CSV: &str = "relative_by_noise.csv";
pub const STATS_JSON: &str = "stats.json";

/// Writes the report's files into `out_dir` and returns their names.
pub fn write_report(report: &AnalysisReport, out_dir: &Path) -> Result<Vec<String>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let put = |name: &str, text: String| -> Result<String> {
        let path = out_dir.join(name);
        std::fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        Ok(name.to_string())
    };
    let mut written = Vec::new();

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scenario", "method", "strategy", "n", "seed", "mean_idleness"])
        .map_err(|e| Error::Parse(e.to_string()))?;
    for r in &report.long {
        w.write_record([
            r.scenario.clone(),
            r.method.to_string(),
            r.strategy.to_string(),
            r.n.to_string(),
            r.seed.to_string(),
            r.mean_idleness.to_string(),
        ])
        .map_err(|e| Error::Parse(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Parse(e.to_string()))?;
    written.push(put(LONG_CSV, String::from_utf8(bytes).expect("utf-8 csv"))?);

    written.push(put(BY_PROFILE_CSV, report.by_profile.to_csv())?);
    written.push(put(BY_TEAM_SIZE_CSV, report.by_team_size.to_csv())?);
    if let Some(t) = &report.vs_static {
        written.push(put(VS_STATIC_CSV, t.to_csv())?);
    }
    if let Some(t) = &report.by_noise {
        written.push(put(BY_NOISE_CSV, t.to_csv())?);
    }
    written.push(put(STATS_JSON, serde_json::to_string_pretty(&report.stats).expect("serializable"))?);
    Ok(written)
}
