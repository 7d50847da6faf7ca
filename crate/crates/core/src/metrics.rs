//! Idleness statistics, matched relative idleness, and the Wilcoxon
//! signed-rank test.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::sim::RunRecord;

/// Time-and-vertex average of sampled idleness:
/// `dt / (T |V|) * Σ_ticks Σ_vertices I(v, t)`.
pub fn mean_graph_idleness(rec: &RunRecord) -> Result<f64> {
    let expected = rec.config.ticks()?;
    if rec.ticks != expected {
        return Err(Error::InsufficientData(format!(
            "record has {} ticks, config implies {expected}",
            rec.ticks
        )));
    }
    if let Some(trace) = &rec.trace {
        if trace.len() != rec.ticks * rec.vertex_count {
            return Err(Error::InsufficientData(format!(
                "trace has {} samples, expected {}",
                trace.len(),
                rec.ticks * rec.vertex_count
            )));
        }
    }
    Ok(rec.config.dt * rec.idleness_sum / (rec.config.duration * rec.vertex_count as f64))
}

/// Mean idleness of one run together with the labels that match it to other
/// runs of the same scenario.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsEntry {
    pub graph: String,
    pub profile: String,
    pub strategy: String,
    pub method: String,
    pub team_size: usize,
    #[serde(default)]
    pub noise_sigma: f64,
    pub repeat: usize,
    pub seed: u64,
    pub mean_idleness: f64,
    pub max_idleness: f64,
}

impl MetricsEntry {
    /// Everything but the handling method.
    pub fn scenario_key(&self) -> String {
        format!(
            "{}/{}/{}/n={}/noise={}/repeat={}",
            self.graph, self.profile, self.strategy, self.team_size, self.noise_sigma, self.repeat
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativePair {
    pub key: String,
    pub test: f64,
    pub reference: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeReport {
    pub pairs: Vec<RelativePair>,
    /// Unweighted mean of the per-pair ratios.
    pub mean: f64,
}

/// Ratios of test to reference mean idleness, matched by scenario key.
pub fn relative_idleness(test: &[MetricsEntry], reference: &[MetricsEntry]) -> Result<RelativeReport> {
    relative_idleness_by(test, reference, MetricsEntry::scenario_key)
}

/// As [`relative_idleness`], matching on a caller-supplied key.
pub fn relative_idleness_by(
    test: &[MetricsEntry],
    reference: &[MetricsEntry],
    key: impl Fn(&MetricsEntry) -> String,
) -> Result<RelativeReport> {
    let mut refs: HashMap<String, f64> = HashMap::with_capacity(reference.len());
    for r in reference {
        if refs.insert(key(r), r.mean_idleness).is_some() {
            return Err(Error::Config(format!("duplicate reference entry for {}", key(r))));
        }
    }
    let mut missing = Vec::new();
    let mut pairs = Vec::with_capacity(test.len());
    for t in test {
        let k = key(t);
        match refs.get(&k) {
            Some(&r) if r > 0.0 => pairs.push(RelativePair {
                ratio: t.mean_idleness / r,
                test: t.mean_idleness,
                reference: r,
                key: k,
            }),
            Some(_) => return Err(Error::InsufficientData(format!("reference idleness is zero for {k}"))),
            None => missing.push(k),
        }
    }
    if !missing.is_empty() {
        return Err(Error::Unmatched(missing));
    }
    if pairs.is_empty() {
        return Err(Error::InsufficientData("no entries to compare".into()));
    }
    let mean = pairs.iter().map(|p| p.ratio).sum::<f64>() / pairs.len() as f64;
    Ok(RelativeReport { pairs, mean })
}

/// Unweighted mean.
pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Largest number of non-zero differences for which the exact null
/// distribution is used.
pub const EXACT_MAX_N: usize = 12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PValueMethod {
    Exact,
    NormalApprox,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W+, W-)`.
    pub statistic: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    pub n_nonzero: usize,
    /// Two-sided.
    pub p_value: f64,
    pub method: PValueMethod,
}

/// Average ranks (1-based) of `values`, ties sharing the mean of their ranks.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test on paired samples, differences `x - y`.
///
/// Zero differences are dropped and tied magnitudes get average ranks. Up to
/// [`EXACT_MAX_N`] non-zero differences the p-value comes from the exact null
/// distribution of `W+` given the observed ranks; above that, from the normal
/// approximation with tie and continuity corrections.
pub fn wilcoxon_signed_rank(pairs: &[(f64, f64)]) -> Result<WilcoxonResult> {
    let diffs: Vec<f64> = pairs.iter().map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.len() < 5 {
        return Err(Error::InsufficientData(format!(
            "signed-rank test needs at least 5 non-zero differences, got {}",
            diffs.len()
        )));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::InsufficientData("non-finite difference".into()));
    }
    let ranks = average_ranks(&diffs.iter().map(|d| d.abs()).collect::<Vec<_>>());
    let w_plus: f64 = diffs.iter().zip(&ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();
    let total: f64 = ranks.iter().sum();
    let w_minus = total - w_plus;
    let statistic = w_plus.min(w_minus);
    let (p_value, method) = if diffs.len() <= EXACT_MAX_N {
        (exact_p_value(&ranks, statistic), PValueMethod::Exact)
    } else {
        (normal_p_value(&ranks, statistic), PValueMethod::NormalApprox)
    };
    Ok(WilcoxonResult { statistic, w_plus, w_minus, n_nonzero: diffs.len(), p_value, method })
}

/// Two-sided exact p-value `min(1, 2 P(W+ <= w))` under the null that every
/// sign is equally likely, by subset-sum counting over doubled ranks.
pub fn exact_p_value(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let max: usize = doubled.iter().sum();
    let mut counts = vec![0u64; max + 1];
    counts[0] = 1;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            if counts[s] > 0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    let limit = (2.0 * w).round() as usize;
    let below: u64 = counts[..=limit.min(max)].iter().sum();
    let total = 2f64.powi(ranks.len() as i32);
    (2.0 * below as f64 / total).min(1.0)
}

/// Two-sided normal-approximation p-value with tie-corrected variance and a
/// 0.5 continuity correction.
pub fn normal_p_value(ranks: &[f64], w: f64) -> f64 {
    let n = ranks.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.to_vec();
    sorted.sort_by(f64::total_cmp);
    for group in sorted.chunk_by(|a, b| a == b) {
        let t = group.len() as f64;
        tie_term += t * t * t - t;
    }
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0;
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((w - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let std = Normal::standard();
    (2.0 * std.cdf(-z)).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::belief::HandlingMethod;
    use crate::sim::SimConfig;
    use crate::strategy::StrategyKind;
    use proptest::prelude::*;

    /// Brute force over all 2^n sign assignments.
    fn brute_force_p(ranks: &[f64], w: f64) -> f64 {
        let n = ranks.len();
        let mut below = 0u64;
        for mask in 0u32..(1 << n) {
            let s: f64 = (0..n).filter(|i| mask & (1 << i) != 0).map(|i| ranks[i]).sum();
            if s <= w + 1e-9 {
                below += 1;
            }
        }
        (2.0 * below as f64 / (1u64 << n) as f64).min(1.0)
    }

    fn record(idle_sum: f64, ticks: usize, vertices: usize) -> RunRecord {
        RunRecord {
            config: SimConfig::new(1, StrategyKind::GreedyReactive, HandlingMethod::Lazy, ticks as f64, 0),
            vertex_count: vertices,
            ticks,
            idleness_sum: idle_sum,
            max_idleness: 0.0,
            visits: 0,
            initial_positions: vec![0],
            observations: vec![],
            trace: None,
        }
    }

    #[test]
    fn mean_idleness_examples() {
        // One never-visited vertex, samples 1..10.
        assert_eq!(mean_graph_idleness(&record((1..=10).sum::<usize>() as f64, 10, 1)).unwrap(), 5.5);
        assert_eq!(mean_graph_idleness(&record(0.0, 10, 3)).unwrap(), 0.0);
        let mut short = record(0.0, 10, 3);
        short.ticks = 9;
        assert!(mean_graph_idleness(&short).is_err());
    }

    fn entry(method: &str, repeat: usize, mean: f64) -> MetricsEntry {
        MetricsEntry {
            graph: "g".into(),
            profile: "p".into(),
            strategy: "s".into(),
            method: method.into(),
            team_size: 2,
            noise_sigma: 0.0,
            repeat,
            seed: repeat as u64,
            mean_idleness: mean,
            max_idleness: mean * 2.0,
        }
    }

    #[test]
    fn relative_examples() {
        let r = relative_idleness(&[entry("a", 0, 12.0)], &[entry("b", 0, 10.0)]).unwrap();
        assert_eq!(r.pairs[0].ratio, 1.2);
        let refs = [entry("b", 0, 10.0), entry("b", 1, 10.0), entry("b", 2, 10.0)];
        let tests = [entry("a", 0, 8.0), entry("a", 1, 10.0), entry("a", 2, 12.0)];
        assert!((relative_idleness(&tests, &refs).unwrap().mean - 1.0).abs() < 1e-15);
        let same = relative_idleness(&refs, &refs).unwrap();
        assert!(same.pairs.iter().all(|p| p.ratio == 1.0));
        assert_eq!(same.mean, 1.0);

        let err = relative_idleness(&[entry("a", 5, 1.0)], &refs).unwrap_err();
        match err {
            Error::Unmatched(keys) => assert_eq!(keys, vec!["g/p/s/n=2/noise=0/repeat=5".to_string()]),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn ranks_average_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 2.0]), vec![3.0, 1.0, 2.0]);
        assert_eq!(average_ranks(&[1.0, 1.0, 2.0, 2.0, 2.0]), vec![1.5, 1.5, 4.0, 4.0, 4.0]);
    }

    #[test]
    fn all_positive_five() {
        let pairs: Vec<(f64, f64)> = (1..=5).map(|d| (d as f64, 0.0)).collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.w_plus, 15.0);
        assert_eq!(r.method, PValueMethod::Exact);
        assert_eq!(r.p_value, 2.0 / 32.0);
        assert_eq!(r.p_value, brute_force_p(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.0));
    }

    #[test]
    fn symmetric_differences_give_unit_p() {
        let pairs: Vec<(f64, f64)> = [1.0, -1.0, 2.0, -2.0, 3.0, -3.0].iter().map(|&d| (d, 0.0)).collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert_eq!(r.w_plus, r.w_minus);
        assert_eq!(r.p_value, 1.0);
    }

    #[test]
    fn too_few_differences() {
        let pairs = [(1.0, 1.0), (2.0, 1.0), (3.0, 1.0), (4.0, 1.0), (5.0, 1.0), (6.0, 6.0)];
        assert!(matches!(wilcoxon_signed_rank(&pairs), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let pairs: Vec<(f64, f64)> = (1..=30).map(|i| (i as f64 * if i % 3 == 0 { -1.0 } else { 1.0 }, 0.0)).collect();
        let r = wilcoxon_signed_rank(&pairs).unwrap();
        assert_eq!(r.method, PValueMethod::NormalApprox);
        assert!(r.p_value > 0.0 && r.p_value < 1.0);
    }

    proptest! {
        #[test]
        fn exact_matches_brute_force(diffs in prop::collection::vec((1i32..8).prop_flat_map(|m| prop_oneof![Just(m), Just(-m)]), 5..=12)) {
            let pairs: Vec<(f64, f64)> = diffs.iter().map(|&d| (d as f64, 0.0)).collect();
            let r = wilcoxon_signed_rank(&pairs).unwrap();
            let ranks = average_ranks(&diffs.iter().map(|d| d.abs() as f64).collect::<Vec<_>>());
            let brute = brute_force_p(&ranks, r.statistic);
            prop_assert!((r.p_value - brute).abs() < 1e-12, "{} vs {}", r.p_value, brute);
        }

        #[test]
        fn exact_and_normal_agree_at_twelve(signs in prop::collection::vec(any::<bool>(), 12)) {
            let ranks: Vec<f64> = (1..=12).map(|r| r as f64).collect();
            let w_plus: f64 = ranks.iter().zip(&signs).filter(|(_, s)| **s).map(|(r, _)| r).sum();
            let w = w_plus.min(78.0 - w_plus);
            let exact = exact_p_value(&ranks, w);
            let normal = normal_p_value(&ranks, w);
            prop_assert!((exact - normal).abs() < 0.02, "exact {exact} normal {normal}");
        }
    }
}
