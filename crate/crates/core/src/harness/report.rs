//! Cross-seed summaries, CSV export and text rendering.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use super::{io_err, Arm, HarnessError, RunResult};

pub const CSV_HEADER: [&str; 9] = [
    "scenario", "seed", "node", "arm", "auc", "sens", "spec", "f1", "gap",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MissingCell {
    pub seed: u64,
    pub node: Option<u32>,
    pub arm: Arm,
    pub reason: String,
}

/// One (node, arm) row aggregated over seeds. Std devs are sample (n−1).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ArmSummary {
    pub node: Option<u32>,
    pub arm: Arm,
    pub n: usize,
    pub auc_mean: f64,
    pub auc_std: f64,
    pub sens_mean: f64,
    pub spec_mean: f64,
    pub f1_mean: f64,
    pub gap_mean: f64,
    pub gap_std: f64,
    pub dbi_mean: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioSummary {
    pub scenario: String,
    pub seeds: Vec<u64>,
    pub rows: Vec<ArmSummary>,
    /// Node → mean(swarm AUC) − mean(standalone AUC).
    pub uplift: BTreeMap<u32, f64>,
    /// Mean generalization gap per arm over all its cells.
    pub arm_gap: BTreeMap<Arm, f64>,
    pub missing: Vec<MissingCell>,
    pub caveats: Vec<String>,
}

impl ScenarioSummary {
    pub fn row(&self, node: Option<u32>, arm: Arm) -> Option<&ArmSummary> {
        self.rows.iter().find(|r| r.node == node && r.arm == arm)
    }
}

pub(crate) fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation; 0 for fewer than two values.
pub(crate) fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}

fn expected_cells(r: &RunResult) -> Vec<(Option<u32>, Arm)> {
    let mut out = Vec::new();
    if r.arms.centralized {
        out.push((None, Arm::Centralized));
    }
    for arm in [Arm::Standalone, Arm::Swarm] {
        let on = if arm == Arm::Standalone {
            r.arms.standalone
        } else {
            r.arms.swarm
        };
        if on {
            out.extend((0..r.nodes as u32).map(|k| (Some(k), arm)));
        }
    }
    out
}

fn summarize(scenario: &str, results: &[&RunResult]) -> ScenarioSummary {
    let mut seeds: Vec<u64> = results.iter().map(|r| r.seed).collect();
    seeds.sort_unstable();
    let mut missing = Vec::new();
    let mut groups: BTreeMap<(Arm, Option<u32>), Vec<&super::Cell>> = BTreeMap::new();
    for r in results {
        for (node, arm) in expected_cells(r) {
            match r.cell(node, arm) {
                Some(c) if c.ok && c.metrics.is_some() => {
                    groups.entry((arm, node)).or_default().push(c)
                }
                Some(c) => missing.push(MissingCell {
                    seed: r.seed,
                    node,
                    arm,
                    reason: c.error.clone().unwrap_or_else(|| "failed".into()),
                }),
                None => missing.push(MissingCell {
                    seed: r.seed,
                    node,
                    arm,
                    reason: "absent".into(),
                }),
            }
        }
    }

    let rows: Vec<ArmSummary> = groups
        .iter()
        .map(|(&(arm, node), cells)| {
            let m: Vec<_> = cells.iter().map(|c| c.metrics.expect("filtered")).collect();
            let pick = |f: fn(&crate::metrics::MetricsReport) -> f64| {
                m.iter().map(f).collect::<Vec<f64>>()
            };
            let auc = pick(|r| r.auc);
            let gap = pick(|r| r.gap);
            let dbis: Vec<f64> = cells.iter().filter_map(|c| c.dbi).collect();
            ArmSummary {
                node,
                arm,
                n: m.len(),
                auc_mean: mean(&auc),
                auc_std: sample_std(&auc),
                sens_mean: mean(&pick(|r| r.sensitivity)),
                spec_mean: mean(&pick(|r| r.specificity)),
                f1_mean: mean(&pick(|r| r.f1)),
                gap_mean: mean(&gap),
                gap_std: sample_std(&gap),
                dbi_mean: (!dbis.is_empty()).then(|| mean(&dbis)),
            }
        })
        .collect();

    let mut uplift = BTreeMap::new();
    for r in rows.iter().filter(|r| r.arm == Arm::Swarm) {
        let node = r.node.expect("swarm rows belong to a node");
        if let Some(base) = rows
            .iter()
            .find(|b| b.arm == Arm::Standalone && b.node == r.node)
        {
            uplift.insert(node, r.auc_mean - base.auc_mean);
        }
    }
    let mut arm_gap = BTreeMap::new();
    for arm in [Arm::Centralized, Arm::Standalone, Arm::Swarm] {
        let gaps: Vec<f64> = groups
            .iter()
            .filter(|((a, _), _)| *a == arm)
            .flat_map(|(_, cells)| cells.iter().map(|c| c.metrics.expect("filtered").gap))
            .collect();
        if !gaps.is_empty() {
            arm_gap.insert(arm, mean(&gaps));
        }
    }

    let mut caveats = Vec::new();
    if seeds.len() == 1 {
        caveats.push(
            "single seed: standard deviations are reported as 0 and carry no information".into(),
        );
    }
    if rows.iter().any(|r| r.n < seeds.len()) {
        caveats
            .push("some rows average fewer seeds than the scenario ran; see missing cells".into());
    }
    let hashes: std::collections::BTreeSet<_> =
        results.iter().map(|r| (r.seed, &r.test_hash)).collect();
    if hashes.len() != results.len() {
        caveats.push("duplicate seeds with differing test sets".into());
    }
    ScenarioSummary {
        scenario: scenario.to_string(),
        seeds,
        rows,
        uplift,
        arm_gap,
        missing,
        caveats,
    }
}

/// Groups results by scenario and summarizes each group.
pub fn compare_report(results: &[RunResult]) -> Result<Vec<ScenarioSummary>, HarnessError> {
    if results.is_empty() {
        return Err(HarnessError::NoResults);
    }
    let mut by_name: BTreeMap<&str, Vec<&RunResult>> = BTreeMap::new();
    for r in results {
        by_name.entry(&r.scenario).or_default().push(r);
    }
    Ok(by_name
        .into_iter()
        .map(|(name, rs)| summarize(name, &rs))
        .collect())
}

/// Loads every `*.json` result in `dir` (timing sidecars excluded), in
/// file-name order.
pub fn read_results(dir: &Path) -> Result<Vec<RunResult>, HarnessError> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(Result::ok)
        .map(|e| e.path())
        .filter(|p| {
            let name = p.file_name().and_then(|n| n.to_str()).unwrap_or("");
            name.ends_with(".json") && !name.ends_with(".timing.json")
        })
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = std::fs::read_to_string(p).map_err(io_err(p))?;
            serde_json::from_str(&text).map_err(|source| HarnessError::Json {
                path: p.clone(),
                source,
            })
        })
        .collect()
}

fn node_label(node: Option<u32>) -> String {
    node.map_or_else(|| "all".to_string(), |n| n.to_string())
}

/// One row per cell, columns in [`CSV_HEADER`] order. Failed cells keep
/// their identifying columns and leave the metrics empty.
pub fn render_csv(results: &[RunResult]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in results {
        for c in &r.cells {
            let metrics = match c.metrics {
                Some(m) => {
                    [m.auc, m.sensitivity, m.specificity, m.f1, m.gap].map(|v| v.to_string())
                }
                None => Default::default(),
            };
            let mut row = vec![
                r.scenario.clone(),
                r.seed.to_string(),
                node_label(c.node),
                c.arm.as_str().to_string(),
            ];
            row.extend(metrics);
            w.write_record(&row).expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("flush to vec")).expect("csv is utf-8")
}

pub fn render_text(summaries: &[ScenarioSummary]) -> String {
    let mut out = String::new();
    for s in summaries {
        let seeds: Vec<String> = s.seeds.iter().map(u64::to_string).collect();
        let _ = writeln!(out, "scenario {} (seeds: {})", s.scenario, seeds.join(", "));
        let _ = writeln!(
            out,
            "  {:<6} {:<12} {:>3} {:>16} {:>8} {:>8} {:>8} {:>16} {:>8}",
            "node", "arm", "n", "auc (mean±sd)", "sens", "spec", "f1", "gap (mean±sd)", "dbi"
        );
        for r in &s.rows {
            let dbi = r
                .dbi_mean
                .map_or_else(|| "-".to_string(), |d| format!("{d:.4}"));
            let _ = writeln!(
                out,
                "  {:<6} {:<12} {:>3} {:>16} {:>8.4} {:>8.4} {:>8.4} {:>16} {:>8}",
                node_label(r.node),
                r.arm.as_str(),
                r.n,
                format!("{:.4}±{:.4}", r.auc_mean, r.auc_std),
                r.sens_mean,
                r.spec_mean,
                r.f1_mean,
                format!("{:.4}±{:.4}", r.gap_mean, r.gap_std),
                dbi
            );
        }
        for (node, u) in &s.uplift {
            let _ = writeln!(out, "  uplift node {node}: {u:+.4}");
        }
        for (arm, g) in &s.arm_gap {
            let _ = writeln!(out, "  mean gap {}: {g:.4}", arm.as_str());
        }
        for m in &s.missing {
            let _ = writeln!(
                out,
                "  missing: seed {} node {} arm {}: {}",
                m.seed,
                node_label(m.node),
                m.arm.as_str(),
                m.reason
            );
        }
        for c in &s.caveats {
            let _ = writeln!(out, "  note: {c}");
        }
        let _ = writeln!(out, "  (± is the sample standard deviation across seeds)");
    }
    out
}
