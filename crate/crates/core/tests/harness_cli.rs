use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use swarmlearn::data::load_csv;
use swarmlearn::harness::{
    compare_report, render_csv, run_scenario, Arm, Arms, Cell, RunResult, ScenarioSpec,
    SwarmTransport, CSV_HEADER,
};
use swarmlearn::metrics::MetricsReport;

fn scenario(name: &str) -> ScenarioSpec {
    ScenarioSpec::load(
        &Path::new(env!("CARGO_MANIFEST_DIR"))
            .join("scenarios")
            .join(format!("{name}.json")),
    )
    .unwrap()
}

fn unbalanced() -> &'static [RunResult] {
    static RUNS: OnceLock<Vec<RunResult>> = OnceLock::new();
    RUNS.get_or_init(|| {
        run_scenario(
            &scenario("unbalanced_10_30_30_30"),
            None,
            SwarmTransport::Sim,
        )
        .unwrap()
    })
}

/// A fast two-node, two-seed variant for file-level checks.
fn small_spec() -> ScenarioSpec {
    let mut spec = scenario("unbalanced_10_30_30_30");
    spec.name = "small".into();
    spec.dataset.samples = 1_500;
    spec.fractions = vec![0.4, 0.6];
    spec.seeds = vec![1, 2];
    spec.node.max_epochs = 6;
    spec
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

#[test]
fn unbalanced_scenario_scores_all_45_models() {
    let runs = unbalanced();
    assert_eq!(runs.len(), 5);
    let cells: Vec<&Cell> = runs.iter().flat_map(|r| &r.cells).collect();
    assert_eq!(cells.len(), 45);
    assert!(cells.iter().all(|c| c.ok && c.metrics.is_some()));
    for r in runs {
        assert_eq!(r.test_hash.len(), 64);
        assert_eq!(r.rounds.len(), 4);
    }
}

#[test]
fn centralized_is_not_beaten_by_any_standalone_node() {
    let runs = unbalanced();
    let central = mean(
        &runs
            .iter()
            .map(|r| r.auc(None, Arm::Centralized).unwrap())
            .collect::<Vec<_>>(),
    );
    for k in 0..4 {
        let local = mean(
            &runs
                .iter()
                .map(|r| r.auc(Some(k), Arm::Standalone).unwrap())
                .collect::<Vec<_>>(),
        );
        assert!(
            central >= local - 0.02,
            "node {k}: {local} vs centralized {central}"
        );
    }
}

#[test]
fn scarce_node_validates_below_centralized() {
    let runs = unbalanced();
    let val = |node, arm| {
        mean(
            &runs
                .iter()
                .map(|r| r.cell(node, arm).unwrap().val_auc.unwrap())
                .collect::<Vec<_>>(),
        )
    };
    assert!(val(Some(0), Arm::Standalone) < val(None, Arm::Centralized));
}

#[test]
fn five_percent_node_is_the_weakest_standalone() {
    let runs = run_scenario(&scenario("downsample_n3_05"), None, SwarmTransport::Sim).unwrap();
    let weakest = runs
        .iter()
        .filter(|r| {
            let aucs: Vec<f64> = (0..4)
                .map(|k| r.auc(Some(k), Arm::Standalone).unwrap())
                .collect();
            aucs[..3].iter().all(|&a| aucs[3] < a)
        })
        .count();
    assert!(weakest >= 4, "{weakest}/5");
}

fn result_files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| !p.to_string_lossy().ends_with(".timing.json"))
        .map(|p| {
            (
                p.file_name().unwrap().to_string_lossy().into_owned(),
                std::fs::read(&p).unwrap(),
            )
        })
        .collect()
}

#[test]
fn reruns_write_identical_files() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run_scenario(&small_spec(), Some(a.path()), SwarmTransport::Sim).unwrap();
    run_scenario(&small_spec(), Some(b.path()), SwarmTransport::Sim).unwrap();
    let (fa, fb) = (result_files(a.path()), result_files(b.path()));
    assert_eq!(
        fa.keys().cloned().collect::<Vec<_>>(),
        vec!["small_seed1.json", "small_seed2.json"]
    );
    assert_eq!(fa, fb);
    assert!(a.path().join("small_seed1.timing.json").exists());
}

// Hand-built results for the report arithmetic.

fn metrics(auc: f64, gap: f64) -> MetricsReport {
    MetricsReport {
        auc,
        sensitivity: auc - 0.1,
        specificity: auc + 0.1,
        precision: 0.5,
        recall: auc - 0.1,
        f1: 0.5,
        gap,
    }
}

fn cell(node: Option<u32>, arm: Arm, auc: f64, gap: f64) -> Cell {
    Cell {
        node,
        arm,
        ok: true,
        error: None,
        metrics: Some(metrics(auc, gap)),
        train_auc: Some(auc + gap),
        val_auc: Some(auc),
        dbi: None,
        epochs: Some(20),
        stop: None,
    }
}

fn fixture(seed: u64, cells: Vec<Cell>) -> RunResult {
    RunResult {
        version: 1,
        scenario: "fixture".into(),
        seed,
        nodes: 1,
        arms: Arms::default(),
        test_hash: format!("{seed:064x}"),
        test_size: 100,
        shard_sizes: vec![100],
        dbi_space: "raw".into(),
        cells,
        rounds: BTreeMap::new(),
        network: None,
        transport: "sim".into(),
    }
}

fn three_seeds() -> Vec<RunResult> {
    // (centralized, standalone, swarm) AUC and gap per seed.
    let table = [
        (1, 0.70, 0.55, 0.61, 0.02, 0.10, 0.05),
        (2, 0.72, 0.58, 0.65, 0.03, 0.04, 0.01),
        (3, 0.71, 0.52, 0.60, 0.01, 0.07, 0.03),
    ];
    table
        .iter()
        .map(|&(seed, c, l, s, gc, gl, gs)| {
            fixture(
                seed,
                vec![
                    cell(None, Arm::Centralized, c, gc),
                    cell(Some(0), Arm::Standalone, l, gl),
                    cell(Some(0), Arm::Swarm, s, gs),
                ],
            )
        })
        .collect()
}

#[test]
fn report_arithmetic_matches_hand_values() {
    let summary = compare_report(&three_seeds()).unwrap().remove(0);
    assert_eq!(summary.seeds, vec![1, 2, 3]);
    let close = |a: f64, b: f64| assert!((a - b).abs() <= 1e-9, "{a} vs {b}");

    let swarm = summary.row(Some(0), Arm::Swarm).unwrap();
    assert_eq!(swarm.n, 3);
    close(swarm.auc_mean, 0.62);
    // deviations -0.01, 0.03, -0.02: sqrt(0.0014 / 2)
    close(swarm.auc_std, 0.026457513110645906);
    close(swarm.gap_mean, 0.03);
    close(swarm.gap_std, 0.02);
    close(swarm.sens_mean, 0.52);

    let local = summary.row(Some(0), Arm::Standalone).unwrap();
    close(local.auc_mean, 0.55);
    // deviations 0, 0.03, -0.03: sqrt(0.0018 / 2)
    close(local.auc_std, 0.03);
    close(local.gap_mean, 0.07);
    close(local.gap_std, 0.03);

    let central = summary.row(None, Arm::Centralized).unwrap();
    close(central.auc_mean, 0.71);
    close(central.auc_std, 0.01);

    close(summary.uplift[&0], 0.07);
    close(summary.arm_gap[&Arm::Standalone], 0.07);
    close(summary.arm_gap[&Arm::Swarm], 0.03);
    close(summary.arm_gap[&Arm::Centralized], 0.02);
    assert!(summary.missing.is_empty());
    assert!(summary.caveats.is_empty());
}

#[test]
fn two_seed_example() {
    let runs: Vec<RunResult> = [(1, 0.60), (2, 0.64)]
        .iter()
        .map(|&(seed, auc)| {
            fixture(
                seed,
                vec![
                    cell(None, Arm::Centralized, auc, 0.0),
                    cell(Some(0), Arm::Standalone, auc, 0.0),
                    cell(Some(0), Arm::Swarm, auc, 0.0),
                ],
            )
        })
        .collect();
    let row = compare_report(&runs).unwrap()[0]
        .row(Some(0), Arm::Swarm)
        .unwrap()
        .clone();
    assert!((row.auc_mean - 0.62).abs() <= 1e-12);
    assert!((row.auc_std - 0.0283).abs() < 5e-5);
}

#[test]
fn single_seed_reports_zero_std_with_a_caveat() {
    let runs = vec![three_seeds().remove(0)];
    let s = compare_report(&runs).unwrap().remove(0);
    assert!(s.rows.iter().all(|r| r.auc_std == 0.0 && r.gap_std == 0.0));
    assert!(s.caveats.iter().any(|c| c.contains("single seed")));
}

#[test]
fn missing_and_failed_cells_are_listed() {
    let mut runs = three_seeds();
    runs[1].cells.retain(|c| c.arm != Arm::Swarm);
    runs[2].cells[0].ok = false;
    runs[2].cells[0].metrics = None;
    runs[2].cells[0].error = Some("diverged".into());
    let s = compare_report(&runs).unwrap().remove(0);
    let listed: Vec<(u64, Arm, &str)> = s
        .missing
        .iter()
        .map(|m| (m.seed, m.arm, m.reason.as_str()))
        .collect();
    assert_eq!(
        listed,
        vec![(2, Arm::Swarm, "absent"), (3, Arm::Centralized, "diverged")]
    );
    assert_eq!(s.row(Some(0), Arm::Swarm).unwrap().n, 2);
    assert!(!s.caveats.is_empty());
}

#[test]
fn all_arms_equal_gives_zero_uplift() {
    let runs: Vec<RunResult> = (1..=4)
        .map(|seed| {
            let auc = 0.5 + 0.03 * seed as f64;
            fixture(
                seed,
                vec![
                    cell(None, Arm::Centralized, auc, 0.02),
                    cell(Some(0), Arm::Standalone, auc, 0.02),
                    cell(Some(0), Arm::Swarm, auc, 0.02),
                ],
            )
        })
        .collect();
    let s = compare_report(&runs).unwrap().remove(0);
    assert!(s.uplift.values().all(|&u| u == 0.0));
}

#[test]
fn empty_input_is_an_error() {
    assert!(compare_report(&[]).is_err());
}

#[test]
fn csv_has_the_fixed_columns() {
    let text = render_csv(&three_seeds());
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "scenario,seed,node,arm,auc,sens,spec,f1,gap"
    );
    assert_eq!(
        CSV_HEADER.join(","),
        "scenario,seed,node,arm,auc,sens,spec,f1,gap"
    );
    assert_eq!(
        lines.next().unwrap(),
        "fixture,1,all,centralized,0.7,0.6,0.7999999999999999,0.5,0.02"
    );
    assert_eq!(text.lines().count(), 10);
}

// The binary.

fn swarm(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_swarm"))
        .args(args)
        .output()
        .unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn cli_exit_codes() {
    assert_eq!(swarm(&[]).status.code(), Some(1));
    let bad = swarm(&["synth", "--samples", "ten"]);
    assert_eq!(bad.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad.stderr).contains("--samples"));
    assert_eq!(swarm(&["--help"]).status.code(), Some(0));
    assert_eq!(
        swarm(&["report", "--in", "/nonexistent/results"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn cli_synth_and_partition() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    assert!(swarm(&[
        "synth",
        "--samples",
        "1000",
        "--dim",
        "4",
        "--seed",
        "3",
        "--out",
        p(&data)
    ])
    .status
    .success());
    assert_eq!(load_csv(&data).unwrap().len(), 1_000);

    let out = dir.path().join("shards");
    let res = swarm(&[
        "partition",
        "--input",
        p(&data),
        "--fractions",
        "0.25,0.75",
        "--out",
        p(&out),
    ]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    let rows = |name: &str| load_csv(out.join(name)).unwrap().len();
    assert_eq!(rows("node0_train.csv") + rows("node0_val.csv"), 250);
    assert_eq!(rows("node1_train.csv") + rows("node1_val.csv"), 750);
}

#[test]
fn cli_run_sim_is_byte_identical() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let res = swarm(&[
            "run-sim",
            "--nodes",
            "4",
            "--seed",
            "1",
            "--out",
            p(d.path()),
        ]);
        assert!(
            res.status.success(),
            "{}",
            String::from_utf8_lossy(&res.stderr)
        );
    }
    let fa = result_files(a.path());
    assert_eq!(fa.len(), 1);
    assert_eq!(fa, result_files(b.path()));
}

#[test]
fn cli_scenario_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let spec = dir.path().join("small.json");
    std::fs::write(&spec, serde_json::to_string_pretty(&small_spec()).unwrap()).unwrap();
    let results = dir.path().join("results");
    let res = swarm(&["scenario", "--spec", p(&spec), "--out", p(&results)]);
    assert!(
        res.status.success(),
        "{}",
        String::from_utf8_lossy(&res.stderr)
    );
    assert!(String::from_utf8_lossy(&res.stdout).contains("uplift node 0"));
    assert_eq!(result_files(&results).len(), 2);

    let csv = swarm(&["report", "--in", p(&results), "--format", "csv"]);
    assert!(csv.status.success());
    let text = String::from_utf8(csv.stdout).unwrap();
    assert_eq!(
        text.lines().next().unwrap(),
        "scenario,seed,node,arm,auc,sens,spec,f1,gap"
    );
    // Two seeds of (1 centralized + 2 standalone + 2 swarm).
    assert_eq!(text.lines().count(), 1 + 10);

    let text = swarm(&["report", "--in", p(&results)]);
    assert!(String::from_utf8_lossy(&text.stdout).contains("sample standard deviation"));
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
}

#[test]
fn cli_two_tcp_nodes_exchange_weights() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data.csv");
    assert!(swarm(&[
        "synth",
        "--samples",
        "1200",
        "--dim",
        "6",
        "--out",
        p(&data)
    ])
    .status
    .success());
    let shards = dir.path().join("shards");
    assert!(swarm(&[
        "partition",
        "--input",
        p(&data),
        "--fractions",
        "0.5,0.5",
        "--out",
        p(&shards)
    ])
    .status
    .success());

    let ports = [free_port(), free_port()];
    let configs: Vec<PathBuf> = (0..2)
        .map(|id| {
            let seeds: Vec<String> = if id == 1 {
                vec![format!("127.0.0.1:{}", ports[0])]
            } else {
                vec![]
            };
            let cfg = serde_json::json!({
                "node_id": id,
                "listen": format!("127.0.0.1:{}", ports[id]),
                "seeds": seeds,
                "train_csv": format!("shards/node{id}_train.csv"),
                "val_csv": format!("shards/node{id}_val.csv"),
                "hidden_dim": 4,
                "exchange_interval": 2,
                "max_epochs": 4,
                "collect_window_ms": 3000,
                "ack_timeout_ms": 3000,
                "init_seed": 9,
                "wait_for_peers": 1,
                "out": format!("out{id}.json"),
            });
            let path = dir.path().join(format!("node{id}.json"));
            std::fs::write(&path, cfg.to_string()).unwrap();
            path
        })
        .collect();

    // The joiner starts before its seed is listening and has to retry.
    let children: Vec<_> = configs
        .iter()
        .rev()
        .map(|c| {
            let child = Command::new(env!("CARGO_BIN_EXE_swarm"))
                .args(["run-node", "--config", p(c)])
                .stdout(std::process::Stdio::piped())
                .stderr(std::process::Stdio::piped())
                .spawn()
                .unwrap();
            std::thread::sleep(std::time::Duration::from_millis(600));
            child
        })
        .collect();
    for child in children {
        let out = child.wait_with_output().unwrap();
        assert!(
            out.status.success(),
            "{}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    for id in 0..2 {
        let out: serde_json::Value = serde_json::from_str(
            &std::fs::read_to_string(dir.path().join(format!("out{id}.json"))).unwrap(),
        )
        .unwrap();
        let rounds = out["rounds"].as_array().unwrap();
        assert_eq!(rounds.len(), 2);
        assert!(
            rounds.iter().all(|r| r["peers_heard"] == 1),
            "node {id}: {rounds:?}"
        );
    }
}
