//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

use std::path::PathBuf;
use std::time::Instant;

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::{ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use swarmlearn::aggregation::{fedavg, ModelUpdate};
use swarmlearn::harness::{run_scenario, run_seed, Arm, RunResult, ScenarioSpec, SwarmTransport};
use swarmlearn::metrics::roc_auc;
use swarmlearn::net::codec::{
    decode, encode, AckStatus, Kind, Payload, PeerInfo, SwarmMessage, WeightsBody,
};
use swarmlearn::node::{Behavior, StopReason};
use swarmlearn::params::WeightVector;
use swarmlearn::trainer::ModelSpec;

const SEEDS: usize = 5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn scenario(name: &str) -> ScenarioSpec {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("scenarios")
        .join(format!("{name}.json"));
    ScenarioSpec::load(&path).expect("scenario file loads")
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn aucs(results: &[RunResult], node: Option<u32>, arm: Arm) -> Vec<f64> {
    results
        .iter()
        .map(|r| r.auc(node, arm).unwrap_or(f64::NAN))
        .collect()
}

fn uplift_per_seed(results: &[RunResult], node: u32) -> Vec<f64> {
    let sw = aucs(results, Some(node), Arm::Swarm);
    let sa = aucs(results, Some(node), Arm::Standalone);
    sw.iter().zip(&sa).map(|(a, b)| a - b).collect()
}

fn fmt_list(xs: &[f64]) -> String {
    let parts: Vec<String> = xs.iter().map(|x| format!("{x:+.4}")).collect();
    format!("[{}]", parts.join(", "))
}

fn scarce_uplift(results: &[RunResult], secs: f64) -> Outcome {
    let ups = uplift_per_seed(results, 0);
    let m = mean(&ups);
    let positive = ups.iter().filter(|u| **u > 0.0).count();
    outcome(
        results.len() == SEEDS && m >= 0.005 && positive >= 4 && secs < 300.0,
        format!(
            "node 0 uplift mean {m:+.4}, per seed {}, positive {positive}/5, runtime {secs:.1}s",
            fmt_list(&ups)
        ),
    )
}

fn ordering(named: &[(&str, &[RunResult])]) -> Outcome {
    let mut ok = true;
    let mut worst_mean: f64 = f64::NEG_INFINITY;
    let mut worst_seed: f64 = f64::NEG_INFINITY;
    for (_, results) in named {
        let central = aucs(results, None, Arm::Centralized);
        let nodes = results[0].nodes as u32;
        for k in 0..nodes {
            let swarm = aucs(results, Some(k), Arm::Swarm);
            let excess = mean(&swarm) - mean(&central);
            worst_mean = worst_mean.max(excess);
            ok &= mean(&central) >= mean(&swarm) - 0.02;
            for (s, c) in swarm.iter().zip(&central) {
                worst_seed = worst_seed.max(s - c);
                ok &= s - c <= 0.02;
            }
        }
    }
    let names: Vec<&str> = named.iter().map(|(n, _)| *n).collect();
    outcome(
        ok,
        format!(
            "over {}: max(mean swarm - mean centralized) {worst_mean:+.4}, max per-seed excess {worst_seed:+.4} (limit 0.02)",
            names.join(", ")
        ),
    )
}

fn gap_reduction(results: &[RunResult]) -> Outcome {
    let per_seed = |arm: Arm| -> Vec<f64> {
        results
            .iter()
            .map(|r| {
                let gaps: Vec<f64> = r
                    .cells
                    .iter()
                    .filter(|c| c.arm == arm)
                    .filter_map(|c| c.metrics.map(|m| m.gap))
                    .collect();
                mean(&gaps)
            })
            .collect()
    };
    let swarm = per_seed(Arm::Swarm);
    let standalone = per_seed(Arm::Standalone);
    let strict = swarm.iter().zip(&standalone).filter(|(s, l)| s < l).count();
    let (ms, ml) = (mean(&swarm), mean(&standalone));
    outcome(
        ms <= ml && strict >= 3,
        format!("mean gap swarm {ms:.4} vs standalone {ml:.4}; strictly lower in {strict}/5 seeds"),
    )
}

fn downsample(results: &[RunResult]) -> Outcome {
    let sw = mean(&aucs(results, Some(2), Arm::Swarm));
    let sa = mean(&aucs(results, Some(2), Arm::Standalone));
    outcome(
        sw > sa,
        format!("node 2 swarm {sw:.4} vs standalone {sa:.4}"),
    )
}

fn exact(x: f64) -> BigRational {
    BigRational::from_float(x).expect("finite")
}

fn fedavg_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xFEDA);
    let started = Instant::now();
    let mut worst: f64 = 0.0;
    for _ in 0..1_000 {
        let k = rng.random_range(1..=8);
        let dim = rng.random_range(1..=64);
        let scale = 10f64.powi(rng.random_range(-3..=2));
        let updates: Vec<ModelUpdate> = (0..k)
            .map(|i| ModelUpdate {
                weights: WeightVector::from_flat(
                    (0..dim)
                        .map(|_| rng.random_range(-1.0..1.0) * scale)
                        .collect(),
                )
                .unwrap(),
                sample_count: rng.random_range(1..=1_000_000),
                node_id: i,
                round: 0,
                epoch: 0,
            })
            .collect();
        let got = fedavg(&updates).expect("valid updates");
        let total: BigInt = updates.iter().map(|u| BigInt::from(u.sample_count)).sum();
        for i in 0..dim {
            let mut acc = BigRational::zero();
            for u in &updates {
                acc += exact(u.weights.values()[i])
                    * BigRational::from_integer(BigInt::from(u.sample_count));
            }
            let want = (acc / BigRational::from_integer(total.clone()))
                .to_f64()
                .expect("representable");
            worst = worst.max((got.values()[i] - want).abs());
        }
    }
    let secs = started.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-12 && secs < 10.0,
        format!("1000 sets, max |fedavg - exact| {worst:.3e}, {secs:.2}s"),
    )
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xA0C);
    let mut worst: f64 = 0.0;
    let mut with_ties = 0;
    for set in 0..1_000 {
        let n = rng.random_range(2..=200);
        let coarse = set % 2 == 0;
        let scores: Vec<f64> = (0..n)
            .map(|_| {
                if coarse {
                    rng.random_range(0..8) as f64 / 4.0
                } else {
                    rng.random::<f64>()
                }
            })
            .collect();
        let mut labels: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        labels[0] = 0;
        labels[1] = 1;
        let (mut twice_wins, mut pos, mut neg) = (0u64, 0u64, 0u64);
        let mut tied = false;
        for i in (0..n).filter(|&i| labels[i] == 1) {
            pos += 1;
            for j in (0..n).filter(|&j| labels[j] == 0) {
                if scores[i] > scores[j] {
                    twice_wins += 2;
                } else if scores[i] == scores[j] {
                    twice_wins += 1;
                    tied = true;
                }
            }
        }
        neg += (n as u64) - pos;
        with_ties += usize::from(tied);
        let want = twice_wins as f64 / (2 * pos * neg) as f64;
        let got = roc_auc(&scores, &labels).expect("both classes");
        worst = worst.max((got - want).abs());
    }
    outcome(
        worst <= 1e-12,
        format!(
            "1000 sets ({with_ties} with tied cross-class pairs), max |rank - pairs| {worst:.3e}"
        ),
    )
}

fn gradient_check() -> Outcome {
    const H: f64 = 1e-6;
    // Relative error uses max(|analytic|, |numeric|, FLOOR); entries smaller
    // than the floor are compared on an absolute scale.
    const FLOOR: f64 = 1e-6;
    let mut rng = ChaCha8Rng::seed_from_u64(0x6AD);
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    let mut entries = 0;
    while cases < 20 {
        let spec = ModelSpec {
            input_dim: rng.random_range(1..=8),
            hidden_dim: if cases % 4 == 0 {
                0
            } else {
                rng.random_range(1..=8)
            },
        };
        let n = rng.random_range(1..=16);
        let len = spec.shape().total_len();
        let w: Vec<f64> = (0..len).map(|_| rng.random_range(-0.8..0.8)).collect();
        let x: Vec<f64> = (0..n * spec.input_dim)
            .map(|_| rng.random_range(-1.5..1.5))
            .collect();
        let y: Vec<u8> = (0..n).map(|_| rng.random_range(0..=1)).collect();
        // Finite differences are meaningless across a ReLU kink.
        if near_kink(&spec, &w, &x, 1e-3) {
            continue;
        }
        let weights = WeightVector::new(w.clone(), spec.shape()).unwrap();
        let (_, grad) = spec.loss_and_gradient(&weights, &x, &y).unwrap();
        for i in 0..len {
            let mut plus = w.clone();
            plus[i] += H;
            let mut minus = w.clone();
            minus[i] -= H;
            let f = |v: Vec<f64>| {
                let wv = WeightVector::new(v, spec.shape()).unwrap();
                spec.loss_and_gradient(&wv, &x, &y).unwrap().0
            };
            let numeric = (f(plus) - f(minus)) / (2.0 * H);
            let analytic = grad.values()[i];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FLOOR);
            worst = worst.max(rel);
            entries += 1;
        }
        cases += 1;
    }
    outcome(
        worst < 1e-4,
        format!("20 cases, {entries} entries, h=1e-6, max rel error {worst:.3e}"),
    )
}

fn near_kink(spec: &ModelSpec, w: &[f64], x: &[f64], margin: f64) -> bool {
    let (d, h) = (spec.input_dim, spec.hidden_dim);
    if h == 0 {
        return false;
    }
    x.chunks_exact(d).any(|row| {
        (0..h).any(|j| {
            let z = w[h * d + j] + (0..d).map(|i| w[j * d + i] * row[i]).sum::<f64>();
            z.abs() < margin
        })
    })
}

fn random_message(rng: &mut ChaCha8Rng) -> SwarmMessage {
    let text = |rng: &mut ChaCha8Rng| -> String {
        let len = rng.random_range(0..40);
        (0..len)
            .map(|_| char::from(rng.random_range(b' '..=b'~')))
            .collect()
    };
    let payload = match rng.random_range(0..5) {
        0 => Payload::Hello {
            listen_addr: text(rng),
        },
        1 => Payload::PeerList(
            (0..rng.random_range(0..10))
                .map(|_| PeerInfo {
                    node_id: rng.random(),
                    addr: text(rng),
                    last_seen_ms: rng.random(),
                })
                .collect(),
        ),
        2 => Payload::Weights(WeightsBody {
            round: rng.random(),
            epoch: rng.random(),
            sample_count: rng.random(),
            values: (0..rng.random_range(0..200))
                .map(|_| f64::from_bits(rng.random::<u64>()))
                .filter(|v| !v.is_nan())
                .collect(),
        }),
        3 => Payload::Ack {
            acked: [
                Kind::Hello,
                Kind::PeerList,
                Kind::Weights,
                Kind::Ack,
                Kind::Leave,
            ][rng.random_range(0..5)],
            status: [AckStatus::Ok, AckStatus::IdCollision, AckStatus::Rejected]
                [rng.random_range(0..3)],
            round: rng.random(),
        },
        _ => Payload::Leave,
    };
    SwarmMessage::new(rng.random(), payload)
}

fn codec_robustness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xC0DEC);
    let mut roundtrip_fail = 0;
    let mut frames = Vec::new();
    for _ in 0..10_000 {
        let msg = random_message(&mut rng);
        let bytes = encode(&msg).expect("encodable");
        match decode(&bytes) {
            Ok(back) if back == msg => {}
            _ => roundtrip_fail += 1,
        }
        frames.push(bytes);
    }

    // Half pure noise, half valid frames with random byte flips, truncation
    // or extension, so the fuzz also reaches the payload parsers.
    let mut crashes = 0;
    let mut errors = 0;
    for i in 0..10_000 {
        let input: Vec<u8> = if i % 2 == 0 {
            (0..rng.random_range(0..256))
                .map(|_| rng.random())
                .collect()
        } else {
            let mut f = frames[rng.random_range(0..frames.len())].clone();
            match rng.random_range(0..3) {
                0 if !f.is_empty() => {
                    for _ in 0..rng.random_range(1..4) {
                        let at = rng.random_range(0..f.len());
                        f[at] = rng.random();
                    }
                }
                1 => f.truncate(rng.random_range(0..=f.len())),
                _ => f.extend((0..rng.random_range(1..16)).map(|_| rng.random::<u8>())),
            }
            f
        };
        match std::panic::catch_unwind(|| decode(&input)) {
            Ok(Ok(_)) => {}
            Ok(Err(_)) => errors += 1,
            Err(_) => crashes += 1,
        }
    }
    outcome(
        roundtrip_fail == 0 && crashes == 0,
        format!("10000 round-trips ({roundtrip_fail} mismatches); 10000 fuzz inputs, {crashes} panics, {errors} named errors"),
    )
}

fn determinism_and_drops(base: &[RunResult]) -> Outcome {
    let spec = scenario("unbalanced_10_30_30_30");
    let again = run_seed(&spec, spec.seeds[0], SwarmTransport::Sim).expect("rerun");
    let identical = again.to_json() == base[0].to_json();

    let mut lossy = spec.clone();
    lossy.name = "unbalanced_10_30_30_30_drop20".into();
    lossy.network.drop_prob = 0.2;
    lossy.arms.centralized = false;
    let results = run_scenario(&lossy, None, SwarmTransport::Sim).expect("lossy scenario runs");
    let mut complete = true;
    for r in &results {
        for c in r.cells.iter().filter(|c| c.arm == Arm::Swarm) {
            let id = c.node.expect("swarm cell has a node");
            let rounds = &r.rounds[&id];
            let epochs: usize = rounds.iter().map(|x| x.epochs_run).sum();
            complete &= c.ok
                && matches!(c.stop, Some(StopReason::MaxEpochs | StopReason::EarlyStop))
                && Some(epochs) == c.epochs;
        }
    }
    let ups = uplift_per_seed(&results, 0);
    let positive = ups.iter().filter(|u| **u > 0.0).count();
    let dropped: usize = results
        .iter()
        .filter_map(|r| r.network.as_ref())
        .map(|n| n.dropped)
        .sum();
    outcome(
        identical && complete && positive >= 3,
        format!(
            "rerun byte-identical: {identical}; drop 0.2: all rounds complete {complete}, {dropped} frames dropped, node 0 uplift {} positive {positive}/5",
            fmt_list(&ups)
        ),
    )
}

fn gate_semantics() -> Outcome {
    let mut spec = scenario("unbalanced_10_30_30_30");
    spec.name = "gate_zero_weight".into();
    spec.arms.centralized = false;
    spec.arms.standalone = false;
    let adversary = 3;
    spec.behaviors.insert(
        adversary,
        Behavior::ZeroWeights {
            claimed_samples: 1_000_000,
        },
    );
    assert_eq!(spec.node.gate.theta, 0.8);
    let results =
        run_scenario(&spec, None, SwarmTransport::Sim).expect("adversarial scenario runs");
    let mut rounds = 0;
    let mut violations = 0;
    let mut accepted = 0;
    let mut min_ratio = f64::INFINITY;
    for r in &results {
        for (id, reports) in r.rounds.iter().filter(|(id, _)| **id != adversary) {
            for rep in reports {
                rounds += 1;
                let pre = rep.local_val_auc;
                let post = rep.adopted_val_auc;
                // The rule, checked independently of the gate's own verdict.
                let expect_accept = rep.candidate_val_auc >= 0.8 * pre;
                if post < 0.8 * pre || (rep.peers_merged > 0 && rep.gate_accepted != expect_accept)
                {
                    violations += 1;
                    eprintln!("node {id} round {}: pre {pre} post {post}", rep.round);
                }
                accepted += usize::from(rep.gate_accepted && rep.peers_merged > 0);
                min_ratio = min_ratio.min(post / pre);
            }
        }
    }
    outcome(
        violations == 0 && rounds > 0,
        format!("{rounds} victim rounds over 5 seeds, {accepted} merges accepted, min post/pre {min_ratio:.4}, {violations} violations"),
    )
}

fn main() {
    let mut lines: Vec<(&str, Outcome)> = Vec::new();

    let started = Instant::now();
    let unbalanced = run_scenario(
        &scenario("unbalanced_10_30_30_30"),
        None,
        SwarmTransport::Sim,
    )
    .expect("scenario runs");
    let secs = started.elapsed().as_secs_f64();
    let n2 = run_scenario(&scenario("downsample_n2_25"), None, SwarmTransport::Sim)
        .expect("scenario runs");
    let n3 = run_scenario(&scenario("downsample_n3_05"), None, SwarmTransport::Sim)
        .expect("scenario runs");

    lines.push(("scarce-node uplift", scarce_uplift(&unbalanced, secs)));
    lines.push((
        "ordering",
        ordering(&[
            ("unbalanced_10_30_30_30", &unbalanced),
            ("downsample_n2_25", &n2),
            ("downsample_n3_05", &n3),
        ]),
    ));
    lines.push(("generalization gap", gap_reduction(&unbalanced)));
    lines.push(("downsample resilience", downsample(&n2)));
    lines.push(("fedavg oracle", fedavg_oracle()));
    lines.push(("auc oracle", auc_oracle()));
    lines.push(("gradient check", gradient_check()));
    lines.push(("protocol robustness", codec_robustness()));
    lines.push((
        "determinism & fault tolerance",
        determinism_and_drops(&unbalanced),
    ));
    lines.push(("gate semantics", gate_semantics()));

    let mut failed = 0;
    for (name, o) in &lines {
        println!(
            "{} {name}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        lines.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
