//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! required criterion fails.
//!
//! Criterion 11 runs only when `WSGUARD_CSE_CSV` names a CSE-CIC-IDS2018
//! day file (e.g. `03-02-2018.csv`); otherwise it is reported as SKIP.

mod common;

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use common::{capture, Packet};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde_json::Value;

use wsguard::flowmeter::{
    assemble_flows, compute_features, parse_pcap, read_csv, ModelInputs, TcpFlags,
    CONTINUOUS_FEATURES, DEFAULT_ACTIVITY_TIMEOUT, DEFAULT_FLOW_TIMEOUT,
};
use wsguard::inspector::{read_eve, Daemon, InspectorConfig, InspectorState, RULE_FILE};
use wsguard::opcode::{oiva, Language, OpcodeListing, OpcodeVocabulary};
use wsguard::rulelang::{match_buffer, parse_rules, PatternBody};
use wsguard::srcmodel::{build_cnn, cnn_predict_batch, train_cnn, CnnConfig};
use wsguard::tensornet::{class_weights, grad_check, ClassWeights, LayerSpec, ModelGraph, Tensor};
use wsguard::trafficmodel::{
    build_dnn, dnn_predict, kfold_cv, kfold_cv_inputs, train_dnn_inputs, StubClassifier,
    TabularConfig,
};

type Check = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(f64::MIN_POSITIVE)
}

// 1 --------------------------------------------------------------------------

fn eval_metrics_cli(tp: u64, fp: u64, fn_: u64, tn: u64) -> Result<Value, String> {
    let out = Command::new(env!("CARGO_BIN_EXE_wsguard"))
        .args(["--json", "eval", "metrics"])
        .args(["--tp", &tp.to_string(), "--fp", &fp.to_string()])
        .args(["--fn", &fn_.to_string(), "--tn", &tn.to_string()])
        .output()
        .map_err(|e| e.to_string())?;
    ensure(out.status.success(), || {
        format!("exit {:?}", out.status.code())
    })?;
    serde_json::from_slice(&out.stdout).map_err(|e| e.to_string())
}

fn metric_oracle() -> Check {
    let keys = [
        "accuracy",
        "precision",
        "recall",
        "specificity",
        "f1",
        "fpr",
        "fnr",
    ];
    // (counts, published panel, tolerance); NaN marks a metric the table omits.
    let tables: [(&str, [u64; 4], [f64; 7], f64); 4] = [
        (
            "yara",
            [709, 8, 108, 1447],
            [94.89, 98.88, 86.76, 99.45, 92.43, 0.55, 13.24],
            0.05,
        ),
        (
            "cnn",
            [807, 17, 10, 1438],
            [98.81, 97.94, 98.78, 98.83, 98.35, 1.17, 1.22],
            0.0,
        ),
        (
            "hybrid",
            [809, 17, 8, 1438],
            [98.90, 97.94, 99.02, 98.83, 98.48, 1.17, 0.98],
            0.0,
        ),
        (
            "dnn",
            [87794, 48, 58, 281645],
            [99.97, 99.94, 99.93, f64::NAN, 99.94, 0.02, 0.07],
            0.05,
        ),
    ];
    let mut worst: f64 = 0.0;
    for (name, [tp, fp, fn_, tn], expect, tol) in tables {
        let got = eval_metrics_cli(tp, fp, fn_, tn)?;
        for (k, e) in keys.iter().zip(expect) {
            if e.is_nan() {
                continue;
            }
            let g = got[k].as_f64().ok_or_else(|| format!("{name}: no {k}"))?;
            // Exact tables compare at two decimals.
            ensure(close(g, e, tol + 1e-9), || {
                format!("{name} {k}: got {g}, table {e}")
            })?;
            worst = worst.max((g - e).abs());
        }
    }
    Ok(format!("4 tables, max deviation {worst:.2} pp"))
}

// 2 --------------------------------------------------------------------------

fn weighted_loss_oracle() -> Check {
    let w = class_weights(180_079, 7_210).map_err(|e| e.to_string())?;
    ensure(
        close(w.benign, 0.520019, 1e-5) && close(w.webshell, 12.98814, 1e-5),
        || format!("got ({}, {})", w.benign, w.webshell),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let (nb, nw) = (
            rng.gen_range(1..10_000_000usize),
            rng.gen_range(1..10_000_000usize),
        );
        let w = class_weights(nb, nw).map_err(|e| e.to_string())?;
        let lhs = nb as f64 * w.benign + nw as f64 * w.webshell;
        let rhs = (nb + nw) as f64;
        ensure(rel_close(lhs, rhs, 1e-9), || {
            format!("({nb}, {nw}): {lhs} vs {rhs}")
        })?;
    }
    ensure(class_weights(10, 0).is_err(), || {
        "single class accepted".into()
    })?;
    Ok(format!(
        "({:.6}, {:.5}); sum invariant on 1000 random pairs",
        w.benign, w.webshell
    ))
}

// 3 --------------------------------------------------------------------------

fn oiva_equivalence() -> Check {
    let pool: Vec<String> = (0..60).map(|i| format!("OP_{i}")).collect();
    let junk = ["op_1", "OP_", "OP_1x", "nop?", "#", "OP-2"];
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for case in 0..1000 {
        let mut names = pool.clone();
        names.shuffle(&mut rng);
        names.truncate(rng.gen_range(1..=30));
        let vocab = OpcodeVocabulary::new(names.clone(), "php").map_err(|e| e.to_string())?;
        let entries: Vec<String> = (0..rng.gen_range(0..40))
            .map(|_| {
                (0..rng.gen_range(1..=3))
                    .map(|_| {
                        if rng.gen_bool(0.2) {
                            junk[rng.gen_range(0..junk.len())].to_string()
                        } else {
                            pool[rng.gen_range(0..pool.len())].clone()
                        }
                    })
                    .collect::<Vec<_>>()
                    .join(" ")
            })
            .collect();
        let max_length = rng.gen_range(1..=50);
        let listing = OpcodeListing {
            source: String::new(),
            mnemonics: entries.clone(),
        };
        let got = oiva(&listing, &vocab, max_length).indices;

        // Reference: filter-map every token to its 1-based position, cut, pad.
        let mut want: Vec<u32> = entries
            .iter()
            .flat_map(|e| e.split_whitespace())
            .filter_map(|t| names.iter().position(|n| n == t).map(|p| p as u32 + 1))
            .take(max_length)
            .collect();
        want.resize(max_length, 0);
        ensure(got == want, || format!("case {case}: {got:?} != {want:?}"))?;
    }
    Ok("1000 random cases identical".into())
}

// 4 --------------------------------------------------------------------------

fn uniform(shape: Vec<usize>, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn index_tensor(shape: Vec<usize>, vocab: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(
        shape,
        (0..n).map(|_| rng.gen_range(0..vocab) as f64).collect(),
    )
    .unwrap()
}

fn gradient_soundness() -> Check {
    let dense = |i, o| LayerSpec::Dense {
        inputs: i,
        outputs: o,
    };
    let labels = [0, 1, 1, 0, 1];
    let mut cases: Vec<(&str, ModelGraph, Tensor, Option<ClassWeights>)> = Vec::new();
    let mut add = |name, specs: Vec<LayerSpec>, shape: Vec<usize>, x: Tensor| {
        let g = ModelGraph::build(specs, shape, 7).map_err(|e| format!("{name}: {e}"))?;
        cases.push((name, g, x, None));
        Ok::<(), String>(())
    };
    add("dense", vec![dense(4, 2)], vec![4], uniform(vec![5, 4], 1))?;
    add(
        "relu",
        vec![dense(4, 6), LayerSpec::Relu, dense(6, 2)],
        vec![4],
        uniform(vec![5, 4], 2),
    )?;
    add(
        "batchnorm",
        vec![dense(4, 6), LayerSpec::batch_norm(6), dense(6, 2)],
        vec![4],
        uniform(vec![5, 4], 3),
    )?;
    add(
        "dropout",
        vec![dense(4, 6), LayerSpec::Dropout { rate: 0.5 }, dense(6, 2)],
        vec![4],
        uniform(vec![5, 4], 4),
    )?;
    add(
        "embedding+flatten",
        vec![
            LayerSpec::Embedding {
                num_embeddings: 7,
                dim: 3,
                padding_index: Some(0),
            },
            LayerSpec::Flatten,
            dense(15, 2),
        ],
        vec![5],
        index_tensor(vec![5, 5], 7, 5),
    )?;
    add(
        "conv1d+maxpool",
        vec![
            LayerSpec::Conv1d {
                in_channels: 2,
                out_channels: 3,
                kernel: 3,
            },
            LayerSpec::GlobalMaxPool,
            dense(3, 2),
        ],
        vec![8, 2],
        uniform(vec![5, 8, 2], 6),
    )?;
    add(
        "columns+concat",
        vec![
            LayerSpec::Concat {
                branches: vec![
                    vec![
                        LayerSpec::Columns { start: 0, end: 1 },
                        LayerSpec::Embedding {
                            num_embeddings: 4,
                            dim: 2,
                            padding_index: None,
                        },
                        LayerSpec::Flatten,
                    ],
                    vec![LayerSpec::Columns { start: 1, end: 4 }],
                ],
            },
            dense(5, 2),
        ],
        vec![4],
        {
            let mut x = uniform(vec![5, 4], 8);
            for r in 0..5 {
                x.data_mut()[r * 4] = (r % 4) as f64;
            }
            x
        },
    )?;

    let cnn_cfg = CnnConfig {
        vocab_size: 9,
        max_length: 12,
        embedding_dim: 3,
        kernel_sizes: [2, 3, 4],
        num_filters: 3,
        ..CnnConfig::php(9)
    };
    let cnn = build_cnn(&cnn_cfg).map_err(|e| e.to_string())?;
    cases.push(("full cnn", cnn, index_tensor(vec![5, 12], 10, 9), None));

    let dnn = build_dnn([4, 3], [2, 2], 6, &[7, 5], 10).map_err(|e| e.to_string())?;
    let mut x = uniform(vec![5, 8], 11);
    for r in 0..5 {
        x.data_mut()[r * 8] = (r % 4) as f64;
        x.data_mut()[r * 8 + 1] = (r % 3) as f64;
    }
    cases.push(("full dnn", dnn, x.clone(), None));
    let dnn = build_dnn([4, 3], [2, 2], 6, &[7, 5], 12).map_err(|e| e.to_string())?;
    cases.push((
        "full dnn, weighted loss",
        dnn,
        x,
        Some(ClassWeights {
            benign: 0.6,
            webshell: 3.0,
        }),
    ));

    let mut worst: (f64, &str) = (0.0, "");
    let n = cases.len();
    for (name, mut g, x, w) in cases {
        let err = grad_check(&mut g, &x, &labels, w).map_err(|e| format!("{name}: {e}"))?;
        ensure(err < 1e-4, || {
            format!("{name}: max relative error {err:.3e}")
        })?;
        if err >= worst.0 {
            worst = (err, name);
        }
    }
    Ok(format!("{n} graphs, worst {:.2e} ({})", worst.0, worst.1))
}

// 5 --------------------------------------------------------------------------

const TRIGRAM: [&str; 3] = ["INCLUDE_OR_EVAL", "CONCAT", "DO_FCALL"];

fn planted_sequences(
    n: usize,
    vocab: &OpcodeVocabulary,
    filler: &[&str],
    max_length: usize,
    seed: u64,
) -> (Vec<wsguard::opcode::OciVector>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let has = |s: &[&str]| s.windows(3).any(|w| w == TRIGRAM);
    let mut rows = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let label = i % 2;
        let len = rng.gen_range(20..max_length - 3);
        let mut seq: Vec<&str> = loop {
            let s: Vec<&str> = (0..len)
                .map(|_| filler[rng.gen_range(0..filler.len())])
                .collect();
            if !has(&s) {
                break s;
            }
        };
        if label == 1 {
            let at = rng.gen_range(0..=seq.len());
            seq.splice(at..at, TRIGRAM);
        }
        let listing = OpcodeListing {
            source: String::new(),
            mnemonics: seq.iter().map(|s| s.to_string()).collect(),
        };
        rows.push(oiva(&listing, vocab, max_length));
        labels.push(label);
    }
    (rows, labels)
}

fn cnn_planted_signal() -> Check {
    let vocab = OpcodeVocabulary::builtin(Language::Php);
    // The trigram's members also appear as filler, so only their order carries the class.
    let mut filler: Vec<&str> = vocab
        .mnemonics()
        .iter()
        .take(37)
        .map(String::as_str)
        .collect();
    filler.extend(TRIGRAM);
    for t in TRIGRAM {
        ensure(vocab.index_of(t).is_some(), || {
            format!("{t} not in the PHP vocabulary")
        })?;
    }
    let max_length = 64;
    let (train_x, train_y) = planted_sequences(1600, &vocab, &filler, max_length, 51);
    let (test_x, test_y) = planted_sequences(400, &vocab, &filler, max_length, 52);
    let cfg = CnnConfig {
        max_length,
        epochs: 12,
        seed: 5,
        ..CnnConfig::php(vocab.len())
    };
    ensure(
        cfg.kernel_sizes == [3, 4, 5]
            && cfg.num_filters == 128
            && cfg.dropout_rate == 0.5
            && cfg.learning_rate == 0.001,
        || "PHP defaults changed".into(),
    )?;
    let (graph, history) = train_cnn(&train_x, &train_y, &cfg).map_err(|e| e.to_string())?;
    let p = cnn_predict_batch(&graph, &test_x).map_err(|e| e.to_string())?;
    let correct = p
        .iter()
        .zip(&test_y)
        .filter(|((b, w), &y)| usize::from(w >= b) == y)
        .count();
    let acc = correct as f64 / test_y.len() as f64;
    ensure(acc >= 0.95, || format!("test accuracy {:.2}%", acc * 100.0))?;
    Ok(format!(
        "test accuracy {:.2}% on 400 held out (2000 total, {} epochs, final loss {:.4})",
        acc * 100.0,
        history.len(),
        history.last().map_or(f64::NAN, |h| h.loss)
    ))
}

// 6, 7 -----------------------------------------------------------------------

/// Two spherical Gaussians in 77 dimensions; the minority (label 1) is
/// every `minority_every`-th row, centered at `shift` in each coordinate.
fn gaussian_fixture(
    n: usize,
    minority_every: usize,
    shift: f64,
    seed: u64,
) -> (Vec<ModelInputs>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).unwrap();
    (0..n)
        .map(|i| {
            let label = usize::from(i % minority_every == 0);
            let c = shift * label as f64;
            let continuous = (0..77).map(|_| c + noise.sample(&mut rng)).collect();
            (
                ModelInputs {
                    categorical: [[80, 443, 8080][i % 3], 6],
                    continuous,
                },
                label,
            )
        })
        .unzip()
}

fn dnn_separable() -> Check {
    let cfg = TabularConfig::default();
    ensure(
        cfg.hidden == [400, 100]
            && cfg.learning_rate == 0.003
            && cfg.batch_size == 64
            && cfg.epochs == 2,
        || "tabular defaults changed".into(),
    )?;
    let (train_x, train_y) = gaussian_fixture(1000, 2, 2.0, 61);
    let (test_x, test_y) = gaussian_fixture(400, 2, 2.0, 62);
    let (model, _) = train_dnn_inputs(&train_x, &train_y, &cfg).map_err(|e| e.to_string())?;
    let preds = dnn_predict(&model, &test_x).map_err(|e| e.to_string())?;
    let acc = preds
        .iter()
        .zip(&test_y)
        .filter(|(p, &y)| p.class == y)
        .count() as f64
        / test_y.len() as f64;
    ensure(acc >= 0.99, || {
        format!("held-out accuracy {:.2}%", acc * 100.0)
    })?;

    let (x, y) = gaussian_fixture(1500, 2, 2.0, 63);
    let report = kfold_cv_inputs(&x, &y, 5, &cfg).map_err(|e| e.to_string())?;
    let folds: Vec<f64> = report.folds.iter().map(|f| f.metrics.accuracy).collect();
    ensure(folds.len() == 5 && folds.iter().all(|&a| a >= 99.0), || {
        format!("fold accuracies {folds:?}")
    })?;
    let min = folds.iter().cloned().fold(f64::INFINITY, f64::min);
    Ok(format!(
        "held-out {:.2}%, 5-fold min {min:.2}%",
        acc * 100.0
    ))
}

fn imbalance_benefit() -> Check {
    let seeds = 10;
    // [unweighted, weighted] means
    let (mut recall, mut fpr_fnr) = ([0.0; 2], [0.0; 2]);
    for seed in 0..seeds {
        let (train_x, train_y) = gaussian_fixture(2000, 20, 0.25, 700 + seed);
        let (test_x, test_y) = gaussian_fixture(2000, 20, 0.25, 800 + seed);
        for (slot, weighted) in [(0, false), (1, true)] {
            let cfg = TabularConfig {
                weighted,
                seed,
                ..TabularConfig::default()
            };
            let (m, _) = train_dnn_inputs(&train_x, &train_y, &cfg).map_err(|e| e.to_string())?;
            let preds = dnn_predict(&m, &test_x).map_err(|e| e.to_string())?;
            let count = |y: usize, c: usize| {
                preds
                    .iter()
                    .zip(&test_y)
                    .filter(|(p, &t)| t == y && p.class == c)
                    .count()
            };
            let (tp, fn_, fp, tn) = (count(1, 1), count(1, 0), count(0, 1), count(0, 0));
            let r = tp as f64 / (tp + fn_) as f64;
            recall[slot] += 100.0 * r / seeds as f64;
            let fpr = fp as f64 / (fp + tn) as f64;
            fpr_fnr[slot] += 100.0 * (fpr + (1.0 - r)) / seeds as f64;
        }
    }
    ensure(recall[1] >= recall[0], || {
        format!(
            "minority recall weighted {:.2} < unweighted {:.2}",
            recall[1], recall[0]
        )
    })?;
    ensure(fpr_fnr[1] <= fpr_fnr[0] + 1.0, || {
        format!(
            "FPR+FNR weighted {:.2} vs unweighted {:.2}",
            fpr_fnr[1], fpr_fnr[0]
        )
    })?;
    Ok(format!(
        "mean minority recall {:.2}% vs {:.2}%, FPR+FNR {:.2} vs {:.2} pp (weighted vs plain)",
        recall[1], recall[0], fpr_fnr[1], fpr_fnr[0]
    ))
}

// 8 --------------------------------------------------------------------------

const ATTACKER: [u8; 4] = [203, 0, 113, 7];
const CLIENT: [u8; 4] = [192, 168, 1, 20];
const WEB: [u8; 4] = [192, 168, 1, 2];

fn two_flow_capture(dir: &Path) -> std::path::PathBuf {
    let t = 1_519_977_600_000_000;
    let packets = vec![
        Packet::tcp(t, ATTACKER, 51000, WEB, 8080, 0, TcpFlags::SYN),
        Packet::tcp(
            t + 1000,
            WEB,
            8080,
            ATTACKER,
            51000,
            0,
            TcpFlags::SYN | TcpFlags::ACK,
        ),
        Packet::tcp(
            t + 2000,
            ATTACKER,
            51000,
            WEB,
            8080,
            300,
            TcpFlags::PSH | TcpFlags::ACK,
        ),
        Packet::tcp(t + 5000, CLIENT, 52000, WEB, 80, 0, TcpFlags::SYN),
        Packet::tcp(
            t + 9000,
            CLIENT,
            52000,
            WEB,
            80,
            120,
            TcpFlags::PSH | TcpFlags::ACK,
        ),
    ];
    let path = dir.join("fixture.pcap");
    std::fs::write(&path, capture(&packets)).unwrap();
    path
}

fn run_daemon(
    ports: &[u32],
) -> Result<(Vec<wsguard::inspector::Alert>, Vec<String>, usize), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let pcap = two_flow_capture(dir.path());
    let rules_dir = dir.path().join("rules");
    std::fs::create_dir(&rules_dir).map_err(|e| e.to_string())?;
    let eve = dir.path().join("eve.json");
    let config = InspectorConfig {
        rules_dir: rules_dir.clone(),
        eve_log: Some(eve.clone()),
        ..Default::default()
    };
    let state = InspectorState::new(&config);
    let stub = StubClassifier {
        webshell_dst_ports: ports.to_vec(),
    };
    let daemon = Daemon::new(config, Box::new(stub), state);
    let result = daemon.inspect(&pcap).map_err(|e| e.to_string())?;
    let alerts = match std::fs::File::open(&eve) {
        Ok(f) => read_eve(std::io::BufReader::new(f)).map_err(|e| e.to_string())?,
        Err(_) => Vec::new(),
    };
    ensure(alerts == result.alerts, || {
        "EVE log differs from returned alerts".into()
    })?;
    let rules = std::fs::read_to_string(rules_dir.join(RULE_FILE))
        .map(|t| {
            t.lines()
                .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
                .map(str::to_string)
                .collect()
        })
        .unwrap_or_default();
    Ok((alerts, rules, result.stats.flows))
}

fn inspector_end_to_end() -> Check {
    let (alerts, rules, flows) = run_daemon(&[8080])?;
    ensure(flows == 2, || format!("{flows} flows"))?;
    ensure(alerts.len() == 1, || format!("{} alerts", alerts.len()))?;
    let a = &alerts[0];
    ensure(
        a.alert.category == "Webshell" && a.alert.severity == 1,
        || format!("{:?}", a.alert),
    )?;
    let tuple = (
        a.src_ip.as_str(),
        a.src_port,
        a.dest_ip.as_str(),
        a.dest_port,
        a.proto.as_str(),
    );
    ensure(
        tuple == ("203.0.113.7", 51000, "192.168.1.2", 8080, "TCP"),
        || format!("5-tuple {tuple:?}"),
    )?;
    ensure(rules.len() == 1, || format!("{} rules", rules.len()))?;
    ensure(
        rules[0].starts_with("drop ") && rules[0].contains("203.0.113.7"),
        || rules[0].clone(),
    )?;

    let (alerts, rules, _) = run_daemon(&[])?;
    ensure(alerts.is_empty() && rules.is_empty(), || {
        format!(
            "benign stub: {} alerts, {} rules",
            alerts.len(),
            rules.len()
        )
    })?;
    Ok("1 alert + 1 drop rule; benign stub gives none".into())
}

// 9 --------------------------------------------------------------------------

fn rule_engine_fidelity() -> Check {
    let listing = std::fs::read_to_string(concat!(
        env!("CARGO_MANIFEST_DIR"),
        "/tests/fixtures/rules/b374k_verbatim.yar"
    ))
    .map_err(|e| e.to_string())?;
    let set = parse_rules(&listing).map_err(|e| format!("B374k listing: {e}"))?;
    let rule = &set.rules()[0];
    let mut declared = 0;
    for p in &rule.strings {
        let PatternBody::Text { bytes, .. } = &p.body else {
            continue;
        };
        let mut subject = b"<?php /* padding */ ".to_vec();
        subject.extend(bytes);
        subject.extend(b" ?>");
        ensure(match_buffer(&set, "f.php", &subject).is_match(), || {
            format!("{} alone does not match", p.id)
        })?;
        declared += 1;
    }
    ensure(declared == 4, || format!("{declared} text strings"))?;
    ensure(
        !match_buffer(&set, "f.php", b"<?php echo 'hello'; ?>").is_match(),
        || "clean file matched".into(),
    )?;

    // OfExpr against brute force: every subset of present strings, then
    // random subjects with repeats, noise and shuffled order.
    let token = |i: usize| format!("@@T{i}@@");
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let checked = std::cell::Cell::new(0usize);
    let run = |n: usize,
               k: usize,
               listed: &[usize],
               present: &BTreeSet<usize>,
               rng: &mut ChaCha8Rng|
     -> Result<(), String> {
        let strings: String = (0..n)
            .map(|i| format!("$s{i} = \"{}\" ", token(i)))
            .collect();
        let target = if listed.len() == n {
            "them".to_string()
        } else {
            format!(
                "({})",
                listed
                    .iter()
                    .map(|i| format!("$s{i}"))
                    .collect::<Vec<_>>()
                    .join(", ")
            )
        };
        let text = format!("rule t {{ strings: {strings} condition: {k} of {target} }}");
        let set = parse_rules(&text).map_err(|e| format!("{text}: {e}"))?;
        let mut parts: Vec<String> = present.iter().map(|&i| token(i)).collect();
        for _ in 0..rng.gen_range(0..3) {
            if let Some(&i) = present.iter().next() {
                parts.push(token(i));
            }
        }
        parts.shuffle(rng);
        let noise: String = (0..rng.gen_range(0..20))
            .map(|_| rng.gen_range(b'a'..=b'z') as char)
            .collect();
        let subject = format!("{noise}{}{noise}", parts.join(&noise));
        let want = listed.iter().filter(|i| present.contains(i)).count() >= k;
        let got = match_buffer(&set, "", subject.as_bytes()).is_match();
        ensure(got == want, || format!("{text} on {subject:?}: got {got}"))?;
        checked.set(checked.get() + 1);
        Ok(())
    };
    for n in 1..=6 {
        let all: Vec<usize> = (0..n).collect();
        for k in 1..=n {
            for mask in 0u32..(1 << n) {
                let present = (0..n).filter(|i| mask & (1 << i) != 0).collect();
                run(n, k, &all, &present, &mut rng)?;
            }
        }
    }
    let exhaustive = checked.get();
    for _ in 0..500 {
        let n = rng.gen_range(1..=6);
        let mut listed: Vec<usize> = (0..n).filter(|_| rng.gen_bool(0.7)).collect();
        if listed.is_empty() {
            listed.push(0);
        }
        let k = rng.gen_range(1..=listed.len());
        let present = (0..n).filter(|_| rng.gen_bool(0.5)).collect();
        run(n, k, &listed, &present, &mut rng)?;
    }
    Ok(format!("B374k parses, each of 4 strings matches; {exhaustive} truth-table rows + 500 random subjects agree"))
}

// 10 -------------------------------------------------------------------------

fn flow_feature_oracle() -> Check {
    let (a, b) = ([10, 0, 0, 1], [10, 0, 0, 2]);
    let t = 1_519_977_600_000_000;
    let packets = [
        Packet::tcp(t, a, 50000, b, 80, 100, TcpFlags::PSH | TcpFlags::ACK),
        Packet::tcp(t + 500_000, b, 80, a, 50000, 60, TcpFlags::ACK),
        Packet::tcp(t + 1_000_000, a, 50000, b, 80, 200, TcpFlags::ACK),
    ];
    let read = parse_pcap(&capture(&packets)).map_err(|e| e.to_string())?;
    let flows = assemble_flows(
        &read.packets,
        DEFAULT_FLOW_TIMEOUT,
        DEFAULT_ACTIVITY_TIMEOUT,
    );
    ensure(flows.len() == 1, || format!("{} flows", flows.len()))?;
    let rec = compute_features(&flows[0]);

    // Hand arithmetic: forward payloads 100 and 200, one backward of 60.
    let fwd = [100.0f64, 200.0];
    let mean = (fwd[0] + fwd[1]) / 2.0;
    let sample_std =
        (fwd.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (fwd.len() - 1) as f64).sqrt();
    let expect = [
        ("Flow Duration", 1_000_000.0),
        ("Flow IAT Mean", 500_000.0),
        ("Fwd Pkt Len Std", sample_std),
        ("Flow Byts/s", (100.0 + 60.0 + 200.0) / 1.0),
        ("Flow Pkts/s", 3.0),
        ("Tot Fwd Pkts", 2.0),
        ("Tot Bwd Pkts", 1.0),
        ("TotLen Fwd Pkts", 300.0),
        ("Fwd Pkt Len Mean", mean),
        ("Down/Up Ratio", 0.0),
    ];
    for (name, want) in expect {
        let got = rec.get(name).ok_or_else(|| format!("no feature {name}"))?;
        let ok = if want == 0.0 {
            got == 0.0
        } else {
            rel_close(got, want, 1e-4)
        };
        ensure(ok, || format!("{name}: got {got}, want {want}"))?;
    }

    let single = parse_pcap(&capture(&packets[..1])).map_err(|e| e.to_string())?;
    let flows = assemble_flows(
        &single.packets,
        DEFAULT_FLOW_TIMEOUT,
        DEFAULT_ACTIVITY_TIMEOUT,
    );
    let rec = compute_features(&flows[0]);
    let mut zeroed = 0;
    for name in &CONTINUOUS_FEATURES[1..] {
        let v = rec.get(name).ok_or_else(|| format!("no feature {name}"))?;
        ensure(v.is_finite(), || format!("single packet: {name} = {v}"))?;
        if name.contains("IAT")
            || name.contains("/s")
            || name.contains("Std")
            || *name == "Flow Duration"
        {
            ensure(v == 0.0, || format!("single packet: {name} = {v}"))?;
            zeroed += 1;
        }
    }
    Ok(format!("10 hand-computed features match; single packet: all finite, {zeroed} rate/IAT/std features zero"))
}

// 11 -------------------------------------------------------------------------

fn extended_reproduction(path: &Path) -> Check {
    let read = read_csv(path).map_err(|e| e.to_string())?;
    let report =
        kfold_cv(&read.records, 5, &TabularConfig::default()).map_err(|e| e.to_string())?;
    let (acc, fpr) = (report.average.accuracy, report.average.fpr);
    ensure(acc >= 99.5 && fpr <= 0.1, || {
        format!("accuracy {acc:.2}%, FPR {fpr:.3}%")
    })?;
    Ok(format!(
        "{} flows ({} cells cleaned): accuracy {acc:.2}%, FPR {fpr:.3}% on {} threads",
        read.records.len(),
        read.cleaned_cells,
        std::thread::available_parallelism().map_or(1, |n| n.get())
    ))
}

struct Criterion {
    id: u8,
    name: &'static str,
    limit: Option<Duration>,
    run: fn() -> Check,
}

fn main() {
    let criteria = [
        Criterion {
            id: 1,
            name: "metric oracle",
            limit: Some(Duration::from_secs(1)),
            run: metric_oracle,
        },
        Criterion {
            id: 2,
            name: "weighted-loss oracle",
            limit: None,
            run: weighted_loss_oracle,
        },
        Criterion {
            id: 3,
            name: "OIVA equivalence",
            limit: Some(Duration::from_secs(5)),
            run: oiva_equivalence,
        },
        Criterion {
            id: 4,
            name: "gradient soundness",
            limit: Some(Duration::from_secs(30)),
            run: gradient_soundness,
        },
        Criterion {
            id: 5,
            name: "CNN planted signal",
            limit: Some(Duration::from_secs(300)),
            run: cnn_planted_signal,
        },
        Criterion {
            id: 6,
            name: "DNN separable fixture",
            limit: Some(Duration::from_secs(120)),
            run: dnn_separable,
        },
        Criterion {
            id: 7,
            name: "imbalance benefit",
            limit: None,
            run: imbalance_benefit,
        },
        Criterion {
            id: 8,
            name: "inspection end to end",
            limit: Some(Duration::from_secs(5)),
            run: inspector_end_to_end,
        },
        Criterion {
            id: 9,
            name: "rule engine fidelity",
            limit: None,
            run: rule_engine_fidelity,
        },
        Criterion {
            id: 10,
            name: "flow feature oracle",
            limit: None,
            run: flow_feature_oracle,
        },
    ];
    let filter: Vec<u8> = std::env::args()
        .skip(1)
        .filter_map(|a| a.parse().ok())
        .collect();
    let mut failed = 0;
    for c in criteria
        .iter()
        .filter(|c| filter.is_empty() || filter.contains(&c.id))
    {
        let start = Instant::now();
        let outcome =
            catch_unwind(AssertUnwindSafe(c.run)).unwrap_or_else(|_| Err("panicked".into()));
        let took = start.elapsed();
        let outcome = match (outcome, c.limit) {
            (Ok(_), Some(limit)) if took > limit => {
                Err(format!("took {took:.1?}, limit {limit:?}"))
            }
            (o, _) => o,
        };
        match outcome {
            Ok(detail) => println!("PASS [{:>2}] {}: {detail} ({took:.2?})", c.id, c.name),
            Err(why) => {
                failed += 1;
                println!("FAIL [{:>2}] {}: {why} ({took:.2?})", c.id, c.name);
            }
        }
    }
    if filter.is_empty() || filter.contains(&11) {
        match std::env::var_os("WSGUARD_CSE_CSV") {
            Some(p) => {
                let start = Instant::now();
                match extended_reproduction(Path::new(&p)) {
                    Ok(d) => println!("PASS [11] extended reproduction (optional): {d} ({:.2?})", start.elapsed()),
                    Err(e) => println!("FAIL [11] extended reproduction (optional, not counted): {e}"),
                }
            }
            None => println!("SKIP [11] extended reproduction (optional): set WSGUARD_CSE_CSV to a CSE-CIC-IDS2018 day CSV"),
        }
    }
    if failed > 0 {
        println!("{failed} required criteria failed");
        std::process::exit(1);
    }
}
