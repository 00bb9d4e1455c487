use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use wsguard::flowmeter::{FeatureRecord, ModelInputs};
use wsguard::trafficmodel::{dnn_predict, kfold_cv, train_dnn, train_dnn_inputs, TabularConfig};

/// Gaussian clusters in 77 dimensions; class 1 is centered at `shift` in
/// every coordinate, class 0 at the origin.
fn fixture(
    n: usize,
    minority_every: usize,
    shift: f64,
    sigma: f64,
    seed: u64,
) -> (Vec<ModelInputs>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
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

fn centroid(rows: &[ModelInputs], labels: &[usize], class: usize) -> Vec<f64> {
    let mine: Vec<&ModelInputs> = rows
        .iter()
        .zip(labels)
        .filter(|(_, &y)| y == class)
        .map(|(r, _)| r)
        .collect();
    (0..77)
        .map(|j| mine.iter().map(|r| r.continuous[j]).sum::<f64>() / mine.len() as f64)
        .collect()
}

fn nearest_centroid(train: &[ModelInputs], labels: &[usize], test: &[ModelInputs]) -> Vec<usize> {
    let (c0, c1) = (centroid(train, labels, 0), centroid(train, labels, 1));
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>();
    test.iter()
        .map(|r| usize::from(d(&r.continuous, &c1) < d(&r.continuous, &c0)))
        .collect()
}

#[test]
fn separable_clusters_with_defaults() {
    let (train_x, train_y) = fixture(1000, 2, 2.0, 1.0, 1);
    let (test_x, test_y) = fixture(400, 2, 2.0, 1.0, 2);
    let (model, history) = train_dnn_inputs(&train_x, &train_y, &TabularConfig::default()).unwrap();
    assert_eq!(history.len(), 2);
    let preds = dnn_predict(&model, &test_x).unwrap();
    let oracle = nearest_centroid(&train_x, &train_y, &test_x);
    let acc = preds
        .iter()
        .zip(&test_y)
        .filter(|(p, &y)| p.class == y)
        .count() as f64
        / 400.0;
    let agree = preds
        .iter()
        .zip(&oracle)
        .filter(|(p, &o)| p.class == o)
        .count() as f64
        / 400.0;
    assert!(acc >= 0.99, "accuracy {acc}");
    assert!(agree >= 0.99, "agreement with nearest centroid {agree}");
    assert!(preds
        .iter()
        .all(|p| (p.p_benign + p.p_webshell - 1.0).abs() < 1e-12));
}

#[test]
fn weighting_helps_the_minority() {
    let mut recall = [0.0; 2];
    for seed in 0..10 {
        let (train_x, train_y) = fixture(2000, 20, 0.25, 1.0, 100 + seed);
        let (test_x, test_y) = fixture(2000, 20, 0.25, 1.0, 200 + seed);
        for (slot, weighted) in [(0, false), (1, true)] {
            let cfg = TabularConfig {
                weighted,
                seed,
                ..Default::default()
            };
            let (m, _) = train_dnn_inputs(&train_x, &train_y, &cfg).unwrap();
            let preds = dnn_predict(&m, &test_x).unwrap();
            let tp = preds
                .iter()
                .zip(&test_y)
                .filter(|(p, &y)| y == 1 && p.class == 1)
                .count();
            recall[slot] += tp as f64 / test_y.iter().filter(|&&y| y == 1).count() as f64 / 10.0;
        }
    }
    assert!(
        recall[1] >= recall[0],
        "weighted {} unweighted {}",
        recall[1],
        recall[0]
    );
}

fn record(m: &ModelInputs, label: usize, i: usize) -> FeatureRecord {
    FeatureRecord {
        flow_id: format!("flow-{i}"),
        src_ip: format!("10.0.{}.{}", i / 256, i % 256),
        src_port: 40000,
        dst_ip: "10.9.9.9".into(),
        dst_port: m.categorical[0] as u16,
        protocol: m.categorical[1] as u8,
        timestamp_us: 1_519_977_600_000_000 + i as i64,
        features: m.continuous[1..].to_vec(),
        label: Some(if label == 1 { "Bot" } else { "Benign" }.into()),
    }
}

#[test]
fn records_in_five_folds() {
    let (x, y) = fixture(500, 2, 2.0, 1.0, 7);
    let records: Vec<FeatureRecord> = x
        .iter()
        .zip(&y)
        .enumerate()
        .map(|(i, (m, &l))| record(m, l, i))
        .collect();
    let report = kfold_cv(&records, 5, &TabularConfig::default()).unwrap();
    assert_eq!(report.folds.len(), 5);
    for f in &report.folds {
        assert!(
            f.metrics.accuracy >= 99.0,
            "fold {} accuracy {}",
            f.fold,
            f.metrics.accuracy
        );
        assert_eq!(f.test_size, 100);
    }
    let (model, _) = train_dnn(&records, &TabularConfig::default()).unwrap();
    assert_eq!(model.vocabs[0].values, [80, 443, 8080]);
}

#[test]
fn unlabelled_records_are_rejected() {
    let (x, y) = fixture(10, 2, 2.0, 1.0, 3);
    let mut records: Vec<FeatureRecord> = x
        .iter()
        .zip(&y)
        .enumerate()
        .map(|(i, (m, &l))| record(m, l, i))
        .collect();
    records[4].label = None;
    assert!(train_dnn(&records, &TabularConfig::default()).is_err());
}
