use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EvalError;

/// Default train share.
pub const DEFAULT_TRAIN_RATIO: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetItem {
    pub path: PathBuf,
    pub label: usize,
    /// Where the sample was collected from (repository, archive, ...).
    pub source: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<DatasetItem>,
    pub test: Vec<DatasetItem>,
}

/// Splits `items` into train and test.
///
/// With `by_source`, whole sources go to one side: sources are taken largest
/// first (ties by name) and each joins train while train stays within
/// `ratio * total` (the first source always does). Otherwise every label is
/// shuffled with `seed` and split so the train total is `round(ratio * n)`,
/// with per-label shares allotted by largest remainder.
pub fn split_dataset(
    items: &[DatasetItem],
    ratio: f64,
    seed: u64,
    by_source: bool,
) -> Result<Split, EvalError> {
    if items.is_empty() {
        return Err(EvalError::Input("nothing to split".into()));
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(EvalError::Input(format!("ratio {ratio} outside (0, 1)")));
    }
    if by_source {
        source_split(items, ratio)
    } else {
        Ok(stratified_split(items, ratio, seed))
    }
}

fn source_split(items: &[DatasetItem], ratio: f64) -> Result<Split, EvalError> {
    let mut groups: BTreeMap<&str, Vec<&DatasetItem>> = BTreeMap::new();
    for it in items {
        groups.entry(it.source.as_str()).or_default().push(it);
    }
    if groups.len() < 2 {
        return Err(EvalError::Input(
            "splitting by source needs at least two sources".into(),
        ));
    }
    let mut order: Vec<(&str, Vec<&DatasetItem>)> = groups.into_iter().collect();
    order.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));
    let target = ratio * items.len() as f64;
    let mut train_sources = Vec::new();
    let mut test_sources = Vec::new();
    let mut train_n = 0usize;
    for (name, group) in &order {
        if train_sources.is_empty() || (train_n + group.len()) as f64 <= target + 1e-9 {
            train_n += group.len();
            train_sources.push(*name);
        } else {
            test_sources.push(*name);
        }
    }
    if test_sources.is_empty() {
        test_sources.push(train_sources.pop().expect("at least two sources"));
    }
    let pick = |names: &[&str]| -> Vec<DatasetItem> {
        items
            .iter()
            .filter(|it| names.contains(&it.source.as_str()))
            .cloned()
            .collect()
    };
    Ok(Split {
        train: pick(&train_sources),
        test: pick(&test_sources),
    })
}

/// Per-label counts summing to `round(ratio * total)`.
fn allot(counts: &[usize], ratio: f64) -> Vec<usize> {
    let total: usize = counts.iter().sum();
    let want = (ratio * total as f64).round() as usize;
    let exact: Vec<f64> = counts.iter().map(|&c| c as f64 * ratio).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..counts.len()).collect();
    order.sort_by(|&a, &b| {
        (exact[b] - exact[b].floor())
            .total_cmp(&(exact[a] - exact[a].floor()))
            .then(a.cmp(&b))
    });
    let mut missing = want.saturating_sub(out.iter().sum());
    for &i in order.iter().cycle().take(counts.len() * 2) {
        if missing == 0 {
            break;
        }
        if out[i] < counts[i] {
            out[i] += 1;
            missing -= 1;
        }
    }
    out
}

fn stratified_split(items: &[DatasetItem], ratio: f64, seed: u64) -> Split {
    let mut by_label: BTreeMap<usize, Vec<&DatasetItem>> = BTreeMap::new();
    for it in items {
        by_label.entry(it.label).or_default().push(it);
    }
    let counts: Vec<usize> = by_label.values().map(Vec::len).collect();
    let shares = allot(&counts, ratio);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut split = Split::default();
    for ((_, mut group), n_train) in by_label.into_iter().zip(shares) {
        group.shuffle(&mut rng);
        split
            .train
            .extend(group[..n_train].iter().map(|&it| it.clone()));
        split
            .test
            .extend(group[n_train..].iter().map(|&it| it.clone()));
    }
    split
}

/// Stratified k-fold assignment: returns `k` disjoint index lists (the test
/// indices of each fold) covering `0..labels.len()`. Each label's indices are
/// shuffled with `seed` and dealt round-robin, continuing across labels so
/// fold sizes differ by at most one.
pub fn stratified_folds(
    labels: &[usize],
    k: usize,
    seed: u64,
) -> Result<Vec<Vec<usize>>, EvalError> {
    if k < 2 {
        return Err(EvalError::Input("k-fold needs k >= 2".into()));
    }
    if labels.len() < k {
        return Err(EvalError::Input(format!(
            "{} samples cannot fill {k} folds",
            labels.len()
        )));
    }
    let mut by_label: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &y) in labels.iter().enumerate() {
        by_label.entry(y).or_default().push(i);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut next = 0;
    for (_, mut idx) in by_label {
        idx.shuffle(&mut rng);
        for i in idx {
            folds[next].push(i);
            next = (next + 1) % k;
        }
    }
    for f in &mut folds {
        f.sort_unstable();
    }
    Ok(folds)
}

/// Training indices for fold `fold` (everything not in that fold).
pub fn fold_train_indices(folds: &[Vec<usize>], fold: usize) -> Vec<usize> {
    let mut out: Vec<usize> = folds
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != fold)
        .flat_map(|(_, f)| f.iter().copied())
        .collect();
    out.sort_unstable();
    out
}
