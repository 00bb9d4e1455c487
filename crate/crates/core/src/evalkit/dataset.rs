use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use walkdir::WalkDir;

use super::EvalError;
use crate::rulelang::{match_buffer, RuleSet};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Duplicate {
    pub path: PathBuf,
    pub kept: PathBuf,
    pub hash: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DedupOutcome {
    /// Kept files with their SHA-256, in sorted path order.
    pub unique: Vec<(PathBuf, String)>,
    pub duplicates: Vec<Duplicate>,
    pub failures: Vec<(PathBuf, String)>,
}

/// Drops files whose content hash was already seen; among identical files
/// the lexicographically smallest path is kept.
pub fn dedup(files: &[PathBuf]) -> DedupOutcome {
    let mut sorted = files.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut seen: HashMap<String, PathBuf> = HashMap::new();
    let mut out = DedupOutcome::default();
    for path in sorted {
        match fs::read(&path) {
            Ok(bytes) => {
                let hash = crate::content_hash(&bytes);
                match seen.get(&hash) {
                    Some(kept) => out.duplicates.push(Duplicate {
                        path,
                        kept: kept.clone(),
                        hash,
                    }),
                    None => {
                        seen.insert(hash.clone(), path.clone());
                        out.unique.push((path, hash));
                    }
                }
            }
            Err(e) => out.failures.push((path, e.to_string())),
        }
    }
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CleanOutcome {
    /// Candidates matched by at least one rule, with the rule names.
    pub confirmed: Vec<(PathBuf, Vec<String>)>,
    /// Candidates no rule matched; left for manual triage.
    pub needs_review: Vec<PathBuf>,
    pub failures: Vec<(PathBuf, String)>,
}

/// Sorts collected webshell candidates into rule-confirmed samples and ones
/// that need a human look. Nothing is confirmed without a rule match.
pub fn clean_webshell_candidates(candidates: &[PathBuf], rules: &RuleSet) -> CleanOutcome {
    let mut out = CleanOutcome::default();
    for path in candidates {
        match fs::read(path) {
            Ok(bytes) => {
                let report = match_buffer(rules, &path.display().to_string(), &bytes);
                if report.is_match() {
                    out.confirmed.push((path.clone(), report.rule_names()));
                } else {
                    out.needs_review.push(path.clone());
                }
            }
            Err(e) => out.failures.push((path.clone(), e.to_string())),
        }
    }
    out
}

/// Regular files below `root`, sorted.
pub fn list_files(root: &Path) -> Result<Vec<PathBuf>, EvalError> {
    if !root.exists() {
        return Err(EvalError::Input(format!(
            "{} does not exist",
            root.display()
        )));
    }
    let mut out = Vec::new();
    for entry in WalkDir::new(root).sort_by_file_name() {
        let entry = entry.map_err(|e| EvalError::Input(e.to_string()))?;
        if entry.file_type().is_file() {
            out.push(entry.into_path());
        }
    }
    Ok(out)
}

/// One line of a dedup/split manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub source: String,
    pub split: String,
    pub hash: String,
}

pub fn write_manifest(rows: &[ManifestRow], path: &Path) -> Result<(), EvalError> {
    let mut w = csv::Writer::from_path(path).map_err(|e| EvalError::Io(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| EvalError::Io(e.to_string()))?;
    }
    w.flush().map_err(|e| EvalError::Io(e.to_string()))
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>, EvalError> {
    let mut r = csv::Reader::from_path(path).map_err(|e| EvalError::Io(e.to_string()))?;
    r.deserialize()
        .collect::<Result<_, _>>()
        .map_err(|e| EvalError::Io(e.to_string()))
}
