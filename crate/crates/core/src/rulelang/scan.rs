use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use walkdir::WalkDir;

use super::{match_buffer, parse_rules, MatchReport, RuleError, RuleSet};

/// Loads every `.yar`/`.yara` file in `dir`, concatenated in sorted filename
/// order, as one rule set.
pub fn load_rules_dir(dir: &Path) -> Result<RuleSet, RuleError> {
    let io = |e| RuleError::Io {
        path: dir.to_path_buf(),
        source: e,
    };
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && has_extension(p, &["yar", "yara"]))
        .collect();
    files.sort();
    let mut text = String::new();
    for f in &files {
        let body = fs::read_to_string(f).map_err(|e| RuleError::Io {
            path: f.clone(),
            source: e,
        })?;
        text.push_str(&body);
        text.push('\n');
    }
    parse_rules(&text)
}

/// Loads a rule file, or a directory of rule files.
pub fn load_rules_path(path: &Path) -> Result<RuleSet, RuleError> {
    if path.is_dir() {
        load_rules_dir(path)
    } else {
        let text = fs::read_to_string(path).map_err(|e| RuleError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        parse_rules(&text)
    }
}

fn has_extension(p: &Path, exts: &[&str]) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| {
        exts.iter()
            .any(|x| x.trim_start_matches('.').eq_ignore_ascii_case(e))
    })
}

#[derive(Debug, Default)]
pub struct ScanOutcome {
    /// Files with at least one matching rule, sorted by path.
    pub hits: Vec<(PathBuf, MatchReport)>,
    /// Files that could not be read, sorted by path.
    pub errors: Vec<(PathBuf, String)>,
    pub scanned: usize,
}

/// Scans every regular file under `root` (optionally only those whose
/// extension is in `extensions`).
pub fn scan_tree(
    rules: &RuleSet,
    root: &Path,
    extensions: &[String],
) -> Result<ScanOutcome, RuleError> {
    let meta = fs::metadata(root).map_err(|e| RuleError::Io {
        path: root.to_path_buf(),
        source: e,
    })?;
    let exts: Vec<&str> = extensions.iter().map(String::as_str).collect();
    let mut errors = Vec::new();
    let mut files = Vec::new();
    if meta.is_file() {
        files.push(root.to_path_buf());
    } else {
        for entry in WalkDir::new(root).sort_by_file_name() {
            match entry {
                Ok(e) if e.file_type().is_file() => {
                    if exts.is_empty() || has_extension(e.path(), &exts) {
                        files.push(e.into_path());
                    }
                }
                Ok(_) => {}
                Err(e) => {
                    let path = e
                        .path()
                        .map(Path::to_path_buf)
                        .unwrap_or_else(|| root.to_path_buf());
                    errors.push((path, e.to_string()));
                }
            }
        }
    }
    files.sort();
    let results: Vec<(PathBuf, Result<MatchReport, String>)> = files
        .par_iter()
        .map(|p| {
            let r = fs::read(p).map(|bytes| match_buffer(rules, &p.display().to_string(), &bytes));
            (p.clone(), r.map_err(|e| e.to_string()))
        })
        .collect();
    let scanned = results.len();
    let mut hits = Vec::new();
    for (path, r) in results {
        match r {
            Ok(report) if report.is_match() => hits.push((path, report)),
            Ok(_) => {}
            Err(e) => errors.push((path, e)),
        }
    }
    errors.sort_by(|a, b| a.0.cmp(&b.0));
    Ok(ScanOutcome {
        hits,
        errors,
        scanned,
    })
}
