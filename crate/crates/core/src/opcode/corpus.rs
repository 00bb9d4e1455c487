use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::{oiva, parse_listing, Language, OciVector, OpcodeError, OpcodeVocabulary};

/// Vectorized dataset: one row per readable input, in input order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct VectorizedCorpus {
    pub paths: Vec<PathBuf>,
    pub labels: Vec<usize>,
    pub rows: Vec<OciVector>,
    pub failures: Vec<(PathBuf, String)>,
}

impl VectorizedCorpus {
    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn max_length(&self) -> Option<usize> {
        self.rows.first().map(OciVector::len)
    }

    /// Row-major `len x max_length` matrix of indices as `f64`.
    pub fn matrix(&self) -> Vec<f64> {
        self.rows
            .iter()
            .flat_map(|r| r.indices.iter().map(|&i| i as f64))
            .collect()
    }
}

/// Reads each opcode dump, parses it for `language` and applies [`oiva`].
/// Unreadable files are recorded in `failures` and skipped.
pub fn vectorize_corpus(
    items: &[(PathBuf, usize)],
    language: Language,
    vocab: &OpcodeVocabulary,
    max_length: usize,
) -> VectorizedCorpus {
    let results: Vec<_> = items
        .par_iter()
        .map(|(path, label)| {
            let r = fs::read(path).map(|bytes| {
                let text = String::from_utf8_lossy(&bytes);
                oiva(&parse_listing(language, &text), vocab, max_length)
            });
            (path.clone(), *label, r)
        })
        .collect();
    let mut out = VectorizedCorpus::default();
    for (path, label, r) in results {
        match r {
            Ok(row) => {
                out.paths.push(path);
                out.labels.push(label);
                out.rows.push(row);
            }
            Err(e) => out.failures.push((path, e.to_string())),
        }
    }
    out
}

/// Writes `path,label,oci_0..oci_{n-1}`.
pub fn write_corpus_csv(corpus: &VectorizedCorpus, path: &Path) -> Result<(), OpcodeError> {
    let csv_err = |e: csv::Error| OpcodeError::Csv(e.to_string());
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let n = corpus.max_length().unwrap_or(0);
    let mut header = vec!["path".to_string(), "label".to_string()];
    header.extend((0..n).map(|i| format!("oci_{i}")));
    w.write_record(&header).map_err(csv_err)?;
    for ((p, label), row) in corpus.paths.iter().zip(&corpus.labels).zip(&corpus.rows) {
        let mut rec = vec![p.display().to_string(), label.to_string()];
        rec.extend(row.indices.iter().map(u32::to_string));
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush().map_err(|e| OpcodeError::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

pub fn read_corpus_csv(path: &Path) -> Result<VectorizedCorpus, OpcodeError> {
    let csv_err = |e: csv::Error| OpcodeError::Csv(e.to_string());
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let headers = r.headers().map_err(csv_err)?.clone();
    if headers.get(0) != Some("path") || headers.get(1) != Some("label") {
        return Err(OpcodeError::Csv(
            "expected header `path,label,oci_0,...`".into(),
        ));
    }
    let width = headers.len() - 2;
    let mut out = VectorizedCorpus::default();
    for (line, rec) in r.records().enumerate() {
        let rec = rec.map_err(csv_err)?;
        let bad = |what: &str| OpcodeError::Csv(format!("row {}: bad {what}", line + 2));
        let label: usize = rec[1].trim().parse().map_err(|_| bad("label"))?;
        let indices = (2..rec.len())
            .map(|i| rec[i].trim().parse::<u32>().map_err(|_| bad("index")))
            .collect::<Result<Vec<_>, _>>()?;
        if indices.len() != width {
            return Err(bad("row width"));
        }
        out.paths.push(PathBuf::from(&rec[0]));
        out.labels.push(label);
        out.rows.push(OciVector { indices });
    }
    Ok(out)
}
