use serde::{Deserialize, Serialize};

use super::{cnn_predict, SourceModel, SrcError};
use crate::opcode::{oiva, parse_listing, Language, OciVector, OpcodeVocabulary};
use crate::rulelang::{match_buffer, RuleSet};
use crate::tensornet::ModelGraph;

/// Probability at or above which a file is called a webshell.
pub const THRESHOLD: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Benign,
    Webshell,
}

impl Label {
    pub fn from_probability(p_webshell: f64) -> Label {
        if p_webshell >= THRESHOLD {
            Label::Webshell
        } else {
            Label::Benign
        }
    }

    pub fn as_usize(self) -> usize {
        match self {
            Label::Benign => 0,
            Label::Webshell => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerdictSource {
    Rules,
    Cnn,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub label: Label,
    pub source: VerdictSource,
    pub p_webshell: f64,
    /// Matched rule names; non-empty exactly when `source` is `Rules`.
    pub rules: Vec<String>,
}

/// Anything that scores a vectorized opcode listing.
pub trait OpcodeClassifier: Sync {
    fn max_length(&self) -> usize;
    fn p_webshell(&self, oci: &OciVector) -> Result<f64, SrcError>;
}

impl OpcodeClassifier for ModelGraph {
    fn max_length(&self) -> usize {
        self.input_shape()[0]
    }

    fn p_webshell(&self, oci: &OciVector) -> Result<f64, SrcError> {
        Ok(cnn_predict(self, oci)?.1)
    }
}

impl OpcodeClassifier for SourceModel {
    fn max_length(&self) -> usize {
        self.config.max_length
    }

    fn p_webshell(&self, oci: &OciVector) -> Result<f64, SrcError> {
        self.graph.p_webshell(oci)
    }
}

/// The hybrid detector.
///
/// `source` is scanned with `rules`; any match flags the file at once and the
/// classifier is not consulted. Otherwise the opcode dump (`opcodes`, or
/// `source` itself when no separate dump is given) is parsed for `language`,
/// vectorized with `vocab` and scored. A dump with no recognizable opcodes is
/// an error rather than a benign verdict.
pub fn hybrid_detect(
    rules: &RuleSet,
    model: &dyn OpcodeClassifier,
    vocab: &OpcodeVocabulary,
    language: Language,
    source: &[u8],
    opcodes: Option<&str>,
) -> Result<Verdict, SrcError> {
    let report = match_buffer(rules, "", source);
    if report.is_match() {
        return Ok(Verdict {
            label: Label::Webshell,
            source: VerdictSource::Rules,
            p_webshell: 1.0,
            rules: report.rule_names(),
        });
    }
    let owned;
    let dump = match opcodes {
        Some(t) => t,
        None => {
            owned = String::from_utf8_lossy(source);
            &owned
        }
    };
    let listing = parse_listing(language, dump);
    if listing.mnemonics.is_empty() {
        return Err(SrcError::NoOpcodes);
    }
    let oci = oiva(&listing, vocab, model.max_length());
    let p = model.p_webshell(&oci)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(SrcError::Config(format!(
            "classifier returned probability {p}"
        )));
    }
    Ok(Verdict {
        label: Label::from_probability(p),
        source: VerdictSource::Cnn,
        p_webshell: p,
        rules: Vec::new(),
    })
}

/// One line of `predict src` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRecord {
    pub path: String,
    /// `benign`, `webshell` or `error`.
    pub label: String,
    pub source: Option<VerdictSource>,
    pub p_webshell: Option<f64>,
    pub rules: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ScanRecord {
    pub fn new(path: &str, verdict: &Result<Verdict, SrcError>) -> Self {
        match verdict {
            Ok(v) => ScanRecord {
                path: path.to_string(),
                label: serde_json::to_value(v.label)
                    .expect("label serializes")
                    .as_str()
                    .unwrap_or("")
                    .to_string(),
                source: Some(v.source),
                p_webshell: Some(v.p_webshell),
                rules: v.rules.clone(),
                error: None,
            },
            Err(e) => ScanRecord {
                path: path.to_string(),
                label: "error".into(),
                source: None,
                p_webshell: None,
                rules: Vec::new(),
                error: Some(e.to_string()),
            },
        }
    }

    pub fn is_webshell(&self) -> bool {
        self.label == "webshell"
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rulelang::parse_rules;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Fixed {
        p: f64,
        calls: AtomicUsize,
    }

    impl Fixed {
        fn new(p: f64) -> Self {
            Fixed {
                p,
                calls: AtomicUsize::new(0),
            }
        }
    }

    impl OpcodeClassifier for Fixed {
        fn max_length(&self) -> usize {
            8
        }

        fn p_webshell(&self, _: &OciVector) -> Result<f64, SrcError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            Ok(self.p)
        }
    }

    fn setup() -> (RuleSet, OpcodeVocabulary) {
        let rules = parse_rules("rule b374k { strings: $a = \"b374k\" condition: $a }").unwrap();
        (rules, OpcodeVocabulary::builtin(Language::Cil))
    }

    const DUMP: &str = "IL_0000: nop\nIL_0001: ret\n";

    #[test]
    fn rule_match_short_circuits() {
        let (rules, vocab) = setup();
        let model = Fixed::new(0.0);
        let v = hybrid_detect(
            &rules,
            &model,
            &vocab,
            Language::Cil,
            b"// b374k",
            Some(DUMP),
        )
        .unwrap();
        assert_eq!(
            (v.label, v.source, v.p_webshell),
            (Label::Webshell, VerdictSource::Rules, 1.0)
        );
        assert_eq!(v.rules, ["b374k"]);
        assert_eq!(model.calls.load(Ordering::SeqCst), 0);
    }

    #[test]
    fn cnn_decides_otherwise() {
        let (rules, vocab) = setup();
        let low = hybrid_detect(
            &rules,
            &Fixed::new(0.1),
            &vocab,
            Language::Cil,
            b"clean",
            Some(DUMP),
        )
        .unwrap();
        assert_eq!((low.label, low.source), (Label::Benign, VerdictSource::Cnn));
        let tie = hybrid_detect(
            &rules,
            &Fixed::new(0.5),
            &vocab,
            Language::Cil,
            b"clean",
            Some(DUMP),
        )
        .unwrap();
        assert_eq!(tie.label, Label::Webshell);
    }

    #[test]
    fn source_doubles_as_dump() {
        let (rules, vocab) = setup();
        let v = hybrid_detect(
            &rules,
            &Fixed::new(0.9),
            &vocab,
            Language::Cil,
            DUMP.as_bytes(),
            None,
        )
        .unwrap();
        assert_eq!(v.source, VerdictSource::Cnn);
    }

    #[test]
    fn no_opcodes_is_an_error() {
        let (rules, vocab) = setup();
        let r = hybrid_detect(
            &rules,
            &Fixed::new(0.0),
            &vocab,
            Language::Cil,
            b"clean",
            Some(""),
        );
        assert!(matches!(r, Err(SrcError::NoOpcodes)));
        let rec = ScanRecord::new("x", &r);
        assert_eq!(rec.label, "error");
        let line = serde_json::to_string(&rec).unwrap();
        assert!(line.contains("\"error\""));
    }

    #[test]
    fn record_json_shape() {
        let v = Verdict {
            label: Label::Webshell,
            source: VerdictSource::Rules,
            p_webshell: 1.0,
            rules: vec!["r".into()],
        };
        let rec = ScanRecord::new("a.php", &Ok(v));
        let j: serde_json::Value = serde_json::to_value(&rec).unwrap();
        assert_eq!(
            j,
            serde_json::json!({"path": "a.php", "label": "webshell", "source": "rules", "p_webshell": 1.0, "rules": ["r"]})
        );
    }
}
