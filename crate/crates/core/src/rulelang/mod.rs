//! Signature rules in a subset of the Yara language.
//!
//! Supported: `meta`, text strings (`nocase`, `fullword`, `ascii`), hex strings
//! with `??` wildcards, `/regex/is` strings, and conditions built from string
//! references, `N of them`, `N of ($a, $b*)`, `any`/`all of`, `and`, `or`,
//! `not`, parentheses and `true`/`false`. Counts, offsets, `filesize`,
//! modules and imports are rejected at parse time.

mod matcher;
mod parser;
mod scan;

use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

pub use matcher::{match_buffer, CompiledRules};
pub use parser::parse_rules;
pub use scan::{load_rules_dir, load_rules_path, scan_tree, ScanOutcome};

/// Longest identifier accepted for rule names and string ids.
pub const MAX_IDENT_LEN: usize = 128;

#[derive(Debug, thiserror::Error)]
pub enum RuleError {
    #[error("{line}:{col}: {msg}")]
    Syntax {
        line: usize,
        col: usize,
        msg: String,
    },
    #[error("duplicate rule name `{0}`")]
    DuplicateRule(String),
    #[error("rule `{rule}`: duplicate string identifier `{id}`")]
    DuplicatePattern { rule: String, id: String },
    #[error("rule `{rule}`: condition references undeclared string `{id}`")]
    UnresolvedString { rule: String, id: String },
    #[error("rule `{rule}`: {msg}")]
    Invalid { rule: String, msg: String },
    #[error("rule `{rule}`, string `{id}`: bad regular expression: {msg}")]
    Regex {
        rule: String,
        id: String,
        msg: String,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextModifiers {
    pub nocase: bool,
    pub fullword: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HexToken {
    Byte(u8),
    Any,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum PatternBody {
    Text {
        bytes: Vec<u8>,
        modifiers: TextModifiers,
    },
    Hex(Vec<HexToken>),
    Regex {
        source: String,
        nocase: bool,
        dot_all: bool,
    },
}

/// A `$id = ...` string declaration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Pattern {
    pub id: String,
    pub body: PatternBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum OfTarget {
    Them,
    Ids(Vec<String>),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Condition {
    Bool(bool),
    StringRef(String),
    /// At least `count` distinct strings of `target` occur. `any` and `all`
    /// are resolved to numbers at parse time.
    Of {
        count: usize,
        target: OfTarget,
    },
    And(Box<Condition>, Box<Condition>),
    Or(Box<Condition>, Box<Condition>),
    Not(Box<Condition>),
}

impl Condition {
    /// Evaluates with `present(id)` telling whether a string occurred.
    pub fn eval(&self, all_ids: &[&str], present: &dyn Fn(&str) -> bool) -> bool {
        match self {
            Condition::Bool(b) => *b,
            Condition::StringRef(id) => present(id),
            Condition::Of { count, target } => {
                let hits = match target {
                    OfTarget::Them => all_ids.iter().filter(|id| present(id)).count(),
                    OfTarget::Ids(ids) => ids.iter().filter(|id| present(id)).count(),
                };
                hits >= *count
            }
            Condition::And(a, b) => a.eval(all_ids, present) && b.eval(all_ids, present),
            Condition::Or(a, b) => a.eval(all_ids, present) || b.eval(all_ids, present),
            Condition::Not(a) => !a.eval(all_ids, present),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Rule {
    pub name: String,
    pub tags: Vec<String>,
    /// Values are kept as their source text; integers and booleans included.
    pub meta: Vec<(String, String)>,
    pub strings: Vec<Pattern>,
    pub condition: Condition,
}

impl Rule {
    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta
            .iter()
            .find(|(k, _)| k == key)
            .map(|(_, v)| v.as_str())
    }
}

/// Compiled, immutable rule collection.
#[derive(Debug)]
pub struct RuleSet {
    rules: Vec<Rule>,
    fingerprint: String,
    compiled: CompiledRules,
}

impl RuleSet {
    /// Parses and compiles `text`; equivalent to [`parse_rules`].
    pub fn parse(text: &str) -> Result<Self, RuleError> {
        parse_rules(text)
    }

    pub(crate) fn from_rules(rules: Vec<Rule>, fingerprint: String) -> Result<Self, RuleError> {
        let mut seen = std::collections::HashSet::new();
        for r in &rules {
            if !seen.insert(r.name.as_str()) {
                return Err(RuleError::DuplicateRule(r.name.clone()));
            }
        }
        let compiled = CompiledRules::compile(&rules)?;
        Ok(RuleSet {
            rules,
            fingerprint,
            compiled,
        })
    }

    pub fn rules(&self) -> &[Rule] {
        &self.rules
    }

    pub fn len(&self) -> usize {
        self.rules.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    /// SHA-256 of the source text the set was compiled from.
    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub(crate) fn compiled(&self) -> &CompiledRules {
        &self.compiled
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StringMatch {
    pub id: String,
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuleMatch {
    pub rule: String,
    pub strings: Vec<StringMatch>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatchReport {
    pub subject: String,
    pub matches: Vec<RuleMatch>,
}

impl MatchReport {
    pub fn is_match(&self) -> bool {
        !self.matches.is_empty()
    }

    pub fn rule_names(&self) -> Vec<String> {
        self.matches.iter().map(|m| m.rule.clone()).collect()
    }
}

fn write_escaped(f: &mut fmt::Formatter<'_>, bytes: &[u8]) -> fmt::Result {
    for &b in bytes {
        match b {
            b'"' => f.write_str("\\\"")?,
            b'\\' => f.write_str("\\\\")?,
            b'\n' => f.write_str("\\n")?,
            b'\t' => f.write_str("\\t")?,
            b'\r' => f.write_str("\\r")?,
            0x20..=0x7e => write!(f, "{}", b as char)?,
            _ => write!(f, "\\x{b:02x}")?,
        }
    }
    Ok(())
}

impl fmt::Display for Condition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Condition::Bool(b) => write!(f, "{b}"),
            Condition::StringRef(id) => f.write_str(id),
            Condition::Of {
                count,
                target: OfTarget::Them,
            } => write!(f, "{count} of them"),
            Condition::Of {
                count,
                target: OfTarget::Ids(ids),
            } => write!(f, "{count} of ({})", ids.join(", ")),
            Condition::And(a, b) => write!(f, "({a} and {b})"),
            Condition::Or(a, b) => write!(f, "({a} or {b})"),
            Condition::Not(a) => write!(f, "not {a}"),
        }
    }
}

impl fmt::Display for Pattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} = ", self.id)?;
        match &self.body {
            PatternBody::Text { bytes, modifiers } => {
                f.write_str("\"")?;
                write_escaped(f, bytes)?;
                f.write_str("\"")?;
                if modifiers.nocase {
                    f.write_str(" nocase")?;
                }
                if modifiers.fullword {
                    f.write_str(" fullword")?;
                }
                Ok(())
            }
            PatternBody::Hex(tokens) => {
                f.write_str("{")?;
                for t in tokens {
                    match t {
                        HexToken::Byte(b) => write!(f, " {b:02X}")?,
                        HexToken::Any => f.write_str(" ??")?,
                    }
                }
                f.write_str(" }")
            }
            PatternBody::Regex {
                source,
                nocase,
                dot_all,
            } => {
                write!(f, "/{source}/")?;
                if *nocase {
                    f.write_str("i")?;
                }
                if *dot_all {
                    f.write_str("s")?;
                }
                Ok(())
            }
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "rule {}", self.name)?;
        if !self.tags.is_empty() {
            write!(f, " : {}", self.tags.join(" "))?;
        }
        f.write_str(" {\n")?;
        if !self.meta.is_empty() {
            f.write_str("  meta:\n")?;
            for (k, v) in &self.meta {
                write!(f, "    {k} = \"")?;
                write_escaped(f, v.as_bytes())?;
                f.write_str("\"\n")?;
            }
        }
        if !self.strings.is_empty() {
            f.write_str("  strings:\n")?;
            for p in &self.strings {
                writeln!(f, "    {p}")?;
            }
        }
        write!(f, "  condition:\n    {}\n}}\n", self.condition)
    }
}
