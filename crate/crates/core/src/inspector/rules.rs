use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::eve::SIGNATURE;
use super::{io_err, InspectError};

pub const RULE_FILE: &str = "webshell-generated.rules";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RuleAction {
    Drop,
    Alert,
}

impl fmt::Display for RuleAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RuleAction::Drop => "drop",
            RuleAction::Alert => "alert",
        })
    }
}

/// A source-IP rule in the host IDS syntax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GeneratedRule {
    pub action: RuleAction,
    pub src_ip: String,
    pub sid: u64,
    pub rev: u32,
    pub msg: String,
}

fn rule_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(
            r#"^(drop|alert) ip (\S+) any -> \$HOME_NET any \(msg:"([^"]*)"; classtype:web-application-attack; sid:(\d+); rev:(\d+);\)$"#,
        )
        .expect("rule regex")
    })
}

impl GeneratedRule {
    pub fn render(&self) -> String {
        format!(
            "{} ip {} any -> $HOME_NET any (msg:\"{}\"; classtype:web-application-attack; sid:{}; rev:{};)",
            self.action, self.src_ip, self.msg, self.sid, self.rev
        )
    }

    pub fn parse(line: &str) -> Option<GeneratedRule> {
        let c = rule_re().captures(line.trim())?;
        Some(GeneratedRule {
            action: if &c[1] == "drop" {
                RuleAction::Drop
            } else {
                RuleAction::Alert
            },
            src_ip: c[2].to_string(),
            msg: c[3].to_string(),
            sid: c[4].parse().ok()?,
            rev: c[5].parse().ok()?,
        })
    }
}

/// The set of generated rules, one per (source, action). Sids are handed
/// out from `sid_start` upward; a repeat detection bumps `rev`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RuleBook {
    rules: Vec<GeneratedRule>,
    next_sid: u64,
}

impl RuleBook {
    pub fn new(sid_start: u64) -> Self {
        RuleBook {
            rules: Vec::new(),
            next_sid: sid_start,
        }
    }

    /// Picks up an existing rule file in `dir` so sids and revisions
    /// persist across runs. Comment and blank lines are ignored.
    pub fn load(dir: &Path, sid_start: u64) -> Result<Self, InspectError> {
        let mut book = RuleBook::new(sid_start);
        let path = dir.join(RULE_FILE);
        let text = match std::fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(book),
            Err(e) => return Err(io_err(path.display(), e)),
        };
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let rule = GeneratedRule::parse(line).ok_or_else(|| {
                InspectError::Rules(format!("{}:{}: unrecognized rule", path.display(), i + 1))
            })?;
            book.next_sid = book.next_sid.max(rule.sid + 1);
            book.rules.push(rule);
        }
        book.check()?;
        Ok(book)
    }

    pub fn upsert(&mut self, src_ip: &str, action: RuleAction) -> GeneratedRule {
        if let Some(r) = self
            .rules
            .iter_mut()
            .find(|r| r.src_ip == src_ip && r.action == action)
        {
            r.rev += 1;
            return r.clone();
        }
        let rule = GeneratedRule {
            action,
            src_ip: src_ip.to_string(),
            sid: self.next_sid,
            rev: 1,
            msg: SIGNATURE.into(),
        };
        self.next_sid += 1;
        self.rules.push(rule.clone());
        rule
    }

    pub fn rules(&self) -> &[GeneratedRule] {
        &self.rules
    }

    pub fn is_empty(&self) -> bool {
        self.rules.is_empty()
    }

    fn check(&self) -> Result<(), InspectError> {
        let mut seen = HashSet::new();
        for r in &self.rules {
            if !seen.insert(r.sid) {
                return Err(InspectError::Rules(format!("duplicate sid {}", r.sid)));
            }
        }
        Ok(())
    }
}

/// Writes `rules` to `dir/webshell-generated.rules`, one per line, replacing
/// the file atomically. An empty list leaves the file alone.
pub fn write_rules(rules: &[GeneratedRule], dir: &Path) -> Result<PathBuf, InspectError> {
    let path = dir.join(RULE_FILE);
    if !dir.is_dir() {
        return Err(InspectError::Io(format!(
            "rules directory {} does not exist",
            dir.display()
        )));
    }
    if rules.is_empty() {
        return Ok(path);
    }
    let mut seen = HashSet::new();
    if let Some(r) = rules.iter().find(|r| !seen.insert(r.sid)) {
        return Err(InspectError::Rules(format!("duplicate sid {}", r.sid)));
    }
    let mut text = String::new();
    for r in rules {
        text.push_str(&r.render());
        text.push('\n');
    }
    let tmp = dir.join(format!(".{RULE_FILE}.tmp"));
    std::fs::write(&tmp, text).map_err(|e| io_err(tmp.display(), e))?;
    std::fs::rename(&tmp, &path).map_err(|e| io_err(path.display(), e))?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn template() {
        let mut book = RuleBook::new(9_000_001);
        let r = book.upsert("10.0.0.5", RuleAction::Drop);
        assert_eq!(
            r.render(),
            "drop ip 10.0.0.5 any -> $HOME_NET any (msg:\"Webshell Attacking\"; classtype:web-application-attack; sid:9000001; rev:1;)"
        );
        assert_eq!(GeneratedRule::parse(&r.render()), Some(r));
        assert_eq!(
            GeneratedRule::parse("alert tcp any any -> any any (sid:1;)"),
            None
        );
    }

    #[test]
    fn repeat_bumps_rev_not_sid() {
        let mut book = RuleBook::new(5);
        book.upsert("10.0.0.5", RuleAction::Drop);
        let again = book.upsert("10.0.0.5", RuleAction::Drop);
        assert_eq!((again.sid, again.rev), (5, 2));
        let other = book.upsert("10.0.0.6", RuleAction::Drop);
        assert_eq!(other.sid, 6);
        assert_eq!(book.rules().len(), 2);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut book = RuleBook::new(100);
        book.upsert("1.2.3.4", RuleAction::Drop);
        book.upsert("5.6.7.8", RuleAction::Alert);
        let path = write_rules(book.rules(), dir.path()).unwrap();
        let mut back = RuleBook::load(dir.path(), 100).unwrap();
        assert_eq!(back, book);
        assert_eq!(back.upsert("9.9.9.9", RuleAction::Drop).sid, 102);
        let before = std::fs::read(&path).unwrap();
        write_rules(&[], dir.path()).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), before);
    }

    #[test]
    fn errors() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope");
        assert!(write_rules(&[], &missing).is_err());
        let r = GeneratedRule {
            action: RuleAction::Drop,
            src_ip: "1.1.1.1".into(),
            sid: 3,
            rev: 1,
            msg: "m".into(),
        };
        assert!(matches!(
            write_rules(&[r.clone(), r], dir.path()),
            Err(InspectError::Rules(_))
        ));
    }
}
