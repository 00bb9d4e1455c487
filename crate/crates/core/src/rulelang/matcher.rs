use aho_corasick::{AhoCorasick, AhoCorasickBuilder, MatchKind};
use regex::bytes::{Regex, RegexBuilder};

use super::{HexToken, MatchReport, PatternBody, Rule, RuleError, RuleMatch, RuleSet, StringMatch};

/// Where a compiled text literal came from.
#[derive(Debug, Clone, Copy)]
struct Slot {
    rule: usize,
    pattern: usize,
    fullword: bool,
}

/// Search structures for a rule set: one Aho-Corasick automaton for
/// case-sensitive literals, one for `nocase` literals, and a byte regex per
/// hex or regex string.
#[derive(Debug)]
pub struct CompiledRules {
    exact: Option<(AhoCorasick, Vec<Slot>)>,
    nocase: Option<(AhoCorasick, Vec<Slot>)>,
    regexes: Vec<(Regex, Slot)>,
    shape: Vec<usize>,
}

fn hex_regex(tokens: &[HexToken]) -> String {
    let mut s = String::from("(?s-u)");
    for t in tokens {
        match t {
            HexToken::Byte(b) => s.push_str(&format!("\\x{b:02x}")),
            HexToken::Any => s.push('.'),
        }
    }
    s
}

fn automaton(literals: &[Vec<u8>], nocase: bool) -> AhoCorasick {
    AhoCorasickBuilder::new()
        .match_kind(MatchKind::Standard)
        .ascii_case_insensitive(nocase)
        .build(literals)
        .expect("literal automaton builds")
}

impl CompiledRules {
    pub fn compile(rules: &[Rule]) -> Result<Self, RuleError> {
        let mut exact = (Vec::new(), Vec::new());
        let mut nocase = (Vec::new(), Vec::new());
        let mut regexes = Vec::new();
        for (ri, rule) in rules.iter().enumerate() {
            for (pi, p) in rule.strings.iter().enumerate() {
                let slot = Slot {
                    rule: ri,
                    pattern: pi,
                    fullword: false,
                };
                match &p.body {
                    PatternBody::Text { bytes, modifiers } => {
                        let slot = Slot {
                            fullword: modifiers.fullword,
                            ..slot
                        };
                        let target = if modifiers.nocase {
                            &mut nocase
                        } else {
                            &mut exact
                        };
                        target.0.push(bytes.clone());
                        target.1.push(slot);
                    }
                    PatternBody::Hex(tokens) => {
                        let re =
                            Regex::new(&hex_regex(tokens)).expect("hex pattern is a valid regex");
                        regexes.push((re, slot));
                    }
                    PatternBody::Regex {
                        source,
                        nocase,
                        dot_all,
                    } => {
                        let re = RegexBuilder::new(source)
                            .unicode(false)
                            .case_insensitive(*nocase)
                            .dot_matches_new_line(*dot_all)
                            .build()
                            .map_err(|e| RuleError::Regex {
                                rule: rule.name.clone(),
                                id: p.id.clone(),
                                msg: e.to_string(),
                            })?;
                        regexes.push((re, slot));
                    }
                }
            }
        }
        let build = |(lits, slots): (Vec<Vec<u8>>, Vec<Slot>), nc| {
            (!lits.is_empty()).then(|| (automaton(&lits, nc), slots))
        };
        Ok(CompiledRules {
            exact: build(exact, false),
            nocase: build(nocase, true),
            regexes,
            shape: rules.iter().map(|r| r.strings.len()).collect(),
        })
    }

    /// Offsets of every (overlapping) occurrence, indexed `[rule][pattern]`.
    fn offsets(&self, hay: &[u8]) -> Vec<Vec<Vec<usize>>> {
        let mut out: Vec<Vec<Vec<usize>>> =
            self.shape.iter().map(|&n| vec![Vec::new(); n]).collect();
        for (ac, slots) in [&self.exact, &self.nocase].into_iter().flatten() {
            for m in ac.find_overlapping_iter(hay) {
                let slot = slots[m.pattern().as_usize()];
                if slot.fullword && !is_full_word(hay, m.start(), m.end()) {
                    continue;
                }
                out[slot.rule][slot.pattern].push(m.start());
            }
        }
        for (re, slot) in &self.regexes {
            let mut at = 0;
            while at <= hay.len() {
                let Some(m) = re.find_at(hay, at) else { break };
                out[slot.rule][slot.pattern].push(m.start());
                at = m.start() + 1;
            }
        }
        for rule in &mut out {
            for offs in rule {
                offs.sort_unstable();
                offs.dedup();
            }
        }
        out
    }
}

fn is_full_word(hay: &[u8], start: usize, end: usize) -> bool {
    let before = start == 0 || !hay[start - 1].is_ascii_alphanumeric();
    let after = end >= hay.len() || !hay[end].is_ascii_alphanumeric();
    before && after
}

/// Runs every rule over `bytes`. Matching rules are reported in declaration
/// order, each with all of its string hits sorted by offset.
pub fn match_buffer(rules: &RuleSet, subject: &str, bytes: &[u8]) -> MatchReport {
    let offsets = rules.compiled().offsets(bytes);
    let mut matches = Vec::new();
    for (rule, hits) in rules.rules().iter().zip(&offsets) {
        let ids: Vec<&str> = rule.strings.iter().map(|p| p.id.as_str()).collect();
        let present = |id: &str| {
            ids.iter()
                .position(|&x| x == id)
                .is_some_and(|i| !hits[i].is_empty())
        };
        if !rule.condition.eval(&ids, &present) {
            continue;
        }
        let mut strings: Vec<StringMatch> = ids
            .iter()
            .zip(hits)
            .flat_map(|(id, offs)| {
                offs.iter().map(move |&offset| StringMatch {
                    id: id.to_string(),
                    offset,
                })
            })
            .collect();
        strings.sort_by(|a, b| a.offset.cmp(&b.offset).then_with(|| a.id.cmp(&b.id)));
        matches.push(RuleMatch {
            rule: rule.name.clone(),
            strings,
        });
    }
    MatchReport {
        subject: subject.to_string(),
        matches,
    }
}
