use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

/// Mnemonics in the order they appear in a disassembly listing.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpcodeListing {
    pub source: String,
    pub mnemonics: Vec<String>,
}

fn is_vld_opcode(tok: &str) -> bool {
    let b = tok.as_bytes();
    b.len() >= 2
        && b[0].is_ascii_uppercase()
        && b[1..]
            .iter()
            .all(|c| c.is_ascii_uppercase() || c.is_ascii_digit() || *c == b'_')
}

/// Extracts opcodes from VLD output.
///
/// Only lines in an op table count: the rows after a `-----` rule, up to the
/// next blank line. Within a row the opcode is the first token that looks like
/// an upper-case Zend opcode name (the `E`, `>` and similar flag columns are
/// one character wide and never qualify).
pub fn parse_vld(text: &str) -> OpcodeListing {
    let mut mnemonics = Vec::new();
    let mut in_table = false;
    for line in text.lines() {
        let trimmed = line.trim();
        if trimmed.starts_with("-----") {
            in_table = true;
            continue;
        }
        if trimmed.is_empty() {
            in_table = false;
            continue;
        }
        if !in_table {
            continue;
        }
        if let Some(op) = trimmed.split_whitespace().find(|t| is_vld_opcode(t)) {
            mnemonics.push(op.to_string());
        }
    }
    OpcodeListing {
        source: String::new(),
        mnemonics,
    }
}

fn il_label() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"IL_[0-9a-fA-F]+\s*:\s*").expect("valid regex"))
}

fn is_word(t: &str) -> bool {
    !t.is_empty()
        && t.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b'.')
}

/// Reads one mnemonic from `tokens`, gluing dotted suffixes that a PDF or
/// pretty-printer split off (`stloc .0`, `brfalse . s`). Returns the mnemonic
/// and the number of tokens consumed.
fn take_mnemonic(tokens: &[&str]) -> Option<(String, usize)> {
    let first = *tokens.first()?;
    if !is_word(first) || first.starts_with('.') || !first.as_bytes()[0].is_ascii_alphabetic() {
        return None;
    }
    let mut m = first.to_string();
    let mut used = 1;
    let mut after_lone_dot = false;
    while used < tokens.len() {
        let t = tokens[used];
        if after_lone_dot && is_word(t) && !t.starts_with('.') {
            m.push_str(t);
            after_lone_dot = false;
        } else if t == "." {
            m.push('.');
            after_lone_dot = true;
        } else if t.starts_with('.') && is_word(t) {
            m.push_str(t);
        } else {
            break;
        }
        used += 1;
    }
    Some((m, used))
}

const CIL_PREFIXES: [&str; 5] = [
    "tail.",
    "volatile.",
    "unaligned.",
    "constrained.",
    "readonly.",
];

/// Extracts mnemonics from ildasm-style CIL. Each `IL_xxxx:` label (anywhere
/// on a line) introduces one instruction; prefix instructions such as `tail.`
/// are followed by the instruction they modify on the same line.
pub fn parse_cil(text: &str) -> OpcodeListing {
    let mut mnemonics = Vec::new();
    for line in text.lines() {
        for label in il_label().find_iter(line) {
            let rest = &line[label.end()..];
            let tokens: Vec<&str> = rest.split_whitespace().collect();
            let mut at = 0;
            while let Some((m, used)) = take_mnemonic(&tokens[at..]) {
                at += used;
                let is_prefix = CIL_PREFIXES.contains(&m.as_str());
                mnemonics.push(m);
                if !is_prefix {
                    break;
                }
            }
        }
    }
    OpcodeListing {
        source: String::new(),
        mnemonics,
    }
}
