use std::collections::HashMap;
use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::OpcodeError;

const PHP_VOCAB: &str = include_str!("../../data/php.vocab");
const CIL_VOCAB: &str = include_str!("../../data/cil.vocab");

/// Disassembly flavour; selects the listing parser and the shipped vocabulary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Php,
    Cil,
}

impl Language {
    pub fn as_str(self) -> &'static str {
        match self {
            Language::Php => "php",
            Language::Cil => "cil",
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Language {
    type Err = OpcodeError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "php" => Ok(Language::Php),
            "cil" | "msil" | "aspnet" | "asp.net" | "dotnet" | ".net" => Ok(Language::Cil),
            other => Err(OpcodeError::Language(other.to_string())),
        }
    }
}

/// Ordered, duplicate-free mnemonic list. Mnemonic `i` (0-based in
/// `mnemonics`) has index `i + 1`; 0 is padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OpcodeVocabulary {
    mnemonics: Vec<String>,
    language: String,
    lookup: HashMap<String, usize>,
}

impl OpcodeVocabulary {
    pub fn new(mnemonics: Vec<String>, language: impl Into<String>) -> Result<Self, OpcodeError> {
        if mnemonics.is_empty() {
            return Err(OpcodeError::EmptyVocabulary);
        }
        let mut lookup = HashMap::with_capacity(mnemonics.len());
        for (i, m) in mnemonics.iter().enumerate() {
            if m.is_empty() || m.chars().any(char::is_whitespace) {
                return Err(OpcodeError::BadMnemonic(m.clone()));
            }
            if lookup.insert(m.clone(), i + 1).is_some() {
                return Err(OpcodeError::DuplicateMnemonic(m.clone()));
            }
        }
        Ok(OpcodeVocabulary {
            mnemonics,
            language: language.into(),
            lookup,
        })
    }

    /// One mnemonic per line; blank lines and `#` comments are skipped.
    pub fn parse(text: &str, language: impl Into<String>) -> Result<Self, OpcodeError> {
        let mnemonics = text
            .lines()
            .map(|l| l.split('#').next().unwrap_or("").trim())
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect();
        Self::new(mnemonics, language)
    }

    /// Reads a vocabulary file. The language tag is the file stem.
    pub fn load(path: &Path) -> Result<Self, OpcodeError> {
        let text = fs::read_to_string(path).map_err(|e| OpcodeError::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let tag = path
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or("custom");
        Self::parse(&text, tag)
    }

    pub fn builtin(language: Language) -> Self {
        let text = match language {
            Language::Php => PHP_VOCAB,
            Language::Cil => CIL_VOCAB,
        };
        Self::parse(text, language.as_str()).expect("shipped vocabulary is valid")
    }

    pub fn mnemonics(&self) -> &[String] {
        &self.mnemonics
    }

    pub fn language(&self) -> &str {
        &self.language
    }

    pub fn len(&self) -> usize {
        self.mnemonics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mnemonics.is_empty()
    }

    /// 1-based index of `mnemonic`, if present.
    pub fn index_of(&self, mnemonic: &str) -> Option<usize> {
        self.lookup.get(mnemonic).copied()
    }

    /// Mnemonic for a 1-based index.
    pub fn mnemonic(&self, index: usize) -> Option<&str> {
        index
            .checked_sub(1)
            .and_then(|i| self.mnemonics.get(i))
            .map(String::as_str)
    }

    /// SHA-256 over the newline-joined mnemonics; stored in checkpoints.
    pub fn hash(&self) -> String {
        crate::content_hash(self.mnemonics.join("\n").as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_based_in_file_order() {
        let v = OpcodeVocabulary::parse("ECHO\nADD\nRETURN", "php").unwrap();
        assert_eq!(v.index_of("ECHO"), Some(1));
        assert_eq!(v.index_of("ADD"), Some(2));
        assert_eq!(v.index_of("RETURN"), Some(3));
        assert_eq!(v.index_of("NOP"), None);
        assert_eq!(v.mnemonic(0), None);
        assert_eq!(v.mnemonic(3), Some("RETURN"));
    }

    #[test]
    fn rejects_duplicates_and_empty() {
        assert!(matches!(
            OpcodeVocabulary::parse("ADD\nADD", "x"),
            Err(OpcodeError::DuplicateMnemonic(_))
        ));
        assert!(matches!(
            OpcodeVocabulary::parse("# only a comment\n\n", "x"),
            Err(OpcodeError::EmptyVocabulary)
        ));
    }

    #[test]
    fn comments_are_skipped() {
        let v = OpcodeVocabulary::parse("# header\nECHO # trailing\n\nADD\n", "php").unwrap();
        assert_eq!(v.mnemonics(), ["ECHO", "ADD"]);
    }

    #[test]
    fn shipped_vocabularies() {
        let cil = OpcodeVocabulary::builtin(Language::Cil);
        assert_eq!(cil.len(), 229);
        for m in [
            "call",
            "stloc.0",
            "brfalse.s",
            "callvirt",
            "ret",
            "ldnull",
            "br.s",
            "tail.",
        ] {
            assert!(cil.index_of(m).is_some(), "{m}");
        }
        let php = OpcodeVocabulary::builtin(Language::Php);
        for m in ["ECHO", "CONCAT", "RETURN", "INCLUDE_OR_EVAL", "ADD_STRING"] {
            assert!(php.index_of(m).is_some(), "{m}");
        }
        assert_ne!(php.hash(), cil.hash());
    }

    #[test]
    fn language_names() {
        assert_eq!("aspnet".parse::<Language>().unwrap(), Language::Cil);
        assert_eq!("PHP".parse::<Language>().unwrap(), Language::Php);
        assert!("jsp".parse::<Language>().is_err());
    }
}
