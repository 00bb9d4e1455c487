use std::collections::HashSet;

use super::{
    Condition, HexToken, OfTarget, Pattern, PatternBody, Rule, RuleError, RuleSet, TextModifiers,
    MAX_IDENT_LEN,
};

/// Parses and compiles a rule file.
pub fn parse_rules(text: &str) -> Result<RuleSet, RuleError> {
    let rules = parse_rule_list(text)?;
    RuleSet::from_rules(rules, crate::content_hash(text.as_bytes()))
}

pub(crate) fn parse_rule_list(text: &str) -> Result<Vec<Rule>, RuleError> {
    let mut p = Parser {
        src: text.as_bytes(),
        pos: 0,
    };
    let mut rules = Vec::new();
    loop {
        p.skip_trivia()?;
        if p.at_end() {
            break;
        }
        rules.push(p.rule()?);
    }
    Ok(rules)
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
}

fn is_ident_start(b: u8) -> bool {
    b.is_ascii_alphabetic() || b == b'_'
}

fn is_ident_char(b: u8) -> bool {
    b.is_ascii_alphanumeric() || b == b'_'
}

impl<'a> Parser<'a> {
    fn at_end(&self) -> bool {
        self.pos >= self.src.len()
    }

    fn peek(&self) -> Option<u8> {
        self.src.get(self.pos).copied()
    }

    fn peek_at(&self, off: usize) -> Option<u8> {
        self.src.get(self.pos + off).copied()
    }

    fn err_at<T>(&self, pos: usize, msg: impl Into<String>) -> Result<T, RuleError> {
        let before = &self.src[..pos.min(self.src.len())];
        let line = before.iter().filter(|&&b| b == b'\n').count() + 1;
        let line_start = before
            .iter()
            .rposition(|&b| b == b'\n')
            .map_or(0, |i| i + 1);
        let col = String::from_utf8_lossy(&before[line_start..])
            .chars()
            .count()
            + 1;
        Err(RuleError::Syntax {
            line,
            col,
            msg: msg.into(),
        })
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, RuleError> {
        self.err_at(self.pos, msg)
    }

    fn skip_trivia(&mut self) -> Result<(), RuleError> {
        loop {
            match (self.peek(), self.peek_at(1)) {
                (Some(b), _) if b.is_ascii_whitespace() => self.pos += 1,
                (Some(b'/'), Some(b'/')) => {
                    while let Some(b) = self.peek() {
                        if b == b'\n' {
                            break;
                        }
                        self.pos += 1;
                    }
                }
                (Some(b'/'), Some(b'*')) => {
                    let start = self.pos;
                    self.pos += 2;
                    loop {
                        match (self.peek(), self.peek_at(1)) {
                            (Some(b'*'), Some(b'/')) => {
                                self.pos += 2;
                                break;
                            }
                            (Some(_), _) => self.pos += 1,
                            (None, _) => return self.err_at(start, "unterminated comment"),
                        }
                    }
                }
                _ => return Ok(()),
            }
        }
    }

    /// Reads a bare word (identifier or keyword); digits allowed anywhere so a
    /// leading digit can be reported precisely.
    fn word(&mut self) -> Result<(usize, String), RuleError> {
        self.skip_trivia()?;
        let start = self.pos;
        while self.peek().is_some_and(is_ident_char) {
            self.pos += 1;
        }
        if start == self.pos {
            return self.err("expected identifier");
        }
        Ok((
            start,
            String::from_utf8_lossy(&self.src[start..self.pos]).into_owned(),
        ))
    }

    fn identifier(&mut self, what: &str) -> Result<String, RuleError> {
        let (start, w) = self.word()?;
        if !is_ident_start(w.as_bytes()[0]) {
            return self.err_at(
                start,
                format!("{what} `{w}`: the first character can't be a digit"),
            );
        }
        if w.len() > MAX_IDENT_LEN {
            return self.err_at(
                start,
                format!("{what} is longer than {MAX_IDENT_LEN} characters"),
            );
        }
        Ok(w)
    }

    fn expect(&mut self, c: u8) -> Result<(), RuleError> {
        self.skip_trivia()?;
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            self.err(format!("expected `{}`", c as char))
        }
    }

    fn expect_keyword(&mut self, kw: &str) -> Result<(), RuleError> {
        let (start, w) = self.word()?;
        if w != kw {
            return self.err_at(start, format!("expected `{kw}`, found `{w}`"));
        }
        Ok(())
    }

    fn peek_word(&mut self) -> Result<Option<String>, RuleError> {
        self.skip_trivia()?;
        let save = self.pos;
        let w = if self.peek().is_some_and(is_ident_char) {
            Some(self.word()?.1)
        } else {
            None
        };
        self.pos = save;
        Ok(w)
    }

    fn rule(&mut self) -> Result<Rule, RuleError> {
        let (start, mut kw) = self.word()?;
        while kw == "private" || kw == "global" {
            kw = self.word()?.1;
        }
        if kw == "import" || kw == "include" {
            return self.err_at(start, format!("`{kw}` is not supported"));
        }
        if kw != "rule" {
            return self.err_at(start, format!("expected `rule`, found `{kw}`"));
        }
        let name = self.identifier("rule name")?;
        let mut tags = Vec::new();
        self.skip_trivia()?;
        if self.peek() == Some(b':') {
            self.pos += 1;
            while self.peek_word()?.is_some() {
                tags.push(self.identifier("tag")?);
            }
        }
        self.expect(b'{')?;

        let mut meta = Vec::new();
        let mut strings = Vec::new();
        let condition;
        let mut section = self.word()?;
        if section.1 == "meta" {
            self.expect(b':')?;
            meta = self.meta_section()?;
            section = self.word()?;
        }
        if section.1 == "strings" {
            self.expect(b':')?;
            strings = self.strings_section(&name)?;
            section = self.word()?;
        }
        if section.1 == "condition" {
            self.expect(b':')?;
            let ids: Vec<&str> = strings.iter().map(|p: &Pattern| p.id.as_str()).collect();
            condition = self.expr(&ids)?;
        } else {
            return self.err_at(
                section.0,
                format!("expected `condition`, found `{}`", section.1),
            );
        }
        self.expect(b'}')?;

        let rule = Rule {
            name,
            tags,
            meta,
            strings,
            condition,
        };
        validate(&rule)?;
        Ok(rule)
    }

    fn meta_section(&mut self) -> Result<Vec<(String, String)>, RuleError> {
        let mut meta = Vec::new();
        loop {
            match self.peek_word()? {
                Some(w) if w == "strings" || w == "condition" => return Ok(meta),
                Some(_) => {}
                None => return self.err("expected meta entry"),
            }
            let key = self.identifier("meta key")?;
            self.expect(b'=')?;
            self.skip_trivia()?;
            let value = match self.peek() {
                Some(b'"') => String::from_utf8_lossy(&self.quoted()?).into_owned(),
                Some(b) if b == b'-' || b.is_ascii_digit() => {
                    let start = self.pos;
                    self.pos += 1;
                    while self.peek().is_some_and(|b| b.is_ascii_alphanumeric()) {
                        self.pos += 1;
                    }
                    let lit = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
                    if parse_int(&lit).is_none() {
                        return self.err_at(start, format!("bad integer `{lit}`"));
                    }
                    lit
                }
                _ => {
                    let (start, w) = self.word()?;
                    if w != "true" && w != "false" {
                        return self
                            .err_at(start, "meta value must be a string, integer or boolean");
                    }
                    w
                }
            };
            meta.push((key, value));
        }
    }

    fn strings_section(&mut self, rule: &str) -> Result<Vec<Pattern>, RuleError> {
        let mut out: Vec<Pattern> = Vec::new();
        loop {
            self.skip_trivia()?;
            if self.peek() != Some(b'$') {
                return Ok(out);
            }
            let id = self.string_id()?;
            if id == "$" {
                return self.err("anonymous strings are not supported");
            }
            if out.iter().any(|p| p.id == id) {
                return Err(RuleError::DuplicatePattern {
                    rule: rule.to_string(),
                    id,
                });
            }
            self.expect(b'=')?;
            self.skip_trivia()?;
            let body = match self.peek() {
                Some(b'"') => {
                    let bytes = self.quoted()?;
                    let mut modifiers = TextModifiers::default();
                    self.modifiers(|m, start, p| match m {
                        "nocase" => {
                            let _: () = modifiers.nocase = true;
                            Ok(())
                        },
                        "fullword" => {
                            let _: () = modifiers.fullword = true;
                            Ok(())
                        },
                        "ascii" => Ok(()),
                        other => p.err_at(start, format!("unsupported string modifier `{other}`")),
                    })?;
                    if bytes.is_empty() {
                        return self.err("empty text string");
                    }
                    PatternBody::Text { bytes, modifiers }
                }
                Some(b'{') => {
                    let tokens = self.hex()?;
                    self.modifiers(|m, start, p| {
                        p.err_at(start, format!("modifier `{m}` not allowed on hex strings"))
                    })?;
                    PatternBody::Hex(tokens)
                }
                Some(b'/') => {
                    let (source, nocase, dot_all) = self.regex()?;
                    self.modifiers(|m, start, p| match m {
                        "nocase" | "ascii" => Ok(()),
                        other => p.err_at(start, format!("unsupported regex modifier `{other}`")),
                    })?;
                    PatternBody::Regex {
                        source,
                        nocase,
                        dot_all,
                    }
                }
                _ => return self.err("expected text, hex or regex string"),
            };
            out.push(Pattern { id, body });
        }
    }

    fn modifiers(
        &mut self,
        mut apply: impl FnMut(&str, usize, &Self) -> Result<(), RuleError>,
    ) -> Result<(), RuleError> {
        loop {
            match self.peek_word()? {
                Some(w) if w == "condition" || w == "strings" || w == "meta" => return Ok(()),
                Some(_) => {
                    let (start, w) = self.word()?;
                    apply(&w, start, self)?;
                }
                None => return Ok(()),
            }
        }
    }

    fn string_id(&mut self) -> Result<String, RuleError> {
        self.skip_trivia()?;
        let start = self.pos;
        self.pos += 1; // '$'
        while self.peek().is_some_and(is_ident_char) {
            self.pos += 1;
        }
        let id = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        if id.len() > MAX_IDENT_LEN + 1 {
            return self.err_at(
                start,
                format!("string identifier longer than {MAX_IDENT_LEN} characters"),
            );
        }
        Ok(id)
    }

    /// A double-quoted string with C escapes. Raw line breaks are kept as-is.
    fn quoted(&mut self) -> Result<Vec<u8>, RuleError> {
        let start = self.pos;
        self.pos += 1;
        let mut out = Vec::new();
        loop {
            match self.peek() {
                None => return self.err_at(start, "unterminated string"),
                Some(b'"') => {
                    self.pos += 1;
                    return Ok(out);
                }
                Some(b'\\') => {
                    let esc_pos = self.pos;
                    self.pos += 1;
                    match self.peek() {
                        Some(b'"') => out.push(b'"'),
                        Some(b'\\') => out.push(b'\\'),
                        Some(b'n') => out.push(b'\n'),
                        Some(b't') => out.push(b'\t'),
                        Some(b'r') => out.push(b'\r'),
                        Some(b'x') => {
                            let hex = self.src.get(self.pos + 1..self.pos + 3);
                            let val = hex
                                .and_then(|h| std::str::from_utf8(h).ok())
                                .and_then(|h| u8::from_str_radix(h, 16).ok());
                            match val {
                                Some(v) => {
                                    out.push(v);
                                    self.pos += 2;
                                }
                                None => return self.err_at(esc_pos, "`\\x` needs two hex digits"),
                            }
                        }
                        _ => return self.err_at(esc_pos, "unknown escape sequence"),
                    }
                    self.pos += 1;
                }
                Some(b) => {
                    out.push(b);
                    self.pos += 1;
                }
            }
        }
    }

    fn hex(&mut self) -> Result<Vec<HexToken>, RuleError> {
        let start = self.pos;
        self.pos += 1; // '{'
        let mut tokens = Vec::new();
        loop {
            self.skip_trivia()?;
            match self.peek() {
                None => return self.err_at(start, "unterminated hex string"),
                Some(b'}') => {
                    self.pos += 1;
                    break;
                }
                Some(b'?') if self.peek_at(1) == Some(b'?') => {
                    tokens.push(HexToken::Any);
                    self.pos += 2;
                }
                Some(a) if a.is_ascii_hexdigit() => match self.peek_at(1) {
                    Some(b) if b.is_ascii_hexdigit() => {
                        let pair = [a, b];
                        let s = std::str::from_utf8(&pair).expect("ascii");
                        tokens.push(HexToken::Byte(
                            u8::from_str_radix(s, 16).expect("hex digits"),
                        ));
                        self.pos += 2;
                    }
                    _ => return self.err("hex strings take whole bytes (two hex digits) or `??`"),
                },
                Some(b'[') | Some(b'(') | Some(b'|') => {
                    return self.err("hex jumps and alternatives are not supported");
                }
                Some(_) => return self.err("hex strings can only contain hex digits and `??`"),
            }
        }
        if tokens.is_empty() {
            return self.err_at(start, "empty hex string");
        }
        if !tokens.iter().any(|t| matches!(t, HexToken::Byte(_))) {
            return self.err_at(start, "hex string needs at least one concrete byte");
        }
        Ok(tokens)
    }

    fn regex(&mut self) -> Result<(String, bool, bool), RuleError> {
        let start = self.pos;
        self.pos += 1;
        let body_start = self.pos;
        loop {
            match self.peek() {
                None | Some(b'\n') => return self.err_at(start, "unterminated regular expression"),
                Some(b'\\') => self.pos += 2,
                Some(b'/') => break,
                Some(_) => self.pos += 1,
            }
        }
        let source = String::from_utf8_lossy(&self.src[body_start..self.pos]).into_owned();
        self.pos += 1;
        let (mut nocase, mut dot_all) = (false, false);
        while let Some(b) = self.peek() {
            match b {
                b'i' => nocase = true,
                b's' => dot_all = true,
                _ => break,
            }
            self.pos += 1;
        }
        if source.is_empty() {
            return self.err_at(start, "empty regular expression");
        }
        Ok((source, nocase, dot_all))
    }

    fn expr(&mut self, ids: &[&str]) -> Result<Condition, RuleError> {
        let mut lhs = self.and_expr(ids)?;
        while self.peek_word()?.as_deref() == Some("or") {
            self.word()?;
            let rhs = self.and_expr(ids)?;
            lhs = Condition::Or(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn and_expr(&mut self, ids: &[&str]) -> Result<Condition, RuleError> {
        let mut lhs = self.not_expr(ids)?;
        while self.peek_word()?.as_deref() == Some("and") {
            self.word()?;
            let rhs = self.not_expr(ids)?;
            lhs = Condition::And(Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn not_expr(&mut self, ids: &[&str]) -> Result<Condition, RuleError> {
        if self.peek_word()?.as_deref() == Some("not") {
            self.word()?;
            return Ok(Condition::Not(Box::new(self.not_expr(ids)?)));
        }
        self.primary(ids)
    }

    fn primary(&mut self, ids: &[&str]) -> Result<Condition, RuleError> {
        self.skip_trivia()?;
        let start = self.pos;
        match self.peek() {
            Some(b'(') => {
                self.pos += 1;
                let inner = self.expr(ids)?;
                self.expect(b')')?;
                Ok(inner)
            }
            Some(b'$') => {
                let id = self.string_id()?;
                if id == "$" {
                    return self.err_at(start, "anonymous string references are not supported");
                }
                self.reject_operators()?;
                Ok(Condition::StringRef(id))
            }
            Some(b'#') | Some(b'@') | Some(b'!') => {
                self.err("string counts, offsets and lengths are not supported")
            }
            Some(b) if b.is_ascii_digit() => {
                let (s, w) = self.word()?;
                let n = match parse_int(&w) {
                    Some(n) if n >= 0 => n as usize,
                    _ => return self.err_at(s, format!("bad number `{w}`")),
                };
                if self.peek_word()?.as_deref() != Some("of") {
                    return self.err_at(s, "only `N of ...` expressions may start with a number");
                }
                self.word()?;
                let target = self.of_target(ids)?;
                Ok(Condition::Of { count: n, target })
            }
            Some(b) if is_ident_start(b) => {
                let (s, w) = self.word()?;
                match w.as_str() {
                    "true" => Ok(Condition::Bool(true)),
                    "false" => Ok(Condition::Bool(false)),
                    "any" | "all" => {
                        self.expect_keyword("of")?;
                        let target = self.of_target(ids)?;
                        let count = if w == "any" {
                            1
                        } else {
                            match &target {
                                OfTarget::Them => ids.len(),
                                OfTarget::Ids(v) => v.len(),
                            }
                        };
                        Ok(Condition::Of { count, target })
                    }
                    other => self.err_at(s, format!("unsupported condition term `{other}`")),
                }
            }
            _ => self.err("expected condition"),
        }
    }

    fn reject_operators(&mut self) -> Result<(), RuleError> {
        if let Some(w) = self.peek_word()? {
            if w == "at" || w == "in" {
                return self.err(format!("`{w}` is not supported"));
            }
        }
        Ok(())
    }

    fn of_target(&mut self, ids: &[&str]) -> Result<OfTarget, RuleError> {
        self.skip_trivia()?;
        if self.peek() != Some(b'(') {
            let (s, w) = self.word()?;
            return if w == "them" {
                Ok(OfTarget::Them)
            } else {
                self.err_at(s, "expected `them` or a string list")
            };
        }
        self.pos += 1;
        let mut out: Vec<String> = Vec::new();
        loop {
            self.skip_trivia()?;
            if self.peek() != Some(b'$') {
                return self.err("expected string identifier");
            }
            let start = self.pos;
            let id = self.string_id()?;
            if self.peek() == Some(b'*') {
                self.pos += 1;
                let matched: Vec<&str> =
                    ids.iter().copied().filter(|d| d.starts_with(&id)).collect();
                if matched.is_empty() {
                    return self.err_at(start, format!("`{id}*` matches no declared string"));
                }
                for m in matched {
                    if !out.iter().any(|o| o == m) {
                        out.push(m.to_string());
                    }
                }
            } else if !out.contains(&id) {
                out.push(id);
            }
            self.skip_trivia()?;
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    return Ok(OfTarget::Ids(out));
                }
                _ => return self.err("expected `,` or `)`"),
            }
        }
    }
}

fn parse_int(s: &str) -> Option<i64> {
    let (neg, digits) = s.strip_prefix('-').map_or((false, s), |d| (true, d));
    let v = if let Some(h) = digits.strip_prefix("0x") {
        i64::from_str_radix(h, 16).ok()?
    } else {
        digits.parse::<i64>().ok()?
    };
    Some(if neg { -v } else { v })
}

fn validate(rule: &Rule) -> Result<(), RuleError> {
    let declared: HashSet<&str> = rule.strings.iter().map(|p| p.id.as_str()).collect();
    let invalid = |msg: String| {
        Err(RuleError::Invalid {
            rule: rule.name.clone(),
            msg,
        })
    };
    fn walk<'c>(c: &'c Condition, out: &mut Vec<&'c Condition>) {
        out.push(c);
        match c {
            Condition::And(a, b) | Condition::Or(a, b) => {
                walk(a, out);
                walk(b, out);
            }
            Condition::Not(a) => walk(a, out),
            _ => {}
        }
    }
    let mut nodes = Vec::new();
    walk(&rule.condition, &mut nodes);
    for node in nodes {
        match node {
            Condition::StringRef(id) if !declared.contains(id.as_str()) => {
                return Err(RuleError::UnresolvedString {
                    rule: rule.name.clone(),
                    id: id.clone(),
                });
            }
            Condition::Of { count, target } => {
                let available = match target {
                    OfTarget::Them => declared.len(),
                    OfTarget::Ids(ids) => {
                        if let Some(missing) = ids.iter().find(|id| !declared.contains(id.as_str()))
                        {
                            return Err(RuleError::UnresolvedString {
                                rule: rule.name.clone(),
                                id: missing.clone(),
                            });
                        }
                        ids.len()
                    }
                };
                if available == 0 {
                    return invalid("`of them` used in a rule without strings".into());
                }
                if *count < 1 || *count > available {
                    return invalid(format!(
                        "`{count} of` needs a count between 1 and {available}"
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}
