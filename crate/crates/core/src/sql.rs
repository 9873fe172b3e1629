//! Feature extraction for conjunctive SQL.
//!
//! Every statement maps to a set of features: one per SELECT column, one per
//! FROM source (tables or whole sub-queries), and one per conjunctive atom of
//! the WHERE clause. Constants are replaced by `?` and identifiers are
//! lowercased, so two statements that differ only in literal values, column
//! order, or conjunct order produce the same feature set.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{LogrError, Result};
use crate::log::Log;
use crate::pattern::Pattern;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Select,
    From,
    Where,
}

impl Category {
    pub fn as_str(self) -> &'static str {
        match self {
            Category::Select => "SELECT",
            Category::From => "FROM",
            Category::Where => "WHERE",
        }
    }
}

impl FromStr for Category {
    type Err = LogrError;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "SELECT" => Ok(Category::Select),
            "FROM" => Ok(Category::From),
            "WHERE" => Ok(Category::Where),
            other => Err(LogrError::InvalidArgument(format!(
                "unknown feature category `{other}`"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Feature {
    pub category: Category,
    pub text: String,
}

impl Feature {
    pub fn new(category: Category, text: impl Into<String>) -> Self {
        Feature {
            category,
            text: text.into(),
        }
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.category.as_str(), self.text)
    }
}

impl FromStr for Feature {
    type Err = LogrError;

    /// Parses `CATEGORY:text`, normalizing `text` the same way the SQL
    /// extractor does (`FROM:Messages` and `from:messages` are equal).
    fn from_str(s: &str) -> Result<Self> {
        let (cat, text) = s.split_once(':').ok_or_else(|| {
            LogrError::InvalidArgument(format!("feature `{s}` is not of the form CATEGORY:text"))
        })?;
        let category: Category = cat.parse()?;
        let tokens = tokenize(text)?;
        if tokens.is_empty() {
            return Err(LogrError::InvalidArgument(format!("feature `{s}` has empty text")));
        }
        Ok(Feature::new(category, render(&tokens)))
    }
}

/// Dense, bidirectional feature ↔ id map.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Vocabulary {
    features: Vec<Feature>,
    index: HashMap<Feature, usize>,
}

impl Vocabulary {
    pub fn new() -> Self {
        Self::default()
    }

    /// Returns the id of `feature`, assigning the next free id if unseen.
    pub fn intern(&mut self, feature: Feature) -> usize {
        if let Some(&id) = self.index.get(&feature) {
            return id;
        }
        let id = self.features.len();
        self.index.insert(feature.clone(), id);
        self.features.push(feature);
        id
    }

    pub fn id(&self, feature: &Feature) -> Option<usize> {
        self.index.get(feature).copied()
    }

    pub fn feature(&self, id: usize) -> Option<&Feature> {
        self.features.get(id)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn features(&self) -> &[Feature] {
        &self.features
    }

    pub fn labels(&self) -> Vec<String> {
        self.features.iter().map(ToString::to_string).collect()
    }

    /// Rebuilds a vocabulary from `CATEGORY:text` labels, in order.
    pub fn from_labels<S: AsRef<str>>(labels: &[S]) -> Result<Self> {
        let mut vocab = Vocabulary::new();
        for label in labels {
            let feature: Feature = label.as_ref().parse()?;
            if vocab.id(&feature).is_some() {
                return Err(LogrError::InvalidArgument(format!(
                    "duplicate feature `{feature}`"
                )));
            }
            vocab.intern(feature);
        }
        Ok(vocab)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RawEntry {
    /// 1-based source line.
    pub line: usize,
    pub multiplicity: u64,
    pub sql: String,
}

/// Log file contents: one `SQL` or `COUNT<TAB>SQL` entry per line.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RawLogFile {
    pub entries: Vec<RawEntry>,
}

impl RawLogFile {
    /// Blank lines and lines starting with `--` are skipped.
    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (idx, raw_line) in text.lines().enumerate() {
            let line = idx + 1;
            let trimmed = raw_line.trim();
            if trimmed.is_empty() || trimmed.starts_with("--") {
                continue;
            }
            let (multiplicity, sql) = match raw_line.split_once('\t') {
                Some((count, sql)) if !count.trim().is_empty()
                    && count.trim().chars().all(|c| c.is_ascii_digit()) =>
                {
                    let m: u64 = count.trim().parse().map_err(|_| {
                        LogrError::Parse(format!("bad multiplicity `{}`", count.trim()))
                            .at_line(line)
                    })?;
                    if m == 0 {
                        return Err(LogrError::Parse("multiplicity must be at least 1".into())
                            .at_line(line));
                    }
                    (m, sql.trim().to_string())
                }
                _ => (1, trimmed.to_string()),
            };
            entries.push(RawEntry {
                line,
                multiplicity,
                sql,
            });
        }
        Ok(RawLogFile { entries })
    }
}

/// Features of one statement in order of first appearance, plus the number
/// of clauses (GROUP BY, ORDER BY, ...) that carry no features.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParsedQuery {
    pub features: Vec<Feature>,
    pub dropped_clauses: usize,
}

impl ParsedQuery {
    pub fn feature_set(&self) -> BTreeSet<Feature> {
        self.features.iter().cloned().collect()
    }
}

pub fn parse_query(sql: &str) -> Result<BTreeSet<Feature>> {
    parse_query_detailed(sql).map(|p| p.feature_set())
}

pub fn parse_query_detailed(sql: &str) -> Result<ParsedQuery> {
    let mut tokens = tokenize(sql)?;
    while tokens.last() == Some(&Token::Semicolon) {
        tokens.pop();
    }
    if tokens.contains(&Token::Semicolon) {
        return Err(LogrError::Parse("multiple statements in one entry".into()));
    }
    if tokens.is_empty() {
        return Err(LogrError::Parse("empty statement".into()));
    }
    Parser::default().statement(&tokens)
}

/// Result of [`build_log`].
#[derive(Debug, Clone)]
pub struct BuiltLog {
    pub vocabulary: Vocabulary,
    pub log: Log,
    /// Clauses parsed but not featurized, summed over entries.
    pub dropped_clauses: usize,
}

pub fn build_log(raw: &RawLogFile) -> Result<BuiltLog> {
    if raw.entries.is_empty() {
        return Err(LogrError::EmptyLog);
    }
    let mut vocabulary = Vocabulary::new();
    let mut ids_per_entry = Vec::with_capacity(raw.entries.len());
    let mut dropped_clauses = 0;
    for entry in &raw.entries {
        let parsed = parse_query_detailed(&entry.sql).map_err(|e| e.at_line(entry.line))?;
        dropped_clauses += parsed.dropped_clauses;
        let ids: Vec<usize> = parsed
            .features
            .into_iter()
            .map(|f| vocabulary.intern(f))
            .collect();
        ids_per_entry.push((ids, entry.multiplicity));
    }
    let n = vocabulary.len();
    let log = Log::from_rows(
        n,
        ids_per_entry
            .into_iter()
            .map(|(ids, m)| (Pattern::from_ids(n, ids), m)),
    )?;
    Ok(BuiltLog {
        vocabulary,
        log,
        dropped_clauses,
    })
}

// ---------------------------------------------------------------------------
// Tokenizer

#[derive(Debug, Clone, PartialEq, Eq)]
enum Token {
    Ident(String),
    Keyword(&'static str),
    Const,
    Op(String),
    LParen,
    RParen,
    Comma,
    Dot,
    Semicolon,
}

const KEYWORDS: &[&str] = &[
    "SELECT", "DISTINCT", "ALL", "FROM", "WHERE", "AND", "OR", "NOT", "GROUP", "BY", "ORDER",
    "HAVING", "LIMIT", "OFFSET", "AS", "JOIN", "INNER", "LEFT", "RIGHT", "FULL", "OUTER",
    "CROSS", "NATURAL", "ON", "USING", "IN", "IS", "NULL", "LIKE", "GLOB", "ESCAPE", "BETWEEN",
    "EXISTS", "UNION", "INTERSECT", "EXCEPT", "ASC", "DESC", "CASE", "WHEN", "THEN", "ELSE",
    "END", "COLLATE", "INSERT", "UPDATE", "DELETE", "WITH",
];

fn keyword(word: &str) -> Option<&'static str> {
    let upper = word.to_ascii_uppercase();
    KEYWORDS.iter().copied().find(|k| *k == upper)
}

fn tokenize(sql: &str) -> Result<Vec<Token>> {
    let chars: Vec<char> = sql.chars().collect();
    let mut tokens = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let c = chars[i];
        match c {
            c if c.is_whitespace() => i += 1,
            '-' if chars.get(i + 1) == Some(&'-') => {
                while i < chars.len() && chars[i] != '\n' {
                    i += 1;
                }
            }
            '/' if chars.get(i + 1) == Some(&'*') => {
                i += 2;
                loop {
                    if i + 1 >= chars.len() {
                        return Err(LogrError::Parse("unterminated comment".into()));
                    }
                    if chars[i] == '*' && chars[i + 1] == '/' {
                        i += 2;
                        break;
                    }
                    i += 1;
                }
            }
            '\'' => {
                i += 1;
                loop {
                    match chars.get(i) {
                        None => return Err(LogrError::Parse("unterminated string literal".into())),
                        Some('\'') if chars.get(i + 1) == Some(&'\'') => i += 2,
                        Some('\'') => {
                            i += 1;
                            break;
                        }
                        Some(_) => i += 1,
                    }
                }
                tokens.push(Token::Const);
            }
            '"' | '`' | '[' => {
                let close = match c {
                    '[' => ']',
                    other => other,
                };
                let start = i + 1;
                let mut j = start;
                while j < chars.len() && chars[j] != close {
                    j += 1;
                }
                if j >= chars.len() {
                    return Err(LogrError::Parse("unterminated quoted identifier".into()));
                }
                let name: String = chars[start..j].iter().collect();
                if name.is_empty() || name.chars().any(|c| c.is_control()) {
                    return Err(LogrError::Parse(format!("invalid quoted identifier `{name}`")));
                }
                tokens.push(Token::Ident(name.to_lowercase()));
                i = j + 1;
            }
            '?' => {
                i += 1;
                while i < chars.len() && chars[i].is_ascii_digit() {
                    i += 1;
                }
                tokens.push(Token::Const);
            }
            '$' | ':' | '@' if chars.get(i + 1).is_some_and(|n| n.is_alphanumeric() || *n == '_') => {
                i += 1;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_') {
                    i += 1;
                }
                tokens.push(Token::Const);
            }
            c if c.is_ascii_digit()
                || (c == '.' && chars.get(i + 1).is_some_and(|n| n.is_ascii_digit())) =>
            {
                i = scan_number(&chars, i);
                tokens.push(Token::Const);
            }
            c if c.is_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_alphanumeric() || chars[i] == '_' || chars[i] == '$') {
                    i += 1;
                }
                let word: String = chars[start..i].iter().collect();
                let upper = word.to_ascii_uppercase();
                if upper == "TRUE" || upper == "FALSE" {
                    tokens.push(Token::Const);
                } else if let Some(k) = keyword(&word) {
                    tokens.push(Token::Keyword(k));
                } else {
                    tokens.push(Token::Ident(word.to_lowercase()));
                }
            }
            '(' => {
                tokens.push(Token::LParen);
                i += 1;
            }
            ')' => {
                tokens.push(Token::RParen);
                i += 1;
            }
            ',' => {
                tokens.push(Token::Comma);
                i += 1;
            }
            '.' => {
                tokens.push(Token::Dot);
                i += 1;
            }
            ';' => {
                tokens.push(Token::Semicolon);
                i += 1;
            }
            _ => {
                let two: String = chars[i..(i + 2).min(chars.len())].iter().collect();
                let op = match two.as_str() {
                    "<=" | ">=" | "<>" | "!=" | "==" | "||" => two,
                    _ if "=<>+-*/%|&~".contains(c) => c.to_string(),
                    _ => return Err(LogrError::Parse(format!("unexpected character `{c}`"))),
                };
                i += op.chars().count();
                // A sign directly in front of a number is part of the literal.
                if (op == "-" || op == "+")
                    && i < chars.len()
                    && chars[i].is_ascii_digit()
                    && matches!(
                        tokens.last(),
                        None | Some(Token::Op(_) | Token::Keyword(_) | Token::LParen | Token::Comma)
                    )
                {
                    i = scan_number(&chars, i);
                    tokens.push(Token::Const);
                } else {
                    tokens.push(Token::Op(op));
                }
            }
        }
    }
    Ok(tokens)
}

fn scan_number(chars: &[char], mut i: usize) -> usize {
    while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '.') {
        if (chars[i] == 'e' || chars[i] == 'E')
            && matches!(chars.get(i + 1), Some('+') | Some('-'))
        {
            i += 1;
        }
        i += 1;
    }
    i
}

/// Canonical text of a token run. Lists made only of constants collapse to
/// `(?)` so `IN (1, 2)` and `IN (3)` coincide.
fn render(tokens: &[Token]) -> String {
    let mut out = String::new();
    let mut prev: Option<&Token> = None;
    let mut i = 0;
    while i < tokens.len() {
        if tokens[i] == Token::LParen {
            if let Some(len) = constant_list_len(&tokens[i..]) {
                if let Some(p) = prev {
                    if needs_space(p, &Token::LParen) {
                        out.push(' ');
                    }
                }
                out.push_str("(?)");
                prev = Some(&Token::RParen);
                i += len;
                continue;
            }
        }
        let tok = &tokens[i];
        if let Some(p) = prev {
            if needs_space(p, tok) {
                out.push(' ');
            }
        }
        match tok {
            Token::Ident(s) => out.push_str(s),
            Token::Keyword(k) => out.push_str(k),
            Token::Const => out.push('?'),
            Token::Op(o) => out.push_str(o),
            Token::LParen => out.push('('),
            Token::RParen => out.push(')'),
            Token::Comma => out.push(','),
            Token::Dot => out.push('.'),
            Token::Semicolon => out.push(';'),
        }
        prev = Some(tok);
        i += 1;
    }
    out
}

fn constant_list_len(tokens: &[Token]) -> Option<usize> {
    let mut i = 1;
    loop {
        if tokens.get(i) != Some(&Token::Const) {
            return None;
        }
        i += 1;
        match tokens.get(i) {
            Some(Token::Comma) => i += 1,
            Some(Token::RParen) => return Some(i + 1),
            _ => return None,
        }
    }
}

fn needs_space(prev: &Token, next: &Token) -> bool {
    match (prev, next) {
        (_, Token::Comma | Token::RParen | Token::Dot) => false,
        (Token::LParen | Token::Dot, _) => false,
        (Token::Ident(_), Token::LParen) => false,
        (Token::Keyword(_), Token::Op(_)) | (Token::Op(_), Token::Keyword(_)) => true,
        (Token::Op(_), _) | (_, Token::Op(_)) => false,
        _ => true,
    }
}

// ---------------------------------------------------------------------------
// Statement structure

#[derive(Default)]
struct Parser {
    features: Vec<Feature>,
    dropped: usize,
}

/// Positions of tokens at paren depth zero that satisfy `pred`.
fn top_level<F: Fn(&Token) -> bool>(tokens: &[Token], pred: F) -> Result<Vec<usize>> {
    let mut depth = 0usize;
    let mut hits = Vec::new();
    for (i, t) in tokens.iter().enumerate() {
        match t {
            Token::LParen => depth += 1,
            Token::RParen => {
                depth = depth
                    .checked_sub(1)
                    .ok_or_else(|| LogrError::Parse("unbalanced `)`".into()))?;
            }
            _ if depth == 0 && pred(t) => hits.push(i),
            _ => {}
        }
    }
    if depth != 0 {
        return Err(LogrError::Parse("unbalanced `(`".into()));
    }
    Ok(hits)
}

fn split_top_level<'a>(tokens: &'a [Token], sep: &Token) -> Result<Vec<&'a [Token]>> {
    let cuts = top_level(tokens, |t| t == sep)?;
    let mut parts = Vec::with_capacity(cuts.len() + 1);
    let mut start = 0;
    for cut in cuts {
        parts.push(&tokens[start..cut]);
        start = cut + 1;
    }
    parts.push(&tokens[start..]);
    Ok(parts)
}

/// Strips parens that enclose the whole run, e.g. `((a=?))` → `a=?`.
fn unwrap_parens(mut tokens: &[Token]) -> &[Token] {
    while tokens.len() >= 2 && tokens[0] == Token::LParen && tokens[tokens.len() - 1] == Token::RParen {
        let mut depth = 0usize;
        let mut closes_at_end = true;
        for (i, t) in tokens.iter().enumerate() {
            match t {
                Token::LParen => depth += 1,
                Token::RParen => {
                    depth -= 1;
                    if depth == 0 && i != tokens.len() - 1 {
                        closes_at_end = false;
                        break;
                    }
                }
                _ => {}
            }
        }
        if !closes_at_end || tokens.get(1) == Some(&Token::Keyword("SELECT")) {
            break;
        }
        tokens = &tokens[1..tokens.len() - 1];
    }
    tokens
}

fn text_of(tokens: &[Token]) -> String {
    render(tokens)
}

fn unsupported(reason: &str, tokens: &[Token]) -> LogrError {
    LogrError::UnsupportedQuery {
        reason: reason.to_string(),
        clause: text_of(tokens),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Clause {
    Select,
    From,
    Where,
    GroupBy,
    Having,
    OrderBy,
    Limit,
    Offset,
}

impl Parser {
    fn push(&mut self, category: Category, tokens: &[Token]) -> Result<()> {
        if tokens.is_empty() {
            return Err(LogrError::Parse(format!(
                "empty {} element",
                category.as_str()
            )));
        }
        let feature = Feature::new(category, render(tokens));
        if !self.features.contains(&feature) {
            self.features.push(feature);
        }
        Ok(())
    }

    fn statement(mut self, tokens: &[Token]) -> Result<ParsedQuery> {
        match tokens.first() {
            Some(Token::Keyword("SELECT")) => {}
            Some(Token::Keyword(k @ ("INSERT" | "UPDATE" | "DELETE" | "WITH"))) => {
                return Err(unsupported(&format!("{k} statements are not conjunctive SELECTs"), tokens))
            }
            _ => return Err(LogrError::Parse("statement must start with SELECT".into())),
        }
        let set_ops = top_level(tokens, |t| {
            matches!(t, Token::Keyword("UNION" | "INTERSECT" | "EXCEPT"))
        })?;
        if !set_ops.is_empty() {
            return Err(unsupported("set operations are not conjunctive", tokens));
        }

        let mut marks: Vec<(usize, usize, Clause)> = Vec::new();
        let heads = top_level(tokens, |t| {
            matches!(
                t,
                Token::Keyword("SELECT" | "FROM" | "WHERE" | "GROUP" | "HAVING" | "ORDER" | "LIMIT" | "OFFSET")
            )
        })?;
        for pos in heads {
            let (clause, width) = match &tokens[pos] {
                Token::Keyword("SELECT") => (Clause::Select, 1),
                Token::Keyword("FROM") => (Clause::From, 1),
                Token::Keyword("WHERE") => (Clause::Where, 1),
                Token::Keyword("HAVING") => (Clause::Having, 1),
                Token::Keyword("LIMIT") => (Clause::Limit, 1),
                Token::Keyword("OFFSET") => (Clause::Offset, 1),
                Token::Keyword(k @ ("GROUP" | "ORDER")) => {
                    if tokens.get(pos + 1) != Some(&Token::Keyword("BY")) {
                        return Err(LogrError::Parse(format!("expected BY after {k}")));
                    }
                    (if *k == "GROUP" { Clause::GroupBy } else { Clause::OrderBy }, 2)
                }
                _ => unreachable!(),
            };
            marks.push((pos, width, clause));
        }
        if marks.first().map(|m| m.0) != Some(0) {
            return Err(LogrError::Parse("statement must start with SELECT".into()));
        }
        for pair in marks.windows(2) {
            if pair[1].2 <= pair[0].2 {
                return Err(LogrError::Parse("clauses out of order or repeated".into()));
            }
        }

        let mut select = None;
        let mut from = None;
        let mut where_ = None;
        for (idx, &(pos, width, clause)) in marks.iter().enumerate() {
            let end = marks.get(idx + 1).map_or(tokens.len(), |m| m.0);
            let body = &tokens[pos + width..end];
            if body.is_empty() {
                return Err(LogrError::Parse(format!("empty {clause:?} clause")));
            }
            match clause {
                Clause::Select => select = Some(body),
                Clause::From => from = Some(body),
                Clause::Where => where_ = Some(body),
                _ => self.dropped += 1,
            }
        }
        let select = select.ok_or_else(|| LogrError::Parse("missing SELECT list".into()))?;
        self.select_list(select)?;
        if let Some(from) = from {
            self.from_list(from)?;
        }
        if let Some(cond) = where_ {
            self.conjunction(cond)?;
        }
        Ok(ParsedQuery {
            features: self.features,
            dropped_clauses: self.dropped,
        })
    }

    fn select_list(&mut self, mut body: &[Token]) -> Result<()> {
        if matches!(body.first(), Some(Token::Keyword("DISTINCT" | "ALL"))) {
            self.dropped += 1;
            body = &body[1..];
        }
        for item in split_top_level(body, &Token::Comma)? {
            self.push(Category::Select, strip_alias(item))?;
        }
        Ok(())
    }

    fn from_list(&mut self, body: &[Token]) -> Result<()> {
        for item in split_top_level(body, &Token::Comma)? {
            // Split `a JOIN b ON ... JOIN c USING (...)` into its sources.
            let joins = top_level(item, |t| {
                matches!(
                    t,
                    Token::Keyword("JOIN" | "INNER" | "CROSS" | "LEFT" | "RIGHT" | "FULL" | "NATURAL" | "OUTER")
                )
            })?;
            for &j in &joins {
                if let Token::Keyword(k @ ("LEFT" | "RIGHT" | "FULL" | "NATURAL" | "OUTER")) = &item[j] {
                    return Err(unsupported(&format!("{k} joins are not conjunctive"), item));
                }
            }
            let join_heads: Vec<usize> = joins
                .iter()
                .copied()
                .filter(|&j| item[j] == Token::Keyword("JOIN"))
                .collect();
            let mut start = 0;
            for seg_end in join_heads.iter().copied().chain(std::iter::once(item.len())) {
                let mut seg = &item[start..seg_end];
                // drop the INNER/CROSS modifiers that precede JOIN
                while matches!(seg.last(), Some(Token::Keyword("INNER" | "CROSS"))) {
                    seg = &seg[..seg.len() - 1];
                }
                self.join_segment(seg)?;
                start = seg_end + 1;
            }
        }
        Ok(())
    }

    fn join_segment(&mut self, seg: &[Token]) -> Result<()> {
        let on = top_level(seg, |t| matches!(t, Token::Keyword("ON" | "USING")))?;
        let (source, rest) = match on.first() {
            Some(&p) => (&seg[..p], Some((&seg[p], &seg[p + 1..]))),
            None => (seg, None),
        };
        self.source(source)?;
        match rest {
            Some((Token::Keyword("ON"), cond)) => self.conjunction(cond)?,
            Some((_, _)) => self.dropped += 1,
            None => {}
        }
        Ok(())
    }

    fn source(&mut self, tokens: &[Token]) -> Result<()> {
        if tokens.first() == Some(&Token::LParen) {
            let close = matching_paren(tokens)?;
            let inner = &tokens[..=close];
            if inner.get(1) != Some(&Token::Keyword("SELECT")) {
                return self.from_list(&tokens[1..close]);
            }
            return self.push(Category::From, inner);
        }
        self.push(Category::From, strip_alias(tokens))
    }

    fn conjunction(&mut self, cond: &[Token]) -> Result<()> {
        let cond = unwrap_parens(cond);
        if cond.is_empty() {
            return Err(LogrError::Parse("empty condition".into()));
        }
        check_no_disjunction(cond)?;
        for atom in split_conjuncts(cond)? {
            let inner = unwrap_parens(atom);
            if inner.len() < atom.len() && !top_level(inner, |t| *t == Token::Keyword("AND"))?.is_empty() {
                self.conjunction(inner)?;
            } else {
                self.push(Category::Where, inner)?;
            }
        }
        Ok(())
    }
}

fn matching_paren(tokens: &[Token]) -> Result<usize> {
    let mut depth = 0usize;
    for (i, t) in tokens.iter().enumerate() {
        match t {
            Token::LParen => depth += 1,
            Token::RParen => {
                depth -= 1;
                if depth == 0 {
                    return Ok(i);
                }
            }
            _ => {}
        }
    }
    Err(LogrError::Parse("unbalanced `(`".into()))
}

/// Drops a trailing `AS alias` or bare `alias`.
fn strip_alias(item: &[Token]) -> &[Token] {
    let n = item.len();
    if n >= 3 && item[n - 2] == Token::Keyword("AS") {
        return &item[..n - 2];
    }
    if n >= 2
        && matches!(item[n - 1], Token::Ident(_))
        && matches!(item[n - 2], Token::Ident(_) | Token::RParen | Token::Const)
    {
        return &item[..n - 1];
    }
    item
}

/// Rejects OR anywhere outside a nested sub-query.
fn check_no_disjunction(cond: &[Token]) -> Result<()> {
    // stack of "is this paren a sub-query"
    let mut stack: Vec<bool> = Vec::new();
    for (i, t) in cond.iter().enumerate() {
        match t {
            Token::LParen => stack.push(cond.get(i + 1) == Some(&Token::Keyword("SELECT"))),
            Token::RParen => {
                stack.pop();
            }
            Token::Keyword("OR") if !stack.iter().any(|s| *s) => {
                return Err(unsupported("disjunction in WHERE clause", cond));
            }
            _ => {}
        }
    }
    Ok(())
}

/// Splits on top-level AND, keeping `BETWEEN x AND y` intact.
fn split_conjuncts(cond: &[Token]) -> Result<Vec<&[Token]>> {
    let ands = top_level(cond, |t| matches!(t, Token::Keyword("AND" | "BETWEEN")))?;
    let mut parts = Vec::new();
    let mut start = 0;
    let mut pending_between = false;
    for pos in ands {
        if cond[pos] == Token::Keyword("BETWEEN") {
            pending_between = true;
            continue;
        }
        if pending_between {
            pending_between = false;
            continue;
        }
        parts.push(&cond[start..pos]);
        start = pos + 1;
    }
    parts.push(&cond[start..]);
    if parts.iter().any(|p| p.is_empty()) {
        return Err(LogrError::Parse("dangling AND".into()));
    }
    Ok(parts)
}
