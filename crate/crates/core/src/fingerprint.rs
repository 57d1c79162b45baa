//! Tier 0 query fingerprinting.
//!
//! A query is normalized, typed entities are masked with `<KIND>`
//! placeholders, and the resulting template text is hashed with 64-bit
//! FNV-1a. Parameter variants ("check email from alice" / "... from bob")
//! collapse onto one template; action variants do not.
//!
//! Entity detection is rule-based and driven by plain-text lexicons so the
//! output is deterministic and identical on every platform.

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_normalization::UnicodeNormalization;

use crate::model::{ParamSet, Query, Slot};

pub const FNV_OFFSET_BASIS: u64 = 14_695_981_039_346_656_037;
pub const FNV_PRIME: u64 = 1_099_511_628_211;

const TRIGGER_WORDS: [&str; 4] = ["from", "to", "with", "for"];

#[derive(Debug, Error)]
pub enum FingerprintError {
    #[error("input text is empty after normalization")]
    EmptyInput,
    #[error("entity spans overlap: {0:?} and {1:?}")]
    OverlappingSpans(EntitySpan, EntitySpan),
    #[error("entity span {0:?} is out of bounds or not on a character boundary")]
    InvalidSpan(EntitySpan),
    #[error("lexicon directory {0}: {1}")]
    Lexicon(String, String),
}

/// Entity kinds, listed from highest to lowest precedence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EntityKind {
    Url,
    EmailAddr,
    Quoted,
    Datetime,
    Number,
    Ticker,
    Person,
}

impl EntityKind {
    pub const PRECEDENCE: [EntityKind; 7] = [
        EntityKind::Url,
        EntityKind::EmailAddr,
        EntityKind::Quoted,
        EntityKind::Datetime,
        EntityKind::Number,
        EntityKind::Ticker,
        EntityKind::Person,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Url => "URL",
            EntityKind::EmailAddr => "EMAIL_ADDR",
            EntityKind::Quoted => "QUOTED",
            EntityKind::Datetime => "DATETIME",
            EntityKind::Number => "NUMBER",
            EntityKind::Ticker => "TICKER",
            EntityKind::Person => "PERSON",
        }
    }

    /// Parameter slot this kind feeds, if any.
    pub fn slot(self) -> Option<Slot> {
        match self {
            EntityKind::Person | EntityKind::Ticker => Some(Slot::Who),
            EntityKind::Datetime => Some(Slot::When),
            EntityKind::Number => Some(Slot::HowMuch),
            _ => None,
        }
    }

    pub fn placeholder(self) -> String {
        format!("<{}>", self.as_str())
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Byte range `[start, end)` of an entity inside normalized text.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EntitySpan {
    pub start: usize,
    pub end: usize,
    pub kind: EntityKind,
}

impl EntitySpan {
    pub fn new(start: usize, end: usize, kind: EntityKind) -> Self {
        Self { start, end, kind }
    }

    fn overlaps(&self, other: &EntitySpan) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Template {
    pub text: String,
    /// `(kind, surface)` in order of appearance.
    pub entities: Vec<(EntityKind, String)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Fingerprint {
    pub hash: u64,
}

/// One line of `canoncache fingerprint` output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FingerprintRecord {
    pub id: String,
    pub hash: u64,
    pub template: String,
    pub params: ParamSet,
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// NFKC, lowercase, collapse whitespace, trim, and strip terminal `.?!`.
pub fn normalize_text(text: &str) -> Result<String, FingerprintError> {
    let folded: String = text.nfkc().collect::<String>().to_lowercase();
    let mut out = folded.split_whitespace().collect::<Vec<_>>().join(" ");
    loop {
        let trimmed = out.trim_end_matches(['.', '?', '!']).trim_end();
        if trimmed.len() == out.len() {
            break;
        }
        out.truncate(trimmed.len());
    }
    if out.is_empty() {
        return Err(FingerprintError::EmptyInput);
    }
    Ok(out)
}

/// Lexicons backing PERSON and TICKER detection.
#[derive(Debug, Clone, Default)]
pub struct Lexicons {
    pub names: BTreeSet<String>,
    pub tickers: BTreeSet<String>,
    pub stopwords: BTreeSet<String>,
}

const DEFAULT_NAMES: &str = include_str!("../data/lexicons/names.txt");
const DEFAULT_TICKERS: &str = include_str!("../data/lexicons/tickers.txt");
const DEFAULT_STOPWORDS: &str = include_str!("../data/lexicons/stopwords.txt");

/// Parses a lexicon file: one token per line, `#` starts a comment.
pub fn parse_lexicon(content: &str) -> BTreeSet<String> {
    content
        .lines()
        .map(|line| line.split('#').next().unwrap_or("").trim().to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

impl Lexicons {
    /// The lexicons shipped in `data/lexicons/`.
    pub fn builtin() -> Self {
        Self {
            names: parse_lexicon(DEFAULT_NAMES),
            tickers: parse_lexicon(DEFAULT_TICKERS),
            stopwords: parse_lexicon(DEFAULT_STOPWORDS),
        }
    }

    /// Loads `names.txt`, `tickers.txt` and `stopwords.txt` from `dir`.
    /// Missing files yield empty sets, but at least one must exist.
    pub fn load(dir: &Path) -> Result<Self, FingerprintError> {
        let err = |msg: String| FingerprintError::Lexicon(dir.display().to_string(), msg);
        if !dir.is_dir() {
            return Err(err("not a directory".into()));
        }
        let mut found = 0;
        let mut read = |name: &str| -> Result<BTreeSet<String>, FingerprintError> {
            let path = dir.join(name);
            if !path.exists() {
                return Ok(BTreeSet::new());
            }
            found += 1;
            let content = fs::read_to_string(&path).map_err(|e| err(format!("{name}: {e}")))?;
            Ok(parse_lexicon(&content))
        };
        let lex = Self { names: read("names.txt")?, tickers: read("tickers.txt")?, stopwords: read("stopwords.txt")? };
        if found == 0 {
            return Err(err("no lexicon files found".into()));
        }
        Ok(lex)
    }
}

struct Patterns {
    url: Regex,
    email: Regex,
    quoted: Vec<Regex>,
    datetime: Vec<Regex>,
    token: Regex,
}

fn patterns() -> &'static Patterns {
    static PATTERNS: OnceLock<Patterns> = OnceLock::new();
    PATTERNS.get_or_init(|| Patterns {
        url: Regex::new(r"(?:https?://|www\.)[^\s]+").unwrap(),
        email: Regex::new(r"[a-z0-9._%+\-]+@[a-z0-9.\-]+\.[a-z]{2,}").unwrap(),
        quoted: vec![
            Regex::new(r#""([^"]+)""#).unwrap(),
            Regex::new(r"\u{201c}([^\u{201d}]+)\u{201d}").unwrap(),
            // single quotes only when they open after whitespace and close before a boundary,
            // so apostrophes ("what's") are left alone
            Regex::new(r"(?:^|\s)'([^']+)'(?:$|[\s,.;:!?])").unwrap(),
        ],
        datetime: vec![
            Regex::new(r"\b\d{1,2}(?::\d{2})?\s?(?:am|pm)\b").unwrap(),
            Regex::new(r"\b\d{1,2}:\d{2}\b").unwrap(),
            Regex::new(r"\b(?:monday|tuesday|wednesday|thursday|friday|saturday|sunday)\b").unwrap(),
            Regex::new(r"\b(?:today|tomorrow|tonight)\b").unwrap(),
        ],
        token: Regex::new(r"\S+").unwrap(),
    })
}

const LEADING_PUNCT: &[char] = &['"', '\'', '(', '[', '{', '<', ',', ';', ':', '\u{201c}', '\u{2018}'];
const TRAILING_PUNCT: &[char] = &['"', '\'', ')', ']', '}', '>', ',', ';', ':', '.', '?', '!', '\u{201d}', '\u{2019}'];

/// A whitespace token with surrounding punctuation (and a possessive `'s`) removed.
struct Token<'a> {
    start: usize,
    end: usize,
    core: &'a str,
}

fn tokens(text: &str) -> Vec<Token<'_>> {
    patterns()
        .token
        .find_iter(text)
        .filter_map(|m| {
            let raw = m.as_str();
            let lead = raw.len() - raw.trim_start_matches(LEADING_PUNCT).len();
            let mut core = raw[lead..].trim_end_matches(TRAILING_PUNCT);
            if let Some(stripped) = core.strip_suffix("'s") {
                if !stripped.is_empty() {
                    core = stripped;
                }
            }
            if core.is_empty() {
                return None;
            }
            let start = m.start() + lead;
            Some(Token { start, end: start + core.len(), core })
        })
        .collect()
}

/// Detects typed entities in normalized text.
///
/// Candidates are generated per kind and accepted in precedence order
/// (URL > EMAIL_ADDR > QUOTED > DATETIME > NUMBER > TICKER > PERSON); a
/// candidate overlapping an accepted span is dropped. The result is sorted
/// by start offset.
pub fn extract_entities(text: &str, lex: &Lexicons) -> Vec<EntitySpan> {
    let p = patterns();
    let toks = tokens(text);
    let mut accepted: Vec<EntitySpan> = Vec::new();
    let offer = |span: EntitySpan, accepted: &mut Vec<EntitySpan>| {
        if span.start < span.end && !accepted.iter().any(|a| a.overlaps(&span)) {
            accepted.push(span);
        }
    };

    for m in p.url.find_iter(text) {
        let s = m.as_str().trim_end_matches(TRAILING_PUNCT);
        offer(EntitySpan::new(m.start(), m.start() + s.len(), EntityKind::Url), &mut accepted);
    }
    for m in p.email.find_iter(text) {
        offer(EntitySpan::new(m.start(), m.end(), EntityKind::EmailAddr), &mut accepted);
    }
    for re in &p.quoted {
        for caps in re.captures_iter(text) {
            let g = caps.get(1).expect("quoted pattern has one group");
            offer(EntitySpan::new(g.start(), g.end(), EntityKind::Quoted), &mut accepted);
        }
    }
    for re in &p.datetime {
        for m in re.find_iter(text) {
            offer(EntitySpan::new(m.start(), m.end(), EntityKind::Datetime), &mut accepted);
        }
    }
    for t in &toks {
        if t.core.bytes().any(|b| b.is_ascii_digit()) {
            offer(EntitySpan::new(t.start, t.end, EntityKind::Number), &mut accepted);
        }
    }
    for t in &toks {
        let n = t.core.len();
        if (2..=5).contains(&n) && t.core.bytes().all(|b| b.is_ascii_alphabetic()) && lex.tickers.contains(t.core) {
            offer(EntitySpan::new(t.start, t.end, EntityKind::Ticker), &mut accepted);
        }
    }
    for (i, t) in toks.iter().enumerate() {
        let in_lexicon = lex.names.contains(t.core);
        let after_trigger = i > 0
            && TRIGGER_WORDS.contains(&toks[i - 1].core)
            && t.core.chars().all(char::is_alphabetic)
            && !lex.stopwords.contains(t.core)
            && !TRIGGER_WORDS.contains(&t.core);
        if in_lexicon || after_trigger {
            offer(EntitySpan::new(t.start, t.end, EntityKind::Person), &mut accepted);
        }
    }

    accepted.sort_by_key(|s| s.start);
    accepted
}

/// Replaces each span with its `<KIND>` placeholder.
pub fn templatize(text: &str, spans: &[EntitySpan]) -> Result<Template, FingerprintError> {
    let mut sorted = spans.to_vec();
    sorted.sort_by_key(|s| (s.start, s.end));
    for s in &sorted {
        if s.start >= s.end || s.end > text.len() || !text.is_char_boundary(s.start) || !text.is_char_boundary(s.end) {
            return Err(FingerprintError::InvalidSpan(*s));
        }
    }
    for w in sorted.windows(2) {
        if w[0].overlaps(&w[1]) {
            return Err(FingerprintError::OverlappingSpans(w[0], w[1]));
        }
    }
    let mut out = String::with_capacity(text.len());
    let mut entities = Vec::with_capacity(sorted.len());
    let mut cursor = 0;
    for s in &sorted {
        out.push_str(&text[cursor..s.start]);
        out.push_str(&s.kind.placeholder());
        entities.push((s.kind, text[s.start..s.end].to_string()));
        cursor = s.end;
    }
    out.push_str(&text[cursor..]);
    Ok(Template { text: out, entities })
}

pub fn template_hash(template: &Template) -> Fingerprint {
    Fingerprint { hash: fnv1a64(template.text.as_bytes()) }
}

/// Normalizes, masks and hashes queries against a fixed set of lexicons.
#[derive(Debug, Clone)]
pub struct Fingerprinter {
    lexicons: Lexicons,
}

impl Default for Fingerprinter {
    fn default() -> Self {
        Self::new(Lexicons::builtin())
    }
}

impl Fingerprinter {
    pub fn new(lexicons: Lexicons) -> Self {
        Self { lexicons }
    }

    pub fn lexicons(&self) -> &Lexicons {
        &self.lexicons
    }

    /// Normalized text and its template.
    pub fn template(&self, text: &str) -> Result<Template, FingerprintError> {
        let norm = normalize_text(text)?;
        let spans = extract_entities(&norm, &self.lexicons);
        templatize(&norm, &spans)
    }

    pub fn fingerprint(&self, query: &Query) -> Result<(Fingerprint, ParamSet), FingerprintError> {
        let template = self.template(&query.text)?;
        Ok((template_hash(&template), params_from(&template)))
    }

    pub fn record(&self, query: &Query) -> Result<FingerprintRecord, FingerprintError> {
        let template = self.template(&query.text)?;
        Ok(FingerprintRecord {
            id: query.id.clone(),
            hash: template_hash(&template).hash,
            params: params_from(&template),
            template: template.text,
        })
    }
}

/// First occurrence of each kind wins its slot.
fn params_from(template: &Template) -> ParamSet {
    let mut params = ParamSet::new();
    for (kind, surface) in &template.entities {
        if let Some(slot) = kind.slot() {
            // surfaces are non-empty by construction
            let _ = params.insert_first(slot, surface.clone());
        }
    }
    params
}
