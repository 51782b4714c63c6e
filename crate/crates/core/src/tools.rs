//! The generation tool suite. Every tool reports a [`ToolVerdict`].

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Read;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{canonical, CategoryStats, KeywordId, ToolVerdict};
use crate::llm::templates::vars;
use crate::llm::{render, Gateway, GatewayError, Slot, TemplateId};

pub const SEARCH: &str = "search";
pub const REJECT_REFLECTION: &str = "reject_reflection";
pub const REPEATED_FILTER: &str = "repeated_filter";
pub const VOLUME_CHECK: &str = "volume_check";
pub const LEXICAL_ANALYSIS: &str = "lexical_analysis";
pub const CATEGORY_REJECT: &str = "category_reject";

/// Bucket for generated keywords without a category tag; never rejected.
pub const UNCATEGORIZED: &str = "uncategorized";

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ToolError {
    #[error("empty search query")]
    EmptyQuery,
    #[error("source unavailable: {0}")]
    Unavailable(String),
    #[error("fixture: {0}")]
    Fixture(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snippet {
    pub source: String,
    pub query: String,
    pub text: String,
}

/// Product information gathered so far; append-only.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct InfoStore {
    snippets: Vec<Snippet>,
    pub sufficient: bool,
}

impl InfoStore {
    /// Seeds the store with hand-written product information.
    pub fn with_manual(text: &str) -> Self {
        let mut s = InfoStore::default();
        if !text.trim().is_empty() {
            s.snippets.push(Snippet { source: "manual".into(), query: String::new(), text: text.trim().into() });
        }
        s
    }

    pub fn snippets(&self) -> &[Snippet] {
        &self.snippets
    }

    pub fn len(&self) -> usize {
        self.snippets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snippets.is_empty()
    }

    /// Snippet texts joined by newlines, in insertion order.
    pub fn text(&self) -> String {
        self.snippets.iter().map(|s| s.text.as_str()).collect::<Vec<_>>().join("\n")
    }
}

pub trait SearchSource {
    fn id(&self) -> String;
    fn search(&self, query: &str) -> Result<Vec<String>, ToolError>;
}

/// Offline corpus keyed by query; lookups fall back to the canonical query.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct FixtureSearch {
    pub corpus: BTreeMap<String, Vec<String>>,
}

impl FixtureSearch {
    pub fn from_json(s: &str) -> Result<Self, ToolError> {
        serde_json::from_str(s).map_err(|e| ToolError::Fixture(e.to_string()))
    }
}

impl SearchSource for FixtureSearch {
    fn id(&self) -> String {
        "fixture".into()
    }

    fn search(&self, query: &str) -> Result<Vec<String>, ToolError> {
        if let Some(hit) = self.corpus.get(query) {
            return Ok(hit.clone());
        }
        let c = canonical(query);
        Ok(self
            .corpus
            .iter()
            .find(|(k, _)| canonical(k) == c)
            .map(|(_, v)| v.clone())
            .unwrap_or_default())
    }
}

/// Runs one query and appends its snippets to `store`.
pub fn search(query: &str, source: &dyn SearchSource, store: &mut InfoStore) -> Result<ToolVerdict, ToolError> {
    let query = query.trim();
    if query.is_empty() {
        return Err(ToolError::EmptyQuery);
    }
    match source.search(query) {
        Ok(snippets) => {
            let n = snippets.len();
            for text in snippets {
                store.snippets.push(Snippet { source: source.id(), query: query.into(), text });
            }
            let reason = if n == 0 { "no results" } else { "appended" };
            Ok(ToolVerdict::analysis(SEARCH, query, reason).with("snippets", n))
        }
        Err(e) => {
            log::warn!("search for {query:?} failed: {e}");
            Ok(ToolVerdict::analysis(SEARCH, query, e.to_string()))
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RejectMatch {
    #[default]
    Exact,
    /// Also reject keywords containing a rejected keyword as a word sequence.
    Substring,
}

pub fn reject_reflection(keyword: &KeywordId, rejected: &BTreeSet<KeywordId>, mode: RejectMatch) -> ToolVerdict {
    if rejected.contains(keyword) {
        return ToolVerdict::reject(REJECT_REFLECTION, keyword.as_str(), "keyword is in the rejected set");
    }
    if mode == RejectMatch::Substring {
        let padded = format!(" {} ", keyword.as_str());
        if let Some(r) = rejected.iter().find(|r| padded.contains(&format!(" {} ", r.as_str()))) {
            return ToolVerdict::reject(REJECT_REFLECTION, keyword.as_str(), format!("contains rejected keyword {:?}", r.as_str()));
        }
    }
    ToolVerdict::accept(REJECT_REFLECTION, keyword.as_str())
}

/// Round-level analysis of the rejected set; the text is passed to the generator.
pub fn reject_analysis(
    rejected: &[KeywordId],
    product_name: &str,
    gateway: &mut Gateway,
) -> Result<ToolVerdict, GatewayError> {
    let list = rejected.iter().map(|k| format!("- {k}")).collect::<Vec<_>>().join("\n");
    let prompt = render(
        TemplateId::RejectAnalysis,
        &vars([("product_name", product_name.to_string()), ("rejected_keywords", list)]),
    )
    .expect("reject analysis placeholders supplied");
    let text = gateway.ask_text(Slot::Generator, TemplateId::RejectAnalysis, "", &prompt.rendered_text)?;
    Ok(ToolVerdict::analysis(REJECT_REFLECTION, "rejected set", text.trim()).with("keywords", rejected.len()))
}

pub fn repeated_filter(keyword: &KeywordId, history: &BTreeSet<KeywordId>) -> ToolVerdict {
    if history.contains(keyword) {
        ToolVerdict::reject(REPEATED_FILTER, keyword.as_str(), "keyword was already deployed")
    } else {
        ToolVerdict::accept(REPEATED_FILTER, keyword.as_str())
    }
}

pub trait VolumeProvider {
    fn volume(&self, keyword: &str) -> Result<u64, ToolError>;
}

/// Keyword to volume table; unknown keywords have volume 0.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FixtureVolume {
    pub table: BTreeMap<KeywordId, u64>,
}

impl FixtureVolume {
    /// Reads `keyword,volume` CSV with a header row.
    pub fn from_csv<R: Read>(reader: R) -> Result<Self, ToolError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let headers = rdr.headers().map_err(|e| ToolError::Fixture(e.to_string()))?.clone();
        if headers.len() != 2 || &headers[0] != "keyword" || &headers[1] != "volume" {
            return Err(ToolError::Fixture("header must be keyword,volume".into()));
        }
        let mut table = BTreeMap::new();
        for (i, rec) in rdr.records().enumerate() {
            let line = i + 2;
            let rec = rec.map_err(|e| ToolError::Fixture(format!("line {line}: {e}")))?;
            let v: u64 = rec[1]
                .trim()
                .parse()
                .map_err(|_| ToolError::Fixture(format!("line {line}: volume {:?} is not a natural number", &rec[1])))?;
            table.insert(KeywordId::new(&rec[0]), v);
        }
        Ok(FixtureVolume { table })
    }
}

impl VolumeProvider for FixtureVolume {
    fn volume(&self, keyword: &str) -> Result<u64, ToolError> {
        Ok(self.table.get(&KeywordId::new(keyword)).copied().unwrap_or(0))
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnknownVolume {
    #[default]
    Strict,
    Permissive,
}

/// Accepts iff volume ≥ `tau`. A provider that keeps failing yields an
/// "unknown volume" analysis verdict; see [`volume_passes`].
pub fn volume_check(keyword: &KeywordId, provider: &dyn VolumeProvider, tau: u64, retries: usize) -> ToolVerdict {
    if tau == 0 {
        return ToolVerdict::accept(VOLUME_CHECK, keyword.as_str());
    }
    let mut last = None;
    for _ in 0..=retries {
        match provider.volume(keyword.as_str()) {
            Ok(v) if v >= tau => return ToolVerdict::accept(VOLUME_CHECK, keyword.as_str()).with("volume", v),
            Ok(v) => {
                return ToolVerdict::reject(VOLUME_CHECK, keyword.as_str(), format!("search volume {v} below {tau}"))
                    .with("volume", v)
            }
            Err(e) => last = Some(e),
        }
    }
    let e = last.expect("at least one attempt");
    ToolVerdict::analysis(VOLUME_CHECK, keyword.as_str(), "unknown volume").with("error", e.to_string())
}

pub fn volume_passes(verdict: &ToolVerdict, mode: UnknownVolume) -> bool {
    match verdict.outcome {
        crate::domain::ToolOutcome::Accept => true,
        crate::domain::ToolOutcome::Reject => false,
        crate::domain::ToolOutcome::Analysis => mode == UnknownVolume::Permissive,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PatternKind {
    Unigram,
    Bigram,
    Prefix,
    Suffix,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexicalPattern {
    pub kind: PatternKind,
    pub pattern: String,
    /// Number of keywords containing the pattern.
    pub count: usize,
}

impl fmt::Display for LexicalPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let kind = match self.kind {
            PatternKind::Unigram => "unigram",
            PatternKind::Bigram => "bigram",
            PatternKind::Prefix => "prefix",
            PatternKind::Suffix => "suffix",
        };
        write!(f, "{kind} \"{}\" ({})", self.pattern, self.count)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LexicalReport {
    pub patterns: Vec<LexicalPattern>,
    pub min_count: usize,
}

impl LexicalReport {
    pub fn is_empty(&self) -> bool {
        self.patterns.is_empty()
    }

    pub fn lines(&self) -> Vec<String> {
        self.patterns.iter().map(ToString::to_string).collect()
    }
}

const AFFIX_MIN: usize = 3;
const AFFIX_MAX: usize = 8;

fn affixes(kw: &str, suffix: bool) -> BTreeSet<String> {
    let chars: Vec<char> = kw.chars().collect();
    let mut out = BTreeSet::new();
    for len in AFFIX_MIN..=AFFIX_MAX.min(chars.len()) {
        let slice: String = if suffix { chars[chars.len() - len..].iter().collect() } else { chars[..len].iter().collect() };
        let t = slice.trim();
        if t.chars().count() >= AFFIX_MIN {
            out.insert(t.to_string());
        }
    }
    out
}

/// Token unigrams/bigrams and character prefixes/suffixes (3 to 8 characters)
/// shared by at least `min_count` keywords. An affix is dropped when a longer
/// affix extending it has the same count.
pub fn lexical_analysis<'a>(keywords: impl IntoIterator<Item = &'a KeywordId>, min_count: usize) -> LexicalReport {
    let min = min_count.max(1);
    let kws: BTreeSet<&str> = keywords.into_iter().map(KeywordId::as_str).collect();
    let mut counts: BTreeMap<(PatternKind, String), usize> = BTreeMap::new();
    for kw in &kws {
        let toks: Vec<&str> = kw.split_whitespace().collect();
        let mut found: BTreeSet<(PatternKind, String)> = BTreeSet::new();
        found.extend(toks.iter().map(|t| (PatternKind::Unigram, t.to_string())));
        found.extend(toks.windows(2).map(|w| (PatternKind::Bigram, w.join(" "))));
        found.extend(affixes(kw, false).into_iter().map(|a| (PatternKind::Prefix, a)));
        found.extend(affixes(kw, true).into_iter().map(|a| (PatternKind::Suffix, a)));
        for f in found {
            *counts.entry(f).or_default() += 1;
        }
    }
    let frequent: BTreeMap<(PatternKind, String), usize> = counts.into_iter().filter(|(_, c)| *c >= min).collect();
    let mut patterns: Vec<LexicalPattern> = frequent
        .iter()
        .filter(|((kind, p), c)| match kind {
            PatternKind::Prefix => !frequent
                .iter()
                .any(|((k2, q), c2)| k2 == kind && c2 == *c && q.len() > p.len() && q.starts_with(p.as_str())),
            PatternKind::Suffix => !frequent
                .iter()
                .any(|((k2, q), c2)| k2 == kind && c2 == *c && q.len() > p.len() && q.ends_with(p.as_str())),
            _ => true,
        })
        .map(|((kind, p), c)| LexicalPattern { kind: *kind, pattern: p.clone(), count: *c })
        .collect();
    patterns.sort_by(|a, b| a.kind.cmp(&b.kind).then(b.count.cmp(&a.count)).then(a.pattern.cmp(&b.pattern)));
    LexicalReport { patterns, min_count: min }
}

/// Categories whose share of rejected generations is strictly above `theta`.
/// Categories with no generations and the uncategorized bucket are never rejected.
pub fn category_reject(stats: &BTreeMap<String, CategoryStats>, theta: f64) -> BTreeSet<String> {
    stats
        .iter()
        .filter(|(name, s)| name.as_str() != UNCATEGORIZED && s.generated > 0)
        .filter(|(_, s)| s.rejected as f64 / s.generated as f64 > theta)
        .map(|(name, _)| name.clone())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ids(v: &[&str]) -> BTreeSet<KeywordId> {
        v.iter().map(|s| KeywordId::new(s)).collect()
    }

    #[test]
    fn search_appends_in_order() {
        let src = FixtureSearch::from_json(r#"{"alpha": ["a1", "a2"], "beta": ["b1"]}"#).unwrap();
        let mut store = InfoStore::default();
        let v = search("alpha", &src, &mut store).unwrap();
        assert_eq!(v.payload["snippets"], 2);
        search("Beta", &src, &mut store).unwrap();
        assert_eq!(store.text(), "a1\na2\nb1");
        let v = search("gamma", &src, &mut store).unwrap();
        assert_eq!(v.reason, "no results");
        assert_eq!(store.len(), 3);
        assert_eq!(search("  ", &src, &mut store), Err(ToolError::EmptyQuery));
    }

    #[test]
    fn reject_and_repeat_filters() {
        let r = ids(&["cheap camera"]);
        assert!(!reject_reflection(&"Cheap  Camera".into(), &r, RejectMatch::Exact).is_accept());
        assert!(reject_reflection(&"camera".into(), &r, RejectMatch::Exact).is_accept());
        assert!(reject_reflection(&"very cheap camera deal".into(), &r, RejectMatch::Exact).is_accept());
        assert!(!reject_reflection(&"very cheap camera deal".into(), &r, RejectMatch::Substring).is_accept());
        let h = ids(&["Alpha Lens"]);
        assert!(!repeated_filter(&"alpha lens".into(), &h).is_accept());
        assert!(!repeated_filter(&"ALPHA LENS".into(), &h).is_accept());
        assert!(repeated_filter(&"beta lens".into(), &h).is_accept());
    }

    struct Failing;
    impl VolumeProvider for Failing {
        fn volume(&self, _: &str) -> Result<u64, ToolError> {
            Err(ToolError::Unavailable("down".into()))
        }
    }

    #[test]
    fn volume_threshold() {
        let fx = FixtureVolume::from_csv("keyword,volume\nbig,500\nnone,0\n".as_bytes()).unwrap();
        assert!(volume_check(&"big".into(), &fx, 100, 1).is_accept());
        let v = volume_check(&"none".into(), &fx, 100, 1);
        assert!(!v.is_accept());
        assert_eq!(v.payload["volume"], 0);
        assert!(volume_check(&"none".into(), &fx, 0, 1).is_accept());
        assert_eq!(fx.volume("unknown").unwrap(), 0);
        let u = volume_check(&"x".into(), &Failing, 10, 1);
        assert_eq!(u.reason, "unknown volume");
        assert!(!volume_passes(&u, UnknownVolume::Strict));
        assert!(volume_passes(&u, UnknownVolume::Permissive));
    }

    #[test]
    fn volume_csv_errors_name_line() {
        let e = FixtureVolume::from_csv("keyword,volume\na,1\nb,x\n".as_bytes()).unwrap_err();
        assert!(e.to_string().contains("line 3"), "{e}");
    }

    #[test]
    fn lexical_example() {
        let v = ids(&["cheap camera deal", "cheap lens deal"]);
        let r = lexical_analysis(&v, 2);
        let of = |k: PatternKind| -> Vec<&str> {
            r.patterns.iter().filter(|p| p.kind == k).map(|p| p.pattern.as_str()).collect()
        };
        assert_eq!(of(PatternKind::Unigram), ["cheap", "deal"]);
        assert!(of(PatternKind::Bigram).is_empty());
        assert_eq!(of(PatternKind::Suffix), ["deal"]);
        assert_eq!(of(PatternKind::Prefix), ["cheap"]);
        assert!(r.patterns.iter().all(|p| p.count >= 2));
        assert_eq!(r.patterns[0].to_string(), "unigram \"cheap\" (2)");
    }

    #[test]
    fn lexical_degenerate() {
        assert!(lexical_analysis(&BTreeSet::new(), 2).is_empty());
        let v = ids(&["a b c", "a b d"]);
        assert!(lexical_analysis(&v, 3).is_empty());
    }

    #[test]
    fn category_threshold() {
        let mut s = BTreeMap::new();
        s.insert("niche".to_string(), CategoryStats { generated: 5, rejected: 5 });
        s.insert("empty".to_string(), CategoryStats { generated: 0, rejected: 0 });
        s.insert(UNCATEGORIZED.to_string(), CategoryStats { generated: 5, rejected: 5 });
        assert_eq!(category_reject(&s, 0.8), ["niche".to_string()].into());
        assert!(category_reject(&s, 1.0).is_empty());
    }
}
