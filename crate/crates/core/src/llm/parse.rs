//! Strict parsers for each expected reply shape.
//!
//! Replies are "dictionary-like" text, so structured values are located inside
//! surrounding prose and parsed as JSON5 (single quotes, trailing commas and
//! unquoted keys are accepted).

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::domain::{canonical, BrandClass};

#[derive(Debug, Clone, Error, PartialEq)]
#[error("{message} (near {snippet:?})")]
pub struct ParseError {
    pub message: String,
    pub snippet: String,
}

impl ParseError {
    pub fn new(message: impl Into<String>, snippet: &str) -> Self {
        let snippet: String = snippet.chars().take(120).collect();
        ParseError { message: message.into(), snippet }
    }
}

/// Byte ranges of balanced top-level `{...}` / `[...]` segments, skipping
/// brackets inside quoted strings.
fn balanced_segments(s: &str) -> Vec<(usize, usize)> {
    let bytes = s.as_bytes();
    let mut out = Vec::new();
    let mut depth = 0usize;
    let mut start = 0usize;
    let mut quote: Option<u8> = None;
    let mut escaped = false;
    for (i, &b) in bytes.iter().enumerate() {
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == q {
                quote = None;
            }
            continue;
        }
        match b {
            b'"' | b'\'' if depth > 0 => quote = Some(b),
            b'{' | b'[' => {
                if depth == 0 {
                    start = i;
                }
                depth += 1;
            }
            b'}' | b']' if depth > 0 => {
                depth -= 1;
                if depth == 0 {
                    out.push((start, i + 1));
                }
            }
            _ => {}
        }
    }
    out
}

/// Every parseable structured value embedded in `reply`, in order.
pub fn structured_values(reply: &str) -> Vec<Value> {
    balanced_segments(reply)
        .into_iter()
        .filter_map(|(a, b)| json5::from_str::<Value>(&reply[a..b]).ok())
        .collect()
}

fn norm_key(k: &str) -> String {
    k.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratedKeyword {
    pub text: String,
    pub brand_class: BrandClass,
    /// Cluster or category name the generator tagged the keyword with.
    pub category: Option<String>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GeneratedSet {
    pub branded: Vec<GeneratedKeyword>,
    pub non_branded: Vec<GeneratedKeyword>,
}

impl GeneratedSet {
    pub fn all(&self) -> impl Iterator<Item = &GeneratedKeyword> {
        self.branded.iter().chain(&self.non_branded)
    }

    pub fn len(&self) -> usize {
        self.branded.len() + self.non_branded.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn keyword_entry(v: &Value, class: BrandClass, snippet: &str) -> Result<Option<GeneratedKeyword>, ParseError> {
    let (text, category) = match v {
        Value::String(s) => (s.clone(), None),
        Value::Object(map) => {
            let mut text = None;
            let mut category = None;
            for (k, v) in map {
                match norm_key(k).as_str() {
                    "keyword" | "text" => text = v.as_str().map(str::to_string),
                    "category" | "cluster" => category = v.as_str().map(|s| s.trim().to_string()),
                    _ => {}
                }
            }
            match text {
                Some(t) => (t, category.filter(|c| !c.is_empty())),
                None => return Err(ParseError::new("keyword entry without \"keyword\" field", snippet)),
            }
        }
        _ => return Err(ParseError::new("keyword entry is neither a string nor an object", snippet)),
    };
    let text = text.split_whitespace().collect::<Vec<_>>().join(" ");
    if text.is_empty() {
        return Ok(None);
    }
    Ok(Some(GeneratedKeyword { text, brand_class: class, category }))
}

/// Parses a generation reply with `Branded` and `Non-Branded` keys. Keywords are
/// trimmed and de-duplicated case-insensitively (across both lists, first
/// occurrence wins); each list is truncated to `per_key`.
pub fn parse_generation(reply: &str, per_key: usize) -> Result<GeneratedSet, ParseError> {
    let obj = structured_values(reply)
        .into_iter()
        .find_map(|v| match v {
            Value::Object(m) => Some(m),
            _ => None,
        })
        .ok_or_else(|| ParseError::new("no dictionary in generation reply", reply))?;
    let mut branded = None;
    let mut non_branded = None;
    for (k, v) in &obj {
        match norm_key(k).as_str() {
            "branded" => branded = Some(v),
            "nonbranded" => non_branded = Some(v),
            _ => {}
        }
    }
    let branded = branded.ok_or_else(|| ParseError::new("missing key \"Branded\"", reply))?;
    let non_branded = non_branded.ok_or_else(|| ParseError::new("missing key \"Non-Branded\"", reply))?;

    let mut seen = BTreeSet::new();
    let mut take = |v: &Value, class: BrandClass| -> Result<Vec<GeneratedKeyword>, ParseError> {
        let items = v
            .as_array()
            .ok_or_else(|| ParseError::new("keyword list is not an array", &v.to_string()))?;
        let mut out = Vec::new();
        for item in items {
            if out.len() >= per_key {
                break;
            }
            if let Some(kw) = keyword_entry(item, class, &item.to_string())? {
                if seen.insert(canonical(&kw.text)) {
                    out.push(kw);
                }
            }
        }
        Ok(out)
    };
    let branded = take(branded, BrandClass::Branded)?;
    let non_branded = take(non_branded, BrandClass::NonBranded)?;
    Ok(GeneratedSet { branded, non_branded })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Suggestion {
    Keep,
    Replace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionVerdict {
    pub keyword: String,
    pub score: u8,
    pub reason: String,
    pub suggestion: Suggestion,
}

fn verdict(v: &Value) -> Result<ReflectionVerdict, ParseError> {
    let snippet = v.to_string();
    let map = v.as_object().ok_or_else(|| ParseError::new("verdict is not a dictionary", &snippet))?;
    let field = |name: &str| map.iter().find(|(k, _)| norm_key(k) == name).map(|(_, v)| v);

    let keyword = field("keyword")
        .and_then(Value::as_str)
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .ok_or_else(|| ParseError::new("verdict without keyword", &snippet))?;
    let score = match field("score") {
        Some(Value::Number(n)) => n.as_f64(),
        Some(Value::String(s)) => s.trim().parse::<f64>().ok(),
        _ => None,
    }
    .ok_or_else(|| ParseError::new("verdict without numeric score", &snippet))?;
    if score.fract() != 0.0 || !(1.0..=5.0).contains(&score) {
        return Err(ParseError::new(format!("score {score} outside 1..5"), &snippet));
    }
    let reason = field("reason").and_then(Value::as_str).unwrap_or("").trim().to_string();
    let suggestion = match field("suggestion").and_then(Value::as_str).map(|s| s.trim().to_lowercase()) {
        Some(s) if s == "keep" => Suggestion::Keep,
        Some(s) if s == "replace" => Suggestion::Replace,
        other => {
            return Err(ParseError::new(format!("suggestion {other:?} is not keep or replace"), &snippet));
        }
    };
    Ok(ReflectionVerdict { keyword, score: score as u8, reason, suggestion })
}

/// Parses one or more reflection verdicts: a list of dictionaries, a single
/// dictionary, or several dictionaries in sequence.
pub fn parse_reflection(reply: &str) -> Result<Vec<ReflectionVerdict>, ParseError> {
    let values = structured_values(reply);
    if values.is_empty() {
        return Err(ParseError::new("no dictionary in reflection reply", reply));
    }
    let mut out = Vec::new();
    for v in values {
        match v {
            Value::Array(items) => {
                for item in &items {
                    out.push(verdict(item)?);
                }
            }
            Value::Object(ref m) if m.keys().any(|k| norm_key(k) == "keyword") => out.push(verdict(&v)?),
            Value::Object(m) => {
                // {"evaluations": [...]} style wrapper
                for inner in m.values() {
                    if let Value::Array(items) = inner {
                        for item in items {
                            out.push(verdict(item)?);
                        }
                    }
                }
            }
            _ => {}
        }
    }
    if out.is_empty() {
        return Err(ParseError::new("no verdicts in reflection reply", reply));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum AssignChoice {
    Cluster1,
    Cluster2,
    Cluster3,
    NewCluster,
}

impl AssignChoice {
    /// Zero-based candidate index, `None` for a new cluster.
    pub fn index(self) -> Option<usize> {
        match self {
            AssignChoice::Cluster1 => Some(0),
            AssignChoice::Cluster2 => Some(1),
            AssignChoice::Cluster3 => Some(2),
            AssignChoice::NewCluster => None,
        }
    }
}

/// Accepts exactly one of the four options, ignoring case, surrounding
/// whitespace, backticks, quotes and a trailing period.
pub fn parse_assign(reply: &str) -> Result<AssignChoice, ParseError> {
    let t = reply
        .trim_matches(|c: char| c.is_whitespace() || matches!(c, '`' | '"' | '\'' | '.' | '*'));
    let t = t.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase();
    match t.as_str() {
        "cluster 1" => Ok(AssignChoice::Cluster1),
        "cluster 2" => Ok(AssignChoice::Cluster2),
        "cluster 3" => Ok(AssignChoice::Cluster3),
        "new cluster" => Ok(AssignChoice::NewCluster),
        _ => Err(ParseError::new("expected Cluster 1, Cluster 2, Cluster 3 or New Cluster", reply)),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sufficiency {
    Enough,
    Query(String),
}

pub fn parse_sufficiency(reply: &str) -> Result<Sufficiency, ParseError> {
    for line in reply.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let upper = line.to_uppercase();
        if upper.trim_end_matches('.') == "ENOUGH" {
            return Ok(Sufficiency::Enough);
        }
        if upper.starts_with("QUERY:") {
            let q = line["QUERY:".len()..].trim();
            if q.is_empty() {
                return Err(ParseError::new("empty query", line));
            }
            return Ok(Sufficiency::Query(q.to_string()));
        }
    }
    Err(ParseError::new("expected ENOUGH or QUERY: <query>", reply))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ten(prefix: &str) -> String {
        (0..10).map(|i| format!("\"{prefix} {i}\"")).collect::<Vec<_>>().join(", ")
    }

    #[test]
    fn generation_happy_path() {
        let reply = format!(
            "Here you go:\n{{\"Branded\": [{}], \"Non-Branded\": [{}]}}\nThanks",
            ten("sony alpha"),
            ten("mirrorless camera")
        );
        let g = parse_generation(&reply, 10).unwrap();
        assert_eq!(g.branded.len(), 10);
        assert_eq!(g.non_branded.len(), 10);
        assert!(g.branded.iter().all(|k| k.brand_class == BrandClass::Branded));
        assert!(g.non_branded.iter().all(|k| k.brand_class == BrandClass::NonBranded));
    }

    #[test]
    fn generation_dedupes_and_is_lenient() {
        let reply = "{'Branded': ['camera', 'Camera', '  sony   alpha ',], 'Non-Branded': [{'keyword': 'lens kit', 'category': 'C2'},],}";
        let g = parse_generation(reply, 10).unwrap();
        assert_eq!(g.branded.len(), 2);
        assert_eq!(g.branded[1].text, "sony alpha");
        assert_eq!(g.non_branded[0].category.as_deref(), Some("C2"));
    }

    #[test]
    fn generation_truncates_to_target() {
        let reply = format!("{{\"Branded\": [{}], \"Non-Branded\": []}}", ten("x"));
        assert_eq!(parse_generation(&reply, 3).unwrap().branded.len(), 3);
    }

    #[test]
    fn generation_requires_both_keys() {
        let e = parse_generation("{\"Branded\": [\"a\"]}", 10).unwrap_err();
        assert!(e.message.contains("Non-Branded"));
        assert!(parse_generation("no dictionary here", 10).is_err());
    }

    #[test]
    fn reflection_single_and_many() {
        let v = parse_reflection("{\"keyword\": \"x\", \"score\": 5, \"reason\": \"fits\", \"suggestion\": \"keep\"}").unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].suggestion, Suggestion::Keep);

        let three = r#"[
            {"keyword": "a", "score": 4, "reason": "ok", "suggestion": "keep"},
            {"keyword": "b", "score": 1, "reason": "irrelevant to product", "suggestion": "replace"},
            {"keyword": "c", "score": "3", "reason": "redundant", "suggestion": "Keep"},
        ]"#;
        let v = parse_reflection(three).unwrap();
        let kws: Vec<_> = v.iter().map(|v| v.keyword.as_str()).collect();
        assert_eq!(kws, ["a", "b", "c"]);
        assert_eq!(v[1].suggestion, Suggestion::Replace);
        assert_eq!(v[2].score, 3);
    }

    #[test]
    fn reflection_rejects_out_of_range() {
        assert!(parse_reflection("{\"keyword\": \"x\", \"score\": 0, \"reason\": \"\", \"suggestion\": \"keep\"}").is_err());
        assert!(parse_reflection("{\"keyword\": \"x\", \"score\": 6, \"reason\": \"\", \"suggestion\": \"keep\"}").is_err());
        assert!(parse_reflection("{\"keyword\": \"x\", \"score\": 3, \"reason\": \"\", \"suggestion\": \"keep/replace\"}").is_err());
    }

    #[test]
    fn assign_options() {
        assert_eq!(parse_assign("Cluster 2"), Ok(AssignChoice::Cluster2));
        assert_eq!(parse_assign(" new cluster "), Ok(AssignChoice::NewCluster));
        assert_eq!(parse_assign("`Cluster 1`."), Ok(AssignChoice::Cluster1));
        assert!(parse_assign("Cluster 4").is_err());
        assert!(parse_assign("I think Cluster 2").is_err());
    }

    #[test]
    fn sufficiency_reply() {
        assert_eq!(parse_sufficiency("ENOUGH"), Ok(Sufficiency::Enough));
        assert_eq!(
            parse_sufficiency("QUERY: alpha camera battery life"),
            Ok(Sufficiency::Query("alpha camera battery life".into()))
        );
        assert!(parse_sufficiency("maybe").is_err());
    }
}
