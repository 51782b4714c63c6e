//! Deterministic stand-in for a chat model.
//!
//! Recognises every prompt the pipeline issues and answers from a fixed
//! keyword pool using embedding similarity, so whole campaigns run offline and
//! reproducibly. Generation favours pool entries close to the product
//! information and, when a ranking or example block is present, entries close
//! to high-scoring keywords.

use std::cell::RefCell;
use std::collections::{BTreeMap, BTreeSet};

use serde_json::{json, Value};

use super::parse::structured_values;
use super::templates::{
    section, section_items, SECTION_LEXICAL, SECTION_PRODUCT, SECTION_RANKING, SECTION_REJECTED_CATEGORIES,
    SECTION_REPLACE, SECTION_USED, RANK_SCORE_SEPARATOR,
};
use super::{BackendError, ChatBackend, ChatRequest};
use crate::clustering::HashEmbedding;
use crate::domain::canonical;
use crate::text::tokens;

pub struct SyntheticBackend {
    pool: Vec<String>,
    embedding: HashEmbedding,
    cache: RefCell<BTreeMap<String, Vec<f64>>>,
    /// Strength of ranking feedback relative to product similarity.
    pub feedback_weight: f64,
    /// Assignment creates a new cluster below this mean cosine similarity.
    pub new_cluster_below: f64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) }
}

fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let rest = &text[s..];
    Some(rest.find(end).map_or(rest, |e| &rest[..e]))
}

/// `n. keyword — Score: x` lines of a ranking block.
fn ranked_lines(block: &str) -> Vec<(String, f64)> {
    block
        .lines()
        .filter_map(|l| {
            let (head, score) = l.split_once(RANK_SCORE_SEPARATOR)?;
            let (_, kw) = head.split_once(". ")?;
            Some((kw.trim().to_string(), score.trim().parse().ok()?))
        })
        .collect()
}

/// `- keyword: Metric v, Metric v.` lines of an example block, scored by the
/// first benefit-looking metric relative to the best example.
fn example_lines(block: &str) -> Vec<(String, f64)> {
    let mut rows: Vec<(String, f64)> = block
        .lines()
        .filter_map(|l| {
            let l = l.strip_prefix("- ")?;
            let (kw, metrics) = l.rsplit_once(": ")?;
            let value = metrics
                .trim_end_matches('.')
                .split(", ")
                .find_map(|m| m.strip_prefix("Conversion ").or_else(|| m.strip_prefix("Click ")))
                .and_then(|v| v.trim().parse::<f64>().ok())
                .unwrap_or(0.0);
            Some((kw.trim().to_string(), value))
        })
        .collect();
    let max = rows.iter().map(|r| r.1).fold(0.0, f64::max);
    if max > 0.0 {
        rows.iter_mut().for_each(|r| r.1 /= max);
    }
    rows
}

enum Avoid {
    Token(String),
    Prefix(String),
    Suffix(String),
}

fn avoid_rules(body: &str) -> Vec<Avoid> {
    section_items(body)
        .into_iter()
        .filter_map(|item| {
            let (kind, rest) = item.split_once(' ')?;
            let pattern = between(rest, "\"", "\"")?.to_string();
            Some(match kind {
                "prefix" => Avoid::Prefix(pattern),
                "suffix" => Avoid::Suffix(pattern),
                _ => Avoid::Token(pattern),
            })
        })
        .collect()
}

fn violates(keyword: &str, rules: &[Avoid]) -> bool {
    let padded = format!(" {keyword} ");
    rules.iter().any(|r| match r {
        Avoid::Token(t) => padded.contains(&format!(" {t} ")),
        Avoid::Prefix(p) => keyword.starts_with(p.as_str()),
        Avoid::Suffix(s) => keyword.ends_with(s.as_str()),
    })
}

impl SyntheticBackend {
    pub fn new(pool: impl IntoIterator<Item = String>, embedding: HashEmbedding) -> Self {
        let mut seen = BTreeSet::new();
        let pool = pool.into_iter().map(|k| canonical(&k)).filter(|k| seen.insert(k.clone())).collect();
        SyntheticBackend {
            pool,
            embedding,
            cache: RefCell::new(BTreeMap::new()),
            feedback_weight: 1.0,
            new_cluster_below: 0.2,
        }
    }

    pub fn pool(&self) -> &[String] {
        &self.pool
    }

    fn vec(&self, text: &str) -> Vec<f64> {
        if let Some(v) = self.cache.borrow().get(text) {
            return v.clone();
        }
        let v = self.embedding.embed_one(text);
        self.cache.borrow_mut().insert(text.to_string(), v.clone());
        v
    }

    fn sim(&self, a: &str, b: &str) -> f64 {
        cosine(&self.vec(a), &self.vec(b))
    }

    fn category(keyword: &str, brand: &str) -> String {
        keyword.split(' ').find(|t| *t != brand).unwrap_or(keyword).to_string()
    }

    fn generate(&self, prompt: &str) -> String {
        let product_name = between(prompt, "generating advertising keywords for ", ".\n").unwrap_or("");
        let brand = tokens(product_name).into_iter().next().unwrap_or_default();
        let per_key: usize = between(prompt, "each containing ", " high-quality")
            .and_then(|n| n.trim().parse().ok())
            .unwrap_or(10);
        let info = section(prompt, SECTION_PRODUCT).unwrap_or("");
        let mut used: BTreeSet<String> = BTreeSet::new();
        for header in [SECTION_USED, SECTION_REPLACE] {
            if let Some(body) = section(prompt, header) {
                used.extend(section_items(body).into_iter().map(canonical));
            }
        }
        let rules = section(prompt, SECTION_LEXICAL).map(avoid_rules).unwrap_or_default();
        let banned_categories: BTreeSet<String> = section(prompt, SECTION_REJECTED_CATEGORIES)
            .map(|b| section_items(b).into_iter().map(canonical).collect())
            .unwrap_or_default();
        let mut feedback = section(prompt, SECTION_RANKING).map(ranked_lines).unwrap_or_default();
        if let Some(examples) = between(prompt, "each with its performance on every metric:\n", "\n\nUse these examples") {
            feedback.extend(example_lines(examples));
        }
        let mean = if feedback.is_empty() { 0.0 } else { feedback.iter().map(|f| f.1).sum::<f64>() / feedback.len() as f64 };

        let info_vec = self.vec(info);
        let mut scored: Vec<(f64, &String)> = self
            .pool
            .iter()
            .filter(|k| !used.contains(*k) && !violates(k, &rules))
            .filter(|k| !banned_categories.contains(&Self::category(k, &brand)))
            .map(|k| {
                let v = self.vec(k);
                let mut s = cosine(&v, &info_vec);
                if !feedback.is_empty() {
                    let fb: f64 = feedback.iter().map(|(f, score)| (score - mean) * cosine(&v, &self.vec(f))).sum();
                    s += self.feedback_weight * fb / feedback.len() as f64 * 4.0;
                }
                (s, k)
            })
            .collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        let is_branded = |k: &str| !brand.is_empty() && k.split(' ').any(|t| t == brand);
        let entry = |k: &String| json!({"keyword": k, "category": Self::category(k, &brand)});
        let branded: Vec<Value> = scored.iter().filter(|(_, k)| is_branded(k)).take(per_key).map(|(_, k)| entry(k)).collect();
        let non_branded: Vec<Value> =
            scored.iter().filter(|(_, k)| !is_branded(k)).take(per_key).map(|(_, k)| entry(k)).collect();
        json!({"Branded": branded, "Non-Branded": non_branded}).to_string()
    }

    fn reflect(&self, prompt: &str) -> String {
        let generated = between(prompt, "The generated keywords to evaluate are:\n", "\n\nThe product information is:\n").unwrap_or("");
        let info = between(prompt, "\n\nThe product information is:\n", "\n\nYour evaluation history is:\n").unwrap_or("");
        let history = between(prompt, "\n\nYour evaluation history is:\n", "\n\nOnly evaluate").unwrap_or("");
        let seen: BTreeSet<String> = structured_values(history)
            .iter()
            .flat_map(|v| v.as_array().cloned().unwrap_or_default())
            .filter_map(|v| v.get("keyword").and_then(Value::as_str).map(canonical))
            .collect();
        let mut keywords = Vec::new();
        for v in structured_values(generated) {
            if let Value::Object(m) = v {
                for list in m.values() {
                    for item in list.as_array().into_iter().flatten() {
                        if let Some(k) = item.as_str() {
                            keywords.push(k.to_string());
                        }
                    }
                }
            }
        }
        let verdicts: Vec<Value> = keywords
            .iter()
            .filter(|k| !seen.contains(&canonical(k)))
            .map(|k| {
                let s = self.sim(k, info);
                let score = match s {
                    s if s < 0.0 => 1,
                    s if s < 0.15 => 2,
                    s if s < 0.3 => 3,
                    s if s < 0.5 => 4,
                    _ => 5,
                };
                let suggestion = if score == 1 { "replace" } else { "keep" };
                json!({
                    "keyword": k,
                    "score": score,
                    "reason": format!("similarity to the product description is {s:.2}"),
                    "suggestion": suggestion,
                })
            })
            .collect();
        Value::Array(verdicts).to_string()
    }

    fn assign(&self, prompt: &str) -> String {
        let keyword = between(prompt, "You are given a keyword:\n", "\n").unwrap_or("").trim().to_string();
        let mut best: Option<(f64, usize)> = None;
        for i in 1..=3 {
            let Some(body) = between(prompt, &format!("\nCluster {i}:\n"), "\n\n") else { continue };
            let members: Vec<&str> = body.split(", ").map(str::trim).filter(|m| !m.is_empty()).collect();
            if members.is_empty() || body.trim() == "(no cluster)" {
                continue;
            }
            let mean = members.iter().map(|m| self.sim(&keyword, m)).sum::<f64>() / members.len() as f64;
            if best.is_none_or(|(b, _)| mean > b) {
                best = Some((mean, i));
            }
        }
        match best {
            Some((s, i)) if s >= self.new_cluster_below => format!("Cluster {i}"),
            _ => "New Cluster".into(),
        }
    }

    fn frequent_terms(text: &str, skip: &BTreeSet<&str>, n: usize) -> Vec<String> {
        let mut counts: BTreeMap<String, usize> = BTreeMap::new();
        for t in tokens(text) {
            if !skip.contains(t.as_str()) && !t.chars().all(|c| c.is_ascii_digit()) {
                *counts.entry(t).or_default() += 1;
            }
        }
        let mut v: Vec<(String, usize)> = counts.into_iter().collect();
        v.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        v.into_iter().take(n).map(|(t, _)| t).collect()
    }

    fn intent(&self, prompt: &str) -> String {
        let block = between(prompt, "and their clicks:\n", "\n\nAnalyze").unwrap_or("");
        let skip: BTreeSet<&str> = ["cluster", "click", "cost", "conversion", "impression"].into();
        let terms = Self::frequent_terms(block, &skip, 3);
        format!("Users searching these keywords are interested in {}.", terms.join(", "))
    }

    fn reject_analysis(&self, prompt: &str) -> String {
        let block = between(prompt, "failed validation:\n", "\n\nAnalyze").unwrap_or("");
        let terms = Self::frequent_terms(block, &BTreeSet::new(), 3);
        format!("The rejected keywords share the terms {}; avoid building new keywords around them.", terms.join(", "))
    }

    fn sufficiency(&self, prompt: &str) -> String {
        let info = between(prompt, "The information gathered so far is:\n", "\n\nIf this information").unwrap_or("");
        if info.trim().is_empty() || info.trim() == "(none)" {
            let product = between(prompt, "advertising keywords for ", ".\n").unwrap_or("product");
            format!("QUERY: {product}")
        } else {
            "ENOUGH".into()
        }
    }
}

impl ChatBackend for SyntheticBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let u = request.user.as_str();
        if u.contains("If this information is enough to generate") {
            Ok(self.sufficiency(u))
        } else if u.starts_with("You are given a keyword:") {
            Ok(self.assign(u))
        } else if u.contains("evaluate the coherence between each keyword") {
            Ok(self.reflect(u))
        } else if u.contains("Analyze why these keywords performed poorly") {
            Ok(self.reject_analysis(u))
        } else if u.contains("explain why the user searched") {
            Ok(self.intent(u))
        } else if u.contains("You are tasked with generating advertising keywords") {
            Ok(self.generate(u))
        } else {
            Err(BackendError::UnknownPrompt(request.prompt_sha256()))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::templates::{render_generation, GenerationContext};
    use crate::llm::{parse_assign, parse_generation, parse_reflection, ChatParams};

    fn backend() -> SyntheticBackend {
        let pool = ["zor lens", "zor bag", "fast lens", "wide lens", "cheap bag", "red shoe", "blue shoe"];
        SyntheticBackend::new(pool.iter().map(|s| s.to_string()), HashEmbedding::new(5, 16))
    }

    fn ask(b: &SyntheticBackend, user: &str) -> String {
        b.complete(&ChatRequest { system: String::new(), user: user.into(), params: ChatParams::default() })
            .unwrap()
    }

    #[test]
    fn generation_is_parseable_and_excludes_used() {
        let b = backend();
        let ctx = GenerationContext {
            product_name: "Zor Camera".into(),
            keywords_per_key: 2,
            product_information: "zor camera lens for fast wide shots".into(),
            used_keywords: vec!["fast lens".into()],
            ..Default::default()
        };
        let reply = ask(&b, &render_generation(&ctx).rendered_text);
        let set = parse_generation(&reply, 2).unwrap();
        assert_eq!(set.branded.len(), 2);
        assert!(set.branded.iter().all(|k| k.text.starts_with("zor ")));
        assert_eq!(set.non_branded.len(), 2);
        assert!(set.all().all(|k| k.text != "fast lens"));
        assert_eq!(reply, ask(&b, &render_generation(&ctx).rendered_text));
    }

    #[test]
    fn lexical_rules_exclude_matches() {
        let b = backend();
        let ctx = GenerationContext {
            product_name: "Zor Camera".into(),
            keywords_per_key: 10,
            product_information: "lens".into(),
            lexical_patterns: vec!["unigram \"lens\" (3)".into(), "suffix \"shoe\" (2)".into()],
            ..Default::default()
        };
        let set = parse_generation(&ask(&b, &render_generation(&ctx).rendered_text), 10).unwrap();
        let texts: Vec<&str> = set.all().map(|k| k.text.as_str()).collect();
        assert_eq!(texts, ["zor bag", "cheap bag"]);
    }

    #[test]
    fn assign_and_reflect_replies_parse() {
        let b = backend();
        let a = ask(&b, "You are given a keyword:\nwide lens\n\nCluster 1:\nred shoe, blue shoe\n\nCluster 2:\nfast lens, zor lens\n\nCluster 3:\n(no cluster)\n\nBased on");
        assert!(parse_assign(&a).is_ok());
        let prompt = crate::llm::render(
            crate::llm::TemplateId::Reflect,
            &crate::llm::templates::vars([
                ("generated_keywords", r#"{"Branded": ["zor lens"], "Non-Branded": ["red shoe"]}"#.into()),
                ("product_information", "zor lens".into()),
                ("history_evaluation", r#"[{"keyword": "red shoe", "score": 2, "reason": "", "suggestion": "keep"}]"#.into()),
            ]),
        )
        .unwrap();
        let v = parse_reflection(&ask(&b, &prompt.rendered_text)).unwrap();
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].keyword, "zor lens");
        assert_eq!(v[0].score, 5);
    }

    #[test]
    fn unknown_prompt_is_refused() {
        let b = backend();
        let r = b.complete(&ChatRequest { system: String::new(), user: "hello".into(), params: ChatParams::default() });
        assert!(matches!(r, Err(BackendError::UnknownPrompt(_))));
    }
}
