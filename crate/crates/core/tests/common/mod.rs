#![allow(dead_code)]

use std::collections::BTreeMap;

use oms_core::clustering::HashEmbedding;
use oms_core::domain::{BrandClass, CampaignState, Keyword, KeywordStatus, MetricSchema, ProductInfo};
use oms_core::tools::{FixtureSearch, FixtureVolume};
use oms_core::KeywordId;
use serde_json::json;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Sufficiency,
    Generate,
    Reflect,
    Assign,
    Intent,
    RejectAnalysis,
    Other,
}

pub fn kind(user: &str) -> Kind {
    if user.contains("If this information is enough to generate") {
        Kind::Sufficiency
    } else if user.starts_with("You are given a keyword:") {
        Kind::Assign
    } else if user.contains("evaluate the coherence between each keyword") {
        Kind::Reflect
    } else if user.contains("Analyze why these keywords performed poorly") {
        Kind::RejectAnalysis
    } else if user.contains("explain why the user searched") {
        Kind::Intent
    } else if user.contains("You are tasked with generating advertising keywords") {
        Kind::Generate
    } else {
        Kind::Other
    }
}

/// A generation reply; each entry is (keyword, category).
pub fn gen_reply(branded: &[(&str, &str)], non_branded: &[(&str, &str)]) -> String {
    let items = |v: &[(&str, &str)]| -> Vec<serde_json::Value> {
        v.iter().map(|(k, c)| json!({"keyword": k, "category": c})).collect()
    };
    json!({"Branded": items(branded), "Non-Branded": items(non_branded)}).to_string()
}

/// Keep verdicts for every keyword listed in a reflect prompt that is not in
/// its history block.
pub fn keep_all(user: &str) -> String {
    let generated = between(user, "The generated keywords to evaluate are:\n", "\n\nThe product information is:")
        .unwrap_or("{}");
    let history = between(user, "Your evaluation history is:\n", "\n\nOnly evaluate").unwrap_or("[]");
    let done: Vec<String> = serde_json::from_str::<Vec<serde_json::Value>>(history)
        .unwrap_or_default()
        .iter()
        .filter_map(|v| v["keyword"].as_str().map(str::to_string))
        .collect();
    let dict: BTreeMap<String, Vec<String>> = serde_json::from_str(generated).unwrap_or_default();
    let verdicts: Vec<serde_json::Value> = dict
        .values()
        .flatten()
        .filter(|k| !done.contains(k))
        .map(|k| json!({"keyword": k, "score": 4, "reason": "fits", "suggestion": "keep"}))
        .collect();
    serde_json::Value::Array(verdicts).to_string()
}

pub fn between<'a>(text: &'a str, start: &str, end: &str) -> Option<&'a str> {
    let s = text.find(start)? + start.len();
    let rest = &text[s..];
    Some(rest.find(end).map_or(rest, |e| &rest[..e]))
}

pub fn product() -> ProductInfo {
    ProductInfo {
        name: "Zorba Camera".into(),
        description: "The Zorba camera is a compact mirrorless camera with a fast lens.".into(),
    }
}

pub fn search() -> FixtureSearch {
    let mut corpus = BTreeMap::new();
    corpus.insert("Zorba Camera".to_string(), vec!["Zorba cameras are popular with travel photographers.".to_string()]);
    FixtureSearch { corpus }
}

pub fn volumes(pairs: &[(&str, u64)]) -> FixtureVolume {
    FixtureVolume { table: pairs.iter().map(|(k, v)| (KeywordId::new(k), *v)).collect() }
}

pub fn embedding() -> HashEmbedding {
    HashEmbedding::new(7, 16)
}

/// State with `deployed` keywords active and `rejected` keywords in ℛ.
pub fn state_with(deployed: &[&str], rejected: &[&str]) -> CampaignState {
    let mut st = CampaignState::new(product(), MetricSchema::standard(), 5, 1_000_000, 50);
    for k in deployed {
        let mut kw = Keyword::candidate(k, BrandClass::NonBranded, 1);
        kw.transition(KeywordStatus::Deployed).unwrap();
        st.keywords.push(kw);
    }
    for k in rejected {
        let mut kw = Keyword::candidate(k, BrandClass::NonBranded, 1);
        kw.transition(KeywordStatus::Rejected).unwrap();
        st.keywords.push(kw);
        st.rejected.insert(KeywordId::new(k));
    }
    st
}
