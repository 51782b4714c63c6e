//! Prompt templates and their rendering.
//!
//! Substitution markers are written `{{name}}`; single braces are literal text
//! (the reflection template shows the reply format with `{keyword}` etc.).
//! Substitution is single-pass, so values containing `{{...}}` are never re-expanded.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::text::sha256_hex;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    Intent,
    Rank,
    Reflect,
    Assign,
    Generate,
    /// Information-sufficiency check before generation.
    Sufficiency,
    /// Failure analysis over the rejected keyword set.
    RejectAnalysis,
    /// Baseline prompt listing every keyword with its raw metrics.
    ManyShot,
}

#[derive(Debug, Error, PartialEq)]
pub enum TemplateError {
    #[error("template {template:?}: missing placeholder {name:?}")]
    Missing { template: TemplateId, name: String },
    #[error("template {template:?}: unknown placeholder {name:?}")]
    Unknown { template: TemplateId, name: String },
}

pub const INTENT: &str = "Product name {{product_name}} and the users searched for the following keywords to reach the website related to this product.

The related product information is given in the following: {{product_information}}

You are given the following clusters of keywords and their clicks:
{{clusters}}

Analyze the above cluster and its keywords. Especially check the common features of those keywords and explain why the user searched for those keywords.";

pub const RANK: &str = "You are given clusters of keywords with their corresponding TOPSIS scores and rankings.

Each cluster is listed with its average TOPSIS score, and keywords within each cluster are sorted by their individual scores.

Use this information to determine which clusters or keywords should be prioritized for expansion or refinement.

{{clusters}}
Please analyze the clusters and their keyword rankings. Focus on the strongest-performing clusters and keywords for generation, and suggest improvements for weaker ones.";

pub const REFLECT: &str = "You are given the intermediate generated keyword result (formatted as a dictionary with two main keys: {'Branded'} and {'Non-Branded'}) and the product information. You should evaluate the coherence between each keyword and the product.

For each keyword, give a score from 1 to 5 based on how well it represents the product information. Also, provide a reason for the score and suggest whether the keyword should be kept or replaced.

Scoring guide:
1: The keyword does not represent the product at all.
2: The keyword poorly represents the product.
3: The keyword somewhat represents the product.
4: The keyword represents the product well.
5: The keyword perfectly represents the product.

A good keyword should capture key product features and not be overly generic. Consider both semantic relevance and user search behavior.

Provide your output in the following dictionary format:
{
  \"keyword\": \"{keyword}\",
  \"score\": {score},
  \"reason\": \"{reason}\",
  \"suggestion\": \"{keep/replace}\"
}

The generated keywords to evaluate are:
{{generated_keywords}}

The product information is:
{{product_information}}

Your evaluation history is:
{{history_evaluation}}

Only evaluate keywords not already included in the history.";

pub const ASSIGN: &str = "You are given a keyword:
{{keyword_tobe_decided}}

The following three clusters are the closest clusters to this keyword based on embedding similarity:

The product information is:
{{product_information}}

Cluster 1:
{{cluster_1_keywords}}

Cluster 2:
{{cluster_2_keywords}}

Cluster 3:
{{cluster_3_keywords}}

Based on the product information and the semantic intent of each cluster, decide whether the given keyword should be assigned to one of the above clusters or treated as a new cluster.

Please respond with exactly one of the following options:
Cluster 1, Cluster 2, Cluster 3, or New Cluster.";

pub const GENERATE: &str = "You are tasked with generating advertising keywords for {{product_name}}.

Your keywords must reflect the product’s key features and align with how users typically search online. Avoid technical terms and duplicates from previous keywords.

Before generation, use tools such as google_search to gather product information and reject_reflection to analyze failed keywords.

Your final output must be a dictionary-like string with two keys: \"Branded\" and \"Non-Branded\", each containing {{keywords_per_key}} high-quality keywords.";

pub const SUFFICIENCY: &str = "You are gathering product information before generating advertising keywords for {{product_name}}.

The information gathered so far is:
{{information}}

If this information is enough to generate high-quality keywords, respond with exactly: ENOUGH
Otherwise respond with one line of the form: QUERY: <next search query>";

pub const REJECT_ANALYSIS: &str = "The following keywords for {{product_name}} were rejected after deployment or failed validation:
{{rejected_keywords}}

Analyze why these keywords performed poorly and describe the patterns the keyword generator should avoid.";

pub const MANY_SHOT: &str = "The following keywords were deployed for {{product_name}}, each with its performance on every metric:
{{examples}}

Use these examples to generate new keywords that are likely to perform well.";

impl TemplateId {
    pub fn text(self) -> &'static str {
        match self {
            TemplateId::Intent => INTENT,
            TemplateId::Rank => RANK,
            TemplateId::Reflect => REFLECT,
            TemplateId::Assign => ASSIGN,
            TemplateId::Generate => GENERATE,
            TemplateId::Sufficiency => SUFFICIENCY,
            TemplateId::RejectAnalysis => REJECT_ANALYSIS,
            TemplateId::ManyShot => MANY_SHOT,
        }
    }

    /// Placeholder names in order of first appearance.
    pub fn placeholders(self) -> Vec<&'static str> {
        let mut out = Vec::new();
        for seg in segments(self.text()) {
            if let Segment::Var(name) = seg {
                if !out.contains(&name) {
                    out.push(name);
                }
            }
        }
        out
    }
}

enum Segment<'a> {
    Lit(&'a str),
    Var(&'a str),
}

fn segments(t: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut rest = t;
    while let Some(start) = rest.find("{{") {
        match rest[start + 2..].find("}}") {
            Some(len) => {
                out.push(Segment::Lit(&rest[..start]));
                out.push(Segment::Var(&rest[start + 2..start + 2 + len]));
                rest = &rest[start + 2 + len + 2..];
            }
            None => break,
        }
    }
    out.push(Segment::Lit(rest));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptBundle {
    pub template_id: TemplateId,
    pub rendered_text: String,
    pub variables: BTreeMap<String, String>,
}

impl PromptBundle {
    pub fn sha256(&self) -> String {
        sha256_hex(&self.rendered_text)
    }
}

/// Instantiates a template. Every placeholder must be supplied; extra variables are an error.
pub fn render(template_id: TemplateId, variables: &BTreeMap<String, String>) -> Result<PromptBundle, TemplateError> {
    let names = template_id.placeholders();
    if let Some(extra) = variables.keys().find(|k| !names.contains(&k.as_str())) {
        return Err(TemplateError::Unknown { template: template_id, name: extra.clone() });
    }
    let mut out = String::new();
    for seg in segments(template_id.text()) {
        match seg {
            Segment::Lit(s) => out.push_str(s),
            Segment::Var(name) => match variables.get(name) {
                Some(v) => out.push_str(v),
                None => return Err(TemplateError::Missing { template: template_id, name: name.into() }),
            },
        }
    }
    Ok(PromptBundle {
        template_id,
        rendered_text: out,
        variables: variables.clone(),
    })
}

/// Convenience for literal variable lists.
pub fn vars<const N: usize>(pairs: [(&str, String); N]) -> BTreeMap<String, String> {
    pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
}

/// Formats a metric value with at most two decimals and no trailing zeros.
pub fn fmt_num(v: f64) -> String {
    let s = format!("{v:.2}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.to_string() }
}

/// One cluster's section in the ranking prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct RankSection {
    pub name: String,
    pub avg_score: f64,
    pub intent: Option<String>,
    /// Members in descending score order.
    pub ranked: Vec<(String, f64)>,
}

/// Members shown for a cluster: all of them when the cluster score reaches
/// `lambda`, otherwise only the top and bottom keyword. Each entry carries its
/// 1-based rank within the cluster.
pub fn shown_members(section: &RankSection, lambda: f64) -> Vec<(usize, &str, f64)> {
    let all = section.ranked.iter().enumerate().map(|(i, (k, s))| (i + 1, k.as_str(), *s));
    if section.avg_score >= lambda || section.ranked.len() <= 2 {
        return all.collect();
    }
    let n = section.ranked.len();
    let (top, bottom) = (&section.ranked[0], &section.ranked[n - 1]);
    vec![(1, top.0.as_str(), top.1), (n, bottom.0.as_str(), bottom.1)]
}

pub const RANK_SCORE_SEPARATOR: &str = " — Score: ";

/// Renders the ranking prompt with the threshold-gated cluster listing.
pub fn render_rank(sections: &[RankSection], lambda: f64) -> PromptBundle {
    let mut body = String::new();
    for s in sections {
        let _ = writeln!(body, "Cluster: {} (Avg Score: {:.4})", s.name, s.avg_score);
        if let Some(intent) = &s.intent {
            let _ = writeln!(body, "Intent: {}", intent.trim());
        }
        for (rank, kw, score) in shown_members(s, lambda) {
            let _ = writeln!(body, "{rank}. {kw}{RANK_SCORE_SEPARATOR}{score:.4}");
        }
        body.push('\n');
    }
    render(TemplateId::Rank, &vars([("clusters", body)])).expect("rank template has one placeholder")
}

/// One keyword line in the intent prompt: name and metric values in schema order.
pub fn intent_cluster_block(cluster_name: &str, rows: &[(String, Vec<(String, f64)>)]) -> String {
    let mut out = format!("Cluster {cluster_name}:");
    for (kw, metrics) in rows {
        let fields: Vec<String> = metrics.iter().map(|(m, v)| format!("{m} {}", fmt_num(*v))).collect();
        let _ = write!(out, " {kw}: {}.", fields.join(", "));
    }
    out
}

/// Section headers appended after the generation template.
pub const SECTION_PRODUCT: &str = "## Product information";
pub const SECTION_RANKING: &str = "## Keyword performance ranking";
pub const SECTION_REJECT_ANALYSIS: &str = "## Analysis of rejected keywords";
pub const SECTION_LEXICAL: &str = "## Lexical patterns to avoid";
pub const SECTION_CATEGORIES: &str = "## Categories";
pub const SECTION_REJECTED_CATEGORIES: &str = "## Rejected categories";
pub const SECTION_USED: &str = "## Keywords already used";
pub const SECTION_REPLACE: &str = "## Replacement request";
pub const SECTION_FORMAT: &str = "## Output format";

const FORMAT_NOTE: &str = "Each keyword may be a plain string or an object {\"keyword\": \"...\", \"category\": \"...\"} naming the category it was generated for.";

/// Everything the generator sees besides the base template.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GenerationContext {
    pub product_name: String,
    pub keywords_per_key: usize,
    pub product_information: String,
    /// Rendered ranking prompt.
    pub ranking: Option<String>,
    pub reject_analysis: Option<String>,
    pub lexical_patterns: Vec<String>,
    pub categories: Vec<String>,
    pub rejected_categories: Vec<String>,
    pub used_keywords: Vec<String>,
    pub replace: Vec<String>,
}

fn push_section(out: &mut String, header: &str, body: &str) {
    let _ = write!(out, "\n\n{header}\n{}", body.trim_end());
}

fn bullet_list(items: &[String]) -> String {
    items.iter().map(|i| format!("- {i}")).collect::<Vec<_>>().join("\n")
}

/// Generation template followed by the context sections that are present.
pub fn render_generation(ctx: &GenerationContext) -> PromptBundle {
    let mut bundle = render(
        TemplateId::Generate,
        &vars([
            ("product_name", ctx.product_name.clone()),
            ("keywords_per_key", ctx.keywords_per_key.to_string()),
        ]),
    )
    .expect("generate placeholders supplied");
    let out = &mut bundle.rendered_text;
    push_section(out, SECTION_PRODUCT, &ctx.product_information);
    if let Some(r) = &ctx.ranking {
        push_section(out, SECTION_RANKING, r);
    }
    if let Some(a) = &ctx.reject_analysis {
        push_section(out, SECTION_REJECT_ANALYSIS, a);
    }
    if !ctx.lexical_patterns.is_empty() {
        push_section(out, SECTION_LEXICAL, &bullet_list(&ctx.lexical_patterns));
    }
    if !ctx.categories.is_empty() {
        push_section(out, SECTION_CATEGORIES, &bullet_list(&ctx.categories));
    }
    if !ctx.rejected_categories.is_empty() {
        let body = format!(
            "Do not generate keywords for these categories; propose a new category for each instead.\n{}",
            bullet_list(&ctx.rejected_categories)
        );
        push_section(out, SECTION_REJECTED_CATEGORIES, &body);
    }
    if !ctx.used_keywords.is_empty() {
        push_section(out, SECTION_USED, &bullet_list(&ctx.used_keywords));
    }
    if !ctx.replace.is_empty() {
        let body = format!("Generate replacements for these keywords:\n{}", bullet_list(&ctx.replace));
        push_section(out, SECTION_REPLACE, &body);
    }
    push_section(out, SECTION_FORMAT, FORMAT_NOTE);
    bundle
}

/// Body of a `## ` section, up to the next section header.
pub fn section<'a>(text: &'a str, header: &str) -> Option<&'a str> {
    let start = text.find(&format!("\n{header}\n"))? + header.len() + 2;
    let rest = &text[start..];
    let end = rest.find("\n\n## ").unwrap_or(rest.len());
    Some(&rest[..end])
}

/// `- item` lines of a section body.
pub fn section_items(body: &str) -> Vec<&str> {
    body.lines().filter_map(|l| l.strip_prefix("- ")).map(str::trim).collect()
}
