//! Offline keyword-set quality metrics and normalised comparison tables.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::{ClusterError, EmbeddingProvider};
use crate::text::tokens;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("nothing to normalize: need at least 2 methods, got {0}")]
    TooFewMethods(usize),
    #[error("method {method:?} has no value for column {column:?}")]
    MissingValue { method: String, column: String },
    #[error("duplicate method {0:?}")]
    DuplicateMethod(String),
    #[error("no reports to average")]
    NoReports,
    #[error(transparent)]
    Embedding(#[from] ClusterError),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Aggregation {
    /// All keywords pooled into one bag of tokens.
    #[default]
    Bag,
    /// Mean of per-keyword scores.
    PerKeywordMean,
}

fn counts(toks: &[String]) -> BTreeMap<&str, usize> {
    let mut m = BTreeMap::new();
    for t in toks {
        *m.entry(t.as_str()).or_insert(0) += 1;
    }
    m
}

fn rouge1_tokens(cand: &[String], reference: &[String]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let (c, r) = (counts(cand), counts(reference));
    let overlap: usize = c.iter().map(|(t, n)| (*n).min(r.get(t).copied().unwrap_or(0))).sum();
    if overlap == 0 {
        return 0.0;
    }
    2.0 * overlap as f64 / (cand.len() + reference.len()) as f64
}

/// ROUGE-1 F1 of a keyword set against reference text, with clipped unigram
/// counts over lowercase alphanumeric tokens.
pub fn rouge1(keywords: &[&str], reference: &str, aggregation: Aggregation) -> f64 {
    let reference = tokens(reference);
    match aggregation {
        Aggregation::Bag => {
            let cand: Vec<String> = keywords.iter().flat_map(|k| tokens(k)).collect();
            rouge1_tokens(&cand, &reference)
        }
        Aggregation::PerKeywordMean => {
            if keywords.is_empty() {
                return 0.0;
            }
            keywords.iter().map(|k| rouge1_tokens(&tokens(k), &reference)).sum::<f64>() / keywords.len() as f64
        }
    }
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) }
}

fn greedy_f1(cand: &[Vec<f64>], reference: &[Vec<f64>]) -> f64 {
    if cand.is_empty() || reference.is_empty() {
        return 0.0;
    }
    let best = |x: &Vec<f64>, ys: &[Vec<f64>]| ys.iter().map(|y| cosine(x, y)).fold(f64::NEG_INFINITY, f64::max);
    let p = cand.iter().map(|c| best(c, reference)).sum::<f64>() / cand.len() as f64;
    let r = reference.iter().map(|t| best(t, cand)).sum::<f64>() / reference.len() as f64;
    if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) }
}

/// Greedy token-matching F1 over token embeddings, without IDF weighting.
pub fn embed_similarity(
    keywords: &[&str],
    reference: &str,
    provider: &dyn EmbeddingProvider,
    aggregation: Aggregation,
) -> Result<f64, EvalError> {
    let embed = |toks: &[String]| -> Result<Vec<Vec<f64>>, ClusterError> {
        let refs: Vec<&str> = toks.iter().map(String::as_str).collect();
        provider.embed(&refs)
    };
    let reference = embed(&tokens(reference))?;
    match aggregation {
        Aggregation::Bag => {
            let cand: Vec<String> = keywords.iter().flat_map(|k| tokens(k)).collect();
            Ok(greedy_f1(&embed(&cand)?, &reference))
        }
        Aggregation::PerKeywordMean => {
            if keywords.is_empty() {
                return Ok(0.0);
            }
            let mut sum = 0.0;
            for k in keywords {
                sum += greedy_f1(&embed(&tokens(k))?, &reference);
            }
            Ok(sum / keywords.len() as f64)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ColumnKind {
    Benefit,
    Cost,
    /// Already in [0, 1]; passed through unchanged.
    Raw,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalColumn {
    pub name: String,
    pub kind: ColumnKind,
}

impl EvalColumn {
    pub fn new(name: &str, kind: ColumnKind) -> Self {
        EvalColumn { name: name.into(), kind }
    }

    pub fn standard() -> Vec<EvalColumn> {
        vec![
            EvalColumn::new("clicks", ColumnKind::Benefit),
            EvalColumn::new("cpc", ColumnKind::Cost),
            EvalColumn::new("search_volume", ColumnKind::Benefit),
            EvalColumn::new("competitor_score", ColumnKind::Benefit),
            EvalColumn::new("rouge1", ColumnKind::Raw),
            EvalColumn::new("embed_sim", ColumnKind::Raw),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodResult {
    pub method: String,
    pub values: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub raw: BTreeMap<String, f64>,
    pub normalized: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub columns: Vec<EvalColumn>,
    /// Sorted by method name.
    pub rows: Vec<EvalRow>,
    pub provenance: String,
}

/// Min-max normalises each column across methods; cost columns are flipped,
/// raw columns pass through and constant columns become 0.5.
pub fn normalize_table(results: &[MethodResult], columns: &[EvalColumn]) -> Result<EvalReport, EvalError> {
    if results.len() < 2 {
        return Err(EvalError::TooFewMethods(results.len()));
    }
    let mut seen = BTreeSet::new();
    for r in results {
        if !seen.insert(r.method.as_str()) {
            return Err(EvalError::DuplicateMethod(r.method.clone()));
        }
        for c in columns {
            if !r.values.contains_key(&c.name) {
                return Err(EvalError::MissingValue { method: r.method.clone(), column: c.name.clone() });
            }
        }
    }
    let mut rows: Vec<EvalRow> = results
        .iter()
        .map(|r| EvalRow {
            method: r.method.clone(),
            raw: columns.iter().map(|c| (c.name.clone(), r.values[&c.name])).collect(),
            normalized: BTreeMap::new(),
        })
        .collect();
    for c in columns {
        let vals: Vec<f64> = rows.iter().map(|r| r.raw[&c.name]).collect();
        let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        for (row, v) in rows.iter_mut().zip(vals) {
            let n = match c.kind {
                ColumnKind::Raw => v,
                _ if hi == lo => 0.5,
                ColumnKind::Benefit => (v - lo) / (hi - lo),
                ColumnKind::Cost => (hi - v) / (hi - lo),
            };
            row.normalized.insert(c.name.clone(), n);
        }
    }
    rows.sort_by(|a, b| a.method.cmp(&b.method));
    Ok(EvalReport {
        columns: columns.to_vec(),
        rows,
        provenance: "min-max across methods; cost columns flipped; raw columns unchanged".into(),
    })
}

/// Averages per-product reports method by method. Every report must cover the same methods.
pub fn average_reports(reports: &[EvalReport]) -> Result<EvalReport, EvalError> {
    let first = reports.first().ok_or(EvalError::NoReports)?;
    let mut rows = first.rows.clone();
    for row in rows.iter_mut() {
        for r in &reports[1..] {
            let other = r
                .rows
                .iter()
                .find(|o| o.method == row.method)
                .ok_or_else(|| EvalError::MissingValue { method: row.method.clone(), column: "*".into() })?;
            for c in &first.columns {
                *row.raw.get_mut(&c.name).expect("column present") += other.raw[&c.name];
                *row.normalized.get_mut(&c.name).expect("column present") += other.normalized[&c.name];
            }
        }
        let n = reports.len() as f64;
        row.raw.values_mut().for_each(|v| *v /= n);
        row.normalized.values_mut().for_each(|v| *v /= n);
    }
    Ok(EvalReport {
        columns: first.columns.clone(),
        rows,
        provenance: format!("normalized per product, then averaged over {} products", reports.len()),
    })
}

impl EvalReport {
    /// One row per method: raw columns followed by normalised columns.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["method".to_string()];
        header.extend(self.columns.iter().map(|c| c.name.clone()));
        header.extend(self.columns.iter().map(|c| format!("{}_norm", c.name)));
        w.write_record(&header).expect("in-memory write");
        for r in &self.rows {
            let mut rec = vec![r.method.clone()];
            rec.extend(self.columns.iter().map(|c| r.raw[&c.name].to_string()));
            rec.extend(self.columns.iter().map(|c| r.normalized[&c.name].to_string()));
            w.write_record(&rec).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}
