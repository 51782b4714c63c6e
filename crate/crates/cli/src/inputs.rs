//! `rank`, `cluster` and `evaluate`: the ranking, clustering and evaluation
//! stages run standalone on files.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::path::Path;

use oms_core::clustering::{affinity_propagation, build_similarity, embed_keywords, ApParams, Preference};
use oms_core::domain::import_performance_csv;
use oms_core::evaluation::{
    average_reports, embed_similarity, normalize_table, rouge1, Aggregation, ColumnKind, EvalColumn, EvalReport,
    MethodResult,
};
use oms_core::ranking::{normalize, topsis_scores, weights_for, WeightSource};
use oms_core::KeywordId;
use serde::{Deserialize, Serialize};

use crate::config::Config;
use crate::error::CliError;
use crate::print_json;

fn open(path: &Path) -> Result<File, CliError> {
    File::open(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn invalid_in(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Invalid(format!("{}: {e}", path.display()))
}

#[derive(Debug, Serialize)]
struct RankedRow {
    rank: usize,
    keyword: String,
    score: f64,
}

#[derive(Debug, Serialize)]
struct RankOutput {
    metrics: Vec<String>,
    weights: Vec<f64>,
    weight_source: WeightSource,
    keywords: Vec<RankedRow>,
}

pub fn rank(cfg: &Config, input: &Path, json: bool) -> Result<(), CliError> {
    let schema = cfg.schema();
    let records = import_performance_csv(open(input)?, &schema, 1).map_err(|e| invalid_in(input, e))?;
    let mut seen = BTreeSet::new();
    for (i, r) in records.iter().enumerate() {
        if !seen.insert(&r.keyword_id) {
            return Err(invalid_in(input, format!("csv line {}: duplicate keyword {:?}", i + 2, r.keyword_id.as_str())));
        }
    }
    let ids: Vec<KeywordId> = records.iter().map(|r| r.keyword_id.clone()).collect();
    let raw: Vec<Vec<f64>> = records.iter().map(|r| r.values.clone()).collect();
    let nm = normalize(&ids, &raw, &schema).map_err(|e| invalid_in(input, e))?;
    let w = weights_for(&schema, &nm).map_err(|e| invalid_in(input, e))?;
    let scores = topsis_scores(&nm, &w).map_err(|e| invalid_in(input, e))?;
    let mut ranked: Vec<(KeywordId, f64)> = scores.scores.iter().map(|(k, s)| (k.clone(), *s)).collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let out = RankOutput {
        metrics: schema.names().iter().map(ToString::to_string).collect(),
        weights: w.w.clone(),
        weight_source: w.source,
        keywords: ranked
            .into_iter()
            .enumerate()
            .map(|(i, (k, score))| RankedRow { rank: i + 1, keyword: k.to_string(), score })
            .collect(),
    };
    if json {
        return print_json(&out);
    }
    let weights: Vec<String> = out.metrics.iter().zip(&out.weights).map(|(m, w)| format!("{m} {w:.4}")).collect();
    println!("weights ({:?}): {}", out.weight_source, weights.join(", "));
    for r in &out.keywords {
        println!("{:>4}  {:.6}  {}", r.rank, r.score, r.keyword);
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct ClusterRow {
    id: usize,
    exemplar: String,
    members: Vec<String>,
}

#[derive(Debug, Serialize)]
struct ClusterOutput {
    converged: bool,
    iterations: usize,
    clusters: Vec<ClusterRow>,
}

/// Labelled points (`label,x1,x2,…`), or a single `keyword` column to embed
/// with the configured provider.
fn read_points(cfg: &Config, input: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(open(input)?);
    let width = rdr.headers().map_err(|e| invalid_in(input, format!("csv line 1: {e}")))?.len();
    let mut labels = Vec::new();
    let mut points = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            invalid_in(input, format!("csv line {line}: {e}"))
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        labels.push(rec[0].to_string());
        if width > 1 {
            let p: Result<Vec<f64>, _> = rec.iter().skip(1).map(str::parse::<f64>).collect();
            let p = p.map_err(|_| invalid_in(input, format!("csv line {line}: coordinates must be numbers")))?;
            if p.iter().any(|v| !v.is_finite()) {
                return Err(invalid_in(input, format!("csv line {line}: coordinates must be finite")));
            }
            points.push(p);
        }
    }
    if labels.is_empty() {
        return Err(invalid_in(input, "no rows"));
    }
    if width == 1 {
        let providers = cfg.providers(&cfg.market(None))?;
        let ids: Vec<KeywordId> = labels.iter().map(|l| KeywordId::new(l)).collect();
        let emb = embed_keywords(providers.embedding.as_ref(), &ids).map_err(|e| invalid_in(input, e))?;
        points = ids.iter().map(|k| emb[k].clone()).collect();
    }
    Ok((labels, points))
}

pub fn cluster(cfg: &Config, input: &Path, json: bool) -> Result<(), CliError> {
    let (labels, points) = read_points(cfg, input)?;
    let sim = build_similarity(&points, Preference::Median).map_err(|e| invalid_in(input, e))?;
    let ap = affinity_propagation(&sim, ApParams::default());
    let out = ClusterOutput {
        converged: ap.converged,
        iterations: ap.iterations,
        clusters: ap
            .groups()
            .into_iter()
            .enumerate()
            .map(|(i, g)| ClusterRow {
                id: i + 1,
                exemplar: labels[ap.exemplar_of[g[0]]].clone(),
                members: g.iter().map(|&j| labels[j].clone()).collect(),
            })
            .collect(),
    };
    if json {
        return print_json(&out);
    }
    for c in &out.clusters {
        println!("cluster {} (exemplar {}): {}", c.id, c.exemplar, c.members.join(", "));
    }
    println!(
        "{} clusters, {} after {} iterations",
        out.clusters.len(),
        if out.converged { "converged" } else { "not converged" },
        out.iterations
    );
    Ok(())
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EvalInput {
    #[serde(default)]
    aggregation: Aggregation,
    /// Extra metric columns supplied per method, beyond rouge1 and embed_sim.
    #[serde(default)]
    columns: Vec<EvalColumn>,
    products: Vec<ProductInput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProductInput {
    name: String,
    reference: String,
    methods: BTreeMap<String, MethodInput>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct MethodInput {
    keywords: Vec<String>,
    #[serde(default)]
    values: BTreeMap<String, f64>,
}

#[derive(Debug, Serialize)]
struct MethodScores {
    method: String,
    rouge1: f64,
    embed_sim: f64,
}

#[derive(Debug, Serialize)]
struct ProductScores {
    name: String,
    methods: Vec<MethodScores>,
}

#[derive(Debug, Serialize)]
struct EvaluateOutput {
    products: Vec<ProductScores>,
    /// Present when every product compares at least two methods.
    report: Option<EvalReport>,
}

pub fn evaluate(cfg: &Config, input: &Path, json: bool) -> Result<(), CliError> {
    let text = std::fs::read_to_string(input).map_err(|e| invalid_in(input, e))?;
    let req: EvalInput = serde_json::from_str(&text).map_err(|e| invalid_in(input, e))?;
    if req.products.is_empty() {
        return Err(invalid_in(input, "no products"));
    }
    let providers = cfg.providers(&cfg.market(None))?;
    let mut columns = vec![EvalColumn::new("rouge1", ColumnKind::Raw), EvalColumn::new("embed_sim", ColumnKind::Raw)];
    columns.extend(req.columns.iter().cloned());

    let mut products = Vec::new();
    let mut tables = Vec::new();
    for p in &req.products {
        let mut scores = Vec::new();
        let mut results = Vec::new();
        for (method, m) in &p.methods {
            let kws: Vec<&str> = m.keywords.iter().map(String::as_str).collect();
            let r1 = rouge1(&kws, &p.reference, req.aggregation);
            let es = embed_similarity(&kws, &p.reference, providers.embedding.as_ref(), req.aggregation)
                .map_err(|e| invalid_in(input, e))?;
            let mut values = m.values.clone();
            values.insert("rouge1".into(), r1);
            values.insert("embed_sim".into(), es);
            results.push(MethodResult { method: method.clone(), values });
            scores.push(MethodScores { method: method.clone(), rouge1: r1, embed_sim: es });
        }
        if results.len() >= 2 {
            tables.push(normalize_table(&results, &columns).map_err(|e| invalid_in(input, format!("{}: {e}", p.name)))?);
        }
        products.push(ProductScores { name: p.name.clone(), methods: scores });
    }
    let report = if tables.len() == req.products.len() {
        Some(average_reports(&tables).map_err(|e| invalid_in(input, e))?)
    } else {
        None
    };

    let out = EvaluateOutput { products, report };
    if json {
        return print_json(&out);
    }
    for p in &out.products {
        println!("{}", p.name);
        for m in &p.methods {
            println!("  {:<16} rouge1 {:.4}  embed_sim {:.4}", m.method, m.rouge1, m.embed_sim);
        }
    }
    if let Some(r) = &out.report {
        println!("{}", r.provenance);
        print!("{}", r.to_csv());
    }
    Ok(())
}
