//! Multi-objective keyword scoring.
//!
//! Raw metric vectors are min-max normalised per column (cost columns flipped),
//! weighted either by a fixed vector or by entropy, and scored with TOPSIS
//! against the all-ones ideal and all-zeros anti-ideal. Cluster scores are the
//! mean of member scores.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Cluster, ClusterId, KeywordId, MetricSchema, Orientation, WeightMode};

#[derive(Debug, Error, PartialEq)]
pub enum RankingError {
    #[error("no keywords")]
    NoKeywords,
    #[error("entropy undefined for fewer than two keywords")]
    EntropyUndefined,
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid raw value {value} for metric {metric}")]
    InvalidValue { metric: String, value: f64 },
    #[error("no score for keyword {0:?}")]
    MissingScore(KeywordId),
    #[error("cluster {0} is empty")]
    EmptyCluster(ClusterId),
    #[error("no clusters")]
    NoClusters,
    #[error("invalid weights: {0}")]
    Weights(String),
}

/// Normalised performance matrix; rows follow `keywords`, columns follow `metrics`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedMatrix {
    pub keywords: Vec<KeywordId>,
    pub metrics: Vec<String>,
    pub rows: Vec<Vec<f64>>,
}

impl NormalizedMatrix {
    /// Builds a matrix from already-normalised values in [0,1].
    pub fn from_rows(keywords: Vec<KeywordId>, metrics: Vec<String>, rows: Vec<Vec<f64>>) -> Result<Self, RankingError> {
        if rows.len() != keywords.len() {
            return Err(RankingError::Dimension(format!("{} rows for {} keywords", rows.len(), keywords.len())));
        }
        if let Some(r) = rows.iter().find(|r| r.len() != metrics.len()) {
            return Err(RankingError::Dimension(format!("row of {} for {} metrics", r.len(), metrics.len())));
        }
        for (r, m) in rows.iter().flat_map(|r| r.iter().zip(&metrics)) {
            if !(0.0..=1.0).contains(r) {
                return Err(RankingError::InvalidValue { metric: m.clone(), value: *r });
            }
        }
        Ok(NormalizedMatrix { keywords, metrics, rows })
    }

    pub fn n_keywords(&self) -> usize {
        self.rows.len()
    }

    pub fn n_metrics(&self) -> usize {
        self.metrics.len()
    }

    fn column(&self, d: usize) -> impl Iterator<Item = f64> + '_ {
        self.rows.iter().map(move |r| r[d])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightSource {
    Fixed,
    Entropy,
    /// Entropy requested but every column was uninformative.
    UniformFallback,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector {
    pub w: Vec<f64>,
    pub source: WeightSource,
}

impl WeightVector {
    pub fn fixed(w: Vec<f64>) -> Result<Self, RankingError> {
        if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
            return Err(RankingError::Weights("weights must be finite and non-negative".into()));
        }
        let sum: f64 = w.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(RankingError::Weights(format!("weights sum to {sum}")));
        }
        Ok(WeightVector { w, source: WeightSource::Fixed })
    }

    pub fn uniform(m: usize) -> Self {
        WeightVector {
            w: vec![1.0 / m as f64; m],
            source: WeightSource::Fixed,
        }
    }
}

/// Min-max normalises raw metric rows. Benefit columns map to `(p-min)/(max-min)`,
/// cost columns to `(max-p)/(max-min)`, constant columns to 0.5.
pub fn normalize(keywords: &[KeywordId], raw: &[Vec<f64>], schema: &MetricSchema) -> Result<NormalizedMatrix, RankingError> {
    if keywords.is_empty() {
        return Err(RankingError::NoKeywords);
    }
    if raw.len() != keywords.len() {
        return Err(RankingError::Dimension(format!("{} rows for {} keywords", raw.len(), keywords.len())));
    }
    let m = schema.len();
    for row in raw {
        if row.len() != m {
            return Err(RankingError::Dimension(format!("row of {} for {} metrics", row.len(), m)));
        }
        for (v, metric) in row.iter().zip(&schema.metrics) {
            if !v.is_finite() || *v < 0.0 {
                return Err(RankingError::InvalidValue { metric: metric.name.clone(), value: *v });
            }
        }
    }

    let mut rows = vec![vec![0.0; m]; raw.len()];
    for (d, metric) in schema.metrics.iter().enumerate() {
        let (lo, hi) = raw
            .iter()
            .map(|r| r[d])
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
        let span = hi - lo;
        for (out, r) in rows.iter_mut().zip(raw) {
            out[d] = if span == 0.0 {
                0.5
            } else {
                let v = match metric.orientation {
                    Orientation::Benefit => (r[d] - lo) / span,
                    Orientation::Cost => (hi - r[d]) / span,
                };
                v.clamp(0.0, 1.0)
            };
        }
    }
    Ok(NormalizedMatrix {
        keywords: keywords.to_vec(),
        metrics: schema.metrics.iter().map(|m| m.name.clone()).collect(),
        rows,
    })
}

/// Entropy weights: `e_d = -(1/ln I) Σ s ln s` with `s = v / Σ v` and `0 ln 0 = 0`;
/// `w_d ∝ 1 - e_d`. Columns whose contributions are all equal, or whose sum is
/// zero, get weight exactly 0.
pub fn entropy_weights(nm: &NormalizedMatrix) -> Result<WeightVector, RankingError> {
    let m = nm.n_metrics();
    let n = nm.n_keywords();
    if m == 0 {
        return Err(RankingError::Dimension("no metrics".into()));
    }
    if m == 1 {
        return Ok(WeightVector { w: vec![1.0], source: WeightSource::Entropy });
    }
    if n < 2 {
        return Err(RankingError::EntropyUndefined);
    }
    let ln_n = (n as f64).ln();
    let divergence: Vec<f64> = (0..m)
        .map(|d| {
            let total: f64 = nm.column(d).sum();
            if total <= 0.0 {
                return 0.0;
            }
            let first = nm.rows[0][d];
            if nm.column(d).all(|v| v == first) {
                return 0.0;
            }
            let h: f64 = nm
                .column(d)
                .map(|v| v / total)
                .filter(|s| *s > 0.0)
                .map(|s| s * s.ln())
                .sum();
            (1.0 + h / ln_n).max(0.0)
        })
        .collect();
    let z: f64 = divergence.iter().sum();
    if z <= 0.0 {
        return Ok(WeightVector {
            w: vec![1.0 / m as f64; m],
            source: WeightSource::UniformFallback,
        });
    }
    Ok(WeightVector {
        w: divergence.iter().map(|x| x / z).collect(),
        source: WeightSource::Entropy,
    })
}

/// Resolves the schema's weighting policy against a normalised matrix. Entropy
/// with a single keyword falls back to uniform weights.
pub fn weights_for(schema: &MetricSchema, nm: &NormalizedMatrix) -> Result<WeightVector, RankingError> {
    match (schema.weight_mode, &schema.weights) {
        (WeightMode::Fixed, Some(w)) => WeightVector::fixed(w.clone()),
        (WeightMode::Fixed, None) => Err(RankingError::Weights("fixed mode without weights".into())),
        (WeightMode::Entropy, _) => match entropy_weights(nm) {
            Err(RankingError::EntropyUndefined) => Ok(WeightVector {
                w: vec![1.0 / nm.n_metrics() as f64; nm.n_metrics()],
                source: WeightSource::UniformFallback,
            }),
            other => other,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopsisScores {
    pub scores: BTreeMap<KeywordId, f64>,
    /// Keywords whose distances were both zero and were scored 0.5.
    pub degenerate: Vec<KeywordId>,
}

impl TopsisScores {
    pub fn get(&self, id: &KeywordId) -> Option<f64> {
        self.scores.get(id).copied()
    }
}

/// Relative closeness `D- / (D+ + D-)` where `D-` is the weighted distance to the
/// all-zeros anti-ideal and `D+` the distance to the all-ones ideal.
pub fn topsis_scores(nm: &NormalizedMatrix, w: &WeightVector) -> Result<TopsisScores, RankingError> {
    if w.w.len() != nm.n_metrics() {
        return Err(RankingError::Dimension(format!(
            "{} weights for {} metrics",
            w.w.len(),
            nm.n_metrics()
        )));
    }
    let mut scores = BTreeMap::new();
    let mut degenerate = Vec::new();
    for (id, row) in nm.keywords.iter().zip(&nm.rows) {
        let mut to_anti = 0.0;
        let mut to_ideal = 0.0;
        for (v, wd) in row.iter().zip(&w.w) {
            to_anti += wd * v * v;
            to_ideal += wd * (v - 1.0) * (v - 1.0);
        }
        let d_minus = to_anti.sqrt();
        let d_plus = to_ideal.sqrt();
        let denom = d_plus + d_minus;
        let s = if denom == 0.0 {
            degenerate.push(id.clone());
            0.5
        } else {
            d_minus / denom
        };
        scores.insert(id.clone(), s);
    }
    Ok(TopsisScores { scores, degenerate })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedKeywords(pub Vec<(KeywordId, f64)>);

impl RankedKeywords {
    pub fn ids(&self) -> Vec<&KeywordId> {
        self.0.iter().map(|(k, _)| k).collect()
    }

    pub fn top(&self) -> Option<&(KeywordId, f64)> {
        self.0.first()
    }

    pub fn bottom(&self) -> Option<&(KeywordId, f64)> {
        self.0.last()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedClusters(pub Vec<(ClusterId, f64)>);

fn descending<K: Ord>(a: &(K, f64), b: &(K, f64)) -> Ordering {
    b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0))
}

/// Members sorted by descending score; ties by canonical text ascending.
pub fn rank_intra(cluster: &Cluster, scores: &TopsisScores) -> Result<RankedKeywords, RankingError> {
    let mut out = cluster
        .keyword_ids
        .iter()
        .map(|id| {
            scores
                .get(id)
                .map(|s| (id.clone(), s))
                .ok_or_else(|| RankingError::MissingScore(id.clone()))
        })
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(descending);
    Ok(RankedKeywords(out))
}

/// Mean member score per cluster.
pub fn cluster_score(cluster: &Cluster, scores: &TopsisScores) -> Result<f64, RankingError> {
    if cluster.keyword_ids.is_empty() {
        return Err(RankingError::EmptyCluster(cluster.id));
    }
    let mut sum = 0.0;
    for id in &cluster.keyword_ids {
        sum += scores.get(id).ok_or_else(|| RankingError::MissingScore(id.clone()))?;
    }
    Ok(sum / cluster.keyword_ids.len() as f64)
}

/// Clusters sorted by descending mean member score; ties by cluster id.
pub fn rank_inter(clusters: &[Cluster], scores: &TopsisScores) -> Result<RankedClusters, RankingError> {
    if clusters.is_empty() {
        return Err(RankingError::NoClusters);
    }
    let mut out = clusters
        .iter()
        .map(|c| cluster_score(c, scores).map(|s| (c.id, s)))
        .collect::<Result<Vec<_>, _>>()?;
    out.sort_by(descending);
    Ok(RankedClusters(out))
}
