//! Campaign data model: keywords, clusters, performance records and the
//! persisted campaign state.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DomainError {
    #[error("keyword {keyword:?}: invalid status transition {from:?} -> {to:?}")]
    InvalidTransition {
        keyword: String,
        from: KeywordStatus,
        to: KeywordStatus,
    },
    #[error("invalid metric schema: {0}")]
    Schema(String),
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("state file: {0}")]
    Io(#[from] std::io::Error),
    #[error("state file: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid cluster id {0:?}")]
    ClusterId(String),
}

/// Canonical keyword form: lowercase with runs of whitespace collapsed to one space.
pub fn canonical(text: &str) -> String {
    text.split_whitespace()
        .map(str::to_lowercase)
        .collect::<Vec<_>>()
        .join(" ")
}

/// Case-insensitive, whitespace-normalised keyword identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct KeywordId(String);

impl KeywordId {
    pub fn new(text: &str) -> Self {
        KeywordId(canonical(text))
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for KeywordId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for KeywordId {
    fn from(s: &str) -> Self {
        KeywordId::new(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterId(pub u32);

impl fmt::Display for ClusterId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "C{}", self.0)
    }
}

impl FromStr for ClusterId {
    type Err = DomainError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let t = s.trim();
        t.strip_prefix('C')
            .or_else(|| t.strip_prefix('c'))
            .unwrap_or(t)
            .parse()
            .map(ClusterId)
            .map_err(|_| DomainError::ClusterId(s.to_string()))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BrandClass {
    Branded,
    NonBranded,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KeywordStatus {
    Candidate,
    Deployed,
    Retired,
    Rejected,
}

impl KeywordStatus {
    pub fn can_become(self, to: KeywordStatus) -> bool {
        use KeywordStatus::*;
        matches!(
            (self, to),
            (Candidate, Deployed) | (Candidate, Rejected) | (Deployed, Retired)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Keyword {
    pub text: String,
    pub brand_class: BrandClass,
    pub status: KeywordStatus,
    pub created_round: u32,
    pub cluster_id: Option<ClusterId>,
    /// Category (cluster name or generator-proposed name) whose prompt section produced it.
    #[serde(default)]
    pub category: Option<String>,
}

impl Keyword {
    pub fn candidate(text: &str, brand_class: BrandClass, round: u32) -> Self {
        Keyword {
            text: text.trim().to_string(),
            brand_class,
            status: KeywordStatus::Candidate,
            created_round: round,
            cluster_id: None,
            category: None,
        }
    }

    pub fn id(&self) -> KeywordId {
        KeywordId::new(&self.text)
    }

    pub fn transition(&mut self, to: KeywordStatus) -> Result<(), DomainError> {
        if !self.status.can_become(to) {
            return Err(DomainError::InvalidTransition {
                keyword: self.text.clone(),
                from: self.status,
                to,
            });
        }
        self.status = to;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Orientation {
    Benefit,
    Cost,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    pub name: String,
    pub orientation: Orientation,
}

impl Metric {
    pub fn new(name: &str, orientation: Orientation) -> Self {
        Metric {
            name: name.to_string(),
            orientation,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum WeightMode {
    Fixed,
    Entropy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSchema {
    pub metrics: Vec<Metric>,
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    pub weight_mode: WeightMode,
}

impl MetricSchema {
    /// Click, Cost, Conversion, Impression with entropy weights; the metric set
    /// reported by the simulator and listed in the intent prompt.
    pub fn standard() -> Self {
        MetricSchema {
            metrics: vec![
                Metric::new("Click", Orientation::Benefit),
                Metric::new("Cost", Orientation::Cost),
                Metric::new("Conversion", Orientation::Benefit),
                Metric::new("Impression", Orientation::Benefit),
            ],
            weights: None,
            weight_mode: WeightMode::Entropy,
        }
    }

    pub fn len(&self) -> usize {
        self.metrics.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metrics.is_empty()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.metrics.iter().position(|m| m.name == name)
    }

    pub fn names(&self) -> Vec<&str> {
        self.metrics.iter().map(|m| m.name.as_str()).collect()
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        if self.metrics.is_empty() {
            return Err(DomainError::Schema("no metrics".into()));
        }
        let mut seen = BTreeSet::new();
        for m in &self.metrics {
            if !seen.insert(m.name.as_str()) {
                return Err(DomainError::Schema(format!("duplicate metric {:?}", m.name)));
            }
        }
        match (self.weight_mode, &self.weights) {
            (WeightMode::Fixed, None) => Err(DomainError::Schema("fixed weight mode needs weights".into())),
            (WeightMode::Fixed, Some(w)) => {
                if w.len() != self.metrics.len() {
                    return Err(DomainError::Schema(format!(
                        "{} weights for {} metrics",
                        w.len(),
                        self.metrics.len()
                    )));
                }
                if w.iter().any(|x| !x.is_finite() || *x < 0.0) {
                    return Err(DomainError::Schema("weights must be finite and non-negative".into()));
                }
                let sum: f64 = w.iter().sum();
                if (sum - 1.0).abs() > 1e-9 {
                    return Err(DomainError::Schema(format!("weights sum to {sum}, expected 1")));
                }
                Ok(())
            }
            (WeightMode::Entropy, _) => Ok(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerformanceRecord {
    pub keyword_id: KeywordId,
    pub values: Vec<f64>,
    pub as_of_round: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cluster {
    pub id: ClusterId,
    pub keyword_ids: BTreeSet<KeywordId>,
    #[serde(default)]
    pub intent_summary: Option<String>,
    #[serde(default)]
    pub score: Option<f64>,
}

impl Cluster {
    pub fn new(id: ClusterId, members: impl IntoIterator<Item = KeywordId>) -> Self {
        Cluster {
            id,
            keyword_ids: members.into_iter().collect(),
            intent_summary: None,
            score: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProductInfo {
    pub name: String,
    pub description: String,
}

/// Generation outcomes attributed to one category across all rounds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryStats {
    pub generated: u32,
    pub rejected: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignState {
    pub product: ProductInfo,
    /// Next round to execute, starting at 1.
    pub round: u32,
    pub horizon: u32,
    pub schema: MetricSchema,
    pub keywords: Vec<Keyword>,
    pub clusters: Vec<Cluster>,
    pub performance: Vec<PerformanceRecord>,
    pub rejected: BTreeSet<KeywordId>,
    /// Minor currency units.
    pub budget_spent: i64,
    pub budget_cap: i64,
    pub per_round_cap: usize,
    #[serde(default)]
    pub category_stats: BTreeMap<String, CategoryStats>,
    #[serde(default)]
    pub next_cluster_id: u32,
}

impl CampaignState {
    pub fn new(product: ProductInfo, schema: MetricSchema, horizon: u32, budget_cap: i64, per_round_cap: usize) -> Self {
        CampaignState {
            product,
            round: 1,
            horizon,
            schema,
            keywords: Vec::new(),
            clusters: Vec::new(),
            performance: Vec::new(),
            rejected: BTreeSet::new(),
            budget_spent: 0,
            budget_cap,
            per_round_cap,
            category_stats: BTreeMap::new(),
            next_cluster_id: 1,
        }
    }

    pub fn keyword(&self, id: &KeywordId) -> Option<&Keyword> {
        self.keywords.iter().find(|k| &k.id() == id)
    }

    pub fn keyword_mut(&mut self, id: &KeywordId) -> Option<&mut Keyword> {
        self.keywords.iter_mut().find(|k| &k.id() == id)
    }

    pub fn deployed(&self) -> impl Iterator<Item = &Keyword> {
        self.keywords.iter().filter(|k| k.status == KeywordStatus::Deployed)
    }

    pub fn deployed_ids(&self) -> Vec<KeywordId> {
        self.deployed().map(Keyword::id).collect()
    }

    /// Deployed and retired keywords.
    pub fn history(&self) -> BTreeSet<KeywordId> {
        self.keywords
            .iter()
            .filter(|k| matches!(k.status, KeywordStatus::Deployed | KeywordStatus::Retired))
            .map(Keyword::id)
            .collect()
    }

    pub fn fresh_cluster_id(&mut self) -> ClusterId {
        let used = self.clusters.iter().map(|c| c.id.0).max().unwrap_or(0);
        let id = self.next_cluster_id.max(used + 1).max(1);
        self.next_cluster_id = id + 1;
        ClusterId(id)
    }

    pub fn cluster_of(&self, id: &KeywordId) -> Option<ClusterId> {
        self.clusters.iter().find(|c| c.keyword_ids.contains(id)).map(|c| c.id)
    }

    /// Mean of each keyword's per-round records, for the given keywords in order.
    /// Keywords without records get an all-zero vector.
    pub fn mean_performance(&self, ids: &[KeywordId]) -> Vec<Vec<f64>> {
        let m = self.schema.len();
        let mut sums: BTreeMap<&KeywordId, (Vec<f64>, usize)> = BTreeMap::new();
        for rec in &self.performance {
            let e = sums.entry(&rec.keyword_id).or_insert_with(|| (vec![0.0; m], 0));
            for (acc, v) in e.0.iter_mut().zip(&rec.values) {
                *acc += v;
            }
            e.1 += 1;
        }
        ids.iter()
            .map(|id| match sums.get(id) {
                Some((s, n)) if *n > 0 => s.iter().map(|x| x / *n as f64).collect(),
                _ => vec![0.0; m],
            })
            .collect()
    }

    /// Records of the most recent round that has any, keyed by keyword.
    pub fn latest_records(&self) -> BTreeMap<KeywordId, &PerformanceRecord> {
        let last = self.performance.iter().map(|r| r.as_of_round).max();
        self.performance
            .iter()
            .filter(|r| Some(r.as_of_round) == last)
            .map(|r| (r.keyword_id.clone(), r))
            .collect()
    }

    pub fn to_json(&self) -> Result<String, DomainError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self, DomainError> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn load(path: &Path) -> Result<Self, DomainError> {
        let s = std::fs::read_to_string(path)?;
        Self::from_json(&s)
    }

    /// Writes to a sibling temp file and renames over `path`, so a crash leaves
    /// either the old or the new state on disk.
    pub fn save_atomic(&self, path: &Path) -> Result<(), DomainError> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
        tmp.write_all(self.to_json()?.as_bytes())?;
        tmp.as_file().sync_all()?;
        tmp.persist(path).map_err(|e| DomainError::Io(e.error))?;
        Ok(())
    }
}

/// Reads performance records from CSV. The header must be `keyword` followed by
/// the schema's metric names in schema order.
pub fn import_performance_csv<R: Read>(
    reader: R,
    schema: &MetricSchema,
    round: u32,
) -> Result<Vec<PerformanceRecord>, DomainError> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let header = rdr
        .headers()
        .map_err(|e| DomainError::Csv { line: 1, message: e.to_string() })?
        .clone();
    let expected: Vec<&str> = std::iter::once("keyword").chain(schema.names()).collect();
    let got: Vec<&str> = header.iter().collect();
    if got != expected {
        return Err(DomainError::Csv {
            line: 1,
            message: format!("header {got:?}, expected {expected:?}"),
        });
    }
    let mut out = Vec::new();
    for row in rdr.records() {
        let row = row.map_err(|e| DomainError::Csv {
            line: e.position().map(|p| p.line()).unwrap_or(0),
            message: e.to_string(),
        })?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let text = row.get(0).unwrap_or("");
        if canonical(text).is_empty() {
            return Err(DomainError::Csv { line, message: "empty keyword".into() });
        }
        let mut values = Vec::with_capacity(schema.len());
        for (i, field) in row.iter().skip(1).enumerate() {
            let v: f64 = field.parse().map_err(|_| DomainError::Csv {
                line,
                message: format!("{}: {field:?} is not a number", schema.metrics[i].name),
            })?;
            if !v.is_finite() || v < 0.0 {
                return Err(DomainError::Csv {
                    line,
                    message: format!("{}: {v} must be finite and non-negative", schema.metrics[i].name),
                });
            }
            values.push(v);
        }
        out.push(PerformanceRecord {
            keyword_id: KeywordId::new(text),
            values,
            as_of_round: round,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    EmptyKeyword { index: usize },
    DuplicateKeyword { text: String },
    InvalidCreatedRound { text: String },
    UnknownClusterMember { cluster: ClusterId, keyword: KeywordId },
    ClusterOverlap { keyword: KeywordId },
    EmptyCluster { cluster: ClusterId },
    DuplicateClusterId { cluster: ClusterId },
    ClusterScoreOutOfRange { cluster: ClusterId, score: f64 },
    Schema(String),
    RecordShape { keyword: KeywordId, len: usize, expected: usize },
    RecordValue { keyword: KeywordId, value: f64 },
    BudgetExceeded { spent: i64, cap: i64 },
    DeployCapExceeded { deployed: usize, cap: usize },
    DeployedButRejected { keyword: KeywordId },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::EmptyKeyword { index } => write!(f, "keyword #{index} has empty text"),
            Violation::DuplicateKeyword { text } => write!(f, "duplicate keyword {text:?}"),
            Violation::InvalidCreatedRound { text } => write!(f, "keyword {text:?} has created_round 0"),
            Violation::UnknownClusterMember { cluster, keyword } => {
                write!(f, "cluster {cluster} references unknown keyword {keyword:?}")
            }
            Violation::ClusterOverlap { keyword } => write!(f, "keyword {keyword:?} is in more than one cluster"),
            Violation::EmptyCluster { cluster } => write!(f, "cluster {cluster} is empty"),
            Violation::DuplicateClusterId { cluster } => write!(f, "cluster id {cluster} used twice"),
            Violation::ClusterScoreOutOfRange { cluster, score } => {
                write!(f, "cluster {cluster} score {score} outside [0,1]")
            }
            Violation::Schema(m) => write!(f, "schema: {m}"),
            Violation::RecordShape { keyword, len, expected } => {
                write!(f, "record for {keyword:?} has {len} values, expected {expected}")
            }
            Violation::RecordValue { keyword, value } => write!(f, "record for {keyword:?} has value {value}"),
            Violation::BudgetExceeded { spent, cap } => write!(f, "budget spent {spent} exceeds cap {cap}"),
            Violation::DeployCapExceeded { deployed, cap } => write!(f, "{deployed} deployed keywords exceed cap {cap}"),
            Violation::DeployedButRejected { keyword } => write!(f, "deployed keyword {keyword:?} is in the rejected set"),
        }
    }
}

/// Checks every state invariant and returns the violations found; empty means valid.
pub fn validate_state(state: &CampaignState) -> Vec<Violation> {
    let mut out = Vec::new();

    if let Err(e) = state.schema.validate() {
        out.push(Violation::Schema(e.to_string()));
    }

    let mut seen = BTreeSet::new();
    for (i, k) in state.keywords.iter().enumerate() {
        let id = k.id();
        if id.as_str().is_empty() {
            out.push(Violation::EmptyKeyword { index: i });
            continue;
        }
        if !seen.insert(id) {
            out.push(Violation::DuplicateKeyword { text: k.text.clone() });
        }
        if k.created_round == 0 {
            out.push(Violation::InvalidCreatedRound { text: k.text.clone() });
        }
    }

    let mut cluster_ids = BTreeSet::new();
    let mut member_seen = BTreeSet::new();
    for c in &state.clusters {
        if !cluster_ids.insert(c.id) {
            out.push(Violation::DuplicateClusterId { cluster: c.id });
        }
        if c.keyword_ids.is_empty() {
            out.push(Violation::EmptyCluster { cluster: c.id });
        }
        if let Some(s) = c.score {
            if !(0.0..=1.0).contains(&s) {
                out.push(Violation::ClusterScoreOutOfRange { cluster: c.id, score: s });
            }
        }
        for id in &c.keyword_ids {
            if !seen.contains(id) {
                out.push(Violation::UnknownClusterMember { cluster: c.id, keyword: id.clone() });
            }
            if !member_seen.insert(id.clone()) {
                out.push(Violation::ClusterOverlap { keyword: id.clone() });
            }
        }
    }

    let m = state.schema.len();
    for r in &state.performance {
        if r.values.len() != m {
            out.push(Violation::RecordShape {
                keyword: r.keyword_id.clone(),
                len: r.values.len(),
                expected: m,
            });
        }
        if let Some(v) = r.values.iter().find(|v| !v.is_finite() || **v < 0.0) {
            out.push(Violation::RecordValue { keyword: r.keyword_id.clone(), value: *v });
        }
    }

    if state.budget_spent > state.budget_cap {
        out.push(Violation::BudgetExceeded { spent: state.budget_spent, cap: state.budget_cap });
    }
    let deployed = state.deployed().count();
    if deployed > state.per_round_cap {
        out.push(Violation::DeployCapExceeded { deployed, cap: state.per_round_cap });
    }
    for k in state.deployed() {
        if state.rejected.contains(&k.id()) {
            out.push(Violation::DeployedButRejected { keyword: k.id() });
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ToolOutcome {
    Accept,
    Reject,
    Analysis,
}

/// Uniform result of a tool call.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolVerdict {
    pub tool: String,
    pub subject: String,
    pub outcome: ToolOutcome,
    pub reason: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub payload: BTreeMap<String, serde_json::Value>,
}

impl ToolVerdict {
    pub fn accept(tool: &str, subject: &str) -> Self {
        ToolVerdict {
            tool: tool.into(),
            subject: subject.into(),
            outcome: ToolOutcome::Accept,
            reason: String::new(),
            payload: BTreeMap::new(),
        }
    }

    /// An empty `reason` is replaced with a generic one naming the tool.
    pub fn reject(tool: &str, subject: &str, reason: impl Into<String>) -> Self {
        let mut reason = reason.into();
        if reason.trim().is_empty() {
            reason = format!("rejected by {tool}");
        }
        ToolVerdict {
            tool: tool.into(),
            subject: subject.into(),
            outcome: ToolOutcome::Reject,
            reason,
            payload: BTreeMap::new(),
        }
    }

    pub fn analysis(tool: &str, subject: &str, reason: impl Into<String>) -> Self {
        ToolVerdict {
            tool: tool.into(),
            subject: subject.into(),
            outcome: ToolOutcome::Analysis,
            reason: reason.into(),
            payload: BTreeMap::new(),
        }
    }

    pub fn with(mut self, key: &str, value: impl Into<serde_json::Value>) -> Self {
        self.payload.insert(key.into(), value.into());
        self
    }

    pub fn is_accept(&self) -> bool {
        self.outcome == ToolOutcome::Accept
    }
}
