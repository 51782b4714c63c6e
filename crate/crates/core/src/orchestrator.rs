//! The campaign loop: ranking, prompt construction, constraint-feedback
//! generation, reflection, re-clustering and deployment.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::clustering::{embed_keywords, recluster, Assignment, ClusterError, EmbeddingProvider, ReclusterParams};
use crate::domain::{
    validate_state, BrandClass, CampaignState, CategoryStats, ClusterId, DomainError, Keyword, KeywordId,
    KeywordStatus, PerformanceRecord, ToolOutcome, ToolVerdict,
};
use crate::llm::templates::{render_generation, render_rank, vars, GenerationContext, RankSection};
use crate::llm::{
    intent_summaries, parse_generation, parse_reflection, parse_sufficiency, render, Gateway, GatewayError,
    IntentInput, ParseError, ReflectionVerdict, Slot, Suggestion, Sufficiency, TemplateId, TranscriptEntry,
};
use crate::ranking::{normalize, rank_inter, rank_intra, topsis_scores, weights_for, RankingError, WeightSource};
use crate::tools::{
    category_reject, lexical_analysis, reject_analysis, reject_reflection, repeated_filter, search, volume_check,
    volume_passes, InfoStore, LexicalReport, RejectMatch, SearchSource, ToolError, UnknownVolume, VolumeProvider,
    REPEATED_FILTER, UNCATEGORIZED,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lambda {
    /// Median of the current cluster scores.
    Median,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RoundConfig {
    /// Validated keywords wanted from one generation round.
    pub keyword_budget: usize,
    pub volume_threshold: u64,
    pub category_threshold: f64,
    pub lambda: Lambda,
    pub max_alg_iter: usize,
    pub max_reflect_turns: usize,
    pub keywords_per_key: usize,
    pub lexical_min_count: usize,
    pub unknown_volume: UnknownVolume,
    pub reject_match: RejectMatch,
    pub volume_retries: usize,
    /// Full affinity-propagation re-cluster every this many rounds.
    pub recluster_every: u32,
    pub recluster: ReclusterParams,
    /// First search query; defaults to the product name.
    pub initial_query: Option<String>,
}

impl Default for RoundConfig {
    fn default() -> Self {
        RoundConfig {
            keyword_budget: 10,
            volume_threshold: 100,
            category_threshold: 0.6,
            lambda: Lambda::Median,
            max_alg_iter: 3,
            max_reflect_turns: 5,
            keywords_per_key: 10,
            lexical_min_count: 2,
            unknown_volume: UnknownVolume::Strict,
            reject_match: RejectMatch::Exact,
            volume_retries: 1,
            recluster_every: 1,
            recluster: ReclusterParams::default(),
            initial_query: None,
        }
    }
}

impl RoundConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.category_threshold) {
            return Err(format!("category_threshold {} outside [0, 1]", self.category_threshold));
        }
        if let Lambda::Fixed(l) = self.lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(format!("lambda {l} outside [0, 1]"));
            }
        }
        if self.max_alg_iter == 0 {
            return Err("max_alg_iter must be at least 1".into());
        }
        if self.max_reflect_turns == 0 {
            return Err("max_reflect_turns must be at least 1".into());
        }
        if self.keywords_per_key == 0 {
            return Err("keywords_per_key must be at least 1".into());
        }
        if self.recluster_every == 0 {
            return Err("recluster_every must be at least 1".into());
        }
        let d = self.recluster.ap.damping;
        if !(0.5..1.0).contains(&d) {
            return Err(format!("damping {d} outside [0.5, 1)"));
        }
        Ok(())
    }
}

/// Providers used by the generation tools.
#[derive(Clone, Copy)]
pub struct Tools<'a> {
    pub search: &'a dyn SearchSource,
    pub volume: &'a dyn VolumeProvider,
    pub embedding: &'a dyn EmbeddingProvider,
}

#[derive(Debug, Error)]
pub enum RoundError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Ranking(#[from] RankingError),
    #[error(transparent)]
    Cluster(#[from] ClusterError),
    #[error(transparent)]
    Tool(#[from] ToolError),
    #[error(transparent)]
    Domain(#[from] DomainError),
    #[error("platform: {0}")]
    Platform(String),
    #[error("round left the state invalid: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum LogEvent {
    Performance { keywords: usize, spend: i64 },
    PlatformSkipped { reason: String },
    Ranked {
        weights: Vec<f64>,
        weight_source: WeightSource,
        keywords: Vec<(KeywordId, f64)>,
        clusters: Vec<(ClusterId, f64)>,
        lambda: f64,
    },
    Intent { cluster: ClusterId, summary: String },
    RankPrompt { sha256: String },
    RejectAnalysis { verdict: ToolVerdict },
    Search { verdict: ToolVerdict },
    IsEnough { enough: bool, query: Option<String>, cached: bool },
    Generate { iteration: usize, prompt_sha256: String, keywords: Vec<String>, error: Option<String> },
    Verdict { verdict: ToolVerdict },
    LexicalAnalysis { report: LexicalReport },
    UpdateGenerator { patterns: Vec<String> },
    CategoryReject { categories: Vec<String> },
    UpdateCategories { rejected: Vec<String> },
    GenerationDone { accepted: Vec<KeywordId>, iterations: usize, shortfall: bool },
    Reflection { turn: usize, verdicts: Vec<ReflectionVerdict> },
    ReflectionDone { turns: usize, cap_hit: bool, parse_failed: bool, replaced: Vec<KeywordId> },
    Recluster { full: bool, converged: bool, clusters: usize, assignments: Vec<Assignment> },
    Deployment { deployed: Vec<KeywordId>, retired: Vec<KeywordId>, rejected: Vec<KeywordId> },
}

impl LogEvent {
    pub fn name(&self) -> &'static str {
        match self {
            LogEvent::Performance { .. } => "performance",
            LogEvent::PlatformSkipped { .. } => "platform_skipped",
            LogEvent::Ranked { .. } => "ranked",
            LogEvent::Intent { .. } => "intent",
            LogEvent::RankPrompt { .. } => "rank_prompt",
            LogEvent::RejectAnalysis { .. } => "reject_analysis",
            LogEvent::Search { .. } => "search",
            LogEvent::IsEnough { .. } => "is_enough",
            LogEvent::Generate { .. } => "generate",
            LogEvent::Verdict { .. } => "verdict",
            LogEvent::LexicalAnalysis { .. } => "lexical_analysis",
            LogEvent::UpdateGenerator { .. } => "update_generator",
            LogEvent::CategoryReject { .. } => "category_reject",
            LogEvent::UpdateCategories { .. } => "update_categories",
            LogEvent::GenerationDone { .. } => "generation_done",
            LogEvent::Reflection { .. } => "reflection",
            LogEvent::ReflectionDone { .. } => "reflection_done",
            LogEvent::Recluster { .. } => "recluster",
            LogEvent::Deployment { .. } => "deployment",
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RoundLog {
    pub round: u32,
    pub events: Vec<LogEvent>,
    pub transcript: Vec<TranscriptEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub aborted: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub elapsed_ms: Option<u64>,
}

impl RoundLog {
    pub fn new(round: u32) -> Self {
        RoundLog { round, ..Default::default() }
    }

    pub fn push(&mut self, e: LogEvent) {
        self.events.push(e);
    }

    pub fn event_names(&self) -> Vec<&'static str> {
        self.events.iter().map(LogEvent::name).collect()
    }

    /// Appends the log as one JSON line.
    pub fn append_to(&self, path: &Path) -> std::io::Result<()> {
        let mut f = std::fs::OpenOptions::new().create(true).append(true).open(path)?;
        let mut line = serde_json::to_string(self)?;
        line.push('\n');
        f.write_all(line.as_bytes())
    }
}

/// A keyword that passed every filter this round.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub id: KeywordId,
    pub text: String,
    pub brand_class: BrandClass,
    pub category: String,
}

/// Mutable context shared by the generation and reflection steps of one round.
#[derive(Debug, Clone, Default)]
pub struct GenerationSession {
    pub store: InfoStore,
    pub base: GenerationContext,
    pub rejected: BTreeSet<KeywordId>,
    pub history: BTreeSet<KeywordId>,
    /// Low-volume keywords seen this round.
    pub low_volume: BTreeSet<KeywordId>,
    pub lexical: Vec<String>,
    pub rejected_categories: BTreeSet<String>,
    pub category_stats: BTreeMap<String, CategoryStats>,
    searched: bool,
    enough_at: Option<usize>,
}

impl GenerationSession {
    pub fn new(state: &CampaignState, per_key: usize) -> Self {
        let mut used: Vec<String> = state.history().iter().chain(&state.rejected).map(|k| k.to_string()).collect();
        used.sort();
        used.dedup();
        GenerationSession {
            store: InfoStore::with_manual(&state.product.description),
            base: GenerationContext {
                product_name: state.product.name.clone(),
                keywords_per_key: per_key,
                used_keywords: used,
                ..Default::default()
            },
            rejected: state.rejected.clone(),
            history: state.history(),
            category_stats: state.category_stats.clone(),
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOutcome {
    pub accepted: Vec<Candidate>,
    pub iterations: usize,
    pub shortfall: bool,
}

fn is_enough(session: &mut GenerationSession, gateway: &mut Gateway, log: &mut RoundLog) -> Result<Sufficiency, RoundError> {
    if session.enough_at == Some(session.store.len()) {
        log.push(LogEvent::IsEnough { enough: true, query: None, cached: true });
        return Ok(Sufficiency::Enough);
    }
    let info = if session.store.is_empty() { "(none)".to_string() } else { session.store.text() };
    let prompt = render(
        TemplateId::Sufficiency,
        &vars([("product_name", session.base.product_name.clone()), ("information", info)]),
    )
    .expect("sufficiency placeholders supplied");
    let answer = match gateway.ask(Slot::Generator, TemplateId::Sufficiency, "", &prompt.rendered_text, parse_sufficiency) {
        Ok(a) => a,
        Err(e) if e.is_parse() => {
            log::warn!("sufficiency reply unparseable, proceeding with current information: {e}");
            Sufficiency::Enough
        }
        Err(e) => return Err(e.into()),
    };
    let query = match &answer {
        Sufficiency::Enough => {
            session.enough_at = Some(session.store.len());
            session.store.sufficient = true;
            None
        }
        Sufficiency::Query(q) => Some(q.clone()),
    };
    log.push(LogEvent::IsEnough { enough: query.is_none(), query, cached: false });
    Ok(answer)
}

/// One Generate call followed by the per-keyword filter gauntlet.
#[allow(clippy::too_many_arguments)]
fn generate_and_filter(
    session: &mut GenerationSession,
    config: &RoundConfig,
    gateway: &mut Gateway,
    tools: Tools<'_>,
    log: &mut RoundLog,
    iteration: usize,
    replace: &[KeywordId],
    exclude: &BTreeSet<KeywordId>,
) -> Result<Vec<Candidate>, RoundError> {
    let mut ctx = session.base.clone();
    ctx.product_information = session.store.text();
    ctx.lexical_patterns = session.lexical.clone();
    ctx.rejected_categories = session.rejected_categories.iter().cloned().collect();
    ctx.replace = replace.iter().map(ToString::to_string).collect();
    if !exclude.is_empty() {
        let mut used: BTreeSet<String> = ctx.used_keywords.into_iter().collect();
        used.extend(exclude.iter().map(ToString::to_string));
        ctx.used_keywords = used.into_iter().collect();
    }
    let prompt = render_generation(&ctx);
    let per_key = config.keywords_per_key;
    let generated = match gateway.ask(Slot::Generator, TemplateId::Generate, "", &prompt.rendered_text, |r| {
        parse_generation(r, per_key)
    }) {
        Ok(set) => set,
        Err(e) if e.is_parse() => {
            log.push(LogEvent::Generate {
                iteration,
                prompt_sha256: prompt.sha256(),
                keywords: vec![],
                error: Some(e.to_string()),
            });
            return Ok(vec![]);
        }
        Err(e) => return Err(e.into()),
    };
    log.push(LogEvent::Generate {
        iteration,
        prompt_sha256: prompt.sha256(),
        keywords: generated.all().map(|k| k.text.clone()).collect(),
        error: None,
    });

    let mut accepted: Vec<Candidate> = Vec::new();
    let mut seen: BTreeSet<KeywordId> = BTreeSet::new();
    for g in generated.all() {
        let id = KeywordId::new(&g.text);
        let category = g.category.clone().unwrap_or_else(|| UNCATEGORIZED.to_string());
        session.category_stats.entry(category.clone()).or_default().generated += 1;
        if exclude.contains(&id) || !seen.insert(id.clone()) {
            let v = ToolVerdict::reject(REPEATED_FILTER, id.as_str(), "already generated in this round");
            log.push(LogEvent::Verdict { verdict: v });
            continue;
        }
        let v = reject_reflection(&id, &session.rejected, config.reject_match);
        let pass = v.is_accept();
        log.push(LogEvent::Verdict { verdict: v });
        if !pass {
            continue;
        }
        let v = repeated_filter(&id, &session.history);
        let pass = v.is_accept();
        log.push(LogEvent::Verdict { verdict: v });
        if !pass {
            continue;
        }
        let v = volume_check(&id, tools.volume, config.volume_threshold, config.volume_retries);
        let pass = volume_passes(&v, config.unknown_volume);
        let low = v.outcome == ToolOutcome::Reject;
        log.push(LogEvent::Verdict { verdict: v });
        if !pass {
            if low {
                session.low_volume.insert(id.clone());
                session.category_stats.entry(category).or_default().rejected += 1;
            }
            continue;
        }
        accepted.push(Candidate { id, text: g.text.clone(), brand_class: g.brand_class, category });
    }
    Ok(accepted)
}

/// Iterative generation with constraint feedback: gather information until
/// the generator deems it sufficient, generate, filter each keyword through the
/// rejected set, the deployed history and the volume threshold, and feed
/// lexical and category analyses back until the budget is met or the
/// iteration cap is reached.
pub fn generation_round(
    session: &mut GenerationSession,
    config: &RoundConfig,
    gateway: &mut Gateway,
    tools: Tools<'_>,
    log: &mut RoundLog,
) -> Result<GenerationOutcome, RoundError> {
    if !session.searched {
        let q0 = config.initial_query.clone().unwrap_or_else(|| session.base.product_name.clone());
        let verdict = search(&q0, tools.search, &mut session.store)?;
        log.push(LogEvent::Search { verdict });
        session.searched = true;
    }
    let mut kv = Vec::new();
    let mut iterations = 0;
    for t in 1..=config.max_alg_iter {
        iterations = t;
        match is_enough(session, gateway, log)? {
            Sufficiency::Enough => {
                kv = generate_and_filter(session, config, gateway, tools, log, t, &[], &BTreeSet::new())?;
                if kv.len() >= config.keyword_budget {
                    log.push(LogEvent::GenerationDone {
                        accepted: kv.iter().map(|c| c.id.clone()).collect(),
                        iterations,
                        shortfall: false,
                    });
                    return Ok(GenerationOutcome { accepted: kv, iterations, shortfall: false });
                }
                let report = lexical_analysis(&session.low_volume, config.lexical_min_count);
                log.push(LogEvent::LexicalAnalysis { report: report.clone() });
                session.lexical = report.lines();
                log.push(LogEvent::UpdateGenerator { patterns: session.lexical.clone() });
                let rejected = category_reject(&session.category_stats, config.category_threshold);
                log.push(LogEvent::CategoryReject { categories: rejected.iter().cloned().collect() });
                session.rejected_categories.extend(rejected);
                log.push(LogEvent::UpdateCategories { rejected: session.rejected_categories.iter().cloned().collect() });
            }
            Sufficiency::Query(q) => {
                let verdict = search(&q, tools.search, &mut session.store)?;
                log.push(LogEvent::Search { verdict });
            }
        }
    }
    let shortfall = kv.len() < config.keyword_budget;
    log.push(LogEvent::GenerationDone { accepted: kv.iter().map(|c| c.id.clone()).collect(), iterations, shortfall });
    Ok(GenerationOutcome { accepted: kv, iterations, shortfall })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReflectionOutcome {
    pub keywords: Vec<Candidate>,
    pub scores: BTreeMap<KeywordId, u8>,
    pub turns: usize,
    pub cap_hit: bool,
    pub parse_failed: bool,
    pub replaced: Vec<KeywordId>,
}

fn keyword_dict(keywords: &[Candidate]) -> String {
    let of = |class: BrandClass| -> Vec<&str> {
        keywords.iter().filter(|k| k.brand_class == class).map(|k| k.text.as_str()).collect()
    };
    json!({"Branded": of(BrandClass::Branded), "Non-Branded": of(BrandClass::NonBranded)}).to_string()
}

/// Multi-turn reflection: keywords the reflector suggests replacing are
/// removed and regenerated through the generation filters until every verdict
/// is keep or the turn cap is reached. Replaced keywords are never reintroduced.
pub fn reflect_refine(
    session: &mut GenerationSession,
    keywords: Vec<Candidate>,
    config: &RoundConfig,
    gateway: &mut Gateway,
    tools: Tools<'_>,
    log: &mut RoundLog,
) -> Result<ReflectionOutcome, RoundError> {
    let mut current = keywords;
    let mut history: Vec<ReflectionVerdict> = Vec::new();
    let mut scores: BTreeMap<KeywordId, u8> = BTreeMap::new();
    let mut replaced: BTreeSet<KeywordId> = BTreeSet::new();
    let mut replaced_order: Vec<KeywordId> = Vec::new();
    let (mut turns, mut cap_hit, mut parse_failed) = (0, false, false);
    let info = session.store.text();

    for turn in 1..=config.max_reflect_turns {
        let pending: Vec<KeywordId> = current.iter().map(|c| c.id.clone()).filter(|id| !scores.contains_key(id)).collect();
        if pending.is_empty() {
            break;
        }
        turns = turn;
        let prompt = render(
            TemplateId::Reflect,
            &vars([
                ("generated_keywords", keyword_dict(&current)),
                ("product_information", info.clone()),
                ("history_evaluation", serde_json::to_string(&history).expect("verdicts serialize")),
            ]),
        )
        .expect("reflect placeholders supplied");
        let wanted = pending.clone();
        let parsed = gateway.ask(Slot::Reflector, TemplateId::Reflect, "", &prompt.rendered_text, |reply| {
            let all = parse_reflection(reply)?;
            let mut out = Vec::new();
            for id in &wanted {
                match all.iter().find(|v| KeywordId::new(&v.keyword) == *id) {
                    Some(v) => out.push(v.clone()),
                    None => return Err(ParseError::new(format!("no verdict for {id:?}"), reply)),
                }
            }
            Ok(out)
        });
        let verdicts = match parsed {
            Ok(v) => v,
            Err(e) if e.is_parse() => {
                log::warn!("reflection unparseable, keeping current keywords: {e}");
                parse_failed = true;
                break;
            }
            Err(e) => return Err(e.into()),
        };
        log.push(LogEvent::Reflection { turn, verdicts: verdicts.clone() });
        let to_replace: Vec<KeywordId> = verdicts
            .iter()
            .filter(|v| v.suggestion == Suggestion::Replace)
            .map(|v| KeywordId::new(&v.keyword))
            .collect();
        for v in &verdicts {
            scores.insert(KeywordId::new(&v.keyword), v.score);
        }
        history.extend(verdicts);
        if to_replace.is_empty() {
            break;
        }
        current.retain(|c| !to_replace.contains(&c.id));
        for id in &to_replace {
            if replaced.insert(id.clone()) {
                replaced_order.push(id.clone());
            }
        }
        if turn == config.max_reflect_turns {
            cap_hit = true;
            break;
        }
        let exclude: BTreeSet<KeywordId> = replaced.iter().cloned().chain(current.iter().map(|c| c.id.clone())).collect();
        let fresh = generate_and_filter(session, config, gateway, tools, log, 0, &to_replace, &exclude)?;
        current.extend(fresh.into_iter().filter(|c| !exclude.contains(&c.id)).take(to_replace.len()));
    }
    scores.retain(|k, _| current.iter().any(|c| &c.id == k));
    log.push(LogEvent::ReflectionDone { turns, cap_hit, parse_failed, replaced: replaced_order.clone() });
    Ok(ReflectionOutcome { keywords: current, scores, turns, cap_hit, parse_failed, replaced: replaced_order })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DeploymentDiff {
    pub deploy: Vec<KeywordId>,
    pub retire: Vec<KeywordId>,
}

/// Fills free slots with candidates in order, then swaps remaining candidates
/// one for one with replaceable active keywords: those with zero impressions
/// last round or in the lowest quarter by score, lowest score first, ties by
/// text.
pub fn select_deployment(
    active: &[KeywordId],
    candidates: &[KeywordId],
    scores: &BTreeMap<KeywordId, f64>,
    zero_impressions: &BTreeSet<KeywordId>,
    cap: usize,
) -> DeploymentDiff {
    let active_set: BTreeSet<&KeywordId> = active.iter().collect();
    let mut seen = BTreeSet::new();
    let candidates: Vec<&KeywordId> =
        candidates.iter().filter(|c| !active_set.contains(c) && seen.insert((*c).clone())).collect();
    let free = cap.saturating_sub(active.len()).min(candidates.len());
    let mut deploy: Vec<KeywordId> = candidates[..free].iter().map(|c| (*c).clone()).collect();
    let remaining = &candidates[free..];

    let mut ranked: Vec<&KeywordId> = active.iter().collect();
    let score = |k: &KeywordId| scores.get(k).copied().unwrap_or(f64::NEG_INFINITY);
    ranked.sort_by(|a, b| score(a).total_cmp(&score(b)).then(a.cmp(b)));
    let quarter = active.len() / 4;
    let eligible: Vec<&KeywordId> = ranked
        .iter()
        .enumerate()
        .filter(|(i, k)| *i < quarter || zero_impressions.contains(**k))
        .map(|(_, k)| *k)
        .collect();
    let swaps = eligible.len().min(remaining.len());
    let retire = eligible[..swaps].iter().map(|k| (*k).clone()).collect();
    deploy.extend(remaining[..swaps].iter().map(|c| (*c).clone()));
    DeploymentDiff { deploy, retire }
}

/// Performance of the deployed keywords over the period since the last round.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    /// Metric values in schema order.
    pub records: Vec<(KeywordId, Vec<f64>)>,
    /// Minor currency units.
    pub spend: i64,
}

pub trait Platform {
    fn observe(
        &mut self,
        round: u32,
        deployed: &[KeywordId],
        budget_remaining: i64,
        schema: &crate::domain::MetricSchema,
    ) -> Result<Observation, String>;
}

/// Reports nothing; for generation without a live platform.
#[derive(Debug, Clone, Copy, Default)]
pub struct NullPlatform;

impl Platform for NullPlatform {
    fn observe(&mut self, _: u32, _: &[KeywordId], _: i64, _: &crate::domain::MetricSchema) -> Result<Observation, String> {
        Ok(Observation::default())
    }
}

/// Reads per-round performance exported from an ad platform as CSV
/// (`keyword` followed by the metric columns). A `Cost` column, if present,
/// is summed as spend.
#[derive(Debug, Clone)]
pub struct CsvPlatform {
    pub path: PathBuf,
}

impl Platform for CsvPlatform {
    fn observe(
        &mut self,
        round: u32,
        _: &[KeywordId],
        _: i64,
        schema: &crate::domain::MetricSchema,
    ) -> Result<Observation, String> {
        let f = std::fs::File::open(&self.path).map_err(|e| format!("{}: {e}", self.path.display()))?;
        let recs = crate::domain::import_performance_csv(f, schema, round).map_err(|e| e.to_string())?;
        let cost = schema.index_of("Cost");
        let spend = cost.map_or(0.0, |c| recs.iter().map(|r| r.values[c]).sum::<f64>()).round() as i64;
        Ok(Observation { records: recs.into_iter().map(|r| (r.keyword_id, r.values)).collect(), spend })
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return 0.5;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 { v[n / 2] } else { (v[n / 2 - 1] + v[n / 2]) / 2.0 }
}

/// Everything the round passes from ranking to later stages.
struct Ranking {
    scores: BTreeMap<KeywordId, f64>,
    prompt: Option<String>,
}

fn rank_stage(st: &mut CampaignState, config: &RoundConfig, gateway: &mut Gateway, log: &mut RoundLog) -> Result<Ranking, RoundError> {
    let ids: Vec<KeywordId> = st.clusters.iter().flat_map(|c| c.keyword_ids.iter().cloned()).collect();
    if ids.is_empty() {
        return Ok(Ranking { scores: BTreeMap::new(), prompt: None });
    }
    let raw = st.mean_performance(&ids);
    let nm = normalize(&ids, &raw, &st.schema)?;
    let w = weights_for(&st.schema, &nm)?;
    let scores = topsis_scores(&nm, &w)?;
    let inter = rank_inter(&st.clusters, &scores)?;
    let lambda = match config.lambda {
        Lambda::Median => median(inter.0.iter().map(|c| c.1).collect()),
        Lambda::Fixed(l) => l,
    };
    for c in st.clusters.iter_mut() {
        c.score = inter.0.iter().find(|(id, _)| *id == c.id).map(|x| x.1);
    }
    let mut ranked_kw: Vec<(KeywordId, f64)> = scores.scores.iter().map(|(k, s)| (k.clone(), *s)).collect();
    ranked_kw.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    log.push(LogEvent::Ranked {
        weights: w.w.clone(),
        weight_source: w.source,
        keywords: ranked_kw,
        clusters: inter.0.clone(),
        lambda,
    });

    let metric_names: Vec<String> = st.schema.names().iter().map(|s| s.to_string()).collect();
    let row_of: BTreeMap<&KeywordId, &Vec<f64>> = ids.iter().zip(&raw).collect();
    let inputs: Vec<IntentInput> = st
        .clusters
        .iter()
        .map(|c| IntentInput {
            cluster: c.id,
            rows: c
                .keyword_ids
                .iter()
                .map(|k| (k.to_string(), metric_names.iter().cloned().zip(row_of[k].iter().copied()).collect()))
                .collect(),
        })
        .collect();
    let summaries = intent_summaries(&inputs, &st.product.name, &st.product.description, gateway)?;
    for c in st.clusters.iter_mut() {
        if let Some(s) = summaries.get(&c.id) {
            c.intent_summary = Some(s.clone());
            log.push(LogEvent::Intent { cluster: c.id, summary: s.clone() });
        }
    }

    let mut sections = Vec::new();
    for (cid, avg) in &inter.0 {
        let c = st.clusters.iter().find(|c| c.id == *cid).expect("ranked cluster exists");
        let ranked = rank_intra(c, &scores)?;
        sections.push(RankSection {
            name: cid.to_string(),
            avg_score: *avg,
            intent: c.intent_summary.clone(),
            ranked: ranked.0.iter().map(|(k, s)| (k.to_string(), *s)).collect(),
        });
    }
    let prompt = render_rank(&sections, lambda);
    log.push(LogEvent::RankPrompt { sha256: prompt.sha256() });
    Ok(Ranking { scores: scores.scores, prompt: Some(prompt.rendered_text) })
}

/// Executes round `state.round` on a copy of `state`. On error the input state
/// is untouched; the partial log is returned alongside the error.
pub fn run_round(
    state: &CampaignState,
    config: &RoundConfig,
    gateway: &mut Gateway,
    tools: Tools<'_>,
    platform: &mut dyn Platform,
) -> Result<(CampaignState, RoundLog), (RoundError, RoundLog)> {
    let mut log = RoundLog::new(state.round);
    let result = round_inner(state, config, gateway, tools, platform, &mut log);
    log.transcript = gateway.take_transcript();
    match result {
        Ok(st) => Ok((st, log)),
        Err(e) => {
            log.aborted = Some(e.to_string());
            Err((e, log))
        }
    }
}

fn round_inner(
    state: &CampaignState,
    config: &RoundConfig,
    gateway: &mut Gateway,
    tools: Tools<'_>,
    platform: &mut dyn Platform,
    log: &mut RoundLog,
) -> Result<CampaignState, RoundError> {
    let mut st = state.clone();
    let t = st.round;

    let deployed = st.deployed_ids();
    if !deployed.is_empty() {
        match platform.observe(t, &deployed, st.budget_cap - st.budget_spent, &st.schema) {
            Ok(obs) => {
                for (id, values) in &obs.records {
                    if values.len() != st.schema.len() {
                        return Err(RoundError::Platform(format!("{} values for {id:?}", values.len())));
                    }
                    st.performance.push(PerformanceRecord { keyword_id: id.clone(), values: values.clone(), as_of_round: t });
                }
                st.budget_spent += obs.spend;
                log.push(LogEvent::Performance { keywords: obs.records.len(), spend: obs.spend });
            }
            Err(reason) => {
                log::warn!("round {t} skipped: platform unavailable: {reason}");
                log.push(LogEvent::PlatformSkipped { reason });
                st.round += 1;
                return Ok(st);
            }
        }
    }

    let ranking = rank_stage(&mut st, config, gateway, log)?;

    let mut session = GenerationSession::new(&st, config.keywords_per_key);
    session.base.ranking = ranking.prompt.clone();
    session.base.categories = st
        .clusters
        .iter()
        .map(|c| match &c.intent_summary {
            Some(s) => format!("{}: {}", c.id, s.replace('\n', " ")),
            None => c.id.to_string(),
        })
        .collect();
    if !st.rejected.is_empty() {
        let rejected: Vec<KeywordId> = st.rejected.iter().cloned().collect();
        let verdict = reject_analysis(&rejected, &st.product.name, gateway)?;
        session.base.reject_analysis = Some(verdict.reason.clone());
        log.push(LogEvent::RejectAnalysis { verdict });
    }

    let generated = generation_round(&mut session, config, gateway, tools, log)?;
    let refined = if generated.accepted.is_empty() {
        ReflectionOutcome { keywords: vec![], scores: BTreeMap::new(), turns: 0, cap_hit: false, parse_failed: false, replaced: vec![] }
    } else {
        reflect_refine(&mut session, generated.accepted, config, gateway, tools, log)?
    };

    let old: Vec<KeywordId> = st.clusters.iter().flat_map(|c| c.keyword_ids.iter().cloned()).collect();
    let new: Vec<KeywordId> = refined.keywords.iter().map(|c| c.id.clone()).collect();
    let all: Vec<KeywordId> = old.iter().chain(&new).cloned().collect();
    let embeddings = embed_keywords(tools.embedding, &all)?;
    let full = t % config.recluster_every == 0;
    let previous = st.clusters.clone();
    let mut next = st.next_cluster_id.max(previous.iter().map(|c| c.id.0).max().unwrap_or(0) + 1).max(1);
    let mut fresh = || {
        let id = ClusterId(next);
        next += 1;
        id
    };
    let outcome = recluster(
        &previous,
        &old,
        &new,
        &embeddings,
        full,
        &config.recluster,
        &st.product.description,
        gateway,
        &mut fresh,
    )?;
    st.next_cluster_id = next;
    log.push(LogEvent::Recluster {
        full: outcome.ap_ran,
        converged: outcome.ap_converged,
        clusters: outcome.clusters.len(),
        assignments: outcome.assignments.clone(),
    });
    st.clusters = outcome.clusters;

    let impression = st.schema.index_of("Impression");
    let last: BTreeMap<KeywordId, &PerformanceRecord> =
        st.performance.iter().filter(|r| r.as_of_round == t).map(|r| (r.keyword_id.clone(), r)).collect();
    let zero: BTreeSet<KeywordId> = deployed
        .iter()
        .filter(|k| match last.get(*k) {
            None => true,
            Some(r) => match impression {
                Some(i) => r.values[i] == 0.0,
                None => r.values.iter().all(|v| *v == 0.0),
            },
        })
        .cloned()
        .collect();
    let diff = select_deployment(&deployed, &new, &ranking.scores, &zero, st.per_round_cap);

    for c in &refined.keywords {
        let mut k = Keyword::candidate(&c.text, c.brand_class, t);
        k.category = Some(c.category.clone());
        st.keywords.push(k);
    }
    let deploy_set: BTreeSet<&KeywordId> = diff.deploy.iter().collect();
    let conversions = st.schema.index_of("Conversion");
    let totals = |id: &KeywordId, st: &CampaignState| -> f64 {
        conversions.map_or(1.0, |c| st.performance.iter().filter(|r| &r.keyword_id == id).map(|r| r.values[c]).sum())
    };
    for id in &diff.retire {
        let dead = totals(id, &st) == 0.0;
        st.keyword_mut(id).expect("retired keyword exists").transition(KeywordStatus::Retired)?;
        if dead {
            st.rejected.insert(id.clone());
        }
    }
    for id in &diff.deploy {
        st.keyword_mut(id).expect("deployed keyword exists").transition(KeywordStatus::Deployed)?;
    }
    let dropped: BTreeSet<KeywordId> = new.iter().filter(|k| !deploy_set.contains(k)).cloned().collect();
    st.keywords.retain(|k| !(k.status == KeywordStatus::Candidate && dropped.contains(&k.id())));
    for c in st.clusters.iter_mut() {
        c.keyword_ids.retain(|k| !dropped.contains(k));
    }
    st.clusters.retain(|c| !c.keyword_ids.is_empty());

    let mut newly_rejected = Vec::new();
    for id in &session.low_volume {
        if st.keyword(id).is_none() {
            let mut k = Keyword::candidate(id.as_str(), BrandClass::NonBranded, t);
            k.transition(KeywordStatus::Rejected)?;
            st.keywords.push(k);
        }
        if st.rejected.insert(id.clone()) {
            newly_rejected.push(id.clone());
        }
    }
    let cluster_of: BTreeMap<KeywordId, ClusterId> =
        st.clusters.iter().flat_map(|c| c.keyword_ids.iter().map(move |k| (k.clone(), c.id))).collect();
    for k in st.keywords.iter_mut() {
        k.cluster_id = cluster_of.get(&k.id()).copied();
    }
    st.category_stats = session.category_stats;
    log.push(LogEvent::Deployment { deployed: diff.deploy.clone(), retired: diff.retire.clone(), rejected: newly_rejected });

    st.round += 1;
    let violations = validate_state(&st);
    if !violations.is_empty() {
        let msg = violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; ");
        return Err(RoundError::Invalid(msg));
    }
    Ok(st)
}

#[derive(Debug, Clone, Default)]
pub struct CampaignOptions {
    pub state_path: Option<PathBuf>,
    pub log_path: Option<PathBuf>,
    /// Stop after this many rounds even if the horizon is further away.
    pub rounds: Option<u32>,
    /// Record wall-clock duration per round; makes logs non-reproducible.
    pub record_timing: bool,
}

#[derive(Debug)]
pub struct CampaignRun {
    pub state: CampaignState,
    pub logs: Vec<RoundLog>,
}

#[derive(Debug, Error)]
#[error("round {round} aborted: {error}")]
pub struct CampaignAbort {
    pub round: u32,
    pub error: RoundError,
    /// Last successfully persisted state.
    pub state: CampaignState,
    pub logs: Vec<RoundLog>,
}

/// Runs rounds until the horizon (or the round limit), persisting state
/// atomically and appending one log line after every round.
pub fn run_campaign(
    state: CampaignState,
    config: &RoundConfig,
    gateway: &mut Gateway,
    tools: Tools<'_>,
    platform: &mut dyn Platform,
    options: &CampaignOptions,
) -> Result<CampaignRun, Box<CampaignAbort>> {
    let mut st = state;
    let mut logs = Vec::new();
    let mut done = 0;
    let io_abort = |st: &CampaignState, logs: &Vec<RoundLog>, e: DomainError| {
        Box::new(CampaignAbort { round: st.round, error: RoundError::Domain(e), state: st.clone(), logs: logs.clone() })
    };
    while st.round <= st.horizon && options.rounds.is_none_or(|r| done < r) {
        let started = Instant::now();
        match run_round(&st, config, gateway, tools, platform) {
            Ok((next, mut log)) => {
                if options.record_timing {
                    log.elapsed_ms = Some(started.elapsed().as_millis() as u64);
                }
                if let Some(p) = &options.state_path {
                    next.save_atomic(p).map_err(|e| io_abort(&st, &logs, e))?;
                }
                if let Some(p) = &options.log_path {
                    log.append_to(p).map_err(|e| io_abort(&st, &logs, e.into()))?;
                }
                st = next;
                logs.push(log);
                done += 1;
            }
            Err((error, log)) => {
                if let Some(p) = &options.log_path {
                    if let Err(e) = log.append_to(p) {
                        log::error!("could not write round log: {e}");
                    }
                }
                let round = st.round;
                logs.push(log);
                return Err(Box::new(CampaignAbort { round, error, state: st, logs }));
            }
        }
    }
    Ok(CampaignRun { state: st, logs })
}
