//! Seeded sponsored-search market, baseline policies and an A/B harness.
//!
//! Every keyword has a hidden relevance ρ ∈ [0, 1] (cosine similarity of its
//! embedding to the product's topic tokens, clamped), a log-normal monthly
//! search volume and a competition factor, all derived by hashing the keyword
//! with the market seed. Daily draws are seeded per (seed, day, keyword), so
//! a keyword's outcome on a given day does not depend on what else is
//! deployed beyond budget exhaustion.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, LogNormal, Poisson};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::HashEmbedding;
use crate::domain::{CampaignState, KeywordId, MetricSchema, ProductInfo};
use crate::llm::templates::{fmt_num, render_generation, vars, GenerationContext};
use crate::llm::{parse_generation, render, Gateway, SyntheticBackend, TemplateId};
use crate::orchestrator::{run_round, select_deployment, Observation, Platform, RoundConfig, RoundLog, Tools};
use crate::text::{hash64, tokens};
use crate::tools::{SearchSource, ToolError, VolumeProvider};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MarketConfig {
    pub seed: u64,
    pub dimension: usize,
    pub topics: usize,
    pub distractors: usize,
    pub fillers: usize,
    pub pool_size: usize,
    pub branded_share: f64,
    pub volume_median: f64,
    pub volume_sigma: f64,
    /// Fraction of daily searches shown the ad at zero competition.
    pub impression_share: f64,
    pub ctr_max: f64,
    pub cvr_max: f64,
    pub ctr_gamma: f64,
    pub cvr_delta: f64,
    pub price_min: i64,
    pub price_max: i64,
    pub days_per_round: u32,
    pub daily_budget: i64,
}

impl Default for MarketConfig {
    fn default() -> Self {
        MarketConfig {
            seed: 42,
            dimension: 32,
            topics: 4,
            distractors: 4,
            fillers: 40,
            pool_size: 240,
            branded_share: 0.15,
            volume_median: 600.0,
            volume_sigma: 1.0,
            impression_share: 0.6,
            ctr_max: 0.08,
            cvr_max: 0.06,
            ctr_gamma: 2.0,
            cvr_delta: 2.0,
            price_min: 40,
            price_max: 200,
            days_per_round: 3,
            daily_budget: 4000,
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<(), String> {
        let unit = |name: &str, v: f64| {
            if (0.0..=1.0).contains(&v) { Ok(()) } else { Err(format!("{name} {v} outside [0, 1]")) }
        };
        unit("branded_share", self.branded_share)?;
        unit("impression_share", self.impression_share)?;
        unit("ctr_max", self.ctr_max)?;
        unit("cvr_max", self.cvr_max)?;
        if self.dimension == 0 || self.topics == 0 || self.fillers == 0 || self.pool_size == 0 {
            return Err("dimension, topics, fillers and pool_size must be positive".into());
        }
        if !(self.volume_median > 0.0 && self.volume_sigma >= 0.0) {
            return Err("volume_median must be positive and volume_sigma non-negative".into());
        }
        if self.ctr_gamma <= 0.0 || self.cvr_delta <= 0.0 {
            return Err("ctr_gamma and cvr_delta must be positive".into());
        }
        if self.price_min <= 0 || self.price_max < self.price_min {
            return Err("need 0 < price_min <= price_max".into());
        }
        if self.days_per_round == 0 {
            return Err("days_per_round must be at least 1".into());
        }
        if self.daily_budget < 0 {
            return Err("daily_budget must be non-negative".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeywordStats {
    pub keyword: KeywordId,
    pub impressions: u64,
    pub clicks: u64,
    /// Yen.
    pub cost: i64,
    pub conversions: u64,
    pub search_volume: u64,
    pub competitor_score: u64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub impressions: u64,
    pub clicks: u64,
    pub cost: i64,
    pub conversions: u64,
}

fn ratio(a: f64, b: f64) -> f64 {
    if b == 0.0 { 0.0 } else { a / b }
}

impl Totals {
    pub fn ctr(&self) -> f64 {
        ratio(self.clicks as f64, self.impressions as f64)
    }

    pub fn cpc(&self) -> f64 {
        ratio(self.cost as f64, self.clicks as f64)
    }

    pub fn cpa(&self) -> f64 {
        ratio(self.cost as f64, self.conversions as f64)
    }

    pub fn conversion_rate(&self) -> f64 {
        ratio(self.conversions as f64, self.clicks as f64)
    }

    fn add(&mut self, o: &Totals) {
        self.impressions += o.impressions;
        self.clicks += o.clicks;
        self.cost += o.cost;
        self.conversions += o.conversions;
    }

    /// Conversion, Clicks, Impression, CTR, C.V Rate, CPA, CPC, Cost.
    pub fn table6(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("Conversion", self.conversions as f64),
            ("Clicks", self.clicks as f64),
            ("Impression", self.impressions as f64),
            ("CTR", self.ctr()),
            ("C.V Rate", self.conversion_rate()),
            ("CPA", self.cpa()),
            ("CPC", self.cpc()),
            ("Cost", self.cost as f64),
        ]
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub first_day: u64,
    pub days: u32,
    /// One row per deployed keyword, sorted by keyword.
    pub rows: Vec<KeywordStats>,
    pub totals: Totals,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("metric {0:?} has no simulator counterpart")]
    UnknownMetric(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}

impl StepReport {
    fn merge(&mut self, day: StepReport) {
        if self.days == 0 {
            self.first_day = day.first_day;
        }
        self.days += day.days;
        self.totals.add(&day.totals);
        for r in day.rows {
            match self.rows.binary_search_by(|x| x.keyword.cmp(&r.keyword)) {
                Ok(i) => {
                    let x = &mut self.rows[i];
                    x.impressions += r.impressions;
                    x.clicks += r.clicks;
                    x.cost += r.cost;
                    x.conversions += r.conversions;
                }
                Err(i) => self.rows.insert(i, r),
            }
        }
    }

    /// The value of `metric` for one row, by metric name.
    pub fn metric(row: &KeywordStats, metric: &str) -> Result<f64, SimError> {
        Ok(match metric.to_ascii_lowercase().replace([' ', '_'], "").as_str() {
            "click" | "clicks" => row.clicks as f64,
            "cost" => row.cost as f64,
            "conversion" | "conversions" => row.conversions as f64,
            "impression" | "impressions" => row.impressions as f64,
            "searchvolume" => row.search_volume as f64,
            "competitorscore" => row.competitor_score as f64,
            _ => return Err(SimError::UnknownMetric(metric.to_string())),
        })
    }

    /// Rows as metric vectors in schema order.
    pub fn records(&self, schema: &MetricSchema) -> Result<Vec<(KeywordId, Vec<f64>)>, SimError> {
        self.rows
            .iter()
            .map(|r| {
                let v = schema.metrics.iter().map(|m| Self::metric(r, &m.name)).collect::<Result<_, _>>()?;
                Ok((r.keyword.clone(), v))
            })
            .collect()
    }

    /// CSV readable by [`crate::domain::import_performance_csv`].
    pub fn to_csv(&self, schema: &MetricSchema) -> Result<String, SimError> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(std::iter::once("keyword").chain(schema.names()))?;
        for (k, values) in self.records(schema)? {
            w.write_record(std::iter::once(k.to_string()).chain(values.iter().map(|v| v.to_string())))?;
        }
        let bytes = w.into_inner().map_err(|e| SimError::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

#[derive(Debug, Clone)]
pub struct Market {
    pub config: MarketConfig,
    embedding: HashEmbedding,
    pub brand: String,
    pub topics: Vec<String>,
    pub distractors: Vec<String>,
    pub fillers: Vec<String>,
    product: ProductInfo,
    snippets: Vec<String>,
    pool: Vec<String>,
    competition_sorted: Vec<f64>,
    topic_vectors: Vec<Vec<f64>>,
    day: u64,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 { 0.0 } else { dot / (na * nb) }
}

fn pseudo_words(rng: &mut ChaCha8Rng, n: usize, taken: &mut BTreeSet<String>) -> Vec<String> {
    const CONS: &[u8] = b"bdfgklmnprstvz";
    const VOWELS: &[u8] = b"aeiou";
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let syllables = rng.random_range(2..=3);
        let mut w = String::new();
        for _ in 0..syllables {
            w.push(*CONS.choose(rng).expect("non-empty") as char);
            w.push(*VOWELS.choose(rng).expect("non-empty") as char);
        }
        if taken.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

impl Market {
    pub fn new(config: MarketConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(hash64(&[&config.seed.to_le_bytes(), b"market"]));
        let mut taken = BTreeSet::new();
        let brand = pseudo_words(&mut rng, 1, &mut taken).remove(0);
        let topics = pseudo_words(&mut rng, config.topics, &mut taken);
        let distractors = pseudo_words(&mut rng, config.distractors, &mut taken);
        let fillers = pseudo_words(&mut rng, config.fillers, &mut taken);

        let mut description = format!("The {brand} {} is a {} for everyday use.", topics[0], topics.join(" "));
        if !distractors.is_empty() {
            description.push_str(&format!(" It ships with {} accessories.", distractors.join(" ")));
        }
        let product = ProductInfo { name: format!("{brand} {}", topics[0]), description };
        let mut snippets = vec![format!("Buyers of the {brand} {} often compare {}.", topics[0], topics.join(" and "))];
        if let Some(d) = distractors.first() {
            snippets.push(format!("Some retailers bundle a {d} with it."));
        }

        let embedding = HashEmbedding::new(config.seed, config.dimension);
        let mut pool = BTreeSet::new();
        let mut attempts = 0;
        while pool.len() < config.pool_size && attempts < config.pool_size * 50 {
            attempts += 1;
            let first = match rng.random_range(0.0..1.0) {
                x if x < 0.3 => topics.choose(&mut rng),
                x if x < 0.55 && !distractors.is_empty() => distractors.choose(&mut rng),
                _ => fillers.choose(&mut rng),
            }
            .expect("non-empty")
            .clone();
            let mut words = vec![first];
            for _ in 0..rng.random_range(0..=2) {
                let w = match rng.random_range(0.0..1.0) {
                    x if x < 0.2 => topics.choose(&mut rng),
                    _ => fillers.choose(&mut rng),
                }
                .expect("non-empty");
                if !words.contains(w) {
                    words.push(w.clone());
                }
            }
            if rng.random_bool(config.branded_share) {
                words.insert(0, brand.clone());
            }
            pool.insert(words.join(" "));
        }
        let pool: Vec<String> = pool.into_iter().collect();
        let topic_vectors =
            topics.iter().chain(std::iter::once(&brand)).map(|t| embedding.token_vector(t)).collect();
        let mut market = Market {
            config,
            embedding,
            brand,
            topics,
            distractors,
            fillers,
            product,
            snippets,
            pool,
            competition_sorted: vec![],
            topic_vectors,
            day: 0,
        };
        let mut c: Vec<f64> = market.pool.iter().map(|k| market.competition(k)).collect();
        c.sort_by(f64::total_cmp);
        market.competition_sorted = c;
        market
    }

    pub fn product(&self) -> &ProductInfo {
        &self.product
    }

    pub fn pool(&self) -> &[String] {
        &self.pool
    }

    pub fn embedding(&self) -> HashEmbedding {
        self.embedding
    }

    pub fn day(&self) -> u64 {
        self.day
    }

    /// Moves the serving clock; the same day and deployment always serve alike.
    pub fn set_day(&mut self, day: u64) {
        self.day = day;
    }

    fn keyed_rng(&self, tag: &[u8], keyword: &str) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(hash64(&[&self.config.seed.to_le_bytes(), tag, keyword.as_bytes()]))
    }

    pub fn relevance(&self, keyword: &str) -> f64 {
        let v = self.embedding.embed_one(keyword);
        self.topic_vectors.iter().map(|t| cosine(&v, t)).fold(0.0, f64::max).clamp(0.0, 1.0)
    }

    pub fn monthly_volume(&self, keyword: &str) -> u64 {
        let k = KeywordId::new(keyword);
        let mut rng = self.keyed_rng(b"volume", k.as_str());
        let d = LogNormal::new(self.config.volume_median.ln(), self.config.volume_sigma).expect("validated parameters");
        d.sample(&mut rng).round() as u64
    }

    pub fn competition(&self, keyword: &str) -> f64 {
        let k = KeywordId::new(keyword);
        self.keyed_rng(b"competition", k.as_str()).random_range(0.0..1.0)
    }

    /// Percentile of the keyword's competition factor among the pool.
    pub fn competitor_score(&self, keyword: &str) -> u64 {
        let c = self.competition(keyword);
        let below = self.competition_sorted.partition_point(|x| *x <= c);
        (100.0 * below as f64 / self.competition_sorted.len().max(1) as f64).round() as u64
    }

    pub fn price(&self, keyword: &str) -> i64 {
        let span = (self.config.price_max - self.config.price_min) as f64;
        self.config.price_min + (span * self.competition(keyword)).round() as i64
    }

    pub fn ctr(&self, rho: f64) -> f64 {
        self.config.ctr_max * rho.powf(self.config.ctr_gamma)
    }

    pub fn cvr(&self, rho: f64) -> f64 {
        self.config.cvr_max * rho.powf(self.config.cvr_delta)
    }

    /// One day of serving. Keywords are served in a seeded random order and
    /// serving stops once the budget is spent.
    pub fn simulate_step(&mut self, deployed: &[KeywordId], daily_budget: i64) -> StepReport {
        let day = self.day;
        self.day += 1;
        let mut order: Vec<KeywordId> = deployed.to_vec();
        order.sort();
        order.dedup();
        let mut rng = ChaCha8Rng::seed_from_u64(hash64(&[&self.config.seed.to_le_bytes(), b"order", &day.to_le_bytes()]));
        order.shuffle(&mut rng);

        let mut remaining = daily_budget.max(0);
        let mut rows = Vec::with_capacity(order.len());
        for k in &order {
            let text = k.as_str();
            let mut row = KeywordStats {
                keyword: k.clone(),
                search_volume: self.monthly_volume(text),
                competitor_score: self.competitor_score(text),
                impressions: 0,
                clicks: 0,
                cost: 0,
                conversions: 0,
            };
            if remaining > 0 {
                let mut rng = ChaCha8Rng::seed_from_u64(hash64(&[
                    &self.config.seed.to_le_bytes(),
                    b"serve",
                    &day.to_le_bytes(),
                    text.as_bytes(),
                ]));
                let rho = self.relevance(text);
                let c = self.competition(text);
                let lambda = row.search_volume as f64 / 30.0 * self.config.impression_share * (1.0 - 0.5 * c);
                row.impressions = if lambda > 0.0 { Poisson::new(lambda).expect("positive rate").sample(&mut rng) as u64 } else { 0 };
                row.clicks = Binomial::new(row.impressions, self.ctr(rho)).expect("p in [0, 1]").sample(&mut rng);
                let price = self.price(text);
                if row.clicks as i64 * price > remaining {
                    row.clicks = (remaining / price) as u64;
                    remaining = 0;
                }
                row.cost = row.clicks as i64 * price;
                remaining = (remaining - row.cost).max(0);
                row.conversions = Binomial::new(row.clicks, self.cvr(rho)).expect("p in [0, 1]").sample(&mut rng);
            }
            rows.push(row);
        }
        rows.sort_by(|a, b| a.keyword.cmp(&b.keyword));
        let mut totals = Totals::default();
        for r in &rows {
            totals.add(&Totals { impressions: r.impressions, clicks: r.clicks, cost: r.cost, conversions: r.conversions });
        }
        StepReport { first_day: day, days: 1, rows, totals }
    }

    /// `days` consecutive steps with the same deployment, aggregated.
    pub fn simulate_period(&mut self, deployed: &[KeywordId], days: u32, daily_budget: i64) -> StepReport {
        let mut out = StepReport { first_day: self.day, ..Default::default() };
        for _ in 0..days {
            out.merge(self.simulate_step(deployed, daily_budget));
        }
        out
    }
}

impl VolumeProvider for Market {
    fn volume(&self, keyword: &str) -> Result<u64, ToolError> {
        Ok(self.monthly_volume(keyword))
    }
}

impl SearchSource for Market {
    fn id(&self) -> String {
        format!("market-{}", self.config.seed)
    }

    /// Snippets sharing a token with the query.
    fn search(&self, query: &str) -> Result<Vec<String>, ToolError> {
        let q: BTreeSet<String> = tokens(query).into_iter().collect();
        Ok(self.snippets.iter().filter(|s| tokens(s).iter().any(|t| q.contains(t))).cloned().collect())
    }
}

/// Something that chooses the deployed keyword set each period.
pub trait Policy {
    fn name(&self) -> String;
    /// The keywords to deploy for `round`, given the previous period's report.
    fn decide(&mut self, round: u32, last: Option<&StepReport>) -> Result<Vec<KeywordId>, String>;
}

/// Active keyword set managed with the orchestrator's replacement rule,
/// scored by clicks.
#[derive(Debug, Clone)]
struct Slate {
    active: Vec<KeywordId>,
    cap: usize,
}

impl Slate {
    fn apply(&mut self, candidates: &[KeywordId], last: Option<&StepReport>) {
        let mut scores = BTreeMap::new();
        let mut zero = BTreeSet::new();
        if let Some(r) = last {
            for row in &r.rows {
                scores.insert(row.keyword.clone(), row.clicks as f64);
                if row.impressions == 0 {
                    zero.insert(row.keyword.clone());
                }
            }
        }
        let diff = select_deployment(&self.active, candidates, &scores, &zero, self.cap);
        self.active.retain(|k| !diff.retire.contains(k));
        self.active.extend(diff.deploy);
    }
}

/// Deploys the `cap` most relevant pool keywords (reads hidden relevance).
pub struct OraclePolicy {
    set: Vec<KeywordId>,
}

impl OraclePolicy {
    pub fn new(market: &Market, cap: usize) -> Self {
        let mut scored: Vec<(f64, &String)> = market.pool().iter().map(|k| (market.relevance(k), k)).collect();
        scored.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(b.1)));
        OraclePolicy { set: scored.into_iter().take(cap).map(|(_, k)| KeywordId::new(k)).collect() }
    }
}

impl Policy for OraclePolicy {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn decide(&mut self, _: u32, _: Option<&StepReport>) -> Result<Vec<KeywordId>, String> {
        Ok(self.set.clone())
    }
}

/// Samples `per_round` unused pool keywords each round.
pub struct RandomPolicy {
    pool: Vec<KeywordId>,
    used: BTreeSet<KeywordId>,
    rng: ChaCha8Rng,
    per_round: usize,
    slate: Slate,
}

impl RandomPolicy {
    pub fn new(pool: &[String], per_round: usize, cap: usize, seed: u64) -> Self {
        RandomPolicy {
            pool: pool.iter().map(|k| KeywordId::new(k)).collect(),
            used: BTreeSet::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
            per_round,
            slate: Slate { active: vec![], cap },
        }
    }
}

impl Policy for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn decide(&mut self, _: u32, last: Option<&StepReport>) -> Result<Vec<KeywordId>, String> {
        let fresh: Vec<&KeywordId> = self.pool.iter().filter(|k| !self.used.contains(*k)).collect();
        let picked: Vec<KeywordId> =
            fresh.choose_multiple(&mut self.rng, self.per_round).map(|k| (*k).clone()).collect();
        self.used.extend(picked.iter().cloned());
        self.slate.apply(&picked, last);
        Ok(self.slate.active.clone())
    }
}

/// Generation prompted with every deployed keyword and its raw metrics,
/// without ranking, tools or reflection.
pub struct ManyShotPolicy {
    gateway: Gateway,
    product: ProductInfo,
    schema: MetricSchema,
    per_key: usize,
    used: BTreeSet<String>,
    slate: Slate,
}

impl ManyShotPolicy {
    pub fn new(gateway: Gateway, product: ProductInfo, per_key: usize, cap: usize) -> Self {
        ManyShotPolicy {
            gateway,
            product,
            schema: MetricSchema::standard(),
            per_key,
            used: BTreeSet::new(),
            slate: Slate { active: vec![], cap },
        }
    }

    /// The many-shot prompt for a report.
    pub fn prompt(&self, last: Option<&StepReport>) -> String {
        let examples = match last {
            Some(r) if !r.rows.is_empty() => r
                .rows
                .iter()
                .map(|row| {
                    let metrics: Vec<String> = self
                        .schema
                        .names()
                        .iter()
                        .map(|m| format!("{m} {}", fmt_num(StepReport::metric(row, m).unwrap_or(0.0))))
                        .collect();
                    format!("- {}: {}.", row.keyword, metrics.join(", "))
                })
                .collect::<Vec<_>>()
                .join("\n"),
            _ => "(none yet)".to_string(),
        };
        let shots = render(
            TemplateId::ManyShot,
            &vars([("product_name", self.product.name.clone()), ("examples", examples)]),
        )
        .expect("many-shot placeholders supplied");
        let ctx = GenerationContext {
            product_name: self.product.name.clone(),
            keywords_per_key: self.per_key,
            product_information: self.product.description.clone(),
            used_keywords: self.used.iter().cloned().collect(),
            ..Default::default()
        };
        format!("{}\n\n{}", shots.rendered_text, render_generation(&ctx).rendered_text)
    }
}

impl Policy for ManyShotPolicy {
    fn name(&self) -> String {
        "many-shot".into()
    }

    fn decide(&mut self, _: u32, last: Option<&StepReport>) -> Result<Vec<KeywordId>, String> {
        let prompt = self.prompt(last);
        let per_key = self.per_key;
        let set = self
            .gateway
            .ask(crate::llm::Slot::Generator, TemplateId::ManyShot, "", &prompt, |r| parse_generation(r, per_key))
            .map_err(|e| e.to_string())?;
        let candidates: Vec<KeywordId> =
            set.all().map(|k| KeywordId::new(&k.text)).filter(|k| !self.used.contains(k.as_str())).collect();
        self.used.extend(candidates.iter().map(ToString::to_string));
        self.slate.apply(&candidates, last);
        self.gateway.take_transcript();
        Ok(self.slate.active.clone())
    }
}

/// Replays a step report to the orchestrator as platform performance.
#[derive(Debug, Default)]
struct ReportPlatform {
    report: Option<StepReport>,
}

impl Platform for ReportPlatform {
    fn observe(&mut self, _: u32, _: &[KeywordId], _: i64, schema: &MetricSchema) -> Result<Observation, String> {
        match &self.report {
            Some(r) => Ok(Observation {
                records: r.records(schema).map_err(|e| e.to_string())?,
                spend: r.totals.cost,
            }),
            None => Err("no report for the previous period".into()),
        }
    }
}

/// A market acting as the ad platform of a stored campaign. The deployment
/// chosen in round t is served for the period observed at round t + 1, so a
/// campaign resumed in a new process sees the same traffic.
#[derive(Debug, Clone)]
pub struct MarketPlatform {
    pub market: Market,
}

impl MarketPlatform {
    pub fn new(market: Market) -> Self {
        MarketPlatform { market }
    }

    /// The period following round `round`, capped by the remaining budget.
    pub fn serve(&mut self, round: u32, deployed: &[KeywordId], budget_remaining: i64) -> StepReport {
        let days = self.market.config.days_per_round;
        self.market.set_day(u64::from(round.saturating_sub(1)) * u64::from(days));
        let daily = self.market.config.daily_budget.min(budget_remaining.max(0) / i64::from(days));
        self.market.simulate_period(deployed, days, daily)
    }
}

impl Platform for MarketPlatform {
    fn observe(
        &mut self,
        round: u32,
        deployed: &[KeywordId],
        budget_remaining: i64,
        schema: &MetricSchema,
    ) -> Result<Observation, String> {
        let r = self.serve(round.saturating_sub(1), deployed, budget_remaining);
        Ok(Observation { records: r.records(schema).map_err(|e| e.to_string())?, spend: r.totals.cost })
    }
}

/// The full pipeline driven against a market. With `adapt` false only the
/// first round runs and its deployment is kept for the whole horizon.
pub struct OmsPolicy {
    pub state: CampaignState,
    pub config: RoundConfig,
    gateway: Gateway,
    market: Market,
    adapt: bool,
    frozen: Option<Vec<KeywordId>>,
    pub logs: Vec<RoundLog>,
    /// Persist the state here after every round.
    pub state_path: Option<PathBuf>,
    /// Append round logs here.
    pub log_path: Option<PathBuf>,
}

impl OmsPolicy {
    pub fn new(state: CampaignState, config: RoundConfig, gateway: Gateway, market: Market, adapt: bool) -> Self {
        OmsPolicy {
            state,
            config,
            gateway,
            market,
            adapt,
            frozen: None,
            logs: vec![],
            state_path: None,
            log_path: None,
        }
    }

    /// A policy answering with [`SyntheticBackend`] over the market's pool
    /// and embedding.
    pub fn synthetic(market: &Market, config: RoundConfig, horizon: u32, cap: usize, adapt: bool) -> Self {
        let backend = SyntheticBackend::new(market.pool().iter().cloned(), market.embedding());
        let budget = market.config.daily_budget * market.config.days_per_round as i64 * horizon as i64;
        let state = CampaignState::new(market.product().clone(), MetricSchema::standard(), horizon, budget, cap);
        OmsPolicy::new(state, config, Gateway::single(backend), market.clone(), adapt)
    }
}

impl Policy for OmsPolicy {
    fn name(&self) -> String {
        if self.adapt { "oms".into() } else { "static".into() }
    }

    fn decide(&mut self, _: u32, last: Option<&StepReport>) -> Result<Vec<KeywordId>, String> {
        if let Some(f) = &self.frozen {
            return Ok(f.clone());
        }
        let mut platform = ReportPlatform { report: last.cloned() };
        let embedding = self.market.embedding();
        let tools = Tools { search: &self.market, volume: &self.market, embedding: &embedding };
        let result = run_round(&self.state, &self.config, &mut self.gateway, tools, &mut platform);
        let (next, log) = match result {
            Ok(x) => x,
            Err((e, log)) => {
                if let Some(p) = &self.log_path {
                    log.append_to(p).map_err(|e| e.to_string())?;
                }
                self.logs.push(log);
                return Err(e.to_string());
            }
        };
        if let Some(p) = &self.state_path {
            next.save_atomic(p).map_err(|e| e.to_string())?;
        }
        if let Some(p) = &self.log_path {
            log.append_to(p).map_err(|e| e.to_string())?;
        }
        self.logs.push(log);
        self.state = next;
        let deployed = self.state.deployed_ids();
        if !self.adapt {
            self.frozen = Some(deployed.clone());
        }
        Ok(deployed)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmResult {
    pub policy: String,
    pub reports: Vec<StepReport>,
    pub totals: Totals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failed: Option<String>,
}

/// Runs one policy against a fresh market for `rounds` periods.
pub fn run_arm(policy: &mut dyn Policy, market: &MarketConfig, rounds: u32) -> ArmResult {
    let mut m = Market::new(market.clone());
    let mut reports: Vec<StepReport> = Vec::new();
    let mut totals = Totals::default();
    let mut failed = None;
    for t in 1..=rounds {
        match policy.decide(t, reports.last()) {
            Ok(deployed) => {
                let r = m.simulate_period(&deployed, market.days_per_round, market.daily_budget);
                totals.add(&r.totals);
                reports.push(r);
            }
            Err(e) => {
                log::warn!("policy {} failed in round {t}: {e}", policy.name());
                failed = Some(format!("round {t}: {e}"));
                break;
            }
        }
    }
    ArmResult { policy: policy.name(), reports, totals, failed }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AbReport {
    pub seed: u64,
    pub rounds: u32,
    pub a: ArmResult,
    pub b: ArmResult,
    /// (metric, (a − b) / b × 100); None when b is zero and a is not.
    pub gains: Vec<(String, Option<f64>)>,
}

fn gain(a: f64, b: f64) -> Option<f64> {
    if b == 0.0 {
        if a == 0.0 { Some(0.0) } else { None }
    } else {
        Some((a - b) / b * 100.0)
    }
}

/// Runs both policies on independent markets built from the same config.
pub fn ab_test(a: &mut dyn Policy, b: &mut dyn Policy, market: &MarketConfig, rounds: u32) -> AbReport {
    let ra = run_arm(a, market, rounds);
    let rb = run_arm(b, market, rounds);
    let gains = ra
        .totals
        .table6()
        .into_iter()
        .zip(rb.totals.table6())
        .map(|((name, x), (_, y))| (name.to_string(), gain(x, y)))
        .collect();
    AbReport { seed: market.seed, rounds, a: ra, b: rb, gains }
}

impl AbReport {
    /// Metric rows for both arms plus the relative gain of A over B.
    pub fn to_csv(&self) -> String {
        let mut out = format!("metric,{},{},gain_pct\n", self.a.policy, self.b.policy);
        for (((name, x), (_, y)), (_, g)) in self.a.totals.table6().iter().zip(self.b.totals.table6()).zip(&self.gains) {
            let g = g.map_or("inf".to_string(), |g| format!("{g:.2}"));
            out.push_str(&format!("{name},{},{},{g}\n", fmt_num(*x), fmt_num(y)));
        }
        out
    }

    pub fn table(&self) -> String {
        let mut out = format!("{:<12}{:>14}{:>14}{:>10}\n", "Metric", self.a.policy, self.b.policy, "Gain");
        for (((name, x), (_, y)), (_, g)) in self.a.totals.table6().iter().zip(self.b.totals.table6()).zip(&self.gains) {
            let g = g.map_or("n/a".to_string(), |g| format!("{g:+.1}%"));
            out.push_str(&format!("{name:<12}{:>14}{:>14}{g:>10}\n", fmt_num(*x), fmt_num(y)));
        }
        out
    }
}
