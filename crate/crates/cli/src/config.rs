//! The TOML configuration file.
//!
//! Relative paths are resolved against the directory holding the config file.
//! Every input path must be readable when the config is loaded.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use oms_core::clustering::{EmbeddingProvider, FixtureEmbedding, HashEmbedding};
use oms_core::domain::{CampaignState, MetricSchema, ProductInfo};
use oms_core::llm::{ChatBackend, Gateway, HttpBackend, HttpConfig, ScriptedBackend, SyntheticBackend};
use oms_core::orchestrator::RoundConfig;
use oms_core::simulator::{Market, MarketConfig};
use oms_core::tools::{FixtureSearch, FixtureVolume, SearchSource, VolumeProvider};
use serde::Deserialize;

use crate::error::CliError;

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub product: Option<ProductSection>,
    pub schema: Option<MetricSchema>,
    #[serde(default)]
    pub campaign: CampaignSection,
    #[serde(default)]
    pub round: RoundConfig,
    #[serde(default)]
    pub backend: BackendSection,
    #[serde(default)]
    pub providers: Providers,
    #[serde(default)]
    pub platform: PlatformSection,
    #[serde(default)]
    pub market: MarketConfig,
    #[serde(default)]
    pub abtest: AbSection,
    /// Whether `[market] seed` was given explicitly.
    #[serde(skip)]
    pub market_seed_set: bool,
}

/// Either inline fields or a JSON file holding `{name, description}`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProductSection {
    pub name: Option<String>,
    pub description: Option<String>,
    pub file: Option<PathBuf>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CampaignSection {
    pub horizon: u32,
    /// Minor currency units.
    pub budget_cap: i64,
    pub per_round_cap: usize,
    pub state: Option<PathBuf>,
    pub log: Option<PathBuf>,
    /// Served-period reports when the platform is the simulator.
    pub steps: Option<PathBuf>,
}

impl Default for CampaignSection {
    fn default() -> Self {
        CampaignSection { horizon: 10, budget_cap: 120_000, per_round_cap: 50, state: None, log: None, steps: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum BackendSection {
    /// Offline backend answering from a keyword pool; the market pool when
    /// `pool` is unset.
    Synthetic { pool: Option<PathBuf> },
    /// Replays `{prompt_sha256, reply}` JSON lines.
    Scripted { fixtures: PathBuf },
    Http { generator: HttpConfig, reflector: Option<HttpConfig> },
}

impl Default for BackendSection {
    fn default() -> Self {
        BackendSection::Synthetic { pool: None }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Providers {
    pub search: Source,
    pub volume: Source,
    pub embedding: EmbeddingSource,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum Source {
    #[default]
    Simulator,
    Fixture { path: PathBuf },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbeddingSource {
    #[default]
    Simulator,
    Hash { seed: u64, dimension: usize },
    /// JSON object mapping text to vector.
    Fixture { path: PathBuf },
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum PlatformSection {
    #[default]
    None,
    /// Performance CSV exported from the ad platform before each round.
    Csv { path: PathBuf },
    Simulator,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyName {
    Oms,
    Static,
    Random,
    Oracle,
    ManyShot,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AbSection {
    pub a: PolicyName,
    pub b: PolicyName,
    pub rounds: u32,
    /// Comparison CSV written by `abtest`.
    pub csv: Option<PathBuf>,
}

impl Default for AbSection {
    fn default() -> Self {
        AbSection { a: PolicyName::Oms, b: PolicyName::Random, rounds: 10, csv: None }
    }
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Invalid(msg.into())
}

fn check_readable(path: &Path) -> Result<(), CliError> {
    File::open(path).map(drop).map_err(|e| invalid(format!("{}: {e}", path.display())))
}

fn resolve(dir: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = dir.join(&*p);
    }
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        let mut cfg: Config =
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {}", path.display(), e.message())))?;
        let raw: toml::Table = text.parse().map_err(|e: toml::de::Error| invalid(e.message().to_string()))?;
        cfg.market_seed_set = raw.get("market").and_then(|m| m.get("seed")).is_some();
        let dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        cfg.resolve_paths(&dir);
        cfg.validate()?;
        Ok(cfg)
    }

    fn resolve_paths(&mut self, dir: &Path) {
        if let Some(p) = self.product.as_mut().and_then(|p| p.file.as_mut()) {
            resolve(dir, p);
        }
        for p in [&mut self.campaign.state, &mut self.campaign.log, &mut self.campaign.steps, &mut self.abtest.csv]
            .into_iter()
            .flatten()
        {
            resolve(dir, p);
        }
        match &mut self.backend {
            BackendSection::Synthetic { pool: Some(p) } | BackendSection::Scripted { fixtures: p } => resolve(dir, p),
            _ => {}
        }
        for s in [&mut self.providers.search, &mut self.providers.volume] {
            if let Source::Fixture { path } = s {
                resolve(dir, path);
            }
        }
        if let EmbeddingSource::Fixture { path } = &mut self.providers.embedding {
            resolve(dir, path);
        }
        if let PlatformSection::Csv { path } = &mut self.platform {
            resolve(dir, path);
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        self.round.validate().map_err(|e| invalid(format!("[round] {e}")))?;
        self.market.validate().map_err(|e| invalid(format!("[market] {e}")))?;
        if let Some(s) = &self.schema {
            s.validate().map_err(|e| invalid(e.to_string()))?;
        }
        if let Some(p) = &self.product {
            match (&p.file, &p.name, &p.description) {
                (Some(f), None, None) => check_readable(f)?,
                (None, Some(_), Some(_)) => {}
                _ => return Err(invalid("[product] needs either file or both name and description")),
            }
        }
        if self.campaign.per_round_cap == 0 {
            return Err(invalid("[campaign] per_round_cap must be at least 1"));
        }
        match &self.backend {
            BackendSection::Synthetic { pool: Some(p) } | BackendSection::Scripted { fixtures: p } => check_readable(p)?,
            _ => {}
        }
        for s in [&self.providers.search, &self.providers.volume] {
            if let Source::Fixture { path } = s {
                check_readable(path)?;
            }
        }
        match &self.providers.embedding {
            EmbeddingSource::Fixture { path } => check_readable(path)?,
            EmbeddingSource::Hash { dimension: 0, .. } => return Err(invalid("embedding dimension must be positive")),
            _ => {}
        }
        if let PlatformSection::Csv { path } = &self.platform {
            check_readable(path)?;
        }
        Ok(())
    }

    /// The market with `seed` applied.
    pub fn market(&self, seed: Option<u64>) -> Market {
        let mut mc = self.market.clone();
        if let Some(s) = seed {
            mc.seed = s;
        }
        Market::new(mc)
    }

    pub fn schema(&self) -> MetricSchema {
        self.schema.clone().unwrap_or_else(MetricSchema::standard)
    }

    pub fn product(&self, market: &Market) -> Result<ProductInfo, CliError> {
        match &self.product {
            None => Ok(market.product().clone()),
            Some(ProductSection { file: Some(f), .. }) => {
                let r = BufReader::new(File::open(f).map_err(|e| invalid(format!("{}: {e}", f.display())))?);
                serde_json::from_reader(r).map_err(|e| invalid(format!("{}: {e}", f.display())))
            }
            Some(ProductSection { name: Some(n), description: Some(d), .. }) => {
                Ok(ProductInfo { name: n.clone(), description: d.clone() })
            }
            Some(_) => Err(invalid("[product] needs either file or both name and description")),
        }
    }

    pub fn fresh_state(&self, market: &Market) -> Result<CampaignState, CliError> {
        let c = &self.campaign;
        Ok(CampaignState::new(self.product(market)?, self.schema(), c.horizon, c.budget_cap, c.per_round_cap))
    }

    pub fn gateway(&self, market: &Market) -> Result<Gateway, CliError> {
        let http = |c: &HttpConfig| -> Result<Box<dyn ChatBackend>, CliError> {
            Ok(Box::new(HttpBackend::from_env(c).map_err(|e| invalid(e.to_string()))?))
        };
        Ok(match &self.backend {
            BackendSection::Synthetic { pool: None } => {
                Gateway::single(SyntheticBackend::new(market.pool().iter().cloned(), market.embedding()))
            }
            BackendSection::Synthetic { pool: Some(p) } => {
                let text = std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())))?;
                let pool = text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string);
                Gateway::single(SyntheticBackend::new(pool, market.embedding()))
            }
            BackendSection::Scripted { fixtures } => {
                Gateway::single(ScriptedBackend::from_path(fixtures).map_err(|e| invalid(e.to_string()))?)
            }
            BackendSection::Http { generator, reflector } => {
                let g = http(generator)?;
                let r = http(reflector.as_ref().unwrap_or(generator))?;
                Gateway::new(g, r)
            }
        })
    }

    pub fn providers(&self, market: &Market) -> Result<ProviderSet, CliError> {
        let read = |p: &Path| std::fs::read_to_string(p).map_err(|e| invalid(format!("{}: {e}", p.display())));
        let search: Box<dyn SearchSource> = match &self.providers.search {
            Source::Simulator => Box::new(market.clone()),
            Source::Fixture { path } => Box::new(
                FixtureSearch::from_json(&read(path)?).map_err(|e| invalid(format!("{}: {e}", path.display())))?,
            ),
        };
        let volume: Box<dyn VolumeProvider> = match &self.providers.volume {
            Source::Simulator => Box::new(market.clone()),
            Source::Fixture { path } => Box::new(
                FixtureVolume::from_csv(read(path)?.as_bytes())
                    .map_err(|e| invalid(format!("{}: {e}", path.display())))?,
            ),
        };
        let embedding: Box<dyn EmbeddingProvider> = match &self.providers.embedding {
            EmbeddingSource::Simulator => Box::new(market.embedding()),
            EmbeddingSource::Hash { seed, dimension } => Box::new(HashEmbedding::new(*seed, *dimension)),
            EmbeddingSource::Fixture { path } => {
                let map: std::collections::BTreeMap<String, Vec<f64>> = serde_json::from_str(&read(path)?)
                    .map_err(|e| invalid(format!("{}: {e}", path.display())))?;
                Box::new(FixtureEmbedding::new(map))
            }
        };
        Ok(ProviderSet { search, volume, embedding })
    }
}

pub struct ProviderSet {
    pub search: Box<dyn SearchSource>,
    pub volume: Box<dyn VolumeProvider>,
    pub embedding: Box<dyn EmbeddingProvider>,
}

impl ProviderSet {
    pub fn tools(&self) -> oms_core::orchestrator::Tools<'_> {
        oms_core::orchestrator::Tools {
            search: self.search.as_ref(),
            volume: self.volume.as_ref(),
            embedding: self.embedding.as_ref(),
        }
    }
}
