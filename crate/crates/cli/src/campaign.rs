//! `run` and `generate`.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use oms_core::domain::{BrandClass, CampaignState};
use oms_core::orchestrator::{
    generation_round, reflect_refine, run_campaign, CampaignOptions, CsvPlatform, GenerationSession, LogEvent,
    NullPlatform, Platform, RoundConfig, RoundLog,
};
use oms_core::simulator::MarketPlatform;
use oms_core::tools::UnknownVolume;
use serde::Serialize;

use crate::config::{Config, PlatformSection};
use crate::error::CliError;
use crate::print_json;

#[derive(Debug, Serialize)]
struct RoundSummary {
    round: u32,
    generated: usize,
    iterations: usize,
    shortfall: bool,
    reflection_turns: usize,
    deployed: usize,
    retired: usize,
    rejected: usize,
    active: usize,
    clusters: usize,
    spend: i64,
    budget_spent: i64,
}

#[derive(Debug, Serialize)]
struct RunOutput {
    state: String,
    log: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    steps: Option<String>,
    rounds: Vec<RoundSummary>,
    next_round: u32,
    horizon: u32,
    #[serde(skip_serializing_if = "Option::is_none")]
    aborted: Option<String>,
}

/// `campaign.json` becomes `campaign.<suffix>` next to it.
fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "campaign".into());
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn round_config(cfg: &Config, strict_volume: bool) -> RoundConfig {
    let mut rc = cfg.round.clone();
    if strict_volume {
        rc.unknown_volume = UnknownVolume::Strict;
    }
    rc
}

fn load_state(path: &Path) -> Result<CampaignState, CliError> {
    CampaignState::load(path).map_err(|e| CliError::Invalid(format!("{}: {e}", path.display())))
}

fn summarize(log: &RoundLog, st: &CampaignState) -> RoundSummary {
    let mut s = RoundSummary {
        round: log.round,
        generated: 0,
        iterations: 0,
        shortfall: false,
        reflection_turns: 0,
        deployed: 0,
        retired: 0,
        rejected: 0,
        active: st.deployed().count(),
        clusters: st.clusters.len(),
        spend: 0,
        budget_spent: st.budget_spent,
    };
    for e in &log.events {
        match e {
            LogEvent::Performance { spend, .. } => s.spend = *spend,
            LogEvent::GenerationDone { accepted, iterations, shortfall } => {
                s.generated = accepted.len();
                s.iterations = *iterations;
                s.shortfall = *shortfall;
            }
            LogEvent::ReflectionDone { turns, .. } => s.reflection_turns = *turns,
            LogEvent::Deployment { deployed, retired, rejected } => {
                s.deployed = deployed.len();
                s.retired = retired.len();
                s.rejected = rejected.len();
            }
            _ => {}
        }
    }
    s
}

fn append_line(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    let mut line = serde_json::to_string(value).map_err(|e| CliError::Io(e.into()))?;
    line.push('\n');
    f.write_all(line.as_bytes())?;
    Ok(())
}

pub fn run(
    cfg: &Config,
    state: Option<PathBuf>,
    rounds: u32,
    seed: Option<u64>,
    strict_volume: bool,
    json: bool,
) -> Result<(), CliError> {
    let state_path = state
        .or_else(|| cfg.campaign.state.clone())
        .ok_or_else(|| CliError::Invalid("no state file: pass --state or set [campaign] state".into()))?;
    let log_path = cfg.campaign.log.clone().unwrap_or_else(|| sibling(&state_path, "log.jsonl"));
    let market = cfg.market(seed);
    let mut st = if state_path.exists() { load_state(&state_path)? } else { cfg.fresh_state(&market)? };
    let rc = round_config(cfg, strict_volume);
    let mut gateway = cfg.gateway(&market)?;
    let providers = cfg.providers(&market)?;
    let (mut platform, mut server): (Box<dyn Platform>, Option<MarketPlatform>) = match &cfg.platform {
        PlatformSection::None => (Box::new(NullPlatform), None),
        PlatformSection::Csv { path } => (Box::new(CsvPlatform { path: path.clone() }), None),
        PlatformSection::Simulator => {
            (Box::new(MarketPlatform::new(market.clone())), Some(MarketPlatform::new(market.clone())))
        }
    };
    let steps_path = server.as_ref().map(|_| cfg.campaign.steps.clone().unwrap_or_else(|| sibling(&state_path, "steps.jsonl")));
    let options = CampaignOptions {
        state_path: Some(state_path.clone()),
        log_path: Some(log_path.clone()),
        rounds: Some(1),
        record_timing: false,
    };

    let mut summaries = Vec::new();
    let mut aborted = None;
    for _ in 0..rounds {
        if st.round > st.horizon {
            break;
        }
        match run_campaign(st.clone(), &rc, &mut gateway, providers.tools(), platform.as_mut(), &options) {
            Ok(done) => {
                st = done.state;
                if let Some(log) = done.logs.last() {
                    summaries.push(summarize(log, &st));
                }
                if let (Some(server), Some(p)) = (server.as_mut(), &steps_path) {
                    let report = server.serve(st.round - 1, &st.deployed_ids(), st.budget_cap - st.budget_spent);
                    append_line(p, &report)?;
                }
            }
            Err(abort) => {
                aborted = Some(abort.to_string());
                break;
            }
        }
    }

    let out = RunOutput {
        state: state_path.display().to_string(),
        log: log_path.display().to_string(),
        steps: steps_path.map(|p| p.display().to_string()),
        rounds: summaries,
        next_round: st.round,
        horizon: st.horizon,
        aborted: aborted.clone(),
    };
    if json {
        print_json(&out)?;
    } else {
        for s in &out.rounds {
            println!(
                "round {}: {} generated in {} iterations{}, {} deployed, {} retired, {} rejected; {} active in {} clusters; spend {}",
                s.round,
                s.generated,
                s.iterations,
                if s.shortfall { " (short)" } else { "" },
                s.deployed,
                s.retired,
                s.rejected,
                s.active,
                s.clusters,
                s.spend
            );
        }
        if out.next_round > out.horizon {
            println!("campaign complete after {} rounds; state {}", out.horizon, out.state);
        } else {
            println!("next round {} of {}; state {}", out.next_round, out.horizon, out.state);
        }
    }
    match aborted {
        Some(msg) => Err(CliError::Aborted(msg)),
        None => Ok(()),
    }
}

#[derive(Debug, Serialize)]
struct GeneratedRow {
    keyword: String,
    brand_class: BrandClass,
    category: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    score: Option<u8>,
}

#[derive(Debug, Serialize)]
struct GenerateOutput {
    product: String,
    iterations: usize,
    shortfall: bool,
    reflection_turns: usize,
    replaced: Vec<String>,
    keywords: Vec<GeneratedRow>,
}

pub fn generate(
    cfg: &Config,
    state: Option<PathBuf>,
    seed: Option<u64>,
    strict_volume: bool,
    json: bool,
) -> Result<(), CliError> {
    let market = cfg.market(seed);
    let st = match state {
        Some(p) => load_state(&p)?,
        None => cfg.fresh_state(&market)?,
    };
    let rc = round_config(cfg, strict_volume);
    let mut gateway = cfg.gateway(&market)?;
    let providers = cfg.providers(&market)?;
    let mut session = GenerationSession::new(&st, rc.keywords_per_key);
    let mut log = RoundLog::new(st.round);
    let aborted = |e: oms_core::orchestrator::RoundError| CliError::Aborted(e.to_string());
    let gen = generation_round(&mut session, &rc, &mut gateway, providers.tools(), &mut log).map_err(aborted)?;
    let refl =
        reflect_refine(&mut session, gen.accepted, &rc, &mut gateway, providers.tools(), &mut log).map_err(aborted)?;

    let out = GenerateOutput {
        product: st.product.name.clone(),
        iterations: gen.iterations,
        shortfall: gen.shortfall,
        reflection_turns: refl.turns,
        replaced: refl.replaced.iter().map(ToString::to_string).collect(),
        keywords: refl
            .keywords
            .iter()
            .map(|c| GeneratedRow {
                keyword: c.text.clone(),
                brand_class: c.brand_class,
                category: c.category.clone(),
                score: refl.scores.get(&c.id).copied(),
            })
            .collect(),
    };
    if json {
        return print_json(&out);
    }
    for k in &out.keywords {
        let class = match k.brand_class {
            BrandClass::Branded => "branded",
            BrandClass::NonBranded => "non-branded",
        };
        println!("{:<12} {:<24} {}", class, k.category, k.keyword);
    }
    println!(
        "{} keywords for {} after {} iterations and {} reflection turns{}",
        out.keywords.len(),
        out.product,
        out.iterations,
        out.reflection_turns,
        if out.shortfall { "; short of the keyword budget" } else { "" }
    );
    Ok(())
}
