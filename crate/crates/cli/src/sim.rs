//! `simulate` and `abtest`.

use std::path::PathBuf;

use oms_core::domain::{CampaignState, MetricSchema};
use oms_core::llm::templates::fmt_num;
use oms_core::simulator::{
    ab_test, run_arm, ArmResult, ManyShotPolicy, Market, OmsPolicy, OraclePolicy, Policy, RandomPolicy,
};
use serde::Serialize;

use crate::config::{Config, PolicyName};
use crate::error::CliError;
use crate::print_json;

/// The flag, then an explicit `[market] seed`, then a fresh random seed.
fn resolve_seed(cfg: &Config, flag: Option<u64>) -> u64 {
    if let Some(s) = flag {
        return s;
    }
    if cfg.market_seed_set {
        return cfg.market.seed;
    }
    let s: u64 = rand::random::<u32>().into();
    eprintln!("no market seed configured; drew seed {s}");
    s
}

fn policy(name: PolicyName, cfg: &Config, market: &Market, rounds: u32) -> Result<Box<dyn Policy>, CliError> {
    let cap = cfg.campaign.per_round_cap;
    Ok(match name {
        PolicyName::Oms | PolicyName::Static => {
            let mc = &market.config;
            let budget = mc.daily_budget * i64::from(mc.days_per_round) * i64::from(rounds);
            let state = CampaignState::new(cfg.product(market)?, MetricSchema::standard(), rounds, budget, cap);
            let gateway = cfg.gateway(market)?;
            Box::new(OmsPolicy::new(state, cfg.round.clone(), gateway, market.clone(), name == PolicyName::Oms))
        }
        PolicyName::Random => Box::new(RandomPolicy::new(market.pool(), cfg.round.keyword_budget, cap, market.config.seed)),
        PolicyName::Oracle => Box::new(OraclePolicy::new(market, cap)),
        PolicyName::ManyShot => Box::new(ManyShotPolicy::new(
            cfg.gateway(market)?,
            cfg.product(market)?,
            cfg.round.keywords_per_key,
            cap,
        )),
    })
}

#[derive(Debug, Serialize)]
struct SimulateOutput<'a> {
    seed: u64,
    rounds: u32,
    arm: &'a ArmResult,
}

fn arm_failure(arm: &ArmResult) -> Option<String> {
    arm.failed.as_ref().map(|f| format!("policy {} failed in {f}", arm.policy))
}

pub fn simulate(
    cfg: &Config,
    name: PolicyName,
    rounds: Option<u32>,
    seed: Option<u64>,
    json: bool,
) -> Result<(), CliError> {
    let seed = resolve_seed(cfg, seed);
    let rounds = rounds.unwrap_or(cfg.abtest.rounds);
    let market = cfg.market(Some(seed));
    let mut p = policy(name, cfg, &market, rounds)?;
    let arm = run_arm(p.as_mut(), &market.config, rounds);
    if json {
        print_json(&SimulateOutput { seed, rounds, arm: &arm })?;
    } else {
        println!("seed {seed}, policy {}, {rounds} rounds", arm.policy);
        println!("{:>5}{:>13}{:>9}{:>10}{:>13}", "round", "impressions", "clicks", "cost", "conversions");
        for (i, r) in arm.reports.iter().enumerate() {
            let t = &r.totals;
            println!("{:>5}{:>13}{:>9}{:>10}{:>13}", i + 1, t.impressions, t.clicks, t.cost, t.conversions);
        }
        for (name, v) in arm.totals.table6() {
            println!("{name:<12}{:>14}", fmt_num(v));
        }
    }
    match arm_failure(&arm) {
        Some(msg) => Err(CliError::Aborted(msg)),
        None => Ok(()),
    }
}

pub fn abtest(
    cfg: &Config,
    a: Option<PolicyName>,
    b: Option<PolicyName>,
    rounds: Option<u32>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    json: bool,
) -> Result<(), CliError> {
    let seed = resolve_seed(cfg, seed);
    let rounds = rounds.unwrap_or(cfg.abtest.rounds);
    let market = cfg.market(Some(seed));
    let mut pa = policy(a.unwrap_or(cfg.abtest.a), cfg, &market, rounds)?;
    let mut pb = policy(b.unwrap_or(cfg.abtest.b), cfg, &market, rounds)?;
    let report = ab_test(pa.as_mut(), pb.as_mut(), &market.config, rounds);
    if let Some(path) = out.or_else(|| cfg.abtest.csv.clone()) {
        std::fs::write(&path, report.to_csv())?;
    }
    if json {
        print_json(&report)?;
    } else {
        println!("seed {seed}, {rounds} rounds, {} vs {}", report.a.policy, report.b.policy);
        print!("{}", report.table());
    }
    match arm_failure(&report.a).or_else(|| arm_failure(&report.b)) {
        Some(msg) => Err(CliError::Aborted(msg)),
        None => Ok(()),
    }
}
