//! `report`: plot data as a flat table, from a campaign state, an A/B or
//! single-arm simulation, or an evaluation report.

use std::collections::BTreeMap;
use std::path::Path;

use oms_core::domain::CampaignState;
use oms_core::evaluation::EvalReport;
use oms_core::simulator::{AbReport, ArmResult};
use serde::Serialize;
use serde_json::{json, Value};

use crate::error::CliError;
use crate::print_json;

#[derive(Debug, Serialize)]
struct Table {
    kind: &'static str,
    columns: Vec<String>,
    rows: Vec<Vec<Value>>,
}

fn arm_rows(arm: &ArmResult, rows: &mut Vec<Vec<Value>>) {
    let (mut imp, mut clk, mut cost, mut conv) = (0u64, 0u64, 0i64, 0u64);
    for (i, r) in arm.reports.iter().enumerate() {
        let t = &r.totals;
        imp += t.impressions;
        clk += t.clicks;
        cost += t.cost;
        conv += t.conversions;
        rows.push(vec![
            json!(arm.policy),
            json!(i + 1),
            json!(t.impressions),
            json!(t.clicks),
            json!(t.cost),
            json!(t.conversions),
            json!(imp),
            json!(clk),
            json!(cost),
            json!(conv),
        ]);
    }
}

const ARM_COLUMNS: [&str; 10] = [
    "policy",
    "round",
    "impressions",
    "clicks",
    "cost",
    "conversions",
    "cum_impressions",
    "cum_clicks",
    "cum_cost",
    "cum_conversions",
];

fn arms(arms: &[&ArmResult]) -> Table {
    let mut rows = Vec::new();
    for a in arms {
        arm_rows(a, &mut rows);
    }
    Table { kind: "arms", columns: ARM_COLUMNS.iter().map(ToString::to_string).collect(), rows }
}

fn state(st: &CampaignState) -> Table {
    let mut by_round: BTreeMap<u32, (usize, Vec<f64>)> = BTreeMap::new();
    for r in &st.performance {
        let e = by_round.entry(r.as_of_round).or_insert_with(|| (0, vec![0.0; st.schema.len()]));
        e.0 += 1;
        for (acc, v) in e.1.iter_mut().zip(&r.values) {
            *acc += v;
        }
    }
    let mut columns = vec!["round".to_string(), "keywords".to_string()];
    columns.extend(st.schema.names().iter().map(ToString::to_string));
    let rows = by_round
        .into_iter()
        .map(|(round, (n, sums))| {
            let mut row = vec![json!(round), json!(n)];
            row.extend(sums.into_iter().map(|v| json!(v)));
            row
        })
        .collect();
    Table { kind: "campaign", columns, rows }
}

fn evaluation(r: &EvalReport) -> Table {
    let mut rows = Vec::new();
    for row in &r.rows {
        for c in &r.columns {
            rows.push(vec![
                json!(row.method),
                json!(c.name),
                json!(row.raw[&c.name]),
                json!(row.normalized[&c.name]),
            ]);
        }
    }
    Table {
        kind: "evaluation",
        columns: ["method", "column", "raw", "normalized"].iter().map(ToString::to_string).collect(),
        rows,
    }
}

fn parse<T: serde::de::DeserializeOwned>(v: Value, input: &Path) -> Result<T, CliError> {
    serde_json::from_value(v).map_err(|e| CliError::Invalid(format!("{}: {e}", input.display())))
}

fn detect(v: Value, input: &Path) -> Result<Table, CliError> {
    let has = |k: &str| v.get(k).is_some();
    if has("a") && has("b") && has("gains") {
        let r: AbReport = parse(v, input)?;
        Ok(arms(&[&r.a, &r.b]))
    } else if has("arm") {
        let a: ArmResult = parse(v["arm"].clone(), input)?;
        Ok(arms(&[&a]))
    } else if has("schema") && has("performance") {
        Ok(state(&parse(v, input)?))
    } else if has("rows") && has("columns") {
        Ok(evaluation(&parse(v, input)?))
    } else if v.get("report").is_some_and(|r| !r.is_null()) {
        Ok(evaluation(&parse(v["report"].clone(), input)?))
    } else {
        Err(CliError::Invalid(format!(
            "{}: not a campaign state, simulation output or evaluation report",
            input.display()
        )))
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

pub fn report(input: &Path, json: bool) -> Result<(), CliError> {
    let text =
        std::fs::read_to_string(input).map_err(|e| CliError::Invalid(format!("{}: {e}", input.display())))?;
    let v: Value = serde_json::from_str(&text).map_err(|e| CliError::Invalid(format!("{}: {e}", input.display())))?;
    let table = detect(v, input)?;
    if json {
        return print_json(&table);
    }
    let mut w = csv::Writer::from_writer(std::io::stdout().lock());
    let io = |e: csv::Error| CliError::Io(e.into());
    w.write_record(&table.columns).map_err(io)?;
    for row in &table.rows {
        w.write_record(row.iter().map(cell)).map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
