//! Power and error-rate summaries and their CSV tables.

use crate::error::Result;
use crate::scenario::DroppingRule;
use crate::study::Method;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerReport {
    pub method: Method,
    pub scenario: String,
    pub rule: DroppingRule,
    pub rho: f64,
    pub stage_one_draws: usize,
    pub stage_two_draws: usize,
    /// `None` when every hypothesis is true.
    pub disjunctive: Option<Estimate>,
    pub conjunctive: Option<Estimate>,
    /// `None` when no hypothesis is true.
    pub fwer: Option<Estimate>,
    pub per_hypothesis: Vec<Estimate>,
}

fn pct(e: Option<Estimate>) -> [String; 2] {
    match e {
        Some(e) => [format!("{:.2}", 100.0 * e.value), format!("{:.3}", 100.0 * e.se)],
        None => ["n/a".into(), "n/a".into()],
    }
}

/// One row per report in percent: scenario, rule, method, disjunctive and
/// conjunctive power, FWER, each followed by its standard error.
pub fn power_table(reports: &[PowerReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "scenario",
        "rule",
        "method",
        "disjunctive",
        "disjunctive_se",
        "conjunctive",
        "conjunctive_se",
        "fwer",
        "fwer_se",
    ])?;
    for r in reports {
        let mut row = vec![r.scenario.clone(), r.rule.label().into(), r.method.label().into()];
        for e in [r.disjunctive, r.conjunctive, r.fwer] {
            row.extend(pct(e));
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ascii output"))
}

/// FWER in percent with one row per correlation and method and one column
/// pair per dropping rule.
pub fn fwer_table(reports: &[PowerReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["correlation".to_string(), "method".to_string()];
    for rule in DroppingRule::ALL {
        header.push(rule.label().into());
        header.push(format!("{}_se", rule.label()));
    }
    w.write_record(&header)?;
    let mut keys: Vec<(f64, Method)> = Vec::new();
    for r in reports {
        if !keys.iter().any(|&(rho, m)| rho == r.rho && m == r.method) {
            keys.push((r.rho, r.method));
        }
    }
    for (rho, method) in keys {
        let mut row = vec![format!("{rho}"), method.label().to_string()];
        for rule in DroppingRule::ALL {
            let e = reports
                .iter()
                .find(|r| r.rho == rho && r.method == method && r.rule == rule)
                .and_then(|r| r.fwer);
            row.extend(pct(e));
        }
        w.write_record(&row)?;
    }
    Ok(String::from_utf8(w.into_inner().expect("in-memory writer")).expect("ascii output"))
}
