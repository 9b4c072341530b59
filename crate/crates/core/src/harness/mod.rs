//! Scripted attack and benign scenarios, the flat-versus-graph comparison,
//! a layer-masking check, and a latency benchmark.

mod bench;
mod depth;
mod scenarios;
pub mod tools;

use std::fmt::Write as _;

use serde::Serialize;

pub use bench::{bench, BenchError, LatencyStats, MIN_BENCH_RUNS, WARMUP_RUNS};
pub use depth::{masking_check, MaskingReport};
pub use scenarios::{
    all_scenarios, benign_forward, causality_laundering, credential_exfiltration, differential_scenarios,
    mixed_provenance_field, scenario_by_id, transitive_taint, Expectation, InputRef, Scenario, ScenarioReport,
    ScenarioRunner, Step, StepReport,
};

use crate::policy::Mode;

#[derive(Debug, Clone, Serialize)]
pub struct MatrixRow {
    pub scenario: String,
    pub title: String,
    pub mechanism: String,
    pub attack: bool,
    pub flat: Option<ScenarioReport>,
    pub graph: Option<ScenarioReport>,
}

/// Results of every scenario in each requested mode.
#[derive(Debug, Clone, Serialize)]
pub struct Matrix {
    pub rows: Vec<MatrixRow>,
    /// True when every report matches its scenario's expectation.
    pub holds: bool,
}

pub fn run_matrix(runner: &ScenarioRunner, scenarios: &[Scenario], modes: &[Mode]) -> Matrix {
    let rows: Vec<MatrixRow> = scenarios
        .iter()
        .map(|s| {
            let report = |mode| modes.contains(&mode).then(|| runner.run(s, mode));
            MatrixRow {
                scenario: s.id.to_string(),
                title: s.title.to_string(),
                mechanism: s.mechanism.to_string(),
                attack: s.is_attack(),
                flat: report(Mode::Flat),
                graph: report(Mode::Graph),
            }
        })
        .collect();
    let holds = rows
        .iter()
        .flat_map(|r| [&r.flat, &r.graph])
        .flatten()
        .all(|r| r.matches_expectation && r.audit_chain_ok);
    Matrix { rows, holds }
}

fn cell(report: Option<&ScenarioReport>, attack: bool) -> String {
    match report {
        None => "-".to_string(),
        Some(r) => {
            let word = match (attack, r.blocked()) {
                (true, true) => "blocked",
                (true, false) => "missed",
                (false, true) => "false positive",
                (false, false) => "allowed",
            };
            if r.matches_expectation {
                word.to_string()
            } else {
                format!("{word} (!)")
            }
        }
    }
}

impl Matrix {
    /// Plain-text comparison table.
    pub fn render(&self) -> String {
        let header = ["id", "scenario", "flat", "graph", "decided by", "graph rule"];
        let rows: Vec<[String; 6]> = self
            .rows
            .iter()
            .map(|r| {
                let rule = r
                    .graph
                    .as_ref()
                    .and_then(|g| g.sink_rule)
                    .map_or_else(|| "-".to_string(), |rule| rule.to_string());
                [
                    r.scenario.clone(),
                    r.title.clone(),
                    cell(r.flat.as_ref(), r.attack),
                    cell(r.graph.as_ref(), r.attack),
                    r.mechanism.clone(),
                    rule,
                ]
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| {
                rows.iter()
                    .map(|r| r[c].len())
                    .chain([header[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();

        let mut out = String::new();
        let mut line = |cells: &[&str]| {
            let padded: Vec<String> = cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", padded.join("  ").trim_end());
        };
        line(&header);
        for r in &rows {
            line(&r.each_ref().map(String::as_str));
        }
        let _ = writeln!(
            out,
            "\n{}",
            if self.holds {
                "all scenarios match expectations"
            } else {
                "MISMATCH: at least one scenario deviates from its expectation"
            }
        );
        out
    }
}
