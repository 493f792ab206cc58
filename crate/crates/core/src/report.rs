//! Planning statistics for scripted scenarios, as rows and as a table.

use std::fmt::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::deps::{build_defuse, DependencyRelation};
use crate::engine::{parse_scenario, run, EngineError, Model, RunState};
use crate::planner::{plan_for_run, PlanError, PlanOptions};
use crate::workflow::ActivityKind;

#[derive(Debug, thiserror::Error)]
pub enum ReportError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Plan(#[from] PlanError),
    #[error("scenario `{0}` did not stop at a violation")]
    NoViolation(String),
}

/// One line of the planning table.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct ReportRow {
    pub scenario: String,
    pub k: usize,
    pub change_states: usize,
    /// Encoding size; absent for safety violations, which need no search.
    pub vars: Option<u32>,
    pub clauses: Option<usize>,
    pub plans: usize,
    pub seconds: f64,
}

/// Run a scenario up to its first violation.
pub fn violated_run(model: Arc<Model>, scenario_text: &str) -> Result<RunState, ReportError> {
    let scenario = parse_scenario(scenario_text)?;
    let name = scenario.name.clone();
    let run = run(model, scenario)?;
    if run.violation().is_none() {
        return Err(ReportError::NoViolation(name));
    }
    Ok(run)
}

/// Plan at every bound in `ks` and collect one row per bound.
pub fn rows_for_run(
    name: &str,
    run: &RunState,
    ks: &[usize],
    base: PlanOptions,
) -> Result<Vec<ReportRow>, ReportError> {
    ks.iter()
        .map(|&k| {
            let rep = plan_for_run(run, &PlanOptions { k, ..base })?;
            Ok(ReportRow {
                scenario: name.to_string(),
                k,
                change_states: rep.candidates.len(),
                vars: rep.vars,
                clauses: rep.clauses,
                plans: rep.plans.len(),
                seconds: rep.seconds,
            })
        })
        .collect()
}

pub fn render_table(rows: &[ReportRow]) -> String {
    let dash = |v: Option<String>| v.unwrap_or_else(|| "--".into());
    let mut out = String::new();
    writeln!(
        out,
        "{:<10} {:>3} {:>13} {:>7} {:>8} {:>6} {:>9}",
        "scenario", "k", "changeStates", "vars", "clauses", "plans", "seconds"
    )
    .unwrap();
    for r in rows {
        writeln!(
            out,
            "{:<10} {:>3} {:>13} {:>7} {:>8} {:>6} {:>9.3}",
            r.scenario,
            r.k,
            r.change_states,
            dash(r.vars.map(|v| v.to_string())),
            dash(r.clauses.map(|c| c.to_string())),
            r.plans,
            r.seconds
        )
        .unwrap();
    }
    out
}

/// Non-idempotent invocations a run made, and how many of them influence
/// a branch decision taken on the same run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct InvokeRelevance {
    pub visited: usize,
    pub relevant: usize,
}

pub fn invoke_relevance(run: &RunState) -> InvokeRelevance {
    let model = run.model();
    let trace = run.trace();
    let table = build_defuse(&model.lts, &model.workflow);
    let rel = DependencyRelation::build(&model.lts, &table);
    let controls: Vec<_> = trace
        .forward_transitions()
        .filter(|t| table.is_control(*t))
        .collect();
    let calls: Vec<_> = trace
        .forward_transitions()
        .filter(|t| {
            let tr = model.lts.transition(*t);
            tr.activity
                .as_ref()
                .and_then(|a| model.workflow.activity(a))
                .is_some_and(|a| matches!(&a.kind, ActivityKind::Invoke(inv) if !inv.idempotent))
        })
        .collect();
    InvokeRelevance {
        visited: calls.len(),
        relevant: calls
            .iter()
            .filter(|u| controls.iter().any(|c| rel.data_dependent(**u, *c)))
            .count(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;

    #[test]
    fn safety_rows_have_no_encoding() {
        let model = Arc::new(Model::tbs());
        let run = violated_run(model, fixtures::T1_SCENARIO).unwrap();
        let rows = rows_for_run("t1", &run, &[5, 30], PlanOptions::default()).unwrap();
        assert!(rows.iter().all(|r| r.vars.is_none() && r.clauses.is_none()));
        assert!(rows[0].plans <= rows[1].plans);
        let table = render_table(&rows);
        assert!(table.contains("--"));
        assert_eq!(table.lines().count(), 3);
    }

    #[test]
    fn liveness_rows_report_encoding() {
        let model = Arc::new(Model::tbs());
        let run = violated_run(model, fixtures::T2_SCENARIO).unwrap();
        let rows = rows_for_run("t2", &run, &[10], PlanOptions::default()).unwrap();
        assert!(rows[0].vars.unwrap() > 0 && rows[0].clauses.unwrap() > 0);
        let json = serde_json::to_value(&rows[0]).unwrap();
        assert!(json.get("changeStates").is_some());
    }
}
