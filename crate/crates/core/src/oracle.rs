//! Random models and the cross-checks run against them.

use std::collections::BTreeSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::engine::{ExecutionTrace, Model, RunOptions, RunState, RunStatus, Scenario, TraceStep};
use crate::lts::{Lts, LtsBuilder, Provenance, StateId};
use crate::monitor::{
    self, color, AfterMode, Monitor, MonitorState, Pattern, PropertyKind, PropertySpec, Scope,
};
use crate::planner::{
    accepted_by_full_simulation, dfs_plans, enumerate, forbidden_by, plan_for_run,
    EnumerateOptions, Plan, PlanOptions, PlanningProblem,
};
use crate::workflow::{Activity, ActivityId, ActivityKind, Invoke, OpRef, PickBranch, WorkflowDef};

const LABELS: [&str; 5] = ["a", "b", "c", "d", "e"];

/// A bare planning instance over a random transition system.
#[derive(Debug, Clone, Serialize)]
pub struct OracleCase {
    pub lts: Lts,
    pub trace: ExecutionTrace,
    pub monitor: Monitor,
    pub candidates: BTreeSet<StateId>,
    pub k: usize,
}

impl OracleCase {
    pub fn problem(&self) -> PlanningProblem<'_> {
        PlanningProblem {
            lts: &self.lts,
            trace: &self.trace,
            monitor: &self.monitor,
            monitor_index: 0,
            candidates: self.candidates.clone(),
            k: self.k,
            max_plans: None,
        }
    }
}

fn random_monitor(rng: &mut ChaCha8Rng) -> Monitor {
    let pick = |rng: &mut ChaCha8Rng| -> BTreeSet<String> {
        let n = rng.gen_range(1..=2);
        LABELS
            .choose_multiple(rng, n)
            .map(|s| s.to_string())
            .collect()
    };
    let pattern = match rng.gen_range(0..4) {
        0 => Pattern::Existence(LABELS.choose(rng).unwrap().to_string()),
        3 => return random_dfa(rng),
        _ => Pattern::Response {
            trigger: pick(rng),
            response: pick(rng),
        },
    };
    let scope = if rng.gen_bool(0.3) {
        Scope::After {
            events: pick(rng),
            mode: AfterMode::Any,
        }
    } else {
        Scope::Global
    };
    let spec = PropertySpec {
        name: "L".into(),
        kind: PropertyKind::Liveness,
        pattern,
        scope,
    };
    monitor::compile(&spec).unwrap_or_else(|_| random_dfa(rng))
}

fn random_dfa(rng: &mut ChaCha8Rng) -> Monitor {
    let n = rng.gen_range(2..=4u32);
    let mut delta = std::collections::BTreeMap::new();
    let mut alphabet = BTreeSet::new();
    for q in 0..n {
        for l in LABELS {
            if rng.gen_bool(0.5) {
                delta.insert(
                    (MonitorState(q), l.to_string()),
                    MonitorState(rng.gen_range(0..n)),
                );
                alphabet.insert(l.to_string());
            }
        }
    }
    let accepting: BTreeSet<MonitorState> = (1..n)
        .filter(|_| rng.gen_bool(0.3))
        .map(MonitorState)
        .collect();
    color(Monitor {
        name: "R".into(),
        kind: PropertyKind::Liveness,
        num_states: n,
        alphabet,
        delta,
        initial: MonitorState(0),
        accepting,
        colors: Vec::new(),
    })
}

/// A random transition system of at most `max_states` states with a random
/// trace from its initial state, a random monitor and random candidates.
pub fn random_case(rng: &mut ChaCha8Rng, max_states: u32, max_k: usize) -> OracleCase {
    let n = rng.gen_range(2..=max_states);
    let mut b = LtsBuilder::new(n);
    for s in 0..n - 1 {
        let dst = rng.gen_range(s + 1..n);
        let l = LABELS.choose(rng).unwrap();
        let t = b.forward(s, l, dst);
        if rng.gen_bool(0.5) {
            b.compensation(t, &format!("undo_{l}"));
        }
    }
    for _ in 0..rng.gen_range(n / 2..=2 * n) {
        let (s, d) = (rng.gen_range(0..n), rng.gen_range(0..n));
        let l = LABELS.choose(rng).unwrap();
        let t = b.forward(s, l, d);
        if rng.gen_bool(0.5) {
            b.compensation(t, &format!("undo_{l}"));
        }
    }
    for s in 0..n {
        if rng.gen_bool(0.4) {
            b.change_state(s, Provenance::NonIdemInvoke(format!("op{s}")));
        }
    }
    b.final_state(n - 1);
    let lts = b.build();
    let monitor = random_monitor(rng);

    let mut states = vec![lts.initial_state()];
    let mut steps = Vec::new();
    let len = rng.gen_range(1..=6);
    for _ in 0..len {
        let out: Vec<_> = lts.forward_from(*states.last().unwrap()).collect();
        let Some(t) = out.choose(rng) else { break };
        steps.push(TraceStep {
            transition: t.id,
            label: t.label.clone(),
        });
        states.push(t.dst);
    }
    let mut snapshots = vec![vec![monitor.initial]];
    for st in &steps {
        let q = monitor.step(snapshots.last().unwrap()[0], &st.label);
        snapshots.push(vec![q]);
    }
    let candidates: BTreeSet<StateId> = states
        .iter()
        .copied()
        .filter(|s| lts.change_states().contains_key(s) || rng.gen_bool(0.2))
        .collect();
    let trace = ExecutionTrace {
        compensation_stack: steps.iter().map(|s| s.transition).collect(),
        states,
        steps,
        snapshots,
    };
    let k = rng.gen_range(1..=max_k);
    OracleCase {
        lts,
        trace,
        monitor,
        candidates,
        k,
    }
}

fn plan_key(p: &Plan) -> (usize, Vec<u32>) {
    (p.undo.len(), p.redo.iter().map(|t| t.0).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct Mismatch {
    pub case_index: usize,
    pub sat_only: Vec<(usize, Vec<u32>)>,
    pub dfs_only: Vec<(usize, Vec<u32>)>,
    pub duplicates: usize,
    pub case: OracleCase,
}

#[derive(Debug, Clone, Serialize)]
pub struct OracleSummary {
    pub cases: usize,
    pub plans_compared: usize,
    pub mismatches: Vec<Mismatch>,
}

impl OracleSummary {
    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

/// Compare SAT enumeration against depth-first enumeration on random cases.
pub fn oracle_check(seed: u64, cases: usize, corrupt_blocking: bool) -> OracleSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = OracleSummary {
        cases,
        plans_compared: 0,
        mismatches: Vec::new(),
    };
    for i in 0..cases {
        let case = random_case(&mut rng, 12, 8);
        let problem = case.problem();
        let opts = EnumerateOptions {
            corrupt_blocking,
            ..Default::default()
        };
        let sat = enumerate(&problem, opts)
            .expect("small encodings fit")
            .plans;
        let dfs = dfs_plans(&problem);
        let sat_keys: Vec<_> = sat.iter().map(plan_key).collect();
        let sat_set: BTreeSet<_> = sat_keys.iter().cloned().collect();
        let dfs_set: BTreeSet<_> = dfs.iter().map(plan_key).collect();
        summary.plans_compared += dfs_set.len();
        let duplicates = sat_keys.len() - sat_set.len();
        if sat_set != dfs_set || duplicates > 0 {
            summary.mismatches.push(Mismatch {
                case_index: i,
                sat_only: sat_set.difference(&dfs_set).cloned().collect(),
                dfs_only: dfs_set.difference(&sat_set).cloned().collect(),
                duplicates,
                case,
            });
        }
    }
    summary
}

struct Gen<'r> {
    rng: &'r mut ChaCha8Rng,
    next_id: usize,
    ops: usize,
    vars: usize,
    events: usize,
}

impl Gen<'_> {
    fn id(&mut self, prefix: &str) -> ActivityId {
        self.next_id += 1;
        ActivityId(format!("{prefix}{}", self.next_id))
    }

    fn var(&mut self) -> String {
        format!("v{}", self.rng.gen_range(0..self.vars))
    }

    fn leaf(&mut self) -> Activity {
        let op = self.rng.gen_range(0..self.ops);
        let id = self.id("i");
        if self.rng.gen_bool(0.8) {
            let compensation = self.rng.gen_bool(0.7).then(|| OpRef {
                partner: "P".into(),
                op: format!("undo{op}"),
            });
            Activity {
                id,
                kind: ActivityKind::Invoke(Invoke {
                    partner: "P".into(),
                    op: format!("op{op}"),
                    input: self.var(),
                    output: self.var(),
                    idempotent: self.rng.gen_bool(0.3),
                    compensation,
                }),
            }
        } else {
            Activity {
                id,
                kind: ActivityKind::LocalCall {
                    op: format!("op{op}"),
                    input: self.var(),
                    output: self.var(),
                },
            }
        }
    }

    fn activity(&mut self, depth: u32) -> Activity {
        if depth == 0 || self.rng.gen_bool(0.35) {
            return self.leaf();
        }
        match self.rng.gen_range(0..6) {
            5 => Activity {
                id: self.id("while"),
                kind: ActivityKind::While {
                    cond_vars: [self.var()].into(),
                    max_iter: self.rng.gen_range(1..=2),
                    body: Box::new(self.leaf()),
                },
            },
            0 | 1 => {
                let n = self.rng.gen_range(2..=3);
                let items = (0..n).map(|_| self.activity(depth - 1)).collect();
                Activity {
                    id: self.id("seq"),
                    kind: ActivityKind::Sequence(items),
                }
            }
            2 => {
                let items = (0..2).map(|_| self.leaf()).collect();
                Activity {
                    id: self.id("flow"),
                    kind: ActivityKind::Flow(items),
                }
            }
            3 => {
                let branches = (0..2)
                    .map(|_| {
                        self.events += 1;
                        PickBranch {
                            event: format!("ev{}", self.events),
                            body: self.activity(depth - 1),
                        }
                    })
                    .collect();
                Activity {
                    id: self.id("pick"),
                    kind: ActivityKind::Pick(branches),
                }
            }
            _ => {
                let else_branch = self
                    .rng
                    .gen_bool(0.5)
                    .then(|| Box::new(self.activity(depth - 1)));
                Activity {
                    id: self.id("if"),
                    kind: ActivityKind::If {
                        cond_vars: [self.var()].into(),
                        then_branch: Box::new(self.activity(depth - 1)),
                        else_branch,
                    },
                }
            }
        }
    }
}

/// A random workflow over operations `op0..op{ops-1}`.
pub fn random_workflow(rng: &mut ChaCha8Rng, ops: usize) -> WorkflowDef {
    let mut g = Gen {
        rng,
        next_id: 0,
        ops,
        vars: 3,
        events: 0,
    };
    let n = g.rng.gen_range(2..=4);
    let items = (0..n).map(|_| g.activity(3)).collect();
    WorkflowDef {
        name: "R".into(),
        variables: (0..3).map(|i| format!("v{i}")).collect(),
        partners: ["P".to_string()].into(),
        root: Activity {
            id: ActivityId("main".into()),
            kind: ActivityKind::Sequence(items),
        },
    }
}

/// Random properties over operation labels: one liveness property and one
/// or two safety properties.
pub fn random_properties(rng: &mut ChaCha8Rng, ops: usize) -> Vec<PropertySpec> {
    let op = |rng: &mut ChaCha8Rng| format!("op{}", rng.gen_range(0..ops));
    let pattern = if rng.gen_bool(0.5) {
        Pattern::Existence(op(rng))
    } else {
        Pattern::Response {
            trigger: [op(rng)].into(),
            response: [op(rng)].into(),
        }
    };
    let mut specs = vec![PropertySpec {
        name: "L".into(),
        kind: PropertyKind::Liveness,
        pattern,
        scope: Scope::Global,
    }];
    for i in 0..rng.gen_range(1..=2) {
        let pattern = if rng.gen_bool(0.5) {
            Pattern::Absence(op(rng))
        } else {
            Pattern::Precedence {
                first: [op(rng)].into(),
                later: [op(rng)].into(),
            }
        };
        let scope = if rng.gen_bool(0.5) {
            Scope::Global
        } else {
            Scope::After {
                events: [op(rng)].into(),
                mode: AfterMode::Any,
            }
        };
        specs.push(PropertySpec {
            name: format!("S{i}"),
            kind: PropertyKind::Safety,
            pattern,
            scope,
        });
    }
    specs
}

fn properties_source(specs: &[PropertySpec]) -> String {
    let set =
        |s: &BTreeSet<String>| format!("{{{}}}", s.iter().cloned().collect::<Vec<_>>().join(","));
    specs
        .iter()
        .map(|p| {
            let body = match &p.pattern {
                Pattern::Absence(e) => format!("absence event={e}"),
                Pattern::Existence(e) => format!("existence event={e}"),
                Pattern::Response { trigger, response } => {
                    format!(
                        "response trigger={} response={}",
                        set(trigger),
                        set(response)
                    )
                }
                Pattern::Precedence { first, later } => {
                    format!("precedence first={} later={}", set(first), set(later))
                }
            };
            let scope = match &p.scope {
                Scope::Global => "global".to_string(),
                Scope::After { events, mode } => {
                    let m = match mode {
                        AfterMode::Any => "after-any",
                        AfterMode::AllInAnyOrder => "after-all",
                    };
                    format!("{m}{}", set(events))
                }
            };
            format!("property {} {} {body} scope={scope}\n", p.name, p.kind)
        })
        .collect()
}

/// A random model with its run driven by random choices until it stops.
pub fn random_run(rng: &mut ChaCha8Rng) -> Option<RunState> {
    let ops = 3;
    let def = random_workflow(rng, ops);
    let source = crate::workflow::pretty_print(&def);
    let props = properties_source(&random_properties(rng, ops));
    let model = Model::load(&source, &props).ok()?;
    if model.lts.num_states() > 400 {
        return None;
    }
    let mut run = RunState::new(
        Arc::new(model),
        Scenario::interactive("random"),
        RunOptions {
            ask_interleavings: true,
        },
    );
    run.advance().ok()?;
    loop {
        match run.status().clone() {
            RunStatus::Awaiting { options } => {
                if rng.gen_bool(0.08) {
                    run.inject_ter().ok()?;
                } else {
                    let o = options.choose(rng)?;
                    run.choose(o.transition).ok()?;
                }
            }
            _ => return Some(run),
        }
    }
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct FilterSummary {
    pub cases: usize,
    pub plans_checked: usize,
    pub survivors_executed: usize,
    pub forbidden: usize,
    pub liveness_cases: usize,
    /// Plans where snapshot filtering and full simulation disagreed.
    pub decision_mismatches: usize,
    /// Surviving plans whose execution still hit a safety violation.
    pub unsound: usize,
}

/// Generate runs until `cases` of them stop at a violation that has at
/// least one plan, then check forbidden-behavior filtering on every plan.
pub fn filter_check(seed: u64, cases: usize, k: usize) -> FilterSummary {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut summary = FilterSummary::default();
    let mut attempts = 0;
    while summary.cases < cases && attempts < cases * 200 {
        attempts += 1;
        let Some(run) = random_run(&mut rng) else {
            continue;
        };
        match run.violation() {
            None => continue,
            // safety plans are undo-only; keep a minority of them
            Some(v) if v.kind == PropertyKind::Safety && rng.gen_bool(0.7) => continue,
            Some(_) => {}
        }
        let Ok(report) = plan_for_run(
            &run,
            &PlanOptions {
                k,
                max_plans: Some(200),
                relevant_only: false,
                filter_forbidden: false,
            },
        ) else {
            continue;
        };
        if report.plans.is_empty() {
            continue;
        }
        summary.cases += 1;
        if report.kind == PropertyKind::Liveness {
            summary.liveness_cases += 1;
        }
        let model = run.model();
        let trace = run.trace();
        for plan in &report.plans {
            summary.plans_checked += 1;
            let snapshot_ok = forbidden_by(
                plan,
                &model.lts,
                &trace,
                &model.monitors,
                run.monitor_states(),
            )
            .is_empty();
            let full_ok = accepted_by_full_simulation(plan, &model.lts, &trace, &model.monitors);
            if snapshot_ok != full_ok {
                summary.decision_mismatches += 1;
            }
            if !snapshot_ok {
                summary.forbidden += 1;
            } else {
                let mut exec = run.clone();
                summary.survivors_executed += 1;
                match exec.apply_plan(plan) {
                    Ok(RunStatus::Violated { report }) if report.kind == PropertyKind::Safety => {
                        summary.unsound += 1
                    }
                    Ok(_) => {}
                    Err(_) => summary.unsound += 1,
                }
            }
        }
    }
    summary
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sat_and_dfs_agree_on_random_cases() {
        let s = oracle_check(7, 25, false);
        assert!(
            s.passed(),
            "{:?}",
            s.mismatches.first().map(|m| (&m.sat_only, &m.dfs_only))
        );
        assert!(s.plans_compared > 0);
    }

    #[test]
    fn broken_blocking_is_caught() {
        let s = oracle_check(7, 40, true);
        assert!(!s.passed());
    }

    #[test]
    fn random_workflows_load() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut stopped = 0;
        for _ in 0..30 {
            if let Some(run) = random_run(&mut rng) {
                assert!(!matches!(
                    run.status(),
                    RunStatus::Awaiting { .. } | RunStatus::Running
                ));
                stopped += 1;
            }
        }
        assert!(stopped > 20);
    }

    #[test]
    fn filter_is_sound_on_random_runs() {
        let s = filter_check(11, 20, 6);
        assert_eq!(s.cases, 20);
        assert_eq!(s.decision_mismatches, 0);
        assert_eq!(s.unsound, 0);
    }
}
