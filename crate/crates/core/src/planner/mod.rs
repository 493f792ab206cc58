//! Recovery plan generation, ranking and filtering.

mod encode;
mod plan;

use std::collections::BTreeSet;
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use encode::{encode, Encoding, DEFAULT_CLAUSE_CAP};
pub use plan::{Plan, PlanDisplay, PlanMetrics, UndoStep};

use crate::deps::{
    build_defuse, relevant_change_states, visited_change_states, DependencyRelation,
};
use crate::engine::{ExecutionTrace, RunState};
use crate::lts::{Lts, StateId, TransitionId};
use crate::monitor::{Monitor, MonitorState, PropertyKind};
use crate::sat::{Limits, SatError, SatResult};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PlanError {
    #[error("encoding would need {clauses} clauses (cap {cap})")]
    EncodingTooLarge { clauses: usize, cap: usize },
    #[error(transparent)]
    Sat(#[from] SatError),
    #[error("the run has no violation to recover from")]
    NoViolation,
    #[error("plan length bound must be at least 1")]
    ZeroBound,
}

/// What the planner needs to know about one violation.
#[derive(Debug, Clone)]
pub struct PlanningProblem<'a> {
    pub lts: &'a Lts,
    pub trace: &'a ExecutionTrace,
    /// The violated monitor; its position in the snapshot vectors is
    /// `monitor_index`.
    pub monitor: &'a Monitor,
    pub monitor_index: usize,
    pub candidates: BTreeSet<StateId>,
    pub k: usize,
    /// Stop after this many plans; `None` enumerates all.
    pub max_plans: Option<usize>,
}

impl PlanningProblem<'_> {
    fn undo_to(&self, position: usize) -> Vec<UndoStep> {
        self.trace.steps[position..]
            .iter()
            .rev()
            .map(|s| UndoStep::for_forward(self.lts, s.transition))
            .collect()
    }

    fn make_plan(&self, undo_len: usize, redo: Vec<TransitionId>, discovery: usize) -> Plan {
        let n = self.trace.len();
        let position = n - undo_len;
        Plan::new(
            self.lts,
            n,
            position,
            self.trace.states[position],
            self.undo_to(position),
            redo,
            discovery,
        )
    }
}

/// Undo-only plans: one per candidate change state on the trace within `k`
/// compensation steps of the error state, ranked.
pub fn safety_plans(problem: &PlanningProblem) -> Vec<Plan> {
    let n = problem.trace.len();
    let mut plans = Vec::new();
    for undo_len in 1..=n.min(problem.k) {
        let position = n - undo_len;
        if problem.candidates.contains(&problem.trace.states[position]) {
            let discovery = plans.len();
            plans.push(problem.make_plan(undo_len, Vec::new(), discovery));
            if problem.max_plans.is_some_and(|m| plans.len() >= m) {
                break;
            }
        }
    }
    rank(plans)
}

/// Outcome of SAT-based enumeration.
#[derive(Debug, Clone)]
pub struct Enumeration {
    pub plans: Vec<Plan>,
    pub vars: u32,
    pub clauses: usize,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct EnumerateOptions {
    pub clause_cap: Option<usize>,
    pub limits: Limits,
    /// Test hook: drop the last literal from every blocking clause.
    #[doc(hidden)]
    pub corrupt_blocking: bool,
}

/// Liveness plans: solve, decode, block, repeat. Plans come back in
/// discovery order.
pub fn enumerate(
    problem: &PlanningProblem,
    opts: EnumerateOptions,
) -> Result<Enumeration, PlanError> {
    if problem.k == 0 {
        return Err(PlanError::ZeroBound);
    }
    let enc = encode(problem, opts.clause_cap.unwrap_or(DEFAULT_CLAUSE_CAP))?;
    let mut solver = enc.cnf.solver()?;
    solver.set_limits(opts.limits);
    let mut plans = Vec::new();
    loop {
        if problem.max_plans.is_some_and(|m| plans.len() >= m) {
            break;
        }
        let model = match solver.solve()? {
            SatResult::Sat(m) => m,
            SatResult::Unsat => break,
        };
        let (undo, redo) = enc.decode(|l| model.lit_true(l));
        let mut block = enc.blocking_clause(undo, &redo);
        if opts.corrupt_blocking && block.len() > 1 {
            block.pop();
        }
        solver.add_clause(&block)?;
        let discovery = plans.len();
        plans.push(problem.make_plan(undo, redo, discovery));
    }
    Ok(Enumeration {
        plans,
        vars: enc.num_vars(),
        clauses: enc.num_clauses(),
    })
}

/// Reference enumeration by depth-first search over the same plan space.
pub fn dfs_plans(problem: &PlanningProblem) -> Vec<Plan> {
    let n = problem.trace.len();
    let mon = problem.monitor;
    let mut out = Vec::new();
    for undo_len in 0..=n.min(problem.k) {
        let position = n - undo_len;
        let start = problem.trace.states[position];
        if !problem.candidates.contains(&start) {
            continue;
        }
        let q0 = problem.trace.snapshots[position][problem.monitor_index];
        let mut found = Vec::new();
        let mut path = Vec::new();
        dfs(
            problem.lts,
            mon,
            start,
            q0,
            problem.k - undo_len,
            &mut path,
            &mut found,
        );
        for redo in found {
            let discovery = out.len();
            out.push(problem.make_plan(undo_len, redo, discovery));
        }
    }
    out
}

fn dfs(
    lts: &Lts,
    mon: &Monitor,
    s: StateId,
    q: MonitorState,
    budget: usize,
    path: &mut Vec<TransitionId>,
    found: &mut Vec<Vec<TransitionId>>,
) {
    if budget == 0 {
        return;
    }
    for t in lts.forward_from(s) {
        let next = mon.step(q, &t.label);
        path.push(t.id);
        if !mon.is_green(q) && mon.is_green(next) {
            found.push(path.clone());
        } else {
            dfs(lts, mon, t.dst, next, budget - 1, path, found);
        }
        path.pop();
    }
}

/// Ascending by (length, compensations, discovery).
pub fn rank(mut plans: Vec<Plan>) -> Vec<Plan> {
    plans.sort_by_key(|p| p.metrics);
    plans
}

/// Safety monitors that a plan would drive into red: compensations are
/// checked from the current monitor states, the redo part from the snapshot
/// at the plan's change state.
pub fn forbidden_by(
    plan: &Plan,
    lts: &Lts,
    trace: &ExecutionTrace,
    monitors: &[Monitor],
    current: &[MonitorState],
) -> Vec<usize> {
    let snapshot = &trace.snapshots[plan.change_position];
    let mut hits = Vec::new();
    for (i, m) in monitors.iter().enumerate() {
        if m.kind != PropertyKind::Safety {
            continue;
        }
        let mut q = current[i];
        let mut red = m.is_red(q);
        for u in &plan.undo {
            q = m.step(q, u.label(lts));
            red |= m.is_red(q);
        }
        let mut q = snapshot[i];
        for t in &plan.redo {
            q = m.step(q, &lts.transition(*t).label);
            red |= m.is_red(q);
        }
        if red {
            hits.push(i);
        }
    }
    hits
}

/// Drop plans whose execution would violate a safety property. Survivors
/// keep their order.
pub fn filter_forbidden(
    plans: Vec<Plan>,
    lts: &Lts,
    trace: &ExecutionTrace,
    monitors: &[Monitor],
    current: &[MonitorState],
) -> Vec<Plan> {
    plans
        .into_iter()
        .filter(|p| forbidden_by(p, lts, trace, monitors, current).is_empty())
        .collect()
}

/// The composite path a plan produces: the trace up to the change state,
/// followed by the redo segment.
pub fn validation_trace(plan: &Plan, trace: &ExecutionTrace) -> Vec<TransitionId> {
    trace
        .forward_transitions()
        .take(plan.change_position)
        .chain(plan.redo.iter().copied())
        .collect()
}

/// Whether a plan survives when every safety monitor is run from its initial
/// state over the whole validation trace.
pub fn accepted_by_full_simulation(
    plan: &Plan,
    lts: &Lts,
    trace: &ExecutionTrace,
    monitors: &[Monitor],
) -> bool {
    let path = validation_trace(plan, trace);
    monitors
        .iter()
        .filter(|m| m.kind == PropertyKind::Safety)
        .all(|m| {
            let mut q = m.initial;
            for t in &path {
                q = m.step(q, &lts.transition(*t).label);
                if m.is_red(q) {
                    return false;
                }
            }
            true
        })
}

/// Knobs for planning against a stopped run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PlanOptions {
    pub k: usize,
    pub max_plans: Option<usize>,
    pub relevant_only: bool,
    pub filter_forbidden: bool,
}

impl Default for PlanOptions {
    fn default() -> Self {
        PlanOptions {
            k: 30,
            max_plans: None,
            relevant_only: false,
            filter_forbidden: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlanReport {
    pub kind: PropertyKind,
    pub plans: Vec<Plan>,
    /// Plans before forbidden-behavior filtering.
    pub generated: usize,
    pub candidates: BTreeSet<StateId>,
    /// Encoding size, for liveness violations.
    pub vars: Option<u32>,
    pub clauses: Option<usize>,
    pub seconds: f64,
}

/// Candidate change states for a trace: every visited change state, or only
/// the relevant ones.
pub fn candidate_states(
    run: &RunState,
    trace: &ExecutionTrace,
    relevant_only: bool,
) -> BTreeSet<StateId> {
    let model = run.model();
    if relevant_only {
        let table = build_defuse(&model.lts, &model.workflow);
        let rel = DependencyRelation::build(&model.lts, &table);
        relevant_change_states(&model.lts, &model.workflow, &table, &rel, trace).relevant
    } else {
        visited_change_states(&model.lts, trace)
            .into_iter()
            .map(|(s, _)| s)
            .collect()
    }
}

/// Compute ranked recovery plans for the violation a run stopped at.
pub fn plan_for_run(run: &RunState, opts: &PlanOptions) -> Result<PlanReport, PlanError> {
    let started = Instant::now();
    let report = run.violation().ok_or(PlanError::NoViolation)?;
    if opts.k == 0 {
        return Err(PlanError::ZeroBound);
    }
    let model = run.model();
    let trace = run.trace();
    let candidates = candidate_states(run, &trace, opts.relevant_only);
    let problem = PlanningProblem {
        lts: &model.lts,
        trace: &trace,
        monitor: &model.monitors[report.monitor],
        monitor_index: report.monitor,
        candidates: candidates.clone(),
        k: opts.k,
        max_plans: opts.max_plans,
    };
    let (plans, vars, clauses) = match report.kind {
        PropertyKind::Safety => (safety_plans(&problem), None, None),
        PropertyKind::Liveness => {
            let e = enumerate(&problem, EnumerateOptions::default())?;
            (rank(e.plans), Some(e.vars), Some(e.clauses))
        }
    };
    let generated = plans.len();
    let plans = if opts.filter_forbidden {
        filter_forbidden(
            plans,
            &model.lts,
            &trace,
            &model.monitors,
            run.monitor_states(),
        )
    } else {
        plans
    };
    Ok(PlanReport {
        kind: report.kind,
        plans,
        generated,
        candidates,
        vars,
        clauses,
        seconds: started.elapsed().as_secs_f64(),
    })
}
