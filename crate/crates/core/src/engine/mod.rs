//! Scenario-driven and interactive execution of a workflow over its LTS.
//!
//! Every event passes through the monitors before it is appended. If any
//! monitor would enter a red state the run halts with the event pending.

mod scenario;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

pub use scenario::{parse_scenario, Scenario, Script};

use crate::lts::{self, Lts, LtsError, StateId, Transition, TransitionId, TransitionKind};
use crate::monitor::{self, Monitor, MonitorError, MonitorState, PropertyKind};
use crate::planner::Plan;
use crate::workflow::{
    self, ActivityId, ActivityKind, WorkflowDef, WorkflowError, NOOP_COMPENSATION,
};

#[derive(Debug, thiserror::Error)]
pub enum EngineError {
    #[error(transparent)]
    Workflow(#[from] WorkflowError),
    #[error(transparent)]
    Lts(#[from] LtsError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error("scenario line {line}: {message}")]
    Scenario { line: usize, message: String },
    #[error("script answer `{answer}` at {state} is not among {available:?}")]
    ScriptMismatch {
        state: StateId,
        answer: String,
        available: Vec<String>,
    },
    #[error("deadlock at {0}: no enabled transition")]
    Deadlock(StateId),
    #[error("{0} does not occur on the trace")]
    NotOnTrace(StateId),
    #[error("plan is not applicable: {0}")]
    PlanInapplicable(String),
    #[error("transition {0:?} is not an available choice")]
    InvalidChoice(TransitionId),
    #[error("the run is not waiting for input")]
    NotAwaiting,
    #[error("bad trace file: {0}")]
    TraceFormat(String),
}

/// A compiled workflow together with its monitors.
#[derive(Debug)]
pub struct Model {
    pub workflow: WorkflowDef,
    pub lts: Lts,
    pub monitors: Vec<Monitor>,
    pub workflow_source: String,
    pub properties_source: String,
}

impl Model {
    pub fn load(workflow_source: &str, properties_source: &str) -> Result<Model, EngineError> {
        let workflow = workflow::parse_workflow(workflow_source)?;
        let lts = lts::compile(&workflow)?;
        let monitors = monitor::load_monitors(properties_source)?;
        Ok(Model {
            workflow,
            lts,
            monitors,
            workflow_source: workflow_source.to_string(),
            properties_source: properties_source.to_string(),
        })
    }

    pub fn tbs() -> Model {
        Model::load(
            crate::fixtures::TBS_WORKFLOW,
            crate::fixtures::TBS_PROPERTIES,
        )
        .expect("bundled fixture compiles")
    }

    pub fn initial_monitors(&self) -> Vec<MonitorState> {
        self.monitors.iter().map(|m| m.initial).collect()
    }

    pub fn monitor_index(&self, name: &str) -> Option<usize> {
        self.monitors.iter().position(|m| m.name == name)
    }

    pub fn safety_monitors(&self) -> impl Iterator<Item = (usize, &Monitor)> {
        self.monitors
            .iter()
            .enumerate()
            .filter(|(_, m)| m.kind == PropertyKind::Safety)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ViolationReport {
    pub property: String,
    pub monitor: usize,
    pub kind: PropertyKind,
    pub error_state: StateId,
    pub pending_event: String,
    pub pending_transition: TransitionId,
    pub trace_position: usize,
}

/// A selectable continuation offered while the run waits for input.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceOption {
    pub transition: TransitionId,
    pub label: String,
    pub activity: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum RunStatus {
    Running,
    Awaiting { options: Vec<ChoiceOption> },
    Violated { report: ViolationReport },
    Completed,
}

/// One delivered event, as recorded in the run history.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HistoryStep {
    pub from: StateId,
    pub transition: TransitionId,
    pub label: String,
    pub kind: TransitionKind,
    pub to: StateId,
    pub monitors: Vec<MonitorState>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceStep {
    pub transition: TransitionId,
    pub label: String,
}

/// The effective forward path of a run: states s0..sn, the steps between
/// them and the monitor vector recorded at every state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExecutionTrace {
    pub states: Vec<StateId>,
    pub steps: Vec<TraceStep>,
    pub snapshots: Vec<Vec<MonitorState>>,
    /// Forward transitions still to be compensated, most recent last.
    pub compensation_stack: Vec<TransitionId>,
}

impl ExecutionTrace {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn last_state(&self) -> StateId {
        *self.states.last().expect("trace has an initial state")
    }

    pub fn position_of(&self, state: StateId) -> Option<usize> {
        self.states.iter().position(|s| *s == state)
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.label.as_str())
    }

    pub fn forward_transitions(&self) -> impl Iterator<Item = TransitionId> + '_ {
        self.steps.iter().map(|s| s.transition)
    }
}

/// Monitor vector recorded at the first occurrence of `state`.
pub fn snapshot_at(trace: &ExecutionTrace, state: StateId) -> Result<&[MonitorState], EngineError> {
    trace
        .position_of(state)
        .map(|i| trace.snapshots[i].as_slice())
        .ok_or(EngineError::NotOnTrace(state))
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct Cursor {
    script: Script,
    choice_pos: usize,
    branch_pos: BTreeMap<String, usize>,
    outcome_pos: BTreeMap<String, usize>,
    injected: Vec<bool>,
}

impl Cursor {
    fn new(script: Script) -> Self {
        let injected = vec![false; script.inject_ter_at.len()];
        Cursor {
            script,
            injected,
            ..Default::default()
        }
    }

    fn take_injection(&mut self, label: &str) -> bool {
        for (i, at) in self.script.inject_ter_at.iter().enumerate() {
            if at == label && !self.injected[i] {
                self.injected[i] = true;
                return true;
            }
        }
        false
    }

    fn next_outcome(&mut self, op: &str) -> Option<String> {
        let list = self.script.outcomes.get(op)?;
        let pos = self.outcome_pos.entry(op.to_string()).or_default();
        let tag = list.get(*pos).cloned();
        *pos += 1;
        tag
    }
}

enum Resolution {
    Take(TransitionId),
    Ask(Vec<TransitionId>),
}

/// Options that change how choices are resolved.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunOptions {
    /// Ask for flow interleavings that the script does not pin, instead of
    /// running branches in index order.
    pub ask_interleavings: bool,
}

/// Serializable state of a run, without the model.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunRecord {
    pub scenario: Scenario,
    pub options: RunOptions,
    pub history: Vec<HistoryStep>,
    pub status: RunStatus,
    pub recoveries: u32,
    pub outcomes: Vec<(usize, String)>,
    cursor: Cursor,
}

/// A self-contained trace file: sources plus the run record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceFile {
    pub workflow: String,
    pub properties: String,
    pub run: RunRecord,
}

#[derive(Debug, Clone)]
pub struct RunState {
    model: Arc<Model>,
    scenario: Scenario,
    options: RunOptions,
    cursor: Cursor,
    history: Vec<HistoryStep>,
    live: Vec<TransitionId>,
    live_snapshots: Vec<Vec<MonitorState>>,
    live_states: Vec<StateId>,
    monitors: Vec<MonitorState>,
    status: RunStatus,
    recoveries: u32,
    outcomes: Vec<(usize, String)>,
}

impl RunState {
    pub fn new(model: Arc<Model>, scenario: Scenario, options: RunOptions) -> Self {
        let monitors = model.initial_monitors();
        let s0 = model.lts.initial_state();
        RunState {
            cursor: Cursor::new(scenario.script.clone()),
            scenario,
            options,
            history: Vec::new(),
            live: Vec::new(),
            live_snapshots: vec![monitors.clone()],
            live_states: vec![s0],
            monitors,
            status: RunStatus::Running,
            recoveries: 0,
            outcomes: Vec::new(),
            model,
        }
    }

    pub fn model(&self) -> &Arc<Model> {
        &self.model
    }

    pub fn status(&self) -> &RunStatus {
        &self.status
    }

    pub fn current_state(&self) -> StateId {
        *self.live_states.last().expect("nonempty")
    }

    pub fn monitor_states(&self) -> &[MonitorState] {
        &self.monitors
    }

    pub fn history(&self) -> &[HistoryStep] {
        &self.history
    }

    pub fn recoveries(&self) -> u32 {
        self.recoveries
    }

    pub fn violation(&self) -> Option<&ViolationReport> {
        match &self.status {
            RunStatus::Violated { report } => Some(report),
            _ => None,
        }
    }

    /// Partner outcome tags recorded so far, keyed by history position.
    pub fn outcomes(&self) -> &[(usize, String)] {
        &self.outcomes
    }

    /// The effective forward path (undone steps removed).
    pub fn trace(&self) -> ExecutionTrace {
        let lts = &self.model.lts;
        ExecutionTrace {
            states: self.live_states.clone(),
            steps: self
                .live
                .iter()
                .map(|t| TraceStep {
                    transition: *t,
                    label: lts.transition(*t).label.clone(),
                })
                .collect(),
            snapshots: self.live_snapshots.clone(),
            compensation_stack: self
                .live
                .iter()
                .copied()
                .filter(|t| lts.transition(*t).kind == TransitionKind::Forward)
                .collect(),
        }
    }

    fn record(&mut self, t: &Transition) {
        self.history.push(HistoryStep {
            from: t.src,
            transition: t.id,
            label: t.label.clone(),
            kind: t.kind,
            to: t.dst,
            monitors: self.monitors.clone(),
        });
    }

    /// Deliver one event to the monitors. Returns the violation instead of
    /// delivering if a monitor would turn red.
    fn intercept(&self, label: &str, t: &Transition) -> Result<Vec<MonitorState>, ViolationReport> {
        let mut next = Vec::with_capacity(self.monitors.len());
        for (i, (m, q)) in self.model.monitors.iter().zip(&self.monitors).enumerate() {
            let d = m.step(*q, label);
            if m.is_red(d) && !m.is_red(*q) {
                return Err(ViolationReport {
                    property: m.name.clone(),
                    monitor: i,
                    kind: m.kind,
                    error_state: t.src,
                    pending_event: label.to_string(),
                    pending_transition: t.id,
                    trace_position: self.live.len(),
                });
            }
            next.push(d);
        }
        Ok(next)
    }

    /// Append a forward or termination step through interception.
    fn deliver(&mut self, tid: TransitionId) -> bool {
        let model = Arc::clone(&self.model);
        let t = model.lts.transition(tid);
        match self.intercept(&t.label, t) {
            Err(report) => {
                self.status = RunStatus::Violated { report };
                false
            }
            Ok(next) => {
                self.monitors = next;
                self.record(t);
                if let Some(op) = self.invoke_op(t) {
                    if let Some(tag) = self.cursor.next_outcome(&op) {
                        self.outcomes.push((self.history.len() - 1, tag));
                    }
                }
                self.live.push(tid);
                self.live_states.push(t.dst);
                self.live_snapshots.push(self.monitors.clone());
                if t.kind == TransitionKind::Termination {
                    self.status = RunStatus::Completed;
                }
                true
            }
        }
    }

    fn invoke_op(&self, t: &Transition) -> Option<String> {
        let act = self.model.workflow.activity(t.activity.as_ref()?)?;
        match &act.kind {
            ActivityKind::Invoke(inv) => Some(inv.op.clone()),
            _ => None,
        }
    }

    fn activity_of(&self, t: &Transition) -> Option<&ActivityKind> {
        t.activity
            .as_ref()
            .and_then(|a| self.model.workflow.activity(a))
            .map(|a| &a.kind)
    }

    fn resolve(&mut self, enabled: Vec<TransitionId>) -> Result<Resolution, EngineError> {
        let model = Arc::clone(&self.model);
        let lts = &model.lts;
        let mut cands = enabled;
        let mut depth = 0;
        // narrow down flow interleavings level by level
        loop {
            if cands.len() == 1 {
                return Ok(Resolution::Take(cands[0]));
            }
            let tags: Vec<_> = cands
                .iter()
                .map(|t| lts.transition(*t).flow_tags.get(depth))
                .collect();
            let Some(Some(first)) = tags.first() else {
                break;
            };
            if tags.iter().any(|t| t.map(|t| &t.flow) != Some(&first.flow)) {
                break;
            }
            let branches: Vec<u32> = tags.iter().map(|t| t.unwrap().branch).collect();
            if branches.iter().all(|b| *b == branches[0]) {
                depth += 1;
                continue;
            }
            let priority = self.cursor.script.interleave.get(first.flow.as_str());
            if priority.is_none() && self.options.ask_interleavings {
                return Ok(Resolution::Ask(cands));
            }
            let rank = |b: u32| match priority.and_then(|p| p.iter().position(|x| *x == b)) {
                Some(i) => (0, i as u32),
                None => (1, b),
            };
            let best = branches.iter().map(|b| rank(*b)).min().unwrap();
            cands = cands
                .into_iter()
                .zip(&branches)
                .filter(|(_, b)| rank(**b) == best)
                .map(|(t, _)| t)
                .collect();
            depth += 1;
        }

        let t0 = lts.transition(cands[0]);
        let labels: Vec<String> = cands
            .iter()
            .map(|t| lts.transition(*t).label.clone())
            .collect();
        let find = |label: &str| {
            cands
                .iter()
                .copied()
                .find(|t| lts.transition(*t).label == label)
        };
        match self.activity_of(t0) {
            Some(ActivityKind::If { .. } | ActivityKind::While { .. }) => {
                let id: &ActivityId = t0.activity.as_ref().unwrap();
                let Some(list) = self.cursor.script.branches.get(id.as_str()) else {
                    return Ok(Resolution::Ask(cands));
                };
                let pos = self.cursor.branch_pos.entry(id.0.clone()).or_default();
                let Some(value) = list.get(*pos).copied() else {
                    return Ok(Resolution::Ask(cands));
                };
                *pos += 1;
                let label = lts::valuation_label(id, value);
                find(&label)
                    .map(Resolution::Take)
                    .ok_or(EngineError::ScriptMismatch {
                        state: t0.src,
                        answer: label,
                        available: labels,
                    })
            }
            Some(ActivityKind::Pick(_)) => {
                let Some(answer) = self
                    .cursor
                    .script
                    .choices
                    .get(self.cursor.choice_pos)
                    .cloned()
                else {
                    return Ok(Resolution::Ask(cands));
                };
                self.cursor.choice_pos += 1;
                find(&answer)
                    .map(Resolution::Take)
                    .ok_or(EngineError::ScriptMismatch {
                        state: t0.src,
                        answer,
                        available: labels,
                    })
            }
            _ => Ok(Resolution::Ask(cands)),
        }
    }

    fn options_for(&self, cands: &[TransitionId]) -> Vec<ChoiceOption> {
        cands
            .iter()
            .map(|t| {
                let t = self.model.lts.transition(*t);
                ChoiceOption {
                    transition: t.id,
                    label: t.label.clone(),
                    activity: t.activity.as_ref().map(|a| a.0.clone()),
                }
            })
            .collect()
    }

    /// Take one step if possible. Returns false once the run stops moving.
    fn step_once(&mut self) -> Result<bool, EngineError> {
        if self.status != RunStatus::Running {
            return Ok(false);
        }
        let model = Arc::clone(&self.model);
        let lts = &model.lts;
        let s = self.current_state();
        let enabled: Vec<TransitionId> = lts.forward_from(s).map(|t| t.id).collect();
        if enabled.is_empty() {
            if lts.final_states().contains(&s) {
                let ter = lts.termination_from(s).ok_or(EngineError::Deadlock(s))?;
                self.deliver(ter.id);
                return Ok(true);
            }
            return Err(EngineError::Deadlock(s));
        }
        let chosen = match self.resolve(enabled)? {
            Resolution::Take(t) => t,
            Resolution::Ask(cands) => {
                self.status = RunStatus::Awaiting {
                    options: self.options_for(&cands),
                };
                return Ok(false);
            }
        };
        self.take(chosen);
        Ok(true)
    }

    fn take(&mut self, chosen: TransitionId) {
        let model = Arc::clone(&self.model);
        let t = model.lts.transition(chosen);
        if self.cursor.take_injection(&t.label) {
            let ter = model
                .lts
                .termination_from(t.src)
                .expect("every state has a termination edge");
            self.deliver(ter.id);
        } else {
            self.deliver(chosen);
        }
    }

    /// Run until completion, a violation, or a choice the script cannot answer.
    pub fn advance(&mut self) -> Result<&RunStatus, EngineError> {
        while self.step_once()? {}
        Ok(&self.status)
    }

    /// Answer a pending choice and keep running.
    pub fn choose(&mut self, transition: TransitionId) -> Result<&RunStatus, EngineError> {
        let RunStatus::Awaiting { options } = &self.status else {
            return Err(EngineError::NotAwaiting);
        };
        if !options.iter().any(|o| o.transition == transition) {
            return Err(EngineError::InvalidChoice(transition));
        }
        self.status = RunStatus::Running;
        self.take(transition);
        self.advance()
    }

    /// Fault injection from an interactive caller: terminate right now.
    pub fn inject_ter(&mut self) -> Result<&RunStatus, EngineError> {
        if !matches!(self.status, RunStatus::Awaiting { .. } | RunStatus::Running) {
            return Err(EngineError::NotAwaiting);
        }
        let ter = self
            .model
            .lts
            .termination_from(self.current_state())
            .ok_or(EngineError::Deadlock(self.current_state()))?
            .id;
        self.status = RunStatus::Running;
        self.deliver(ter);
        Ok(&self.status)
    }

    /// Apply a recovery plan computed for the current violation: undo steps
    /// emit their compensations through the monitors, monitors are restored
    /// from the snapshot at the change state, then the redo steps run and the
    /// run continues under the scenario's recovery directives.
    pub fn execute_plan(&mut self, plan: &Plan) -> Result<&RunStatus, EngineError> {
        self.apply_plan(plan)?;
        self.advance()
    }

    /// Apply a plan's undo and redo steps without continuing the run.
    pub fn apply_plan(&mut self, plan: &Plan) -> Result<&RunStatus, EngineError> {
        if plan.is_empty() {
            return Ok(&self.status);
        }
        let model = Arc::clone(&self.model);
        let lts = &model.lts;
        if plan.origin_len != self.live.len() || self.violation().is_none() {
            return Err(EngineError::PlanInapplicable(
                "the run has moved since the plan was computed".into(),
            ));
        }
        if plan.undo.len() > self.live.len() {
            return Err(EngineError::PlanInapplicable(
                "undo is longer than the trace".into(),
            ));
        }
        for (u, t) in plan.undo.iter().zip(self.live.iter().rev()) {
            if u.forward != *t {
                return Err(EngineError::PlanInapplicable(
                    "undo does not reverse the trace suffix".into(),
                ));
            }
        }
        let target = self.live.len() - plan.undo.len();
        if self.live_states[target] != plan.change_state {
            return Err(EngineError::PlanInapplicable(
                "undo does not end at the change state".into(),
            ));
        }
        self.status = RunStatus::Running;
        for u in &plan.undo {
            if let Some(c) = u.compensation {
                let ct = lts.transition(c);
                match self.intercept(&ct.label, ct) {
                    Err(report) => {
                        self.status = RunStatus::Violated { report };
                        return Ok(&self.status);
                    }
                    Ok(next) => {
                        self.monitors = next;
                        self.record(ct);
                    }
                }
            } else {
                let ft = lts.transition(u.forward);
                self.history.push(HistoryStep {
                    from: ft.dst,
                    transition: ft.id,
                    label: NOOP_COMPENSATION.to_string(),
                    kind: TransitionKind::Compensation,
                    to: ft.src,
                    monitors: self.monitors.clone(),
                });
            }
            self.live.pop();
            self.live_states.pop();
            self.live_snapshots.pop();
        }
        self.monitors = self.live_snapshots.last().expect("nonempty").clone();
        self.recoveries += 1;
        self.cursor = Cursor::new(self.scenario.recovery.clone());
        for &t in &plan.redo {
            if lts.transition(t).src != self.current_state() {
                return Err(EngineError::PlanInapplicable("redo is not a path".into()));
            }
            if !self.deliver(t) {
                return Ok(&self.status);
            }
        }
        Ok(&self.status)
    }

    pub fn to_record(&self) -> RunRecord {
        RunRecord {
            scenario: self.scenario.clone(),
            options: self.options,
            history: self.history.clone(),
            status: self.status.clone(),
            recoveries: self.recoveries,
            outcomes: self.outcomes.clone(),
            cursor: self.cursor.clone(),
        }
    }

    /// Rebuild a run from its record by replaying the history.
    pub fn from_record(model: Arc<Model>, record: RunRecord) -> Result<Self, EngineError> {
        let mut run = RunState::new(model, record.scenario.clone(), record.options);
        let bad = |m: &str| EngineError::TraceFormat(m.to_string());
        for h in &record.history {
            let lts = &run.model.lts;
            if h.transition.index() >= lts.transitions().len() {
                return Err(bad("unknown transition"));
            }
            let t = lts.transition(h.transition);
            let noop = h.kind == TransitionKind::Compensation && h.label == NOOP_COMPENSATION;
            let consistent = if noop {
                t.kind == TransitionKind::Forward && t.dst == h.from && t.src == h.to
            } else {
                t.src == h.from && t.dst == h.to && t.label == h.label && t.kind == h.kind
            };
            if !consistent {
                return Err(bad("history does not match the model"));
            }
            if h.kind == TransitionKind::Compensation {
                let undone = if noop { Some(t.id) } else { t.reverses };
                if run.live.last().copied() != undone {
                    return Err(bad("compensation out of order"));
                }
                run.live.pop();
                run.live_states.pop();
                run.live_snapshots.pop();
            } else {
                if run.current_state() != t.src {
                    return Err(bad("history is not a path"));
                }
                run.live.push(t.id);
                run.live_states.push(t.dst);
                run.live_snapshots.push(h.monitors.clone());
            }
            run.monitors = h.monitors.clone();
        }
        if let Some(last) = record.history.last() {
            if last.kind == TransitionKind::Compensation {
                run.monitors = run.live_snapshots.last().unwrap().clone();
            }
        }
        run.history = record.history;
        run.status = record.status;
        run.recoveries = record.recoveries;
        run.outcomes = record.outcomes;
        run.cursor = record.cursor;
        Ok(run)
    }

    pub fn to_trace_file(&self) -> TraceFile {
        TraceFile {
            workflow: self.model.workflow_source.clone(),
            properties: self.model.properties_source.clone(),
            run: self.to_record(),
        }
    }

    pub fn from_trace_file(file: TraceFile) -> Result<Self, EngineError> {
        let model = Arc::new(Model::load(&file.workflow, &file.properties)?);
        RunState::from_record(model, file.run)
    }
}

/// Start a run and drive it as far as the scenario allows.
pub fn run(model: Arc<Model>, scenario: Scenario) -> Result<RunState, EngineError> {
    let mut state = RunState::new(model, scenario, RunOptions::default());
    state.advance()?;
    Ok(state)
}

pub fn trace_to_json(run: &RunState) -> String {
    serde_json::to_string_pretty(&run.to_trace_file()).expect("trace serializes")
}

pub fn trace_from_json(text: &str) -> Result<RunState, EngineError> {
    let file: TraceFile =
        serde_json::from_str(text).map_err(|e| EngineError::TraceFormat(e.to_string()))?;
    RunState::from_trace_file(file)
}

/// Replay events through fresh monitors, independent of the engine.
pub fn replay_monitors<'a>(
    monitors: &[Monitor],
    events: impl IntoIterator<Item = &'a str> + Clone,
) -> Vec<MonitorState> {
    monitors
        .iter()
        .map(|m| m.run(m.initial, events.clone()))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::lts::TER;

    fn tbs_run(scn: &str) -> RunState {
        run(Arc::new(Model::tbs()), parse_scenario(scn).unwrap()).unwrap()
    }

    #[test]
    fn t1_halts_before_not_same_dates() {
        let r = tbs_run(fixtures::T1_SCENARIO);
        let v = r.violation().expect("violation");
        assert_eq!(v.property, "P1");
        assert_eq!(v.pending_event, "notSameDates");
        assert_eq!(r.trace().len(), 21);
    }

    #[test]
    fn t2_halts_before_termination() {
        let r = tbs_run(fixtures::T2_SCENARIO);
        let v = r.violation().expect("violation");
        assert_eq!(v.property, "P2");
        assert_eq!(v.kind, PropertyKind::Liveness);
        assert_eq!(v.pending_event, TER);
        assert_eq!(r.trace().len(), 14);
    }

    #[test]
    fn empty_workflow_completes_with_termination_only() {
        let model = Arc::new(Model::load("workflow E { seq { } }", "").unwrap());
        let r = run(model, Scenario::interactive("e")).unwrap();
        assert_eq!(*r.status(), RunStatus::Completed);
        let labels: Vec<_> = r.trace().labels().map(String::from).collect();
        assert_eq!(labels, vec![TER]);
    }

    #[test]
    fn missing_answers_pause_the_run() {
        let r = tbs_run("scenario partial\n");
        let RunStatus::Awaiting { options } = r.status() else {
            panic!("expected to wait, got {:?}", r.status());
        };
        assert_eq!(options.len(), 2);
    }

    #[test]
    fn script_mismatch_is_reported() {
        let model = Arc::new(Model::tbs());
        let err = run(
            model,
            parse_scenario("branch flightRetry false\nbranch availFlights true\nchoice nowhere\n")
                .unwrap(),
        )
        .unwrap_err();
        assert!(matches!(err, EngineError::ScriptMismatch { .. }));
    }

    #[test]
    fn snapshot_lookup() {
        let r = tbs_run(fixtures::T2_SCENARIO);
        let t = r.trace();
        let s0 = snapshot_at(&t, t.states[0]).unwrap();
        assert_eq!(s0, r.model().initial_monitors().as_slice());
        let far = StateId(9999);
        assert!(matches!(
            snapshot_at(&t, far),
            Err(EngineError::NotOnTrace(_))
        ));
    }

    #[test]
    fn trace_round_trips_through_json() {
        let r = tbs_run(fixtures::T1_SCENARIO);
        let text = trace_to_json(&r);
        let back = trace_from_json(&text).unwrap();
        assert_eq!(back.trace(), r.trace());
        assert_eq!(trace_to_json(&back), text);
    }

    fn plans_for(r: &RunState, k: usize) -> Vec<Plan> {
        crate::planner::plan_for_run(
            r,
            &crate::planner::PlanOptions {
                k,
                ..Default::default()
            },
        )
        .unwrap()
        .plans
    }

    #[test]
    fn t2_recovers_through_airport_car() {
        let mut r = tbs_run(fixtures::T2_SCENARIO);
        let plans = plans_for(&r, 12);
        let lts = &r.model().lts;
        let p2b = plans
            .iter()
            .find(|p| p.redo_labels(lts).first() == Some(&"pickAirport"))
            .unwrap()
            .clone();
        let status = r.execute_plan(&p2b).unwrap().clone();
        assert_eq!(status, RunStatus::Completed);
        let a2 = r.model().monitor_index("P2").unwrap();
        let m = &r.model().monitors[a2];
        assert!(m.is_green(r.monitor_states()[a2]));
        assert!(r.history().iter().any(|h| h.label == "releaseShuttle"));
    }

    #[test]
    fn t1_recovers_from_flow_entry() {
        let mut r = tbs_run(fixtures::T1_SCENARIO);
        let plans = plans_for(&r, 25);
        let longest = plans
            .iter()
            .max_by_key(|p| p.metrics.length)
            .unwrap()
            .clone();
        assert_eq!(longest.change_position, 1);
        let status = r.execute_plan(&longest).unwrap().clone();
        assert_eq!(status, RunStatus::Completed);
        assert!(r.trace().labels().any(|l| l == "sameDates"));
        assert!(!r.trace().labels().any(|l| l == "notSameDates"));
    }

    #[test]
    fn stale_plan_is_rejected() {
        let mut r = tbs_run(fixtures::T2_SCENARIO);
        let mut plan = plans_for(&r, 10)[0].clone();
        plan.origin_len += 1;
        assert!(matches!(
            r.execute_plan(&plan),
            Err(EngineError::PlanInapplicable(_))
        ));
    }
}
