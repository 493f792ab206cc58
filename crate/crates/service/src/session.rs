use std::collections::HashMap;
use std::sync::Arc;

use compass_core::engine::{
    parse_scenario, EngineError, Model, RunOptions, RunState, RunStatus, Scenario, ViolationReport,
};
use compass_core::lts::TransitionId;
use compass_core::monitor::{Color, PropertyKind};
use compass_core::planner::{
    forbidden_by, plan_for_run, Plan, PlanError, PlanMetrics, PlanOptions,
};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Phase {
    AwaitingChoice,
    Running,
    Violated,
    Recovering,
    Completed,
}

impl Phase {
    fn of(status: &RunStatus) -> Phase {
        match status {
            RunStatus::Running => Phase::Running,
            RunStatus::Awaiting { .. } => Phase::AwaitingChoice,
            RunStatus::Violated { .. } => Phase::Violated,
            RunStatus::Completed => Phase::Completed,
        }
    }

    /// Whether the phase machine allows moving from `self` to `next`.
    pub fn may_become(self, next: Phase) -> bool {
        use Phase::*;
        self == next
            || matches!(
                (self, next),
                (AwaitingChoice, Running)
                    | (Running, AwaitingChoice | Violated | Completed)
                    | (AwaitingChoice, Violated | Completed)
                    | (Violated, Recovering)
                    | (Recovering, Completed | Violated | AwaitingChoice | Running)
            )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Interactive,
    Scenario,
}

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error("run is {0:?}; the request needs another phase")]
    WrongPhase(Phase),
    #[error("`{0}` is not one of the pending choices")]
    InvalidChoice(String),
    #[error("no plan `{0}` in the latest plan listing")]
    UnknownPlan(String),
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Plan(#[from] PlanError),
}

/// One entry of the session event log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum Event {
    Step {
        seq: usize,
        label: String,
        kind: compass_core::lts::TransitionKind,
    },
    Phase {
        seq: usize,
        phase: Phase,
    },
    Violation {
        seq: usize,
        property: String,
        #[serde(rename = "pendingEvent")]
        pending_event: String,
    },
    PlanExecuted {
        seq: usize,
        #[serde(rename = "planId")]
        plan_id: String,
        actions: Vec<String>,
    },
}

#[derive(Debug, Clone, Serialize)]
pub struct ChoiceView {
    pub id: String,
    pub label: String,
    pub activity: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct MonitorView {
    pub name: String,
    pub kind: PropertyKind,
    pub state: u32,
    pub color: Color,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanView {
    pub id: String,
    pub rank: usize,
    pub change_state: u32,
    pub change_position: usize,
    pub undo: Vec<String>,
    pub redo: Vec<String>,
    pub metrics: PlanMetrics,
    /// Safety properties the plan would violate; only filled when the
    /// forbidden-behavior filter is off.
    pub forbidden_by: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct PlanListing {
    pub k: usize,
    pub relevant: bool,
    pub filter: bool,
    pub generated: usize,
    pub vars: Option<u32>,
    pub clauses: Option<usize>,
    pub seconds: f64,
    pub plans: Vec<PlanView>,
}

#[derive(Debug, Clone, Serialize)]
#[serde(rename_all = "camelCase")]
pub struct SessionView {
    pub id: u64,
    pub workflow: String,
    pub properties: String,
    pub mode: Mode,
    pub phase: Phase,
    pub pending_choices: Vec<ChoiceView>,
    pub violation: Option<ViolationReport>,
    pub monitors: Vec<MonitorView>,
    pub recoveries: u32,
    pub events: usize,
    pub plans: Option<Vec<PlanView>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct PlanKey {
    k: usize,
    relevant: bool,
    filter: bool,
}

/// A run with its event log, plan cache and latest plan listing.
pub struct Session {
    pub id: u64,
    pub workflow: String,
    pub properties: String,
    pub mode: Mode,
    run: RunState,
    phase: Phase,
    events: Vec<Event>,
    history_seen: usize,
    cache: HashMap<PlanKey, PlanListing>,
    cached_plans: HashMap<PlanKey, Vec<Plan>>,
    listing_generation: u64,
    latest: Vec<(String, Plan)>,
    latest_views: Option<Vec<PlanView>>,
}

impl Session {
    pub fn start(
        id: u64,
        workflow: &str,
        properties: &str,
        model: Arc<Model>,
        mode: Mode,
        scenario_text: Option<&str>,
    ) -> Result<Self, SessionError> {
        let scenario = match scenario_text {
            Some(text) => parse_scenario(text)?,
            None => Scenario::interactive("interactive"),
        };
        let run = RunState::new(model, scenario, RunOptions::default());
        let mut s = Session {
            id,
            workflow: workflow.to_string(),
            properties: properties.to_string(),
            mode,
            phase: Phase::Running,
            run,
            events: Vec::new(),
            history_seen: 0,
            cache: HashMap::new(),
            cached_plans: HashMap::new(),
            listing_generation: 0,
            latest: Vec::new(),
            latest_views: None,
        };
        s.events.push(Event::Phase {
            seq: 0,
            phase: Phase::Running,
        });
        s.run.advance()?;
        s.sync();
        Ok(s)
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn run(&self) -> &RunState {
        &self.run
    }

    fn seq(&self) -> usize {
        self.events.len()
    }

    /// Append log entries for whatever the engine did since the last sync.
    fn sync(&mut self) {
        let history = self.run.history();
        for h in &history[self.history_seen..] {
            let seq = self.events.len();
            self.events.push(Event::Step {
                seq,
                label: h.label.clone(),
                kind: h.kind,
            });
        }
        self.history_seen = history.len();
        let next = Phase::of(self.run.status());
        debug_assert!(self.phase.may_become(next), "{:?} -> {next:?}", self.phase);
        if next != self.phase {
            self.set_phase(next);
            if let RunStatus::Violated { report } = self.run.status() {
                let seq = self.seq();
                self.events.push(Event::Violation {
                    seq,
                    property: report.property.clone(),
                    pending_event: report.pending_event.clone(),
                });
            }
        }
        if self.phase != Phase::Violated {
            self.cache.clear();
            self.cached_plans.clear();
            self.latest.clear();
            self.latest_views = None;
        }
    }

    fn set_phase(&mut self, phase: Phase) {
        self.phase = phase;
        let seq = self.seq();
        self.events.push(Event::Phase { seq, phase });
    }

    pub fn view(&self) -> SessionView {
        let model = self.run.model();
        let pending_choices = match self.run.status() {
            RunStatus::Awaiting { options } => options
                .iter()
                .map(|o| ChoiceView {
                    id: o.transition.0.to_string(),
                    label: o.label.clone(),
                    activity: o.activity.clone(),
                })
                .collect(),
            _ => Vec::new(),
        };
        let monitors = model
            .monitors
            .iter()
            .zip(self.run.monitor_states())
            .map(|(m, q)| MonitorView {
                name: m.name.clone(),
                kind: m.kind,
                state: q.number(),
                color: m.color_of(*q),
            })
            .collect();
        SessionView {
            id: self.id,
            workflow: self.workflow.clone(),
            properties: self.properties.clone(),
            mode: self.mode,
            phase: self.phase,
            pending_choices,
            violation: self.run.violation().cloned(),
            monitors,
            recoveries: self.run.recoveries(),
            events: self.events.len(),
            plans: self.latest_views.clone(),
        }
    }

    /// Answer a pending choice, by transition id or by label.
    pub fn answer(&mut self, choice: &str) -> Result<(), SessionError> {
        let RunStatus::Awaiting { options } = self.run.status() else {
            return Err(SessionError::WrongPhase(self.phase));
        };
        let tid = options
            .iter()
            .find(|o| o.transition.0.to_string() == choice || o.label == choice)
            .map(|o| o.transition)
            .ok_or_else(|| SessionError::InvalidChoice(choice.to_string()))?;
        self.set_phase(Phase::Running);
        self.run.choose(tid)?;
        self.sync();
        Ok(())
    }

    /// Terminate the run at its current point, as an abrupt client exit would.
    pub fn inject_ter(&mut self) -> Result<(), SessionError> {
        if self.phase != Phase::AwaitingChoice {
            return Err(SessionError::WrongPhase(self.phase));
        }
        self.set_phase(Phase::Running);
        self.run.inject_ter()?;
        if matches!(self.run.status(), RunStatus::Running) {
            self.run.advance()?;
        }
        self.sync();
        Ok(())
    }

    /// Ranked plans for the current violation, cached per options. Each
    /// call issues fresh plan ids; earlier ids stop resolving.
    pub fn plans(
        &mut self,
        k: usize,
        relevant: bool,
        filter: bool,
    ) -> Result<PlanListing, SessionError> {
        if self.phase != Phase::Violated {
            return Err(SessionError::WrongPhase(self.phase));
        }
        let key = PlanKey {
            k,
            relevant,
            filter,
        };
        if !self.cache.contains_key(&key) {
            let (listing, plans) = self.compute(key)?;
            self.cache.insert(key, listing);
            self.cached_plans.insert(key, plans);
        }
        self.listing_generation += 1;
        let generation = self.listing_generation;
        let mut listing = self.cache[&key].clone();
        self.latest.clear();
        for (rank, view) in listing.plans.iter_mut().enumerate() {
            view.id = format!("{generation}-{}", rank + 1);
            self.latest
                .push((view.id.clone(), self.cached_plans[&key][rank].clone()));
        }
        self.latest_views = Some(listing.plans.clone());
        Ok(listing)
    }

    fn compute(&self, key: PlanKey) -> Result<(PlanListing, Vec<Plan>), SessionError> {
        let model = self.run.model();
        if key.k == 0 {
            let listing = PlanListing {
                k: 0,
                relevant: key.relevant,
                filter: key.filter,
                generated: 0,
                vars: None,
                clauses: None,
                seconds: 0.0,
                plans: Vec::new(),
            };
            return Ok((listing, Vec::new()));
        }
        let report = plan_for_run(
            &self.run,
            &PlanOptions {
                k: key.k,
                max_plans: None,
                relevant_only: key.relevant,
                filter_forbidden: key.filter,
            },
        )?;
        let trace = self.run.trace();
        let views = report
            .plans
            .iter()
            .enumerate()
            .map(|(rank, p)| {
                let forbidden = if key.filter {
                    Vec::new()
                } else {
                    forbidden_by(
                        p,
                        &model.lts,
                        &trace,
                        &model.monitors,
                        self.run.monitor_states(),
                    )
                    .into_iter()
                    .map(|i| model.monitors[i].name.clone())
                    .collect()
                };
                PlanView {
                    id: String::new(),
                    rank: rank + 1,
                    change_state: p.change_state.0,
                    change_position: p.change_position,
                    undo: p
                        .undo
                        .iter()
                        .map(|u| u.label(&model.lts).to_string())
                        .collect(),
                    redo: p
                        .redo_labels(&model.lts)
                        .into_iter()
                        .map(String::from)
                        .collect(),
                    metrics: p.metrics,
                    forbidden_by: forbidden,
                }
            })
            .collect();
        let listing = PlanListing {
            k: key.k,
            relevant: key.relevant,
            filter: key.filter,
            generated: report.generated,
            vars: report.vars,
            clauses: report.clauses,
            seconds: report.seconds,
            plans: views,
        };
        Ok((listing, report.plans))
    }

    /// Execute a plan from the latest listing.
    pub fn execute(&mut self, plan_id: &str) -> Result<(), SessionError> {
        if self.phase != Phase::Violated {
            return Err(SessionError::WrongPhase(self.phase));
        }
        let plan = self
            .latest
            .iter()
            .find(|(id, _)| id == plan_id)
            .map(|(_, p)| p.clone())
            .ok_or_else(|| SessionError::UnknownPlan(plan_id.to_string()))?;
        self.set_phase(Phase::Recovering);
        let seq = self.seq();
        self.events.push(Event::PlanExecuted {
            seq,
            plan_id: plan_id.to_string(),
            actions: plan
                .labels(&self.run.model().lts)
                .into_iter()
                .map(String::from)
                .collect(),
        });
        self.cache.clear();
        self.cached_plans.clear();
        self.latest.clear();
        self.latest_views = None;
        self.run.execute_plan(&plan)?;
        self.sync();
        Ok(())
    }

    /// Transition id for a choice label, if it is currently offered.
    pub fn choice_id(&self, label: &str) -> Option<TransitionId> {
        match self.run.status() {
            RunStatus::Awaiting { options } => options
                .iter()
                .find(|o| o.label == label)
                .map(|o| o.transition),
            _ => None,
        }
    }
}
