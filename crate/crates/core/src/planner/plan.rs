use std::fmt;

use serde::{Deserialize, Serialize};

use crate::lts::{Lts, StateId, TransitionId, TransitionKind};
use crate::workflow::NOOP_COMPENSATION;

/// One backward step: the forward transition being reversed and the
/// compensation that reverses it, if the activity declares one.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct UndoStep {
    pub forward: TransitionId,
    pub compensation: Option<TransitionId>,
}

impl UndoStep {
    pub fn label<'a>(&self, lts: &'a Lts) -> &'a str {
        match self.compensation {
            Some(c) => &lts.transition(c).label,
            None => NOOP_COMPENSATION,
        }
    }

    pub fn for_forward(lts: &Lts, forward: TransitionId) -> Self {
        UndoStep {
            forward,
            compensation: lts.compensation_of(forward).map(|c| c.id),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct PlanMetrics {
    pub length: usize,
    pub compensations: usize,
    pub discovery: usize,
}

/// A recovery plan: go back along the executed trace to a change state, then
/// (for liveness violations) take an alternative forward path.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Plan {
    pub undo: Vec<UndoStep>,
    pub change_state: StateId,
    /// Index of the change state on the trace's state sequence.
    pub change_position: usize,
    pub redo: Vec<TransitionId>,
    /// Trace length the plan was computed against.
    pub origin_len: usize,
    pub metrics: PlanMetrics,
}

impl Plan {
    pub fn new(
        lts: &Lts,
        origin_len: usize,
        change_position: usize,
        change_state: StateId,
        undo: Vec<UndoStep>,
        redo: Vec<TransitionId>,
        discovery: usize,
    ) -> Self {
        debug_assert!(redo
            .iter()
            .all(|t| lts.transition(*t).kind == TransitionKind::Forward));
        let compensations = undo.iter().filter(|u| u.compensation.is_some()).count();
        Plan {
            metrics: PlanMetrics {
                length: undo.len() + redo.len(),
                compensations,
                discovery,
            },
            undo,
            change_state,
            change_position,
            redo,
            origin_len,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.undo.is_empty() && self.redo.is_empty()
    }

    /// Labels of the whole plan, undo part first.
    pub fn labels<'a>(&self, lts: &'a Lts) -> Vec<&'a str> {
        self.undo
            .iter()
            .map(|u| u.label(lts))
            .chain(self.redo.iter().map(|t| lts.transition(*t).label.as_str()))
            .collect()
    }

    pub fn redo_labels<'a>(&self, lts: &'a Lts) -> Vec<&'a str> {
        self.redo
            .iter()
            .map(|t| lts.transition(*t).label.as_str())
            .collect()
    }

    pub fn display<'a>(&'a self, lts: &'a Lts) -> PlanDisplay<'a> {
        PlanDisplay { plan: self, lts }
    }
}

pub struct PlanDisplay<'a> {
    plan: &'a Plan,
    lts: &'a Lts,
}

impl fmt::Display for PlanDisplay<'_> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let undo: Vec<&str> = self
            .plan
            .undo
            .iter()
            .filter(|u| u.compensation.is_some())
            .map(|u| u.label(self.lts))
            .collect();
        write!(
            f,
            "back {} steps [{}] to {}",
            self.plan.undo.len(),
            undo.join(", "),
            self.plan.change_state
        )?;
        if !self.plan.redo.is_empty() {
            write!(f, " then {}", self.plan.redo_labels(self.lts).join(", "))?;
        }
        Ok(())
    }
}
