//! Workflow definitions: a small structured-activity language for compensable
//! orchestrations, its AST, parser and pretty-printer.

mod parse;
mod print;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

pub use parse::parse_workflow;
pub use print::pretty_print;

/// Name of the compensation used for invokes that declare none.
pub const NOOP_COMPENSATION: &str = "noop";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ActivityId(pub String);

impl ActivityId {
    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for ActivityId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for ActivityId {
    fn from(s: &str) -> Self {
        ActivityId(s.to_string())
    }
}

/// A partner operation, `Partner.op`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct OpRef {
    pub partner: String,
    pub op: String,
}

impl fmt::Display for OpRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}.{}", self.partner, self.op)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Invoke {
    pub partner: String,
    pub op: String,
    pub input: String,
    pub output: String,
    pub idempotent: bool,
    pub compensation: Option<OpRef>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PickBranch {
    pub event: String,
    pub body: Activity,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum ActivityKind {
    Receive {
        var: String,
    },
    Invoke(Invoke),
    Assign {
        from: String,
        to: String,
    },
    LocalCall {
        op: String,
        input: String,
        output: String,
    },
    Sequence(Vec<Activity>),
    Flow(Vec<Activity>),
    Pick(Vec<PickBranch>),
    If {
        cond_vars: BTreeSet<String>,
        then_branch: Box<Activity>,
        else_branch: Option<Box<Activity>>,
    },
    While {
        cond_vars: BTreeSet<String>,
        max_iter: u32,
        body: Box<Activity>,
    },
    Terminate,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Activity {
    pub id: ActivityId,
    pub kind: ActivityKind,
}

impl Activity {
    /// Direct children in source order.
    pub fn children(&self) -> Vec<&Activity> {
        match &self.kind {
            ActivityKind::Sequence(items) | ActivityKind::Flow(items) => items.iter().collect(),
            ActivityKind::Pick(branches) => branches.iter().map(|b| &b.body).collect(),
            ActivityKind::If {
                then_branch,
                else_branch,
                ..
            } => {
                let mut v = vec![then_branch.as_ref()];
                if let Some(e) = else_branch {
                    v.push(e.as_ref());
                }
                v
            }
            ActivityKind::While { body, .. } => vec![body.as_ref()],
            _ => Vec::new(),
        }
    }

    /// Pre-order traversal.
    pub fn walk<'a>(&'a self, out: &mut Vec<&'a Activity>) {
        out.push(self);
        for c in self.children() {
            c.walk(out);
        }
    }

    /// Whether this activity can change the control flow of a run when
    /// revisited: picks, flows and non-idempotent invokes.
    pub fn is_change_inducing(&self) -> bool {
        match &self.kind {
            ActivityKind::Pick(_) | ActivityKind::Flow(_) => true,
            ActivityKind::Invoke(inv) => !inv.idempotent,
            _ => false,
        }
    }

    /// Variables read by the activity itself (not its children).
    pub fn uses(&self) -> BTreeSet<String> {
        match &self.kind {
            ActivityKind::Invoke(inv) => [inv.input.clone()].into(),
            ActivityKind::Assign { from, .. } => [from.clone()].into(),
            ActivityKind::LocalCall { input, .. } => [input.clone()].into(),
            ActivityKind::If { cond_vars, .. } | ActivityKind::While { cond_vars, .. } => {
                cond_vars.clone()
            }
            _ => BTreeSet::new(),
        }
    }

    /// Variables written by the activity itself.
    pub fn defs(&self) -> BTreeSet<String> {
        match &self.kind {
            ActivityKind::Receive { var } => [var.clone()].into(),
            ActivityKind::Invoke(inv) => [inv.output.clone()].into(),
            ActivityKind::Assign { to, .. } => [to.clone()].into(),
            ActivityKind::LocalCall { output, .. } => [output.clone()].into(),
            _ => BTreeSet::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WorkflowDef {
    pub name: String,
    pub variables: BTreeSet<String>,
    pub partners: BTreeSet<String>,
    pub root: Activity,
}

impl WorkflowDef {
    /// All activities in pre-order.
    pub fn activities(&self) -> Vec<&Activity> {
        let mut out = Vec::new();
        self.root.walk(&mut out);
        out
    }

    pub fn activity_index(&self) -> BTreeMap<&ActivityId, &Activity> {
        self.activities().into_iter().map(|a| (&a.id, a)).collect()
    }

    pub fn activity(&self, id: &ActivityId) -> Option<&Activity> {
        self.activities().into_iter().find(|a| &a.id == id)
    }

    pub fn change_inducing_count(&self) -> usize {
        self.activities()
            .iter()
            .filter(|a| a.is_change_inducing())
            .count()
    }

    /// Map from every invoked operation to its compensation. Invokes without a
    /// declared compensation map to [`NOOP_COMPENSATION`].
    pub fn list_compensations(&self) -> BTreeMap<String, String> {
        let mut out = BTreeMap::new();
        for a in self.activities() {
            if let ActivityKind::Invoke(inv) = &a.kind {
                let comp = inv
                    .compensation
                    .as_ref()
                    .map(|c| c.op.clone())
                    .unwrap_or_else(|| NOOP_COMPENSATION.to_string());
                out.entry(inv.op.clone()).or_insert(comp);
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum WorkflowError {
    #[error("syntax error at {line}:{col}: {message}")]
    Syntax {
        line: usize,
        col: usize,
        message: String,
    },
    #[error("undeclared variable `{var}` in activity `{activity}`")]
    UndeclaredVariable { var: String, activity: String },
    #[error("pick `{0}` has no branches")]
    EmptyPick(String),
    #[error("pick `{pick}` offers event `{event}` twice")]
    DuplicateBranchEvent { pick: String, event: String },
    #[error("duplicate activity id `{0}`")]
    DuplicateId(String),
    #[error("`terminate` inside flow `{0}` is not supported")]
    TerminateInFlow(String),
    #[error("loop `{0}` must allow at least one iteration")]
    ZeroIterations(String),
}

pub(crate) fn validate(def: &WorkflowDef) -> Result<(), WorkflowError> {
    let mut seen = BTreeSet::new();
    for a in def.activities() {
        if !seen.insert(a.id.clone()) {
            return Err(WorkflowError::DuplicateId(a.id.0.clone()));
        }
        for v in a.uses().into_iter().chain(a.defs()) {
            if !def.variables.contains(&v) {
                return Err(WorkflowError::UndeclaredVariable {
                    var: v,
                    activity: a.id.0.clone(),
                });
            }
        }
        match &a.kind {
            ActivityKind::Pick(branches) => {
                if branches.is_empty() {
                    return Err(WorkflowError::EmptyPick(a.id.0.clone()));
                }
                let mut events = BTreeSet::new();
                for b in branches {
                    if !events.insert(b.event.as_str()) {
                        return Err(WorkflowError::DuplicateBranchEvent {
                            pick: a.id.0.clone(),
                            event: b.event.clone(),
                        });
                    }
                }
            }
            ActivityKind::Flow(items) => {
                for item in items {
                    let mut inner = Vec::new();
                    item.walk(&mut inner);
                    if inner
                        .iter()
                        .any(|x| matches!(x.kind, ActivityKind::Terminate))
                    {
                        return Err(WorkflowError::TerminateInFlow(a.id.0.clone()));
                    }
                }
            }
            ActivityKind::While { max_iter: 0, .. } => {
                return Err(WorkflowError::ZeroIterations(a.id.0.clone()));
            }
            _ => {}
        }
    }
    Ok(())
}
