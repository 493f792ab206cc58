//! Labeled transition systems with forward, compensation and termination
//! transitions, and the translation from workflow definitions.

mod translate;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::workflow::{ActivityId, ActivityKind, WorkflowDef};

pub use translate::{translate, translate_with_cap, valuation_label, DEFAULT_STATE_CAP};

/// The reserved termination label.
pub const TER: &str = "TER";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct StateId(pub u32);

impl StateId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

impl fmt::Display for StateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "s{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TransitionId(pub u32);

impl TransitionId {
    pub fn index(self) -> usize {
        self.0 as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransitionKind {
    Forward,
    Compensation,
    Termination,
}

/// Position of a transition inside a flow: which flow, which branch.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FlowTag {
    pub flow: ActivityId,
    pub branch: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Transition {
    pub id: TransitionId,
    pub src: StateId,
    pub label: String,
    pub dst: StateId,
    pub kind: TransitionKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub activity: Option<ActivityId>,
    /// For compensation transitions, the forward transition being undone.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reverses: Option<TransitionId>,
    /// Enclosing flows, outermost first.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub flow_tags: Vec<FlowTag>,
}

impl Transition {
    pub fn is_forward(&self) -> bool {
        self.kind == TransitionKind::Forward
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", content = "source")]
pub enum Provenance {
    PickEntry(ActivityId),
    FlowEntry(ActivityId),
    NonIdemInvoke(String),
}

impl Provenance {
    fn rank(&self) -> u8 {
        match self {
            Provenance::PickEntry(_) => 0,
            Provenance::FlowEntry(_) => 1,
            Provenance::NonIdemInvoke(_) => 2,
        }
    }

    pub fn is_structural(&self) -> bool {
        !matches!(self, Provenance::NonIdemInvoke(_))
    }
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Provenance::PickEntry(a) => write!(f, "pick:{a}"),
            Provenance::FlowEntry(a) => write!(f, "flow:{a}"),
            Provenance::NonIdemInvoke(op) => write!(f, "invoke:{op}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "activity")]
pub enum EntryMark {
    Pick(ActivityId),
    Flow(ActivityId),
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum LtsError {
    #[error("model too large: more than {cap} states")]
    ModelTooLarge { cap: usize },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LtsData {
    num_states: u32,
    labels: BTreeSet<String>,
    transitions: Vec<Transition>,
    initial: BTreeSet<StateId>,
    #[serde(default)]
    final_states: BTreeSet<StateId>,
    #[serde(default)]
    terminal: Option<StateId>,
    #[serde(default)]
    change_states: BTreeMap<StateId, Provenance>,
    #[serde(default)]
    entries: Vec<(StateId, EntryMark)>,
}

/// A labeled transition system `(S, Σ, δ, I)`; states are `0..num_states`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "LtsData", into = "LtsData")]
pub struct Lts {
    num_states: u32,
    labels: BTreeSet<String>,
    transitions: Vec<Transition>,
    initial: BTreeSet<StateId>,
    final_states: BTreeSet<StateId>,
    terminal: Option<StateId>,
    change_states: BTreeMap<StateId, Provenance>,
    entries: Vec<(StateId, EntryMark)>,
    outgoing: Vec<Vec<TransitionId>>,
}

impl From<LtsData> for Lts {
    fn from(d: LtsData) -> Self {
        let mut lts = Lts {
            num_states: d.num_states,
            labels: d.labels,
            transitions: d.transitions,
            initial: d.initial,
            final_states: d.final_states,
            terminal: d.terminal,
            change_states: d.change_states,
            entries: d.entries,
            outgoing: Vec::new(),
        };
        lts.reindex();
        lts
    }
}

impl From<Lts> for LtsData {
    fn from(l: Lts) -> Self {
        LtsData {
            num_states: l.num_states,
            labels: l.labels,
            transitions: l.transitions,
            initial: l.initial,
            final_states: l.final_states,
            terminal: l.terminal,
            change_states: l.change_states,
            entries: l.entries,
        }
    }
}

impl PartialEq for Lts {
    fn eq(&self, other: &Self) -> bool {
        self.num_states == other.num_states
            && self.labels == other.labels
            && self.transitions == other.transitions
            && self.initial == other.initial
            && self.final_states == other.final_states
            && self.terminal == other.terminal
            && self.change_states == other.change_states
            && self.entries == other.entries
    }
}

impl Lts {
    fn reindex(&mut self) {
        self.outgoing = vec![Vec::new(); self.num_states as usize];
        for t in &self.transitions {
            self.outgoing[t.src.index()].push(t.id);
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states as usize
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> {
        (0..self.num_states).map(StateId)
    }

    pub fn labels(&self) -> &BTreeSet<String> {
        &self.labels
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn transition(&self, id: TransitionId) -> &Transition {
        &self.transitions[id.index()]
    }

    pub fn initial(&self) -> &BTreeSet<StateId> {
        &self.initial
    }

    /// The unique initial state of a translated workflow.
    pub fn initial_state(&self) -> StateId {
        *self
            .initial
            .iter()
            .next()
            .expect("LTS has an initial state")
    }

    pub fn final_states(&self) -> &BTreeSet<StateId> {
        &self.final_states
    }

    pub fn terminal(&self) -> Option<StateId> {
        self.terminal
    }

    pub fn change_states(&self) -> &BTreeMap<StateId, Provenance> {
        &self.change_states
    }

    pub fn entries(&self) -> &[(StateId, EntryMark)] {
        &self.entries
    }

    pub fn outgoing(&self, s: StateId) -> impl Iterator<Item = &Transition> {
        self.outgoing[s.index()]
            .iter()
            .map(move |id| &self.transitions[id.index()])
    }

    pub fn forward_from(&self, s: StateId) -> impl Iterator<Item = &Transition> {
        self.outgoing(s).filter(|t| t.is_forward())
    }

    pub fn forward(&self) -> impl Iterator<Item = &Transition> {
        self.transitions.iter().filter(|t| t.is_forward())
    }

    pub fn forward_count(&self) -> usize {
        self.forward().count()
    }

    /// The compensation transition that undoes `forward`, if one is declared.
    pub fn compensation_of(&self, forward: TransitionId) -> Option<&Transition> {
        let fwd = self.transition(forward);
        self.outgoing(fwd.dst)
            .find(|t| t.kind == TransitionKind::Compensation && t.reverses == Some(forward))
    }

    pub fn forward_by_label(&self, s: StateId, label: &str) -> Option<&Transition> {
        self.forward_from(s).find(|t| t.label == label)
    }

    pub fn termination_from(&self, s: StateId) -> Option<&Transition> {
        self.outgoing(s)
            .find(|t| t.kind == TransitionKind::Termination)
    }

    /// States reachable from the initial set over any transition kind.
    pub fn reachable(&self) -> BTreeSet<StateId> {
        let mut seen: BTreeSet<StateId> = self.initial.clone();
        let mut stack: Vec<StateId> = self.initial.iter().copied().collect();
        while let Some(s) = stack.pop() {
            for t in self.outgoing(s) {
                if seen.insert(t.dst) {
                    stack.push(t.dst);
                }
            }
        }
        seen
    }

    /// Graphviz rendering: change states boxed, compensations dashed.
    pub fn to_dot(&self) -> String {
        use std::fmt::Write;
        let mut out = String::from("digraph lts {\n  rankdir=LR;\n");
        for s in self.states() {
            let shape = if self.change_states.contains_key(&s) {
                "box"
            } else if self.final_states.contains(&s) {
                "doublecircle"
            } else {
                "circle"
            };
            writeln!(out, "  s{} [shape={shape}];", s.0).unwrap();
        }
        for t in &self.transitions {
            let style = match t.kind {
                TransitionKind::Forward => "solid",
                _ => "dashed",
            };
            writeln!(
                out,
                "  s{} -> s{} [label=\"{}\", style={style}];",
                t.src.0, t.dst.0, t.label
            )
            .unwrap();
        }
        out.push_str("}\n");
        out
    }

    pub fn stats(&self) -> LtsStats {
        LtsStats {
            states: self.num_states(),
            forward_transitions: self.forward_count(),
            transitions: self.transitions.len(),
            labels: self.labels.len(),
            change_states: self.change_states.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct LtsStats {
    pub states: usize,
    pub forward_transitions: usize,
    pub transitions: usize,
    pub labels: usize,
    pub change_states: usize,
}

/// Incremental construction of hand-made systems (tests, random models).
#[derive(Debug, Default)]
pub struct LtsBuilder {
    num_states: u32,
    transitions: Vec<Transition>,
    initial: BTreeSet<StateId>,
    final_states: BTreeSet<StateId>,
    change_states: BTreeMap<StateId, Provenance>,
}

impl LtsBuilder {
    pub fn new(num_states: u32) -> Self {
        LtsBuilder {
            num_states,
            initial: [StateId(0)].into(),
            ..Default::default()
        }
    }

    pub fn forward(&mut self, src: u32, label: &str, dst: u32) -> TransitionId {
        let id = TransitionId(self.transitions.len() as u32);
        self.transitions.push(Transition {
            id,
            src: StateId(src),
            label: label.to_string(),
            dst: StateId(dst),
            kind: TransitionKind::Forward,
            activity: None,
            reverses: None,
            flow_tags: Vec::new(),
        });
        id
    }

    pub fn compensation(&mut self, forward: TransitionId, label: &str) -> TransitionId {
        let fwd = self.transitions[forward.index()].clone();
        let id = TransitionId(self.transitions.len() as u32);
        self.transitions.push(Transition {
            id,
            src: fwd.dst,
            label: label.to_string(),
            dst: fwd.src,
            kind: TransitionKind::Compensation,
            activity: fwd.activity,
            reverses: Some(forward),
            flow_tags: Vec::new(),
        });
        id
    }

    pub fn final_state(&mut self, s: u32) -> &mut Self {
        self.final_states.insert(StateId(s));
        self
    }

    pub fn change_state(&mut self, s: u32, provenance: Provenance) -> &mut Self {
        self.change_states.insert(StateId(s), provenance);
        self
    }

    pub fn build(self) -> Lts {
        let labels = self.transitions.iter().map(|t| t.label.clone()).collect();
        Lts::from(LtsData {
            num_states: self.num_states,
            labels,
            transitions: self.transitions,
            initial: self.initial,
            final_states: self.final_states,
            terminal: None,
            change_states: self.change_states,
            entries: Vec::new(),
        })
    }
}

/// Mark change states: pick entries, flow entries and sources of
/// non-idempotent invoke transitions. A state with several reasons keeps the
/// first in the order pick, flow, invoke.
pub fn identify_change_states(mut lts: Lts, def: &WorkflowDef) -> Lts {
    let index = def.activity_index();
    let mut marks: BTreeMap<StateId, Provenance> = BTreeMap::new();
    let mut offer = |s: StateId, p: Provenance| match marks.get(&s) {
        Some(existing) if (existing.rank(), existing) <= (p.rank(), &p) => {}
        _ => {
            marks.insert(s, p);
        }
    };
    for (s, mark) in &lts.entries {
        match mark {
            EntryMark::Pick(a) => offer(*s, Provenance::PickEntry(a.clone())),
            EntryMark::Flow(a) => offer(*s, Provenance::FlowEntry(a.clone())),
        }
    }
    for t in lts.transitions.iter().filter(|t| t.is_forward()) {
        let Some(act) = t.activity.as_ref().and_then(|a| index.get(a)) else {
            continue;
        };
        if let ActivityKind::Invoke(inv) = &act.kind {
            if !inv.idempotent {
                offer(t.src, Provenance::NonIdemInvoke(inv.op.clone()));
            }
        }
    }
    lts.change_states = marks;
    lts
}

/// Translate and mark change states in one step.
pub fn compile(def: &WorkflowDef) -> Result<Lts, LtsError> {
    Ok(identify_change_states(translate(def)?, def))
}

/// Like [`compile`], refusing models with more than `cap` states.
pub fn compile_with_cap(def: &WorkflowDef, cap: usize) -> Result<Lts, LtsError> {
    Ok(identify_change_states(translate_with_cap(def, cap)?, def))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::workflow::parse_workflow;

    fn lts_of(src: &str) -> Lts {
        compile(&parse_workflow(src).unwrap()).unwrap()
    }

    #[test]
    fn dot_marks_change_states_and_compensations() {
        let lts = lts_of("workflow W { var x; invoke P.a(in=x,out=x) nonidem comp P.undoA }");
        let dot = lts.to_dot();
        assert!(dot.contains("s0 [shape=box]"));
        assert!(dot.contains("label=\"undoA\", style=dashed"));
    }

    #[test]
    fn single_invoke() {
        let lts = lts_of("workflow W { var x; invoke P.a(in=x,out=x) comp P.undoA }");
        // s0, s1 plus the terminal state
        assert_eq!(lts.num_states(), 3);
        let fwd: Vec<_> = lts.forward().collect();
        assert_eq!(fwd.len(), 1);
        assert_eq!((fwd[0].src, fwd[0].dst), (StateId(0), StateId(1)));
        let comp = lts.compensation_of(fwd[0].id).unwrap();
        assert_eq!((comp.src, comp.dst), (StateId(1), StateId(0)));
        assert_eq!(comp.label, "undoA");
        assert!(lts.change_states().is_empty());
    }

    #[test]
    fn flow_of_two_is_a_diamond() {
        let lts = lts_of("workflow W { var x; flow { local a(in=x,out=x) local b(in=x,out=x) } }");
        assert_eq!(lts.num_states() - 1, 4);
        assert_eq!(lts.forward_count(), 4);
        assert_eq!(lts.change_states().len(), 1);
        assert!(matches!(
            lts.change_states().values().next().unwrap(),
            Provenance::FlowEntry(_)
        ));
    }

    #[test]
    fn idempotent_only_has_no_change_states() {
        let lts =
            lts_of("workflow W { var x; seq { invoke P.a(in=x,out=x) invoke P.b(in=x,out=x) } }");
        assert!(lts.change_states().is_empty());
    }

    #[test]
    fn termination_edges_reach_terminal() {
        let lts = lts_of("workflow W { var x; local a(in=x,out=x) }");
        let term = lts.terminal().unwrap();
        for s in lts.states().filter(|s| *s != term) {
            let t = lts.termination_from(s).unwrap();
            assert_eq!(t.label, TER);
            assert_eq!(t.dst, term);
        }
    }

    #[test]
    fn json_round_trip() {
        let lts =
            lts_of("workflow W { var x; pick { on a: local f(in=x,out=x) on b: terminate } }");
        let text = serde_json::to_string(&lts).unwrap();
        let back: Lts = serde_json::from_str(&text).unwrap();
        assert_eq!(back, lts);
        assert_eq!(back.forward_from(StateId(0)).count(), 2);
    }
}
