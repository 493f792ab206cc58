//! Def/Use sets, data dependencies over the LTS, and relevant change states.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};

use crate::engine::ExecutionTrace;
use crate::lts::{Lts, Provenance, StateId, TransitionId};
use crate::workflow::{ActivityKind, WorkflowDef};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefUse {
    pub defs: BTreeSet<String>,
    pub uses: BTreeSet<String>,
}

/// Def/Use sets for every forward transition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DefUseTable {
    entries: BTreeMap<TransitionId, DefUse>,
    /// Transitions that take a branch of an if or while.
    control: BTreeSet<TransitionId>,
}

impl DefUseTable {
    pub fn get(&self, t: TransitionId) -> &DefUse {
        static EMPTY: DefUse = DefUse {
            defs: BTreeSet::new(),
            uses: BTreeSet::new(),
        };
        self.entries.get(&t).unwrap_or(&EMPTY)
    }

    pub fn defs(&self, t: TransitionId) -> &BTreeSet<String> {
        &self.get(t).defs
    }

    pub fn uses(&self, t: TransitionId) -> &BTreeSet<String> {
        &self.get(t).uses
    }

    pub fn is_control(&self, t: TransitionId) -> bool {
        self.control.contains(&t)
    }

    pub fn control_transitions(&self) -> &BTreeSet<TransitionId> {
        &self.control
    }

    /// Build a table directly, for models without a workflow behind them.
    pub fn from_parts(
        entries: BTreeMap<TransitionId, DefUse>,
        control: BTreeSet<TransitionId>,
    ) -> Self {
        DefUseTable { entries, control }
    }

    /// Add a variable to the Use set of a transition.
    pub fn add_use(&mut self, t: TransitionId, var: &str) {
        self.entries
            .entry(t)
            .or_default()
            .uses
            .insert(var.to_string());
    }
}

pub fn build_defuse(lts: &Lts, def: &WorkflowDef) -> DefUseTable {
    let index = def.activity_index();
    let mut entries = BTreeMap::new();
    let mut control = BTreeSet::new();
    for t in lts.forward() {
        let Some(act) = t.activity.as_ref().and_then(|a| index.get(a)) else {
            continue;
        };
        let one = |v: &String| BTreeSet::from([v.clone()]);
        let du = match &act.kind {
            ActivityKind::Receive { var } => DefUse {
                defs: one(var),
                uses: BTreeSet::new(),
            },
            ActivityKind::Invoke(inv) => DefUse {
                defs: one(&inv.output),
                uses: one(&inv.input),
            },
            ActivityKind::LocalCall { input, output, .. } => DefUse {
                defs: one(output),
                uses: one(input),
            },
            ActivityKind::Assign { from, to } => DefUse {
                defs: one(to),
                uses: one(from),
            },
            ActivityKind::If { cond_vars, .. } | ActivityKind::While { cond_vars, .. } => {
                control.insert(t.id);
                DefUse {
                    defs: BTreeSet::new(),
                    uses: cond_vars.clone(),
                }
            }
            _ => DefUse::default(),
        };
        entries.insert(t.id, du);
    }
    DefUseTable { entries, control }
}

/// Whether `v` reads a value that `u` wrote: some variable in Def(u) ∩ Use(v)
/// reaches v's source along a forward path that does not redefine it.
pub fn directly_data_dependent(
    lts: &Lts,
    table: &DefUseTable,
    u: TransitionId,
    v: TransitionId,
) -> bool {
    let tu = lts.transition(u);
    let tv = lts.transition(v);
    table
        .defs(u)
        .intersection(table.uses(v))
        .any(|x| reaches_unkilled(lts, table, tu.dst, tv.src, x))
}

fn reaches_unkilled(lts: &Lts, table: &DefUseTable, from: StateId, to: StateId, var: &str) -> bool {
    let mut seen = vec![false; lts.num_states()];
    let mut queue = VecDeque::from([from]);
    seen[from.index()] = true;
    while let Some(s) = queue.pop_front() {
        if s == to {
            return true;
        }
        for t in lts.forward_from(s) {
            if table.defs(t.id).contains(var) || seen[t.dst.index()] {
                continue;
            }
            seen[t.dst.index()] = true;
            queue.push_back(t.dst);
        }
    }
    false
}

/// Reference implementation: enumerate every simple forward path from u's
/// target and look for one reaching v's source with a live definition.
pub fn directly_data_dependent_bruteforce(
    lts: &Lts,
    table: &DefUseTable,
    u: TransitionId,
    v: TransitionId,
) -> bool {
    let tu = lts.transition(u);
    let tv = lts.transition(v);
    let shared: Vec<&String> = table.defs(u).intersection(table.uses(v)).collect();
    if shared.is_empty() {
        return false;
    }
    fn walk(
        lts: &Lts,
        table: &DefUseTable,
        s: StateId,
        target: StateId,
        killed: &BTreeSet<&String>,
        live: &[&String],
        on_path: &mut Vec<bool>,
    ) -> bool {
        if s == target && live.iter().any(|x| !killed.contains(x)) {
            return true;
        }
        for t in lts.forward_from(s) {
            if on_path[t.dst.index()] {
                continue;
            }
            let mut k = killed.clone();
            for x in live {
                if table.defs(t.id).contains(*x) {
                    k.insert(x);
                }
            }
            on_path[t.dst.index()] = true;
            let found = walk(lts, table, t.dst, target, &k, live, on_path);
            on_path[t.dst.index()] = false;
            if found {
                return true;
            }
        }
        false
    }
    let mut on_path = vec![false; lts.num_states()];
    on_path[tu.dst.index()] = true;
    walk(
        lts,
        table,
        tu.dst,
        tv.src,
        &BTreeSet::new(),
        &shared,
        &mut on_path,
    )
}

/// Direct dependencies over all forward transition pairs and their chained
/// transitive closure.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DependencyRelation {
    /// `direct[v]` holds every u that v is directly data dependent on.
    direct: BTreeMap<TransitionId, BTreeSet<TransitionId>>,
    closure: BTreeMap<TransitionId, BTreeSet<TransitionId>>,
}

impl DependencyRelation {
    pub fn build(lts: &Lts, table: &DefUseTable) -> Self {
        let forward: Vec<TransitionId> = lts.forward().map(|t| t.id).collect();
        let mut direct: BTreeMap<TransitionId, BTreeSet<TransitionId>> = BTreeMap::new();
        for &u in &forward {
            for x in table.defs(u) {
                let src = lts.transition(u).dst;
                let reach = reachable_unkilled(lts, table, src, x);
                for &v in &forward {
                    if table.uses(v).contains(x) && reach[lts.transition(v).src.index()] {
                        direct.entry(v).or_default().insert(u);
                    }
                }
            }
        }
        let mut closure: BTreeMap<TransitionId, BTreeSet<TransitionId>> = BTreeMap::new();
        for &v in &forward {
            let mut seen = BTreeSet::new();
            let mut stack: Vec<TransitionId> =
                direct.get(&v).into_iter().flatten().copied().collect();
            while let Some(u) = stack.pop() {
                if seen.insert(u) {
                    stack.extend(direct.get(&u).into_iter().flatten().copied());
                }
            }
            if !seen.is_empty() {
                closure.insert(v, seen);
            }
        }
        DependencyRelation { direct, closure }
    }

    pub fn directly_depends(&self, v: TransitionId, u: TransitionId) -> bool {
        self.direct.get(&v).is_some_and(|s| s.contains(&u))
    }

    /// Whether `v` is data dependent on `u` through a chain of direct
    /// dependencies.
    pub fn data_dependent(&self, u: TransitionId, v: TransitionId) -> bool {
        self.closure.get(&v).is_some_and(|s| s.contains(&u))
    }

    pub fn dependencies_of(&self, v: TransitionId) -> impl Iterator<Item = TransitionId> + '_ {
        self.closure.get(&v).into_iter().flatten().copied()
    }
}

fn reachable_unkilled(lts: &Lts, table: &DefUseTable, from: StateId, var: &str) -> Vec<bool> {
    let mut seen = vec![false; lts.num_states()];
    let mut queue = VecDeque::from([from]);
    seen[from.index()] = true;
    while let Some(s) = queue.pop_front() {
        for t in lts.forward_from(s) {
            if table.defs(t.id).contains(var) || seen[t.dst.index()] {
                continue;
            }
            seen[t.dst.index()] = true;
            queue.push_back(t.dst);
        }
    }
    seen
}

/// Change states the trace visited, with whether each is relevant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relevance {
    pub visited: Vec<(StateId, Provenance)>,
    pub relevant: BTreeSet<StateId>,
    /// For each control transition on the trace, the change states whose
    /// invoke it depends on.
    pub by_control: Vec<(TransitionId, BTreeSet<StateId>)>,
}

/// Change states visited by `trace` (excluding its last state), in trace
/// order.
pub fn visited_change_states(lts: &Lts, trace: &ExecutionTrace) -> Vec<(StateId, Provenance)> {
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for s in &trace.states[..trace.states.len().saturating_sub(1)] {
        if let Some(p) = lts.change_states().get(s) {
            if seen.insert(*s) {
                out.push((*s, p.clone()));
            }
        }
    }
    out
}

/// Pick and flow entries are always relevant. A non-idempotent invoke is
/// relevant when some branch decision taken on the trace is data dependent
/// on it.
pub fn relevant_change_states(
    lts: &Lts,
    def: &WorkflowDef,
    table: &DefUseTable,
    rel: &DependencyRelation,
    trace: &ExecutionTrace,
) -> Relevance {
    let visited = visited_change_states(lts, trace);
    let mut by_control: Vec<(TransitionId, BTreeSet<StateId>)> = trace
        .forward_transitions()
        .filter(|t| table.is_control(*t))
        .map(|c| (c, BTreeSet::new()))
        .collect();
    let mut relevant = BTreeSet::new();
    for (s, p) in &visited {
        if p.is_structural() {
            relevant.insert(*s);
            continue;
        }
        let invokes = nonidem_invokes_at(lts, def, trace, *s);
        for (c, deps) in by_control.iter_mut() {
            if invokes.iter().any(|u| rel.data_dependent(*u, *c)) {
                deps.insert(*s);
                relevant.insert(*s);
            }
        }
    }
    Relevance {
        visited,
        relevant,
        by_control,
    }
}

/// The non-idempotent invoke the trace took from `s`, or every such invoke
/// leaving `s` if the trace moved on by another transition.
fn nonidem_invokes_at(
    lts: &Lts,
    def: &WorkflowDef,
    trace: &ExecutionTrace,
    s: StateId,
) -> Vec<TransitionId> {
    let index = def.activity_index();
    let all: Vec<TransitionId> =
        lts.forward_from(s)
            .filter(|t| {
                t.activity.as_ref().and_then(|a| index.get(a)).is_some_and(
                    |a| matches!(&a.kind, ActivityKind::Invoke(inv) if !inv.idempotent),
                )
            })
            .map(|t| t.id)
            .collect();
    let taken = trace
        .position_of(s)
        .and_then(|i| trace.steps.get(i))
        .map(|st| st.transition);
    match taken {
        Some(t) if all.contains(&t) => vec![t],
        _ => all,
    }
}
