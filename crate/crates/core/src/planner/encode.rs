//! Time-indexed CNF encoding of liveness recovery planning.
//!
//! A plan undoes the last `u` trace steps (in LIFO order), stops at a
//! candidate change state, then takes forward transitions until the violated
//! monitor enters a green state. Steps 0..k are unrolled.

use std::collections::BTreeMap;

use super::{PlanError, PlanningProblem};
use crate::lts::{StateId, TransitionId};
use crate::sat::CnfInstance;

/// Default cap on generated clauses.
pub const DEFAULT_CLAUSE_CAP: usize = 5_000_000;

/// The CNF and what its variables mean.
#[derive(Debug, Clone)]
pub struct Encoding {
    pub cnf: CnfInstance,
    pub k: usize,
    trace_len: usize,
    states: Vec<StateId>,
    state_index: BTreeMap<StateId, usize>,
    forward: Vec<TransitionId>,
    monitor_states: usize,
    base_x: u32,
    base_a: u32,
    base_b: u32,
    base_d: u32,
    base_g: u32,
    base_m: u32,
    base_p: u32,
}

impl Encoding {
    fn x(&self, s: usize, t: usize) -> i32 {
        (self.base_x + (t * self.states.len() + s) as u32) as i32
    }

    fn a(&self, e: usize, t: usize) -> i32 {
        (self.base_a + (t * self.forward.len() + e) as u32) as i32
    }

    fn b(&self, t: usize) -> i32 {
        (self.base_b + t as u32) as i32
    }

    fn d(&self, t: usize) -> i32 {
        (self.base_d + t as u32) as i32
    }

    fn g(&self, t: usize) -> i32 {
        (self.base_g + t as u32) as i32
    }

    fn m(&self, q: usize, t: usize) -> i32 {
        (self.base_m + (t * self.monitor_states + q) as u32) as i32
    }

    fn p(&self, t: usize) -> i32 {
        (self.base_p + t as u32) as i32
    }

    pub fn num_vars(&self) -> u32 {
        self.cnf.num_vars
    }

    pub fn num_clauses(&self) -> usize {
        self.cnf.clauses.len()
    }

    /// Read a plan out of a model: number of undo steps and the redo path.
    pub fn decode(&self, value: impl Fn(i32) -> bool) -> (usize, Vec<TransitionId>) {
        let undo = (0..self.k).take_while(|t| value(self.b(*t))).count();
        let mut redo = Vec::new();
        for t in undo..self.k {
            if value(self.d(t)) {
                break;
            }
            if let Some(e) = (0..self.forward.len()).find(|e| value(self.a(*e, t))) {
                redo.push(self.forward[e]);
            }
        }
        (undo, redo)
    }

    /// Clause excluding exactly the given action sequence.
    pub fn blocking_clause(&self, undo: usize, redo: &[TransitionId]) -> Vec<i32> {
        let fwd_index: BTreeMap<TransitionId, usize> = self
            .forward
            .iter()
            .enumerate()
            .map(|(i, t)| (*t, i))
            .collect();
        let mut clause: Vec<i32> = (0..undo).map(|t| -self.b(t)).collect();
        if undo < self.k {
            clause.push(self.b(undo));
        }
        for (i, t) in redo.iter().enumerate() {
            clause.push(-self.a(fwd_index[t], undo + i));
        }
        clause
    }

    pub fn state_count(&self) -> usize {
        self.state_index.len()
    }

    pub fn trace_len(&self) -> usize {
        self.trace_len
    }
}

pub fn encode(problem: &PlanningProblem, clause_cap: usize) -> Result<Encoding, PlanError> {
    let lts = problem.lts;
    let trace = problem.trace;
    let mon = problem.monitor;
    let k = problem.k;
    let n = trace.len();

    let terminal = lts.terminal();
    let states: Vec<StateId> = lts.states().filter(|s| Some(*s) != terminal).collect();
    let state_index: BTreeMap<StateId, usize> =
        states.iter().enumerate().map(|(i, s)| (*s, i)).collect();
    let forward: Vec<TransitionId> = lts.forward().map(|t| t.id).collect();
    let nq = mon.num_states as usize;

    let estimate = k * (forward.len() * (3 + nq) + states.len() * 2 + nq * nq + 16);
    if estimate > clause_cap {
        return Err(PlanError::EncodingTooLarge {
            clauses: estimate,
            cap: clause_cap,
        });
    }

    let ns = states.len() as u32;
    let nf = forward.len() as u32;
    let kk = k as u32;
    let base_x = 1;
    let base_a = base_x + ns * (kk + 1);
    let base_b = base_a + nf * kk;
    let base_d = base_b + kk;
    let base_g = base_d + kk + 1;
    let base_m = base_g + kk;
    let base_p = base_m + nq as u32 * (kk + 1);
    let total = base_p + kk + 1 - 1;

    let mut enc = Encoding {
        cnf: CnfInstance::new(total),
        k,
        trace_len: n,
        states,
        state_index,
        forward,
        monitor_states: nq,
        base_x,
        base_a,
        base_b,
        base_d,
        base_g,
        base_m,
        base_p,
    };
    let mut cls: Vec<Vec<i32>> = Vec::new();
    let si = |s: StateId| enc.state_index[&s];
    let green: Vec<bool> = (0..nq)
        .map(|q| mon.is_green(crate::monitor::MonitorState(q as u32)))
        .collect();
    let trace_state = |i: usize| trace.states[i];

    // start at the error state
    let start = si(trace_state(n));
    for s in 0..enc.states.len() {
        cls.push(vec![if s == start {
            enc.x(s, 0)
        } else {
            -enc.x(s, 0)
        }]);
    }
    cls.push(vec![-enc.d(0)]);
    cls.push(vec![enc.d(k)]);

    // incoming forward actions per (state)
    let mut incoming: Vec<Vec<usize>> = vec![Vec::new(); enc.states.len()];
    let mut outgoing: Vec<Vec<usize>> = vec![Vec::new(); enc.states.len()];
    for (e, tid) in enc.forward.iter().enumerate() {
        let t = lts.transition(*tid);
        incoming[si(t.dst)].push(e);
        outgoing[si(t.src)].push(e);
    }

    for t in 0..k {
        let (b, d, g, d1) = (enc.b(t), enc.d(t), enc.g(t), enc.d(t + 1));
        // undo steps form a prefix and walk the trace backwards
        if t < n {
            cls.push(vec![-b, enc.x(si(trace_state(n - t)), t)]);
            cls.push(vec![-b, enc.x(si(trace_state(n - t - 1)), t + 1)]);
            if t > 0 {
                cls.push(vec![-b, enc.b(t - 1)]);
            }
        } else {
            cls.push(vec![-b]);
        }
        cls.push(vec![-b, -d]);

        for (e, tid) in enc.forward.iter().enumerate() {
            let tr = lts.transition(*tid);
            let a = enc.a(e, t);
            cls.push(vec![-a, enc.x(si(tr.src), t)]);
            cls.push(vec![-a, enc.x(si(tr.dst), t + 1)]);
            cls.push(vec![-a, -d]);
        }

        // one action per step while the plan is running
        let mut some: Vec<i32> = vec![d, b];
        some.extend((0..enc.forward.len()).map(|e| enc.a(e, t)));
        cls.push(some);
        for (s, outs) in outgoing.iter().enumerate() {
            let mut group: Vec<i32> = outs.iter().map(|e| enc.a(*e, t)).collect();
            if t < n && si(trace_state(n - t)) == s {
                group.push(b);
            }
            for i in 0..group.len() {
                for j in i + 1..group.len() {
                    cls.push(vec![-group[i], -group[j]]);
                }
            }
        }

        // a state holds only if something moved there
        for (s, into) in incoming.iter().enumerate() {
            let mut why = vec![-enc.x(s, t + 1), d];
            why.extend(into.iter().map(|e| enc.a(*e, t)));
            if t < n && si(trace_state(n - t - 1)) == s {
                why.push(b);
            }
            cls.push(why);
        }

        // done once the goal step happens, and never undone
        cls.push(vec![-d1, d, g]);
        cls.push(vec![-d, d1]);
        cls.push(vec![-g, d1]);
        cls.push(vec![-g, -d]);
        cls.push(vec![-g, -b]);
        let mut reach_green = vec![-g];
        for (q, _) in green.iter().enumerate().filter(|(_, is_green)| **is_green) {
            reach_green.push(enc.m(q, t + 1));
            cls.push(vec![-g, -enc.m(q, t)]);
        }
        cls.push(reach_green);

        // monitor tracking along forward actions, and forced goal detection
        for (e, tid) in enc.forward.iter().enumerate() {
            let label = &lts.transition(*tid).label;
            let a = enc.a(e, t);
            for q in 0..nq {
                let next = mon
                    .step(crate::monitor::MonitorState(q as u32), label)
                    .index();
                cls.push(vec![-enc.m(q, t), -a, enc.m(next, t + 1)]);
                if !green[q] && green[next] {
                    cls.push(vec![d, -enc.m(q, t), -a, g]);
                }
            }
        }
    }

    for t in 0..=k {
        for q in 0..nq {
            for r in q + 1..nq {
                cls.push(vec![-enc.m(q, t), -enc.m(r, t)]);
            }
        }
    }

    // the state where undoing stops must be a candidate change state
    for t in 0..=k.min(n) {
        let p = enc.p(t);
        let stop_here = if t < k { Some(enc.b(t)) } else { None };
        if let Some(bt) = stop_here {
            cls.push(vec![-p, -bt]);
        }
        if t > 0 {
            cls.push(vec![-p, enc.b(t - 1)]);
        }
        let mut def = Vec::new();
        if let Some(bt) = stop_here {
            def.push(bt);
        }
        if t > 0 {
            def.push(-enc.b(t - 1));
        }
        def.push(p);
        cls.push(def);
        let pos = n - t;
        let state = trace_state(pos);
        if problem.candidates.contains(&state) {
            let snap = trace.snapshots[pos][problem.monitor_index].index();
            cls.push(vec![-p, enc.m(snap, t)]);
        } else {
            cls.push(vec![-p]);
        }
    }
    for t in k.min(n) + 1..=k {
        cls.push(vec![-enc.p(t)]);
    }

    if cls.len() > clause_cap {
        return Err(PlanError::EncodingTooLarge {
            clauses: cls.len(),
            cap: clause_cap,
        });
    }
    enc.cnf.clauses = cls;
    Ok(enc)
}
