use std::time::{Duration, Instant};

use super::{SatError, SatModel, SatResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Lit(u32);

impl Lit {
    fn from_dimacs(l: i32) -> Lit {
        let v = l.unsigned_abs() - 1;
        Lit(v << 1 | (l < 0) as u32)
    }

    fn var(self) -> usize {
        (self.0 >> 1) as usize
    }

    fn is_neg(self) -> bool {
        self.0 & 1 == 1
    }

    fn neg(self) -> Lit {
        Lit(self.0 ^ 1)
    }

    fn index(self) -> usize {
        self.0 as usize
    }
}

const UNASSIGNED: i8 = 0;
const TRUE: i8 = 1;
const FALSE: i8 = -1;

/// Budget for a single `solve` call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Limits {
    pub conflicts: Option<u64>,
    pub time: Option<Duration>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolverStats {
    pub decisions: u64,
    pub conflicts: u64,
    pub propagations: u64,
    pub learnt: u64,
}

/// Max-heap of variables keyed by activity; ties go to the lower id.
#[derive(Debug, Clone, Default)]
struct VarHeap {
    heap: Vec<usize>,
    pos: Vec<Option<usize>>,
}

impl VarHeap {
    fn better(act: &[f64], a: usize, b: usize) -> bool {
        act[a] > act[b] || (act[a] == act[b] && a < b)
    }

    fn grow(&mut self, n: usize) {
        self.pos.resize(n, None);
    }

    fn contains(&self, v: usize) -> bool {
        self.pos[v].is_some()
    }

    fn up(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        while i > 0 {
            let parent = (i - 1) / 2;
            if !Self::better(act, v, self.heap[parent]) {
                break;
            }
            self.heap[i] = self.heap[parent];
            self.pos[self.heap[i]] = Some(i);
            i = parent;
        }
        self.heap[i] = v;
        self.pos[v] = Some(i);
    }

    fn down(&mut self, mut i: usize, act: &[f64]) {
        let v = self.heap[i];
        let n = self.heap.len();
        loop {
            let l = 2 * i + 1;
            if l >= n {
                break;
            }
            let r = l + 1;
            let c = if r < n && Self::better(act, self.heap[r], self.heap[l]) {
                r
            } else {
                l
            };
            if !Self::better(act, self.heap[c], v) {
                break;
            }
            self.heap[i] = self.heap[c];
            self.pos[self.heap[i]] = Some(i);
            i = c;
        }
        self.heap[i] = v;
        self.pos[v] = Some(i);
    }

    fn insert(&mut self, v: usize, act: &[f64]) {
        if self.contains(v) {
            return;
        }
        self.heap.push(v);
        let i = self.heap.len() - 1;
        self.pos[v] = Some(i);
        self.up(i, act);
    }

    fn increased(&mut self, v: usize, act: &[f64]) {
        if let Some(i) = self.pos[v] {
            self.up(i, act);
        }
    }

    fn pop(&mut self, act: &[f64]) -> Option<usize> {
        let top = *self.heap.first()?;
        let last = self.heap.pop().unwrap();
        self.pos[top] = None;
        if !self.heap.is_empty() {
            self.heap[0] = last;
            self.pos[last] = Some(0);
            self.down(0, act);
        }
        Some(top)
    }
}

fn luby(mut i: u64) -> u64 {
    // i is 1-based
    loop {
        let mut k = 1u32;
        while (1u64 << k) - 1 < i {
            k += 1;
        }
        if (1u64 << k) - 1 == i {
            return 1u64 << (k - 1);
        }
        i -= (1u64 << (k - 1)) - 1;
    }
}

/// Conflict-driven clause-learning solver with two watched literals.
/// Clauses added between `solve` calls persist, so it can enumerate models
/// by adding blocking clauses.
#[derive(Debug, Clone)]
pub struct Solver {
    num_vars: usize,
    clauses: Vec<Vec<Lit>>,
    watches: Vec<Vec<usize>>,
    assign: Vec<i8>,
    level: Vec<u32>,
    reason: Vec<Option<usize>>,
    trail: Vec<Lit>,
    trail_lim: Vec<usize>,
    qhead: usize,
    activity: Vec<f64>,
    var_inc: f64,
    heap: VarHeap,
    phase: Vec<bool>,
    seen: Vec<bool>,
    unsat: bool,
    limits: Limits,
    stats: SolverStats,
    #[cfg(debug_assertions)]
    originals: Vec<Vec<i32>>,
}

impl Solver {
    pub fn new(num_vars: u32) -> Self {
        let mut s = Solver {
            num_vars: 0,
            clauses: Vec::new(),
            watches: Vec::new(),
            assign: Vec::new(),
            level: Vec::new(),
            reason: Vec::new(),
            trail: Vec::new(),
            trail_lim: Vec::new(),
            qhead: 0,
            activity: Vec::new(),
            var_inc: 1.0,
            heap: VarHeap::default(),
            phase: Vec::new(),
            seen: Vec::new(),
            unsat: false,
            limits: Limits::default(),
            stats: SolverStats::default(),
            #[cfg(debug_assertions)]
            originals: Vec::new(),
        };
        s.reserve_vars(num_vars);
        s
    }

    pub fn num_vars(&self) -> u32 {
        self.num_vars as u32
    }

    pub fn stats(&self) -> SolverStats {
        self.stats
    }

    pub fn set_limits(&mut self, limits: Limits) {
        self.limits = limits;
    }

    /// Grow the variable set to at least `n` variables.
    pub fn reserve_vars(&mut self, n: u32) {
        let n = n as usize;
        if n <= self.num_vars {
            return;
        }
        self.assign.resize(n, UNASSIGNED);
        self.level.resize(n, 0);
        self.reason.resize(n, None);
        self.activity.resize(n, 0.0);
        self.phase.resize(n, false);
        self.seen.resize(n, false);
        self.watches.resize(2 * n, Vec::new());
        self.heap.grow(n);
        for v in self.num_vars..n {
            self.heap.insert(v, &self.activity);
        }
        self.num_vars = n;
    }

    pub fn new_var(&mut self) -> u32 {
        self.reserve_vars(self.num_vars as u32 + 1);
        self.num_vars as u32
    }

    fn value(&self, l: Lit) -> i8 {
        let v = self.assign[l.var()];
        if l.is_neg() {
            -v
        } else {
            v
        }
    }

    fn decision_level(&self) -> u32 {
        self.trail_lim.len() as u32
    }

    fn enqueue(&mut self, l: Lit, reason: Option<usize>) {
        let v = l.var();
        self.assign[v] = if l.is_neg() { FALSE } else { TRUE };
        self.level[v] = self.decision_level();
        self.reason[v] = reason;
        self.trail.push(l);
    }

    fn cancel_until(&mut self, level: u32) {
        if self.decision_level() <= level {
            return;
        }
        let lim = self.trail_lim[level as usize];
        for i in (lim..self.trail.len()).rev() {
            let l = self.trail[i];
            let v = l.var();
            self.phase[v] = !l.is_neg();
            self.assign[v] = UNASSIGNED;
            self.reason[v] = None;
            self.heap.insert(v, &self.activity);
        }
        self.trail.truncate(lim);
        self.trail_lim.truncate(level as usize);
        self.qhead = lim;
    }

    /// Add a clause of DIMACS literals. Must be called between solves.
    pub fn add_clause(&mut self, lits: &[i32]) -> Result<(), SatError> {
        for &l in lits {
            if l == 0 || l.unsigned_abs() as usize > self.num_vars {
                return Err(SatError::LiteralOutOfRange(l));
            }
        }
        #[cfg(debug_assertions)]
        self.originals.push(lits.to_vec());
        if self.unsat {
            return Ok(());
        }
        self.cancel_until(0);
        let mut clause: Vec<Lit> = Vec::with_capacity(lits.len());
        for &l in lits {
            let lit = Lit::from_dimacs(l);
            match self.value(lit) {
                TRUE => return Ok(()),
                FALSE => continue,
                _ => {}
            }
            if clause.contains(&lit.neg()) {
                return Ok(());
            }
            if !clause.contains(&lit) {
                clause.push(lit);
            }
        }
        match clause.len() {
            0 => self.unsat = true,
            1 => {
                self.enqueue(clause[0], None);
                if self.propagate().is_some() {
                    self.unsat = true;
                }
            }
            _ => {
                self.attach(clause);
            }
        }
        Ok(())
    }

    fn attach(&mut self, clause: Vec<Lit>) -> usize {
        let ci = self.clauses.len();
        self.watches[clause[0].index()].push(ci);
        self.watches[clause[1].index()].push(ci);
        self.clauses.push(clause);
        ci
    }

    fn propagate(&mut self) -> Option<usize> {
        while self.qhead < self.trail.len() {
            let p = self.trail[self.qhead];
            self.qhead += 1;
            self.stats.propagations += 1;
            let false_lit = p.neg();
            let mut ws = std::mem::take(&mut self.watches[false_lit.index()]);
            let mut i = 0;
            let mut j = 0;
            let mut conflict = None;
            while i < ws.len() {
                let ci = ws[i];
                i += 1;
                let c = &mut self.clauses[ci];
                if c[0] == false_lit {
                    c.swap(0, 1);
                }
                let first = c[0];
                let v0 = {
                    let a = self.assign[first.var()];
                    if first.is_neg() {
                        -a
                    } else {
                        a
                    }
                };
                if v0 == TRUE {
                    ws[j] = ci;
                    j += 1;
                    continue;
                }
                let mut moved = false;
                for k in 2..c.len() {
                    let l = c[k];
                    let a = self.assign[l.var()];
                    let val = if l.is_neg() { -a } else { a };
                    if val != FALSE {
                        c.swap(1, k);
                        let nw = c[1].index();
                        self.watches[nw].push(ci);
                        moved = true;
                        break;
                    }
                }
                if moved {
                    continue;
                }
                ws[j] = ci;
                j += 1;
                if v0 == FALSE {
                    conflict = Some(ci);
                    while i < ws.len() {
                        ws[j] = ws[i];
                        j += 1;
                        i += 1;
                    }
                } else {
                    self.enqueue(first, Some(ci));
                }
            }
            ws.truncate(j);
            self.watches[false_lit.index()] = ws;
            if conflict.is_some() {
                return conflict;
            }
        }
        None
    }

    fn bump(&mut self, v: usize) {
        self.activity[v] += self.var_inc;
        if self.activity[v] > 1e100 {
            for a in &mut self.activity {
                *a *= 1e-100;
            }
            self.var_inc *= 1e-100;
        }
        self.heap.increased(v, &self.activity);
    }

    fn analyze(&mut self, confl: usize) -> (Vec<Lit>, u32) {
        let mut learnt = vec![Lit(0)];
        let mut counter = 0;
        let mut p: Option<Lit> = None;
        let mut idx = self.trail.len();
        let mut clause = confl;
        let current = self.decision_level();
        loop {
            let lits = self.clauses[clause].clone();
            for q in lits {
                if Some(q) == p {
                    continue;
                }
                let v = q.var();
                if !self.seen[v] && self.level[v] > 0 {
                    self.seen[v] = true;
                    self.bump(v);
                    if self.level[v] == current {
                        counter += 1;
                    } else {
                        learnt.push(q);
                    }
                }
            }
            loop {
                idx -= 1;
                if self.seen[self.trail[idx].var()] {
                    break;
                }
            }
            let lit = self.trail[idx];
            self.seen[lit.var()] = false;
            p = Some(lit);
            counter -= 1;
            if counter == 0 {
                break;
            }
            clause = self.reason[lit.var()].expect("implied literal has a reason");
        }
        learnt[0] = p.unwrap().neg();
        for l in &learnt[1..] {
            self.seen[l.var()] = false;
        }
        let mut bt = 0;
        if learnt.len() > 1 {
            let mut max_i = 1;
            for i in 2..learnt.len() {
                if self.level[learnt[i].var()] > self.level[learnt[max_i].var()] {
                    max_i = i;
                }
            }
            learnt.swap(1, max_i);
            bt = self.level[learnt[1].var()];
        }
        (learnt, bt)
    }

    fn pick_branch(&mut self) -> Option<Lit> {
        while let Some(v) = self.heap.pop(&self.activity) {
            if self.assign[v] == UNASSIGNED {
                return Some(Lit((v as u32) << 1 | (!self.phase[v]) as u32));
            }
        }
        None
    }

    pub fn solve(&mut self) -> Result<SatResult, SatError> {
        if self.unsat {
            return Ok(SatResult::Unsat);
        }
        self.cancel_until(0);
        if self.propagate().is_some() {
            self.unsat = true;
            return Ok(SatResult::Unsat);
        }
        let start = Instant::now();
        let mut conflicts_this_call: u64 = 0;
        let mut restart_no = 1;
        let mut restart_budget = luby(restart_no) * 100;
        let mut since_restart = 0;
        loop {
            if let Some(confl) = self.propagate() {
                self.stats.conflicts += 1;
                conflicts_this_call += 1;
                since_restart += 1;
                if self.decision_level() == 0 {
                    self.unsat = true;
                    return Ok(SatResult::Unsat);
                }
                if let Some(max) = self.limits.conflicts {
                    if conflicts_this_call > max {
                        self.cancel_until(0);
                        return Err(SatError::ResourceLimit);
                    }
                }
                if conflicts_this_call.is_multiple_of(256) {
                    if let Some(t) = self.limits.time {
                        if start.elapsed() > t {
                            self.cancel_until(0);
                            return Err(SatError::ResourceLimit);
                        }
                    }
                }
                let (learnt, bt) = self.analyze(confl);
                self.cancel_until(bt);
                if learnt.len() == 1 {
                    self.enqueue(learnt[0], None);
                } else {
                    let first = learnt[0];
                    let ci = self.attach(learnt);
                    self.stats.learnt += 1;
                    self.enqueue(first, Some(ci));
                }
                self.var_inc /= 0.95;
                if since_restart >= restart_budget {
                    since_restart = 0;
                    restart_no += 1;
                    restart_budget = luby(restart_no) * 100;
                    self.cancel_until(0);
                }
            } else {
                match self.pick_branch() {
                    None => {
                        let model = SatModel {
                            assignment: self.assign.iter().map(|a| *a == TRUE).collect(),
                        };
                        #[cfg(debug_assertions)]
                        for c in &self.originals {
                            assert!(model.satisfies(c), "solver returned a non-model");
                        }
                        self.cancel_until(0);
                        return Ok(SatResult::Sat(model));
                    }
                    Some(l) => {
                        self.stats.decisions += 1;
                        self.trail_lim.push(self.trail.len());
                        self.enqueue(l, None);
                    }
                }
            }
        }
    }
}
