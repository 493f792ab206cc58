use std::collections::{BTreeMap, BTreeSet, VecDeque};

use super::{
    EntryMark, FlowTag, Lts, LtsData, LtsError, StateId, Transition, TransitionId, TransitionKind,
    TER,
};
use crate::workflow::{Activity, ActivityId, ActivityKind, WorkflowDef};

pub const DEFAULT_STATE_CAP: usize = 100_000;

#[derive(Debug, Clone)]
struct FragTrans {
    src: u32,
    dst: u32,
    label: String,
    activity: ActivityId,
    tags: Vec<FlowTag>,
}

/// A partial transition system with one entry and at most one exit.
#[derive(Debug, Clone)]
struct Fragment {
    n: u32,
    trans: Vec<FragTrans>,
    entry: u32,
    exit: Option<u32>,
    marks: Vec<(u32, EntryMark)>,
    finals: Vec<u32>,
}

struct UnionFind(Vec<u32>);

impl UnionFind {
    fn find(&mut self, x: u32) -> u32 {
        let mut r = x;
        while self.0[r as usize] != r {
            r = self.0[r as usize];
        }
        let mut c = x;
        while self.0[c as usize] != r {
            let next = self.0[c as usize];
            self.0[c as usize] = r;
            c = next;
        }
        r
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.0[hi as usize] = lo;
        }
    }
}

/// A state inside one of the parts being glued: (part index, local id).
type PartState = (usize, u32);

/// Place `parts` side by side, merge the given (part, local) state pairs,
/// and compact the numbering. Returns the glued fragment (entry/exit unset)
/// and a mapping from (part, local) to the new id.
fn glue(
    parts: &[Fragment],
    merges: &[(PartState, PartState)],
) -> (Fragment, impl Fn(usize, u32) -> u32) {
    let mut offsets = Vec::with_capacity(parts.len());
    let mut total = 0u32;
    for p in parts {
        offsets.push(total);
        total += p.n;
    }
    let mut uf = UnionFind((0..total).collect());
    for &((pa, la), (pb, lb)) in merges {
        uf.union(offsets[pa] + la, offsets[pb] + lb);
    }
    let mut renumber = vec![u32::MAX; total as usize];
    let mut next = 0u32;
    let mut mapping = vec![0u32; total as usize];
    for g in 0..total {
        let root = uf.find(g);
        if renumber[root as usize] == u32::MAX {
            renumber[root as usize] = next;
            next += 1;
        }
        mapping[g as usize] = renumber[root as usize];
    }
    let map = move |p: usize, l: u32| mapping[(offsets[p] + l) as usize];
    let mut frag = Fragment {
        n: next,
        trans: Vec::new(),
        entry: 0,
        exit: None,
        marks: Vec::new(),
        finals: Vec::new(),
    };
    for (pi, p) in parts.iter().enumerate() {
        for t in &p.trans {
            frag.trans.push(FragTrans {
                src: map(pi, t.src),
                dst: map(pi, t.dst),
                ..t.clone()
            });
        }
        for (s, m) in &p.marks {
            frag.marks.push((map(pi, *s), m.clone()));
        }
        for s in &p.finals {
            frag.finals.push(map(pi, *s));
        }
    }
    (frag, map)
}

fn atomic(label: String, activity: &ActivityId) -> Fragment {
    Fragment {
        n: 2,
        trans: vec![FragTrans {
            src: 0,
            dst: 1,
            label,
            activity: activity.clone(),
            tags: Vec::new(),
        }],
        entry: 0,
        exit: Some(1),
        marks: Vec::new(),
        finals: Vec::new(),
    }
}

fn empty() -> Fragment {
    Fragment {
        n: 1,
        trans: Vec::new(),
        entry: 0,
        exit: Some(0),
        marks: Vec::new(),
        finals: Vec::new(),
    }
}

fn sequence(parts: Vec<Fragment>) -> Fragment {
    let mut kept = Vec::new();
    for p in parts {
        let stops = p.exit.is_none();
        kept.push(p);
        if stops {
            break;
        }
    }
    if kept.is_empty() {
        return empty();
    }
    let merges: Vec<_> = kept
        .windows(2)
        .enumerate()
        .map(|(i, w)| ((i, w[0].exit.unwrap()), (i + 1, w[1].entry)))
        .collect();
    let (mut frag, map) = glue(&kept, &merges);
    frag.entry = map(0, kept[0].entry);
    let last = kept.len() - 1;
    frag.exit = kept[last].exit.map(|e| map(last, e));
    frag
}

fn choice(parts: Vec<Fragment>, mark: Option<EntryMark>) -> Fragment {
    let mut merges = Vec::new();
    for i in 1..parts.len() {
        merges.push(((0, parts[0].entry), (i, parts[i].entry)));
    }
    let exits: Vec<(usize, u32)> = parts
        .iter()
        .enumerate()
        .filter_map(|(i, p)| p.exit.map(|e| (i, e)))
        .collect();
    for w in exits.windows(2) {
        merges.push((w[0], w[1]));
    }
    let (mut frag, map) = glue(&parts, &merges);
    frag.entry = map(0, parts[0].entry);
    frag.exit = exits.first().map(|&(i, e)| map(i, e));
    if let Some(m) = mark {
        frag.marks.push((frag.entry, m));
    }
    frag
}

fn product(flow: &ActivityId, parts: Vec<Fragment>, cap: usize) -> Result<Fragment, LtsError> {
    if parts.is_empty() {
        return Ok(empty());
    }
    let mut size: usize = 1;
    for p in &parts {
        size = size.saturating_mul(p.n as usize);
        if size > cap {
            return Err(LtsError::ModelTooLarge { cap });
        }
    }
    // mixed radix, branch 0 most significant
    let radix: Vec<u32> = parts.iter().map(|p| p.n).collect();
    let encode = |tuple: &[u32]| -> u32 {
        tuple
            .iter()
            .zip(&radix)
            .fold(0u32, |acc, (&c, &r)| acc * r + c)
    };
    let decode = |mut code: u32| -> Vec<u32> {
        let mut t = vec![0u32; radix.len()];
        for i in (0..radix.len()).rev() {
            t[i] = code % radix[i];
            code /= radix[i];
        }
        t
    };
    let mut frag = Fragment {
        n: size as u32,
        trans: Vec::new(),
        entry: encode(&parts.iter().map(|p| p.entry).collect::<Vec<_>>()),
        exit: None,
        marks: Vec::new(),
        finals: Vec::new(),
    };
    let exits: Option<Vec<u32>> = parts.iter().map(|p| p.exit).collect();
    frag.exit = exits.map(|e| encode(&e));
    for code in 0..size as u32 {
        let tuple = decode(code);
        for (b, p) in parts.iter().enumerate() {
            for t in p.trans.iter().filter(|t| t.src == tuple[b]) {
                let mut dst = tuple.clone();
                dst[b] = t.dst;
                let mut tags = vec![FlowTag {
                    flow: flow.clone(),
                    branch: b as u32,
                }];
                tags.extend(t.tags.iter().cloned());
                frag.trans.push(FragTrans {
                    src: code,
                    dst: encode(&dst),
                    label: t.label.clone(),
                    activity: t.activity.clone(),
                    tags,
                });
            }
            for (s, m) in p.marks.iter().filter(|(s, _)| *s == tuple[b]) {
                let _ = s;
                frag.marks.push((code, m.clone()));
            }
        }
    }
    frag.marks.push((frag.entry, EntryMark::Flow(flow.clone())));
    Ok(frag)
}

pub fn valuation_label(id: &ActivityId, value: bool) -> String {
    format!("{id}={value}")
}

fn build(a: &Activity, cap: usize) -> Result<Fragment, LtsError> {
    Ok(match &a.kind {
        ActivityKind::Receive { var } => atomic(format!("receive_{var}"), &a.id),
        ActivityKind::Invoke(inv) => atomic(inv.op.clone(), &a.id),
        ActivityKind::Assign { from, to } => atomic(format!("assign_{from}_{to}"), &a.id),
        ActivityKind::LocalCall { op, .. } => atomic(op.clone(), &a.id),
        ActivityKind::Terminate => {
            let mut f = atomic("terminate".into(), &a.id);
            f.exit = None;
            f.finals.push(1);
            f
        }
        ActivityKind::Sequence(items) => {
            let parts = items
                .iter()
                .map(|i| build(i, cap))
                .collect::<Result<Vec<_>, _>>()?;
            sequence(parts)
        }
        ActivityKind::Flow(items) => {
            let parts = items
                .iter()
                .map(|i| build(i, cap))
                .collect::<Result<Vec<_>, _>>()?;
            product(&a.id, parts, cap)?
        }
        ActivityKind::Pick(branches) => {
            let mut parts = Vec::new();
            for b in branches {
                parts.push(sequence(vec![
                    atomic(b.event.clone(), &a.id),
                    build(&b.body, cap)?,
                ]));
            }
            choice(parts, Some(EntryMark::Pick(a.id.clone())))
        }
        ActivityKind::If {
            then_branch,
            else_branch,
            ..
        } => {
            let then_part = sequence(vec![
                atomic(valuation_label(&a.id, true), &a.id),
                build(then_branch, cap)?,
            ]);
            let mut else_seq = vec![atomic(valuation_label(&a.id, false), &a.id)];
            if let Some(e) = else_branch {
                else_seq.push(build(e, cap)?);
            }
            choice(vec![then_part, sequence(else_seq)], None)
        }
        ActivityKind::While { max_iter, body, .. } => {
            let body = build(body, cap)?;
            // innermost: bound reached, only the exit valuation remains
            let mut frag = atomic(valuation_label(&a.id, false), &a.id);
            for _ in 0..*max_iter {
                let again = sequence(vec![
                    atomic(valuation_label(&a.id, true), &a.id),
                    body.clone(),
                    frag,
                ]);
                frag = choice(
                    vec![again, atomic(valuation_label(&a.id, false), &a.id)],
                    None,
                );
            }
            frag
        }
    })
    .and_then(|f| {
        if f.n as usize > cap {
            Err(LtsError::ModelTooLarge { cap })
        } else {
            Ok(f)
        }
    })
}

pub fn translate(def: &WorkflowDef) -> Result<Lts, LtsError> {
    translate_with_cap(def, DEFAULT_STATE_CAP)
}

/// Translate a workflow into an LTS. States are numbered breadth-first from
/// the initial state; the terminal state reached by `TER` comes last.
pub fn translate_with_cap(def: &WorkflowDef, cap: usize) -> Result<Lts, LtsError> {
    let frag = build(&def.root, cap)?;
    if frag.n as usize + 1 > cap {
        return Err(LtsError::ModelTooLarge { cap });
    }

    // breadth-first renumbering over forward transitions in insertion order
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); frag.n as usize];
    for (i, t) in frag.trans.iter().enumerate() {
        out[t.src as usize].push(i);
    }
    let mut order = vec![u32::MAX; frag.n as usize];
    let mut queue = VecDeque::from([frag.entry]);
    order[frag.entry as usize] = 0;
    let mut next = 1u32;
    let mut visit_order = vec![frag.entry];
    while let Some(s) = queue.pop_front() {
        for &ti in &out[s as usize] {
            let d = frag.trans[ti].dst;
            if order[d as usize] == u32::MAX {
                order[d as usize] = next;
                next += 1;
                queue.push_back(d);
                visit_order.push(d);
            }
        }
    }
    let num_reachable = next;
    let terminal = StateId(num_reachable);

    let mut transitions: Vec<Transition> = Vec::new();
    for &s in &visit_order {
        for &ti in &out[s as usize] {
            let t = &frag.trans[ti];
            transitions.push(Transition {
                id: TransitionId(transitions.len() as u32),
                src: StateId(order[t.src as usize]),
                label: t.label.clone(),
                dst: StateId(order[t.dst as usize]),
                kind: TransitionKind::Forward,
                activity: Some(t.activity.clone()),
                reverses: None,
                flow_tags: t.tags.clone(),
            });
        }
    }
    let index = def.activity_index();
    let forward_count = transitions.len();
    for i in 0..forward_count {
        let fwd = transitions[i].clone();
        let comp = fwd
            .activity
            .as_ref()
            .and_then(|a| index.get(a))
            .and_then(|a| match &a.kind {
                ActivityKind::Invoke(inv) => inv.compensation.clone(),
                _ => None,
            });
        if let Some(comp) = comp {
            transitions.push(Transition {
                id: TransitionId(transitions.len() as u32),
                src: fwd.dst,
                label: comp.op,
                dst: fwd.src,
                kind: TransitionKind::Compensation,
                activity: fwd.activity.clone(),
                reverses: Some(fwd.id),
                flow_tags: Vec::new(),
            });
        }
    }
    for s in 0..num_reachable {
        transitions.push(Transition {
            id: TransitionId(transitions.len() as u32),
            src: StateId(s),
            label: TER.to_string(),
            dst: terminal,
            kind: TransitionKind::Termination,
            activity: None,
            reverses: None,
            flow_tags: Vec::new(),
        });
    }

    let mut final_states = BTreeSet::new();
    for s in frag.exit.iter().chain(frag.finals.iter()) {
        if order[*s as usize] != u32::MAX {
            final_states.insert(StateId(order[*s as usize]));
        }
    }
    let mut entries: Vec<(StateId, EntryMark)> = frag
        .marks
        .iter()
        .filter(|(s, _)| order[*s as usize] != u32::MAX)
        .map(|(s, m)| (StateId(order[*s as usize]), m.clone()))
        .collect();
    entries.sort_by_key(|a| a.0);
    entries.dedup();

    let labels = transitions.iter().map(|t| t.label.clone()).collect();
    Ok(Lts::from(LtsData {
        num_states: num_reachable + 1,
        labels,
        transitions,
        initial: [StateId(0)].into(),
        final_states,
        terminal: Some(terminal),
        change_states: BTreeMap::new(),
        entries,
    }))
}
