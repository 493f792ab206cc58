//! One line per headline requirement, then a non-zero exit if any failed.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;
use std::time::{Duration, Instant};

use compass_core::deps::{
    build_defuse, directly_data_dependent, directly_data_dependent_bruteforce, DefUseTable,
};
use compass_core::engine::{parse_scenario, run, Model, RunState};
use compass_core::fixtures;
use compass_core::lts::{LtsBuilder, Provenance, TransitionId, TER};
use compass_core::monitor::{Color, PropertyKind};
use compass_core::oracle::{filter_check, oracle_check};
use compass_core::planner::{plan_for_run, Plan, PlanOptions};
use compass_core::report::invoke_relevance;
use compass_core::sat::{enumerate_exhaustive, pigeonhole, solve, CnfInstance, SatResult};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Pinned tolerances.
const TBS_STATES: (usize, usize) = (40, 70);
const TBS_FORWARD: (usize, usize) = (50, 90);
const TBS_CHANGE: (usize, usize) = (28, 42);
const TBS_BUDGET: Duration = Duration::from_secs(5);
const T1_BASELINE: (usize, usize) = (13, 2);
const T1_RELEVANT: (usize, usize) = (8, 2);
const T1_BUDGET: Duration = Duration::from_secs(1);
const T2_K10: (usize, usize) = (2, 1);
const T2_MIN_REDUCTION: f64 = 0.60;
const T2_BUDGET: Duration = Duration::from_secs(120);
const ORACLE_CASES: usize = 40;
const ORACLE_BUDGET: Duration = Duration::from_secs(60);
const FILTER_CASES: usize = 120;
const RELEVANT_INVOKES: (usize, usize) = (5, 1);
const PHP_BUDGET: Duration = Duration::from_secs(10);

struct Outcome {
    name: &'static str,
    pass: bool,
    detail: String,
}

fn within(v: usize, (target, tol): (usize, usize)) -> bool {
    v.abs_diff(target) <= tol
}

fn in_range(v: usize, (lo, hi): (usize, usize)) -> bool {
    (lo..=hi).contains(&v)
}

fn opts(k: usize, relevant_only: bool, filter_forbidden: bool) -> PlanOptions {
    PlanOptions {
        k,
        max_plans: None,
        relevant_only,
        filter_forbidden,
    }
}

fn scenario_run(model: &Arc<Model>, text: &str) -> RunState {
    run(model.clone(), parse_scenario(text).unwrap()).unwrap()
}

fn tbs_sizes() -> Outcome {
    let start = Instant::now();
    let model = Model::tbs();
    let stats = model.lts.stats();
    let elapsed = start.elapsed();
    Outcome {
        name: "TBS fixture sizes",
        pass: in_range(stats.states, TBS_STATES)
            && in_range(stats.forward_transitions, TBS_FORWARD)
            && in_range(stats.change_states, TBS_CHANGE)
            && elapsed < TBS_BUDGET,
        detail: format!(
            "states={} forward={} change={} (expected 52/67/35) in {:.3}s",
            stats.states,
            stats.forward_transitions,
            stats.change_states,
            elapsed.as_secs_f64()
        ),
    }
}

fn t1_plans(model: &Arc<Model>) -> Outcome {
    let r = scenario_run(model, fixtures::T1_SCENARIO);
    let trace = r.trace();
    let labels: Vec<&str> = trace.labels().collect();
    // p1_A returns to the first flight query, p1_B to the start of the
    // parallel reservations
    let a_pos = labels
        .iter()
        .position(|l| *l == "getAvailableFlights")
        .unwrap();
    let b_pos = (0..trace.len())
        .find(|i| {
            matches!(
                model.lts.change_states().get(&trace.states[*i]),
                Some(Provenance::FlowEntry(_))
            )
        })
        .unwrap();
    let has = |plans: &[Plan], pos: usize| {
        plans
            .iter()
            .any(|p| p.change_position == pos && p.redo.is_empty())
    };

    let ks = [5, 10, 15, 20, 25, 30];
    let mut base = Vec::new();
    let mut rel = Vec::new();
    let mut slowest = 0f64;
    let mut ids_ok = true;
    for k in ks {
        let b = plan_for_run(&r, &opts(k, false, false)).unwrap();
        let p = plan_for_run(&r, &opts(k, true, false)).unwrap();
        slowest = slowest.max(b.seconds).max(p.seconds);
        if k == 30 {
            ids_ok = has(&b.plans, a_pos)
                && has(&b.plans, b_pos)
                && has(&p.plans, a_pos)
                && has(&p.plans, b_pos);
        }
        base.push(b.plans.len());
        rel.push(p.plans.len());
    }
    let monotone = base.windows(2).all(|w| w[0] <= w[1]) && rel.windows(2).all(|w| w[0] <= w[1]);
    let saturated = base[4] == base[5] && rel[4] == rel[5];
    let pruned = base.iter().zip(&rel).all(|(b, p)| p <= b);
    let calibrated = within(base[5], T1_BASELINE) && within(rel[5], T1_RELEVANT);
    Outcome {
        name: "t1 safety plans",
        pass: monotone && saturated && pruned && ids_ok && calibrated && slowest < T1_BUDGET.as_secs_f64(),
        detail: format!(
            "baseline {base:?} relevant {rel:?} (expected 13/8 +-2) p1A/p1B found={ids_ok} slowest {slowest:.3}s"
        ),
    }
}

fn is_p2a(model: &Model, p: &Plan) -> bool {
    let labels = p.redo_labels(&model.lts);
    matches!(model.lts.change_states().get(&p.change_state), Some(Provenance::NonIdemInvoke(op)) if op == "getAvailableRentalsHotel")
        && labels.last() == Some(&"holdCar")
}

fn is_p2b(model: &Model, p: &Plan) -> bool {
    let labels = p.redo_labels(&model.lts);
    labels.first() == Some(&"pickAirport")
        && labels.last() == Some(&"holdCar")
        && p.undo
            .iter()
            .any(|u| u.label(&model.lts) == "releaseShuttle")
}

fn t2_plans(model: &Arc<Model>) -> Outcome {
    let r = scenario_run(model, fixtures::T2_SCENARIO);
    let k10 = plan_for_run(&r, &opts(10, false, false))
        .unwrap()
        .plans
        .len();
    let base = plan_for_run(&r, &opts(30, false, false)).unwrap();
    let both = plan_for_run(&r, &opts(30, true, true)).unwrap();
    let top_ok = |plans: &[Plan]| {
        plans.len() >= 3
            && is_p2a(model, &plans[0])
            && is_p2a(model, &plans[1])
            && plans[0].redo != plans[1].redo
            && is_p2b(model, &plans[2])
    };
    let reduction = 1.0 - both.plans.len() as f64 / base.plans.len().max(1) as f64;
    let seconds = base.seconds.max(both.seconds);
    Outcome {
        name: "t2 liveness plans",
        pass: top_ok(&base.plans)
            && top_ok(&both.plans)
            && within(k10, T2_K10)
            && reduction >= T2_MIN_REDUCTION
            && seconds < T2_BUDGET.as_secs_f64(),
        detail: format!(
            "k=10 {k10} (expected 2 +-1); k=30 baseline {} combined {} reduction {:.1}% (need >= 60%); top ranks p2A,p2A,p2B={}; encoding {} vars {} clauses; {seconds:.2}s",
            base.plans.len(),
            both.plans.len(),
            reduction * 100.0,
            top_ok(&base.plans) && top_ok(&both.plans),
            base.vars.unwrap(),
            base.clauses.unwrap()
        ),
    }
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let s = oracle_check(2024, ORACLE_CASES, false);
    let broken = oracle_check(2024, ORACLE_CASES, true);
    let elapsed = start.elapsed();
    Outcome {
        name: "SAT vs DFS plan enumeration",
        pass: s.passed() && !broken.passed() && elapsed < ORACLE_BUDGET,
        detail: format!(
            "{} cases, {} plans, {} mismatches; corrupted blocking caught in {} cases; {:.2}s",
            s.cases,
            s.plans_compared,
            s.mismatches.len(),
            broken.mismatches.len(),
            elapsed.as_secs_f64()
        ),
    }
}

fn filter_soundness() -> Outcome {
    let s = filter_check(31, FILTER_CASES, 8);
    Outcome {
        name: "forbidden-behavior filter",
        pass: s.cases >= 100 && s.decision_mismatches == 0 && s.unsound == 0,
        detail: format!(
            "{} cases ({} liveness), {} plans, {} forbidden, {} survivors executed, {} decision mismatches, {} unsound",
            s.cases, s.liveness_cases, s.plans_checked, s.forbidden, s.survivors_executed, s.decision_mismatches, s.unsound
        ),
    }
}

/// Transitive closure of the brute-force direct relation, as a set of
/// (u, v) pairs meaning v depends on u.
fn bruteforce_closure(
    model: &Model,
    table: &DefUseTable,
) -> BTreeSet<(TransitionId, TransitionId)> {
    let ids: Vec<TransitionId> = model.lts.forward().map(|t| t.id).collect();
    let mut reach: BTreeMap<TransitionId, BTreeSet<TransitionId>> = BTreeMap::new();
    for &u in &ids {
        for &v in &ids {
            if directly_data_dependent_bruteforce(&model.lts, table, u, v) {
                reach.entry(u).or_default().insert(v);
            }
        }
    }
    let mut out = BTreeSet::new();
    for &u in &ids {
        let mut stack: Vec<TransitionId> = reach.get(&u).into_iter().flatten().copied().collect();
        let mut seen = BTreeSet::new();
        while let Some(v) = stack.pop() {
            if seen.insert(v) {
                stack.extend(reach.get(&v).into_iter().flatten().copied());
            }
        }
        out.extend(seen.into_iter().map(|v| (u, v)));
    }
    out
}

fn dependency_analysis(model: &Arc<Model>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut pairs = 0;
    let mut disagreements = 0;
    for _ in 0..100 {
        let n = rng.gen_range(2..=12u32);
        let mut b = LtsBuilder::new(n);
        for _ in 0..rng.gen_range(n..=2 * n) {
            b.forward(rng.gen_range(0..n), "t", rng.gen_range(0..n));
        }
        let lts = b.build();
        let mut table = DefUseTable::from_parts(BTreeMap::new(), BTreeSet::new());
        let ids: Vec<_> = lts.forward().map(|t| t.id).collect();
        let mut entries = BTreeMap::new();
        for &t in &ids {
            let mut du = compass_core::deps::DefUse::default();
            for v in ["x", "y"] {
                if rng.gen_bool(0.35) {
                    du.defs.insert(v.into());
                }
                if rng.gen_bool(0.35) {
                    du.uses.insert(v.into());
                }
            }
            entries.insert(t, du);
        }
        table = DefUseTable::from_parts(entries, table.control_transitions().clone());
        for &u in &ids {
            for &v in &ids {
                pairs += 1;
                if directly_data_dependent(&lts, &table, u, v)
                    != directly_data_dependent_bruteforce(&lts, &table, u, v)
                {
                    disagreements += 1;
                }
            }
        }
    }

    // relevant change states on t1, recomputed from the brute-force relation
    let r = scenario_run(model, fixtures::T1_SCENARIO);
    let trace = r.trace();
    let table = build_defuse(&model.lts, &model.workflow);
    let closure = bruteforce_closure(model, &table);
    let plan = plan_for_run(&r, &opts(30, true, false)).unwrap();
    let controls: Vec<TransitionId> = trace
        .forward_transitions()
        .filter(|t| table.is_control(*t))
        .collect();
    let mut expected = BTreeSet::new();
    for (i, s) in trace.states[..trace.len()].iter().enumerate() {
        match model.lts.change_states().get(s) {
            Some(Provenance::NonIdemInvoke(_)) => {
                let taken = trace.steps[i].transition;
                let outgoing: Vec<TransitionId> = model
                    .lts
                    .forward_from(*s)
                    .filter(|t| t.activity.as_ref().and_then(|a| model.workflow.activity(a)).is_some_and(|a| {
                        matches!(&a.kind, compass_core::workflow::ActivityKind::Invoke(inv) if !inv.idempotent)
                    }))
                    .map(|t| t.id)
                    .collect();
                let invokes = if outgoing.contains(&taken) {
                    vec![taken]
                } else {
                    outgoing
                };
                if invokes
                    .iter()
                    .any(|u| controls.iter().any(|c| closure.contains(&(*u, *c))))
                {
                    expected.insert(*s);
                }
            }
            Some(_) => {
                expected.insert(*s);
            }
            None => {}
        }
    }
    let counts = invoke_relevance(&r);
    Outcome {
        name: "dependency analysis",
        pass: disagreements == 0 && plan.candidates == expected && within(counts.relevant, RELEVANT_INVOKES),
        detail: format!(
            "{pairs} random pairs, {disagreements} disagreements; t1 kept {} change states (oracle {}), relevant invokes {} of {} (expected 5 of 10, +-1)",
            plan.candidates.len(),
            expected.len(),
            counts.relevant,
            counts.visited
        ),
    }
}

fn monitor_suite(model: &Arc<Model>) -> Outcome {
    use Color::*;
    let colors = |name: &str| {
        model.monitors[model.monitor_index(name).unwrap()]
            .colors
            .clone()
    };
    let a1 = colors("P1");
    let a2 = colors("P2");
    let a3 = colors("P3");
    let a1_ok =
        a1.len() == 5 && a1[4] == Red && a1[3] == Yellow && a1[..3].iter().all(|c| *c == Neutral);
    let a2_ok = a2 == vec![Green, Yellow, Red];
    let a3_ok = a3.iter().filter(|c| **c == Red).count() == 1 && a3.contains(&Yellow);

    let halts = |text: &str, event: &str, property: &str| {
        let r = scenario_run(model, text);
        let Some(v) = r.violation() else { return false };
        let m = &model.monitors[v.monitor];
        v.pending_event == event
            && m.name == property
            && !m.is_red(r.monitor_states()[v.monitor])
            && m.is_red(m.step(r.monitor_states()[v.monitor], event))
    };
    let t1 = halts(fixtures::T1_SCENARIO, "notSameDates", "P1");
    let t2 = halts(fixtures::T2_SCENARIO, TER, "P2");
    Outcome {
        name: "monitor suite",
        pass: a1_ok && a2_ok && a3_ok && t1 && t2,
        detail: format!("A1 {a1:?} A2 {a2:?} A3 {a3:?}; halts before red on t1={t1} t2={t2}"),
    }
}

fn sat_core() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    let mut instances = 0;
    let mut wrong = 0;
    for i in 0..200 {
        let vars = if i % 20 == 0 {
            rng.gen_range(15..=20)
        } else {
            rng.gen_range(1..=14)
        };
        let mut inst = CnfInstance::new(vars);
        for _ in 0..rng.gen_range(1..=vars as usize * 5) {
            let c = (0..rng.gen_range(1..=3))
                .map(|_| {
                    let v = rng.gen_range(1..=vars) as i32;
                    if rng.gen_bool(0.5) {
                        v
                    } else {
                        -v
                    }
                })
                .collect();
            inst.add_clause(c);
        }
        let exhaustive_sat = !enumerate_exhaustive(&inst).is_empty();
        let ok = match solve(&inst).unwrap() {
            SatResult::Sat(m) => exhaustive_sat && inst.evaluate(&m),
            SatResult::Unsat => !exhaustive_sat,
        };
        instances += 1;
        wrong += usize::from(!ok);
    }
    let start = Instant::now();
    let php = solve(&pigeonhole(5, 4)).unwrap();
    let elapsed = start.elapsed();
    Outcome {
        name: "SAT core",
        pass: wrong == 0 && php == SatResult::Unsat && elapsed < PHP_BUDGET,
        detail: format!(
            "{instances} corpus instances, {wrong} wrong; PHP(5,4) {} in {:.3}s",
            if php == SatResult::Unsat {
                "UNSAT"
            } else {
                "SAT"
            },
            elapsed.as_secs_f64()
        ),
    }
}

fn main() {
    let model = Arc::new(Model::tbs());
    assert!(model
        .monitors
        .iter()
        .any(|m| m.kind == PropertyKind::Liveness));
    let outcomes = [
        tbs_sizes(),
        t1_plans(&model),
        t2_plans(&model),
        oracle_equivalence(),
        filter_soundness(),
        dependency_analysis(&model),
        monitor_suite(&model),
        sat_core(),
    ];
    let mut failed = 0;
    for o in &outcomes {
        println!(
            "{} {}: {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.name,
            o.detail
        );
        failed += usize::from(!o.pass);
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        outcomes.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
