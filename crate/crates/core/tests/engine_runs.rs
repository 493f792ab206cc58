use std::sync::Arc;

use compass_core::engine::{
    parse_scenario, replay_monitors, run, trace_from_json, trace_to_json, Model, RunStatus,
};
use compass_core::fixtures;
use compass_core::oracle::random_run;
use compass_core::planner::{plan_for_run, PlanOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn check_snapshots(r: &compass_core::engine::RunState) {
    let model = r.model();
    let trace = r.trace();
    assert_eq!(trace.snapshots.len(), trace.len() + 1);
    let labels: Vec<&str> = trace.labels().collect();
    for i in 0..=trace.len() {
        let expected = replay_monitors(&model.monitors, labels[..i].iter().copied());
        assert_eq!(trace.snapshots[i], expected, "snapshot {i}");
    }
}

#[test]
fn snapshots_equal_replay_of_trace_prefixes() {
    let model = Arc::new(Model::tbs());
    for scn in [fixtures::T1_SCENARIO, fixtures::T2_SCENARIO] {
        let r = run(model.clone(), parse_scenario(scn).unwrap()).unwrap();
        check_snapshots(&r);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut checked = 0;
    while checked < 50 {
        if let Some(r) = random_run(&mut rng) {
            check_snapshots(&r);
            checked += 1;
        }
    }
}

#[test]
fn snapshots_stay_consistent_after_recovery() {
    let model = Arc::new(Model::tbs());
    let mut r = run(model, parse_scenario(fixtures::T2_SCENARIO).unwrap()).unwrap();
    let plans = plan_for_run(
        &r,
        &PlanOptions {
            k: 15,
            ..Default::default()
        },
    )
    .unwrap()
    .plans;
    r.execute_plan(&plans[0]).unwrap();
    assert!(matches!(r.status(), RunStatus::Completed));
    check_snapshots(&r);
}

#[test]
fn trace_round_trips_after_plan_execution() {
    let model = Arc::new(Model::tbs());
    for scn in [fixtures::T1_SCENARIO, fixtures::T2_SCENARIO] {
        let mut r = run(model.clone(), parse_scenario(scn).unwrap()).unwrap();
        let plans = plan_for_run(&r, &PlanOptions::default()).unwrap().plans;
        r.execute_plan(plans.last().unwrap()).unwrap();
        let back = trace_from_json(&trace_to_json(&r)).unwrap();
        assert_eq!(back.history(), r.history());
        assert_eq!(back.status(), r.status());
        assert_eq!(back.monitor_states(), r.monitor_states());
        assert_eq!(back.trace(), r.trace());
        assert_eq!(back.recoveries(), 1);
    }
}

#[test]
fn malformed_trace_file_is_rejected() {
    assert!(trace_from_json("{\"workflow\": 3}").is_err());
    let model = Arc::new(Model::tbs());
    let r = run(model, parse_scenario(fixtures::T1_SCENARIO).unwrap()).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&trace_to_json(&r)).unwrap();
    json["run"]["history"][0]["transition"] = serde_json::json!(100000);
    assert!(trace_from_json(&json.to_string()).is_err());
}
