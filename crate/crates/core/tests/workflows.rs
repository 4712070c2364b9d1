//! Cross-module workflows through the public API.

use ladderlab::engine::{ControlSchedule, Propagator};
use ladderlab::ladder::{self, LadderOptions};
use ladderlab::model::{ModelSpec, QuantumState};
use ladderlab::pipeline::{self, PipelineOptions, Verdict};
use ladderlab::rng::Rng;
use ladderlab::{io, C64};

#[test]
fn steering_schedule_survives_a_file_round_trip() {
    let spec = ModelSpec::toy(3.0);
    let mut rng = Rng::new(42);
    let a = rng.unit_state(2, 4).unwrap();
    let b = rng.unit_state(2, 4).unwrap();
    let (sched, report) = ladder::steer_in_window(&spec, &a, &b, 2, 0.1, &LadderOptions::default()).unwrap();
    assert!(report.distance < 0.1);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("schedule.json");
    io::write_json(&path, &sched).unwrap();
    let back: ControlSchedule = io::read_json(&path).unwrap();
    assert_eq!(back, sched);
    assert_eq!(back.total_duration(), sched.total_duration());

    // Replaying the stored control with the engine alone reproduces the run.
    let n = report.verification_truncation.unwrap();
    let prop = Propagator::for_model(&spec, n).unwrap();
    let direct = prop.propagate(&sched, &a).unwrap().final_state;
    let replay = prop.propagate(&back, &a).unwrap().final_state;
    assert!(direct.distance(&replay) <= 1e-10);
    assert!((replay.distance(&b) - report.distance).abs() <= 1e-10);
}

#[test]
fn serialized_total_matches_the_exact_sum() {
    let mut sched = ControlSchedule::new("mixed");
    for i in 0..50 {
        sched.push(i as f64 * 0.5, 0.1).unwrap();
    }
    sched
        .push_repeat(1_000_000, vec![ladderlab::engine::Segment::new(1.0, 1e-7).unwrap()])
        .unwrap();
    let exact = pipeline::serialized_total(&sched).unwrap();
    assert_eq!(exact, sched.total_duration());
    assert!((exact.to_f64() - 5.1).abs() < 1e-12);
}

#[test]
fn nearby_endpoints_give_an_empty_verified_plan() {
    let spec = ModelSpec::toy(3.0);
    let a = QuantumState::basis(1).unwrap();
    let b = QuantumState::new(1, vec![C64::new(0.999, 0.0), C64::new(0.0447, 0.0)])
        .unwrap()
        .normalized()
        .unwrap();
    let plan = pipeline::plan_small_time(&spec, &a, &b, 0.3, 1.0, &PipelineOptions::default()).unwrap();
    assert!(plan.feasible && plan.schedule.is_empty());
    let r = pipeline::execute_and_verify(&spec, &plan, &a, &b).unwrap();
    assert_eq!(r.verdict, Verdict::Pass);
    assert!(r.within_certificates);
}

#[test]
fn single_budget_sweep_has_one_entry() {
    let spec = ModelSpec::toy(3.0);
    let a = QuantumState::basis(1).unwrap();
    let b = QuantumState::new(1, vec![C64::new(0.999, 0.0), C64::new(0.0447, 0.0)])
        .unwrap()
        .normalized()
        .unwrap();
    let report = pipeline::diameter_sweep(&spec, &a, &b, 0.3, &[0.5], &PipelineOptions::default());
    assert_eq!(report.entries.len(), 1);
    assert_eq!(report.entries[0].verdict, Some(Verdict::Pass));
    assert_eq!(report.best_budget, Some(0.5));
}

#[test]
fn sub_threshold_alpha_is_refused_by_the_planner() {
    let a = QuantumState::basis(1).unwrap();
    let b = QuantumState::basis(2).unwrap();
    let err = pipeline::plan_small_time(&ModelSpec::toy(2.5), &a, &b, 0.3, 100.0, &PipelineOptions::default()).unwrap_err();
    assert!(err.to_string().contains("alpha"));
    let sweep = pipeline::diameter_sweep(&ModelSpec::toy(2.0), &a, &b, 0.3, &[1.0, 10.0], &PipelineOptions::default());
    assert!(sweep.entries.iter().all(|e| e.failure.is_some()));
    assert_eq!(sweep.best_time, None);
}

#[test]
fn reports_serialize_with_full_precision() {
    let spec = ModelSpec::toy(3.0);
    let report = spec.coupling_norm_report(2..=6).unwrap();
    let text = io::to_string(&report).unwrap();
    let value: serde_json::Value = serde_json::from_str(&text).unwrap();
    let first = value["entries"][0]["norm"].as_f64().unwrap();
    assert_eq!(first, report.entries[0].norm);
}
