use std::path::PathBuf;

use proptest::prelude::*;
use viltwin::bus::{Bag, LightColor, Payload};
use viltwin::simkit::{
    driving_path, engine_run, hazard_query, load_scenario, replay_csv, write_trace_csv, HazardKind, ModelKind,
    RunConfig, Scenario, SimError, StopPoint, TOPIC_POSE,
};

fn benchmark_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/benchmark.scn")
}

/// The benchmark with both vehicles on the kinematic model.
fn kinematic_benchmark() -> Scenario {
    let mut sc = load_scenario(benchmark_path()).unwrap();
    for v in &mut sc.vehicles {
        v.model = ModelKind::Kinematic;
        v.weights = None;
    }
    sc
}

#[test]
fn empty_scenario_runs_and_reports_nothing() {
    let sc = Scenario::from_json("{}").unwrap();
    let out = engine_run(&sc, &RunConfig::new(1.0, 0), None).unwrap();
    assert!(out.metrics.steps > 0);
    assert!(out.metrics.vehicles.is_empty());
    assert_eq!(out.metrics.min_vehicle_clearance, None);
    assert_eq!(out.metrics.min_pedestrian_clearance, None);
    assert!(out.metrics.duration >= 1.0);
}

#[test]
fn benchmark_loads_with_bundled_weights() {
    let sc = load_scenario(benchmark_path()).unwrap();
    let twin = sc.vehicles.iter().find(|v| v.model == ModelKind::Twin).unwrap();
    assert!(sc.resolve(twin.weights.as_ref().unwrap()).is_file());
    assert!(!sc.needs_bridge());
}

#[test]
fn bridge_scenario_without_server_is_rejected() {
    let mut sc = kinematic_benchmark();
    sc.vehicles[0].model = ModelKind::Bridge;
    let err = engine_run(&sc, &RunConfig::new(1.0, 0), None).unwrap_err();
    assert!(err.is_validation(), "{err}");
}

#[test]
fn missing_weights_file_is_a_validation_error() {
    let mut sc = load_scenario(benchmark_path()).unwrap();
    sc.vehicles[1].weights = Some("does_not_exist.json".into());
    match engine_run(&sc, &RunConfig::new(1.0, 0), None) {
        Err(e) => assert!(e.is_validation(), "{e}"),
        Ok(_) => panic!("run should fail"),
    }
}

#[test]
fn seeded_runs_are_byte_identical_and_seeds_matter() {
    let sc = load_scenario(benchmark_path()).unwrap();
    let a = engine_run(&sc, &RunConfig::new(10.0, 7), None).unwrap();
    let b = engine_run(&sc, &RunConfig::new(10.0, 7), None).unwrap();
    let c = engine_run(&sc, &RunConfig::new(10.0, 8), None).unwrap();
    assert_eq!(a.bag.to_bytes(), b.bag.to_bytes());
    assert_eq!(a.metrics, b.metrics);
    assert_ne!(a.bag.to_bytes(), c.bag.to_bytes());
}

#[test]
fn bag_file_round_trips_and_replay_matches_poses() {
    let sc = load_scenario(benchmark_path()).unwrap();
    let out = engine_run(&sc, &RunConfig::new(5.0, 3), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("run.bag");
    out.bag.write(&file).unwrap();
    let back = Bag::read(&file).unwrap();
    assert_eq!(back, out.bag);

    let mut csv_bytes = Vec::new();
    let rows = replay_csv(&back, &mut csv_bytes).unwrap();
    let poses: Vec<_> = back.iter_topic(TOPIC_POSE).collect();
    assert_eq!(rows, poses.len());
    let mut reader = csv::Reader::from_reader(csv_bytes.as_slice());
    for (rec, msg) in reader.records().zip(&poses) {
        let rec = rec.unwrap();
        let num = |i: usize| rec[i].parse::<f64>().unwrap();
        let Payload::Pose(p) = &msg.payload else { panic!("pose topic carries poses") };
        assert_eq!(num(0).to_bits(), msg.t.to_bits());
        assert_eq!(rec[1].parse::<u32>().unwrap(), p.id);
        assert_eq!([num(2), num(3), num(4)], [p.x, p.y, p.theta]);
    }

    // the engine's own trace agrees with what the bag recorded
    let mut trace = Vec::new();
    write_trace_csv(&out.metrics, &mut trace).unwrap();
    assert_eq!(String::from_utf8(trace).unwrap(), String::from_utf8(csv_bytes).unwrap());
}

#[test]
fn invalid_scenario_reports_field() {
    let err =
        Scenario::from_json(r#"{"vehicles": [{"id": 1, "model": "kinematic", "track": "nowhere"}]}"#).unwrap_err();
    match err {
        SimError::Reference { field, .. } => assert!(field.contains("vehicles[0].track"), "{field}"),
        other => panic!("unexpected {other}"),
    }
}

/// Stop-line crossings recomputed from the recorded trajectory.
fn late_red_crossings(sc: &Scenario, out: &viltwin::simkit::RunOutput) -> usize {
    let mut count = 0;
    for light in &sc.lights {
        let track = sc.track(&light.track).unwrap().geometry.build(sc.scale).unwrap();
        let path = driving_path(&track, light.direction);
        let line_s = path.project(light.stop_line).s;
        for veh in sc.vehicles.iter().filter(|v| v.track == light.track && v.direction == light.direction) {
            let traj = &out.metrics.vehicle(veh.id).unwrap().trajectory;
            for w in traj.windows(2) {
                let s0 = path.project([w[0].x, w[0].y]).s;
                let s1 = path.project([w[1].x, w[1].y]).s;
                let step = path.forward_offset(s0, s1);
                let to_line = path.forward_offset(s0, line_s);
                if step < path.length() / 2.0 && to_line > 0.0 && to_line <= step {
                    let (color, age) = light.schedule.phase(w[0].t);
                    if color == LightColor::Red && age > sc.red_grace {
                        count += 1;
                    }
                }
            }
        }
    }
    count
}

#[test]
fn negligible_filter_bands_run_red_lights() {
    let mut sc = kinematic_benchmark();
    sc.filter.d_det = 0.02;
    sc.filter.d_emr = 0.01;
    let out = engine_run(&sc, &RunConfig::new(120.0, 42), None).unwrap();
    let oracle = late_red_crossings(&sc, &out);
    assert!(oracle > 0);
    assert_eq!(out.metrics.red_light_violations, oracle as u64);
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 12, ..ProptestConfig::default() })]

    #[test]
    fn hazard_is_never_behind(
        s in 0.0f64..200.0,
        stops in proptest::collection::vec(0.0f64..200.0, 0..6),
        horizon in 1.0f64..60.0,
    ) {
        let sc = kinematic_benchmark();
        let path = sc.track("outer").unwrap().geometry.build(1.0).unwrap();
        let len = path.length();
        let points: Vec<StopPoint> = stops
            .iter()
            .enumerate()
            .map(|(i, p)| StopPoint { kind: HazardKind::RedLight, source: i as u32, s: p % len })
            .collect();
        let ahead = |p: f64| (p - s % len).rem_euclid(len);
        let expected = points.iter().map(|p| ahead(p.s)).filter(|d| *d <= horizon).fold(None, |m: Option<f64>, d| {
            Some(m.map_or(d, |m| m.min(d)))
        });
        let got = hazard_query(&path, s, &points, horizon);
        match (got, expected) {
            (None, None) => {}
            (Some(h), Some(d)) => {
                prop_assert!(h.d >= 0.0 && h.d <= horizon);
                prop_assert!((h.d - d).abs() < 1e-9, "{} vs {}", h.d, d);
            }
            (g, e) => prop_assert!(false, "got {:?}, expected {:?}", g, e),
        }
    }

    #[test]
    fn shielded_vehicles_obey_lights_and_yield(seed in 0u64..1000, s1 in 0.0f64..160.0, s2 in 0.0f64..75.0) {
        let mut sc = kinematic_benchmark();
        sc.vehicles[0].start_s = s1;
        sc.vehicles[1].start_s = s2;
        let out = engine_run(&sc, &RunConfig::new(40.0, seed), None).unwrap();
        let m = &out.metrics;
        prop_assert_eq!(m.red_light_violations, 0);
        prop_assert_eq!(m.compliance_breaches(), 0);
        prop_assert_eq!(late_red_crossings(&sc, &out), 0);
        if let Some(c) = m.min_pedestrian_clearance {
            prop_assert!(c > 2.0, "pedestrian clearance {}", c);
        }
    }
}
