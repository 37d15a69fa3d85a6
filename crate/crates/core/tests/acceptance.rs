//! End-to-end acceptance criteria. Runs without the libtest harness so every
//! criterion prints exactly one PASS/FAIL line; exits non-zero if any fails.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::thread;
use std::time::{Duration, Instant};

use rand::Rng;
use viltwin::bus::{sim_rng, Bag, BridgeServer, Payload};
use viltwin::dynamics::{heading_increment, kinematic_step, pd_accel, KinematicParams, PdMemory, VehicleState};
use viltwin::safety::{
    bounded_check, build_paper_spec, equivalence_scan, exec_state_at, execute, rule_filter, solve_gr1, DriveState,
    EnvFlags, FilterConfig, Synthesis,
};
use viltwin::simkit::{
    engine_run, load_scenario, replay_csv, run_vil_client, ModelKind, RunConfig, RunOutput, Scenario, SimError,
    VilClientConfig, TOPIC_POSE, TOPIC_TWIST,
};
use viltwin::twin::{
    augment_zeros, baseline_mse, split, synthesize_samples, train_split, HistoryWindow, NetShape, Normalizer, Sample,
    SynthConfig, TrainConfig, TwinNetwork,
};

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(start: Instant, limit: f64) -> Result<f64, String> {
    let secs = start.elapsed().as_secs_f64();
    ensure(secs < limit, || format!("took {secs:.1} s, limit {limit} s"))?;
    Ok(secs)
}

fn benchmark() -> Scenario {
    load_scenario(PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/benchmark.scn")).expect("benchmark loads")
}

// ---------------------------------------------------------------- A1

fn a1_kinematics() -> Outcome {
    let start = Instant::now();
    let params = KinematicParams::default();
    let mut rng = sim_rng(1);
    for i in 0..100_000 {
        let s = VehicleState::new(
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-50.0..50.0),
            rng.gen_range(-3.2..3.2),
            rng.gen_range(0.0..params.v_max),
        );
        let delta = rng.gen_range(-params.delta_max..params.delta_max);
        let dt = rng.gen_range(0.016..0.024);
        let a = rng.gen_range(-3.0..3.0);
        let next = kinematic_step(&s, delta, a, dt, &params).map_err(|e| e.to_string())?;
        let inc = dt / params.wheelbase * s.v * delta.tan();
        let expected = s.theta + inc;
        ensure(next.theta.to_bits() == expected.to_bits(), || format!("step {i}: {} vs {expected}", next.theta))?;
        ensure(heading_increment(s.v, delta, dt, params.wheelbase).to_bits() == inc.to_bits(), || {
            format!("step {i}: increment differs")
        })?;
    }

    let mut worst: f64 = 0.0;
    for (delta, v) in [(0.2, 1.0), (0.4, 2.0), (0.05, 3.0)] {
        let r = params.wheelbase / f64::tan(delta);
        let dt = 0.01 * r / v;
        let theta0 = 0.3;
        let mut s = VehicleState::new(1.0, 2.0, theta0, v);
        let centre = [s.x - r * theta0.sin(), s.y + r * theta0.cos()];
        let mut mem = PdMemory::new(v, v);
        while s.theta < theta0 + std::f64::consts::TAU {
            let (acc, m) = pd_accel(v, s.v, mem, dt, &params).map_err(|e| e.to_string())?;
            mem = m;
            s = kinematic_step(&s, delta, acc, dt, &params).map_err(|e| e.to_string())?;
            let drift = ((s.x - centre[0]).hypot(s.y - centre[1]) - r).abs() / r;
            worst = worst.max(drift);
        }
    }
    ensure(worst < 0.05, || format!("radius drift {:.2}% of R", worst * 100.0))?;
    let secs = within(start, 5.0)?;
    Ok(format!("1e5 heading steps bit-exact; max radius drift {:.2}% of R; {secs:.2} s", worst * 100.0))
}

// ---------------------------------------------------------------- A2

fn latent_margin(net: &TwinNetwork, w: &HistoryWindow) -> f64 {
    let mut h = vec![0.0; net.encoder.hidden_size];
    for (u, v) in w.u.iter().zip(&w.v) {
        h = net.encoder.step(&net.normalizer.normalize(*u, *v), &h).unwrap();
    }
    net.latent.apply(&h).iter().fold(f64::INFINITY, |m, a| m.min(a.abs()))
}

fn a2_gradients() -> Outcome {
    let start = Instant::now();
    let mut rng = sim_rng(77);
    let (mut nets, mut params, mut worst) = (0, 0usize, 0.0f64);
    while nets < 50 {
        let shape = NetShape {
            window: rng.gen_range(1..=5),
            encoder_hidden: rng.gen_range(1..=4),
            latent: rng.gen_range(1..=4),
            decoder_hidden: rng.gen_range(1..=4),
        };
        let mut net = TwinNetwork::init(shape, &mut rng);
        net.normalizer = Normalizer { mean: [1.5, 1.5], std: [0.9, 0.9] };
        let samples: Vec<Sample> = (0..2)
            .map(|_| Sample {
                window: HistoryWindow {
                    u: (0..shape.window).map(|_| rng.gen_range(0.0..3.0)).collect(),
                    v: (0..shape.window).map(|_| rng.gen_range(0.0..3.0)).collect(),
                },
                target: rng.gen_range(0.0..3.0),
            })
            .collect();
        // a finite difference across the ReLU kink is not a derivative
        if samples.iter().any(|s| latent_margin(&net, &s.window) < 1e-3) {
            continue;
        }
        let batch: Vec<&Sample> = samples.iter().collect();
        let (_, grad) = net.loss_and_grad(&batch).map_err(|e| e.to_string())?;
        let analytic: Vec<f64> = grad.slices().iter().flat_map(|s| s.iter().copied()).collect();
        let loss = |n: &TwinNetwork| n.loss_and_grad(&batch).unwrap().0;
        let mut probe = net.clone();
        let mut k = 0;
        let lens: Vec<usize> = net.param_slices().iter().map(|s| s.len()).collect();
        for (si, len) in lens.into_iter().enumerate() {
            for j in 0..len {
                let orig = probe.param_slices()[si][j];
                probe.param_slices_mut()[si][j] = orig + 1e-5;
                let up = loss(&probe);
                probe.param_slices_mut()[si][j] = orig - 1e-5;
                let down = loss(&probe);
                probe.param_slices_mut()[si][j] = orig;
                let numeric = (up - down) / 2e-5;
                let rel = (analytic[k] - numeric).abs() / analytic[k].abs().max(numeric.abs()).max(1e-6);
                worst = worst.max(rel);
                ensure(rel < 1e-4, || format!("{shape:?} param {k}: analytic {} numeric {numeric}", analytic[k]))?;
                k += 1;
            }
        }
        params += k;
        nets += 1;
    }
    let secs = within(start, 60.0)?;
    Ok(format!("{nets} networks, {params} parameters; worst relative error {worst:.2e}; {secs:.1} s"))
}

// ---------------------------------------------------------------- A3 / A4

struct Fidelity {
    test_mse: f64,
    baseline: f64,
    zero_out: f64,
    epochs: usize,
    secs: f64,
}

fn train_twin() -> Result<Fidelity, String> {
    let start = Instant::now();
    let cfg = TrainConfig::default();
    let set = synthesize_samples(50_000, cfg.window, 1, &SynthConfig::default()).map_err(|e| e.to_string())?;
    let parts = split(&augment_zeros(&set), cfg.split, cfg.seed).map_err(|e| e.to_string())?;
    let (net, metrics) = train_split(&parts, &cfg).map_err(|e| e.to_string())?;
    let baseline = baseline_mse(&parts.test, &KinematicParams::default(), 0.02).map_err(|e| e.to_string())?;
    let zero_out = net.forward(&HistoryWindow::zeros(cfg.window)).map_err(|e| e.to_string())?;
    Ok(Fidelity {
        test_mse: metrics.test_mse,
        baseline,
        zero_out,
        epochs: metrics.val_mse.len(),
        secs: start.elapsed().as_secs_f64(),
    })
}

fn a3_fidelity(f: &Fidelity) -> Outcome {
    ensure(f.test_mse <= 0.5 * f.baseline, || {
        format!("twin MSE {:.3e} exceeds half the baseline {:.3e}", f.test_mse, f.baseline)
    })?;
    ensure(f.secs < 600.0, || format!("training took {:.0} s", f.secs))?;
    Ok(format!(
        "twin MSE {:.3e} vs kinematic {:.3e} (ratio {:.3}); {} epochs in {:.0} s",
        f.test_mse,
        f.baseline,
        f.test_mse / f.baseline,
        f.epochs,
        f.secs
    ))
}

fn a4_zero_input(f: &Fidelity) -> Outcome {
    ensure(f.zero_out.abs() < 0.01, || format!("zero window maps to {:.4} m/s", f.zero_out))?;
    Ok(format!("zero window maps to {:.2e} m/s", f.zero_out))
}

// ---------------------------------------------------------------- A5

fn band_oracle(v: f64, d: f64) -> f64 {
    if d > 15.0 {
        v
    } else if d > 10.0 {
        v * (d - 10.0) / 5.0
    } else {
        0.0
    }
}

fn a5_rule_filter() -> Outcome {
    let start = Instant::now();
    let cfg = FilterConfig::default();
    let mut points = 0;
    for v in [0.5, 2.0, 4.0] {
        let f = |d: f64| rule_filter(v, Some(d), &cfg).map_err(|e| e.to_string());
        let mut prev = f(0.0)?;
        for i in 0..=3000 {
            let d = i as f64 / 100.0;
            let out = f(d)?;
            let want = band_oracle(v, d);
            ensure((out - want).abs() <= 1e-12, || format!("v {v} d {d}: {out} vs {want}"))?;
            ensure(out >= prev, || format!("v {v}: decreases at d {d}"))?;
            prev = out;
            points += 1;
        }
        for edge in [10.0, 15.0] {
            let jump = (f(edge + 1e-9)? - f(edge)?).abs().max((f(edge)? - f(edge - 1e-9)?).abs());
            ensure(jump < 1e-6, || format!("v {v}: jump {jump} at d {edge}"))?;
        }
    }
    let secs = within(start, 1.0)?;
    Ok(format!("{points} points in band, monotone, continuous at 10 and 15; {:.0} ms", secs * 1e3))
}

// ---------------------------------------------------------------- A6

fn a6_gr1() -> Outcome {
    let start = Instant::now();
    let spec = build_paper_spec();
    let strategy = match solve_gr1(&spec).map_err(|e| e.to_string())? {
        Synthesis::Realizable(s) => s,
        Synthesis::Unrealizable(why) => return Err(format!("unrealizable: {why}")),
    };
    let report = bounded_check(&strategy, &spec, 10).map_err(|e| e.to_string())?;
    ensure(report.ok(), || format!("bounded check: {report:?}"))?;

    let mut st = exec_state_at(&strategy, DriveState::Stp).map_err(|e| e.to_string())?;
    let mut prev = DriveState::Stp;
    let mut trace = Vec::with_capacity(50);
    for k in 0..50 {
        let flags = match k {
            10..=20 => EnvFlags::WRN,
            30..=40 => EnvFlags::URG,
            _ => EnvFlags::QUIET,
        };
        let (next, out) = execute(&strategy, flags, &st).map_err(|e| e.to_string())?;
        let expected = match (flags.urg, flags.wrn) {
            (true, false) => Some(DriveState::Stp),
            (false, true) if prev != DriveState::Stp => Some(DriveState::Dcl),
            (false, false) => Some(DriveState::Mov),
            _ => None,
        };
        if let Some(e) = expected {
            ensure(out == e, || format!("step {k}: {flags:?} from {prev:?} gave {out:?}, expected {e:?}"))?;
        }
        ensure(!(prev == DriveState::Stp && out == DriveState::Dcl), || format!("STP -> DCL at step {k}"))?;
        trace.push(out.name().chars().next().unwrap());
        st = next;
        prev = out;
    }
    let secs = within(start, 30.0)?;
    let trace: String = trace.into_iter().collect();
    Ok(format!("realizable; {} words checked at horizon 10; trace {trace}; {secs:.2} s", report.words_checked))
}

// ---------------------------------------------------------------- A7

fn compliance_ok(out: &RunOutput) -> Result<(), String> {
    let m = &out.metrics;
    ensure(m.red_light_violations == 0, || format!("{} red-light violations", m.red_light_violations))?;
    ensure(m.compliance_breaches() == 0, || format!("{} compliance breaches", m.compliance_breaches()))?;
    let ped = m.min_pedestrian_clearance.ok_or("no pedestrian ever crossed")?;
    ensure(ped > 2.0, || format!("pedestrian clearance {ped:.2} m"))?;
    let veh = m.min_vehicle_clearance.ok_or("vehicle clearance missing")?;
    ensure(veh > 1.0, || format!("vehicle clearance {veh:.2} m"))?;
    for v in &m.vehicles {
        ensure(v.laps >= 1, || format!("vehicle {} completed no lap", v.id))?;
    }
    Ok(())
}

fn describe(out: &RunOutput) -> String {
    let m = &out.metrics;
    let laps: Vec<String> = m.vehicles.iter().map(|v| format!("{}:{}", v.id, v.laps)).collect();
    format!(
        "violations {}, breaches {}, ped clearance {:.2} m, vehicle clearance {:.2} m, laps [{}]",
        m.red_light_violations,
        m.compliance_breaches(),
        m.min_pedestrian_clearance.unwrap_or(f64::NAN),
        m.min_vehicle_clearance.unwrap_or(f64::NAN),
        laps.join(" ")
    )
}

fn a7_benchmark(out: &RunOutput, secs: f64) -> Outcome {
    let models: Vec<ModelKind> = out.metrics.vehicles.iter().map(|v| v.model).collect();
    ensure(models.contains(&ModelKind::Kinematic) && models.contains(&ModelKind::Twin), || {
        format!("models {models:?}")
    })?;
    compliance_ok(out)?;
    ensure(secs < 60.0, || format!("run took {secs:.1} s"))?;
    Ok(format!("{}; {secs:.2} s", describe(out)))
}

// ---------------------------------------------------------------- A8

fn a8_determinism(first: &RunOutput) -> Outcome {
    let second = engine_run(&benchmark(), &RunConfig::new(120.0, 42), None).map_err(|e| e.to_string())?;
    let (a, b) = (first.bag.to_bytes(), second.bag.to_bytes());
    ensure(a == b, || "bags differ".into())?;

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let file = dir.path().join("run.bag");
    first.bag.write(&file).map_err(|e| e.to_string())?;
    let bag = Bag::read(&file).map_err(|e| e.to_string())?;
    ensure(bag == first.bag, || "bag changed on a disk round trip".into())?;

    let mut text = Vec::new();
    let rows = replay_csv(&bag, &mut text).map_err(|e| e.to_string())?;
    let poses: Vec<_> = bag.iter_topic(TOPIC_POSE).collect();
    let twists: Vec<_> = bag.iter_topic(TOPIC_TWIST).collect();
    ensure(rows == poses.len() && rows == twists.len(), || format!("{rows} rows for {} poses", poses.len()))?;
    let mut reader = csv::Reader::from_reader(text.as_slice());
    for (i, rec) in reader.records().enumerate() {
        let rec = rec.map_err(|e| e.to_string())?;
        let num = |k: usize| rec[k].parse::<f64>().map_err(|e| format!("row {i}: {e}"));
        let (Payload::Pose(p), Payload::Twist(tw)) = (&poses[i].payload, &twists[i].payload) else {
            return Err(format!("row {i}: unexpected payloads"));
        };
        let row = [num(0)?, num(2)?, num(3)?, num(4)?, num(5)?];
        let want = [poses[i].t, p.x, p.y, p.theta, tw.v];
        ensure(row.iter().zip(&want).all(|(a, b)| a.to_bits() == b.to_bits()), || format!("row {i} differs"))?;
        ensure(rec[1] == p.id.to_string() && tw.id == p.id, || format!("row {i}: id mismatch"))?;
    }
    Ok(format!("{} bag bytes identical across runs; {rows} replay rows bit-exact", a.len()))
}

// ---------------------------------------------------------------- A9

fn bridge_run(stop_after: Option<usize>) -> Result<(Result<RunOutput, SimError>, usize), String> {
    let mut sc = benchmark();
    let veh = sc.vehicles.iter_mut().find(|v| v.model == ModelKind::Kinematic).ok_or("no kinematic vehicle")?;
    veh.model = ModelKind::Bridge;
    let id = veh.id;
    let mut server = BridgeServer::bind("127.0.0.1:0").map_err(|e| e.to_string())?;
    let addr = server.local_addr();
    let client = thread::spawn(move || {
        let mut cfg = VilClientConfig::new(id);
        cfg.stop_after = stop_after;
        cfg.idle_timeout = Duration::from_secs(20);
        run_vil_client(addr, &cfg)
    });
    let result = engine_run(&sc, &RunConfig::new(120.0, 42), Some(&mut server));
    drop(server);
    let steps = client.join().map_err(|_| "client thread panicked")?.unwrap_or(0);
    Ok((result, steps))
}

fn a9_bridge(reference: &RunOutput) -> Outcome {
    let (result, steps) = bridge_run(None)?;
    let out = result.map_err(|e| e.to_string())?;
    compliance_ok(&out)?;
    let pick = |o: &RunOutput| (o.metrics.red_light_violations, o.metrics.compliance_breaches());
    ensure(pick(&out) == pick(reference), || format!("{:?} vs {:?}", pick(&out), pick(reference)))?;
    let full = describe(&out);

    let (result, _) = bridge_run(Some(500))?;
    let (reason, partial) = match result {
        Err(SimError::BridgeAbort { reason, partial }) => (reason, partial),
        Err(e) => return Err(format!("disconnect gave {e}")),
        Ok(_) => return Err("disconnect did not abort the run".into()),
    };
    ensure(!reason.is_empty(), || "empty diagnostic".into())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let file = dir.path().join("partial.bag");
    partial.bag.write(&file).map_err(|e| e.to_string())?;
    let back = Bag::read(&file).map_err(|e| format!("partial bag unreadable: {e}"))?;
    let last = back.messages.last().map_or(0.0, |m| m.t);
    ensure(!back.messages.is_empty() && last < 120.0, || format!("partial bag ends at {last}"))?;
    Ok(format!("{steps} remote steps; {full}; abort at t={last:.2} s: {reason}"))
}

// ---------------------------------------------------------------- A10

fn a10_equivalence() -> Outcome {
    let strategy = match solve_gr1(&build_paper_spec()).map_err(|e| e.to_string())? {
        Synthesis::Realizable(s) => s,
        Synthesis::Unrealizable(why) => return Err(why),
    };
    let cfg = FilterConfig::default();
    let mut parts = Vec::new();
    for v in [0.5, 2.0, 4.0] {
        let r = equivalence_scan(&strategy, v, &cfg).map_err(|e| e.to_string())?;
        ensure(r.mismatches == 0, || format!("v {v}: {} mismatches", r.mismatches))?;
        ensure(r.compared == r.points, || format!("v {v}: only {} of {} points compared", r.compared, r.points))?;
        parts.push(format!("v {v}: {}/{}", r.compared, r.points));
    }
    Ok(format!("zero mismatches ({})", parts.join(", ")))
}

// ----------------------------------------------------------------

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn main() {
    // criterion filters: `cargo test --test acceptance -- A7 A8`
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let wanted = |name: &str| filters.is_empty() || filters.iter().any(|f| f == name);
    let mut failed = 0;
    let mut report = |name: &str, outcome: Outcome| match &outcome {
        Ok(detail) => println!("{name} PASS  {detail}"),
        Err(why) => {
            failed += 1;
            println!("{name} FAIL  {why}");
        }
    };

    if wanted("A1") {
        report("A1", guarded(a1_kinematics));
    }
    if wanted("A2") {
        report("A2", guarded(a2_gradients));
    }
    if wanted("A3") || wanted("A4") {
        match guarded(train_twin) {
            Ok(f) => {
                report("A3", a3_fidelity(&f));
                report("A4", a4_zero_input(&f));
            }
            Err(why) => {
                report("A3", Err(why.clone()));
                report("A4", Err(why));
            }
        }
    }
    if wanted("A5") {
        report("A5", guarded(a5_rule_filter));
    }
    if wanted("A6") {
        report("A6", guarded(a6_gr1));
    }
    if wanted("A7") || wanted("A8") || wanted("A9") {
        let start = Instant::now();
        match engine_run(&benchmark(), &RunConfig::new(120.0, 42), None) {
            Ok(out) => {
                let secs = start.elapsed().as_secs_f64();
                if wanted("A7") {
                    report("A7", guarded(|| a7_benchmark(&out, secs)));
                }
                if wanted("A8") {
                    report("A8", guarded(|| a8_determinism(&out)));
                }
                if wanted("A9") {
                    report("A9", guarded(|| a9_bridge(&out)));
                }
            }
            Err(e) => {
                for name in ["A7", "A8", "A9"].into_iter().filter(|n| wanted(n)) {
                    report(name, Err(format!("benchmark run failed: {e}")));
                }
            }
        }
    }
    if wanted("A10") {
        report("A10", guarded(a10_equivalence));
    }

    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
