use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use anyhow::{anyhow, Context};
use clap::{Parser, Subcommand};
use log::info;

use viltwin::bus::{Bag, BridgeServer};
use viltwin::dynamics::KinematicParams;
use viltwin::safety::{bounded_check, build_paper_spec, solve_gr1, Gr1Spec, Strategy, Synthesis};
use viltwin::simkit::{
    compare_models, engine_run, load_scenario, replay_csv, run_vil_client, write_trace_csv, BridgeTimeouts, RunConfig,
    RunOutput, SimError, VilClientConfig,
};
use viltwin::twin::{
    augment_zeros, baseline_mse, ingest_csv, split, synthesize_log, synthesize_samples, train_split, write_log,
    HistoryWindow, SynthConfig, TrainConfig,
};

/// Deterministic traffic simulation with learned vehicle twins and
/// synthesized safety shields.
#[derive(Parser)]
#[command(name = "viltwin", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario and record a bag.
    Run {
        scenario: PathBuf,
        #[arg(long, default_value_t = 120.0)]
        duration: f64,
        /// Overridden by the VILTWIN_SEED environment variable.
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Full metrics including trajectories, as JSON.
        #[arg(long)]
        metrics: Option<PathBuf>,
        /// Trajectories as CSV.
        #[arg(long)]
        trace: Option<PathBuf>,
        /// Listen address for external vehicles, e.g. 127.0.0.1:7878.
        #[arg(long)]
        bridge: Option<String>,
        #[arg(long, default_value_t = 10.0)]
        connect_timeout: f64,
        #[arg(long, default_value_t = 5.0)]
        step_timeout: f64,
    },
    /// Export the pose stream of a bag as CSV.
    Replay {
        bag: PathBuf,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a velocity twin.
    Train {
        /// A `t,u,v` log file, or `synthetic` for the built-in dead-zone plant.
        #[arg(long)]
        data: String,
        /// Windows to synthesize with `--data synthetic`.
        #[arg(long, default_value_t = 50_000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        data_seed: u64,
        /// Training configuration as JSON; omitted fields take defaults.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        metrics: Option<PathBuf>,
    },
    /// Write a synthetic plant log.
    GenData {
        #[arg(long, default_value_t = 50_020)]
        rows: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Synthesize a shield strategy from a GR(1) spec.
    Synthesize {
        /// A spec file, or `paper` for the built-in traffic-rule spec.
        #[arg(long)]
        spec: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Bounded model check of a strategy against a spec.
    Check {
        #[arg(long)]
        strategy: PathBuf,
        #[arg(long)]
        spec: String,
        #[arg(long, default_value_t = 10)]
        horizon: usize,
    },
    /// Compare one vehicle across two bags.
    Compare {
        bag_a: PathBuf,
        bag_b: PathBuf,
        #[arg(long)]
        vehicle: u32,
    },
    /// Drive one bridge vehicle with the kinematic model.
    VilClient {
        #[arg(long)]
        connect: String,
        #[arg(long)]
        vehicle: u32,
        /// Hang up after this many commands.
        #[arg(long)]
        stop_after: Option<usize>,
    },
}

/// Exit 1: the input was rejected. Exit 2: the work itself failed.
enum Failure {
    Invalid(anyhow::Error),
    Runtime(anyhow::Error),
}

type Outcome = Result<(), Failure>;

fn invalid(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Invalid(e.into())
}

fn runtime(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Runtime(e.into())
}

fn sim(e: SimError) -> Failure {
    if e.is_validation() {
        invalid(e)
    } else {
        runtime(e)
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path).map(BufWriter::new).with_context(|| format!("cannot create {}", path.display())).map_err(runtime)
}

fn read(path: &Path) -> Result<String, Failure> {
    std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display())).map_err(invalid)
}

fn seconds(s: f64, what: &str) -> Result<Duration, Failure> {
    Duration::try_from_secs_f64(s).map_err(|_| invalid(anyhow!("{what} must be a non-negative number of seconds")))
}

fn load_spec(arg: &str) -> Result<Gr1Spec, Failure> {
    if arg == "paper" {
        return Ok(build_paper_spec());
    }
    Gr1Spec::from_json(&read(Path::new(arg))?).map_err(invalid)
}

fn print_json(v: &impl serde::Serialize) {
    println!("{}", viltwin::jsonfmt::to_string_pretty(v).expect("serializable"));
}

fn write_bag(bag: &Bag, path: &Path) -> Outcome {
    bag.write(path).with_context(|| format!("cannot write {}", path.display())).map_err(runtime)
}

#[allow(clippy::too_many_arguments)]
fn cmd_run(
    scenario: &Path,
    duration: f64,
    seed: u64,
    out: &Path,
    metrics: Option<&Path>,
    trace: Option<&Path>,
    bridge: Option<&str>,
    timeouts: BridgeTimeouts,
) -> Outcome {
    let seed = match std::env::var("VILTWIN_SEED") {
        Ok(s) => s.trim().parse().map_err(|_| invalid(anyhow!("VILTWIN_SEED={s:?} is not an unsigned integer")))?,
        Err(_) => seed,
    };
    let sc = load_scenario(scenario).map_err(sim)?;
    let mut server = match bridge {
        Some(addr) => {
            let s = BridgeServer::bind(addr).with_context(|| format!("cannot listen on {addr}")).map_err(runtime)?;
            eprintln!("bridge listening on {}", s.local_addr());
            Some(s)
        }
        None => None,
    };
    let cfg = RunConfig { duration, seed, bridge: timeouts };
    let result = engine_run(&sc, &cfg, server.as_mut());
    let RunOutput { bag, metrics: m } = match result {
        Ok(o) => o,
        Err(SimError::BridgeAbort { reason, partial }) => {
            write_bag(&partial.bag, out)?;
            return Err(runtime(anyhow!("{reason}; partial bag written to {}", out.display())));
        }
        Err(e) => return Err(sim(e)),
    };
    write_bag(&bag, out)?;
    if let Some(p) = metrics {
        let mut w = create(p)?;
        viltwin::jsonfmt::to_writer(&mut w, &m).map_err(runtime)?;
        w.flush().map_err(runtime)?;
    }
    if let Some(p) = trace {
        let mut w = create(p)?;
        write_trace_csv(&m, &mut w).and_then(|_| w.flush()).map_err(runtime)?;
    }
    print_json(&m.summary());
    Ok(())
}

fn cmd_replay(bag: &Path, out: Option<&Path>) -> Outcome {
    let bag = Bag::read(bag).with_context(|| format!("cannot load bag {}", bag.display())).map_err(invalid)?;
    let rows = match out {
        Some(p) => {
            let mut w = create(p)?;
            let n = replay_csv(&bag, &mut w).map_err(runtime)?;
            w.flush().map_err(runtime)?;
            n
        }
        None => replay_csv(&bag, io::stdout().lock()).map_err(runtime)?,
    };
    info!("{rows} pose rows");
    Ok(())
}

fn cmd_train(
    data: &str,
    samples: usize,
    data_seed: u64,
    config: Option<&Path>,
    out: &Path,
    metrics: Option<&Path>,
) -> Outcome {
    let cfg: TrainConfig = match config {
        Some(p) => {
            serde_json::from_str(&read(p)?).with_context(|| format!("bad config {}", p.display())).map_err(invalid)?
        }
        None => TrainConfig::default(),
    };
    cfg.validate().map_err(invalid)?;
    let set = if data == "synthetic" {
        synthesize_samples(samples, cfg.window, data_seed, &SynthConfig::default()).map_err(invalid)?
    } else {
        ingest_csv(data, cfg.window).map_err(invalid)?
    };
    let parts = split(&augment_zeros(&set), cfg.split, cfg.seed).map_err(invalid)?;
    let (net, m) = train_split(&parts, &cfg).map_err(runtime)?;
    net.save(out).map_err(runtime)?;
    let baseline = baseline_mse(&parts.test, &KinematicParams::default(), 0.02).map_err(runtime)?;
    let zero = net.forward(&HistoryWindow::zeros(cfg.window)).map_err(runtime)?;
    if let Some(p) = metrics {
        let mut w = create(p)?;
        viltwin::jsonfmt::to_writer(&mut w, &m).map_err(runtime)?;
        w.flush().map_err(runtime)?;
    }
    print_json(&serde_json::json!({
        "epochs": m.val_mse.len(),
        "best_epoch": m.best_epoch,
        "test_mse": m.test_mse,
        "baseline_test_mse": baseline,
        "zero_window_output": zero,
    }));
    Ok(())
}

fn cmd_gen_data(rows: usize, seed: u64, out: &Path) -> Outcome {
    let log = synthesize_log(rows, seed, &SynthConfig::default()).map_err(invalid)?;
    let mut w = create(out)?;
    write_log(&mut w, &log).and_then(|_| w.flush()).map_err(runtime)
}

fn cmd_synthesize(spec: &str, out: &Path) -> Outcome {
    let spec = load_spec(spec)?;
    match solve_gr1(&spec).map_err(invalid)? {
        Synthesis::Realizable(s) => {
            std::fs::write(out, s.to_json())
                .with_context(|| format!("cannot write {}", out.display()))
                .map_err(runtime)?;
            println!("Realizable");
            Ok(())
        }
        Synthesis::Unrealizable(why) => {
            println!("Unrealizable: {why}");
            Err(runtime(anyhow!("no strategy exists")))
        }
    }
}

fn cmd_check(strategy: &Path, spec: &str, horizon: usize) -> Outcome {
    let spec = load_spec(spec)?;
    let strat = Strategy::from_json(&read(strategy)?, &spec).map_err(invalid)?;
    let report = bounded_check(&strat, &spec, horizon).map_err(invalid)?;
    print_json(&report);
    if report.ok() {
        Ok(())
    } else {
        Err(runtime(anyhow!("strategy violates the spec within {horizon} steps")))
    }
}

fn cmd_compare(a: &Path, b: &Path, vehicle: u32) -> Outcome {
    let load = |p: &Path| Bag::read(p).with_context(|| format!("cannot load bag {}", p.display())).map_err(invalid);
    let c = compare_models(&load(a)?, &load(b)?, vehicle).map_err(invalid)?;
    print_json(&c);
    Ok(())
}

fn cmd_vil_client(addr: &str, vehicle: u32, stop_after: Option<usize>) -> Outcome {
    let cfg = VilClientConfig { stop_after, ..VilClientConfig::new(vehicle) };
    let steps = run_vil_client(addr, &cfg).with_context(|| format!("bridge session with {addr}")).map_err(runtime)?;
    eprintln!("executed {steps} commands");
    Ok(())
}

fn dispatch(cmd: Cmd) -> Outcome {
    match cmd {
        Cmd::Run { scenario, duration, seed, out, metrics, trace, bridge, connect_timeout, step_timeout } => {
            let timeouts = BridgeTimeouts {
                connect: seconds(connect_timeout, "--connect-timeout")?,
                step: seconds(step_timeout, "--step-timeout")?,
            };
            cmd_run(&scenario, duration, seed, &out, metrics.as_deref(), trace.as_deref(), bridge.as_deref(), timeouts)
        }
        Cmd::Replay { bag, out } => cmd_replay(&bag, out.as_deref()),
        Cmd::Train { data, samples, data_seed, config, out, metrics } => {
            cmd_train(&data, samples, data_seed, config.as_deref(), &out, metrics.as_deref())
        }
        Cmd::GenData { rows, seed, out } => cmd_gen_data(rows, seed, &out),
        Cmd::Synthesize { spec, out } => cmd_synthesize(&spec, &out),
        Cmd::Check { strategy, spec, horizon } => cmd_check(&strategy, &spec, horizon),
        Cmd::Compare { bag_a, bag_b, vehicle } => cmd_compare(&bag_a, &bag_b, vehicle),
        Cmd::VilClient { connect, vehicle, stop_after } => cmd_vil_client(&connect, vehicle, stop_after),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
