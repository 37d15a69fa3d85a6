//! Safety filters between the controller manager and the vehicle: a
//! distance-banded rule law and a shield synthesized from a GR(1) spec.

pub mod check;
pub mod formula;
pub mod gr1;

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use check::{bounded_check, CheckReport, Violation, ViolationKind, MAX_HORIZON};
pub use formula::Formula;
pub use gr1::{solve_gr1, ExecState, Gr1Spec, Strategy, Synthesis, STATE_CAP};

#[derive(Debug, Error, PartialEq)]
pub enum SafetyError {
    #[error("distance {0} is negative")]
    NegativeDistance(f64),
    #[error("invalid filter configuration: d_emr {d_emr} must be positive and below d_det {d_det}")]
    Config { d_emr: f64, d_det: f64 },
    #[error("cannot parse {input:?} at byte {pos}: {reason}")]
    Parse { input: String, pos: usize, reason: String },
    #[error("invalid spec: {0}")]
    Spec(String),
    #[error("spec file: {0}")]
    SpecFile(String),
    #[error("{vars} variables exceed the explicit state cap of {cap} states")]
    StateCap { vars: usize, cap: usize },
    #[error("environment input {env} violates the assumptions")]
    AssumptionViolation { env: u32 },
    #[error("node {node} has no move for input {env}")]
    OutsideWinning { node: u32, env: u32 },
    #[error("horizon {horizon} outside 1..={max}")]
    Horizon { horizon: usize, max: usize },
    #[error("spec is unrealizable: {0}")]
    Unrealizable(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FilterConfig {
    pub d_det: f64,
    pub d_emr: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { d_det: 15.0, d_emr: 10.0 }
    }
}

impl FilterConfig {
    pub fn validate(&self) -> Result<(), SafetyError> {
        if self.d_emr > 0.0 && self.d_emr < self.d_det && self.d_det.is_finite() {
            Ok(())
        } else {
            Err(SafetyError::Config { d_emr: self.d_emr, d_det: self.d_det })
        }
    }

    /// Linear speed reduction from `v_cmd` at `d_det` to 0 at `d_emr`.
    pub fn ramp(&self, v_cmd: f64, d: f64) -> f64 {
        (v_cmd * (d - self.d_emr) / (self.d_det - self.d_emr)).clamp(0.0, v_cmd.max(0.0))
    }
}

fn check_d(d: Option<f64>) -> Result<(), SafetyError> {
    match d {
        Some(d) if !(d >= 0.0) => Err(SafetyError::NegativeDistance(d)),
        _ => Ok(()),
    }
}

/// Banded speed law on the distance to the nearest hazard.
pub fn rule_filter(v_cmd: f64, d: Option<f64>, cfg: &FilterConfig) -> Result<f64, SafetyError> {
    check_d(d)?;
    Ok(match d {
        None => v_cmd,
        Some(d) if d > cfg.d_det => v_cmd,
        Some(d) if d > cfg.d_emr => cfg.ramp(v_cmd, d),
        Some(_) => 0.0,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EnvFlags {
    pub urg: bool,
    pub wrn: bool,
}

impl EnvFlags {
    pub const QUIET: EnvFlags = EnvFlags { urg: false, wrn: false };
    pub const WRN: EnvFlags = EnvFlags { urg: false, wrn: true };
    pub const URG: EnvFlags = EnvFlags { urg: true, wrn: false };
}

pub fn flags_from_distance(d: Option<f64>, cfg: &FilterConfig) -> Result<EnvFlags, SafetyError> {
    check_d(d)?;
    Ok(match d {
        Some(d) if d <= cfg.d_emr => EnvFlags::URG,
        Some(d) if d <= cfg.d_det => EnvFlags::WRN,
        _ => EnvFlags::QUIET,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum DriveState {
    Mov,
    Dcl,
    Stp,
}

impl DriveState {
    pub const ALL: [DriveState; 3] = [DriveState::Mov, DriveState::Dcl, DriveState::Stp];

    pub fn name(self) -> &'static str {
        match self {
            DriveState::Mov => "MOV",
            DriveState::Dcl => "DCL",
            DriveState::Stp => "STP",
        }
    }

    /// The state the banded law prescribes for a distance.
    pub fn for_distance(d: Option<f64>, cfg: &FilterConfig) -> DriveState {
        match d {
            Some(d) if d <= cfg.d_emr => DriveState::Stp,
            Some(d) if d <= cfg.d_det => DriveState::Dcl,
            _ => DriveState::Mov,
        }
    }
}

pub fn apply_drive_state(state: DriveState, v_cmd: f64, d: Option<f64>, cfg: &FilterConfig) -> f64 {
    match state {
        DriveState::Mov => v_cmd,
        DriveState::Dcl => d.map_or(v_cmd, |d| cfg.ramp(v_cmd, d.max(0.0))),
        DriveState::Stp => 0.0,
    }
}

/// The traffic-rule spec: flags `URG`/`WRN` from the environment and a
/// one-hot drive state for the system.
pub fn build_paper_spec() -> Gr1Spec {
    let f = |s: &str| -> Formula { s.parse().expect("built-in formula parses") };
    Gr1Spec {
        env_vars: vec!["URG".into(), "WRN".into()],
        sys_vars: vec!["MOV".into(), "DCL".into(), "STP".into()],
        env_init: vec![f("!(URG & WRN)")],
        env_trans: vec![f("!(URG' & WRN')")],
        env_justice: vec![f("!URG"), f("!WRN")],
        sys_init: vec![f("MOV & !DCL & !STP")],
        sys_trans: vec![
            f("(MOV' & !DCL' & !STP') | (!MOV' & DCL' & !STP') | (!MOV' & !DCL' & STP')"),
            f("(URG & !WRN) -> STP'"),
            f("(WRN & !URG & (MOV | DCL)) -> DCL'"),
            f("!(URG | WRN) -> MOV'"),
            f("STP -> !DCL'"),
        ],
        sys_justice: vec![f("MOV")],
    }
}

fn env_bits(strategy: &Strategy, flags: EnvFlags) -> Result<u32, SafetyError> {
    let mut e = 0;
    for (i, name) in strategy.env_vars.iter().enumerate() {
        let v = match name.as_str() {
            "URG" => flags.urg,
            "WRN" => flags.wrn,
            other => return Err(SafetyError::Spec(format!("unknown environment flag {other}"))),
        };
        e |= (v as u32) << i;
    }
    Ok(e)
}

fn sys_bits(strategy: &Strategy, state: DriveState) -> Result<u32, SafetyError> {
    let idx = strategy
        .sys_vars
        .iter()
        .position(|v| v == state.name())
        .ok_or_else(|| SafetyError::Spec(format!("strategy lacks variable {}", state.name())))?;
    Ok(1 << idx)
}

fn drive_state(strategy: &Strategy, bits: u32) -> Result<DriveState, SafetyError> {
    let on: Vec<&str> =
        strategy.sys_vars.iter().enumerate().filter(|(i, _)| (bits >> i) & 1 == 1).map(|(_, v)| v.as_str()).collect();
    match on.as_slice() {
        ["MOV"] => Ok(DriveState::Mov),
        ["DCL"] => Ok(DriveState::Dcl),
        ["STP"] => Ok(DriveState::Stp),
        _ => Err(SafetyError::Spec(format!("valuation {on:?} is not a drive state"))),
    }
}

/// Position of a drive-state strategy at the given state, without history.
pub fn exec_state_at(strategy: &Strategy, state: DriveState) -> Result<ExecState, SafetyError> {
    Ok(strategy.start_at(sys_bits(strategy, state)?))
}

/// One shield transition on the current flags.
pub fn execute(
    strategy: &Strategy,
    flags: EnvFlags,
    state: &ExecState,
) -> Result<(ExecState, DriveState), SafetyError> {
    let e = env_bits(strategy, flags)?;
    let (next, y) = strategy.step(state, e)?;
    Ok((next, drive_state(strategy, y)?))
}

/// Synthesizes the built-in spec.
pub fn paper_strategy() -> Result<Strategy, SafetyError> {
    match solve_gr1(&build_paper_spec())? {
        Synthesis::Realizable(s) => Ok(s),
        Synthesis::Unrealizable(why) => Err(SafetyError::Unrealizable(why)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ScanReport {
    pub points: usize,
    pub compared: usize,
    pub mismatches: usize,
}

/// Sweeps `d` over `[0, 30]` in 0.01 m steps and compares the rule law with
/// the shield output wherever the shield, started from the state the law
/// prescribes, stays in that state.
pub fn equivalence_scan(strategy: &Strategy, v_cmd: f64, cfg: &FilterConfig) -> Result<ScanReport, SafetyError> {
    let mut report = ScanReport::default();
    for i in 0..=3000 {
        let d = i as f64 / 100.0;
        report.points += 1;
        let expected = DriveState::for_distance(Some(d), cfg);
        let flags = flags_from_distance(Some(d), cfg)?;
        let start = exec_state_at(strategy, expected)?;
        let (_, got) = execute(strategy, flags, &start)?;
        if got != expected {
            continue;
        }
        report.compared += 1;
        let a = rule_filter(v_cmd, Some(d), cfg)?;
        let b = apply_drive_state(got, v_cmd, Some(d), cfg);
        if a.to_bits() != b.to_bits() {
            report.mismatches += 1;
        }
    }
    Ok(report)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShieldKind {
    Rule,
    Gr1,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShieldOutput {
    pub u: f64,
    pub state: DriveState,
    /// The input broke the environment assumptions and the previous state was held.
    pub held: bool,
}

/// Per-vehicle safety filter.
#[derive(Debug, Clone)]
pub enum Shield {
    Rule(FilterConfig),
    Gr1 { strategy: Arc<Strategy>, cfg: FilterConfig, exec: ExecState, last: DriveState, violations: u64 },
}

impl Shield {
    pub fn rule(cfg: FilterConfig) -> Self {
        Shield::Rule(cfg)
    }

    pub fn gr1(strategy: Arc<Strategy>, cfg: FilterConfig) -> Result<Self, SafetyError> {
        let e0 = env_bits(&strategy, EnvFlags::QUIET)?;
        let exec = strategy.start(e0).ok_or_else(|| SafetyError::Spec("no initial node".into()))?;
        let last = drive_state(&strategy, strategy.node_sys(exec.node))?;
        Ok(Shield::Gr1 { strategy, cfg, exec, last, violations: 0 })
    }

    pub fn kind(&self) -> ShieldKind {
        match self {
            Shield::Rule(_) => ShieldKind::Rule,
            Shield::Gr1 { .. } => ShieldKind::Gr1,
        }
    }

    pub fn assumption_violations(&self) -> u64 {
        match self {
            Shield::Rule(_) => 0,
            Shield::Gr1 { violations, .. } => *violations,
        }
    }

    pub fn filter(&mut self, v_cmd: f64, d: Option<f64>) -> Result<ShieldOutput, SafetyError> {
        match self {
            Shield::Rule(cfg) => Ok(ShieldOutput {
                u: rule_filter(v_cmd, d, cfg)?,
                state: DriveState::for_distance(d, cfg),
                held: false,
            }),
            Shield::Gr1 { strategy, cfg, exec, last, violations } => {
                let flags = flags_from_distance(d, cfg)?;
                let held = match execute(strategy, flags, exec) {
                    Ok((next, state)) => {
                        *exec = next;
                        *last = state;
                        false
                    }
                    Err(SafetyError::AssumptionViolation { .. }) => {
                        *violations += 1;
                        true
                    }
                    Err(e) => return Err(e),
                };
                Ok(ShieldOutput { u: apply_drive_state(*last, v_cmd, d, cfg), state: *last, held })
            }
        }
    }
}
