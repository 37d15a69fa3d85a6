use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::TwinError;
use crate::bus::{sim_rng, SamplingProcess};
use crate::dynamics::{pd_accel, synth_plant_step, KinematicParams, PdMemory, PlantParams, VehicleState};
use crate::jsonfmt::format_f64;

/// The last `T` commands and velocities, oldest first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryWindow {
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl HistoryWindow {
    pub fn zeros(len: usize) -> Self {
        Self { u: vec![0.0; len], v: vec![0.0; len] }
    }

    /// A window holding one constant operating point.
    pub fn constant(len: usize, u: f64, v: f64) -> Self {
        Self { u: vec![u; len], v: vec![v; len] }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| *x == 0.0)
    }

    pub fn validate(&self, t: usize) -> Result<(), TwinError> {
        if self.u.len() != t || self.v.len() != t {
            return Err(TwinError::WindowMismatch { expected: t, got: self.u.len().min(self.v.len()) });
        }
        if self.u.iter().chain(&self.v).any(|x| !x.is_finite()) {
            return Err(TwinError::Shape("non-finite window entry".into()));
        }
        Ok(())
    }

    /// Drops the oldest entry and appends `(u, v)`.
    pub fn push(&mut self, u: f64, v: f64) {
        if self.u.is_empty() {
            return;
        }
        self.u.rotate_left(1);
        self.v.rotate_left(1);
        *self.u.last_mut().unwrap() = u;
        *self.v.last_mut().unwrap() = v;
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub window: HistoryWindow,
    pub target: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Synthetic,
    Ingested,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    pub window: usize,
    pub provenance: Provenance,
    pub samples: Vec<Sample>,
}

impl SampleSet {
    pub fn new(window: usize, provenance: Provenance) -> Self {
        Self { window, provenance, samples: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Appends one all-zero sample per existing sample.
pub fn augment_zeros(set: &SampleSet) -> SampleSet {
    let mut out = set.clone();
    let zero = Sample { window: HistoryWindow::zeros(set.window), target: 0.0 };
    out.samples.extend(std::iter::repeat_n(zero, set.samples.len()));
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub train: Vec<Sample>,
    pub val: Vec<Sample>,
    pub test: Vec<Sample>,
}

/// Seeded shuffle followed by a contiguous cut; train and validation sizes
/// are rounded to the nearest sample and the test split takes the rest.
pub fn split(set: &SampleSet, fractions: [f64; 3], seed: u64) -> Result<Split, TwinError> {
    check_fractions(fractions)?;
    let n = set.samples.len();
    if n < 5 {
        return Err(TwinError::TooFewSamples(n));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut sim_rng(seed));
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train);
    let take = |r: &[usize]| r.iter().map(|&i| set.samples[i].clone()).collect::<Vec<_>>();
    Ok(Split {
        train: take(&idx[..n_train]),
        val: take(&idx[n_train..n_train + n_val]),
        test: take(&idx[n_train + n_val..]),
    })
}

pub(crate) fn check_fractions(f: [f64; 3]) -> Result<(), TwinError> {
    if f.iter().any(|x| !(*x > 0.0)) || (f.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(TwinError::Config(format!("split fractions {f:?} must be positive and sum to 1")));
    }
    Ok(())
}

/// One row of a `t,u,v` velocity log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub t: f64,
    pub u: f64,
    pub v: f64,
}

/// Stride-1 windows over a log; the target is the velocity of the row
/// after each window.
pub fn windows_from_log(rows: &[LogRow], t: usize, provenance: Provenance) -> Result<SampleSet, TwinError> {
    if t == 0 {
        return Err(TwinError::Config("window length must be at least 1".into()));
    }
    if rows.len() < t + 1 {
        return Err(TwinError::TooFewRows { rows: rows.len(), needed: t + 1 });
    }
    let mut set = SampleSet::new(t, provenance);
    set.samples.reserve(rows.len() - t);
    for k in 0..rows.len() - t {
        let w = &rows[k..k + t];
        set.samples.push(Sample {
            window: HistoryWindow { u: w.iter().map(|r| r.u).collect(), v: w.iter().map(|r| r.v).collect() },
            target: rows[k + t].v,
        });
    }
    Ok(set)
}

pub fn read_log<R: Read>(reader: R) -> Result<Vec<LogRow>, TwinError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers().map_err(|e| TwinError::Csv { line: 1, reason: e.to_string() })?.clone();
    if headers.iter().collect::<Vec<_>>() != ["t", "u", "v"] {
        return Err(TwinError::Csv {
            line: 1,
            reason: format!("expected header t,u,v, got {}", headers.iter().collect::<Vec<_>>().join(",")),
        });
    }
    let mut rows = Vec::new();
    let mut prev_t = f64::NEG_INFINITY;
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
            TwinError::Csv { line, reason: e.to_string() }
        })?;
        let line = rec.position().map(|p| p.line() as usize).unwrap_or(0);
        let cell = |i: usize| -> Result<f64, TwinError> {
            let raw = rec.get(i).unwrap_or("");
            raw.parse::<f64>().ok().filter(|x| x.is_finite()).ok_or_else(|| TwinError::Csv {
                line,
                reason: format!("column {} is not a finite number: {raw:?}", i + 1),
            })
        };
        let row = LogRow { t: cell(0)?, u: cell(1)?, v: cell(2)? };
        if row.t < prev_t {
            return Err(TwinError::Csv { line, reason: format!("time {} goes backwards", row.t) });
        }
        prev_t = row.t;
        rows.push(row);
    }
    Ok(rows)
}

pub fn write_log<W: Write>(mut w: W, rows: &[LogRow]) -> std::io::Result<()> {
    writeln!(w, "t,u,v")?;
    for r in rows {
        writeln!(w, "{},{},{}", format_f64(r.t), format_f64(r.u), format_f64(r.v))?;
    }
    Ok(())
}

/// Reads a `t,u,v` log and cuts it into windows of length `t`.
pub fn ingest_csv(path: impl AsRef<Path>, t: usize) -> Result<SampleSet, TwinError> {
    let rows = read_log(File::open(path)?)?;
    windows_from_log(&rows, t, Provenance::Ingested)
}

/// Command profile and plant used to synthesize training logs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub plant: PlantParams,
    pub delta_nom: f64,
    pub jitter: f64,
    /// Hold time of each command level, in steps.
    pub hold_min: usize,
    pub hold_max: usize,
    /// Probability that a segment commands zero.
    pub p_zero: f64,
    /// Probability that a segment commands a level inside the dead zone.
    pub p_dead: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            plant: PlantParams::default(),
            delta_nom: 0.02,
            jitter: 0.2,
            hold_min: 20,
            hold_max: 150,
            p_zero: 0.15,
            p_dead: 0.2,
        }
    }
}

/// Drives the dead-zone plant with piecewise-constant commands and logs
/// `rows` consecutive `(t, u, v)` samples.
pub fn synthesize_log(rows: usize, seed: u64, cfg: &SynthConfig) -> Result<Vec<LogRow>, TwinError> {
    if cfg.hold_min == 0 || cfg.hold_max < cfg.hold_min {
        return Err(TwinError::Config("hold range must satisfy 1 ≤ hold_min ≤ hold_max".into()));
    }
    let mut rng = sim_rng(seed);
    let mut sampling = SamplingProcess::new(cfg.delta_nom, cfg.jitter, seed ^ 0x5eed_5a3d);
    let v_max = cfg.plant.kinematic.v_max;
    let dz = cfg.plant.dead_zone;
    let mut state = VehicleState::default();
    let mut t = 0.0;
    let mut out = Vec::with_capacity(rows);
    let mut u = 0.0;
    let mut hold = 0usize;
    while out.len() < rows {
        if hold == 0 {
            let p: f64 = rng.gen();
            u = if p < cfg.p_zero {
                0.0
            } else if p < cfg.p_zero + cfg.p_dead {
                rng.gen_range(0.0..dz)
            } else {
                rng.gen_range(dz..v_max)
            };
            hold = rng.gen_range(cfg.hold_min..=cfg.hold_max);
        }
        out.push(LogRow { t, u, v: state.v });
        let dt = sampling.sample();
        state = synth_plant_step(&state, 0.0, u, dt, &cfg.plant)?;
        t += dt;
        hold -= 1;
    }
    Ok(out)
}

/// Synthetic sample set with exactly `samples` windows.
pub fn synthesize_samples(samples: usize, t: usize, seed: u64, cfg: &SynthConfig) -> Result<SampleSet, TwinError> {
    let rows = synthesize_log(samples + t, seed, cfg)?;
    windows_from_log(&rows, t, Provenance::Synthetic)
}

/// One-step velocity prediction of the PD kinematic model from the tail of
/// a window, stepping by the mean sampling interval.
pub fn kinematic_baseline(window: &HistoryWindow, params: &KinematicParams, dt: f64) -> Result<f64, TwinError> {
    let n = window.len();
    if n == 0 || window.v.len() != n {
        return Err(TwinError::WindowMismatch { expected: n.max(1), got: window.v.len().min(n) });
    }
    let (u, v) = (window.u[n - 1], window.v[n - 1]);
    let mem = if n >= 2 { PdMemory::new(window.u[n - 2], window.v[n - 2]) } else { PdMemory::new(u, v) };
    let (a, _) = pd_accel(u, v, mem, dt, params)?;
    Ok((v + dt * a).clamp(0.0, params.v_max))
}

pub fn baseline_mse(samples: &[Sample], params: &KinematicParams, dt: f64) -> Result<f64, TwinError> {
    if samples.is_empty() {
        return Err(TwinError::EmptyBatch);
    }
    let mut acc = 0.0;
    for s in samples {
        let e = kinematic_baseline(&s.window, params, dt)? - s.target;
        acc += e * e;
    }
    Ok(acc / samples.len() as f64)
}
