//! Experiment commands behind the `oxcal` binary.
//!
//! Each command takes a validated [`ExperimentConfig`] and returns the text it
//! would write (CSV or pretty JSON), so the binary only handles argument
//! parsing and file output.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};
use thiserror::Error;

use crate::autocal::{calibrate_row, sweep_stage_pinned, AutocalError, CalResult};
use crate::caldac::{CalCode, Stage};
use crate::config::{ConfigError, ExperimentConfig};
use crate::crossbar::{CrossbarError, PowerReport, Sampling};
use crate::devices::{CellState, DeviceError, Operation};
use crate::protocol::{self, ControlFrame, OpSelect, ProtocolError};
use crate::seeds::derive_seed;

/// Residual target for the Monte Carlo summary (V).
pub const RESIDUAL_TARGET: f64 = 0.1e-3;

const TRIAL_STATE: u64 = 0x5354;
const TRIAL_CAL: u64 = 0x4341;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("protocol error: {0}")]
    Protocol(#[from] ProtocolError),
    #[error("device error: {0}")]
    Device(#[from] DeviceError),
    #[error("{0}")]
    Usage(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl From<CrossbarError> for CliError {
    fn from(e: CrossbarError) -> Self {
        match e {
            CrossbarError::Device(d) => CliError::Device(d),
            CrossbarError::Protocol(p) => CliError::Protocol(p),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl From<AutocalError> for CliError {
    fn from(e: AutocalError) -> Self {
        match e {
            AutocalError::Crossbar(c) => c.into(),
            other => CliError::Usage(other.to_string()),
        }
    }
}

impl CliError {
    /// 2 config/usage, 3 protocol, 4 device state, 1 anything else.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 2,
            CliError::Protocol(_) => 3,
            CliError::Device(_) => 4,
            CliError::Io(_) | CliError::Json(_) => 1,
        }
    }
}

/// Options shared by every command.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub exact_sampling: bool,
    pub no_timestamp: bool,
}

impl RunOptions {
    pub fn sampling(&self) -> Sampling {
        if self.exact_sampling {
            Sampling::PerSample
        } else {
            Sampling::Auto
        }
    }

    fn stamp(&self, mut v: Value) -> Value {
        if !self.no_timestamp {
            let secs = std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0);
            v["generated_unix_s"] = json!(secs);
        }
        v
    }
}

fn to_pretty(v: &Value) -> Result<String, CliError> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s)
}

/// Decimal with 15 significant digits.
fn volts(v: f64) -> String {
    format!("{v:.14e}")
}

/// Converts a 1-based row/column to an index, checking bounds.
fn index(name: &str, one_based: usize, len: usize) -> Result<usize, CliError> {
    if one_based == 0 || one_based > len {
        return Err(CliError::Usage(format!(
            "{name} {one_based} out of range 1..={len}"
        )));
    }
    Ok(one_based - 1)
}

pub const SWEEP_HEADER: &str =
    "stage,code,v_cal_volts,mean_offset_volts,stderr_volts,n_samples,seed";

/// Sweep of one ladder field of `row` (1-based), as CSV.
pub fn cmd_sweep(
    cfg: &ExperimentConfig,
    row: usize,
    stage: u8,
    prefix: CalCode,
    pin: u8,
    opts: &RunOptions,
) -> Result<String, CliError> {
    let stage = Stage::from_number(stage).ok_or(AutocalError::InvalidStage(stage))?;
    let r = index("row", row, cfg.rows)?;
    let state = cfg.build(cfg.seed)?;
    let rec = sweep_stage_pinned(
        &state,
        r,
        stage,
        prefix,
        pin,
        &cfg.measure_settings(opts.sampling()),
        derive_seed(cfg.seed, &[u64::from(stage.number())]),
    )?;
    let mut out = String::new();
    writeln!(out, "{SWEEP_HEADER}").unwrap();
    for p in &rec.points {
        let m = &p.measurement;
        writeln!(
            out,
            "{},{},{},{},{},{},{}",
            stage.number(),
            p.code_value,
            volts(p.v_cal),
            volts(m.mean),
            volts(m.std_error()),
            m.n_samples,
            m.seed
        )
        .unwrap();
    }
    Ok(out)
}

/// One parsed line of a sweep CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub stage: u8,
    pub code: u8,
    pub v_cal: f64,
    pub mean: f64,
    pub stderr: f64,
    pub n_samples: u64,
    pub seed: u64,
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>, CliError> {
    let mut lines = text.lines();
    if lines.next() != Some(SWEEP_HEADER) {
        return Err(CliError::Usage("missing sweep CSV header".into()));
    }
    let bad = |l: &str| CliError::Usage(format!("malformed sweep row: {l}"));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(bad(l));
            }
            Ok(SweepRow {
                stage: f[0].parse().map_err(|_| bad(l))?,
                code: f[1].parse().map_err(|_| bad(l))?,
                v_cal: f[2].parse().map_err(|_| bad(l))?,
                mean: f[3].parse().map_err(|_| bad(l))?,
                stderr: f[4].parse().map_err(|_| bad(l))?,
                n_samples: f[5].parse().map_err(|_| bad(l))?,
                seed: f[6].parse().map_err(|_| bad(l))?,
            })
        })
        .collect()
}

/// Calibrates `row` (1-based) and reports the full result as JSON.
pub fn cmd_autocal(
    cfg: &ExperimentConfig,
    row: usize,
    opts: &RunOptions,
) -> Result<String, CliError> {
    let r = index("row", row, cfg.rows)?;
    let mut state = cfg.build(cfg.seed)?;
    let v_os_random = state.driver(r)?.v_os_random;
    let result = calibrate_row(
        &mut state,
        r,
        &cfg.measure_settings(opts.sampling()),
        derive_seed(cfg.seed, &[TRIAL_CAL]),
    )?;
    let v_cal = state.ladder().output(result.best_code);
    let report = json!({
        "row": row,
        "seed": cfg.seed,
        "n_samples": cfg.n_samples,
        "noise_sigma": cfg.noise_sigma,
        "v_os_random": v_os_random,
        "best_code_packed": result.best_code.pack(),
        "best_v_cal": v_cal,
        "result": result,
    });
    to_pretty(&opts.stamp(report))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialOutcome {
    pub trial: usize,
    pub state_seed: u64,
    pub v_os_random: f64,
    pub best_code: CalCode,
    pub residual: f64,
    pub bracketed: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloSummary {
    pub trials: usize,
    pub p50: f64,
    pub p99: f64,
    pub max: f64,
    pub fraction_below_target: f64,
    pub target: f64,
    pub bracketed_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloReport {
    pub seed: u64,
    pub n_samples: u64,
    pub noise_sigma: f64,
    pub summary: MonteCarloSummary,
    pub per_trial: Vec<TrialOutcome>,
}

/// Nearest-rank percentile of an ascending slice.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    sorted[rank.clamp(1, sorted.len()) - 1]
}

/// Calibrates row 1 of `trials` independently seeded arrays.
pub fn run_montecarlo(
    cfg: &ExperimentConfig,
    trials: usize,
    sampling: Sampling,
) -> Result<MonteCarloReport, CliError> {
    if trials == 0 {
        return Err(CliError::Usage("trials must be >= 1".into()));
    }
    cfg.validate()?;
    let settings = cfg.measure_settings(sampling);
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|i| {
            let state_seed = derive_seed(cfg.seed, &[TRIAL_STATE, i as u64]);
            let mut state = cfg.build(state_seed)?;
            let v_os_random = state.driver(0)?.v_os_random;
            let res: CalResult = calibrate_row(
                &mut state,
                0,
                &settings,
                derive_seed(cfg.seed, &[TRIAL_CAL, i as u64]),
            )?;
            Ok(TrialOutcome {
                trial: i,
                state_seed,
                v_os_random,
                best_code: res.best_code,
                residual: res.residual,
                bracketed: res.bracketed,
            })
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let mut mags: Vec<f64> = per_trial.iter().map(|t| t.residual.abs()).collect();
    mags.sort_by(f64::total_cmp);
    let n = trials as f64;
    let summary = MonteCarloSummary {
        trials,
        p50: percentile(&mags, 50.0),
        p99: percentile(&mags, 99.0),
        max: *mags.last().unwrap(),
        fraction_below_target: mags.iter().filter(|&&m| m < RESIDUAL_TARGET).count() as f64 / n,
        target: RESIDUAL_TARGET,
        bracketed_fraction: per_trial.iter().filter(|t| t.bracketed).count() as f64 / n,
    };
    Ok(MonteCarloReport {
        seed: cfg.seed,
        n_samples: cfg.n_samples,
        noise_sigma: cfg.noise_sigma,
        summary,
        per_trial,
    })
}

pub fn cmd_montecarlo(
    cfg: &ExperimentConfig,
    trials: usize,
    opts: &RunOptions,
) -> Result<String, CliError> {
    let report = run_montecarlo(cfg, trials, opts.sampling())?;
    to_pretty(&opts.stamp(serde_json::to_value(report)?))
}

/// Cells to read, 0-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection(pub Vec<(usize, usize)>);

impl Selection {
    /// `all`, `none`, or `;`-separated 1-based `row,col` pairs, e.g. `1,1;2,3`.
    pub fn parse(text: &str, rows: usize, cols: usize) -> Result<Self, CliError> {
        let text = text.trim();
        match text {
            "all" => {
                return Ok(Self(
                    (0..rows)
                        .flat_map(|r| (0..cols).map(move |c| (r, c)))
                        .collect(),
                ))
            }
            "" | "none" => return Ok(Self(Vec::new())),
            _ => {}
        }
        let mut cells = Vec::new();
        for pair in text.split(';') {
            let (r, c) = pair
                .split_once(',')
                .ok_or_else(|| CliError::Usage(format!("bad cell '{pair}', expected row,col")))?;
            let parse = |s: &str| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| CliError::Usage(format!("bad cell '{pair}', expected row,col")))
            };
            let cell = (
                index("row", parse(r)?, rows)?,
                index("col", parse(c)?, cols)?,
            );
            if !cells.contains(&cell) {
                cells.push(cell);
            }
        }
        Ok(Self(cells))
    }
}

/// Read power of the selected cells after programming them to `cell_state`.
pub fn run_power(
    cfg: &ExperimentConfig,
    v_read_mv: f64,
    selection: &Selection,
    cell_state: CellState,
) -> Result<PowerReport, CliError> {
    let mut state = cfg.build(cfg.seed)?;
    for &(r, c) in &selection.0 {
        match cell_state {
            CellState::Pristine => {}
            CellState::Lrs => {
                state.target_cell_op(r, c, Operation::Form, cfg.v_read)?;
            }
            CellState::Hrs => {
                state.target_cell_op(r, c, Operation::Form, cfg.v_read)?;
                state.target_cell_op(r, c, Operation::Reset, cfg.v_read)?;
            }
        }
    }
    Ok(state.read_power(&selection.0, v_read_mv * 1e-3)?)
}

pub fn cmd_power(
    cfg: &ExperimentConfig,
    v_read_mv: f64,
    selection: &str,
    cell_state: CellState,
    opts: &RunOptions,
) -> Result<String, CliError> {
    let sel = Selection::parse(selection, cfg.rows, cfg.cols)?;
    let rep = run_power(cfg, v_read_mv, &sel, cell_state)?;
    let per_cell: Vec<Value> = rep
        .per_cell
        .iter()
        .map(|c| json!({"row": c.row + 1, "col": c.col + 1, "power_w": c.power_w}))
        .collect();
    let report = json!({
        "v_read_volts": rep.v_read,
        "cell_state": cell_state,
        "total_w": rep.total_w,
        "per_cell": per_cell,
    });
    to_pretty(&opts.stamp(report))
}

/// Frame JSON to bitstring (with trailing newline).
pub fn cmd_frame_encode(frame_json: &str) -> Result<String, CliError> {
    let frame: ControlFrame = serde_json::from_str(frame_json)
        .map_err(|e| CliError::Protocol(ProtocolError::Cal(format!("bad frame JSON: {e}"))))?;
    Ok(format!("{}\n", protocol::encode_frame(&frame)))
}

/// Bitstring to frame JSON.
pub fn cmd_frame_decode(bits: &str, rows: usize) -> Result<String, CliError> {
    let frame = protocol::decode_frame(bits, rows)?;
    let mut s = serde_json::to_string(&frame)?;
    s.push('\n');
    Ok(s)
}

/// One pulse step: an operation name or an `ABC` select code like `100`.
pub fn parse_op(token: &str) -> Result<Operation, CliError> {
    let t = token.trim();
    if t.len() == 3 && t.chars().all(|c| c == '0' || c == '1') {
        return Ok(protocol::decode_opselect(t.parse::<OpSelect>()?)?);
    }
    t.parse::<Operation>().map_err(CliError::Usage)
}

/// Applies a sequence of operations to one cell (1-based) of a fresh array.
pub fn cmd_pulse(
    cfg: &ExperimentConfig,
    row: usize,
    col: usize,
    ops: &[Operation],
    opts: &RunOptions,
) -> Result<String, CliError> {
    let r = index("row", row, cfg.rows)?;
    let c = index("col", col, cfg.cols)?;
    let mut state = cfg.build(cfg.seed)?;
    let mut steps = Vec::with_capacity(ops.len());
    for &op in ops {
        let current = state.target_cell_op(r, c, op, cfg.v_read)?;
        let after = state.cell(r, c)?.state;
        steps.push(json!({
            "op": op,
            "abc": OpSelect::encode(op),
            "state": after,
            "column_current_a": current,
        }));
    }
    let report = json!({"row": row, "col": col, "v_read": cfg.v_read, "steps": steps});
    to_pretty(&opts.stamp(report))
}
