//! The N×n 1T1R array with its row pre-synaptic drivers and column
//! integrate-and-compare post-synaptic drivers.
//!
//! Each row buffer carries a random input-referred offset drawn once at
//! construction. The calibration DAC shifts it through the body-bias port:
//! `v_os_eff = v_os_random + eta * (dac_output(cal_code) - v_calibref)`.

use rand::Rng;
use rand::RngCore;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caldac::{CalCode, LadderSpec};
use crate::devices::{
    apply_pulse, cell_path_conductance, BodyBiasModel, DeviceError, Operation, OxRamCell,
    PulseSpec, SelectorModel, DEFAULT_R_HRS, DEFAULT_R_LRS, MAX_READ_VOLTAGE,
};
use crate::protocol::{ControlFrame, IpotCode, ProtocolError};
use crate::seeds::{derive_seed, rng_from_seed};

/// Sample counts above this may use the closed-form averaged-noise draw.
pub const SHORTCUT_THRESHOLD: u64 = 10_000;
/// Default per-sample read noise (V).
pub const DEFAULT_NOISE_SIGMA: f64 = 200e-6;

const NOISE_STREAM: u64 = 0x006e_6f69_7365;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CrossbarError {
    #[error("crossbar dimensions must be >= 1 (got {rows}x{cols})")]
    ZeroDimension { rows: usize, cols: usize },
    #[error("row {row} out of range (array has {rows} rows)")]
    InvalidRow { row: usize, rows: usize },
    #[error("column {col} out of range (array has {cols} columns)")]
    InvalidColumn { col: usize, cols: usize },
    #[error("n_samples must be >= 1")]
    NoSamples,
    #[error("noise sigma {0} V must be >= 0")]
    InvalidNoise(f64),
    #[error("pulse width {0} s must be > 0")]
    InvalidPulseWidth(f64),
    #[error("invalid parameter: {0}")]
    InvalidParams(String),
    #[error(transparent)]
    Device(#[from] DeviceError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
}

/// How averaged read noise is produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Per-sample loop up to [`SHORTCUT_THRESHOLD`], closed-form draw above it.
    #[default]
    Auto,
    /// Always loop over individual samples.
    PerSample,
    /// Always draw the mean directly from N(0, σ²/n).
    ClosedForm,
}

impl Sampling {
    pub fn uses_closed_form(self, n_samples: u64) -> bool {
        match self {
            Sampling::Auto => n_samples > SHORTCUT_THRESHOLD,
            Sampling::PerSample => false,
            Sampling::ClosedForm => true,
        }
    }
}

/// Mean of `n` i.i.d. N(0, σ²) noise samples.
pub fn averaged_noise<R: Rng + ?Sized>(rng: &mut R, n: u64, sigma: f64, sampling: Sampling) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    if sampling.uses_closed_form(n) {
        let z: f64 = StandardNormal.sample(rng);
        sigma / (n as f64).sqrt() * z
    } else {
        let mut sum = 0.0;
        for _ in 0..n {
            let z: f64 = StandardNormal.sample(rng);
            sum += z;
        }
        sigma * sum / n as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeasurementResult {
    pub mean: f64,
    pub sigma_per_sample: f64,
    pub n_samples: u64,
    pub seed: u64,
}

impl MeasurementResult {
    pub fn std_error(&self) -> f64 {
        self.sigma_per_sample / (self.n_samples as f64).sqrt()
    }
}

/// Analog parameters shared by every row and column of an array.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossbarParams {
    pub r_lrs: f64,
    pub r_hrs: f64,
    pub selector: SelectorModel,
    pub ladder: LadderSpec,
    pub body: BodyBiasModel,
    /// Standard deviation of the per-row random offset (V).
    pub sigma_os: f64,
    /// When set, offsets are redrawn until |v_os| is within this fraction of
    /// the correctable half-range `|eta| * v_d`.
    pub offset_truncation: Option<f64>,
    pub integ_cap: f64,
    pub comp_threshold: f64,
    /// Integrator output clamp (V).
    pub v_rail: f64,
}

impl Default for CrossbarParams {
    fn default() -> Self {
        Self {
            r_lrs: DEFAULT_R_LRS,
            r_hrs: DEFAULT_R_HRS,
            selector: SelectorModel::default(),
            ladder: LadderSpec::default(),
            body: BodyBiasModel::default(),
            sigma_os: 1e-3,
            offset_truncation: None,
            integ_cap: 1e-12,
            comp_threshold: 0.5,
            v_rail: 5.0,
        }
    }
}

impl CrossbarParams {
    pub fn validate(&self) -> Result<(), CrossbarError> {
        OxRamCell::new(self.r_lrs, self.r_hrs)?;
        self.selector.validate()?;
        self.selector.check_isolation(self.r_hrs);
        self.body.validate()?;
        self.ladder
            .validate()
            .map_err(|e| CrossbarError::InvalidParams(e.to_string()))?;
        if !(self.sigma_os >= 0.0 && self.sigma_os.is_finite()) {
            return Err(CrossbarError::InvalidParams(format!(
                "sigma_os = {}",
                self.sigma_os
            )));
        }
        if let Some(f) = self.offset_truncation {
            if !(f > 0.0 && f.is_finite()) {
                return Err(CrossbarError::InvalidParams(format!(
                    "offset_truncation = {f}"
                )));
            }
        }
        if !(self.integ_cap > 0.0 && self.v_rail > 0.0) {
            return Err(CrossbarError::InvalidParams(format!(
                "integ_cap = {}, v_rail = {}",
                self.integ_cap, self.v_rail
            )));
        }
        Ok(())
    }

    /// Range of random offsets that some calibration code drives to zero.
    pub fn correctable_range(&self) -> (f64, f64) {
        let a = -self.body.offset_correction(self.ladder.v_min());
        let b = -self.body.offset_correction(self.ladder.v_max());
        (a.min(b), a.max(b))
    }

    fn offset_limit(&self) -> Option<f64> {
        self.offset_truncation
            .map(|f| f * self.body.eta.abs() * self.ladder.v_d)
    }
}

/// Pre-synaptic driver state of one row.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RowDriverState {
    pub v_os_random: f64,
    pub body: BodyBiasModel,
    pub cal_code: CalCode,
    pub ipot_code: IpotCode,
}

impl RowDriverState {
    pub fn v_cal(&self, ladder: &LadderSpec) -> f64 {
        ladder.output(self.cal_code)
    }

    pub fn effective_offset(&self, ladder: &LadderSpec) -> f64 {
        self.offset_at(ladder, self.cal_code)
    }

    /// Effective offset this driver would show with `code` applied.
    pub fn offset_at(&self, ladder: &LadderSpec, code: CalCode) -> f64 {
        self.v_os_random + self.body.offset_correction(ladder.output(code))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IntegratorOutput {
    pub v_int: f64,
    pub bit: bool,
    /// The ideal integrator exceeded the rail and was clamped.
    pub saturated: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CellPower {
    pub row: usize,
    pub col: usize,
    pub power_w: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerReport {
    pub v_read: f64,
    pub total_w: f64,
    pub per_cell: Vec<CellPower>,
}

#[derive(Debug, Clone)]
pub struct CrossbarState {
    rows: usize,
    cols: usize,
    /// Row-major.
    cells: Vec<OxRamCell>,
    drivers: Vec<RowDriverState>,
    params: CrossbarParams,
    rng_seed: u64,
    noise_rng: ChaCha8Rng,
}

impl CrossbarState {
    pub fn new(
        rows: usize,
        cols: usize,
        params: CrossbarParams,
        seed: u64,
    ) -> Result<Self, CrossbarError> {
        if rows == 0 || cols == 0 {
            return Err(CrossbarError::ZeroDimension { rows, cols });
        }
        params.validate()?;
        let cell = OxRamCell::new(params.r_lrs, params.r_hrs)?;
        let mut rng = rng_from_seed(seed);
        let drivers = (0..rows)
            .map(|_| RowDriverState {
                v_os_random: draw_offset(&mut rng, params.sigma_os, params.offset_limit()),
                body: params.body,
                cal_code: CalCode::neutral(),
                ipot_code: IpotCode::default(),
            })
            .collect();
        Ok(Self {
            rows,
            cols,
            cells: vec![cell; rows * cols],
            drivers,
            params,
            rng_seed: seed,
            noise_rng: rng_from_seed(derive_seed(seed, &[NOISE_STREAM])),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn seed(&self) -> u64 {
        self.rng_seed
    }

    pub fn params(&self) -> &CrossbarParams {
        &self.params
    }

    pub fn ladder(&self) -> &LadderSpec {
        &self.params.ladder
    }

    pub fn selector(&self) -> &SelectorModel {
        &self.params.selector
    }

    fn check_row(&self, row: usize) -> Result<(), CrossbarError> {
        if row >= self.rows {
            return Err(CrossbarError::InvalidRow {
                row,
                rows: self.rows,
            });
        }
        Ok(())
    }

    fn check_col(&self, col: usize) -> Result<(), CrossbarError> {
        if col >= self.cols {
            return Err(CrossbarError::InvalidColumn {
                col,
                cols: self.cols,
            });
        }
        Ok(())
    }

    pub fn cell(&self, row: usize, col: usize) -> Result<&OxRamCell, CrossbarError> {
        self.check_row(row)?;
        self.check_col(col)?;
        Ok(&self.cells[row * self.cols + col])
    }

    pub fn cells(&self) -> &[OxRamCell] {
        &self.cells
    }

    pub fn driver(&self, row: usize) -> Result<&RowDriverState, CrossbarError> {
        self.check_row(row)?;
        Ok(&self.drivers[row])
    }

    pub fn driver_mut(&mut self, row: usize) -> Result<&mut RowDriverState, CrossbarError> {
        self.check_row(row)?;
        Ok(&mut self.drivers[row])
    }

    pub fn set_cal_code(&mut self, row: usize, code: CalCode) -> Result<(), CrossbarError> {
        self.driver_mut(row)?.cal_code = code;
        Ok(())
    }

    /// Applies latched control words to the row drivers.
    pub fn apply_frame(&mut self, frame: &ControlFrame) -> Result<(), CrossbarError> {
        if frame.n_rows() != self.rows {
            return Err(ProtocolError::RowMismatch {
                got: frame.n_rows(),
                expected: self.rows,
            }
            .into());
        }
        for (d, w) in self.drivers.iter_mut().zip(&frame.rows) {
            d.ipot_code = w.ipot;
            d.cal_code = w.cal;
        }
        Ok(())
    }

    pub fn effective_offset(&self, row: usize) -> Result<f64, CrossbarError> {
        Ok(self.driver(row)?.effective_offset(&self.params.ladder))
    }

    /// Applies the nominal pulse for `op` to one cell, with only its selector on.
    /// READ returns the resulting column current.
    pub fn target_cell_op(
        &mut self,
        row: usize,
        col: usize,
        op: Operation,
        v_read: f64,
    ) -> Result<Option<f64>, CrossbarError> {
        self.check_row(row)?;
        self.check_col(col)?;
        if op == Operation::Read && !(v_read.abs() <= MAX_READ_VOLTAGE) {
            return Err(DeviceError::ReadOutOfRange(v_read).into());
        }
        let idx = row * self.cols + col;
        self.cells[idx] = apply_pulse(self.cells[idx], &PulseSpec::for_operation(op, v_read))?;
        match op {
            Operation::Read => self.column_current(col, v_read, &[row]).map(Some),
            _ => Ok(None),
        }
    }

    /// Contribution of `row` to the current of `col`.
    pub fn row_current(
        &self,
        row: usize,
        col: usize,
        v_read: f64,
        selected: bool,
    ) -> Result<f64, CrossbarError> {
        let cell = self.cell(row, col)?;
        let v_os = self.drivers[row].effective_offset(&self.params.ladder);
        let v_row = if selected { v_read + v_os } else { v_os };
        Ok(v_row * cell_path_conductance(cell, &self.params.selector, selected))
    }

    /// Current summed into `col`; rows in `selected_rows` have their gates on
    /// and are driven at `v_read`, the rest idle at their own offset.
    pub fn column_current(
        &self,
        col: usize,
        v_read: f64,
        selected_rows: &[usize],
    ) -> Result<f64, CrossbarError> {
        self.check_col(col)?;
        for &r in selected_rows {
            self.check_row(r)?;
        }
        let mut total = 0.0;
        for r in 0..self.rows {
            total += self.row_current(r, col, v_read, selected_rows.contains(&r))?;
        }
        Ok(total)
    }

    pub fn integrate_and_compare(
        &self,
        col: usize,
        current: f64,
        pulse_width: f64,
    ) -> Result<IntegratorOutput, CrossbarError> {
        self.check_col(col)?;
        if !(pulse_width > 0.0) {
            return Err(CrossbarError::InvalidPulseWidth(pulse_width));
        }
        let ideal = current * pulse_width / self.params.integ_cap;
        let rail = self.params.v_rail;
        let v_int = ideal.clamp(-rail, rail);
        Ok(IntegratorOutput {
            v_int,
            bit: v_int > self.params.comp_threshold,
            saturated: ideal.abs() > rail,
        })
    }

    /// Averaged offset of `row` with `code` applied, reproducible from `seed`.
    pub fn measure_offset_at(
        &self,
        row: usize,
        code: CalCode,
        n_samples: u64,
        noise_sigma: f64,
        sampling: Sampling,
        seed: u64,
    ) -> Result<MeasurementResult, CrossbarError> {
        self.check_row(row)?;
        if n_samples == 0 {
            return Err(CrossbarError::NoSamples);
        }
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return Err(CrossbarError::InvalidNoise(noise_sigma));
        }
        let offset = self.drivers[row].offset_at(&self.params.ladder, code);
        let mut rng = rng_from_seed(seed);
        let noise = averaged_noise(&mut rng, n_samples, noise_sigma, sampling);
        Ok(MeasurementResult {
            mean: offset + noise,
            sigma_per_sample: noise_sigma,
            n_samples,
            seed,
        })
    }

    /// Averaged offset of `row` at its current calibration code. Each call
    /// draws a fresh measurement seed from the array's noise stream.
    pub fn measure_row_offset(
        &mut self,
        row: usize,
        n_samples: u64,
        noise_sigma: f64,
        sampling: Sampling,
    ) -> Result<MeasurementResult, CrossbarError> {
        let code = self.driver(row)?.cal_code;
        let seed = self.noise_rng.next_u64();
        self.measure_offset_at(row, code, n_samples, noise_sigma, sampling, seed)
    }

    /// Read power of the selected cells at nominal `v_read`, offsets ignored.
    pub fn read_power(
        &self,
        selected: &[(usize, usize)],
        v_read: f64,
    ) -> Result<PowerReport, CrossbarError> {
        let mut per_cell = Vec::with_capacity(selected.len());
        let mut total_w = 0.0;
        for &(row, col) in selected {
            let cell = self.cell(row, col)?;
            if !cell.is_formed() {
                return Err(DeviceError::NotFormed(Operation::Read).into());
            }
            let power_w =
                v_read * v_read * cell_path_conductance(cell, &self.params.selector, true);
            total_w += power_w;
            per_cell.push(CellPower { row, col, power_w });
        }
        Ok(PowerReport {
            v_read,
            total_w,
            per_cell,
        })
    }
}

fn draw_offset<R: Rng + ?Sized>(rng: &mut R, sigma: f64, limit: Option<f64>) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    let dist = Normal::new(0.0, sigma).expect("sigma validated");
    loop {
        let v = dist.sample(rng);
        match limit {
            Some(l) if v.abs() > l => continue,
            _ => return v,
        }
    }
}
