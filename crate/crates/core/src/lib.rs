//! Behavioral simulator of an N×n 1T1R OxRAM crossbar whose row read buffers
//! carry random DC offsets, trimmed through a body-biased differential pair
//! by a three-stage (coarse/fine/finer) resistor-ladder calibration DAC.
//!
//! - [`devices`]: memristor state machine, selector, body-effect model
//! - [`caldac`]: 12-bit calibration word and cascaded ladder
//! - [`crossbar`]: the array, row drivers, noisy offset measurement, power
//! - [`autocal`]: automatic zero-crossing calibration
//! - [`protocol`]: 26×N-bit control frames, shift register, (A,B,C) select
//! - [`cli`]: experiment commands used by the `oxcal` binary

// NaN must fail these range checks, so they stay as negated comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod autocal;
pub mod caldac;
pub mod cli;
pub mod config;
pub mod crossbar;
pub mod devices;
pub mod protocol;
pub mod seeds;

pub use autocal::{
    calibrate_row, find_zero_crossing, sweep_stage, CalResult, MeasureSettings, SweepRecord,
};
pub use caldac::{dac_output, dac_step_sizes, CalCode, LadderSpec, Stage};
pub use config::ExperimentConfig;
pub use crossbar::{CrossbarParams, CrossbarState, MeasurementResult, Sampling};
pub use devices::{
    apply_pulse, BodyBiasModel, CellState, Operation, OxRamCell, PulseSpec, SelectorModel,
};
pub use protocol::{decode_frame, encode_frame, ControlFrame, RowControlWord, ShiftRegister};
