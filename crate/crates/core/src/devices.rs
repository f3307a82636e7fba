//! 1T1R OxRAM device model: memristor state machine, series selector and the
//! body-effect offset shift of the row buffer's differential pair.
//!
//! The memristor is ohmic with one fixed resistance per state. Programming
//! pulses are classified by amplitude window, gate bias and width; anything
//! that falls outside every programming window leaves the cell untouched.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default low-resistance state (Ω).
pub const DEFAULT_R_LRS: f64 = 13.7e3;
/// Default high-resistance state (Ω).
pub const DEFAULT_R_HRS: f64 = 845.9e3;
/// Default selector on-resistance at read gate bias (Ω). Puts the LRS read path at 50 kΩ.
pub const DEFAULT_R_ON: f64 = 36.3e3;
/// Default selector off-conductance (S).
pub const DEFAULT_G_OFF: f64 = 1e-9;
/// Digital supply used to drive the selector gate fully on.
pub const VDD: f64 = 4.8;
/// Largest read amplitude for which the ohmic model is considered valid.
pub const MAX_READ_VOLTAGE: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DeviceError {
    #[error("invalid resistances: r_lrs = {r_lrs} Ω, r_hrs = {r_hrs} Ω (need 0 < r_lrs < r_hrs)")]
    InvalidResistance { r_lrs: f64, r_hrs: f64 },
    #[error("invalid selector: r_on = {r_on} Ω, g_off = {g_off} S (both must be >= 0)")]
    InvalidSelector { r_on: f64, g_off: f64 },
    #[error("malformed pulse: {0}")]
    InvalidPulse(String),
    #[error("FORM attempted on an already formed cell ({0:?})")]
    AlreadyFormed(CellState),
    #[error("{0:?} attempted on a pristine cell; FORM it first")]
    NotFormed(Operation),
    #[error("read voltage {0} V is outside the ohmic model range (|v| <= 1 V)")]
    ReadOutOfRange(f64),
    #[error("invalid body-bias ratio eta = {0} (need 0 < |eta| < 1)")]
    InvalidEta(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum CellState {
    Pristine,
    Lrs,
    Hrs,
}

/// The four cell operations reachable from the chip's control interface.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Operation {
    Read,
    Form,
    Set,
    Reset,
}

impl std::str::FromStr for Operation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "read" => Ok(Operation::Read),
            "form" => Ok(Operation::Form),
            "set" => Ok(Operation::Set),
            "reset" => Ok(Operation::Reset),
            other => Err(format!("unknown operation '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OxRamCell {
    pub state: CellState,
    r_lrs: f64,
    r_hrs: f64,
}

impl Default for OxRamCell {
    fn default() -> Self {
        Self {
            state: CellState::Pristine,
            r_lrs: DEFAULT_R_LRS,
            r_hrs: DEFAULT_R_HRS,
        }
    }
}

impl OxRamCell {
    /// A pristine (unformed) cell with the given state resistances.
    pub fn new(r_lrs: f64, r_hrs: f64) -> Result<Self, DeviceError> {
        if !(r_lrs > 0.0 && r_hrs > r_lrs && r_hrs.is_finite()) {
            return Err(DeviceError::InvalidResistance { r_lrs, r_hrs });
        }
        Ok(Self {
            state: CellState::Pristine,
            r_lrs,
            r_hrs,
        })
    }

    pub fn with_state(mut self, state: CellState) -> Self {
        self.state = state;
        self
    }

    pub fn r_lrs(&self) -> f64 {
        self.r_lrs
    }

    pub fn r_hrs(&self) -> f64 {
        self.r_hrs
    }

    /// Resistance of the formed filament, `None` while pristine.
    pub fn resistance(&self) -> Option<f64> {
        match self.state {
            CellState::Pristine => None,
            CellState::Lrs => Some(self.r_lrs),
            CellState::Hrs => Some(self.r_hrs),
        }
    }

    pub fn is_formed(&self) -> bool {
        self.state != CellState::Pristine
    }
}

/// Series selector MOSFET, reduced to an on-resistance and an off-leakage.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorModel {
    pub r_on: f64,
    pub g_off: f64,
}

impl Default for SelectorModel {
    fn default() -> Self {
        Self {
            r_on: DEFAULT_R_ON,
            g_off: DEFAULT_G_OFF,
        }
    }
}

impl SelectorModel {
    pub fn new(r_on: f64, g_off: f64) -> Result<Self, DeviceError> {
        let sel = Self { r_on, g_off };
        sel.validate()?;
        Ok(sel)
    }

    pub fn ideal() -> Self {
        Self {
            r_on: 0.0,
            g_off: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.r_on >= 0.0
            && self.g_off >= 0.0
            && self.r_on.is_finite()
            && self.g_off.is_finite())
        {
            return Err(DeviceError::InvalidSelector {
                r_on: self.r_on,
                g_off: self.g_off,
            });
        }
        Ok(())
    }

    /// Warns when the off-leakage is not negligible next to the weakest on-path.
    pub fn check_isolation(&self, r_hrs: f64) -> bool {
        let g_weakest = 1.0 / (r_hrs + self.r_on);
        let isolated = self.g_off <= 0.01 * g_weakest;
        if !isolated {
            warn!(
                "selector off-conductance {} S is not << HRS path conductance {} S; sneak paths will dominate",
                self.g_off, g_weakest
            );
        }
        isolated
    }
}

/// A voltage pulse applied across a 1T1R cell.
///
/// `v_ts` is signed: positive is top-to-source, negative is source-to-top.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PulseSpec {
    pub v_ts: f64,
    pub v_gate: f64,
    pub width: f64,
    #[serde(default)]
    pub compliance: Option<f64>,
}

impl PulseSpec {
    /// 4 V, 10 µs with a 1 V gate, ~1 µA compliance.
    pub fn form() -> Self {
        Self {
            v_ts: 4.0,
            v_gate: 1.0,
            width: 10e-6,
            compliance: Some(1e-6),
        }
    }

    /// 2.4 V, 100 ns with a 1.5 V gate.
    pub fn set() -> Self {
        Self {
            v_ts: 2.4,
            v_gate: 1.5,
            width: 100e-9,
            compliance: None,
        }
    }

    /// V_ST = 3 V (so v_ts = -3 V), 100 ns with the gate fully on.
    pub fn reset() -> Self {
        Self {
            v_ts: -3.0,
            v_gate: VDD,
            width: 100e-9,
            compliance: None,
        }
    }

    /// Read pulse at `v_read` with a 3.8 V gate.
    pub fn read(v_read: f64) -> Self {
        Self {
            v_ts: v_read,
            v_gate: 3.8,
            width: 100e-9,
            compliance: None,
        }
    }

    /// The nominal pulse for an operation.
    pub fn for_operation(op: Operation, v_read: f64) -> Self {
        match op {
            Operation::Read => Self::read(v_read),
            Operation::Form => Self::form(),
            Operation::Set => Self::set(),
            Operation::Reset => Self::reset(),
        }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        if !(self.width > 0.0 && self.width.is_finite()) {
            return Err(DeviceError::InvalidPulse(format!(
                "width {} s must be > 0",
                self.width
            )));
        }
        if !(self.v_gate >= 0.0 && self.v_gate.is_finite()) {
            return Err(DeviceError::InvalidPulse(format!(
                "gate bias {} V must be >= 0",
                self.v_gate
            )));
        }
        if !self.v_ts.is_finite() {
            return Err(DeviceError::InvalidPulse("non-finite cell voltage".into()));
        }
        if let Some(c) = self.compliance {
            if !(c > 0.0) {
                return Err(DeviceError::InvalidPulse(format!(
                    "compliance {c} A must be > 0"
                )));
            }
        }
        Ok(())
    }

    /// Which programming window (if any) this pulse falls into.
    pub fn classify(&self) -> PulseKind {
        let (v, g) = (self.v_ts, self.v_gate);
        if (4.0..=5.0).contains(&v) && self.width >= 10e-6 && (0.8..=1.2).contains(&g) {
            PulseKind::Form
        } else if (2.4..=3.0).contains(&v) && (1.3..=1.8).contains(&g) {
            PulseKind::Set
        } else if v <= -3.0 && g >= 3.0 {
            PulseKind::Reset
        } else {
            PulseKind::Inert
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PulseKind {
    Form,
    Set,
    Reset,
    Inert,
}

/// Applies `pulse` to `cell` and returns the resulting cell.
pub fn apply_pulse(cell: OxRamCell, pulse: &PulseSpec) -> Result<OxRamCell, DeviceError> {
    pulse.validate()?;
    let next = match (pulse.classify(), cell.state) {
        (PulseKind::Form, CellState::Pristine) => CellState::Lrs,
        (PulseKind::Form, formed) => return Err(DeviceError::AlreadyFormed(formed)),
        (PulseKind::Set, CellState::Pristine) => {
            return Err(DeviceError::NotFormed(Operation::Set))
        }
        (PulseKind::Set, _) => CellState::Lrs,
        (PulseKind::Reset, CellState::Pristine) => {
            return Err(DeviceError::NotFormed(Operation::Reset))
        }
        (PulseKind::Reset, _) => CellState::Hrs,
        (PulseKind::Inert, s) => s,
    };
    Ok(cell.with_state(next))
}

/// Conductance of the memristor + selector series path.
///
/// A pristine cell has no filament, so only the selector leakage remains.
pub fn cell_path_conductance(cell: &OxRamCell, selector: &SelectorModel, gate_on: bool) -> f64 {
    match (gate_on, cell.resistance()) {
        (true, Some(r)) => 1.0 / (r + selector.r_on),
        _ => selector.g_off,
    }
}

pub fn read_current(
    cell: &OxRamCell,
    selector: &SelectorModel,
    v_read: f64,
) -> Result<f64, DeviceError> {
    if !(v_read.abs() <= MAX_READ_VOLTAGE) {
        return Err(DeviceError::ReadOutOfRange(v_read));
    }
    Ok(v_read * cell_path_conductance(cell, selector, true))
}

/// Linearized body effect of the calibration-side differential pair transistor.
///
/// The input-referred offset moves by `eta` volts per volt of differential
/// body bias `v_cal - v_calibref`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BodyBiasModel {
    pub eta: f64,
    pub v_calibref: f64,
}

impl Default for BodyBiasModel {
    fn default() -> Self {
        Self {
            eta: 0.25,
            v_calibref: 4.5,
        }
    }
}

impl BodyBiasModel {
    /// Half-width of the body-bias window over which the linear model holds.
    pub const LINEAR_RANGE: f64 = 0.5;

    pub fn new(eta: f64, v_calibref: f64) -> Result<Self, DeviceError> {
        let m = Self { eta, v_calibref };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        let a = self.eta.abs();
        if !(a > 0.0 && a < 1.0) {
            return Err(DeviceError::InvalidEta(self.eta));
        }
        Ok(())
    }

    pub fn is_linear(&self, v_cal: f64) -> bool {
        (v_cal - self.v_calibref).abs() <= Self::LINEAR_RANGE
    }

    /// Input-referred offset shift produced by driving the body to `v_cal`.
    pub fn offset_correction(&self, v_cal: f64) -> f64 {
        if !self.is_linear(v_cal) {
            warn!(
                "body bias {} V is more than {} V from Calibref {} V; linear model extrapolated",
                v_cal,
                Self::LINEAR_RANGE,
                self.v_calibref
            );
        }
        self.eta * (v_cal - self.v_calibref)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lrs() -> OxRamCell {
        OxRamCell::default().with_state(CellState::Lrs)
    }

    #[test]
    fn form_pristine_cell() {
        let c = apply_pulse(OxRamCell::default(), &PulseSpec::form()).unwrap();
        assert_eq!(c.state, CellState::Lrs);
    }

    #[test]
    fn reset_then_set() {
        let c = apply_pulse(lrs(), &PulseSpec::reset()).unwrap();
        assert_eq!(c.state, CellState::Hrs);
        let c = apply_pulse(c, &PulseSpec::set()).unwrap();
        assert_eq!(c.state, CellState::Lrs);
    }

    #[test]
    fn read_is_non_destructive() {
        let c = apply_pulse(lrs(), &PulseSpec::read(0.3)).unwrap();
        assert_eq!(c.state, CellState::Lrs);
    }

    #[test]
    fn form_rejected_once_formed() {
        assert_eq!(
            apply_pulse(lrs(), &PulseSpec::form()),
            Err(DeviceError::AlreadyFormed(CellState::Lrs))
        );
    }

    #[test]
    fn programming_pristine_rejected() {
        let p = OxRamCell::default();
        assert!(matches!(
            apply_pulse(p, &PulseSpec::set()),
            Err(DeviceError::NotFormed(Operation::Set))
        ));
        assert!(matches!(
            apply_pulse(p, &PulseSpec::reset()),
            Err(DeviceError::NotFormed(Operation::Reset))
        ));
    }

    #[test]
    fn short_form_pulse_is_inert() {
        let mut p = PulseSpec::form();
        p.width = 1e-6;
        let c = apply_pulse(OxRamCell::default(), &p).unwrap();
        assert_eq!(c.state, CellState::Pristine);
    }

    #[test]
    fn malformed_pulses() {
        let mut p = PulseSpec::read(0.3);
        p.width = 0.0;
        assert!(matches!(
            apply_pulse(lrs(), &p),
            Err(DeviceError::InvalidPulse(_))
        ));
        let mut p = PulseSpec::read(0.3);
        p.v_gate = -0.1;
        assert!(matches!(
            apply_pulse(lrs(), &p),
            Err(DeviceError::InvalidPulse(_))
        ));
    }

    #[test]
    fn invalid_resistances() {
        assert!(OxRamCell::new(0.0, 1e3).is_err());
        assert!(OxRamCell::new(2e3, 1e3).is_err());
        assert!(OxRamCell::new(1e3, 1e3).is_err());
    }

    #[test]
    fn path_conductance_examples() {
        let g = cell_path_conductance(&lrs(), &SelectorModel::ideal(), true);
        assert!((g - 7.299e-5).abs() < 1e-8);
        let hrs = OxRamCell::default().with_state(CellState::Hrs);
        let sel = SelectorModel::new(36.3e3, 0.0).unwrap();
        let g = cell_path_conductance(&hrs, &sel, true);
        assert!((g - 1.1335e-6).abs() < 1e-9);
        assert_eq!(cell_path_conductance(&hrs, &sel, false), 0.0);
        assert_eq!(
            cell_path_conductance(&OxRamCell::default(), &SelectorModel::default(), true),
            1e-9
        );
    }

    #[test]
    fn read_current_examples() {
        let i = read_current(&lrs(), &SelectorModel::ideal(), 0.3).unwrap();
        assert!((i - 21.898e-6).abs() < 1e-9);
        let hrs = OxRamCell::default().with_state(CellState::Hrs);
        let i = read_current(&hrs, &SelectorModel::ideal(), 0.3).unwrap();
        assert!((i - 354.7e-9).abs() < 0.1e-9);
        assert_eq!(
            read_current(&lrs(), &SelectorModel::ideal(), 0.0).unwrap(),
            0.0
        );
        assert_eq!(
            read_current(&lrs(), &SelectorModel::ideal(), 1.2),
            Err(DeviceError::ReadOutOfRange(1.2))
        );
    }

    #[test]
    fn offset_correction_examples() {
        let m = BodyBiasModel::default();
        assert_eq!(m.offset_correction(4.5), 0.0);
        assert!((m.offset_correction(4.515) - 3.75e-3).abs() < 1e-15);
        assert!((m.offset_correction(4.485) + 3.75e-3).abs() < 1e-15);
        assert!(!m.is_linear(5.1));
        // still computed when extrapolating
        assert!((m.offset_correction(5.1) - 0.15).abs() < 1e-12);
    }

    #[test]
    fn eta_bounds() {
        assert!(BodyBiasModel::new(0.0, 4.5).is_err());
        assert!(BodyBiasModel::new(1.0, 4.5).is_err());
        assert!(BodyBiasModel::new(-0.3, 4.5).is_ok());
    }

    #[test]
    fn leaky_selector_flagged() {
        assert!(SelectorModel::default().check_isolation(DEFAULT_R_HRS));
        assert!(!SelectorModel::new(0.0, 1e-6)
            .unwrap()
            .check_isolation(DEFAULT_R_HRS));
    }
}
