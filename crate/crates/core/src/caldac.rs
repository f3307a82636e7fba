//! Three-stage cascaded resistor-ladder calibration DAC.
//!
//! Each stage is a 16-tap ladder that subdivides exactly one segment of the
//! stage above it, so the 12-bit word addresses 4096 uniformly spaced taps
//! spanning `[v_ref - v_d, v_ref + v_d)`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Taps per ladder stage.
pub const TAPS_PER_STAGE: u32 = 16;
/// Total number of calibration codes.
pub const CODE_COUNT: u16 = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CalDacError {
    #[error("{field} = {value} does not fit in 4 bits")]
    FieldOutOfRange { field: &'static str, value: u32 },
    #[error("packed calibration word {0:#x} does not fit in 12 bits")]
    WordOutOfRange(u32),
    #[error("invalid ladder: v_d = {0} V must be > 0")]
    InvalidRange(f64),
}

/// The 12-bit calibration word as coarse/fine/finer 4-bit fields.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize,
)]
#[serde(try_from = "RawCalCode")]
pub struct CalCode {
    coarse: u8,
    fine: u8,
    finer: u8,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCalCode {
    coarse: u32,
    fine: u32,
    finer: u32,
}

impl TryFrom<RawCalCode> for CalCode {
    type Error = CalDacError;

    fn try_from(raw: RawCalCode) -> Result<Self, Self::Error> {
        CalCode::new(raw.coarse, raw.fine, raw.finer)
    }
}

fn nibble(field: &'static str, value: u32) -> Result<u8, CalDacError> {
    if value < TAPS_PER_STAGE {
        Ok(value as u8)
    } else {
        Err(CalDacError::FieldOutOfRange { field, value })
    }
}

impl CalCode {
    /// Segment-midpoint code, used for fields that are not being swept.
    pub const MID: u8 = 8;

    pub fn new(coarse: u32, fine: u32, finer: u32) -> Result<Self, CalDacError> {
        Ok(Self {
            coarse: nibble("coarse", coarse)?,
            fine: nibble("fine", fine)?,
            finer: nibble("finer", finer)?,
        })
    }

    pub fn midscale() -> Self {
        Self {
            coarse: Self::MID,
            fine: Self::MID,
            finer: Self::MID,
        }
    }

    /// Coarse midpoint with fine/finer at zero: the tap that sits exactly at `v_ref`.
    pub fn neutral() -> Self {
        Self {
            coarse: Self::MID,
            fine: 0,
            finer: 0,
        }
    }

    pub fn max() -> Self {
        Self {
            coarse: 15,
            fine: 15,
            finer: 15,
        }
    }

    pub fn coarse(&self) -> u8 {
        self.coarse
    }

    pub fn fine(&self) -> u8 {
        self.fine
    }

    pub fn finer(&self) -> u8 {
        self.finer
    }

    /// `coarse << 8 | fine << 4 | finer`.
    pub fn pack(&self) -> u16 {
        (u16::from(self.coarse) << 8) | (u16::from(self.fine) << 4) | u16::from(self.finer)
    }

    pub fn unpack(word: u16) -> Result<Self, CalDacError> {
        if word >= CODE_COUNT {
            return Err(CalDacError::WordOutOfRange(u32::from(word)));
        }
        Ok(Self {
            coarse: (word >> 8) as u8 & 0xF,
            fine: (word >> 4) as u8 & 0xF,
            finer: word as u8 & 0xF,
        })
    }

    /// Field value for ladder stage 1 (coarse), 2 (fine) or 3 (finer).
    pub fn field(&self, stage: Stage) -> u8 {
        match stage {
            Stage::Coarse => self.coarse,
            Stage::Fine => self.fine,
            Stage::Finer => self.finer,
        }
    }

    /// Copy of this code with the `stage` field replaced.
    pub fn with_field(mut self, stage: Stage, value: u8) -> Result<Self, CalDacError> {
        let v = nibble(stage.field_name(), u32::from(value))?;
        match stage {
            Stage::Coarse => self.coarse = v,
            Stage::Fine => self.fine = v,
            Stage::Finer => self.finer = v,
        }
        Ok(self)
    }
}

impl std::fmt::Display for CalCode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{})", self.coarse, self.fine, self.finer)
    }
}

/// One of the three cascaded ladder stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "u8", try_from = "u8")]
pub enum Stage {
    Coarse = 1,
    Fine = 2,
    Finer = 3,
}

impl Stage {
    pub const ALL: [Stage; 3] = [Stage::Coarse, Stage::Fine, Stage::Finer];

    pub fn number(self) -> u8 {
        self as u8
    }

    pub fn from_number(n: u8) -> Option<Self> {
        match n {
            1 => Some(Stage::Coarse),
            2 => Some(Stage::Fine),
            3 => Some(Stage::Finer),
            _ => None,
        }
    }

    pub fn field_name(self) -> &'static str {
        match self {
            Stage::Coarse => "coarse",
            Stage::Fine => "fine",
            Stage::Finer => "finer",
        }
    }

    /// Number of finest-stage LSBs spanned by one step of this stage.
    pub fn lsb_weight(self) -> u32 {
        match self {
            Stage::Coarse => 256,
            Stage::Fine => 16,
            Stage::Finer => 1,
        }
    }
}

impl From<Stage> for u8 {
    fn from(s: Stage) -> u8 {
        s.number()
    }
}

impl TryFrom<u8> for Stage {
    type Error = String;

    fn try_from(n: u8) -> Result<Self, Self::Error> {
        Stage::from_number(n).ok_or_else(|| format!("stage must be 1, 2 or 3, got {n}"))
    }
}

/// Reference voltage and half-range of the ladder.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LadderSpec {
    pub v_ref: f64,
    pub v_d: f64,
}

impl Default for LadderSpec {
    fn default() -> Self {
        Self {
            v_ref: 4.5,
            v_d: 15e-3,
        }
    }
}

impl LadderSpec {
    pub fn new(v_ref: f64, v_d: f64) -> Result<Self, CalDacError> {
        let s = Self { v_ref, v_d };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<(), CalDacError> {
        if !(self.v_d > 0.0 && self.v_d.is_finite() && self.v_ref.is_finite()) {
            return Err(CalDacError::InvalidRange(self.v_d));
        }
        Ok(())
    }

    /// Step of the coarse, fine and finer stages.
    pub fn step_sizes(&self) -> (f64, f64, f64) {
        let span = 2.0 * self.v_d;
        let d1 = span / 16.0;
        let d2 = d1 / 16.0;
        let d3 = d2 / 16.0;
        (d1, d2, d3)
    }

    /// Finest step (one LSB of the packed word).
    pub fn lsb(&self) -> f64 {
        self.step_sizes().2
    }

    /// Bottom tap, `v_ref - v_d`.
    pub fn v_min(&self) -> f64 {
        self.v_ref - self.v_d
    }

    /// Top tap, one finest step below `v_ref + v_d`.
    pub fn v_max(&self) -> f64 {
        self.output(CalCode::max())
    }

    /// Ideal unloaded ladder output for `code`.
    pub fn output(&self, code: CalCode) -> f64 {
        // The stage steps are exact binary subdivisions of one another, so the
        // cascade sum equals the packed word times the finest step.
        self.v_min() + self.lsb() * f64::from(code.pack())
    }

    /// Output with the three stage contributions summed explicitly.
    pub fn output_by_stage(&self, code: CalCode) -> f64 {
        let (d1, d2, d3) = self.step_sizes();
        self.v_min()
            + d1 * f64::from(code.coarse)
            + d2 * f64::from(code.fine)
            + d3 * f64::from(code.finer)
    }

    /// Voltage window covered by the segment selected by the fields above
    /// `stage` in `prefix`: `[low tap, high tap]` when sweeping `stage`.
    pub fn sweep_span(&self, stage: Stage, prefix: CalCode) -> (f64, f64) {
        let lo = prefix.with_field(stage, 0).expect("0 fits");
        let hi = prefix.with_field(stage, 15).expect("15 fits");
        (self.output(lo), self.output(hi))
    }
}

pub fn dac_output(code: CalCode, spec: &LadderSpec) -> f64 {
    spec.output(code)
}

pub fn dac_step_sizes(spec: &LadderSpec) -> (f64, f64, f64) {
    spec.step_sizes()
}

/// All 4096 codes in packed order.
pub fn all_codes() -> impl Iterator<Item = CalCode> {
    (0..CODE_COUNT).map(|w| CalCode::unpack(w).expect("in range"))
}
