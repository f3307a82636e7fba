//! Digital control interface: per-row 26-bit words, the 26×N-bit serial
//! shift register with its parallel latch, and the (A, B, C) operation select.
//!
//! Serial order is row N first down to row 1. Each row sends its 14-bit I-pot
//! word MSB-first followed by the packed 12-bit calibration word MSB-first.
//! Bitstrings are `'0'`/`'1'` characters with the first shifted bit leftmost.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::caldac::CalCode;
use crate::devices::Operation;

pub const IPOT_BITS: usize = 14;
pub const CAL_BITS: usize = 12;
pub const ROW_BITS: usize = IPOT_BITS + CAL_BITS;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProtocolError {
    #[error("I-pot code {0} does not fit in 14 bits")]
    IpotOutOfRange(u32),
    #[error("bitstring has {got} bits, expected {expected} for {rows} row(s)")]
    Length {
        got: usize,
        expected: usize,
        rows: usize,
    },
    #[error("invalid character {ch:?} at position {pos} in bitstring")]
    NonBinary { ch: char, pos: usize },
    #[error("a control frame needs at least one row")]
    EmptyFrame,
    #[error("invalid operation select (A,B,C) = ({a},{b},{c})")]
    InvalidOpSelect { a: u8, b: u8, c: u8 },
    #[error("frame has {got} rows but the array has {expected}")]
    RowMismatch { got: usize, expected: usize },
    #[error("invalid calibration field: {0}")]
    Cal(String),
}

/// 14-bit I-pot bias word.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(try_from = "u32", into = "u32")]
pub struct IpotCode(u16);

impl IpotCode {
    pub const MAX: u16 = (1 << IPOT_BITS) - 1;

    pub fn new(code: u32) -> Result<Self, ProtocolError> {
        if code > u32::from(Self::MAX) {
            return Err(ProtocolError::IpotOutOfRange(code));
        }
        Ok(Self(code as u16))
    }

    pub fn value(self) -> u16 {
        self.0
    }
}

impl TryFrom<u32> for IpotCode {
    type Error = ProtocolError;

    fn try_from(v: u32) -> Result<Self, Self::Error> {
        Self::new(v)
    }
}

impl From<IpotCode> for u32 {
    fn from(c: IpotCode) -> u32 {
        u32::from(c.0)
    }
}

/// Control bits for one row driver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RowControlWord {
    pub ipot: IpotCode,
    pub cal: CalCode,
}

impl RowControlWord {
    /// `ipot << 12 | cal`.
    pub fn to_word(&self) -> u32 {
        (u32::from(self.ipot.value()) << CAL_BITS) | u32::from(self.cal.pack())
    }

    pub fn from_word(word: u32) -> Result<Self, ProtocolError> {
        let ipot = IpotCode::new(word >> CAL_BITS)?;
        let cal = CalCode::unpack((word & 0xFFF) as u16)
            .map_err(|e| ProtocolError::Cal(e.to_string()))?;
        Ok(Self { ipot, cal })
    }
}

/// Control words for all N rows; `rows[0]` is row 1.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, try_from = "RawFrame")]
pub struct ControlFrame {
    pub rows: Vec<RowControlWord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawFrame {
    rows: Vec<RowControlWord>,
}

impl TryFrom<RawFrame> for ControlFrame {
    type Error = ProtocolError;

    fn try_from(raw: RawFrame) -> Result<Self, Self::Error> {
        ControlFrame::new(raw.rows)
    }
}

impl ControlFrame {
    pub fn new(rows: Vec<RowControlWord>) -> Result<Self, ProtocolError> {
        if rows.is_empty() {
            return Err(ProtocolError::EmptyFrame);
        }
        Ok(Self { rows })
    }

    pub fn zeroed(n_rows: usize) -> Self {
        Self {
            rows: vec![RowControlWord::default(); n_rows],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn bit_len(&self) -> usize {
        ROW_BITS * self.rows.len()
    }
}

/// Serial bit sequence for `frame`, first-shifted bit first.
pub fn encode_bits(frame: &ControlFrame) -> Vec<bool> {
    let mut bits = Vec::with_capacity(frame.bit_len());
    for row in frame.rows.iter().rev() {
        let word = row.to_word();
        bits.extend((0..ROW_BITS).rev().map(|i| (word >> i) & 1 == 1));
    }
    bits
}

pub fn encode_frame(frame: &ControlFrame) -> String {
    encode_bits(frame)
        .into_iter()
        .map(|b| if b { '1' } else { '0' })
        .collect()
}

/// Parses a bitstring, ignoring whitespace.
pub fn parse_bits(text: &str) -> Result<Vec<bool>, ProtocolError> {
    text.chars()
        .filter(|c| !c.is_whitespace())
        .enumerate()
        .map(|(pos, ch)| match ch {
            '0' => Ok(false),
            '1' => Ok(true),
            ch => Err(ProtocolError::NonBinary { ch, pos }),
        })
        .collect()
}

pub fn decode_bits(bits: &[bool], n_rows: usize) -> Result<ControlFrame, ProtocolError> {
    if n_rows == 0 {
        return Err(ProtocolError::EmptyFrame);
    }
    let expected = ROW_BITS * n_rows;
    if bits.len() != expected {
        return Err(ProtocolError::Length {
            got: bits.len(),
            expected,
            rows: n_rows,
        });
    }
    let mut rows = bits
        .chunks_exact(ROW_BITS)
        .map(|chunk| {
            let word = chunk.iter().fold(0u32, |acc, &b| (acc << 1) | u32::from(b));
            RowControlWord::from_word(word)
        })
        .collect::<Result<Vec<_>, _>>()?;
    // serial order is row N first
    rows.reverse();
    ControlFrame::new(rows)
}

pub fn decode_frame(text: &str, n_rows: usize) -> Result<ControlFrame, ProtocolError> {
    decode_bits(&parse_bits(text)?, n_rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockEdge {
    Rising,
    Falling,
}

/// Chain of 26×N positive-edge D flip-flops with a parallel output latch.
///
/// Flip-flop 0 is the serial input. After a full load, flip-flop `j` holds bit
/// `j % 26` (LSB = 0) of row `j / 26 + 1`, which is what the latch exposes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ShiftRegister {
    flops: Vec<bool>,
    outputs: ControlFrame,
}

impl ShiftRegister {
    pub fn new(n_rows: usize) -> Result<Self, ProtocolError> {
        if n_rows == 0 {
            return Err(ProtocolError::EmptyFrame);
        }
        Ok(Self {
            flops: vec![false; ROW_BITS * n_rows],
            outputs: ControlFrame::zeroed(n_rows),
        })
    }

    pub fn n_rows(&self) -> usize {
        self.outputs.n_rows()
    }

    pub fn contents(&self) -> &[bool] {
        &self.flops
    }

    /// Words currently driven onto the row drivers.
    pub fn outputs(&self) -> &ControlFrame {
        &self.outputs
    }

    pub fn step(&mut self, bit_in: bool, edge: ClockEdge) {
        if edge == ClockEdge::Rising {
            self.flops.rotate_right(1);
            self.flops[0] = bit_in;
        }
    }

    /// Copies the register contents to the parallel outputs in one go.
    pub fn latch(&mut self) {
        for (row, chunk) in self
            .outputs
            .rows
            .iter_mut()
            .zip(self.flops.chunks_exact(ROW_BITS))
        {
            let word = chunk
                .iter()
                .enumerate()
                .fold(0u32, |acc, (bit, &b)| acc | (u32::from(b) << bit));
            *row = RowControlWord::from_word(word).expect("26-bit word always decodes");
        }
    }
}

pub fn shift_register_step(mut reg: ShiftRegister, bit_in: bool, edge: ClockEdge) -> ShiftRegister {
    reg.step(bit_in, edge);
    reg
}

/// Timing record of a serial load. Only timestamps depend on the clock.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LoadTrace {
    pub clock_hz: f64,
    pub bits: usize,
    pub duration_s: f64,
}

/// Clocks `bits` into `reg` with one full clock period per bit.
pub fn serial_load(reg: &mut ShiftRegister, bits: &[bool], clock_hz: f64) -> LoadTrace {
    for &b in bits {
        reg.step(b, ClockEdge::Rising);
        reg.step(b, ClockEdge::Falling);
    }
    LoadTrace {
        clock_hz,
        bits: bits.len(),
        duration_s: bits.len() as f64 / clock_hz,
    }
}

/// The (A, B, C) operation select lines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct OpSelect {
    pub a: bool,
    pub b: bool,
    pub c: bool,
}

impl OpSelect {
    pub fn new(a: bool, b: bool, c: bool) -> Self {
        Self { a, b, c }
    }

    pub fn encode(op: Operation) -> Self {
        match op {
            Operation::Read => Self::new(false, false, false),
            Operation::Form => Self::new(true, false, false),
            Operation::Set => Self::new(false, true, false),
            Operation::Reset => Self::new(false, false, true),
        }
    }
}

impl std::str::FromStr for OpSelect {
    type Err = ProtocolError;

    /// Accepts three `0`/`1` characters, e.g. `"000"`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bits = parse_bits(s)?;
        match bits[..] {
            [a, b, c] => Ok(Self::new(a, b, c)),
            _ => Err(ProtocolError::Length {
                got: bits.len(),
                expected: 3,
                rows: 0,
            }),
        }
    }
}

/// Maps the select lines to an operation. READ is all-off; the others are one-hot.
pub fn decode_opselect(op: OpSelect) -> Result<Operation, ProtocolError> {
    match (op.a, op.b, op.c) {
        (false, false, false) => Ok(Operation::Read),
        (true, false, false) => Ok(Operation::Form),
        (false, true, false) => Ok(Operation::Set),
        (false, false, true) => Ok(Operation::Reset),
        (a, b, c) => Err(ProtocolError::InvalidOpSelect {
            a: a.into(),
            b: b.into(),
            c: c.into(),
        }),
    }
}
