//! LLC access traces in text or binary form, plus a seeded synthetic
//! generator.
//!
//! Text traces (`.sttt`) hold one access per line:
//!
//! ```text
//! # comment
//! R 1000
//! W 0x1040 <128 hex digits of data, byte 0 first> I 250
//! ```
//!
//! Binary traces (`.sttb`) start with the magic `STTR` and a little-endian
//! `u16` version (1). Each record is an op octet (0 = read, 1 = write) then
//! an 8-octet little-endian address; writes append 64 data octets. Instruction counts are not representable in the binary format.
//!
//! Block payloads are interpreted little-endian by the compressor.

mod binary;
mod synth;
mod text;

use thiserror::Error;

use crate::bdi::{Block, BLOCK_SIZE};

pub use binary::{read_binary, write_binary, BINARY_MAGIC, BINARY_VERSION};
pub use synth::{generate, payload, PayloadClass, SynthConfig, SynthError};
pub use text::{parse_text, write_text};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Op {
    Read,
    Write(Block),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceEvent {
    pub op: Op,
    pub addr: u64,
    /// Instructions retired since the previous event, when known.
    pub insn_delta: Option<u64>,
}

impl TraceEvent {
    pub fn read(addr: u64) -> Self {
        TraceEvent {
            op: Op::Read,
            addr,
            insn_delta: None,
        }
    }

    pub fn write(addr: u64, data: Block) -> Self {
        TraceEvent {
            op: Op::Write(data),
            addr,
            insn_delta: None,
        }
    }

    pub fn with_insns(mut self, count: u64) -> Self {
        self.insn_delta = Some(count);
        self
    }

    pub fn is_write(&self) -> bool {
        matches!(self.op, Op::Write(_))
    }
}

/// A parsed trace and the number of addresses that had to be block-aligned.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Trace {
    pub events: Vec<TraceEvent>,
    pub misaligned: usize,
}

#[derive(Debug, Error)]
pub enum TraceError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("byte offset {offset}: {message}")]
    Format { offset: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub(crate) fn align(addr: u64, misaligned: &mut usize) -> u64 {
    let aligned = addr & !(BLOCK_SIZE as u64 - 1);
    if aligned != addr {
        *misaligned += 1;
        log::warn!("address {addr:#x} masked to block boundary {aligned:#x}");
    }
    aligned
}
