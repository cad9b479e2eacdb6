//! Base-delta-immediate compression of 64-byte cache blocks.
//!
//! A block is split into `p`-byte elements. Each element is encoded either as
//! a signed `q`-byte immediate (against an implicit zero base) or as a signed
//! `q`-byte delta against one non-zero base taken from the block itself. The
//! base element's own delta is always zero and is not stored, and all-zero
//! blocks store nothing at all, so the widths here are smaller than the
//! textbook BDI layout.
//!
//! Elements are read little-endian. Per-element zero-base mask bits are kept
//! for decoding but are not part of the accounted width.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const BLOCK_SIZE: usize = 64;

/// Width of a block whose contents are stored uncompressed.
pub const UNCOMPRESSED_WIDTH: usize = BLOCK_SIZE;

/// Blocks at or below this width are narrow and eligible for duplication.
pub const NARROW_LIMIT: usize = 32;

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct Block([u8; BLOCK_SIZE]);

impl Block {
    pub const ZERO: Block = Block([0; BLOCK_SIZE]);

    pub fn new(bytes: [u8; BLOCK_SIZE]) -> Self {
        Block(bytes)
    }

    pub fn from_slice(bytes: &[u8]) -> Option<Self> {
        <[u8; BLOCK_SIZE]>::try_from(bytes).ok().map(Block)
    }

    /// Builds a block from eight 64-bit words stored little-endian.
    pub fn from_u64s(words: [u64; 8]) -> Self {
        let mut bytes = [0u8; BLOCK_SIZE];
        for (chunk, w) in bytes.chunks_exact_mut(8).zip(words) {
            chunk.copy_from_slice(&w.to_le_bytes());
        }
        Block(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; BLOCK_SIZE] {
        &self.0
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|&b| b == 0)
    }

    fn element(&self, index: usize, width: usize) -> u64 {
        let mut buf = [0u8; 8];
        buf[..width].copy_from_slice(&self.0[index * width..(index + 1) * width]);
        u64::from_le_bytes(buf)
    }

    fn set_element(&mut self, index: usize, width: usize, value: u64) {
        let bytes = value.to_le_bytes();
        self.0[index * width..(index + 1) * width].copy_from_slice(&bytes[..width]);
    }
}

impl Default for Block {
    fn default() -> Self {
        Block::ZERO
    }
}

impl fmt::Debug for Block {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Block(")?;
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CompressionState {
    Zeros,
    Repeat,
    B8D1,
    B8D2,
    B8D4,
    B4D1,
    B4D2,
    B2D1,
    Uncompressed,
}

impl CompressionState {
    pub const ALL: [CompressionState; 9] = [
        CompressionState::Zeros,
        CompressionState::Repeat,
        CompressionState::B8D1,
        CompressionState::B8D2,
        CompressionState::B8D4,
        CompressionState::B4D1,
        CompressionState::B4D2,
        CompressionState::B2D1,
        CompressionState::Uncompressed,
    ];

    /// Compressing states in the order `compress` tries them. Widths are
    /// strictly ascending along this list, so the first hit is minimal.
    pub const PRECEDENCE: [CompressionState; 8] = [
        CompressionState::Zeros,
        CompressionState::Repeat,
        CompressionState::B8D1,
        CompressionState::B4D1,
        CompressionState::B8D2,
        CompressionState::B2D1,
        CompressionState::B4D2,
        CompressionState::B8D4,
    ];

    /// `(base bytes, delta bytes)` for the base-delta states.
    pub fn base_delta(self) -> Option<(usize, usize)> {
        match self {
            CompressionState::B8D1 => Some((8, 1)),
            CompressionState::B8D2 => Some((8, 2)),
            CompressionState::B8D4 => Some((8, 4)),
            CompressionState::B4D1 => Some((4, 1)),
            CompressionState::B4D2 => Some((4, 2)),
            CompressionState::B2D1 => Some((2, 1)),
            _ => None,
        }
    }

    /// Single-copy stored width in bytes.
    pub fn width(self) -> usize {
        match self {
            CompressionState::Zeros => 0,
            CompressionState::Repeat => 8,
            CompressionState::Uncompressed => UNCOMPRESSED_WIDTH,
            s => {
                let (p, q) = s.base_delta().expect("base-delta state");
                p + (BLOCK_SIZE / p - 1) * q
            }
        }
    }

    /// Largest number of copies any encoding provides for this state.
    pub fn max_copies(self) -> usize {
        match self {
            CompressionState::Repeat | CompressionState::B8D1 | CompressionState::B4D1 => 3,
            CompressionState::B8D2 => 2,
            _ => 1,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            CompressionState::Zeros => "zeros",
            CompressionState::Repeat => "repeat",
            CompressionState::B8D1 => "b8d1",
            CompressionState::B8D2 => "b8d2",
            CompressionState::B8D4 => "b8d4",
            CompressionState::B4D1 => "b4d1",
            CompressionState::B4D2 => "b4d2",
            CompressionState::B2D1 => "b2d1",
            CompressionState::Uncompressed => "uncompressed",
        }
    }
}

impl fmt::Display for CompressionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Compressed-width ranges used for reporting and workload synthesis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum WidthClass {
    /// CW = 0.
    Zero,
    /// 0 < CW <= 32.
    Narrow,
    /// 32 < CW < 64.
    Wide,
    /// CW = 64.
    Uncompressed,
}

impl WidthClass {
    pub const ALL: [WidthClass; 4] = [
        WidthClass::Zero,
        WidthClass::Narrow,
        WidthClass::Wide,
        WidthClass::Uncompressed,
    ];

    pub fn of(cw: usize) -> Self {
        match cw {
            0 => WidthClass::Zero,
            c if c <= NARROW_LIMIT => WidthClass::Narrow,
            c if c < UNCOMPRESSED_WIDTH => WidthClass::Wide,
            _ => WidthClass::Uncompressed,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("{state} payload is missing its base")]
    MissingBase { state: CompressionState },
    #[error("{state} payload has {found} deltas, expected {expected}")]
    DeltaCount {
        state: CompressionState,
        expected: usize,
        found: usize,
    },
    #[error("{state} payload has {found} mask bits, expected {expected}")]
    MaskLength {
        state: CompressionState,
        expected: usize,
        found: usize,
    },
    #[error("{state} delta {value} does not fit in {bytes} bytes")]
    DeltaRange {
        state: CompressionState,
        value: i64,
        bytes: usize,
    },
    #[error("uncompressed payload is missing its raw bytes")]
    MissingRaw,
    #[error("{state} cannot be stored with {copies} copies")]
    UnsupportedCopies {
        state: CompressionState,
        copies: usize,
    },
}

/// A block in one compression state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CompressedBlock {
    state: CompressionState,
    base: Option<u64>,
    deltas: Vec<i64>,
    zero_mask: Vec<bool>,
    raw: Option<Block>,
}

impl CompressedBlock {
    /// Assembles a payload from parts without checking it; `decompress`
    /// reports structural problems.
    pub fn from_parts(
        state: CompressionState,
        base: Option<u64>,
        deltas: Vec<i64>,
        zero_mask: Vec<bool>,
        raw: Option<Block>,
    ) -> Self {
        CompressedBlock {
            state,
            base,
            deltas,
            zero_mask,
            raw,
        }
    }

    pub fn zeros() -> Self {
        CompressedBlock::from_parts(CompressionState::Zeros, None, Vec::new(), Vec::new(), None)
    }

    pub fn uncompressed(block: Block) -> Self {
        CompressedBlock::from_parts(
            CompressionState::Uncompressed,
            None,
            Vec::new(),
            Vec::new(),
            Some(block),
        )
    }

    pub fn state(&self) -> CompressionState {
        self.state
    }

    pub fn base(&self) -> Option<u64> {
        self.base
    }

    pub fn deltas(&self) -> &[i64] {
        &self.deltas
    }

    pub fn zero_mask(&self) -> &[bool] {
        &self.zero_mask
    }

    pub fn raw(&self) -> Option<&Block> {
        self.raw.as_ref()
    }

    /// Accounted width of a single copy.
    pub fn width(&self) -> usize {
        self.state.width()
    }
}

fn sign_extend(value: u64, bytes: usize) -> i64 {
    let shift = 64 - 8 * bytes as u32;
    ((value << shift) as i64) >> shift
}

fn fits(value: i64, bytes: usize) -> bool {
    if bytes >= 8 {
        return true;
    }
    let half = 1i64 << (8 * bytes - 1);
    value >= -half && value < half
}

fn truncate(value: u64, bytes: usize) -> u64 {
    if bytes >= 8 {
        value
    } else {
        value & ((1u64 << (8 * bytes)) - 1)
    }
}

fn try_base_delta(
    block: &Block,
    state: CompressionState,
    p: usize,
    q: usize,
) -> Option<CompressedBlock> {
    let count = BLOCK_SIZE / p;
    let mut zero_mask = vec![false; count];
    let mut base_index = None;
    for (i, bit) in zero_mask.iter_mut().enumerate() {
        if fits(sign_extend(block.element(i, p), p), q) {
            *bit = true;
        } else if base_index.is_none() {
            base_index = Some(i);
        }
    }
    // Every element fits the zero base: element 0 becomes the stored base.
    let base_index = base_index.unwrap_or_else(|| {
        zero_mask[0] = false;
        0
    });
    let base = block.element(base_index, p);

    let mut deltas = Vec::with_capacity(count - 1);
    for (i, &zero_based) in zero_mask.iter().enumerate() {
        if i == base_index {
            continue;
        }
        let element = block.element(i, p);
        let delta = if zero_based {
            sign_extend(element, p)
        } else {
            let d = sign_extend(truncate(element.wrapping_sub(base), p), p);
            if !fits(d, q) {
                return None;
            }
            d
        };
        deltas.push(delta);
    }
    Some(CompressedBlock::from_parts(
        state,
        Some(base),
        deltas,
        zero_mask,
        None,
    ))
}

/// Attempts to encode `block` in exactly `state`.
pub fn try_state(block: &Block, state: CompressionState) -> Option<CompressedBlock> {
    match state {
        CompressionState::Zeros => block.is_zero().then(CompressedBlock::zeros),
        CompressionState::Repeat => {
            let first = block.element(0, 8);
            (1..BLOCK_SIZE / 8)
                .all(|i| block.element(i, 8) == first)
                .then(|| {
                    CompressedBlock::from_parts(state, Some(first), Vec::new(), Vec::new(), None)
                })
        }
        CompressionState::Uncompressed => Some(CompressedBlock::uncompressed(*block)),
        s => {
            let (p, q) = s.base_delta().expect("base-delta state");
            try_base_delta(block, s, p, q)
        }
    }
}

/// Picks the smallest encoding that represents `block`.
pub fn compress(block: &Block) -> CompressedBlock {
    CompressionState::PRECEDENCE
        .iter()
        .find_map(|&s| try_state(block, s))
        .unwrap_or_else(|| CompressedBlock::uncompressed(*block))
}

pub fn decompress(cb: &CompressedBlock) -> Result<Block, CodecError> {
    let state = cb.state;
    match state {
        CompressionState::Zeros => Ok(Block::ZERO),
        CompressionState::Repeat => {
            let base = cb.base.ok_or(CodecError::MissingBase { state })?;
            Ok(Block::from_u64s([base; 8]))
        }
        CompressionState::Uncompressed => cb.raw.ok_or(CodecError::MissingRaw),
        _ => {
            let (p, q) = state.base_delta().expect("base-delta state");
            let count = BLOCK_SIZE / p;
            let base = cb.base.ok_or(CodecError::MissingBase { state })?;
            if cb.zero_mask.len() != count {
                return Err(CodecError::MaskLength {
                    state,
                    expected: count,
                    found: cb.zero_mask.len(),
                });
            }
            if cb.deltas.len() != count - 1 {
                return Err(CodecError::DeltaCount {
                    state,
                    expected: count - 1,
                    found: cb.deltas.len(),
                });
            }
            let base_index = cb
                .zero_mask
                .iter()
                .position(|&z| !z)
                .ok_or(CodecError::MissingBase { state })?;

            let mut out = Block::ZERO;
            out.set_element(base_index, p, base);
            let mut deltas = cb.deltas.iter();
            for (i, &zero_based) in cb.zero_mask.iter().enumerate() {
                if i == base_index {
                    continue;
                }
                let d = *deltas.next().expect("length checked");
                if !fits(d, q) {
                    return Err(CodecError::DeltaRange {
                        state,
                        value: d,
                        bytes: q,
                    });
                }
                let value = if zero_based {
                    d as u64
                } else {
                    base.wrapping_add(d as u64)
                };
                out.set_element(i, p, value);
            }
            Ok(out)
        }
    }
}

/// Stored bytes for `copies` copies of a block in `state`.
pub fn width_of(state: CompressionState, copies: usize) -> Result<usize, CodecError> {
    if copies == 0 || copies > state.max_copies() {
        return Err(CodecError::UnsupportedCopies { state, copies });
    }
    Ok(state.width() * copies)
}
