//! Read-disturbance mitigation policies.
//!
//! Every line carries a 4-bit encoding kept in an RDE-free sidecar. The
//! encoding names the compression state and how many copies of the
//! compressed payload sit in the data array, and it is consulted before each
//! read to decide how many bytes to sense and whether a restore must follow.
//!
//! Disturbance is modelled at copy granularity: the copy that was sensed is
//! untrusted from then on, until a restore or a write rewrites the line.

use std::fmt;
use std::str::FromStr;
use std::sync::LazyLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bdi::{self, Block, CompressedBlock, CompressionState, BLOCK_SIZE, NARROW_LIMIT};
use crate::cache::LineState;

/// Upper bound on stored copies across all policies.
pub const MAX_COPIES: usize = 3;

/// Narrow blocks strictly below this width get a third copy under SHIELD3.
pub const TRIPLE_LIMIT: usize = 22;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Policy {
    Ideal,
    Hcrr,
    Lcll,
    Shield,
    Shield1,
    Shield3,
}

impl Policy {
    pub const ALL: [Policy; 6] = [
        Policy::Ideal,
        Policy::Hcrr,
        Policy::Lcll,
        Policy::Shield,
        Policy::Shield1,
        Policy::Shield3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Ideal => "ideal",
            Policy::Hcrr => "hcrr",
            Policy::Lcll => "lcll",
            Policy::Shield => "shield",
            Policy::Shield1 => "shield1",
            Policy::Shield3 => "shield3",
        }
    }

    /// Policies that store compressed data.
    pub fn compresses(self) -> bool {
        matches!(self, Policy::Shield | Policy::Shield1 | Policy::Shield3)
    }

    /// Policies whose reads disturb the sensed copy.
    pub fn disturbs(self) -> bool {
        matches!(self, Policy::Hcrr) || self.compresses()
    }

    pub fn table(self) -> &'static EncodingTable {
        match self {
            Policy::Shield3 => &EXTENDED_TABLE,
            _ => &BASE_TABLE,
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("unknown policy `{0}` (expected one of ideal, hcrr, lcll, shield, shield1, shield3)")]
pub struct UnknownPolicy(pub String);

impl FromStr for Policy {
    type Err = UnknownPolicy;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Policy::ALL
            .into_iter()
            .find(|p| p.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| UnknownPolicy(s.to_string()))
    }
}

/// A 4-bit line encoding.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Encoding(u8);

impl Encoding {
    pub const ZEROS: Encoding = Encoding(0b0000);
    pub const UNCOMPRESSED: Encoding = Encoding(0b1111);

    pub fn new(bits: u8) -> Option<Self> {
        (bits < 16).then_some(Encoding(bits))
    }

    pub fn bits(self) -> u8 {
        self.0
    }
}

impl fmt::Debug for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04b}", self.0)
    }
}

impl fmt::Display for Encoding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04b}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EncodingEntry {
    pub code: Encoding,
    pub state: CompressionState,
    pub copies: usize,
    pub stored_size: usize,
    /// Encoding after a read; `None` means unchanged.
    pub read_transition: Option<Encoding>,
    pub restore_on_read: bool,
}

impl EncodingEntry {
    fn new(code: u8, state: CompressionState, copies: usize, transition: Option<u8>) -> Self {
        EncodingEntry {
            code: Encoding(code),
            state,
            copies,
            stored_size: state.width() * copies,
            read_transition: transition.map(Encoding),
            restore_on_read: copies == 1 && state != CompressionState::Zeros,
        }
    }

    /// Encoding the line holds after one read.
    pub fn after_read(&self) -> Encoding {
        self.read_transition.unwrap_or(self.code)
    }
}

#[derive(Debug, Clone)]
pub struct EncodingTable {
    entries: [Option<EncodingEntry>; 16],
}

const BASE_ROWS: [(u8, CompressionState, usize, Option<u8>); 13] = [
    (0b0000, CompressionState::Zeros, 1, None),
    (0b0001, CompressionState::Repeat, 1, None),
    (0b0011, CompressionState::Repeat, 2, Some(0b0001)),
    (0b0010, CompressionState::B8D1, 1, None),
    (0b0110, CompressionState::B8D1, 2, Some(0b0010)),
    (0b0101, CompressionState::B8D2, 1, None),
    (0b0111, CompressionState::B8D2, 2, Some(0b0101)),
    (0b1100, CompressionState::B4D1, 1, None),
    (0b1101, CompressionState::B4D1, 2, Some(0b1100)),
    (0b0100, CompressionState::B4D2, 1, None),
    (0b1110, CompressionState::B2D1, 1, None),
    (0b1000, CompressionState::B8D4, 1, None),
    (0b1111, CompressionState::Uncompressed, 1, None),
];

// The three codes left free by the base table, used for triple copies.
const TRIPLE_ROWS: [(u8, CompressionState, usize, Option<u8>); 3] = [
    (0b1001, CompressionState::Repeat, 3, Some(0b0011)),
    (0b1010, CompressionState::B8D1, 3, Some(0b0110)),
    (0b1011, CompressionState::B4D1, 3, Some(0b1101)),
];

static BASE_TABLE: LazyLock<EncodingTable> = LazyLock::new(|| EncodingTable::build(false));
static EXTENDED_TABLE: LazyLock<EncodingTable> = LazyLock::new(|| EncodingTable::build(true));

impl EncodingTable {
    fn build(triple: bool) -> Self {
        let mut entries = [None; 16];
        let extra: &[_] = if triple { &TRIPLE_ROWS } else { &[] };
        for &(code, state, copies, transition) in BASE_ROWS.iter().chain(extra) {
            entries[code as usize] = Some(EncodingEntry::new(code, state, copies, transition));
        }
        EncodingTable { entries }
    }

    /// The 13-entry table.
    pub fn base() -> &'static EncodingTable {
        &BASE_TABLE
    }

    /// The base table plus the triple-copy codes.
    pub fn extended() -> &'static EncodingTable {
        &EXTENDED_TABLE
    }

    pub fn entry(&self, code: Encoding) -> Option<&EncodingEntry> {
        self.entries[code.0 as usize].as_ref()
    }

    pub fn code_for(&self, state: CompressionState, copies: usize) -> Option<Encoding> {
        self.entries()
            .find(|e| e.state == state && e.copies == copies)
            .map(|e| e.code)
    }

    pub fn entries(&self) -> impl Iterator<Item = &EncodingEntry> {
        self.entries.iter().flatten()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WritePlan {
    pub encoding: Encoding,
    pub copies: usize,
    pub bytes_written: usize,
    pub compression_events: u32,
    /// Single-copy compressed width, or 64 for policies that do not compress.
    pub cw: usize,
    pub payload: CompressedBlock,
}

/// Why a read did not need a restore.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestoreAvoided {
    /// Zero data: nothing was sensed.
    ZeroData,
    /// A spare copy was sensed.
    SpareCopy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ReadPlan {
    pub bytes_read: usize,
    pub restore_issued: bool,
    pub restore_bytes: usize,
    pub new_encoding: Encoding,
    pub decompression_events: u32,
    pub disturb_copy: Option<usize>,
    pub avoided: Option<RestoreAvoided>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PolicyError {
    #[error("every stored copy of the line is disturbed")]
    AllCopiesDisturbed,
    #[error("line holds encoding {0} which the policy's table does not define")]
    UnknownEncoding(Encoding),
    #[error("read planned on an invalid line")]
    InvalidLine,
}

pub fn plan_write(policy: Policy, data: &Block) -> WritePlan {
    if !policy.compresses() {
        return WritePlan {
            encoding: Encoding::UNCOMPRESSED,
            copies: 1,
            bytes_written: BLOCK_SIZE,
            compression_events: 0,
            cw: BLOCK_SIZE,
            payload: CompressedBlock::uncompressed(*data),
        };
    }

    let payload = bdi::compress(data);
    let cw = payload.width();
    let copies = match policy {
        _ if cw == 0 || cw > NARROW_LIMIT => 1,
        Policy::Shield1 => 1,
        Policy::Shield3 if cw < TRIPLE_LIMIT => 3,
        _ => 2,
    };
    let encoding = policy
        .table()
        .code_for(payload.state(), copies)
        .expect("every compressed state has an encoding for its copy count");
    WritePlan {
        encoding,
        copies,
        bytes_written: cw * copies,
        compression_events: 1,
        cw,
        payload,
    }
}

pub fn plan_read(policy: Policy, line: &LineState) -> Result<ReadPlan, PolicyError> {
    if !line.is_valid() {
        return Err(PolicyError::InvalidLine);
    }
    let encoding = line.encoding();
    match policy {
        Policy::Ideal | Policy::Lcll => Ok(ReadPlan {
            bytes_read: BLOCK_SIZE,
            restore_issued: false,
            restore_bytes: 0,
            new_encoding: encoding,
            decompression_events: 0,
            disturb_copy: None,
            avoided: None,
        }),
        Policy::Hcrr => {
            let copy = line
                .first_live_copy()
                .ok_or(PolicyError::AllCopiesDisturbed)?;
            Ok(ReadPlan {
                bytes_read: BLOCK_SIZE,
                restore_issued: true,
                restore_bytes: BLOCK_SIZE,
                new_encoding: encoding,
                decompression_events: 0,
                disturb_copy: Some(copy),
                avoided: None,
            })
        }
        Policy::Shield | Policy::Shield1 | Policy::Shield3 => {
            let entry = policy
                .table()
                .entry(encoding)
                .ok_or(PolicyError::UnknownEncoding(encoding))?;
            let decompression_events = u32::from(entry.state != CompressionState::Uncompressed);
            if entry.state == CompressionState::Zeros {
                return Ok(ReadPlan {
                    bytes_read: 0,
                    restore_issued: false,
                    restore_bytes: 0,
                    new_encoding: encoding,
                    decompression_events,
                    disturb_copy: None,
                    avoided: Some(RestoreAvoided::ZeroData),
                });
            }
            let copy = line
                .first_live_copy()
                .ok_or(PolicyError::AllCopiesDisturbed)?;
            let width = entry.state.width();
            Ok(ReadPlan {
                bytes_read: width,
                restore_issued: entry.restore_on_read,
                restore_bytes: if entry.restore_on_read { width } else { 0 },
                new_encoding: entry.after_read(),
                decompression_events,
                disturb_copy: Some(copy),
                avoided: (!entry.restore_on_read).then_some(RestoreAvoided::SpareCopy),
            })
        }
    }
}

/// Applies a read to `line`. The sensed copy is marked disturbed and the
/// encoding moves on; a restore leaves one clean copy.
pub fn apply_disturbance(line: &mut LineState, plan: &ReadPlan) {
    if let Some(copy) = plan.disturb_copy {
        line.mark_disturbed(copy);
    }
    line.set_encoding(plan.new_encoding);
    if plan.restore_issued {
        line.rewrite_copies(1);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cache::LineState;

    fn line_with(policy: Policy, data: &Block) -> LineState {
        let plan = plan_write(policy, data);
        let mut line = LineState::default();
        line.fill(0, &plan, true);
        line
    }

    fn b8d1_block() -> Block {
        Block::from_u64s([4096, 4097, 4100, 4095, 4200, 4096, 4111, 4099])
    }

    #[test]
    fn policy_selector_parses() {
        for p in Policy::ALL {
            assert_eq!(p.name().parse::<Policy>(), Ok(p));
        }
        assert_eq!("SHIELD3".parse::<Policy>(), Ok(Policy::Shield3));
        assert!("shield2".parse::<Policy>().is_err());
    }

    #[test]
    fn base_table_has_thirteen_codes() {
        assert_eq!(EncodingTable::base().entries().count(), 13);
        assert_eq!(EncodingTable::extended().entries().count(), 16);
        for code in [0b1001, 0b1010, 0b1011] {
            assert!(EncodingTable::base().entry(Encoding(code)).is_none());
        }
    }

    #[test]
    fn write_plans() {
        let z = plan_write(Policy::Shield, &Block::ZERO);
        assert_eq!(
            (z.encoding, z.copies, z.bytes_written),
            (Encoding(0b0000), 1, 0)
        );

        let d = plan_write(Policy::Shield, &b8d1_block());
        assert_eq!(
            (d.encoding, d.copies, d.bytes_written),
            (Encoding(0b0110), 2, 30)
        );

        let s = plan_write(Policy::Shield1, &b8d1_block());
        assert_eq!(
            (s.encoding, s.copies, s.bytes_written),
            (Encoding(0b0010), 1, 15)
        );

        let r = plan_write(Policy::Shield3, &Block::from_u64s([0xabcdef; 8]));
        assert_eq!(
            (r.encoding, r.copies, r.bytes_written),
            (Encoding(0b1001), 3, 24)
        );

        let h = plan_write(Policy::Hcrr, &Block::ZERO);
        assert_eq!(
            (h.encoding, h.copies, h.bytes_written, h.compression_events),
            (Encoding::UNCOMPRESSED, 1, 64, 0)
        );
    }

    #[test]
    fn shield3_keeps_two_copies_at_22_bytes() {
        let words = [
            1 << 40,
            (1 << 40) + 1000,
            (1 << 40) - 1000,
            1 << 40,
            1 << 40,
            1 << 40,
            1 << 40,
            1 << 40,
        ];
        let p = plan_write(Policy::Shield3, &Block::from_u64s(words));
        assert_eq!(p.payload.state(), CompressionState::B8D2);
        assert_eq!(
            (p.encoding, p.copies, p.bytes_written),
            (Encoding(0b0111), 2, 44)
        );
    }

    #[test]
    fn dual_copy_read_transitions_without_restore() {
        let mut line = line_with(Policy::Shield, &Block::from_u64s([0x77; 8]));
        assert_eq!(line.encoding(), Encoding(0b0011));
        let plan = plan_read(Policy::Shield, &line).unwrap();
        assert_eq!(plan.bytes_read, 8);
        assert!(!plan.restore_issued);
        assert_eq!(plan.new_encoding, Encoding(0b0001));
        assert_eq!(plan.avoided, Some(RestoreAvoided::SpareCopy));
        apply_disturbance(&mut line, &plan);
        assert_eq!(line.copies_live(), 1);

        // Second read senses the spare copy and restores.
        let plan = plan_read(Policy::Shield, &line).unwrap();
        assert_eq!(plan.disturb_copy, Some(1));
        assert!(plan.restore_issued);
        assert_eq!(plan.restore_bytes, 8);
        apply_disturbance(&mut line, &plan);
        assert_eq!(line.copies_live(), 1);
        assert!(!line.is_disturbed(0));
    }

    #[test]
    fn uncompressed_read_restores_and_keeps_encoding() {
        let mut bytes = [0u8; 64];
        for (i, b) in bytes.iter_mut().enumerate() {
            *b = i as u8;
        }
        let line = line_with(Policy::Shield, &Block::new(bytes));
        let plan = plan_read(Policy::Shield, &line).unwrap();
        assert_eq!(
            (
                plan.bytes_read,
                plan.restore_issued,
                plan.restore_bytes,
                plan.new_encoding
            ),
            (64, true, 64, Encoding(0b1111))
        );
        assert_eq!(plan.decompression_events, 0);
    }

    #[test]
    fn zero_read_senses_nothing() {
        let mut line = line_with(Policy::Shield, &Block::ZERO);
        let before = line.clone();
        let plan = plan_read(Policy::Shield, &line).unwrap();
        assert_eq!(plan.bytes_read, 0);
        assert_eq!(plan.disturb_copy, None);
        assert_eq!(plan.avoided, Some(RestoreAvoided::ZeroData));
        apply_disturbance(&mut line, &plan);
        assert_eq!(line, before);
    }

    #[test]
    fn baseline_reads() {
        let line = line_with(Policy::Hcrr, &b8d1_block());
        let plan = plan_read(Policy::Hcrr, &line).unwrap();
        assert_eq!(
            (plan.bytes_read, plan.restore_issued, plan.restore_bytes),
            (64, true, 64)
        );

        for p in [Policy::Ideal, Policy::Lcll] {
            let line = line_with(p, &b8d1_block());
            let plan = plan_read(p, &line).unwrap();
            assert_eq!(
                (plan.bytes_read, plan.restore_issued, plan.disturb_copy),
                (64, false, None)
            );
        }
    }

    #[test]
    fn exhausted_copies_are_a_fault() {
        let mut line = line_with(Policy::Shield1, &b8d1_block());
        let mut plan = plan_read(Policy::Shield1, &line).unwrap();
        plan.restore_issued = false;
        apply_disturbance(&mut line, &plan);
        assert_eq!(
            plan_read(Policy::Shield1, &line),
            Err(PolicyError::AllCopiesDisturbed)
        );
    }

    #[test]
    fn triple_copies_step_down() {
        let mut line = line_with(Policy::Shield3, &b8d1_block());
        let mut seen = vec![line.encoding()];
        let mut restores = 0;
        for _ in 0..4 {
            let plan = plan_read(Policy::Shield3, &line).unwrap();
            restores += usize::from(plan.restore_issued);
            apply_disturbance(&mut line, &plan);
            seen.push(line.encoding());
        }
        let codes: Vec<u8> = seen.iter().map(|e| e.bits()).collect();
        assert_eq!(codes, vec![0b1010, 0b0110, 0b0010, 0b0010, 0b0010]);
        assert_eq!(restores, 2);
    }
}
