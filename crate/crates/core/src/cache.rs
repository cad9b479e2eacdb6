//! Set-associative, write-back, LRU cache with a per-line encoding sidecar,
//! plus the backing store that supplies fill data.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bdi::{self, Block, CodecError, CompressedBlock, BLOCK_SIZE};
use crate::policy::{Encoding, WritePlan, MAX_COPIES};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CacheError {
    #[error("address {0:#x} is not aligned to the {BLOCK_SIZE}-byte block size")]
    Unaligned(u64),
    #[error("invalid geometry: {0}")]
    Geometry(String),
    #[error("line at set {set} way {way} (address {addr:#x}) has no undisturbed copy")]
    IntegrityFault { set: usize, way: usize, addr: u64 },
    #[error("line at set {set} way {way} holds an undecodable payload: {source}")]
    Decode {
        set: usize,
        way: usize,
        source: CodecError,
    },
}

/// The four capacities with published device parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CacheSize {
    #[serde(rename = "2m")]
    Mb2,
    #[serde(rename = "4m")]
    Mb4,
    #[serde(rename = "8m")]
    Mb8,
    #[serde(rename = "16m")]
    Mb16,
}

impl CacheSize {
    pub const ALL: [CacheSize; 4] = [
        CacheSize::Mb2,
        CacheSize::Mb4,
        CacheSize::Mb8,
        CacheSize::Mb16,
    ];

    pub fn bytes(self) -> u64 {
        let mb = match self {
            CacheSize::Mb2 => 2,
            CacheSize::Mb4 => 4,
            CacheSize::Mb8 => 8,
            CacheSize::Mb16 => 16,
        };
        mb << 20
    }
}

impl fmt::Display for CacheSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}m", self.bytes() >> 20)
    }
}

impl FromStr for CacheSize {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let lower = s.to_ascii_lowercase();
        let digits = lower.trim_end_matches("mb").trim_end_matches('m');
        match digits {
            "2" => Ok(CacheSize::Mb2),
            "4" => Ok(CacheSize::Mb4),
            "8" => Ok(CacheSize::Mb8),
            "16" => Ok(CacheSize::Mb16),
            _ => Err(format!(
                "unsupported cache size `{s}` (expected 2m, 4m, 8m or 16m)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CacheGeometry {
    capacity: u64,
    associativity: usize,
    set_count: usize,
}

impl CacheGeometry {
    pub fn new(capacity: u64, associativity: usize) -> Result<Self, CacheError> {
        if associativity == 0 {
            return Err(CacheError::Geometry(
                "associativity must be at least 1".into(),
            ));
        }
        let set_bytes = associativity as u64 * BLOCK_SIZE as u64;
        if capacity == 0 || !capacity.is_multiple_of(set_bytes) {
            return Err(CacheError::Geometry(format!(
                "capacity {capacity} is not a multiple of {associativity} ways x {BLOCK_SIZE} bytes"
            )));
        }
        let set_count = (capacity / set_bytes) as usize;
        if !set_count.is_power_of_two() {
            return Err(CacheError::Geometry(format!(
                "set count {set_count} is not a power of two"
            )));
        }
        Ok(CacheGeometry {
            capacity,
            associativity,
            set_count,
        })
    }

    pub fn preset(size: CacheSize, associativity: usize) -> Result<Self, CacheError> {
        CacheGeometry::new(size.bytes(), associativity)
    }

    pub fn capacity(&self) -> u64 {
        self.capacity
    }

    pub fn associativity(&self) -> usize {
        self.associativity
    }

    pub fn block_size(&self) -> usize {
        BLOCK_SIZE
    }

    pub fn set_count(&self) -> usize {
        self.set_count
    }

    pub fn set_index(&self, addr: u64) -> usize {
        ((addr / BLOCK_SIZE as u64) as usize) & (self.set_count - 1)
    }

    pub fn tag(&self, addr: u64) -> u64 {
        addr / BLOCK_SIZE as u64 / self.set_count as u64
    }

    pub fn address(&self, tag: u64, set: usize) -> u64 {
        (tag * self.set_count as u64 + set as u64) * BLOCK_SIZE as u64
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LineState {
    tag: u64,
    valid: bool,
    dirty: bool,
    encoding: Encoding,
    /// Physical copies currently held in the data array.
    slots: usize,
    disturbed: [bool; MAX_COPIES],
    lru_rank: usize,
    payload: Option<CompressedBlock>,
}

impl LineState {
    pub fn is_valid(&self) -> bool {
        self.valid
    }

    pub fn is_dirty(&self) -> bool {
        self.dirty
    }

    pub fn tag(&self) -> u64 {
        self.tag
    }

    pub fn encoding(&self) -> Encoding {
        self.encoding
    }

    pub fn lru_rank(&self) -> usize {
        self.lru_rank
    }

    pub fn payload(&self) -> Option<&CompressedBlock> {
        self.payload.as_ref()
    }

    pub fn slots(&self) -> usize {
        self.slots
    }

    pub fn is_disturbed(&self, copy: usize) -> bool {
        self.disturbed[copy]
    }

    pub fn copies_live(&self) -> usize {
        self.disturbed[..self.slots].iter().filter(|d| !**d).count()
    }

    pub fn first_live_copy(&self) -> Option<usize> {
        self.disturbed[..self.slots].iter().position(|d| !d)
    }

    /// Writes a fresh payload; all copies start undisturbed.
    pub fn fill(&mut self, tag: u64, plan: &WritePlan, dirty: bool) {
        self.tag = tag;
        self.valid = true;
        self.dirty = dirty;
        self.encoding = plan.encoding;
        self.payload = Some(plan.payload.clone());
        self.rewrite_copies(plan.copies);
    }

    pub(crate) fn set_encoding(&mut self, encoding: Encoding) {
        self.encoding = encoding;
    }

    pub(crate) fn mark_disturbed(&mut self, copy: usize) {
        self.disturbed[copy] = true;
    }

    pub(crate) fn rewrite_copies(&mut self, copies: usize) {
        self.slots = copies;
        self.disturbed = [false; MAX_COPIES];
    }

    fn invalidate(&mut self) {
        self.valid = false;
        self.dirty = false;
        self.payload = None;
        self.slots = 0;
        self.disturbed = [false; MAX_COPIES];
        self.encoding = Encoding::ZEROS;
    }
}

#[derive(Debug, Clone)]
pub struct Cache {
    geometry: CacheGeometry,
    lines: Vec<LineState>,
}

impl Cache {
    pub fn new(geometry: CacheGeometry) -> Self {
        let ways = geometry.associativity();
        let lines = (0..geometry.set_count() * ways)
            .map(|i| LineState {
                lru_rank: i % ways,
                ..LineState::default()
            })
            .collect();
        Cache { geometry, lines }
    }

    pub fn geometry(&self) -> &CacheGeometry {
        &self.geometry
    }

    fn idx(&self, set: usize, way: usize) -> usize {
        set * self.geometry.associativity() + way
    }

    fn set_lines(&self, set: usize) -> &[LineState] {
        let ways = self.geometry.associativity();
        &self.lines[set * ways..(set + 1) * ways]
    }

    pub fn line(&self, set: usize, way: usize) -> &LineState {
        &self.lines[self.idx(set, way)]
    }

    pub fn line_mut(&mut self, set: usize, way: usize) -> &mut LineState {
        let i = self.idx(set, way);
        &mut self.lines[i]
    }

    pub fn address_of(&self, set: usize, way: usize) -> u64 {
        self.geometry.address(self.line(set, way).tag, set)
    }

    /// Finds the way holding `addr` without updating recency.
    pub fn lookup(&self, addr: u64) -> Result<Option<(usize, usize)>, CacheError> {
        if !addr.is_multiple_of(BLOCK_SIZE as u64) {
            return Err(CacheError::Unaligned(addr));
        }
        let set = self.geometry.set_index(addr);
        let tag = self.geometry.tag(addr);
        Ok(self
            .set_lines(set)
            .iter()
            .position(|l| l.valid && l.tag == tag)
            .map(|way| (set, way)))
    }

    /// Makes `way` the most recently used line of its set.
    pub fn touch(&mut self, set: usize, way: usize) {
        let ways = self.geometry.associativity();
        let old = self.line(set, way).lru_rank;
        for line in &mut self.lines[set * ways..(set + 1) * ways] {
            if line.lru_rank < old {
                line.lru_rank += 1;
            }
        }
        self.line_mut(set, way).lru_rank = 0;
    }

    /// An invalid way if there is one, else the least recently used way.
    pub fn select_victim(&self, set: usize) -> usize {
        let lines = self.set_lines(set);
        lines.iter().position(|l| !l.valid).unwrap_or_else(|| {
            lines
                .iter()
                .enumerate()
                .max_by_key(|(_, l)| l.lru_rank)
                .map(|(way, _)| way)
                .expect("sets are non-empty")
        })
    }

    /// Invalidates a line, returning its decompressed contents when dirty.
    /// The line is dropped even when its data cannot be recovered.
    pub fn evict(&mut self, set: usize, way: usize) -> Result<Option<(u64, Block)>, CacheError> {
        let addr = self.address_of(set, way);
        let line = self.line_mut(set, way);
        if !line.valid {
            return Ok(None);
        }
        let writeback = if !line.dirty {
            Ok(None)
        } else if line.copies_live() == 0 {
            Err(CacheError::IntegrityFault { set, way, addr })
        } else {
            let payload = line.payload.as_ref().expect("valid lines carry a payload");
            bdi::decompress(payload)
                .map(|block| Some((addr, block)))
                .map_err(|source| CacheError::Decode { set, way, source })
        };
        line.invalidate();
        writeback
    }

    /// Places a block into `(set, way)`, which must have been evicted.
    pub fn install(&mut self, set: usize, way: usize, addr: u64, plan: &WritePlan, dirty: bool) {
        let tag = self.geometry.tag(addr);
        let line = self.line_mut(set, way);
        debug_assert!(!line.valid, "install over a valid line");
        line.fill(tag, plan, dirty);
    }

    pub fn valid_lines(&self) -> impl Iterator<Item = (usize, usize, &LineState)> {
        let ways = self.geometry.associativity();
        self.lines
            .iter()
            .enumerate()
            .filter(|(_, l)| l.valid)
            .map(move |(i, l)| (i / ways, i % ways, l))
    }

    /// True when every set's ranks form a permutation of `0..ways`.
    pub fn lru_is_permutation(&self) -> bool {
        let ways = self.geometry.associativity();
        (0..self.geometry.set_count()).all(|set| {
            let mut seen = vec![false; ways];
            self.set_lines(set)
                .iter()
                .all(|l| l.lru_rank < ways && !std::mem::replace(&mut seen[l.lru_rank], true))
        })
    }
}

/// Main memory as seen by the cache.
#[derive(Debug, Clone, Default)]
pub struct BackingStore {
    blocks: HashMap<u64, Block>,
    default_fill: Block,
}

impl BackingStore {
    pub fn new(default_fill: Block) -> Self {
        BackingStore {
            blocks: HashMap::new(),
            default_fill,
        }
    }

    pub fn read(&self, addr: u64) -> Block {
        self.blocks.get(&addr).copied().unwrap_or(self.default_fill)
    }

    pub fn write(&mut self, addr: u64, block: Block) {
        self.blocks.insert(addr, block);
    }
}
