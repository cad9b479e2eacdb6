//! Seeded synthetic traces with controllable data compressibility and
//! read-run lengths.
//!
//! Each generation writes one block and then reads it a geometrically
//! distributed number of times. A fixed number of generations are in flight
//! at once and advance round-robin, so accesses to different blocks
//! interleave without one block's run being split by another write to it.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::TraceEvent;
use crate::bdi::{self, Block, WidthClass, BLOCK_SIZE};

pub use crate::bdi::WidthClass as PayloadClass;

/// Generations in flight at once.
const WORKING_SET: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    /// Distinct blocks the trace touches.
    pub block_count: usize,
    pub event_count: usize,
    /// Probability a written block is all-zero.
    pub zero_frac: f64,
    /// Probability a non-zero written block is narrow (0 < CW <= 32).
    pub narrow_frac: f64,
    /// Probability a non-zero, non-narrow block is wide (32 < CW < 64)
    /// rather than incompressible.
    pub wide_frac: f64,
    /// Mean number of reads following each write.
    pub mean_run_len: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            block_count: 1 << 16,
            event_count: 100_000,
            zero_frac: 0.5,
            narrow_frac: 0.3,
            wide_frac: 0.5,
            mean_run_len: 1.5,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SynthError {
    #[error("{name} must lie in [0, 1], got {value}")]
    Fraction { name: &'static str, value: f64 },
    #[error("mean_run_len must be finite and non-negative, got {0}")]
    RunLength(f64),
    #[error("block_count must be at least 1")]
    NoBlocks,
}

impl SynthConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        for (name, value) in [
            ("zero_frac", self.zero_frac),
            ("narrow_frac", self.narrow_frac),
            ("wide_frac", self.wide_frac),
        ] {
            if !(0.0..=1.0).contains(&value) {
                return Err(SynthError::Fraction { name, value });
            }
        }
        if !self.mean_run_len.is_finite() || self.mean_run_len < 0.0 {
            return Err(SynthError::RunLength(self.mean_run_len));
        }
        if self.block_count == 0 {
            return Err(SynthError::NoBlocks);
        }
        Ok(())
    }
}

fn spread_u64(base: u64, rng: &mut ChaCha8Rng, lane_bytes: usize, delta_bytes: usize) -> Block {
    let mut out = [0u8; BLOCK_SIZE];
    // Lane offsets span half the delta range so pairwise differences fit.
    let quarter = 1i64 << (8 * delta_bytes - 2);
    for chunk in out.chunks_exact_mut(lane_bytes) {
        let delta = rng.random_range(-quarter..quarter);
        let value = base.wrapping_add(delta as u64).to_le_bytes();
        chunk.copy_from_slice(&value[..lane_bytes]);
    }
    Block::new(out)
}

/// A base far enough from zero that lane values near it never fit the zero
/// base.
fn large_base(rng: &mut ChaCha8Rng, lane_bytes: usize) -> u64 {
    let bits = 8 * lane_bytes as u32;
    let top = if bits == 64 {
        u64::MAX >> 1
    } else {
        (1u64 << (bits - 1)) - 1
    };
    let floor = 1u64 << (bits - 2);
    rng.random_range(floor..top - (1 << (bits / 2)))
}

fn candidate(class: WidthClass, rng: &mut ChaCha8Rng) -> Block {
    match class {
        WidthClass::Zero => Block::ZERO,
        WidthClass::Narrow => match rng.random_range(0..4) {
            0 => Block::from_u64s([rng.random_range(1..=u64::MAX); 8]),
            1 => spread_u64(large_base(rng, 8), rng, 8, 1),
            2 => spread_u64(large_base(rng, 4), rng, 4, 1),
            _ => spread_u64(large_base(rng, 8), rng, 8, 2),
        },
        WidthClass::Wide => match rng.random_range(0..3) {
            0 => spread_u64(large_base(rng, 4), rng, 4, 2),
            1 => spread_u64(large_base(rng, 2), rng, 2, 1),
            _ => spread_u64(large_base(rng, 8), rng, 8, 4),
        },
        WidthClass::Uncompressed => {
            let mut out = [0u8; BLOCK_SIZE];
            rng.fill(&mut out[..]);
            Block::new(out)
        }
    }
}

/// Draws a block whose compressed width lands in `class`.
pub fn payload(class: WidthClass, rng: &mut ChaCha8Rng) -> Block {
    loop {
        let block = candidate(class, rng);
        if WidthClass::of(bdi::compress(&block).width()) == class {
            return block;
        }
    }
}

struct Generation {
    block: usize,
    reads_left: u64,
}

pub fn generate(config: &SynthConfig) -> Result<Vec<TraceEvent>, SynthError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let runs = Geometric::new(1.0 / (1.0 + config.mean_run_len)).expect("probability in (0, 1]");
    let slots = WORKING_SET.min(config.block_count);
    let mut in_flight: Vec<Option<Generation>> = (0..slots).map(|_| None).collect();
    let mut active = HashSet::new();
    let mut events = Vec::with_capacity(config.event_count);

    'outer: loop {
        for slot in in_flight.iter_mut() {
            if events.len() == config.event_count {
                break 'outer;
            }
            match slot {
                Some(g) if g.reads_left > 0 => {
                    g.reads_left -= 1;
                    events.push(TraceEvent::read(g.block as u64 * BLOCK_SIZE as u64));
                }
                _ => {
                    if let Some(done) = slot.take() {
                        active.remove(&done.block);
                    }
                    let block = loop {
                        let b = rng.random_range(0..config.block_count);
                        if active.insert(b) {
                            break b;
                        }
                    };
                    let class = if rng.random_bool(config.zero_frac) {
                        WidthClass::Zero
                    } else if rng.random_bool(config.narrow_frac) {
                        WidthClass::Narrow
                    } else if rng.random_bool(config.wide_frac) {
                        WidthClass::Wide
                    } else {
                        WidthClass::Uncompressed
                    };
                    let data = payload(class, &mut rng);
                    events.push(TraceEvent::write(block as u64 * BLOCK_SIZE as u64, data));
                    *slot = Some(Generation {
                        block,
                        reads_left: runs.sample(&mut rng),
                    });
                }
            }
        }
    }
    Ok(events)
}
