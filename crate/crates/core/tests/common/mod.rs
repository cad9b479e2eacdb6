//! Shared test helpers: a deliberately naive reference simulator and random
//! trace builders.
#![allow(dead_code)]

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sttsim::bdi::{self, Block};
use sttsim::policy::Policy;
use sttsim::trace::{Op, TraceEvent};

/// Totals the reference simulator reports.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RefTotals {
    pub restores: u64,
    pub bytes_written: u64,
    pub read_hits: u64,
    pub avoided: u64,
    pub run_sum: u64,
    pub run_count: u64,
}

struct RefLine {
    cw: usize,
    spare_reads: usize,
    open_run: u64,
}

/// Straight-line model of the whole system: each set is a recency-ordered
/// list of addresses, each resident block remembers only its width and how
/// many more reads it can serve without a restore. Memory is the map of
/// last-written values.
pub struct ReferenceSim {
    policy: Policy,
    set_count: u64,
    ways: usize,
    sets: HashMap<u64, Vec<u64>>,
    lines: HashMap<u64, RefLine>,
    memory: HashMap<u64, Block>,
    totals: RefTotals,
}

impl ReferenceSim {
    pub fn new(policy: Policy, capacity: u64, ways: usize) -> Self {
        ReferenceSim {
            policy,
            set_count: capacity / (ways as u64 * 64),
            ways,
            sets: HashMap::new(),
            lines: HashMap::new(),
            memory: HashMap::new(),
            totals: RefTotals::default(),
        }
    }

    /// Bytes stored for one write of `data`, and how many reads it can serve
    /// before one of them needs a restore.
    fn store(&self, data: &Block) -> (usize, usize, usize) {
        let shield = matches!(
            self.policy,
            Policy::Shield | Policy::Shield1 | Policy::Shield3
        );
        if !shield {
            return (64, 64, 0);
        }
        let cw = bdi::compress(data).width();
        let copies = if cw == 0 || cw > 32 || self.policy == Policy::Shield1 {
            1
        } else if self.policy == Policy::Shield3 && cw < 22 {
            3
        } else {
            2
        };
        (cw, cw * copies, copies - 1)
    }

    fn close_run(&mut self, addr: u64) {
        let line = self.lines.get_mut(&addr).unwrap();
        self.totals.run_sum += line.open_run;
        self.totals.run_count += 1;
        line.open_run = 0;
    }

    fn make_mru(&mut self, addr: u64) {
        let set = self.sets.entry((addr / 64) % self.set_count).or_default();
        if let Some(pos) = set.iter().position(|&a| a == addr) {
            set.remove(pos);
        }
        set.insert(0, addr);
    }

    fn allocate(&mut self, addr: u64, data: &Block) {
        let set_id = (addr / 64) % self.set_count;
        let set = self.sets.entry(set_id).or_default();
        if set.len() == self.ways {
            let victim = set.pop().unwrap();
            let line = self.lines.remove(&victim).unwrap();
            self.totals.run_sum += line.open_run;
            self.totals.run_count += 1;
        }
        let (cw, bytes, spare_reads) = self.store(data);
        self.totals.bytes_written += bytes as u64;
        self.lines.insert(
            addr,
            RefLine {
                cw,
                spare_reads,
                open_run: 0,
            },
        );
        self.make_mru(addr);
    }

    pub fn step(&mut self, ev: &TraceEvent) {
        match &ev.op {
            Op::Write(data) => {
                self.memory.insert(ev.addr, *data);
                if self.lines.contains_key(&ev.addr) {
                    self.close_run(ev.addr);
                    let (cw, bytes, spare_reads) = self.store(data);
                    self.totals.bytes_written += bytes as u64;
                    let line = self.lines.get_mut(&ev.addr).unwrap();
                    line.cw = cw;
                    line.spare_reads = spare_reads;
                    self.make_mru(ev.addr);
                } else {
                    self.allocate(ev.addr, data);
                }
            }
            Op::Read => {
                if let Some(line) = self.lines.get_mut(&ev.addr) {
                    self.totals.read_hits += 1;
                    line.open_run += 1;
                    match self.policy {
                        Policy::Ideal | Policy::Lcll => {}
                        Policy::Hcrr => {
                            self.totals.restores += 1;
                            self.totals.bytes_written += 64;
                        }
                        _ => {
                            if line.cw == 0 {
                                self.totals.avoided += 1;
                            } else if line.spare_reads > 0 {
                                line.spare_reads -= 1;
                                self.totals.avoided += 1;
                            } else {
                                self.totals.restores += 1;
                                self.totals.bytes_written += line.cw as u64;
                            }
                        }
                    }
                    self.make_mru(ev.addr);
                } else {
                    let data = self.memory.get(&ev.addr).copied().unwrap_or(Block::ZERO);
                    self.allocate(ev.addr, &data);
                }
            }
        }
    }

    pub fn finish(mut self) -> RefTotals {
        for line in self.lines.values() {
            self.totals.run_sum += line.open_run;
            self.totals.run_count += 1;
        }
        self.totals
    }
}

pub fn run_reference(
    policy: Policy,
    capacity: u64,
    ways: usize,
    events: &[TraceEvent],
) -> RefTotals {
    let mut sim = ReferenceSim::new(policy, capacity, ways);
    for ev in events {
        sim.step(ev);
    }
    sim.finish()
}

/// A payload drawn from a mix of compressibility classes.
pub fn mixed_block(rng: &mut ChaCha8Rng) -> Block {
    match rng.random_range(0..6) {
        0 => Block::ZERO,
        1 => Block::from_u64s([rng.random(); 8]),
        2 => {
            let base: u64 = rng.random();
            Block::from_u64s(std::array::from_fn(|_| {
                base.wrapping_add(rng.random_range(0..100))
            }))
        }
        3 => {
            let base: u64 = rng.random();
            Block::from_u64s(std::array::from_fn(|_| {
                base.wrapping_add(rng.random_range(0..30_000))
            }))
        }
        4 => {
            let mut bytes = [0u8; 64];
            for chunk in bytes.chunks_exact_mut(2) {
                chunk.copy_from_slice(&(0x4000u16 + rng.random_range(0..100)).to_le_bytes());
            }
            Block::new(bytes)
        }
        _ => {
            let mut bytes = [0u8; 64];
            rng.fill(&mut bytes[..]);
            Block::new(bytes)
        }
    }
}

/// Random reads and writes over a small address pool so that sets overflow
/// and lines are reused.
pub fn random_trace(seed: u64, len: usize, pool: u64) -> Vec<TraceEvent> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len)
        .map(|_| {
            let addr = rng.random_range(0..pool) * 64;
            if rng.random_bool(0.4) {
                TraceEvent::write(addr, mixed_block(&mut rng))
            } else {
                TraceEvent::read(addr)
            }
        })
        .collect()
}
