//! Energy and latency accounting with the derived metrics.
//!
//! - CRead: mean length of read runs between writes to a block
//! - RstAvd: share of read hits that needed no restore
//! - BWPKI: array bytes written per kilo-instruction
//! - energy saving against a baseline run
//!
//! Units: latencies in ns, array energies in nJ, codec energies in pJ, codec
//! latencies in cycles, leakage in W. Array write energy scales linearly with
//! the bytes written. The average access latency is a performance proxy; no
//! core model sits behind it.

use std::collections::HashMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bdi::{WidthClass, BLOCK_SIZE};
use crate::cache::CacheSize;
use crate::policy::{Policy, ReadPlan, RestoreAvoided, WritePlan};

#[derive(Debug, Error)]
pub enum AccountingError {
    #[error("parameter `{key}` must be {rule}, got {value}")]
    InvalidParam {
        key: &'static str,
        rule: &'static str,
        value: f64,
    },
    #[error("unknown parameter `{0}`")]
    UnknownParam(String),
    #[error("no instructions or accesses to normalise by")]
    NoInstructions,
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheParams {
    /// ns
    pub hit_latency: f64,
    /// ns
    pub miss_latency: f64,
    /// ns
    pub write_latency: f64,
    /// nJ
    pub hit_energy: f64,
    /// nJ
    pub miss_energy: f64,
    /// nJ for a full 64-byte write.
    pub write_energy: f64,
    /// W
    pub leakage_power: f64,
    /// pJ per compression.
    pub compression_energy: f64,
    /// pJ per decompression.
    pub decompression_energy: f64,
    /// cycles
    pub compression_latency: f64,
    /// cycles
    pub decompression_latency: f64,
    /// Share of the hit latency spent sensing; LCLL triples it.
    pub lcll_sense_fraction: f64,
    /// ns
    pub cycle_time: f64,
}

const PARAM_KEYS: [&str; 13] = [
    "hit_latency",
    "miss_latency",
    "write_latency",
    "hit_energy",
    "miss_energy",
    "write_energy",
    "leakage_power",
    "compression_energy",
    "decompression_energy",
    "compression_latency",
    "decompression_latency",
    "lcll_sense_fraction",
    "cycle_time",
];

impl CacheParams {
    /// 16-way STT-RAM device parameters for each capacity.
    pub fn preset(size: CacheSize) -> Self {
        let (
            hit_latency,
            miss_latency,
            write_latency,
            hit_energy,
            miss_energy,
            write_energy,
            leakage_power,
        ) = match size {
            CacheSize::Mb2 => (4.063, 1.976, 4.920, 0.264, 0.107, 0.366, 0.019),
            CacheSize::Mb4 => (3.737, 1.567, 4.970, 0.304, 0.105, 0.389, 0.044),
            CacheSize::Mb8 => (4.058, 1.805, 5.003, 0.333, 0.112, 0.427, 0.072),
            CacheSize::Mb16 => (4.350, 1.814, 5.145, 0.391, 0.113, 0.490, 0.138),
        };
        CacheParams {
            hit_latency,
            miss_latency,
            write_latency,
            hit_energy,
            miss_energy,
            write_energy,
            leakage_power,
            compression_energy: 8.0,
            decompression_energy: 1.0,
            compression_latency: 2.0,
            decompression_latency: 1.0,
            lcll_sense_fraction: 1.0,
            cycle_time: 0.5,
        }
    }

    fn field_mut(&mut self, key: &str) -> Option<&mut f64> {
        Some(match key {
            "hit_latency" => &mut self.hit_latency,
            "miss_latency" => &mut self.miss_latency,
            "write_latency" => &mut self.write_latency,
            "hit_energy" => &mut self.hit_energy,
            "miss_energy" => &mut self.miss_energy,
            "write_energy" => &mut self.write_energy,
            "leakage_power" => &mut self.leakage_power,
            "compression_energy" => &mut self.compression_energy,
            "decompression_energy" => &mut self.decompression_energy,
            "compression_latency" => &mut self.compression_latency,
            "decompression_latency" => &mut self.decompression_latency,
            "lcll_sense_fraction" => &mut self.lcll_sense_fraction,
            "cycle_time" => &mut self.cycle_time,
            _ => return None,
        })
    }

    pub fn set(&mut self, key: &str, value: f64) -> Result<(), AccountingError> {
        *self
            .field_mut(key)
            .ok_or_else(|| AccountingError::UnknownParam(key.to_string()))? = value;
        Ok(())
    }

    pub fn validate(&self) -> Result<(), AccountingError> {
        let mut copy = self.clone();
        for key in PARAM_KEYS {
            let value = *copy.field_mut(key).expect("known key");
            let ok = if key == "lcll_sense_fraction" {
                value >= 0.0
            } else {
                value > 0.0
            };
            if !ok || !value.is_finite() {
                let rule = if key == "lcll_sense_fraction" {
                    "non-negative"
                } else {
                    "strictly positive"
                };
                return Err(AccountingError::InvalidParam { key, rule, value });
            }
        }
        Ok(())
    }

    /// Hit latency under `policy`, including the LCLL sensing surcharge.
    pub fn hit_time(&self, policy: Policy) -> f64 {
        match policy {
            Policy::Lcll => self.hit_latency * (1.0 + 2.0 * self.lcll_sense_fraction),
            _ => self.hit_latency,
        }
    }

    /// Energy for writing `bytes` into the array.
    pub fn write_energy_for(&self, bytes: usize) -> f64 {
        self.write_energy * bytes as f64 / BLOCK_SIZE as f64
    }
}

/// Per-block access events that delimit consecutive-read runs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockEvent {
    /// The block entered the cache; its insertion opens the first run.
    GenerationStart,
    Read,
    Write,
    /// The block left the cache.
    GenerationEnd,
}

/// Lengths of maximal read runs between writes, per cache generation.
#[derive(Debug, Clone, Default)]
pub struct CReadTracker {
    open: HashMap<u64, u64>,
    run_sum: u64,
    run_count: u64,
}

impl CReadTracker {
    pub fn record(&mut self, addr: u64, event: BlockEvent) {
        match event {
            BlockEvent::GenerationStart => {
                if let Some(stale) = self.open.insert(addr, 0) {
                    self.close(stale);
                }
            }
            BlockEvent::Read => *self.open.entry(addr).or_default() += 1,
            BlockEvent::Write => {
                let len = self.open.insert(addr, 0).unwrap_or(0);
                self.close(len);
            }
            BlockEvent::GenerationEnd => {
                if let Some(len) = self.open.remove(&addr) {
                    self.close(len);
                }
            }
        }
    }

    fn close(&mut self, len: u64) {
        self.run_sum += len;
        self.run_count += 1;
    }

    /// `(sum of run lengths, number of runs)`, counting runs still open as
    /// if their generations ended now.
    pub fn totals(&self) -> (u64, u64) {
        let open_sum: u64 = self.open.values().sum();
        (
            self.run_sum + open_sum,
            self.run_count + self.open.len() as u64,
        )
    }

    /// Mean run length over all runs of all blocks; 0 with no runs.
    pub fn finalize(&self) -> f64 {
        let (sum, count) = self.totals();
        if count == 0 {
            0.0
        } else {
            sum as f64 / count as f64
        }
    }
}

/// What happened on one cache access, for charging.
#[derive(Debug, Clone, Copy)]
pub enum Event<'a> {
    ReadHit(&'a ReadPlan),
    /// A read miss and the fill that follows it.
    ReadMiss(&'a WritePlan),
    Write {
        plan: &'a WritePlan,
        hit: bool,
    },
    Eviction {
        dirty: bool,
        decompressions: u32,
    },
}

#[derive(Debug, Clone)]
pub struct RunStats {
    pub policy: Policy,
    pub reads: u64,
    pub read_hits: u64,
    pub read_misses: u64,
    pub writes: u64,
    pub write_misses: u64,
    pub fills: u64,
    pub evictions: u64,
    pub writebacks: u64,
    pub restores: u64,
    pub restores_avoided_zero: u64,
    pub restores_avoided_dual: u64,
    /// All bytes written into the array, restores included.
    pub bytes_written_array: u64,
    /// The restore share of `bytes_written_array`.
    pub bytes_written_restore: u64,
    pub bytes_read_array: u64,
    pub instructions: u64,
    /// Events that carried an instruction count.
    pub insn_events: u64,
    pub compressions: u64,
    pub decompressions: u64,
    /// nJ
    pub energy_dynamic: f64,
    /// nJ
    pub energy_codec: f64,
    /// ns
    pub total_service_time: f64,
    pub cread: CReadTracker,
    /// Counts per [`WidthClass`] of data written into the array.
    pub cw_histogram: [u64; 4],
}

impl RunStats {
    pub fn new(policy: Policy) -> Self {
        RunStats {
            policy,
            reads: 0,
            read_hits: 0,
            read_misses: 0,
            writes: 0,
            write_misses: 0,
            fills: 0,
            evictions: 0,
            writebacks: 0,
            restores: 0,
            restores_avoided_zero: 0,
            restores_avoided_dual: 0,
            bytes_written_array: 0,
            bytes_written_restore: 0,
            bytes_read_array: 0,
            instructions: 0,
            insn_events: 0,
            compressions: 0,
            decompressions: 0,
            energy_dynamic: 0.0,
            energy_codec: 0.0,
            total_service_time: 0.0,
            cread: CReadTracker::default(),
            cw_histogram: [0; 4],
        }
    }

    pub fn accesses(&self) -> u64 {
        self.reads + self.writes
    }

    /// Bytes written by writes and fills, excluding restores.
    pub fn bytes_written_initial(&self) -> u64 {
        self.bytes_written_array - self.bytes_written_restore
    }

    pub fn record_cread(&mut self, addr: u64, event: BlockEvent) {
        self.cread.record(addr, event);
    }

    pub fn finalize_cread(&self) -> f64 {
        self.cread.finalize()
    }

    /// Instruction count used for per-kilo-instruction metrics, and whether
    /// it is a real count (`true`) or the access count standing in for one.
    pub fn normaliser(&self) -> (u64, bool) {
        if self.insn_events > 0 && self.instructions > 0 {
            (self.instructions, true)
        } else {
            (self.accesses(), false)
        }
    }
}

fn codec(stats: &mut RunStats, params: &CacheParams, compressions: u32, decompressions: u32) {
    stats.compressions += u64::from(compressions);
    stats.decompressions += u64::from(decompressions);
    stats.energy_codec += (f64::from(compressions) * params.compression_energy
        + f64::from(decompressions) * params.decompression_energy)
        / 1000.0;
    stats.total_service_time += (f64::from(compressions) * params.compression_latency
        + f64::from(decompressions) * params.decompression_latency)
        * params.cycle_time;
}

fn array_write(stats: &mut RunStats, params: &CacheParams, plan: &WritePlan) {
    stats.bytes_written_array += plan.bytes_written as u64;
    stats.energy_dynamic += params.write_energy_for(plan.bytes_written);
    if plan.bytes_written > 0 {
        stats.total_service_time += params.write_latency;
    }
    if plan.compression_events > 0 {
        stats.cw_histogram[WidthClass::of(plan.cw).index()] += 1;
    }
    codec(stats, params, plan.compression_events, 0);
}

/// Charges one access to `stats`.
pub fn charge_event(stats: &mut RunStats, params: &CacheParams, event: Event<'_>) {
    match event {
        Event::ReadHit(plan) => {
            stats.reads += 1;
            stats.read_hits += 1;
            stats.bytes_read_array += plan.bytes_read as u64;
            stats.energy_dynamic += params.hit_energy;
            stats.total_service_time += params.hit_time(stats.policy);
            if plan.restore_issued {
                stats.restores += 1;
                stats.bytes_written_array += plan.restore_bytes as u64;
                stats.bytes_written_restore += plan.restore_bytes as u64;
                stats.energy_dynamic += params.write_energy_for(plan.restore_bytes);
                stats.total_service_time += params.write_latency;
            }
            match plan.avoided {
                Some(RestoreAvoided::ZeroData) => stats.restores_avoided_zero += 1,
                Some(RestoreAvoided::SpareCopy) => stats.restores_avoided_dual += 1,
                None => {}
            }
            codec(stats, params, 0, plan.decompression_events);
        }
        Event::ReadMiss(fill) => {
            stats.reads += 1;
            stats.read_misses += 1;
            stats.fills += 1;
            stats.energy_dynamic += params.miss_energy;
            stats.total_service_time += params.miss_latency;
            array_write(stats, params, fill);
        }
        Event::Write { plan, hit } => {
            stats.writes += 1;
            if !hit {
                stats.write_misses += 1;
                stats.energy_dynamic += params.miss_energy;
                stats.total_service_time += params.miss_latency;
            }
            array_write(stats, params, plan);
        }
        Event::Eviction {
            dirty,
            decompressions,
        } => {
            stats.evictions += 1;
            stats.writebacks += u64::from(dirty);
            codec(stats, params, 0, decompressions);
        }
    }
}

/// Share of read hits that needed no restore, in percent.
pub fn rst_avd(stats: &RunStats) -> f64 {
    if stats.read_hits == 0 {
        return 0.0;
    }
    (stats.restores_avoided_zero + stats.restores_avoided_dual) as f64 * 100.0
        / stats.read_hits as f64
}

pub fn bwpki(stats: &RunStats) -> Result<f64, AccountingError> {
    let (denominator, _) = stats.normaliser();
    if denominator == 0 {
        return Err(AccountingError::NoInstructions);
    }
    Ok(stats.bytes_written_array as f64 * 1000.0 / denominator as f64)
}

pub fn delta_bwpki(stats: &RunStats, baseline: &RunStats) -> Result<f64, AccountingError> {
    Ok(bwpki(stats)? - bwpki(baseline)?)
}

/// Summary of one run, with deltas against a baseline run on the same trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub policy: Policy,
    /// Dynamic + codec + leakage, nJ.
    pub energy_nj: f64,
    pub energy_saving_pct: f64,
    /// Mean service time per access (performance proxy), ns.
    pub avg_latency_ns: f64,
    pub rst_avd_pct: f64,
    pub cread: f64,
    pub bwpki: f64,
    pub delta_bwpki: f64,
    pub cw_hist_0: f64,
    pub cw_hist_narrow: f64,
    pub cw_hist_wide: f64,
    pub cw_hist_uncomp: f64,
    pub restores: u64,
    pub reads: u64,
    pub writes: u64,
    pub bytes_written: u64,
    /// Baseline average latency over this run's (>1 is slower).
    pub latency_ratio: f64,
    /// `kilo-instruction`, or `kilo-access` when the trace had no counts.
    pub bwpki_basis: String,
}

/// Builds the report for a finished run. `wall_time` (ns) drives leakage.
/// Without a baseline the run is compared against itself.
pub fn finalize(
    stats: &RunStats,
    params: &CacheParams,
    wall_time: f64,
    baseline: Option<&Report>,
) -> Report {
    let energy_nj = stats.energy_dynamic + stats.energy_codec + params.leakage_power * wall_time;
    let avg_latency_ns = if stats.accesses() == 0 {
        0.0
    } else {
        stats.total_service_time / stats.accesses() as f64
    };
    let bwpki_value = bwpki(stats).unwrap_or(0.0);
    let written: u64 = stats.cw_histogram.iter().sum();
    let pct = |class: WidthClass| {
        if written == 0 {
            0.0
        } else {
            stats.cw_histogram[class.index()] as f64 * 100.0 / written as f64
        }
    };

    let (energy_saving_pct, delta, latency_ratio) = match baseline {
        Some(base) => (
            if base.energy_nj > 0.0 {
                (base.energy_nj - energy_nj) / base.energy_nj * 100.0
            } else {
                0.0
            },
            bwpki_value - base.bwpki,
            if base.avg_latency_ns > 0.0 {
                avg_latency_ns / base.avg_latency_ns
            } else {
                1.0
            },
        ),
        None => (0.0, 0.0, 1.0),
    };

    Report {
        policy: stats.policy,
        energy_nj,
        energy_saving_pct,
        avg_latency_ns,
        rst_avd_pct: rst_avd(stats),
        cread: stats.finalize_cread(),
        bwpki: bwpki_value,
        delta_bwpki: delta,
        cw_hist_0: pct(WidthClass::Zero),
        cw_hist_narrow: pct(WidthClass::Narrow),
        cw_hist_wide: pct(WidthClass::Wide),
        cw_hist_uncomp: pct(WidthClass::Uncompressed),
        restores: stats.restores,
        reads: stats.reads,
        writes: stats.writes,
        bytes_written: stats.bytes_written_array,
        latency_ratio,
        bwpki_basis: if stats.normaliser().1 {
            "kilo-instruction"
        } else {
            "kilo-access"
        }
        .to_string(),
    }
}

pub fn write_json<W: Write>(reports: &[Report], out: W) -> Result<(), AccountingError> {
    let mut out = out;
    match reports {
        [single] => serde_json::to_writer_pretty(&mut out, single)?,
        many => serde_json::to_writer_pretty(&mut out, many)?,
    }
    writeln!(out)?;
    Ok(())
}

pub fn write_csv<W: Write>(reports: &[Report], out: W) -> Result<(), AccountingError> {
    let mut writer = csv::Writer::from_writer(out);
    for r in reports {
        writer.serialize(r)?;
    }
    writer.flush()?;
    Ok(())
}
