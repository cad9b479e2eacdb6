//! The trace-driven engine. Every access is charged, and every read is
//! checked against the last value written to its address.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::accounting::{self, AccountingError, BlockEvent, CacheParams, Event, Report, RunStats};
use crate::bdi::{self, Block, CodecError, CompressionState};
use crate::cache::{BackingStore, Cache, CacheError, CacheGeometry};
use crate::policy::{self, Encoding, Policy, PolicyError};
use crate::trace::{Op, TraceEvent};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Cache(#[from] CacheError),
    #[error(transparent)]
    Params(#[from] AccountingError),
}

/// Deliberate engine bugs, used to check that integrity checking notices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Drop the restore after a read of a single-copy SHIELD-family line.
    SkipSingleCopyRestore,
    /// Drop every HCRR restore.
    SkipHcrrRestore,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ViolationKind {
    #[error("every copy is disturbed")]
    AllCopiesDisturbed,
    #[error("data differs from the last value written")]
    DataMismatch,
    #[error("encoding {0} is not defined for the policy")]
    UnknownEncoding(Encoding),
    #[error("{live} live copies exceed the {declared} the encoding declares")]
    CopyOverflow { live: usize, declared: usize },
    #[error("payload does not decode: {0}")]
    Decode(CodecError),
    #[error("memory holds a stale value for an uncached block")]
    StaleMemory,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub addr: u64,
    pub kind: ViolationKind,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#x}: {}", self.addr, self.kind)
    }
}

pub struct Simulator {
    policy: Policy,
    params: CacheParams,
    cache: Cache,
    memory: BackingStore,
    /// Last value written to each address the trace has written.
    shadow: HashMap<u64, Block>,
    stats: RunStats,
    fault: Option<Fault>,
    violations: Vec<Violation>,
}

impl Simulator {
    pub fn new(
        policy: Policy,
        geometry: CacheGeometry,
        params: CacheParams,
    ) -> Result<Self, SimError> {
        params.validate()?;
        Ok(Simulator {
            policy,
            params,
            cache: Cache::new(geometry),
            memory: BackingStore::default(),
            shadow: HashMap::new(),
            stats: RunStats::new(policy),
            fault: None,
            violations: Vec::new(),
        })
    }

    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    pub fn policy(&self) -> Policy {
        self.policy
    }

    pub fn params(&self) -> &CacheParams {
        &self.params
    }

    pub fn cache(&self) -> &Cache {
        &self.cache
    }

    pub fn stats(&self) -> &RunStats {
        &self.stats
    }

    /// Violations seen while running, in the order they happened.
    pub fn violations(&self) -> &[Violation] {
        &self.violations
    }

    fn expected(&self, addr: u64) -> Block {
        self.shadow
            .get(&addr)
            .copied()
            .unwrap_or_else(|| self.memory.read(addr))
    }

    fn violation(&mut self, addr: u64, kind: ViolationKind) {
        log::debug!("integrity violation at {addr:#x}: {kind}");
        self.violations.push(Violation { addr, kind });
    }

    pub fn run(&mut self, events: &[TraceEvent]) -> Result<(), SimError> {
        events.iter().try_for_each(|ev| self.step(ev))
    }

    pub fn step(&mut self, ev: &TraceEvent) -> Result<(), SimError> {
        let hit = self.cache.lookup(ev.addr)?;
        if let Some(n) = ev.insn_delta {
            self.stats.instructions += n;
            self.stats.insn_events += 1;
        }
        match (&ev.op, hit) {
            (Op::Read, Some((set, way))) => self.read_hit(ev.addr, set, way),
            (Op::Read, None) => {
                let data = self.memory.read(ev.addr);
                if data != self.expected(ev.addr) {
                    self.violation(ev.addr, ViolationKind::DataMismatch);
                }
                let plan = policy::plan_write(self.policy, &data);
                self.allocate(ev.addr, &plan, false);
                accounting::charge_event(&mut self.stats, &self.params, Event::ReadMiss(&plan));
            }
            (Op::Write(data), Some((set, way))) => {
                self.shadow.insert(ev.addr, *data);
                let plan = policy::plan_write(self.policy, data);
                let tag = self.cache.geometry().tag(ev.addr);
                self.cache.line_mut(set, way).fill(tag, &plan, true);
                self.cache.touch(set, way);
                self.stats.record_cread(ev.addr, BlockEvent::Write);
                accounting::charge_event(
                    &mut self.stats,
                    &self.params,
                    Event::Write {
                        plan: &plan,
                        hit: true,
                    },
                );
            }
            (Op::Write(data), None) => {
                self.shadow.insert(ev.addr, *data);
                let plan = policy::plan_write(self.policy, data);
                self.allocate(ev.addr, &plan, true);
                accounting::charge_event(
                    &mut self.stats,
                    &self.params,
                    Event::Write {
                        plan: &plan,
                        hit: false,
                    },
                );
            }
        }
        Ok(())
    }

    fn read_hit(&mut self, addr: u64, set: usize, way: usize) {
        let line = self.cache.line(set, way);
        let mut plan = match policy::plan_read(self.policy, line) {
            Ok(plan) => plan,
            Err(err) => {
                let kind = match err {
                    PolicyError::UnknownEncoding(code) => ViolationKind::UnknownEncoding(code),
                    _ => ViolationKind::AllCopiesDisturbed,
                };
                self.violation(addr, kind);
                self.cache.touch(set, way);
                return;
            }
        };
        let sensed = line.payload().map(bdi::decompress);
        match sensed {
            Some(Ok(data)) if data == self.expected(addr) => {}
            Some(Err(e)) => self.violation(addr, ViolationKind::Decode(e)),
            _ => self.violation(addr, ViolationKind::DataMismatch),
        }

        let skip = match self.fault {
            Some(Fault::SkipSingleCopyRestore) => self.policy.compresses(),
            Some(Fault::SkipHcrrRestore) => self.policy == Policy::Hcrr,
            None => false,
        };
        if skip && plan.restore_issued {
            plan.restore_issued = false;
            plan.restore_bytes = 0;
        }

        policy::apply_disturbance(self.cache.line_mut(set, way), &plan);
        self.cache.touch(set, way);
        self.stats.record_cread(addr, BlockEvent::Read);
        accounting::charge_event(&mut self.stats, &self.params, Event::ReadHit(&plan));
    }

    fn allocate(&mut self, addr: u64, plan: &policy::WritePlan, dirty: bool) {
        let set = self.cache.geometry().set_index(addr);
        let way = self.cache.select_victim(set);
        let victim = self.cache.line(set, way);
        if victim.is_valid() {
            let victim_addr = self.cache.address_of(set, way);
            let decompressions = match victim.payload() {
                Some(p) if victim.is_dirty() && p.state() != CompressionState::Uncompressed => 1,
                _ => 0,
            };
            let dirty_victim = victim.is_dirty();
            match self.cache.evict(set, way) {
                Ok(Some((a, block))) => self.memory.write(a, block),
                Ok(None) => {}
                Err(CacheError::Decode { source, .. }) => {
                    self.violation(victim_addr, ViolationKind::Decode(source))
                }
                Err(_) => self.violation(victim_addr, ViolationKind::AllCopiesDisturbed),
            }
            self.stats
                .record_cread(victim_addr, BlockEvent::GenerationEnd);
            accounting::charge_event(
                &mut self.stats,
                &self.params,
                Event::Eviction {
                    dirty: dirty_victim,
                    decompressions,
                },
            );
        }
        self.cache.install(set, way, addr, plan, dirty);
        self.cache.touch(set, way);
        self.stats.record_cread(addr, BlockEvent::GenerationStart);
    }

    /// Checks every resident line and every written block that is not
    /// resident. Returns violations sorted by address.
    pub fn verify_integrity(&self) -> Vec<Violation> {
        let mut found = Vec::new();
        let table = self.policy.table();
        for (set, way, line) in self.cache.valid_lines() {
            let addr = self.cache.address_of(set, way);
            let mut push = |kind| found.push(Violation { addr, kind });
            match table.entry(line.encoding()) {
                None => push(ViolationKind::UnknownEncoding(line.encoding())),
                Some(entry) if line.copies_live() > entry.copies => {
                    push(ViolationKind::CopyOverflow {
                        live: line.copies_live(),
                        declared: entry.copies,
                    })
                }
                Some(_) => {}
            }
            if line.copies_live() == 0 {
                push(ViolationKind::AllCopiesDisturbed);
            }
            match line.payload().map(bdi::decompress) {
                Some(Ok(data)) if data == self.expected(addr) => {}
                Some(Err(e)) => push(ViolationKind::Decode(e)),
                _ => push(ViolationKind::DataMismatch),
            }
        }
        for (&addr, value) in &self.shadow {
            if self.cache.lookup(addr).ok().flatten().is_none() && self.memory.read(addr) != *value
            {
                found.push(Violation {
                    addr,
                    kind: ViolationKind::StaleMemory,
                });
            }
        }
        found.sort_by_key(|v| v.addr);
        found
    }

    /// Service time so far, ns. Accesses are serialised, so this is also the
    /// wall time that leakage accrues over.
    pub fn wall_time(&self) -> f64 {
        self.stats.total_service_time
    }

    pub fn report(&self, baseline: Option<&Report>) -> Report {
        accounting::finalize(&self.stats, &self.params, self.wall_time(), baseline)
    }
}

/// A finished run.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub stats: RunStats,
    pub params: CacheParams,
    /// Violations seen while running followed by the end-of-run check.
    pub violations: Vec<Violation>,
    pub wall_time: f64,
}

impl RunOutcome {
    pub fn report(&self, baseline: Option<&Report>) -> Report {
        accounting::finalize(&self.stats, &self.params, self.wall_time, baseline)
    }
}

pub fn simulate(
    policy: Policy,
    geometry: CacheGeometry,
    params: &CacheParams,
    events: &[TraceEvent],
) -> Result<RunOutcome, SimError> {
    let mut sim = Simulator::new(policy, geometry, params.clone())?;
    sim.run(events)?;
    let mut violations = sim.violations.clone();
    violations.extend(sim.verify_integrity());
    Ok(RunOutcome {
        wall_time: sim.wall_time(),
        violations,
        stats: sim.stats,
        params: sim.params,
    })
}

/// Runs each policy on the same trace in parallel, plus the ideal baseline
/// when it was not requested, and reports each against the baseline.
pub fn compare(
    policies: &[Policy],
    geometry: CacheGeometry,
    params: &CacheParams,
    events: &[TraceEvent],
) -> Result<Vec<(Report, RunOutcome)>, SimError> {
    params.validate()?;
    let mut all: Vec<Policy> = policies.to_vec();
    if !all.contains(&Policy::Ideal) {
        all.push(Policy::Ideal);
    }
    let outcomes: Vec<Result<RunOutcome, SimError>> = std::thread::scope(|s| {
        let handles: Vec<_> = all
            .iter()
            .map(|&p| s.spawn(move || simulate(p, geometry, params, events)))
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("simulation thread panicked"))
            .collect()
    });
    let outcomes: Vec<RunOutcome> = outcomes.into_iter().collect::<Result<_, _>>()?;
    let ideal = all
        .iter()
        .position(|&p| p == Policy::Ideal)
        .expect("ideal is always run");
    let baseline = outcomes[ideal].report(None);
    Ok(policies
        .iter()
        .map(|p| {
            let i = all
                .iter()
                .position(|q| q == p)
                .expect("requested policy was run");
            (outcomes[i].report(Some(&baseline)), outcomes[i].clone())
        })
        .collect())
}
