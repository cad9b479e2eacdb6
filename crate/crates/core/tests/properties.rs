//! Property tests over random blocks and random traces.

use proptest::prelude::*;
use sttsim::accounting::CacheParams;
use sttsim::bdi::{self, Block, CompressionState, BLOCK_SIZE};
use sttsim::cache::{CacheGeometry, CacheSize, LineState};
use sttsim::policy::{self, Policy};
use sttsim::sim::{self, Simulator};
use sttsim::trace::{self, TraceEvent};

/// Elements of one lane width drawn either near zero or near a shared base,
/// so every base-delta state is reachable.
fn structured_block() -> impl Strategy<Value = Block> {
    (
        prop::sample::select(vec![2usize, 4, 8]),
        any::<u64>(),
        prop::sample::select(vec![1usize, 2, 4]),
        prop::collection::vec((any::<bool>(), any::<i64>()), 32),
    )
        .prop_map(|(lane, base, q, elems)| {
            let mut bytes = [0u8; BLOCK_SIZE];
            for (chunk, (near_zero, d)) in bytes.chunks_exact_mut(lane).zip(elems) {
                let value = if near_zero {
                    (d % 100) as u64
                } else {
                    base.wrapping_add((d >> (64 - 8 * q)) as u64)
                };
                chunk.copy_from_slice(&value.to_le_bytes()[..lane]);
            }
            Block::new(bytes)
        })
}

fn block() -> impl Strategy<Value = Block> {
    prop_oneof![
        Just(Block::ZERO),
        any::<u64>().prop_map(|v| Block::from_u64s([v; 8])),
        structured_block(),
        structured_block(),
        prop::collection::vec(any::<u8>(), BLOCK_SIZE).prop_map(|v| Block::from_slice(&v).unwrap()),
    ]
}

fn events(max_len: usize, pool: u64) -> impl Strategy<Value = Vec<TraceEvent>> {
    prop::collection::vec((any::<bool>(), 0..pool, block()), 1..max_len).prop_map(|ops| {
        ops.into_iter()
            .map(|(write, slot, data)| {
                if write {
                    TraceEvent::write(slot * 64, data)
                } else {
                    TraceEvent::read(slot * 64)
                }
            })
            .collect()
    })
}

fn params() -> CacheParams {
    CacheParams::preset(CacheSize::Mb4)
}

fn tiny() -> CacheGeometry {
    CacheGeometry::new(4 * 2 * 64, 2).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn codec_is_lossless_and_minimal(b in block()) {
        let cb = bdi::compress(&b);
        prop_assert_eq!(bdi::decompress(&cb).unwrap(), b);
        prop_assert!([0, 8, 15, 19, 22, 33, 34, 36, 64].contains(&cb.width()));
        prop_assert_eq!(cb.width(), cb.state().width());
        for state in CompressionState::ALL {
            if state.width() < cb.width() {
                prop_assert!(bdi::try_state(&b, state).is_none(), "{} also fits", state);
            }
        }
    }

    #[test]
    fn base_delta_layout(b in structured_block()) {
        let cb = bdi::compress(&b);
        if let Some((p, q)) = cb.state().base_delta() {
            let count = BLOCK_SIZE / p;
            prop_assert_eq!(cb.zero_mask().len(), count);
            prop_assert_eq!(cb.deltas().len(), count - 1);
            let limit = 1i64 << (8 * q - 1);
            prop_assert!(cb.deltas().iter().all(|&d| (-limit..limit).contains(&d)));
            let base_index = cb.zero_mask().iter().position(|z| !z).unwrap();
            prop_assert!(cb.zero_mask()[..base_index].iter().all(|&z| z));
        }
    }

    #[test]
    fn plans_match_the_table(b in block(), policy in prop::sample::select(Policy::ALL.to_vec())) {
        let plan = policy::plan_write(policy, &b);
        let entry = *policy.table().entry(plan.encoding).unwrap();
        prop_assert_eq!(plan.bytes_written, entry.stored_size);
        prop_assert_eq!(plan.copies, entry.copies);

        let mut line = LineState::default();
        line.fill(0, &plan, true);
        for _ in 0..4 {
            let read = policy::plan_read(policy, &line).unwrap();
            if read.restore_issued {
                let single = policy.table().entry(read.new_encoding).unwrap();
                prop_assert_eq!(single.copies, 1);
                prop_assert_eq!(read.restore_bytes, single.stored_size);
            } else {
                prop_assert_eq!(read.restore_bytes, 0);
            }
            policy::apply_disturbance(&mut line, &read);
            prop_assert!(policy.table().entry(line.encoding()).is_some());
            prop_assert!(line.copies_live() >= 1);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn engine_preserves_data_and_line_invariants(evs in events(300, 24)) {
        for policy in Policy::ALL {
            let mut sim = Simulator::new(policy, tiny(), params()).unwrap();
            let mut prev = sim.stats().clone();
            for ev in &evs {
                sim.step(ev).unwrap();
                let s = sim.stats();
                // Counters only grow.
                prop_assert!(s.reads >= prev.reads && s.writes >= prev.writes);
                prop_assert!(s.restores >= prev.restores && s.bytes_written_array >= prev.bytes_written_array);
                prop_assert!(s.energy_dynamic >= prev.energy_dynamic && s.total_service_time > prev.total_service_time);
                prev = s.clone();
            }
            prop_assert!(sim.violations().is_empty(), "{}: {:?}", policy, sim.violations());
            prop_assert!(sim.verify_integrity().is_empty());
            prop_assert!(sim.cache().lru_is_permutation());
            for (_, _, line) in sim.cache().valid_lines() {
                let entry = policy.table().entry(line.encoding());
                prop_assert!(entry.is_some());
                prop_assert!(line.copies_live() <= entry.unwrap().copies);
            }
            let s = sim.stats();
            prop_assert_eq!(s.read_hits + s.read_misses, s.reads);
            prop_assert_eq!(s.fills, s.read_misses);
            prop_assert!(s.restores_avoided_zero + s.restores_avoided_dual + s.restores <= s.read_hits);
        }
    }

    #[test]
    fn shield_never_writes_more_than_hcrr(evs in events(300, 24)) {
        let run = |p| sim::simulate(p, tiny(), &params(), &evs).unwrap().stats;
        let (shield, shield1, hcrr, ideal) = (run(Policy::Shield), run(Policy::Shield1), run(Policy::Hcrr), run(Policy::Ideal));
        prop_assert!(shield.bytes_written_array <= hcrr.bytes_written_array);
        prop_assert!(shield.restores <= shield1.restores);
        prop_assert!(shield1.bytes_written_initial() <= shield.bytes_written_initial());
        prop_assert_eq!(hcrr.restores, hcrr.read_hits);
        prop_assert_eq!(ideal.bytes_written_array, 64 * (ideal.writes + ideal.fills));
    }

    #[test]
    fn text_and_binary_roundtrip(evs in events(100, 1 << 20), insns in prop::collection::vec(prop::option::of(0u64..1_000_000), 100)) {
        let with_insns: Vec<TraceEvent> = evs
            .iter()
            .zip(insns)
            .map(|(e, n)| TraceEvent { insn_delta: n, ..e.clone() })
            .collect();
        let mut text = Vec::new();
        trace::write_text(&with_insns, &mut text).unwrap();
        let parsed = trace::parse_text(&text[..]).unwrap();
        prop_assert_eq!(parsed.events, with_insns);

        let mut bin = Vec::new();
        trace::write_binary(&evs, &mut bin).unwrap();
        let parsed = trace::read_binary(&bin[..]).unwrap();
        prop_assert_eq!(parsed.events, evs);
        prop_assert_eq!(parsed.misaligned, 0);
    }
}
