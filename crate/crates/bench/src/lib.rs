//! Fixtures shared by the benchmarks.

use qpop_core::crypto::{
    derive_group, puzzle_target, GroupParams, GroupPreset, KeyPair, PuzzleTarget,
};
use qpop_core::pbft::{PbftConfig, PbftEngine, PbftMember, Tx};
use qpop_core::simnet::{EventLog, NetworkConfig, SimTime};

pub fn group(bits: u32) -> GroupParams {
    derive_group(GroupPreset::Bits(bits)).expect("supported size")
}

/// Registration puzzles for `count` fresh keys.
pub fn puzzles(gp: &GroupParams, count: u64) -> Vec<PuzzleTarget> {
    (0..count)
        .map(|i| {
            let pk = KeyPair::derive(1, "bench", i).public();
            puzzle_target(pk.as_bytes(), i, b"round", gp)
        })
        .collect()
}

/// An all-honest committee of `n`.
pub fn engine(n: u64, seed: u64) -> PbftEngine {
    let members = (0..n)
        .map(|i| PbftMember::honest(KeyPair::derive(seed, "bench", i)))
        .collect();
    let net = NetworkConfig::new(SimTime::from_secs(1), 1.0, 100.0).expect("valid network");
    PbftEngine::new(
        PbftConfig::default(),
        net,
        members,
        seed,
        EventLog::new(false),
    )
}

pub fn txs(period: u64, count: u64) -> Vec<Tx> {
    (0..count)
        .map(|i| Tx {
            id: period * count + i,
            input: period * count + i,
            amount: 1,
        })
        .collect()
}
