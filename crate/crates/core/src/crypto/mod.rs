//! Signatures, hashing, safe-prime group arithmetic and the registration puzzle.

pub mod group;
pub mod hash;
pub mod puzzle;
pub mod sig;

pub use group::{derive_group, is_prime, pow_mod, GroupParams, GroupPreset};
pub use hash::Digest;
pub use puzzle::{
    puzzle_target, solve_dlog, verify_dlog, DlogSolver, PuzzleSolution, PuzzleTarget, SolverBudget,
};
pub use sig::{sign, verify, KeyPair, PublicKey, Signature};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CryptoError {
    #[error("{which} = {value} is not prime")]
    NotPrime { which: &'static str, value: u64 },
    #[error("p = {p} is not 2q + 1 for q = {q}")]
    NotSafePrime { p: u64, q: u64 },
    #[error("g = {g} does not generate the quadratic residues mod {p}")]
    BadGenerator { g: u64, p: u64 },
    #[error("no safe-prime preset for {0} bits (supported: 3..=63)")]
    UnsupportedBits(u32),
    #[error("{0} is not in the quadratic-residue subgroup")]
    NotInSubgroup(u64),
    #[error("solver budget exhausted")]
    Exhausted,
}
