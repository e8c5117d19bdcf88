//! The registration DLOG puzzle: `g^x = H(pk | pos | r)^2 (mod p)`.
//!
//! Solving stands in for a quantum computer running Shor's algorithm. At desk
//! scale baby-step giant-step finds the exponent directly; what a party can
//! afford is governed by its [`SolverBudget`], not by wall-clock hardness.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::group::{mul_mod, pow_mod, GroupParams};
use super::hash::{reduce_be, Digest};
use super::CryptoError;

/// Element of the quadratic-residue subgroup that a registrant must take the
/// logarithm of.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PuzzleTarget {
    pub h: u64,
}

/// Exponent `x` in `[0, q)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PuzzleSolution {
    pub x: u64,
}

/// Random-oracle input `pk | pos | r` with 4-byte big-endian length prefixes.
pub fn encode_registration(pk: &[u8], pos: u64, r: &[u8]) -> Vec<u8> {
    let pos = pos.to_be_bytes();
    let mut out = Vec::with_capacity(12 + pk.len() + pos.len() + r.len());
    for field in [pk, &pos[..], r] {
        out.extend_from_slice(&(field.len() as u32).to_be_bytes());
        out.extend_from_slice(field);
    }
    out
}

/// `H(pk | pos | r)` reduced into `[1, p - 1]`; a zero residue maps to 1.
pub fn hash_to_zp(pk: &[u8], pos: u64, r: &[u8], gp: &GroupParams) -> u64 {
    let d = Digest::of(&encode_registration(pk, pos, r));
    match reduce_be(&d.0, gp.p) {
        0 => 1,
        v => v,
    }
}

/// Squares a hash residue into the subgroup.
pub fn target_from_residue(residue: u64, gp: &GroupParams) -> PuzzleTarget {
    let t = match residue % gp.p {
        0 => 1,
        v => v,
    };
    PuzzleTarget {
        h: mul_mod(t, t, gp.p),
    }
}

pub fn puzzle_target(pk: &[u8], pos: u64, r: &[u8], gp: &GroupParams) -> PuzzleTarget {
    target_from_residue(hash_to_zp(pk, pos, r, gp), gp)
}

/// Puzzle-solving allowance for one window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverBudget {
    /// Puzzles per unit of simulated time.
    pub rate: f64,
    pub remaining: u64,
}

impl SolverBudget {
    /// `floor(rate * window)` solves for a window of the given length.
    pub fn for_window(rate: f64, window: f64) -> Self {
        let raw = (rate * window).floor();
        // tolerate rate * (1 / rate) landing a hair under an integer
        let fixed = if (rate * window - raw) > 1.0 - 1e-9 {
            raw + 1.0
        } else {
            raw
        };
        Self {
            rate,
            remaining: fixed.max(0.0) as u64,
        }
    }

    pub fn unlimited() -> Self {
        Self {
            rate: f64::INFINITY,
            remaining: u64::MAX,
        }
    }

    pub fn is_exhausted(&self) -> bool {
        self.remaining == 0
    }
}

/// Baby-step giant-step table for a fixed group.
#[derive(Debug, Clone)]
pub struct DlogSolver {
    gp: GroupParams,
    step: u64,
    baby: HashMap<u64, u64>,
    giant: u64,
}

impl DlogSolver {
    pub fn new(gp: GroupParams) -> Self {
        let step = (gp.q as f64).sqrt().ceil() as u64;
        let step = step.max(1);
        let mut baby = HashMap::with_capacity(step as usize);
        let mut cur = 1u64;
        for j in 0..step {
            baby.entry(cur).or_insert(j);
            cur = mul_mod(cur, gp.g, gp.p);
        }
        // g^(-step) = g^(q - step mod q) since g has order q
        let giant = pow_mod(gp.g, (gp.q - step % gp.q) % gp.q, gp.p);
        Self {
            gp,
            step,
            baby,
            giant,
        }
    }

    pub fn params(&self) -> &GroupParams {
        &self.gp
    }

    /// Unbudgeted logarithm; `None` if `h` is outside the subgroup.
    pub fn log(&self, h: u64) -> Option<u64> {
        if !self.gp.in_subgroup(h) {
            return None;
        }
        let mut gamma = h;
        for i in 0..=self.step {
            if let Some(&j) = self.baby.get(&gamma) {
                let x = (i * self.step + j) % self.gp.q;
                return Some(x);
            }
            gamma = mul_mod(gamma, self.giant, self.gp.p);
        }
        None
    }

    /// Spends one unit of `budget` and returns the exponent.
    pub fn solve(
        &self,
        target: PuzzleTarget,
        budget: &mut SolverBudget,
    ) -> Result<PuzzleSolution, CryptoError> {
        if budget.remaining == 0 {
            return Err(CryptoError::Exhausted);
        }
        if !self.gp.in_subgroup(target.h) {
            return Err(CryptoError::NotInSubgroup(target.h));
        }
        budget.remaining -= 1;
        self.log(target.h)
            .map(|x| PuzzleSolution { x })
            .ok_or(CryptoError::NotInSubgroup(target.h))
    }
}

pub fn solve_dlog(
    gp: &GroupParams,
    target: PuzzleTarget,
    budget: &mut SolverBudget,
) -> Result<PuzzleSolution, CryptoError> {
    DlogSolver::new(*gp).solve(target, budget)
}

/// Classical check of a claimed solution.
pub fn verify_dlog(gp: &GroupParams, target: PuzzleTarget, sol: PuzzleSolution) -> bool {
    sol.x < gp.q && gp.exp(sol.x) == target.h
}
