//! Byzantine strategies and the capability limits they run under.

use serde::{Deserialize, Serialize};

use crate::crypto::{CryptoError, DlogSolver, PuzzleSolution, PuzzleTarget, SolverBudget};
use crate::cvpv::{CellIndex, ParticipantId};
use crate::pbft::PbftFault;
use crate::simnet::{DelayPolicyKind, SimTime};

/// Owner id of every adversary-controlled device and key.
pub const ADVERSARY: ParticipantId = u32::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Strategy {
    SilentLeader,
    EquivocatingLeader,
    VoteWithholder,
    /// Publishes `invalid` bad-solution registrations each round, plus up to
    /// `budget` valid ones at cells holding no device (all of the remaining
    /// solve budget when absent). In plain mode `budget` caps nothing, so
    /// `plain_count` spoofed positions are published instead.
    RegistrationSpammer {
        #[serde(default)]
        budget: Option<u64>,
        #[serde(default)]
        invalid: u64,
        #[serde(default = "default_plain_count")]
        plain_count: u64,
    },
    /// Registers one cell without any device each round.
    PositionSpoofer,
    /// Moves one device between two cells every round and registers both.
    DoubleRegistrant,
    /// Sends inconsistent votes during position-verification agreement.
    BaSaboteur,
    DelayMaximizer,
}

fn default_plain_count() -> u64 {
    100
}

impl Strategy {
    pub fn pbft_fault(&self) -> Option<PbftFault> {
        match self {
            Strategy::SilentLeader => Some(PbftFault::SilentLeader),
            Strategy::EquivocatingLeader => Some(PbftFault::EquivocatingLeader),
            Strategy::VoteWithholder => Some(PbftFault::VoteWithholder),
            Strategy::DelayMaximizer => Some(PbftFault::DelayMaximizer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversaryConfig {
    /// Fraction of all quantum devices the adversary controls.
    pub rho: f64,
    pub strategies: Vec<Strategy>,
    /// Puzzle solves per second, `R_A`.
    pub r_a_rate: f64,
    /// Overrides the position-verification soundness error.
    pub break_prob: Option<f64>,
    pub delay_policy: DelayPolicyKind,
    /// Cells of adversary devices. When empty, devices are placed so the
    /// adversary holds a `rho` fraction of all devices.
    pub devices: Vec<CellIndex>,
}

impl Default for AdversaryConfig {
    fn default() -> Self {
        Self {
            rho: 0.0,
            strategies: Vec::new(),
            r_a_rate: 0.0,
            break_prob: None,
            delay_policy: DelayPolicyKind::Uniform,
            devices: Vec::new(),
        }
    }
}

impl AdversaryConfig {
    pub fn validate(&self) -> Result<(), String> {
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(format!("adversary.rho = {} is outside [0, 1]", self.rho));
        }
        if !(self.r_a_rate >= 0.0) || !self.r_a_rate.is_finite() {
            return Err("adversary.r_a_rate must be finite and non-negative".into());
        }
        if let Some(p) = self.break_prob {
            if !(0.0..=1.0).contains(&p) {
                return Err(format!("adversary.break_prob = {p} is outside [0, 1]"));
            }
        }
        Ok(())
    }

    pub fn has(&self, pred: impl Fn(&Strategy) -> bool) -> bool {
        self.strategies.iter().any(pred)
    }

    /// Committee-level faults, assigned round-robin to Byzantine members.
    pub fn pbft_faults(&self) -> Vec<PbftFault> {
        self.strategies
            .iter()
            .filter_map(Strategy::pbft_fault)
            .collect()
    }

    pub fn spammer(&self) -> Option<(Option<u64>, u64, u64)> {
        self.strategies.iter().find_map(|s| match *s {
            Strategy::RegistrationSpammer {
                budget,
                invalid,
                plain_count,
            } => Some((budget, invalid, plain_count)),
            _ => None,
        })
    }

    /// Number of devices giving the adversary a `rho` share next to
    /// `honest` honest devices.
    pub fn device_count(&self, honest: usize) -> usize {
        if !self.devices.is_empty() {
            return self.devices.len();
        }
        if self.rho >= 1.0 {
            return honest.max(1);
        }
        (self.rho * honest as f64 / (1.0 - self.rho)).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelViolation {
    /// A solve attempt beyond `floor(R_A * tau_register)`.
    SolveBudgetExceeded,
    /// A message delay above Δ (clamped by the network).
    DelayAboveDelta,
    /// A signature under a key the adversary does not hold.
    ForgedSignature,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ViolationRecord {
    pub t: f64,
    pub violation: ModelViolation,
}

/// Gatekeeper for what the adversary may do.
#[derive(Debug, Clone, Default)]
pub struct Capabilities {
    violations: Vec<ViolationRecord>,
}

impl Capabilities {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn violations(&self) -> &[ViolationRecord] {
        &self.violations
    }

    pub fn block(&mut self, t: SimTime, violation: ModelViolation) {
        self.violations.push(ViolationRecord {
            t: t.as_secs_f64(),
            violation,
        });
    }

    /// One budgeted solve; an attempt with no budget left is blocked.
    pub fn try_solve(
        &mut self,
        solver: &DlogSolver,
        target: PuzzleTarget,
        budget: &mut SolverBudget,
        t: SimTime,
    ) -> Option<PuzzleSolution> {
        match solver.solve(target, budget) {
            Ok(x) => Some(x),
            Err(CryptoError::Exhausted) => {
                self.block(t, ModelViolation::SolveBudgetExceeded);
                None
            }
            Err(_) => None,
        }
    }
}
