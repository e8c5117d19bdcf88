//! Deterministic simulator of a committee-based BFT protocol whose Sybil
//! resistance comes from verified physical positions of quantum devices.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod adversary;
pub mod beacon;
pub mod crypto;
pub mod cvpv;
pub mod error;
pub mod harness;
pub mod pbft;
pub mod reconfig;
pub mod simnet;

pub use adversary::{AdversaryConfig, Strategy};
pub use crypto::{GroupParams, KeyPair, PublicKey};
pub use cvpv::{CellIndex, ParticipantId};
pub use error::{Error, Result};
pub use harness::{
    committee_mc, run_scenario, McEstimate, MetricsReport, ScenarioConfig, ScenarioMode,
};
pub use simnet::SimTime;
