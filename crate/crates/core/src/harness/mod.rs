//! Configuration, scenario runs, the committee Monte Carlo and exports.

mod export;
mod mc;
mod scenario;

pub use export::{
    committee_csv, metrics_json, read_committee_csv, read_metrics, render_report,
    write_committee_csv, write_outputs, Format, COMMITTEE_CSV, EVENTS_JSONL, METRICS_JSON,
};
pub use mc::{
    chernoff_bound, committee_mc, committee_mc_with, genesis_cap, genesis_seats, trial_stream,
    unsafe_threshold, wilson, CommitteeChain, GenesisMode, McEstimate, McParams, TiltedTail, Z95,
};
pub use scenario::{
    participant_label, run_scenario, MetricsReport, ScenarioConfig, ScenarioMode, ScenarioOutput,
};
