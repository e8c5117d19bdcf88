use qpop_core::adversary::Strategy;
use qpop_core::harness::{
    genesis_cap, genesis_seats, run_scenario, trial_stream, CommitteeChain, ScenarioConfig,
    ScenarioMode,
};
use qpop_core::reconfig::{main_loop, ParticipantSpec, RegistrationMode, World};

fn base() -> ScenarioConfig {
    let mut c = ScenarioConfig::new(7, 60);
    c.tau_reconfig = 1;
    c.dlog_bits = 18;
    c.rho = 0.25;
    // the adversary needs its own solve rate to register its devices
    c.r_a = 2.0;
    c.seed = 21;
    c.participants = (0..6)
        .map(|i| ParticipantSpec {
            id: i,
            devices: vec![10 * i as u64 + 3],
        })
        .collect();
    c
}

#[test]
fn full_run_projects_onto_chain() {
    let cfg = base();
    let wc = cfg.world_config().unwrap();
    let genesis = wc.genesis_byzantine.clone();
    let (w, _) = main_loop(World::new(wc).unwrap());
    assert!(w.admitted_byzantine.contains(&Some(true)));
    assert!(w.admitted_byzantine.contains(&Some(false)));
    let replayed = CommitteeChain::replay(&genesis, w.admitted_byzantine.iter().copied());
    assert_eq!(replayed, w.f_t);

    // both modes draw genesis from the same stream
    let mut rng = trial_stream(cfg.seed, 0);
    let g = genesis_seats(
        cfg.n,
        cfg.rho,
        cfg.genesis,
        Some(genesis_cap(cfg.n, cfg.epsilon)),
        &mut rng,
    );
    assert_eq!(g, genesis);
    let mut chain_cfg = cfg.clone();
    chain_cfg.mode = ScenarioMode::CommitteeMc;
    let chain = run_scenario(&chain_cfg).unwrap();
    assert_eq!(chain.report.f_t[0], genesis.iter().filter(|&&b| b).count());
    assert_eq!(chain.report.f_t.len(), w.f_t.len());
}

#[test]
fn same_config_same_report() {
    let mut cfg = base();
    cfg.tau_reconfig = 4;
    cfg.horizon = 16;
    cfg.t_prime = 3;
    cfg.adversary.strategies = vec![Strategy::VoteWithholder, Strategy::PositionSpoofer];
    cfg.r_a = 3.0;
    let a = run_scenario(&cfg).unwrap();
    let b = run_scenario(&cfg).unwrap();
    assert_eq!(a.report, b.report);
    assert_eq!(a.committee, b.committee);
    assert_eq!(a.log.to_jsonl(), b.log.to_jsonl());
    cfg.seed += 1;
    let c = run_scenario(&cfg).unwrap();
    assert_ne!(a.log.to_jsonl(), c.log.to_jsonl());
}

#[test]
fn silent_leader_forces_view_change() {
    let mut cfg = ScenarioConfig::new(4, 6);
    cfg.tau_reconfig = 100;
    cfg.t_prime = 4;
    cfg.rho = 0.25;
    cfg.genesis = qpop_core::harness::GenesisMode::Fixed(1);
    cfg.adversary.strategies = vec![Strategy::SilentLeader];
    // pick a seed whose first leader is the faulty seat
    while !cfg.genesis_flags().unwrap()[0] {
        cfg.seed += 1;
    }
    let out = run_scenario(&cfg).unwrap();
    let r = &out.report;
    assert!(r.view_changes >= 1);
    assert_eq!(r.txs_committed, r.txs_submitted);
    assert!(r.max_tx_latency <= 14.0 * 2.0 * cfg.delta + 10.0 * cfg.delta);
    assert!(!r.safety_violation);
}

#[test]
fn plain_registration_lets_spam_through() {
    let mut cfg = base();
    cfg.rho = 0.0;
    cfg.horizon = 3;
    cfg.r_a = 8.0;
    cfg.adversary.strategies = vec![Strategy::RegistrationSpammer {
        budget: None,
        invalid: 30,
        plain_count: 200,
    }];
    let guarded = run_scenario(&cfg).unwrap().report;
    assert!(guarded.spam.max_adversary_valid_per_round <= 8);
    assert_eq!(guarded.spam.forwarded, 0);
    assert_eq!(guarded.honest_registration_misses, 0);
    cfg.registration = RegistrationMode::Plain;
    let open = run_scenario(&cfg).unwrap().report;
    assert!(open.spam.max_adversary_valid_per_round >= 200);
}

#[test]
fn bundled_scenarios_run() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut seen = 0;
    for entry in std::fs::read_dir(dir).unwrap() {
        let path = entry.unwrap().path();
        let text = std::fs::read_to_string(&path).unwrap();
        let cfg =
            ScenarioConfig::from_json(&text).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        let out = run_scenario(&cfg).unwrap();
        assert!(!out.report.safety_violation, "{}", path.display());
        assert!(out.report.model_violations.is_empty(), "{}", path.display());
        seen += 1;
    }
    assert!(seen >= 4);
}
