mod common;

use asymm::config::{Delivery, StopKind};
use asymm::io;
use asymm::node::Task;
use asymm::reference::{equivalence_check, extract_block_schedule, inexact_mm_run, verify_trace};
use asymm::simulator::{self, checks};

const TOL: f64 = 1e-12;

#[test]
fn asymm_matches_schedule_driven_inexact_mm() {
    for (nodes, dim) in [(2, 1), (3, 2), (5, 2), (5, 1)] {
        for seed in 0..3 {
            let cfg = common::small_config(nodes, dim, seed, 6000);
            let setup = cfg.build().unwrap();
            let trace = simulator::run(&cfg).unwrap();
            assert!(trace.rounds.len() >= 10, "N={nodes} n={dim} seed {seed}: {} rounds", trace.rounds.len());
            let report = verify_trace(&trace, &setup.spec, &setup.graph, &setup.settings.node.policy, TOL).unwrap();
            assert!(report.pass, "N={nodes} n={dim} seed {seed}\n{}", report.summary());
            assert_eq!(report.rounds_compared, trace.rounds.len());
        }
    }
}

#[test]
fn injected_multiplier_fault_is_located() {
    let cfg = common::small_config(4, 2, 11, 3000);
    let setup = cfg.build().unwrap();
    let mut trace = simulator::run(&cfg).unwrap();
    let schedule = extract_block_schedule(&trace).unwrap();
    let mm = inexact_mm_run(&setup.spec, &setup.graph, &schedule, &setup.settings.node.policy, &trace.initial, schedule.round_count()).unwrap();
    let clean = equivalence_check(&trace, &mm, TOL);
    assert!(clean.pass, "{}", clean.summary());

    trace.rounds[6].snapshot.multipliers.nodes[2].mu[0] += 1e-9;
    let report = equivalence_check(&trace, &mm, TOL);
    assert!(!report.pass);
    let d = report.first_divergence.unwrap();
    assert_eq!((d.round, d.node, d.field), (6, 2, "multipliers"));
}

#[test]
fn broken_permutation_is_rejected_by_extraction() {
    let cfg = common::small_config(3, 2, 2, 1500);
    let mut trace = simulator::run(&cfg).unwrap();
    let idx: Vec<usize> = trace.events.iter().enumerate().filter(|(_, e)| e.task == Task::T2).map(|(i, _)| i).take(2).collect();
    let other = trace.events[idx[0]].node;
    trace.events[idx[1]].node = other;
    assert!(extract_block_schedule(&trace).is_err());
    assert!(checks::multiplier_cycles_are_permutations(&trace).is_err());
}

#[test]
fn traces_satisfy_structural_checks() {
    for seed in 0..5 {
        let cfg = common::small_config(6, 2, seed, 5000);
        let trace = simulator::run(&cfg).unwrap();
        checks::all(&trace).unwrap();
        let schedule = extract_block_schedule(&trace).unwrap();
        let window = schedule.cyclic_window(6).expect("every node is drawn");
        assert!(schedule.is_essentially_cyclic(6, window));
        assert!(!schedule.is_essentially_cyclic(6, window - 1));
    }
}

#[test]
fn empty_trace_compares_vacuously() {
    let cfg = common::small_config(3, 2, 0, 0);
    let setup = cfg.build().unwrap();
    let trace = simulator::run(&cfg).unwrap();
    assert!(trace.events.is_empty());
    let report = verify_trace(&trace, &setup.spec, &setup.graph, &setup.settings.node.policy, TOL).unwrap();
    assert!(report.pass);
    assert_eq!(report.warnings.len(), 1);
}

#[test]
fn runs_are_deterministic() {
    let cfg = common::small_config(7, 2, 5, 4000);
    let a = io::encode_trace(&simulator::run(&cfg).unwrap()).unwrap();
    let b = io::encode_trace(&simulator::run(&cfg).unwrap()).unwrap();
    assert_eq!(a, b);
    let other = common::small_config(7, 2, 6, 4000);
    assert_ne!(a, io::encode_trace(&simulator::run(&other).unwrap()).unwrap());
}

#[test]
fn delayed_delivery_is_observationally_immediate() {
    // messages only matter when the recipient wakes, so delivering them at
    // its next wake-up cannot change what it computes
    let cfg = common::small_config(6, 2, 3, 4000);
    let delayed = asymm::SimConfig { delivery: Delivery::Delayed, ..cfg.clone() };
    assert_eq!(
        io::encode_trace(&simulator::run(&cfg).unwrap()).unwrap(),
        io::encode_trace(&simulator::run(&delayed).unwrap()).unwrap()
    );
}

#[test]
fn threshold_stop_ends_early() {
    let cfg = asymm::SimConfig {
        stop_mode: StopKind::Threshold,
        stop_xi: 1e-3,
        stop_consensus: 1e-3,
        ..common::small_config(4, 2, 1, 20_000)
    };
    let setup = cfg.build().unwrap();
    let trace = simulator::run(&cfg).unwrap();
    assert!((trace.events.len() as u64) < cfg.max_iter);
    let last = &trace.rounds.last().unwrap().snapshot.x;
    assert!(asymm::problem::infeasibility(&setup.spec, &setup.graph, last).unwrap() <= 1e-3);
}
