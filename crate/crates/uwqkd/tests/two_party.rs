mod common;

use std::net::TcpListener;
use std::thread;

use common::Link;
use uwqkd::net::{connect, serve};
use uwqkd::{run_experiment, ExperimentConfig, Outcome, RunOptions, RunOutput, Topology};
use uwqkd_core::protocol::{decode_frame, FrameType, Phase, Role};

fn over_loopback(alice: ExperimentConfig, bob: ExperimentConfig) -> (RunOutput, RunOutput) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let opts = RunOptions { record_transcript: true };
    let server = thread::spawn(move || serve(&alice, &listener, opts).unwrap());
    let b = connect(&bob, addr, opts).unwrap();
    (server.join().unwrap(), b)
}

#[test]
fn loopback_matches_in_process() {
    let cfg = Link::bench(100_000, 3.0).config();
    let (a, b) = over_loopback(cfg.clone(), cfg.clone());
    let local = run_experiment(&cfg, RunOptions { record_transcript: true }).unwrap();

    assert_eq!(a.report.topology, Topology::Alice);
    assert_eq!(b.report.topology, Topology::Bob);
    for side in [&a, &b] {
        assert_eq!(side.report.outcome, Outcome::Key, "{:?}", side.report.flags);
        assert_eq!(side.report.statistics, local.report.statistics);
        assert_eq!(side.report.final_length, local.report.final_length);
    }
    assert_eq!(a.alice_key, local.alice_key);
    assert_eq!(b.bob_key, local.bob_key);
    assert_eq!(a.alice_key, b.bob_key);
    let hash = |o: &RunOutput, r: Role| o.report.party(r).unwrap().final_key_sha256.clone().unwrap();
    assert_eq!(hash(&a, Role::Alice), hash(&b, Role::Bob));
    assert_eq!(hash(&a, Role::Alice), hash(&local, Role::Alice));

    // each side records the frames it sent and received, in the order the
    // in-process run exchanged them
    let bytes = |o: &RunOutput| o.transcript.iter().map(|e| e.to_bytes().unwrap()).collect::<Vec<_>>();
    assert_eq!(bytes(&a), bytes(&local));
    assert_eq!(bytes(&b), bytes(&local));
}

#[test]
fn mismatched_seeds_abort_both_sides() {
    let cfg = Link::bench(50_000, 3.0).config();
    let other = common::with_seeds(cfg.clone(), 1, 2, 3);
    let (a, b) = over_loopback(cfg, other);
    for side in [&a, &b] {
        assert_eq!(side.report.outcome, Outcome::Aborted);
        assert!(side.report.parties.iter().all(|p| p.phase == Phase::Aborted && p.final_key_sha256.is_none()));
        assert!(side
            .transcript
            .iter()
            .any(|e| e.frame_type == Some(FrameType::Abort) && decode_frame(&e.to_bytes().unwrap()).is_ok()));
    }
}

#[test]
fn lossy_classical_link_aborts() {
    let mut cfg = Link::bench(50_000, 3.0).config();
    cfg.protocol.frame_drop_probability = 0.5;
    cfg.protocol.timeout_ms = 300;
    let (a, b) = over_loopback(cfg.clone(), cfg);
    for side in [&a, &b] {
        assert_eq!(side.report.outcome, Outcome::Aborted);
        assert!(side.report.parties[0].abort.is_some());
    }
    assert!(a.report.flags.iter().chain(&b.report.flags).any(|f| f.starts_with("frames_dropped")));
}
