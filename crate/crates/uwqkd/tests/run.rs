mod common;

use std::time::Instant;

use common::Link;
use uwqkd::report::key_hash;
use uwqkd::{run_experiment, Outcome, RunOptions, RunReport, StatisticsMode};
use uwqkd_core::protocol::{decode_frame, FrameType, Phase, Role};

#[test]
fn noiseless_chain_gives_identical_keys() {
    let link = Link { pulses: 1_000_000, water_db: 0.0, optics_db: 0.0, detector_efficiency: 1.0, y0: 0.0, e_d: 0.0 };
    let out = run_experiment(&link.config(), RunOptions::default()).unwrap();
    let r = &out.report;
    assert_eq!(r.outcome, Outcome::Key, "{:?}", r.flags);
    let s = r.statistics.unwrap();
    assert_eq!(s.e_mu, 0.0);
    assert_eq!(s.y0, 0.0);
    assert_eq!(r.reconciliation.unwrap().corrections, 0);
    assert_eq!(r.keys_match, Some(true));
    let a = out.alice_key.unwrap();
    assert!(!a.is_empty());
    assert_eq!(Some(a.clone()), out.bob_key);
    let hashes: Vec<_> = r.parties.iter().map(|p| p.final_key_sha256.clone().unwrap()).collect();
    assert_eq!(hashes, vec![key_hash(&a); 2]);
}

#[test]
fn reports_are_deterministic_apart_from_wall_clock() {
    let cfg = Link::bench(300_000, 3.0).config();
    let emit = || {
        let mut r = run_experiment(&cfg, RunOptions { record_transcript: true }).unwrap();
        r.report.wall_clock_s = 0.0;
        (r.report.to_json(), r.transcript)
    };
    let (a, ta) = emit();
    let (b, tb) = emit();
    assert_eq!(a, b);
    assert_eq!(ta, tb);
    let other = run_experiment(&common::with_seeds(cfg.clone(), 11, 22, 34), RunOptions::default()).unwrap();
    assert_ne!(other.report.tallies, RunReport::from_json(&a).unwrap().tallies);
}

#[test]
fn report_json_round_trips() {
    for cfg in [Link::bench(200_000, 2.0).config(), {
        let mut c = Link::bench(10_000, 16.35).config();
        c.analysis.mode = Some(StatisticsMode::Analytic);
        c
    }] {
        let r = run_experiment(&cfg, RunOptions::default()).unwrap().report;
        let text = r.to_json();
        let back = RunReport::from_json(&text).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.to_json(), text);
    }
}

#[test]
fn analytic_mode_reports_the_model() {
    let mut cfg = Link::bench(1_000_000, 16.35).config();
    cfg.analysis.mode = Some(StatisticsMode::Analytic);
    let r = run_experiment(&cfg, RunOptions::default()).unwrap().report;
    assert_eq!(r.outcome, Outcome::ModelOnly);
    assert!(r.parties.is_empty() && r.tallies.is_none());
    assert_eq!(r.key_rate, Some(r.model));
    let t = r.table.unwrap();
    assert_eq!(t.attenuation_db, 16.35);
    assert!(t.r_per_pulse > 0.0);
}

#[test]
fn heavy_frame_loss_aborts_with_counters() {
    let mut cfg = Link::bench(100_000, 3.0).config();
    cfg.protocol.frame_drop_probability = 0.5;
    let out = run_experiment(&cfg, RunOptions { record_transcript: true }).unwrap();
    let r = &out.report;
    assert_eq!(r.outcome, Outcome::Aborted);
    assert!(r.parties.iter().all(|p| p.phase == Phase::Aborted));
    assert!(r.parties.iter().map(|p| p.errors.total()).sum::<u64>() > 0);
    assert!(r.flags.iter().any(|f| f.starts_with("frames_dropped")));
    assert!(out.transcript.iter().any(|e| !e.delivered));
    assert_eq!(r.keys_match, None);
}

#[test]
fn transcript_frames_decode() {
    let out = run_experiment(&Link::bench(100_000, 3.0).config(), RunOptions { record_transcript: true }).unwrap();
    let t = &out.transcript;
    assert_eq!(t.first().unwrap().frame_type, Some(FrameType::SyncHello));
    assert_eq!(t.last().unwrap().frame_type, Some(FrameType::PaSeed));
    for (i, e) in t.iter().enumerate() {
        assert_eq!(e.index, i as u64);
        let f = decode_frame(&e.to_bytes().unwrap()).unwrap();
        assert_eq!(Some(f.frame_type), e.frame_type);
        assert_eq!(hex::encode(&f.payload), e.payload_hex);
    }
}

#[test]
fn clamped_results_are_flagged() {
    // so much loss that only background clicks remain
    let mut link = Link::bench(200_000, 45.0);
    link.y0 = 1e-3;
    let r = run_experiment(&link.config(), RunOptions::default()).unwrap().report;
    assert_eq!(r.outcome, Outcome::NoKey, "{:?}", r.parties);
    assert!(r.flags.iter().any(|f| f == "rate_clamped" || f == "no_single_photon_yield"), "{:?}", r.flags);
    assert!(r.flags.iter().any(|f| f == "no_key"));
    assert_eq!(r.final_length.map(|f| f.bits), Some(0));
    assert!(r.party(Role::Bob).unwrap().final_key_bits.unwrap_or(0) == 0);
}

#[test]
fn million_pulse_budget() {
    // a 10^7 run must finish in five minutes; hold 10^6 to a tenth of that
    let start = Instant::now();
    let r = run_experiment(&Link::bench(1_000_000, 10.22).config(), RunOptions::default()).unwrap().report;
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(r.outcome, Outcome::Key);
    assert!(elapsed < 30.0, "{elapsed} s");
}
