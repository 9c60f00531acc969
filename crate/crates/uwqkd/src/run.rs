//! Single-process experiments.

use std::time::Instant;

use rand::Rng;

use uwqkd_core::analysis::{estimate_key_rate, model_statistics, KeyRateReport};
use uwqkd_core::protocol::{run_pair, Direction, Role, Session, SessionConfig};
use uwqkd_core::rng::{substream, SimRng, TRANSPORT_STREAM};

use crate::config::{ConfigError, ExperimentConfig, StatisticsMode};
use crate::report::{
    collect_flags, outcome_of, rate_flags, standard_notes, LinkSummary, Outcome, PartySummary, RunReport, TableRow,
    Topology, REPORT_SCHEMA,
};
use crate::sim::{simulate, LinkModel};
use crate::transcript::TranscriptEntry;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct RunOptions {
    pub record_transcript: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub report: RunReport,
    pub transcript: Vec<TranscriptEntry>,
    pub alice_key: Option<Vec<u8>>,
    pub bob_key: Option<Vec<u8>>,
}

impl RunOutput {
    pub fn aborted(&self) -> bool {
        self.report.outcome == Outcome::Aborted
    }
}

pub(crate) fn tool_name() -> String {
    format!("uwqkd {}", env!("CARGO_PKG_VERSION"))
}

/// Frame-drop coin for one direction of the classical link.
pub fn transport_rng(channel_seed: u64, direction: Direction) -> SimRng {
    match direction {
        Direction::AliceToBob => substream(channel_seed, TRANSPORT_STREAM),
        Direction::BobToAlice => substream(channel_seed, TRANSPORT_STREAM - 1),
    }
}

/// Whether the next frame survives the transport.
pub fn deliver(rng: &mut SimRng, drop_probability: f64) -> bool {
    drop_probability <= 0.0 || rng.gen::<f64>() >= drop_probability
}

pub fn session_config(cfg: &ExperimentConfig, role: Role) -> Result<SessionConfig, ConfigError> {
    let src = cfg.source_config()?;
    Ok(SessionConfig {
        role,
        config_digest: cfg.digest(),
        mu: src.mu,
        nu: src.nu,
        rate: cfg.rate_params()?,
        qber_sample_fraction: cfg.protocol.qber_sample_fraction,
        seed: match role {
            Role::Alice => cfg.seeds.alice,
            Role::Bob => cfg.seeds.bob,
        },
    })
}

pub fn link_summary(cfg: &ExperimentConfig) -> Result<LinkSummary, ConfigError> {
    let rx = cfg.receiver_loss()?;
    let det = cfg.detector_params()?;
    let model = LinkModel::from_config(cfg)?;
    let water = cfg.channel_spec()?.loss_db();
    Ok(LinkSummary {
        water_loss_db: water,
        receiver_optics_db: rx.optics_loss_db,
        detector_efficiency: rx.detector_efficiency,
        total_loss_db: water + rx.total_db(),
        channel_eta: model.channel_eta,
        total_eta: model.total_eta(),
        vacuum_yield: det.vacuum_yield,
        misalignment_error: det.misalignment_error,
        misalignment_deg: det.misalignment_deg,
    })
}

pub fn model_key_rate(cfg: &ExperimentConfig) -> Result<KeyRateReport, ConfigError> {
    let link = link_summary(cfg)?;
    let src = cfg.source_config()?;
    let s = model_statistics(link.vacuum_yield, link.total_eta, link.misalignment_error, src.mu, src.nu);
    Ok(estimate_key_rate(&s, &cfg.rate_params()?))
}

/// Report skeleton shared by every topology; the caller fills in results.
pub(crate) fn base_report(cfg: &ExperimentConfig, topology: Topology) -> Result<RunReport, ConfigError> {
    cfg.validate()?;
    let link = link_summary(cfg)?;
    let model = model_key_rate(cfg)?;
    Ok(RunReport {
        schema: REPORT_SCHEMA,
        tool: tool_name(),
        topology,
        mode: cfg.mode(),
        config: cfg.clone(),
        config_digest: hex::encode(cfg.digest()),
        link,
        model,
        simulation: None,
        tallies: None,
        statistics: None,
        bounds: None,
        key_rate: None,
        table: None,
        reconciliation: None,
        final_length: None,
        parties: Vec::new(),
        outcome: Outcome::ModelOnly,
        keys_match: None,
        flags: Vec::new(),
        notes: standard_notes(cfg),
        wall_clock_s: 0.0,
    })
}

/// Copies the measured results of `primary` into the report.
pub(crate) fn fill_from_sessions(report: &mut RunReport, primary: &Session, parties: Vec<PartySummary>, dropped: u64) {
    let r = primary.report();
    report.tallies = Some(r.tallies);
    report.statistics = r.statistics;
    report.key_rate = r.key_rate;
    report.bounds = r.key_rate.map(|k| k.bounds);
    report.table = r.key_rate.map(|k| TableRow::new(report.link.water_loss_db, &k));
    report.reconciliation = r.reconciliation;
    report.final_length = r.final_length;
    report.flags = collect_flags(r.key_rate.as_ref(), r.final_length.as_ref(), &parties, dropped);
    report.outcome = outcome_of(&parties);
    report.parties = parties;
}

/// Runs one experiment in this process. Protocol aborts are reported in the
/// returned report, not as errors.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions) -> Result<RunOutput, ConfigError> {
    let start = Instant::now();
    let mut report = base_report(cfg, Topology::InProcess)?;
    if cfg.mode() == StatisticsMode::Analytic {
        let k = report.model;
        report.statistics = Some(k.statistics);
        report.bounds = Some(k.bounds);
        report.key_rate = Some(k);
        report.table = Some(TableRow::new(report.link.water_loss_db, &k));
        rate_flags(&k, "", &mut report.flags);
        report.wall_clock_s = start.elapsed().as_secs_f64();
        return Ok(RunOutput { report, transcript: Vec::new(), alice_key: None, bob_key: None });
    }

    let model = LinkModel::from_config(cfg)?;
    let (alice_batch, bob_batch, summary) = simulate(&model, &cfg.seeds, cfg.pulses);
    report.simulation = Some(summary);
    let mut alice = Session::new(session_config(cfg, Role::Alice)?);
    let mut bob = Session::new(session_config(cfg, Role::Bob)?);
    let p_drop = cfg.protocol.frame_drop_probability;
    let mut coins = [
        transport_rng(cfg.seeds.channel, Direction::AliceToBob),
        transport_rng(cfg.seeds.channel, Direction::BobToAlice),
    ];
    let mut transcript = Vec::new();
    let mut index = 0u64;
    let mut dropped = 0u64;
    run_pair(&mut alice, &mut bob, alice_batch, bob_batch, |dir, bytes| {
        let coin = &mut coins[usize::from(dir == Direction::BobToAlice)];
        let delivered = deliver(coin, p_drop);
        dropped += u64::from(!delivered);
        if opts.record_transcript {
            transcript.push(TranscriptEntry::from_bytes(index, dir, bytes, delivered));
        }
        index += 1;
        delivered
    });

    let parties = vec![PartySummary::of(&alice), PartySummary::of(&bob)];
    fill_from_sessions(&mut report, &bob, parties, dropped);
    let alice_key = alice.final_key().map(<[u8]>::to_vec);
    let bob_key = bob.final_key().map(<[u8]>::to_vec);
    if report.outcome != Outcome::Aborted {
        report.keys_match = Some(alice_key == bob_key);
        if alice.report().statistics != bob.report().statistics {
            report.flags.push("party_statistics_differ".into());
        }
    }
    report.wall_clock_s = start.elapsed().as_secs_f64();
    Ok(RunOutput { report, transcript, alice_key, bob_key })
}
