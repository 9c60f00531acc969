//! Sharded Monte-Carlo simulation of the quantum link.
//!
//! Slots are cut into fixed shards of [`SHARD_SLOTS`]. Shard `k` draws from
//! stream `k` of each party's seed: Alice's seed drives the source, the
//! channel seed drives photon loss in the water and receiver optics, and
//! Bob's seed drives basis choice, detector efficiency, routing and dark
//! counts. Shards run on the rayon pool and are merged in index order, so
//! the result does not depend on the number of workers.
//!
//! The same two halves serve the two-process mode: Alice's process runs
//! [`emit_shard`] and ships the photons, Bob's runs [`receive_shard`].

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use uwqkd_core::detection::{choose_basis, measure, thin, Arrival, DetectorConfig};
use uwqkd_core::polarization::Polarization;
use uwqkd_core::protocol::{AliceSlot, BobClick, QuantumBatch};
use uwqkd_core::rng::substream;
use uwqkd_core::source::{generate_pulse, SourceConfig};

use crate::config::{ConfigError, ExperimentConfig, Seeds};

pub const SHARD_SLOTS: u64 = 1 << 16;

/// Physical parameters of one simulated link.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkModel {
    pub source: SourceConfig,
    /// Water and receiver optics, excluding detector efficiency.
    pub channel_eta: f64,
    pub detector: DetectorConfig,
    pub misalignment_theta: f64,
}

impl LinkModel {
    pub fn from_config(cfg: &ExperimentConfig) -> Result<LinkModel, ConfigError> {
        let rx = cfg.receiver_loss()?;
        let det = cfg.detector_params()?;
        Ok(LinkModel {
            source: cfg.source_config()?,
            channel_eta: cfg.channel_eta()?,
            detector: det.detector_config(rx.detector_efficiency),
            misalignment_theta: det.theta(),
        })
    }

    /// End-to-end transmittance including detector efficiency.
    pub fn total_eta(&self) -> f64 {
        self.channel_eta * self.detector.detector_efficiency
    }
}

/// What leaves Alice's transmitter in one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emission {
    pub polarization: Polarization,
    pub photons: u32,
}

pub fn shard_count(pulses: u64) -> u64 {
    pulses.div_ceil(SHARD_SLOTS)
}

pub fn shard_range(pulses: u64, k: u64) -> std::ops::Range<u64> {
    let start = k * SHARD_SLOTS;
    start..(start + SHARD_SLOTS).min(pulses)
}

/// Alice's slots for shard `k`: what she remembers and what she sends.
pub fn emit_shard(model: &LinkModel, alice_seed: u64, pulses: u64, k: u64) -> (Vec<AliceSlot>, Vec<Emission>) {
    let mut rng = substream(alice_seed, k);
    shard_range(pulses, k)
        .map(|slot| {
            let p = generate_pulse(&model.source, slot, &mut rng);
            (AliceSlot::from(&p), Emission { polarization: p.polarization, photons: p.photon_count })
        })
        .unzip()
}

/// Channel loss and detection for shard `k`. Only clicks are kept; the
/// second value counts slots where Bob's basis matched Alice's.
pub fn receive_shard(
    model: &LinkModel,
    seeds: &Seeds,
    pulses: u64,
    k: u64,
    emitted: &[Emission],
) -> (Vec<BobClick>, u64) {
    let mut channel = substream(seeds.channel, k);
    let mut bob = substream(seeds.bob, k);
    let mut agreements = 0;
    let clicks = shard_range(pulses, k)
        .zip(emitted)
        .filter_map(|(slot, e)| {
            let photons = thin(e.photons, model.channel_eta, &mut channel);
            let arrival = Arrival { slot_index: slot, polarization: e.polarization, photons };
            let basis = choose_basis(&mut bob);
            agreements += u64::from(basis == e.polarization.basis());
            let ev = measure(&arrival, basis, &model.detector, model.misalignment_theta, &mut bob);
            ev.outcome.clicked().then_some(BobClick { slot, basis, bit: ev.outcome.bit() })
        })
        .collect();
    (clicks, agreements)
}

/// Ground truth only the simulator sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimulationSummary {
    pub pulses: u64,
    /// Slots, clicked or not, where the two bases agreed.
    pub basis_agreements: u64,
}

/// Both halves of the link for `pulses` slots.
pub fn simulate(model: &LinkModel, seeds: &Seeds, pulses: u64) -> (QuantumBatch, QuantumBatch, SimulationSummary) {
    let shards: Vec<_> = (0..shard_count(pulses))
        .into_par_iter()
        .map(|k| {
            let (slots, emitted) = emit_shard(model, seeds.alice, pulses, k);
            (slots, receive_shard(model, seeds, pulses, k, &emitted))
        })
        .collect();
    let mut alice = Vec::with_capacity(pulses as usize);
    let mut clicks = Vec::new();
    let mut summary = SimulationSummary { pulses, basis_agreements: 0 };
    for (s, (c, agree)) in shards {
        alice.extend(s);
        clicks.extend(c);
        summary.basis_agreements += agree;
    }
    (QuantumBatch::Alice(alice), QuantumBatch::Bob { total_slots: pulses, clicks }, summary)
}
