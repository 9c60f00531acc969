//! Decoy-state weak-coherent-pulse transmitter.
//!
//! Each slot draws a uniform 4-bit word `b0 b1 b2 b3` (`b0` is the most
//! significant bit). `b0 b1` select the intensity class and `b2 b3` the
//! polarization:
//!
//! | b0 b1 | class   | b2 b3 | state |
//! |-------|---------|-------|-------|
//! | 00    | vacuum  | 00    | H     |
//! | 01    | decoy   | 01    | V     |
//! | 10    | signal  | 10    | P     |
//! | 11    | signal  | 11    | M     |
//!
//! so uniform words give the 2:1:1 signal:decoy:vacuum mix.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_domain, Result};
use crate::polarization::Polarization;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntensityClass {
    Signal,
    Decoy,
    Vacuum,
}

impl IntensityClass {
    pub const ALL: [IntensityClass; 3] = [IntensityClass::Signal, IntensityClass::Decoy, IntensityClass::Vacuum];

    pub fn index(self) -> usize {
        match self {
            IntensityClass::Signal => 0,
            IntensityClass::Decoy => 1,
            IntensityClass::Vacuum => 2,
        }
    }

    pub fn from_index(i: usize) -> Option<IntensityClass> {
        IntensityClass::ALL.get(i).copied()
    }
}

/// The word table above. Total on `0..16`; higher bits are ignored.
pub fn decode_random_word(word: u8) -> (IntensityClass, Polarization) {
    let class = match (word >> 2) & 0b11 {
        0b00 => IntensityClass::Vacuum,
        0b01 => IntensityClass::Decoy,
        _ => IntensityClass::Signal,
    };
    let pol = match word & 0b11 {
        0b00 => Polarization::H,
        0b01 => Polarization::V,
        0b10 => Polarization::P,
        _ => Polarization::M,
    };
    (class, pol)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SourceConfig {
    /// Mean photon number of signal pulses.
    pub mu: f64,
    /// Mean photon number of decoy pulses.
    pub nu: f64,
    /// (signal, decoy, vacuum)
    pub class_probabilities: [f64; 3],
    pub repetition_rate_hz: f64,
    pub rng_seed: u64,
}

impl SourceConfig {
    pub const WORD_PROBABILITIES: [f64; 3] = [0.5, 0.25, 0.25];

    /// μ = 0.8, ν = 0.1 at 20 MHz with word-table class probabilities.
    pub fn bench(rng_seed: u64) -> SourceConfig {
        SourceConfig {
            mu: 0.8,
            nu: 0.1,
            class_probabilities: Self::WORD_PROBABILITIES,
            repetition_rate_hz: 2.0e7,
            rng_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        ensure_domain(self.nu >= 0.0 && self.nu.is_finite(), "decoy mean photon number", self.nu)?;
        ensure_domain(self.mu > self.nu && self.mu.is_finite(), "signal mean photon number", self.mu)?;
        for p in self.class_probabilities {
            ensure_domain((0.0..=1.0).contains(&p), "class probability", p)?;
        }
        let sum: f64 = self.class_probabilities.iter().sum();
        ensure_domain((sum - 1.0).abs() <= 1e-9, "class probability sum", sum)?;
        ensure_domain(self.repetition_rate_hz > 0.0, "repetition rate", self.repetition_rate_hz)
    }

    pub fn mean_photons(&self, class: IntensityClass) -> f64 {
        match class {
            IntensityClass::Signal => self.mu,
            IntensityClass::Decoy => self.nu,
            IntensityClass::Vacuum => 0.0,
        }
    }

    /// Whether classes come straight from the 4-bit word table.
    pub fn uses_word_table(&self) -> bool {
        self.class_probabilities.iter().zip(Self::WORD_PROBABILITIES).all(|(a, b)| (a - b).abs() <= 1e-12)
    }
}

/// One emitted quantum pulse.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PulseRecord {
    pub slot_index: u64,
    pub intensity: IntensityClass,
    pub polarization: Polarization,
    pub key_bit: u8,
    pub photon_count: u32,
}

/// Poisson sample by sequential inversion; means above 32 are split into
/// chunks, which is exact because Poisson variables add.
pub fn sample_photon_number<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> Result<u32> {
    ensure_domain(mean >= 0.0 && mean.is_finite(), "mean photon number", mean)?;
    const CHUNK: f64 = 32.0;
    let mut remaining = mean;
    let mut total = 0u32;
    while remaining > 0.0 {
        let m = remaining.min(CHUNK);
        remaining -= m;
        total += poisson_inversion(m, rng);
    }
    Ok(total)
}

fn poisson_inversion<R: Rng + ?Sized>(mean: f64, rng: &mut R) -> u32 {
    let u: f64 = rng.gen();
    let mut k = 0u32;
    let mut p = libm::exp(-mean);
    let mut cdf = p;
    while u >= cdf {
        k += 1;
        p *= mean / k as f64;
        cdf += p;
        if p < f64::MIN_POSITIVE && k as f64 > mean {
            break;
        }
    }
    k
}

/// Draw the intensity class and polarization for one slot.
pub fn draw_slot<R: Rng + ?Sized>(cfg: &SourceConfig, rng: &mut R) -> (IntensityClass, Polarization) {
    let word = (rng.next_u32() & 0xF) as u8;
    if cfg.uses_word_table() {
        return decode_random_word(word);
    }
    let (_, pol) = decode_random_word(word);
    let u: f64 = rng.gen();
    let [ps, pd, _] = cfg.class_probabilities;
    let class = if u < ps {
        IntensityClass::Signal
    } else if u < ps + pd {
        IntensityClass::Decoy
    } else {
        IntensityClass::Vacuum
    };
    (class, pol)
}

pub fn generate_pulse<R: Rng + ?Sized>(cfg: &SourceConfig, slot_index: u64, rng: &mut R) -> PulseRecord {
    let (intensity, polarization) = draw_slot(cfg, rng);
    let photon_count = match intensity {
        IntensityClass::Vacuum => 0,
        // the mean was validated with the config
        class => sample_photon_number(cfg.mean_photons(class), rng).unwrap_or(0),
    };
    PulseRecord { slot_index, intensity, polarization, key_bit: polarization.bit(), photon_count }
}

pub fn generate_pulse_train<R: Rng + ?Sized>(cfg: &SourceConfig, count: usize, rng: &mut R) -> Vec<PulseRecord> {
    (0..count as u64).map(|slot| generate_pulse(cfg, slot, rng)).collect()
}

/// Class probabilities (signal, decoy, vacuum) implied by the configuration.
pub fn expected_class_distribution(cfg: &SourceConfig) -> [f64; 3] {
    if !cfg.uses_word_table() {
        return cfg.class_probabilities;
    }
    let mut counts = [0u32; 3];
    for word in 0..16u8 {
        counts[decode_random_word(word).0.index()] += 1;
    }
    counts.map(|c| c as f64 / 16.0)
}
