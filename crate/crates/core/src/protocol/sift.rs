use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::analysis::DecoyStatistics;
use crate::detection::DetectionEvent;
use crate::error::{Error, Result};
use crate::polarization::{Basis, Polarization};
use crate::source::{IntensityClass, PulseRecord};

/// What the sender keeps about one slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AliceSlot {
    pub intensity: IntensityClass,
    pub polarization: Polarization,
}

impl AliceSlot {
    pub fn basis(self) -> Basis {
        self.polarization.basis()
    }

    pub fn bit(self) -> u8 {
        self.polarization.bit()
    }
}

impl From<&PulseRecord> for AliceSlot {
    fn from(p: &PulseRecord) -> Self {
        AliceSlot { intensity: p.intensity, polarization: p.polarization }
    }
}

/// One slot in which the receiver registered a click.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftRecord {
    pub slot_index: u64,
    pub intensity: IntensityClass,
    /// Bases agree and the receiver holds a bit.
    pub matched: bool,
    pub alice_bit: u8,
    pub bob_bit: Option<u8>,
}

/// Pairs the sender's slots with the receiver's events and keeps every slot
/// with a click, in slot order. Vacuum slots are kept for the tallies; they
/// never contribute key bits (see [`sifted_key`]).
pub fn sift(alice: &[AliceSlot], bob: &[DetectionEvent]) -> Result<Vec<SiftRecord>> {
    if alice.len() != bob.len() {
        return Err(Error::LengthMismatch { expected: alice.len(), actual: bob.len() });
    }
    Ok(alice
        .iter()
        .zip(bob)
        .enumerate()
        .filter(|(_, (_, e))| e.outcome.clicked())
        .map(|(i, (a, e))| {
            let bob_bit = e.outcome.bit();
            SiftRecord {
                slot_index: i as u64,
                intensity: a.intensity,
                matched: a.basis() == e.basis && bob_bit.is_some(),
                alice_bit: a.bit(),
                bob_bit,
            }
        })
        .collect())
}

/// Both sides' bits over matched non-vacuum slots.
pub fn sifted_key(records: &[SiftRecord]) -> (Vec<u8>, Vec<u8>) {
    records
        .iter()
        .filter(|r| r.matched && r.intensity != IntensityClass::Vacuum)
        .map(|r| (r.alice_bit, r.bob_bit.unwrap_or(0)))
        .unzip()
}

/// Per-class counts, indexed by [`IntensityClass::index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ClassTallies {
    pub pulses: [u64; 3],
    pub clicks: [u64; 3],
    pub matched: [u64; 3],
    /// Matched slots whose two bits were compared.
    pub compared: [u64; 3],
    pub errors: [u64; 3],
}

impl ClassTallies {
    pub fn gain(&self, c: IntensityClass) -> f64 {
        let i = c.index();
        self.clicks[i] as f64 / self.pulses[i] as f64
    }

    /// Error fraction among compared bits; zero when nothing was compared.
    pub fn error_rate(&self, c: IntensityClass) -> f64 {
        let i = c.index();
        if self.compared[i] == 0 {
            0.0
        } else {
            self.errors[i] as f64 / self.compared[i] as f64
        }
    }

    pub fn total_clicks(&self) -> u64 {
        self.clicks.iter().sum()
    }

    pub fn total_matched(&self) -> u64 {
        self.matched.iter().sum()
    }

    pub fn statistics(&self, mu: f64, nu: f64) -> Result<DecoyStatistics> {
        for c in IntensityClass::ALL {
            if self.pulses[c.index()] == 0 {
                return Err(Error::MissingClass(match c {
                    IntensityClass::Signal => "signal",
                    IntensityClass::Decoy => "decoy",
                    IntensityClass::Vacuum => "vacuum",
                }));
            }
        }
        Ok(DecoyStatistics {
            q_mu: self.gain(IntensityClass::Signal),
            e_mu: self.error_rate(IntensityClass::Signal),
            q_nu: self.gain(IntensityClass::Decoy),
            e_nu: self.error_rate(IntensityClass::Decoy),
            y0: self.gain(IntensityClass::Vacuum),
            mu,
            nu,
        })
    }
}

/// Tallies with full knowledge of both sides: every matched click is compared.
pub fn tally(records: &[SiftRecord], class_totals: [u64; 3]) -> ClassTallies {
    let mut t = ClassTallies { pulses: class_totals, ..ClassTallies::default() };
    for r in records {
        let i = r.intensity.index();
        t.clicks[i] += 1;
        if let (true, Some(b)) = (r.matched, r.bob_bit) {
            t.matched[i] += 1;
            t.compared[i] += 1;
            t.errors[i] += u64::from(b != r.alice_bit);
        }
    }
    t
}

/// Measured gains and error rates per class. `Q_c` counts clicks over all
/// slots of the class, `E_c` is the wrong-bit fraction over matched clicks,
/// and `Y0` is the vacuum gain.
pub fn partition_by_intensity(
    records: &[SiftRecord],
    class_totals: [u64; 3],
    mu: f64,
    nu: f64,
) -> Result<DecoyStatistics> {
    tally(records, class_totals).statistics(mu, nu)
}

pub fn class_totals(alice: &[AliceSlot]) -> [u64; 3] {
    let mut t = [0u64; 3];
    for a in alice {
        t[a.intensity.index()] += 1;
    }
    t
}
