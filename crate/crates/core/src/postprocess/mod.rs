//! Classical post-processing: error checking, Cascade error correction and
//! Toeplitz privacy amplification.
//!
//! Keys are handled as one bit per byte (`0` or `1`).

mod cascade;
mod keyhash;
mod toeplitz;

use serde::{Deserialize, Serialize};

pub use cascade::{
    answer_queries, cascade_correct, initial_block_size, verification_hash_key, CascadeEngine, CascadeLayout,
    LocalParityOracle, ParityOracle, ParityQuery, ReconciliationResult, CASCADE_PASSES,
};
pub use keyhash::{polynomial_hash, HASH_BITS};
pub use toeplitz::{toeplitz_hash, PaSeed};

use crate::analysis::KeyRateReport;
use crate::error::{ensure_domain, Error, Result};

pub fn binary_entropy(x: f64) -> Result<f64> {
    ensure_domain((0.0..=1.0).contains(&x), "binary entropy argument", x)?;
    let term = |p: f64| if p <= 0.0 { 0.0 } else { -p * libm::log2(p) };
    Ok(term(x) + term(1.0 - x))
}

/// Fraction of positions where the two samples disagree.
pub fn estimate_qber(alice_sample: &[u8], bob_sample: &[u8]) -> Result<f64> {
    if alice_sample.len() != bob_sample.len() {
        return Err(Error::LengthMismatch { expected: alice_sample.len(), actual: bob_sample.len() });
    }
    if alice_sample.is_empty() {
        return Err(Error::InsufficientData("empty QBER sample"));
    }
    let flips = alice_sample.iter().zip(bob_sample).filter(|(a, b)| a != b).count();
    Ok(flips as f64 / alice_sample.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinalKeyLength {
    pub bits: usize,
    /// The rate formula asked for more bits than reconciliation left secret.
    pub capped: bool,
    /// No key can be distilled.
    pub no_key: bool,
}

/// `floor(pulses · R)`, never more than `available_bits` (reconciled key
/// length minus the bits leaked during reconciliation).
pub fn final_key_length(pulses: u64, report: &KeyRateReport, available_bits: usize) -> FinalKeyLength {
    let wanted = libm::floor(pulses as f64 * report.r_per_pulse.max(0.0));
    if wanted < 1.0 || available_bits == 0 {
        return FinalKeyLength { bits: 0, capped: wanted >= 1.0, no_key: true };
    }
    let wanted = if wanted >= usize::MAX as f64 { usize::MAX } else { wanted as usize };
    FinalKeyLength { bits: wanted.min(available_bits), capped: wanted > available_bits, no_key: false }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analysis::{estimate_key_rate, DecoyStatistics, RateParams, SinglePhotonBounds};
    use proptest::prelude::*;

    #[test]
    fn entropy_examples() {
        assert_eq!(binary_entropy(0.0).unwrap(), 0.0);
        assert_eq!(binary_entropy(1.0).unwrap(), 0.0);
        assert!((binary_entropy(0.5).unwrap() - 1.0).abs() < 1e-15);
        // reference value from a 50-digit evaluation
        assert!((binary_entropy(0.0121).unwrap() - 0.094_413_643_559_452_77).abs() < 1e-14);
        assert!(binary_entropy(1.01).is_err());
        assert!(binary_entropy(-0.01).is_err());
    }

    #[test]
    fn qber_examples() {
        let a = [0u8, 1, 1, 0, 1];
        assert_eq!(estimate_qber(&a, &a).unwrap(), 0.0);
        let inv: alloc::vec::Vec<u8> = a.iter().map(|b| b ^ 1).collect();
        assert_eq!(estimate_qber(&a, &inv).unwrap(), 1.0);
        let x = alloc::vec![0u8; 1000];
        let mut y = x.clone();
        for i in 0..19 {
            y[i * 50] = 1;
        }
        assert!((estimate_qber(&x, &y).unwrap() - 0.019).abs() < 1e-15);
        assert!(estimate_qber(&a, &a[..3]).is_err());
        assert!(estimate_qber(&[], &[]).is_err());
    }

    fn report_with_rate(r: f64) -> KeyRateReport {
        let mut rep = estimate_key_rate(
            &DecoyStatistics { q_mu: 1.48e-2, e_mu: 0.0121, q_nu: 1.89e-3, e_nu: 0.0181, y0: 0.0, mu: 0.8, nu: 0.1 },
            &RateParams { sifting_rate: 0.5, ec_efficiency: 1.16, repetition_rate_hz: 2e7 },
        );
        rep.r_per_pulse = r;
        rep
    }

    #[test]
    fn final_length_examples() {
        let none = final_key_length(10_000_000, &report_with_rate(0.0), 50_000);
        assert_eq!(none, FinalKeyLength { bits: 0, capped: false, no_key: true });

        let b = SinglePhotonBounds::from_table(4.84e-3, 0.0118);
        let stats =
            DecoyStatistics { q_mu: 1.48e-2, e_mu: 0.0121, q_nu: 1.89e-3, e_nu: 0.0181, y0: 0.0, mu: 0.8, nu: 0.1 };
        let rep = crate::analysis::secure_key_rate(0.5, &stats, 1.16, &b, 2e7).unwrap();
        let len = final_key_length(10_000_000, &rep, 1_000_000);
        assert_eq!(len.bits, libm::floor(1e7 * rep.r_per_pulse) as usize);
        // 10^7 · R = 13856.9655... at 50 digits; floor, not round
        assert_eq!(len.bits, 13_856);
        assert!(!len.capped);

        let capped = final_key_length(10_000_000, &rep, 5_000);
        assert_eq!(capped, FinalKeyLength { bits: 5_000, capped: true, no_key: false });
    }

    proptest! {
        #[test]
        fn entropy_symmetric_and_concave(x in 0.0f64..=1.0, y in 0.0f64..=1.0) {
            let hx = binary_entropy(x).unwrap();
            prop_assert!((hx - binary_entropy(1.0 - x).unwrap()).abs() <= 1e-12);
            let mid = binary_entropy((x + y) / 2.0).unwrap();
            prop_assert!(mid + 1e-12 >= (hx + binary_entropy(y).unwrap()) / 2.0);
        }
    }
}
