//! Gated single-photon receiver.
//!
//! Bob picks a basis per slot (the passive 50:50 splitter). Photons that
//! survive the channel and the detector efficiency are routed to one of the
//! two detectors of that basis: in the matching basis the wrong detector is
//! hit with probability `sin²θ` (misalignment), in the other basis either
//! detector with probability 1/2. Each detector also dark-fires independently
//! with `dark_count_prob_per_gate`, so the vacuum yield is
//! `Y0 = 1 - (1 - p_dark)²`.

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_domain, Error, Result};
use crate::polarization::{misalignment_error_prob, Basis, Polarization};
use crate::source::PulseRecord;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DoubleClickPolicy {
    /// Assign a uniformly random bit.
    RandomBit,
    /// Keep the click for gain tallies but drop the slot from the key.
    Discard,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub detector_efficiency: f64,
    pub dark_count_prob_per_gate: f64,
    pub gate_width_ns: f64,
    /// Gates per synchronization period (5 MHz sync, 20 MHz gate).
    pub gates_per_frame: u32,
    pub double_click_policy: DoubleClickPolicy,
}

impl DetectorConfig {
    pub fn validate(&self) -> Result<()> {
        ensure_domain(
            (0.0..=1.0).contains(&self.detector_efficiency),
            "detector efficiency",
            self.detector_efficiency,
        )?;
        ensure_domain(
            (0.0..=1.0).contains(&self.dark_count_prob_per_gate),
            "dark count probability",
            self.dark_count_prob_per_gate,
        )?;
        ensure_domain(self.gate_width_ns > 0.0, "gate width", self.gate_width_ns)?;
        ensure_domain(self.gates_per_frame > 0, "gates per frame", self.gates_per_frame as f64)
    }

    /// Background yield seen by the vacuum class.
    pub fn vacuum_yield(&self) -> f64 {
        vacuum_yield(self.dark_count_prob_per_gate)
    }
}

pub fn vacuum_yield(dark_count_prob: f64) -> f64 {
    dark_count_prob * (2.0 - dark_count_prob)
}

/// Per-detector dark-count probability that produces vacuum yield `y0`.
pub fn dark_count_for_yield(y0: f64) -> Result<f64> {
    ensure_domain((0.0..=1.0).contains(&y0), "vacuum yield", y0)?;
    Ok(-libm::expm1(0.5 * libm::log1p(-y0)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    NoClick,
    Bit(u8),
    /// A double click dropped under [`DoubleClickPolicy::Discard`].
    Discarded,
}

impl Outcome {
    pub fn clicked(self) -> bool {
        !matches!(self, Outcome::NoClick)
    }

    pub fn bit(self) -> Option<u8> {
        match self {
            Outcome::Bit(b) => Some(b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DetectionEvent {
    pub slot_index: u64,
    pub basis: Basis,
    pub outcome: Outcome,
    pub multi_click: bool,
}

/// Photons of one pulse that reached the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Arrival {
    pub slot_index: u64,
    pub polarization: Polarization,
    pub photons: u32,
}

/// Binomial thinning: each photon survives independently with probability `p`.
pub fn thin<R: Rng + ?Sized>(photons: u32, p: f64, rng: &mut R) -> u32 {
    if p >= 1.0 {
        return photons;
    }
    if p <= 0.0 {
        return 0;
    }
    (0..photons).filter(|_| rng.gen::<f64>() < p).count() as u32
}

/// Channel propagation of one pulse.
pub fn transmit<R: Rng + ?Sized>(pulse: &PulseRecord, channel_eta: f64, rng: &mut R) -> Arrival {
    Arrival {
        slot_index: pulse.slot_index,
        polarization: pulse.polarization,
        photons: thin(pulse.photon_count, channel_eta, rng),
    }
}

/// Measurement of the arriving photons in `basis`.
pub fn measure<R: Rng + ?Sized>(
    arrival: &Arrival,
    basis: Basis,
    cfg: &DetectorConfig,
    misalignment_theta: f64,
    rng: &mut R,
) -> DetectionEvent {
    let detected = thin(arrival.photons, cfg.detector_efficiency, rng);
    let mut fired = [false; 2];
    if detected > 0 {
        let matched = arrival.polarization.basis() == basis;
        let flip = misalignment_error_prob(misalignment_theta);
        for _ in 0..detected {
            let bit = if matched {
                arrival.polarization.bit() ^ u8::from(rng.gen::<f64>() < flip)
            } else {
                u8::from(rng.gen::<bool>())
            };
            fired[bit as usize] = true;
        }
    }
    let p_dark = cfg.dark_count_prob_per_gate;
    if p_dark > 0.0 {
        for f in fired.iter_mut() {
            if rng.gen::<f64>() < p_dark {
                *f = true;
            }
        }
    }
    let (outcome, multi_click) = match fired {
        [false, false] => (Outcome::NoClick, false),
        [true, false] => (Outcome::Bit(0), false),
        [false, true] => (Outcome::Bit(1), false),
        [true, true] => match cfg.double_click_policy {
            DoubleClickPolicy::RandomBit => (Outcome::Bit(u8::from(rng.gen::<bool>())), true),
            DoubleClickPolicy::Discard => (Outcome::Discarded, true),
        },
    };
    DetectionEvent { slot_index: arrival.slot_index, basis, outcome, multi_click }
}

/// Full receiver response to one pulse: each photon survives with
/// `channel_eta · detector_efficiency`, then routing and dark counts.
pub fn detect<R: Rng + ?Sized>(
    pulse: &PulseRecord,
    channel_eta: f64,
    basis_choice: Basis,
    cfg: &DetectorConfig,
    misalignment_theta: f64,
    rng: &mut R,
) -> DetectionEvent {
    let arrival = transmit(pulse, channel_eta, rng);
    measure(&arrival, basis_choice, cfg, misalignment_theta, rng)
}

pub fn choose_basis<R: Rng + ?Sized>(rng: &mut R) -> Basis {
    Basis::from_bit(u8::from(rng.gen::<bool>()))
}

/// Expected click probability `Y0 + 1 - exp(-η·mean)`, capped at 1.
pub fn expected_gain(y0: f64, eta: f64, mean: f64) -> f64 {
    (y0 - libm::expm1(-eta * mean)).min(1.0)
}

/// Expected error rate among matched-basis clicks; background clicks are
/// wrong half of the time.
pub fn expected_qber(y0: f64, eta: f64, mean: f64, e_d: f64) -> Result<f64> {
    let q = expected_gain(y0, eta, mean);
    if q <= 0.0 {
        return Err(Error::InsufficientData("zero gain leaves the error rate undefined"));
    }
    Ok((0.5 * y0 - e_d * libm::expm1(-eta * mean)) / q)
}

/// Arrival-time histogram over one gate frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrivalHistogram {
    pub counts: Vec<u64>,
    pub bin_width_ns: f64,
}

/// Cyclic offset whose `gate_bins`-wide window collects the most counts.
/// Ties go to the smallest offset.
pub fn align_gate(h: &ArrivalHistogram, gate_bins: usize) -> Result<usize> {
    let n = h.counts.len();
    if n == 0 || h.counts.iter().all(|&c| c == 0) {
        return Err(Error::InsufficientData("arrival histogram is empty"));
    }
    if gate_bins == 0 || gate_bins > n {
        return Err(Error::Domain { what: "gate width in bins", value: gate_bins as f64 });
    }
    let mut window: u64 = h.counts[..gate_bins].iter().sum();
    let (mut best, mut best_sum) = (0, window);
    for offset in 1..n {
        window = window - h.counts[offset - 1] + h.counts[(offset + gate_bins - 1) % n];
        if window > best_sum {
            best = offset;
            best_sum = window;
        }
    }
    Ok(best)
}

/// Synthetic histogram: a Gaussian arrival peak on a flat background.
pub fn synthesize_histogram<R: Rng + ?Sized>(
    bins: usize,
    bin_width_ns: f64,
    peak_bin: f64,
    sigma_bins: f64,
    signal_events: u64,
    noise_per_bin: f64,
    rng: &mut R,
) -> ArrivalHistogram {
    let mut counts = alloc::vec![0u64; bins];
    if bins == 0 {
        return ArrivalHistogram { counts, bin_width_ns };
    }
    for _ in 0..signal_events {
        // Box-Muller
        let u1: f64 = rng.gen::<f64>().max(f64::MIN_POSITIVE);
        let u2: f64 = rng.gen();
        let z = libm::sqrt(-2.0 * libm::log(u1)) * libm::cos(core::f64::consts::TAU * u2);
        let t = libm::floor(peak_bin + sigma_bins * z) as i64;
        counts[t.rem_euclid(bins as i64) as usize] += 1;
    }
    for c in counts.iter_mut() {
        // noise floor with ±1 jitter
        let base = libm::floor(noise_per_bin) as u64;
        *c += base + u64::from(rng.gen::<f64>() < noise_per_bin - base as f64);
    }
    ArrivalHistogram { counts, bin_width_ns }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use crate::source::IntensityClass;
    use proptest::prelude::*;

    fn cfg(eff: f64, dark: f64) -> DetectorConfig {
        DetectorConfig {
            detector_efficiency: eff,
            dark_count_prob_per_gate: dark,
            gate_width_ns: 5.0,
            gates_per_frame: 4,
            double_click_policy: DoubleClickPolicy::RandomBit,
        }
    }

    fn pulse(pol: Polarization, class: IntensityClass, photons: u32) -> PulseRecord {
        PulseRecord { slot_index: 0, intensity: class, polarization: pol, key_bit: pol.bit(), photon_count: photons }
    }

    fn three_sigma(p: f64, n: f64) -> f64 {
        3.0 * libm::sqrt(p * (1.0 - p) / n)
    }

    #[test]
    fn vacuum_without_dark_counts_never_clicks() {
        let mut rng = substream(1, 0);
        let p = pulse(Polarization::H, IntensityClass::Vacuum, 0);
        for _ in 0..1000 {
            let e = detect(&p, 1.0, Basis::Rectilinear, &cfg(1.0, 0.0), 0.0, &mut rng);
            assert_eq!(e.outcome, Outcome::NoClick);
            assert!(!e.multi_click);
        }
    }

    #[test]
    fn deterministic_limit() {
        let mut rng = substream(2, 0);
        let p = pulse(Polarization::H, IntensityClass::Signal, 1000);
        let e = detect(&p, 1.0, Basis::Rectilinear, &cfg(1.0, 0.0), 0.0, &mut rng);
        assert_eq!(e.outcome, Outcome::Bit(0));
        assert!(!e.multi_click);
    }

    #[test]
    fn discard_policy_marks_double_clicks() {
        let mut rng = substream(3, 0);
        let mut c = cfg(1.0, 1.0);
        c.double_click_policy = DoubleClickPolicy::Discard;
        let e = detect(&pulse(Polarization::V, IntensityClass::Vacuum, 0), 1.0, Basis::Rectilinear, &c, 0.0, &mut rng);
        assert_eq!(e.outcome, Outcome::Discarded);
        assert!(e.multi_click && e.outcome.clicked());
    }

    #[test]
    fn signal_click_fraction_matches_gain() {
        let mut rng = substream(4, 0);
        let n = 1_000_000;
        let eta_total = 7.4e-3;
        let p = pulse(Polarization::P, IntensityClass::Signal, 0);
        let c = cfg(1.0, 0.0);
        let clicks = (0..n)
            .filter(|_| {
                let photons = crate::source::sample_photon_number(0.8, &mut rng).unwrap();
                detect(&PulseRecord { photon_count: photons, ..p }, eta_total, Basis::Diagonal, &c, 0.0, &mut rng)
                    .outcome
                    .clicked()
            })
            .count();
        let expected = expected_gain(0.0, eta_total, 0.8);
        assert!((expected - 5.90e-3).abs() < 1e-5);
        let got = clicks as f64 / n as f64;
        assert!((got - expected).abs() <= three_sigma(expected, n as f64), "{got} vs {expected}");
    }

    #[test]
    fn gain_examples() {
        assert_eq!(expected_gain(0.0, 0.3, 0.0), 0.0);
        assert_eq!(expected_gain(1e-4, 0.3, 0.0), 1e-4);
        assert!((expected_gain(0.0, 1.0, 0.8) - 0.5507).abs() < 1e-4);
        assert_eq!(expected_gain(0.9, 1.0, 10.0), 1.0);
    }

    #[test]
    fn qber_examples() {
        assert!((expected_qber(0.0, 0.01, 0.8, 0.013).unwrap() - 0.013).abs() < 1e-15);
        assert!((expected_qber(1e-3, 1e-9, 0.1, 0.0).unwrap() - 0.5).abs() < 1e-5);
        // η·μ = 5.9e-3, evaluated independently at 40 digits
        let e = expected_qber(4e-4, 5.9e-3 / 0.8, 0.8, 0.012).unwrap();
        assert!((e - 0.043_069_794_894_137_35).abs() < 1e-12, "{e}");
        assert!(expected_qber(0.0, 0.1, 0.0, 0.01).is_err());
    }

    #[test]
    fn mismatched_basis_bits_are_uniform() {
        let mut rng = substream(5, 0);
        let n = 200_000;
        let p = pulse(Polarization::H, IntensityClass::Signal, 1);
        let ones = (0..n)
            .filter(|_| detect(&p, 1.0, Basis::Diagonal, &cfg(1.0, 0.0), 0.1, &mut rng).outcome == Outcome::Bit(1))
            .count();
        let f = ones as f64 / n as f64;
        assert!((f - 0.5).abs() <= three_sigma(0.5, n as f64));
    }

    #[test]
    fn monte_carlo_matches_analytic_sweep() {
        let mut rng = substream(6, 0);
        let n = 1_000_000u32;
        for (y0, eta, mean, e_d) in [
            (0.0, 1e-4, 0.8, 0.0),
            (1e-3, 1e-4, 0.1, 0.02),
            (5e-4, 0.1, 0.8, 0.05),
            (2e-4, 0.02, 0.1, 0.01),
            (1e-3, 3e-3, 0.0, 0.03),
        ] {
            let c = cfg(1.0, dark_count_for_yield(y0).unwrap());
            let (mut clicks, mut matched, mut errors) = (0u64, 0u64, 0u64);
            for _ in 0..n {
                let photons = crate::source::sample_photon_number(mean, &mut rng).unwrap();
                let p = PulseRecord {
                    slot_index: 0,
                    intensity: IntensityClass::Signal,
                    polarization: Polarization::H,
                    key_bit: 0,
                    photon_count: photons,
                };
                let e = detect(
                    &p,
                    eta,
                    Basis::Rectilinear,
                    &c,
                    crate::polarization::misalignment_angle(e_d).unwrap(),
                    &mut rng,
                );
                if let Some(bit) = e.outcome.bit() {
                    clicks += 1;
                    matched += 1;
                    errors += u64::from(bit != 0);
                }
            }
            let q = expected_gain(y0, eta, mean);
            let got = clicks as f64 / n as f64;
            // the model's exact click probability differs from the additive
            // form by y0·(1 - e^{-ημ}); allow it on top of 3σ
            let bias = y0 * (1.0 - libm::exp(-eta * mean));
            assert!((got - q).abs() <= three_sigma(q, n as f64) + bias, "gain {y0} {eta} {mean}: {got} vs {q}");
            if q > 0.0 && matched > 0 {
                let e = expected_qber(y0, eta, mean, e_d).unwrap();
                let got_e = errors as f64 / matched as f64;
                assert!(
                    (got_e - e).abs() <= three_sigma(e, matched as f64) + 0.5 * bias / q,
                    "qber {y0} {eta} {mean} {e_d}: {got_e} vs {e}"
                );
            }
        }
    }

    #[test]
    fn dark_count_yield_round_trip() {
        let p = dark_count_for_yield(3e-5).unwrap();
        assert!((vacuum_yield(p) - 3e-5).abs() < 1e-19);
        assert!((p - 1.500011250168753e-5).abs() < 1e-19);
        assert!((p - 1.5e-5).abs() < 1e-9);
    }

    fn histogram(counts: &[u64]) -> ArrivalHistogram {
        ArrivalHistogram { counts: counts.to_vec(), bin_width_ns: 1.0 }
    }

    fn brute_force_offset(counts: &[u64], gate: usize) -> usize {
        let n = counts.len();
        let sums: Vec<u64> = (0..n).map(|o| (0..gate).map(|k| counts[(o + k) % n]).sum()).collect();
        let max = *sums.iter().max().unwrap();
        sums.iter().position(|&s| s == max).unwrap()
    }

    #[test]
    fn gate_alignment_examples() {
        let mut delta = [0u64; 16];
        delta[7] = 100;
        assert_eq!(align_gate(&histogram(&delta), 1).unwrap(), 7);
        assert_eq!(align_gate(&histogram(&[5; 16]), 4).unwrap(), 0);
        assert!(matches!(align_gate(&histogram(&[]), 1), Err(Error::InsufficientData(_))));
        assert!(align_gate(&histogram(&[0; 8]), 1).is_err());
        assert!(align_gate(&histogram(&[1; 4]), 5).is_err());
    }

    #[test]
    fn gate_alignment_on_gaussian_peak() {
        let mut rng = substream(7, 0);
        let h = synthesize_histogram(32, 0.5, 12.5, 2.0, 20_000, 50.0, &mut rng);
        let offset = align_gate(&h, 4).unwrap();
        assert_eq!(offset, brute_force_offset(&h.counts, 4));
        assert!(offset == 10 || offset == 11, "{offset}");
    }

    #[test]
    fn gate_alignment_wraps_around() {
        let mut counts = [0u64; 10];
        counts[9] = 50;
        counts[0] = 50;
        assert_eq!(align_gate(&histogram(&counts), 2).unwrap(), 9);
    }

    proptest! {
        #[test]
        fn gate_alignment_matches_brute_force(counts in proptest::collection::vec(0u64..50, 1..40), gate in 1usize..8, floor in 0u64..1000) {
            prop_assume!(gate <= counts.len());
            prop_assume!(counts.iter().any(|&c| c > 0));
            let best = align_gate(&histogram(&counts), gate).unwrap();
            prop_assert_eq!(best, brute_force_offset(&counts, gate));
            let lifted: Vec<u64> = counts.iter().map(|c| c + floor).collect();
            prop_assert_eq!(align_gate(&histogram(&lifted), gate).unwrap(), best);
        }
    }
}
