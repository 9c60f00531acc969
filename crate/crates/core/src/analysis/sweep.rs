use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::{estimate_key_rate, model_statistics, DecoyStatistics, RateParams, SinglePhotonBounds};
use crate::channel::{loss_db, transmittance, ReceiverLoss};
use crate::error::{ensure_domain, Error, Result};

/// Everything except the water path needed to predict a key rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SystemParams {
    pub mu: f64,
    pub nu: f64,
    pub y0: f64,
    /// Intrinsic (misalignment) error probability.
    pub e_d: f64,
    pub receiver: ReceiverLoss,
    pub rate: RateParams,
}

impl SystemParams {
    pub fn validate(&self) -> Result<()> {
        ensure_domain(self.nu > 0.0, "decoy mean photon number", self.nu)?;
        ensure_domain(self.mu > self.nu, "signal mean photon number", self.mu)?;
        ensure_domain((0.0..=1.0).contains(&self.y0), "vacuum yield", self.y0)?;
        ensure_domain((0.0..=0.5).contains(&self.e_d), "misalignment error", self.e_d)?;
        self.receiver.validate()
    }

    /// Statistics of the analytic model at a total end-to-end loss.
    pub fn statistics_at_total_loss(&self, total_db: f64) -> Result<DecoyStatistics> {
        let eta = transmittance(total_db)?;
        Ok(model_statistics(self.y0, eta, self.e_d, self.mu, self.nu))
    }

    pub fn rate_at_total_loss(&self, total_db: f64) -> Result<f64> {
        let s = self.statistics_at_total_loss(total_db)?;
        Ok(estimate_key_rate(&s, &self.rate).r_per_pulse)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub distance_m: f64,
    /// Water loss only.
    pub loss_db: f64,
    pub statistics: DecoyStatistics,
    pub bounds: SinglePhotonBounds,
    pub r_per_pulse: f64,
    pub r_bps: f64,
}

/// Analytic key rate against water distance for one attenuation coefficient.
/// Points come back sorted by distance.
pub fn sweep_distance(attenuation_per_m: f64, system: &SystemParams, distances: &[f64]) -> Result<Vec<SweepPoint>> {
    system.validate()?;
    let mut sorted = distances.to_vec();
    sorted.sort_by(f64::total_cmp);
    let receiver_db = system.receiver.total_db();
    sorted
        .into_iter()
        .map(|d| {
            let water_db = loss_db(attenuation_per_m, d)?;
            let statistics = system.statistics_at_total_loss(water_db + receiver_db)?;
            let report = estimate_key_rate(&statistics, &system.rate);
            Ok(SweepPoint {
                distance_m: d,
                loss_db: water_db,
                statistics,
                bounds: report.bounds,
                r_per_pulse: report.r_per_pulse,
                r_bps: report.r_bits_per_second,
            })
        })
        .collect()
}

/// Distance at which the rate falls to `target_rate`, by bisection on the
/// water loss. Errors when the rate at zero distance is already below target.
pub fn find_cutoff_distance(attenuation_per_m: f64, system: &SystemParams, target_rate: f64) -> Result<f64> {
    system.validate()?;
    ensure_domain(attenuation_per_m > 0.0, "attenuation coefficient", attenuation_per_m)?;
    let receiver_db = system.receiver.total_db();
    let rate = |water_db: f64| system.rate_at_total_loss(water_db + receiver_db);
    if rate(0.0)? < target_rate {
        return Err(Error::NoSolution("rate is below target even at zero distance"));
    }
    let (mut lo, mut hi) = (0.0f64, 10.0f64);
    while rate(hi)? >= target_rate {
        lo = hi;
        hi *= 2.0;
        if hi > 1e4 {
            return Err(Error::NoSolution("rate never falls to target"));
        }
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if rate(mid)? >= target_rate {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    crate::channel::distance_for_loss(attenuation_per_m, 0.5 * (lo + hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::WaterPreset;

    fn system() -> SystemParams {
        SystemParams {
            mu: 0.7,
            nu: 0.1,
            y0: 2.8e-5,
            e_d: 0.0102,
            receiver: ReceiverLoss::BENCH,
            rate: RateParams::bench(),
        }
    }

    #[test]
    fn zero_distance_is_the_maximum() {
        let grid: Vec<f64> = (0..=30).map(|k| k as f64 * 10.0).collect();
        let pts = sweep_distance(0.018, &system(), &grid).unwrap();
        let max = pts.iter().map(|p| p.r_per_pulse).fold(0.0, f64::max);
        assert_eq!(pts[0].distance_m, 0.0);
        assert_eq!(pts[0].r_per_pulse, max);
        for w in pts.windows(2) {
            assert!(w[1].r_per_pulse <= w[0].r_per_pulse);
        }
    }

    #[test]
    fn water_types_are_ordered() {
        let grid: Vec<f64> = (0..=60).map(|k| k as f64 * 5.0).collect();
        let curves: Vec<Vec<SweepPoint>> = WaterPreset::ALL_JERLOV
            .iter()
            .map(|p| sweep_distance(p.coefficient().unwrap(), &system(), &grid).unwrap())
            .collect();
        for ((a, b), c) in curves[0].iter().zip(&curves[1]).zip(&curves[2]) {
            assert!(a.r_per_pulse >= b.r_per_pulse && b.r_per_pulse >= c.r_per_pulse);
        }
    }

    #[test]
    fn cutoff_is_consistent_with_sweep() {
        let d = find_cutoff_distance(0.018, &system(), 1e-5).unwrap();
        let around = sweep_distance(0.018, &system(), &[d - 1.0, d + 1.0]).unwrap();
        assert!(around[0].r_per_pulse > 1e-5 && around[1].r_per_pulse < 1e-5);
        assert!(find_cutoff_distance(0.018, &system(), 1.0).is_err());
    }

    #[test]
    fn sweep_sorts_unsorted_grid() {
        let pts = sweep_distance(0.13, &system(), &[50.0, 0.0, 20.0]).unwrap();
        let d: Vec<f64> = pts.iter().map(|p| p.distance_m).collect();
        assert_eq!(d, [0.0, 20.0, 50.0]);
    }
}
