//! Fitting the background yield `Y0` and misalignment error `e_d`.
//!
//! Neither quantity is measured directly, so they are fitted to anchors
//! (a key rate, error rate or gain observed at a known total loss) by
//! minimising the sum of squared relative errors over a logarithmic grid.
//! The grid is refined around the best cell a few times.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::{estimate_key_rate, model_statistics, RateParams};
use crate::channel::transmittance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum AnchorTarget {
    /// Secure key rate per pulse.
    Rate(f64),
    /// Signal-state error rate.
    Qber(f64),
    /// Signal-state gain.
    Gain(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    /// End-to-end loss including receiver optics and detector efficiency.
    pub total_db: f64,
    pub mu: f64,
    pub nu: f64,
    pub target: AnchorTarget,
}

impl Anchor {
    fn target_value(&self) -> f64 {
        match self.target {
            AnchorTarget::Rate(v) | AnchorTarget::Qber(v) | AnchorTarget::Gain(v) => v,
        }
    }

    fn model_value(&self, y0: f64, e_d: f64, rate: &RateParams) -> f64 {
        let eta = transmittance(self.total_db).unwrap_or(0.0);
        let s = model_statistics(y0, eta, e_d, self.mu, self.nu);
        match self.target {
            AnchorTarget::Rate(_) => estimate_key_rate(&s, rate).r_per_pulse,
            AnchorTarget::Qber(_) => s.e_mu,
            AnchorTarget::Gain(_) => s.q_mu,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationGrid {
    pub y0_min: f64,
    pub y0_max: f64,
    pub e_d_min: f64,
    pub e_d_max: f64,
    pub points_per_axis: usize,
    pub refinements: usize,
    /// Fits whose RMS relative residual exceeds this are reported as failed.
    pub max_rms_residual: f64,
}

impl Default for CalibrationGrid {
    fn default() -> Self {
        CalibrationGrid {
            y0_min: 1e-8,
            y0_max: 1e-2,
            e_d_min: 1e-4,
            e_d_max: 0.2,
            points_per_axis: 81,
            refinements: 4,
            max_rms_residual: 0.25,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub anchor: Anchor,
    pub model: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub y0: f64,
    pub e_d: f64,
    pub residuals: Vec<Residual>,
    pub rms_relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CalibrationError {
    #[error("calibration needs at least two anchors, got {0}")]
    Underdetermined(usize),
    #[error("anchor target must be positive and finite")]
    InvalidAnchor,
    #[error("no feasible fit: RMS relative residual {} exceeds {limit}", .best.rms_relative_error)]
    NoFeasibleFit { best: Calibration, limit: f64 },
}

fn log_axis(lo: f64, hi: f64, n: usize) -> impl Iterator<Item = f64> {
    let (a, b) = (libm::log(lo), libm::log(hi));
    (0..n).map(move |i| libm::exp(a + (b - a) * i as f64 / (n - 1).max(1) as f64))
}

fn objective(anchors: &[Anchor], y0: f64, e_d: f64, rate: &RateParams) -> f64 {
    anchors
        .iter()
        .map(|a| {
            let t = a.target_value();
            let r = (a.model_value(y0, e_d, rate) - t) / t;
            r * r
        })
        .sum()
}

pub fn calibrate(
    anchors: &[Anchor],
    rate: &RateParams,
    grid: &CalibrationGrid,
) -> Result<Calibration, CalibrationError> {
    if anchors.len() < 2 {
        return Err(CalibrationError::Underdetermined(anchors.len()));
    }
    if anchors.iter().any(|a| !(a.target_value() > 0.0 && a.target_value().is_finite())) {
        return Err(CalibrationError::InvalidAnchor);
    }
    let n = grid.points_per_axis.max(3);
    let (mut y_lo, mut y_hi) = (grid.y0_min, grid.y0_max);
    let (mut e_lo, mut e_hi) = (grid.e_d_min, grid.e_d_max);
    let mut best = (f64::INFINITY, y_lo, e_lo);
    for _ in 0..=grid.refinements {
        for y0 in log_axis(y_lo, y_hi, n) {
            for e_d in log_axis(e_lo, e_hi, n) {
                let o = objective(anchors, y0, e_d, rate);
                if o < best.0 {
                    best = (o, y0, e_d);
                }
            }
        }
        // zoom to ±2 grid cells around the optimum
        let y_step = libm::pow(y_hi / y_lo, 2.0 / (n - 1) as f64);
        let e_step = libm::pow(e_hi / e_lo, 2.0 / (n - 1) as f64);
        (y_lo, y_hi) = ((best.1 / y_step).max(grid.y0_min), (best.1 * y_step).min(grid.y0_max));
        (e_lo, e_hi) = ((best.2 / e_step).max(grid.e_d_min), (best.2 * e_step).min(grid.e_d_max));
    }
    let (_, y0, e_d) = best;
    let residuals: Vec<Residual> = anchors
        .iter()
        .map(|a| {
            let model = a.model_value(y0, e_d, rate);
            Residual { anchor: *a, model, relative_error: (model - a.target_value()) / a.target_value() }
        })
        .collect();
    let rms =
        libm::sqrt(residuals.iter().map(|r| r.relative_error * r.relative_error).sum::<f64>() / residuals.len() as f64);
    let fit = Calibration { y0, e_d, residuals, rms_relative_error: rms };
    if rms.is_nan() || rms > grid.max_rms_residual {
        return Err(CalibrationError::NoFeasibleFit { best: fit, limit: grid.max_rms_residual });
    }
    Ok(fit)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detection::expected_qber;
    use alloc::vec;

    fn rel(a: f64, b: f64) -> f64 {
        ((a - b) / b).abs()
    }

    #[test]
    fn recovers_known_parameters() {
        let (y0, e_d) = (3.0e-5, 0.012);
        let rate = RateParams::bench();
        let anchors: Vec<Anchor> = [(21.0, 0.8), (24.0, 0.8), (27.0, 0.7), (30.0, 0.7)]
            .iter()
            .flat_map(|&(db, mu)| {
                let eta = transmittance(db).unwrap();
                let s = model_statistics(y0, eta, e_d, mu, 0.1);
                let r = estimate_key_rate(&s, &rate).r_per_pulse;
                [
                    Anchor { total_db: db, mu, nu: 0.1, target: AnchorTarget::Qber(s.e_mu) },
                    Anchor { total_db: db, mu, nu: 0.1, target: AnchorTarget::Rate(r) },
                ]
            })
            .collect();
        let fit = calibrate(&anchors, &rate, &CalibrationGrid::default()).unwrap();
        assert!(rel(fit.y0, y0) < 0.05, "{}", fit.y0);
        assert!(rel(fit.e_d, e_d) < 0.05, "{}", fit.e_d);
        assert!(fit.rms_relative_error < 0.01);
    }

    #[test]
    fn single_anchor_is_underdetermined() {
        let a = Anchor { total_db: 32.8, mu: 0.7, nu: 0.1, target: AnchorTarget::Rate(1e-5) };
        assert_eq!(
            calibrate(&[a], &RateParams::bench(), &CalibrationGrid::default()),
            Err(CalibrationError::Underdetermined(1))
        );
    }

    #[test]
    fn contradictory_anchors_fail_loudly() {
        // same loss, incompatible error rates
        let anchors = vec![
            Anchor { total_db: 20.0, mu: 0.8, nu: 0.1, target: AnchorTarget::Qber(0.01) },
            Anchor { total_db: 20.0, mu: 0.8, nu: 0.1, target: AnchorTarget::Qber(0.2) },
        ];
        match calibrate(&anchors, &RateParams::bench(), &CalibrationGrid::default()) {
            Err(CalibrationError::NoFeasibleFit { best, .. }) => assert_eq!(best.residuals.len(), 2),
            other => panic!("{other:?}"),
        }
        let bad = vec![anchors[0], Anchor { target: AnchorTarget::Gain(0.0), ..anchors[0] }];
        assert_eq!(
            calibrate(&bad, &RateParams::bench(), &CalibrationGrid::default()),
            Err(CalibrationError::InvalidAnchor)
        );
    }

    #[test]
    fn gain_anchor_tracks_model() {
        let a = Anchor { total_db: 21.32, mu: 0.8, nu: 0.1, target: AnchorTarget::Gain(1.0) };
        let q = a.model_value(1e-5, 0.01, &RateParams::bench());
        assert!(rel(q, 1e-5 + 1.0 - libm::exp(-0.8 * transmittance(21.32).unwrap())) < 1e-12);
        let e = Anchor { target: AnchorTarget::Qber(1.0), ..a }.model_value(1e-5, 0.01, &RateParams::bench());
        assert!(rel(e, expected_qber(1e-5, transmittance(21.32).unwrap(), 0.8, 0.01).unwrap()) < 1e-12);
    }
}
