//! Decoy-state estimation and secure key rate.
//!
//! Single-photon bounds use the vacuum + weak-decoy estimators:
//!
//! ```text
//! Y1_L = μ/(μν − ν²) · [Q_ν e^ν − Q_μ e^μ ν²/μ² − (μ² − ν²)/μ² · Y0]
//! Q1   = Y1_L · μ e^(−μ)
//! e1_U = (E_ν Q_ν e^ν − Y0/2) / (Y1_L ν)
//! ```
//!
//! and the asymptotic rate per pulse is
//!
//! ```text
//! R = q · { −Q_μ f H2(E_μ) + Q1 [1 − H2(e1)] }
//! ```

mod calibrate;
mod sweep;

use serde::{Deserialize, Serialize};

pub use calibrate::{calibrate, Anchor, AnchorTarget, Calibration, CalibrationError, CalibrationGrid, Residual};
pub use sweep::{find_cutoff_distance, sweep_distance, SweepPoint, SystemParams};

use crate::detection::{expected_gain, expected_qber};
use crate::error::{ensure_domain, Error, Result};
use crate::postprocess::binary_entropy;

/// Measured (or modelled) gains and error rates per intensity class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecoyStatistics {
    pub q_mu: f64,
    pub e_mu: f64,
    pub q_nu: f64,
    pub e_nu: f64,
    pub y0: f64,
    pub mu: f64,
    pub nu: f64,
}

impl DecoyStatistics {
    pub fn validate(&self) -> Result<()> {
        for (what, v) in [
            ("signal gain", self.q_mu),
            ("signal QBER", self.e_mu),
            ("decoy gain", self.q_nu),
            ("decoy QBER", self.e_nu),
            ("vacuum yield", self.y0),
        ] {
            ensure_domain((0.0..=1.0).contains(&v), what, v)?;
        }
        ensure_domain(self.nu > 0.0, "decoy mean photon number", self.nu)?;
        ensure_domain(self.mu > self.nu, "signal mean photon number", self.mu)
    }

    /// `Q_μ < Q_ν` cannot come from a consistent channel; flagged, not rejected.
    pub fn gains_inverted(&self) -> bool {
        self.q_mu < self.q_nu
    }
}

/// Expected statistics of the loss/background/misalignment model.
pub fn model_statistics(y0: f64, eta: f64, e_d: f64, mu: f64, nu: f64) -> DecoyStatistics {
    let qber = |mean: f64| expected_qber(y0, eta, mean, e_d).unwrap_or(0.0);
    DecoyStatistics {
        q_mu: expected_gain(y0, eta, mu),
        e_mu: qber(mu),
        q_nu: expected_gain(y0, eta, nu),
        e_nu: qber(nu),
        y0,
        mu,
        nu,
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundFlags {
    /// `Y1_L` came out negative and was raised to 0.
    pub y1_clamped: bool,
    /// `e1_U` fell outside `[0, 0.5]` and was clamped.
    pub e1_clamped: bool,
    /// No positive single-photon yield, so no key.
    pub no_single_photon_yield: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinglePhotonBounds {
    pub y1_lower: f64,
    pub q1: f64,
    pub e1_upper: f64,
    pub flags: BoundFlags,
}

impl SinglePhotonBounds {
    /// Bounds supplied directly (e.g. from a published table) rather than
    /// estimated; `y1_lower` is left at 0.
    pub fn from_table(q1: f64, e1: f64) -> SinglePhotonBounds {
        SinglePhotonBounds { y1_lower: 0.0, q1, e1_upper: e1, flags: BoundFlags::default() }
    }
}

/// Returns `(Y1_L, clamped)`.
pub fn y1_lower_bound(s: &DecoyStatistics) -> Result<(f64, bool)> {
    let (mu, nu) = (s.mu, s.nu);
    ensure_domain(nu > 0.0, "decoy mean photon number", nu)?;
    ensure_domain(mu * nu - nu * nu > 0.0, "intensity separation μν − ν²", mu * nu - nu * nu)?;
    let mu2 = mu * mu;
    let raw = mu / (mu * nu - nu * nu)
        * (s.q_nu * libm::exp(nu) - s.q_mu * libm::exp(mu) * (nu * nu / mu2) - (mu2 - nu * nu) / mu2 * s.y0);
    Ok(if raw < 0.0 { (0.0, true) } else { (raw, false) })
}

pub fn q1(y1: f64, mu: f64) -> f64 {
    y1 * mu * libm::exp(-mu)
}

/// Returns `(e1_U, clamped)`.
pub fn e1_upper_bound(s: &DecoyStatistics, y1_lower: f64) -> Result<(f64, bool)> {
    ensure_domain(s.nu > 0.0, "decoy mean photon number", s.nu)?;
    if y1_lower <= 0.0 {
        return Err(Error::NoSinglePhotonYield);
    }
    let raw = (s.e_nu * s.q_nu * libm::exp(s.nu) - 0.5 * s.y0) / (y1_lower * s.nu);
    let clamped = raw.clamp(0.0, 0.5);
    Ok((clamped, clamped != raw))
}

/// All three single-photon quantities. A zero yield bound is not an error
/// here: it produces `Q1 = 0`, `e1 = 0.5` and the `no_single_photon_yield` flag.
pub fn single_photon_bounds(s: &DecoyStatistics) -> Result<SinglePhotonBounds> {
    let (y1, y1_clamped) = y1_lower_bound(s)?;
    let mut flags = BoundFlags { y1_clamped, ..BoundFlags::default() };
    let e1 = match e1_upper_bound(s, y1) {
        Ok((e1, c)) => {
            flags.e1_clamped = c;
            e1
        }
        Err(Error::NoSinglePhotonYield) => {
            flags.no_single_photon_yield = true;
            0.5
        }
        Err(e) => return Err(e),
    };
    Ok(SinglePhotonBounds { y1_lower: y1, q1: q1(y1, s.mu), e1_upper: e1, flags })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateParams {
    /// Sifting rate `q`.
    pub sifting_rate: f64,
    /// Error-correction inefficiency `f ≥ 1`.
    pub ec_efficiency: f64,
    pub repetition_rate_hz: f64,
}

impl RateParams {
    pub fn bench() -> RateParams {
        RateParams { sifting_rate: 0.5, ec_efficiency: 1.16, repetition_rate_hz: 2.0e7 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KeyRateReport {
    pub r_per_pulse: f64,
    pub r_bits_per_second: f64,
    pub repetition_rate_hz: f64,
    pub sifting_rate: f64,
    pub ec_efficiency: f64,
    pub statistics: DecoyStatistics,
    pub bounds: SinglePhotonBounds,
    /// The bracket was negative and the rate was clamped to 0.
    pub rate_clamped: bool,
    pub gains_inverted: bool,
}

impl KeyRateReport {
    pub fn any_flag(&self) -> bool {
        let f = self.bounds.flags;
        self.rate_clamped || self.gains_inverted || f.y1_clamped || f.e1_clamped || f.no_single_photon_yield
    }
}

pub fn secure_key_rate(
    q: f64,
    s: &DecoyStatistics,
    f: f64,
    b: &SinglePhotonBounds,
    repetition_rate_hz: f64,
) -> Result<KeyRateReport> {
    ensure_domain(q > 0.0 && q <= 1.0, "sifting rate", q)?;
    ensure_domain(f >= 1.0, "error-correction efficiency", f)?;
    ensure_domain(b.q1 >= 0.0 && b.q1 <= 1.0, "single-photon gain", b.q1)?;
    ensure_domain((0.0..=0.5).contains(&b.e1_upper), "single-photon error bound", b.e1_upper)?;
    ensure_domain(repetition_rate_hz > 0.0, "repetition rate", repetition_rate_hz)?;
    let raw = q * (-s.q_mu * f * binary_entropy(s.e_mu)? + b.q1 * (1.0 - binary_entropy(b.e1_upper)?));
    let r = raw.max(0.0);
    Ok(KeyRateReport {
        r_per_pulse: r,
        r_bits_per_second: r * repetition_rate_hz,
        repetition_rate_hz,
        sifting_rate: q,
        ec_efficiency: f,
        statistics: *s,
        bounds: *b,
        rate_clamped: raw < 0.0,
        gains_inverted: s.gains_inverted(),
    })
}

/// Bounds and rate in one step. Inputs that make the bounds undefined
/// (degenerate intensities, out-of-range statistics) give a zero rate with
/// `no_single_photon_yield` set instead of an error.
pub fn estimate_key_rate(s: &DecoyStatistics, params: &RateParams) -> KeyRateReport {
    let bounds = single_photon_bounds(s).unwrap_or(SinglePhotonBounds {
        y1_lower: 0.0,
        q1: 0.0,
        e1_upper: 0.5,
        flags: BoundFlags { no_single_photon_yield: true, ..BoundFlags::default() },
    });
    let e_mu = s.e_mu.clamp(0.0, 1.0);
    let stats = DecoyStatistics { e_mu, ..*s };
    secure_key_rate(params.sifting_rate, &stats, params.ec_efficiency, &bounds, params.repetition_rate_hz).unwrap_or(
        KeyRateReport {
            r_per_pulse: 0.0,
            r_bits_per_second: 0.0,
            repetition_rate_hz: params.repetition_rate_hz,
            sifting_rate: params.sifting_rate,
            ec_efficiency: params.ec_efficiency,
            statistics: *s,
            bounds,
            rate_clamped: true,
            gains_inverted: s.gains_inverted(),
        },
    )
}
