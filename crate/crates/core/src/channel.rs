//! Underwater optical channel.
//!
//! Attenuation follows Beer-Lambert decay `exp(-c * L)`. Expressed in
//! decibels this is `10 * log10(e) * c * L`, roughly `4.3429 * c * L`.
//! Scattering, divergence and pointing loss are all folded into the single
//! coefficient `c`.

use core::f64::consts::LOG10_E;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_domain, Error, Result};

/// dB per (m⁻¹ · m).
pub const DB_PER_NEPER_LENGTH: f64 = 10.0 * LOG10_E;

/// Jerlov water-type presets with their attenuation coefficients in m⁻¹.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WaterPreset {
    #[serde(rename = "jerlov_i")]
    JerlovI,
    #[serde(rename = "jerlov_ii")]
    JerlovII,
    #[serde(rename = "jerlov_iii")]
    JerlovIII,
    Custom,
}

impl WaterPreset {
    pub const ALL_JERLOV: [WaterPreset; 3] = [WaterPreset::JerlovI, WaterPreset::JerlovII, WaterPreset::JerlovIII];

    /// Attenuation coefficient of a named preset; `None` for `Custom`.
    pub fn coefficient(self) -> Option<f64> {
        match self {
            WaterPreset::JerlovI => Some(0.018),
            WaterPreset::JerlovII => Some(0.13),
            WaterPreset::JerlovIII => Some(0.29),
            WaterPreset::Custom => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            WaterPreset::JerlovI => "I",
            WaterPreset::JerlovII => "II",
            WaterPreset::JerlovIII => "III",
            WaterPreset::Custom => "custom",
        }
    }
}

/// A homogeneous water path.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WaterChannel {
    /// Attenuation coefficient, m⁻¹.
    pub attenuation_per_m: f64,
    pub length_m: f64,
    pub preset: WaterPreset,
}

impl WaterChannel {
    pub fn custom(attenuation_per_m: f64, length_m: f64) -> Result<Self> {
        let ch = WaterChannel { attenuation_per_m, length_m, preset: WaterPreset::Custom };
        ch.validate()?;
        Ok(ch)
    }

    pub fn preset(preset: WaterPreset, length_m: f64) -> Result<Self> {
        let c = preset.coefficient().ok_or(Error::Domain { what: "preset coefficient", value: f64::NAN })?;
        let ch = WaterChannel { attenuation_per_m: c, length_m, preset };
        ch.validate()?;
        Ok(ch)
    }

    pub fn validate(&self) -> Result<()> {
        ensure_domain(self.attenuation_per_m >= 0.0, "attenuation coefficient", self.attenuation_per_m)?;
        ensure_domain(self.length_m >= 0.0, "channel length", self.length_m)?;
        if let Some(c) = self.preset.coefficient() {
            ensure_domain(c == self.attenuation_per_m, "preset coefficient", self.attenuation_per_m)?;
        }
        Ok(())
    }

    pub fn loss_db(&self) -> Result<f64> {
        loss_db(self.attenuation_per_m, self.length_m)
    }
}

/// Receiver-side losses: coupling/optics loss and single-photon detector efficiency.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReceiverLoss {
    pub optics_loss_db: f64,
    pub detector_efficiency: f64,
}

impl ReceiverLoss {
    /// Bench values: 4.1 dB optics loss and a 20% efficient detector.
    pub const BENCH: ReceiverLoss = ReceiverLoss { optics_loss_db: 4.1, detector_efficiency: 0.2 };

    pub fn validate(&self) -> Result<()> {
        ensure_domain(self.optics_loss_db >= 0.0, "optics loss", self.optics_loss_db)?;
        ensure_domain(
            self.detector_efficiency > 0.0 && self.detector_efficiency <= 1.0,
            "detector efficiency",
            self.detector_efficiency,
        )
    }

    /// Optics loss plus the detector inefficiency expressed in dB.
    pub fn total_db(&self) -> f64 {
        self.optics_loss_db + 10.0 * libm::log10(1.0 / self.detector_efficiency)
    }
}

pub fn loss_db(attenuation_per_m: f64, length_m: f64) -> Result<f64> {
    ensure_domain(attenuation_per_m >= 0.0, "attenuation coefficient", attenuation_per_m)?;
    ensure_domain(length_m >= 0.0, "channel length", length_m)?;
    Ok(DB_PER_NEPER_LENGTH * attenuation_per_m * length_m)
}

/// Path length at which a water type accumulates `loss` dB.
pub fn distance_for_loss(attenuation_per_m: f64, loss: f64) -> Result<f64> {
    ensure_domain(attenuation_per_m >= 0.0, "attenuation coefficient", attenuation_per_m)?;
    ensure_domain(loss >= 0.0, "loss", loss)?;
    if loss == 0.0 {
        return Ok(0.0);
    }
    if attenuation_per_m == 0.0 {
        return Err(Error::NoSolution("lossless water never reaches a positive loss"));
    }
    Ok(loss / (DB_PER_NEPER_LENGTH * attenuation_per_m))
}

/// Linear power transmittance of a `loss` dB element.
pub fn transmittance(loss: f64) -> Result<f64> {
    ensure_domain(loss >= 0.0, "loss", loss)?;
    Ok(libm::pow(10.0, -loss / 10.0))
}

/// Water, receiver optics and detector efficiency combined.
pub fn end_to_end_transmittance(ch: &WaterChannel, rx: &ReceiverLoss) -> Result<f64> {
    ch.validate()?;
    rx.validate()?;
    Ok(transmittance(ch.loss_db()?)? * transmittance(rx.optics_loss_db)? * rx.detector_efficiency)
}

/// Transmittance from the source to the detector input, excluding detector efficiency.
pub fn channel_eta(ch: &WaterChannel, rx: &ReceiverLoss) -> Result<f64> {
    ch.validate()?;
    rx.validate()?;
    Ok(transmittance(ch.loss_db()?)? * transmittance(rx.optics_loss_db)?)
}
