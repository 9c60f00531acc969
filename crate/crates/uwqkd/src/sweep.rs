//! Key rate against water distance, one curve per water type.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use uwqkd_core::analysis::{sweep_distance, SweepPoint, SystemParams};
use uwqkd_core::channel::WaterPreset;

use crate::config::SweepConfig;

pub const CSV_HEADER: &str = "distance_m,loss_db,Q_mu,E_mu,Q_nu,E_nu,Y1_L,Q1,e1_U,R_per_pulse,R_bps";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCurve {
    pub water: WaterPreset,
    pub attenuation_per_m: f64,
    pub points: Vec<SweepPoint>,
    /// Flagged conditions by distance.
    pub flags: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub system: SystemParams,
    pub curves: Vec<SweepCurve>,
}

pub fn run_sweep(cfg: &SweepConfig) -> uwqkd_core::Result<SweepReport> {
    let curves = cfg
        .water
        .par_iter()
        .map(|&water| {
            let c = water.coefficient().expect("sweeps use Jerlov presets");
            let points = sweep_distance(c, &cfg.system, &cfg.distances_m)?;
            let flags = points
                .iter()
                .flat_map(|p| {
                    let f = p.bounds.flags;
                    [
                        (f.y1_clamped, "y1_clamped"),
                        (f.e1_clamped, "e1_clamped"),
                        (f.no_single_photon_yield, "no_single_photon_yield"),
                        (p.r_per_pulse == 0.0, "rate_clamped"),
                    ]
                    .into_iter()
                    .filter(|(set, _)| *set)
                    .map(move |(_, name)| format!("{}m:{name}", p.distance_m))
                })
                .collect();
            Ok(SweepCurve { water, attenuation_per_m: c, points, flags })
        })
        .collect::<uwqkd_core::Result<Vec<_>>>()?;
    Ok(SweepReport { system: cfg.system, curves })
}

pub fn csv_row(p: &SweepPoint) -> String {
    let s = &p.statistics;
    format!(
        "{},{},{},{},{},{},{},{},{},{},{}",
        p.distance_m,
        p.loss_db,
        s.q_mu,
        s.e_mu,
        s.q_nu,
        s.e_nu,
        p.bounds.y1_lower,
        p.bounds.q1,
        p.bounds.e1_upper,
        p.r_per_pulse,
        p.r_bps
    )
}

/// One CSV document for a single curve.
pub fn curve_csv(curve: &SweepCurve) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for p in &curve.points {
        out.push_str(&csv_row(p));
        out.push('\n');
    }
    out
}

/// File name used for a curve under `--out`.
pub fn curve_file_name(water: WaterPreset) -> String {
    let tag = match water {
        WaterPreset::JerlovI => "jerlov_i",
        WaterPreset::JerlovII => "jerlov_ii",
        WaterPreset::JerlovIII => "jerlov_iii",
        WaterPreset::Custom => "custom",
    };
    format!("sweep_{tag}.csv")
}
