//! Fitting `Y0` and `e_d`, and where the fitted model runs out of key.

use serde::{Deserialize, Serialize};

use uwqkd_core::analysis::{calibrate, find_cutoff_distance, Calibration, CalibrationError, SystemParams};
use uwqkd_core::channel::WaterPreset;

use crate::config::CalibrationConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub water: WaterPreset,
    /// Distance where the rate falls to the cutoff rate; `None` if never reached.
    pub distance_m: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub config: CalibrationConfig,
    pub succeeded: bool,
    /// The best fit found, also when it was rejected.
    pub fit: Option<Calibration>,
    pub error: Option<String>,
    pub cutoff_rate: Option<f64>,
    pub cutoffs: Vec<Cutoff>,
}

impl CalibrationReport {
    pub fn system(&self) -> Option<SystemParams> {
        let fit = self.fit.as_ref()?;
        Some(SystemParams {
            mu: self.config.mu,
            nu: self.config.nu,
            y0: fit.y0,
            e_d: fit.e_d,
            receiver: self.config.receiver,
            rate: self.config.rate,
        })
    }
}

pub fn run_calibration(cfg: &CalibrationConfig) -> CalibrationReport {
    let (fit, error) = match calibrate(&cfg.anchors, &cfg.rate, &cfg.grid) {
        Ok(fit) => (Some(fit), None),
        Err(CalibrationError::NoFeasibleFit { best, limit }) => {
            let msg = format!("no feasible fit: RMS relative residual {} exceeds {limit}", best.rms_relative_error);
            (Some(best), Some(msg))
        }
        Err(e) => (None, Some(e.to_string())),
    };
    let mut report = CalibrationReport {
        config: cfg.clone(),
        succeeded: error.is_none(),
        fit,
        error,
        cutoff_rate: cfg.cutoff_rate,
        cutoffs: Vec::new(),
    };
    if let (Some(system), Some(target), true) = (report.system(), cfg.cutoff_rate, report.succeeded) {
        report.cutoffs = WaterPreset::ALL_JERLOV
            .iter()
            .map(|&w| Cutoff {
                water: w,
                distance_m: w.coefficient().and_then(|c| find_cutoff_distance(c, &system, target).ok()),
            })
            .collect();
    }
    report
}

pub fn residuals_csv(report: &CalibrationReport) -> String {
    let mut out = String::from("total_db,mu,nu,kind,target,model,relative_error\n");
    if let Some(fit) = &report.fit {
        for r in &fit.residuals {
            let (kind, target) = match r.anchor.target {
                uwqkd_core::analysis::AnchorTarget::Rate(v) => ("rate", v),
                uwqkd_core::analysis::AnchorTarget::Qber(v) => ("qber", v),
                uwqkd_core::analysis::AnchorTarget::Gain(v) => ("gain", v),
            };
            out.push_str(&format!(
                "{},{},{},{kind},{target},{},{}\n",
                r.anchor.total_db, r.anchor.mu, r.anchor.nu, r.model, r.relative_error
            ));
        }
    }
    out
}
