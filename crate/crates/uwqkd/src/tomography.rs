//! State tomography of the four BB84 states after a fixed misalignment.

use serde::{Deserialize, Serialize};

use uwqkd_core::polarization::{
    fidelity, ideal_state, rotate, simulate_counts, tomography, DensityMatrix, Polarization, StateVector,
};
use uwqkd_core::rng::substream;

use crate::config::TomographySection;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateReport {
    pub state: Polarization,
    pub rho_re: [[f64; 2]; 2],
    pub rho_im: [[f64; 2]; 2],
    pub fidelity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TomographyReport {
    pub misalignment_deg: f64,
    pub shots_per_setting: u64,
    pub seed: u64,
    pub states: Vec<StateReport>,
    pub average_fidelity: f64,
}

/// Density matrix from exact outcome probabilities.
fn exact_density(s: &StateVector) -> DensityMatrix {
    let p = |target: &StateVector| s.inner(target).norm_sqr() / s.norm_sqr();
    let h = p(&ideal_state(Polarization::H));
    let d = p(&ideal_state(Polarization::P));
    let r = p(&StateVector::right_circular());
    DensityMatrix::from_stokes([2.0 * h - 1.0, 2.0 * d - 1.0, 2.0 * r - 1.0])
}

pub fn run_tomography(cfg: &TomographySection) -> uwqkd_core::Result<TomographyReport> {
    let theta = cfg.misalignment_deg.to_radians();
    let states = Polarization::ALL
        .iter()
        .enumerate()
        .map(|(i, &pol)| {
            let prepared = rotate(&ideal_state(pol), theta);
            let rho = if cfg.shots_per_setting == 0 {
                exact_density(&prepared)
            } else {
                let mut rng = substream(cfg.seed, i as u64);
                tomography(&simulate_counts(&prepared, cfg.shots_per_setting, &mut rng))?
            };
            let m = rho.0;
            Ok(StateReport {
                state: pol,
                rho_re: [[m[0][0].re, m[0][1].re], [m[1][0].re, m[1][1].re]],
                rho_im: [[m[0][0].im, m[0][1].im], [m[1][0].im, m[1][1].im]],
                fidelity: fidelity(&rho, pol)?,
            })
        })
        .collect::<uwqkd_core::Result<Vec<_>>>()?;
    let average_fidelity = states.iter().map(|s| s.fidelity).sum::<f64>() / states.len() as f64;
    Ok(TomographyReport {
        misalignment_deg: cfg.misalignment_deg,
        shots_per_setting: cfg.shots_per_setting,
        seed: cfg.seed,
        states,
        average_fidelity,
    })
}

pub fn tomography_csv(r: &TomographyReport) -> String {
    let mut out = String::from("state,rho_hh_re,rho_hv_re,rho_hv_im,rho_vv_re,fidelity\n");
    for s in &r.states {
        out.push_str(&format!(
            "{:?},{},{},{},{},{}\n",
            s.state, s.rho_re[0][0], s.rho_re[0][1], s.rho_im[0][1], s.rho_re[1][1], s.fidelity
        ));
    }
    out
}
