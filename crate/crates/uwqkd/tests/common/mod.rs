#![allow(dead_code)]

use std::path::PathBuf;

use uwqkd::ExperimentConfig;

/// Link parameters that vary between tests; everything else is the bench setup.
pub struct Link {
    pub pulses: u64,
    pub water_db: f64,
    pub optics_db: f64,
    pub detector_efficiency: f64,
    pub y0: f64,
    pub e_d: f64,
}

impl Link {
    pub fn bench(pulses: u64, water_db: f64) -> Link {
        Link { pulses, water_db, optics_db: 4.1, detector_efficiency: 0.2, y0: 2.705e-5, e_d: 0.01084 }
    }

    pub fn toml(&self) -> String {
        format!(
            r#"
pulses = {pulses}

[seeds]
alice = 11
bob = 22
channel = 33

[source]
preset = "bench"

[channel]
loss_db = {water}

[receiver]
optics_loss_db = {optics}
detector_efficiency = {eff}

[detector]
vacuum_yield = {y0:e}
misalignment_error = {e_d}
gate_width_ns = 5.0
gates_per_frame = 4
double_click_policy = "random_bit"

[protocol]
qber_sample_fraction = 0.1
timeout_ms = 2000
connect_timeout_ms = 10000

[analysis]
preset = "bench"
mode = "empirical"
"#,
            pulses = self.pulses,
            water = self.water_db,
            optics = self.optics_db,
            eff = self.detector_efficiency,
            y0 = self.y0,
            e_d = self.e_d,
        )
    }

    pub fn config(&self) -> ExperimentConfig {
        ExperimentConfig::from_toml(&self.toml()).expect("test config is valid")
    }
}

pub fn with_seeds(mut cfg: ExperimentConfig, alice: u64, bob: u64, channel: u64) -> ExperimentConfig {
    cfg.seeds = uwqkd::Seeds { alice, bob, channel };
    cfg
}

pub fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}
