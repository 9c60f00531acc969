//! Experiment configuration files.
//!
//! A config is one TOML document. Key names carry their units (`length_m`,
//! `loss_db`, `repetition_rate_hz`). Physics values have no implicit
//! defaults: each one is either written out or taken from a named preset,
//! and [`ConfigFile`] resolves presets into explicit values so that reports
//! embed exactly what was simulated.
//!
//! ```toml
//! pulses = 1_000_000
//!
//! [seeds]
//! alice = 1
//! bob = 2
//! channel = 3
//!
//! [source]
//! preset = "bench"
//!
//! [channel]
//! preset = "jerlov_i"
//! length_m = 209.0
//!
//! [receiver]
//! preset = "bench"
//!
//! [detector]
//! vacuum_yield = 2.8e-5
//! misalignment_error = 0.0102
//! gate_width_ns = 5.0
//! gates_per_frame = 4
//! double_click_policy = "random_bit"
//!
//! [protocol]
//! qber_sample_fraction = 0.1
//!
//! [analysis]
//! preset = "bench"
//! mode = "empirical"
//! ```

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use uwqkd_core::analysis::{Anchor, CalibrationGrid, RateParams, SystemParams};
use uwqkd_core::channel::{channel_eta, loss_db, ReceiverLoss, WaterChannel, WaterPreset};
use uwqkd_core::detection::{dark_count_for_yield, vacuum_yield, DetectorConfig, DoubleClickPolicy};
use uwqkd_core::polarization::{misalignment_angle, misalignment_error_prob};
use uwqkd_core::source::SourceConfig;

/// Empirical runs below this many pulses give statistics too noisy to use.
pub const MIN_EMPIRICAL_PULSES: u64 = 10_000;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("cannot parse config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("missing [{0}] section")]
    MissingSection(&'static str),
    #[error("[{section}] is missing `{key}`")]
    MissingKey { section: &'static str, key: &'static str },
    #[error("[{section}] {message}")]
    Invalid { section: &'static str, message: String },
}

fn invalid(section: &'static str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { section, message: message.into() }
}

fn require<T>(v: Option<T>, section: &'static str, key: &'static str) -> Result<T, ConfigError> {
    v.ok_or(ConfigError::MissingKey { section, key })
}

fn core_check(section: &'static str, r: uwqkd_core::Result<()>) -> Result<(), ConfigError> {
    r.map_err(|e| invalid(section, e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BenchPreset {
    /// The laboratory system: μ = 0.8, ν = 0.1 at 20 MHz with word-table
    /// classes; 4.1 dB receiver optics and 20% detector efficiency; q = 0.5
    /// and f = 1.16.
    Bench,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StatisticsMode {
    /// Expected values from the model; no pulses are simulated.
    Analytic,
    /// Monte-Carlo tallies from a full protocol run.
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    pub alice: u64,
    pub bob: u64,
    pub channel: u64,
}

impl Seeds {
    /// Expands a single command-line seed into the triple `(n, n+1, n+2)`.
    pub fn from_master(n: u64) -> Seeds {
        Seeds { alice: n, bob: n.wrapping_add(1), channel: n.wrapping_add(2) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SourceSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<BenchPreset>,
    pub mu: Option<f64>,
    pub nu: Option<f64>,
    /// (signal, decoy, vacuum)
    pub class_probabilities: Option<[f64; 3]>,
    pub repetition_rate_hz: Option<f64>,
}

impl SourceSection {
    fn resolve(&mut self) -> Result<SourceConfig, ConfigError> {
        if self.preset.is_some() {
            let b = SourceConfig::bench(0);
            self.mu.get_or_insert(b.mu);
            self.nu.get_or_insert(b.nu);
            self.class_probabilities.get_or_insert(b.class_probabilities);
            self.repetition_rate_hz.get_or_insert(b.repetition_rate_hz);
        }
        let cfg = SourceConfig {
            mu: require(self.mu, "source", "mu")?,
            nu: require(self.nu, "source", "nu")?,
            class_probabilities: require(self.class_probabilities, "source", "class_probabilities")?,
            repetition_rate_hz: require(self.repetition_rate_hz, "source", "repetition_rate_hz")?,
            rng_seed: 0,
        };
        core_check("source", cfg.validate())?;
        Ok(cfg)
    }
}

/// Either a water path (preset or coefficient, plus length) or a loss in dB.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChannelSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<WaterPreset>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attenuation_per_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_db: Option<f64>,
}

/// The water channel after resolution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ChannelSpec {
    Water(WaterChannel),
    Loss { loss_db: f64 },
}

impl ChannelSpec {
    pub fn loss_db(&self) -> f64 {
        match self {
            ChannelSpec::Water(w) => loss_db(w.attenuation_per_m, w.length_m).unwrap_or(f64::INFINITY),
            ChannelSpec::Loss { loss_db } => *loss_db,
        }
    }
}

impl ChannelSection {
    fn resolve(&self) -> Result<ChannelSpec, ConfigError> {
        let spec = match (self.preset, self.attenuation_per_m, self.length_m, self.loss_db) {
            (Some(WaterPreset::Custom), ..) => {
                return Err(invalid("channel", "use `attenuation_per_m` instead of preset \"custom\""))
            }
            (Some(p), None, Some(len), None) => {
                ChannelSpec::Water(WaterChannel::preset(p, len).map_err(|e| invalid("channel", e.to_string()))?)
            }
            (None, Some(c), Some(len), None) => {
                ChannelSpec::Water(WaterChannel::custom(c, len).map_err(|e| invalid("channel", e.to_string()))?)
            }
            (None, None, None, Some(db)) => {
                if !(db >= 0.0 && db.is_finite()) {
                    return Err(invalid("channel", format!("loss_db must be finite and non-negative, got {db}")));
                }
                ChannelSpec::Loss { loss_db: db }
            }
            _ => {
                return Err(invalid(
                    "channel",
                    "give exactly one of: preset + length_m, attenuation_per_m + length_m, or loss_db",
                ))
            }
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReceiverSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<BenchPreset>,
    pub optics_loss_db: Option<f64>,
    pub detector_efficiency: Option<f64>,
}

impl ReceiverSection {
    fn resolve(&mut self) -> Result<ReceiverLoss, ConfigError> {
        if self.preset.is_some() {
            self.optics_loss_db.get_or_insert(ReceiverLoss::BENCH.optics_loss_db);
            self.detector_efficiency.get_or_insert(ReceiverLoss::BENCH.detector_efficiency);
        }
        let rx = ReceiverLoss {
            optics_loss_db: require(self.optics_loss_db, "receiver", "optics_loss_db")?,
            detector_efficiency: require(self.detector_efficiency, "receiver", "detector_efficiency")?,
        };
        core_check("receiver", rx.validate())?;
        Ok(rx)
    }
}

/// Background is given either as the vacuum yield `Y0` or as the
/// per-detector dark-count probability; misalignment either as the error
/// probability `e_d` or as a rotation angle.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vacuum_yield: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dark_count_prob_per_gate: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misalignment_error: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub misalignment_deg: Option<f64>,
    pub gate_width_ns: Option<f64>,
    pub gates_per_frame: Option<u32>,
    pub double_click_policy: Option<DoubleClickPolicy>,
}

/// Detector parameters with both background and misalignment in both forms.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorParams {
    pub vacuum_yield: f64,
    pub dark_count_prob_per_gate: f64,
    pub misalignment_error: f64,
    pub misalignment_deg: f64,
    pub gate_width_ns: f64,
    pub gates_per_frame: u32,
    pub double_click_policy: DoubleClickPolicy,
}

impl DetectorParams {
    pub fn theta(&self) -> f64 {
        self.misalignment_deg.to_radians()
    }

    pub fn detector_config(&self, detector_efficiency: f64) -> DetectorConfig {
        DetectorConfig {
            detector_efficiency,
            dark_count_prob_per_gate: self.dark_count_prob_per_gate,
            gate_width_ns: self.gate_width_ns,
            gates_per_frame: self.gates_per_frame,
            double_click_policy: self.double_click_policy,
        }
    }
}

impl DetectorSection {
    fn resolve(&self) -> Result<DetectorParams, ConfigError> {
        let s = "detector";
        let (y0, dark) = match (self.vacuum_yield, self.dark_count_prob_per_gate) {
            (Some(y0), None) => (y0, dark_count_for_yield(y0).map_err(|e| invalid(s, e.to_string()))?),
            (None, Some(p)) => {
                if !(0.0..=1.0).contains(&p) {
                    return Err(invalid(s, format!("dark_count_prob_per_gate must lie in [0, 1], got {p}")));
                }
                (vacuum_yield(p), p)
            }
            _ => return Err(invalid(s, "give exactly one of vacuum_yield or dark_count_prob_per_gate")),
        };
        let (e_d, deg) = match (self.misalignment_error, self.misalignment_deg) {
            (Some(e), None) => {
                if !(0.0..=0.5).contains(&e) {
                    return Err(invalid(s, format!("misalignment_error must lie in [0, 0.5], got {e}")));
                }
                (e, misalignment_angle(e).map_err(|e| invalid(s, e.to_string()))?.to_degrees())
            }
            (None, Some(deg)) => {
                if !(0.0..=45.0).contains(&deg) {
                    return Err(invalid(s, format!("misalignment_deg must lie in [0, 45], got {deg}")));
                }
                (misalignment_error_prob(deg.to_radians()), deg)
            }
            _ => return Err(invalid(s, "give exactly one of misalignment_error or misalignment_deg")),
        };
        let p = DetectorParams {
            vacuum_yield: y0,
            dark_count_prob_per_gate: dark,
            misalignment_error: e_d,
            misalignment_deg: deg,
            gate_width_ns: require(self.gate_width_ns, s, "gate_width_ns")?,
            gates_per_frame: require(self.gates_per_frame, s, "gates_per_frame")?,
            double_click_policy: require(self.double_click_policy, s, "double_click_policy")?,
        };
        core_check(s, p.detector_config(1.0).validate())?;
        Ok(p)
    }
}

fn default_timeout_ms() -> u64 {
    10_000
}

fn default_connect_timeout_ms() -> u64 {
    30_000
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtocolOptions {
    /// Fraction of matched signal bits disclosed for error estimation.
    pub qber_sample_fraction: f64,
    /// Probability that the classical transport silently drops a frame.
    #[serde(default)]
    pub frame_drop_probability: f64,
    /// Silence on the classical link after which a party aborts.
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// How long `serve` waits for the peer and `connect` retries.
    #[serde(default = "default_connect_timeout_ms")]
    pub connect_timeout_ms: u64,
}

impl ProtocolOptions {
    fn validate(&self) -> Result<(), ConfigError> {
        let f = self.qber_sample_fraction;
        if !(f > 0.0 && f < 1.0) {
            return Err(invalid("protocol", format!("qber_sample_fraction must lie in (0, 1), got {f}")));
        }
        let d = self.frame_drop_probability;
        if !(0.0..=1.0).contains(&d) {
            return Err(invalid("protocol", format!("frame_drop_probability must lie in [0, 1], got {d}")));
        }
        if self.timeout_ms == 0 {
            return Err(invalid("protocol", "timeout_ms must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub preset: Option<BenchPreset>,
    pub sifting_rate: Option<f64>,
    pub ec_efficiency: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mode: Option<StatisticsMode>,
}

impl AnalysisSection {
    fn resolve(&mut self) -> Result<(f64, f64), ConfigError> {
        if self.preset.is_some() {
            let b = RateParams::bench();
            self.sifting_rate.get_or_insert(b.sifting_rate);
            self.ec_efficiency.get_or_insert(b.ec_efficiency);
        }
        let q = require(self.sifting_rate, "analysis", "sifting_rate")?;
        let f = require(self.ec_efficiency, "analysis", "ec_efficiency")?;
        if !(q > 0.0 && q <= 1.0) {
            return Err(invalid("analysis", format!("sifting_rate must lie in (0, 1], got {q}")));
        }
        if !(f >= 1.0 && f.is_finite()) {
            return Err(invalid("analysis", format!("ec_efficiency must be at least 1, got {f}")));
        }
        Ok((q, f))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputPaths {
    /// Report file name, relative to `--out` when given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<String>,
    /// Frame transcript (JSON lines); none is written when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub transcript: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Explicit distances; alternative to the start/stop/step grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distances_m: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_m: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_m: Option<f64>,
    /// Water types; all three Jerlov presets when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub water: Option<Vec<WaterPreset>>,
}

impl SweepSection {
    pub fn distances(&self) -> Result<Vec<f64>, ConfigError> {
        let s = "sweep";
        let d = match (&self.distances_m, self.start_m, self.stop_m, self.step_m) {
            (Some(d), None, None, None) => d.clone(),
            (None, Some(a), Some(b), Some(step)) => {
                if !(step > 0.0 && b >= a) {
                    return Err(invalid(s, "need step_m > 0 and stop_m >= start_m"));
                }
                let n = ((b - a) / step + 1e-9).floor() as usize;
                (0..=n).map(|i| a + step * i as f64).collect()
            }
            _ => return Err(invalid(s, "give either distances_m or start_m, stop_m and step_m")),
        };
        if d.is_empty() || d.iter().any(|x| !(*x >= 0.0 && x.is_finite())) {
            return Err(invalid(s, "distances must be non-empty, finite and non-negative"));
        }
        Ok(d)
    }

    pub fn water_types(&self) -> Result<Vec<WaterPreset>, ConfigError> {
        let w = self.water.clone().unwrap_or_else(|| WaterPreset::ALL_JERLOV.to_vec());
        if w.is_empty() || w.contains(&WaterPreset::Custom) {
            return Err(invalid("sweep", "water must list Jerlov presets"));
        }
        Ok(w)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationSection {
    pub anchors: Vec<Anchor>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<CalibrationGrid>,
    /// Per-pulse rate whose crossing distance is reported for each water type.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cutoff_rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TomographySection {
    pub misalignment_deg: f64,
    /// Projective measurements per basis and state; 0 uses exact
    /// probabilities instead of sampled counts.
    pub shots_per_setting: u64,
    pub seed: u64,
}

/// A config document as written. Each command requires the sections it uses.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigFile {
    pub pulses: Option<u64>,
    pub seeds: Option<Seeds>,
    pub source: Option<SourceSection>,
    pub channel: Option<ChannelSection>,
    pub receiver: Option<ReceiverSection>,
    pub detector: Option<DetectorSection>,
    pub protocol: Option<ProtocolOptions>,
    pub analysis: Option<AnalysisSection>,
    pub output: Option<OutputPaths>,
    pub sweep: Option<SweepSection>,
    pub calibration: Option<CalibrationSection>,
    pub tomography: Option<TomographySection>,
}

fn section<T: Clone>(v: &Option<T>, name: &'static str) -> Result<T, ConfigError> {
    v.clone().ok_or(ConfigError::MissingSection(name))
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<ConfigFile, ConfigError> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<ConfigFile, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    pub fn experiment(&self) -> Result<ExperimentConfig, ConfigError> {
        let mut source = section(&self.source, "source")?;
        let channel = section(&self.channel, "channel")?;
        let mut receiver = section(&self.receiver, "receiver")?;
        let detector = section(&self.detector, "detector")?;
        let protocol = section(&self.protocol, "protocol")?;
        let mut analysis = section(&self.analysis, "analysis")?;
        source.resolve()?;
        let channel_spec = channel.resolve()?;
        receiver.resolve()?;
        let detector_params = detector.resolve()?;
        protocol.validate()?;
        analysis.resolve()?;
        let mode = require(analysis.mode, "analysis", "mode")?;
        let pulses = self.pulses.ok_or(ConfigError::MissingKey { section: "top level", key: "pulses" })?;
        if mode == StatisticsMode::Empirical && pulses < MIN_EMPIRICAL_PULSES {
            return Err(invalid("top level", format!("empirical runs need at least {MIN_EMPIRICAL_PULSES} pulses")));
        }
        let cfg = ExperimentConfig {
            pulses,
            seeds: section(&self.seeds, "seeds")?,
            source,
            channel,
            receiver,
            detector,
            protocol,
            analysis,
            output: self.output.clone().unwrap_or_default(),
        };
        debug_assert_eq!(cfg.channel_spec().ok(), Some(channel_spec));
        debug_assert_eq!(cfg.detector_params().ok(), Some(detector_params));
        Ok(cfg)
    }

    pub fn sweep(&self) -> Result<SweepConfig, ConfigError> {
        let mut source = section(&self.source, "source")?;
        let mut receiver = section(&self.receiver, "receiver")?;
        let detector = section(&self.detector, "detector")?;
        let mut analysis = section(&self.analysis, "analysis")?;
        let sweep = section(&self.sweep, "sweep")?;
        let src = source.resolve()?;
        let rx = receiver.resolve()?;
        let det = detector.resolve()?;
        let (q, f) = analysis.resolve()?;
        if analysis.mode == Some(StatisticsMode::Empirical) {
            return Err(invalid("analysis", "sweeps use analytic statistics"));
        }
        let system = SystemParams {
            mu: src.mu,
            nu: src.nu,
            y0: det.vacuum_yield,
            e_d: det.misalignment_error,
            receiver: rx,
            rate: RateParams { sifting_rate: q, ec_efficiency: f, repetition_rate_hz: src.repetition_rate_hz },
        };
        core_check("source", system.validate())?;
        Ok(SweepConfig { system, distances_m: sweep.distances()?, water: sweep.water_types()? })
    }

    pub fn calibration(&self) -> Result<CalibrationConfig, ConfigError> {
        let mut source = section(&self.source, "source")?;
        let mut receiver = section(&self.receiver, "receiver")?;
        let mut analysis = section(&self.analysis, "analysis")?;
        let cal = section(&self.calibration, "calibration")?;
        let src = source.resolve()?;
        let rx = receiver.resolve()?;
        let (q, f) = analysis.resolve()?;
        Ok(CalibrationConfig {
            mu: src.mu,
            nu: src.nu,
            receiver: rx,
            rate: RateParams { sifting_rate: q, ec_efficiency: f, repetition_rate_hz: src.repetition_rate_hz },
            anchors: cal.anchors,
            grid: cal.grid.unwrap_or_default(),
            cutoff_rate: cal.cutoff_rate,
        })
    }

    pub fn tomography(&self) -> Result<TomographySection, ConfigError> {
        let t = section(&self.tomography, "tomography")?;
        if !(0.0..=90.0).contains(&t.misalignment_deg) {
            return Err(invalid(
                "tomography",
                format!("misalignment_deg must lie in [0, 90], got {}", t.misalignment_deg),
            ));
        }
        Ok(t)
    }
}

/// Everything a seeded protocol run needs, with presets expanded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub pulses: u64,
    pub seeds: Seeds,
    pub source: SourceSection,
    pub channel: ChannelSection,
    pub receiver: ReceiverSection,
    pub detector: DetectorSection,
    pub protocol: ProtocolOptions,
    pub analysis: AnalysisSection,
    #[serde(default)]
    pub output: OutputPaths,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, ConfigError> {
        ConfigFile::parse(text)?.experiment()
    }

    pub fn source_config(&self) -> Result<SourceConfig, ConfigError> {
        self.source.clone().resolve()
    }

    pub fn channel_spec(&self) -> Result<ChannelSpec, ConfigError> {
        self.channel.resolve()
    }

    pub fn receiver_loss(&self) -> Result<ReceiverLoss, ConfigError> {
        self.receiver.clone().resolve()
    }

    pub fn detector_params(&self) -> Result<DetectorParams, ConfigError> {
        self.detector.resolve()
    }

    pub fn mode(&self) -> StatisticsMode {
        self.analysis.mode.unwrap_or(StatisticsMode::Empirical)
    }

    pub fn rate_params(&self) -> Result<RateParams, ConfigError> {
        let (q, f) = self.analysis.clone().resolve()?;
        Ok(RateParams {
            sifting_rate: q,
            ec_efficiency: f,
            repetition_rate_hz: self.source_config()?.repetition_rate_hz,
        })
    }

    /// Channel transmittance excluding the detector efficiency.
    pub fn channel_eta(&self) -> Result<f64, ConfigError> {
        let rx = self.receiver_loss()?;
        let eta = match self.channel_spec()? {
            ChannelSpec::Water(w) => channel_eta(&w, &rx),
            ChannelSpec::Loss { loss_db } => uwqkd_core::channel::transmittance(loss_db + rx.optics_loss_db),
        };
        eta.map_err(|e| invalid("channel", e.to_string()))
    }

    /// Checks every section; [`ConfigFile::experiment`] already did this for
    /// configs loaded from files.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let file = ConfigFile {
            pulses: Some(self.pulses),
            seeds: Some(self.seeds),
            source: Some(self.source.clone()),
            channel: Some(self.channel.clone()),
            receiver: Some(self.receiver.clone()),
            detector: Some(self.detector.clone()),
            protocol: Some(self.protocol),
            analysis: Some(self.analysis.clone()),
            output: Some(self.output.clone()),
            ..ConfigFile::default()
        };
        file.experiment().map(|_| ())
    }

    /// SHA-256 over the canonical JSON of everything except output paths.
    /// Both parties must agree on it before any key material is exchanged.
    pub fn digest(&self) -> [u8; 32] {
        let canonical = ExperimentConfig { output: OutputPaths::default(), ..self.clone() };
        let json = serde_json::to_vec(&canonical).expect("config serializes");
        Sha256::digest(json).into()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub system: SystemParams,
    pub distances_m: Vec<f64>,
    pub water: Vec<WaterPreset>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    pub mu: f64,
    pub nu: f64,
    pub receiver: ReceiverLoss,
    pub rate: RateParams,
    pub anchors: Vec<Anchor>,
    pub grid: CalibrationGrid,
    pub cutoff_rate: Option<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = r#"
pulses = 100000

[seeds]
alice = 1
bob = 2
channel = 3

[source]
preset = "bench"

[channel]
preset = "jerlov_i"
length_m = 209.0

[receiver]
preset = "bench"

[detector]
vacuum_yield = 2.8e-5
misalignment_error = 0.0102
gate_width_ns = 5.0
gates_per_frame = 4
double_click_policy = "random_bit"

[protocol]
qber_sample_fraction = 0.1

[analysis]
preset = "bench"
mode = "empirical"
"#;

    #[test]
    fn presets_expand_to_explicit_values() {
        let cfg = ExperimentConfig::from_toml(BASE).unwrap();
        assert_eq!(cfg.source.mu, Some(0.8));
        assert_eq!(cfg.source.class_probabilities, Some([0.5, 0.25, 0.25]));
        assert_eq!(cfg.receiver.optics_loss_db, Some(4.1));
        assert_eq!(cfg.analysis.ec_efficiency, Some(1.16));
        assert!((cfg.channel_spec().unwrap().loss_db() - 16.338).abs() < 0.01);
        let d = cfg.detector_params().unwrap();
        assert!((vacuum_yield(d.dark_count_prob_per_gate) - 2.8e-5).abs() < 1e-18);
        assert!((misalignment_error_prob(d.theta()) - 0.0102).abs() < 1e-15);
        assert_eq!(cfg.protocol.timeout_ms, 10_000);
    }

    #[test]
    fn physics_values_have_no_defaults() {
        let text = BASE.replace("preset = \"bench\"\nmode", "sifting_rate = 0.5\nmode");
        match ExperimentConfig::from_toml(&text) {
            Err(ConfigError::MissingKey { section: "analysis", key: "ec_efficiency" }) => {}
            other => panic!("{other:?}"),
        }
        let text = BASE.replace("gate_width_ns = 5.0\n", "");
        assert!(matches!(
            ExperimentConfig::from_toml(&text),
            Err(ConfigError::MissingKey { key: "gate_width_ns", .. })
        ));
    }

    #[test]
    fn channel_forms_are_exclusive() {
        let both = BASE.replace("length_m = 209.0", "length_m = 209.0\nloss_db = 3.0");
        assert!(matches!(ExperimentConfig::from_toml(&both), Err(ConfigError::Invalid { section: "channel", .. })));
        let db = BASE.replace("preset = \"jerlov_i\"\nlength_m = 209.0", "loss_db = 16.35");
        assert_eq!(ExperimentConfig::from_toml(&db).unwrap().channel_spec().unwrap().loss_db(), 16.35);
        let custom = BASE.replace("preset = \"jerlov_i\"", "attenuation_per_m = 0.98").replace("209.0", "2.4");
        let l = ExperimentConfig::from_toml(&custom).unwrap().channel_spec().unwrap().loss_db();
        assert!((l - 10.21).abs() < 0.05, "{l}");
    }

    #[test]
    fn rejects_bad_values_and_unknown_keys() {
        for (from, to) in [
            ("qber_sample_fraction = 0.1", "qber_sample_fraction = 1.5"),
            ("misalignment_error = 0.0102", "misalignment_error = 0.7"),
            ("pulses = 100000", "pulses = 10"),
            ("length_m = 209.0", "length_m = -1.0"),
            ("gates_per_frame = 4", "gates_per_frame = 4\ncolour = \"blue\""),
        ] {
            let text = BASE.replace(from, to);
            assert!(ExperimentConfig::from_toml(&text).is_err(), "{to}");
        }
        let analytic = BASE.replace("pulses = 100000", "pulses = 10").replace("\"empirical\"", "\"analytic\"");
        assert!(ExperimentConfig::from_toml(&analytic).is_ok());
    }

    #[test]
    fn digest_ignores_output_paths_only() {
        let a = ExperimentConfig::from_toml(BASE).unwrap();
        let mut b = a.clone();
        b.output.transcript = Some("t.jsonl".into());
        assert_eq!(a.digest(), b.digest());
        b.seeds.bob += 1;
        assert_ne!(a.digest(), b.digest());
    }

    #[test]
    fn resolved_config_survives_toml_and_json() {
        let a = ExperimentConfig::from_toml(BASE).unwrap();
        let back: ExperimentConfig = toml::from_str(&toml::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, back);
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&a).unwrap()).unwrap();
        assert_eq!(a, back);
    }

    #[test]
    fn sweep_grid() {
        let text = format!("{BASE}\n[sweep]\nstart_m = 0.0\nstop_m = 300.0\nstep_m = 50.0\n")
            .replace("\"empirical\"", "\"analytic\"");
        let s = ConfigFile::parse(&text).unwrap().sweep().unwrap();
        assert_eq!(s.distances_m, vec![0.0, 50.0, 100.0, 150.0, 200.0, 250.0, 300.0]);
        assert_eq!(s.water.len(), 3);
    }
}
