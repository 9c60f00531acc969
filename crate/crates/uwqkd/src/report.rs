//! Run reports.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use uwqkd_core::analysis::{DecoyStatistics, KeyRateReport, SinglePhotonBounds};
use uwqkd_core::postprocess::FinalKeyLength;
use uwqkd_core::protocol::{
    pack_bits, AbortInfo, ClassTallies, ErrorCounters, Phase, ReconciliationStats, Role, Session,
};

use crate::config::{ExperimentConfig, StatisticsMode};
use crate::sim::SimulationSummary;

pub const REPORT_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Topology {
    /// Both parties in one process.
    InProcess,
    /// The sender's side of a two-process run.
    Alice,
    /// The receiver's side of a two-process run.
    Bob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    /// A non-empty secret key was distilled.
    Key,
    /// The protocol finished but the estimated rate left nothing to distil.
    NoKey,
    Aborted,
    /// Analytic mode: no protocol was run.
    ModelOnly,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkSummary {
    pub water_loss_db: f64,
    pub receiver_optics_db: f64,
    pub detector_efficiency: f64,
    /// Water plus receiver optics plus detector efficiency.
    pub total_loss_db: f64,
    /// Transmittance to the detector input.
    pub channel_eta: f64,
    /// Transmittance including detector efficiency.
    pub total_eta: f64,
    pub vacuum_yield: f64,
    pub misalignment_error: f64,
    pub misalignment_deg: f64,
}

/// The columns of the laboratory results table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub attenuation_db: f64,
    pub q_mu: f64,
    pub e_mu: f64,
    pub q_nu: f64,
    pub q1: f64,
    pub e1: f64,
    pub r_per_pulse: f64,
    pub r_bps: f64,
}

impl TableRow {
    pub const CSV_HEADER: &'static str = "attenuation_db,Q_mu,E_mu,Q_nu,Q1,e1,R_per_pulse,R_bps";

    pub fn new(attenuation_db: f64, k: &KeyRateReport) -> TableRow {
        TableRow {
            attenuation_db,
            q_mu: k.statistics.q_mu,
            e_mu: k.statistics.e_mu,
            q_nu: k.statistics.q_nu,
            q1: k.bounds.q1,
            e1: k.bounds.e1_upper,
            r_per_pulse: k.r_per_pulse,
            r_bps: k.r_bits_per_second,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{}",
            self.attenuation_db, self.q_mu, self.e_mu, self.q_nu, self.q1, self.e1, self.r_per_pulse, self.r_bps
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartySummary {
    pub role: Role,
    pub phase: Phase,
    pub sifted_bits: u64,
    pub disclosed_bits: u64,
    pub errors: ErrorCounters,
    pub abort: Option<AbortInfo>,
    pub frames_sent: u64,
    pub frames_received: u64,
    pub final_key_bits: Option<usize>,
    /// SHA-256 of the final key packed MSB first.
    pub final_key_sha256: Option<String>,
}

impl PartySummary {
    pub fn of(session: &Session) -> PartySummary {
        let r = session.report();
        let key = session.final_key();
        PartySummary {
            role: r.role,
            phase: r.phase,
            sifted_bits: r.sifted_bits,
            disclosed_bits: r.disclosed_bits,
            errors: r.errors,
            abort: r.abort,
            frames_sent: r.frames_sent,
            frames_received: r.frames_received,
            final_key_bits: key.map(<[u8]>::len),
            final_key_sha256: key.map(key_hash),
        }
    }
}

pub fn key_hash(bits: &[u8]) -> String {
    hex::encode(Sha256::digest(pack_bits(bits)))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub schema: u32,
    pub tool: String,
    pub topology: Topology,
    pub mode: StatisticsMode,
    /// The resolved configuration that produced this report.
    pub config: ExperimentConfig,
    pub config_digest: String,
    pub link: LinkSummary,
    /// Analytic expectation for this link.
    pub model: KeyRateReport,
    /// Simulator ground truth; in-process runs only.
    pub simulation: Option<SimulationSummary>,
    pub tallies: Option<ClassTallies>,
    /// Measured in empirical mode, expected in analytic mode.
    pub statistics: Option<DecoyStatistics>,
    pub bounds: Option<SinglePhotonBounds>,
    pub key_rate: Option<KeyRateReport>,
    pub table: Option<TableRow>,
    pub reconciliation: Option<ReconciliationStats>,
    pub final_length: Option<FinalKeyLength>,
    pub parties: Vec<PartySummary>,
    pub outcome: Outcome,
    /// Whether both final keys are identical; only known in-process.
    pub keys_match: Option<bool>,
    /// Every clamped, capped or otherwise degraded result.
    pub flags: Vec<String>,
    pub notes: Vec<String>,
    pub wall_clock_s: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("reports serialize")
    }

    pub fn from_json(text: &str) -> serde_json::Result<RunReport> {
        serde_json::from_str(text)
    }

    pub fn party(&self, role: Role) -> Option<&PartySummary> {
        self.parties.iter().find(|p| p.role == role)
    }
}

pub(crate) fn rate_flags(k: &KeyRateReport, prefix: &str, flags: &mut Vec<String>) {
    let b = k.bounds.flags;
    for (set, name) in [
        (k.rate_clamped, "rate_clamped"),
        (k.gains_inverted, "gains_inverted"),
        (b.y1_clamped, "y1_clamped"),
        (b.e1_clamped, "e1_clamped"),
        (b.no_single_photon_yield, "no_single_photon_yield"),
    ] {
        if set {
            flags.push(format!("{prefix}{name}"));
        }
    }
}

/// Flags of the measured results and of each party's transport.
pub(crate) fn collect_flags(
    key_rate: Option<&KeyRateReport>,
    final_length: Option<&FinalKeyLength>,
    parties: &[PartySummary],
    dropped_frames: u64,
) -> Vec<String> {
    let mut flags = Vec::new();
    if let Some(k) = key_rate {
        rate_flags(k, "", &mut flags);
    }
    if let Some(f) = final_length {
        if f.capped {
            flags.push("final_length_capped".into());
        }
        if f.no_key {
            flags.push("no_key".into());
        }
    }
    if dropped_frames > 0 {
        flags.push(format!("frames_dropped:{dropped_frames}"));
    }
    for p in parties {
        let role = match p.role {
            Role::Alice => "alice",
            Role::Bob => "bob",
        };
        if p.errors.total() > 0 {
            flags.push(format!("{role}_transport_errors:{}", p.errors.total()));
        }
        if let Some(a) = &p.abort {
            let origin = if a.by_peer { "peer" } else { "local" };
            flags.push(format!("{role}_aborted:{:?}:{origin}", a.code));
        }
    }
    flags
}

pub(crate) fn standard_notes(cfg: &ExperimentConfig) -> Vec<String> {
    let mut notes = vec!["classical frames are integrity-checked but not authenticated".to_string()];
    if cfg.mode() == StatisticsMode::Empirical {
        notes.push("statistics are asymptotic estimates without finite-size corrections".to_string());
    }
    notes
}

pub(crate) fn outcome_of(parties: &[PartySummary]) -> Outcome {
    if parties.iter().any(|p| p.phase == Phase::Aborted || p.phase != Phase::Done) {
        return Outcome::Aborted;
    }
    if parties.iter().all(|p| p.final_key_bits.unwrap_or(0) > 0) {
        Outcome::Key
    } else {
        Outcome::NoKey
    }
}
