//! Alice and Bob session state machines.
//!
//! Message order (B = Bob, A = Alice):
//!
//! ```text
//! B -> A  SYNC_HELLO            config digest
//! A -> B  SYNC_HELLO (ack)                                   both: Quantum
//!         quantum batch delivered locally                   both: Sifting
//! B -> A  BASIS_REVEAL*         clicked slots and bases
//! A -> B  SIFT_ACK*             matched slots
//! A -> B  INTENSITY_REVEAL*     class totals, class of each clicked slot
//! A -> B  QBER_SAMPLE           sampled signal bits, matched decoy/vacuum bits
//! B -> A  QBER_SAMPLE (result)  per-class error counts      both: Estimation
//! B -> A  RECON_MSG start, then query/answer rounds         Reconciliation
//! B -> A  RECON_MSG verify request, A -> B verify reply
//! B -> A  PA_SEED                                           Amplification
//!                                                            both: Done
//! ```
//!
//! `*` marks messages split over several frames. When the estimated rate is
//! not positive or too few key bits remain, both sides stop after the error
//! counts with an empty key.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::frame::{decode_frame, Frame, FrameError, MAX_PAYLOAD};
use super::messages::{
    Abort, AbortCode, BasisReveal, Hello, IntensityReveal, Message, PaSeedMsg, QberSample, ReconMsg, RevealEntry,
    SiftAck,
};
use super::sift::{class_totals, AliceSlot, ClassTallies};
use crate::analysis::{estimate_key_rate, DecoyStatistics, KeyRateReport, RateParams};
use crate::detection::DetectionEvent;
use crate::polarization::Basis;
use crate::postprocess::{
    answer_queries, final_key_length, polynomial_hash, toeplitz_hash, verification_hash_key, CascadeEngine,
    CascadeLayout, FinalKeyLength, PaSeed, CASCADE_PASSES, HASH_BITS,
};
use crate::rng::{substream, SimRng, SESSION_STREAM};
use crate::source::IntensityClass;

/// Entries per BASIS_REVEAL, SIFT_ACK or INTENSITY_REVEAL frame.
pub const CHUNK_ENTRIES: usize = 1 << 20;

/// Fewest reconciled bits worth running Cascade on.
pub const MIN_KEY_BITS: usize = 64;

const MIN_QBER_HINT: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Alice,
    Bob,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Idle,
    Quantum,
    Sifting,
    Estimation,
    Reconciliation,
    Amplification,
    Done,
    Aborted,
}

impl Phase {
    pub fn is_terminal(self) -> bool {
        matches!(self, Phase::Done | Phase::Aborted)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionConfig {
    pub role: Role,
    /// Digest of the shared experiment configuration, compared in SYNC_HELLO.
    pub config_digest: [u8; 32],
    pub mu: f64,
    pub nu: f64,
    pub rate: RateParams,
    pub qber_sample_fraction: f64,
    /// Seed of this party's protocol coins (sample choice, Cascade and
    /// privacy-amplification seeds).
    pub seed: u64,
}

/// A receiver click as kept by Bob.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BobClick {
    pub slot: u64,
    pub basis: Basis,
    pub bit: Option<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum QuantumBatch {
    Alice(Vec<AliceSlot>),
    Bob { total_slots: u64, clicks: Vec<BobClick> },
}

impl QuantumBatch {
    pub fn bob_from_events(events: &[DetectionEvent]) -> QuantumBatch {
        QuantumBatch::Bob {
            total_slots: events.len() as u64,
            clicks: events
                .iter()
                .filter(|e| e.outcome.clicked())
                .map(|e| BobClick { slot: e.slot_index, basis: e.basis, bit: e.outcome.bit() })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event<'a> {
    /// Bob opens the session.
    Start,
    /// Raw bytes of one inbound frame.
    Frame(&'a [u8]),
    /// The peer went silent.
    Timer,
    QuantumBatchDone(QuantumBatch),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ErrorCounters {
    pub bad_checksum: u64,
    pub malformed: u64,
    pub sequence_gaps: u64,
    pub phase_violations: u64,
    pub timeouts: u64,
    /// Frames that arrived after the session had ended.
    pub ignored: u64,
}

impl ErrorCounters {
    pub fn total(&self) -> u64 {
        self.bad_checksum + self.malformed + self.sequence_gaps + self.phase_violations + self.timeouts
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AbortInfo {
    pub code: AbortCode,
    pub reason: String,
    /// The ABORT came from the other party.
    pub by_peer: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReconciliationStats {
    pub key_len: usize,
    pub qber_hint: f64,
    pub passes: usize,
    pub rounds: usize,
    pub parity_queries: usize,
    /// Bob only; Alice never learns where the errors were.
    pub corrections: usize,
    /// Parities plus the verification hash.
    pub leaked_bits: usize,
    pub residual_check: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionReport {
    pub role: Role,
    pub phase: Phase,
    pub total_slots: u64,
    pub tallies: ClassTallies,
    /// Matched clicks of the signal and decoy classes.
    pub sifted_bits: u64,
    /// Bits published for error estimation (signal sample, decoy, vacuum).
    pub disclosed_bits: u64,
    pub statistics: Option<DecoyStatistics>,
    pub key_rate: Option<KeyRateReport>,
    pub reconciliation: Option<ReconciliationStats>,
    pub final_length: Option<FinalKeyLength>,
    pub errors: ErrorCounters,
    pub abort: Option<AbortInfo>,
    pub frames_sent: u64,
    pub frames_received: u64,
}

#[derive(Debug, Clone, Default)]
struct Sifting {
    reveal: Vec<RevealEntry>,
    reveal_done: bool,
    matched_slots: Vec<u64>,
    ack_done: bool,
    classes: Vec<IntensityClass>,
    totals: Option<[u64; 3]>,
    intensity_done: bool,
}

/// This party's bits over its matched clicks, split by class.
#[derive(Debug, Clone, Default)]
struct OwnBits {
    signal: Vec<u8>,
    decoy: Vec<u8>,
    vacuum: Vec<u8>,
}

/// Sampled positions of the signal key, sorted.
fn sample_positions(seed: u64, fraction: f64, n: usize) -> Vec<usize> {
    let k = libm::round(fraction * n as f64).clamp(0.0, n as f64) as usize;
    let mut v = index::sample(&mut substream(seed, 0), n, k).into_vec();
    v.sort_unstable();
    v
}

/// Split `bits` into the sampled positions and the rest.
fn split_sample(bits: &[u8], positions: &[usize]) -> (Vec<u8>, Vec<u8>) {
    let mut sample = Vec::with_capacity(positions.len());
    let mut rest = Vec::with_capacity(bits.len() - positions.len());
    let mut p = positions.iter().peekable();
    for (i, &b) in bits.iter().enumerate() {
        if p.peek() == Some(&&i) {
            p.next();
            sample.push(b);
        } else {
            rest.push(b);
        }
    }
    (sample, rest)
}

pub struct Session {
    cfg: SessionConfig,
    phase: Phase,
    rng: SimRng,
    next_out: u32,
    next_in: u32,
    errors: ErrorCounters,
    abort: Option<AbortInfo>,
    frames_received: u64,
    hello_sent: bool,

    total_slots: u64,
    alice_slots: Vec<AliceSlot>,
    bob_clicks: Vec<BobClick>,
    sifting: Sifting,
    own: OwnBits,

    tallies: ClassTallies,
    disclosed: [usize; 3],
    key: Vec<u8>,
    statistics: Option<DecoyStatistics>,
    key_rate: Option<KeyRateReport>,

    layout: Option<CascadeLayout>,
    engine: Option<CascadeEngine>,
    recon: Option<ReconciliationStats>,
    recon_seed: u64,

    final_length: Option<FinalKeyLength>,
    final_key: Option<Vec<u8>>,
}

impl Session {
    pub fn new(cfg: SessionConfig) -> Session {
        Session {
            rng: substream(cfg.seed, SESSION_STREAM),
            cfg,
            phase: Phase::Idle,
            next_out: 0,
            next_in: 0,
            errors: ErrorCounters::default(),
            abort: None,
            frames_received: 0,
            hello_sent: false,
            total_slots: 0,
            alice_slots: Vec::new(),
            bob_clicks: Vec::new(),
            sifting: Sifting::default(),
            own: OwnBits::default(),
            tallies: ClassTallies::default(),
            disclosed: [0; 3],
            key: Vec::new(),
            statistics: None,
            key_rate: None,
            layout: None,
            engine: None,
            recon: None,
            recon_seed: 0,
            final_length: None,
            final_key: None,
        }
    }

    pub fn role(&self) -> Role {
        self.cfg.role
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn errors(&self) -> ErrorCounters {
        self.errors
    }

    /// The amplified key, once the session is done.
    pub fn final_key(&self) -> Option<&[u8]> {
        self.final_key.as_deref()
    }

    pub fn report(&self) -> SessionReport {
        SessionReport {
            role: self.cfg.role,
            phase: self.phase,
            total_slots: self.total_slots,
            tallies: self.tallies,
            sifted_bits: self.tallies.matched[0] + self.tallies.matched[1],
            disclosed_bits: self.disclosed.iter().sum::<usize>() as u64,
            statistics: self.statistics,
            key_rate: self.key_rate,
            reconciliation: self.recon,
            final_length: self.final_length,
            errors: self.errors,
            abort: self.abort.clone(),
            frames_sent: u64::from(self.next_out),
            frames_received: self.frames_received,
        }
    }

    /// Advances the state machine by one event and returns the frames to send.
    pub fn step(&mut self, event: Event<'_>) -> Vec<Frame> {
        let mut out = Vec::new();
        match event {
            Event::Start => {
                if self.cfg.role == Role::Bob && self.phase == Phase::Idle && !self.hello_sent {
                    self.hello_sent = true;
                    let digest = self.cfg.config_digest;
                    self.emit(&mut out, Message::Hello(Hello { ack: false, config_digest: digest }));
                }
            }
            Event::Timer => {
                if !self.phase.is_terminal() {
                    self.errors.timeouts += 1;
                    self.fail(&mut out, AbortCode::Timeout, format!("no reply in phase {:?}", self.phase));
                }
            }
            Event::QuantumBatchDone(batch) => self.on_batch(&mut out, batch),
            Event::Frame(bytes) => self.on_bytes(&mut out, bytes),
        }
        out
    }

    fn emit(&mut self, out: &mut Vec<Frame>, msg: Message) {
        let frame = msg.into_frame(self.next_out);
        if frame.payload.len() > MAX_PAYLOAD {
            let reason =
                format!("{:?} payload of {} bytes does not fit a frame", frame.frame_type, frame.payload.len());
            return self.fail(out, AbortCode::Inconsistent, reason);
        }
        self.next_out += 1;
        out.push(frame);
    }

    fn fail(&mut self, out: &mut Vec<Frame>, code: AbortCode, reason: String) {
        if self.phase == Phase::Aborted {
            return;
        }
        self.phase = Phase::Aborted;
        self.abort = Some(AbortInfo { code, reason: reason.clone(), by_peer: false });
        self.key.clear();
        self.final_key = None;
        let frame = Message::Abort(Abort { code, reason }).into_frame(self.next_out);
        self.next_out += 1;
        out.push(frame);
    }

    fn violation(&mut self, out: &mut Vec<Frame>, what: &str) {
        self.errors.phase_violations += 1;
        let reason = format!("{what} not allowed for {:?} in phase {:?}", self.cfg.role, self.phase);
        self.fail(out, AbortCode::PhaseViolation, reason);
    }

    fn on_batch(&mut self, out: &mut Vec<Frame>, batch: QuantumBatch) {
        if self.phase != Phase::Quantum {
            return self.violation(out, "quantum batch");
        }
        match (self.cfg.role, batch) {
            (Role::Alice, QuantumBatch::Alice(slots)) => {
                self.total_slots = slots.len() as u64;
                self.alice_slots = slots;
                self.phase = Phase::Sifting;
            }
            (Role::Bob, QuantumBatch::Bob { total_slots, clicks }) => {
                if clicks.windows(2).any(|w| w[0].slot >= w[1].slot)
                    || clicks.last().is_some_and(|c| c.slot >= total_slots)
                {
                    return self.fail(out, AbortCode::Inconsistent, "click slots out of order".into());
                }
                self.total_slots = total_slots;
                self.bob_clicks = clicks;
                self.phase = Phase::Sifting;
                let entries: Vec<RevealEntry> = self
                    .bob_clicks
                    .iter()
                    .map(|c| RevealEntry { slot: c.slot, basis: c.basis, has_bit: c.bit.is_some() })
                    .collect();
                let chunks = entries.len().div_ceil(CHUNK_ENTRIES).max(1);
                for i in 0..chunks {
                    let part =
                        &entries[(i * CHUNK_ENTRIES).min(entries.len())..((i + 1) * CHUNK_ENTRIES).min(entries.len())];
                    let msg = BasisReveal { total_slots, entries: part.to_vec(), last: i + 1 == chunks };
                    self.emit(out, Message::BasisReveal(msg));
                }
            }
            _ => self.violation(out, "quantum batch of the other role"),
        }
    }

    fn on_bytes(&mut self, out: &mut Vec<Frame>, bytes: &[u8]) {
        if self.phase.is_terminal() {
            self.errors.ignored += 1;
            return;
        }
        let frame = match decode_frame(bytes) {
            Ok(f) => f,
            Err(FrameError::BadChecksum { .. }) => {
                self.errors.bad_checksum += 1;
                return;
            }
            Err(e) => {
                self.errors.malformed += 1;
                return self.fail(out, AbortCode::Malformed, format!("{e}"));
            }
        };
        self.frames_received += 1;
        if frame.sequence != self.next_in {
            self.errors.sequence_gaps += 1;
            let reason = format!("expected sequence {}, got {}", self.next_in, frame.sequence);
            return self.fail(out, AbortCode::SequenceGap, reason);
        }
        self.next_in += 1;
        let msg = match Message::decode(frame.frame_type, &frame.payload) {
            Ok(m) => m,
            Err(e) => {
                self.errors.malformed += 1;
                return self.fail(out, AbortCode::Malformed, format!("{:?}: {e}", frame.frame_type));
            }
        };
        if let Message::Abort(a) = msg {
            self.phase = Phase::Aborted;
            self.abort = Some(AbortInfo { code: a.code, reason: a.reason, by_peer: true });
            self.key.clear();
            return;
        }
        match self.cfg.role {
            Role::Alice => self.alice_on(out, msg),
            Role::Bob => self.bob_on(out, msg),
        }
    }

    fn alice_on(&mut self, out: &mut Vec<Frame>, msg: Message) {
        match (self.phase, msg) {
            (Phase::Idle, Message::Hello(h)) if !h.ack => {
                if h.config_digest != self.cfg.config_digest {
                    return self.fail(out, AbortCode::ConfigMismatch, "configuration digests differ".into());
                }
                let digest = self.cfg.config_digest;
                self.emit(out, Message::Hello(Hello { ack: true, config_digest: digest }));
                self.phase = Phase::Quantum;
            }
            (Phase::Sifting, Message::BasisReveal(r)) if !self.sifting.reveal_done => {
                if r.total_slots != self.total_slots {
                    let reason = format!("receiver counted {} slots, sender {}", r.total_slots, self.total_slots);
                    return self.fail(out, AbortCode::Inconsistent, reason);
                }
                let prev = self.sifting.reveal.last().map(|e| e.slot);
                let ordered = r.entries.first().is_none_or(|e| prev.is_none_or(|p| e.slot > p));
                if !ordered || r.entries.last().is_some_and(|e| e.slot >= self.total_slots) {
                    return self.fail(out, AbortCode::Inconsistent, "revealed slots out of range".into());
                }
                self.sifting.reveal.extend(r.entries);
                if r.last {
                    self.sifting.reveal_done = true;
                    self.alice_after_reveal(out);
                }
            }
            (Phase::Estimation, Message::QberSample(QberSample::Result { compared, errors })) => {
                let expected = [self.disclosed[0] as u64, self.disclosed[1] as u64, self.disclosed[2] as u64];
                if compared != expected || errors.iter().zip(&compared).any(|(e, c)| e > c) {
                    return self.fail(out, AbortCode::Inconsistent, "error counts do not match the disclosure".into());
                }
                self.tallies.compared = compared;
                self.tallies.errors = errors;
                self.estimate(out);
            }
            (Phase::Reconciliation, Message::Recon(ReconMsg::Start { seed, qber_hint, key_len }))
                if self.layout.is_none() =>
            {
                if key_len as usize != self.key.len() {
                    let reason = format!("reconciliation of {key_len} bits, sender holds {}", self.key.len());
                    return self.fail(out, AbortCode::Inconsistent, reason);
                }
                match CascadeLayout::new(self.key.len(), qber_hint, seed) {
                    Ok(layout) => {
                        self.layout = Some(layout);
                        self.recon_seed = seed;
                        self.recon = Some(ReconciliationStats {
                            key_len: self.key.len(),
                            qber_hint,
                            passes: CASCADE_PASSES,
                            rounds: 0,
                            parity_queries: 0,
                            corrections: 0,
                            leaked_bits: 0,
                            residual_check: false,
                        });
                    }
                    Err(e) => self.fail(out, AbortCode::Malformed, format!("{e}")),
                }
            }
            (Phase::Reconciliation, Message::Recon(ReconMsg::Query(qs))) if self.layout.is_some() => {
                let layout = self.layout.as_ref().expect("checked above");
                match answer_queries(layout, &self.key, &qs) {
                    Ok(answers) => {
                        let r = self.recon.as_mut().expect("set with the layout");
                        r.rounds += 1;
                        r.parity_queries += answers.len();
                        self.emit(out, Message::Recon(ReconMsg::Answer(answers)));
                    }
                    Err(e) => self.fail(out, AbortCode::Malformed, format!("{e}")),
                }
            }
            (Phase::Reconciliation, Message::Recon(ReconMsg::VerifyRequest { hash_key })) if self.layout.is_some() => {
                if hash_key != verification_hash_key(self.recon_seed) {
                    return self.fail(out, AbortCode::Inconsistent, "unexpected verification point".into());
                }
                let hash = polynomial_hash(&self.key, hash_key);
                let r = self.recon.as_mut().expect("set with the layout");
                r.leaked_bits = r.parity_queries + HASH_BITS;
                self.emit(out, Message::Recon(ReconMsg::VerifyReply { hash }));
                self.phase = Phase::Amplification;
            }
            (Phase::Amplification, Message::PaSeed(p)) => {
                let r = self.recon.as_mut().expect("reconciliation ran");
                // Bob only sends the seed after the hashes agreed
                r.residual_check = true;
                let available = r.key_len.saturating_sub(r.leaked_bits);
                let ours = final_key_length(self.total_slots, self.key_rate.as_ref().expect("estimated"), available);
                if p.input_len as usize != self.key.len() || p.output_len as usize != ours.bits {
                    let reason = format!(
                        "PA seed shape {}x{}, expected {}x{}",
                        p.output_len,
                        p.input_len,
                        ours.bits,
                        self.key.len()
                    );
                    return self.fail(out, AbortCode::Inconsistent, reason);
                }
                self.finish_amplification(out, p, ours);
            }
            (_, m) => self.violation(out, &format!("{:?}", m.frame_type())),
        }
    }

    fn alice_after_reveal(&mut self, out: &mut Vec<Frame>) {
        let totals = class_totals(&self.alice_slots);
        self.tallies = ClassTallies { pulses: totals, ..ClassTallies::default() };
        let mut matched_slots = Vec::new();
        let mut classes = Vec::with_capacity(self.sifting.reveal.len());
        let mut own = OwnBits::default();
        for e in &self.sifting.reveal {
            let a = self.alice_slots[e.slot as usize];
            let c = a.intensity;
            classes.push(c);
            self.tallies.clicks[c.index()] += 1;
            if e.has_bit && e.basis == a.basis() {
                self.tallies.matched[c.index()] += 1;
                matched_slots.push(e.slot);
                match c {
                    IntensityClass::Signal => own.signal.push(a.bit()),
                    IntensityClass::Decoy => own.decoy.push(a.bit()),
                    IntensityClass::Vacuum => own.vacuum.push(a.bit()),
                }
            }
        }
        let chunks = matched_slots.len().div_ceil(CHUNK_ENTRIES).max(1);
        for i in 0..chunks {
            let part = &matched_slots
                [(i * CHUNK_ENTRIES).min(matched_slots.len())..((i + 1) * CHUNK_ENTRIES).min(matched_slots.len())];
            self.emit(out, Message::SiftAck(SiftAck { matched_slots: part.to_vec(), last: i + 1 == chunks }));
        }
        let chunks = classes.len().div_ceil(CHUNK_ENTRIES).max(1);
        for i in 0..chunks {
            let part = &classes[(i * CHUNK_ENTRIES).min(classes.len())..((i + 1) * CHUNK_ENTRIES).min(classes.len())];
            let msg = IntensityReveal { class_totals: totals, classes: part.to_vec(), last: i + 1 == chunks };
            self.emit(out, Message::IntensityReveal(msg));
        }

        let seed: u64 = self.rng.gen();
        let fraction = self.cfg.qber_sample_fraction;
        let positions = sample_positions(seed, fraction, own.signal.len());
        let (sample, rest) = split_sample(&own.signal, &positions);
        self.disclosed = [sample.len(), own.decoy.len(), own.vacuum.len()];
        self.key = rest;
        self.sifting = Sifting::default();
        self.phase = Phase::Estimation;
        let msg = QberSample::Disclosure { seed, fraction, signal: sample, decoy: own.decoy, vacuum: own.vacuum };
        self.emit(out, Message::QberSample(msg));
    }

    fn bob_on(&mut self, out: &mut Vec<Frame>, msg: Message) {
        match (self.phase, msg) {
            (Phase::Idle, Message::Hello(h)) if h.ack && self.hello_sent => {
                if h.config_digest != self.cfg.config_digest {
                    return self.fail(out, AbortCode::ConfigMismatch, "configuration digests differ".into());
                }
                self.phase = Phase::Quantum;
            }
            (Phase::Sifting, Message::SiftAck(a)) if !self.sifting.ack_done => {
                self.sifting.matched_slots.extend(a.matched_slots);
                self.sifting.ack_done = a.last;
                self.bob_check_sifting(out);
            }
            (Phase::Sifting, Message::IntensityReveal(r)) if !self.sifting.intensity_done => {
                if self.sifting.totals.is_some_and(|t| t != r.class_totals) {
                    return self.fail(out, AbortCode::Inconsistent, "class totals changed between chunks".into());
                }
                self.sifting.totals = Some(r.class_totals);
                self.sifting.classes.extend(r.classes);
                self.sifting.intensity_done = r.last;
                self.bob_check_sifting(out);
            }
            (
                Phase::Estimation,
                Message::QberSample(QberSample::Disclosure { seed, fraction, signal, decoy, vacuum }),
            ) => {
                self.bob_on_disclosure(out, seed, fraction, signal, decoy, vacuum);
            }
            (Phase::Reconciliation, Message::Recon(ReconMsg::Answer(bits))) => {
                let Some(engine) = self.engine.as_mut() else {
                    return self.violation(out, "answer before start");
                };
                if engine.is_finished() {
                    return self.violation(out, "answer after the last pass");
                }
                if let Err(e) = engine.feed(&bits) {
                    return self.fail(out, AbortCode::Malformed, format!("{e}"));
                }
                let r = self.recon.as_mut().expect("set with the engine");
                r.rounds += 1;
                r.parity_queries = engine.parity_queries();
                r.corrections = engine.corrections();
                if engine.is_finished() {
                    let hash_key = verification_hash_key(self.recon_seed);
                    self.emit(out, Message::Recon(ReconMsg::VerifyRequest { hash_key }));
                } else {
                    let qs = engine.pending().to_vec();
                    self.emit(out, Message::Recon(ReconMsg::Query(qs)));
                }
            }
            (Phase::Reconciliation, Message::Recon(ReconMsg::VerifyReply { hash }))
                if self.engine.as_ref().is_some_and(|e| e.is_finished()) =>
            {
                let engine = self.engine.take().expect("checked above");
                let hash_key = verification_hash_key(self.recon_seed);
                let ok = polynomial_hash(engine.key(), hash_key) == hash;
                let r = self.recon.as_mut().expect("set with the engine");
                r.leaked_bits = r.parity_queries + HASH_BITS;
                r.residual_check = ok;
                if !ok {
                    return self.fail(out, AbortCode::ReconciliationFailed, "verification hashes differ".into());
                }
                self.key = engine.into_key();
                self.phase = Phase::Amplification;
                let available = r.key_len.saturating_sub(r.leaked_bits);
                let length = final_key_length(self.total_slots, self.key_rate.as_ref().expect("estimated"), available);
                let seed = match PaSeed::random(self.key.len(), length.bits, &mut self.rng) {
                    Ok(s) => s,
                    Err(e) => return self.fail(out, AbortCode::Inconsistent, format!("{e}")),
                };
                let msg = PaSeedMsg {
                    input_len: seed.input_len as u32,
                    output_len: seed.output_len as u32,
                    bits: seed.bits.clone(),
                };
                self.emit(out, Message::PaSeed(msg.clone()));
                self.finish_amplification(out, msg, length);
            }
            (_, m) => self.violation(out, &format!("{:?}", m.frame_type())),
        }
    }

    fn bob_check_sifting(&mut self, out: &mut Vec<Frame>) {
        if !(self.sifting.ack_done && self.sifting.intensity_done) {
            return;
        }
        let totals = self.sifting.totals.expect("set with the reveal");
        if self.sifting.classes.len() != self.bob_clicks.len() || totals.iter().sum::<u64>() != self.total_slots {
            return self.fail(out, AbortCode::Inconsistent, "intensity announcement does not cover the clicks".into());
        }
        self.tallies = ClassTallies { pulses: totals, ..ClassTallies::default() };
        let mut matched = self.sifting.matched_slots.iter().peekable();
        let mut own = OwnBits::default();
        for (click, &c) in self.bob_clicks.iter().zip(&self.sifting.classes) {
            self.tallies.clicks[c.index()] += 1;
            if matched.peek() == Some(&&click.slot) {
                matched.next();
                let Some(bit) = click.bit else {
                    return self.fail(out, AbortCode::Inconsistent, "slot without a bit marked matched".into());
                };
                self.tallies.matched[c.index()] += 1;
                match c {
                    IntensityClass::Signal => own.signal.push(bit),
                    IntensityClass::Decoy => own.decoy.push(bit),
                    IntensityClass::Vacuum => own.vacuum.push(bit),
                }
            }
        }
        if matched.next().is_some() {
            return self.fail(out, AbortCode::Inconsistent, "matched slot that never clicked".into());
        }
        self.own = own;
        self.sifting = Sifting::default();
        self.phase = Phase::Estimation;
    }

    fn bob_on_disclosure(
        &mut self,
        out: &mut Vec<Frame>,
        seed: u64,
        fraction: f64,
        signal: Vec<u8>,
        decoy: Vec<u8>,
        vacuum: Vec<u8>,
    ) {
        if fraction.to_bits() != self.cfg.qber_sample_fraction.to_bits() {
            return self.fail(out, AbortCode::Inconsistent, format!("sample fraction {fraction} differs from ours"));
        }
        let own = core::mem::take(&mut self.own);
        let positions = sample_positions(seed, fraction, own.signal.len());
        if signal.len() != positions.len() || decoy.len() != own.decoy.len() || vacuum.len() != own.vacuum.len() {
            return self.fail(out, AbortCode::Inconsistent, "disclosure does not match the sifted slots".into());
        }
        let (sample, rest) = split_sample(&own.signal, &positions);
        let count = |a: &[u8], b: &[u8]| a.iter().zip(b).filter(|(x, y)| x != y).count() as u64;
        let compared = [sample.len() as u64, decoy.len() as u64, vacuum.len() as u64];
        let errors = [count(&sample, &signal), count(&own.decoy, &decoy), count(&own.vacuum, &vacuum)];
        self.tallies.compared = compared;
        self.tallies.errors = errors;
        self.disclosed = [sample.len(), decoy.len(), vacuum.len()];
        self.key = rest;
        self.emit(out, Message::QberSample(QberSample::Result { compared, errors }));
        self.estimate(out);
    }

    /// Decoy statistics and rate from the shared tallies, then either start
    /// reconciliation or finish without a key. Both sides reach the same
    /// decision from the same numbers.
    fn estimate(&mut self, out: &mut Vec<Frame>) {
        let stats = match self.tallies.statistics(self.cfg.mu, self.cfg.nu) {
            Ok(s) => s,
            Err(e) => return self.fail(out, AbortCode::Inconsistent, format!("{e}")),
        };
        let report = estimate_key_rate(&stats, &self.cfg.rate);
        self.statistics = Some(stats);
        if report.r_per_pulse <= 0.0 || self.key.len() < MIN_KEY_BITS {
            self.final_length = Some(final_key_length(self.total_slots, &report, 0));
            self.key_rate = Some(report);
            self.key.clear();
            self.final_key = Some(Vec::new());
            self.phase = Phase::Done;
            return;
        }
        self.key_rate = Some(report);
        self.phase = Phase::Reconciliation;
        if self.cfg.role == Role::Alice {
            return;
        }
        let qber_hint = stats.e_mu.clamp(MIN_QBER_HINT, 0.25);
        let seed: u64 = self.rng.gen();
        let engine = CascadeLayout::new(self.key.len(), qber_hint, seed)
            .and_then(|layout| CascadeEngine::new(layout, core::mem::take(&mut self.key)));
        let engine = match engine {
            Ok(e) => e,
            Err(e) => return self.fail(out, AbortCode::Inconsistent, format!("{e}")),
        };
        self.recon_seed = seed;
        self.recon = Some(ReconciliationStats {
            key_len: engine.key().len(),
            qber_hint,
            passes: CASCADE_PASSES,
            rounds: 0,
            parity_queries: 0,
            corrections: 0,
            leaked_bits: 0,
            residual_check: false,
        });
        let key_len = engine.key().len() as u32;
        let queries = engine.pending().to_vec();
        self.engine = Some(engine);
        self.emit(out, Message::Recon(ReconMsg::Start { seed, qber_hint, key_len }));
        self.emit(out, Message::Recon(ReconMsg::Query(queries)));
    }

    fn finish_amplification(&mut self, out: &mut Vec<Frame>, msg: PaSeedMsg, length: FinalKeyLength) {
        let hashed = PaSeed::new(msg.bits, msg.input_len as usize, msg.output_len as usize)
            .and_then(|seed| toeplitz_hash(&self.key, &seed));
        match hashed {
            Ok(k) => {
                self.final_key = Some(k);
                self.final_length = Some(length);
                self.key.clear();
                self.phase = Phase::Done;
            }
            Err(e) => self.fail(out, AbortCode::Malformed, format!("{e}")),
        }
    }
}
