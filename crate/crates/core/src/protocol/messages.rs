//! Typed payloads carried inside frames.
//!
//! Integers are big-endian. Increasing slot lists are delta-coded as LEB128
//! varints. Bit strings are a `u32` bit count followed by the bits packed
//! most significant first.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::frame::{Frame, FrameType};
use crate::polarization::Basis;
use crate::postprocess::ParityQuery;
use crate::source::IntensityClass;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PayloadError {
    #[error("payload ended early")]
    Truncated,
    #[error("{0} unread bytes after the payload")]
    TrailingBytes(usize),
    #[error("invalid payload: {0}")]
    Invalid(&'static str),
}

type PResult<T> = core::result::Result<T, PayloadError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub ack: bool,
    pub config_digest: [u8; 32],
}

/// One clicked slot as announced by the receiver.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RevealEntry {
    pub slot: u64,
    pub basis: Basis,
    /// False for a double click dropped by the discard policy.
    pub has_bit: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisReveal {
    pub total_slots: u64,
    pub entries: Vec<RevealEntry>,
    pub last: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SiftAck {
    pub matched_slots: Vec<u64>,
    pub last: bool,
}

/// Intensity classes of the clicked slots, in announcement order, plus the
/// number of pulses sent in each class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntensityReveal {
    pub class_totals: [u64; 3],
    pub classes: Vec<IntensityClass>,
    pub last: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum QberSample {
    /// Sender's bits at the sampled signal positions and at every matched
    /// decoy and vacuum slot.
    Disclosure { seed: u64, fraction: f64, signal: Vec<u8>, decoy: Vec<u8>, vacuum: Vec<u8> },
    /// Per-class compared and erroneous bit counts (signal, decoy, vacuum).
    Result { compared: [u64; 3], errors: [u64; 3] },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum ReconMsg {
    Start { seed: u64, qber_hint: f64, key_len: u32 },
    Query(Vec<ParityQuery>),
    Answer(Vec<u8>),
    VerifyRequest { hash_key: u64 },
    VerifyReply { hash: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PaSeedMsg {
    pub input_len: u32,
    pub output_len: u32,
    pub bits: Vec<u8>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
#[repr(u8)]
pub enum AbortCode {
    ConfigMismatch = 1,
    PhaseViolation = 2,
    SequenceGap = 3,
    Malformed = 4,
    Timeout = 5,
    ReconciliationFailed = 6,
    Inconsistent = 7,
}

impl AbortCode {
    const ALL: [AbortCode; 7] = [
        AbortCode::ConfigMismatch,
        AbortCode::PhaseViolation,
        AbortCode::SequenceGap,
        AbortCode::Malformed,
        AbortCode::Timeout,
        AbortCode::ReconciliationFailed,
        AbortCode::Inconsistent,
    ];

    fn from_u8(v: u8) -> Option<AbortCode> {
        Self::ALL.get(usize::from(v).wrapping_sub(1)).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Abort {
    pub code: AbortCode,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Message {
    Hello(Hello),
    BasisReveal(BasisReveal),
    IntensityReveal(IntensityReveal),
    SiftAck(SiftAck),
    QberSample(QberSample),
    Recon(ReconMsg),
    PaSeed(PaSeedMsg),
    Abort(Abort),
}

impl Message {
    pub fn frame_type(&self) -> FrameType {
        match self {
            Message::Hello(_) => FrameType::SyncHello,
            Message::BasisReveal(_) => FrameType::BasisReveal,
            Message::IntensityReveal(_) => FrameType::IntensityReveal,
            Message::SiftAck(_) => FrameType::SiftAck,
            Message::QberSample(_) => FrameType::QberSample,
            Message::Recon(_) => FrameType::ReconMsg,
            Message::PaSeed(_) => FrameType::PaSeed,
            Message::Abort(_) => FrameType::Abort,
        }
    }

    pub fn into_frame(&self, sequence: u32) -> Frame {
        Frame { frame_type: self.frame_type(), sequence, payload: self.encode() }
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut w = Writer::default();
        match self {
            Message::Hello(h) => {
                w.u8(u8::from(h.ack));
                w.bytes(&h.config_digest);
            }
            Message::BasisReveal(r) => {
                w.u64(r.total_slots);
                w.u8(u8::from(r.last));
                w.u32(r.entries.len() as u32);
                let mut prev = 0;
                for e in &r.entries {
                    w.varint(e.slot - prev);
                    prev = e.slot;
                    w.u8(e.basis.as_bit() | u8::from(e.has_bit) << 1);
                }
            }
            Message::SiftAck(a) => {
                w.u8(u8::from(a.last));
                w.slots(&a.matched_slots);
            }
            Message::IntensityReveal(r) => {
                for t in r.class_totals {
                    w.u64(t);
                }
                w.u8(u8::from(r.last));
                w.u32(r.classes.len() as u32);
                for chunk in r.classes.chunks(4) {
                    w.u8(chunk.iter().enumerate().fold(0, |b, (i, c)| b | (c.index() as u8) << (6 - 2 * i)));
                }
            }
            Message::QberSample(QberSample::Disclosure { seed, fraction, signal, decoy, vacuum }) => {
                w.u8(0);
                w.u64(*seed);
                w.u64(fraction.to_bits());
                w.bits(signal);
                w.bits(decoy);
                w.bits(vacuum);
            }
            Message::QberSample(QberSample::Result { compared, errors }) => {
                w.u8(1);
                for v in compared.iter().chain(errors) {
                    w.u64(*v);
                }
            }
            Message::Recon(m) => match m {
                ReconMsg::Start { seed, qber_hint, key_len } => {
                    w.u8(0);
                    w.u64(*seed);
                    w.u64(qber_hint.to_bits());
                    w.u32(*key_len);
                }
                ReconMsg::Query(qs) => {
                    w.u8(1);
                    w.u32(qs.len() as u32);
                    for q in qs {
                        w.u8(q.pass);
                        w.u32(q.start);
                        w.u32(q.end);
                    }
                }
                ReconMsg::Answer(bits) => {
                    w.u8(2);
                    w.bits(bits);
                }
                ReconMsg::VerifyRequest { hash_key } => {
                    w.u8(3);
                    w.u64(*hash_key);
                }
                ReconMsg::VerifyReply { hash } => {
                    w.u8(4);
                    w.u64(*hash);
                }
            },
            Message::PaSeed(p) => {
                w.u32(p.input_len);
                w.u32(p.output_len);
                w.bits(&p.bits);
            }
            Message::Abort(a) => {
                w.u8(a.code as u8);
                w.bytes(a.reason.as_bytes());
            }
        }
        w.0
    }

    pub fn decode(frame_type: FrameType, payload: &[u8]) -> PResult<Message> {
        let mut r = Reader { buf: payload, pos: 0 };
        let msg = match frame_type {
            FrameType::SyncHello => {
                let ack = r.flag()?;
                let mut config_digest = [0u8; 32];
                config_digest.copy_from_slice(r.take(32)?);
                Message::Hello(Hello { ack, config_digest })
            }
            FrameType::BasisReveal => {
                let total_slots = r.u64()?;
                let last = r.flag()?;
                let n = r.count(2)?;
                let mut entries = Vec::with_capacity(n);
                let mut prev = 0u64;
                for i in 0..n {
                    let delta = r.varint()?;
                    if i > 0 && delta == 0 {
                        return Err(PayloadError::Invalid("slots must be strictly increasing"));
                    }
                    let slot = prev.checked_add(delta).ok_or(PayloadError::Invalid("slot overflow"))?;
                    prev = slot;
                    let f = r.u8()?;
                    if f > 3 {
                        return Err(PayloadError::Invalid("reveal flags"));
                    }
                    entries.push(RevealEntry { slot, basis: Basis::from_bit(f), has_bit: f & 2 != 0 });
                }
                Message::BasisReveal(BasisReveal { total_slots, entries, last })
            }
            FrameType::SiftAck => {
                let last = r.flag()?;
                Message::SiftAck(SiftAck { matched_slots: r.slots()?, last })
            }
            FrameType::IntensityReveal => {
                let class_totals = [r.u64()?, r.u64()?, r.u64()?];
                let last = r.flag()?;
                let n = r.u32()? as usize;
                let packed = r.take(n.div_ceil(4))?;
                let classes = (0..n)
                    .map(|i| {
                        IntensityClass::from_index(usize::from(packed[i / 4] >> (6 - 2 * (i % 4)) & 3))
                            .ok_or(PayloadError::Invalid("intensity class"))
                    })
                    .collect::<PResult<Vec<_>>>()?;
                Message::IntensityReveal(IntensityReveal { class_totals, classes, last })
            }
            FrameType::QberSample => match r.u8()? {
                0 => Message::QberSample(QberSample::Disclosure {
                    seed: r.u64()?,
                    fraction: f64::from_bits(r.u64()?),
                    signal: r.bits()?,
                    decoy: r.bits()?,
                    vacuum: r.bits()?,
                }),
                1 => {
                    let mut v = [0u64; 6];
                    for x in v.iter_mut() {
                        *x = r.u64()?;
                    }
                    Message::QberSample(QberSample::Result { compared: [v[0], v[1], v[2]], errors: [v[3], v[4], v[5]] })
                }
                _ => return Err(PayloadError::Invalid("qber sample kind")),
            },
            FrameType::ReconMsg => Message::Recon(match r.u8()? {
                0 => ReconMsg::Start { seed: r.u64()?, qber_hint: f64::from_bits(r.u64()?), key_len: r.u32()? },
                1 => {
                    let n = r.count(9)?;
                    let mut qs = Vec::with_capacity(n);
                    for _ in 0..n {
                        qs.push(ParityQuery { pass: r.u8()?, start: r.u32()?, end: r.u32()? });
                    }
                    ReconMsg::Query(qs)
                }
                2 => ReconMsg::Answer(r.bits()?),
                3 => ReconMsg::VerifyRequest { hash_key: r.u64()? },
                4 => ReconMsg::VerifyReply { hash: r.u64()? },
                _ => return Err(PayloadError::Invalid("reconciliation message kind")),
            }),
            FrameType::PaSeed => {
                Message::PaSeed(PaSeedMsg { input_len: r.u32()?, output_len: r.u32()?, bits: r.bits()? })
            }
            FrameType::Abort => {
                let code = AbortCode::from_u8(r.u8()?).ok_or(PayloadError::Invalid("abort code"))?;
                let rest = r.take(payload.len() - 1)?;
                let reason =
                    core::str::from_utf8(rest).map_err(|_| PayloadError::Invalid("abort reason is not UTF-8"))?;
                Message::Abort(Abort { code, reason: reason.into() })
            }
        };
        if r.pos != payload.len() {
            return Err(PayloadError::TrailingBytes(payload.len() - r.pos));
        }
        Ok(msg)
    }
}

/// Packs one-bit-per-byte values, most significant bit first.
pub fn pack_bits(bits: &[u8]) -> Vec<u8> {
    bits.chunks(8).map(|c| c.iter().enumerate().fold(0u8, |b, (i, &x)| b | (x & 1) << (7 - i))).collect()
}

pub fn unpack_bits(packed: &[u8], n: usize) -> Vec<u8> {
    (0..n).map(|i| packed[i / 8] >> (7 - i % 8) & 1).collect()
}

#[derive(Default)]
struct Writer(Vec<u8>);

impl Writer {
    fn u8(&mut self, v: u8) {
        self.0.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_be_bytes());
    }
    fn bytes(&mut self, b: &[u8]) {
        self.0.extend_from_slice(b);
    }
    fn varint(&mut self, mut v: u64) {
        while v >= 0x80 {
            self.0.push(v as u8 | 0x80);
            v >>= 7;
        }
        self.0.push(v as u8);
    }
    fn bits(&mut self, bits: &[u8]) {
        self.u32(bits.len() as u32);
        self.0.extend(pack_bits(bits));
    }
    fn slots(&mut self, slots: &[u64]) {
        self.u32(slots.len() as u32);
        let mut prev = 0;
        for &s in slots {
            self.varint(s - prev);
            prev = s;
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> PResult<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or(PayloadError::Truncated)?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> PResult<u8> {
        Ok(self.take(1)?[0])
    }
    fn flag(&mut self) -> PResult<bool> {
        match self.u8()? {
            0 => Ok(false),
            1 => Ok(true),
            _ => Err(PayloadError::Invalid("boolean flag")),
        }
    }
    fn u32(&mut self) -> PResult<u32> {
        Ok(u32::from_be_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }
    fn u64(&mut self) -> PResult<u64> {
        Ok(u64::from_be_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
    /// Element count, sanity-checked against the bytes left.
    fn count(&mut self, min_elem_bytes: usize) -> PResult<usize> {
        let n = self.u32()? as usize;
        if n.saturating_mul(min_elem_bytes) > self.buf.len() - self.pos {
            return Err(PayloadError::Truncated);
        }
        Ok(n)
    }
    fn varint(&mut self) -> PResult<u64> {
        let mut v = 0u64;
        for shift in (0..64).step_by(7) {
            let b = self.u8()?;
            v |= u64::from(b & 0x7F) << shift;
            if b & 0x80 == 0 {
                return Ok(v);
            }
        }
        Err(PayloadError::Invalid("varint too long"))
    }
    fn bits(&mut self) -> PResult<Vec<u8>> {
        let n = self.u32()? as usize;
        Ok(unpack_bits(self.take(n.div_ceil(8))?, n))
    }
    fn slots(&mut self) -> PResult<Vec<u64>> {
        let n = self.count(1)?;
        let mut out = Vec::with_capacity(n);
        let mut prev = 0u64;
        for i in 0..n {
            let d = self.varint()?;
            if i > 0 && d == 0 {
                return Err(PayloadError::Invalid("slots must be strictly increasing"));
            }
            prev = prev.checked_add(d).ok_or(PayloadError::Invalid("slot overflow"))?;
            out.push(prev);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn round_trip(m: Message) {
        let bytes = m.encode();
        assert_eq!(Message::decode(m.frame_type(), &bytes).unwrap(), m);
    }

    #[test]
    fn all_messages_round_trip() {
        round_trip(Message::Hello(Hello { ack: true, config_digest: [7; 32] }));
        round_trip(Message::BasisReveal(BasisReveal {
            total_slots: 1 << 40,
            entries: vec![
                RevealEntry { slot: 0, basis: Basis::Diagonal, has_bit: true },
                RevealEntry { slot: 300, basis: Basis::Rectilinear, has_bit: false },
                RevealEntry { slot: (1 << 40) - 1, basis: Basis::Diagonal, has_bit: false },
            ],
            last: true,
        }));
        round_trip(Message::SiftAck(SiftAck { matched_slots: vec![3, 4, 129, 1 << 33], last: false }));
        round_trip(Message::IntensityReveal(IntensityReveal {
            class_totals: [10, 5, 5],
            classes: vec![
                IntensityClass::Vacuum,
                IntensityClass::Signal,
                IntensityClass::Decoy,
                IntensityClass::Signal,
                IntensityClass::Vacuum,
            ],
            last: true,
        }));
        round_trip(Message::QberSample(QberSample::Disclosure {
            seed: 99,
            fraction: 0.1,
            signal: vec![1, 0, 1, 1, 0, 0, 0, 1, 1],
            decoy: vec![],
            vacuum: vec![1],
        }));
        round_trip(Message::QberSample(QberSample::Result { compared: [1, 2, 3], errors: [0, 1, 2] }));
        round_trip(Message::Recon(ReconMsg::Start { seed: 5, qber_hint: 0.02, key_len: 4096 }));
        round_trip(Message::Recon(ReconMsg::Query(vec![
            ParityQuery { pass: 0, start: 0, end: 37 },
            ParityQuery { pass: 3, start: 100, end: 101 },
        ])));
        round_trip(Message::Recon(ReconMsg::Answer(vec![0, 1, 1])));
        round_trip(Message::Recon(ReconMsg::VerifyRequest { hash_key: u64::MAX }));
        round_trip(Message::Recon(ReconMsg::VerifyReply { hash: 12345 }));
        round_trip(Message::PaSeed(PaSeedMsg { input_len: 4, output_len: 2, bits: vec![1, 0, 1, 1, 0] }));
        round_trip(Message::Abort(Abort { code: AbortCode::Timeout, reason: "no reply".into() }));
    }

    #[test]
    fn malformed_payloads_are_rejected() {
        let hello = Message::Hello(Hello { ack: false, config_digest: [0; 32] }).encode();
        assert_eq!(Message::decode(FrameType::SyncHello, &hello[..20]), Err(PayloadError::Truncated));
        let mut long = hello.clone();
        long.push(0);
        assert_eq!(Message::decode(FrameType::SyncHello, &long), Err(PayloadError::TrailingBytes(1)));
        let mut flag = hello;
        flag[0] = 2;
        assert!(matches!(Message::decode(FrameType::SyncHello, &flag), Err(PayloadError::Invalid(_))));
        assert!(Message::decode(FrameType::Abort, &[0]).is_err());
        assert!(Message::decode(FrameType::ReconMsg, &[9]).is_err());
        // a count that claims more entries than bytes remain
        assert_eq!(Message::decode(FrameType::SiftAck, &[0, 0xFF, 0xFF, 0xFF, 0xFF]), Err(PayloadError::Truncated));
        // repeated slot
        assert!(Message::decode(FrameType::SiftAck, &[1, 0, 0, 0, 2, 5, 0]).is_err());
    }

    #[test]
    fn bit_packing() {
        let bits = [1u8, 0, 1, 1, 0, 0, 0, 1, 1];
        let p = pack_bits(&bits);
        assert_eq!(p, vec![0b1011_0001, 0b1000_0000]);
        assert_eq!(unpack_bits(&p, 9), bits);
    }
}
