//! Wire format of a classical frame.
//!
//! ```text
//! +-----+-------------+-----------+---------------+--------------+
//! | tag | sequence    | length    | payload       | CRC-32       |
//! | u8  | u32 BE      | u24 BE    | length bytes  | u32 BE       |
//! +-----+-------------+-----------+---------------+--------------+
//! ```
//!
//! The CRC is the IEEE 802.3 CRC-32 (polynomial 0x04C11DB7, reflected, init
//! and final xor 0xFFFFFFFF) over every byte before it.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const HEADER_LEN: usize = 8;
pub const TRAILER_LEN: usize = 4;
pub const MAX_PAYLOAD: usize = (1 << 24) - 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
#[repr(u8)]
pub enum FrameType {
    SyncHello = 0x01,
    BasisReveal = 0x02,
    IntensityReveal = 0x03,
    SiftAck = 0x04,
    QberSample = 0x05,
    ReconMsg = 0x06,
    PaSeed = 0x07,
    Abort = 0x08,
}

impl FrameType {
    pub const ALL: [FrameType; 8] = [
        FrameType::SyncHello,
        FrameType::BasisReveal,
        FrameType::IntensityReveal,
        FrameType::SiftAck,
        FrameType::QberSample,
        FrameType::ReconMsg,
        FrameType::PaSeed,
        FrameType::Abort,
    ];

    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<FrameType> {
        Self::ALL.get(usize::from(tag).wrapping_sub(1)).copied()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Frame {
    pub frame_type: FrameType,
    pub sequence: u32,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FrameError {
    #[error("frame truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("{0} bytes after the end of the frame")]
    TrailingBytes(usize),
    #[error("checksum mismatch: frame says {stated:#010x}, computed {computed:#010x}")]
    BadChecksum { stated: u32, computed: u32 },
    #[error("unknown frame tag {0:#04x}")]
    UnknownTag(u8),
    #[error("payload of {0} bytes exceeds the 24-bit length field")]
    PayloadTooLarge(usize),
}

pub fn checksum(bytes: &[u8]) -> u32 {
    crc32fast::hash(bytes)
}

/// Total encoded length announced by a frame header.
pub fn frame_len(header: &[u8; HEADER_LEN]) -> usize {
    let len = u32::from_be_bytes([0, header[5], header[6], header[7]]) as usize;
    HEADER_LEN + len + TRAILER_LEN
}

pub fn encode_frame(frame: &Frame) -> Result<Vec<u8>, FrameError> {
    let len = frame.payload.len();
    if len > MAX_PAYLOAD {
        return Err(FrameError::PayloadTooLarge(len));
    }
    let mut out = Vec::with_capacity(HEADER_LEN + len + TRAILER_LEN);
    out.push(frame.frame_type.tag());
    out.extend_from_slice(&frame.sequence.to_be_bytes());
    out.extend_from_slice(&(len as u32).to_be_bytes()[1..]);
    out.extend_from_slice(&frame.payload);
    let crc = checksum(&out);
    out.extend_from_slice(&crc.to_be_bytes());
    Ok(out)
}

/// Decodes exactly one frame occupying all of `bytes`.
pub fn decode_frame(bytes: &[u8]) -> Result<Frame, FrameError> {
    if bytes.len() < HEADER_LEN + TRAILER_LEN {
        return Err(FrameError::Truncated { needed: HEADER_LEN + TRAILER_LEN, available: bytes.len() });
    }
    let mut header = [0u8; HEADER_LEN];
    header.copy_from_slice(&bytes[..HEADER_LEN]);
    let total = frame_len(&header);
    if bytes.len() < total {
        return Err(FrameError::Truncated { needed: total, available: bytes.len() });
    }
    if bytes.len() > total {
        return Err(FrameError::TrailingBytes(bytes.len() - total));
    }
    let body = &bytes[..total - TRAILER_LEN];
    let stated = u32::from_be_bytes(bytes[total - TRAILER_LEN..].try_into().expect("4-byte trailer"));
    let computed = checksum(body);
    if stated != computed {
        return Err(FrameError::BadChecksum { stated, computed });
    }
    let frame_type = FrameType::from_tag(bytes[0]).ok_or(FrameError::UnknownTag(bytes[0]))?;
    Ok(Frame {
        frame_type,
        sequence: u32::from_be_bytes(bytes[1..5].try_into().expect("4-byte sequence")),
        payload: body[HEADER_LEN..].to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;
    use alloc::vec;
    use proptest::prelude::*;
    use rand::Rng;

    /// Bitwise reflected CRC-32, written out independently of the library.
    fn crc32_reference(bytes: &[u8]) -> u32 {
        let mut crc = 0xFFFF_FFFFu32;
        for &b in bytes {
            crc ^= u32::from(b);
            for _ in 0..8 {
                crc = if crc & 1 == 1 { (crc >> 1) ^ 0xEDB8_8320 } else { crc >> 1 };
            }
        }
        !crc
    }

    #[test]
    fn reference_crc_check_value() {
        assert_eq!(crc32_reference(b"123456789"), 0xCBF4_3926);
        assert_eq!(checksum(b"123456789"), 0xCBF4_3926);
    }

    #[test]
    fn empty_hello_layout() {
        let f = Frame { frame_type: FrameType::SyncHello, sequence: 0, payload: vec![] };
        let bytes = encode_frame(&f).unwrap();
        let head = [0x01, 0, 0, 0, 0, 0, 0, 0];
        assert_eq!(&bytes[..8], &head);
        assert_eq!(bytes[8..], crc32_reference(&head).to_be_bytes());
        assert_eq!(bytes.len(), 12);
        assert_eq!(decode_frame(&bytes).unwrap(), f);
    }

    #[test]
    fn header_fields_are_big_endian() {
        let f = Frame { frame_type: FrameType::ReconMsg, sequence: 0x0102_0304, payload: vec![7; 0x0A0B0C] };
        let bytes = encode_frame(&f).unwrap();
        assert_eq!(&bytes[..8], &[0x06, 1, 2, 3, 4, 0x0A, 0x0B, 0x0C]);
        assert_eq!(frame_len(&bytes[..8].try_into().unwrap()), bytes.len());
    }

    #[test]
    fn every_tag_round_trips() {
        let mut rng = substream(11, 0);
        for t in FrameType::ALL {
            assert_eq!(FrameType::from_tag(t.tag()), Some(t));
            for _ in 0..20 {
                let len = rng.gen_range(0..600);
                let payload: Vec<u8> = (0..len).map(|_| rng.gen()).collect();
                let f = Frame { frame_type: t, sequence: rng.gen(), payload };
                assert_eq!(decode_frame(&encode_frame(&f).unwrap()).unwrap(), f);
            }
        }
        assert_eq!(FrameType::from_tag(0), None);
        assert_eq!(FrameType::from_tag(9), None);
    }

    #[test]
    fn distinct_decode_errors() {
        let f = Frame { frame_type: FrameType::Abort, sequence: 5, payload: vec![1, 2, 3] };
        let bytes = encode_frame(&f).unwrap();
        assert!(matches!(decode_frame(&bytes[..5]), Err(FrameError::Truncated { .. })));
        assert!(matches!(decode_frame(&bytes[..bytes.len() - 1]), Err(FrameError::Truncated { .. })));
        let mut long = bytes.clone();
        long.push(0);
        assert_eq!(decode_frame(&long), Err(FrameError::TrailingBytes(1)));
        let mut bad = bytes.clone();
        bad[9] ^= 0x40;
        assert!(matches!(decode_frame(&bad), Err(FrameError::BadChecksum { .. })));
        // a well-formed frame with an unassigned tag
        let mut unknown = vec![0x2A, 0, 0, 0, 0, 0, 0, 0];
        let crc = crc32_reference(&unknown);
        unknown.extend_from_slice(&crc.to_be_bytes());
        assert_eq!(decode_frame(&unknown), Err(FrameError::UnknownTag(0x2A)));
        let huge = Frame { frame_type: FrameType::PaSeed, sequence: 0, payload: vec![0; MAX_PAYLOAD + 1] };
        assert_eq!(encode_frame(&huge), Err(FrameError::PayloadTooLarge(MAX_PAYLOAD + 1)));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]
        #[test]
        fn crc_matches_reference(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
            prop_assert_eq!(checksum(&bytes), crc32_reference(&bytes));
        }

        #[test]
        fn single_bit_corruption_is_detected(
            tag in 0usize..8,
            seq in any::<u32>(),
            payload in proptest::collection::vec(any::<u8>(), 0..256),
            pick in any::<prop::sample::Index>(),
        ) {
            let f = Frame { frame_type: FrameType::ALL[tag], sequence: seq, payload };
            let bytes = encode_frame(&f).unwrap();
            let bit = pick.index(bytes.len() * 8);
            let mut bad = bytes.clone();
            bad[bit / 8] ^= 1 << (bit % 8);
            prop_assert!(decode_frame(&bad).is_err());
        }
    }

    #[test]
    fn every_single_bit_flip_of_small_frames() {
        let mut rng = substream(12, 0);
        for t in FrameType::ALL {
            let payload: Vec<u8> = (0..rng.gen_range(0..40)).map(|_| rng.gen()).collect();
            let bytes = encode_frame(&Frame { frame_type: t, sequence: rng.gen(), payload }).unwrap();
            for bit in 0..bytes.len() * 8 {
                let mut bad = bytes.clone();
                bad[bit / 8] ^= 1 << (bit % 8);
                assert!(decode_frame(&bad).is_err(), "{t:?} bit {bit}");
            }
        }
    }
}
