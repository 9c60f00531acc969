//! Frame transcripts, one JSON object per line.

use std::io::{self, BufRead, Write};

use serde::{Deserialize, Serialize};

use uwqkd_core::protocol::{checksum, Direction, FrameType, HEADER_LEN, TRAILER_LEN};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub index: u64,
    pub direction: Direction,
    /// `None` when the tag byte is not a known frame type.
    pub frame_type: Option<FrameType>,
    pub sequence: u32,
    pub payload_len: usize,
    pub crc32: String,
    /// False when the transport dropped the frame.
    pub delivered: bool,
    pub payload_hex: String,
}

impl TranscriptEntry {
    /// Describes an encoded frame. Bytes too short to be a frame are kept
    /// whole in `payload_hex`.
    pub fn from_bytes(index: u64, direction: Direction, bytes: &[u8], delivered: bool) -> TranscriptEntry {
        if bytes.len() < HEADER_LEN + TRAILER_LEN {
            return TranscriptEntry {
                index,
                direction,
                frame_type: None,
                sequence: 0,
                payload_len: 0,
                crc32: String::new(),
                delivered,
                payload_hex: hex::encode(bytes),
            };
        }
        let payload = &bytes[HEADER_LEN..bytes.len() - TRAILER_LEN];
        TranscriptEntry {
            index,
            direction,
            frame_type: FrameType::from_tag(bytes[0]),
            sequence: u32::from_be_bytes(bytes[1..5].try_into().expect("4 bytes")),
            payload_len: payload.len(),
            crc32: hex::encode(&bytes[bytes.len() - TRAILER_LEN..]),
            delivered,
            payload_hex: hex::encode(payload),
        }
    }

    /// Rebuilds the exact wire bytes.
    pub fn to_bytes(&self) -> Option<Vec<u8>> {
        let tag = self.frame_type?.tag();
        let payload = hex::decode(&self.payload_hex).ok()?;
        let mut out = vec![tag];
        out.extend_from_slice(&self.sequence.to_be_bytes());
        out.extend_from_slice(&(payload.len() as u32).to_be_bytes()[1..]);
        out.extend_from_slice(&payload);
        let crc = hex::decode(&self.crc32).ok()?;
        if crc != checksum(&out).to_be_bytes() {
            return None;
        }
        out.extend_from_slice(&crc);
        Some(out)
    }
}

pub fn write_jsonl<W: Write>(mut w: W, entries: &[TranscriptEntry]) -> io::Result<()> {
    for e in entries {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()
}

pub fn read_jsonl<R: BufRead>(r: R) -> io::Result<Vec<TranscriptEntry>> {
    r.lines()
        .filter(|l| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|l| serde_json::from_str(&l?).map_err(io::Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use uwqkd_core::protocol::{encode_frame, Frame};

    #[test]
    fn entries_rebuild_wire_bytes() {
        let frames = [
            Frame { frame_type: FrameType::SyncHello, sequence: 0, payload: vec![] },
            Frame { frame_type: FrameType::PaSeed, sequence: 77, payload: vec![1, 2, 250] },
        ];
        let entries: Vec<_> = frames
            .iter()
            .enumerate()
            .map(|(i, f)| TranscriptEntry::from_bytes(i as u64, Direction::BobToAlice, &encode_frame(f).unwrap(), true))
            .collect();
        let mut buf = Vec::new();
        write_jsonl(&mut buf, &entries).unwrap();
        let back = read_jsonl(&buf[..]).unwrap();
        assert_eq!(back, entries);
        for (e, f) in back.iter().zip(&frames) {
            assert_eq!(e.to_bytes().unwrap(), encode_frame(f).unwrap());
        }
        assert_eq!(back[1].payload_hex, "0102fa");
    }
}
