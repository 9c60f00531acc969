//! Two-party session engine: framed classical messages, sifting and
//! per-intensity statistics.
//!
//! The classical channel is assumed reliable and ordered; a lost frame shows
//! up as a sequence gap and aborts the session. Messages are not
//! authenticated.

mod frame;
mod link;
mod messages;
mod session;
mod sift;

pub use frame::{
    checksum, decode_frame, encode_frame, frame_len, Frame, FrameError, FrameType, HEADER_LEN, MAX_PAYLOAD, TRAILER_LEN,
};
pub use link::{encode_all, feed_batch_if_ready, run_pair, Direction};
pub use messages::{
    pack_bits, unpack_bits, Abort, AbortCode, BasisReveal, Hello, IntensityReveal, Message, PaSeedMsg, PayloadError,
    QberSample, ReconMsg, RevealEntry, SiftAck,
};
pub use session::{
    AbortInfo, BobClick, ErrorCounters, Event, Phase, QuantumBatch, ReconciliationStats, Role, Session, SessionConfig,
    SessionReport, CHUNK_ENTRIES, MIN_KEY_BITS,
};
pub use sift::{class_totals, partition_by_intensity, sift, sifted_key, tally, AliceSlot, ClassTallies, SiftRecord};
