//! Drives two sessions against each other over in-memory queues.

use alloc::collections::VecDeque;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use super::frame::{encode_frame, Frame};
use super::session::{Event, Phase, QuantumBatch, Session};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    AliceToBob,
    BobToAlice,
}

/// Encodes outbound frames. Sessions never build frames over the size limit.
pub fn encode_all(frames: &[Frame]) -> Vec<Vec<u8>> {
    frames.iter().map(|f| encode_frame(f).expect("session frames fit the length field")).collect()
}

/// Feeds the quantum batch once the session has reached the quantum phase.
pub fn feed_batch_if_ready(session: &mut Session, batch: &mut Option<QuantumBatch>) -> Vec<Frame> {
    if session.phase() == Phase::Quantum {
        if let Some(b) = batch.take() {
            return session.step(Event::QuantumBatchDone(b));
        }
    }
    Vec::new()
}

/// Runs Alice and Bob to completion. `tap` sees every encoded frame in send
/// order and returns whether it is delivered. When both queues are empty and
/// a session is still running, it receives a timer event.
pub fn run_pair(
    alice: &mut Session,
    bob: &mut Session,
    alice_batch: QuantumBatch,
    bob_batch: QuantumBatch,
    mut tap: impl FnMut(Direction, &[u8]) -> bool,
) {
    let mut batches = [Some(alice_batch), Some(bob_batch)];
    let mut queues: [VecDeque<Vec<u8>>; 2] = [VecDeque::new(), VecDeque::new()];
    let mut send = |from_alice: bool, frames: Vec<Frame>, queues: &mut [VecDeque<Vec<u8>>; 2]| {
        let (dir, to) = if from_alice { (Direction::AliceToBob, 1) } else { (Direction::BobToAlice, 0) };
        for bytes in encode_all(&frames) {
            if tap(dir, &bytes) {
                queues[to].push_back(bytes);
            }
        }
    };
    let out = bob.step(Event::Start);
    send(false, out, &mut queues);
    loop {
        let mut progressed = false;
        for (i, session) in [&mut *alice, &mut *bob].into_iter().enumerate() {
            while let Some(bytes) = queues[i].pop_front() {
                progressed = true;
                let mut out = session.step(Event::Frame(&bytes));
                out.extend(feed_batch_if_ready(session, &mut batches[i]));
                send(i == 0, out, &mut queues);
            }
        }
        if progressed {
            continue;
        }
        if alice.phase().is_terminal() && bob.phase().is_terminal() {
            break;
        }
        for (i, session) in [&mut *alice, &mut *bob].into_iter().enumerate() {
            let out = session.step(Event::Timer);
            send(i == 0, out, &mut queues);
        }
    }
}
