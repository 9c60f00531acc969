//! Two-process runs over TCP.
//!
//! Alice serves, Bob connects. Bob opens two connections, each announced by
//! a one-byte preamble: `C` carries the framed classical exchange and `Q`
//! stands in for the optical path, carrying the emitted pulses from Alice's
//! transmitter to the channel and receiver models in Bob's process.
//!
//! The pulse stream is a sequence of shards, each
//! `u32 BE slot count | u32 BE byte count | bytes`, ended by a shard with
//! zero slots. Each slot is one byte `polarization code | photons << 2`;
//! a photon field of 63 means the exact count follows as a `u32 BE`.

use std::io::{self, BufReader, BufWriter, ErrorKind, Read, Write};
use std::net::{Shutdown, TcpListener, TcpStream, ToSocketAddrs};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use thiserror::Error;

use uwqkd_core::polarization::Polarization;
use uwqkd_core::protocol::{
    encode_all, frame_len, Direction, Event, Frame, Phase, QuantumBatch, Role, Session, HEADER_LEN, MAX_PAYLOAD,
    TRAILER_LEN,
};
use uwqkd_core::rng::SimRng;

use crate::config::{ConfigError, ExperimentConfig};
use crate::report::{PartySummary, Topology};
use crate::run::{base_report, deliver, fill_from_sessions, session_config, transport_rng, RunOptions, RunOutput};
use crate::sim::{emit_shard, receive_shard, shard_count, shard_range, Emission, LinkModel};
use crate::transcript::TranscriptEntry;

const CLASSICAL: u8 = b'C';
const QUANTUM: u8 = b'Q';
const PHOTON_ESCAPE: u32 = 63;
/// Shards simulated in parallel between writes to the pulse stream.
const SHARDS_PER_BATCH: u64 = 64;

#[derive(Debug, Error)]
pub enum NetError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("transport: {0}")]
    Io(#[from] io::Error),
    #[error("peer did not connect within {0:?}")]
    AcceptTimeout(Duration),
    #[error("pulse stream: {0}")]
    PulseStream(String),
}

fn encode_emissions(emitted: &[Emission], out: &mut Vec<u8>) {
    for e in emitted {
        let code = e.polarization.code();
        if e.photons >= PHOTON_ESCAPE {
            out.push(code | (PHOTON_ESCAPE as u8) << 2);
            out.extend_from_slice(&e.photons.to_be_bytes());
        } else {
            out.push(code | (e.photons as u8) << 2);
        }
    }
}

fn decode_emissions(bytes: &[u8], count: usize) -> Result<Vec<Emission>, NetError> {
    let bad = || NetError::PulseStream("slot record runs past the shard".into());
    let mut out = Vec::with_capacity(count);
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        i += 1;
        let mut photons = u32::from(b >> 2);
        if photons == PHOTON_ESCAPE {
            let raw = bytes.get(i..i + 4).ok_or_else(bad)?;
            photons = u32::from_be_bytes(raw.try_into().expect("4 bytes"));
            i += 4;
        }
        out.push(Emission { polarization: Polarization::from_code(b & 3), photons });
    }
    if out.len() != count {
        return Err(NetError::PulseStream(format!("shard announced {count} slots, carried {}", out.len())));
    }
    Ok(out)
}

fn write_shard<W: Write>(w: &mut W, slots: usize, body: &[u8]) -> io::Result<()> {
    w.write_all(&(slots as u32).to_be_bytes())?;
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(body)
}

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_be_bytes(b))
}

/// Alice's transmitter: emits every shard onto the pulse stream.
fn transmit(cfg: &ExperimentConfig, model: &LinkModel, stream: &TcpStream) -> Result<QuantumBatch, NetError> {
    let mut w = BufWriter::new(stream);
    let shards = shard_count(cfg.pulses);
    let mut slots = Vec::with_capacity(cfg.pulses as usize);
    let mut first = 0;
    while first < shards {
        let last = (first + SHARDS_PER_BATCH).min(shards);
        let batch: Vec<_> = (first..last)
            .into_par_iter()
            .map(|k| {
                let (s, e) = emit_shard(model, cfg.seeds.alice, cfg.pulses, k);
                let mut body = Vec::with_capacity(e.len());
                encode_emissions(&e, &mut body);
                (s, body)
            })
            .collect();
        for (s, body) in batch {
            write_shard(&mut w, s.len(), &body)?;
            slots.extend(s);
        }
        first = last;
    }
    write_shard(&mut w, 0, &[])?;
    w.flush()?;
    drop(w);
    stream.shutdown(Shutdown::Write)?;
    Ok(QuantumBatch::Alice(slots))
}

/// Bob's side of the optical path: channel loss and detection.
fn receive(cfg: &ExperimentConfig, model: &LinkModel, stream: &TcpStream) -> Result<QuantumBatch, NetError> {
    let mut r = BufReader::new(stream);
    let mut clicks = Vec::new();
    let mut k = 0u64;
    loop {
        let mut pending = Vec::new();
        while pending.len() < SHARDS_PER_BATCH as usize {
            let count = read_u32(&mut r)? as usize;
            let len = read_u32(&mut r)? as usize;
            if count == 0 {
                break;
            }
            let expected = shard_range(cfg.pulses, k).count();
            if count != expected {
                return Err(NetError::PulseStream(format!("shard {k} has {count} slots, expected {expected}")));
            }
            let mut body = vec![0u8; len];
            r.read_exact(&mut body)?;
            pending.push((k, decode_emissions(&body, count)?));
            k += 1;
        }
        let done = pending.len() < SHARDS_PER_BATCH as usize;
        let got: Vec<_> =
            pending.par_iter().map(|(k, e)| receive_shard(model, &cfg.seeds, cfg.pulses, *k, e).0).collect();
        clicks.extend(got.into_iter().flatten());
        if done {
            break;
        }
    }
    if k != shard_count(cfg.pulses) {
        return Err(NetError::PulseStream(format!("stream ended after {k} of {} shards", shard_count(cfg.pulses))));
    }
    Ok(QuantumBatch::Bob { total_slots: cfg.pulses, clicks })
}

enum Inbound {
    Frame(Vec<u8>),
    /// Nothing arrived in time, or the peer hung up.
    Silence,
}

fn read_frame(stream: &mut TcpStream) -> io::Result<Inbound> {
    let mut header = [0u8; HEADER_LEN];
    match stream.read_exact(&mut header) {
        Ok(()) => {}
        Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::UnexpectedEof) => {
            return Ok(Inbound::Silence)
        }
        Err(e) => return Err(e),
    }
    let total = frame_len(&header);
    debug_assert!(total <= HEADER_LEN + MAX_PAYLOAD + TRAILER_LEN);
    let mut bytes = vec![0u8; total];
    bytes[..HEADER_LEN].copy_from_slice(&header);
    match stream.read_exact(&mut bytes[HEADER_LEN..]) {
        Ok(()) => Ok(Inbound::Frame(bytes)),
        Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::UnexpectedEof) => {
            Ok(Inbound::Silence)
        }
        Err(e) => Err(e),
    }
}

struct Endpoint<'a> {
    cfg: &'a ExperimentConfig,
    opts: RunOptions,
    session: Session,
    classical: TcpStream,
    quantum: TcpStream,
    coin: SimRng,
    outbound: Direction,
    transcript: Vec<TranscriptEntry>,
    dropped: u64,
    batch_done: bool,
}

impl Endpoint<'_> {
    fn record(&mut self, dir: Direction, bytes: &[u8], delivered: bool) {
        if self.opts.record_transcript {
            let i = self.transcript.len() as u64;
            self.transcript.push(TranscriptEntry::from_bytes(i, dir, bytes, delivered));
        }
    }

    fn send(&mut self, frames: Vec<Frame>) {
        for bytes in encode_all(&frames) {
            let delivered = deliver(&mut self.coin, self.cfg.protocol.frame_drop_probability);
            self.record(self.outbound, &bytes, delivered);
            if delivered {
                // a peer that already hung up surfaces as silence on the next read
                let _ = self.classical.write_all(&bytes);
            } else {
                self.dropped += 1;
            }
        }
    }

    fn feed_batch(&mut self, model: &LinkModel) -> Result<(), NetError> {
        if self.batch_done || self.session.phase() != Phase::Quantum {
            return Ok(());
        }
        self.batch_done = true;
        let batch = match self.session.role() {
            Role::Alice => transmit(self.cfg, model, &self.quantum)?,
            Role::Bob => receive(self.cfg, model, &self.quantum)?,
        };
        let out = self.session.step(Event::QuantumBatchDone(batch));
        self.send(out);
        Ok(())
    }

    fn drive(&mut self, model: &LinkModel) -> Result<(), NetError> {
        let inbound = match self.outbound {
            Direction::AliceToBob => Direction::BobToAlice,
            Direction::BobToAlice => Direction::AliceToBob,
        };
        if self.session.role() == Role::Bob {
            let out = self.session.step(Event::Start);
            self.send(out);
        }
        while !self.session.phase().is_terminal() {
            let out = match read_frame(&mut self.classical)? {
                Inbound::Frame(bytes) => {
                    self.record(inbound, &bytes, true);
                    self.session.step(Event::Frame(&bytes))
                }
                Inbound::Silence => self.session.step(Event::Timer),
            };
            self.send(out);
            self.feed_batch(model)?;
        }
        let _ = self.classical.flush();
        let _ = self.classical.shutdown(Shutdown::Write);
        Ok(())
    }

    fn finish(self, start: Instant) -> Result<RunOutput, NetError> {
        let topology = match self.session.role() {
            Role::Alice => Topology::Alice,
            Role::Bob => Topology::Bob,
        };
        let mut report = base_report(self.cfg, topology)?;
        fill_from_sessions(&mut report, &self.session, vec![PartySummary::of(&self.session)], self.dropped);
        report.wall_clock_s = start.elapsed().as_secs_f64();
        let key = self.session.final_key().map(<[u8]>::to_vec);
        let (alice_key, bob_key) = match self.session.role() {
            Role::Alice => (key, None),
            Role::Bob => (None, key),
        };
        Ok(RunOutput { report, transcript: self.transcript, alice_key, bob_key })
    }
}

fn prepare(stream: &TcpStream, cfg: &ExperimentConfig) -> io::Result<()> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(Some(Duration::from_millis(cfg.protocol.timeout_ms)))
}

fn run_endpoint(
    cfg: &ExperimentConfig,
    opts: RunOptions,
    role: Role,
    classical: TcpStream,
    quantum: TcpStream,
    start: Instant,
) -> Result<RunOutput, NetError> {
    cfg.validate()?;
    let model = LinkModel::from_config(cfg)?;
    prepare(&classical, cfg)?;
    prepare(&quantum, cfg)?;
    let outbound = match role {
        Role::Alice => Direction::AliceToBob,
        Role::Bob => Direction::BobToAlice,
    };
    let mut ep = Endpoint {
        cfg,
        opts,
        session: Session::new(session_config(cfg, role)?),
        classical,
        quantum,
        coin: transport_rng(cfg.seeds.channel, outbound),
        outbound,
        transcript: Vec::new(),
        dropped: 0,
        batch_done: false,
    };
    ep.drive(&model)?;
    ep.finish(start)
}

/// Alice: accepts Bob's two connections on `listener` and runs the protocol.
pub fn serve(cfg: &ExperimentConfig, listener: &TcpListener, opts: RunOptions) -> Result<RunOutput, NetError> {
    let start = Instant::now();
    cfg.validate()?;
    let window = Duration::from_millis(cfg.protocol.connect_timeout_ms);
    let deadline = Instant::now() + window;
    listener.set_nonblocking(true)?;
    let (mut classical, mut quantum) = (None, None);
    while classical.is_none() || quantum.is_none() {
        match listener.accept() {
            Ok((mut s, _)) => {
                s.set_nonblocking(false)?;
                s.set_read_timeout(Some(window))?;
                let mut tag = [0u8; 1];
                if s.read_exact(&mut tag).is_err() {
                    continue;
                }
                match tag[0] {
                    CLASSICAL if classical.is_none() => classical = Some(s),
                    QUANTUM if quantum.is_none() => quantum = Some(s),
                    _ => {}
                }
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock => {
                if Instant::now() >= deadline {
                    return Err(NetError::AcceptTimeout(window));
                }
                std::thread::sleep(Duration::from_millis(5));
            }
            Err(e) => return Err(e.into()),
        }
    }
    listener.set_nonblocking(false)?;
    run_endpoint(cfg, opts, Role::Alice, classical.expect("accepted"), quantum.expect("accepted"), start)
}

fn dial(addr: &[std::net::SocketAddr], tag: u8, deadline: Instant) -> io::Result<TcpStream> {
    loop {
        match TcpStream::connect(addr) {
            Ok(mut s) => {
                s.write_all(&[tag])?;
                return Ok(s);
            }
            Err(e) if Instant::now() >= deadline => return Err(e),
            Err(_) => std::thread::sleep(Duration::from_millis(20)),
        }
    }
}

/// Bob: connects to Alice at `addr`, retrying until the connect window ends.
pub fn connect(cfg: &ExperimentConfig, addr: impl ToSocketAddrs, opts: RunOptions) -> Result<RunOutput, NetError> {
    let start = Instant::now();
    cfg.validate()?;
    let addrs: Vec<_> = addr.to_socket_addrs()?.collect();
    let deadline = Instant::now() + Duration::from_millis(cfg.protocol.connect_timeout_ms);
    let classical = dial(&addrs, CLASSICAL, deadline)?;
    let quantum = dial(&addrs, QUANTUM, deadline)?;
    run_endpoint(cfg, opts, Role::Bob, classical, quantum, start)
}
