//! Cross-party messaging: the frame codec, in-process and TCP links, and the
//! simulated WAN clock.

pub mod codec;
pub mod link;

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

pub use codec::{decode, encode, Message, MessageKind, HEADER_LEN};
use link::{FrameSink, FrameSource};

use crate::error::{Error, Result};

/// Length prefix written before every frame in socket mode.
pub const SOCKET_PREFIX_LEN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum TransportMode {
    InProcess,
    Socket,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelConfig {
    pub bandwidth_bps: f64,
    pub latency_s: f64,
    pub mode: TransportMode,
    /// Charge each transmission to the simulated clock.
    pub simulate_delay: bool,
    /// Additionally sleep for the simulated delay (demos only).
    pub real_sleep: bool,
    /// Bind address for socket mode; port 0 picks a free port.
    pub socket_addr: String,
}

impl Default for ChannelConfig {
    fn default() -> Self {
        ChannelConfig {
            bandwidth_bps: 300e6,
            latency_s: 0.0,
            mode: TransportMode::InProcess,
            simulate_delay: true,
            real_sleep: false,
            socket_addr: "127.0.0.1:0".into(),
        }
    }
}

impl ChannelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.bandwidth_bps > 0.0 && self.bandwidth_bps.is_finite()) {
            return Err(Error::Config(format!(
                "bandwidth must be positive, got {}",
                self.bandwidth_bps
            )));
        }
        if !(self.latency_s >= 0.0 && self.latency_s.is_finite()) {
            return Err(Error::Config(format!(
                "latency must be non-negative, got {}",
                self.latency_s
            )));
        }
        Ok(())
    }
}

/// Seconds to deliver `bytes` over a link with the given bandwidth and latency.
pub fn simulated_delay(bytes: usize, cfg: &ChannelConfig) -> f64 {
    cfg.latency_s + 8.0 * bytes as f64 / cfg.bandwidth_bps
}

/// Run-wide simulated wall clock, in seconds.
#[derive(Clone, Debug, Default)]
pub struct SimClock(Arc<Mutex<f64>>);

impl SimClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn advance(&self, seconds: f64) {
        *self.0.lock().unwrap() += seconds;
    }

    pub fn now(&self) -> f64 {
        *self.0.lock().unwrap()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Party {
    A,
    B,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LogEntry {
    pub from: Party,
    pub kind: MessageKind,
    pub batch_id: u64,
    pub rows: usize,
    pub cols: usize,
    pub frame: Vec<u8>,
}

/// Every frame sent by either endpoint, in send order.
#[derive(Clone, Debug, Default)]
pub struct MessageLog(Arc<Mutex<Vec<LogEntry>>>);

impl MessageLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> Vec<LogEntry> {
        self.0.lock().unwrap().clone()
    }

    fn push(&self, entry: LogEntry) {
        self.0.lock().unwrap().push(entry);
    }
}

/// One party's end of the duplex channel.
///
/// `send` and `recv` lock independent halves, so one worker may send while
/// another blocks in `recv`.
pub struct Channel {
    owner: Party,
    sink: Mutex<Box<dyn FrameSink>>,
    source: Mutex<Box<dyn FrameSource>>,
    config: ChannelConfig,
    clock: SimClock,
    prefix_len: usize,
    bytes_sent: AtomicU64,
    frames_sent: AtomicU64,
    last_batch_id: Mutex<HashMap<MessageKind, u64>>,
    log: Option<MessageLog>,
}

impl Channel {
    fn new(
        owner: Party,
        sink: Box<dyn FrameSink>,
        source: Box<dyn FrameSource>,
        config: &ChannelConfig,
        clock: SimClock,
        log: Option<MessageLog>,
    ) -> Self {
        let prefix_len = match config.mode {
            TransportMode::InProcess => 0,
            TransportMode::Socket => SOCKET_PREFIX_LEN,
        };
        Channel {
            owner,
            sink: Mutex::new(sink),
            source: Mutex::new(source),
            config: config.clone(),
            clock,
            prefix_len,
            bytes_sent: AtomicU64::new(0),
            frames_sent: AtomicU64::new(0),
            last_batch_id: Mutex::new(HashMap::new()),
            log,
        }
    }

    pub fn owner(&self) -> Party {
        self.owner
    }

    /// Encodes and sends `msg`, charging its delivery to the simulated clock.
    /// Control frames are neither timed nor counted in `bytes_sent`. Batch ids
    /// must strictly increase per message kind.
    pub fn send(&self, msg: &Message) -> Result<()> {
        {
            let mut last = self.last_batch_id.lock().unwrap();
            if let Some(&prev) = last.get(&msg.kind) {
                if msg.batch_id <= prev {
                    return Err(Error::Protocol(format!(
                        "{:?} batch id {} does not follow {prev}",
                        msg.kind, msg.batch_id
                    )));
                }
            }
            last.insert(msg.kind, msg.batch_id);
        }
        let frame = encode(msg)?;
        let wire_bytes = frame.len() + self.prefix_len;
        let charged = msg.kind != MessageKind::Control;
        if charged && self.config.simulate_delay {
            let delay = simulated_delay(wire_bytes, &self.config);
            self.clock.advance(delay);
            if self.config.real_sleep {
                std::thread::sleep(Duration::from_secs_f64(delay));
            }
        }
        if charged {
            self.bytes_sent.fetch_add(wire_bytes as u64, Ordering::Relaxed);
        }
        self.frames_sent.fetch_add(1, Ordering::Relaxed);
        if let Some(log) = &self.log {
            log.push(LogEntry {
                from: self.owner,
                kind: msg.kind,
                batch_id: msg.batch_id,
                rows: msg.payload.rows(),
                cols: msg.payload.cols(),
                frame: frame.clone(),
            });
        }
        self.sink.lock().unwrap().send_frame(frame)
    }

    /// Blocks until the peer's next frame arrives.
    pub fn recv(&self) -> Result<Message> {
        let frame = self.source.lock().unwrap().recv_frame()?;
        decode(&frame)
    }

    pub fn bytes_sent(&self) -> u64 {
        self.bytes_sent.load(Ordering::Relaxed)
    }

    pub fn frames_sent(&self) -> u64 {
        self.frames_sent.load(Ordering::Relaxed)
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }
}

type Endpoint = (Box<dyn FrameSink>, Box<dyn FrameSource>);

/// Connected endpoints for party A and party B sharing one simulated clock.
pub fn channel_pair(config: &ChannelConfig, log: Option<MessageLog>) -> Result<(Channel, Channel)> {
    config.validate()?;
    let clock = SimClock::new();
    let (a_end, b_end): (Endpoint, Endpoint) = match config.mode {
        TransportMode::InProcess => {
            let (a_tx, b_rx) = link::inproc_pipe();
            let (b_tx, a_rx) = link::inproc_pipe();
            ((Box::new(a_tx), Box::new(a_rx)), (Box::new(b_tx), Box::new(b_rx)))
        }
        TransportMode::Socket => {
            let ((a_tx, a_rx), (b_tx, b_rx)) = link::socket_pair(&config.socket_addr)?;
            ((Box::new(a_tx), Box::new(a_rx)), (Box::new(b_tx), Box::new(b_rx)))
        }
    };
    Ok((
        Channel::new(Party::A, a_end.0, a_end.1, config, clock.clone(), log.clone()),
        Channel::new(Party::B, b_end.0, b_end.1, config, clock, log),
    ))
}
