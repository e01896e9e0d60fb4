//! Framed, ordered message exchange between the two parties.
//!
//! One `Frame` is a 13-byte header (`type u8`, `session_id u64 LE`,
//! `payload_len u32 LE`) followed by the payload. The loopback channel moves
//! the same serialized bytes through in-process queues that TCP moves over a
//! socket, so byte counters and protocol behaviour are identical on both.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc::{Receiver, Sender};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ring::FixedPointConfig;

pub const PROTOCOL_VERSION: u16 = 1;

/// Serialized frame header size in bytes.
pub const FRAME_HEADER_BYTES: usize = 13;

/// Refuse frames larger than this; anything bigger is a corrupt length field.
const MAX_PAYLOAD: u32 = 1 << 30;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum MsgType {
    BundleA = 1,
    BundleB = 2,
    NMatrix = 3,
    USync = 4,
    Control = 5,
}

impl MsgType {
    fn from_u8(v: u8) -> Result<Self> {
        Ok(match v {
            1 => MsgType::BundleA,
            2 => MsgType::BundleB,
            3 => MsgType::NMatrix,
            4 => MsgType::USync,
            5 => MsgType::Control,
            _ => return Err(Error::MalformedFrame(format!("unknown frame tag {v}"))),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Frame {
    pub msg_type: MsgType,
    pub session_id: u64,
    pub payload: Vec<u8>,
}

impl Frame {
    pub fn new(msg_type: MsgType, session_id: u64, payload: Vec<u8>) -> Self {
        Self {
            msg_type,
            session_id,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(FRAME_HEADER_BYTES + self.payload.len());
        out.push(self.msg_type as u8);
        out.extend_from_slice(&self.session_id.to_le_bytes());
        out.extend_from_slice(&(self.payload.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.payload);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FRAME_HEADER_BYTES {
            return Err(Error::MalformedFrame("frame shorter than header".into()));
        }
        let msg_type = MsgType::from_u8(bytes[0])?;
        let session_id = u64::from_le_bytes(bytes[1..9].try_into().unwrap());
        let len = u32::from_le_bytes(bytes[9..13].try_into().unwrap());
        if len > MAX_PAYLOAD {
            return Err(Error::MalformedFrame(format!(
                "payload length {len} too large"
            )));
        }
        if bytes.len() != FRAME_HEADER_BYTES + len as usize {
            return Err(Error::MalformedFrame(format!(
                "frame advertises {len} payload bytes, carries {}",
                bytes.len() - FRAME_HEADER_BYTES
            )));
        }
        Ok(Self {
            msg_type,
            session_id,
            payload: bytes[FRAME_HEADER_BYTES..].to_vec(),
        })
    }

    /// Total bytes this frame occupies on the wire.
    pub fn wire_len(&self) -> usize {
        FRAME_HEADER_BYTES + self.payload.len()
    }
}

/// Monotone traffic counters for one endpoint.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct ChannelStats {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
}

#[derive(Default)]
struct Counters {
    bytes_sent: AtomicU64,
    bytes_received: AtomicU64,
    frames_sent: AtomicU64,
    frames_received: AtomicU64,
}

impl Counters {
    fn snapshot(&self) -> ChannelStats {
        ChannelStats {
            bytes_sent: self.bytes_sent.load(Ordering::Relaxed),
            bytes_received: self.bytes_received.load(Ordering::Relaxed),
            frames_sent: self.frames_sent.load(Ordering::Relaxed),
            frames_received: self.frames_received.load(Ordering::Relaxed),
        }
    }

    fn record_send(&self, bytes: usize) {
        self.bytes_sent.fetch_add(bytes as u64, Ordering::Relaxed);
        self.frames_sent.fetch_add(1, Ordering::Relaxed);
    }

    fn record_recv(&self, bytes: usize) {
        self.bytes_received
            .fetch_add(bytes as u64, Ordering::Relaxed);
        self.frames_received.fetch_add(1, Ordering::Relaxed);
    }
}

/// Ordered, exactly-once frame transport. One endpoint is owned by one
/// logical thread; distinct sessions may share a channel.
pub trait Channel: Send {
    fn send_frame(&mut self, frame: &Frame) -> Result<()>;
    fn recv_frame(&mut self) -> Result<Frame>;
    fn stats(&self) -> ChannelStats;
}

/// In-process channel endpoint. Frames are serialized to bytes and back so
/// loopback traffic is byte-identical to TCP traffic.
pub struct LoopbackChannel {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
    counters: Arc<Counters>,
}

/// Connected pair of loopback endpoints.
pub fn loopback_pair() -> (LoopbackChannel, LoopbackChannel) {
    let (tx_ab, rx_ab) = std::sync::mpsc::channel();
    let (tx_ba, rx_ba) = std::sync::mpsc::channel();
    (
        LoopbackChannel {
            tx: tx_ab,
            rx: rx_ba,
            counters: Arc::new(Counters::default()),
        },
        LoopbackChannel {
            tx: tx_ba,
            rx: rx_ab,
            counters: Arc::new(Counters::default()),
        },
    )
}

impl Channel for LoopbackChannel {
    fn send_frame(&mut self, frame: &Frame) -> Result<()> {
        let bytes = frame.to_bytes();
        self.counters.record_send(bytes.len());
        self.tx.send(bytes).map_err(|_| Error::ChannelClosed)
    }

    fn recv_frame(&mut self) -> Result<Frame> {
        let bytes = self.rx.recv().map_err(|_| Error::ChannelClosed)?;
        self.counters.record_recv(bytes.len());
        Frame::from_bytes(&bytes)
    }

    fn stats(&self) -> ChannelStats {
        self.counters.snapshot()
    }
}

/// Blocking TCP endpoint.
pub struct TcpChannel {
    stream: TcpStream,
    counters: Arc<Counters>,
}

impl TcpChannel {
    pub fn from_stream(stream: TcpStream) -> Result<Self> {
        stream
            .set_nodelay(true)
            .map_err(|e| Error::Transport(format!("set_nodelay: {e}")))?;
        Ok(Self {
            stream,
            counters: Arc::new(Counters::default()),
        })
    }

    /// Bind and accept a single peer connection.
    pub fn listen<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let listener =
            TcpListener::bind(addr).map_err(|e| Error::Transport(format!("bind: {e}")))?;
        let (stream, _) = listener
            .accept()
            .map_err(|e| Error::Transport(format!("accept: {e}")))?;
        Self::from_stream(stream)
    }

    /// Connect to a listening peer, retrying briefly so either process may
    /// start first.
    pub fn connect_to<A: ToSocketAddrs + Clone>(addr: A) -> Result<Self> {
        let mut last = None;
        for _ in 0..50 {
            match TcpStream::connect(addr.clone()) {
                Ok(stream) => return Self::from_stream(stream),
                Err(e) => {
                    last = Some(e);
                    std::thread::sleep(Duration::from_millis(100));
                }
            }
        }
        Err(Error::Transport(format!(
            "connect: {}",
            last.map(|e| e.to_string()).unwrap_or_default()
        )))
    }
}

impl Channel for TcpChannel {
    fn send_frame(&mut self, frame: &Frame) -> Result<()> {
        let bytes = frame.to_bytes();
        self.stream
            .write_all(&bytes)
            .map_err(|e| Error::Transport(format!("send: {e}")))?;
        self.counters.record_send(bytes.len());
        Ok(())
    }

    fn recv_frame(&mut self) -> Result<Frame> {
        let mut header = [0u8; FRAME_HEADER_BYTES];
        match self.stream.read_exact(&mut header) {
            Ok(()) => {}
            Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => {
                return Err(Error::ChannelClosed)
            }
            Err(e) => return Err(Error::Transport(format!("recv header: {e}"))),
        }
        let msg_type = MsgType::from_u8(header[0])?;
        let session_id = u64::from_le_bytes(header[1..9].try_into().unwrap());
        let len = u32::from_le_bytes(header[9..13].try_into().unwrap());
        if len > MAX_PAYLOAD {
            return Err(Error::MalformedFrame(format!(
                "payload length {len} too large"
            )));
        }
        let mut payload = vec![0u8; len as usize];
        self.stream
            .read_exact(&mut payload)
            .map_err(|e| Error::Transport(format!("recv payload: {e}")))?;
        self.counters
            .record_recv(FRAME_HEADER_BYTES + payload.len());
        Ok(Frame {
            msg_type,
            session_id,
            payload,
        })
    }

    fn stats(&self) -> ChannelStats {
        self.counters.snapshot()
    }
}

/// Control payloads carried inside `MsgType::Control` frames, JSON-encoded.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ControlMsg {
    Hello {
        version: u16,
        ring_bits: u32,
        frac_bits: u32,
    },
    /// Announces a minibatch: the batch's user ids (indices into the common
    /// user space) and whether the cross-user product reuses the
    /// epoch-synced factor shares.
    Batch {
        users: Vec<u32>,
        stale_s: bool,
    },
    Done,
}

impl ControlMsg {
    pub fn to_frame(&self, session_id: u64) -> Frame {
        Frame::new(
            MsgType::Control,
            session_id,
            serde_json::to_vec(self).expect("control message serializes"),
        )
    }

    pub fn from_frame(frame: &Frame) -> Result<Self> {
        if frame.msg_type != MsgType::Control {
            return Err(Error::Protocol(format!(
                "expected control frame, got {:?}",
                frame.msg_type
            )));
        }
        serde_json::from_slice(&frame.payload)
            .map_err(|e| Error::MalformedFrame(format!("control payload: {e}")))
    }
}

/// Exchange protocol version and fixed-point configuration; both sides must
/// agree exactly before any share crosses the wire.
pub fn handshake(ch: &mut dyn Channel, cfg: FixedPointConfig) -> Result<()> {
    let hello = ControlMsg::Hello {
        version: PROTOCOL_VERSION,
        ring_bits: cfg.ring_bits(),
        frac_bits: cfg.frac_bits(),
    };
    ch.send_frame(&hello.to_frame(0))?;
    let theirs = ControlMsg::from_frame(&ch.recv_frame()?)?;
    match theirs {
        ControlMsg::Hello {
            version,
            ring_bits,
            frac_bits,
        } => {
            if version != PROTOCOL_VERSION {
                return Err(Error::ConfigMismatch(format!(
                    "peer protocol version {version}, ours {PROTOCOL_VERSION}"
                )));
            }
            if ring_bits != cfg.ring_bits() || frac_bits != cfg.frac_bits() {
                return Err(Error::ConfigMismatch(format!(
                    "peer fixed-point config {ring_bits}/{frac_bits}, ours {}/{}",
                    cfg.ring_bits(),
                    cfg.frac_bits()
                )));
            }
            Ok(())
        }
        other => Err(Error::Protocol(format!(
            "expected hello during handshake, got {other:?}"
        ))),
    }
}

/// Establish a TCP channel and run the handshake. An endpoint either listens
/// (`listen` set) or dials the peer.
pub fn connect_tcp(
    listen: Option<&str>,
    peer: Option<&str>,
    cfg: FixedPointConfig,
) -> Result<TcpChannel> {
    let mut ch = match (listen, peer) {
        (Some(bind), _) => TcpChannel::listen(bind)?,
        (None, Some(addr)) => TcpChannel::connect_to(addr)?,
        (None, None) => {
            return Err(Error::Config(
                "tcp transport needs --listen or --peer".into(),
            ))
        }
    };
    handshake(&mut ch, cfg)?;
    Ok(ch)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn loopback_send_recv_roundtrip() {
        let (mut a, mut b) = loopback_pair();
        let frame = Frame::new(MsgType::NMatrix, 7, vec![1, 2, 3]);
        a.send_frame(&frame).unwrap();
        assert_eq!(b.recv_frame().unwrap(), frame);
        assert_eq!(a.stats().bytes_sent, (FRAME_HEADER_BYTES + 3) as u64);
        assert_eq!(b.stats().bytes_received, (FRAME_HEADER_BYTES + 3) as u64);
    }

    #[test]
    fn interleaved_sessions_preserve_order() {
        let (mut a, mut b) = loopback_pair();
        for i in 0..10u64 {
            a.send_frame(&Frame::new(MsgType::Control, i % 2, vec![i as u8]))
                .unwrap();
        }
        let mut seen = [Vec::new(), Vec::new()];
        for _ in 0..10 {
            let f = b.recv_frame().unwrap();
            seen[f.session_id as usize].push(f.payload[0]);
        }
        assert_eq!(seen[0], vec![0, 2, 4, 6, 8]);
        assert_eq!(seen[1], vec![1, 3, 5, 7, 9]);
    }

    #[test]
    fn closed_channel_reports_error() {
        let (a, mut b) = loopback_pair();
        drop(a);
        assert!(matches!(b.recv_frame(), Err(Error::ChannelClosed)));
    }

    #[test]
    fn malformed_frames_rejected() {
        assert!(Frame::from_bytes(&[9; 20]).is_err()); // bad tag
        assert!(Frame::from_bytes(&[1; 4]).is_err()); // short header
        let mut bytes = Frame::new(MsgType::Control, 0, vec![0; 4]).to_bytes();
        bytes.truncate(bytes.len() - 1); // length field lies
        assert!(Frame::from_bytes(&bytes).is_err());
    }

    #[test]
    fn handshake_detects_config_mismatch() {
        let (mut a, mut b) = loopback_pair();
        let t = std::thread::spawn(move || {
            handshake(&mut b, FixedPointConfig::new(64, 16).unwrap()).map(|_| ())
        });
        let res_a = handshake(&mut a, FixedPointConfig::new(64, 20).unwrap());
        let res_b = t.join().unwrap();
        assert!(matches!(res_a, Err(Error::ConfigMismatch(_))));
        assert!(matches!(res_b, Err(Error::ConfigMismatch(_))));
    }

    #[test]
    fn handshake_succeeds_on_matching_config() {
        let (mut a, mut b) = loopback_pair();
        let cfg = FixedPointConfig::default();
        let t = std::thread::spawn(move || handshake(&mut b, cfg).map(|_| b));
        handshake(&mut a, cfg).unwrap();
        t.join().unwrap().unwrap();
    }

    #[test]
    fn tcp_roundtrip_byte_exact() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = listener.local_addr().unwrap();
        let server = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut ch = TcpChannel::from_stream(stream).unwrap();
            let mut frames = Vec::new();
            loop {
                match ch.recv_frame() {
                    Ok(f) => {
                        ch.send_frame(&f).unwrap();
                        frames.push(f);
                    }
                    Err(Error::ChannelClosed) => break,
                    Err(e) => panic!("server recv: {e}"),
                }
            }
            frames.len()
        });

        let mut ch = TcpChannel::connect_to(addr).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        for i in 0..1000u64 {
            let payload: Vec<u8> = (0..rng.gen_range(0..64)).map(|_| rng.gen()).collect();
            let f = Frame::new(MsgType::BundleB, i, payload);
            ch.send_frame(&f).unwrap();
            let echoed = ch.recv_frame().unwrap();
            assert_eq!(echoed, f);
        }
        drop(ch);
        assert_eq!(server.join().unwrap(), 1000);
    }
}
