//! Framed, ordered, reliable channels with byte accounting.
//!
//! Wire frame: `len: u32 LE | type: u8 | payload[len]`. Messages longer than
//! [`CHUNK_LEN`] are split into several frames; every frame except the last
//! carries [`CONTINUATION`] in the high bit of its type byte.

use std::io::{self, BufWriter, ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::mpsc;
use std::thread;
use std::time::{Duration, Instant};

use log::debug;

use crate::error::{Error, Result};

pub const HEADER_LEN: usize = 5;
pub const CHUNK_LEN: usize = 64 << 20;
pub const CONTINUATION: u8 = 0x80;
/// Largest declared frame length accepted from a peer.
pub const MAX_FRAME_LEN: u64 = 1 << 31;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MsgType {
    Params = 1,
    Key = 2,
    OtMsg = 3,
    Delta = 4,
    GammaDelta = 5,
    Psi = 6,
    Abort = 7,
}

impl MsgType {
    pub const ALL: [MsgType; 7] = [
        MsgType::Params,
        MsgType::Key,
        MsgType::OtMsg,
        MsgType::Delta,
        MsgType::GammaDelta,
        MsgType::Psi,
        MsgType::Abort,
    ];

    pub fn from_byte(b: u8) -> Result<Self> {
        MsgType::ALL
            .into_iter()
            .find(|t| *t as u8 == b)
            .ok_or(Error::UnknownMsgType(b))
    }

    pub fn name(self) -> &'static str {
        match self {
            MsgType::Params => "params",
            MsgType::Key => "key",
            MsgType::OtMsg => "ot",
            MsgType::Delta => "delta",
            MsgType::GammaDelta => "gamma_delta",
            MsgType::Psi => "psi",
            MsgType::Abort => "abort",
        }
    }
}

/// Wire-level counters for one channel. Sizes include frame headers.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ChannelMetrics {
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub frames_sent: u64,
    pub frames_received: u64,
    sent_by_type: [u64; 8],
    received_by_type: [u64; 8],
}

impl ChannelMetrics {
    /// Wire bytes sent in frames of type `t`.
    pub fn sent(&self, t: MsgType) -> u64 {
        self.sent_by_type[t as usize]
    }

    pub fn received(&self, t: MsgType) -> u64 {
        self.received_by_type[t as usize]
    }

    pub fn total(&self) -> u64 {
        self.bytes_sent + self.bytes_received
    }

    pub fn merge(&mut self, other: &ChannelMetrics) {
        self.bytes_sent += other.bytes_sent;
        self.bytes_received += other.bytes_received;
        self.frames_sent += other.frames_sent;
        self.frames_received += other.frames_received;
        for i in 0..8 {
            self.sent_by_type[i] += other.sent_by_type[i];
            self.received_by_type[i] += other.received_by_type[i];
        }
    }
}

/// One end of a bidirectional framed channel.
pub struct Channel {
    label: String,
    reader: Box<dyn Read + Send>,
    writer: Box<dyn Write + Send>,
    metrics: ChannelMetrics,
    transcript: Option<Vec<u8>>,
}

impl std::fmt::Debug for Channel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Channel")
            .field("label", &self.label)
            .field("metrics", &self.metrics)
            .finish()
    }
}

fn map_read_err(e: io::Error) -> Error {
    match e.kind() {
        ErrorKind::UnexpectedEof | ErrorKind::ConnectionReset | ErrorKind::BrokenPipe => {
            Error::Disconnected
        }
        ErrorKind::WouldBlock | ErrorKind::TimedOut => Error::Timeout("waiting for peer".into()),
        _ => Error::Io(e),
    }
}

fn map_write_err(e: io::Error) -> Error {
    match e.kind() {
        ErrorKind::BrokenPipe | ErrorKind::ConnectionReset | ErrorKind::ConnectionAborted => {
            Error::Disconnected
        }
        _ => Error::Io(e),
    }
}

impl Channel {
    pub fn new(
        label: impl Into<String>,
        reader: Box<dyn Read + Send>,
        writer: Box<dyn Write + Send>,
    ) -> Self {
        Channel {
            label: label.into(),
            reader,
            writer,
            metrics: ChannelMetrics::default(),
            transcript: None,
        }
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn set_label(&mut self, label: impl Into<String>) {
        self.label = label.into();
    }

    pub fn metrics(&self) -> &ChannelMetrics {
        &self.metrics
    }

    /// Starts keeping a copy of every byte this end writes.
    pub fn record_transcript(&mut self) {
        self.transcript.get_or_insert_with(Vec::new);
    }

    pub fn take_transcript(&mut self) -> Option<Vec<u8>> {
        self.transcript.take()
    }

    fn write_raw(&mut self, msg_type: u8, chunk: &[u8]) -> Result<()> {
        let mut header = [0u8; HEADER_LEN];
        header[..4].copy_from_slice(&(chunk.len() as u32).to_le_bytes());
        header[4] = msg_type;
        self.writer.write_all(&header).map_err(map_write_err)?;
        self.writer.write_all(chunk).map_err(map_write_err)?;
        if let Some(t) = self.transcript.as_mut() {
            t.extend_from_slice(&header);
            t.extend_from_slice(chunk);
        }
        let n = (HEADER_LEN + chunk.len()) as u64;
        self.metrics.bytes_sent += n;
        self.metrics.frames_sent += 1;
        self.metrics.sent_by_type[(msg_type & !CONTINUATION) as usize] += n;
        Ok(())
    }

    pub fn send_frame(&mut self, msg_type: MsgType, payload: &[u8]) -> Result<()> {
        let mut rest = payload;
        while rest.len() > CHUNK_LEN {
            let (head, tail) = rest.split_at(CHUNK_LEN);
            self.write_raw(msg_type as u8 | CONTINUATION, head)?;
            rest = tail;
        }
        self.write_raw(msg_type as u8, rest)?;
        self.writer.flush().map_err(map_write_err)
    }

    /// Best-effort abort notice; errors are ignored.
    pub fn send_abort(&mut self, reason: &str) {
        let _ = self.send_frame(MsgType::Abort, reason.as_bytes());
    }

    /// Receives the next logical message, reassembling continuation frames.
    pub fn recv_any(&mut self) -> Result<(MsgType, Vec<u8>)> {
        let mut payload = Vec::new();
        let mut first: Option<MsgType> = None;
        loop {
            let mut header = [0u8; HEADER_LEN];
            self.reader.read_exact(&mut header).map_err(map_read_err)?;
            let len = u32::from_le_bytes(header[..4].try_into().unwrap()) as u64;
            if len > MAX_FRAME_LEN {
                return Err(Error::FrameTooLarge(len));
            }
            let more = header[4] & CONTINUATION != 0;
            let t = MsgType::from_byte(header[4] & !CONTINUATION)?;
            if let Some(f) = first {
                if f != t {
                    return Err(Error::protocol(format!(
                        "continuation of {f:?} carried type {t:?}"
                    )));
                }
            }
            first = Some(t);
            let start = payload.len();
            payload.resize(start + len as usize, 0);
            self.reader
                .read_exact(&mut payload[start..])
                .map_err(map_read_err)?;
            let n = HEADER_LEN as u64 + len;
            self.metrics.bytes_received += n;
            self.metrics.frames_received += 1;
            self.metrics.received_by_type[t as usize] += n;
            if !more {
                return Ok((t, payload));
            }
        }
    }

    /// Receives a message of the expected type. An ABORT frame is always
    /// accepted and surfaces as [`Error::Aborted`].
    pub fn recv_frame(&mut self, expected: MsgType) -> Result<Vec<u8>> {
        let (t, payload) = self.recv_any()?;
        if t == MsgType::Abort {
            return Err(Error::Aborted(String::from_utf8_lossy(&payload).into_owned()));
        }
        if t != expected {
            return Err(Error::UnexpectedFrame { expected, got: t });
        }
        Ok(payload)
    }
}

struct PipeReader {
    rx: mpsc::Receiver<Vec<u8>>,
    buf: Vec<u8>,
    pos: usize,
    timeout: Option<Duration>,
}

impl Read for PipeReader {
    fn read(&mut self, out: &mut [u8]) -> io::Result<usize> {
        if self.pos == self.buf.len() {
            let next = match self.timeout {
                Some(t) => self.rx.recv_timeout(t).map_err(|e| match e {
                    mpsc::RecvTimeoutError::Timeout => io::Error::from(ErrorKind::TimedOut),
                    mpsc::RecvTimeoutError::Disconnected => io::Error::from(ErrorKind::UnexpectedEof),
                }),
                None => self
                    .rx
                    .recv()
                    .map_err(|_| io::Error::from(ErrorKind::UnexpectedEof)),
            };
            match next {
                Ok(b) => {
                    self.buf = b;
                    self.pos = 0;
                }
                Err(e) if e.kind() == ErrorKind::UnexpectedEof => return Ok(0),
                Err(e) => return Err(e),
            }
        }
        let n = out.len().min(self.buf.len() - self.pos);
        out[..n].copy_from_slice(&self.buf[self.pos..self.pos + n]);
        self.pos += n;
        Ok(n)
    }
}

struct PipeWriter {
    tx: mpsc::Sender<Vec<u8>>,
}

impl Write for PipeWriter {
    fn write(&mut self, data: &[u8]) -> io::Result<usize> {
        if data.is_empty() {
            return Ok(0);
        }
        self.tx
            .send(data.to_vec())
            .map_err(|_| io::Error::from(ErrorKind::BrokenPipe))?;
        Ok(data.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

/// Connected pair of in-process channels. Dropping one end makes reads on
/// the other end fail with [`Error::Disconnected`].
pub fn memory_pair(a_label: &str, b_label: &str, timeout: Option<Duration>) -> (Channel, Channel) {
    let (tx_ab, rx_ab) = mpsc::channel();
    let (tx_ba, rx_ba) = mpsc::channel();
    let reader = |rx| PipeReader {
        rx,
        buf: Vec::new(),
        pos: 0,
        timeout,
    };
    let a = Channel::new(
        a_label,
        Box::new(reader(rx_ba)),
        Box::new(PipeWriter { tx: tx_ab }),
    );
    let b = Channel::new(
        b_label,
        Box::new(reader(rx_ab)),
        Box::new(PipeWriter { tx: tx_ba }),
    );
    (a, b)
}

pub fn tcp_channel(label: &str, stream: TcpStream, timeout: Option<Duration>) -> Result<Channel> {
    stream.set_nodelay(true)?;
    stream.set_read_timeout(timeout)?;
    let writer = stream.try_clone()?;
    Ok(Channel::new(
        label,
        Box::new(io::BufReader::with_capacity(1 << 16, stream)),
        Box::new(BufWriter::with_capacity(1 << 16, writer)),
    ))
}

/// A party's two ring neighbors. For the leader, `prev` is the return edge
/// from the terminal assistant; for the terminal assistant, `next` is that
/// same edge towards the leader.
#[derive(Debug)]
pub struct Ring {
    pub prev: Channel,
    pub next: Channel,
}

/// Socket endpoints of one party.
#[derive(Debug, Clone)]
pub struct RingEndpoints {
    /// Where this party accepts its predecessor.
    pub listen: String,
    /// Where the successor (or, for the terminal assistant, the leader) listens.
    pub next: String,
}

fn resolve(addr: &str) -> Result<SocketAddr> {
    addr.to_socket_addrs()?
        .next()
        .ok_or_else(|| Error::InvalidParams(format!("cannot resolve `{addr}`")))
}

/// Accepts one inbound connection from the predecessor and dials the
/// successor with bounded exponential backoff, both within `window`. The
/// same window then bounds every blocking read.
pub fn connect_ring(endpoints: &RingEndpoints, window: Duration) -> Result<Ring> {
    let listener = TcpListener::bind(resolve(&endpoints.listen)?)?;
    connect_ring_with(listener, &endpoints.next, window)
}

pub fn connect_ring_with(listener: TcpListener, next: &str, window: Duration) -> Result<Ring> {
    let deadline = Instant::now() + window;
    listener.set_nonblocking(true)?;
    let acceptor = thread::spawn(move || -> Result<TcpStream> {
        loop {
            match listener.accept() {
                Ok((s, peer)) => {
                    debug!("accepted predecessor from {peer}");
                    s.set_nonblocking(false)?;
                    return Ok(s);
                }
                Err(e) if e.kind() == ErrorKind::WouldBlock => {
                    if Instant::now() >= deadline {
                        return Err(Error::Timeout("no predecessor connected".into()));
                    }
                    thread::sleep(Duration::from_millis(10));
                }
                Err(e) => return Err(e.into()),
            }
        }
    });

    let target = resolve(next)?;
    let mut backoff = Duration::from_millis(20);
    let next_stream = loop {
        match TcpStream::connect_timeout(&target, backoff.max(Duration::from_millis(200))) {
            Ok(s) => break s,
            Err(e) => {
                if Instant::now() + backoff >= deadline {
                    return Err(Error::Timeout(format!("could not reach {next}: {e}")));
                }
                thread::sleep(backoff);
                backoff = (backoff * 2).min(Duration::from_secs(1));
            }
        }
    };
    let prev_stream = acceptor
        .join()
        .map_err(|_| Error::protocol("accept thread panicked"))??;
    // a silent neighbor for a whole window counts as gone
    let io_timeout = Some(window.max(Duration::from_secs(1)));
    Ok(Ring {
        prev: tcp_channel("prev", prev_stream, io_timeout)?,
        next: tcp_channel("next", next_stream, io_timeout)?,
    })
}
