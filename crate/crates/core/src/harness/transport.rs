//! Frame transports and the loops that drive one session over them.

use std::io::{self, Read, Write};
use std::sync::mpsc::{channel, Receiver, Sender};
use std::time::Instant;

use rand::RngCore;

use crate::protocol::{decode_frame, encode_frame, Device, Message, ServerSession};

/// Largest frame accepted from a peer.
pub const MAX_FRAME: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    ToDevice,
    ToServer,
}

/// Delivered frames in order, as raw bytes.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    pub frames: Vec<(Direction, Vec<u8>)>,
}

impl Transcript {
    pub fn push(&mut self, dir: Direction, frame: &[u8]) {
        self.frames.push((dir, frame.to_vec()));
    }

    pub fn messages(&self) -> impl Iterator<Item = (Direction, Message)> + '_ {
        self.frames.iter().filter_map(|(d, f)| decode_frame(f).ok().map(|m| (*d, m)))
    }

    /// First delivered frame with the given tag.
    pub fn find(&self, tag: u8) -> Option<&[u8]> {
        self.frames.iter().find(|(_, f)| f.get(4) == Some(&tag)).map(|(_, f)| f.as_slice())
    }
}

/// Ordered, reliable delivery of whole frames.
pub trait Transport {
    fn send_frame(&mut self, frame: &[u8]) -> io::Result<()>;
    /// `Ok(None)` when the peer has closed.
    fn recv_frame(&mut self) -> io::Result<Option<Vec<u8>>>;

    fn send(&mut self, msg: &Message) -> io::Result<()> {
        let frame = encode_frame(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.send_frame(&frame)
    }
}

/// Length-prefixed frames over any reliable byte stream.
#[derive(Debug)]
pub struct StreamTransport<S> {
    inner: S,
}

impl<S: Read + Write> StreamTransport<S> {
    pub fn new(inner: S) -> Self {
        Self { inner }
    }

    pub fn into_inner(self) -> S {
        self.inner
    }
}

impl<S: Read + Write> Transport for StreamTransport<S> {
    fn send_frame(&mut self, frame: &[u8]) -> io::Result<()> {
        self.inner.write_all(frame)?;
        self.inner.flush()
    }

    fn recv_frame(&mut self) -> io::Result<Option<Vec<u8>>> {
        let mut len = [0u8; 4];
        match self.inner.read_exact(&mut len) {
            Ok(()) => {}
            Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
            Err(e) => return Err(e),
        }
        let n = u32::from_be_bytes(len) as usize;
        if n == 0 || n > MAX_FRAME {
            return Err(io::Error::new(io::ErrorKind::InvalidData, format!("frame length {n}")));
        }
        let mut frame = vec![0u8; 4 + n];
        frame[..4].copy_from_slice(&len);
        self.inner.read_exact(&mut frame[4..])?;
        Ok(Some(frame))
    }
}

/// In-process channel endpoint.
#[derive(Debug)]
pub struct ChannelTransport {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

/// Two connected channel endpoints.
pub fn channel_pair() -> (ChannelTransport, ChannelTransport) {
    let (a_tx, b_rx) = channel();
    let (b_tx, a_rx) = channel();
    (ChannelTransport { tx: a_tx, rx: a_rx }, ChannelTransport { tx: b_tx, rx: b_rx })
}

impl Transport for ChannelTransport {
    fn send_frame(&mut self, frame: &[u8]) -> io::Result<()> {
        self.tx
            .send(frame.to_vec())
            .map_err(|_| io::Error::new(io::ErrorKind::BrokenPipe, "peer dropped"))
    }

    fn recv_frame(&mut self) -> io::Result<Option<Vec<u8>>> {
        Ok(self.rx.recv().ok())
    }
}

/// Runs one server session to completion. Returns whether the device was accepted.
pub fn serve_session<T: Transport, R: RngCore + ?Sized>(
    session: &mut ServerSession,
    transport: &mut T,
    rng: &mut R,
    mut transcript: Option<&mut Transcript>,
) -> io::Result<bool> {
    let send = |t: &mut T, msg: &Message, tr: &mut Option<&mut Transcript>| -> io::Result<()> {
        let frame = encode_frame(msg).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        if let Some(tr) = tr.as_deref_mut() {
            tr.push(Direction::ToDevice, &frame);
        }
        t.send_frame(&frame)
    };
    let init = session.start();
    send(transport, &init, &mut transcript)?;
    while !session.is_done() {
        let Some(frame) = transport.recv_frame()? else {
            session.abort();
            break;
        };
        if let Some(tr) = transcript.as_deref_mut() {
            tr.push(Direction::ToServer, &frame);
        }
        let replies = match decode_frame(&frame) {
            Ok(msg) => session.handle(&msg, rng),
            Err(_) => session.malformed(),
        };
        for reply in &replies {
            send(transport, reply, &mut transcript)?;
        }
    }
    Ok(session.accepted().unwrap_or(false))
}

/// Serves the device side until the server sends a result or closes.
/// The device clock is wall time since the call started.
pub fn device_session<T: Transport, R: RngCore + ?Sized>(
    device: &mut Device,
    transport: &mut T,
    rng: &mut R,
) -> io::Result<Option<bool>> {
    let start = Instant::now();
    while let Some(frame) = transport.recv_frame()? {
        let msg = match decode_frame(&frame) {
            Ok(m) => m,
            Err(_) => continue,
        };
        if let Message::Result { accept } = msg {
            return Ok(Some(accept));
        }
        let now = start.elapsed().as_millis() as u64;
        if let Some(reply) = device.handle(&msg, now, rng) {
            transport.send(&reply)?;
        }
    }
    Ok(None)
}
