//! Byte transports and the sequenced channel each party talks through.

use std::io::{ErrorKind, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::str::FromStr;
use std::sync::mpsc::{channel, Receiver, Sender};

use serde::Serialize;

use crate::error::{ProtocolError, Result};
use crate::message::{Kind, Message, Party, FRAME_HEADER};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportKind {
    /// In-memory queue.
    #[default]
    Inproc,
    /// Length-prefixed frames over a loopback TCP connection.
    Socket,
}

impl FromStr for TransportKind {
    type Err = ProtocolError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "inproc" => Ok(TransportKind::Inproc),
            "socket" => Ok(TransportKind::Socket),
            other => Err(ProtocolError::InvalidArgument(format!("unknown transport {other:?}"))),
        }
    }
}

/// Moves whole frames. `recv_frame` returns `None` when the peer closed
/// the link cleanly between frames.
pub trait Link: Send {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()>;
    fn recv_frame(&mut self) -> Result<Option<Vec<u8>>>;
}

struct InprocLink {
    tx: Sender<Vec<u8>>,
    rx: Receiver<Vec<u8>>,
}

impl Link for InprocLink {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.tx.send(frame.to_vec()).map_err(|_| ProtocolError::Closed)
    }

    fn recv_frame(&mut self) -> Result<Option<Vec<u8>>> {
        Ok(self.rx.recv().ok())
    }
}

struct SocketLink {
    stream: TcpStream,
}

impl Link for SocketLink {
    fn send_frame(&mut self, frame: &[u8]) -> Result<()> {
        self.stream.write_all(frame).map_err(|e| match e.kind() {
            ErrorKind::BrokenPipe | ErrorKind::ConnectionReset => ProtocolError::Closed,
            _ => e.into(),
        })
    }

    fn recv_frame(&mut self) -> Result<Option<Vec<u8>>> {
        let mut header = [0u8; FRAME_HEADER];
        let mut got = 0;
        while got < FRAME_HEADER {
            match self.stream.read(&mut header[got..]) {
                Ok(0) if got == 0 => return Ok(None),
                Ok(0) => return Err(ProtocolError::Frame("connection closed inside a header".into())),
                Ok(n) => got += n,
                Err(e) if e.kind() == ErrorKind::Interrupted => {}
                Err(e) if e.kind() == ErrorKind::ConnectionReset && got == 0 => return Ok(None),
                Err(e) => return Err(e.into()),
            }
        }
        let (_, _, len) = Message::parse_header(&header)?;
        let mut frame = vec![0u8; FRAME_HEADER + len];
        frame[..FRAME_HEADER].copy_from_slice(&header);
        self.stream.read_exact(&mut frame[FRAME_HEADER..])?;
        Ok(Some(frame))
    }
}

/// Connected `(A end, B end)`.
pub fn link_pair(kind: TransportKind) -> Result<(Box<dyn Link>, Box<dyn Link>)> {
    match kind {
        TransportKind::Inproc => {
            let (tx_ab, rx_ab) = channel();
            let (tx_ba, rx_ba) = channel();
            Ok((
                Box::new(InprocLink { tx: tx_ab, rx: rx_ba }),
                Box::new(InprocLink { tx: tx_ba, rx: rx_ab }),
            ))
        }
        TransportKind::Socket => {
            let listener = TcpListener::bind("127.0.0.1:0")?;
            let b = TcpStream::connect(listener.local_addr()?)?;
            let (a, _) = listener.accept()?;
            for s in [&a, &b] {
                s.set_nodelay(true)?;
            }
            Ok((Box::new(SocketLink { stream: a }), Box::new(SocketLink { stream: b })))
        }
    }
}

/// One party's view of the conversation. Sequence numbers follow a
/// Lamport clock over both directions, so in a causally ordered exchange
/// they increase strictly across the whole transcript.
pub struct Channel {
    link: Box<dyn Link>,
    me: Party,
    clock: u64,
    log: Option<Vec<Message>>,
    /// Frame bytes moved in either direction, counted at the link.
    link_bytes: u64,
}

impl Channel {
    pub fn new(link: Box<dyn Link>, me: Party) -> Self {
        Self {
            link,
            me,
            clock: 0,
            log: None,
            link_bytes: 0,
        }
    }

    /// Keeps a copy of every message sent or received.
    pub fn recording(mut self) -> Self {
        self.log = Some(Vec::new());
        self
    }

    pub fn send(&mut self, kind: Kind, payload: Vec<u8>) -> Result<()> {
        if kind.sender() != self.me {
            return Err(ProtocolError::Unexpected(format!(
                "party {:?} may not send {kind}",
                self.me
            )));
        }
        self.clock += 1;
        let msg = Message {
            seq: self.clock,
            kind,
            payload,
        };
        let frame = msg.to_frame();
        self.link.send_frame(&frame)?;
        self.link_bytes += frame.len() as u64;
        if let Some(log) = &mut self.log {
            log.push(msg);
        }
        Ok(())
    }

    /// Next message, or `None` if the peer closed the channel.
    pub fn recv_any(&mut self) -> Result<Option<Message>> {
        let Some(frame) = self.link.recv_frame()? else {
            return Ok(None);
        };
        self.link_bytes += frame.len() as u64;
        let msg = Message::from_frame(&frame)?;
        if msg.sender() != self.me.peer() {
            return Err(ProtocolError::Unexpected(format!(
                "{} arriving at party {:?}",
                msg.kind, self.me
            )));
        }
        if msg.seq <= self.clock {
            return Err(ProtocolError::Frame(format!(
                "sequence {} after {}",
                msg.seq, self.clock
            )));
        }
        self.clock = msg.seq;
        if let Some(log) = &mut self.log {
            log.push(msg.clone());
        }
        Ok(Some(msg))
    }

    /// Next message, which must be of `kind`.
    pub fn recv(&mut self, kind: Kind) -> Result<Message> {
        match self.recv_any()? {
            Some(m) if m.kind == kind => Ok(m),
            Some(m) => Err(ProtocolError::Unexpected(format!("expected {kind}, got {}", m.kind))),
            None => Err(ProtocolError::Closed),
        }
    }

    pub fn link_bytes(&self) -> u64 {
        self.link_bytes
    }

    pub fn take_log(&mut self) -> Vec<Message> {
        self.log.take().unwrap_or_default()
    }
}
