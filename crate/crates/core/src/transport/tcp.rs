//! One TCP connection per role pair. The role with the higher index
//! connects to the lower one; the first frame in each direction is a
//! `Control` hello carrying the session id.

use std::collections::{BTreeMap, HashMap};
use std::io::{ErrorKind, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::mpsc::{channel, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::{Frame, FrameError, MsgType, Role, Transport, TransportError};

/// Handshake body, sent as `{"start": {...}}` in a `Control` frame.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hello {
    pub session_id: u64,
    pub role: Role,
}

#[derive(Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum HelloEnvelope {
    Start(Hello),
}

impl Hello {
    fn frame(&self) -> Frame {
        let body = serde_json::to_vec(&HelloEnvelope::Start(self.clone())).expect("hello serializes");
        Frame::new(self.session_id, 0, MsgType::Control, body)
    }

    fn parse(frame: &Frame) -> Result<Hello, TransportError> {
        if frame.msg_type != MsgType::Control {
            return Err(TransportError::HandshakeRejected(format!("{:?} before hello", frame.msg_type)));
        }
        match serde_json::from_slice::<HelloEnvelope>(&frame.payload) {
            Ok(HelloEnvelope::Start(h)) => Ok(h),
            Err(e) => Err(TransportError::HandshakeRejected(e.to_string())),
        }
    }
}

#[derive(Clone, Debug)]
pub struct TcpOptions {
    pub session_id: u64,
    /// `host:port` for every participating role.
    pub endpoints: BTreeMap<Role, String>,
    pub handshake_timeout: Duration,
    /// Time allowed for the whole mesh to come up.
    pub connect_timeout: Duration,
    pub recv_timeout: Duration,
}

impl TcpOptions {
    pub fn new(session_id: u64, endpoints: BTreeMap<Role, String>) -> Self {
        TcpOptions {
            session_id,
            endpoints,
            handshake_timeout: Duration::from_secs(10),
            connect_timeout: Duration::from_secs(30),
            recv_timeout: Duration::from_secs(600),
        }
    }
}

struct Peer {
    reader: TcpStream,
    writer: Option<Sender<Vec<u8>>>,
    thread: Option<JoinHandle<()>>,
}

pub struct TcpTransport {
    role: Role,
    peers: HashMap<Role, Peer>,
    write_error: Arc<Mutex<Option<String>>>,
}

fn io_err(e: std::io::Error) -> TransportError {
    TransportError::Io(e.to_string())
}

fn read_hello(stream: &mut TcpStream, timeout: Duration) -> Result<Hello, TransportError> {
    stream.set_read_timeout(Some(timeout)).map_err(io_err)?;
    match Frame::read_from(stream) {
        Ok(f) => Hello::parse(&f),
        Err(FrameError::Io(_)) => Err(TransportError::HandshakeTimeout),
        Err(FrameError::Truncated) => Err(TransportError::HandshakeRejected("peer closed during handshake".into())),
        Err(e) => Err(e.into()),
    }
}

impl TcpTransport {
    /// Binds this role's endpoint (or `SPNN_BIND_ADDR` if set), dials every
    /// lower-indexed role and accepts every higher-indexed one.
    pub fn establish(role: Role, opts: &TcpOptions) -> Result<Self, TransportError> {
        let deadline = Instant::now() + opts.connect_timeout;
        let me = Hello {
            session_id: opts.session_id,
            role,
        };
        let higher: Vec<Role> = opts.endpoints.keys().copied().filter(|r| r.index() > role.index()).collect();
        let listener = if higher.is_empty() {
            None
        } else {
            let addr = match std::env::var("SPNN_BIND_ADDR") {
                Ok(a) if !a.is_empty() => a,
                _ => opts.endpoints.get(&role).cloned().ok_or(TransportError::NoRoute(role))?,
            };
            let l = TcpListener::bind(&addr).map_err(|e| TransportError::ConnectRefused(format!("bind {addr}: {e}")))?;
            l.set_nonblocking(true).map_err(io_err)?;
            Some(l)
        };

        let mut streams = HashMap::new();
        for (&peer, addr) in opts.endpoints.iter().filter(|(r, _)| r.index() < role.index()) {
            let mut stream = loop {
                match TcpStream::connect(addr) {
                    Ok(s) => break s,
                    Err(_) if Instant::now() < deadline => std::thread::sleep(Duration::from_millis(20)),
                    Err(e) => return Err(TransportError::ConnectRefused(format!("{peer} at {addr}: {e}"))),
                }
            };
            stream.set_nodelay(true).map_err(io_err)?;
            stream.write_all(&me.frame().encode()?).map_err(io_err)?;
            let reply = read_hello(&mut stream, opts.handshake_timeout)?;
            if reply.session_id != opts.session_id || reply.role != peer {
                return Err(TransportError::HandshakeRejected(format!(
                    "expected {peer} in session {}, got {} in session {}",
                    opts.session_id, reply.role, reply.session_id
                )));
            }
            streams.insert(peer, stream);
        }

        if let Some(listener) = listener {
            while streams.len() < opts.endpoints.len() - 1 {
                match listener.accept() {
                    Ok((mut stream, _)) => {
                        stream.set_nonblocking(false).map_err(io_err)?;
                        stream.set_nodelay(true).map_err(io_err)?;
                        let hello = read_hello(&mut stream, opts.handshake_timeout)?;
                        if hello.session_id != opts.session_id {
                            return Err(TransportError::HandshakeRejected(format!(
                                "session {} does not match {}",
                                hello.session_id, opts.session_id
                            )));
                        }
                        if !higher.contains(&hello.role) || streams.contains_key(&hello.role) {
                            return Err(TransportError::HandshakeRejected(format!("unexpected peer {}", hello.role)));
                        }
                        stream.write_all(&me.frame().encode()?).map_err(io_err)?;
                        streams.insert(hello.role, stream);
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => {
                        if Instant::now() >= deadline {
                            return Err(TransportError::HandshakeTimeout);
                        }
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(e) => return Err(io_err(e)),
                }
            }
        }

        let write_error = Arc::new(Mutex::new(None));
        let mut peers = HashMap::new();
        for (peer, stream) in streams {
            stream.set_read_timeout(Some(opts.recv_timeout)).map_err(io_err)?;
            let mut w = stream.try_clone().map_err(io_err)?;
            let (tx, rx) = channel::<Vec<u8>>();
            let errs = Arc::clone(&write_error);
            // each frame is written whole by a single writer thread
            let thread = std::thread::spawn(move || {
                for buf in rx {
                    if let Err(e) = w.write_all(&buf) {
                        *errs.lock().unwrap() = Some(e.to_string());
                        return;
                    }
                }
                let _ = w.flush();
                let _ = w.shutdown(std::net::Shutdown::Write);
            });
            peers.insert(
                peer,
                Peer {
                    reader: stream,
                    writer: Some(tx),
                    thread: Some(thread),
                },
            );
        }
        Ok(TcpTransport {
            role,
            peers,
            write_error,
        })
    }
}

impl Transport for TcpTransport {
    fn role(&self) -> Role {
        self.role
    }

    fn send(&mut self, to: Role, frame: &Frame) -> Result<(), TransportError> {
        if let Some(e) = self.write_error.lock().unwrap().clone() {
            return Err(TransportError::Io(e));
        }
        let peer = self.peers.get(&to).ok_or(TransportError::NoRoute(to))?;
        let tx = peer.writer.as_ref().ok_or(TransportError::PeerClosed(to))?;
        tx.send(frame.encode()?).map_err(|_| TransportError::PeerClosed(to))
    }

    fn recv(&mut self, from: Role) -> Result<Frame, TransportError> {
        let peer = self.peers.get_mut(&from).ok_or(TransportError::NoRoute(from))?;
        match Frame::read_from(&mut peer.reader) {
            Ok(f) => Ok(f),
            Err(FrameError::Truncated) => Err(TransportError::PeerClosed(from)),
            Err(FrameError::Io(msg)) if msg.contains("timed out") || msg.contains("would block") => {
                Err(TransportError::Timeout(from))
            }
            Err(e) => Err(e.into()),
        }
    }
}

impl Drop for TcpTransport {
    fn drop(&mut self) {
        for peer in self.peers.values_mut() {
            peer.writer.take();
        }
        for peer in self.peers.values_mut() {
            if let Some(t) = peer.thread.take() {
                let _ = t.join();
            }
        }
    }
}
