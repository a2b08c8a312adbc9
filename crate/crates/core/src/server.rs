//! The service endpoint: a TCP server whose sessions attest, publish the
//! address map and then bridge requests to one shared enclave.

use std::io::{self, BufReader, BufWriter, Write};
use std::net::{SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::{self, JoinHandle};

use thiserror::Error;

use crate::attestation::{enclave_ra_init, Attester, ClientHello, SigningIdentity};
use crate::channel::{read_frame, write_frame, ChannelError, Frame, MsgType, SecureChannel};
use crate::enclave::{Enclave, EnclaveConfig, EnclaveError, SignatureDescriptor};
use crate::linker::build_address_map;
use crate::protocol::{codes, ProtocolError, Request, Response};

#[derive(Debug, Error)]
pub enum ServerError {
    #[error("cannot bind {addr}: {source}")]
    BindFailure { addr: String, source: io::Error },
    #[error(transparent)]
    Enclave(#[from] EnclaveError),
    #[error("i/o error: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    AwaitHello,
    Serving,
    Closed,
}

/// Per-connection protocol state. Transport-free so every transition can be
/// driven directly from tests.
pub struct SessionMachine {
    enclave: Arc<Enclave>,
    attester: Arc<Attester>,
    phase: Phase,
    channel: Option<SecureChannel>,
    peer: Option<SocketAddr>,
}

impl SessionMachine {
    pub fn new(enclave: Arc<Enclave>, attester: Arc<Attester>, peer: Option<SocketAddr>) -> Self {
        Self {
            enclave,
            attester,
            phase: Phase::AwaitHello,
            channel: None,
            peer,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// Send and receive counters of the established channel.
    pub fn sequence_counters(&self) -> Option<(u64, u64)> {
        self.channel.as_ref().map(|c| (c.send_seq(), c.recv_seq()))
    }

    /// Consumes one inbound frame and returns the frames to send back. After
    /// the call the phase may be [`Phase::Closed`], in which case the caller
    /// drops the connection once the returned frames are written.
    pub fn handle_frame(&mut self, frame: &Frame) -> Vec<Frame> {
        match self.phase {
            Phase::Closed => Vec::new(),
            Phase::AwaitHello => self.handle_hello(frame),
            Phase::Serving => self.handle_serving(frame),
        }
    }

    fn close_plain(&mut self, code: u16, message: String) -> Vec<Frame> {
        log::info!("session {:?}: closing before attestation: {message}", self.peer);
        self.phase = Phase::Closed;
        let err = Response::Error { code, message };
        vec![Frame::plain(MsgType::Error, 0, err.encode())]
    }

    fn handle_hello(&mut self, frame: &Frame) -> Vec<Frame> {
        if frame.msg_type != MsgType::Hello {
            return self.close_plain(
                codes::NOT_ATTESTED,
                format!("{:?} received before attestation", frame.msg_type),
            );
        }
        if frame.seq != 0 {
            return self.close_plain(codes::UNEXPECTED_MESSAGE, format!("HELLO with seq {}", frame.seq));
        }
        let attested = ClientHello::decode(&frame.payload)
            .and_then(|hello| enclave_ra_init(&self.attester, &hello.nonce, &hello.kx_public));
        let (report, keys) = match attested {
            Ok(v) => v,
            Err(e) => return self.close_plain(codes::ATTESTATION_FAILED, e.to_string()),
        };
        let mut channel = SecureChannel::after_handshake(keys);
        let map = Response::AddrMap(build_address_map(&self.enclave));
        let mut out = vec![Frame::plain(MsgType::RaReport, 0, report.encode())];
        match channel.seal_next(map.msg_type(), &map.encode()) {
            Ok(f) => out.push(f),
            Err(e) => {
                log::error!("session {:?}: cannot seal address map: {e}", self.peer);
                self.phase = Phase::Closed;
                return out;
            }
        }
        log::info!("session {:?}: attested", self.peer);
        self.channel = Some(channel);
        self.phase = Phase::Serving;
        out
    }

    fn handle_serving(&mut self, frame: &Frame) -> Vec<Frame> {
        let channel = self.channel.as_mut().expect("serving implies a channel");
        let (msg_type, plaintext) = match channel.open_next(frame) {
            Ok(v) => v,
            Err(e) => {
                // nothing from this peer can be trusted any more, including
                // its view of the sequence numbers, so no reply is sent
                log::warn!("session {:?}: dropping after channel error: {e}", self.peer);
                self.phase = Phase::Closed;
                return Vec::new();
            }
        };
        let (responses, keep_open) = match Request::decode(msg_type, &plaintext) {
            Ok(req) => (self.dispatch(req), true),
            Err(e @ ProtocolError::Unexpected(_)) => (
                vec![Response::Error {
                    code: codes::UNEXPECTED_MESSAGE,
                    message: e.to_string(),
                }],
                false,
            ),
            Err(e) => (
                vec![Response::Error {
                    code: codes::MALFORMED_REQUEST,
                    message: e.to_string(),
                }],
                false,
            ),
        };
        let channel = self.channel.as_mut().expect("serving implies a channel");
        let mut out = Vec::with_capacity(responses.len());
        for resp in responses {
            match channel.seal_next(resp.msg_type(), &resp.encode()) {
                Ok(f) => out.push(f),
                Err(e) => {
                    log::error!("session {:?}: cannot seal response: {e}", self.peer);
                    self.phase = Phase::Closed;
                    return out;
                }
            }
        }
        if !keep_open {
            self.phase = Phase::Closed;
        }
        out
    }

    fn dispatch(&self, req: Request) -> Vec<Response> {
        match self.execute(req) {
            Ok(r) => r,
            Err(e) => {
                log::debug!("session {:?}: enclave error: {e}", self.peer);
                vec![Response::Error {
                    code: e.code(),
                    message: e.to_string(),
                }]
            }
        }
    }

    fn execute(&self, req: Request) -> Result<Vec<Response>, EnclaveError> {
        let e = &self.enclave;
        Ok(match req {
            Request::Load { name, descriptor, code } => {
                let descriptor: SignatureDescriptor = descriptor.parse()?;
                let id = e.register_function(&code, &name, descriptor)?;
                log::info!("session {:?}: loaded {name} as {id} ({} bytes)", self.peer, code.len());
                vec![Response::LoadAck { id }, Response::AddrMap(build_address_map(e))]
            }
            Request::Exec { id, args } => vec![Response::ExecResult(e.execute_function(id, &args)?)],
            Request::Unload { id } => {
                e.unregister_function(id)?;
                vec![Response::Unloaded { id }]
            }
            Request::Clear => vec![Response::Cleared {
                count: e.clear_functions() as u64,
            }],
            Request::List => vec![Response::AddrMap(build_address_map(e))],
        })
    }
}

/// Drives one session over a connected stream until either side closes.
pub fn run_session(stream: TcpStream, enclave: Arc<Enclave>, attester: Arc<Attester>) -> Result<(), ChannelError> {
    let peer = stream.peer_addr().ok();
    stream.set_nodelay(true)?;
    let mut reader = BufReader::new(stream.try_clone()?);
    let mut writer = BufWriter::new(stream);
    let mut machine = SessionMachine::new(enclave, attester, peer);
    while machine.phase() != Phase::Closed {
        let frame = match read_frame(&mut reader) {
            Ok(f) => f,
            Err(ChannelError::Io(e)) if e.kind() == io::ErrorKind::UnexpectedEof => break,
            Err(e @ (ChannelError::MalformedFrame(_) | ChannelError::UnknownType(_))) => {
                log::warn!("session {peer:?}: undecodable frame: {e}");
                break;
            }
            Err(e) => return Err(e),
        };
        for out in machine.handle_frame(&frame) {
            write_frame(&mut writer, &out)?;
        }
    }
    log::debug!("session {peer:?}: closed");
    Ok(())
}

pub struct Server {
    listener: TcpListener,
    enclave: Arc<Enclave>,
    attester: Arc<Attester>,
    shutdown: Arc<AtomicBool>,
}

impl Server {
    pub fn bind<A: ToSocketAddrs + std::fmt::Display>(
        addr: A,
        enclave: Arc<Enclave>,
        identity: SigningIdentity,
    ) -> Result<Self, ServerError> {
        let listener = TcpListener::bind(&addr).map_err(|source| ServerError::BindFailure {
            addr: addr.to_string(),
            source,
        })?;
        let attester = Arc::new(Attester::new(identity, *enclave.measurement()));
        Ok(Self {
            listener,
            enclave,
            attester,
            shutdown: Arc::new(AtomicBool::new(false)),
        })
    }

    pub fn local_addr(&self) -> io::Result<SocketAddr> {
        self.listener.local_addr()
    }

    pub fn enclave(&self) -> &Arc<Enclave> {
        &self.enclave
    }

    /// Accepts connections until shut down, one thread per session.
    pub fn run(self) -> Result<(), ServerError> {
        for conn in self.listener.incoming() {
            if self.shutdown.load(Ordering::SeqCst) {
                break;
            }
            let stream = match conn {
                Ok(s) => s,
                Err(e) => {
                    log::warn!("accept failed: {e}");
                    continue;
                }
            };
            let enclave = Arc::clone(&self.enclave);
            let attester = Arc::clone(&self.attester);
            thread::spawn(move || {
                if let Err(e) = run_session(stream, enclave, attester) {
                    log::warn!("session ended with error: {e}");
                }
            });
        }
        Ok(())
    }

    /// Runs the accept loop on a background thread.
    pub fn spawn(self) -> Result<ServerHandle, ServerError> {
        let addr = self.local_addr()?;
        let shutdown = Arc::clone(&self.shutdown);
        let enclave = Arc::clone(&self.enclave);
        let join = thread::spawn(move || self.run());
        Ok(ServerHandle {
            addr,
            shutdown,
            enclave,
            join: Some(join),
        })
    }
}

/// A server running in the background; stops accepting when dropped.
pub struct ServerHandle {
    addr: SocketAddr,
    shutdown: Arc<AtomicBool>,
    enclave: Arc<Enclave>,
    join: Option<JoinHandle<Result<(), ServerError>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn enclave(&self) -> &Arc<Enclave> {
        &self.enclave
    }

    pub fn shutdown(mut self) {
        self.stop();
    }

    fn stop(&mut self) {
        if let Some(join) = self.join.take() {
            self.shutdown.store(true, Ordering::SeqCst);
            // wake the blocking accept
            if let Ok(mut s) = TcpStream::connect(self.addr) {
                let _ = s.flush();
            }
            let _ = join.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop();
    }
}

/// Creates the enclave and serves on `bind` until the process exits.
pub fn serve(bind: &str, config: EnclaveConfig, identity: SigningIdentity) -> Result<(), ServerError> {
    let enclave = Arc::new(Enclave::create(config)?);
    let server = Server::bind(bind, enclave, identity)?;
    log::info!(
        "listening on {}, measurement {}",
        server.local_addr()?,
        server.enclave.measurement()
    );
    server.run()
}
