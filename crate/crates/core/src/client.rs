//! Client side: attested sessions and the compile → extract → load pipeline.

use std::fmt;
use std::io::{Read, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::process::Command;

use thiserror::Error;

use crate::attestation::{AttestationError, AttestationReport, ClientHandshake, Measurement, VerifyKey};
use crate::channel::{read_frame, write_frame, ChannelError, Frame, MsgType, SecureChannel};
use crate::enclave::{ArgValue, ExecResult, FunctionId, SignatureDescriptor};
use crate::extractor::{extract_function, parse_object, ExtractedFunction};
use crate::linker::{rewrite_source, self_containment_check, AddressMap};
use crate::protocol::{codes, ProtocolError, Request, Response};

/// Flags every payload is compiled with: position-independent, no stack
/// canary, no CET landing pads, no unwind tables, unoptimized for stable bytes.
pub const CC_FLAGS: &[&str] = &[
    "-c",
    "-fPIC",
    "-fno-stack-protector",
    "-O0",
    "-fcf-protection=none",
    "-fno-asynchronous-unwind-tables",
    "-fno-semantic-interposition",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Rewrite,
    Compile,
    Parse,
    Extract,
    SelfContainment,
    Load,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stage::Rewrite => "rewrite",
            Stage::Compile => "compile",
            Stage::Parse => "parse",
            Stage::Extract => "extract",
            Stage::SelfContainment => "self_containment",
            Stage::Load => "load",
        })
    }
}

#[derive(Debug, Error)]
pub enum ClientError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("attestation failed: {0}")]
    Attestation(#[from] AttestationError),
    #[error("server error {code:#06x}: {message}")]
    Server { code: u16, message: String },
    #[error("{stage} stage failed: {message}")]
    Pipeline { stage: Stage, message: String },
}

impl ClientError {
    pub const EXIT_USAGE: i32 = 1;
    pub const EXIT_TRANSPORT: i32 = 2;
    pub const EXIT_ATTESTATION: i32 = 3;
    pub const EXIT_SERVER: i32 = 4;
    pub const EXIT_PIPELINE: i32 = 5;

    pub fn exit_code(&self) -> i32 {
        match self {
            ClientError::Usage(_) => Self::EXIT_USAGE,
            ClientError::Transport(_) => Self::EXIT_TRANSPORT,
            ClientError::Attestation(_) => Self::EXIT_ATTESTATION,
            ClientError::Server { .. } => Self::EXIT_SERVER,
            ClientError::Pipeline { .. } => Self::EXIT_PIPELINE,
        }
    }

    /// The server's error code, if this is a server-reported error.
    pub fn server_code(&self) -> Option<u16> {
        match self {
            ClientError::Server { code, .. } => Some(*code),
            _ => None,
        }
    }

    fn pipeline(stage: Stage, e: impl fmt::Display) -> Self {
        ClientError::Pipeline {
            stage,
            message: e.to_string(),
        }
    }
}

impl From<ChannelError> for ClientError {
    fn from(e: ChannelError) -> Self {
        ClientError::Transport(e.to_string())
    }
}

impl From<ProtocolError> for ClientError {
    fn from(e: ProtocolError) -> Self {
        ClientError::Transport(e.to_string())
    }
}

impl From<std::io::Error> for ClientError {
    fn from(e: std::io::Error) -> Self {
        ClientError::Transport(e.to_string())
    }
}

/// An attested session over any byte stream.
pub struct Session<S: Read + Write> {
    stream: S,
    channel: SecureChannel,
    map: AddressMap,
    measurement: Measurement,
    enclave_kx_public: Vec<u8>,
}

impl Session<TcpStream> {
    pub fn connect(server: &str, pinned: &VerifyKey, expected: &Measurement) -> Result<Self, ClientError> {
        let stream = TcpStream::connect(server)
            .map_err(|e| ClientError::Transport(format!("cannot connect to {server}: {e}")))?;
        stream.set_nodelay(true)?;
        Self::attest(stream, pinned, expected)
    }
}

impl<S: Read + Write> Session<S> {
    /// Runs the handshake and receives the initial address map.
    pub fn attest(mut stream: S, pinned: &VerifyKey, expected: &Measurement) -> Result<Self, ClientError> {
        let hs = ClientHandshake::new();
        write_frame(&mut stream, &Frame::plain(MsgType::Hello, 0, hs.hello().encode()))?;
        let frame = read_frame(&mut stream)?;
        match frame.msg_type {
            MsgType::RaReport if frame.seq == 0 => {}
            MsgType::Error => return Err(server_error(Response::decode(MsgType::Error, &frame.payload)?)),
            other => {
                return Err(ClientError::Transport(format!(
                    "expected RA_REPORT, got {other:?} seq {}",
                    frame.seq
                )))
            }
        }
        let report = AttestationReport::decode(&frame.payload)?;
        let keys = hs.finish(&report, pinned, expected)?;
        let mut channel = SecureChannel::after_handshake(keys);
        let (t, payload) = channel.recv(&mut stream)?;
        let map = match Response::decode(t, &payload)? {
            Response::AddrMap(m) => m,
            other => return Err(unexpected("ADDR_MAP", &other)),
        };
        log::debug!(
            "attested; measurement {}, {} map entries",
            report.measurement,
            map.len()
        );
        Ok(Self {
            stream,
            channel,
            map,
            measurement: report.measurement,
            enclave_kx_public: report.enclave_kx_public,
        })
    }

    /// The most recent address map received from the server.
    pub fn address_map(&self) -> &AddressMap {
        &self.map
    }

    pub fn measurement(&self) -> &Measurement {
        &self.measurement
    }

    /// The enclave's ephemeral key-agreement public key for this session.
    pub fn enclave_kx_public(&self) -> &[u8] {
        &self.enclave_kx_public
    }

    fn send(&mut self, req: &Request) -> Result<(), ClientError> {
        self.channel.send(&mut self.stream, req.msg_type(), &req.encode())?;
        Ok(())
    }

    fn recv(&mut self) -> Result<Response, ClientError> {
        let (t, payload) = self.channel.recv(&mut self.stream)?;
        match Response::decode(t, &payload)? {
            e @ Response::Error { .. } => Err(server_error(e)),
            r => Ok(r),
        }
    }

    pub fn load(
        &mut self,
        name: &str,
        descriptor: &SignatureDescriptor,
        code: &[u8],
    ) -> Result<FunctionId, ClientError> {
        self.send(&Request::Load {
            name: name.to_string(),
            descriptor: descriptor.to_string(),
            code: code.to_vec(),
        })?;
        let id = match self.recv()? {
            Response::LoadAck { id } => id,
            other => return Err(unexpected("LOAD_ACK", &other)),
        };
        match self.recv()? {
            Response::AddrMap(m) => self.map = m,
            other => return Err(unexpected("ADDR_MAP", &other)),
        }
        Ok(id)
    }

    pub fn exec(&mut self, id: FunctionId, args: &[ArgValue]) -> Result<ExecResult, ClientError> {
        self.send(&Request::Exec {
            id,
            args: args.to_vec(),
        })?;
        match self.recv()? {
            Response::ExecResult(r) => Ok(r),
            other => Err(unexpected("EXEC_RESULT", &other)),
        }
    }

    pub fn unload(&mut self, id: FunctionId) -> Result<(), ClientError> {
        self.send(&Request::Unload { id })?;
        match self.recv()? {
            Response::Unloaded { id: got } if got == id => Ok(()),
            other => Err(unexpected("UNLOAD_FN", &other)),
        }
    }

    pub fn clear(&mut self) -> Result<u64, ClientError> {
        self.send(&Request::Clear)?;
        match self.recv()? {
            Response::Cleared { count } => Ok(count),
            other => Err(unexpected("CLEAR_FNS", &other)),
        }
    }

    /// Fetches a fresh address map and caches it.
    pub fn list(&mut self) -> Result<&AddressMap, ClientError> {
        self.send(&Request::List)?;
        match self.recv()? {
            Response::AddrMap(m) => {
                self.map = m;
                Ok(&self.map)
            }
            other => Err(unexpected("ADDR_MAP", &other)),
        }
    }

    pub fn into_inner(self) -> S {
        self.stream
    }
}

fn server_error(resp: Response) -> ClientError {
    match resp {
        Response::Error { code, message } if code == codes::ATTESTATION_FAILED => {
            ClientError::Attestation(AttestationError::Malformed(format!("server rejected hello: {message}")))
        }
        Response::Error { code, message } => ClientError::Server { code, message },
        other => unexpected("ERROR", &other),
    }
}

fn unexpected(wanted: &str, got: &Response) -> ClientError {
    ClientError::Transport(format!("expected {wanted}, got {:?}", got.msg_type()))
}

/// The external C compiler used to build payloads.
#[derive(Debug, Clone)]
pub struct Toolchain {
    /// Compiler command; may include leading words such as `ccache gcc`.
    pub cc: String,
    /// Where intermediate files go; the system temp directory if unset.
    pub workdir: Option<PathBuf>,
}

impl Default for Toolchain {
    fn default() -> Self {
        Self::new("cc")
    }
}

impl Toolchain {
    pub fn new(cc: &str) -> Self {
        Self {
            cc: cc.to_string(),
            workdir: None,
        }
    }

    /// Compiles one translation unit and returns the object file bytes.
    pub fn compile(&self, source: &[u8]) -> Result<Vec<u8>, ClientError> {
        let err = |e: &dyn fmt::Display| ClientError::pipeline(Stage::Compile, e);
        let mut words = self.cc.split_whitespace();
        let program = words.next().ok_or_else(|| err(&"empty compiler command"))?;
        let dir = match &self.workdir {
            Some(w) => tempfile::tempdir_in(w),
            None => tempfile::tempdir(),
        }
        .map_err(|e| err(&e))?;
        let src = dir.path().join("payload.c");
        let obj = dir.path().join("payload.o");
        std::fs::write(&src, source).map_err(|e| err(&e))?;
        let output = Command::new(program)
            .args(words)
            .args(CC_FLAGS)
            .arg(&src)
            .arg("-o")
            .arg(&obj)
            .output()
            .map_err(|e| err(&format!("cannot run {}: {e}", self.cc)))?;
        if !output.status.success() {
            return Err(err(&format!(
                "{} exited with {}: {}",
                self.cc,
                output.status,
                String::from_utf8_lossy(&output.stderr).trim()
            )));
        }
        std::fs::read(&obj).map_err(|e| err(&e))
    }
}

/// Rewrites `source` against `map`, compiles it and extracts `fn_name`,
/// failing unless the result is self-contained.
pub fn compile_and_extract(
    toolchain: &Toolchain,
    source: &[u8],
    fn_name: &str,
    map: &AddressMap,
) -> Result<ExtractedFunction, ClientError> {
    let rewritten = rewrite_source(source, map).map_err(|e| ClientError::pipeline(Stage::Rewrite, e))?;
    let object = toolchain.compile(&rewritten)?;
    let image = parse_object(&object).map_err(|e| ClientError::pipeline(Stage::Parse, e))?;
    let extracted = extract_function(&image, fn_name).map_err(|e| ClientError::pipeline(Stage::Extract, e))?;
    self_containment_check(&extracted).map_err(|e| ClientError::pipeline(Stage::SelfContainment, e))?;
    Ok(extracted)
}

/// The full pipeline for one C source file, ending with a LOAD_FN.
pub fn provision_function<S: Read + Write>(
    session: &mut Session<S>,
    toolchain: &Toolchain,
    source_path: &Path,
    fn_name: &str,
    descriptor: &SignatureDescriptor,
) -> Result<(FunctionId, ExtractedFunction), ClientError> {
    let source = std::fs::read(source_path)
        .map_err(|e| ClientError::Usage(format!("cannot read {}: {e}", source_path.display())))?;
    let extracted = compile_and_extract(toolchain, &source, fn_name, session.address_map())?;
    let id = session
        .load(fn_name, descriptor, &extracted.bytes)
        .map_err(|e| match e {
            ClientError::Server { code, message } => {
                ClientError::pipeline(Stage::Load, format!("{code:#06x} {message}"))
            }
            other => other,
        })?;
    Ok((id, extracted))
}

/// Parses one command-line argument: an integer, `s:text` or a quoted string
/// for `s`, and `hex:0011ff` for a buffer.
pub fn parse_cli_arg(raw: &str) -> Result<ArgValue, ClientError> {
    if let Ok(v) = raw.parse::<i64>() {
        return Ok(ArgValue::Int(v));
    }
    if let Some(h) = raw.strip_prefix("hex:") {
        return hex::decode(h)
            .map(ArgValue::Buf)
            .map_err(|e| ClientError::Usage(format!("bad hex argument {raw:?}: {e}")));
    }
    if let Some(s) = raw.strip_prefix("s:") {
        return Ok(ArgValue::str(s));
    }
    if raw.len() >= 2 && raw.starts_with('"') && raw.ends_with('"') {
        return Ok(ArgValue::str(&raw[1..raw.len() - 1]));
    }
    Ok(ArgValue::str(raw))
}

/// Client-side settings shared by the CLI verbs.
#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub server: String,
    pub pinned_key: VerifyKey,
    pub expected_measurement: Measurement,
    pub toolchain: Toolchain,
}

impl ClientConfig {
    pub fn connect(&self) -> Result<Session<TcpStream>, ClientError> {
        Session::connect(&self.server, &self.pinned_key, &self.expected_measurement)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cli_args() {
        assert_eq!(parse_cli_arg("42").unwrap(), ArgValue::Int(42));
        assert_eq!(parse_cli_arg("-3").unwrap(), ArgValue::Int(-3));
        assert_eq!(parse_cli_arg("hex:00ff").unwrap(), ArgValue::Buf(vec![0, 0xff]));
        assert_eq!(parse_cli_arg("s:12").unwrap(), ArgValue::str("12"));
        assert_eq!(parse_cli_arg("\"abc\"").unwrap(), ArgValue::str("abc"));
        assert_eq!(parse_cli_arg("abc").unwrap(), ArgValue::str("abc"));
        assert!(parse_cli_arg("hex:zz").is_err());
    }

    #[test]
    fn exit_codes_distinct() {
        let errs = [
            ClientError::Usage(String::new()),
            ClientError::Transport(String::new()),
            ClientError::Attestation(AttestationError::BadSignature),
            ClientError::Server {
                code: 1,
                message: String::new(),
            },
            ClientError::pipeline(Stage::Compile, ""),
        ];
        let codes: Vec<i32> = errs.iter().map(|e| e.exit_code()).collect();
        assert_eq!(codes, [1, 2, 3, 4, 5]);
    }

    #[test]
    fn stage_labels() {
        let e = ClientError::pipeline(Stage::SelfContainment, "unresolved external symbols: foo");
        assert_eq!(
            e.to_string(),
            "self_containment stage failed: unresolved external symbols: foo"
        );
    }
}
