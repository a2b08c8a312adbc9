//! Latency harness: the same payload bytes called directly in-process, over
//! an established channel, and over a fresh attested session per sample.

use std::fmt::{self, Write as _};
use std::net::TcpStream;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::Instant;

use thiserror::Error;

use crate::attestation::{Measurement, SigningIdentity, VerifyKey};
use crate::client::{ClientError, Session};
use crate::corpus::builtin;
use crate::enclave::{ArgValue, Enclave, EnclaveConfig, FunctionId, SignatureDescriptor};
use crate::native::{DirectFunction, CALL_WORDS};
use crate::server::{Server, ServerHandle};

pub const DEFAULT_RUNS: usize = 30;
/// Largest fibonacci argument accepted without `allow_large`.
pub const FIB_CAP: u64 = 35;
/// Largest array size in MiB accepted without `allow_large`.
pub const SUM_ARRAY_CAP_MIB: u64 = 256;
pub const CSV_HEADER: &str = "workload,parameter,mode,runs,median_ns,min_ns,max_ns";

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("invalid bench configuration: {0}")]
    Config(String),
    #[error("bench setup failed: {0}")]
    Setup(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Workload {
    SumArray,
    RecursiveFibonacci,
}

impl Workload {
    pub fn name(self) -> &'static str {
        match self {
            Workload::SumArray => "sum_array",
            Workload::RecursiveFibonacci => "recursive_fibonacci",
        }
    }

    fn payload(self) -> Vec<u8> {
        match self {
            Workload::SumArray => builtin::sum_array(),
            Workload::RecursiveFibonacci => builtin::recursive_fibonacci(),
        }
    }

    /// The value a correct run returns for `param`.
    pub fn expected(self, param: u64) -> i64 {
        match self {
            Workload::RecursiveFibonacci => fibonacci(param),
            Workload::SumArray => {
                let n = (param as i64) << 18;
                n * (n - 1) / 2
            }
        }
    }

    /// A cheap input checked before any timing starts.
    fn smoke_test(self) -> (u64, i64) {
        match self {
            Workload::RecursiveFibonacci => (10, 55),
            Workload::SumArray => (1, 34_359_607_296),
        }
    }

    fn cap(self) -> u64 {
        match self {
            Workload::SumArray => SUM_ARRAY_CAP_MIB,
            Workload::RecursiveFibonacci => FIB_CAP,
        }
    }
}

impl fmt::Display for Workload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Workload {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fib" | "fibonacci" | "recursive_fibonacci" => Ok(Workload::RecursiveFibonacci),
            "sum_array" | "sum-array" | "array" => Ok(Workload::SumArray),
            _ => Err(BenchError::Config(format!("unknown workload {s:?}"))),
        }
    }
}

pub fn fibonacci(n: u64) -> i64 {
    let (mut a, mut b) = (0i64, 1i64);
    for _ in 0..n {
        (a, b) = (b, a.wrapping_add(b));
    }
    a
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Mode {
    Direct,
    Channel,
    ChannelRa,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Direct => "direct",
            Mode::Channel => "channel",
            Mode::ChannelRa => "channel+RA",
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = BenchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "direct" => Ok(Mode::Direct),
            "channel" => Ok(Mode::Channel),
            "channel+ra" | "channel-ra" | "channel_ra" | "ra" => Ok(Mode::ChannelRa),
            _ => Err(BenchError::Config(format!("unknown mode {s:?}"))),
        }
    }
}

/// Parses a comma-separated list, e.g. `1,5,10` or `direct,channel`.
pub fn parse_list<T: FromStr>(s: &str) -> Result<Vec<T>, BenchError>
where
    T::Err: fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|e| BenchError::Config(format!("{p:?}: {e}"))))
        .collect()
}

/// True sample median; the mean of the middle pair for even lengths.
pub fn median(samples: &[u64]) -> Option<f64> {
    if samples.is_empty() {
        return None;
    }
    let mut s = samples.to_vec();
    s.sort_unstable();
    let mid = s.len() / 2;
    Some(if s.len() % 2 == 1 {
        s[mid] as f64
    } else {
        (s[mid - 1] as f64 + s[mid] as f64) / 2.0
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchPoint {
    pub workload: Workload,
    /// Array MiB or fibonacci `n`.
    pub parameter: u64,
    pub mode: Mode,
    pub samples: Vec<u64>,
    /// Set when the point could not be measured; `samples` is then empty.
    pub error: Option<String>,
}

impl BenchPoint {
    pub fn median(&self) -> Option<f64> {
        median(&self.samples)
    }

    pub fn min(&self) -> Option<u64> {
        self.samples.iter().copied().min()
    }

    pub fn max(&self) -> Option<u64> {
        self.samples.iter().copied().max()
    }
}

/// CSV report, one row per point. With `ratios`, an extra `ratio_vs_direct`
/// column holds each point's median divided by the direct median of the same
/// workload and parameter.
pub fn summarize(points: &[BenchPoint], ratios: bool) -> String {
    let mut out = String::from(CSV_HEADER);
    if ratios {
        out.push_str(",ratio_vs_direct");
    }
    out.push('\n');
    let opt = |v: Option<String>| v.unwrap_or_default();
    for p in points {
        let _ = write!(
            out,
            "{},{},{},{},{},{},{}",
            p.workload,
            p.parameter,
            p.mode,
            p.samples.len(),
            opt(p.median().map(|m| m.to_string())),
            opt(p.min().map(|m| m.to_string())),
            opt(p.max().map(|m| m.to_string())),
        );
        if ratios {
            let direct = points
                .iter()
                .find(|q| q.workload == p.workload && q.parameter == p.parameter && q.mode == Mode::Direct)
                .and_then(BenchPoint::median);
            let ratio = match (p.median(), direct) {
                (Some(m), Some(d)) if d > 0.0 => format!("{:.3}", m / d),
                _ => String::new(),
            };
            let _ = write!(out, ",{ratio}");
        }
        out.push('\n');
    }
    out
}

/// Where remote modes send their requests.
pub enum Target {
    /// Start an in-process server on a loopback port for the duration of the run.
    Local,
    Remote {
        server: String,
        pinned_key: VerifyKey,
        expected_measurement: Measurement,
    },
}

#[derive(Debug, Clone)]
pub struct BenchConfig {
    pub workload: Workload,
    pub params: Vec<u64>,
    pub runs: usize,
    pub modes: Vec<Mode>,
    /// Lift the default parameter caps.
    pub allow_large: bool,
}

impl BenchConfig {
    pub fn validate(&self) -> Result<(), BenchError> {
        if self.runs == 0 {
            return Err(BenchError::Config("runs must be at least 1".into()));
        }
        if self.params.is_empty() || self.modes.is_empty() {
            return Err(BenchError::Config("need at least one parameter and one mode".into()));
        }
        let cap = self.workload.cap();
        if let Some(p) = self.params.iter().find(|&&p| p > cap && !self.allow_large) {
            return Err(BenchError::Config(format!(
                "{} parameter {p} exceeds the default cap {cap}; pass allow_large to run it",
                self.workload
            )));
        }
        if self.workload == Workload::SumArray && self.params.contains(&0) {
            return Err(BenchError::Config("array size must be at least 1 MiB".into()));
        }
        Ok(())
    }
}

struct Remote {
    server: String,
    pinned_key: VerifyKey,
    measurement: Measurement,
    _local: Option<ServerHandle>,
}

impl Remote {
    fn start(target: Target) -> Result<Self, BenchError> {
        match target {
            Target::Remote {
                server,
                pinned_key,
                expected_measurement,
            } => Ok(Self {
                server,
                pinned_key,
                measurement: expected_measurement,
                _local: None,
            }),
            Target::Local => {
                let setup = |e: &dyn fmt::Display| BenchError::Setup(format!("local server: {e}"));
                let enclave = Arc::new(Enclave::create(EnclaveConfig::default()).map_err(|e| setup(&e))?);
                let identity = SigningIdentity::generate();
                let pinned_key = identity.verify_key();
                let measurement = *enclave.measurement();
                let handle = Server::bind("127.0.0.1:0", enclave, identity)
                    .and_then(Server::spawn)
                    .map_err(|e| setup(&e))?;
                Ok(Self {
                    server: handle.addr().to_string(),
                    pinned_key,
                    measurement,
                    _local: Some(handle),
                })
            }
        }
    }

    fn connect(&self) -> Result<Session<TcpStream>, ClientError> {
        Session::connect(&self.server, &self.pinned_key, &self.measurement)
    }
}

fn unique_name(w: Workload) -> String {
    static COUNTER: AtomicU64 = AtomicU64::new(0);
    format!(
        "bench_{}_{}_{}",
        w.name(),
        std::process::id(),
        COUNTER.fetch_add(1, Ordering::Relaxed)
    )
}

/// One way of invoking the payload; returns (latency ns, return word).
trait Sampler {
    fn sample(&mut self, param: u64) -> Result<(u64, i64), String>;
}

struct DirectSampler(DirectFunction);

impl Sampler for DirectSampler {
    fn sample(&mut self, param: u64) -> Result<(u64, i64), String> {
        let mut words = [0u64; CALL_WORDS];
        words[0] = param;
        let t = Instant::now();
        // SAFETY: the bytes are a committed corpus payload taking one word
        let ret = unsafe { self.0.call(words) };
        Ok((t.elapsed().as_nanos() as u64, ret as i64))
    }
}

struct ChannelSampler<'a> {
    session: &'a mut Session<TcpStream>,
    id: FunctionId,
}

impl Sampler for ChannelSampler<'_> {
    fn sample(&mut self, param: u64) -> Result<(u64, i64), String> {
        let args = [ArgValue::Int(param as i64)];
        let t = Instant::now();
        let r = self.session.exec(self.id, &args).map_err(|e| e.to_string())?;
        let ns = t.elapsed().as_nanos() as u64;
        Ok((ns, r.return_word.ok_or("function returned no value")?))
    }
}

/// Reconnects and re-attests for every sample, so each latency includes the
/// handshake.
struct RaSampler<'a> {
    remote: &'a Remote,
    id: FunctionId,
}

impl Sampler for RaSampler<'_> {
    fn sample(&mut self, param: u64) -> Result<(u64, i64), String> {
        let args = [ArgValue::Int(param as i64)];
        let t = Instant::now();
        let mut session = self.remote.connect().map_err(|e| e.to_string())?;
        let r = session.exec(self.id, &args).map_err(|e| e.to_string())?;
        let ns = t.elapsed().as_nanos() as u64;
        Ok((ns, r.return_word.ok_or("function returned no value")?))
    }
}

fn measure(sampler: &mut dyn Sampler, workload: Workload, param: u64, runs: usize) -> Result<Vec<u64>, String> {
    let want = workload.expected(param);
    (0..runs)
        .map(|_| {
            let (ns, got) = sampler.sample(param)?;
            if got != want {
                return Err(format!("{workload}({param}) returned {got}, expected {want}"));
            }
            Ok(ns)
        })
        .collect()
}

fn smoke(sampler: &mut dyn Sampler, workload: Workload) -> Result<(), String> {
    let (arg, want) = workload.smoke_test();
    let (_, got) = sampler.sample(arg)?;
    if got == want {
        Ok(())
    } else {
        Err(format!("correctness check {workload}({arg}) = {got}, expected {want}"))
    }
}

fn failed(cfg: &BenchConfig, mode: Mode, param: u64, error: &str) -> BenchPoint {
    BenchPoint {
        workload: cfg.workload,
        parameter: param,
        mode,
        samples: Vec::new(),
        error: Some(error.to_string()),
    }
}

/// A remote session with the workload loaded, shared by the remote modes.
struct Loaded {
    remote: Remote,
    session: Session<TcpStream>,
    id: FunctionId,
}

fn setup_remote(target: Target, workload: Workload, payload: &[u8]) -> Result<Loaded, String> {
    let remote = Remote::start(target).map_err(|e| e.to_string())?;
    let descriptor: SignatureDescriptor = "i(i)".parse().expect("static descriptor");
    let mut session = remote.connect().map_err(|e| format!("remote setup: {e}"))?;
    let id = session
        .load(&unique_name(workload), &descriptor, payload)
        .map_err(|e| format!("remote setup: {e}"))?;
    Ok(Loaded { remote, session, id })
}

/// Runs every (parameter, mode) point. A point that fails is reported with
/// its error and no samples, and the sweep carries on.
pub fn run(cfg: &BenchConfig, target: Target) -> Result<Vec<BenchPoint>, BenchError> {
    cfg.validate()?;
    let payload = cfg.workload.payload();
    let mut loaded = if cfg.modes.iter().any(|m| *m != Mode::Direct) {
        Some(setup_remote(target, cfg.workload, &payload))
    } else {
        None
    };

    let mut points = Vec::new();
    for &mode in &cfg.modes {
        let mut sampler: Box<dyn Sampler + '_> = match (mode, loaded.as_mut()) {
            (Mode::Direct, _) => match DirectFunction::load(&payload) {
                Ok(f) => Box::new(DirectSampler(f)),
                Err(e) => {
                    points.extend(cfg.params.iter().map(|&p| failed(cfg, mode, p, &e.to_string())));
                    continue;
                }
            },
            (Mode::Channel, Some(Ok(l))) => Box::new(ChannelSampler {
                session: &mut l.session,
                id: l.id,
            }),
            (Mode::ChannelRa, Some(Ok(l))) => Box::new(RaSampler {
                remote: &l.remote,
                id: l.id,
            }),
            (_, Some(Err(e))) => {
                points.extend(cfg.params.iter().map(|&p| failed(cfg, mode, p, e)));
                continue;
            }
            (_, None) => unreachable!("remote modes always set up the remote"),
        };
        if let Err(e) = smoke(sampler.as_mut(), cfg.workload) {
            log::warn!("{mode}: {e}");
            points.extend(cfg.params.iter().map(|&p| failed(cfg, mode, p, &e)));
            continue;
        }
        for &param in &cfg.params {
            log::debug!("{} {param} {mode}: {} runs", cfg.workload, cfg.runs);
            points.push(match measure(sampler.as_mut(), cfg.workload, param, cfg.runs) {
                Ok(samples) => BenchPoint {
                    workload: cfg.workload,
                    parameter: param,
                    mode,
                    samples,
                    error: None,
                },
                Err(e) => {
                    log::warn!("{} {param} {mode}: {e}", cfg.workload);
                    failed(cfg, mode, param, &e)
                }
            });
        }
    }
    if let Some(Ok(mut l)) = loaded {
        if let Err(e) = l.session.unload(l.id) {
            log::warn!("could not unload bench payload: {e}");
        }
    }
    Ok(points)
}
