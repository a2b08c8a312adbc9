//! Client for a dynsgx server: attest, provision C functions, run them.

use std::io::Write;
use std::net::TcpStream;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use dynsgx_cli::{load_measurement, load_verify_key, DEFAULT_SERVER};
use dynsgx_core::bench::{self, BenchConfig, Mode, Target, Workload};
use dynsgx_core::client::{parse_cli_arg, provision_function, ClientConfig, ClientError, Session, Toolchain};
use dynsgx_core::enclave::{FunctionId, SignatureDescriptor};
use dynsgx_core::extractor::{extract_function, parse_object, read_hexstring_file, to_hexstring};

#[derive(Parser)]
#[command(name = "dynsgx", version, about = "Load and run functions in a dynsgx enclave")]
struct Cli {
    /// Server address (host:port)
    #[arg(long, global = true, env = "DYNSGX_SERVER")]
    server: Option<String>,
    /// Enclave verification key, as hex or a file containing it
    #[arg(long, global = true, env = "DYNSGX_PINNED_KEY")]
    pinned_key: Option<String>,
    /// Expected enclave measurement, as hex or a file containing it
    #[arg(long, global = true, env = "DYNSGX_EXPECTED_MEASUREMENT")]
    expected_measurement: Option<String>,
    /// C compiler used to build payloads
    #[arg(long, global = true, env = "CC", default_value = "cc")]
    cc: String,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Attest the enclave and print its measurement and address map size
    Attest,
    #[command(flatten)]
    Session(SessionCmd),
    /// Attest once, then run commands read from stdin (one per line, shell
    /// quoting, `#` comments) over that session. Stops at the first error.
    Batch,
    /// Extract a function from an object file and print its hexstring
    Extract { object: PathBuf, symbol: String },
    /// Latency benchmark; writes CSV. Without --server an in-process server is used.
    Bench {
        /// `fib` (recursive_fibonacci) or `sum_array`
        #[arg(long)]
        workload: String,
        /// Fibonacci arguments, comma separated
        #[arg(long)]
        ns: Option<String>,
        /// Array sizes in MiB, comma separated
        #[arg(long)]
        sizes: Option<String>,
        #[arg(long, default_value_t = bench::DEFAULT_RUNS)]
        runs: usize,
        /// Comma separated: direct, channel, channel+RA
        #[arg(long, default_value = "direct,channel,channel+RA")]
        modes: String,
        /// Write the CSV here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
        /// Add a ratio_vs_direct column
        #[arg(long)]
        ratios: bool,
        /// Permit parameters above the default caps
        #[arg(long)]
        allow_large: bool,
    },
}

/// Commands that run over an attested session.
#[derive(Subcommand)]
enum SessionCmd {
    /// Compile, extract and load a function. A `.hex` path is loaded as a
    /// hexstring without compiling.
    Load {
        path: PathBuf,
        function: String,
        /// Signature descriptor, e.g. `i(ii)`
        descriptor: String,
    },
    /// Execute a loaded function. Arguments: integers, `s:text` or "text"
    /// strings, `hex:00ff` buffers.
    Exec {
        id: u64,
        #[arg(allow_hyphen_values = true)]
        args: Vec<String>,
    },
    /// Unload a function
    Unload { id: u64 },
    /// Unload every function and print how many were removed
    Clear,
    /// Print the address map: name, return type, address
    List,
}

/// One line of `batch` input.
#[derive(Parser)]
#[command(no_binary_name = true)]
struct BatchLine {
    #[command(subcommand)]
    cmd: SessionCmd,
}

impl Cli {
    fn client_config(&self) -> Result<ClientConfig, ClientError> {
        let usage = |e: anyhow::Error| ClientError::Usage(format!("{e:#}"));
        let key = self
            .pinned_key
            .as_deref()
            .ok_or_else(|| ClientError::Usage("--pinned-key is required".into()))?;
        let m = self
            .expected_measurement
            .as_deref()
            .ok_or_else(|| ClientError::Usage("--expected-measurement is required".into()))?;
        Ok(ClientConfig {
            server: self.server.clone().unwrap_or_else(|| DEFAULT_SERVER.to_string()),
            pinned_key: load_verify_key(key).map_err(usage)?,
            expected_measurement: load_measurement(m).map_err(usage)?,
            toolchain: Toolchain::new(&self.cc),
        })
    }
}

fn parse_descriptor(s: &str) -> Result<SignatureDescriptor, ClientError> {
    s.parse().map_err(|e| ClientError::Usage(format!("{e}")))
}

fn run_session_cmd(
    session: &mut Session<TcpStream>,
    toolchain: &Toolchain,
    cmd: &SessionCmd,
) -> Result<(), ClientError> {
    match cmd {
        SessionCmd::Load {
            path,
            function,
            descriptor,
        } => {
            let descriptor = parse_descriptor(descriptor)?;
            let (id, hexstring) = if path.extension().is_some_and(|e| e == "hex") {
                let bytes = read_hexstring_file(path)
                    .map_err(|e| ClientError::Usage(format!("cannot read {}: {e}", path.display())))?
                    .map_err(|e| ClientError::Usage(e.to_string()))?;
                (session.load(function, &descriptor, &bytes)?, to_hexstring(&bytes))
            } else {
                let (id, extracted) = provision_function(session, toolchain, path, function, &descriptor)?;
                (id, extracted.hexstring())
            };
            println!("id {id}");
            println!("hexstring {hexstring}");
        }
        SessionCmd::Exec { id, args } => {
            let args = args.iter().map(|a| parse_cli_arg(a)).collect::<Result<Vec<_>, _>>()?;
            let r = session.exec(FunctionId(*id), &args)?;
            match r.return_word {
                Some(v) => println!("return {v}"),
                None => println!("return void"),
            }
            println!("wall_time_ns {}", r.wall_time_ns);
        }
        SessionCmd::Unload { id } => {
            session.unload(FunctionId(*id))?;
            println!("unloaded {id}");
        }
        SessionCmd::Clear => {
            println!("{}", session.clear()?);
        }
        SessionCmd::List => {
            let mut out = std::io::stdout().lock();
            for e in session.list()?.entries() {
                // a closed pipe (e.g. `| head`) is not an error
                if writeln!(out, "{}\t{}\t{:#x}", e.name, e.return_type, e.address).is_err() {
                    break;
                }
            }
        }
    }
    Ok(())
}

fn run(cli: &Cli) -> Result<(), ClientError> {
    match &cli.cmd {
        Cmd::Attest => {
            let session = cli.client_config()?.connect()?;
            println!("attested");
            println!("measurement {}", session.measurement());
            println!("map_entries {}", session.address_map().len());
        }
        Cmd::Session(cmd) => {
            let cfg = cli.client_config()?;
            let mut session = cfg.connect()?;
            run_session_cmd(&mut session, &cfg.toolchain, cmd)?;
        }
        Cmd::Batch => {
            let cfg = cli.client_config()?;
            let mut session = cfg.connect()?;
            for (n, line) in std::io::stdin().lines().enumerate() {
                let line = line.map_err(|e| ClientError::Usage(format!("reading stdin: {e}")))?;
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let words = shlex::split(line)
                    .ok_or_else(|| ClientError::Usage(format!("line {}: unbalanced quotes", n + 1)))?;
                let parsed = BatchLine::try_parse_from(words)
                    .map_err(|e| ClientError::Usage(format!("line {}: {}", n + 1, e.render())))?;
                run_session_cmd(&mut session, &cfg.toolchain, &parsed.cmd)?;
            }
        }
        Cmd::Extract { object, symbol } => {
            let bytes = std::fs::read(object)
                .map_err(|e| ClientError::Usage(format!("cannot read {}: {e}", object.display())))?;
            let pipeline = |e: &dyn std::fmt::Display| ClientError::Usage(e.to_string());
            let image = parse_object(&bytes).map_err(|e| pipeline(&e))?;
            let f = extract_function(&image, symbol).map_err(|e| pipeline(&e))?;
            println!("{}", f.hexstring());
            if !f.unresolved.is_empty() {
                eprintln!("unresolved: {}", f.unresolved.join(", "));
            }
        }
        Cmd::Bench {
            workload,
            ns,
            sizes,
            runs,
            modes,
            out,
            ratios,
            allow_large,
        } => {
            let usage = |e: &dyn std::fmt::Display| ClientError::Usage(e.to_string());
            let workload: Workload = workload.parse().map_err(|e| usage(&e))?;
            let params = match (workload, ns, sizes) {
                (Workload::RecursiveFibonacci, Some(p), None) | (Workload::SumArray, None, Some(p)) => p,
                (Workload::RecursiveFibonacci, None, None) => "1,5,10,15,20,25,30,35",
                (Workload::SumArray, None, None) => "2,4,8,16,32,64,128,256",
                _ => return Err(ClientError::Usage("--ns goes with fib, --sizes with sum_array".into())),
            };
            let cfg = BenchConfig {
                workload,
                params: bench::parse_list(params).map_err(|e| usage(&e))?,
                runs: *runs,
                modes: bench::parse_list::<Mode>(modes).map_err(|e| usage(&e))?,
                allow_large: *allow_large,
            };
            let target = match &cli.server {
                None => Target::Local,
                Some(_) => {
                    let c = cli.client_config()?;
                    Target::Remote {
                        server: c.server,
                        pinned_key: c.pinned_key,
                        expected_measurement: c.expected_measurement,
                    }
                }
            };
            let points = bench::run(&cfg, target).map_err(|e| match e {
                bench::BenchError::Config(m) => ClientError::Usage(m),
                bench::BenchError::Setup(m) => ClientError::Transport(m),
            })?;
            for p in points.iter().filter(|p| p.error.is_some()) {
                eprintln!(
                    "point {} {} {} failed: {}",
                    p.workload,
                    p.parameter,
                    p.mode,
                    p.error.as_deref().unwrap_or_default()
                );
            }
            let csv = bench::summarize(&points, *ratios);
            match out {
                Some(path) => std::fs::write(path, csv)
                    .with_context(|| format!("cannot write {}", path.display()))
                    .map_err(|e| ClientError::Usage(format!("{e:#}")))?,
                None => {
                    let _ = std::io::stdout().write_all(csv.as_bytes());
                }
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("dynsgx: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
