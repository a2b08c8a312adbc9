//! The dynsgx server: hosts the simulated enclave behind the attested channel.

use std::io::Write;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use dynsgx_cli::{load_signing_key, parse_size, DEFAULT_SERVER};
use dynsgx_core::attestation::{Measurement, SigningIdentity};
use dynsgx_core::enclave::{runtime_table_by_name, Enclave, EnclaveConfig, DEFAULT_CORE_IMAGE_ID};
use dynsgx_core::server::Server;

#[derive(Parser)]
#[command(name = "dynsgx-server", version, about = "Serve a simulated dynsgx enclave")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Start serving. Prints the verification key and measurement first.
    Serve {
        /// Listen address
        #[arg(long, env = "DYNSGX_BIND", default_value = DEFAULT_SERVER)]
        bind: String,
        #[command(flatten)]
        enclave: EnclaveArgs,
        /// Signing key file written by `keygen`; a throwaway key is used if unset
        #[arg(long, env = "DYNSGX_SIGNING_KEY")]
        signing_key: Option<PathBuf>,
    },
    /// Generate a signing key file and print its verification key
    Keygen {
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the verification key and measurement a `serve` would present
    Info {
        #[command(flatten)]
        enclave: EnclaveArgs,
        #[arg(long, env = "DYNSGX_SIGNING_KEY")]
        signing_key: PathBuf,
    },
}

#[derive(Args)]
struct EnclaveArgs {
    /// Executable arena size, e.g. 128M
    #[arg(long, env = "DYNSGX_ARENA_CAPACITY", default_value = "128M")]
    capacity: String,
    /// Per-call argument scratch size
    #[arg(long, env = "DYNSGX_SCRATCH_CAPACITY", default_value = "1M")]
    scratch: String,
    /// Trusted helper table offered to payloads: libc or none
    #[arg(long, env = "DYNSGX_RUNTIME_TABLE", default_value = "libc")]
    runtime_table: String,
    /// Identity string folded into the measurement
    #[arg(long, env = "DYNSGX_CORE_IMAGE_ID")]
    core_image_id: Option<String>,
}

impl EnclaveArgs {
    fn config(&self) -> Result<EnclaveConfig> {
        let Some(runtime_table) = runtime_table_by_name(&self.runtime_table) else {
            bail!("unknown runtime table {:?} (expected libc or none)", self.runtime_table);
        };
        Ok(EnclaveConfig {
            arena_capacity: parse_size(&self.capacity)?,
            scratch_capacity: parse_size(&self.scratch)?,
            core_image_id: self
                .core_image_id
                .as_ref()
                .map(|s| s.as_bytes().to_vec())
                .unwrap_or_else(|| DEFAULT_CORE_IMAGE_ID.to_vec()),
            runtime_table,
        })
    }
}

fn print_identity(identity: &SigningIdentity, measurement: &Measurement) {
    println!("verify_key {}", identity.verify_key().to_hex());
    println!("measurement {measurement}");
}

fn write_secret(path: &PathBuf, identity: &SigningIdentity) -> Result<()> {
    use std::fs::OpenOptions;
    let mut opts = OpenOptions::new();
    opts.write(true).create_new(true);
    #[cfg(unix)]
    {
        use std::os::unix::fs::OpenOptionsExt;
        opts.mode(0o600);
    }
    let mut f = opts
        .open(path)
        .with_context(|| format!("cannot create {} (it must not exist yet)", path.display()))?;
    writeln!(f, "{}", identity.to_hex())?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Serve {
            bind,
            enclave,
            signing_key,
        } => {
            let identity = match signing_key {
                Some(p) => load_signing_key(&p)?,
                None => {
                    log::warn!("no --signing-key given; using a throwaway key for this run");
                    SigningIdentity::generate()
                }
            };
            let enclave = Arc::new(Enclave::create(enclave.config()?)?);
            print_identity(&identity, enclave.measurement());
            let server = Server::bind(bind.as_str(), enclave, identity)?;
            println!("listening {}", server.local_addr()?);
            std::io::stdout().flush()?;
            server.run()?;
        }
        Cmd::Keygen { out } => {
            let identity = SigningIdentity::generate();
            write_secret(&out, &identity)?;
            println!("verify_key {}", identity.verify_key().to_hex());
        }
        Cmd::Info { enclave, signing_key } => {
            let cfg = enclave.config()?;
            cfg.validate()?;
            let identity = load_signing_key(&signing_key)?;
            print_identity(&identity, &Measurement::compute(&cfg.core_image_id, cfg.arena_capacity));
        }
    }
    Ok(())
}
