#![allow(dead_code)]

use std::net::TcpStream;
use std::sync::Arc;

use dynsgx_core::attestation::{Measurement, SigningIdentity, VerifyKey};
use dynsgx_core::client::Session;
use dynsgx_core::enclave::{Enclave, EnclaveConfig};
use dynsgx_core::server::{Server, ServerHandle};

pub const SUM: &[u8] = b"\x55\x48\x89\xe5\x89\x7d\xfc\x89\x75\xf8\x8b\x55\xfc\x8b\x45\xf8\x01\xd0\x5d\xc3";

/// A loopback server plus what a client needs to attest it.
pub struct TestServer {
    pub handle: ServerHandle,
    pub key: VerifyKey,
    pub measurement: Measurement,
}

impl TestServer {
    pub fn start(config: EnclaveConfig) -> Self {
        let enclave = Arc::new(Enclave::create(config).unwrap());
        let identity = SigningIdentity::generate();
        let key = identity.verify_key();
        let measurement = *enclave.measurement();
        let handle = Server::bind("127.0.0.1:0", enclave, identity).unwrap().spawn().unwrap();
        Self {
            handle,
            key,
            measurement,
        }
    }

    pub fn addr(&self) -> String {
        self.handle.addr().to_string()
    }

    pub fn enclave(&self) -> &Arc<Enclave> {
        self.handle.enclave()
    }

    pub fn connect(&self) -> Session<TcpStream> {
        Session::connect(&self.addr(), &self.key, &self.measurement).unwrap()
    }
}

/// Path of a compiler for the toolchain tests: `$CC` or `cc`.
pub fn cc() -> String {
    std::env::var("CC").unwrap_or_else(|_| "cc".into())
}
