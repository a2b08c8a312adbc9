//! A simulated enclave that loads position-independent machine code at
//! runtime over an attested, encrypted channel.
//!
//! - [`enclave`]: executable arena and function registry
//! - [`attestation`]: signed reports, ECDH, session key derivation
//! - [`channel`]: frame codec and authenticated encryption
//! - [`extractor`]: ELF64 symbol extraction and hexstrings
//! - [`linker`]: address maps and call-site source rewriting
//! - [`protocol`], [`server`], [`client`]: the request/response service
//! - [`bench`]: latency harness

pub mod attestation;
pub mod bench;
pub mod channel;
pub mod client;
pub mod corpus;
pub mod enclave;
pub mod extractor;
pub mod linker;
pub mod native;
pub mod protocol;
pub mod server;
pub mod wire;
