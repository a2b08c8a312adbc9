//! The simulated enclave: an executable arena plus the function registry.
//!
//! The registry exposes the six trusted operations: attestation setup lives in
//! [`crate::attestation`], the remaining five (register, list addresses,
//! execute, unregister, clear) are methods on [`Enclave`].
//!
//! Registry and arena share one `RwLock`. Mutations take it exclusively;
//! executions hold the shared side for the whole native call, so code can't
//! be unloaded from under a running call.

mod arena;
mod descriptor;
mod runtime;

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::sync::{RwLock, RwLockReadGuard, RwLockWriteGuard};
use std::time::Instant;

use thiserror::Error;

pub use arena::{ArenaFull, ExecArena, ENTRY_ALIGN};
pub use descriptor::{ArgKind, ArgValue, DescriptorError, ReturnKind, SignatureDescriptor};
pub use runtime::{libc_runtime_table, runtime_table_by_name, RuntimeFunction};

use crate::attestation::Measurement;
use crate::linker::{is_c_identifier, AddressMap, AddressMapEntry};
use crate::native::{self, NativeError, CALL_WORDS};

pub const DEFAULT_ARENA_CAPACITY: usize = 128 << 20;
pub const DEFAULT_SCRATCH_CAPACITY: usize = 1 << 20;
pub const DEFAULT_CORE_IMAGE_ID: &[u8] = b"dynsgx-enclave-core/1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FunctionId(pub u64);

impl fmt::Display for FunctionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone)]
pub struct EnclaveConfig {
    pub arena_capacity: usize,
    pub scratch_capacity: usize,
    pub core_image_id: Vec<u8>,
    pub runtime_table: Vec<RuntimeFunction>,
}

impl Default for EnclaveConfig {
    fn default() -> Self {
        Self {
            arena_capacity: DEFAULT_ARENA_CAPACITY,
            scratch_capacity: DEFAULT_SCRATCH_CAPACITY,
            core_image_id: DEFAULT_CORE_IMAGE_ID.to_vec(),
            runtime_table: libc_runtime_table(),
        }
    }
}

impl EnclaveConfig {
    pub fn with_capacity(arena_capacity: usize) -> Self {
        Self {
            arena_capacity,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), EnclaveError> {
        if self.arena_capacity == 0 {
            return Err(EnclaveError::InvalidConfig("arena_capacity must be > 0".into()));
        }
        if self.scratch_capacity == 0 {
            return Err(EnclaveError::InvalidConfig("scratch_capacity must be > 0".into()));
        }
        let mut seen = HashSet::new();
        for f in &self.runtime_table {
            if !seen.insert(f.name.as_str()) {
                return Err(EnclaveError::InvalidConfig(format!(
                    "runtime table lists {:?} twice",
                    f.name
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FunctionRecord {
    pub id: FunctionId,
    pub name: String,
    pub descriptor: SignatureDescriptor,
    pub bytes: Vec<u8>,
    pub entry: usize,
    pub size: usize,
    pub loaded_at: Instant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExecResult {
    pub return_word: Option<i64>,
    pub wall_time_ns: u64,
}

/// Snapshot of the arena bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArenaState {
    pub base: usize,
    pub capacity: usize,
    pub cursor: usize,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EnclaveError {
    #[error("invalid enclave config: {0}")]
    InvalidConfig(String),
    #[error("platform unsupported: {0}")]
    PlatformUnsupported(String),
    #[error("allocation failure: {0}")]
    AllocationFailure(String),
    #[error("out of enclave memory: {requested} bytes requested, {available} available")]
    OutOfEnclaveMemory { requested: usize, available: usize },
    #[error("a function named {0:?} is already registered")]
    DuplicateName(String),
    #[error("{0}")]
    BadDescriptor(String),
    #[error("function payload is empty")]
    EmptyPayload,
    #[error("{0:?} is not a valid C identifier")]
    InvalidName(String),
    #[error("unknown function id {0}")]
    UnknownFunction(FunctionId),
    #[error("arguments ({got}) do not match descriptor arguments ({expected})")]
    ArityMismatch { expected: String, got: String },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("string and buffer arguments need {needed} bytes of scratch, capacity is {capacity}")]
    ScratchOverflow { needed: usize, capacity: usize },
}

impl EnclaveError {
    /// Stable numeric code carried in ERROR frames.
    pub fn code(&self) -> u16 {
        match self {
            EnclaveError::InvalidConfig(_) => 0x0101,
            EnclaveError::PlatformUnsupported(_) => 0x0102,
            EnclaveError::AllocationFailure(_) => 0x0103,
            EnclaveError::OutOfEnclaveMemory { .. } => 0x0201,
            EnclaveError::DuplicateName(_) => 0x0202,
            EnclaveError::BadDescriptor(_) => 0x0203,
            EnclaveError::EmptyPayload => 0x0204,
            EnclaveError::InvalidName(_) => 0x0205,
            EnclaveError::UnknownFunction(_) => 0x0301,
            EnclaveError::ArityMismatch { .. } => 0x0302,
            EnclaveError::InvalidArgument(_) => 0x0303,
            EnclaveError::ScratchOverflow { .. } => 0x0304,
        }
    }
}

impl From<DescriptorError> for EnclaveError {
    fn from(e: DescriptorError) -> Self {
        EnclaveError::BadDescriptor(e.to_string())
    }
}

impl From<NativeError> for EnclaveError {
    fn from(e: NativeError) -> Self {
        match e {
            NativeError::PlatformUnsupported(m) => EnclaveError::PlatformUnsupported(m),
            e @ NativeError::AllocationFailure { .. } => EnclaveError::AllocationFailure(e.to_string()),
        }
    }
}

struct Registry {
    arena: ExecArena,
    records: BTreeMap<FunctionId, FunctionRecord>,
    next_id: u64,
}

impl Registry {
    fn by_name(&self, name: &str) -> Option<&FunctionRecord> {
        self.records.values().find(|r| r.name == name)
    }

    /// End of the highest live allocation.
    fn live_top(&self) -> usize {
        self.records
            .values()
            .map(|r| r.entry - self.arena.base() + r.size)
            .max()
            .unwrap_or(0)
    }
}

pub struct Enclave {
    config: EnclaveConfig,
    measurement: Measurement,
    state: RwLock<Registry>,
}

impl fmt::Debug for Enclave {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Enclave")
            .field("measurement", &self.measurement)
            .field("arena", &self.arena_state())
            .finish_non_exhaustive()
    }
}

impl Enclave {
    pub fn create(config: EnclaveConfig) -> Result<Self, EnclaveError> {
        config.validate()?;
        native::check_platform()?;
        let arena = ExecArena::new(config.arena_capacity)?;
        let measurement = Measurement::compute(&config.core_image_id, config.arena_capacity);
        log::debug!(
            "enclave created: arena {:#x}+{:#x}, measurement {}",
            arena.base(),
            config.arena_capacity,
            measurement
        );
        Ok(Self {
            config,
            measurement,
            state: RwLock::new(Registry {
                arena,
                records: BTreeMap::new(),
                next_id: 1,
            }),
        })
    }

    pub fn config(&self) -> &EnclaveConfig {
        &self.config
    }

    pub fn measurement(&self) -> &Measurement {
        &self.measurement
    }

    fn read(&self) -> RwLockReadGuard<'_, Registry> {
        // a poisoned lock only means a panic elsewhere; the registry is still consistent
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> RwLockWriteGuard<'_, Registry> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    pub fn register_function(
        &self,
        bytes: &[u8],
        name: &str,
        descriptor: SignatureDescriptor,
    ) -> Result<FunctionId, EnclaveError> {
        if bytes.is_empty() {
            return Err(EnclaveError::EmptyPayload);
        }
        if !is_c_identifier(name) {
            return Err(EnclaveError::InvalidName(name.to_string()));
        }
        if self.config.runtime_table.iter().any(|f| f.name == name) {
            return Err(EnclaveError::DuplicateName(name.to_string()));
        }

        let mut reg = self.write();
        if reg.by_name(name).is_some() {
            return Err(EnclaveError::DuplicateName(name.to_string()));
        }
        let offset = reg
            .arena
            .place(bytes)
            .map_err(|full| EnclaveError::OutOfEnclaveMemory {
                requested: full.requested,
                available: full.available,
            })?;
        let id = FunctionId(reg.next_id);
        reg.next_id += 1;
        let entry = reg.arena.base() + offset;
        reg.records.insert(
            id,
            FunctionRecord {
                id,
                name: name.to_string(),
                descriptor,
                bytes: bytes.to_vec(),
                entry,
                size: bytes.len(),
                loaded_at: Instant::now(),
            },
        );
        log::debug!("registered {name} as {id} at {entry:#x} ({} bytes)", bytes.len());
        Ok(id)
    }

    /// Runtime helpers followed by live user functions in id order.
    pub fn get_fas(&self) -> AddressMap {
        let reg = self.read();
        let runtime = self.config.runtime_table.iter().map(|f| AddressMapEntry {
            name: f.name.clone(),
            return_type: f.return_type.clone(),
            address: f.address as u64,
        });
        let user = reg.records.values().map(|r| AddressMapEntry {
            name: r.name.clone(),
            return_type: r.descriptor.c_return_type().to_string(),
            address: r.entry as u64,
        });
        AddressMap::from_entries(runtime.chain(user).collect()).expect("registry names are unique identifiers")
    }

    pub fn execute_function(&self, id: FunctionId, args: &[ArgValue]) -> Result<ExecResult, EnclaveError> {
        native::check_platform()?;
        let reg = self.read();
        let record = reg.records.get(&id).ok_or(EnclaveError::UnknownFunction(id))?;
        let marshaled = marshal(&record.descriptor, args, self.config.scratch_capacity)?;

        let start = Instant::now();
        // SAFETY: entry points at bytes registered by an attested client;
        // payload authors are trusted (no fault isolation). The read guard
        // keeps the code mapped and unmodified for the duration of the call.
        let raw = unsafe { native::call_words(record.entry, marshaled.words) };
        let wall_time_ns = start.elapsed().as_nanos() as u64;
        drop(marshaled);

        Ok(ExecResult {
            return_word: match record.descriptor.ret() {
                ReturnKind::Word => Some(raw as i64),
                ReturnKind::Void => None,
            },
            wall_time_ns,
        })
    }

    pub fn unregister_function(&self, id: FunctionId) -> Result<(), EnclaveError> {
        let mut reg = self.write();
        let record = reg.records.remove(&id).ok_or(EnclaveError::UnknownFunction(id))?;
        let offset = record.entry - reg.arena.base();
        reg.arena.zero(offset, record.size);
        let top = reg.live_top();
        reg.arena.trim(top);
        log::debug!("unregistered {} ({id}), cursor now {top}", record.name);
        Ok(())
    }

    pub fn clear_functions(&self) -> usize {
        let mut reg = self.write();
        let n = reg.records.len();
        reg.records.clear();
        reg.arena.reset();
        n
    }

    pub fn functions(&self) -> Vec<FunctionRecord> {
        self.read().records.values().cloned().collect()
    }

    pub fn function(&self, id: FunctionId) -> Option<FunctionRecord> {
        self.read().records.get(&id).cloned()
    }

    pub fn arena_state(&self) -> ArenaState {
        let reg = self.read();
        ArenaState {
            base: reg.arena.base(),
            capacity: reg.arena.capacity(),
            cursor: reg.arena.cursor(),
        }
    }

    /// Current arena contents at a live function's location.
    pub fn arena_bytes(&self, id: FunctionId) -> Option<Vec<u8>> {
        let reg = self.read();
        let r = reg.records.get(&id)?;
        Some(reg.arena.read(r.entry - reg.arena.base(), r.size).to_vec())
    }
}

struct Marshaled {
    words: [u64; CALL_WORDS],
    // owns the memory the string/buffer words point into
    _scratch: Vec<u8>,
}

fn marshal(desc: &SignatureDescriptor, args: &[ArgValue], scratch_capacity: usize) -> Result<Marshaled, EnclaveError> {
    let kinds_match = desc.args().len() == args.len() && desc.args().iter().zip(args).all(|(k, a)| *k == a.kind());
    if !kinds_match {
        return Err(EnclaveError::ArityMismatch {
            expected: desc.arg_codes(),
            got: args.iter().map(|a| a.kind().code()).collect(),
        });
    }

    let mut offsets = Vec::with_capacity(args.len());
    let mut needed = 0usize;
    for arg in args {
        let len = match arg {
            ArgValue::Int(_) => 0,
            ArgValue::Str(s) => {
                if s.contains(&0) {
                    return Err(EnclaveError::InvalidArgument(
                        "string argument contains a NUL byte".into(),
                    ));
                }
                s.len() + 1
            }
            ArgValue::Buf(b) => b.len(),
        };
        needed = arena::align_up(needed, 16).unwrap_or(usize::MAX);
        offsets.push(needed);
        needed = needed.saturating_add(len);
    }
    if needed > scratch_capacity {
        return Err(EnclaveError::ScratchOverflow {
            needed,
            capacity: scratch_capacity,
        });
    }

    let mut scratch = vec![0u8; needed.max(1)];
    let base = scratch.as_mut_ptr() as u64;
    let mut words = [0u64; CALL_WORDS];
    let mut w = 0;
    for (arg, off) in args.iter().zip(offsets) {
        match arg {
            ArgValue::Int(v) => {
                words[w] = *v as u64;
                w += 1;
            }
            ArgValue::Str(s) => {
                scratch[off..off + s.len()].copy_from_slice(s);
                words[w] = base + off as u64;
                w += 1;
            }
            ArgValue::Buf(b) => {
                scratch[off..off + b.len()].copy_from_slice(b);
                words[w] = base + off as u64;
                words[w + 1] = b.len() as u64;
                w += 2;
            }
        }
    }
    Ok(Marshaled {
        words,
        _scratch: scratch,
    })
}
