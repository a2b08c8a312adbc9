//! Trusted helper functions the enclave exposes to loaded payloads.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RuntimeFunction {
    pub name: String,
    /// C return type, e.g. `int` or `void *`.
    pub return_type: String,
    pub address: usize,
}

impl RuntimeFunction {
    pub fn new(name: &str, return_type: &str, address: usize) -> Self {
        Self {
            name: name.to_string(),
            return_type: return_type.to_string(),
            address,
        }
    }
}

mod sys {
    // not bound by the libc crate (takes a va_list); only its address is used
    extern "C" {
        pub fn vsnprintf();
    }
    pub use libc::*;
}

macro_rules! libc_entry {
    ($name:ident, $ret:expr) => {
        RuntimeFunction::new(stringify!($name), $ret, sys::$name as *const () as usize)
    };
}

/// The host C library's string, memory and formatting helpers, at their
/// addresses in this process.
pub fn libc_runtime_table() -> Vec<RuntimeFunction> {
    vec![
        libc_entry!(snprintf, "int"),
        libc_entry!(vsnprintf, "int"),
        libc_entry!(strcmp, "int"),
        libc_entry!(strncmp, "int"),
        libc_entry!(strlen, "unsigned long"),
        libc_entry!(strncpy, "char *"),
        libc_entry!(strncat, "char *"),
        libc_entry!(memcmp, "int"),
        libc_entry!(memcpy, "void *"),
        libc_entry!(memmove, "void *"),
        libc_entry!(memset, "void *"),
        libc_entry!(malloc, "void *"),
        libc_entry!(calloc, "void *"),
        libc_entry!(free, "void"),
    ]
}

/// Names accepted by `--runtime-table`.
pub fn runtime_table_by_name(name: &str) -> Option<Vec<RuntimeFunction>> {
    match name {
        "libc" => Some(libc_runtime_table()),
        "none" => Some(Vec::new()),
        _ => None,
    }
}
