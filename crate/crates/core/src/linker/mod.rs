//! Distributed linking: the enclave publishes where its callable functions
//! live, and clients rewrite their sources to call those addresses directly.

mod address_map;
mod rewrite;

use thiserror::Error;

pub use address_map::{cast_string, parse_cast_string, parse_map_json, render_map_json, AddressMap, AddressMapEntry};
pub use rewrite::{call_expression, rewrite_source};

use crate::enclave::Enclave;
use crate::extractor::ExtractedFunction;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LinkError {
    #[error("malformed address map: {0}")]
    MalformedMap(String),
    #[error("bad cast string {0}")]
    BadCastString(String),
    #[error("duplicate name {0:?} in address map")]
    DuplicateName(String),
    #[error("{0:?} is not a valid C identifier")]
    InvalidName(String),
    #[error("unbalanced source at line {line}: {what}")]
    UnbalancedSource { line: usize, what: String },
    #[error("unresolved external symbols: {}", .0.join(", "))]
    ExternalSymbolUnresolved(Vec<String>),
}

const C_KEYWORDS: &[&str] = &[
    "auto",
    "break",
    "case",
    "char",
    "const",
    "continue",
    "default",
    "do",
    "double",
    "else",
    "enum",
    "extern",
    "float",
    "for",
    "goto",
    "if",
    "inline",
    "int",
    "long",
    "register",
    "restrict",
    "return",
    "short",
    "signed",
    "sizeof",
    "static",
    "struct",
    "switch",
    "typedef",
    "union",
    "unsigned",
    "void",
    "volatile",
    "while",
    "_Bool",
    "_Complex",
    "_Imaginary",
    "_Alignas",
    "_Alignof",
    "_Atomic",
    "_Generic",
    "_Noreturn",
    "_Static_assert",
    "_Thread_local",
];

pub fn is_c_identifier(s: &str) -> bool {
    let mut bytes = s.bytes();
    matches!(bytes.next(), Some(b) if b.is_ascii_alphabetic() || b == b'_')
        && bytes.all(|b| b.is_ascii_alphanumeric() || b == b'_')
        && !C_KEYWORDS.contains(&s)
}

/// The address map an attested client receives: runtime helpers plus every
/// live user function.
pub fn build_address_map(enclave: &Enclave) -> AddressMap {
    enclave.get_fas()
}

/// Passes only if the extracted bytes reference nothing outside themselves.
pub fn self_containment_check(extracted: &ExtractedFunction) -> Result<(), LinkError> {
    if extracted.unresolved.is_empty() {
        Ok(())
    } else {
        Err(LinkError::ExternalSymbolUnresolved(extracted.unresolved.clone()))
    }
}
