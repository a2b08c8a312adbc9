//! `\xNN` byte strings, as printed for extracted functions.

use std::fmt::Write;

use super::ExtractError;

pub fn to_hexstring(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 4);
    for b in bytes {
        write!(s, "\\x{b:02x}").unwrap();
    }
    s
}

/// Strict inverse of [`to_hexstring`]: only lowercase `\xNN` tokens.
pub fn from_hexstring(s: &str) -> Result<Vec<u8>, ExtractError> {
    let bytes = s.as_bytes();
    if !bytes.len().is_multiple_of(4) {
        return Err(ExtractError::BadHexstring(format!(
            "length {} is not a multiple of 4",
            bytes.len()
        )));
    }
    bytes
        .chunks_exact(4)
        .enumerate()
        .map(|(i, tok)| {
            let digit = |c: u8| match c {
                b'0'..=b'9' => Some(c - b'0'),
                b'a'..=b'f' => Some(c - b'a' + 10),
                _ => None,
            };
            match (tok[0], tok[1], digit(tok[2]), digit(tok[3])) {
                (b'\\', b'x', Some(hi), Some(lo)) => Ok(hi << 4 | lo),
                _ => Err(ExtractError::BadHexstring(format!(
                    "token {i} ({:?}) is not \\xNN",
                    String::from_utf8_lossy(tok)
                ))),
            }
        })
        .collect()
}

/// Reads a hexstring file, ignoring surrounding whitespace.
pub fn read_hexstring_file(path: &std::path::Path) -> std::io::Result<Result<Vec<u8>, ExtractError>> {
    let text = std::fs::read_to_string(path)?;
    Ok(from_hexstring(text.trim()))
}
