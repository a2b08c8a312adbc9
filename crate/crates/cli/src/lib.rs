//! Argument helpers shared by the `dynsgx` and `dynsgx-server` binaries.

use std::path::Path;

use anyhow::{bail, Context, Result};
use dynsgx_core::attestation::{Measurement, SigningIdentity, VerifyKey};

pub const DEFAULT_SERVER: &str = "127.0.0.1:7878";

/// Reads a value given either inline as hex or as a path to a file holding it.
pub fn hex_or_file(value: &str) -> Result<String> {
    let v = value.trim();
    if !v.is_empty() && v.bytes().all(|b| b.is_ascii_hexdigit()) && !Path::new(v).exists() {
        return Ok(v.to_string());
    }
    let text = std::fs::read_to_string(v).with_context(|| format!("{v:?} is neither hex nor a readable file"))?;
    Ok(text.trim().to_string())
}

pub fn load_verify_key(value: &str) -> Result<VerifyKey> {
    Ok(VerifyKey::from_hex(&hex_or_file(value)?)?)
}

pub fn load_measurement(value: &str) -> Result<Measurement> {
    Ok(Measurement::from_hex(&hex_or_file(value)?)?)
}

pub fn load_signing_key(path: &Path) -> Result<SigningIdentity> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    Ok(SigningIdentity::from_hex(text.trim())?)
}

/// Byte sizes such as `4096`, `64K`, `128M` or `1G` (binary multiples).
pub fn parse_size(s: &str) -> Result<usize> {
    let s = s.trim();
    let (digits, shift) = match s.char_indices().find(|(_, c)| !c.is_ascii_digit()) {
        None => (s, 0),
        Some((i, _)) => {
            let shift = match s[i..].to_ascii_lowercase().as_str() {
                "k" | "kb" | "kib" => 10,
                "m" | "mb" | "mib" => 20,
                "g" | "gb" | "gib" => 30,
                other => bail!("unknown size suffix {other:?}"),
            };
            (&s[..i], shift)
        }
    };
    let n: usize = digits.parse().with_context(|| format!("bad size {s:?}"))?;
    n.checked_mul(1usize << shift)
        .with_context(|| format!("size {s:?} overflows"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sizes() {
        assert_eq!(parse_size("4096").unwrap(), 4096);
        assert_eq!(parse_size("64K").unwrap(), 65536);
        assert_eq!(parse_size("128MiB").unwrap(), 128 << 20);
        assert_eq!(parse_size("1g").unwrap(), 1 << 30);
        assert!(parse_size("12X").is_err());
        assert!(parse_size("").is_err());
    }

    #[test]
    fn keys_inline_or_file() {
        let id = SigningIdentity::generate();
        let vk = id.verify_key().to_hex();
        assert_eq!(load_verify_key(&vk).unwrap().to_hex(), vk);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vk");
        std::fs::write(&p, format!("{vk}\n")).unwrap();
        assert_eq!(load_verify_key(p.to_str().unwrap()).unwrap().to_hex(), vk);
        assert!(load_verify_key("/nonexistent/key").is_err());
    }
}
