//! Access to the payload fixtures under `corpus/`: the manifest, committed
//! hexstrings and expected input/output tables.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use thiserror::Error;

use crate::enclave::{ArgValue, DescriptorError, SignatureDescriptor};
use crate::extractor::{from_hexstring, ExtractError};

/// Hexstrings compiled into the binary so the client and bench harness work
/// without the corpus directory or a C toolchain.
pub mod builtin {
    pub const SUM_HEX: &str = include_str!("../../../corpus/hex/sum.hex");
    pub const RECURSIVE_FIBONACCI_HEX: &str = include_str!("../../../corpus/hex/recursive_fibonacci.hex");
    pub const SUM_ARRAY_HEX: &str = include_str!("../../../corpus/hex/sum_array.hex");

    fn decode(s: &str) -> Vec<u8> {
        crate::extractor::from_hexstring(s.trim()).expect("committed hexstring is valid")
    }

    pub fn sum() -> Vec<u8> {
        decode(SUM_HEX)
    }

    pub fn recursive_fibonacci() -> Vec<u8> {
        decode(RECURSIVE_FIBONACCI_HEX)
    }

    pub fn sum_array() -> Vec<u8> {
        decode(SUM_ARRAY_HEX)
    }
}

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("bad manifest: {0}")]
    Manifest(#[from] toml::de::Error),
    #[error("bad io table {path}: {reason}")]
    IoTable { path: PathBuf, reason: String },
    #[error("entry {0} has no committed hexstring")]
    NoHexstring(String),
    #[error("no entry named {0}")]
    UnknownEntry(String),
    #[error(transparent)]
    Hexstring(#[from] ExtractError),
    #[error(transparent)]
    Descriptor(#[from] DescriptorError),
}

fn read(path: &Path) -> Result<String, CorpusError> {
    std::fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })
}

#[derive(Debug, Clone, Deserialize)]
pub struct CorpusEntry {
    pub name: String,
    pub source: PathBuf,
    pub object: PathBuf,
    pub descriptor: String,
    #[serde(default)]
    pub hexstring: Option<PathBuf>,
    pub io: PathBuf,
    /// Calls runtime-table functions and must be rewritten against a live
    /// address map before compiling.
    #[serde(default)]
    pub requires_rewrite: bool,
}

/// One row of an expected input/output table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IoCase {
    pub args: Vec<ArgValue>,
    pub ret: i64,
}

#[derive(Deserialize)]
struct RawCase {
    args: Vec<serde_json::Value>,
    ret: i64,
}

#[derive(Debug, Clone)]
pub struct Corpus {
    root: PathBuf,
    entries: Vec<CorpusEntry>,
}

#[derive(Deserialize)]
struct Manifest {
    entry: Vec<CorpusEntry>,
}

impl Corpus {
    /// The `corpus/` directory of this source checkout.
    pub fn source_dir() -> PathBuf {
        Path::new(env!("CARGO_MANIFEST_DIR")).join("../../corpus")
    }

    pub fn load(root: &Path) -> Result<Self, CorpusError> {
        let manifest: Manifest = toml::from_str(&read(&root.join("manifest.toml"))?)?;
        Ok(Self {
            root: root.to_path_buf(),
            entries: manifest.entry,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn entries(&self) -> &[CorpusEntry] {
        &self.entries
    }

    pub fn entry(&self, name: &str) -> Result<&CorpusEntry, CorpusError> {
        self.entries
            .iter()
            .find(|e| e.name == name)
            .ok_or_else(|| CorpusError::UnknownEntry(name.to_string()))
    }

    pub fn path(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    pub fn descriptor(&self, entry: &CorpusEntry) -> Result<SignatureDescriptor, CorpusError> {
        Ok(entry.descriptor.parse()?)
    }

    pub fn hexstring_bytes(&self, entry: &CorpusEntry) -> Result<Vec<u8>, CorpusError> {
        let rel = entry
            .hexstring
            .as_ref()
            .ok_or_else(|| CorpusError::NoHexstring(entry.name.clone()))?;
        Ok(from_hexstring(read(&self.path(rel))?.trim())?)
    }

    pub fn io_cases(&self, entry: &CorpusEntry) -> Result<Vec<IoCase>, CorpusError> {
        let path = self.path(&entry.io);
        let bad = |reason: String| CorpusError::IoTable {
            path: path.clone(),
            reason,
        };
        let raw: Vec<RawCase> = serde_json::from_str(&read(&path)?).map_err(|e| bad(e.to_string()))?;
        if raw.is_empty() {
            return Err(bad("empty table".into()));
        }
        raw.into_iter()
            .map(|c| {
                let args = c
                    .args
                    .iter()
                    .map(|v| match v {
                        serde_json::Value::Number(n) => n
                            .as_i64()
                            .map(ArgValue::Int)
                            .ok_or_else(|| bad(format!("{n} is not a 64-bit integer"))),
                        serde_json::Value::String(s) => Ok(ArgValue::str(s)),
                        other => Err(bad(format!("unsupported argument {other}"))),
                    })
                    .collect::<Result<_, _>>()?;
                Ok(IoCase { args, ret: c.ret })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn manifest_and_tables() {
        let corpus = Corpus::load(&Corpus::source_dir()).unwrap();
        let names: Vec<_> = corpus.entries().iter().map(|e| e.name.as_str()).collect();
        assert_eq!(names, ["sum", "check_password", "recursive_fibonacci", "sum_array"]);
        for e in corpus.entries() {
            corpus.descriptor(e).unwrap();
            assert!(!corpus.io_cases(e).unwrap().is_empty());
            assert_eq!(e.hexstring.is_none(), e.requires_rewrite, "{}", e.name);
            if e.hexstring.is_some() {
                assert!(!corpus.hexstring_bytes(e).unwrap().is_empty());
            }
        }
        let pw = corpus.io_cases(corpus.entry("check_password").unwrap()).unwrap();
        assert_eq!(pw[0].args, vec![ArgValue::str("topsecret123")]);
        assert_eq!(pw[0].ret, 1);
    }

    #[test]
    fn builtin_matches_files() {
        let corpus = Corpus::load(&Corpus::source_dir()).unwrap();
        assert_eq!(
            builtin::sum(),
            corpus.hexstring_bytes(corpus.entry("sum").unwrap()).unwrap()
        );
        assert_eq!(builtin::sum().len(), 20);
        assert_eq!(
            builtin::recursive_fibonacci(),
            corpus
                .hexstring_bytes(corpus.entry("recursive_fibonacci").unwrap())
                .unwrap()
        );
        assert_eq!(
            builtin::sum_array(),
            corpus.hexstring_bytes(corpus.entry("sum_array").unwrap()).unwrap()
        );
    }

    #[test]
    fn missing_hexstring() {
        let corpus = Corpus::load(&Corpus::source_dir()).unwrap();
        assert!(matches!(
            corpus.hexstring_bytes(corpus.entry("check_password").unwrap()),
            Err(CorpusError::NoHexstring(_))
        ));
        assert!(matches!(corpus.entry("nope"), Err(CorpusError::UnknownEntry(_))));
    }
}
