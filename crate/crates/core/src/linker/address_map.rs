//! Name → address tables and their JSON wire form.
//!
//! On the wire the map is a JSON object whose values are cast strings of the
//! form `(*(RET(*)(0xADDR)))`, e.g.
//!
//! ```text
//! {
//!   "strcmp": "(*(int(*)(0x7f1e438179a0)))"
//! }
//! ```

use std::collections::HashSet;
use std::fmt;

use serde::de::{Deserializer, MapAccess, Visitor};
use serde::ser::{SerializeMap, Serializer};

use super::{is_c_identifier, LinkError};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct AddressMapEntry {
    pub name: String,
    pub return_type: String,
    pub address: u64,
}

impl AddressMapEntry {
    pub fn new(name: &str, return_type: &str, address: u64) -> Self {
        Self {
            name: name.to_string(),
            return_type: return_type.to_string(),
            address,
        }
    }

    pub fn cast_string(&self) -> String {
        cast_string(&self.return_type, self.address)
    }

    fn validate(&self) -> Result<(), LinkError> {
        if !is_c_identifier(&self.name) {
            return Err(LinkError::InvalidName(self.name.clone()));
        }
        if !is_return_type(&self.return_type) {
            return Err(LinkError::BadCastString(format!(
                "{}: unsupported return type {:?}",
                self.name, self.return_type
            )));
        }
        if self.address == 0 {
            return Err(LinkError::BadCastString(format!("{}: null address", self.name)));
        }
        Ok(())
    }
}

/// Return types are restricted to identifier words, spaces and `*`.
fn is_return_type(s: &str) -> bool {
    let t = s.trim();
    !t.is_empty()
        && t == s
        && s.bytes()
            .all(|b| b.is_ascii_alphanumeric() || b == b'_' || b == b' ' || b == b'*')
}

pub fn cast_string(return_type: &str, address: u64) -> String {
    format!("(*({return_type}(*)(0x{address:x})))")
}

/// Splits a cast string into return type and address.
pub fn parse_cast_string(s: &str) -> Result<(String, u64), LinkError> {
    let bad = |why: &str| LinkError::BadCastString(format!("{s:?}: {why}"));
    let inner = s
        .strip_prefix("(*(")
        .and_then(|r| r.strip_suffix(")))"))
        .ok_or_else(|| bad("expected (*(RET(*)(0xADDR)))"))?;
    let (ret, addr) = inner.rsplit_once("(*)(").ok_or_else(|| bad("missing (*)( separator"))?;
    let hex = addr.strip_prefix("0x").ok_or_else(|| bad("address lacks 0x prefix"))?;
    if hex.is_empty() || !hex.bytes().all(|b| b.is_ascii_hexdigit()) {
        return Err(bad("address is not hexadecimal"));
    }
    let address = u64::from_str_radix(hex, 16).map_err(|_| bad("address does not fit 64 bits"))?;
    if !is_return_type(ret) {
        return Err(bad("unsupported return type"));
    }
    Ok((ret.to_string(), address))
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AddressMap {
    entries: Vec<AddressMapEntry>,
}

impl AddressMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_entries(entries: Vec<AddressMapEntry>) -> Result<Self, LinkError> {
        let mut map = Self::new();
        for e in entries {
            map.push(e)?;
        }
        Ok(map)
    }

    pub fn push(&mut self, entry: AddressMapEntry) -> Result<(), LinkError> {
        entry.validate()?;
        if self.get(&entry.name).is_some() {
            return Err(LinkError::DuplicateName(entry.name));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&AddressMapEntry> {
        self.entries.iter().find(|e| e.name == name)
    }

    pub fn entries(&self) -> &[AddressMapEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(|e| e.name.as_str())
    }
}

struct JsonMap<'a>(&'a AddressMap);

impl serde::Serialize for JsonMap<'_> {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut m = serializer.serialize_map(Some(self.0.len()))?;
        for e in self.0.entries() {
            m.serialize_entry(&e.name, &e.cast_string())?;
        }
        m.end()
    }
}

/// Object members in document order, duplicates kept so they can be rejected.
struct RawPairs(Vec<(String, String)>);

impl<'de> serde::Deserialize<'de> for RawPairs {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct V;
        impl<'de> Visitor<'de> for V {
            type Value = RawPairs;
            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a JSON object of name to cast-string")
            }
            fn visit_map<A: MapAccess<'de>>(self, mut access: A) -> Result<RawPairs, A::Error> {
                let mut pairs = Vec::new();
                while let Some((k, v)) = access.next_entry::<String, String>()? {
                    pairs.push((k, v));
                }
                Ok(RawPairs(pairs))
            }
        }
        deserializer.deserialize_map(V)
    }
}

pub fn render_map_json(map: &AddressMap) -> Vec<u8> {
    serde_json::to_vec_pretty(&JsonMap(map)).expect("string map always serializes")
}

pub fn parse_map_json(bytes: &[u8]) -> Result<AddressMap, LinkError> {
    let RawPairs(pairs) = serde_json::from_slice(bytes).map_err(|e| LinkError::MalformedMap(e.to_string()))?;
    let mut seen = HashSet::new();
    let mut map = AddressMap::new();
    for (name, cast) in pairs {
        if !seen.insert(name.clone()) {
            return Err(LinkError::MalformedMap(format!("duplicate key {name:?}")));
        }
        let (return_type, address) = parse_cast_string(&cast)?;
        map.push(AddressMapEntry {
            name,
            return_type,
            address,
        })?;
    }
    Ok(map)
}
