//! Pulls a function's machine code out of a compiled object by symbol.
//!
//! The bytes are taken from the symbol table's (section, value, size) triple;
//! no disassembly. Relocations that land inside the byte range name the
//! external references the payload still has.

mod elf;
mod hexstring;

use thiserror::Error;

pub use elf::{ObjectImage, ObjectKind, Relocation, Section, Symbol, STT_FUNC};
pub use hexstring::{from_hexstring, read_hexstring_file, to_hexstring};

use elf::{SHN_LORESERVE, SHT_NOBITS, STT_SECTION};

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ExtractError {
    #[error("not an ELF object")]
    NotAnObject,
    #[error("truncated object: {0}")]
    TruncatedObject(String),
    #[error("unsupported ELF class {0} (only 64-bit objects are supported)")]
    UnsupportedClass(u8),
    #[error("unsupported ELF data encoding {0} (only little-endian objects are supported)")]
    UnsupportedEncoding(u8),
    #[error("malformed object: {0}")]
    Malformed(String),
    #[error("symbol {0:?} not found")]
    SymbolNotFound(String),
    #[error("symbol {name:?} is not a function (type {kind})")]
    NotAFunction { name: String, kind: u8 },
    #[error("symbol {0:?} has zero size")]
    ZeroSize(String),
    #[error("bad hexstring: {0}")]
    BadHexstring(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExtractedFunction {
    pub name: String,
    pub bytes: Vec<u8>,
    pub section: String,
    /// Offset of the first byte within `section`.
    pub offset: u64,
    /// External symbols referenced by relocations inside the byte range.
    pub unresolved: Vec<String>,
}

impl ExtractedFunction {
    pub fn is_self_contained(&self) -> bool {
        self.unresolved.is_empty()
    }

    pub fn hexstring(&self) -> String {
        to_hexstring(&self.bytes)
    }
}

pub fn parse_object(bytes: &[u8]) -> Result<ObjectImage<'_>, ExtractError> {
    ObjectImage::parse(bytes)
}

pub fn extract_function(image: &ObjectImage<'_>, symbol_name: &str) -> Result<ExtractedFunction, ExtractError> {
    let sym = image
        .find_symbol(symbol_name)
        .ok_or_else(|| ExtractError::SymbolNotFound(symbol_name.to_string()))?;
    if sym.kind != STT_FUNC {
        return Err(ExtractError::NotAFunction {
            name: sym.name.clone(),
            kind: sym.kind,
        });
    }
    if sym.size == 0 {
        return Err(ExtractError::ZeroSize(sym.name.clone()));
    }
    if sym.shndx >= SHN_LORESERVE {
        return Err(ExtractError::Malformed(format!(
            "function {symbol_name:?} in special section {:#x}",
            sym.shndx
        )));
    }
    let shndx = sym.shndx as usize;
    let section = &image.sections[shndx];
    if section.kind == SHT_NOBITS {
        return Err(ExtractError::Malformed(format!(
            "function {symbol_name:?} in a NOBITS section"
        )));
    }

    // relocatable objects store section-relative values, linked ones addresses
    let section_offset = match image.kind {
        ObjectKind::Relocatable => sym.value,
        _ => sym
            .value
            .checked_sub(section.addr)
            .ok_or_else(|| ExtractError::Malformed(format!("{symbol_name:?} lies before its section")))?,
    };
    let in_section = section_offset
        .checked_add(sym.size)
        .is_some_and(|end| end <= section.size);
    if !in_section {
        return Err(ExtractError::Malformed(format!(
            "{symbol_name:?} ({:#x}+{:#x}) overruns section {}",
            section_offset, sym.size, section.name
        )));
    }
    let start = (section.offset + section_offset) as usize;
    let bytes = image.raw()[start..start + sym.size as usize].to_vec();

    let (lo, hi) = (sym.value, sym.value + sym.size);
    let mut unresolved: Vec<String> = Vec::new();
    for rel in &image.relocations {
        let applies = match image.kind {
            ObjectKind::Relocatable => rel.target_section as usize == shndx,
            // dynamic relocations carry virtual addresses
            _ => rel.target_section == 0 || rel.target_section as usize == shndx,
        };
        if !applies || rel.offset < lo || rel.offset >= hi {
            continue;
        }
        let name = match image.symbol_at(rel.symtab_section, rel.symbol) {
            Some(s) if s.kind == STT_SECTION => image
                .sections
                .get(s.shndx as usize)
                .map(|sec| sec.name.clone())
                .unwrap_or_else(|| format!("section#{}", s.shndx)),
            Some(s) if !s.name.is_empty() => s.name.clone(),
            _ => format!("<relocation type {}>", rel.kind),
        };
        if !unresolved.contains(&name) {
            unresolved.push(name);
        }
    }

    Ok(ExtractedFunction {
        name: sym.name.clone(),
        bytes,
        section: section.name.clone(),
        offset: section_offset,
        unresolved,
    })
}
