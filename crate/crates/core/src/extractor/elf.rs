//! Minimal ELF64 little-endian reader: section headers, symbol tables and
//! relocation tables. Anything else in the file is ignored.

use super::ExtractError;

pub const SHT_SYMTAB: u32 = 2;
pub const SHT_STRTAB: u32 = 3;
pub const SHT_RELA: u32 = 4;
pub const SHT_NOBITS: u32 = 8;
pub const SHT_REL: u32 = 9;
pub const SHT_DYNSYM: u32 = 11;

pub const STT_FUNC: u8 = 2;
pub const STT_SECTION: u8 = 3;

pub const SHN_UNDEF: u16 = 0;
pub const SHN_LORESERVE: u16 = 0xff00;

const EHDR_SIZE: usize = 64;
const SHDR_SIZE: usize = 64;
const SYM_SIZE: usize = 24;
const RELA_SIZE: usize = 24;
const REL_SIZE: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ObjectKind {
    Relocatable,
    Executable,
    Shared,
    Other(u16),
}

#[derive(Debug, Clone)]
pub struct Section {
    pub name: String,
    pub kind: u32,
    pub flags: u64,
    pub addr: u64,
    pub offset: u64,
    pub size: u64,
    pub link: u32,
    pub info: u32,
}

#[derive(Debug, Clone)]
pub struct Symbol {
    pub name: String,
    pub value: u64,
    pub size: u64,
    pub kind: u8,
    pub bind: u8,
    pub shndx: u16,
}

impl Symbol {
    pub fn is_defined(&self) -> bool {
        self.shndx != SHN_UNDEF
    }
}

#[derive(Debug, Clone)]
pub struct Relocation {
    /// Section the relocation applies to (0 for dynamic relocations).
    pub target_section: u32,
    /// Symbol table section the symbol index refers to.
    pub symtab_section: u32,
    pub offset: u64,
    pub symbol: u32,
    pub kind: u32,
    pub addend: i64,
}

/// A parsed view over object-file bytes.
#[derive(Debug, Clone)]
pub struct ObjectImage<'a> {
    pub(crate) data: &'a [u8],
    pub kind: ObjectKind,
    pub machine: u16,
    pub sections: Vec<Section>,
    /// Symbols keyed by the index of the section holding them.
    pub symbol_tables: Vec<(usize, Vec<Symbol>)>,
    pub relocations: Vec<Relocation>,
}

fn u16_at(d: &[u8], off: usize) -> u16 {
    u16::from_le_bytes(d[off..off + 2].try_into().unwrap())
}

fn u32_at(d: &[u8], off: usize) -> u32 {
    u32::from_le_bytes(d[off..off + 4].try_into().unwrap())
}

fn u64_at(d: &[u8], off: usize) -> u64 {
    u64::from_le_bytes(d[off..off + 8].try_into().unwrap())
}

fn range(data: &[u8], offset: u64, size: u64, what: &str) -> Result<std::ops::Range<usize>, ExtractError> {
    let start = usize::try_from(offset).ok();
    let end = offset.checked_add(size).and_then(|e| usize::try_from(e).ok());
    match (start, end) {
        (Some(s), Some(e)) if e <= data.len() => Ok(s..e),
        _ => Err(ExtractError::TruncatedObject(format!(
            "{what} at {offset:#x}+{size:#x} exceeds file size {:#x}",
            data.len()
        ))),
    }
}

fn c_string(table: &[u8], off: u32) -> Result<String, ExtractError> {
    let tail = table
        .get(off as usize..)
        .ok_or_else(|| ExtractError::Malformed(format!("string offset {off:#x} outside string table")))?;
    let end = tail
        .iter()
        .position(|&b| b == 0)
        .ok_or_else(|| ExtractError::Malformed("unterminated string table entry".into()))?;
    Ok(String::from_utf8_lossy(&tail[..end]).into_owned())
}

impl<'a> ObjectImage<'a> {
    pub fn parse(data: &'a [u8]) -> Result<Self, ExtractError> {
        if data.len() < 4 || &data[..4] != b"\x7fELF" {
            return Err(ExtractError::NotAnObject);
        }
        if data.len() < EHDR_SIZE {
            return Err(ExtractError::TruncatedObject(format!(
                "{} bytes is shorter than the file header",
                data.len()
            )));
        }
        if data[4] != 2 {
            return Err(ExtractError::UnsupportedClass(data[4]));
        }
        if data[5] != 1 {
            return Err(ExtractError::UnsupportedEncoding(data[5]));
        }
        let kind = match u16_at(data, 0x10) {
            1 => ObjectKind::Relocatable,
            2 => ObjectKind::Executable,
            3 => ObjectKind::Shared,
            t => ObjectKind::Other(t),
        };
        let machine = u16_at(data, 0x12);
        let shoff = u64_at(data, 0x28);
        let shentsize = u16_at(data, 0x3a) as usize;
        let shnum = u16_at(data, 0x3c) as usize;
        let shstrndx = u16_at(data, 0x3e) as usize;

        if shnum > 0 && shentsize != SHDR_SIZE {
            return Err(ExtractError::Malformed(format!("section header size {shentsize}")));
        }
        let table = range(data, shoff, (shnum * SHDR_SIZE) as u64, "section header table")?;
        let headers = &data[table];

        let mut sections: Vec<Section> = (0..shnum)
            .map(|i| {
                let h = &headers[i * SHDR_SIZE..(i + 1) * SHDR_SIZE];
                Section {
                    name: String::new(),
                    kind: u32_at(h, 4),
                    flags: u64_at(h, 8),
                    addr: u64_at(h, 0x10),
                    offset: u64_at(h, 0x18),
                    size: u64_at(h, 0x20),
                    link: u32_at(h, 0x28),
                    info: u32_at(h, 0x2c),
                }
            })
            .collect();
        for s in &sections {
            if s.kind != SHT_NOBITS {
                range(data, s.offset, s.size, "section contents")?;
            }
        }

        if shnum > 0 {
            let strtab = sections
                .get(shstrndx)
                .filter(|s| s.kind == SHT_STRTAB)
                .ok_or_else(|| ExtractError::Malformed(format!("bad section name table index {shstrndx}")))?;
            let names = &data[range(data, strtab.offset, strtab.size, "section names")?];
            let name_offsets: Vec<u32> = (0..shnum).map(|i| u32_at(headers, i * SHDR_SIZE)).collect();
            for (s, off) in sections.iter_mut().zip(name_offsets) {
                s.name = c_string(names, off)?;
            }
        }

        let mut image = Self {
            data,
            kind,
            machine,
            sections,
            symbol_tables: Vec::new(),
            relocations: Vec::new(),
        };
        image.read_symbols()?;
        image.read_relocations()?;
        Ok(image)
    }

    fn section_bytes(&self, idx: usize) -> Result<&'a [u8], ExtractError> {
        let s = self
            .sections
            .get(idx)
            .ok_or_else(|| ExtractError::Malformed(format!("section index {idx} out of range")))?;
        Ok(&self.data[range(self.data, s.offset, s.size, "section")?])
    }

    fn read_symbols(&mut self) -> Result<(), ExtractError> {
        for idx in 0..self.sections.len() {
            let sec = &self.sections[idx];
            if sec.kind != SHT_SYMTAB && sec.kind != SHT_DYNSYM {
                continue;
            }
            let link = sec.link as usize;
            if self.sections.get(link).map(|s| s.kind) != Some(SHT_STRTAB) {
                return Err(ExtractError::Malformed(format!(
                    "symbol table {} links to non-string section {link}",
                    sec.name
                )));
            }
            let raw = self.section_bytes(idx)?;
            let strings = self.section_bytes(link)?;
            let mut symbols = Vec::with_capacity(raw.len() / SYM_SIZE);
            for e in raw.chunks_exact(SYM_SIZE) {
                let info = e[4];
                let shndx = u16_at(e, 6);
                if shndx != SHN_UNDEF && shndx < SHN_LORESERVE && shndx as usize >= self.sections.len() {
                    return Err(ExtractError::Malformed(format!(
                        "symbol section index {shndx} out of range"
                    )));
                }
                symbols.push(Symbol {
                    name: c_string(strings, u32_at(e, 0))?,
                    value: u64_at(e, 8),
                    size: u64_at(e, 16),
                    kind: info & 0xf,
                    bind: info >> 4,
                    shndx,
                });
            }
            self.symbol_tables.push((idx, symbols));
        }
        Ok(())
    }

    fn read_relocations(&mut self) -> Result<(), ExtractError> {
        for idx in 0..self.sections.len() {
            let sec = &self.sections[idx];
            let entsize = match sec.kind {
                SHT_RELA => RELA_SIZE,
                SHT_REL => REL_SIZE,
                _ => continue,
            };
            let (target_section, symtab_section) = (sec.info, sec.link);
            let raw = self.section_bytes(idx)?;
            for e in raw.chunks_exact(entsize) {
                let info = u64_at(e, 8);
                self.relocations.push(Relocation {
                    target_section,
                    symtab_section,
                    offset: u64_at(e, 0),
                    symbol: (info >> 32) as u32,
                    kind: info as u32,
                    addend: if entsize == RELA_SIZE { u64_at(e, 16) as i64 } else { 0 },
                });
            }
        }
        Ok(())
    }

    pub fn symbols(&self) -> impl Iterator<Item = &Symbol> {
        self.symbol_tables.iter().flat_map(|(_, syms)| syms.iter())
    }

    /// Looks `name` up among defined symbols: the static table first, then
    /// the dynamic one (for stripped shared objects).
    pub fn find_symbol(&self, name: &str) -> Option<&Symbol> {
        let in_kind = |kind: u32| {
            self.symbol_tables
                .iter()
                .filter(move |(idx, _)| self.sections[*idx].kind == kind)
                .flat_map(|(_, syms)| syms.iter())
                .find(|s| s.name == name && s.is_defined())
        };
        in_kind(SHT_SYMTAB).or_else(|| in_kind(SHT_DYNSYM))
    }

    pub fn symbol_at(&self, symtab_section: u32, index: u32) -> Option<&Symbol> {
        self.symbol_tables
            .iter()
            .find(|(idx, _)| *idx == symtab_section as usize)
            .and_then(|(_, syms)| syms.get(index as usize))
    }

    pub(crate) fn raw(&self) -> &'a [u8] {
        self.data
    }
}

#[cfg(test)]
pub(crate) mod testutil {
    //! Builds small relocatable objects by hand for parser tests.

    pub struct Obj {
        pub text: Vec<u8>,
        /// (name, value, size, type, defined)
        pub symbols: Vec<(&'static str, u64, u64, u8, bool)>,
        /// (offset in .text, symbol index (1-based into `symbols`), type)
        pub relocs: Vec<(u64, u32, u32)>,
    }

    fn push_u16(v: &mut Vec<u8>, x: u16) {
        v.extend_from_slice(&x.to_le_bytes());
    }
    fn push_u32(v: &mut Vec<u8>, x: u32) {
        v.extend_from_slice(&x.to_le_bytes());
    }
    fn push_u64(v: &mut Vec<u8>, x: u64) {
        v.extend_from_slice(&x.to_le_bytes());
    }

    impl Obj {
        pub fn build(&self) -> Vec<u8> {
            // sections: 0 null, 1 .text, 2 .symtab, 3 .strtab, 4 .rela.text, 5 .shstrtab
            let shstr = b"\0.text\0.symtab\0.strtab\0.rela.text\0.shstrtab\0".to_vec();
            let name_off = |n: &str| {
                let needle = format!("\0{n}\0");
                shstr
                    .windows(needle.len())
                    .position(|w| w == needle.as_bytes())
                    .unwrap() as u32
                    + 1
            };
            let mut strtab = vec![0u8];
            let mut symtab = vec![0u8; 24];
            for (name, value, size, kind, defined) in &self.symbols {
                let off = strtab.len() as u32;
                strtab.extend_from_slice(name.as_bytes());
                strtab.push(0);
                push_u32(&mut symtab, off);
                symtab.push((1 << 4) | kind);
                symtab.push(0);
                push_u16(&mut symtab, if *defined { 1 } else { 0 });
                push_u64(&mut symtab, *value);
                push_u64(&mut symtab, *size);
            }
            let mut rela = Vec::new();
            for (off, sym, kind) in &self.relocs {
                push_u64(&mut rela, *off);
                push_u64(&mut rela, ((*sym as u64) << 32) | *kind as u64);
                push_u64(&mut rela, (-4i64) as u64);
            }

            let mut out = vec![0u8; 64];
            let place = |blob: &[u8], out: &mut Vec<u8>| {
                while !out.len().is_multiple_of(8) {
                    out.push(0);
                }
                let off = out.len() as u64;
                out.extend_from_slice(blob);
                off
            };
            let text_off = place(&self.text, &mut out);
            let sym_off = place(&symtab, &mut out);
            let str_off = place(&strtab, &mut out);
            let rela_off = place(&rela, &mut out);
            let shstr_off = place(&shstr, &mut out);
            while !out.len().is_multiple_of(8) {
                out.push(0);
            }
            let shoff = out.len() as u64;

            let mut sh = |name: u32, kind: u32, off: u64, size: u64, link: u32, info: u32, entsize: u64| {
                push_u32(&mut out, name);
                push_u32(&mut out, kind);
                push_u64(&mut out, 0);
                push_u64(&mut out, 0);
                push_u64(&mut out, off);
                push_u64(&mut out, size);
                push_u32(&mut out, link);
                push_u32(&mut out, info);
                push_u64(&mut out, 16);
                push_u64(&mut out, entsize);
            };
            sh(0, 0, 0, 0, 0, 0, 0);
            sh(name_off(".text"), 1, text_off, self.text.len() as u64, 0, 0, 0);
            sh(name_off(".symtab"), 2, sym_off, symtab.len() as u64, 3, 1, 24);
            sh(name_off(".strtab"), 3, str_off, strtab.len() as u64, 0, 0, 0);
            sh(name_off(".rela.text"), 4, rela_off, rela.len() as u64, 2, 1, 24);
            sh(name_off(".shstrtab"), 3, shstr_off, shstr.len() as u64, 0, 0, 0);

            out[..4].copy_from_slice(b"\x7fELF");
            out[4] = 2;
            out[5] = 1;
            out[6] = 1;
            out[0x10..0x12].copy_from_slice(&1u16.to_le_bytes());
            out[0x12..0x14].copy_from_slice(&62u16.to_le_bytes());
            out[0x28..0x30].copy_from_slice(&shoff.to_le_bytes());
            out[0x34..0x36].copy_from_slice(&64u16.to_le_bytes());
            out[0x3a..0x3c].copy_from_slice(&64u16.to_le_bytes());
            out[0x3c..0x3e].copy_from_slice(&6u16.to_le_bytes());
            out[0x3e..0x40].copy_from_slice(&5u16.to_le_bytes());
            out
        }
    }
}
