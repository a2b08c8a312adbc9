//! The extractor's view of every corpus object checked against binutils:
//! `nm -S` for symbol value and size, `objcopy --dump-section` for the
//! section bytes and `readelf -rW` for relocations.

mod common;

use std::collections::BTreeSet;
use std::path::Path;
use std::process::Command;

use dynsgx_core::corpus::Corpus;
use dynsgx_core::extractor::{extract_function, from_hexstring, parse_object, to_hexstring, ExtractError};
use dynsgx_core::linker::{self_containment_check, LinkError};

fn tool(program: &str, args: &[&str]) -> String {
    let out = Command::new(program)
        .args(args)
        .output()
        .unwrap_or_else(|e| panic!("the {program} oracle is required for this test: {e}"));
    assert!(
        out.status.success(),
        "{program} {args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

/// (value, size) of a defined symbol according to `nm -S`.
fn nm_symbol(obj: &Path, name: &str) -> (u64, u64) {
    let listing = tool("nm", &["-S", "--defined-only", obj.to_str().unwrap()]);
    for line in listing.lines() {
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() == 4 && f[3] == name {
            return (
                u64::from_str_radix(f[0], 16).unwrap(),
                u64::from_str_radix(f[1], 16).unwrap(),
            );
        }
    }
    panic!("nm does not list {name} in {}", obj.display());
}

fn section_bytes(obj: &Path, section: &str) -> Vec<u8> {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("section.bin");
    tool(
        "objcopy",
        &[
            &format!("--dump-section={section}={}", out.display()),
            obj.to_str().unwrap(),
            dir.path().join("scratch.o").to_str().unwrap(),
        ],
    );
    std::fs::read(out).unwrap()
}

/// Symbol names of relocations against `section` whose offsets fall in [lo, hi).
fn readelf_relocs(obj: &Path, section: &str, lo: u64, hi: u64) -> BTreeSet<String> {
    let listing = tool("readelf", &["-rW", obj.to_str().unwrap()]);
    let mut current = String::new();
    let mut names = BTreeSet::new();
    for line in listing.lines() {
        if let Some(rest) = line.strip_prefix("Relocation section '") {
            current = rest.split('\'').next().unwrap().to_string();
            continue;
        }
        let applies_here = current == format!(".rela{section}") || current == format!(".rel{section}");
        let f: Vec<&str> = line.split_whitespace().collect();
        let Some(offset) = f.first().and_then(|o| u64::from_str_radix(o, 16).ok()) else {
            continue;
        };
        if applies_here && f.len() >= 5 && (lo..hi).contains(&offset) {
            names.insert(f[4].to_string());
        }
    }
    names
}

#[test]
fn corpus_objects_match_binutils() {
    let corpus = Corpus::load(&Corpus::source_dir()).unwrap();
    for entry in corpus.entries() {
        let obj = corpus.path(&entry.object);
        let data = std::fs::read(&obj).unwrap();
        let image = parse_object(&data).unwrap();
        let f = extract_function(&image, &entry.name).unwrap();

        let (value, size) = nm_symbol(&obj, &entry.name);
        assert_eq!(f.offset, value, "{}", entry.name);
        assert_eq!(f.bytes.len() as u64, size, "{}", entry.name);
        let text = section_bytes(&obj, &f.section);
        assert_eq!(f.bytes, text[value as usize..(value + size) as usize], "{}", entry.name);

        let oracle = readelf_relocs(&obj, &f.section, value, value + size);
        let ours: BTreeSet<String> = f.unresolved.iter().cloned().collect();
        assert_eq!(ours, oracle, "{}", entry.name);

        if let Some(hex) = &entry.hexstring {
            let committed = from_hexstring(std::fs::read_to_string(corpus.path(hex)).unwrap().trim()).unwrap();
            assert_eq!(committed, f.bytes, "{} committed hexstring", entry.name);
        }
    }
}

#[test]
fn sum_matches_the_listing_bytes() {
    let corpus = Corpus::load(&Corpus::source_dir()).unwrap();
    let data = std::fs::read(corpus.path(&corpus.entry("sum").unwrap().object)).unwrap();
    let f = extract_function(&parse_object(&data).unwrap(), "sum").unwrap();
    assert_eq!(f.bytes, common::SUM);
    assert!(to_hexstring(&f.bytes).starts_with(r"\x55\x48\x89\xe5"));
    self_containment_check(&f).unwrap();
}

#[test]
fn check_password_needs_strcmp_before_rewrite() {
    let corpus = Corpus::load(&Corpus::source_dir()).unwrap();
    let data = std::fs::read(corpus.path(&corpus.entry("check_password").unwrap().object)).unwrap();
    let f = extract_function(&parse_object(&data).unwrap(), "check_password").unwrap();
    assert_eq!(f.unresolved, ["strcmp"]);
    assert_eq!(
        self_containment_check(&f),
        Err(LinkError::ExternalSymbolUnresolved(vec!["strcmp".into()]))
    );
}

#[test]
fn self_recursion_needs_no_relocation() {
    let corpus = Corpus::load(&Corpus::source_dir()).unwrap();
    for name in ["recursive_fibonacci", "sum_array", "sum"] {
        let data = std::fs::read(corpus.path(&corpus.entry(name).unwrap().object)).unwrap();
        let f = extract_function(&parse_object(&data).unwrap(), name).unwrap();
        assert!(f.is_self_contained(), "{name}: {:?}", f.unresolved);
    }
}

#[test]
fn stripped_shared_object_uses_dynsym() {
    let dir = tempfile::tempdir().unwrap();
    let so = dir.path().join("libsum.so");
    let src = Corpus::source_dir().join("src/sum.c");
    let status = Command::new(common::cc())
        .args([
            "-shared",
            "-fPIC",
            "-O0",
            "-fno-stack-protector",
            "-fcf-protection=none",
        ])
        .arg(&src)
        .arg("-o")
        .arg(&so)
        .status()
        .expect("a C compiler is required for this test");
    assert!(status.success());
    tool("strip", &[so.to_str().unwrap()]);

    let dynsym = tool("nm", &["-D", "-S", "--defined-only", so.to_str().unwrap()]);
    let line = dynsym.lines().find(|l| l.ends_with(" sum")).expect("nm -D lists sum");
    let f: Vec<&str> = line.split_whitespace().collect();
    let size = u64::from_str_radix(f[1], 16).unwrap();

    let data = std::fs::read(&so).unwrap();
    let image = parse_object(&data).unwrap();
    let sym = image.find_symbol("sum").unwrap();
    assert_eq!(sym.value, u64::from_str_radix(f[0], 16).unwrap());
    let extracted = extract_function(&image, "sum").unwrap();
    assert_eq!(extracted.bytes.len() as u64, size);
    assert_eq!(extracted.bytes, common::SUM);
}

#[test]
fn rejects_non_objects() {
    assert_eq!(
        parse_object(b"definitely not elf").unwrap_err(),
        ExtractError::NotAnObject
    );
    let corpus = Corpus::load(&Corpus::source_dir()).unwrap();
    let data = std::fs::read(corpus.path(&corpus.entry("sum").unwrap().object)).unwrap();
    assert!(matches!(
        parse_object(&data[..100]),
        Err(ExtractError::TruncatedObject(_))
    ));
    let image = parse_object(&data).unwrap();
    assert_eq!(
        extract_function(&image, "nope").unwrap_err(),
        ExtractError::SymbolNotFound("nope".into())
    );
}
