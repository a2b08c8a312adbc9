//! Functions run through the enclave must return what the same bytes return
//! when called directly through their C prototype. The oracle below maps the
//! bytes itself and does not touch the enclave's arena or call path.

mod common;

use std::ffi::{c_char, CString};

use dynsgx_core::client::{compile_and_extract, Toolchain};
use dynsgx_core::corpus::Corpus;
use dynsgx_core::enclave::{ArgValue, Enclave, EnclaveConfig};

/// A private RWX copy of some machine code.
struct OracleCode {
    ptr: *mut libc::c_void,
    len: usize,
}

impl OracleCode {
    fn new(bytes: &[u8]) -> Self {
        let len = bytes.len().max(1);
        // SAFETY: anonymous private mapping, checked for MAP_FAILED below.
        let ptr = unsafe {
            libc::mmap(
                std::ptr::null_mut(),
                len,
                libc::PROT_READ | libc::PROT_WRITE | libc::PROT_EXEC,
                libc::MAP_PRIVATE | libc::MAP_ANONYMOUS,
                -1,
                0,
            )
        };
        assert_ne!(ptr, libc::MAP_FAILED, "oracle mmap failed");
        // SAFETY: the mapping is at least bytes.len() long and writable.
        unsafe { std::ptr::copy_nonoverlapping(bytes.as_ptr(), ptr.cast::<u8>(), bytes.len()) };
        Self { ptr, len }
    }

    /// # Safety
    /// `F` must be the function pointer type matching the code's C prototype.
    unsafe fn as_fn<F: Copy>(&self) -> F {
        assert_eq!(std::mem::size_of::<F>(), std::mem::size_of::<*mut libc::c_void>());
        std::mem::transmute_copy(&self.ptr)
    }
}

impl Drop for OracleCode {
    fn drop(&mut self) {
        // SAFETY: unmapping exactly what new() mapped.
        unsafe { libc::munmap(self.ptr, self.len) };
    }
}

fn int_arg(a: &ArgValue) -> i64 {
    match a {
        ArgValue::Int(v) => *v,
        other => panic!("expected an integer argument, got {other:?}"),
    }
}

fn str_arg(a: &ArgValue) -> CString {
    match a {
        ArgValue::Str(s) => CString::new(s.clone()).unwrap(),
        other => panic!("expected a string argument, got {other:?}"),
    }
}

/// Calls the oracle copy with the prototype of the named corpus function.
fn oracle_call(name: &str, code: &OracleCode, args: &[ArgValue]) -> i64 {
    // SAFETY: each arm uses the prototype declared in corpus/src/<name>.c.
    unsafe {
        match name {
            "sum" => {
                let f: extern "C" fn(i32, i32) -> i32 = code.as_fn();
                f(int_arg(&args[0]) as i32, int_arg(&args[1]) as i32) as i64
            }
            "recursive_fibonacci" | "sum_array" => {
                let f: extern "C" fn(i64) -> i64 = code.as_fn();
                f(int_arg(&args[0]))
            }
            "check_password" => {
                let f: extern "C" fn(*const c_char) -> i32 = code.as_fn();
                let s = str_arg(&args[0]);
                f(s.as_ptr()) as i64
            }
            other => panic!("no oracle prototype for {other}"),
        }
    }
}

/// The enclave returns the full rax word; for a C `int` only the low half is
/// defined.
fn narrow(name: &str, word: i64) -> i64 {
    match name {
        "sum" | "check_password" => word as i32 as i64,
        _ => word,
    }
}

#[test]
fn committed_hexstrings_agree_with_the_oracle_and_io_tables() {
    let corpus = Corpus::load(&Corpus::source_dir()).unwrap();
    let enclave = Enclave::create(EnclaveConfig::with_capacity(1 << 20)).unwrap();
    let mut checked = 0;
    for entry in corpus.entries().iter().filter(|e| e.hexstring.is_some()) {
        let bytes = corpus.hexstring_bytes(entry).unwrap();
        let id = enclave
            .register_function(&bytes, &entry.name, corpus.descriptor(entry).unwrap())
            .unwrap();
        let oracle = OracleCode::new(&bytes);
        for case in corpus.io_cases(entry).unwrap() {
            let ours = enclave.execute_function(id, &case.args).unwrap().return_word.unwrap();
            let reference = oracle_call(&entry.name, &oracle, &case.args);
            assert_eq!(narrow(&entry.name, ours), reference, "{} {:?}", entry.name, case.args);
            assert_eq!(reference, case.ret, "{} {:?}", entry.name, case.args);
            checked += 1;
        }
    }
    assert!(checked >= 11, "only {checked} io cases ran");
}

#[test]
fn sum_agrees_on_random_inputs() {
    use rand::{Rng, SeedableRng};
    let enclave = Enclave::create(EnclaveConfig::with_capacity(4096)).unwrap();
    let id = enclave
        .register_function(common::SUM, "sum", "i(ii)".parse().unwrap())
        .unwrap();
    let oracle = OracleCode::new(common::SUM);
    let mut rng = rand::rngs::StdRng::seed_from_u64(7);
    for _ in 0..2000 {
        let args = [
            ArgValue::Int(rng.gen::<i32>() as i64),
            ArgValue::Int(rng.gen::<i32>() as i64),
        ];
        let ours = enclave.execute_function(id, &args).unwrap().return_word.unwrap();
        assert_eq!(narrow("sum", ours), oracle_call("sum", &oracle, &args), "{args:?}");
    }
}

#[test]
fn rewritten_check_password_agrees_with_the_oracle() {
    let corpus = Corpus::load(&Corpus::source_dir()).unwrap();
    let entry = corpus.entry("check_password").unwrap();
    let enclave = Enclave::create(EnclaveConfig::with_capacity(1 << 20)).unwrap();
    let source = std::fs::read(corpus.path(&entry.source)).unwrap();
    // the oracle runs in this process, so the enclave's libc addresses are valid for it too
    let f = compile_and_extract(&Toolchain::new(&common::cc()), &source, &entry.name, &enclave.get_fas()).unwrap();
    let id = enclave
        .register_function(&f.bytes, &entry.name, corpus.descriptor(entry).unwrap())
        .unwrap();
    let oracle = OracleCode::new(&f.bytes);
    for case in corpus.io_cases(entry).unwrap() {
        let ours = enclave.execute_function(id, &case.args).unwrap().return_word.unwrap();
        let reference = oracle_call(&entry.name, &oracle, &case.args);
        assert_eq!(narrow(&entry.name, ours), reference, "{:?}", case.args);
        assert_eq!(reference, case.ret, "{:?}", case.args);
    }
}
