//! Executable memory regions and the native call shim.
//!
//! A region is an anonymous private mapping that is readable, writable and
//! executable at the same time, mirroring an enclave heap configured with
//! `HeapExecutable`. Calls into it use the host's C calling convention with
//! four integer word arguments and one integer word result.

use std::ptr::NonNull;

use thiserror::Error;

/// Number of argument words passed to every native call.
pub const CALL_WORDS: usize = 4;

#[derive(Debug, Error)]
pub enum NativeError {
    #[error("platform unsupported: {0}")]
    PlatformUnsupported(String),
    #[error("could not map {len} bytes of executable memory: {reason}")]
    AllocationFailure { len: usize, reason: String },
}

/// Returns `Ok(())` when loaded payloads can run on this host.
pub fn check_platform() -> Result<(), NativeError> {
    if cfg!(all(target_arch = "x86_64", unix)) {
        Ok(())
    } else {
        Err(NativeError::PlatformUnsupported(format!(
            "payloads are x86-64 machine code; host is {}-{}",
            std::env::consts::ARCH,
            std::env::consts::OS
        )))
    }
}

/// A read+write+execute anonymous mapping.
pub struct ExecutableRegion {
    base: NonNull<u8>,
    len: usize,
}

// The region is plain memory; synchronisation of writes against calls is the
// owner's job (the enclave registry holds a lock around both).
unsafe impl Send for ExecutableRegion {}
unsafe impl Sync for ExecutableRegion {}

impl ExecutableRegion {
    #[cfg(unix)]
    pub fn new(len: usize) -> Result<Self, NativeError> {
        check_platform()?;
        if len == 0 {
            return Err(NativeError::AllocationFailure {
                len,
                reason: "zero-length region".into(),
            });
        }
        let ptr = unsafe {
            libc::mmap(
                std::ptr::null_mut(),
                len,
                libc::PROT_READ | libc::PROT_WRITE | libc::PROT_EXEC,
                libc::MAP_PRIVATE | libc::MAP_ANONYMOUS | libc::MAP_NORESERVE,
                -1,
                0,
            )
        };
        if ptr == libc::MAP_FAILED {
            let err = std::io::Error::last_os_error();
            return match err.raw_os_error() {
                // W^X enforcement (SELinux execmem, PaX) refuses the mapping
                Some(libc::EACCES) | Some(libc::EPERM) => Err(NativeError::PlatformUnsupported(format!(
                    "executable anonymous memory refused: {err}"
                ))),
                _ => Err(NativeError::AllocationFailure {
                    len,
                    reason: err.to_string(),
                }),
            };
        }
        Ok(Self {
            base: NonNull::new(ptr as *mut u8).expect("mmap returned null"),
            len,
        })
    }

    #[cfg(not(unix))]
    pub fn new(_len: usize) -> Result<Self, NativeError> {
        check_platform()?;
        Err(NativeError::PlatformUnsupported("executable regions need mmap".into()))
    }

    pub fn base(&self) -> usize {
        self.base.as_ptr() as usize
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Copies `bytes` to `offset`. Panics if the range leaves the region.
    pub fn write(&mut self, offset: usize, bytes: &[u8]) {
        let end = offset.checked_add(bytes.len()).expect("offset overflow");
        assert!(end <= self.len, "write past end of region");
        unsafe {
            std::ptr::copy_nonoverlapping(bytes.as_ptr(), self.base.as_ptr().add(offset), bytes.len());
        }
    }

    pub fn zero(&mut self, offset: usize, len: usize) {
        let end = offset.checked_add(len).expect("offset overflow");
        assert!(end <= self.len, "zero past end of region");
        unsafe { std::ptr::write_bytes(self.base.as_ptr().add(offset), 0, len) };
    }

    pub fn read(&self, offset: usize, len: usize) -> &[u8] {
        let end = offset.checked_add(len).expect("offset overflow");
        assert!(end <= self.len, "read past end of region");
        unsafe { std::slice::from_raw_parts(self.base.as_ptr().add(offset), len) }
    }
}

impl Drop for ExecutableRegion {
    fn drop(&mut self) {
        #[cfg(unix)]
        unsafe {
            libc::munmap(self.base.as_ptr() as *mut libc::c_void, self.len);
        }
    }
}

type WordFn = unsafe extern "C" fn(u64, u64, u64, u64) -> u64;

/// Calls the machine code at `entry` with four integer argument words.
///
/// Callees taking fewer arguments ignore the extra registers. The full
/// 64-bit return register is returned.
///
/// # Safety
///
/// `entry` must point at executable code that follows the C calling
/// convention and only reads the argument words it declares.
pub unsafe fn call_words(entry: usize, words: [u64; CALL_WORDS]) -> u64 {
    let f: WordFn = std::mem::transmute::<usize, WordFn>(entry);
    f(words[0], words[1], words[2], words[3])
}

/// A standalone region holding one copy of a payload, callable directly.
/// Used as the "no enclave, no channel" baseline.
pub struct DirectFunction {
    region: ExecutableRegion,
    size: usize,
}

impl DirectFunction {
    pub fn load(bytes: &[u8]) -> Result<Self, NativeError> {
        let mut region = ExecutableRegion::new(bytes.len().max(1))?;
        region.write(0, bytes);
        Ok(Self {
            region,
            size: bytes.len(),
        })
    }

    pub fn entry(&self) -> usize {
        self.region.base()
    }

    pub fn size(&self) -> usize {
        self.size
    }

    /// # Safety
    ///
    /// See [`call_words`]; the loaded bytes must be a well-behaved function.
    pub unsafe fn call(&self, words: [u64; CALL_WORDS]) -> u64 {
        call_words(self.entry(), words)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    // mov rax, rdi; add rax, rsi; ret
    const ADD64: &[u8] = &[0x48, 0x89, 0xf8, 0x48, 0x01, 0xf0, 0xc3];

    #[test]
    fn region_roundtrip_and_zero() {
        let mut r = ExecutableRegion::new(4096).unwrap();
        r.write(16, b"abc");
        assert_eq!(r.read(16, 3), b"abc");
        r.zero(16, 3);
        assert_eq!(r.read(16, 3), &[0, 0, 0]);
    }

    #[test]
    fn zero_length_region_rejected() {
        assert!(ExecutableRegion::new(0).is_err());
    }

    #[test]
    fn direct_call_adds() {
        let f = DirectFunction::load(ADD64).unwrap();
        assert_eq!(unsafe { f.call([40, 2, 0, 0]) }, 42);
        assert_eq!(f.size(), ADD64.len());
    }
}
