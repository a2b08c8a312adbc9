use crate::native::{ExecutableRegion, NativeError};

/// Entry alignment for placed functions.
pub const ENTRY_ALIGN: usize = 16;

pub(crate) fn align_up(n: usize, align: usize) -> Option<usize> {
    n.checked_add(align - 1).map(|v| v & !(align - 1))
}

/// Bump allocator over one executable region.
///
/// `cursor` is the end of the highest live allocation. Freed ranges below the
/// cursor stay as zero-filled holes; code is never moved because its address
/// may already have been published.
pub struct ExecArena {
    region: ExecutableRegion,
    cursor: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArenaFull {
    pub requested: usize,
    pub available: usize,
}

impl ExecArena {
    pub fn new(capacity: usize) -> Result<Self, NativeError> {
        Ok(Self {
            region: ExecutableRegion::new(capacity)?,
            cursor: 0,
        })
    }

    pub fn base(&self) -> usize {
        self.region.base()
    }

    pub fn capacity(&self) -> usize {
        self.region.len()
    }

    pub fn cursor(&self) -> usize {
        self.cursor
    }

    /// Copies `bytes` to the next aligned offset and returns that offset.
    /// Nothing changes on failure.
    pub fn place(&mut self, bytes: &[u8]) -> Result<usize, ArenaFull> {
        let available = self
            .capacity()
            .saturating_sub(align_up(self.cursor, ENTRY_ALIGN).unwrap_or(usize::MAX));
        let offset = align_up(self.cursor, ENTRY_ALIGN)
            .filter(|off| off.checked_add(bytes.len()).is_some_and(|end| end <= self.capacity()))
            .ok_or(ArenaFull {
                requested: bytes.len(),
                available,
            })?;
        self.region.write(offset, bytes);
        self.cursor = offset + bytes.len();
        Ok(offset)
    }

    pub fn zero(&mut self, offset: usize, len: usize) {
        self.region.zero(offset, len);
    }

    /// Lowers the cursor after a release. `new_cursor` must not exceed the
    /// current cursor.
    pub fn trim(&mut self, new_cursor: usize) {
        assert!(new_cursor <= self.cursor);
        self.cursor = new_cursor;
    }

    pub fn reset(&mut self) {
        let used = self.cursor;
        self.region.zero(0, used);
        self.cursor = 0;
    }

    pub fn read(&self, offset: usize, len: usize) -> &[u8] {
        self.region.read(offset, len)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn placements_are_aligned() {
        let mut a = ExecArena::new(4096).unwrap();
        assert_eq!(a.place(&[1; 20]).unwrap(), 0);
        assert_eq!(a.cursor(), 20);
        assert_eq!(a.place(&[2; 3]).unwrap(), 32);
        assert_eq!(a.cursor(), 35);
        assert_eq!(a.read(32, 3), &[2, 2, 2]);
    }

    #[test]
    fn full_arena_is_unchanged() {
        let mut a = ExecArena::new(64).unwrap();
        a.place(&[1; 40]).unwrap();
        let err = a.place(&[2; 20]).unwrap_err();
        assert_eq!(
            err,
            ArenaFull {
                requested: 20,
                available: 16
            }
        );
        assert_eq!(a.cursor(), 40);
        assert_eq!(a.place(&[3; 16]).unwrap(), 48);
        assert_eq!(a.cursor(), 64);
    }

    #[test]
    fn reset_zeroes_used_prefix() {
        let mut a = ExecArena::new(4096).unwrap();
        a.place(&[0xcc; 100]).unwrap();
        a.reset();
        assert_eq!(a.cursor(), 0);
        assert!(a.read(0, 100).iter().all(|&b| b == 0));
    }
}
