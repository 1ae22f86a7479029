use std::alloc::{self, Layout};
use std::fmt;
use std::ops::{Deref, DerefMut};
use std::ptr::NonNull;

use crate::error::{ErrorCode, IoError, Result};

/// Zero-initialized payload memory aligned for direct I/O.
///
/// Buffers are handed out by [`Device::buf_alloc`](crate::Device::buf_alloc)
/// and remember which device allocated them.
pub struct Buffer {
    ptr: NonNull<u8>,
    len: usize,
    layout: Layout,
    owner: u64,
}

// The buffer uniquely owns its allocation.
unsafe impl Send for Buffer {}
unsafe impl Sync for Buffer {}

impl Buffer {
    pub(crate) fn alloc(nbytes: usize, alignment: usize, owner: u64) -> Result<Buffer> {
        if nbytes == 0 {
            return Err(IoError::inval("buffer size must be positive"));
        }
        let size = nbytes
            .checked_next_multiple_of(alignment)
            .ok_or_else(|| IoError::new(ErrorCode::NoMem, "buffer size overflows"))?;
        let layout = Layout::from_size_align(size, alignment)
            .map_err(|e| IoError::new(ErrorCode::NoMem, e.to_string()))?;
        // SAFETY: layout has a non-zero size.
        let raw = unsafe { alloc::alloc_zeroed(layout) };
        let ptr = NonNull::new(raw).ok_or_else(|| {
            IoError::new(ErrorCode::NoMem, format!("cannot allocate {size} bytes"))
        })?;
        Ok(Buffer {
            ptr,
            len: nbytes,
            layout,
            owner,
        })
    }

    /// Usable length as requested at allocation.
    pub fn nbytes(&self) -> usize {
        self.len
    }

    /// Bytes actually reserved, rounded up to the alignment.
    pub fn capacity(&self) -> usize {
        self.layout.size()
    }

    pub fn alignment(&self) -> usize {
        self.layout.align()
    }

    pub fn as_ptr(&self) -> *const u8 {
        self.ptr.as_ptr()
    }

    pub fn as_mut_ptr(&mut self) -> *mut u8 {
        self.ptr.as_ptr()
    }

    pub(crate) fn owner(&self) -> u64 {
        self.owner
    }

    pub fn is_aligned_to(&self, alignment: usize) -> bool {
        alignment.is_power_of_two() && (self.ptr.as_ptr() as usize).is_multiple_of(alignment)
    }
}

impl Deref for Buffer {
    type Target = [u8];

    fn deref(&self) -> &[u8] {
        // SAFETY: ptr is valid for `capacity >= len` initialized bytes.
        unsafe { std::slice::from_raw_parts(self.ptr.as_ptr(), self.len) }
    }
}

impl DerefMut for Buffer {
    fn deref_mut(&mut self) -> &mut [u8] {
        // SAFETY: as above, and we hold the only reference.
        unsafe { std::slice::from_raw_parts_mut(self.ptr.as_ptr(), self.len) }
    }
}

impl Drop for Buffer {
    fn drop(&mut self) {
        // SAFETY: allocated in `alloc` with this exact layout.
        unsafe { alloc::dealloc(self.ptr.as_ptr(), self.layout) }
    }
}

impl fmt::Debug for Buffer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Buffer")
            .field("nbytes", &self.len)
            .field("alignment", &self.layout.align())
            .finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn small_buffer_is_page_aligned_and_zeroed() {
        let buf = Buffer::alloc(1, 4096, 0).unwrap();
        assert_eq!(buf.nbytes(), 1);
        assert!(buf.capacity() >= 4096);
        assert!(buf.is_aligned_to(4096));
        assert_eq!(&buf[..], &[0]);
    }

    #[test]
    fn huge_request_is_nomem() {
        let err = Buffer::alloc(usize::MAX - 10, 4096, 0).unwrap_err();
        assert_eq!(err.code, ErrorCode::NoMem);
    }

    proptest! {
        #[test]
        fn alignment_divides_start(nbytes in 1usize..300_000, shift in 12u32..15) {
            let align = 1usize << shift;
            let mut buf = Buffer::alloc(nbytes, align, 0).unwrap();
            prop_assert!(buf.is_aligned_to(align));
            prop_assert!(buf.capacity() >= nbytes);
            prop_assert!(buf.iter().all(|&b| b == 0));
            buf[nbytes - 1] = 0xff;
        }
    }
}
