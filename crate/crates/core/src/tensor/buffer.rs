//! Recycling of large tensor buffers.
//!
//! Feature maps of a single forward pass run to hundreds of megabytes each.
//! Fresh allocations of that size come straight from the kernel and are
//! page-faulted in on first write, which costs more than the memset of a
//! reused buffer. Dropped tensors above [`MIN_LEN`] floats park their storage
//! here, bounded by [`MAX_BYTES`] in total.

use std::sync::Mutex;

const MIN_LEN: usize = 1 << 20;
const MAX_BYTES: usize = 1 << 30;

static POOL: Mutex<Vec<Vec<f32>>> = Mutex::new(Vec::new());

fn bytes(pool: &[Vec<f32>]) -> usize {
    pool.iter().map(|v| v.capacity() * 4).sum()
}

/// A zero-filled vector of `len` floats, reusing a parked buffer when one fits.
pub(crate) fn zeroed(len: usize) -> Vec<f32> {
    let mut v = take(len).unwrap_or_default();
    v.clear();
    v.resize(len, 0.0);
    v
}

/// A vector of `len` floats with unspecified contents, for outputs that the
/// caller overwrites completely.
pub(crate) fn scratch(len: usize) -> Vec<f32> {
    let mut v = take(len).unwrap_or_default();
    v.resize(len, 0.0);
    v.truncate(len);
    v
}

fn take(len: usize) -> Option<Vec<f32>> {
    if len >= MIN_LEN {
        let mut pool = POOL.lock().unwrap_or_else(|e| e.into_inner());
        let best = pool
            .iter()
            .enumerate()
            .filter(|(_, v)| v.capacity() >= len && v.capacity() <= 4 * len)
            .min_by_key(|(_, v)| v.capacity())
            .map(|(i, _)| i);
        return best.map(|i| pool.swap_remove(i));
    }
    None
}

pub(crate) fn recycle(v: Vec<f32>) {
    if v.capacity() < MIN_LEN {
        return;
    }
    let mut pool = POOL.lock().unwrap_or_else(|e| e.into_inner());
    if bytes(&pool) + v.capacity() * 4 <= MAX_BYTES {
        pool.push(v);
    }
}

/// Free every parked buffer.
pub fn release_buffers() {
    POOL.lock().unwrap_or_else(|e| e.into_inner()).clear();
}
