//! Dense rank-4 tensors and the handful of kernels needed to run the AdaIN
//! encoder and decoder.

/// Compile a function body twice, once with AVX2 and FMA enabled, and pick
/// the variant at runtime. Both variants perform identical float operations,
/// so results do not depend on the CPU.
macro_rules! multiversion {
    ($(#[$m:meta])* $vis:vis fn $name:ident($($arg:ident : $ty:ty),* $(,)?) $body:block) => {
        $(#[$m])*
        #[allow(clippy::too_many_arguments)]
        $vis fn $name($($arg: $ty),*) {
            #[inline(always)]
            #[allow(clippy::too_many_arguments)]
            fn generic($($arg: $ty),*) $body

            #[cfg(target_arch = "x86_64")]
            {
                #[target_feature(enable = "avx2,fma")]
                #[allow(clippy::too_many_arguments)]
                unsafe fn avx2($($arg: $ty),*) {
                    generic($($arg),*)
                }
                if std::arch::is_x86_feature_detected!("avx2") && std::arch::is_x86_feature_detected!("fma") {
                    // SAFETY: the required CPU features were detected above.
                    return unsafe { avx2($($arg),*) };
                }
            }
            generic($($arg),*)
        }
    };
}

mod buffer;
mod conv;
mod ops;

pub use buffer::release_buffers;
pub(crate) use buffer::{scratch, zeroed};
pub use conv::{conv2d, conv2d_fused, conv2d_with, ConvAlgo, ConvSpec};
pub(crate) use ops::relu_owned;
pub use ops::{maxpool2, reflection_pad, relu, upsample_nearest2};

use crate::error::{ensure, Result};

/// Batch, channels, height, width.
pub type Dims = [usize; 4];

/// An NCHW array of `f32` stored contiguously in row-major order.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    dims: Dims,
    data: Vec<f32>,
}

impl Tensor {
    pub fn new(dims: Dims, data: Vec<f32>) -> Result<Self> {
        ensure!(
            dims.iter().product::<usize>() == data.len(),
            Shape,
            "dims {:?} need {} values, got {}",
            dims,
            dims.iter().product::<usize>(),
            data.len()
        );
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Dims) -> Self {
        Tensor { dims, data: zeroed(dims.iter().product()) }
    }

    pub fn full(dims: Dims, value: f32) -> Self {
        Tensor { dims, data: vec![value; dims.iter().product()] }
    }

    /// Build a tensor by evaluating `f(b, c, y, x)` at every index.
    pub fn from_fn(dims: Dims, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Self {
        let [n, c, h, w] = dims;
        let mut data = Vec::with_capacity(n * c * h * w);
        for b in 0..n {
            for ch in 0..c {
                for y in 0..h {
                    for x in 0..w {
                        data.push(f(b, ch, y, x));
                    }
                }
            }
        }
        Tensor { dims, data }
    }

    pub(crate) fn from_parts(dims: Dims, data: Vec<f32>) -> Self {
        debug_assert_eq!(dims.iter().product::<usize>(), data.len());
        Tensor { dims, data }
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn batch(&self) -> usize {
        self.dims[0]
    }

    pub fn channels(&self) -> usize {
        self.dims[1]
    }

    pub fn height(&self) -> usize {
        self.dims[2]
    }

    pub fn width(&self) -> usize {
        self.dims[3]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(mut self) -> Vec<f32> {
        std::mem::take(&mut self.data)
    }

    pub fn at(&self, b: usize, c: usize, y: usize, x: usize) -> f32 {
        let [_, ch, h, w] = self.dims;
        self.data[((b * ch + c) * h + y) * w + x]
    }

    /// The `h * w` plane of one channel.
    pub fn plane(&self, b: usize, c: usize) -> &[f32] {
        let hw = self.dims[2] * self.dims[3];
        let start = (b * self.dims[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Tensor {
        Tensor { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }

    pub(crate) fn require_nonempty(&self, what: &str) -> Result<()> {
        ensure!(self.dims.iter().all(|&d| d >= 1), Shape, "{what}: tensor has a zero dimension {:?}", self.dims);
        Ok(())
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        buffer::recycle(std::mem::take(&mut self.data));
    }
}

/// Raw pointer that may be shared across rayon workers writing disjoint ranges.
#[derive(Clone, Copy)]
pub(crate) struct SyncPtr(pub *mut f32);

impl SyncPtr {
    /// Going through a method makes closures capture the whole wrapper.
    #[inline(always)]
    pub fn get(self) -> *mut f32 {
        self.0
    }
}

unsafe impl Send for SyncPtr {}
unsafe impl Sync for SyncPtr {}
