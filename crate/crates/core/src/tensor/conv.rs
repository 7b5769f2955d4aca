//! Stride-1 convolution.
//!
//! All code paths share one contract. 1x1 kernels are a single GEMM over the
//! channel planes, 3x3 kernels with enough channels use Winograd F(4x4, 3x3),
//! and everything else goes through im2col + GEMM. Winograd F(2x2, 3x3) and a
//! direct row-accumulation path are kept for comparison.
//!
//! [`conv2d`] is the unpadded primitive. [`conv2d_fused`] additionally reads
//! its input through a reflection pad and applies ReLU on the way out, which
//! saves two full passes over large feature maps; it must equal
//! `relu(conv2d(reflection_pad(x)))` exactly.
//!
//! Work is split into blocks of output rows (or tile rows) that are computed
//! independently, so the result does not depend on the number of rayon workers.

use rayon::prelude::*;

use super::{SyncPtr, Tensor};
use crate::error::{ensure, Error, Result};

/// Weights and bias for one convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvSpec {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    weight: Tensor,
    bias: Vec<f32>,
}

impl ConvSpec {
    /// `weight` is `(out, in, k, k)` and `bias` has `out` entries.
    pub fn new(weight: Tensor, bias: Vec<f32>) -> Result<Self> {
        let [out_channels, in_channels, kh, kw] = weight.dims();
        ensure!(kh == kw, Shape, "kernel must be square, got {kh}x{kw}");
        ensure!(kh == 1 || kh == 3, Shape, "only 1x1 and 3x3 kernels are supported, got {kh}x{kw}");
        ensure!(out_channels > 0 && in_channels > 0, Shape, "conv needs positive channel counts");
        ensure!(bias.len() == out_channels, Shape, "bias has {} entries for {} output channels", bias.len(), out_channels);
        Ok(ConvSpec { in_channels, out_channels, kernel: kh, weight, bias })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }
}

/// Which implementation `conv2d_with` should use.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvAlgo {
    Auto,
    /// Row-by-row accumulation.
    Direct,
    Im2col,
    /// Winograd F(2x2, 3x3). Only valid for 3x3 kernels.
    Winograd,
    /// Winograd F(4x4, 3x3). Fewer multiplies, slightly larger rounding error.
    Winograd4,
}

pub fn conv2d(input: &Tensor, spec: &ConvSpec) -> Result<Tensor> {
    conv2d_with(input, spec, ConvAlgo::Auto)
}

pub fn conv2d_with(input: &Tensor, spec: &ConvSpec, algo: ConvAlgo) -> Result<Tensor> {
    run(input, spec, algo, 0, false)
}

/// `relu(conv2d(reflection_pad(input, pad)))` (ReLU only when `relu` is set)
/// without materializing the padded input.
pub fn conv2d_fused(input: &Tensor, spec: &ConvSpec, pad: usize, relu: bool) -> Result<Tensor> {
    run(input, spec, ConvAlgo::Auto, pad, relu)
}

fn run(input: &Tensor, spec: &ConvSpec, algo: ConvAlgo, pad: usize, relu: bool) -> Result<Tensor> {
    input.require_nonempty("conv2d")?;
    let [n, c, h, w] = input.dims();
    let k = spec.kernel;
    ensure!(c == spec.in_channels, Shape, "conv2d expects {} input channels, got {}", spec.in_channels, c);
    if pad > 0 {
        ensure!(pad < h.min(w), InvalidArgument, "reflection pad {pad} needs a map larger than {h}x{w}");
        if k == 1 {
            let padded = super::reflection_pad(input, pad)?;
            return run(&padded, spec, algo, 0, relu);
        }
    }
    let (ph, pw) = (h + 2 * pad, w + 2 * pad);
    ensure!(ph >= k && pw >= k, Shape, "input {ph}x{pw} is smaller than the {k}x{k} kernel");
    let (oh, ow) = (ph - k + 1, pw - k + 1);
    let mut out = super::scratch(n * spec.out_channels * oh * ow);

    let algo = match algo {
        ConvAlgo::Auto if k == 3 && c >= 16 && spec.out_channels >= 16 => ConvAlgo::Winograd4,
        ConvAlgo::Auto if k == 3 && c >= 16 && spec.out_channels <= NARROW => ConvAlgo::Direct,
        ConvAlgo::Auto => ConvAlgo::Im2col,
        ConvAlgo::Winograd | ConvAlgo::Winograd4 if k != 3 => {
            return Err(Error::InvalidArgument("winograd convolution needs a 3x3 kernel".into()))
        }
        other => other,
    };

    let in_plane = c * h * w;
    let out_plane = spec.out_channels * oh * ow;
    let transformed = match algo {
        ConvAlgo::Winograd => winograd_kernel::<F2>(spec),
        ConvAlgo::Winograd4 => winograd_kernel::<F4>(spec),
        _ => Vec::new(),
    };
    let fused = matches!(algo, ConvAlgo::Winograd | ConvAlgo::Winograd4);
    for b in 0..n {
        let src = Source { data: &input.data()[b * in_plane..(b + 1) * in_plane], h, w, pad };
        let dst = &mut out[b * out_plane..(b + 1) * out_plane];
        match (algo, k) {
            (ConvAlgo::Direct, _) => direct(src, dst, spec),
            (_, 1) => pointwise(src.data, dst, spec, h * w),
            (ConvAlgo::Winograd, _) => winograd::<F2>(src, dst, spec, &transformed, relu),
            (ConvAlgo::Winograd4, _) => winograd::<F4>(src, dst, spec, &transformed, relu),
            _ => im2col(src, dst, spec),
        }
        if relu && !fused {
            dst.par_chunks_mut(1 << 16).for_each(|c| c.iter_mut().for_each(|v| *v = v.max(0.0)));
        }
    }
    Ok(Tensor::from_parts([n, spec.out_channels, oh, ow], out))
}

/// One batch item viewed through a reflection pad.
#[derive(Clone, Copy)]
struct Source<'a> {
    data: &'a [f32],
    h: usize,
    w: usize,
    pad: usize,
}

impl<'a> Source<'a> {
    fn height(&self) -> usize {
        self.h + 2 * self.pad
    }

    fn width(&self) -> usize {
        self.w + 2 * self.pad
    }

    /// Padded row `y` of channel `c`. Borrows the input directly when no pad
    /// is needed, otherwise assembles the row in `buf`.
    fn row<'b>(&self, c: usize, y: usize, buf: &'b mut Vec<f32>) -> &'b [f32]
    where
        'a: 'b,
    {
        if self.pad == 0 {
            let (h, w) = (self.h, self.w);
            return &self.data[(c * h + y) * w..(c * h + y + 1) * w];
        }
        self.row_into(c, y, buf);
        buf
    }

    /// Padded row `y` of channel `c`, always copied into `buf`.
    fn row_into(&self, c: usize, y: usize, buf: &mut Vec<f32>) {
        let (h, w, p) = (self.h, self.w, self.pad);
        let plane = &self.data[c * h * w..(c + 1) * h * w];
        let sy = reflect(y as isize - p as isize, h);
        let src = &plane[sy * w..(sy + 1) * w];
        buf.clear();
        buf.extend((0..p).map(|i| src[reflect(i as isize - p as isize, w)]));
        buf.extend_from_slice(src);
        buf.extend((0..p).map(|i| src[reflect((w + i) as isize, w)]));
    }
}

fn reflect(i: isize, len: usize) -> usize {
    let len = len as isize;
    (if i < 0 {
        -i
    } else if i >= len {
        2 * (len - 1) - i
    } else {
        i
    }) as usize
}

/// `c[m x n] = a[m x k] * b[k x n]`, all row-major with the given row strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f32], lda: usize, b: &[f32], ldb: usize, c: *mut f32, ldc: usize) {
    assert!(a.len() >= (m - 1) * lda + k);
    assert!(b.len() >= (k - 1) * ldb + n);
    // SAFETY: a and b bounds are checked above; callers guarantee c covers m
    // rows of stride ldc and n columns, and that no other thread writes them.
    unsafe {
        matrixmultiply::sgemm(m, k, n, 1.0, a.as_ptr(), lda as isize, 1, b.as_ptr(), ldb as isize, 1, 0.0, c, ldc as isize, 1);
    }
}

fn add_bias(dst: &mut [f32], bias: &[f32], plane: usize) {
    for (chunk, &b) in dst.chunks_exact_mut(plane).zip(bias) {
        if b != 0.0 {
            chunk.iter_mut().for_each(|v| *v += b);
        }
    }
}

fn pointwise(src: &[f32], dst: &mut [f32], spec: &ConvSpec, hw: usize) {
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    const BLOCK: usize = 4096;
    let ptr = SyncPtr(dst.as_mut_ptr());
    (0..hw.div_ceil(BLOCK)).into_par_iter().for_each(|blk| {
        let p0 = blk * BLOCK;
        let np = (hw - p0).min(BLOCK);
        // SAFETY: each block writes columns [p0, p0 + np) of every output row; blocks are disjoint.
        gemm(cout, cin, np, spec.weight.data(), cin, &src[p0..], hw, unsafe { ptr.get().add(p0) }, hw);
    });
    add_bias(dst, &spec.bias, hw);
}

/// Layers with at most this many outputs use a register-blocked direct kernel.
const NARROW: usize = 4;
const LANES: usize = 16;

fn direct(src: Source<'_>, dst: &mut [f32], spec: &ConvSpec) {
    if spec.out_channels <= NARROW && spec.kernel == 3 {
        return direct_narrow(src, dst, spec);
    }
    let k = spec.kernel;
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let (oh, ow) = (src.height() - k + 1, src.width() - k + 1);
    let out_hw = oh * ow;
    let wt = spec.weight.data();
    let ptr = SyncPtr(dst.as_mut_ptr());
    (0..oh).into_par_iter().for_each_init(
        || (vec![0.0f32; ow], Vec::new()),
        |(acc, buf), y| {
            for o in 0..cout {
                acc.fill(spec.bias[o]);
                for ci in 0..cin {
                    for ky in 0..k {
                        let row = src.row(ci, y + ky, buf);
                        for kx in 0..k {
                            let wv = wt[((o * cin + ci) * k + ky) * k + kx];
                            axpy(acc, &row[kx..kx + ow], wv);
                        }
                    }
                }
                // SAFETY: row y of channel o is written only by this iteration.
                let out = unsafe { std::slice::from_raw_parts_mut(ptr.get().add(o * out_hw + y * ow), ow) };
                out.copy_from_slice(acc);
            }
        },
    );
}

fn direct_narrow(src: Source<'_>, dst: &mut [f32], spec: &ConvSpec) {
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let (oh, ow) = (src.height() - 2, src.width() - 2);
    let out_hw = oh * ow;
    // weights as [in][tap][NARROW], unused outputs zero
    let mut wt = vec![0.0f32; cin * 9 * NARROW];
    for o in 0..cout {
        for ci in 0..cin {
            for tap in 0..9 {
                wt[(ci * 9 + tap) * NARROW + o] = spec.weight.data()[(o * cin + ci) * 9 + tap];
            }
        }
    }
    const ROWS: usize = 4;
    let span = ow + LANES + 2;
    let ptr = SyncPtr(dst.as_mut_ptr());
    (0..oh.div_ceil(ROWS)).into_par_iter().for_each_init(
        || (vec![0.0f32; ROWS * NARROW * ow], Vec::new(), vec![0.0f32; (ROWS + 2) * span]),
        |(acc, buf, rows), blk| {
            let y0 = blk * ROWS;
            let nr = (oh - y0).min(ROWS);
            acc.fill(0.0);
            for ci in 0..cin {
                for (i, dst) in rows.chunks_exact_mut(span).take(nr + 2).enumerate() {
                    let row = src.row(ci, y0 + i, buf);
                    dst[..ow + 2].copy_from_slice(row);
                    dst[ow + 2..].fill(0.0);
                }
                let w = &wt[ci * 9 * NARROW..(ci + 1) * 9 * NARROW];
                for (r, acc) in acc.chunks_exact_mut(NARROW * ow).take(nr).enumerate() {
                    narrow_rows(acc, &rows[r * span..(r + 3) * span], w, ow, span);
                }
            }
            for (r, acc) in acc.chunks_exact(NARROW * ow).take(nr).enumerate() {
                for o in 0..cout {
                    // SAFETY: rows [y0, y0 + nr) of every channel are written only by this block.
                    let out = unsafe { std::slice::from_raw_parts_mut(ptr.get().add(o * out_hw + (y0 + r) * ow), ow) };
                    let bias = spec.bias[o];
                    for (v, &a) in out.iter_mut().zip(&acc[o * ow..(o + 1) * ow]) {
                        *v = a + bias;
                    }
                }
            }
        },
    );
}

multiversion! {
    /// Adds one input channel's 3x3 contribution to up to four output rows.
    /// `rows` holds three input rows of `span` floats, zero past the edge.
    fn narrow_rows(acc: &mut [f32], rows: &[f32], w: &[f32], ow: usize, span: usize) {
        for x0 in (0..ow).step_by(LANES) {
            let n = (ow - x0).min(LANES);
            let mut sum = [[0.0f32; LANES]; NARROW];
            for ky in 0..3 {
                for kx in 0..3 {
                    let seg = &rows[ky * span + x0 + kx..][..LANES];
                    let wk = &w[(ky * 3 + kx) * NARROW..][..NARROW];
                    for o in 0..NARROW {
                        for j in 0..LANES {
                            sum[o][j] = wk[o].mul_add(seg[j], sum[o][j]);
                        }
                    }
                }
            }
            for (o, s) in sum.iter().enumerate() {
                for (a, v) in acc[o * ow + x0..o * ow + x0 + n].iter_mut().zip(s) {
                    *a += v;
                }
            }
        }
    }
}

fn im2col(src: Source<'_>, dst: &mut [f32], spec: &ConvSpec) {
    let k = spec.kernel;
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let (oh, ow) = (src.height() - k + 1, src.width() - k + 1);
    let kk = cin * k * k;
    // Rows of output per block, sized so the column buffer stays around 4 MiB.
    let rows = ((1 << 20) / (kk * ow).max(1)).clamp(1, oh);
    let ptr = SyncPtr(dst.as_mut_ptr());
    let out_hw = oh * ow;
    (0..oh.div_ceil(rows)).into_par_iter().for_each_init(
        || (vec![0.0f32; kk * rows * ow], Vec::new()),
        |(cols, buf), blk| {
            let y0 = blk * rows;
            let nr = (oh - y0).min(rows);
            let np = nr * ow;
            for ci in 0..cin {
                for ky in 0..k {
                    for y in 0..nr {
                        let line = src.row(ci, y0 + y + ky, buf);
                        for kx in 0..k {
                            let base = ((ci * k + ky) * k + kx) * np + y * ow;
                            cols[base..base + ow].copy_from_slice(&line[kx..kx + ow]);
                        }
                    }
                }
            }
            // SAFETY: block covers output pixels [y0 * ow, y0 * ow + np) of every channel; disjoint.
            gemm(cout, kk, np, spec.weight.data(), kk, &cols[..kk * np], np, unsafe { ptr.get().add(y0 * ow) }, out_hw);
        },
    );
    add_bias(dst, &spec.bias, out_hw);
}

/// A Winograd F(M x M, 3 x 3) variant: each tile turns an `A x A` input
/// patch (`A = M + 2`) into `M x M` outputs with `A * A` GEMMs per block.
trait Tile {
    const M: usize;
    const A: usize;
    /// Rows of the kernel transform matrix `G` (`A x 3`).
    const G: &'static [[f32; 3]];
    /// Minimum tiles per block so the GEMMs stay efficient.
    const MIN_TILES: usize;

    /// `B^T d B` for one row of tiles. `d` holds `A` input rows padded to
    /// `M * (tw + 1)` columns, and element `(i, j)` of tile `tx` goes to
    /// `v[(i * A + j) * stride + tx]`.
    fn input(d: &[&[f32]], tmp: &mut [f32], v: &mut [f32], stride: usize, tw: usize);

    /// `A^T m A + bias` clamped below at `floor`. Element `xi` of tile `tx`
    /// is read from `m[xi * stride + tx]`, output `(k, l)` goes to `y[k * M + l][tx]`.
    fn output(m: &[f32], stride: usize, y: &mut [Vec<f32>], bias: f32, floor: f32);
}

struct F2;
struct F4;

impl Tile for F2 {
    const M: usize = 2;
    const A: usize = 4;
    const G: &'static [[f32; 3]] = &[[1.0, 0.0, 0.0], [0.5, 0.5, 0.5], [0.5, -0.5, 0.5], [0.0, 0.0, 1.0]];
    const MIN_TILES: usize = 512;

    fn input(d: &[&[f32]], tmp: &mut [f32], v: &mut [f32], stride: usize, tw: usize) {
        input_f2(d, tmp, v, stride, tw)
    }

    fn output(m: &[f32], stride: usize, y: &mut [Vec<f32>], bias: f32, floor: f32) {
        output_f2(m, stride, y, bias, floor)
    }
}

impl Tile for F4 {
    const M: usize = 4;
    const A: usize = 6;
    const G: &'static [[f32; 3]] = &[
        [1.0 / 4.0, 0.0, 0.0],
        [-1.0 / 6.0, -1.0 / 6.0, -1.0 / 6.0],
        [-1.0 / 6.0, 1.0 / 6.0, -1.0 / 6.0],
        [1.0 / 24.0, 1.0 / 12.0, 1.0 / 6.0],
        [1.0 / 24.0, -1.0 / 12.0, 1.0 / 6.0],
        [0.0, 0.0, 1.0],
    ];
    const MIN_TILES: usize = 256;

    fn input(d: &[&[f32]], tmp: &mut [f32], v: &mut [f32], stride: usize, tw: usize) {
        input_f4(d, tmp, v, stride, tw)
    }

    fn output(m: &[f32], stride: usize, y: &mut [Vec<f32>], bias: f32, floor: f32) {
        output_f4(m, stride, y, bias, floor)
    }
}

/// Kernel transform `G g G^T` laid out as `[A * A][out][in]`.
fn winograd_kernel<T: Tile>(spec: &ConvSpec) -> Vec<f32> {
    let (cin, cout) = (spec.in_channels, spec.out_channels);
    let a = T::A;
    let mut u = vec![0.0f32; a * a * cout * cin];
    let wt = spec.weight.data();
    for o in 0..cout {
        for i in 0..cin {
            let g = &wt[(o * cin + i) * 9..][..9];
            for (r, gr) in T::G.iter().enumerate() {
                // row r of G g
                let t: [f32; 3] = std::array::from_fn(|col| gr[0] * g[col] + gr[1] * g[3 + col] + gr[2] * g[6 + col]);
                for (col, gc) in T::G.iter().enumerate() {
                    u[((r * a + col) * cout + o) * cin + i] = gc[0] * t[0] + gc[1] * t[1] + gc[2] * t[2];
                }
            }
        }
    }
    u
}

/// `N` disjoint windows of `len` floats starting at `first`, `stride` apart.
fn strided<const N: usize>(v: &mut [f32], first: usize, stride: usize, len: usize) -> [&mut [f32]; N] {
    let mut rest = &mut v[first..];
    std::array::from_fn(|_| {
        let cut = stride.min(rest.len());
        let (head, tail) = std::mem::take(&mut rest).split_at_mut(cut);
        rest = tail;
        &mut head[..len]
    })
}

struct Scratch {
    v: Vec<f32>,
    prod: Vec<f32>,
    tmp: Vec<f32>,
    rows: Vec<Vec<f32>>,
    y: Vec<Vec<f32>>,
}

fn winograd<T: Tile>(src: Source<'_>, dst: &mut [f32], spec: &ConvSpec, u: &[f32], relu: bool) {
    let (m, a) = (T::M, T::A);
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let (h, w) = (src.height(), src.width());
    let (oh, ow) = (h - 2, w - 2);
    let (th, tw) = (oh.div_ceil(m), ow.div_ceil(m));
    // Blocks are whole rows of tiles, about 4 MiB of transformed input and
    // products but never fewer than MIN_TILES tiles.
    let budget = 1 << 20;
    let rows = (budget / (a * a * (cin + cout) * tw)).max(T::MIN_TILES.div_ceil(tw)).clamp(1, th);
    let cap = rows * tw;
    let span = m * (tw + 1);
    let ptr = SyncPtr(dst.as_mut_ptr());
    let out_hw = oh * ow;
    let floor = if relu { 0.0 } else { f32::NEG_INFINITY };

    let scratch = || Scratch {
        v: vec![0.0f32; a * a * cin * cap],
        prod: vec![0.0f32; a * a * cout * cap],
        tmp: vec![0.0f32; a * span],
        rows: vec![Vec::new(); a],
        y: vec![vec![0.0f32; tw]; m * m],
    };
    (0..th.div_ceil(rows)).into_par_iter().for_each_init(scratch, |s, blk| {
        let ty0 = blk * rows;
        let nrows = (th - ty0).min(rows);
        let nt = nrows * tw;
        let Scratch { v, prod, tmp, rows: bufs, y } = s;

        for ci in 0..cin {
            for r in 0..nrows {
                let y0 = m * (ty0 + r);
                for (i, buf) in bufs.iter_mut().enumerate() {
                    if y0 + i < h {
                        src.row_into(ci, y0 + i, buf);
                    } else {
                        buf.clear();
                        buf.resize(w, 0.0);
                    }
                }
                let d: Vec<&[f32]> = bufs.iter().map(|b| &b[..w]).collect();
                T::input(&d, tmp, &mut v[ci * nt + r * tw..], cin * nt, tw);
            }
        }

        for xi in 0..a * a {
            let ua = &u[xi * cout * cin..(xi + 1) * cout * cin];
            let vb = &v[xi * cin * nt..(xi + 1) * cin * nt];
            gemm(cout, cin, nt, ua, cin, vb, nt, prod[xi * cout * nt..].as_mut_ptr(), nt);
        }
        for o in 0..cout {
            let bias = spec.bias[o];
            for r in 0..nrows {
                T::output(&prod[o * nt + r * tw..], cout * nt, y, bias, floor);
                let oy = m * (ty0 + r);
                for (k, parts) in y.chunks_exact(m).enumerate() {
                    if oy + k >= oh {
                        break;
                    }
                    // SAFETY: this block owns output rows [m * ty0, m * (ty0 + nrows)) of every channel.
                    let out = unsafe { std::slice::from_raw_parts_mut(ptr.get().add(o * out_hw + (oy + k) * ow), ow) };
                    interleave(out, parts);
                }
            }
        }
    });
}

/// Writes `parts[l][tx]` to `out[m * tx + l]` for `m = parts.len()`.
fn interleave(out: &mut [f32], parts: &[Vec<f32>]) {
    match parts {
        [p0, p1] => interleave2(out, p0, p1),
        [p0, p1, p2, p3] => interleave4(out, p0, p1, p2, p3),
        _ => unreachable!("unsupported tile size"),
    }
}

multiversion! {
    fn interleave2(out: &mut [f32], p0: &[f32], p1: &[f32]) {
        let full = out.len() / 2;
        for ((o, &a), &b) in out.chunks_exact_mut(2).zip(&p0[..full]).zip(&p1[..full]) {
            o[0] = a;
            o[1] = b;
        }
        if out.len() % 2 == 1 {
            out[2 * full] = p0[full];
        }
    }
}

multiversion! {
    fn interleave4(out: &mut [f32], p0: &[f32], p1: &[f32], p2: &[f32], p3: &[f32]) {
        let full = out.len() / 4;
        let tail = [p0, p1, p2, p3];
        let (p0, p1, p2, p3) = (&p0[..full], &p1[..full], &p2[..full], &p3[..full]);
        for (tx, o) in out.chunks_exact_mut(4).enumerate() {
            o[0] = p0[tx];
            o[1] = p1[tx];
            o[2] = p2[tx];
            o[3] = p3[tx];
        }
        for (v, part) in out[4 * full..].iter_mut().zip(tail) {
            *v = part[full];
        }
    }
}

multiversion! {
    fn input_f2(d: &[&[f32]], tmp: &mut [f32], v: &mut [f32], stride: usize, tw: usize) {
        let w = d[0].len();
        let span = tmp.len() / 4;
        let (d0, d1, d2, d3) = (d[0], &d[1][..w], &d[2][..w], &d[3][..w]);
        let [t0, t1, t2, t3] = strided::<4>(tmp, 0, span, span);
        for x in 0..w {
            t0[x] = d0[x] - d2[x];
            t1[x] = d1[x] + d2[x];
            t2[x] = d2[x] - d1[x];
            t3[x] = d1[x] - d3[x];
        }
        for (i, t) in [&mut *t0, &mut *t1, &mut *t2, &mut *t3].into_iter().enumerate() {
            t[w..].fill(0.0);
            let t = &t[..2 * tw + 2];
            let [v0, v1, v2, v3] = strided::<4>(v, 4 * i * stride, stride, tw);
            for tx in 0..tw {
                let x = 2 * tx;
                let (p0, p1, p2, p3) = (t[x], t[x + 1], t[x + 2], t[x + 3]);
                v0[tx] = p0 - p2;
                v1[tx] = p1 + p2;
                v2[tx] = p2 - p1;
                v3[tx] = p1 - p3;
            }
        }
    }
}

multiversion! {
    fn output_f2(m: &[f32], stride: usize, y: &mut [Vec<f32>], bias: f32, floor: f32) {
        let [y00, y01, y10, y11] = y else { unreachable!() };
        let tw = y00.len();
        let (y01, y10, y11) = (&mut y01[..tw], &mut y10[..tw], &mut y11[..tw]);
        let ms: [&[f32]; 16] = std::array::from_fn(|i| &m[i * stride..][..tw]);
        for tx in 0..tw {
            let mut r0 = [0.0f32; 4];
            let mut r1 = [0.0f32; 4];
            for c in 0..4 {
                r0[c] = ms[c][tx] + ms[4 + c][tx] + ms[8 + c][tx];
                r1[c] = ms[4 + c][tx] - ms[8 + c][tx] - ms[12 + c][tx];
            }
            y00[tx] = (r0[0] + r0[1] + r0[2] + bias).max(floor);
            y01[tx] = (r0[1] - r0[2] - r0[3] + bias).max(floor);
            y10[tx] = (r1[0] + r1[1] + r1[2] + bias).max(floor);
            y11[tx] = (r1[1] - r1[2] - r1[3] + bias).max(floor);
        }
    }
}

/// Rows of `B^T` for F(4x4, 3x3) applied to six values.
#[inline(always)]
fn bt6(d: [f32; 6]) -> [f32; 6] {
    [
        4.0 * d[0] - 5.0 * d[2] + d[4],
        -4.0 * d[1] - 4.0 * d[2] + d[3] + d[4],
        4.0 * d[1] - 4.0 * d[2] - d[3] + d[4],
        -2.0 * d[1] - d[2] + 2.0 * d[3] + d[4],
        2.0 * d[1] - d[2] - 2.0 * d[3] + d[4],
        4.0 * d[1] - 5.0 * d[3] + d[5],
    ]
}

/// Rows of `A^T` for F(4x4, 3x3) applied to six values.
#[inline(always)]
fn at6(m: [f32; 6]) -> [f32; 4] {
    [
        m[0] + m[1] + m[2] + m[3] + m[4],
        m[1] - m[2] + 2.0 * (m[3] - m[4]),
        m[1] + m[2] + 4.0 * (m[3] + m[4]),
        m[1] - m[2] + 8.0 * (m[3] - m[4]) + m[5],
    ]
}

/// Tiles handled per chunk in the F(4x4, 3x3) transforms.
const CHUNK: usize = 64;

multiversion! {
    fn input_f4(d: &[&[f32]], tmp: &mut [f32], v: &mut [f32], stride: usize, tw: usize) {
        let w = d[0].len();
        let span = tmp.len() / 6;
        let d: [&[f32]; 6] = std::array::from_fn(|i| &d[i][..w]);
        let t = strided::<6>(tmp, 0, span, span);
        for x in 0..w {
            let col = bt6(std::array::from_fn(|i| d[i][x]));
            for i in 0..6 {
                t[i][x] = col[i];
            }
        }
        for (i, t) in t.into_iter().enumerate() {
            t[w..].fill(0.0);
            let vs = strided::<6>(v, 6 * i * stride, stride, tw);
            for tx0 in (0..tw).step_by(CHUNK) {
                let n = (tw - tx0).min(CHUNK);
                // e[p][j] = t[4 * (tx0 + j) + p]
                let mut e = [[0.0f32; CHUNK + 1]; 4];
                for (j, quad) in t[4 * tx0..4 * (tx0 + n + 1)].chunks_exact(4).enumerate() {
                    for p in 0..4 {
                        e[p][j] = quad[p];
                    }
                }
                for j in 0..n {
                    let row = bt6([e[0][j], e[1][j], e[2][j], e[3][j], e[0][j + 1], e[1][j + 1]]);
                    for q in 0..6 {
                        vs[q][tx0 + j] = row[q];
                    }
                }
            }
        }
    }
}

multiversion! {
    fn output_f4(m: &[f32], stride: usize, y: &mut [Vec<f32>], bias: f32, floor: f32) {
        let tw = y[0].len();
        let ms: [&[f32]; 36] = std::array::from_fn(|i| &m[i * stride..][..tw]);
        let ys: [&mut [f32]; 16] = {
            let mut it = y.iter_mut();
            std::array::from_fn(|_| &mut it.next().unwrap()[..tw])
        };
        for tx0 in (0..tw).step_by(CHUNK) {
            let n = (tw - tx0).min(CHUNK);
            // A^T m, column by column: r[k][c][j]
            let mut r = [[[0.0f32; CHUNK]; 6]; 4];
            for c in 0..6 {
                let col: [&[f32]; 6] = std::array::from_fn(|i| &ms[i * 6 + c][tx0..tx0 + n]);
                for j in 0..n {
                    let a = at6(std::array::from_fn(|i| col[i][j]));
                    for k in 0..4 {
                        r[k][c][j] = a[k];
                    }
                }
            }
            for (k, rk) in r.iter().enumerate() {
                for j in 0..n {
                    let a = at6(std::array::from_fn(|c| rk[c][j]));
                    for l in 0..4 {
                        ys[k * 4 + l][tx0 + j] = (a[l] + bias).max(floor);
                    }
                }
            }
        }
    }
}

multiversion! {
    fn axpy(acc: &mut [f32], x: &[f32], a: f32) {
        for (y, &v) in acc.iter_mut().zip(x) {
            *y = a.mul_add(v, *y);
        }
    }
}
