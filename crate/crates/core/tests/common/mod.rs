//! Loop oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use std::path::Path;

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stylemix::tensor::Tensor;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, dims: [usize; 4]) -> Tensor {
    Tensor::from_fn(dims, |_, _, _, _| rng.random_range(-1.0f32..1.0))
}

/// Valid cross-correlation accumulated in f64.
pub fn naive_conv(input: &Tensor, weight: &Tensor, bias: &[f32]) -> Vec<f32> {
    let [n, cin, h, w] = input.dims();
    let [cout, _, k, _] = weight.dims();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut out = Vec::with_capacity(n * cout * oh * ow);
    for b in 0..n {
        for (o, &b0) in bias.iter().enumerate().take(cout) {
            for y in 0..oh {
                for x in 0..ow {
                    let mut acc = b0 as f64;
                    for i in 0..cin {
                        for ky in 0..k {
                            for kx in 0..k {
                                acc += input.at(b, i, y + ky, x + kx) as f64 * weight.at(o, i, ky, kx) as f64;
                            }
                        }
                    }
                    out.push(acc as f32);
                }
            }
        }
    }
    out
}

/// 2x2 stride-2 max pooling; partial windows at the far edges are kept.
pub fn naive_pool(input: &Tensor) -> Tensor {
    let [n, c, h, w] = input.dims();
    Tensor::from_fn([n, c, h.div_ceil(2), w.div_ceil(2)], |b, ch, oy, ox| {
        let mut m = f32::NEG_INFINITY;
        for y in 2 * oy..(2 * oy + 2).min(h) {
            for x in 2 * ox..(2 * ox + 2).min(w) {
                m = m.max(input.at(b, ch, y, x));
            }
        }
        m
    })
}

pub fn naive_pad(input: &Tensor, pad: usize) -> Tensor {
    let [n, c, h, w] = input.dims();
    let reflect = |i: usize, len: usize| {
        let i = (i as isize - pad as isize).unsigned_abs();
        if i >= len {
            2 * (len - 1) - i
        } else {
            i
        }
    };
    Tensor::from_fn([n, c, h + 2 * pad, w + 2 * pad], |b, ch, y, x| input.at(b, ch, reflect(y, h), reflect(x, w)))
}

/// Max abs difference relative to the oracle's max magnitude.
pub fn rel_err(got: &[f32], want: &[f32]) -> f32 {
    assert_eq!(got.len(), want.len());
    let scale = want.iter().fold(1e-6f32, |m, v| m.max(v.abs()));
    got.iter().zip(want).map(|(a, b)| (a - b).abs()).fold(0.0, f32::max) / scale
}

/// Fraction of smooth pixels of an already square image, computed pixel by pixel.
pub fn tcps_oracle(square: &RgbImage, epsilon: f64) -> f64 {
    let (w, h) = square.dimensions();
    assert_eq!(w, h);
    let n = w as usize;
    let gray = |i: usize, j: usize| {
        let Rgb([r, g, b]) = *square.get_pixel(j as u32, i as u32);
        0.299 * r as f32 + 0.587 * g as f32 + 0.114 * b as f32
    };
    let mut smooth = 0usize;
    for i in 0..n {
        for j in 0..n {
            let gx = if i + 1 < n { gray(i + 1, j) - gray(i, j) } else { 0.0 };
            let gy = if j + 1 < n { gray(i, j + 1) - gray(i, j) } else { 0.0 };
            if ((gx * gx + gy * gy) as f64) < epsilon {
                smooth += 1;
            }
        }
    }
    smooth as f64 / (n * n) as f64
}

/// Per-class IoU by direct counting, ignoring pixels whose ground truth is 255.
pub fn miou_oracle(gt: &[u16], pred: &[u16], classes: usize) -> (Vec<Option<f64>>, f64) {
    let mut per = Vec::with_capacity(classes);
    for c in 0..classes as u16 {
        let (mut inter, mut union) = (0u64, 0u64);
        for (&g, &p) in gt.iter().zip(pred) {
            if g == 255 {
                continue;
            }
            if g == c && p == c {
                inter += 1;
            }
            if g == c || p == c {
                union += 1;
            }
        }
        per.push((union > 0).then(|| inter as f64 / union as f64));
    }
    let present: Vec<f64> = per.iter().flatten().copied().collect();
    let mean = present.iter().sum::<f64>() / present.len() as f64;
    (per, mean)
}

pub fn random_rgb(rng: &mut ChaCha8Rng, w: u32, h: u32) -> RgbImage {
    RgbImage::from_fn(w, h, |_, _| Rgb([rng.random(), rng.random(), rng.random()]))
}

/// Random blocky image: a small random grid upscaled, so smooth and busy
/// regions both occur.
pub fn blocky_rgb(rng: &mut ChaCha8Rng, w: u32, h: u32, cells: u32) -> RgbImage {
    let grid = random_rgb(rng, cells, cells);
    RgbImage::from_fn(w, h, |x, y| *grid.get_pixel(x * cells / w, y * cells / h))
}

/// Writes `count` random images named `{prefix}{i:02}.png` into `dir`.
pub fn write_images(dir: &Path, prefix: &str, count: usize, w: u32, h: u32, seed: u64) {
    std::fs::create_dir_all(dir).unwrap();
    let mut r = rng(seed);
    for i in 0..count {
        let cells = r.random_range(2..16);
        blocky_rgb(&mut r, w, h, cells).save(dir.join(format!("{prefix}{i:02}.png"))).unwrap();
    }
}
