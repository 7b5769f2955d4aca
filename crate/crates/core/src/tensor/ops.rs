use rayon::prelude::*;

use super::Tensor;
use crate::error::{ensure, Result};

/// Mirror `pad` pixels on every side without repeating the edge pixel.
pub fn reflection_pad(input: &Tensor, pad: usize) -> Result<Tensor> {
    input.require_nonempty("reflection_pad")?;
    if pad == 0 {
        return Ok(input.clone());
    }
    let [n, c, h, w] = input.dims();
    ensure!(pad < h.min(w), InvalidArgument, "reflection pad {pad} needs a map larger than {h}x{w}");
    let (oh, ow) = (h + 2 * pad, w + 2 * pad);
    let reflect = |i: isize, len: usize| -> usize {
        let len = len as isize;
        let r = if i < 0 {
            -i
        } else if i >= len {
            2 * (len - 1) - i
        } else {
            i
        };
        r as usize
    };
    let xs: Vec<usize> = (0..ow).map(|x| reflect(x as isize - pad as isize, w)).collect();
    let mut out = super::scratch(n * c * oh * ow);
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane, dst)| {
        let src = &input.data()[plane * h * w..(plane + 1) * h * w];
        for (y, row) in dst.chunks_exact_mut(ow).enumerate() {
            let sy = reflect(y as isize - pad as isize, h);
            let srow = &src[sy * w..(sy + 1) * w];
            row[pad..pad + w].copy_from_slice(srow);
            for x in (0..pad).chain(pad + w..ow) {
                row[x] = srow[xs[x]];
            }
        }
    });
    Ok(Tensor::from_parts([n, c, oh, ow], out))
}

pub fn relu(input: &Tensor) -> Tensor {
    relu_owned(input.clone())
}

pub(crate) fn relu_owned(input: Tensor) -> Tensor {
    let dims = input.dims();
    let mut data = input.into_data();
    data.par_chunks_mut(1 << 16).for_each(|c| c.iter_mut().for_each(|v| *v = v.max(0.0)));
    Tensor::from_parts(dims, data)
}

/// 2x2 max pooling with stride 2. Odd sizes round up, so the last window may
/// cover a single row or column.
pub fn maxpool2(input: &Tensor) -> Tensor {
    let [n, c, h, w] = input.dims();
    let (oh, ow) = (h.div_ceil(2), w.div_ceil(2));
    let mut out = super::scratch(n * c * oh * ow);
    out.par_chunks_mut((oh * ow).max(1)).enumerate().for_each(|(plane, dst)| {
        let src = &input.data()[plane * h * w..(plane + 1) * h * w];
        for (oy, out) in dst.chunks_exact_mut(ow).enumerate() {
            let top = &src[2 * oy * w..(2 * oy + 1) * w];
            let bottom = if 2 * oy + 1 < h { &src[(2 * oy + 1) * w..(2 * oy + 2) * w] } else { top };
            pool_rows(top, bottom, out);
        }
    });
    Tensor::from_parts([n, c, oh, ow], out)
}

fn max(a: f32, b: f32) -> f32 {
    if a > b {
        a
    } else {
        b
    }
}

multiversion! {
    fn pool_rows(top: &[f32], bottom: &[f32], out: &mut [f32]) {
        let half = top.len() / 2;
        let bottom = &bottom[..top.len()];
        for (i, o) in out[..half].iter_mut().enumerate() {
            *o = max(max(top[2 * i], top[2 * i + 1]), max(bottom[2 * i], bottom[2 * i + 1]));
        }
        if top.len() % 2 == 1 {
            out[half] = max(top[2 * half], bottom[2 * half]);
        }
    }
}

multiversion! {
    fn double_row(src: &[f32], dst: &mut [f32]) {
        for (pair, &v) in dst.chunks_exact_mut(2).zip(src) {
            pair[0] = v;
            pair[1] = v;
        }
    }
}

/// Nearest-neighbour 2x upsampling.
pub fn upsample_nearest2(input: &Tensor) -> Tensor {
    let [n, c, h, w] = input.dims();
    let (oh, ow) = (2 * h, 2 * w);
    let mut out = super::scratch(n * c * oh * ow);
    out.par_chunks_mut((oh * ow).max(1)).enumerate().for_each(|(plane, dst)| {
        let src = &input.data()[plane * h * w..(plane + 1) * h * w];
        for y in 0..h {
            let (top, bottom) = dst[2 * y * ow..(2 * y + 2) * ow].split_at_mut(ow);
            double_row(&src[y * w..(y + 1) * w], top);
            bottom.copy_from_slice(top);
        }
    });
    Tensor::from_parts([n, c, oh, ow], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(values: &[f32]) -> Tensor {
        Tensor::new([1, 1, 1, values.len()], values.to_vec()).unwrap()
    }

    #[test]
    fn reflection_pad_mirrors_without_edge_repeat() {
        // A single row cannot be padded vertically, so pad a 3x3 and read the rows.
        let t = Tensor::new([1, 1, 3, 3], vec![0., 0., 0., 1., 2., 3., 0., 0., 0.]).unwrap();
        let p = reflection_pad(&t, 1).unwrap();
        assert_eq!(p.dims(), [1, 1, 5, 5]);
        assert_eq!(&p.data()[10..15], &[2., 1., 2., 3., 2.]);
        // rows -1 and 3 both mirror the middle row
        assert_eq!(&p.data()[0..5], &[2., 1., 2., 3., 2.]);
        assert_eq!(&p.data()[20..25], &[2., 1., 2., 3., 2.]);
    }

    #[test]
    fn reflection_pad_zero_is_identity() {
        let t = row(&[5.0, 6.0]);
        assert_eq!(reflection_pad(&t, 0).unwrap(), t);
    }

    #[test]
    fn reflection_pad_rejects_large_pad() {
        assert!(reflection_pad(&row(&[5.0]), 1).is_err());
        let t = Tensor::zeros([1, 1, 4, 2]);
        assert!(reflection_pad(&t, 2).is_err());
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&row(&[-1., 0., 2.])).data(), &[0., 0., 2.]);
        assert_eq!(relu(&row(&[1., 2.])).data(), &[1., 2.]);
        assert_eq!(relu(&row(&[-1., -2.])).data(), &[0., 0.]);
    }

    #[test]
    fn maxpool_window_max() {
        let t = Tensor::new([1, 1, 4, 4], vec![1., 2., 5., 6., 3., 4., 7., 8., 9., 10., 13., 14., 11., 12., 15., 16.]).unwrap();
        assert_eq!(maxpool2(&t).data(), &[4., 8., 12., 16.]);
    }

    #[test]
    fn maxpool_ceil_semantics() {
        let t = Tensor::full([1, 2, 263, 5], 3.0);
        let p = maxpool2(&t);
        assert_eq!(p.dims(), [1, 2, 132, 3]);
        assert!(p.data().iter().all(|&v| v == 3.0));
        let t = Tensor::new([1, 1, 1, 3], vec![1., 7., -2.]).unwrap();
        assert_eq!(maxpool2(&t).data(), &[7., -2.]);
    }

    #[test]
    fn upsample_replicates() {
        let u = upsample_nearest2(&row(&[1., 2.]));
        assert_eq!(u.dims(), [1, 1, 2, 4]);
        assert_eq!(u.data(), &[1., 1., 2., 2., 1., 1., 2., 2.]);
    }

    #[test]
    fn geometry_round_trip() {
        let mut side = 1052;
        for _ in 0..3 {
            side = maxpool2(&Tensor::zeros([1, 1, side, 1])).height();
        }
        assert_eq!(side, 132);
        for _ in 0..3 {
            side = upsample_nearest2(&Tensor::zeros([1, 1, side, 1])).height();
        }
        assert_eq!(side, 1056);
    }
}
