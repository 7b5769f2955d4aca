//! Training-time sampling between stylized and original images, and the
//! online transforms applied to each drawn item.

use image::{imageops, ImageBuffer, Luma, RgbImage};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Result};
use crate::pipeline::AugmentationManifest;
use crate::seed;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerConfig {
    /// Probability of drawing a stylized variant instead of the original.
    pub p_aug: f64,
    pub seed: u64,
}

impl Default for SamplerConfig {
    fn default() -> Self {
        SamplerConfig { p_aug: 0.8, seed: 0 }
    }
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.p_aug), Config, "sampler.p_aug must lie in [0, 1], got {}", self.p_aug);
        Ok(())
    }
}

/// One sampled training item.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Draw {
    pub epoch: u64,
    pub position: usize,
    /// Index into the manifest's images.
    pub image: usize,
    /// Stylized variant, or `None` for the original.
    pub variant: Option<usize>,
    /// Seed for the online transforms of this item.
    pub transform_seed: u64,
}

impl Draw {
    pub fn path<'m>(&self, manifest: &'m AugmentationManifest) -> &'m str {
        let img = &manifest.images[self.image];
        match self.variant {
            Some(v) => &img.variants[v].path,
            None => &img.original,
        }
    }

    pub fn label<'m>(&self, manifest: &'m AugmentationManifest) -> Option<&'m str> {
        manifest.images[self.image].label.as_deref()
    }
}

/// Draws items epoch by epoch. Each epoch visits every manifest image once in
/// a shuffled order; every draw is a pure function of (seed, epoch, position),
/// so consumers may split positions between workers freely.
pub struct Sampler<'a> {
    manifest: &'a AugmentationManifest,
    cfg: SamplerConfig,
    cursor: (u64, usize),
    order: Option<(u64, Vec<usize>)>,
}

impl<'a> Sampler<'a> {
    pub fn new(manifest: &'a AugmentationManifest, cfg: SamplerConfig) -> Result<Self> {
        cfg.validate()?;
        ensure!(!manifest.images.is_empty(), InvalidArgument, "cannot sample from an empty manifest");
        Ok(Sampler { manifest, cfg, cursor: (0, 0), order: None })
    }

    pub fn epoch_len(&self) -> usize {
        self.manifest.images.len()
    }

    /// Image visiting order of one epoch.
    pub fn epoch_order(&mut self, epoch: u64) -> &[usize] {
        if self.order.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut order: Vec<usize> = (0..self.epoch_len()).collect();
            order.shuffle(&mut seed::rng(seed_of!(self.cfg.seed, "epoch", epoch)));
            self.order = Some((epoch, order));
        }
        &self.order.as_ref().expect("order just computed").1
    }

    pub fn draw(&mut self, epoch: u64, position: usize) -> Draw {
        assert!(position < self.epoch_len(), "position {position} outside epoch of {}", self.epoch_len());
        let image = self.epoch_order(epoch)[position];
        let (seed, p_aug) = (self.cfg.seed, self.cfg.p_aug);
        let mut rng = seed::rng(seed_of!(seed, "draw", epoch, position));
        let coin: f64 = rng.random();
        let n = self.manifest.images[image].variants.len();
        let variant = (coin < p_aug && n > 0).then(|| rng.random_range(0..n));
        Draw { epoch, position, image, variant, transform_seed: seed_of!(seed, "transform", epoch, position) }
    }

    /// The next item in (epoch, position) order.
    pub fn sample_next(&mut self) -> Draw {
        let (epoch, position) = self.cursor;
        let d = self.draw(epoch, position);
        self.cursor = if position + 1 == self.epoch_len() { (epoch + 1, 0) } else { (epoch, position + 1) };
        d
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PmdConfig {
    /// Maximum brightness shift on the 0-255 scale.
    pub brightness_delta: f32,
    pub contrast_range: [f32; 2],
    pub saturation_range: [f32; 2],
    /// Maximum hue rotation in degrees.
    pub hue_delta: f32,
    /// Probability of applying each of the four operations.
    pub p: f64,
}

impl Default for PmdConfig {
    fn default() -> Self {
        PmdConfig { brightness_delta: 32.0, contrast_range: [0.5, 1.5], saturation_range: [0.5, 1.5], hue_delta: 18.0, p: 0.5 }
    }
}

impl PmdConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, [lo, hi]) in [("contrast_range", self.contrast_range), ("saturation_range", self.saturation_range)] {
            ensure!(0.0 < lo && lo <= 1.0 && 1.0 <= hi, Config, "pmd.{name} must be a positive interval containing 1, got [{lo}, {hi}]");
        }
        ensure!(self.brightness_delta >= 0.0, Config, "pmd.brightness_delta must be non-negative");
        ensure!(self.hue_delta >= 0.0, Config, "pmd.hue_delta must be non-negative");
        ensure!((0.0..=1.0).contains(&self.p), Config, "pmd.p must lie in [0, 1]");
        Ok(())
    }
}

/// The operations drawn for one image; `None` means the operation was skipped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PmdParams {
    pub brightness: Option<f32>,
    pub contrast: Option<f32>,
    /// Contrast is applied before the saturation and hue block when set.
    pub contrast_first: bool,
    pub saturation: Option<f32>,
    pub hue: Option<f32>,
}

impl PmdParams {
    pub fn draw(cfg: &PmdConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let mut maybe = |lo: f32, hi: f32| {
            let apply = rng.random_bool(cfg.p);
            let v = if lo < hi { rng.random_range(lo..=hi) } else { lo };
            apply.then_some(v)
        };
        let brightness = maybe(-cfg.brightness_delta, cfg.brightness_delta);
        let [clo, chi] = cfg.contrast_range;
        let contrast = maybe(clo, chi);
        let [slo, shi] = cfg.saturation_range;
        let saturation = maybe(slo, shi);
        let hue = maybe(-cfg.hue_delta, cfg.hue_delta);
        let contrast_first = rng.random_bool(0.5);
        PmdParams { brightness, contrast, contrast_first, saturation, hue }
    }
}

/// Applies `params` to interleaved RGB values on the 0-255 scale, clamping
/// after every operation.
pub fn apply_pmd(rgb: &mut [f32], params: &PmdParams) -> Result<()> {
    ensure!(rgb.len().is_multiple_of(3), Shape, "photometric distortion needs 3-channel pixels, got {} values", rgb.len());
    let clamp = |v: &mut f32| *v = v.clamp(0.0, 255.0);
    if let Some(b) = params.brightness {
        rgb.iter_mut().for_each(|v| {
            *v += b;
            clamp(v)
        });
    }
    let contrast = |rgb: &mut [f32]| {
        if let Some(c) = params.contrast {
            rgb.iter_mut().for_each(|v| {
                *v *= c;
                clamp(v)
            });
        }
    };
    if params.contrast_first {
        contrast(rgb);
    }
    if params.saturation.is_some() || params.hue.is_some() {
        for px in rgb.chunks_exact_mut(3) {
            let [mut h, mut s, v] = rgb_to_hsv([px[0], px[1], px[2]]);
            if let Some(f) = params.saturation {
                s = (s * f).clamp(0.0, 1.0);
            }
            if let Some(d) = params.hue {
                h = (h + d).rem_euclid(360.0);
            }
            let out = hsv_to_rgb([h, s, v]);
            for (dst, v) in px.iter_mut().zip(out) {
                *dst = v.clamp(0.0, 255.0);
            }
        }
    }
    if !params.contrast_first {
        contrast(rgb);
    }
    Ok(())
}

/// Draws parameters from `seed` and applies them.
pub fn photometric_distortion(img: &RgbImage, cfg: &PmdConfig, seed: u64) -> Result<(RgbImage, PmdParams)> {
    let params = PmdParams::draw(cfg, seed);
    Ok((apply_pmd_image(img, &params)?, params))
}

pub fn apply_pmd_image(img: &RgbImage, params: &PmdParams) -> Result<RgbImage> {
    let mut buf: Vec<f32> = img.as_raw().iter().map(|&v| f32::from(v)).collect();
    apply_pmd(&mut buf, params)?;
    Ok(to_rgb8(img.width(), img.height(), &buf))
}

fn to_rgb8(w: u32, h: u32, buf: &[f32]) -> RgbImage {
    RgbImage::from_raw(w, h, buf.iter().map(|v| v.round().clamp(0.0, 255.0) as u8).collect()).expect("buffer size")
}

/// Hue in degrees, saturation in [0, 1], value on the 0-255 scale.
fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let s = if max > 0.0 { d / max } else { 0.0 };
    let h = if d == 0.0 {
        0.0
    } else if max == r {
        60.0 * ((g - b) / d).rem_euclid(6.0)
    } else if max == g {
        60.0 * ((b - r) / d + 2.0)
    } else {
        60.0 * ((r - g) / d + 4.0)
    };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let c = v * s;
    let hp = h / 60.0;
    let x = c * (1.0 - (hp.rem_euclid(2.0) - 1.0).abs());
    let (r, g, b) = match hp as u32 {
        0 => (c, x, 0.0),
        1 => (x, c, 0.0),
        2 => (0.0, c, x),
        3 => (0.0, x, c),
        4 => (x, 0.0, c),
        _ => (c, 0.0, x),
    };
    let m = v - c;
    [r + m, g + m, b + m]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BlurMirrorConfig {
    pub mirror_p: f64,
    pub blur_p: f64,
    /// Open interval the blur sigma is drawn from.
    pub blur_radius_range: [f32; 2],
}

impl Default for BlurMirrorConfig {
    fn default() -> Self {
        BlurMirrorConfig { mirror_p: 0.5, blur_p: 0.5, blur_radius_range: [0.0, 1.0] }
    }
}

impl BlurMirrorConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.mirror_p), Config, "blur.mirror_p must lie in [0, 1]");
        ensure!((0.0..=1.0).contains(&self.blur_p), Config, "blur.blur_p must lie in [0, 1]");
        let [lo, hi] = self.blur_radius_range;
        ensure!(0.0 <= lo && lo < hi, Config, "blur.blur_radius_range must be a positive interval, got ({lo}, {hi})");
        Ok(())
    }
}

/// Normalized Gaussian taps for `sigma`, truncated at `ceil(3 sigma)` per side.
pub fn gaussian_kernel(sigma: f32) -> Vec<f32> {
    let r = (3.0 * sigma).ceil().max(0.0) as i64;
    let w: Vec<f64> = (-r..=r).map(|x| (-((x * x) as f64) / (2.0 * f64::from(sigma).powi(2))).exp()).collect();
    let total: f64 = w.iter().sum();
    w.iter().map(|v| (v / total) as f32).collect()
}

/// Separable Gaussian blur of an interleaved `width x height x channels`
/// buffer with clamp-to-edge borders.
pub fn gaussian_blur_buf(buf: &[f32], width: usize, height: usize, channels: usize, sigma: f32) -> Result<Vec<f32>> {
    ensure!(buf.len() == width * height * channels, Shape, "blur buffer does not match {width}x{height}x{channels}");
    ensure!(sigma > 0.0 && sigma.is_finite(), InvalidArgument, "blur sigma must be positive, got {sigma}");
    let k = gaussian_kernel(sigma);
    let r = (k.len() / 2) as isize;
    let at = |i: isize, n: usize| i.clamp(0, n as isize - 1) as usize;
    let mut tmp = vec![0.0f32; buf.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let mut acc = 0.0f32;
                for (t, &w) in k.iter().enumerate() {
                    let sx = at(x as isize + t as isize - r, width);
                    acc += w * buf[(y * width + sx) * channels + c];
                }
                tmp[(y * width + x) * channels + c] = acc;
            }
        }
    }
    let mut out = vec![0.0f32; buf.len()];
    for y in 0..height {
        for x in 0..width {
            for c in 0..channels {
                let mut acc = 0.0f32;
                for (t, &w) in k.iter().enumerate() {
                    let sy = at(y as isize + t as isize - r, height);
                    acc += w * tmp[(sy * width + x) * channels + c];
                }
                out[(y * width + x) * channels + c] = acc;
            }
        }
    }
    Ok(out)
}

/// Blurs with `sigma` when `apply` is set, otherwise returns a copy.
pub fn gaussian_blur(img: &RgbImage, sigma: f32, apply: bool) -> Result<RgbImage> {
    if !apply {
        return Ok(img.clone());
    }
    let buf: Vec<f32> = img.as_raw().iter().map(|&v| f32::from(v)).collect();
    let out = gaussian_blur_buf(&buf, img.width() as usize, img.height() as usize, 3, sigma)?;
    Ok(to_rgb8(img.width(), img.height(), &out))
}

pub type LabelImage = ImageBuffer<Luma<u16>, Vec<u16>>;

/// Horizontal flip of an image and its label in lockstep.
pub fn mirror(img: &RgbImage, label: Option<&LabelImage>, apply: bool) -> Result<(RgbImage, Option<LabelImage>)> {
    if let Some(l) = label {
        ensure!(l.dimensions() == img.dimensions(), Shape, "label {:?} and image {:?} differ in size", l.dimensions(), img.dimensions());
    }
    if !apply {
        return Ok((img.clone(), label.cloned()));
    }
    Ok((imageops::flip_horizontal(img), label.map(imageops::flip_horizontal)))
}

/// Everything drawn for one item's online transforms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TransformParams {
    pub pmd: PmdParams,
    pub blur_sigma: Option<f32>,
    pub mirror: bool,
}

impl TransformParams {
    pub fn draw(pmd: &PmdConfig, blur: &BlurMirrorConfig, seed: u64) -> Self {
        let mut rng = seed::rng(seed_of!(seed, "blur-mirror"));
        let blur_apply = rng.random_bool(blur.blur_p);
        let [lo, hi] = blur.blur_radius_range;
        let mut sigma = rng.random_range(lo..hi);
        while sigma <= lo {
            sigma = rng.random_range(lo..hi);
        }
        let mirror = rng.random_bool(blur.mirror_p);
        TransformParams { pmd: PmdParams::draw(pmd, seed_of!(seed, "pmd")), blur_sigma: blur_apply.then_some(sigma), mirror }
    }
}

/// Photometric distortion, then blur, then mirror.
pub fn transform_item(img: &RgbImage, label: Option<&LabelImage>, params: &TransformParams) -> Result<(RgbImage, Option<LabelImage>)> {
    let img = apply_pmd_image(img, &params.pmd)?;
    let img = match params.blur_sigma {
        Some(s) => gaussian_blur(&img, s, true)?,
        None => img,
    };
    mirror(&img, label, params.mirror)
}
