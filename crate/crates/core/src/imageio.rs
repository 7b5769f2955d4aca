//! Image loading, conversion to and from tensors, cropping and resizing.

use std::fs;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use image::{GrayImage, ImageBuffer, Luma, RgbImage};
use walkdir::WalkDir;

use crate::error::{ensure, Error, Result};
use crate::tensor::Tensor;

const EXTENSIONS: &[&str] = &["png", "jpg", "jpeg", "bmp"];

/// Filter used for every "bilinear" resize in the toolkit.
pub const BILINEAR: FilterType = FilterType::Triangle;

pub fn load_rgb(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    Ok(image::open(path).map_err(|e| Error::image(path, e))?.to_rgb8())
}

/// Label images keep their raw ids; 16-bit PNGs are narrowed only if every id fits in a byte.
pub fn load_labels(path: impl AsRef<Path>) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
    let path = path.as_ref();
    Ok(image::open(path).map_err(|e| Error::image(path, e))?.to_luma16_raw())
}

trait RawLuma16 {
    fn to_luma16_raw(self) -> ImageBuffer<Luma<u16>, Vec<u16>>;
}

impl RawLuma16 for image::DynamicImage {
    fn to_luma16_raw(self) -> ImageBuffer<Luma<u16>, Vec<u16>> {
        match self {
            image::DynamicImage::ImageLuma16(img) => img,
            image::DynamicImage::ImageLuma8(img) => {
                let (w, h) = img.dimensions();
                ImageBuffer::from_raw(w, h, img.into_raw().into_iter().map(u16::from).collect()).unwrap()
            }
            // Colour label images are read through their first channel.
            other => {
                let rgb = other.to_rgb8();
                let (w, h) = rgb.dimensions();
                ImageBuffer::from_fn(w, h, |x, y| Luma([u16::from(rgb.get_pixel(x, y)[0])]))
            }
        }
    }
}

pub fn dimensions(path: impl AsRef<Path>) -> Result<(u32, u32)> {
    let path = path.as_ref();
    image::image_dimensions(path).map_err(|e| Error::image(path, e))
}

/// Writes a PNG (creating parent directories) and returns the SHA-256 of the file.
pub fn save_png<P, C>(img: &ImageBuffer<P, C>, path: impl AsRef<Path>) -> Result<String>
where
    P: image::PixelWithColorType,
    [P::Subpixel]: image::EncodableLayout,
    C: std::ops::Deref<Target = [P::Subpixel]>,
{
    let path = path.as_ref();
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), image::ImageFormat::Png).map_err(|e| Error::image(path, e))?;
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    hex::encode(Sha256::digest(bytes))
}

/// SHA-256 of a file, or `None` if it cannot be read.
pub fn file_digest(path: impl AsRef<Path>) -> Option<String> {
    fs::read(path).ok().map(|b| sha256_hex(&b))
}

/// `1x3xHxW` tensor with values in [0, 1].
pub fn rgb_to_tensor(img: &RgbImage) -> Tensor {
    let (w, h) = img.dimensions();
    let (w, h) = (w as usize, h as usize);
    let raw = img.as_raw();
    Tensor::from_fn([1, 3, h, w], |_, c, y, x| raw[(y * w + x) * 3 + c] as f32 / 255.0)
}

pub fn tensor_to_rgb(t: &Tensor) -> Result<RgbImage> {
    ensure!(t.batch() == 1 && t.channels() == 3, Shape, "expected a 1x3xHxW tensor, got {:?}", t.dims());
    let (h, w) = (t.height(), t.width());
    let mut raw = vec![0u8; h * w * 3];
    for c in 0..3 {
        for (i, &v) in t.plane(0, c).iter().enumerate() {
            raw[i * 3 + c] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    Ok(RgbImage::from_raw(w as u32, h as u32, raw).expect("buffer size"))
}

/// Bilinear resize of every channel plane.
pub fn resize_tensor(t: &Tensor, width: usize, height: usize) -> Result<Tensor> {
    ensure!(width > 0 && height > 0, InvalidArgument, "resize target must be non-empty");
    let [n, c, h, w] = t.dims();
    let mut out = Vec::with_capacity(n * c * width * height);
    for b in 0..n {
        for ch in 0..c {
            let plane: ImageBuffer<Luma<f32>, Vec<f32>> =
                ImageBuffer::from_raw(w as u32, h as u32, t.plane(b, ch).to_vec()).expect("plane size");
            let resized = imageops::resize(&plane, width as u32, height as u32, BILINEAR);
            out.extend_from_slice(resized.as_raw());
        }
    }
    Tensor::new([n, c, height, width], out)
}

/// Largest centered square; the offset of an odd surplus rounds down.
pub fn center_square_crop(img: &RgbImage) -> RgbImage {
    let (w, h) = img.dimensions();
    let side = w.min(h);
    imageops::crop_imm(img, (w - side) / 2, (h - side) / 2, side, side).to_image()
}

pub fn resize_rgb(img: &RgbImage, width: u32, height: u32) -> RgbImage {
    if img.dimensions() == (width, height) {
        return img.clone();
    }
    imageops::resize(img, width, height, BILINEAR)
}

pub fn resize_labels(img: &ImageBuffer<Luma<u16>, Vec<u16>>, width: u32, height: u32) -> ImageBuffer<Luma<u16>, Vec<u16>> {
    if img.dimensions() == (width, height) {
        return img.clone();
    }
    imageops::resize(img, width, height, FilterType::Nearest)
}

/// Narrow a label image to 8 bits when every id fits.
pub fn labels_to_u8(img: &ImageBuffer<Luma<u16>, Vec<u16>>) -> Option<GrayImage> {
    let (w, h) = img.dimensions();
    let raw: Option<Vec<u8>> = img.as_raw().iter().map(|&v| u8::try_from(v).ok()).collect();
    raw.map(|r| GrayImage::from_raw(w, h, r).unwrap())
}

/// Image files under `dir`, sorted by path so listing order never depends on the filesystem.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut out = Vec::new();
    for entry in WalkDir::new(dir).follow_links(true) {
        let entry = entry.map_err(|e| {
            let path = e.path().unwrap_or(dir).to_path_buf();
            Error::io(path, e.into())
        })?;
        if !entry.file_type().is_file() {
            continue;
        }
        let ext = entry.path().extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if ext.is_some_and(|e| EXTENSIONS.contains(&e.as_str())) {
            out.push(entry.into_path());
        }
    }
    out.sort();
    Ok(out)
}

/// Path of `path` relative to `root`, without extension, with `/` separators.
pub fn image_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path).with_extension("");
    rel.components().map(|c| c.as_os_str().to_string_lossy()).collect::<Vec<_>>().join("/")
}
