//! Texture-complexity scoring of style images.
//!
//! An image is center-cropped to a square, resized to `eval_size`, converted
//! to grayscale and differentiated. A pixel is smooth when its squared
//! gradient is below `epsilon`; the score is the smooth fraction. Scores are
//! binned into three half-open intervals.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use image::{Rgb, RgbImage};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure, Error, Result};
use crate::imageio;
use crate::pipeline::StyleRecord;

/// Color of masked-out pixels in [`smooth_mask`] output.
pub const SENTINEL: Rgb<u8> = Rgb([255, 0, 255]);

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bin {
    Low,
    Medium,
    High,
}

impl Bin {
    pub const ALL: [Bin; 3] = [Bin::Low, Bin::Medium, Bin::High];

    pub fn name(self) -> &'static str {
        match self {
            Bin::Low => "low",
            Bin::Medium => "medium",
            Bin::High => "high",
        }
    }
}

impl fmt::Display for Bin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Bin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "low" => Ok(Bin::Low),
            "medium" => Ok(Bin::Medium),
            "high" => Ok(Bin::High),
            _ => Err(Error::InvalidArgument(format!("unknown complexity bin `{s}` (expected low, medium or high)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TcpsConfig {
    /// Threshold on the squared gradient below which a pixel counts as smooth.
    pub epsilon: f64,
    /// Side length of the square the image is resized to before scoring.
    pub eval_size: u32,
    /// Lower edges of the Medium and High bins. Low is `[0, bins[0])`,
    /// Medium `[bins[0], bins[1])` and High `[bins[1], 1]`.
    pub bins: [f64; 2],
}

impl Default for TcpsConfig {
    fn default() -> Self {
        TcpsConfig { epsilon: 20.0, eval_size: 512, bins: [0.5, 0.75] }
    }
}

impl TcpsConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.epsilon > 0.0 && self.epsilon.is_finite(), Config, "tcps.epsilon must be positive, got {}", self.epsilon);
        ensure!(self.eval_size >= 2, Config, "tcps.eval_size must be at least 2, got {}", self.eval_size);
        let [a, b] = self.bins;
        ensure!(0.0 < a && a < b && b <= 1.0, Config, "tcps.bins must satisfy 0 < low < high <= 1, got [{a}, {b}]");
        Ok(())
    }

    pub fn bin(&self, score: f64) -> Bin {
        if score < self.bins[0] {
            Bin::Low
        } else if score < self.bins[1] {
            Bin::Medium
        } else {
            Bin::High
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexityScore {
    pub score: f64,
    pub bin: Bin,
}

/// Rec. 601 luma on the 0-255 scale.
pub fn grayscale(img: &RgbImage) -> Vec<f32> {
    img.pixels().map(|Rgb([r, g, b])| 0.299 * f32::from(*r) + 0.587 * f32::from(*g) + 0.114 * f32::from(*b)).collect()
}

/// Squared gradient magnitude of a `side x side` image stored row-major.
///
/// Rows are indexed by `i` and columns by `j`; `grad_x(i, j) = I(i+1, j) - I(i, j)`
/// and `grad_y(i, j) = I(i, j+1) - I(i, j)`, each zero at the trailing edge.
pub fn gradient_map(gray: &[f32], side: usize) -> Result<Vec<f32>> {
    ensure!(side > 0 && gray.len() == side * side, Shape, "gradient_map expects a {side}x{side} image, got {} values", gray.len());
    let mut out = vec![0.0f32; side * side];
    for i in 0..side {
        let row = &gray[i * side..(i + 1) * side];
        let next = (i + 1 < side).then(|| &gray[(i + 1) * side..(i + 2) * side]);
        let dst = &mut out[i * side..(i + 1) * side];
        for j in 0..side {
            let gx = next.map_or(0.0, |n| n[j] - row[j]);
            let gy = if j + 1 < side { row[j + 1] - row[j] } else { 0.0 };
            dst[j] = gx * gx + gy * gy;
        }
    }
    Ok(out)
}

/// Center crop and resize to the evaluation square.
pub fn prepare(img: &RgbImage, cfg: &TcpsConfig) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    ensure!(w >= 1 && h >= 1, InvalidArgument, "cannot score an empty image");
    let side = cfg.eval_size;
    Ok(imageio::resize_rgb(&imageio::center_square_crop(img), side, side))
}

fn smooth_flags(img: &RgbImage, cfg: &TcpsConfig) -> Result<(RgbImage, Vec<bool>)> {
    let square = prepare(img, cfg)?;
    let grad = gradient_map(&grayscale(&square), cfg.eval_size as usize)?;
    let eps = cfg.epsilon;
    Ok((square, grad.iter().map(|&g| f64::from(g) < eps).collect()))
}

pub fn complexity(img: &RgbImage, cfg: &TcpsConfig) -> Result<ComplexityScore> {
    let (_, smooth) = smooth_flags(img, cfg)?;
    let count = smooth.iter().filter(|&&s| s).count();
    let score = count as f64 / smooth.len() as f64;
    Ok(ComplexityScore { score, bin: cfg.bin(score) })
}

/// The evaluation square split into its smooth and unsmooth pixels; the other
/// pixels of each image are painted [`SENTINEL`].
pub fn smooth_mask(img: &RgbImage, cfg: &TcpsConfig) -> Result<(RgbImage, RgbImage)> {
    let (square, smooth) = smooth_flags(img, cfg)?;
    let mut smooth_img = square.clone();
    let mut rough_img = square;
    for ((a, b), &s) in smooth_img.pixels_mut().zip(rough_img.pixels_mut()).zip(&smooth) {
        if s {
            *b = SENTINEL;
        } else {
            *a = SENTINEL;
        }
    }
    Ok((smooth_img, rough_img))
}

/// One line of a scores file.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub id: String,
    pub path: PathBuf,
    pub score: ComplexityScore,
}

/// Scores every image under `root` in parallel. Results keep the sorted
/// listing order; unreadable images are returned as errors next to their path.
pub fn score_dir(root: &Path, cfg: &TcpsConfig) -> Result<Vec<(PathBuf, Result<ScoreRecord>)>> {
    cfg.validate()?;
    let paths = imageio::list_images(root)?;
    Ok(paths
        .into_par_iter()
        .map(|path| {
            let rec = imageio::load_rgb(&path).and_then(|img| complexity(&img, cfg)).map(|score| ScoreRecord {
                id: imageio::image_id(root, &path),
                path: path.clone(),
                score,
            });
            (path, rec)
        })
        .collect())
}

/// Tab-separated `id, path, score, bin`, score printed with six decimals.
pub fn write_scores(path: &Path, records: &[ScoreRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in records {
        writeln!(w, "{}\t{}\t{:.6}\t{}", r.id, r.path.display(), r.score.score, r.score.bin).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scores(path: &Path) -> Result<Vec<ScoreRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let parse_err = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), message: format!("line {line}: {message}") };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let [id, p, score, bin] = fields[..] else {
            return Err(parse_err(n + 1, format!("expected 4 tab-separated fields, got {}", fields.len())));
        };
        let score: f64 = score.parse().map_err(|_| parse_err(n + 1, format!("bad score `{score}`")))?;
        if !(0.0..=1.0).contains(&score) {
            return Err(parse_err(n + 1, format!("score {score} outside [0, 1]")));
        }
        let bin = bin.parse().map_err(|e: Error| parse_err(n + 1, e.to_string()))?;
        out.push(ScoreRecord { id: id.to_string(), path: PathBuf::from(p), score: ComplexityScore { score, bin } });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SubPools {
    pub low: Vec<StyleRecord>,
    pub medium: Vec<StyleRecord>,
    pub high: Vec<StyleRecord>,
}

impl SubPools {
    pub fn get(&self, bin: Bin) -> &[StyleRecord] {
        match bin {
            Bin::Low => &self.low,
            Bin::Medium => &self.medium,
            Bin::High => &self.high,
        }
    }

    fn get_mut(&mut self, bin: Bin) -> &mut Vec<StyleRecord> {
        match bin {
            Bin::Low => &mut self.low,
            Bin::Medium => &mut self.medium,
            Bin::High => &mut self.high,
        }
    }
}

/// Splits scored records by bin. With `sample = Some(k)` each bin is reduced
/// to `k` records drawn without replacement under `seed`; the drawn records
/// keep their input order.
pub fn partition_pool(records: &[StyleRecord], cfg: &TcpsConfig, sample: Option<usize>, seed: u64) -> Result<SubPools> {
    let mut pools = SubPools::default();
    for r in records {
        let score = r.score.ok_or_else(|| Error::InvalidArgument(format!("style `{}` has no complexity score", r.id)))?;
        pools.get_mut(cfg.bin(score.score)).push(r.clone());
    }
    if let Some(k) = sample {
        for bin in Bin::ALL {
            let pool = pools.get_mut(bin);
            *pool = sample_records(pool, k, seed_of!(seed, "tcps-bin", bin.name()))?;
        }
    }
    Ok(pools)
}

/// `k` records drawn uniformly without replacement, in input order.
pub fn sample_records(records: &[StyleRecord], k: usize, seed: u64) -> Result<Vec<StyleRecord>> {
    if k > records.len() {
        return Err(Error::PoolTooSmall { requested: k, available: records.len() });
    }
    let mut picked = index::sample(&mut crate::seed::rng(seed), records.len(), k).into_vec();
    picked.sort_unstable();
    Ok(picked.into_iter().map(|i| records[i].clone()).collect())
}
