//! Offline dataset construction: style pools, content patches, N-times
//! stylization and the manifest that describes the result.

use std::collections::HashMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use image::{imageops, ImageBuffer, Luma, RgbImage};
use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use tracing::{debug, info, warn};

use crate::adain::{AdainModel, StylizeConfig};
use crate::error::{ensure, Error, Result};
use crate::imageio;
use crate::tcps::{self, Bin, ComplexityScore, ScoreRecord, TcpsConfig};

/// Side length styles are prepared at.
pub const STYLE_SIZE: u32 = 512;

/// Where style images come from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum StyleSource {
    /// A directory of paintings.
    Artistic { dir: PathBuf },
    /// The content images themselves.
    Intra,
    /// Any other directory, e.g. target-domain photos.
    External { dir: PathBuf },
}

impl StyleSource {
    /// Directory to draw styles from; `content_dir` is used for [`StyleSource::Intra`].
    pub fn dir<'a>(&'a self, content_dir: &'a Path) -> &'a Path {
        match self {
            StyleSource::Artistic { dir } | StyleSource::External { dir } => dir,
            StyleSource::Intra => content_dir,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    /// Stylized variants per content patch.
    pub n_variants: usize,
    pub style_pool_size: usize,
    pub style_source: StyleSource,
    pub seed: u64,
    /// Side of the square patches cut from content images.
    pub content_patch: u32,
    /// Side that patches and stylized outputs are written at.
    pub resize_to: u32,
    pub style_min_side: u32,
    /// Keep only styles in this complexity bin.
    pub tcps_filter: Option<Bin>,
    /// Precomputed scores used by `tcps_filter` instead of scoring on the fly.
    pub scores_file: Option<PathBuf>,
    /// Fraction of failed patches above which the run is aborted.
    pub max_failure_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            n_variants: 3,
            style_pool_size: 10_000,
            style_source: StyleSource::Artistic { dir: PathBuf::from("styles") },
            seed: 0,
            content_patch: 1052,
            resize_to: 640,
            style_min_side: STYLE_SIZE,
            tcps_filter: None,
            scores_file: None,
            max_failure_fraction: 0.05,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!(self.n_variants >= 1, Config, "pipeline.n_variants must be at least 1");
        ensure!(
            self.style_pool_size >= self.n_variants,
            Config,
            "pipeline.style_pool_size ({}) must be at least n_variants ({})",
            self.style_pool_size,
            self.n_variants
        );
        ensure!(self.content_patch >= 8, Config, "pipeline.content_patch must be at least 8");
        ensure!(self.resize_to >= 1, Config, "pipeline.resize_to must be positive");
        ensure!(self.style_min_side >= 1, Config, "pipeline.style_min_side must be positive");
        ensure!(
            (0.0..=1.0).contains(&self.max_failure_fraction),
            Config,
            "pipeline.max_failure_fraction must lie in [0, 1], got {}",
            self.max_failure_fraction
        );
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StyleRecord {
    pub id: String,
    pub path: PathBuf,
    pub width: u32,
    pub height: u32,
    pub score: Option<ComplexityScore>,
}

/// Largest centered square, resized to [`STYLE_SIZE`].
pub fn prepare_style(img: &RgbImage, min_side: u32) -> Result<RgbImage> {
    let (w, h) = img.dimensions();
    ensure!(w.min(h) >= min_side, InvalidArgument, "style image {w}x{h} is smaller than {min_side} on a side");
    Ok(imageio::resize_rgb(&imageio::center_square_crop(img), STYLE_SIZE, STYLE_SIZE))
}

/// Top-left corner of a square content patch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatchOrigin {
    pub x: u32,
    pub y: u32,
}

/// The left-most and right-most `side`-wide squares, vertically centered.
/// When the image is exactly `side` wide the two coincide and one is returned.
pub fn content_patches(width: u32, height: u32, side: u32) -> Result<Vec<PatchOrigin>> {
    ensure!(width >= side && height >= side, InvalidArgument, "content image {width}x{height} is smaller than the {side}x{side} patch");
    let y = (height - side) / 2;
    let mut out = vec![PatchOrigin { x: 0, y }];
    if width > side {
        out.push(PatchOrigin { x: width - side, y });
    }
    Ok(out)
}

/// Horizontal overlap of the two patches.
pub fn patch_overlap(width: u32, side: u32) -> u32 {
    (2 * side).saturating_sub(width).min(side)
}

/// Admits style images under `dir`, optionally filters them by complexity
/// bin, then samples `cfg.style_pool_size` of them under `cfg.seed`. The pool
/// keeps the sorted listing order.
pub fn build_pool(dir: &Path, cfg: &PipelineConfig, tcps_cfg: &TcpsConfig) -> Result<Vec<StyleRecord>> {
    let paths = imageio::list_images(dir)?;
    let min = cfg.style_min_side;
    let scored: Option<HashMap<PathBuf, ComplexityScore>> = match (&cfg.tcps_filter, &cfg.scores_file) {
        (Some(_), Some(file)) => Some(tcps::read_scores(file)?.into_iter().map(|r| (r.path, r.score)).collect()),
        _ => None,
    };
    let admitted: Vec<StyleRecord> = paths
        .par_iter()
        .filter_map(|path| {
            let (width, height) = match imageio::dimensions(path) {
                Ok(d) => d,
                Err(e) => {
                    warn!(path = %path.display(), error = %e, "skipping unreadable style image");
                    return None;
                }
            };
            if width.min(height) < min {
                debug!(path = %path.display(), width, height, "style image below minimum side");
                return None;
            }
            let mut rec = StyleRecord { id: imageio::image_id(dir, path), path: path.clone(), width, height, score: None };
            if let Some(bin) = cfg.tcps_filter {
                let score = match &scored {
                    Some(map) => map.get(path).copied(),
                    None => imageio::load_rgb(path).and_then(|img| tcps::complexity(&img, tcps_cfg)).ok(),
                };
                let Some(score) = score else {
                    warn!(path = %path.display(), "no complexity score; skipping");
                    return None;
                };
                if score.bin != bin {
                    return None;
                }
                rec.score = Some(score);
            }
            Some(rec)
        })
        .collect();
    info!(source = %dir.display(), listed = paths.len(), admitted = admitted.len(), "style pool admission");
    tcps::sample_records(&admitted, cfg.style_pool_size, seed_of!(cfg.seed, "style-pool"))
}

/// Tab-separated `id, path, width, height, score, bin`; unscored records use `-`.
pub fn write_pool(path: &Path, pool: &[StyleRecord]) -> Result<()> {
    create_parent(path)?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in pool {
        let (score, bin) = match r.score {
            Some(s) => (format!("{:.6}", s.score), s.bin.to_string()),
            None => ("-".into(), "-".into()),
        };
        writeln!(w, "{}\t{}\t{}\t{}\t{}\t{}", r.id, r.path.display(), r.width, r.height, score, bin).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_pool(path: &Path) -> Result<Vec<StyleRecord>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let bad = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), message: format!("line {line}: {message}") };
    let mut out = Vec::new();
    for (n, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let [id, p, w, h, score, bin] = f[..] else {
            return Err(bad(n + 1, format!("expected 6 tab-separated fields, got {}", f.len())));
        };
        let dim = |s: &str| s.parse::<u32>().map_err(|_| bad(n + 1, format!("bad dimension `{s}`")));
        let score = match (score, bin) {
            ("-", "-") => None,
            _ => Some(ComplexityScore {
                score: score.parse().map_err(|_| bad(n + 1, format!("bad score `{score}`")))?,
                bin: bin.parse().map_err(|e: Error| bad(n + 1, e.to_string()))?,
            }),
        };
        out.push(StyleRecord { id: id.into(), path: p.into(), width: dim(w)?, height: dim(h)?, score });
    }
    Ok(out)
}

/// Attaches scores from a scores file to pool records, matched by path.
pub fn attach_scores(pool: &mut [StyleRecord], scores: &[ScoreRecord]) {
    let map: HashMap<&Path, ComplexityScore> = scores.iter().map(|r| (r.path.as_path(), r.score)).collect();
    for r in pool {
        if let Some(s) = map.get(r.path.as_path()) {
            r.score = Some(*s);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentationManifest {
    pub seed: u64,
    pub config_digest: String,
    /// Probability of training on a stylized variant rather than the original.
    pub p_aug: f64,
    pub n_variants: usize,
    pub images: Vec<ManifestImage>,
}

/// One content patch and its stylized variants. Paths are relative to the
/// manifest's directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestImage {
    pub id: String,
    pub source: String,
    pub origin: PatchOrigin,
    pub original: String,
    pub original_digest: String,
    pub label: Option<String>,
    pub label_digest: Option<String>,
    pub variants: Vec<StylizedEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StylizedEntry {
    pub path: String,
    pub style_id: String,
    pub seed: u64,
    pub digest: String,
}

pub const MANIFEST_FILE: &str = "manifest.json";

impl AugmentationManifest {
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Parse { path: path.to_path_buf(), message: e.to_string() })
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    /// Writes through a temporary file so a crash never leaves a truncated manifest.
    pub fn write(&self, path: &Path) -> Result<()> {
        create_parent(path)?;
        let tmp = path.with_extension("json.tmp");
        std::fs::write(&tmp, self.to_json()).map_err(|e| Error::io(&tmp, e))?;
        std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
    }

    pub fn stylized_count(&self) -> usize {
        self.images.iter().map(|i| i.variants.len()).sum()
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|d| !d.as_os_str().is_empty()) {
        Some(dir) => std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        None => Ok(()),
    }
}

/// Everything `augment_dataset` needs besides the configuration.
pub struct DatasetJob<'a> {
    pub images: &'a Path,
    /// Label images matched to content images by relative path, any image extension.
    pub labels: Option<&'a Path>,
    pub out_dir: &'a Path,
    pub model: &'a AdainModel,
    /// Identifies the weights in the config digest.
    pub weights_digest: &'a str,
    pub pool: &'a [StyleRecord],
    pub workers: usize,
}

/// Settings that determine the outputs, hashed into the manifest.
#[derive(Serialize)]
struct DigestInput<'a> {
    pipeline: &'a PipelineConfig,
    stylize: &'a StylizeConfig,
    p_aug: f64,
    weights: &'a str,
    pool: Vec<(&'a str, String)>,
}

pub fn config_digest(cfg: &PipelineConfig, stylize: &StylizeConfig, p_aug: f64, weights: &str, pool: &[StyleRecord]) -> String {
    let input = DigestInput {
        pipeline: cfg,
        stylize,
        p_aug,
        weights,
        pool: pool.iter().map(|r| (r.id.as_str(), r.path.display().to_string())).collect(),
    };
    imageio::sha256_hex(&serde_json::to_vec(&input).expect("digest input serializes"))
}

struct PatchJob {
    source: PathBuf,
    source_id: String,
    index: usize,
    origin: PatchOrigin,
    label: Option<PathBuf>,
}

impl PatchJob {
    fn id(&self) -> String {
        format!("{}_p{}", self.source_id, self.index)
    }
}

/// Styles for a patch: `n` distinct pool indices drawn from a seed that depends
/// only on the patch id.
pub fn assign_styles(seed: u64, patch_id: &str, pool_len: usize, n: usize) -> Vec<usize> {
    index::sample(&mut crate::seed::rng(seed_of!(seed, "styles", patch_id)), pool_len, n).into_vec()
}

/// Per-variant seed recorded in the manifest.
pub fn variant_seed(seed: u64, patch_id: &str, variant: usize) -> u64 {
    seed_of!(seed, patch_id, variant)
}

/// Stylizes every content patch `n_variants` times and writes the outputs and
/// `manifest.json` under `job.out_dir`. Patches already present in an earlier
/// manifest with the same config digest and intact files are reused.
pub fn augment_dataset(cfg: &PipelineConfig, stylize: &StylizeConfig, p_aug: f64, job: &DatasetJob<'_>) -> Result<AugmentationManifest> {
    cfg.validate()?;
    stylize.validate()?;
    ensure!(
        job.pool.len() >= cfg.n_variants,
        InvalidArgument,
        "style pool has {} styles, fewer than n_variants = {}",
        job.pool.len(),
        cfg.n_variants
    );
    ensure!(job.workers >= 1, InvalidArgument, "workers must be at least 1");
    let digest = config_digest(cfg, stylize, p_aug, job.weights_digest, job.pool);
    let manifest_path = job.out_dir.join(MANIFEST_FILE);
    let previous: HashMap<String, ManifestImage> = match AugmentationManifest::read(&manifest_path) {
        Ok(m) if m.config_digest == digest => m.images.into_iter().map(|i| (i.id.clone(), i)).collect(),
        Ok(_) => {
            info!("existing manifest has a different config digest; regenerating");
            HashMap::new()
        }
        Err(_) => HashMap::new(),
    };

    let labels: HashMap<String, PathBuf> = match job.labels {
        Some(dir) => imageio::list_images(dir)?.into_iter().map(|p| (imageio::image_id(dir, &p), p)).collect(),
        None => HashMap::new(),
    };
    let mut jobs = Vec::new();
    let mut failed = 0usize;
    let sources = imageio::list_images(job.images)?;
    for path in &sources {
        let source_id = imageio::image_id(job.images, path);
        let patches = imageio::dimensions(path).and_then(|(w, h)| content_patches(w, h, cfg.content_patch));
        match patches {
            Ok(origins) => jobs.extend(origins.into_iter().enumerate().map(|(index, origin)| PatchJob {
                source: path.clone(),
                source_id: source_id.clone(),
                index,
                origin,
                label: labels.get(&source_id).cloned(),
            })),
            Err(e) => {
                warn!(image = %path.display(), error = %e, "skipping content image");
                failed += 1;
            }
        }
    }
    let total = jobs.len() + failed;
    info!(images = sources.len(), patches = jobs.len(), workers = job.workers, "stylizing");

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(job.workers)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot start worker pool: {e}")))?;
    let done = AtomicUsize::new(0);
    let results: Vec<Result<ManifestImage>> = pool.install(|| {
        jobs.par_iter()
            .map(|pj| {
                let id = pj.id();
                let reused = previous.get(&id).filter(|prev| intact(job.out_dir, prev));
                let res = match reused {
                    Some(prev) => Ok(prev.clone()),
                    None => process_patch(cfg, stylize, job, pj),
                };
                let n = done.fetch_add(1, Ordering::Relaxed) + 1;
                match &res {
                    Ok(_) => info!(patch = %id, done = n, total = jobs.len(), reused = reused.is_some(), "patch complete"),
                    Err(e) => warn!(patch = %id, error = %e, done = n, total = jobs.len(), "patch failed"),
                }
                res
            })
            .collect()
    });

    let mut images = Vec::with_capacity(results.len());
    for r in results {
        match r {
            Ok(img) => images.push(img),
            Err(_) => failed += 1,
        }
    }
    if total > 0 && failed as f64 > cfg.max_failure_fraction * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    let manifest = AugmentationManifest { seed: cfg.seed, config_digest: digest, p_aug, n_variants: cfg.n_variants, images };
    manifest.write(&manifest_path)?;
    info!(entries = manifest.images.len(), stylized = manifest.stylized_count(), failed, "manifest written");
    Ok(manifest)
}

fn intact(root: &Path, entry: &ManifestImage) -> bool {
    let ok = |rel: &str, digest: &str| imageio::file_digest(root.join(rel)).is_some_and(|d| d == digest);
    ok(&entry.original, &entry.original_digest)
        && match (&entry.label, &entry.label_digest) {
            (Some(l), Some(d)) => ok(l, d),
            (None, None) => true,
            _ => false,
        }
        && entry.variants.iter().all(|v| ok(&v.path, &v.digest))
}

fn process_patch(cfg: &PipelineConfig, stylize: &StylizeConfig, job: &DatasetJob<'_>, pj: &PatchJob) -> Result<ManifestImage> {
    let id = pj.id();
    let side = cfg.content_patch;
    let out = cfg.resize_to;
    let PatchOrigin { x, y } = pj.origin;
    let img = imageio::load_rgb(&pj.source)?;
    let patch = imageops::crop_imm(&img, x, y, side, side).to_image();
    drop(img);

    let original = format!("original/{id}.png");
    let original_digest = imageio::save_png(&imageio::resize_rgb(&patch, out, out), job.out_dir.join(&original))?;

    let (label, label_digest) = match &pj.label {
        Some(path) => {
            let labels = imageio::load_labels(path)?;
            ensure!(
                labels.dimensions() == imageio::dimensions(&pj.source)?,
                Shape,
                "label {} does not match its image size",
                path.display()
            );
            let crop: ImageBuffer<Luma<u16>, Vec<u16>> = imageops::crop_imm(&labels, x, y, side, side).to_image();
            let resized = imageio::resize_labels(&crop, out, out);
            let rel = format!("labels/{id}.png");
            let digest = match imageio::labels_to_u8(&resized) {
                Some(narrow) => imageio::save_png(&narrow, job.out_dir.join(&rel))?,
                None => imageio::save_png(&resized, job.out_dir.join(&rel))?,
            };
            (Some(rel), Some(digest))
        }
        None => (None, None),
    };

    let content = imageio::rgb_to_tensor(&patch);
    let content_feat = job.model.encode(&content)?;
    let picks = assign_styles(cfg.seed, &id, job.pool.len(), cfg.n_variants);
    let mut variants = Vec::with_capacity(picks.len());
    for (v, &pick) in picks.iter().enumerate() {
        let style = &job.pool[pick];
        let style_img = prepare_style(&imageio::load_rgb(&style.path)?, cfg.style_min_side)?;
        let style_feat = job.model.encode(&imageio::rgb_to_tensor(&style_img))?;
        let stylized = job.model.finish(&content, &content_feat, &style_feat, stylize)?;
        let rgb = imageio::resize_rgb(&imageio::tensor_to_rgb(&stylized)?, out, out);
        let path = format!("stylized/{id}_v{v}.png");
        let digest = imageio::save_png(&rgb, job.out_dir.join(&path))?;
        variants.push(StylizedEntry { path, style_id: style.id.clone(), seed: variant_seed(cfg.seed, &id, v), digest });
    }
    Ok(ManifestImage { id, source: pj.source_id.clone(), origin: pj.origin, original, original_digest, label, label_digest, variants })
}
