//! Label harmonization to the 19 shared classes and IoU evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use serde::Serialize;

use crate::error::{ensure, Error, Result};

pub const NUM_CLASSES: usize = 19;
pub const IGNORE: u16 = 255;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = [
    "road",
    "sidewalk",
    "building",
    "wall",
    "fence",
    "pole",
    "traffic light",
    "traffic sign",
    "vegetation",
    "terrain",
    "sky",
    "person",
    "rider",
    "car",
    "truck",
    "bus",
    "train",
    "motorcycle",
    "bicycle",
];

/// Cityscapes label ids of the 19 evaluation classes, in class order. GTAV
/// annotations use the same ids.
const CITYSCAPES_IDS: [u16; NUM_CLASSES] = [7, 8, 11, 12, 13, 17, 19, 20, 21, 22, 23, 24, 25, 26, 27, 28, 31, 32, 33];

/// Native label id to harmonized class id. Ids without an entry map to [`IGNORE`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub name: String,
    table: BTreeMap<u16, u16>,
}

impl LabelMap {
    pub fn new(name: impl Into<String>, entries: impl IntoIterator<Item = (u16, u16)>) -> Result<Self> {
        let mut table = BTreeMap::new();
        for (native, harmonized) in entries {
            ensure!(
                usize::from(harmonized) < NUM_CLASSES || harmonized == IGNORE,
                InvalidArgument,
                "label {native} maps to {harmonized}, outside 0..{NUM_CLASSES} and not {IGNORE}"
            );
            ensure!(table.insert(native, harmonized).is_none(), InvalidArgument, "label {native} is mapped twice");
        }
        Ok(LabelMap { name: name.into(), table })
    }

    /// Cityscapes and GTAV label ids (the standard 19-class train ids).
    pub fn cityscapes() -> Self {
        Self::new("cityscapes", CITYSCAPES_IDS.iter().zip(0u16..).map(|(&n, h)| (n, h))).expect("builtin map is valid")
    }

    /// Datasets that already ship 19-class ids, e.g. BDD100K.
    pub fn identity() -> Self {
        Self::new("identity", (0..NUM_CLASSES as u16).map(|i| (i, i))).expect("builtin map is valid")
    }

    /// A builtin map by name: `cityscapes`, `gtav`, `bdd` or `identity`.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "cityscapes" | "gtav" => Some(LabelMap { name: name.into(), ..Self::cityscapes() }),
            "bdd" | "identity" => Some(LabelMap { name: name.into(), ..Self::identity() }),
            _ => None,
        }
    }

    /// Reads `native harmonized` pairs, one per line; `#` starts a comment.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, message: String| Error::Parse { path: path.to_path_buf(), message: format!("line {line}: {message}") };
        let mut entries = Vec::new();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let [a, b] = fields[..] else {
                return Err(bad(n + 1, format!("expected `native harmonized`, got `{line}`")));
            };
            let id = |s: &str| s.parse::<u16>().map_err(|_| bad(n + 1, format!("bad label id `{s}`")));
            entries.push((id(a)?, id(b)?));
        }
        let name = path.file_stem().map_or_else(|| "custom".into(), |s| s.to_string_lossy().into_owned());
        Self::new(name, entries).map_err(|e| bad(0, e.to_string()))
    }

    pub fn get(&self, native: u16) -> u16 {
        self.table.get(&native).copied().unwrap_or(IGNORE)
    }

    pub fn entries(&self) -> impl Iterator<Item = (u16, u16)> + '_ {
        self.table.iter().map(|(&a, &b)| (a, b))
    }
}

pub fn remap(labels: &[u16], map: &LabelMap) -> Vec<u16> {
    let mut lut = [IGNORE; 1 << 16];
    for (native, harmonized) in map.entries() {
        lut[usize::from(native)] = harmonized;
    }
    labels.iter().map(|&v| lut[usize::from(v)]).collect()
}

/// Pixel counts with ground truth in rows and prediction in columns.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    counts: [[u64; NUM_CLASSES]; NUM_CLASSES],
}

impl Default for ConfusionMatrix {
    fn default() -> Self {
        ConfusionMatrix { counts: [[0; NUM_CLASSES]; NUM_CLASSES] }
    }
}

impl ConfusionMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt][pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// Counts every pixel whose ground truth is not [`IGNORE`]. Predictions
    /// must be class ids.
    pub fn accumulate(&mut self, gt: &[u16], pred: &[u16]) -> Result<()> {
        ensure!(gt.len() == pred.len(), Shape, "ground truth has {} pixels, prediction {}", gt.len(), pred.len());
        if let Some(bad) = pred.iter().find(|&&p| usize::from(p) >= NUM_CLASSES) {
            return Err(Error::InvalidArgument(format!("prediction id {bad} is not a class in 0..{NUM_CLASSES}")));
        }
        if let Some(bad) = gt.iter().find(|&&g| usize::from(g) >= NUM_CLASSES && g != IGNORE) {
            return Err(Error::InvalidArgument(format!("ground truth id {bad} is neither a class nor {IGNORE}")));
        }
        for (&g, &p) in gt.iter().zip(pred) {
            if g != IGNORE {
                self.counts[usize::from(g)][usize::from(p)] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (row, orow) in self.counts.iter_mut().zip(&other.counts) {
            for (c, o) in row.iter_mut().zip(orow) {
                *c += o;
            }
        }
    }

    /// Per-class IoU (`None` where the class appears in neither ground truth
    /// nor prediction) and their mean over the remaining classes.
    pub fn miou(&self) -> Result<(Vec<Option<f64>>, f64)> {
        if self.total() == 0 {
            return Err(Error::EmptyConfusion);
        }
        let per_class: Vec<Option<f64>> = (0..NUM_CLASSES)
            .map(|c| {
                let tp = self.counts[c][c];
                let fn_: u64 = self.counts[c].iter().sum::<u64>() - tp;
                let fp: u64 = self.counts.iter().map(|row| row[c]).sum::<u64>() - tp;
                let union = tp + fp + fn_;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect();
        let present: Vec<f64> = per_class.iter().flatten().copied().collect();
        Ok((per_class.clone(), present.iter().sum::<f64>() / present.len() as f64))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClassIou {
    pub id: usize,
    pub name: &'static str,
    pub iou: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IouReport {
    pub label_map: String,
    pub images: usize,
    pub pixels: u64,
    pub classes: Vec<ClassIou>,
    pub miou: f64,
}

impl IouReport {
    pub fn new(conf: &ConfusionMatrix, label_map: &str, images: usize) -> Result<Self> {
        let (per_class, miou) = conf.miou()?;
        let classes = per_class.into_iter().enumerate().map(|(id, iou)| ClassIou { id, name: CLASS_NAMES[id], iou }).collect();
        Ok(IouReport { label_map: label_map.into(), images, pixels: conf.total(), classes, miou })
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("label map: {}\nimages: {}\npixels: {}\n\n", self.label_map, self.images, self.pixels);
        s.push_str(&format!("{:>3}  {:<14} {:>8}\n", "id", "class", "IoU"));
        for c in &self.classes {
            let iou = c.iou.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
            s.push_str(&format!("{:>3}  {:<14} {:>8}\n", c.id, c.name, iou));
        }
        s.push_str(&format!("\nmIoU: {:.2}\n", 100.0 * self.miou));
        s
    }
}

/// Evaluates predictions against ground truth matched by relative path (any
/// image extension). Ground truth is remapped with `map`; predictions must
/// already hold class ids.
pub fn evaluate_dirs(pred_dir: &Path, gt_dir: &Path, map: &LabelMap) -> Result<IouReport> {
    use rayon::prelude::*;

    use crate::imageio;

    let preds: BTreeMap<String, std::path::PathBuf> =
        imageio::list_images(pred_dir)?.into_iter().map(|p| (imageio::image_id(pred_dir, &p), p)).collect();
    let gts = imageio::list_images(gt_dir)?;
    ensure!(!gts.is_empty(), InvalidArgument, "no ground-truth images under {}", gt_dir.display());
    let pairs: Vec<_> = gts
        .iter()
        .map(|g| {
            let id = imageio::image_id(gt_dir, g);
            preds
                .get(&id)
                .map(|p| (g.clone(), p.clone()))
                .ok_or_else(|| Error::InvalidArgument(format!("no prediction for ground truth `{id}`")))
        })
        .collect::<Result<_>>()?;
    let conf = pairs
        .par_iter()
        .map(|(g, p)| {
            let gt = imageio::load_labels(g)?;
            let pred = imageio::load_labels(p)?;
            ensure!(gt.dimensions() == pred.dimensions(), Shape, "{} and {} differ in size", g.display(), p.display());
            let mut c = ConfusionMatrix::new();
            c.accumulate(&remap(gt.as_raw(), map), pred.as_raw())?;
            Ok(c)
        })
        .try_reduce(ConfusionMatrix::new, |mut a, b| {
            a.merge(&b);
            Ok(a)
        })?;
    IouReport::new(&conf, &map.name, pairs.len())
}
