use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;
use stylemix::adain::{AdainModel, WeightArchive, MAGIC, VERSION};
use stylemix::augment::{self, Sampler, TransformParams};
use stylemix::pipeline::{self, AugmentationManifest, DatasetJob, StyleSource};
use stylemix::segeval::{self, LabelMap};
use stylemix::tcps::{self, Bin};
use stylemix::{imageio, seed_of, Config, Error, Result};
use tracing::{info, warn};

use crate::{Cli, Command, EvalArgs, PoolArgs, PreviewArgs, SampleArgs, ScoreArgs, StylizeArgs, WeightsInfoArgs, WeightsSynthArgs};

pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => {
            require_file(path, "config file")?;
            Config::load(path)?
        }
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    cfg.validate()?;
    let workers = match cli.workers {
        Some(0) => return Err(Error::InvalidArgument("--workers must be at least 1".into())),
        Some(n) => n,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    // Ignore the error when a global pool already exists (only possible in tests).
    let _ = rayon::ThreadPoolBuilder::new().num_threads(workers).build_global();

    match cli.command {
        Command::Score(a) => score(&cfg, &a),
        Command::Pool(a) => pool(cfg, &a),
        Command::Stylize(a) => stylize(&cfg, &a, workers),
        Command::Sample(a) => sample(&cfg, &a),
        Command::DistortPreview(a) => preview(&cfg, &a),
        Command::Eval(a) => eval(&a),
        Command::WeightsInfo(a) => weights_info(&a),
        Command::WeightsSynth(a) => weights_synth(cli.seed.unwrap_or(0), &a),
        Command::PrintConfig => emit(&format!("{}\n", serde_json::to_string_pretty(&cfg)?)),
    }
}

/// Writes to stdout; a closed pipe (as in `| head`) is not an error.
fn emit(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(Error::io("<stdout>", e)),
        _ => Ok(()),
    }
}

fn require_dir(path: &Path, what: &str) -> Result<()> {
    if path.is_dir() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} directory {} does not exist", path.display())))
    }
}

fn require_file(path: &Path, what: &str) -> Result<()> {
    if path.is_file() {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("{what} {} does not exist", path.display())))
    }
}

fn check_failures(failed: usize, total: usize, fraction: f64) -> Result<()> {
    if total > 0 && failed as f64 > fraction * total as f64 {
        return Err(Error::TooManyFailures { failed, total });
    }
    Ok(())
}

fn score(cfg: &Config, args: &ScoreArgs) -> Result<()> {
    require_dir(&args.dir, "image")?;
    let results = tcps::score_dir(&args.dir, &cfg.tcps)?;
    let total = results.len();
    let mut records = Vec::with_capacity(total);
    for (path, r) in results {
        match r {
            Ok(rec) => records.push(rec),
            Err(e) => warn!(path = %path.display(), error = %e, "cannot score image"),
        }
    }
    let failed = total - records.len();
    check_failures(failed, total, cfg.pipeline.max_failure_fraction)?;
    tcps::write_scores(&args.out, &records)?;
    let count = |b: Bin| records.iter().filter(|r| r.score.bin == b).count();
    info!(
        scored = records.len(),
        failed,
        low = count(Bin::Low),
        medium = count(Bin::Medium),
        high = count(Bin::High),
        out = %args.out.display(),
        "scores written"
    );
    Ok(())
}

fn style_dir(cfg: &Config, explicit: Option<&Path>) -> Result<PathBuf> {
    match (explicit, &cfg.pipeline.style_source) {
        (Some(dir), _) => Ok(dir.to_path_buf()),
        (None, StyleSource::Intra) => {
            Err(Error::InvalidArgument("intra style source needs the content directory as style directory".into()))
        }
        (None, src) => Ok(src.dir(Path::new("")).to_path_buf()),
    }
}

fn pool(mut cfg: Config, args: &PoolArgs) -> Result<()> {
    if let Some(size) = args.size {
        cfg.pipeline.style_pool_size = size;
    }
    if args.filter.is_some() {
        cfg.pipeline.tcps_filter = args.filter;
    }
    if args.scores.is_some() {
        cfg.pipeline.scores_file = args.scores.clone();
    }
    cfg.pipeline.validate()?;
    let dir = style_dir(&cfg, args.dir.as_deref())?;
    require_dir(&dir, "style")?;
    let pool = pipeline::build_pool(&dir, &cfg.pipeline, &cfg.tcps)?;
    pipeline::write_pool(&args.out, &pool)?;
    info!(styles = pool.len(), out = %args.out.display(), "pool written");
    Ok(())
}

fn stylize(cfg: &Config, args: &StylizeArgs, workers: usize) -> Result<()> {
    require_dir(&args.images, "content image")?;
    if let Some(labels) = &args.labels {
        require_dir(labels, "label")?;
    }
    require_file(&args.weights, "weight archive")?;
    let pool = match &args.pool {
        Some(file) => {
            require_file(file, "pool listing")?;
            pipeline::read_pool(file)?
        }
        None => {
            let dir = match (&args.styles, &cfg.pipeline.style_source) {
                (Some(dir), _) => dir.clone(),
                (None, src) => src.dir(&args.images).to_path_buf(),
            };
            require_dir(&dir, "style")?;
            pipeline::build_pool(&dir, &cfg.pipeline, &cfg.tcps)?
        }
    };
    let bytes = std::fs::read(&args.weights).map_err(|e| Error::io(&args.weights, e))?;
    let weights_digest = imageio::sha256_hex(&bytes);
    let archive = WeightArchive::from_bytes(&bytes)?;
    drop(bytes);
    let model = AdainModel::load(&archive)?;
    drop(archive);
    let job = DatasetJob {
        images: &args.images,
        labels: args.labels.as_deref(),
        out_dir: &args.out,
        model: &model,
        weights_digest: &weights_digest,
        pool: &pool,
        workers,
    };
    let manifest = pipeline::augment_dataset(&cfg.pipeline, &cfg.stylize, cfg.sampler.p_aug, &job)?;
    emit(&format!(
        "{}: {} originals, {} stylized\n",
        args.out.join(pipeline::MANIFEST_FILE).display(),
        manifest.images.len(),
        manifest.stylized_count()
    ))
}

fn sample(cfg: &Config, args: &SampleArgs) -> Result<()> {
    require_file(&args.manifest, "manifest")?;
    let manifest = AugmentationManifest::read(&args.manifest)?;
    Sampler::new(&manifest, cfg.sampler.clone())?;
    let len = manifest.images.len();
    let total = usize::try_from(args.epochs)
        .ok()
        .and_then(|e| e.checked_mul(len))
        .ok_or_else(|| Error::InvalidArgument(format!("{} epochs is too many", args.epochs)))?;
    let root = args.manifest.parent().unwrap_or(Path::new(""));
    let draws: Vec<_> = (0..total)
        .into_par_iter()
        .map_init(|| Sampler::new(&manifest, cfg.sampler.clone()).expect("validated above"), |s, i| s.draw((i / len) as u64, i % len))
        .collect();
    let mut text = String::new();
    for d in &draws {
        let label = d.label(&manifest).map_or_else(|| "-".to_string(), |l| root.join(l).display().to_string());
        writeln!(text, "{}\t{}\t{}", root.join(d.path(&manifest)).display(), label, d.transform_seed).expect("write to string");
    }
    match &args.out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::io(path, e))?,
        None => emit(&text)?,
    }
    let stylized = draws.iter().filter(|d| d.variant.is_some()).count();
    info!(items = draws.len(), stylized, epochs = args.epochs, "item list written");
    Ok(())
}

#[derive(Serialize)]
struct PreviewRecord {
    file: String,
    seed: u64,
    params: TransformParams,
}

fn preview(cfg: &Config, args: &PreviewArgs) -> Result<()> {
    require_file(&args.image, "image")?;
    let img = imageio::load_rgb(&args.image)?;
    let stem = args.image.file_stem().map_or_else(|| "image".into(), |s| s.to_string_lossy().into_owned());
    let base = cfg.sampler.seed;
    let mut records = Vec::with_capacity(args.count);
    for k in 0..args.count {
        let seed = seed_of!(base, "preview", k);
        let mut params = TransformParams::draw(&cfg.pmd, &cfg.blur, seed);
        if args.pmd_only {
            params.blur_sigma = None;
            params.mirror = false;
        }
        let (out, _) = augment::transform_item(&img, None, &params)?;
        let file = format!("{stem}_{k:02}.png");
        imageio::save_png(&out, args.out.join(&file))?;
        records.push(PreviewRecord { file, seed, params });
    }
    let json_path = args.out.join("params.json");
    let mut json = serde_json::to_string_pretty(&records)?;
    json.push('\n');
    std::fs::write(&json_path, json).map_err(|e| Error::io(&json_path, e))?;
    info!(examples = args.count, out = %args.out.display(), "previews written");
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    require_dir(&args.pred, "prediction")?;
    require_dir(&args.gt, "ground-truth")?;
    let map = match LabelMap::builtin(&args.label_map) {
        Some(m) => m,
        None => {
            let path = Path::new(&args.label_map);
            require_file(path, "label map")?;
            LabelMap::read(path)?
        }
    };
    let report = segeval::evaluate_dirs(&args.pred, &args.gt, &map)?;
    emit(&report.to_text())?;
    if let Some(path) = &args.json {
        let mut json = serde_json::to_string_pretty(&report)?;
        json.push('\n');
        std::fs::write(path, json).map_err(|e| Error::io(path, e))?;
    }
    Ok(())
}

fn weights_info(args: &WeightsInfoArgs) -> Result<()> {
    require_file(&args.archive, "weight archive")?;
    let archive = WeightArchive::read(&args.archive)?;
    let params: usize = archive.iter().map(|(_, t)| t.data.len()).sum();
    let mut text = format!(
        "{}: {} v{VERSION}, {} tensors, {params} parameters, crc ok\n",
        args.archive.display(),
        String::from_utf8_lossy(MAGIC),
        archive.len()
    );
    for (name, t) in archive.iter() {
        writeln!(text, "  {name:<24} {:?}", t.dims).expect("write to string");
    }
    let problems = archive.census();
    if problems.is_empty() {
        text.push_str("complete encoder/decoder layout\n");
    }
    for p in &problems {
        writeln!(text, "missing or mis-shaped: {p}").expect("write to string");
    }
    emit(&text)
}

fn weights_synth(seed: u64, args: &WeightsSynthArgs) -> Result<()> {
    if let Some(dir) = args.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    WeightArchive::synthetic(seed).write(&args.out)?;
    info!(out = %args.out.display(), seed, "synthetic weights written");
    Ok(())
}
