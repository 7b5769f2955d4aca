//! Acceptance suite: prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::panic::{self, AssertUnwindSafe};
use std::path::Path;
use std::time::{Duration, Instant};

use common::{
    blocky_rgb, miou_oracle, naive_conv, naive_pad, naive_pool, random_rgb, random_tensor, rel_err, rng, tcps_oracle, write_images,
};
use image::{imageops, Rgb, RgbImage};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use stylemix::adain::{adain, channel_stats, AdainModel, StylizeConfig, WeightArchive};
use stylemix::augment::{Sampler, SamplerConfig};
use stylemix::imageio;
use stylemix::pipeline::{self, AugmentationManifest, DatasetJob, PipelineConfig, StyleSource, MANIFEST_FILE};
use stylemix::segeval::{ConfusionMatrix, IGNORE, NUM_CLASSES};
use stylemix::tcps::{self, Bin, TcpsConfig};
use stylemix::tensor::{conv2d_with, maxpool2, reflection_pad, ConvAlgo, ConvSpec, Tensor};
use stylemix::Error;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn workers(n: usize) -> rayon::ThreadPool {
    rayon::ThreadPoolBuilder::new().num_threads(n).build().unwrap()
}

fn adain_statistics() -> Outcome {
    let start = Instant::now();
    let mut r = rng(1);
    let cfg = StylizeConfig::default();
    let features = |r: &mut rand_chacha::ChaCha8Rng| {
        let (h, w) = (r.random_range(8..=32), r.random_range(8..=32));
        let mut data = Vec::with_capacity(512 * h * w);
        for _ in 0..512 {
            let (mean, std) = (r.random_range(-2.0..2.0), r.random_range(0.1..1.0));
            let raw: Vec<f64> = (0..h * w).map(|_| StandardNormal.sample(r)).collect();
            let m = raw.iter().sum::<f64>() / raw.len() as f64;
            let s = (raw.iter().map(|v| (v - m).powi(2)).sum::<f64>() / raw.len() as f64).sqrt();
            data.extend(raw.iter().map(|v| ((v - m) / s * std + mean) as f32));
        }
        Tensor::new([1, 512, h, w], data).unwrap()
    };
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let content = features(&mut r);
        let style = features(&mut r);
        let out = adain(&content, &style, &cfg).unwrap();
        for ((m, s), (wm, ws)) in channel_stats(&out, 0).into_iter().zip(channel_stats(&style, 0)) {
            worst = worst.max((m - wm).abs()).max((s - ws).abs());
        }
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst <= 1e-4 && secs < 10.0,
        format!("100 pairs x 512 channels, max |mean/std error| {worst:.2e} (limit 1e-4), {secs:.2} s (limit 10 s)"),
    )
}

fn geometry() -> Outcome {
    let model = AdainModel::load(&WeightArchive::synthetic(7)).unwrap();
    let mut r = rng(2);
    let content = imageio::rgb_to_tensor(&blocky_rgb(&mut r, 1052, 1052, 40));
    let style = imageio::rgb_to_tensor(&blocky_rgb(&mut r, 256, 256, 12));
    let cfg = StylizeConfig::default();
    let feat = model.encode(&content).unwrap();
    let style_feat = model.encode(&style).unwrap();
    let decoded = model.decode(&adain(&feat, &style_feat, &cfg).unwrap()).unwrap();
    let fin = model.finish(&content, &feat, &style_feat, &cfg).unwrap();
    let ok = feat.dims() == [1, 512, 132, 132] && decoded.dims() == [1, 3, 1056, 1056] && fin.dims() == [1, 3, 1052, 1052];
    let [_, _, fh, fw] = feat.dims();
    let [_, _, dh, dw] = decoded.dims();
    let [_, _, oh, ow] = fin.dims();
    outcome(ok, format!("relu4_1 {fh}x{fw}, decoded {dh}x{dw}, final {oh}x{ow}"))
}

fn kernel_oracles() -> Outcome {
    let mut r = rng(3);
    let mut worst = 0.0f32;
    let mut exact = true;
    for _ in 0..50 {
        let (cin, cout) = (r.random_range(1..=32), r.random_range(1..=32));
        let (h, w) = (r.random_range(3..=12), r.random_range(3..=12));
        let k = if r.random_bool(0.5) { 3 } else { 1 };
        let input = random_tensor(&mut r, [1, cin, h, w]);
        let weight = random_tensor(&mut r, [cout, cin, k, k]);
        let bias: Vec<f32> = (0..cout).map(|_| r.random_range(-1.0..1.0)).collect();
        let want = naive_conv(&input, &weight, &bias);
        let spec = ConvSpec::new(weight, bias).unwrap();
        let mut algos = vec![ConvAlgo::Auto, ConvAlgo::Im2col, ConvAlgo::Direct];
        if k == 3 {
            algos.extend([ConvAlgo::Winograd, ConvAlgo::Winograd4]);
        }
        for algo in algos {
            worst = worst.max(rel_err(conv2d_with(&input, &spec, algo).unwrap().data(), &want));
        }
        exact &= maxpool2(&input) == naive_pool(&input);
        let pad = r.random_range(1..h.min(w));
        exact &= reflection_pad(&input, pad).unwrap() == naive_pad(&input, pad);
    }
    outcome(worst <= 1e-5 && exact, format!("50 tensors, max conv relative error {worst:.2e} (limit 1e-5), pool/pad exact: {exact}"))
}

fn tcps_oracle_check() -> Outcome {
    let cfg = TcpsConfig::default();
    let mut r = rng(4);
    let mut mismatches = 0;
    for k in 0..200 {
        let img = if k % 2 == 0 {
            imageops::resize(&random_rgb(&mut r, 16, 16), 512, 512, imageops::FilterType::Triangle)
        } else {
            let (w, h) = (r.random_range(16..640), r.random_range(16..640));
            let cells = r.random_range(2..24);
            blocky_rgb(&mut r, w, h, cells)
        };
        let (w, h) = img.dimensions();
        let s = w.min(h);
        let square = imageops::crop_imm(&img, (w - s) / 2, (h - s) / 2, s, s).to_image();
        let square = imageops::resize(&square, 512, 512, imageops::FilterType::Triangle);
        if tcps::complexity(&img, &cfg).unwrap().score != tcps_oracle(&square, cfg.epsilon) {
            mismatches += 1;
        }
    }
    let constant = tcps::complexity(&RgbImage::from_pixel(640, 480, Rgb([90, 30, 200])), &cfg).unwrap().score;
    let columns = RgbImage::from_fn(512, 512, |x, _| if x % 2 == 0 { Rgb([0; 3]) } else { Rgb([255; 3]) });
    let alt = tcps::complexity(&columns, &cfg).unwrap();
    let bins = cfg.bin(0.5 - 1e-12) == Bin::Low
        && cfg.bin(0.5) == Bin::Medium
        && cfg.bin(0.75 - 1e-12) == Bin::Medium
        && cfg.bin(0.75) == Bin::High
        && cfg.bin(1.0) == Bin::High;
    outcome(
        mismatches == 0 && constant == 1.0 && alt.score == 512.0 / 262_144.0 && alt.bin == Bin::Low && bins,
        format!(
            "{mismatches}/200 oracle mismatches, constant {constant}, alternating columns {} ({}), bins half-open: {bins}",
            alt.score, alt.bin
        ),
    )
}

fn manifest(images: usize, variants: usize) -> AugmentationManifest {
    use stylemix::pipeline::{ManifestImage, PatchOrigin, StylizedEntry};
    AugmentationManifest {
        seed: 0,
        config_digest: String::new(),
        p_aug: 0.8,
        n_variants: variants,
        images: (0..images)
            .map(|i| ManifestImage {
                id: format!("img{i}"),
                source: format!("img{i}.png"),
                origin: PatchOrigin { x: 0, y: 0 },
                original: format!("original/img{i}.png"),
                original_digest: String::new(),
                label: None,
                label_digest: None,
                variants: (0..variants)
                    .map(|v| StylizedEntry {
                        path: format!("stylized/img{i}_v{v}.png"),
                        style_id: v.to_string(),
                        seed: 0,
                        digest: String::new(),
                    })
                    .collect(),
            })
            .collect(),
    }
}

fn sampler() -> Outcome {
    let m = manifest(1000, 3);
    let cfg = SamplerConfig { p_aug: 0.8, seed: 5 };
    let n: usize = 1_000_000;
    let mut s = Sampler::new(&m, cfg.clone()).unwrap();
    let seq: Vec<_> = (0..n).map(|_| s.sample_next()).collect();
    let frac = seq.iter().filter(|d| d.variant.is_some()).count() as f64 / n as f64;
    let len = m.images.len();
    let mut identical = true;
    for w in [1usize, 4, 16] {
        let chunk = n.div_ceil(w);
        let parts: Vec<Vec<_>> = std::thread::scope(|scope| {
            let handles: Vec<_> = (0..w)
                .map(|k| {
                    let (m, cfg) = (&m, cfg.clone());
                    scope.spawn(move || {
                        let mut s = Sampler::new(m, cfg).unwrap();
                        (k * chunk..((k + 1) * chunk).min(n)).map(|i| s.draw((i / len) as u64, i % len)).collect()
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        });
        identical &= parts.concat() == seq;
    }
    outcome(
        (0.796..=0.804).contains(&frac) && identical,
        format!("stylized fraction {frac:.5} over 1e6 draws (need [0.796, 0.804]), identical across 1/4/16 workers: {identical}"),
    )
}

fn manifest_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write_images(&root.join("content"), "street", 3, 64, 72, 6);
    write_images(&root.join("styles"), "painting", 15, 512, 600, 7);
    let weights = WeightArchive::synthetic(8);
    let weights_digest = imageio::sha256_hex(&weights.to_bytes());
    let model = AdainModel::load(&weights).unwrap();
    let cfg = PipelineConfig {
        n_variants: 3,
        style_pool_size: 15,
        style_source: StyleSource::External { dir: root.join("styles") },
        seed: 2024,
        content_patch: 64,
        resize_to: 32,
        ..PipelineConfig::default()
    };
    let run = |out: &Path, workers: usize| {
        let pool = pipeline::build_pool(&root.join("styles"), &cfg, &TcpsConfig::default()).unwrap();
        let job = DatasetJob {
            images: &root.join("content"),
            labels: None,
            out_dir: out,
            model: &model,
            weights_digest: &weights_digest,
            pool: &pool,
            workers,
        };
        pipeline::augment_dataset(&cfg, &StylizeConfig::default(), 0.8, &job).unwrap();
        std::fs::read(out.join(MANIFEST_FILE)).unwrap()
    };
    let a = run(&root.join("run1"), 1);
    let b = run(&root.join("run2"), 4);
    let m = AugmentationManifest::read(&root.join("run1").join(MANIFEST_FILE)).unwrap();
    let (originals, stylized) = (m.images.len(), m.stylized_count());
    outcome(
        a == b && originals == 3 && stylized == 9,
        format!("byte-identical manifests (1 vs 4 workers): {}, entries {stylized} stylized + {originals} original", a == b),
    )
}

fn miou() -> Outcome {
    let mut r = rng(9);
    let mut mismatches = 0;
    for _ in 0..100 {
        let classes = r.random_range(2..=NUM_CLASSES as u16);
        let gt: Vec<u16> = (0..256).map(|_| if r.random_bool(0.1) { IGNORE } else { r.random_range(0..classes) }).collect();
        let pred: Vec<u16> = (0..256).map(|_| r.random_range(0..classes)).collect();
        let mut conf = ConfusionMatrix::new();
        conf.accumulate(&gt, &pred).unwrap();
        if conf.miou().unwrap() != miou_oracle(&gt, &pred, NUM_CLASSES) {
            mismatches += 1;
        }
    }
    let gt: Vec<u16> = (0..256).map(|i| (i % NUM_CLASSES) as u16).collect();
    let mut perfect = ConfusionMatrix::new();
    perfect.accumulate(&gt, &gt).unwrap();
    let (per, mean) = perfect.miou().unwrap();
    let perfect_ok = mean == 1.0 && per.iter().all(|v| *v == Some(1.0));
    let mut partial = ConfusionMatrix::new();
    partial.accumulate(&[0, 0, 1, 1], &[0, 1, 1, 1]).unwrap();
    let (per, mean) = partial.miou().unwrap();
    let excluded = per[2..].iter().all(Option::is_none) && mean == (0.5 + 2.0 / 3.0) / 2.0;
    outcome(
        mismatches == 0 && perfect_ok && excluded,
        format!("{mismatches}/100 oracle mismatches, perfect prediction 1.0: {perfect_ok}, zero-union classes excluded: {excluded}"),
    )
}

fn archive() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let (p1, p2) = (dir.path().join("a.smdw"), dir.path().join("b.smdw"));
    WeightArchive::synthetic(11).write(&p1).unwrap();
    WeightArchive::read(&p1).unwrap().write(&p2).unwrap();
    let (a, b) = (std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    let mut bad = a.clone();
    let mid = bad.len() / 2;
    bad[mid] ^= 0x40;
    let corrupt = matches!(WeightArchive::from_bytes(&bad), Err(Error::Crc { .. }));
    let truncated = matches!(WeightArchive::from_bytes(&a[..a.len() - 100]), Err(Error::Crc { .. }));
    outcome(
        a == b && corrupt && truncated,
        format!("{} bytes, round trip identical: {}, corrupted rejected: {corrupt}, truncated rejected: {truncated}", a.len(), a == b),
    )
}

fn performance() -> Outcome {
    stylemix::tensor::release_buffers();
    let model = AdainModel::load(&WeightArchive::synthetic(12)).unwrap();
    let mut r = rng(13);
    let cfg = StylizeConfig::default();
    let content = imageio::rgb_to_tensor(&blocky_rgb(&mut r, 1052, 1052, 60));
    let style = imageio::rgb_to_tensor(&blocky_rgb(&mut r, 512, 512, 30));
    let single = workers(1).install(|| {
        let t = Instant::now();
        model.stylize(&content, &style, &cfg).unwrap();
        t.elapsed()
    });
    drop(content);
    stylemix::tensor::release_buffers();

    let jobs: Vec<(Tensor, Tensor)> = (0..8)
        .map(|_| (imageio::rgb_to_tensor(&blocky_rgb(&mut r, 384, 384, 20)), imageio::rgb_to_tensor(&blocky_rgb(&mut r, 256, 256, 20))))
        .collect();
    let throughput = |n: usize| -> Duration {
        workers(n).install(|| {
            let t = Instant::now();
            jobs.par_iter().for_each(|(c, s)| {
                model.stylize(c, s, &cfg).unwrap();
            });
            t.elapsed()
        })
    };
    let t1 = throughput(1);
    let t8 = throughput(8);
    let speedup = t1.as_secs_f64() / t8.as_secs_f64();
    let cores = std::thread::available_parallelism().map_or(1, |n| n.get());
    let secs = single.as_secs_f64();
    outcome(
        secs <= 10.0 && speedup >= 3.0,
        format!(
            "single-worker 1052x1052 stylization {secs:.2} s (limit 10 s); 8-worker throughput {speedup:.2}x of 1 worker (need 3x); {cores} core(s) available"
        ),
    )
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let checks: [Check; 9] = [
        ("AdaIN statistics", adain_statistics),
        ("Geometry conformance", geometry),
        ("conv2d/maxpool/pad oracle equivalence", kernel_oracles),
        ("TCPS oracle equivalence", tcps_oracle_check),
        ("Sampler statistics", sampler),
        ("Manifest determinism", manifest_determinism),
        ("mIoU oracle", miou),
        ("Weight archive round-trip", archive),
        ("Performance target", performance),
    ];
    panic::set_hook(Box::new(|_| {}));
    let mut failed = 0;
    for (name, check) in checks {
        let start = Instant::now();
        let out = panic::catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            outcome(false, format!("panicked: {}", msg.unwrap_or_default()))
        });
        failed += usize::from(!out.pass);
        println!("{} {name}: {} [{:.1} s]", if out.pass { "PASS" } else { "FAIL" }, out.detail, start.elapsed().as_secs_f64());
    }
    println!("{}/{} criteria passed", checks.len() - failed, checks.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
