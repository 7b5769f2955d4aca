use serde::{Deserialize, Serialize};

use super::network::{decoder_description, encoder_description, Network};
use super::WeightArchive;
use crate::error::{ensure, Result};
use crate::imageio;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StylizeConfig {
    /// Blend between the aligned features (1.0) and the content features (0.0).
    pub alpha: f32,
    /// Added to the content standard deviation.
    pub epsilon_std: f32,
}

impl Default for StylizeConfig {
    fn default() -> Self {
        StylizeConfig { alpha: 1.0, epsilon_std: 1e-5 }
    }
}

impl StylizeConfig {
    pub fn validate(&self) -> Result<()> {
        ensure!((0.0..=1.0).contains(&self.alpha), Config, "alpha must be in [0, 1], got {}", self.alpha);
        ensure!(self.epsilon_std > 0.0, Config, "epsilon_std must be positive, got {}", self.epsilon_std);
        Ok(())
    }
}

/// Per-channel spatial mean and population standard deviation of batch item `b`.
pub fn channel_stats(t: &Tensor, b: usize) -> Vec<(f64, f64)> {
    (0..t.channels())
        .map(|c| {
            let plane = t.plane(b, c);
            let n = plane.len() as f64;
            let mean = plane.iter().map(|&v| v as f64).sum::<f64>() / n;
            let var = plane.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / n;
            (mean, var.sqrt())
        })
        .collect()
}

/// Re-normalize `content` so every channel takes the mean and standard
/// deviation of the matching `style` channel. The style batch may be 1
/// (shared) or equal to the content batch.
pub fn adain(content: &Tensor, style: &Tensor, cfg: &StylizeConfig) -> Result<Tensor> {
    ensure!(
        content.channels() == style.channels(),
        Shape,
        "adain: content has {} channels, style has {}",
        content.channels(),
        style.channels()
    );
    ensure!(
        style.batch() == 1 || style.batch() == content.batch(),
        Shape,
        "adain: style batch {} cannot pair with content batch {}",
        style.batch(),
        content.batch()
    );
    let [n, c, h, w] = content.dims();
    let hw = h * w;
    let alpha = cfg.alpha as f64;
    let mut out = Vec::with_capacity(content.len());
    for b in 0..n {
        let cs = channel_stats(content, b);
        let ss = channel_stats(style, if style.batch() == 1 { 0 } else { b });
        for ch in 0..c {
            let (mc, sc) = cs[ch];
            let (ms, sd) = ss[ch];
            let scale = sd / (sc + cfg.epsilon_std as f64);
            let plane = content.plane(b, ch);
            if alpha == 0.0 {
                out.extend_from_slice(plane);
            } else {
                out.extend(plane.iter().map(|&v| {
                    let aligned = scale * (v as f64 - mc) + ms;
                    (alpha * aligned + (1.0 - alpha) * v as f64) as f32
                }));
            }
        }
    }
    debug_assert_eq!(out.len(), n * c * hw);
    Tensor::new(content.dims(), out)
}

/// Encoder and decoder loaded from one archive.
pub struct AdainModel {
    encoder: Network,
    decoder: Network,
}

impl AdainModel {
    pub fn load(weights: &WeightArchive) -> Result<Self> {
        Ok(AdainModel { encoder: Network::load(encoder_description(), weights)?, decoder: Network::load(decoder_description(), weights)? })
    }

    /// RGB image in [0, 1] (`1x3xHxW`, H and W at least 8) to relu4_1 features.
    pub fn encode(&self, image: &Tensor) -> Result<Tensor> {
        ensure!(image.channels() == 3, Shape, "encode expects 3 channels, got {}", image.channels());
        ensure!(
            image.height() >= 8 && image.width() >= 8,
            Shape,
            "encode needs at least 8x8 pixels, got {}x{}",
            image.height(),
            image.width()
        );
        self.encoder.forward(image)
    }

    /// relu4_1 features to an RGB image clamped to [0, 1].
    pub fn decode(&self, features: &Tensor) -> Result<Tensor> {
        ensure!(features.channels() == 512, Shape, "decode expects 512 channels, got {}", features.channels());
        Ok(self.decoder.forward(features)?.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Stylize a content image with a prepared style image. The result has the
    /// content image's size.
    pub fn stylize(&self, content: &Tensor, style: &Tensor, cfg: &StylizeConfig) -> Result<Tensor> {
        let style_feat = self.encode(style)?;
        self.stylize_with_features(content, &style_feat, cfg)
    }

    /// As [`stylize`](Self::stylize), reusing already encoded style features.
    pub fn stylize_with_features(&self, content: &Tensor, style_feat: &Tensor, cfg: &StylizeConfig) -> Result<Tensor> {
        cfg.validate()?;
        let content_feat = self.encode(content)?;
        self.finish(content, &content_feat, style_feat, cfg)
    }

    /// AdaIN + decode + resize back, given both feature maps.
    pub fn finish(&self, content: &Tensor, content_feat: &Tensor, style_feat: &Tensor, cfg: &StylizeConfig) -> Result<Tensor> {
        let t = adain(content_feat, style_feat, cfg)?;
        let decoded = self.decode(&t)?;
        if decoded.height() == content.height() && decoded.width() == content.width() {
            return Ok(decoded);
        }
        imageio::resize_tensor(&decoded, content.width(), content.height())
    }
}
