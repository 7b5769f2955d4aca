//! Layer lists for the AdaIN encoder (VGG-19 truncated at relu4_1) and its
//! mirrored decoder. Layer names follow the index of each op in the released
//! PyTorch `nn.Sequential` models, so converted checkpoints keep their keys
//! (`encoder.2.weight` is `vgg.2.weight`).

use crate::error::Result;
use crate::tensor::{self, ConvSpec, Tensor};

use super::WeightArchive;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum LayerOp {
    ReflectionPad(usize),
    Conv { name: String, in_channels: usize, out_channels: usize, kernel: usize },
    Relu,
    MaxPool2,
    UpsampleNearest2,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetworkDescription {
    pub name: &'static str,
    pub in_channels: usize,
    pub out_channels: usize,
    pub layers: Vec<LayerOp>,
}

struct Builder {
    prefix: &'static str,
    layers: Vec<LayerOp>,
}

impl Builder {
    fn conv(&mut self, in_channels: usize, out_channels: usize, kernel: usize) -> &mut Self {
        let name = format!("{}.{}", self.prefix, self.layers.len());
        self.layers.push(LayerOp::Conv { name, in_channels, out_channels, kernel });
        self
    }

    /// reflection pad 1, 3x3 conv, relu
    fn block(&mut self, in_channels: usize, out_channels: usize) -> &mut Self {
        self.layers.push(LayerOp::ReflectionPad(1));
        self.conv(in_channels, out_channels, 3);
        self.layers.push(LayerOp::Relu);
        self
    }

    fn push(&mut self, op: LayerOp) -> &mut Self {
        self.layers.push(op);
        self
    }
}

pub fn encoder_description() -> NetworkDescription {
    let mut b = Builder { prefix: "encoder", layers: Vec::new() };
    b.conv(3, 3, 1)
        .block(3, 64) // relu1_1
        .block(64, 64)
        .push(LayerOp::MaxPool2)
        .block(64, 128) // relu2_1
        .block(128, 128)
        .push(LayerOp::MaxPool2)
        .block(128, 256) // relu3_1
        .block(256, 256)
        .block(256, 256)
        .block(256, 256)
        .push(LayerOp::MaxPool2)
        .block(256, 512); // relu4_1
    NetworkDescription { name: "encoder", in_channels: 3, out_channels: 512, layers: b.layers }
}

pub fn decoder_description() -> NetworkDescription {
    let mut b = Builder { prefix: "decoder", layers: Vec::new() };
    b.block(512, 256)
        .push(LayerOp::UpsampleNearest2)
        .block(256, 256)
        .block(256, 256)
        .block(256, 256)
        .block(256, 128)
        .push(LayerOp::UpsampleNearest2)
        .block(128, 128)
        .block(128, 64)
        .push(LayerOp::UpsampleNearest2)
        .block(64, 64)
        .push(LayerOp::ReflectionPad(1))
        .conv(64, 3, 3);
    NetworkDescription { name: "decoder", in_channels: 512, out_channels: 3, layers: b.layers }
}

enum Stage {
    Pad(usize),
    /// Optional reflection pad, convolution, optional ReLU.
    Conv {
        pad: usize,
        spec: ConvSpec,
        relu: bool,
    },
    Relu,
    Pool,
    Upsample,
}

/// A network description bound to its weights.
pub struct Network {
    desc: NetworkDescription,
    stages: Vec<Stage>,
}

impl Network {
    pub fn load(desc: NetworkDescription, weights: &WeightArchive) -> Result<Self> {
        let mut stages: Vec<Stage> = Vec::new();
        for op in &desc.layers {
            let stage = match op {
                LayerOp::ReflectionPad(p) => Stage::Pad(*p),
                LayerOp::Conv { name, in_channels, out_channels, kernel } => {
                    let spec = weights.conv(name, *in_channels, *out_channels, *kernel)?;
                    match stages.last() {
                        Some(Stage::Pad(p)) => {
                            let pad = *p;
                            stages.pop();
                            Stage::Conv { pad, spec, relu: false }
                        }
                        _ => Stage::Conv { pad: 0, spec, relu: false },
                    }
                }
                LayerOp::Relu => match stages.last_mut() {
                    Some(Stage::Conv { relu, .. }) if !*relu => {
                        *relu = true;
                        continue;
                    }
                    _ => Stage::Relu,
                },
                LayerOp::MaxPool2 => Stage::Pool,
                LayerOp::UpsampleNearest2 => Stage::Upsample,
            };
            stages.push(stage);
        }
        Ok(Network { desc, stages })
    }

    pub fn description(&self) -> &NetworkDescription {
        &self.desc
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut x = std::borrow::Cow::Borrowed(input);
        for stage in &self.stages {
            let next = match stage {
                Stage::Pad(p) => tensor::reflection_pad(&x, *p)?,
                Stage::Conv { pad, spec, relu } => tensor::conv2d_fused(&x, spec, *pad, *relu)?,
                Stage::Relu => tensor::relu_owned(x.into_owned()),
                Stage::Pool => tensor::maxpool2(&x),
                Stage::Upsample => tensor::upsample_nearest2(&x),
            };
            x = std::borrow::Cow::Owned(next);
        }
        Ok(x.into_owned())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn convs(desc: &NetworkDescription) -> Vec<(String, usize, usize, usize)> {
        desc.layers
            .iter()
            .filter_map(|l| match l {
                LayerOp::Conv { name, in_channels, out_channels, kernel } => Some((name.clone(), *in_channels, *out_channels, *kernel)),
                _ => None,
            })
            .collect()
    }

    #[test]
    fn encoder_matches_released_layout() {
        let e = encoder_description();
        assert_eq!(e.layers.len(), 31);
        let c = convs(&e);
        assert_eq!(c[0], ("encoder.0".into(), 3, 3, 1));
        assert_eq!(c[1], ("encoder.2".into(), 3, 64, 3));
        assert_eq!(c.last().unwrap(), &("encoder.29".into(), 256, 512, 3));
        assert_eq!(e.layers.last(), Some(&LayerOp::Relu));
        assert_eq!(e.layers.iter().filter(|l| **l == LayerOp::MaxPool2).count(), 3);
    }

    #[test]
    fn fused_forward_matches_layer_by_layer() {
        let weights = WeightArchive::synthetic(5);
        let net = Network::load(encoder_description(), &weights).unwrap();
        let image = Tensor::from_fn([1, 3, 21, 18], |_, c, y, x| ((c * 31 + y * 7 + x * 3) % 29) as f32 / 29.0);
        let mut x = image.clone();
        for op in &net.description().layers {
            x = match op {
                LayerOp::ReflectionPad(p) => tensor::reflection_pad(&x, *p).unwrap(),
                LayerOp::Conv { name, in_channels, out_channels, kernel } => {
                    let spec = weights.conv(name, *in_channels, *out_channels, *kernel).unwrap();
                    tensor::conv2d(&x, &spec).unwrap()
                }
                LayerOp::Relu => tensor::relu(&x),
                LayerOp::MaxPool2 => tensor::maxpool2(&x),
                LayerOp::UpsampleNearest2 => tensor::upsample_nearest2(&x),
            };
        }
        assert_eq!(net.forward(&image).unwrap(), x);
    }

    #[test]
    fn decoder_matches_released_layout() {
        let d = decoder_description();
        assert_eq!(d.layers.len(), 29);
        let c = convs(&d);
        assert_eq!(c[0], ("decoder.1".into(), 512, 256, 3));
        assert_eq!(c.last().unwrap(), &("decoder.28".into(), 64, 3, 3));
        assert_eq!(d.layers.iter().filter(|l| **l == LayerOp::UpsampleNearest2).count(), 3);
    }
}
