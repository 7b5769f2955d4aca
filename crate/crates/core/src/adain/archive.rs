//! The portable `SMDW` weight archive.
//!
//! Layout (all integers little-endian `u32`):
//!
//! ```text
//! "SMDW" | version = 1 | tensor count
//! per tensor: name length | UTF-8 name | rank | rank x dim | f32 LE payload
//! CRC32 of every preceding byte
//! ```

use std::fs;
use std::path::Path;

use indexmap::IndexMap;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::network::{decoder_description, encoder_description, LayerOp};
use crate::error::{Error, Result};
use crate::tensor::{ConvSpec, Tensor};

pub const MAGIC: &[u8; 4] = b"SMDW";
pub const VERSION: u32 = 1;

/// One named array of any rank.
#[derive(Clone, Debug, PartialEq)]
pub struct ArchiveTensor {
    pub dims: Vec<usize>,
    pub data: Vec<f32>,
}

impl ArchiveTensor {
    pub fn new(dims: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        if dims.iter().product::<usize>() != data.len() {
            return Err(Error::Archive(format!("dims {dims:?} do not match {} values", data.len())));
        }
        Ok(ArchiveTensor { dims, data })
    }
}

/// Named tensors in file order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WeightArchive {
    tensors: IndexMap<String, ArchiveTensor>,
}

impl WeightArchive {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: ArchiveTensor) -> Option<ArchiveTensor> {
        self.tensors.insert(name.into(), tensor)
    }

    pub fn get(&self, name: &str) -> Option<&ArchiveTensor> {
        self.tensors.get(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<ArchiveTensor> {
        self.tensors.shift_remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArchiveTensor)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.tensors.iter().map(|(k, t)| 8 + k.len() + 4 * t.dims.len() + 4 * t.data.len()).sum();
        let mut out = Vec::with_capacity(16 + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.dims.len() as u32).to_le_bytes());
            for &d in &t.dims {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in &t.data {
                out.extend_from_slice(&v.to_bits().to_le_bytes());
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::Archive(format!("truncated: {} bytes", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(Error::Archive("bad magic, not an SMDW archive".into()));
        }
        let (body, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().unwrap());
        let computed = crc32fast::hash(body);
        if stored != computed {
            return Err(Error::Crc { stored, computed });
        }
        let mut r = Reader { buf: body, pos: 4 };
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Archive(format!("unsupported format version {version}")));
        }
        let count = r.u32()? as usize;
        let mut tensors = IndexMap::with_capacity(count.min(4096));
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(len)?).map_err(|_| Error::Archive("tensor name is not UTF-8".into()))?.to_owned();
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| Error::Archive(format!("tensor `{name}` is too large")))?;
            let raw = r.take(n.checked_mul(4).ok_or_else(|| Error::Archive("tensor too large".into()))?)?;
            let data = raw.chunks_exact(4).map(|c| f32::from_bits(u32::from_le_bytes(c.try_into().unwrap()))).collect();
            if tensors.insert(name.clone(), ArchiveTensor { dims, data }).is_some() {
                return Err(Error::Archive(format!("duplicate tensor `{name}`")));
            }
        }
        if r.pos != body.len() {
            return Err(Error::Archive(format!("{} trailing bytes before CRC", body.len() - r.pos)));
        }
        Ok(WeightArchive { tensors })
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    /// Look up `<layer>.weight` / `<layer>.bias` and check them against the expected shape.
    pub fn conv(&self, layer: &str, in_channels: usize, out_channels: usize, kernel: usize) -> Result<ConvSpec> {
        let wname = format!("{layer}.weight");
        let bname = format!("{layer}.bias");
        let w = self.get(&wname).ok_or_else(|| Error::MissingLayer(wname.clone()))?;
        let b = self.get(&bname).ok_or_else(|| Error::MissingLayer(bname.clone()))?;
        let want = [out_channels, in_channels, kernel, kernel];
        if w.dims != want {
            return Err(Error::Shape(format!("`{wname}` has dims {:?}, expected {want:?}", w.dims)));
        }
        if b.dims != [out_channels] {
            return Err(Error::Shape(format!("`{bname}` has dims {:?}, expected [{out_channels}]", b.dims)));
        }
        ConvSpec::new(Tensor::new(want, w.data.clone())?, b.data.clone())
    }

    /// Layer names required by the network that are absent or mis-shaped.
    pub fn census(&self) -> Vec<String> {
        let mut problems = Vec::new();
        for desc in [encoder_description(), decoder_description()] {
            for layer in &desc.layers {
                if let LayerOp::Conv { name, in_channels, out_channels, kernel } = layer {
                    if let Err(e) = self.conv(name, *in_channels, *out_channels, *kernel) {
                        problems.push(e.to_string());
                    }
                }
            }
        }
        problems
    }

    /// He-initialized weights with the full encoder/decoder layout. Only useful
    /// for smoke tests and benchmarks; real runs load converted weights.
    pub fn synthetic(seed: u64) -> Self {
        let mut rng = crate::seed::rng(crate::seed_of!(seed, "synthetic-weights"));
        let mut archive = WeightArchive::new();
        for desc in [encoder_description(), decoder_description()] {
            for layer in &desc.layers {
                if let LayerOp::Conv { name, in_channels, out_channels, kernel } = layer {
                    let fan_in = (in_channels * kernel * kernel) as f32;
                    let normal = Normal::new(0.0f32, (2.0 / fan_in).sqrt()).unwrap();
                    let n = out_channels * in_channels * kernel * kernel;
                    let data = (0..n).map(|_| normal.sample(&mut rng)).collect();
                    let bias = (0..*out_channels).map(|_| rng.random_range(-0.01f32..0.01)).collect();
                    archive.insert(
                        format!("{name}.weight"),
                        ArchiveTensor { dims: vec![*out_channels, *in_channels, *kernel, *kernel], data },
                    );
                    archive.insert(format!("{name}.bias"), ArchiveTensor { dims: vec![*out_channels], data: bias });
                }
            }
        }
        archive
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::Archive(format!("truncated at byte {}", self.pos))),
        }
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
