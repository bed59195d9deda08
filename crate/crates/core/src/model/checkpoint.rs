//! Binary checkpoint file.
//!
//! All integers and floats are little-endian:
//!
//! ```text
//! magic        4 bytes  "OMCL"
//! version      u32      1
//! arch tag     u8       0 = mlp, 1 = small-cnn
//! arch dims    u32 n, then n × u32 (mlp hidden widths | cnn channels)
//! input shape  3 × u32  height, width, channels
//! embed dim    u32
//! classes      u32
//! scale        f64
//! margin       f64
//! threshold    f64
//! lambda       f64
//! stats        u32 k (0 = none), then k × f64 means, k × f64 stds
//! tensors      u32 count, then per tensor: u32 rank, rank × u64 dims, values as f64
//!              (backbone parameters in forward order, then head weights)
//! rng          32-byte seed, u64 stream, u128 word position
//! metadata     u32 length, UTF-8 JSON
//! ```

use std::io::{self, Read, Write};
use std::path::Path;

use super::{Architecture, Backbone, CosineHead, HeadHyper, InputShape, Model, ModelError};
use crate::autodiff::Tensor;
use crate::data::ChannelStats;
use crate::rng::{stream_rng, RngState, Stream};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"OMCL";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: Model,
    pub stats: Option<ChannelStats>,
    pub rng: RngState,
    pub metadata: serde_json::Value,
}

struct Writer<W: Write>(W);

impl<W: Write> Writer<W> {
    fn u8(&mut self, v: u8) -> io::Result<()> {
        self.0.write_all(&[v])
    }
    fn u32(&mut self, v: usize) -> io::Result<()> {
        let v = u32::try_from(v).map_err(|_| io::Error::new(io::ErrorKind::InvalidInput, "value exceeds u32"))?;
        self.0.write_all(&v.to_le_bytes())
    }
    fn u64(&mut self, v: u64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64(&mut self, v: f64) -> io::Result<()> {
        self.0.write_all(&v.to_le_bytes())
    }
    fn f64s(&mut self, vs: &[f64]) -> io::Result<()> {
        vs.iter().try_for_each(|v| self.f64(*v))
    }
    fn tensor(&mut self, t: &Tensor) -> io::Result<()> {
        self.u32(t.shape().len())?;
        for d in t.shape() {
            self.u64(*d as u64)?;
        }
        self.f64s(t.data())
    }
}

struct Reader<R: Read>(R);

impl<R: Read> Reader<R> {
    fn bytes<const N: usize>(&mut self) -> Result<[u8; N], ModelError> {
        let mut buf = [0u8; N];
        self.0.read_exact(&mut buf).map_err(|e| match e.kind() {
            io::ErrorKind::UnexpectedEof => ModelError::Corrupt("truncated file".into()),
            _ => ModelError::Io(e),
        })?;
        Ok(buf)
    }
    fn u8(&mut self) -> Result<u8, ModelError> {
        Ok(self.bytes::<1>()?[0])
    }
    fn u32(&mut self) -> Result<usize, ModelError> {
        Ok(u32::from_le_bytes(self.bytes()?) as usize)
    }
    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.bytes()?))
    }
    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.bytes()?))
    }
    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, ModelError> {
        (0..n).map(|_| self.f64()).collect()
    }
    fn bounded(&mut self, limit: usize, what: &str) -> Result<usize, ModelError> {
        let n = self.u32()?;
        if n > limit {
            return Err(ModelError::Corrupt(format!("{what} count {n} exceeds {limit}")));
        }
        Ok(n)
    }
    fn tensor(&mut self) -> Result<Tensor, ModelError> {
        let rank = self.bounded(8, "rank")?;
        let shape = (0..rank)
            .map(|_| self.u64().map(|d| d as usize))
            .collect::<Result<Vec<_>, _>>()?;
        let len = shape
            .iter()
            .try_fold(1usize, |acc, d| acc.checked_mul(*d))
            .filter(|n| *n <= 1 << 32)
            .ok_or_else(|| ModelError::Corrupt(format!("tensor shape {shape:?} too large")))?;
        let data = self.f64s(len)?;
        Ok(Tensor::new(shape, data)?)
    }
}

impl Checkpoint {
    pub fn write_to(&self, out: impl Write) -> Result<(), ModelError> {
        let mut w = Writer(out);
        let m = &self.model;
        w.0.write_all(CHECKPOINT_MAGIC)?;
        w.u32(CHECKPOINT_VERSION as usize)?;
        let dims: Vec<usize> = match &m.backbone.arch {
            Architecture::Mlp { hidden } => {
                w.u8(0)?;
                hidden.clone()
            }
            Architecture::SmallCnn { channels } => {
                w.u8(1)?;
                channels.to_vec()
            }
        };
        w.u32(dims.len())?;
        dims.iter().try_for_each(|d| w.u32(*d))?;
        let inp = m.backbone.input;
        w.u32(inp.height)?;
        w.u32(inp.width)?;
        w.u32(inp.channels)?;
        w.u32(m.backbone.embed_dim)?;
        w.u32(m.head.num_classes())?;
        w.f64(m.head.scale)?;
        w.f64(m.head.hyper.margin)?;
        w.f64(m.head.hyper.threshold)?;
        w.f64(m.head.hyper.lambda)?;
        match &self.stats {
            Some(s) => {
                w.u32(s.mean.len())?;
                w.f64s(&s.mean)?;
                w.f64s(&s.std)?;
            }
            None => w.u32(0)?,
        }
        w.u32(m.backbone.params.len() + 1)?;
        m.backbone.params.iter().try_for_each(|t| w.tensor(t))?;
        w.tensor(&m.head.weights)?;
        w.0.write_all(&self.rng.seed)?;
        w.u64(self.rng.stream)?;
        w.0.write_all(&self.rng.word_pos.to_le_bytes())?;
        let meta = serde_json::to_vec(&self.metadata).map_err(|e| ModelError::Corrupt(e.to_string()))?;
        w.u32(meta.len())?;
        w.0.write_all(&meta)?;
        Ok(())
    }

    pub fn read_from(input: impl Read) -> Result<Self, ModelError> {
        let mut r = Reader(input);
        if &r.bytes::<4>()? != CHECKPOINT_MAGIC {
            return Err(ModelError::BadMagic);
        }
        let version = r.u32()? as u32;
        if version != CHECKPOINT_VERSION {
            return Err(ModelError::UnsupportedVersion(version));
        }
        let tag = r.u8()?;
        let ndims = r.bounded(64, "architecture dims")?;
        let dims = (0..ndims).map(|_| r.u32()).collect::<Result<Vec<_>, _>>()?;
        let arch = match (tag, dims.as_slice()) {
            (0, _) => Architecture::Mlp { hidden: dims },
            (1, [a, b]) => Architecture::SmallCnn { channels: [*a, *b] },
            _ => {
                return Err(ModelError::Corrupt(format!(
                    "unknown architecture tag {tag} with dims {dims:?}"
                )))
            }
        };
        let input = InputShape::new(r.u32()?, r.u32()?, r.u32()?);
        let embed_dim = r.u32()?;
        let classes = r.u32()?;
        let scale = r.f64()?;
        let hyper = HeadHyper {
            margin: r.f64()?,
            threshold: r.f64()?,
            lambda: r.f64()?,
        };
        let k = r.bounded(4096, "stats channel")?;
        let stats = if k == 0 {
            None
        } else {
            Some(ChannelStats {
                mean: r.f64s(k)?,
                std: r.f64s(k)?,
            })
        };
        let count = r.bounded(1024, "tensor")?;
        if count == 0 {
            return Err(ModelError::Corrupt("no tensors".into()));
        }
        let mut tensors = (0..count).map(|_| r.tensor()).collect::<Result<Vec<_>, _>>()?;
        let weights = tensors.pop().expect("count > 0");
        if weights.shape() != [classes, embed_dim] {
            return Err(ModelError::Corrupt(format!(
                "head weights {:?} do not match {classes}x{embed_dim}",
                weights.shape()
            )));
        }
        let rng = RngState {
            seed: r.bytes()?,
            stream: r.u64()?,
            word_pos: u128::from_le_bytes(r.bytes()?),
        };
        let meta_len = r.bounded(1 << 24, "metadata byte")?;
        let mut meta = vec![0u8; meta_len];
        r.0.read_exact(&mut meta)
            .map_err(|_| ModelError::Corrupt("truncated metadata".into()))?;
        let metadata = serde_json::from_slice(&meta).map_err(|e| ModelError::Corrupt(e.to_string()))?;

        let template = Backbone::new(arch, input, embed_dim, &mut stream_rng(0, Stream::Init, 0))
            .map_err(|e| ModelError::Corrupt(e.to_string()))?;
        let expected: Vec<&[usize]> = template.params.iter().map(Tensor::shape).collect();
        let got: Vec<&[usize]> = tensors.iter().map(Tensor::shape).collect();
        if expected != got {
            return Err(ModelError::Corrupt(format!(
                "backbone tensors {got:?} do not match architecture {expected:?}"
            )));
        }
        let backbone = Backbone {
            params: tensors,
            ..template
        };
        Ok(Self {
            model: Model {
                backbone,
                head: CosineHead { weights, scale, hyper },
            },
            stats,
            rng,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        let mut buf = Vec::new();
        self.write_to(&mut buf)?;
        std::fs::write(path, buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let bytes = std::fs::read(path)?;
        Self::read_from(bytes.as_slice())
    }
}
