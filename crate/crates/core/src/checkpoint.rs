//! Binary checkpoint: a named-tensor table plus JSON metadata.
//!
//! ```text
//! "BUSG" | version u32 | meta_len u32 | meta (UTF-8 JSON)
//! | count u32 | count x (name_len u32, name, kind u8, rank u8, extents u64[rank], values)
//! | crc32 u32 of the tensor table (count through the last value)
//! ```
//!
//! All integers and values are little-endian; values are row-major.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig, LossWeights, TrainConfig, Trainer};
use crate::tensor::{ElemKind, Element, ParamStore, RngStream, Tensor};

pub const MAGIC: &[u8; 4] = b"BUSG";
pub const VERSION: u32 = 1;

const GEN_PREFIX: &str = "generator.";
const DISC_PREFIX: &str = "discriminator.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub train: TrainConfig,
    pub weights: LossWeights,
    pub generator: GeneratorConfig,
    pub discriminator: DiscriminatorConfig,
    /// Completed epochs and iterations.
    pub epoch: usize,
    pub iteration: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl TensorData {
    pub fn shape(&self) -> &[usize] {
        match self {
            TensorData::F32(t) => t.shape(),
            TensorData::F64(t) => t.shape(),
        }
    }

    /// Bitwise equality, so NaN payloads compare equal to themselves.
    pub fn bits_eq(&self, other: &TensorData) -> bool {
        match (self, other) {
            (TensorData::F32(a), TensorData::F32(b)) => {
                a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            (TensorData::F64(a), TensorData::F64(b)) => {
                a.shape() == b.shape() && a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits())
            }
            _ => false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub data: TensorData,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub tensors: Vec<NamedTensor>,
}

/// Stored versus recomputed table checksum.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Integrity {
    pub stored: u32,
    pub computed: u32,
}

impl Integrity {
    pub fn is_ok(&self) -> bool {
        self.stored == self.computed
    }
}

fn push_store<T: Element>(out: &mut Vec<NamedTensor>, prefix: &str, store: &ParamStore<T>, wrap: fn(Tensor<T>) -> TensorData) {
    for (_, e) in store.iter() {
        out.push(NamedTensor {
            name: format!("{prefix}{}", e.name),
            data: wrap(e.tensor.clone()),
        });
    }
}

/// Copy `prefix`-named tensors into `store`; each store entry must be
/// present exactly once with matching kind and shape.
fn fill_store(tensors: &[NamedTensor], prefix: &str, store: &mut ParamStore<f32>) -> Result<()> {
    let mut seen = vec![false; store.len()];
    for t in tensors {
        let Some(name) = t.name.strip_prefix(prefix) else { continue };
        let id = store
            .find(name)
            .ok_or_else(|| Error::Data(format!("checkpoint tensor `{}` has no matching parameter", t.name)))?;
        if std::mem::replace(&mut seen[id.index()], true) {
            return Err(Error::Data(format!("checkpoint tensor `{}` appears twice", t.name)));
        }
        match &t.data {
            TensorData::F32(v) => store.set(id, v.clone())?,
            TensorData::F64(_) => return Err(Error::Data(format!("checkpoint tensor `{}` is f64, expected f32", t.name))),
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let id = store.ids().nth(i).expect("index in range");
        return Err(Error::Data(format!("checkpoint lacks parameter `{prefix}{}`", store.name(id))));
    }
    Ok(())
}

impl Checkpoint {
    pub fn from_trainer(t: &Trainer) -> Self {
        let mut tensors = Vec::new();
        push_store(&mut tensors, GEN_PREFIX, &t.generator.store, TensorData::F32);
        push_store(&mut tensors, DISC_PREFIX, &t.discriminator.store, TensorData::F32);
        Self {
            meta: CheckpointMeta {
                train: t.config,
                weights: t.weights,
                generator: t.generator.config.clone(),
                discriminator: t.discriminator.config.clone(),
                epoch: t.epoch(),
                iteration: t.iteration(),
            },
            tensors,
        }
    }

    /// Rebuild the generator described by the metadata and load its weights.
    pub fn generator(&self) -> Result<Generator<f32>> {
        let mut g = Generator::new(self.meta.generator.clone(), &mut RngStream::new(0))?;
        fill_store(&self.tensors, GEN_PREFIX, &mut g.store)?;
        Ok(g)
    }

    pub fn discriminator(&self) -> Result<Discriminator<f32>> {
        let mut d = Discriminator::new(self.meta.discriminator.clone(), &mut RngStream::new(0))?;
        fill_store(&self.tensors, DISC_PREFIX, &mut d.store)?;
        Ok(d)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let meta = serde_json::to_vec(&self.meta)?;
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&len_u32(meta.len(), "metadata")?.to_le_bytes());
        out.extend_from_slice(&meta);
        let table_start = out.len();
        out.extend_from_slice(&len_u32(self.tensors.len(), "tensor count")?.to_le_bytes());
        for t in &self.tensors {
            out.extend_from_slice(&len_u32(t.name.len(), "tensor name")?.to_le_bytes());
            out.extend_from_slice(t.name.as_bytes());
            let shape = t.data.shape();
            let rank = u8::try_from(shape.len()).map_err(|_| Error::InvalidArgument(format!("tensor `{}` rank too large", t.name)))?;
            out.push(match t.data {
                TensorData::F32(_) => ElemKind::F32 as u8,
                TensorData::F64(_) => ElemKind::F64 as u8,
            });
            out.push(rank);
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.data().iter().for_each(|x| x.write_le(&mut out)),
                TensorData::F64(v) => v.data().iter().for_each(|x| x.write_le(&mut out)),
            }
        }
        let crc = crc32fast::hash(&out[table_start..]);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<(Self, Integrity)> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::BadMagic);
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let meta_len = r.u32("metadata length")? as usize;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(meta_len, "metadata")?)?;
        let table_start = r.pos;
        let count = r.u32("tensor count")? as usize;
        let mut tensors = Vec::with_capacity(count.min(4096));
        for i in 0..count {
            let name_len = r.u32("tensor name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::Data(format!("tensor {i} name is not UTF-8")))?
                .to_string();
            let kind = ElemKind::from_tag(r.u8("element kind")?)
                .ok_or_else(|| Error::Data(format!("tensor `{name}` has an unknown element kind")))?;
            let rank = r.u8("rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                let d = u64::from_le_bytes(r.take(8, "extent")?.try_into().expect("8 bytes"));
                shape.push(usize::try_from(d).map_err(|_| Error::Data(format!("tensor `{name}` extent too large")))?);
            }
            let numel = shape
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d))
                .ok_or_else(|| Error::Data(format!("tensor `{name}` is too large")))?;
            let nbytes = numel
                .checked_mul(kind.size())
                .ok_or_else(|| Error::Data(format!("tensor `{name}` is too large")))?;
            let raw = r.take(nbytes, "tensor values")?;
            let data = match kind {
                ElemKind::F32 => TensorData::F32(Tensor::from_vec(&shape, raw.chunks_exact(4).map(f32::read_le).collect())?),
                ElemKind::F64 => TensorData::F64(Tensor::from_vec(&shape, raw.chunks_exact(8).map(f64::read_le).collect())?),
            };
            tensors.push(NamedTensor { name, data });
        }
        let computed = crc32fast::hash(&bytes[table_start..r.pos]);
        let stored = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(Error::Data(format!("{} trailing bytes after checkpoint", bytes.len() - r.pos)));
        }
        Ok((Self { meta, tensors }, Integrity { stored, computed }))
    }
}

fn len_u32(n: usize, what: &str) -> Result<u32> {
    u32::try_from(n).map_err(|_| Error::InvalidArgument(format!("{what} exceeds u32 range")))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated(format!("{what} at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<()> {
    std::fs::write(path, ckpt.to_bytes()?).map_err(|e| Error::io(path, e))
}

/// Loads even when the checksum disagrees; the caller decides what to do
/// with a mismatch (a warning is logged).
pub fn load_checkpoint(path: &Path) -> Result<(Checkpoint, Integrity)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let (ckpt, integrity) = Checkpoint::from_bytes(&bytes)?;
    if !integrity.is_ok() {
        log::warn!(
            "{}: checksum mismatch (stored {:08x}, computed {:08x}); tensor payload is corrupted",
            path.display(),
            integrity.stored,
            integrity.computed
        );
    }
    Ok((ckpt, integrity))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_trainer() -> Trainer {
        Trainer::new(
            TrainConfig { seed: 3, ..Default::default() },
            LossWeights::default(),
            GeneratorConfig::tiny(),
            DiscriminatorConfig::tiny(),
        )
        .unwrap()
    }

    #[test]
    fn round_trip_is_byte_identical() {
        let c = Checkpoint::from_trainer(&tiny_trainer());
        let b1 = c.to_bytes().unwrap();
        let (c2, integ) = Checkpoint::from_bytes(&b1).unwrap();
        assert!(integ.is_ok());
        assert_eq!(c2.to_bytes().unwrap(), b1);
        assert!(c.tensors.iter().zip(&c2.tensors).all(|(a, b)| a.name == b.name && a.data.bits_eq(&b.data)));
    }

    #[test]
    fn every_parameter_once() {
        let t = tiny_trainer();
        let c = Checkpoint::from_trainer(&t);
        assert_eq!(c.tensors.len(), t.generator.store.len() + t.discriminator.store.len());
        let g = c.generator().unwrap();
        for (id, e) in t.generator.store.iter() {
            assert_eq!(g.store.get(id).data(), e.tensor.data());
        }
        let mut dup = c.clone();
        dup.tensors.push(dup.tensors[0].clone());
        assert!(dup.generator().is_err());
        let mut missing = c.clone();
        missing.tensors.remove(0);
        assert!(missing.generator().is_err());
    }

    #[test]
    fn header_errors_are_distinct() {
        let b = Checkpoint::from_trainer(&tiny_trainer()).to_bytes().unwrap();
        let mut bad = b.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(Error::BadMagic)));
        let mut v = b.clone();
        v[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&v), Err(Error::UnsupportedVersion(9))));
        assert!(matches!(Checkpoint::from_bytes(&b[..b.len() - 3]), Err(Error::Truncated(_))));
    }

    #[test]
    fn payload_tamper_is_reported() {
        let c = Checkpoint::from_trainer(&tiny_trainer());
        let b = c.to_bytes().unwrap();
        // First value byte of the first tensor.
        let meta_len = u32::from_le_bytes(b[8..12].try_into().unwrap()) as usize;
        let first = &c.tensors[0];
        let i = 12 + meta_len + 4 + 4 + first.name.len() + 2 + 8 * first.data.shape().len();
        let mut t = b.clone();
        t[i] ^= 0x40;
        let (_, integ) = Checkpoint::from_bytes(&t).unwrap();
        assert!(!integ.is_ok());
        let (_, clean) = Checkpoint::from_bytes(&b).unwrap();
        assert_eq!(integ.stored, clean.computed);
    }

    #[test]
    fn empty_table_is_valid() {
        let mut c = Checkpoint::from_trainer(&tiny_trainer());
        c.tensors.clear();
        let b = c.to_bytes().unwrap();
        let (c2, integ) = Checkpoint::from_bytes(&b).unwrap();
        assert!(integ.is_ok() && c2.tensors.is_empty());
    }

    #[test]
    fn f64_tensors_round_trip() {
        let mut c = Checkpoint::from_trainer(&tiny_trainer());
        c.tensors = vec![NamedTensor {
            name: "x".into(),
            data: TensorData::F64(Tensor::from_vec(&[2, 1], vec![f64::MIN_POSITIVE, -0.0]).unwrap()),
        }];
        let (c2, _) = Checkpoint::from_bytes(&c.to_bytes().unwrap()).unwrap();
        assert!(c2.tensors[0].data.bits_eq(&c.tensors[0].data));
    }
}
