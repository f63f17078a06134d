//! Binary tensor archive and model checkpoints.
//!
//! Layout, little-endian: magic `TSNC`, `u32` version, `u32` entry count,
//! then per entry `u32` name length, UTF-8 name, `u8` dtype, `u32` rank,
//! `rank` x `u64` dims and the packed payload.

use std::fs;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::{ModelConfig, TsNet};
use crate::optim::{Moments, OptimState};
use crate::params::{ParamKind, ParamStore};
use crate::tensor::{Scalar, Shape, Tensor};

pub const MAGIC: &[u8; 4] = b"TSNC";
pub const VERSION: u32 = 1;

pub const DTYPE_F32: u8 = 0;
pub const DTYPE_F64: u8 = 1;
pub const DTYPE_U8: u8 = 2;
pub const DTYPE_U64: u8 = 3;

#[derive(Clone, Debug, PartialEq)]
pub enum Payload {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
    U64(Vec<u64>),
}

impl Payload {
    fn dtype(&self) -> u8 {
        match self {
            Payload::F32(_) => DTYPE_F32,
            Payload::F64(_) => DTYPE_F64,
            Payload::U8(_) => DTYPE_U8,
            Payload::U64(_) => DTYPE_U64,
        }
    }

    fn len(&self) -> usize {
        match self {
            Payload::F32(v) => v.len(),
            Payload::F64(v) => v.len(),
            Payload::U8(v) => v.len(),
            Payload::U64(v) => v.len(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub name: String,
    pub dims: Vec<u64>,
    pub payload: Payload,
}

/// Ordered named tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Archive {
    pub entries: Vec<Entry>,
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or_else(|| Error::Checkpoint(format!("truncated archive: need {n} bytes at offset {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

impl Archive {
    pub fn push(&mut self, name: impl Into<String>, dims: Vec<u64>, payload: Payload) -> Result<()> {
        let name = name.into();
        let n: u64 = dims.iter().product();
        if n as usize != payload.len() {
            return Err(Error::Checkpoint(format!(
                "`{name}`: dims {dims:?} do not match {} values",
                payload.len()
            )));
        }
        if self.get(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate entry `{name}`")));
        }
        self.entries.push(Entry { name, dims, payload });
        Ok(())
    }

    pub fn push_tensor<T: Scalar>(&mut self, name: impl Into<String>, t: &Tensor<T>) -> Result<()> {
        let dims = t.shape().dims().iter().map(|&d| d as u64).collect();
        let payload = match T::DTYPE {
            DTYPE_F32 => Payload::F32(t.data().iter().map(|v| v.f64() as f32).collect()),
            _ => Payload::F64(t.data().iter().map(|v| v.f64()).collect()),
        };
        self.push(name, dims, payload)
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|e| e.name == name)
    }

    fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing entry `{name}`")))
    }

    /// A float entry of rank 4 as a tensor, converting precision if needed.
    pub fn tensor<T: Scalar>(&self, name: &str) -> Result<Tensor<T>> {
        let e = self.require(name)?;
        if e.dims.len() != 4 {
            return Err(Error::Checkpoint(format!(
                "`{name}` has rank {}, expected 4",
                e.dims.len()
            )));
        }
        let shape = Shape::new(
            e.dims[0] as usize,
            e.dims[1] as usize,
            e.dims[2] as usize,
            e.dims[3] as usize,
        );
        let data: Vec<T> = match &e.payload {
            Payload::F32(v) => v.iter().map(|&x| T::of(x as f64)).collect(),
            Payload::F64(v) => v.iter().map(|&x| T::of(x)).collect(),
            _ => return Err(Error::Checkpoint(format!("`{name}` is not a float tensor"))),
        };
        Tensor::from_vec(shape, data)
    }

    pub fn bytes(&self, name: &str) -> Result<&[u8]> {
        match &self.require(name)?.payload {
            Payload::U8(v) => Ok(v),
            _ => Err(Error::Checkpoint(format!("`{name}` is not a byte entry"))),
        }
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        match &self.require(name)?.payload {
            Payload::U64(v) if v.len() == 1 => Ok(v[0]),
            _ => Err(Error::Checkpoint(format!("`{name}` is not a u64 scalar"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        for e in &self.entries {
            out.extend_from_slice(&(e.name.len() as u32).to_le_bytes());
            out.extend_from_slice(e.name.as_bytes());
            out.push(e.payload.dtype());
            out.extend_from_slice(&(e.dims.len() as u32).to_le_bytes());
            for d in &e.dims {
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &e.payload {
                Payload::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                Payload::U8(v) => out.extend_from_slice(v),
                Payload::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        out
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = Reader { buf, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic, not a TSNC archive".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let count = r.u32()?;
        let mut archive = Archive::default();
        for _ in 0..count {
            let len = r.u32()? as usize;
            let name = String::from_utf8(r.take(len)?.to_vec())
                .map_err(|_| Error::Checkpoint("entry name is not UTF-8".into()))?;
            let dtype = r.u8()?;
            let rank = r.u32()? as usize;
            let dims = (0..rank).map(|_| r.u64()).collect::<Result<Vec<u64>>>()?;
            let n = dims
                .iter()
                .try_fold(1usize, |a, &d| a.checked_mul(d as usize))
                .ok_or_else(|| Error::Checkpoint(format!("`{name}`: dims overflow")))?;
            let payload = match dtype {
                DTYPE_F32 => Payload::F32(
                    r.take(
                        n.checked_mul(4)
                            .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
                    )?
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes(c.try_into().expect("4")))
                    .collect(),
                ),
                DTYPE_F64 => Payload::F64(
                    r.take(
                        n.checked_mul(8)
                            .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
                    )?
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8")))
                    .collect(),
                ),
                DTYPE_U8 => Payload::U8(r.take(n)?.to_vec()),
                DTYPE_U64 => Payload::U64(
                    r.take(
                        n.checked_mul(8)
                            .ok_or_else(|| Error::Checkpoint("size overflow".into()))?,
                    )?
                    .chunks_exact(8)
                    .map(|c| u64::from_le_bytes(c.try_into().expect("8")))
                    .collect(),
                ),
                other => return Err(Error::Checkpoint(format!("`{name}`: unknown dtype {other}"))),
            };
            archive.push(name, dims, payload)?;
        }
        if r.pos != buf.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", buf.len() - r.pos)));
        }
        Ok(archive)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

/// Lowercase hex SHA-256 of a file.
pub fn file_sha256(path: &Path) -> Result<String> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&buf))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

// ------------------------------------------------------ model checkpoints

pub const CONFIG_KEY: &str = "meta.config";
pub const STAGE_KEY: &str = "meta.stage";
pub const STEP_KEY: &str = "optim.step";

/// Which weights a checkpoint carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StageTag {
    One = 1,
    Two = 2,
    /// Both stages trained as one network.
    All = 3,
}

impl StageTag {
    fn from_u64(v: u64) -> Result<Self> {
        match v {
            1 => Ok(StageTag::One),
            2 => Ok(StageTag::Two),
            3 => Ok(StageTag::All),
            other => Err(Error::Checkpoint(format!("unknown stage tag {other}"))),
        }
    }
}

/// Store contents, optimizer moments and the model config in one archive.
pub fn stage_archive<T: Scalar>(
    config: &ModelConfig,
    stage: StageTag,
    store: &ParamStore<T>,
    optim: Option<&OptimState<T>>,
) -> Result<Archive> {
    let mut a = Archive::default();
    let cfg = config.to_json().into_bytes();
    a.push(CONFIG_KEY, vec![cfg.len() as u64], Payload::U8(cfg))?;
    a.push(STAGE_KEY, vec![1], Payload::U64(vec![stage as u64]))?;
    for (name, value, _) in store.iter() {
        a.push_tensor(name, value)?;
    }
    if let Some(st) = optim {
        a.push(STEP_KEY, vec![1], Payload::U64(vec![st.step]))?;
        for mo in &st.moments {
            let name = store.name(mo.id);
            a.push_tensor(format!("optim.m.{name}"), &mo.m)?;
            a.push_tensor(format!("optim.v.{name}"), &mo.v)?;
        }
    }
    Ok(a)
}

/// Write a stage checkpoint and return its SHA-256.
pub fn save_stage<T: Scalar>(
    path: &Path,
    config: &ModelConfig,
    stage: StageTag,
    store: &ParamStore<T>,
    optim: Option<&OptimState<T>>,
) -> Result<String> {
    let bytes = stage_archive(config, stage, store, optim)?.to_bytes();
    fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn archive_config(a: &Archive) -> Result<ModelConfig> {
    let text =
        std::str::from_utf8(a.bytes(CONFIG_KEY)?).map_err(|_| Error::Checkpoint("config is not UTF-8".into()))?;
    ModelConfig::from_json(text)
}

pub fn archive_stage(a: &Archive) -> Result<StageTag> {
    StageTag::from_u64(a.u64(STAGE_KEY)?)
}

/// Overwrite every tensor of `store` from the archive, by name.
pub fn load_store<T: Scalar>(a: &Archive, store: &mut ParamStore<T>) -> Result<()> {
    let ids: Vec<_> = store.ids().collect();
    for id in ids {
        let t: Tensor<T> = a.tensor(store.name(id))?;
        if t.shape() != store.value(id).shape() {
            return Err(Error::Checkpoint(format!(
                "`{}` has shape {} in checkpoint but {} in model",
                store.name(id),
                t.shape(),
                store.value(id).shape()
            )));
        }
        *store.value_mut(id) = t;
    }
    Ok(())
}

/// Optimizer state for `store`, if the archive has one.
pub fn load_optim<T: Scalar>(a: &Archive, store: &ParamStore<T>) -> Result<Option<OptimState<T>>> {
    if a.get(STEP_KEY).is_none() {
        return Ok(None);
    }
    let step = a.u64(STEP_KEY)?;
    let moments = store
        .ids_of_kind(ParamKind::Trainable)
        .map(|id| {
            let name = store.name(id);
            Ok(Moments {
                id,
                m: a.tensor(&format!("optim.m.{name}"))?,
                v: a.tensor(&format!("optim.v.{name}"))?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some(OptimState { step, moments }))
}

/// Rebuild a model from a stage-one (or fused) checkpoint and an optional
/// stage-two checkpoint. Without the second file the model ends at stage one.
pub fn load_model<T: Scalar>(ckpt1: &Path, ckpt2: Option<&Path>) -> Result<TsNet<T>> {
    let a1 = Archive::load(ckpt1)?;
    let mut config = archive_config(&a1)?;
    let tag = archive_stage(&a1)?;
    match tag {
        StageTag::One => config.ablation.use_stage2 = ckpt2.is_some(),
        StageTag::All => {
            if ckpt2.is_some() {
                return Err(Error::Checkpoint("a fused checkpoint already holds both stages".into()));
            }
        }
        StageTag::Two => {
            return Err(Error::Checkpoint(format!(
                "{} is a stage-two checkpoint",
                ckpt1.display()
            )));
        }
    }
    let a2 = match ckpt2 {
        Some(p2) => {
            let a2 = Archive::load(p2)?;
            if archive_stage(&a2)? != StageTag::Two {
                return Err(Error::Checkpoint(format!(
                    "{} is not a stage-two checkpoint",
                    p2.display()
                )));
            }
            // the stage-two file records the configuration of both stages
            config = archive_config(&a2)?;
            config.ablation.use_stage2 = true;
            Some(a2)
        }
        None => None,
    };
    let mut net = TsNet::<T>::new(&config, 0)?;
    load_store(&a1, &mut net.weights1)?;
    if let Some(a2) = a2 {
        load_store(&a2, &mut net.weights2)?;
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn archive_roundtrip_and_errors() {
        let mut a = Archive::default();
        a.push_tensor(
            "w",
            &Tensor::<f32>::from_fn([2, 1, 1, 3], |n, _, _, w| (n * 3 + w) as f32 * 0.5),
        )
        .unwrap();
        a.push_tensor("d", &Tensor::<f64>::full([1, 1, 1, 1], -2.25)).unwrap();
        a.push("b", vec![3], Payload::U8(vec![1, 2, 3])).unwrap();
        a.push("s", vec![1], Payload::U64(vec![42])).unwrap();
        let bytes = a.to_bytes();
        assert_eq!(&bytes[..4], b"TSNC");
        let back = Archive::from_bytes(&bytes).unwrap();
        assert_eq!(back, a);
        assert_eq!(back.to_bytes(), bytes);
        assert_eq!(back.u64("s").unwrap(), 42);
        assert_eq!(back.tensor::<f64>("w").unwrap().data()[5], 2.5);
        assert!(Archive::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        assert!(Archive::from_bytes(b"NOPE\x01\0\0\0\0\0\0\0").is_err());
        assert!(a.push("b", vec![1], Payload::U8(vec![0])).is_err());
        assert!(a.push("z", vec![2], Payload::U8(vec![0])).is_err());
    }

    #[test]
    fn sha_of_empty_input() {
        assert_eq!(
            sha256_hex(b""),
            "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855"
        );
    }
}
