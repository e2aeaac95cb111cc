//! Binary weight container.
//!
//! ```text
//! magic     8 bytes   "CLTHCKPT"
//! version   u32
//! meta_len  u32, then meta_len bytes of UTF-8 JSON (CheckpointMeta)
//! count     u32
//! count × { name_len u16, name bytes, dtype u8 (0 = f32, 1 = f64),
//!           ndim u8, ndim × u32 dims, values little-endian row-major }
//! ```
//!
//! All integers are little-endian. Optimizer moments are stored as tensors
//! named `adam.m.<param>` and `adam.v.<param>`.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::model::{Model, ModelConfig};
use super::optim::{AdamW, AdamWConfig};
use super::real::Real;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"CLTHCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerMeta {
    pub config: AdamWConfig,
    pub step: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub toolkit_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Completed training epochs.
    pub epoch: usize,
    pub model: ModelConfig,
    pub optimizer: Option<OptimizerMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dtype: u8,
    pub dims: Vec<usize>,
    /// Values widened to `f64`.
    pub values: Vec<f64>,
}

fn tensor_of<T: Real>(name: String, m: &Matrix<T>) -> Tensor {
    Tensor {
        name,
        dtype: T::DTYPE,
        dims: vec![m.rows, m.cols],
        values: m.data.iter().map(|v| v.to_f64().unwrap_or(f64::NAN)).collect(),
    }
}

fn write_tensor<W: Write>(w: &mut W, t: &Tensor) -> Result<()> {
    let name = t.name.as_bytes();
    let name_len = u16::try_from(name.len()).map_err(|_| Error::Format(format!("tensor name too long: {}", t.name)))?;
    w.write_all(&name_len.to_le_bytes())?;
    w.write_all(name)?;
    w.write_all(&[t.dtype, t.dims.len() as u8])?;
    for &d in &t.dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    let mut buf = Vec::with_capacity(t.values.len() * 8);
    for &v in &t.values {
        match t.dtype {
            0 => (v as f32).write_le(&mut buf),
            1 => v.write_le(&mut buf),
            d => return Err(Error::Format(format!("unknown dtype {d}"))),
        }
    }
    w.write_all(&buf)?;
    Ok(())
}

/// Writes model weights and, if given, optimizer moments.
pub fn save<T: Real, W: Write>(mut w: W, meta: &CheckpointMeta, model: &Model<T>, optimizer: Option<&AdamW<T>>) -> Result<()> {
    let mut tensors: Vec<Tensor> = model.params.iter().map(|(n, m)| tensor_of(n.to_string(), m)).collect();
    if let Some(opt) = optimizer {
        for (i, (name, _)) in model.params.iter().enumerate() {
            tensors.push(tensor_of(format!("adam.m.{name}"), &opt.m[i]));
            tensors.push(tensor_of(format!("adam.v.{name}"), &opt.v[i]));
        }
    }
    let json = serde_json::to_vec(meta).map_err(|e| Error::Format(e.to_string()))?;
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(json.len() as u32).to_le_bytes())?;
    w.write_all(&json)?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for t in &tensors {
        write_tensor(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

fn read_exact<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Format("checkpoint is truncated".into()),
        _ => Error::Io(e),
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_exact(r, 4)?.try_into().expect("4 bytes")))
}

/// Reads the metadata and raw tensors of a checkpoint.
pub fn read_raw<R: Read>(mut r: R) -> Result<(CheckpointMeta, Vec<Tensor>)> {
    if read_exact(&mut r, 8)? != MAGIC {
        return Err(Error::Format("not a checkpoint (bad magic)".into()));
    }
    let version = read_u32(&mut r)?;
    if version != FORMAT_VERSION {
        return Err(Error::Format(format!("unsupported checkpoint version {version}")));
    }
    let meta_len = read_u32(&mut r)? as usize;
    let meta: CheckpointMeta =
        serde_json::from_slice(&read_exact(&mut r, meta_len)?).map_err(|e| Error::Format(format!("metadata: {e}")))?;
    let count = read_u32(&mut r)? as usize;
    let mut tensors = Vec::with_capacity(count.min(4096));
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_exact(&mut r, 2)?.try_into().expect("2 bytes")) as usize;
        let name = String::from_utf8(read_exact(&mut r, name_len)?).map_err(|_| Error::Format("tensor name is not UTF-8".into()))?;
        let head = read_exact(&mut r, 2)?;
        let (dtype, ndim) = (head[0], head[1] as usize);
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            dims.push(read_u32(&mut r)? as usize);
        }
        let n: usize = dims.iter().product();
        let values = match dtype {
            0 => read_exact(&mut r, n * 4)?.chunks(4).map(|c| f32::read_le(c) as f64).collect(),
            1 => read_exact(&mut r, n * 8)?.chunks(8).map(f64::read_le).collect(),
            d => return Err(Error::Format(format!("tensor {name} has unknown dtype {d}"))),
        };
        tensors.push(Tensor { name, dtype, dims, values });
    }
    Ok((meta, tensors))
}

fn to_matrix<T: Real>(t: &Tensor, expect: (usize, usize)) -> Result<Matrix<T>> {
    if t.dims != [expect.0, expect.1] {
        return Err(Error::Format(format!("tensor {} has dims {:?}, expected {:?}", t.name, t.dims, expect)));
    }
    Matrix::from_vec(expect.0, expect.1, t.values.iter().map(|&v| T::from_f64_lossy(v)).collect())
}

/// A loaded checkpoint: metadata, model and optional optimizer state.
pub type Loaded<T> = (CheckpointMeta, Model<T>, Option<AdamW<T>>);

/// Rebuilds the model described by the metadata and fills in its weights.
pub fn load<T: Real, R: Read>(r: R) -> Result<Loaded<T>> {
    let (meta, tensors) = read_raw(r)?;
    let find = |name: &str| tensors.iter().find(|t| t.name == name);
    let mut model = Model::<T>::new(meta.model.clone(), 0)?;
    let ids: Vec<_> = model.params.ids().collect();
    for &id in &ids {
        let name = model.params.name(id).to_string();
        let t = find(&name).ok_or_else(|| Error::Format(format!("checkpoint lacks parameter {name}")))?;
        let shape = model.params.value(id).shape();
        *model.params.value_mut(id) = to_matrix(t, shape)?;
    }
    let optimizer = match &meta.optimizer {
        None => None,
        Some(om) => {
            let mut opt = AdamW::new(om.config, &model.params);
            opt.step = om.step;
            for (i, &id) in ids.iter().enumerate() {
                let name = model.params.name(id);
                let shape = model.params.value(id).shape();
                for (prefix, slot) in [("adam.m.", &mut opt.m[i]), ("adam.v.", &mut opt.v[i])] {
                    let key = format!("{prefix}{name}");
                    let t = find(&key).ok_or_else(|| Error::Format(format!("checkpoint lacks {key}")))?;
                    *slot = to_matrix(t, shape)?;
                }
            }
            Some(opt)
        }
    };
    Ok((meta, model, optimizer))
}
