//! Model checkpoints: a versioned binary container of named f64 tensors
//! plus the architecture and training metadata. Loading restores the
//! saved model bit-exactly.

use super::{ModelParams, NetConfig};
use serde::{Deserialize, Serialize};
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: [u8; 4] = *b"BFNC";
const VERSION: u16 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    BadVersion(u16),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("metadata error: {0}")]
    Json(#[from] serde_json::Error),
}

/// Everything stored next to the tensors.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct CheckpointMeta {
    pub config: NetConfig,
    pub class_names: Vec<String>,
    pub seed: u64,
    pub best_epoch: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub params: ModelParams,
}

fn write_tensor<W: Write>(w: &mut W, name: &str, dims: &[usize], data: &[f64]) -> std::io::Result<()> {
    w.write_all(&(name.len() as u16).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&(dims.len() as u8).to_le_bytes())?;
    for &d in dims {
        w.write_all(&(d as u32).to_le_bytes())?;
    }
    for &v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

struct RawTensor {
    name: String,
    dims: Vec<usize>,
    data: Vec<f64>,
}

fn read_tensor<R: Read>(r: &mut R) -> Result<RawTensor, CheckpointError> {
    let mut len = [0u8; 2];
    r.read_exact(&mut len)?;
    let mut name = vec![0u8; u16::from_le_bytes(len) as usize];
    r.read_exact(&mut name)?;
    let name =
        String::from_utf8(name).map_err(|_| CheckpointError::Corrupt("tensor name".into()))?;
    let mut ndim = [0u8; 1];
    r.read_exact(&mut ndim)?;
    let mut dims = Vec::with_capacity(usize::from(ndim[0]));
    for _ in 0..ndim[0] {
        let mut d = [0u8; 4];
        r.read_exact(&mut d)?;
        dims.push(u32::from_le_bytes(d) as usize);
    }
    let count: usize = dims.iter().product();
    if count > (1 << 26) {
        return Err(CheckpointError::Corrupt(format!("tensor of {count} elements")));
    }
    let mut data = vec![0f64; count];
    let mut buf = [0u8; 8];
    for v in &mut data {
        r.read_exact(&mut buf)?;
        *v = f64::from_le_bytes(buf);
    }
    Ok(RawTensor { name, dims, data })
}

pub fn save_checkpoint_to<W: Write>(mut w: W, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    w.write_all(&MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    let meta = serde_json::to_vec(&ckpt.meta)?;
    w.write_all(&(meta.len() as u32).to_le_bytes())?;
    w.write_all(&meta)?;

    let p = &ckpt.params;
    let mut count = 0u32;
    count += 2 * p.convs.len() as u32 + 2 + 2 * p.dense.len() as u32;
    w.write_all(&count.to_le_bytes())?;
    for (i, c) in p.convs.iter().enumerate() {
        let (kw, cin, cout) = c.kernel.dim();
        write_tensor(
            &mut w,
            &format!("conv{i}.kernel"),
            &[kw, cin, cout],
            c.kernel.as_slice().expect("contiguous"),
        )?;
        write_tensor(
            &mut w,
            &format!("conv{i}.bias"),
            &[c.bias.len()],
            c.bias.as_slice().expect("contiguous"),
        )?;
    }
    let (kw, cin, cout) = p.attention.kernel.dim();
    write_tensor(
        &mut w,
        "attention.kernel",
        &[kw, cin, cout],
        p.attention.kernel.as_slice().expect("contiguous"),
    )?;
    write_tensor(
        &mut w,
        "attention.bias",
        &[p.attention.bias.len()],
        p.attention.bias.as_slice().expect("contiguous"),
    )?;
    for (i, d) in p.dense.iter().enumerate() {
        let (rows, cols) = d.weight.dim();
        write_tensor(
            &mut w,
            &format!("dense{i}.weight"),
            &[rows, cols],
            d.weight.as_slice().expect("contiguous"),
        )?;
        write_tensor(
            &mut w,
            &format!("dense{i}.bias"),
            &[d.bias.len()],
            d.bias.as_slice().expect("contiguous"),
        )?;
    }
    Ok(())
}

pub fn load_checkpoint_from<R: Read>(mut r: R) -> Result<Checkpoint, CheckpointError> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut v = [0u8; 2];
    r.read_exact(&mut v)?;
    let version = u16::from_le_bytes(v);
    if version != VERSION {
        return Err(CheckpointError::BadVersion(version));
    }
    let mut len = [0u8; 4];
    r.read_exact(&mut len)?;
    let mut meta_buf = vec![0u8; u32::from_le_bytes(len) as usize];
    r.read_exact(&mut meta_buf)?;
    let meta: CheckpointMeta = serde_json::from_slice(&meta_buf)?;

    let mut count = [0u8; 4];
    r.read_exact(&mut count)?;
    let count = u32::from_le_bytes(count);
    let mut params = ModelParams::zeros(&meta.config);
    for _ in 0..count {
        let t = read_tensor(&mut r)?;
        place_tensor(&mut params, &t)?;
    }
    Ok(Checkpoint { meta, params })
}

fn place_tensor(params: &mut ModelParams, t: &RawTensor) -> Result<(), CheckpointError> {
    let fail = || CheckpointError::Corrupt(format!("tensor {} has unexpected shape", t.name));
    if t.name == "attention.kernel" {
        if t.dims.len() != 3 || params.attention.kernel.len() != t.data.len() {
            return Err(fail());
        }
        params.attention.kernel =
            ndarray::Array3::from_shape_vec((t.dims[0], t.dims[1], t.dims[2]), t.data.clone())
                .map_err(|_| fail())?;
        return Ok(());
    }
    if t.name == "attention.bias" {
        params.attention.bias = ndarray::Array1::from_vec(t.data.clone());
        return Ok(());
    }
    if let Some(rest) = t.name.strip_prefix("conv") {
        let (idx, field) = rest.split_once('.').ok_or_else(fail)?;
        let i: usize = idx.parse().map_err(|_| fail())?;
        let conv = params.convs.get_mut(i).ok_or_else(fail)?;
        match field {
            "kernel" => {
                if t.dims.len() != 3 || conv.kernel.len() != t.data.len() {
                    return Err(fail());
                }
                conv.kernel = ndarray::Array3::from_shape_vec(
                    (t.dims[0], t.dims[1], t.dims[2]),
                    t.data.clone(),
                )
                .map_err(|_| fail())?;
            }
            "bias" => {
                if conv.bias.len() != t.data.len() {
                    return Err(fail());
                }
                conv.bias = ndarray::Array1::from_vec(t.data.clone());
            }
            _ => return Err(fail()),
        }
        return Ok(());
    }
    if let Some(rest) = t.name.strip_prefix("dense") {
        let (idx, field) = rest.split_once('.').ok_or_else(fail)?;
        let i: usize = idx.parse().map_err(|_| fail())?;
        let dense = params.dense.get_mut(i).ok_or_else(fail)?;
        match field {
            "weight" => {
                if t.dims.len() != 2 || dense.weight.len() != t.data.len() {
                    return Err(fail());
                }
                dense.weight =
                    ndarray::Array2::from_shape_vec((t.dims[0], t.dims[1]), t.data.clone())
                        .map_err(|_| fail())?;
            }
            "bias" => {
                if dense.bias.len() != t.data.len() {
                    return Err(fail());
                }
                dense.bias = ndarray::Array1::from_vec(t.data.clone());
            }
            _ => return Err(fail()),
        }
        return Ok(());
    }
    Err(fail())
}

pub fn save_checkpoint(path: &Path, ckpt: &Checkpoint) -> Result<(), CheckpointError> {
    let f = std::fs::File::create(path)?;
    save_checkpoint_to(std::io::BufWriter::new(f), ckpt)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let f = std::fs::File::open(path)?;
    load_checkpoint_from(std::io::BufReader::new(f))
}
