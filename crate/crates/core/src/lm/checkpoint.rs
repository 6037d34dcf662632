//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic    8 bytes  "TDXCKPT\0"
//! version  u32
//! kind     u8       0 dense base, 1 4-bit base, 2 adapter
//! config   u32 length + JSON
//! count    u32
//! tensor*  u16 name length, name, u8 dtype (0 f32, 1 f64, 2 q4), u8 rank,
//!          u64 per dim, u64 payload length, payload
//! crc32    u32 over every preceding byte
//! ```
//!
//! A q4 payload is the f32 block scales followed by the packed codes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{LoraConfig, ModelConfig};
use super::lora::LoraAdapter;
use super::params::ModelParams;
use super::quant::{QuantizedModel, QuantizedTensor, QUANT_BLOCK};
use super::{LmError, Scalar};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TDXCKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

const KIND_DENSE: u8 = 0;
const KIND_Q4: u8 = 1;
const KIND_ADAPTER: u8 = 2;
const DTYPE_Q4: u8 = 2;

#[derive(Serialize, Deserialize)]
struct Header {
    model: ModelConfig,
    #[serde(default)]
    lora: Option<LoraConfig>,
}

/// A base model as found on disk.
#[derive(Debug, Clone)]
pub enum StoredBase {
    F32(ModelParams<f32>),
    F64(ModelParams<f64>),
    Quantized(QuantizedModel),
}

impl StoredBase {
    pub fn config(&self) -> ModelConfig {
        match self {
            StoredBase::F32(p) => p.config,
            StoredBase::F64(p) => p.config,
            StoredBase::Quantized(q) => q.config,
        }
    }

    /// Dense working copy at precision `T`.
    pub fn to_params<T: Scalar>(&self) -> Result<ModelParams<T>, LmError> {
        match self {
            StoredBase::F32(p) => Ok(p.cast()),
            StoredBase::F64(p) => Ok(p.cast()),
            StoredBase::Quantized(q) => q.dequantize(),
        }
    }
}

struct Tensor {
    name: String,
    dtype: u8,
    dims: Vec<usize>,
    payload: Vec<u8>,
}

fn dense_payload<T: Scalar>(values: &[T]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * std::mem::size_of::<T>());
    for v in values {
        if T::DTYPE == 0 {
            out.extend_from_slice(&v.to_f32().expect("finite").to_le_bytes());
        } else {
            out.extend_from_slice(&v.to_f64().expect("finite").to_le_bytes());
        }
    }
    out
}

fn decode_dense<T: Scalar>(t: &Tensor) -> Result<Vec<T>, LmError> {
    let n: usize = t.dims.iter().product();
    let width = match t.dtype {
        0 => 4,
        1 => 8,
        other => return Err(LmError::Checkpoint(format!("{}: dtype {other} is not dense", t.name))),
    };
    if t.payload.len() != n * width {
        return Err(LmError::Checkpoint(format!("{}: payload {} bytes for {n} elements", t.name, t.payload.len())));
    }
    Ok(t.payload
        .chunks_exact(width)
        .map(|b| {
            let v = if width == 4 { f32::from_le_bytes(b.try_into().unwrap()) as f64 } else { f64::from_le_bytes(b.try_into().unwrap()) };
            T::from_f64(v).expect("finite")
        })
        .collect())
}

fn encode(kind: u8, header: &Header, tensors: &[Tensor]) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.push(kind);
    let json = serde_json::to_vec(header).expect("header serializes");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(tensors.len() as u32).to_le_bytes());
    for t in tensors {
        out.extend_from_slice(&(t.name.len() as u16).to_le_bytes());
        out.extend_from_slice(t.name.as_bytes());
        out.push(t.dtype);
        out.push(t.dims.len() as u8);
        for &d in &t.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(t.payload.len() as u64).to_le_bytes());
        out.extend_from_slice(&t.payload);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], LmError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| LmError::Checkpoint("truncated".into()))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, LmError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, LmError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, LmError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, LmError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

fn decode(bytes: &[u8]) -> Result<(u8, Header, Vec<Tensor>), LmError> {
    if bytes.len() < CHECKPOINT_MAGIC.len() + 4 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(LmError::Checkpoint("bad magic".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 4);
    if crc32fast::hash(body) != u32::from_le_bytes(tail.try_into().unwrap()) {
        return Err(LmError::Checkpoint("checksum mismatch".into()));
    }
    let mut r = Reader { buf: body, pos: 8 };
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(LmError::Checkpoint(format!("unsupported version {version}")));
    }
    let kind = r.u8()?;
    let len = r.u32()? as usize;
    let header: Header = serde_json::from_slice(r.take(len)?).map_err(|e| LmError::Checkpoint(format!("config block: {e}")))?;
    let count = r.u32()?;
    let mut tensors = Vec::with_capacity(count as usize);
    for _ in 0..count {
        let nlen = r.u16()? as usize;
        let name = String::from_utf8(r.take(nlen)?.to_vec()).map_err(|_| LmError::Checkpoint("tensor name not utf-8".into()))?;
        let dtype = r.u8()?;
        let rank = r.u8()?;
        let dims = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let plen = r.u64()? as usize;
        let payload = r.take(plen)?.to_vec();
        tensors.push(Tensor { name, dtype, dims, payload });
    }
    if r.pos != body.len() {
        return Err(LmError::Checkpoint("trailing bytes".into()));
    }
    Ok((kind, header, tensors))
}

fn write(path: &Path, bytes: &[u8]) -> Result<(), LmError> {
    std::fs::write(path, bytes).map_err(|e| LmError::io(path, e))
}

fn read(path: &Path) -> Result<Vec<u8>, LmError> {
    std::fs::read(path).map_err(|e| LmError::io(path, e))
}

fn find<'a>(tensors: &'a [Tensor], name: &str) -> Result<&'a Tensor, LmError> {
    tensors.iter().find(|t| t.name == name).ok_or_else(|| LmError::Checkpoint(format!("missing tensor {name}")))
}

pub fn save_base<T: Scalar>(path: &Path, params: &ModelParams<T>) -> Result<(), LmError> {
    let tensors: Vec<Tensor> = params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| Tensor { name, dtype: T::DTYPE, dims: t.shape(), payload: dense_payload(t.as_slice()) })
        .collect();
    write(path, &encode(KIND_DENSE, &Header { model: params.config, lora: None }, &tensors))
}

pub fn save_quantized(path: &Path, q: &QuantizedModel) -> Result<(), LmError> {
    let mut tensors = Vec::new();
    for (name, m) in &q.matrices {
        let mut payload = Vec::with_capacity(m.stored_bytes());
        for s in &m.scales {
            payload.extend_from_slice(&s.to_le_bytes());
        }
        payload.extend_from_slice(&m.packed);
        tensors.push(Tensor { name: name.clone(), dtype: DTYPE_Q4, dims: m.shape.clone(), payload });
    }
    for (name, v) in &q.vectors {
        tensors.push(Tensor { name: name.clone(), dtype: 0, dims: vec![v.len()], payload: dense_payload(v) });
    }
    write(path, &encode(KIND_Q4, &Header { model: q.config, lora: None }, &tensors))
}

pub fn load_base(path: &Path) -> Result<StoredBase, LmError> {
    let (kind, header, tensors) = decode(&read(path)?)?;
    header.model.validate()?;
    match kind {
        KIND_DENSE => {
            let dtype = tensors.first().map(|t| t.dtype).unwrap_or(0);
            if let Some(t) = tensors.iter().find(|t| t.dtype != dtype) {
                return Err(LmError::Checkpoint(format!("{}: mixed dtypes", t.name)));
            }
            let load = |name: &str, shape: &[usize]| -> Result<&Tensor, LmError> {
                let t = find(&tensors, name)?;
                if t.dims != shape {
                    return Err(LmError::Checkpoint(format!("{name}: stored {:?} vs expected {shape:?}", t.dims)));
                }
                Ok(t)
            };
            if dtype == 1 {
                let mut p = ModelParams::<f64>::zeros(header.model);
                p.fill_from(|n, s| decode_dense(load(n, s)?))?;
                Ok(StoredBase::F64(p))
            } else {
                let mut p = ModelParams::<f32>::zeros(header.model);
                p.fill_from(|n, s| decode_dense(load(n, s)?))?;
                Ok(StoredBase::F32(p))
            }
        }
        KIND_Q4 => {
            let mut matrices = Vec::new();
            let mut vectors = Vec::new();
            for t in &tensors {
                if t.dtype == DTYPE_Q4 {
                    let n: usize = t.dims.iter().product();
                    let blocks = n.div_ceil(QUANT_BLOCK);
                    if t.payload.len() != 4 * blocks + n.div_ceil(2) {
                        return Err(LmError::Checkpoint(format!("{}: bad q4 payload size", t.name)));
                    }
                    let (sc, packed) = t.payload.split_at(4 * blocks);
                    let scales = sc.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
                    matrices.push((t.name.clone(), QuantizedTensor { shape: t.dims.clone(), scales, packed: packed.to_vec() }));
                } else {
                    vectors.push((t.name.clone(), decode_dense::<f32>(t)?));
                }
            }
            let q = QuantizedModel { config: header.model, matrices, vectors };
            q.dequantize::<f32>()?;
            Ok(StoredBase::Quantized(q))
        }
        other => Err(LmError::Checkpoint(format!("kind {other} is not a base model"))),
    }
}

/// Adapters are stored apart from the base they were trained on.
pub fn save_adapter<T: Scalar>(path: &Path, adapter: &LoraAdapter<T>) -> Result<(), LmError> {
    let mut tensors = Vec::new();
    for (prefix, p) in adapter.pairs() {
        for (suffix, m) in [("lora_a", &p.a), ("lora_b", &p.b)] {
            tensors.push(Tensor {
                name: format!("{prefix}.{suffix}"),
                dtype: T::DTYPE,
                dims: m.shape().to_vec(),
                payload: dense_payload(m.as_slice().expect("contiguous")),
            });
        }
    }
    let header = Header { model: adapter.model, lora: Some(adapter.config.clone()) };
    write(path, &encode(KIND_ADAPTER, &header, &tensors))
}

pub fn load_adapter<T: Scalar>(path: &Path) -> Result<LoraAdapter<T>, LmError> {
    let (kind, header, tensors) = decode(&read(path)?)?;
    if kind != KIND_ADAPTER {
        return Err(LmError::Checkpoint(format!("kind {kind} is not an adapter")));
    }
    let cfg = header.lora.ok_or_else(|| LmError::Checkpoint("adapter without LoRA config".into()))?;
    let mut adapter = LoraAdapter::<T>::new(header.model, &cfg)?;
    for (prefix, p) in adapter.pairs_mut() {
        for (suffix, m) in [("lora_a", &mut p.a), ("lora_b", &mut p.b)] {
            let name = format!("{prefix}.{suffix}");
            let st = find(&tensors, &name)?;
            if st.dims != m.shape() {
                return Err(LmError::Checkpoint(format!("{name}: stored {:?} vs expected {:?}", st.dims, m.shape())));
            }
            m.as_slice_mut().expect("contiguous").copy_from_slice(&decode_dense::<T>(st)?);
        }
    }
    Ok(adapter)
}
