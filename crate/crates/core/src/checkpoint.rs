//! Run-state checkpointing: a self-describing binary file holding a JSON
//! meta block (config echo, group directory) plus named, typed buffers.
//! Round-trips are bit-exact for f64/f32 buffers and bit-exact at the
//! 16-bit level for bf16 buffers.
//!
//! Layout (all integers little-endian):
//! `magic "MONACKP1" | version u32 | meta_len u64 | meta JSON |`
//! `buffer_count u64 | { name_len u64 | name UTF-8 | dtype u8 |`
//! `rows u64 | cols u64 | payload }*`
//! with dtype 0 = f64 (8-byte), 1 = f32 (4-byte), 2 = bf16 (2-byte).

use std::fs;
use std::io::{self, Read, Write};
use std::path::Path;

use crate::matrix::Matrix;
use crate::optim::{AccelState, GradSlot, PackedBf16, ParamGroup, ParamKind};
use crate::scalar::{Dtype, Scalar};

pub const MAGIC: &[u8; 8] = b"MONACKP1";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a checkpoint file (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("invalid meta JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum BufferPayload {
    F64(Matrix<f64>),
    F32(Matrix<f32>),
    Bf16(PackedBf16),
}

impl BufferPayload {
    pub fn dtype(&self) -> Dtype {
        match self {
            BufferPayload::F64(_) => Dtype::F64,
            BufferPayload::F32(_) => Dtype::F32,
            BufferPayload::Bf16(_) => Dtype::Bf16,
        }
    }

    pub fn shape(&self) -> (usize, usize) {
        match self {
            BufferPayload::F64(m) => m.shape(),
            BufferPayload::F32(m) => m.shape(),
            BufferPayload::Bf16(p) => (p.rows, p.cols),
        }
    }

    /// Frobenius norm in f64 (bf16 decoded exactly).
    pub fn frobenius_norm(&self) -> f64 {
        match self {
            BufferPayload::F64(m) => m.frobenius_norm(),
            BufferPayload::F32(m) => m.frobenius_norm() as f64,
            BufferPayload::Bf16(p) => p.decode_matrix::<f64>().frobenius_norm(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointBuffer {
    pub name: String,
    pub payload: BufferPayload,
}

/// Directory entry for one parameter group captured in a checkpoint.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GroupMeta {
    pub name: String,
    pub kind: ParamKind,
    pub step: u64,
    /// True when the gradient slot is the streaming variant (the fused
    /// in-place pipeline) rather than the buffered one. Packed slots are
    /// recognized by their bf16 dtype instead.
    #[serde(default)]
    pub streaming_slot: bool,
}

#[derive(Debug, Clone, PartialEq, Default, serde::Serialize, serde::Deserialize)]
pub struct CheckpointMeta {
    /// Free-form caller content (typically the resolved run config).
    #[serde(default)]
    pub user: serde_json::Value,
    #[serde(default)]
    pub groups: Vec<GroupMeta>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub buffers: Vec<CheckpointBuffer>,
}

fn push_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn push_u64(out: &mut Vec<u8>, v: u64) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn read_exact_vec(r: &mut impl Read, len: usize) -> Result<Vec<u8>, CheckpointError> {
    let mut buf = vec![0u8; len];
    r.read_exact(&mut buf)?;
    Ok(buf)
}

fn read_u32(r: &mut impl Read) -> Result<u32, CheckpointError> {
    let b = read_exact_vec(r, 4)?;
    Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")))
}

fn read_u64(r: &mut impl Read) -> Result<u64, CheckpointError> {
    let b = read_exact_vec(r, 8)?;
    Ok(u64::from_le_bytes(b.try_into().expect("8 bytes")))
}

fn checked_numel(rows: u64, cols: u64) -> Result<usize, CheckpointError> {
    let numel = rows
        .checked_mul(cols)
        .filter(|&n| n <= (1u64 << 32))
        .ok_or_else(|| Checkpoint_err(format!("implausible buffer shape {rows}x{cols}")))?;
    Ok(numel as usize)
}

#[allow(non_snake_case)]
fn Checkpoint_err(msg: String) -> CheckpointError {
    CheckpointError::Corrupt(msg)
}

impl Checkpoint {
    pub fn new(meta: CheckpointMeta) -> Self {
        Self { meta, buffers: Vec::new() }
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        push_u32(&mut out, VERSION);
        let meta = serde_json::to_vec(&self.meta)?;
        push_u64(&mut out, meta.len() as u64);
        out.extend_from_slice(&meta);
        push_u64(&mut out, self.buffers.len() as u64);
        for b in &self.buffers {
            push_u64(&mut out, b.name.len() as u64);
            out.extend_from_slice(b.name.as_bytes());
            out.push(b.payload.dtype() as u8);
            let (rows, cols) = b.payload.shape();
            push_u64(&mut out, rows as u64);
            push_u64(&mut out, cols as u64);
            match &b.payload {
                BufferPayload::F64(m) => {
                    for v in m.as_slice() {
                        v.write_le(&mut out);
                    }
                }
                BufferPayload::F32(m) => {
                    for v in m.as_slice() {
                        v.write_le(&mut out);
                    }
                }
                BufferPayload::Bf16(p) => {
                    for bits in &p.bits {
                        out.extend_from_slice(&bits.to_le_bytes());
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn read_from(r: &mut impl Read) -> Result<Self, CheckpointError> {
        let magic = read_exact_vec(r, MAGIC.len())?;
        if magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = read_u32(r)?;
        if version != VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let meta_len = read_u64(r)? as usize;
        if meta_len > (1 << 30) {
            return Err(Checkpoint_err(format!("implausible meta length {meta_len}")));
        }
        let meta: CheckpointMeta = serde_json::from_slice(&read_exact_vec(r, meta_len)?)?;
        let count = read_u64(r)?;
        if count > (1 << 24) {
            return Err(Checkpoint_err(format!("implausible buffer count {count}")));
        }
        let mut buffers = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = read_u64(r)? as usize;
            if name_len > (1 << 16) {
                return Err(Checkpoint_err(format!("implausible name length {name_len}")));
            }
            let name = String::from_utf8(read_exact_vec(r, name_len)?)
                .map_err(|e| Checkpoint_err(format!("buffer name not UTF-8: {e}")))?;
            let dtype = read_exact_vec(r, 1)?[0];
            let rows = read_u64(r)?;
            let cols = read_u64(r)?;
            let numel = checked_numel(rows, cols)?;
            let (rows, cols) = (rows as usize, cols as usize);
            let payload = match dtype {
                0 => {
                    let raw = read_exact_vec(r, numel * 8)?;
                    let data: Vec<f64> =
                        raw.chunks_exact(8).map(|c| f64::read_le(c)).collect();
                    BufferPayload::F64(
                        Matrix::from_vec(rows, cols, data)
                            .map_err(|e| Checkpoint_err(e.to_string()))?,
                    )
                }
                1 => {
                    let raw = read_exact_vec(r, numel * 4)?;
                    let data: Vec<f32> =
                        raw.chunks_exact(4).map(|c| f32::read_le(c)).collect();
                    BufferPayload::F32(
                        Matrix::from_vec(rows, cols, data)
                            .map_err(|e| Checkpoint_err(e.to_string()))?,
                    )
                }
                2 => {
                    let raw = read_exact_vec(r, numel * 2)?;
                    let bits: Vec<u16> = raw
                        .chunks_exact(2)
                        .map(|c| u16::from_le_bytes(c.try_into().expect("2 bytes")))
                        .collect();
                    let mut p = PackedBf16::zeros(rows, cols);
                    p.bits = bits;
                    BufferPayload::Bf16(p)
                }
                other => {
                    return Err(Checkpoint_err(format!("unknown buffer dtype tag {other}")))
                }
            };
            buffers.push(CheckpointBuffer { name, payload });
        }
        Ok(Self { meta, buffers })
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let mut f = fs::File::open(path)?;
        Self::read_from(&mut f)
    }

    pub fn find(&self, name: &str) -> Option<&CheckpointBuffer> {
        self.buffers.iter().find(|b| b.name == name)
    }
}

fn accel_payload(a: &AccelState<f64>) -> BufferPayload {
    match a {
        AccelState::Full(m) => BufferPayload::F64(m.clone()),
        AccelState::Packed(p) => BufferPayload::Bf16(p.clone()),
    }
}

fn slot_payload(s: &GradSlot<f64>) -> (BufferPayload, bool) {
    match s {
        GradSlot::Buffered(m) => (BufferPayload::F64(m.clone()), false),
        GradSlot::Streaming(m) => (BufferPayload::F64(m.clone()), true),
        GradSlot::PackedStreaming(p) => (BufferPayload::Bf16(p.clone()), true),
    }
}

/// Capture parameter groups (weights + full optimizer state) into a
/// checkpoint with `user` as the free-form meta block.
pub fn checkpoint_from_groups(
    user: serde_json::Value,
    groups: &[ParamGroup<f64>],
) -> Checkpoint {
    let mut meta = CheckpointMeta { user, groups: Vec::with_capacity(groups.len()) };
    let mut buffers = Vec::new();
    for g in groups {
        let mut streaming_slot = false;
        buffers.push(CheckpointBuffer {
            name: format!("{}/weights", g.name),
            payload: BufferPayload::F64(g.weights.clone()),
        });
        if let Some(m) = &g.state.momentum {
            buffers.push(CheckpointBuffer {
                name: format!("{}/momentum", g.name),
                payload: BufferPayload::F64(m.clone()),
            });
        }
        if let Some(a) = &g.state.accel {
            buffers.push(CheckpointBuffer {
                name: format!("{}/accel", g.name),
                payload: accel_payload(a),
            });
        }
        if let Some(s) = &g.state.prev_grad {
            let (payload, streaming) = slot_payload(s);
            streaming_slot = streaming;
            buffers
                .push(CheckpointBuffer { name: format!("{}/prev_grad", g.name), payload });
        }
        if let Some(m) = &g.state.adam_m {
            buffers.push(CheckpointBuffer {
                name: format!("{}/adam_m", g.name),
                payload: BufferPayload::F64(m.clone()),
            });
        }
        if let Some(v) = &g.state.adam_v {
            buffers.push(CheckpointBuffer {
                name: format!("{}/adam_v", g.name),
                payload: BufferPayload::F64(v.clone()),
            });
        }
        meta.groups.push(GroupMeta {
            name: g.name.clone(),
            kind: g.kind,
            step: g.state.step,
            streaming_slot,
        });
    }
    Checkpoint { meta, buffers }
}

/// Rebuild parameter groups from a checkpoint produced by
/// [`checkpoint_from_groups`].
pub fn groups_from_checkpoint(
    ckp: &Checkpoint,
) -> Result<Vec<ParamGroup<f64>>, CheckpointError> {
    let mut out = Vec::with_capacity(ckp.meta.groups.len());
    for gm in &ckp.meta.groups {
        let weights = match ckp.find(&format!("{}/weights", gm.name)) {
            Some(CheckpointBuffer { payload: BufferPayload::F64(m), .. }) => m.clone(),
            _ => {
                return Err(Checkpoint_err(format!(
                    "group `{}` has no f64 weights buffer",
                    gm.name
                )))
            }
        };
        let mut group = ParamGroup::new(gm.name.clone(), gm.kind, weights);
        group.state.step = gm.step;
        if let Some(b) = ckp.find(&format!("{}/momentum", gm.name)) {
            match &b.payload {
                BufferPayload::F64(m) => group.state.momentum = Some(m.clone()),
                _ => return Err(Checkpoint_err("momentum must be f64".into())),
            }
        }
        if let Some(b) = ckp.find(&format!("{}/accel", gm.name)) {
            group.state.accel = Some(match &b.payload {
                BufferPayload::F64(m) => AccelState::Full(m.clone()),
                BufferPayload::Bf16(p) => AccelState::Packed(p.clone()),
                BufferPayload::F32(_) => {
                    return Err(Checkpoint_err("f32 accel buffers are not produced".into()))
                }
            });
        }
        if let Some(b) = ckp.find(&format!("{}/prev_grad", gm.name)) {
            group.state.prev_grad = Some(match &b.payload {
                BufferPayload::F64(m) if gm.streaming_slot => GradSlot::Streaming(m.clone()),
                BufferPayload::F64(m) => GradSlot::Buffered(m.clone()),
                BufferPayload::Bf16(p) => GradSlot::PackedStreaming(p.clone()),
                BufferPayload::F32(_) => {
                    return Err(Checkpoint_err("f32 slot buffers are not produced".into()))
                }
            });
        }
        if let Some(b) = ckp.find(&format!("{}/adam_m", gm.name)) {
            match &b.payload {
                BufferPayload::F64(m) => group.state.adam_m = Some(m.clone()),
                _ => return Err(Checkpoint_err("adam_m must be f64".into())),
            }
        }
        if let Some(b) = ckp.find(&format!("{}/adam_v", gm.name)) {
            match &b.payload {
                BufferPayload::F64(m) => group.state.adam_v = Some(m.clone()),
                _ => return Err(Checkpoint_err("adam_v must be f64".into())),
            }
        }
        out.push(group);
    }
    Ok(out)
}
