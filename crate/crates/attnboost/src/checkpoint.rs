//! Binary model checkpoints.
//!
//! Layout, all integers and floats little-endian:
//!
//! ```text
//! magic            b"ABFC"
//! version          u32 (= 1)
//! config block
//!   stage_count    u32
//!   flags          u32   bit 0 boost enabled, bit 1 stages propagate gradients
//!   init_mode      u32   0 uniform, 1 class frequency
//!   per stage:     depth u32, base_channels u32, input_channels u32,
//!                  dropout_rate f64, seed u64
//! tensor_count     u32
//! per tensor:      name_len u32, name (utf-8), rank u32, dims u32 * rank,
//!                  values f64 * prod(dims)
//! ```
//!
//! Tensors are named `stage<i>/<param>` in stage then parameter order,
//! followed by one rank-1 `loss_weights` tensor.

use std::io::{Read, Write};
use std::path::Path;

use attnboost_core::basemodel::{FcnConfig, FcnModel, Param};
use attnboost_core::boosting::{InitMode, StageStack};
use attnboost_core::Tensor;

use crate::error::FormatError;

pub const MAGIC: &[u8; 4] = b"ABFC";
pub const VERSION: u32 = 1;

const FLAG_BOOST: u32 = 1;
const FLAG_PROPAGATE: u32 = 2;

/// A trained stack together with the training switches that shape its
/// contribution maps.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stack: StageStack,
    pub boost_enabled: bool,
    pub init_mode: InitMode,
    pub propagate_between_stages: bool,
}

pub fn encode(ckpt: &Checkpoint) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    put_u32(&mut out, VERSION);
    let stages = ckpt.stack.stages();
    put_u32(&mut out, stages.len() as u32);
    let mut flags = 0;
    if ckpt.boost_enabled {
        flags |= FLAG_BOOST;
    }
    if ckpt.propagate_between_stages {
        flags |= FLAG_PROPAGATE;
    }
    put_u32(&mut out, flags);
    put_u32(
        &mut out,
        match ckpt.init_mode {
            InitMode::Uniform => 0,
            InitMode::ClassFrequency => 1,
        },
    );
    for s in stages {
        let c = s.config();
        put_u32(&mut out, c.depth as u32);
        put_u32(&mut out, c.base_channels as u32);
        put_u32(&mut out, c.input_channels as u32);
        out.extend_from_slice(&c.dropout_rate.to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());
    }
    let count: usize = stages.iter().map(|s| s.params().len()).sum::<usize>() + 1;
    put_u32(&mut out, count as u32);
    for (i, s) in stages.iter().enumerate() {
        for p in s.params() {
            put_tensor(&mut out, &format!("stage{i}/{}", p.name), &p.value);
        }
    }
    let lw = ckpt.stack.loss_weights();
    let lw = Tensor::from_vec(&[lw.len()], lw.to_vec()).expect("rank-1 shape matches its data");
    put_tensor(&mut out, "loss_weights", &lw);
    out
}

pub fn decode(bytes: &[u8]) -> Result<Checkpoint, FormatError> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(FormatError::BadMagic("ABFC"));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion(version));
    }
    let n = r.u32()? as usize;
    if n == 0 {
        return Err(FormatError::Invalid("checkpoint has no stages".into()));
    }
    let flags = r.u32()?;
    let init_mode = match r.u32()? {
        0 => InitMode::Uniform,
        1 => InitMode::ClassFrequency,
        v => return Err(FormatError::Invalid(format!("unknown init mode {v}"))),
    };
    let mut configs = Vec::with_capacity(n);
    for _ in 0..n {
        configs.push(FcnConfig {
            depth: r.u32()? as usize,
            base_channels: r.u32()? as usize,
            input_channels: r.u32()? as usize,
            dropout_rate: f64::from_bits(r.u64()?),
            seed: r.u64()?,
        });
    }
    let count = r.u32()? as usize;
    let mut per_stage: Vec<Vec<Param>> = vec![Vec::new(); n];
    let mut loss_weights = None;
    for _ in 0..count {
        let (name, value) = r.tensor()?;
        if name == "loss_weights" {
            loss_weights = Some(value.into_data());
            continue;
        }
        let (stage, param) = name
            .strip_prefix("stage")
            .and_then(|rest| rest.split_once('/'))
            .and_then(|(i, p)| Some((i.parse::<usize>().ok()?, p)))
            .ok_or_else(|| FormatError::Invalid(format!("unexpected tensor name {name:?}")))?;
        let slot = per_stage
            .get_mut(stage)
            .ok_or_else(|| FormatError::Invalid(format!("tensor {name:?} names a missing stage")))?;
        slot.push(Param {
            name: param.to_string(),
            value,
        });
    }
    if r.pos != bytes.len() {
        return Err(FormatError::Invalid("trailing bytes after last tensor".into()));
    }
    let loss_weights = loss_weights.ok_or_else(|| FormatError::Invalid("missing loss_weights tensor".into()))?;
    let stages = configs
        .into_iter()
        .zip(per_stage)
        .map(|(c, p)| FcnModel::from_params(c, p))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Checkpoint {
        stack: StageStack::with_loss_weights(stages, loss_weights)?,
        boost_enabled: flags & FLAG_BOOST != 0,
        init_mode,
        propagate_between_stages: flags & FLAG_PROPAGATE != 0,
    })
}

pub fn save(path: &Path, ckpt: &Checkpoint) -> Result<(), FormatError> {
    let mut f = std::fs::File::create(path)?;
    f.write_all(&encode(ckpt))?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Checkpoint, FormatError> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode(&bytes)
}

fn put_u32(out: &mut Vec<u8>, v: u32) {
    out.extend_from_slice(&v.to_le_bytes());
}

fn put_tensor(out: &mut Vec<u8>, name: &str, t: &Tensor) {
    put_u32(out, name.len() as u32);
    out.extend_from_slice(name.as_bytes());
    put_u32(out, t.shape().len() as u32);
    for &d in t.shape() {
        put_u32(out, d as u32);
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FormatError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or(FormatError::Truncated)?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, FormatError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn tensor(&mut self) -> Result<(String, Tensor), FormatError> {
        let len = self.u32()? as usize;
        let name = std::str::from_utf8(self.take(len)?)
            .map_err(|_| FormatError::Invalid("tensor name is not utf-8".into()))?
            .to_string();
        let rank = self.u32()? as usize;
        let mut dims = Vec::with_capacity(rank);
        for _ in 0..rank {
            dims.push(self.u32()? as usize);
        }
        let n = dims
            .iter()
            .try_fold(1usize, |a, &d| a.checked_mul(d))
            .ok_or(FormatError::Truncated)?;
        let raw = self.take(n.checked_mul(8).ok_or(FormatError::Truncated)?)?;
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((name, Tensor::from_vec(&dims, data)?))
    }
}
