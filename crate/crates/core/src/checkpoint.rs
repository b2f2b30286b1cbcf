//! Binary parameter checkpoints.
//!
//! Layout: magic `SCV1`, then one record per parameter tensor (weight before
//! bias, layers in storage order):
//!
//! ```text
//! u32 LE  layer index
//! u8      side tag (0 encoder, 1 decoder, 2 latent head)
//! u32 LE  rank, followed by `rank` u32 LE dimensions
//! f64 LE  payload, row-major
//! ```
//!
//! Optimizer state lives in a sibling file with magic `SCO1`: the step
//! count (u64 LE), the four hyperparameters (f64 LE), the buffer count
//! (u32 LE) and then every first-moment buffer followed by every
//! second-moment buffer, each as a u32 LE length and f64 LE payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::optim::{AdamConfig, OptimizerState};
use crate::params::{LayerParams, ParamStore, Side};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"SCV1";
pub const OPTIMIZER_MAGIC: &[u8; 4] = b"SCO1";

pub fn encode(params: &ParamStore) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 + params.param_count() * 8);
    out.extend_from_slice(MAGIC);
    for l in params.layers() {
        for t in [&l.weight, &l.bias] {
            out.extend_from_slice(&l.index.to_le_bytes());
            out.push(l.side.tag());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for &v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos + n;
        if end > self.bytes.len() {
            return Err(Error::Format(format!(
                "truncated {what}: expected {n} bytes at offset {}, {} available",
                self.pos,
                self.bytes.len() - self.pos
            )));
        }
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::Format("size overflow".into()))?, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn done(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamStore> {
    if bytes.len() < 4 || &bytes[..4] != MAGIC {
        return Err(Error::Format(format!(
            "bad checkpoint magic {:02x?}",
            &bytes[..bytes.len().min(4)]
        )));
    }
    let mut r = Reader { bytes, pos: 4 };
    let mut records = Vec::new();
    while !r.done() {
        let index = r.u32("layer index")?;
        let side = Side::from_tag(r.take(1, "side tag")?[0])?;
        let rank = r.u32("rank")? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32("dimension")? as usize);
        }
        let n = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let n = n.ok_or_else(|| Error::Format("tensor size overflow".into()))?;
        let data = r.f64s(n, "payload")?;
        records.push((index, side, Tensor::new(shape, data).map_err(|e| Error::Format(e.to_string()))?));
    }
    if records.len() % 2 != 0 {
        return Err(Error::Format("odd number of parameter records".into()));
    }
    let mut layers = Vec::with_capacity(records.len() / 2);
    let mut it = records.into_iter();
    while let (Some((wi, ws, weight)), Some((bi, bs, bias))) = (it.next(), it.next()) {
        if wi != bi || ws != bs || weight.shape().len() != 2 || bias.shape().len() != 1 {
            return Err(Error::Format(format!(
                "records for {ws} layer {wi} are not a weight/bias pair"
            )));
        }
        layers.push(LayerParams {
            side: ws,
            index: wi,
            weight,
            bias,
        });
    }
    ParamStore::new(layers).map_err(|e| Error::Format(e.to_string()))
}

pub fn save(path: &Path, params: &ParamStore) -> Result<()> {
    write_atomic(path, &encode(params))
}

pub fn load(path: &Path) -> Result<ParamStore> {
    decode(&fs::read(path)?)
}

/// Fails unless `loaded` has exactly the layer layout of `template`.
pub fn check_layout(template: &ParamStore, loaded: &ParamStore) -> Result<()> {
    let same = template.layers().len() == loaded.layers().len()
        && template.layers().iter().zip(loaded.layers()).all(|(a, b)| {
            a.side == b.side
                && a.index == b.index
                && a.weight.shape() == b.weight.shape()
                && a.bias.shape() == b.bias.shape()
        });
    if same {
        Ok(())
    } else {
        Err(Error::Config(
            "checkpoint does not match the configured architecture".into(),
        ))
    }
}

pub fn encode_optimizer(state: &OptimizerState) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(OPTIMIZER_MAGIC);
    out.extend_from_slice(&state.step().to_le_bytes());
    let c = state.config;
    for v in [c.learning_rate, c.beta1, c.beta2, c.eps] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(state.first_moments().len() as u32).to_le_bytes());
    for buf in state.first_moments().iter().chain(state.second_moments()) {
        out.extend_from_slice(&(buf.len() as u32).to_le_bytes());
        for v in buf {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn decode_optimizer(bytes: &[u8], params: &ParamStore) -> Result<OptimizerState> {
    if bytes.len() < 4 || &bytes[..4] != OPTIMIZER_MAGIC {
        return Err(Error::Format("bad optimizer-state magic".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let step = r.u64("step")?;
    let h = r.f64s(4, "hyperparameters")?;
    let config = AdamConfig {
        learning_rate: h[0],
        beta1: h[1],
        beta2: h[2],
        eps: h[3],
    };
    let count = r.u32("buffer count")? as usize;
    let mut bufs = Vec::with_capacity(2 * count);
    for _ in 0..2 * count {
        let n = r.u32("buffer length")? as usize;
        bufs.push(r.f64s(n, "moment buffer")?);
    }
    if !r.done() {
        return Err(Error::Format("trailing bytes after optimizer state".into()));
    }
    let second = bufs.split_off(count);
    OptimizerState::from_parts(params, config, step, bufs, second)
}

/// Writes through a temporary sibling so a crash never leaves a torn file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}
