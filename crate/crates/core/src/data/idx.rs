//! IDX (MNIST) binary format.
//!
//! Big-endian header: magic `0x00000803` (u8 images, three dimensions) or
//! `0x00000801` (u8 labels, one dimension), then one u32 per dimension, then
//! the raw bytes. Gzip-compressed files are detected by their `1F 8B` magic
//! and inflated transparently.

use std::io::Read;

use flate2::read::GzDecoder;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const IMAGES_MAGIC: u32 = 0x0000_0803;
pub const LABELS_MAGIC: u32 = 0x0000_0801;

#[derive(Debug, Clone, PartialEq)]
pub enum IdxData {
    /// `[n × rows·cols]`, pixels scaled to `[0, 1]`.
    Images { images: Tensor, rows: usize, cols: usize },
    Labels(Vec<u8>),
}

fn be_u32(bytes: &[u8], at: usize) -> Result<u32> {
    bytes
        .get(at..at + 4)
        .map(|b| u32::from_be_bytes(b.try_into().unwrap()))
        .ok_or_else(|| Error::Format(format!("truncated IDX header: {} bytes", bytes.len())))
}

fn maybe_gunzip(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.starts_with(&[0x1f, 0x8b]) {
        let mut out = Vec::new();
        GzDecoder::new(bytes)
            .read_to_end(&mut out)
            .map_err(|e| Error::Format(format!("gzip: {e}")))?;
        Ok(out)
    } else {
        Ok(bytes.to_vec())
    }
}

pub fn parse_idx(bytes: &[u8]) -> Result<IdxData> {
    let owned = maybe_gunzip(bytes)?;
    let bytes = owned.as_slice();
    let magic = be_u32(bytes, 0)?;
    let ndim = match magic {
        IMAGES_MAGIC => 3,
        LABELS_MAGIC => 1,
        other => {
            return Err(Error::Format(format!(
                "unexpected IDX magic 0x{other:08X} (want 0x{IMAGES_MAGIC:08X} or 0x{LABELS_MAGIC:08X})"
            )))
        }
    };
    let dims = (0..ndim)
        .map(|k| be_u32(bytes, 4 + 4 * k).map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let header = 4 + 4 * ndim;
    let expected: usize = dims.iter().product();
    let actual = bytes.len() - header;
    if actual != expected {
        return Err(Error::Format(format!(
            "IDX payload size mismatch: expected {expected} bytes, found {actual}"
        )));
    }
    let payload = &bytes[header..];
    if ndim == 1 {
        return Ok(IdxData::Labels(payload.to_vec()));
    }
    let (n, rows, cols) = (dims[0], dims[1], dims[2]);
    if n == 0 || rows == 0 || cols == 0 {
        return Err(Error::Format(format!("empty IDX image set {dims:?}")));
    }
    let data = payload.iter().map(|&p| f64::from(p) / 255.0).collect();
    Ok(IdxData::Images {
        images: Tensor::new(vec![n, rows * cols], data)?,
        rows,
        cols,
    })
}

pub fn parse_images(bytes: &[u8]) -> Result<Tensor> {
    match parse_idx(bytes)? {
        IdxData::Images { images, .. } => Ok(images),
        IdxData::Labels(_) => Err(Error::Format("expected an IDX image file, found labels".into())),
    }
}

pub fn parse_labels(bytes: &[u8]) -> Result<Vec<u8>> {
    match parse_idx(bytes)? {
        IdxData::Labels(l) => Ok(l),
        IdxData::Images { .. } => Err(Error::Format("expected an IDX label file, found images".into())),
    }
}

/// Serializes `[n × rows·cols]` images in `[0, 1]`, rounding to bytes.
pub fn encode_images(images: &Tensor, rows: usize, cols: usize) -> Result<Vec<u8>> {
    if images.cols() != rows * cols {
        return Err(Error::Shape {
            op: "idx images",
            left: images.shape().to_vec(),
            right: vec![rows, cols],
        });
    }
    let mut out = Vec::with_capacity(16 + images.len());
    for v in [IMAGES_MAGIC, images.rows() as u32, rows as u32, cols as u32] {
        out.extend_from_slice(&v.to_be_bytes());
    }
    for &p in images.data() {
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::Input(format!("pixel {p} outside [0, 1]")));
        }
        out.push((p * 255.0).round() as u8);
    }
    Ok(out)
}

pub fn encode_labels(labels: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + labels.len());
    out.extend_from_slice(&LABELS_MAGIC.to_be_bytes());
    out.extend_from_slice(&(labels.len() as u32).to_be_bytes());
    out.extend_from_slice(labels);
    out
}
