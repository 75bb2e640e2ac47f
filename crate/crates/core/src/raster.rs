//! Float-raster interchange format.
//!
//! Layout mirrors the checkpoint envelope: 8-byte magic, u32 LE version,
//! u64 LE header length, JSON header `{"shape": [...], "dtype": "f32"}`,
//! then the little-endian float32 payload. Written atomically.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fsio;

const MAGIC: &[u8; 8] = b"XAIKITFR";
const VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct RasterHeader {
    shape: Vec<usize>,
    dtype: String,
}

pub fn raster_bytes(shape: &[usize], data: &[f32]) -> Result<Vec<u8>> {
    let numel: usize = shape.iter().product();
    if numel != data.len() {
        return Err(Error::shape_mismatch("raster", shape, &[data.len()]));
    }
    let header = serde_json::to_vec(&RasterHeader {
        shape: shape.to_vec(),
        dtype: "f32".into(),
    })
    .expect("raster header is serializable");
    let mut bytes = Vec::with_capacity(20 + header.len() + data.len() * 4);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(header.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&header);
    for &v in data {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    Ok(bytes)
}

pub fn save_raster(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    fsio::atomic_write(path, &raster_bytes(shape, data)?)
}

pub fn load_raster(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fsio::read_bytes(path)?;
    let fail = |msg: &str| Error::format(path, msg);
    if bytes.len() < 20 || &bytes[..8] != MAGIC {
        return Err(fail("not a float raster (bad magic)"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(fail(&format!("unsupported raster version {version}")));
    }
    let header_len = u64::from_le_bytes(bytes[12..20].try_into().unwrap()) as usize;
    if bytes.len() < 20 + header_len {
        return Err(fail("truncated header"));
    }
    let header: RasterHeader = serde_json::from_slice(&bytes[20..20 + header_len])
        .map_err(|e| fail(&format!("header decode: {e}")))?;
    if header.dtype != "f32" {
        return Err(fail(&format!("unsupported dtype '{}'", header.dtype)));
    }
    let numel: usize = header.shape.iter().product();
    let payload = &bytes[20 + header_len..];
    if payload.len() != numel * 4 {
        return Err(fail(&format!(
            "payload holds {} bytes, shape {:?} needs {}",
            payload.len(),
            header.shape,
            numel * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((header.shape, data))
}

/// Min-max normalize to [0, 1] for 8-bit export; a constant raster maps to
/// all zeros.
pub fn minmax_normalize(data: &[f32]) -> Vec<f32> {
    let mut min = f32::INFINITY;
    let mut max = f32::NEG_INFINITY;
    for &v in data {
        min = min.min(v);
        max = max.max(v);
    }
    if !(max > min) {
        return vec![0.0; data.len()];
    }
    let range = (max - min) as f64;
    data.iter()
        .map(|&v| (((v - min) as f64) / range) as f32)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.raster");
        let data = vec![1.5f32, -2.25, 0.0, f32::MIN_POSITIVE];
        save_raster(&p, &[2, 2], &data).unwrap();
        let (shape, back) = load_raster(&p).unwrap();
        assert_eq!(shape, vec![2, 2]);
        assert_eq!(back, data);
    }

    #[test]
    fn shape_payload_mismatch_rejected() {
        assert!(raster_bytes(&[3], &[0.0; 2]).is_err());
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.raster");
        let mut bytes = raster_bytes(&[2], &[1.0, 2.0]).unwrap();
        bytes.truncate(bytes.len() - 2);
        std::fs::write(&p, bytes).unwrap();
        assert!(load_raster(&p).is_err());
    }

    #[test]
    fn minmax_maps_to_unit_range() {
        let out = minmax_normalize(&[2.0, 4.0, 3.0]);
        assert_eq!(out, vec![0.0, 1.0, 0.5]);
        assert_eq!(minmax_normalize(&[7.0, 7.0]), vec![0.0, 0.0]);
    }
}
