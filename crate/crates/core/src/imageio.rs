//! Image loading: PNG/JPEG decode, hand-rolled bilinear resize, per-channel
//! normalization into CHW float tensors.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-channel normalization constants, recorded alongside every manifest so
/// a run's preprocessing is reproducible from its artifacts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: Vec<f32>,
    pub std: Vec<f32>,
}

impl Normalization {
    /// (0, 1) per channel: raw [0, 1] pixel values pass through.
    pub fn identity(channels: usize) -> Self {
        Normalization {
            mean: vec![0.0; channels],
            std: vec![1.0; channels],
        }
    }

    pub fn validate(&self, channels: usize) -> Result<()> {
        if self.mean.len() != channels || self.std.len() != channels {
            return Err(Error::invalid_argument(format!(
                "normalization lists {}/{} constants for {channels} channels",
                self.mean.len(),
                self.std.len()
            )));
        }
        if self.std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::invalid_argument("normalization std must be positive"));
        }
        Ok(())
    }
}

/// Center-aligned bilinear resample of a CHW buffer to (th, tw).
/// Source coordinate of output pixel t is (t + 0.5) * scale - 0.5, clamped,
/// which keeps image content centered (no half-pixel drift).
pub fn bilinear_resize(
    src: &[f32],
    (c, h, w): (usize, usize, usize),
    (th, tw): (usize, usize),
) -> Vec<f32> {
    if (h, w) == (th, tw) {
        return src.to_vec();
    }
    let sy = h as f64 / th as f64;
    let sx = w as f64 / tw as f64;
    let mut out = vec![0f32; c * th * tw];
    for ty in 0..th {
        let fy = ((ty as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let wy = fy - y0 as f64;
        for tx in 0..tw {
            let fx = ((tx as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let wx = fx - x0 as f64;
            for ch in 0..c {
                let plane = &src[ch * h * w..][..h * w];
                let v00 = plane[y0 * w + x0] as f64;
                let v01 = plane[y0 * w + x1] as f64;
                let v10 = plane[y1 * w + x0] as f64;
                let v11 = plane[y1 * w + x1] as f64;
                let top = v00 + (v01 - v00) * wx;
                let bottom = v10 + (v11 - v10) * wx;
                out[(ch * th + ty) * tw + tx] = (top + (bottom - top) * wy) as f32;
            }
        }
    }
    out
}

fn decode(path: &Path) -> Result<image::DynamicImage> {
    image::open(path).map_err(|e| Error::ImageDecode {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

/// Decode an image to CHW floats in [0, 1]; `channels` 1 converts to luma,
/// 3 to RGB.
pub fn decode_to_chw(path: &Path, channels: usize) -> Result<(usize, usize, Vec<f32>)> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = match channels {
        1 => img
            .to_luma8()
            .as_raw()
            .iter()
            .map(|&v| v as f32 / 255.0)
            .collect(),
        3 => {
            let rgb = img.to_rgb8();
            let raw = rgb.as_raw();
            let mut chw = vec![0f32; 3 * h * w];
            for (i, px) in raw.chunks_exact(3).enumerate() {
                for c in 0..3 {
                    chw[c * h * w + i] = px[c] as f32 / 255.0;
                }
            }
            chw
        }
        n => {
            return Err(Error::invalid_argument(format!(
                "channels must be 1 or 3, got {n}"
            )))
        }
    };
    Ok((h, w, data))
}

/// Full load pipeline: decode, optional bilinear resize, normalize.
pub fn load_image(
    path: &Path,
    channels: usize,
    target: Option<(usize, usize)>,
    norm: &Normalization,
) -> Result<Tensor> {
    norm.validate(channels)?;
    let (h, w, mut data) = decode_to_chw(path, channels)?;
    let (h, w) = match target {
        Some((th, tw)) if (th, tw) != (h, w) => {
            data = bilinear_resize(&data, (channels, h, w), (th, tw));
            (th, tw)
        }
        _ => (h, w),
    };
    for c in 0..channels {
        let (m, s) = (norm.mean[c], norm.std[c]);
        for v in &mut data[c * h * w..(c + 1) * h * w] {
            *v = (*v - m) / s;
        }
    }
    Tensor::new(vec![channels, h, w], data)
}

/// Write a single-channel [0,1] float buffer as an 8-bit grayscale PNG.
pub fn encode_gray_png(data: &[f32], h: usize, w: usize) -> Result<Vec<u8>> {
    debug_assert_eq!(data.len(), h * w);
    let bytes: Vec<u8> = data
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let mut out = Vec::new();
    image::write_buffer_with_format(
        &mut std::io::Cursor::new(&mut out),
        &bytes,
        w as u32,
        h as u32,
        image::ExtendedColorType::L8,
        image::ImageFormat::Png,
    )
    .map_err(|e| Error::invalid_argument(format!("png encode: {e}")))?;
    Ok(out)
}

pub fn save_gray_png(path: &Path, data: &[f32], h: usize, w: usize) -> Result<()> {
    crate::fsio::atomic_write(path, &encode_gray_png(data, h, w)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_gray(dir: &Path, name: &str, data: &[f32], h: usize, w: usize) -> std::path::PathBuf {
        let p = dir.join(name);
        save_gray_png(&p, data, h, w).unwrap();
        p
    }

    #[test]
    fn solid_gray_with_matching_constants_is_zero() {
        let dir = tempfile::tempdir().unwrap();
        let v = 128.0 / 255.0;
        let p = write_gray(dir.path(), "gray.png", &vec![v; 16], 4, 4);
        let norm = Normalization {
            mean: vec![v],
            std: vec![1.0],
        };
        let t = load_image(&p, 1, None, &norm).unwrap();
        assert!(t.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn identity_normalization_returns_raw_pixels() {
        let dir = tempfile::tempdir().unwrap();
        let data = vec![0.0, 51.0 / 255.0, 102.0 / 255.0, 1.0];
        let p = write_gray(dir.path(), "ramp.png", &data, 2, 2);
        let t = load_image(&p, 1, None, &Normalization::identity(1)).unwrap();
        for (a, b) in t.iter().zip(&data) {
            assert!((a - b).abs() < 0.5 / 255.0, "{a} vs {b}");
        }
    }

    #[test]
    fn bilinear_downsample_of_nn_doubled_image_roundtrips() {
        // Nearest-neighbor 2x upsample then center-aligned bilinear back down
        // lands exactly between duplicate pixels, recovering the original.
        let (h, w) = (5, 7);
        let src: Vec<f32> = (0..h * w).map(|i| (i as f32 * 37.0 % 255.0) / 255.0).collect();
        let mut big = vec![0f32; 4 * h * w];
        for y in 0..2 * h {
            for x in 0..2 * w {
                big[y * 2 * w + x] = src[(y / 2) * w + x / 2];
            }
        }
        let back = bilinear_resize(&big, (1, 2 * h, 2 * w), (h, w));
        for (a, b) in back.iter().zip(&src) {
            assert!((a - b).abs() <= 1.0 / 255.0, "{a} vs {b}");
        }
    }

    #[test]
    fn resize_preserves_constant_images() {
        let src = vec![0.42f32; 9];
        let out = bilinear_resize(&src, (1, 3, 3), (5, 8));
        assert_eq!(out.len(), 40);
        for &v in &out {
            assert!((v - 0.42).abs() < 1e-6);
        }
    }

    #[test]
    fn decode_failure_names_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("junk.png");
        std::fs::write(&p, b"this is not a png").unwrap();
        let err = load_image(&p, 1, None, &Normalization::identity(1)).unwrap_err();
        assert!(err.to_string().contains("junk.png"), "{err}");
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn rgb_channel_layout_is_planar() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let rgba = [255u8, 0, 0, 255, 0, 255, 0, 255]; // red, green side by side
        let mut out = Vec::new();
        image::write_buffer_with_format(
            &mut std::io::Cursor::new(&mut out),
            &rgba,
            2,
            1,
            image::ExtendedColorType::Rgba8,
            image::ImageFormat::Png,
        )
        .unwrap();
        std::fs::write(&p, &out).unwrap();
        let t = load_image(&p, 3, None, &Normalization::identity(3)).unwrap();
        assert_eq!(t.shape(), &[3, 1, 2]);
        let d = t.data();
        assert_eq!(&d[..2], &[1.0, 0.0]); // R plane
        assert_eq!(&d[2..4], &[0.0, 1.0]); // G plane
        assert_eq!(&d[4..6], &[0.0, 0.0]); // B plane
    }
}
