//! Part segmentation masks and their PNG codec.
//!
//! Color scheme: red marks the head, green the thorax, blue the abdomen;
//! black or transparent pixels are background. Decoding classifies each
//! pixel to the nearest anchor color and fails loudly (with coordinates) on
//! pixels outside the per-channel tolerance, so corrupt or oddly exported
//! masks surface immediately instead of skewing metrics.

use std::path::Path;

use crate::error::{Error, Result};

/// Default per-channel decode tolerance. Annotation tools anti-alias edges;
/// 16/255 absorbs that without accepting arbitrary colors.
pub const MASK_TOLERANCE: u8 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum Part {
    Background = 0,
    Head = 1,
    Thorax = 2,
    Abdomen = 3,
}

impl Part {
    pub const PARTS: [Part; 3] = [Part::Head, Part::Thorax, Part::Abdomen];

    pub fn name(self) -> &'static str {
        match self {
            Part::Background => "background",
            Part::Head => "head",
            Part::Thorax => "thorax",
            Part::Abdomen => "abdomen",
        }
    }

    fn from_u8(v: u8) -> Part {
        match v {
            1 => Part::Head,
            2 => Part::Thorax,
            3 => Part::Abdomen,
            _ => Part::Background,
        }
    }

    fn rgba(self) -> [u8; 4] {
        match self {
            Part::Background => [0, 0, 0, 255],
            Part::Head => [255, 0, 0, 255],
            Part::Thorax => [0, 255, 0, 255],
            Part::Abdomen => [0, 0, 255, 255],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SegMask {
    pub width: usize,
    pub height: usize,
    /// Row-major part codes (Part as u8).
    parts: Vec<u8>,
}

impl SegMask {
    pub fn new(width: usize, height: usize, parts: Vec<u8>) -> Result<Self> {
        if parts.len() != width * height {
            return Err(Error::invalid_argument(format!(
                "mask buffer of {} codes does not cover {width}x{height}",
                parts.len()
            )));
        }
        if let Some(bad) = parts.iter().find(|&&p| p > 3) {
            return Err(Error::invalid_argument(format!("invalid part code {bad}")));
        }
        Ok(SegMask {
            width,
            height,
            parts,
        })
    }

    pub fn background(width: usize, height: usize) -> Self {
        SegMask {
            width,
            height,
            parts: vec![0; width * height],
        }
    }

    pub fn part_at(&self, x: usize, y: usize) -> Part {
        Part::from_u8(self.parts[y * self.width + x])
    }

    pub fn set(&mut self, x: usize, y: usize, part: Part) {
        self.parts[y * self.width + x] = part as u8;
    }

    pub fn codes(&self) -> &[u8] {
        &self.parts
    }

    /// Boolean object mask: true wherever the pixel is any body part.
    pub fn union(&self) -> Vec<bool> {
        self.parts.iter().map(|&p| p != 0).collect()
    }

    /// Boolean mask of one part.
    pub fn part_mask(&self, part: Part) -> Vec<bool> {
        self.parts.iter().map(|&p| p == part as u8).collect()
    }

    /// Number of non-background pixels.
    pub fn area(&self) -> usize {
        self.parts.iter().filter(|&&p| p != 0).count()
    }

    pub fn part_area(&self, part: Part) -> usize {
        self.parts.iter().filter(|&&p| p == part as u8).count()
    }

    /// Classify one RGBA pixel against the anchor palette: nearest anchor by
    /// max per-channel distance, within `tolerance`; ties prefer background.
    pub fn classify_pixel(rgba: [u8; 4], tolerance: u8) -> Option<Part> {
        let [r, g, b, a] = rgba.map(|v| v as i32);
        // transparent background: only the alpha channel matters
        let mut best = (a, Part::Background);
        let anchors = [
            (Part::Background, [0, 0, 0]),
            (Part::Head, [255, 0, 0]),
            (Part::Thorax, [0, 255, 0]),
            (Part::Abdomen, [0, 0, 255]),
        ];
        for (part, [ar, ag, ab]) in anchors {
            let d = (r - ar)
                .abs()
                .max((g - ag).abs())
                .max((b - ab).abs())
                .max(255 - a);
            if d < best.0 {
                best = (d, part);
            }
        }
        (best.0 <= tolerance as i32).then_some(best.1)
    }

    /// Decode a mask from RGBA pixel data.
    pub fn decode_rgba(width: usize, height: usize, rgba: &[u8], tolerance: u8) -> Result<Self> {
        if rgba.len() != width * height * 4 {
            return Err(Error::invalid_argument(format!(
                "rgba buffer of {} bytes does not cover {width}x{height}",
                rgba.len()
            )));
        }
        let mut parts = Vec::with_capacity(width * height);
        for (i, px) in rgba.chunks_exact(4).enumerate() {
            let rgba: [u8; 4] = px.try_into().unwrap();
            let part = SegMask::classify_pixel(rgba, tolerance).ok_or(Error::MaskPixel {
                x: (i % width) as u32,
                y: (i / width) as u32,
                rgba,
                tolerance,
            })?;
            parts.push(part as u8);
        }
        Ok(SegMask {
            width,
            height,
            parts,
        })
    }

    /// Decode a mask PNG from disk.
    pub fn decode_file(path: &Path, tolerance: u8) -> Result<Self> {
        let img = image::open(path).map_err(|e| Error::ImageDecode {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let rgba = img.to_rgba8();
        let (w, h) = (rgba.width() as usize, rgba.height() as usize);
        SegMask::decode_rgba(w, h, rgba.as_raw(), tolerance)
    }

    /// Encode to PNG bytes using the pure anchor colors; decoding these bytes
    /// reproduces the mask exactly.
    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let mut rgba = Vec::with_capacity(self.parts.len() * 4);
        for &p in &self.parts {
            rgba.extend_from_slice(&Part::from_u8(p).rgba());
        }
        let mut out = Vec::new();
        image::write_buffer_with_format(
            &mut std::io::Cursor::new(&mut out),
            &rgba,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgba8,
            image::ImageFormat::Png,
        )
        .map_err(|e| Error::invalid_argument(format!("png encode: {e}")))?;
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::fsio::atomic_write(path, &self.encode_png()?)
    }
}
