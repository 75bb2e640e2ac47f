//! Synthetic dataset generator.
//!
//! Each image is one geometric object on a noisy dark background, with a
//! pixel-exact segmentation mask built from the same rasterization that
//! painted the object — no tolerance, no re-detection. Masks are optionally
//! banded into three horizontal pseudo-parts (head / thorax / abdomen, top to
//! bottom) to exercise part-level metric code paths. Everything is driven by
//! one Synth RNG stream, so a seed reproduces the set byte for byte.

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::mask::{Part, SegMask};
use crate::rng::{RngStream, StreamId};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ShapeKind {
    Disc,
    Square,
    Triangle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Texture {
    Solid,
    /// Checkerboard of the given cell size; dark cells are at quarter
    /// intensity, giving a high-frequency signature.
    Checker { period: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthClass {
    pub name: String,
    pub shape: ShapeKind,
    /// Object brightness in (0, 1].
    pub intensity: f32,
    pub texture: Texture,
    /// Per-class override of the spec-level object radius range.
    pub size_range: Option<(usize, usize)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: Vec<SynthClass>,
    /// Square image edge, single channel.
    pub size: usize,
    /// Object "radius" (half-extent) range, inclusive.
    pub radius: (usize, usize),
    /// Background noise amplitude around the 0.15 base level.
    pub noise: f32,
    pub per_class: usize,
    pub seed: u64,
    /// Band the mask into three pseudo-parts (else the whole object is one
    /// part).
    pub parts: bool,
}

#[derive(Debug, Clone)]
pub struct SyntheticSet {
    pub dataset: Dataset,
    /// One exact mask per image, same order as the dataset.
    pub masks: Vec<SegMask>,
}

impl SyntheticSpec {
    /// Three solid shapes at distinct intensities on 64x64 frames; the
    /// training sanity set used throughout the tests.
    pub fn shapes3(per_class: usize, seed: u64) -> Self {
        let class = |name: &str, shape, intensity| SynthClass {
            name: name.into(),
            shape,
            intensity,
            texture: Texture::Solid,
            size_range: None,
        };
        SyntheticSpec {
            classes: vec![
                class("disc", ShapeKind::Disc, 0.9),
                class("square", ShapeKind::Square, 0.55),
                class("triangle", ShapeKind::Triangle, 0.75),
            ],
            size: 64,
            radius: (8, 14),
            noise: 0.1,
            per_class,
            seed,
            parts: true,
        }
    }

    /// Two classes with identical geometry — one small square at a random
    /// position — where only the "patched" class is salient: its square is a
    /// bright per-pixel checker, while the "plain" square sits at the
    /// background base level. Every pixel brighter than the background lives
    /// inside the patched mask, so a discriminator has to key on those
    /// pixels; flipping them first is provably damaging, and no "the other
    /// class's feature is absent" shortcut survives the flip (a flipped
    /// patch turns into a smooth background-level square, i.e. a plain one).
    pub fn patch_pair(per_class: usize, seed: u64) -> Self {
        let square = |name: &str, intensity, texture| SynthClass {
            name: name.into(),
            shape: ShapeKind::Square,
            intensity,
            texture,
            size_range: None,
        };
        SyntheticSpec {
            classes: vec![
                square("plain", 0.15, Texture::Solid),
                square("patched", 1.0, Texture::Checker { period: 1 }),
            ],
            size: 64,
            radius: (3, 4),
            noise: 0.1,
            per_class,
            seed,
            parts: true,
        }
    }

    fn class_radius(&self, class: &SynthClass) -> (usize, usize) {
        class.size_range.unwrap_or(self.radius)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.len() < 2 {
            return Err(Error::invalid_argument("synthetic spec needs >= 2 classes"));
        }
        if self.per_class == 0 {
            return Err(Error::invalid_argument("per_class must be >= 1"));
        }
        if !(0.0..=0.5).contains(&self.noise) {
            return Err(Error::invalid_argument("noise must be in [0, 0.5]"));
        }
        for class in &self.classes {
            let (lo, hi) = self.class_radius(class);
            if lo < 1 || lo > hi {
                return Err(Error::invalid_argument(format!(
                    "class '{}' has an empty radius range {lo}..={hi}",
                    class.name
                )));
            }
            // largest object plus a one-pixel margin must fit in the frame
            if 2 * hi + 3 > self.size {
                return Err(Error::invalid_argument(format!(
                    "class '{}' object radius {hi} cannot fit a {}x{} frame",
                    class.name, self.size, self.size
                )));
            }
            if !(0.0 < class.intensity && class.intensity <= 1.0) {
                return Err(Error::invalid_argument(format!(
                    "class '{}' intensity must be in (0, 1]",
                    class.name
                )));
            }
            if let Texture::Checker { period: 0 } = class.texture {
                return Err(Error::invalid_argument(format!(
                    "class '{}' checker period must be >= 1",
                    class.name
                )));
            }
        }
        Ok(())
    }
}

/// True iff (dx, dy) relative to the center is inside the shape of the given
/// radius. Integer arithmetic only, so rasterization is exact.
fn inside(shape: ShapeKind, dx: isize, dy: isize, r: isize) -> bool {
    match shape {
        ShapeKind::Disc => dx * dx + dy * dy <= r * r,
        ShapeKind::Square => dx.abs() <= r && dy.abs() <= r,
        // apex on top, base at the bottom; half-width grows one pixel every
        // two rows
        ShapeKind::Triangle => dy >= -r && dy <= r && dx.abs() <= (dy + r) / 2,
    }
}

pub fn generate(spec: &SyntheticSpec) -> Result<SyntheticSet> {
    spec.validate()?;
    let size = spec.size;
    let n = spec.classes.len() * spec.per_class;
    let mut rng = RngStream::new(spec.seed, StreamId::Synth);
    let mut images = Vec::with_capacity(n * size * size);
    let mut labels = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);

    for (label, class) in spec.classes.iter().enumerate() {
        let (lo, hi) = spec.class_radius(class);
        for _ in 0..spec.per_class {
            let r = rng.range_inclusive(lo, hi);
            let margin = r + 1;
            let cx = rng.range_inclusive(margin, size - 1 - margin) as isize;
            let cy = rng.range_inclusive(margin, size - 1 - margin) as isize;
            let r = r as isize;

            // background first (fixed draw count per image), object painted over
            let mut img = Vec::with_capacity(size * size);
            for _ in 0..size * size {
                let u = rng.next_f32();
                img.push((0.15 + spec.noise * (2.0 * u - 1.0)).clamp(0.0, 1.0));
            }

            let mut mask = SegMask::background(size, size);
            let (mut ymin, mut ymax) = (isize::MAX, isize::MIN);
            for y in 0..size as isize {
                for x in 0..size as isize {
                    if inside(class.shape, x - cx, y - cy, r) {
                        ymin = ymin.min(y);
                        ymax = ymax.max(y);
                    }
                }
            }
            let rows = (ymax - ymin + 1).max(1);
            for y in 0..size as isize {
                for x in 0..size as isize {
                    if !inside(class.shape, x - cx, y - cy, r) {
                        continue;
                    }
                    let value = match class.texture {
                        Texture::Solid => class.intensity,
                        Texture::Checker { period } => {
                            let cell = (x as usize / period + y as usize / period) % 2;
                            if cell == 0 {
                                class.intensity
                            } else {
                                class.intensity * 0.25
                            }
                        }
                    };
                    img[(y * size as isize + x) as usize] = value;
                    let part = if spec.parts {
                        match ((y - ymin) * 3) / rows {
                            0 => Part::Head,
                            1 => Part::Thorax,
                            _ => Part::Abdomen,
                        }
                    } else {
                        Part::Thorax
                    };
                    mask.set(x as usize, y as usize, part);
                }
            }
            images.extend_from_slice(&img);
            labels.push(label);
            masks.push(mask);
        }
    }

    let dataset = Dataset::new(
        (1, size, size),
        images,
        labels,
        spec.classes.iter().map(|c| c.name.clone()).collect(),
    )?;
    Ok(SyntheticSet { dataset, masks })
}
