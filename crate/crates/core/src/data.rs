//! Run manifests: the single JSON document that pins a dataset — records,
//! label-merge map, normalization constants, and target size — so a run is
//! reproducible from its artifacts alone.
//!
//! Schema (all image/mask paths relative to the manifest's directory):
//! ```json
//! {
//!   "channels": 1,
//!   "image_size": [64, 64],
//!   "normalization": { "mean": [0.0], "std": [1.0] },
//!   "merge": { "Bombus cryptarum": "Bombus lucorum-complex" },
//!   "records": [
//!     { "image": "images/disc_000.png", "class": "disc",
//!       "mask": "masks/disc_000.png", "split": "train" }
//!   ]
//! }
//! ```
//! After the merge map is applied, dense class indices are assigned
//! alphabetically over the merged names.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::fsio;
use crate::imageio::{self, Normalization};
use crate::mask::{SegMask, MASK_TOLERANCE};
use crate::synth::SyntheticSet;
use crate::train::stratified_split_indices;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RecordFile {
    image: String,
    class: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    mask: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    split: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ManifestFile {
    channels: usize,
    image_size: Option<(usize, usize)>,
    normalization: Normalization,
    #[serde(default)]
    merge: BTreeMap<String, String>,
    records: Vec<RecordFile>,
}

#[derive(Debug, Clone)]
pub struct ManifestRecord {
    /// Resolved image path.
    pub image: PathBuf,
    /// Path as written in the manifest (kept for re-serialization).
    pub image_rel: String,
    /// Merged class name.
    pub class_name: String,
    /// Class name before merging.
    pub raw_class: String,
    pub mask: Option<PathBuf>,
    pub mask_rel: Option<String>,
    pub split: Option<String>,
    /// Dense index of `class_name`.
    pub label: usize,
}

#[derive(Debug, Clone)]
pub struct RunManifest {
    /// Directory all relative paths resolve against.
    pub root: PathBuf,
    pub channels: usize,
    pub image_size: Option<(usize, usize)>,
    pub normalization: Normalization,
    /// Merged class names, alphabetical; index = dense label.
    pub class_names: Vec<String>,
    pub records: Vec<ManifestRecord>,
}

pub fn load_manifest(path: &Path) -> Result<RunManifest> {
    let text = fsio::read_string(path)?;
    let file: ManifestFile =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    if file.channels != 1 && file.channels != 3 {
        return Err(Error::format(
            path,
            format!("channels must be 1 or 3, got {}", file.channels),
        ));
    }
    file.normalization.validate(file.channels)?;
    if let Some((h, w)) = file.image_size {
        if h == 0 || w == 0 {
            return Err(Error::format(path, "image_size dims must be positive"));
        }
    }

    let raw_classes: BTreeSet<&str> = file.records.iter().map(|r| r.class.as_str()).collect();
    for name in file.merge.keys() {
        if !raw_classes.contains(name.as_str()) {
            return Err(Error::UnknownMergeClass { name: name.clone() });
        }
    }

    let merged_of = |raw: &str| -> String {
        file.merge.get(raw).cloned().unwrap_or_else(|| raw.to_string())
    };
    let class_names: Vec<String> = file
        .records
        .iter()
        .map(|r| merged_of(&r.class))
        .collect::<BTreeSet<String>>()
        .into_iter()
        .collect();
    let index_of: BTreeMap<&str, usize> = class_names
        .iter()
        .enumerate()
        .map(|(i, n)| (n.as_str(), i))
        .collect();

    let root = path.parent().unwrap_or(Path::new(".")).to_path_buf();
    let mut seen = BTreeSet::new();
    let mut records = Vec::with_capacity(file.records.len());
    for (index, r) in file.records.iter().enumerate() {
        let image = root.join(&r.image);
        if !seen.insert(r.image.clone()) {
            return Err(Error::DuplicateRecord { index, path: image });
        }
        if !image.is_file() {
            return Err(Error::MissingFile { index, path: image });
        }
        let mask = match &r.mask {
            Some(m) => {
                let p = root.join(m);
                if !p.is_file() {
                    return Err(Error::MissingFile { index, path: p });
                }
                Some(p)
            }
            None => None,
        };
        let class_name = merged_of(&r.class);
        let label = index_of[class_name.as_str()];
        records.push(ManifestRecord {
            image,
            image_rel: r.image.clone(),
            class_name,
            raw_class: r.class.clone(),
            mask,
            mask_rel: r.mask.clone(),
            split: r.split.clone(),
            label,
        });
    }
    Ok(RunManifest {
        root,
        channels: file.channels,
        image_size: file.image_size,
        normalization: file.normalization,
        class_names,
        records,
    })
}

impl RunManifest {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.records.iter().map(|r| r.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_names.len()];
        for r in &self.records {
            counts[r.label] += 1;
        }
        counts
    }

    /// Same manifest restricted to the given record indices (class table
    /// unchanged).
    pub fn subset(&self, indices: &[usize]) -> RunManifest {
        RunManifest {
            root: self.root.clone(),
            channels: self.channels,
            image_size: self.image_size,
            normalization: self.normalization.clone(),
            class_names: self.class_names.clone(),
            records: indices.iter().map(|&i| self.records[i].clone()).collect(),
        }
    }

    /// Stratified train/validation split over records.
    pub fn split_stratified(&self, ratio: f64, seed: u64) -> Result<(RunManifest, RunManifest)> {
        let (train, val) = stratified_split_indices(&self.labels(), &self.class_names, ratio, seed)?;
        Ok((self.subset(&train), self.subset(&val)))
    }

    /// Write the manifest (merge already applied, so none is emitted).
    pub fn save(&self, path: &Path) -> Result<()> {
        let file = ManifestFile {
            channels: self.channels,
            image_size: self.image_size,
            normalization: self.normalization.clone(),
            merge: BTreeMap::new(),
            records: self
                .records
                .iter()
                .map(|r| RecordFile {
                    image: r.image_rel.clone(),
                    class: r.class_name.clone(),
                    mask: r.mask_rel.clone(),
                    split: r.split.clone(),
                })
                .collect(),
        };
        let mut text = serde_json::to_string_pretty(&file)
            .map_err(|e| Error::format(path, e.to_string()))?;
        text.push('\n');
        fsio::atomic_write(path, text.as_bytes())
    }

    /// Load every record's image into one in-memory dataset.
    pub fn load_dataset(&self) -> Result<Dataset> {
        if self.is_empty() {
            return Err(Error::invalid_argument("manifest has no records"));
        }
        let mut images = Vec::new();
        let mut dims: Option<(usize, usize)> = self.image_size;
        for r in &self.records {
            let t = imageio::load_image(&r.image, self.channels, self.image_size, &self.normalization)?;
            let (h, w) = (t.shape()[1], t.shape()[2]);
            match dims {
                None => dims = Some((h, w)),
                Some(d) if d != (h, w) => {
                    return Err(Error::format(
                        &r.image,
                        format!("image is {h}x{w} but the run uses {}x{}; set image_size to resize", d.0, d.1),
                    ));
                }
                _ => {}
            }
            images.extend_from_slice(t.data());
        }
        let (h, w) = dims.unwrap();
        Dataset::new(
            (self.channels, h, w),
            images,
            self.labels(),
            self.class_names.clone(),
        )
    }

    /// Decode every record's mask (None where a record has no mask path).
    /// Masks are never resized; with a fixed image_size each mask must
    /// already match it.
    pub fn load_masks(&self) -> Result<Vec<Option<SegMask>>> {
        let mut out = Vec::with_capacity(self.records.len());
        for r in &self.records {
            match &r.mask {
                None => out.push(None),
                Some(p) => {
                    let m = SegMask::decode_file(p, MASK_TOLERANCE)?;
                    if let Some((h, w)) = self.image_size {
                        if (m.height, m.width) != (h, w) {
                            return Err(Error::format(
                                p,
                                format!(
                                    "mask is {}x{} but the run's image size is {h}x{w}",
                                    m.height, m.width
                                ),
                            ));
                        }
                    }
                    out.push(Some(m));
                }
            }
        }
        Ok(out)
    }
}

/// Write a synthetic set to disk as grayscale PNGs + mask PNGs + manifest.
/// Returns the manifest path. Output is byte-deterministic for a fixed set.
pub fn materialize(set: &SyntheticSet, dir: &Path) -> Result<PathBuf> {
    materialize_with_splits(set, dir, None)
}

/// [`materialize`], labeling record `i` with split `splits[i]` when given.
pub fn materialize_with_splits(
    set: &SyntheticSet,
    dir: &Path,
    splits: Option<&[String]>,
) -> Result<PathBuf> {
    let ds = &set.dataset;
    let (c, h, w) = ds.shape;
    if let Some(s) = splits {
        if s.len() != ds.len() {
            return Err(Error::shape_mismatch("splits", &[s.len()], &[ds.len()]));
        }
    }
    if c != 1 {
        return Err(Error::invalid_argument("materialize expects single-channel sets"));
    }
    let mut per_class_counter = vec![0usize; ds.classes()];
    let mut records = Vec::with_capacity(ds.len());
    for i in 0..ds.len() {
        let label = ds.labels[i];
        let class = &ds.class_names[label];
        let idx = per_class_counter[label];
        per_class_counter[label] += 1;
        let image_rel = format!("images/{class}_{idx:03}.png");
        let mask_rel = format!("masks/{class}_{idx:03}.png");
        imageio::save_gray_png(&dir.join(&image_rel), ds.image(i), h, w)?;
        set.masks[i].save(&dir.join(&mask_rel))?;
        records.push(RecordFile {
            image: image_rel,
            class: class.clone(),
            mask: Some(mask_rel),
            split: splits.map(|s| s[i].clone()),
        });
    }
    let file = ManifestFile {
        channels: 1,
        image_size: None,
        normalization: Normalization::identity(1),
        merge: BTreeMap::new(),
        records,
    };
    let manifest_path = dir.join("manifest.json");
    let mut text = serde_json::to_string_pretty(&file)
        .map_err(|e| Error::format(&manifest_path, e.to_string()))?;
    text.push('\n');
    fsio::atomic_write(&manifest_path, text.as_bytes())?;
    Ok(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imageio::save_gray_png;
    use crate::synth::{generate, SyntheticSpec};

    fn write_manifest(dir: &Path, body: &str) -> PathBuf {
        let p = dir.join("manifest.json");
        std::fs::write(&p, body).unwrap();
        p
    }

    fn touch_png(dir: &Path, rel: &str) {
        let p = dir.join(rel);
        std::fs::create_dir_all(p.parent().unwrap()).unwrap();
        save_gray_png(&p, &[0.5, 0.2, 0.8, 0.1], 2, 2).unwrap();
    }

    fn basic_manifest(classes: &[&str]) -> String {
        let records: Vec<String> = classes
            .iter()
            .enumerate()
            .map(|(i, c)| format!(r#"{{"image": "img_{i}.png", "class": "{c}"}}"#))
            .collect();
        format!(
            r#"{{"channels": 1, "image_size": null,
                 "normalization": {{"mean": [0.0], "std": [1.0]}},
                 "records": [{}]}}"#,
            records.join(",")
        )
    }

    #[test]
    fn alphabetical_dense_indices() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..3 {
            touch_png(dir.path(), &format!("img_{i}.png"));
        }
        let p = write_manifest(dir.path(), &basic_manifest(&["c", "a", "b"]));
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.class_names, vec!["a", "b", "c"]);
        assert_eq!(m.labels(), vec![2, 0, 1]);
    }

    #[test]
    fn merge_compresses_25_raw_classes_to_22() {
        let dir = tempfile::tempdir().unwrap();
        // 25 raw classes; the 4 "lucorum" members merge into one complex
        let raw: Vec<String> = (0..21)
            .map(|i| format!("species_{i:02}"))
            .chain([
                "lucorum_a".to_string(),
                "lucorum_b".to_string(),
                "lucorum_c".to_string(),
                "lucorum_d".to_string(),
            ])
            .collect();
        let mut records = Vec::new();
        for (i, class) in raw.iter().enumerate() {
            for j in 0..2 {
                let rel = format!("img_{i}_{j}.png");
                touch_png(dir.path(), &rel);
                records.push(format!(r#"{{"image": "{rel}", "class": "{class}"}}"#));
            }
        }
        let body = format!(
            r#"{{"channels": 1, "image_size": null,
                 "normalization": {{"mean": [0.0], "std": [1.0]}},
                 "merge": {{"lucorum_a": "lucorum-complex", "lucorum_b": "lucorum-complex",
                            "lucorum_c": "lucorum-complex", "lucorum_d": "lucorum-complex"}},
                 "records": [{}]}}"#,
            records.join(",")
        );
        let p = write_manifest(dir.path(), &body);
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.class_names.len(), 22);
        // merged class holds the sum of its members' records
        let merged_idx = m.class_names.iter().position(|c| c == "lucorum-complex").unwrap();
        assert_eq!(m.class_counts()[merged_idx], 8);
        assert_eq!(m.len(), 50);
    }

    #[test]
    fn empty_merge_is_identity() {
        let dir = tempfile::tempdir().unwrap();
        for i in 0..2 {
            touch_png(dir.path(), &format!("img_{i}.png"));
        }
        let p = write_manifest(dir.path(), &basic_manifest(&["x", "y"]));
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.class_names, vec!["x", "y"]);
        assert_eq!(m.records[0].class_name, m.records[0].raw_class);
    }

    #[test]
    fn unknown_merge_class_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        touch_png(dir.path(), "img_0.png");
        touch_png(dir.path(), "img_1.png");
        let body = r#"{"channels": 1, "image_size": null,
             "normalization": {"mean": [0.0], "std": [1.0]},
             "merge": {"ghost": "somewhere"},
             "records": [{"image": "img_0.png", "class": "a"},
                         {"image": "img_1.png", "class": "b"}]}"#;
        let p = write_manifest(dir.path(), body);
        let err = load_manifest(&p).unwrap_err();
        assert!(matches!(err, Error::UnknownMergeClass { ref name } if name == "ghost"), "{err}");
    }

    #[test]
    fn missing_and_duplicate_records_name_the_index() {
        let dir = tempfile::tempdir().unwrap();
        touch_png(dir.path(), "img_0.png");
        let body = r#"{"channels": 1, "image_size": null,
             "normalization": {"mean": [0.0], "std": [1.0]},
             "records": [{"image": "img_0.png", "class": "a"},
                         {"image": "gone.png", "class": "b"}]}"#;
        let p = write_manifest(dir.path(), body);
        match load_manifest(&p).unwrap_err() {
            Error::MissingFile { index, .. } => assert_eq!(index, 1),
            other => panic!("wrong error {other:?}"),
        }

        let body = r#"{"channels": 1, "image_size": null,
             "normalization": {"mean": [0.0], "std": [1.0]},
             "records": [{"image": "img_0.png", "class": "a"},
                         {"image": "img_0.png", "class": "b"}]}"#;
        let p = write_manifest(dir.path(), body);
        match load_manifest(&p).unwrap_err() {
            Error::DuplicateRecord { index, .. } => assert_eq!(index, 1),
            other => panic!("wrong error {other:?}"),
        }
    }

    #[test]
    fn materialized_synth_set_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let set = generate(&SyntheticSpec::shapes3(2, 5)).unwrap();
        let manifest_path = materialize(&set, dir.path()).unwrap();
        let m = load_manifest(&manifest_path).unwrap();
        assert_eq!(m.len(), 6);
        assert_eq!(m.class_names, vec!["disc", "square", "triangle"]);
        let ds = m.load_dataset().unwrap();
        assert_eq!(ds.shape, set.dataset.shape);
        assert_eq!(ds.labels, set.dataset.labels);
        // 8-bit PNG quantization: within half a level
        for (a, b) in ds.images.iter().zip(&set.dataset.images) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6, "{a} vs {b}");
        }
        // masks decode back exactly
        let masks = m.load_masks().unwrap();
        for (loaded, orig) in masks.iter().zip(&set.masks) {
            assert_eq!(loaded.as_ref().unwrap(), orig);
        }
        // split on the manifest level keeps per-class ratios
        let (tr, va) = m.split_stratified(0.5, 3).unwrap();
        assert_eq!(tr.class_counts(), vec![1, 1, 1]);
        assert_eq!(va.class_counts(), vec![1, 1, 1]);
    }

    #[test]
    fn manifest_save_load_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let set = generate(&SyntheticSpec::shapes3(2, 5)).unwrap();
        let p1 = materialize(&set, dir.path()).unwrap();
        let m = load_manifest(&p1).unwrap();
        let p2 = dir.path().join("again.json");
        m.save(&p2).unwrap();
        let m2 = load_manifest(&p2).unwrap();
        assert_eq!(m.class_names, m2.class_names);
        assert_eq!(m.labels(), m2.labels());
        assert_eq!(m.records.len(), m2.records.len());
    }
}
