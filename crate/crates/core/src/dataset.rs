//! In-memory image classification dataset.
//!
//! Images are stored as one contiguous f32 buffer in [n, c, h, w] order so
//! batches can be sliced out without touching the filesystem. Loading from a
//! manifest on disk and generating synthetic sets both produce this type.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Dataset {
    /// (channels, height, width) of every image.
    pub shape: (usize, usize, usize),
    /// n * c * h * w values, image-major.
    pub images: Vec<f32>,
    /// Dense class index per image, in [0, class_names.len()).
    pub labels: Vec<usize>,
    /// Display name per class index (alphabetical when built from a manifest).
    pub class_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        shape: (usize, usize, usize),
        images: Vec<f32>,
        labels: Vec<usize>,
        class_names: Vec<String>,
    ) -> Result<Self> {
        let (c, h, w) = shape;
        let pix = c * h * w;
        if pix == 0 || images.len() != labels.len() * pix {
            return Err(Error::invalid_argument(format!(
                "dataset buffer of {} floats does not hold {} images of {}x{}x{}",
                images.len(),
                labels.len(),
                c,
                h,
                w
            )));
        }
        for (i, &l) in labels.iter().enumerate() {
            if l >= class_names.len() {
                return Err(Error::invalid_argument(format!(
                    "image {i} has label {l} but only {} classes are named",
                    class_names.len()
                )));
            }
        }
        Ok(Dataset {
            shape,
            images,
            labels,
            class_names,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn classes(&self) -> usize {
        self.class_names.len()
    }

    fn pixels(&self) -> usize {
        let (c, h, w) = self.shape;
        c * h * w
    }

    /// Raw pixel slice of image `i`.
    pub fn image(&self, i: usize) -> &[f32] {
        let p = self.pixels();
        &self.images[i * p..][..p]
    }

    /// Image `i` as a [c, h, w] tensor.
    pub fn image_tensor(&self, i: usize) -> Tensor {
        let (c, h, w) = self.shape;
        Tensor::new(vec![c, h, w], self.image(i).to_vec()).expect("dataset invariant")
    }

    /// Gather the given rows into a [n, c, h, w] batch tensor.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let (c, h, w) = self.shape;
        let p = self.pixels();
        let mut data = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Tensor::new(vec![indices.len(), c, h, w], data).expect("dataset invariant")
    }

    /// Labels for the given rows.
    pub fn gather_labels(&self, indices: &[usize]) -> Vec<usize> {
        indices.iter().map(|&i| self.labels[i]).collect()
    }

    /// New dataset containing only the given rows (same class table).
    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let p = self.pixels();
        let mut images = Vec::with_capacity(indices.len() * p);
        for &i in indices {
            images.extend_from_slice(self.image(i));
        }
        Dataset {
            shape: self.shape,
            images,
            labels: self.gather_labels(indices),
            class_names: self.class_names.clone(),
        }
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.classes()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Dataset {
        Dataset::new(
            (1, 2, 2),
            (0..12).map(|v| v as f32).collect(),
            vec![0, 1, 0],
            vec!["a".into(), "b".into()],
        )
        .unwrap()
    }

    #[test]
    fn slicing_and_batching() {
        let ds = tiny();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.image(1), &[4.0, 5.0, 6.0, 7.0]);
        let b = ds.batch(&[2, 0]);
        assert_eq!(b.shape(), &[2, 1, 2, 2]);
        assert_eq!(&b.data()[..4], &[8.0, 9.0, 10.0, 11.0]);
        assert_eq!(ds.class_counts(), vec![2, 1]);
    }

    #[test]
    fn rejects_inconsistent_buffer() {
        assert!(Dataset::new((1, 2, 2), vec![0.0; 9], vec![0, 1], vec!["a".into(), "b".into()]).is_err());
        assert!(Dataset::new((1, 2, 2), vec![0.0; 8], vec![0, 5], vec!["a".into(), "b".into()]).is_err());
    }

    #[test]
    fn subset_keeps_class_table() {
        let ds = tiny();
        let s = ds.subset(&[1]);
        assert_eq!(s.len(), 1);
        assert_eq!(s.labels, vec![1]);
        assert_eq!(s.class_names.len(), 2);
    }
}
