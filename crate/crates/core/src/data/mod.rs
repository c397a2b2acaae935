//! Datasets, the synthetic toy generator, non-IID partitioning and batch sampling.

mod partition;
pub mod raw;
mod toy;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use partition::{
    dirichlet_partition, largest_remainder_counts, partition_with_proportions, sample_class_batch,
    sample_class_indices, ClientShard, PartitionSpec, Skew,
};
pub use raw::FormatError;
pub use toy::{generate_toy, toy_templates, ToyConfig};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Sidecar information a raw file pair does not carry.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetMeta {
    pub num_classes: usize,
    pub split: Split,
}

/// Labeled images with pixels in `[0, 1]`.
///
/// A training split holds at least one example of every class.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    num_classes: usize,
    split: Split,
}

impl Dataset {
    pub fn new(
        images: Tensor<f32>,
        labels: Vec<usize>,
        num_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if images.rank() != 4 {
            return Err(FormatError::NotImages(images.shape().to_vec()).into());
        }
        let n = images.shape()[0];
        if n == 0 {
            return Err(FormatError::EmptyDataset.into());
        }
        if labels.len() != n {
            return Err(FormatError::CountMismatch {
                images: n,
                labels: labels.len(),
            }
            .into());
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(FormatError::LabelOutOfRange {
                index,
                label,
                num_classes,
            }
            .into());
        }
        if let Some((offset, &value)) = images
            .data()
            .iter()
            .enumerate()
            .find(|(_, v)| !(0.0..=1.0).contains(*v))
        {
            return Err(FormatError::PixelOutOfRange { offset, value }.into());
        }
        if split == Split::Train {
            let mut seen = vec![false; num_classes];
            for &l in &labels {
                seen[l] = true;
            }
            if let Some(missing) = seen.iter().position(|s| !s) {
                return Err(Error::input(format!(
                    "training split has no example of class {missing}"
                )));
            }
        }
        Ok(Self {
            images,
            labels,
            num_classes,
            split,
        })
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `(C, H, W)` of one image.
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    /// Indices of each class, ascending.
    pub fn class_indices(&self) -> Vec<Vec<usize>> {
        let mut by_class = vec![Vec::new(); self.num_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            by_class[l].push(i);
        }
        by_class
    }

    pub fn gather(&self, indices: &[usize]) -> Tensor<f32> {
        self.images.select_rows(indices)
    }
}

pub fn load_raw(
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
    meta: DatasetMeta,
) -> Result<Dataset> {
    let image_bytes = fs::read(images_path)?;
    let (images, used) = raw::decode_tensor(&image_bytes)?;
    if used != image_bytes.len() {
        return Err(FormatError::TrailingBytes(image_bytes.len() - used).into());
    }
    let labels = raw::decode_labels(&fs::read(labels_path)?)?;
    Dataset::new(images, labels, meta.num_classes, meta.split)
}

/// Writes the f32 encoding; [`load_raw`] reads it back bit-identically.
pub fn save_raw(
    dataset: &Dataset,
    images_path: impl AsRef<Path>,
    labels_path: impl AsRef<Path>,
) -> Result<()> {
    let mut buf = Vec::with_capacity(raw::encoded_tensor_len(dataset.images.shape()));
    raw::encode_tensor(&dataset.images, &mut buf);
    fs::write(images_path, buf)?;
    fs::write(labels_path, raw::encode_labels(&dataset.labels))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_dataset(seed: u64) -> Dataset {
        let mut rng = RngStream::new(seed);
        let images = Tensor::from_fn([12, 1, 4, 4], |_| rng.uniform() as f32);
        let labels = (0..12).map(|i| i % 3).collect();
        Dataset::new(images, labels, 3, Split::Train).unwrap()
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let d = random_dataset(1);
        let (ip, lp) = (dir.path().join("x.cdt"), dir.path().join("y.cdl"));
        save_raw(&d, &ip, &lp).unwrap();
        let meta = DatasetMeta {
            num_classes: 3,
            split: Split::Train,
        };
        let back = load_raw(&ip, &lp, meta).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn empty_dataset_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let (ip, lp) = (dir.path().join("x.cdt"), dir.path().join("y.cdl"));
        let mut buf = Vec::new();
        raw::encode_tensor(&Tensor::<f32>::zeros([0, 1, 4, 4]), &mut buf);
        fs::write(&ip, buf).unwrap();
        fs::write(&lp, raw::encode_labels(&[])).unwrap();
        let meta = DatasetMeta {
            num_classes: 3,
            split: Split::Test,
        };
        assert!(matches!(
            load_raw(&ip, &lp, meta),
            Err(Error::Format(FormatError::EmptyDataset))
        ));
    }

    #[test]
    fn label_out_of_range_rejected() {
        let images = Tensor::<f32>::zeros([2, 1, 2, 2]);
        let err = Dataset::new(images, vec![0, 5], 3, Split::Test).unwrap_err();
        assert!(matches!(
            err,
            Error::Format(FormatError::LabelOutOfRange { index: 1, label: 5, .. })
        ));
    }

    #[test]
    fn train_split_needs_every_class() {
        let images = Tensor::<f32>::zeros([2, 1, 2, 2]);
        assert!(Dataset::new(images.clone(), vec![0, 0], 2, Split::Train).is_err());
        assert!(Dataset::new(images, vec![0, 0], 2, Split::Test).is_ok());
    }

    #[test]
    fn mnist_conversion_if_present() {
        // Produced by scripts/convert_mnist.py; skipped when absent.
        let Ok(dir) = std::env::var("COLLABDM_MNIST_DIR") else {
            return;
        };
        let dir = Path::new(&dir);
        let meta = DatasetMeta {
            num_classes: 10,
            split: Split::Train,
        };
        let d = load_raw(
            dir.join("train-images.cdt"),
            dir.join("train-labels.cdl"),
            meta,
        )
        .unwrap();
        assert_eq!(d.len(), 60_000);
        assert_eq!(d.image_shape(), [1, 28, 28]);
        assert_eq!(d.num_classes(), 10);
    }
}
