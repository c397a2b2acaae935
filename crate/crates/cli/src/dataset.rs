use std::fs;
use std::path::PathBuf;

use clap::Args;
use collabdm::data::{generate_toy, load_raw, raw, Dataset, DatasetMeta, Split, ToyConfig};
use collabdm::{Error, Result};
use serde::Serialize;

/// Where the data comes from: `--toy` or a directory of raw files
/// (`train-images.cdt`, `train-labels.cdl`, `test-images.cdt`,
/// `test-labels.cdl`).
#[derive(Debug, Clone, Args)]
pub struct DataArgs {
    /// Directory holding raw tensor and label files.
    #[arg(long, conflicts_with = "toy", required_unless_present = "toy")]
    pub dataset: Option<PathBuf>,
    /// Number of classes for --dataset; inferred from the labels if omitted.
    #[arg(long, requires = "dataset")]
    pub classes: Option<usize>,
    /// Use the Gaussian-blob toy generator.
    #[arg(long)]
    pub toy: bool,
    #[arg(long, default_value_t = 4)]
    pub toy_classes: usize,
    #[arg(long, default_value_t = 100)]
    pub toy_per_class: usize,
    #[arg(long, default_value_t = 50)]
    pub toy_test_per_class: usize,
    #[arg(long, default_value_t = 1)]
    pub toy_channels: usize,
    /// Square image side.
    #[arg(long, default_value_t = 16)]
    pub toy_size: usize,
    #[arg(long, default_value_t = 0.3)]
    pub toy_spread: f64,
    #[arg(long, default_value_t = 0.6)]
    pub toy_separation: f64,
    #[arg(long, default_value_t = 0)]
    pub toy_seed: u64,
}

#[derive(Debug, Clone, Serialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DataSource {
    Toy(ToyConfig),
    Raw { dir: PathBuf, classes: usize },
}

impl DataArgs {
    pub fn load(&self) -> Result<(DataSource, Dataset, Dataset)> {
        match &self.dataset {
            None => {
                let cfg = ToyConfig {
                    num_classes: self.toy_classes,
                    per_class: self.toy_per_class,
                    test_per_class: self.toy_test_per_class,
                    channels: self.toy_channels,
                    height: self.toy_size,
                    width: self.toy_size,
                    spread: self.toy_spread,
                    separation: self.toy_separation,
                    seed: self.toy_seed,
                };
                let (train, test) = generate_toy(&cfg)?;
                Ok((DataSource::Toy(cfg), train, test))
            }
            Some(dir) => {
                let classes = match self.classes {
                    Some(c) => c,
                    None => infer_classes(dir)?,
                };
                let load = |split, name: &str| {
                    load_raw(
                        dir.join(format!("{name}-images.cdt")),
                        dir.join(format!("{name}-labels.cdl")),
                        DatasetMeta { num_classes: classes, split },
                    )
                    .map_err(|e| Error::Input(format!("{name} split in {}: {e}", dir.display())))
                };
                let train = load(Split::Train, "train")?;
                let test = load(Split::Test, "test")?;
                Ok((DataSource::Raw { dir: dir.clone(), classes }, train, test))
            }
        }
    }
}

fn infer_classes(dir: &std::path::Path) -> Result<usize> {
    let path = dir.join("train-labels.cdl");
    let bytes = fs::read(&path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let labels = raw::decode_labels(&bytes)?;
    labels
        .iter()
        .max()
        .map(|m| m + 1)
        .ok_or_else(|| Error::Input(format!("{} holds no labels", path.display())))
}
