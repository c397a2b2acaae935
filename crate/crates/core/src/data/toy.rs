use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Split};
use crate::error::{Error, Result};
use crate::kernel::bilinear_upsample;
use crate::rng::RngStream;
use crate::tensor::Tensor;

/// Gaussian-blob toy classification data.
///
/// Each class has a smooth template: a coarse `g x g` grid (`g = min(4, H, W)`)
/// of values `0.5 + separation * (u - 0.5)`, `u ~ U[0, 1)`, bilinearly
/// resized to `H x W`. Samples add i.i.d. `N(0, spread^2)` pixel noise and
/// clamp to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyConfig {
    pub num_classes: usize,
    pub per_class: usize,
    pub test_per_class: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub spread: f64,
    pub separation: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self {
            num_classes: 4,
            per_class: 100,
            test_per_class: 50,
            channels: 1,
            height: 16,
            width: 16,
            spread: 0.3,
            separation: 0.6,
            seed: 0,
        }
    }
}

impl ToyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.per_class < 2 {
            return Err(Error::config("toy data needs per_class >= 2"));
        }
        if self.num_classes == 0 || self.channels == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::config(format!("degenerate toy shape: {self:?}")));
        }
        if !(self.spread >= 0.0) || !(self.separation >= 0.0) {
            return Err(Error::config("spread and separation must be non-negative"));
        }
        Ok(())
    }
}

/// Class templates, one `C x H x W` tensor (leading axis 1) per class.
pub fn toy_templates(cfg: &ToyConfig) -> Result<Vec<Tensor<f32>>> {
    cfg.validate()?;
    let root = RngStream::new(cfg.seed).substream_str("template");
    let g_h = cfg.height.min(4);
    let g_w = cfg.width.min(4);
    (0..cfg.num_classes)
        .map(|y| {
            let mut rng = root.substream(y as u64);
            let coarse = Tensor::<f64>::from_fn([1, cfg.channels, g_h, g_w], |_| {
                0.5 + cfg.separation * (rng.uniform() - 0.5)
            });
            let fine = bilinear_upsample(&coarse, cfg.height, cfg.width)?;
            Ok(fine.map(|v| v.clamp(0.0, 1.0)).cast())
        })
        .collect()
}

fn draw(
    cfg: &ToyConfig,
    templates: &[Tensor<f32>],
    tag: &str,
    per_class: usize,
    split: Split,
) -> Result<Dataset> {
    let root = RngStream::new(cfg.seed).substream_str(tag);
    let len = cfg.channels * cfg.height * cfg.width;
    let mut data = Vec::with_capacity(cfg.num_classes * per_class * len);
    let mut labels = Vec::with_capacity(cfg.num_classes * per_class);
    for (y, template) in templates.iter().enumerate() {
        let mut rng = root.substream(y as u64);
        for _ in 0..per_class {
            for &t in template.data() {
                let noise = if cfg.spread > 0.0 {
                    cfg.spread * rng.normal()
                } else {
                    0.0
                };
                data.push((t as f64 + noise).clamp(0.0, 1.0) as f32);
            }
            labels.push(y);
        }
    }
    let n = labels.len();
    let images = Tensor::new([n, cfg.channels, cfg.height, cfg.width], data)?;
    Dataset::new(images, labels, cfg.num_classes, split)
}

/// Deterministic `(train, test)` pair; the splits use disjoint substreams.
pub fn generate_toy(cfg: &ToyConfig) -> Result<(Dataset, Dataset)> {
    let templates = toy_templates(cfg)?;
    let train = draw(cfg, &templates, "train", cfg.per_class, Split::Train)?;
    let test = draw(
        cfg,
        &templates,
        "test",
        cfg.test_per_class.max(1),
        Split::Test,
    )?;
    Ok((train, test))
}
