//! Model backend contract, the default UNet, training loop and inference.

pub mod layers;
mod probmap;
pub mod unet;

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{ClassTaxonomy, GrayImage, OneHot, SegmentationMask};
use crate::error::{Error, IoContext, Result};
use crate::losses::LossConfig;

pub use probmap::{ProbabilityMap, NORMALIZATION_TOL};
pub use unet::{AdamConfig, ModelConfig, UNet};

/// One training example: an image and its (true or pseudo) target.
#[derive(Debug, Clone, Copy)]
pub struct TrainSample<'a> {
    pub image: &'a GrayImage,
    pub target: &'a OneHot,
    /// Target is pixel-level ground truth rather than a pseudo-label.
    pub has_pixel_gt: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub loss: f64,
    pub cross_entropy: f64,
}

/// What the recursion controller needs from a segmentation model.
pub trait ModelBackend: Send + Sync {
    /// Output channels, K + 1.
    fn num_channels(&self) -> usize;

    /// Per-pixel class distribution for `image`.
    fn forward(&self, image: &GrayImage) -> Result<ProbabilityMap>;

    /// One optimizer step on `batch`; returns the batch-mean loss.
    fn train_step(&mut self, batch: &[TrainSample<'_>], loss: &LossConfig) -> Result<StepStats>;

    fn save(&self, path: &Path) -> Result<()>;

    fn load(&mut self, path: &Path) -> Result<()>;

    fn parameter_count(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Epochs of supervised seeding on the pixel-labelled set.
    pub seed_epochs: usize,
    /// Epochs per recursion.
    pub recursion_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Shuffle seed; the controller derives one per stage.
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed_epochs: 120,
            recursion_epochs: 3,
            batch_size: 4,
            learning_rate: 1e-3,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seed_epochs == 0 {
            return Err(Error::Config("seed_epochs must be >= 1".into()));
        }
        if self.recursion_epochs == 0 {
            return Err(Error::Config("recursion_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
    pub cross_entropy: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochLoss>,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn mean_loss(&self) -> Option<f64> {
        (!self.epochs.is_empty())
            .then(|| self.epochs.iter().map(|e| e.loss).sum::<f64>() / self.epochs.len() as f64)
    }
}

/// Runs `epochs` passes over `samples` in seeded shuffled order.
pub fn train<M: ModelBackend + ?Sized>(
    model: &mut M,
    samples: &[TrainSample<'_>],
    cfg: &TrainConfig,
    epochs: usize,
    loss: &LossConfig,
) -> Result<TrainReport> {
    cfg.validate()?;
    loss.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut report = TrainReport::default();
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        let (mut sum, mut sum_ce, mut n) = (0.0, 0.0, 0usize);
        for (batch_idx, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<TrainSample<'_>> = chunk.iter().map(|&i| samples[i]).collect();
            let stats = model.train_step(&batch, loss)?;
            if !stats.loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            sum += stats.loss * batch.len() as f64;
            sum_ce += stats.cross_entropy * batch.len() as f64;
            n += batch.len();
        }
        report.epochs.push(EpochLoss {
            epoch,
            loss: sum / n as f64,
            cross_entropy: sum_ce / n as f64,
        });
        tracing::debug!(epoch, loss = sum / n as f64, "epoch done");
    }
    Ok(report)
}

/// Hard mask plus per-pixel max probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub mask: SegmentationMask,
    pub confidence: Vec<f32>,
}

/// Argmax segmentation of `image`; ties go to the lower class index.
pub fn predict_mask<M: ModelBackend + ?Sized>(model: &M, image: &GrayImage) -> Result<Prediction> {
    if image.height == 0 || image.width == 0 {
        return Err(Error::EmptyImage);
    }
    let probs = model.forward(image)?;
    if probs.height != image.height || probs.width != image.width {
        return Err(Error::ShapeMismatch(format!(
            "backend returned {}x{} for a {}x{} image",
            probs.height, probs.width, image.height, image.width
        )));
    }
    let (mask, confidence) = probs.argmax();
    Ok(Prediction { mask, confidence })
}

/// Sidecar written next to every checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub taxonomy: ClassTaxonomy,
    pub recursion_index: u32,
    pub config_hash: String,
    /// SHA-256 of the checkpoint file.
    pub checkpoint_sha256: String,
    pub parameter_count: usize,
}

pub fn meta_path(checkpoint: &Path) -> std::path::PathBuf {
    let mut name = checkpoint
        .file_name()
        .map(|n| n.to_os_string())
        .unwrap_or_default();
    name.push(".meta.json");
    checkpoint.with_file_name(name)
}

/// Saves `model` and its sidecar; returns the sidecar contents.
pub fn save_checkpoint<M: ModelBackend + ?Sized>(
    model: &M,
    path: &Path,
    taxonomy: &ClassTaxonomy,
    recursion_index: u32,
    config_hash: &str,
) -> Result<CheckpointMeta> {
    model.save(path)?;
    let meta = CheckpointMeta {
        taxonomy: taxonomy.clone(),
        recursion_index,
        config_hash: config_hash.to_string(),
        checkpoint_sha256: crate::util::sha256_file(path)?,
        parameter_count: model.parameter_count(),
    };
    let mp = meta_path(path);
    crate::util::write_atomic(&mp, &serde_json::to_vec_pretty(&meta)?)?;
    Ok(meta)
}

pub fn read_checkpoint_meta(checkpoint: &Path) -> Result<CheckpointMeta> {
    let mp = meta_path(checkpoint);
    let bytes = std::fs::read(&mp).at(&mp)?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::encode_one_hot;
    use rand::Rng;

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        assert!(TrainConfig { recursion_epochs: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { seed_epochs: 0, ..Default::default() }.validate().is_err());
        let d = TrainConfig::default();
        assert_eq!((d.seed_epochs, d.recursion_epochs), (120, 3));
    }

    /// Backend that returns a fixed probability map.
    struct Fixed(ProbabilityMap);

    impl ModelBackend for Fixed {
        fn num_channels(&self) -> usize {
            self.0.channels
        }
        fn forward(&self, _: &GrayImage) -> Result<ProbabilityMap> {
            Ok(self.0.clone())
        }
        fn train_step(&mut self, _: &[TrainSample<'_>], _: &LossConfig) -> Result<StepStats> {
            Ok(StepStats { loss: f64::NAN, cross_entropy: f64::NAN })
        }
        fn save(&self, _: &Path) -> Result<()> {
            Ok(())
        }
        fn load(&mut self, _: &Path) -> Result<()> {
            Ok(())
        }
        fn parameter_count(&self) -> usize {
            0
        }
    }

    #[test]
    fn predict_background_everywhere() {
        let mut data = Vec::new();
        for _ in 0..6 {
            data.extend([1.0, 0.0, 0.0]);
        }
        let m = Fixed(ProbabilityMap::new(2, 3, 3, data).unwrap());
        let p = predict_mask(&m, &GrayImage::filled(2, 3, 0.0)).unwrap();
        assert!(p.mask.data.iter().all(|&v| v == 0));
        assert!(p.confidence.iter().all(|&c| c == 1.0));
        assert!(predict_mask(&m, &GrayImage::filled(3, 3, 0.0)).is_err());
        assert!(predict_mask(&m, &GrayImage::filled(0, 3, 0.0)).is_err());
    }

    #[test]
    fn predict_matches_brute_force_argmax() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for _ in 0..50 {
            let (h, w, c) = (rng.gen_range(1..6), rng.gen_range(1..6), rng.gen_range(2..6));
            let mut data = Vec::new();
            for _ in 0..h * w {
                // Coarse values so ties actually occur.
                let raw: Vec<f64> = (0..c).map(|_| rng.gen_range(1..4) as f64).collect();
                let s: f64 = raw.iter().sum();
                data.extend(raw.iter().map(|v| v / s));
            }
            let pm = ProbabilityMap::new(h, w, c, data).unwrap();
            let pred = predict_mask(&Fixed(pm.clone()), &GrayImage::filled(h, w, 0.0)).unwrap();
            for j in 0..h * w {
                let px = pm.pixel(j);
                let max = px.iter().copied().fold(f64::MIN, f64::max);
                let first = px.iter().position(|&v| v == max).unwrap();
                assert_eq!(pred.mask.data[j] as usize, first);
                assert_eq!(pred.confidence[j], max as f32);
            }
        }
    }

    #[test]
    fn non_finite_loss_aborts_with_location() {
        let mut m = Fixed(ProbabilityMap::uniform(1, 1, 2));
        let img = GrayImage::filled(1, 1, 0.0);
        let t = encode_one_hot(&SegmentationMask::background(1, 1), 1).unwrap();
        let s = [TrainSample { image: &img, target: &t, has_pixel_gt: true }];
        let err = train(&mut m, &s, &TrainConfig::default(), 1, &LossConfig::default()).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, batch: 0 }));
        assert!(matches!(
            train(&mut m, &[], &TrainConfig::default(), 1, &LossConfig::default()),
            Err(Error::EmptyDataset)
        ));
    }
}
