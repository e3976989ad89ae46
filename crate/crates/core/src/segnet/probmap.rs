use crate::datamodel::{OneHot, SegmentationMask};
use crate::error::{Error, Result};

/// Channel sums must be within this of 1.
pub const NORMALIZATION_TOL: f64 = 1e-5;

/// Per-pixel class distribution, `H×W×C`, pixel-major
/// (`data[j * channels + k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMap {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl ProbabilityMap {
    /// Validated constructor: values in `[0, 1]`, channel sums 1 ± tolerance.
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        let m = Self::from_raw(height, width, channels, data)?;
        m.check_normalized()?;
        Ok(m)
    }

    /// Shape-checked constructor without the normalization check.
    pub fn from_raw(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 || data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} map needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            channels,
            data,
        })
    }

    pub fn uniform(height: usize, width: usize, channels: usize) -> Self {
        Self {
            height,
            width,
            channels,
            data: vec![1.0 / channels as f64; height * width * channels],
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn pixel(&self, j: usize) -> &[f64] {
        &self.data[j * self.channels..(j + 1) * self.channels]
    }

    pub fn check_normalized(&self) -> Result<()> {
        for (j, px) in self.data.chunks_exact(self.channels).enumerate() {
            let sum: f64 = px.iter().sum();
            let in_range = px.iter().all(|v| (0.0..=1.0).contains(v));
            if !in_range || (sum - 1.0).abs() > NORMALIZATION_TOL {
                return Err(Error::NotNormalized { pixel: j, sum });
            }
        }
        Ok(())
    }

    pub fn same_shape(&self, target: &OneHot) -> bool {
        self.height == target.height
            && self.width == target.width
            && self.channels == target.channels
    }

    /// Hard prediction: per-pixel argmax (ties to the lower class index) and
    /// the winning probability.
    pub fn argmax(&self) -> (SegmentationMask, Vec<f32>) {
        let mut mask = Vec::with_capacity(self.pixels());
        let mut conf = Vec::with_capacity(self.pixels());
        for px in self.data.chunks_exact(self.channels) {
            let mut best = 0;
            for k in 1..px.len() {
                if px[k] > px[best] {
                    best = k;
                }
            }
            mask.push(best as u8);
            conf.push(px[best] as f32);
        }
        (
            SegmentationMask {
                height: self.height,
                width: self.width,
                data: mask,
            },
            conf,
        )
    }
}
