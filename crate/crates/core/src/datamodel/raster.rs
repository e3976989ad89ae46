use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-channel image with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} image needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Copy with every intensity multiplied by `factor`.
    pub fn scaled(&self, factor: f32) -> Self {
        Self {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|v| v * factor).collect(),
        }
    }
}

/// Per-pixel class index map over `{0..=K}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentationMask {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl SegmentationMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} mask needs {} values, got {}",
                height,
                width,
                height * width,
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub fn background(height: usize, width: usize) -> Self {
        Self {
            height,
            width,
            data: vec![0; height * width],
        }
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: u8) {
        self.data[row * self.width + col] = value;
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn same_shape(&self, height: usize, width: usize) -> bool {
        self.height == height && self.width == width
    }

    /// Checks every value lies in `0..=k`.
    pub fn validate(&self, k: usize) -> Result<()> {
        match self.data.iter().position(|&v| v as usize > k) {
            None => Ok(()),
            Some(i) => Err(Error::MaskValueOutOfRange {
                row: i / self.width,
                col: i % self.width,
                value: self.data[i],
                k,
            }),
        }
    }

    /// Number of non-background pixels.
    pub fn foreground_area(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    /// Sorted distinct foreground classes present.
    pub fn foreground_classes(&self) -> Vec<u8> {
        let mut seen = [false; 256];
        for &v in &self.data {
            seen[v as usize] = true;
        }
        (1..=255u8).filter(|&c| seen[c as usize]).collect()
    }
}

/// Binary `H×W×C` target, pixel-major (`data[j * channels + k]`).
#[derive(Debug, Clone, PartialEq)]
pub struct OneHot {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f64>,
}

impl OneHot {
    pub fn pixels(&self) -> usize {
        self.height * self.width
    }

    /// Index of the hot channel at each pixel.
    pub fn decode(&self) -> SegmentationMask {
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().position(|&v| v == 1.0).unwrap_or(0) as u8)
            .collect();
        SegmentationMask {
            height: self.height,
            width: self.width,
            data,
        }
    }
}

/// One-hot encodes a mask with `k` foreground classes into `k + 1` channels.
pub fn encode_one_hot(mask: &SegmentationMask, k: usize) -> Result<OneHot> {
    mask.validate(k)?;
    let channels = k + 1;
    let mut data = vec![0.0; mask.len() * channels];
    for (j, &v) in mask.data.iter().enumerate() {
        data[j * channels + v as usize] = 1.0;
    }
    Ok(OneHot {
        height: mask.height,
        width: mask.width,
        channels,
        data,
    })
}

/// Inverse of [`encode_one_hot`].
pub fn decode_one_hot(one_hot: &OneHot) -> SegmentationMask {
    one_hot.decode()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn all_zero_mask_encodes_to_background_channel() {
        let m = SegmentationMask::background(2, 2);
        let oh = encode_one_hot(&m, 1).unwrap();
        for px in oh.data.chunks(2) {
            assert_eq!(px, &[1.0, 0.0]);
        }
    }

    #[test]
    fn channel_sums_for_small_mask() {
        // [[0,1],[2,0]]: two background pixels, one of class 1, one of class 2.
        let m = SegmentationMask::new(2, 2, vec![0, 1, 2, 0]).unwrap();
        let oh = encode_one_hot(&m, 2).unwrap();
        let mut sums = [0.0; 3];
        for px in oh.data.chunks(3) {
            for (k, v) in px.iter().enumerate() {
                sums[k] += v;
            }
        }
        assert_eq!(sums, [2.0, 1.0, 1.0]);
        assert_eq!(&oh.data[3..6], &[0.0, 1.0, 0.0]);
        assert_eq!(&oh.data[6..9], &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn out_of_range_value_names_pixel() {
        let m = SegmentationMask::new(2, 3, vec![0, 0, 0, 0, 7, 0]).unwrap();
        match encode_one_hot(&m, 5) {
            Err(Error::MaskValueOutOfRange { row, col, value, k }) => {
                assert_eq!((row, col, value, k), (1, 1, 7, 5));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn foreground_helpers() {
        let m = SegmentationMask::new(2, 2, vec![0, 3, 3, 1]).unwrap();
        assert_eq!(m.foreground_area(), 3);
        assert_eq!(m.foreground_classes(), vec![1, 3]);
    }

    proptest! {
        #[test]
        fn one_hot_round_trip_and_partition(
            (h, w, k, data) in (1usize..6, 1usize..6, 1usize..6).prop_flat_map(|(h, w, k)| {
                (Just(h), Just(w), Just(k), proptest::collection::vec(0..=k as u8, h * w))
            })
        ) {
            let m = SegmentationMask::new(h, w, data).unwrap();
            let oh = encode_one_hot(&m, k).unwrap();
            for px in oh.data.chunks(k + 1) {
                prop_assert_eq!(px.iter().sum::<f64>(), 1.0);
            }
            prop_assert_eq!(decode_one_hot(&oh), m);
        }
    }
}
