//! A deterministic stand-in for a trained network, for exercising the
//! controller without gradient descent.
//!
//! The backend recognises images it was told about and "learns" each one
//! once it has taken a given number of optimizer steps. Pixels brighter
//! than [`BLOB_THRESHOLD`] in a learned image are predicted as the scripted
//! class; everything else is background.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::ModelFactory;
use crate::datamodel::GrayImage;
use crate::error::{Error, IoContext, Result};
use crate::losses::LossConfig;
use crate::segnet::{ModelBackend, ProbabilityMap, StepStats, TrainSample};
use crate::util::write_atomic;

pub const BLOB_THRESHOLD: f32 = 0.25;
/// Probability given to the predicted class.
pub const CONFIDENCE: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ScriptEntry {
    pub class: u8,
    /// Optimizer steps after which the image is segmented.
    pub learned_after: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Script {
    entries: HashMap<Vec<u32>, ScriptEntry>,
}

impl Script {
    pub fn insert(&mut self, image: &GrayImage, entry: ScriptEntry) {
        self.entries.insert(key(image), entry);
    }

    pub fn get(&self, image: &GrayImage) -> Option<ScriptEntry> {
        self.entries.get(&key(image)).copied()
    }
}

fn key(image: &GrayImage) -> Vec<u32> {
    let mut k = vec![image.height as u32, image.width as u32];
    k.extend(image.data.iter().map(|v| v.to_bits()));
    k
}

#[derive(Debug, Clone)]
pub struct ScriptedBackend {
    script: Arc<Script>,
    channels: usize,
    steps: u64,
    fail_on_step: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct Saved {
    channels: usize,
    steps: u64,
}

impl ScriptedBackend {
    pub fn steps(&self) -> u64 {
        self.steps
    }
}

impl ModelBackend for ScriptedBackend {
    fn num_channels(&self) -> usize {
        self.channels
    }

    fn forward(&self, image: &GrayImage) -> Result<ProbabilityMap> {
        let c = self.channels;
        let learned = self
            .script
            .get(image)
            .filter(|e| self.steps >= e.learned_after && (e.class as usize) < c);
        let mut data = Vec::with_capacity(image.len() * c);
        for &v in &image.data {
            let class = match learned {
                Some(e) if v > BLOB_THRESHOLD => e.class as usize,
                _ => 0,
            };
            let rest = (1.0 - CONFIDENCE) / (c - 1) as f64;
            data.extend((0..c).map(|k| if k == class { CONFIDENCE } else { rest }));
        }
        ProbabilityMap::new(image.height, image.width, c, data)
    }

    fn train_step(&mut self, batch: &[TrainSample<'_>], _loss: &LossConfig) -> Result<StepStats> {
        if batch.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if self.fail_on_step == Some(self.steps + 1) {
            return Err(Error::State(format!("scripted failure at step {}", self.steps + 1)));
        }
        self.steps += 1;
        let loss = 1.0 / self.steps as f64;
        Ok(StepStats { loss, cross_entropy: loss })
    }

    fn save(&self, path: &Path) -> Result<()> {
        write_atomic(path, &serde_json::to_vec(&Saved { channels: self.channels, steps: self.steps })?)
    }

    fn load(&mut self, path: &Path) -> Result<()> {
        let saved: Saved = serde_json::from_slice(&std::fs::read(path).at(path)?)?;
        if saved.channels != self.channels {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} channels, expected {}",
                saved.channels, self.channels
            )));
        }
        self.steps = saved.steps;
        Ok(())
    }

    fn parameter_count(&self) -> usize {
        1
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedFactory {
    pub script: Arc<Script>,
    pub channels: usize,
    /// Fail the optimizer step with this 1-based index.
    pub fail_on_step: Option<u64>,
}

impl ScriptedFactory {
    pub fn new(script: Script, channels: usize) -> Self {
        Self {
            script: Arc::new(script),
            channels,
            fail_on_step: None,
        }
    }
}

impl ModelFactory for ScriptedFactory {
    type Model = ScriptedBackend;

    fn create(&self, _seed: u64) -> Result<ScriptedBackend> {
        Ok(ScriptedBackend {
            script: Arc::clone(&self.script),
            channels: self.channels,
            steps: 0,
            fail_on_step: self.fail_on_step,
        })
    }
}
