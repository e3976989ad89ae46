//! The seed → select → recurse controller and its persisted state.

mod controller;
pub mod scripted;

pub use controller::{append_history, Controller, HISTORY_FILE, LOCK_FILE, STATE_FILE, ExperimentData, ModelFactory, StepOutcome};

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::segnet::EpochLoss;
use crate::weaklabel::RefinePolicy;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StopRule {
    /// Fewer new acceptances than this count as a stall; unset means 1 %
    /// of the image-labelled set, at least 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub min_new_samples: Option<usize>,
    /// Relative change of total pseudo-label foreground below which the
    /// area has stalled.
    pub area_delta_eps: f64,
    pub max_recursions: u32,
}

impl Default for StopRule {
    fn default() -> Self {
        Self {
            min_new_samples: None,
            area_delta_eps: 0.005,
            max_recursions: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Stalled,
    MaxRecursions,
}

impl StopRule {
    pub fn validate(&self) -> Result<()> {
        if self.min_new_samples == Some(0) {
            return Err(Error::Config("stop.min_new_samples must be >= 1".into()));
        }
        if !(self.area_delta_eps > 0.0) {
            return Err(Error::Config("stop.area_delta_eps must be > 0".into()));
        }
        if self.max_recursions == 0 {
            return Err(Error::Config("stop.max_recursions must be >= 1".into()));
        }
        Ok(())
    }

    pub fn min_new(&self, d_img_len: usize) -> usize {
        self.min_new_samples.unwrap_or((d_img_len / 100).max(1))
    }

    /// Verdict after the step that produced recursion `r`.
    pub fn verdict(&self, r: u32, newly_accepted: usize, prev_area: u64, area: u64, d_img_len: usize) -> Option<StopReason> {
        let delta = (area as f64 - prev_area as f64).abs() / (prev_area.max(1) as f64);
        if newly_accepted < self.min_new(d_img_len) && delta < self.area_delta_eps {
            Some(StopReason::Stalled)
        } else if r >= self.max_recursions {
            Some(StopReason::MaxRecursions)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SelectionMode {
    Human,
    Auto,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    /// Selection after seeding.
    pub stage2: SelectionMode,
    /// Selection in every later recursion.
    pub recursion: SelectionMode,
    /// Rejections after which a sample is never proposed again.
    pub rejection_cap: u32,
    /// How long a blocking run waits for a human review round.
    pub review_timeout_secs: u64,
    pub review_poll_ms: u64,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            stage2: SelectionMode::Human,
            recursion: SelectionMode::Auto,
            rejection_cap: 3,
            review_timeout_secs: 24 * 3600,
            review_poll_ms: 500,
        }
    }
}

impl SelectionConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rejection_cap == 0 {
            return Err(Error::Config("selection.rejection_cap must be >= 1".into()));
        }
        Ok(())
    }

    pub fn mode_for(&self, recursion: u32) -> SelectionMode {
        if recursion == 0 {
            self.stage2
        } else {
            self.recursion
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    /// Nothing trained yet.
    Fresh,
    /// Seed checkpoint `r0` exists.
    Seeded,
    /// Checkpoint `r{N}` trained and accepted pseudo-labels refreshed.
    Trained,
    /// Candidates for recursion N written.
    CandidatesReady,
    /// Selection for recursion N applied.
    Selected,
    Stopped,
}

/// Where a pseudo-label came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AcceptedLabel {
    /// Path relative to the experiment directory.
    pub pseudolabel: String,
    /// Recursion whose model produced the current label.
    pub label_recursion: u32,
    /// Recursion in which the sample was accepted.
    pub accepted_in: u32,
    /// `auto-gate:r{N}` or `review:{session}`.
    pub decision: String,
    pub checkpoint_sha256: String,
    pub mask_sha256: String,
    pub policy: RefinePolicy,
    pub refined: bool,
    pub foreground_area: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub recursion: u32,
    pub newly_accepted: usize,
    pub total_accepted: usize,
    pub total_foreground_area: u64,
    pub mean_train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop: Option<StopReason>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecursionState {
    pub format: u32,
    pub config_hash: String,
    pub stage: Stage,
    pub recursion_index: u32,
    pub accepted: BTreeMap<String, AcceptedLabel>,
    pub pending: BTreeSet<String>,
    pub rejected_forever: BTreeSet<String>,
    pub rejection_counts: BTreeMap<String, u32>,
    pub history: Vec<HistoryRecord>,
    pub stage1_losses: Vec<EpochLoss>,
    pub checkpoints: BTreeMap<u32, CheckpointRef>,
    /// Mean loss of the last recursion's training, until it is recorded.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub last_train_loss: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stop_reason: Option<StopReason>,
    /// SHA-256 of every pixel mask when the experiment started.
    pub d_pix_checksums: BTreeMap<String, String>,
}

pub const STATE_FORMAT: u32 = 1;

impl RecursionState {
    pub fn new(config_hash: &str, d_img_ids: impl IntoIterator<Item = String>, d_pix_checksums: BTreeMap<String, String>) -> Self {
        Self {
            format: STATE_FORMAT,
            config_hash: config_hash.to_string(),
            stage: Stage::Fresh,
            recursion_index: 0,
            accepted: BTreeMap::new(),
            pending: d_img_ids.into_iter().collect(),
            rejected_forever: BTreeSet::new(),
            rejection_counts: BTreeMap::new(),
            history: Vec::new(),
            stage1_losses: Vec::new(),
            checkpoints: BTreeMap::new(),
            last_train_loss: None,
            stop_reason: None,
            d_pix_checksums,
        }
    }

    /// Accepted, pending and rejected-forever partition `d_img_ids`.
    pub fn check_partition<'a>(&self, d_img_ids: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let all: BTreeSet<&str> = d_img_ids.into_iter().collect();
        let mut seen = BTreeSet::new();
        let groups = [
            self.accepted.keys().map(String::as_str).collect::<Vec<_>>(),
            self.pending.iter().map(String::as_str).collect(),
            self.rejected_forever.iter().map(String::as_str).collect(),
        ];
        for id in groups.iter().flatten() {
            if !seen.insert(*id) {
                return Err(Error::State(format!("sample `{id}` is in more than one set")));
            }
            if !all.contains(id) {
                return Err(Error::State(format!("sample `{id}` is not an image-labelled sample")));
            }
        }
        if seen.len() != all.len() {
            return Err(Error::State("some image-labelled samples are in no set".into()));
        }
        Ok(())
    }

    pub fn total_foreground_area(&self) -> u64 {
        self.accepted.values().map(|a| a.foreground_area as u64).sum()
    }
}
