use std::collections::BTreeMap;
use std::fs::File;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use fs2::FileExt;
use rayon::prelude::*;
use serde_json::json;

use super::{AcceptedLabel, CheckpointRef, HistoryRecord, RecursionState, SelectionMode, Stage, StopReason, STATE_FORMAT};
use crate::config::ExperimentConfig;
use crate::datamodel::{encode_mask_png, encode_one_hot, load_mask, ClassTaxonomy, GrayImage, LoadedSample, OneHot, SampleRecord};
use crate::error::{Error, IoContext, Result, ReviewError};
use crate::review::{candidates_dir, pseudolabel_dir, round_dir, round_status};
use crate::segnet::{predict_mask, save_checkpoint, train, ModelBackend, TrainConfig, TrainSample};
use crate::util::{append_line, derive_seed, file_stem, sha256_file, sha256_hex, write_atomic};
use crate::weaklabel::{make_candidates, refine, replace_dir, with_suffix, CandidateStore, RefineMode};

pub const STATE_FILE: &str = "state.json";
pub const LOCK_FILE: &str = "lock";
pub const HISTORY_FILE: &str = "history.log";

/// Appends one event to the experiment's `history.log`.
pub fn append_history(exp_dir: &Path, event: &str, recursion: u32, details: serde_json::Value) -> Result<()> {
    let line = json!({
        "ts": chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true),
        "event": event,
        "recursion": recursion,
        "details": details,
    });
    append_line(&exp_dir.join(HISTORY_FILE), &line.to_string())
}

/// Builds fresh models; the controller loads checkpoints into them.
pub trait ModelFactory: Sync {
    type Model: ModelBackend;
    fn create(&self, seed: u64) -> Result<Self::Model>;
}

/// Samples of an experiment with pixels loaded.
#[derive(Debug, Clone)]
pub struct ExperimentData {
    pub taxonomy: ClassTaxonomy,
    pub d_pix: Vec<LoadedSample>,
    pub d_img: Vec<LoadedSample>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Advanced(Stage),
    /// Human selection for `recursion` has not been closed yet.
    AwaitingReview { recursion: u32, open_session: Option<String> },
    Finished(Option<StopReason>),
}

/// Drives one experiment directory. Holds the directory lock while alive.
pub struct Controller<'a, F: ModelFactory> {
    exp_dir: PathBuf,
    cfg: &'a ExperimentConfig,
    data: &'a ExperimentData,
    factory: &'a F,
    state: RecursionState,
    _lock: File,
}

impl<'a, F: ModelFactory> Controller<'a, F> {
    /// Locks `exp_dir` and loads its state, or initializes a new one.
    pub fn open(exp_dir: &Path, cfg: &'a ExperimentConfig, data: &'a ExperimentData, factory: &'a F) -> Result<Self> {
        cfg.validate()?;
        std::fs::create_dir_all(exp_dir).at(exp_dir)?;
        let lock_path = exp_dir.join(LOCK_FILE);
        let lock = std::fs::OpenOptions::new()
            .create(true)
            .truncate(false)
            .write(true)
            .open(&lock_path)
            .at(&lock_path)?;
        lock.try_lock_exclusive()
            .map_err(|_| Error::Locked(exp_dir.to_path_buf()))?;

        let hash = cfg.hash();
        let state_path = exp_dir.join(STATE_FILE);
        let state = if state_path.exists() {
            let bytes = std::fs::read(&state_path).at(&state_path)?;
            let st: RecursionState = serde_json::from_slice(&bytes)?;
            if st.format != STATE_FORMAT {
                return Err(Error::State(format!("unsupported state format {}", st.format)));
            }
            if st.config_hash != hash {
                return Err(Error::State(format!(
                    "experiment was started with config {}, current config is {hash}",
                    st.config_hash
                )));
            }
            st
        } else {
            let mut sums = BTreeMap::new();
            for s in &data.d_pix {
                if let Some(p) = &s.record.pixel_mask_ref {
                    sums.insert(s.record.id.clone(), sha256_file(p)?);
                }
            }
            RecursionState::new(&hash, data.d_img.iter().map(|s| s.record.id.clone()), sums)
        };
        state.check_partition(data.d_img.iter().map(|s| s.record.id.as_str()))?;
        let c = Self {
            exp_dir: exp_dir.to_path_buf(),
            cfg,
            data,
            factory,
            state,
            _lock: lock,
        };
        if !state_path.exists() {
            c.persist()?;
            c.log("init", json!({ "d_pix": data.d_pix.len(), "d_img": data.d_img.len(), "config_hash": hash }))?;
        }
        Ok(c)
    }

    pub fn state(&self) -> &RecursionState {
        &self.state
    }

    pub fn exp_dir(&self) -> &Path {
        &self.exp_dir
    }

    /// Path of the checkpoint for recursion `r`, if trained.
    pub fn checkpoint_path(&self, r: u32) -> Option<PathBuf> {
        self.state.checkpoints.get(&r).map(|c| self.exp_dir.join(&c.path))
    }

    fn persist(&self) -> Result<()> {
        write_atomic(&self.exp_dir.join(STATE_FILE), &serde_json::to_vec_pretty(&self.state)?)
    }

    fn log(&self, event: &str, details: serde_json::Value) -> Result<()> {
        append_history(&self.exp_dir, event, self.state.recursion_index, details)
    }

    fn k(&self) -> usize {
        self.data.taxonomy.k()
    }

    /// Performs the next stage transition. With `wait`, a pending human
    /// review is polled until it closes or times out.
    pub fn step(&mut self, wait: bool) -> Result<StepOutcome> {
        let outcome = match self.state.stage {
            Stage::Fresh => {
                self.seed()?;
                StepOutcome::Advanced(self.state.stage)
            }
            Stage::Seeded | Stage::Trained => {
                self.generate_candidates()?;
                StepOutcome::Advanced(self.state.stage)
            }
            Stage::CandidatesReady => match self.select(wait)? {
                Some(waiting) => waiting,
                None => StepOutcome::Advanced(self.state.stage),
            },
            Stage::Selected => {
                self.train_next()?;
                StepOutcome::Advanced(self.state.stage)
            }
            Stage::Stopped => StepOutcome::Finished(self.state.stop_reason),
        };
        Ok(outcome)
    }

    /// Steps until stopped or blocked on review.
    pub fn run(&mut self, wait: bool) -> Result<StepOutcome> {
        loop {
            match self.step(wait)? {
                StepOutcome::Advanced(_) => continue,
                other => return Ok(other),
            }
        }
    }

    /// Steps until the stage is `target` (or the run ends).
    pub fn advance_to(&mut self, target: Stage, wait: bool) -> Result<StepOutcome> {
        while self.state.stage != target {
            match self.step(wait)? {
                StepOutcome::Advanced(_) => continue,
                other => return Ok(other),
            }
        }
        Ok(StepOutcome::Advanced(target))
    }

    /// Seed training on the pixel-labelled set; yields checkpoint `r0`.
    pub fn run_stage1(&mut self) -> Result<CheckpointRef> {
        if self.state.stage == Stage::Fresh {
            self.seed()?;
        }
        self.state
            .checkpoints
            .get(&0)
            .cloned()
            .ok_or_else(|| Error::State("no seed checkpoint".into()))
    }

    /// Candidate generation and selection against the seed model.
    pub fn run_stage2(&mut self, wait: bool) -> Result<StepOutcome> {
        match self.state.stage {
            Stage::Fresh => return Err(Error::State("stage 1 has not run".into())),
            Stage::Seeded | Stage::CandidatesReady if self.state.recursion_index == 0 => {}
            _ => return Ok(StepOutcome::Advanced(self.state.stage)),
        }
        self.advance_to(Stage::Selected, wait)
    }

    /// Train, refresh, expand and judge one recursion.
    pub fn run_recursion_step(&mut self, wait: bool) -> Result<StepOutcome> {
        match self.state.stage {
            Stage::Stopped => return Ok(StepOutcome::Finished(self.state.stop_reason)),
            Stage::Selected => {
                self.step(wait)?;
            }
            Stage::Trained | Stage::CandidatesReady if self.state.recursion_index > 0 => {}
            _ => return Err(Error::State(format!("no recursion step from stage {:?}", self.state.stage))),
        }
        loop {
            match self.step(wait)? {
                StepOutcome::Advanced(Stage::Selected) => return Ok(StepOutcome::Advanced(Stage::Selected)),
                StepOutcome::Advanced(Stage::Stopped) => return Ok(StepOutcome::Finished(self.state.stop_reason)),
                StepOutcome::Advanced(_) => continue,
                other => return Ok(other),
            }
        }
    }

    fn checkpoint_rel(r: u32) -> String {
        format!("r{r}/checkpoint")
    }

    fn save_model(&self, model: &F::Model, r: u32) -> Result<CheckpointRef> {
        let rel = Self::checkpoint_rel(r);
        let path = self.exp_dir.join(&rel);
        std::fs::create_dir_all(round_dir(&self.exp_dir, r)).at(&path)?;
        let meta = save_checkpoint(model, &path, &self.data.taxonomy, r, &self.state.config_hash)?;
        Ok(CheckpointRef {
            path: rel,
            sha256: meta.checkpoint_sha256,
        })
    }

    fn load_model(&self, r: u32) -> Result<F::Model> {
        let ck = self
            .state
            .checkpoints
            .get(&r)
            .ok_or_else(|| Error::State(format!("no checkpoint for recursion {r}")))?;
        let path = self.exp_dir.join(&ck.path);
        if sha256_file(&path)? != ck.sha256 {
            return Err(Error::Checkpoint(format!("{} does not match its recorded hash", path.display())));
        }
        let mut model = self.factory.create(0)?;
        model.load(&path)?;
        Ok(model)
    }

    fn train_config(&self, r: u32) -> TrainConfig {
        TrainConfig {
            rng_seed: derive_seed(self.cfg.rng_seed, "train", u64::from(r)),
            ..self.cfg.train
        }
    }

    fn seed(&mut self) -> Result<()> {
        if self.data.d_pix.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let k = self.k();
        let targets: Vec<OneHot> = self
            .data
            .d_pix
            .iter()
            .map(|s| {
                let mask = s.mask.as_ref().ok_or_else(|| Error::InvalidRecord {
                    id: s.record.id.clone(),
                    reason: "pixel-labelled sample without a mask".into(),
                })?;
                encode_one_hot(mask, k)
            })
            .collect::<Result<_>>()?;
        let samples: Vec<TrainSample<'_>> = self
            .data
            .d_pix
            .iter()
            .zip(&targets)
            .map(|(s, t)| TrainSample { image: &s.image, target: t, has_pixel_gt: true })
            .collect();
        let mut model = self.factory.create(derive_seed(self.cfg.rng_seed, "init", 0))?;
        tracing::info!(samples = samples.len(), epochs = self.cfg.train.seed_epochs, "stage 1: seed training");
        let report = train(&mut model, &samples, &self.train_config(0), self.cfg.train.seed_epochs, &self.cfg.loss)?;
        let ck = self.save_model(&model, 0)?;
        self.state.stage1_losses = report.epochs.clone();
        self.state.last_train_loss = report.mean_loss();
        self.state.checkpoints.insert(0, ck.clone());
        self.state.recursion_index = 0;
        self.state.stage = Stage::Seeded;
        self.persist()?;
        self.log(
            "stage1",
            json!({
                "epochs": report.epochs.len(),
                "first_loss": report.epochs.first().map(|e| e.loss),
                "final_loss": report.final_loss(),
                "checkpoint_sha256": ck.sha256,
            }),
        )
    }

    fn generate_candidates(&mut self) -> Result<()> {
        let r = self.state.recursion_index;
        let model = self.load_model(r)?;
        let pending: Vec<&LoadedSample> = self
            .data
            .d_img
            .iter()
            .filter(|s| self.state.pending.contains(&s.record.id))
            .collect();
        let pairs: Vec<(&SampleRecord, &GrayImage)> = pending.iter().map(|s| (&s.record, &s.image)).collect();
        tracing::info!(recursion = r, pending = pairs.len(), "generating candidates");
        let cands = make_candidates(&pairs, &model, &self.cfg.refine, &self.cfg.fh, r)?;
        let images: Vec<&GrayImage> = pending.iter().map(|s| &s.image).collect();
        let ck = &self.state.checkpoints[&r];
        let store = CandidateStore::new(candidates_dir(&self.exp_dir, r));
        let metas = store.write(&cands, &images, &self.cfg.refine, &ck.sha256)?;
        self.state.stage = Stage::CandidatesReady;
        self.persist()?;
        self.log(
            "candidates",
            json!({
                "count": metas.len(),
                "consistent": metas.iter().filter(|m| m.consistent_with_image_label).count(),
                "nonempty": metas.iter().filter(|m| m.foreground_area > 0).count(),
            }),
        )
    }

    /// Applies the round's selection; `Some` when blocked on review.
    fn select(&mut self, wait: bool) -> Result<Option<StepOutcome>> {
        let r = self.state.recursion_index;
        let store = CandidateStore::new(candidates_dir(&self.exp_dir, r));
        let metas = store.read_index()?;
        let mode = self.cfg.selection.mode_for(r);
        // sample id -> decision id
        let mut accepted: BTreeMap<String, String> = BTreeMap::new();
        let mut reasons: BTreeMap<String, usize> = BTreeMap::new();
        match mode {
            SelectionMode::Auto => {
                for m in &metas {
                    match m.gate(&self.cfg.gate) {
                        Ok(()) => {
                            accepted.insert(m.sample_id.clone(), format!("auto-gate:r{r}"));
                        }
                        Err(reason) => *reasons.entry(reason.to_string()).or_default() += 1,
                    }
                }
            }
            SelectionMode::Human => {
                let status = match self.await_review(r, wait)? {
                    Ok(status) => status,
                    Err(waiting) => return Ok(Some(waiting)),
                };
                for (id, session) in status.accepted {
                    accepted.insert(id, format!("review:{session}"));
                }
            }
        }

        let out_dir = pseudolabel_dir(&self.exp_dir, r);
        std::fs::create_dir_all(&out_dir).at(&out_dir)?;
        let mut newly = 0usize;
        let mut rejected = 0usize;
        let mut retired = 0usize;
        for m in &metas {
            if !self.state.pending.contains(&m.sample_id) {
                continue;
            }
            if let Some(decision) = accepted.get(&m.sample_id) {
                let src = store.mask_path(m);
                let bytes = std::fs::read(&src).at(&src)?;
                if sha256_hex(&bytes) != m.mask_sha256 {
                    return Err(Error::State(format!("candidate mask {} changed on disk", src.display())));
                }
                write_atomic(&out_dir.join(&m.mask_file), &bytes)?;
                self.state.pending.remove(&m.sample_id);
                self.state.accepted.insert(
                    m.sample_id.clone(),
                    AcceptedLabel {
                        pseudolabel: format!("r{r}/pseudolabels/{}", m.mask_file),
                        label_recursion: r,
                        accepted_in: r,
                        decision: decision.clone(),
                        checkpoint_sha256: m.checkpoint_sha256.clone(),
                        mask_sha256: m.mask_sha256.clone(),
                        policy: m.policy,
                        refined: m.policy.mode != RefineMode::None,
                        foreground_area: m.foreground_area,
                    },
                );
                newly += 1;
            } else {
                rejected += 1;
                let count = self.state.rejection_counts.entry(m.sample_id.clone()).or_default();
                *count += 1;
                if *count >= self.cfg.selection.rejection_cap {
                    self.state.pending.remove(&m.sample_id);
                    self.state.rejected_forever.insert(m.sample_id.clone());
                    retired += 1;
                }
            }
        }

        let area = self.state.total_foreground_area();
        let stop = if r == 0 {
            None
        } else {
            let prev_area = self.state.history.last().map_or(0, |h| h.total_foreground_area);
            self.cfg.stop.verdict(r, newly, prev_area, area, self.data.d_img.len())
        };
        self.state.history.push(HistoryRecord {
            recursion: r,
            newly_accepted: newly,
            total_accepted: self.state.accepted.len(),
            total_foreground_area: area,
            mean_train_loss: self.state.last_train_loss.take(),
            stop,
        });
        if let Some(reason) = stop {
            self.verify_d_pix()?;
            self.state.stop_reason = Some(reason);
            self.state.stage = Stage::Stopped;
        } else {
            self.state.stage = Stage::Selected;
        }
        self.state.check_partition(self.data.d_img.iter().map(|s| s.record.id.as_str()))?;
        self.persist()?;
        tracing::info!(recursion = r, newly, total = self.state.accepted.len(), area, ?stop, "selection applied");
        self.log(
            "selected",
            json!({
                "mode": mode,
                "newly_accepted": newly,
                "rejected": rejected,
                "retired": retired,
                "reject_reasons": reasons,
                "total_accepted": self.state.accepted.len(),
                "total_foreground_area": area,
                "stop": stop,
            }),
        )?;
        if stop.is_some() {
            self.log("stopped", json!({ "reason": stop }))?;
        }
        Ok(None)
    }

    fn await_review(&self, r: u32, wait: bool) -> Result<Result<crate::review::RoundStatus, StepOutcome>> {
        let started = Instant::now();
        let timeout = Duration::from_secs(self.cfg.selection.review_timeout_secs);
        let poll = Duration::from_millis(self.cfg.selection.review_poll_ms.max(1));
        let mut announced = false;
        loop {
            let status = round_status(&self.exp_dir, r)?;
            if status.is_complete() {
                return Ok(Ok(status));
            }
            if !wait {
                return Ok(Err(StepOutcome::AwaitingReview {
                    recursion: r,
                    open_session: status.open_session,
                }));
            }
            if !announced {
                tracing::info!(recursion = r, "waiting for the review session to close");
                announced = true;
            }
            if started.elapsed() >= timeout {
                self.log("review_timeout", json!({ "after_secs": timeout.as_secs() }))?;
                return Err(ReviewError::Timeout(timeout.as_secs()).into());
            }
            std::thread::sleep(poll.min(timeout.saturating_sub(started.elapsed())).max(Duration::from_millis(1)));
        }
    }

    fn train_next(&mut self) -> Result<()> {
        let r = self.state.recursion_index;
        let next = r + 1;
        let k = self.k();
        let mut model = self.load_model(r)?;

        let mut targets: Vec<(&GrayImage, OneHot, bool)> = Vec::new();
        for s in &self.data.d_pix {
            let mask = s.mask.as_ref().ok_or_else(|| Error::InvalidRecord {
                id: s.record.id.clone(),
                reason: "pixel-labelled sample without a mask".into(),
            })?;
            targets.push((&s.image, encode_one_hot(mask, k)?, true));
        }
        let by_id: BTreeMap<&str, &LoadedSample> = self.data.d_img.iter().map(|s| (s.record.id.as_str(), s)).collect();
        for (id, label) in &self.state.accepted {
            let sample = by_id
                .get(id.as_str())
                .ok_or_else(|| Error::State(format!("accepted sample `{id}` is not in the image-labelled set")))?;
            let mask = load_mask(&self.exp_dir.join(&label.pseudolabel), k)?;
            targets.push((&sample.image, encode_one_hot(&mask, k)?, false));
        }
        let samples: Vec<TrainSample<'_>> = targets
            .iter()
            .map(|(image, t, gt)| TrainSample { image, target: t, has_pixel_gt: *gt })
            .collect();
        tracing::info!(recursion = next, samples = samples.len(), "recursion training");
        let report = train(&mut model, &samples, &self.train_config(next), self.cfg.train.recursion_epochs, &self.cfg.loss)?;
        let ck = self.save_model(&model, next)?;

        // Refresh every accepted pseudo-label with the new model.
        let refresh_policy = if self.cfg.refine_each_recursion {
            self.cfg.refine
        } else {
            crate::weaklabel::RefinePolicy { mode: RefineMode::None, ..self.cfg.refine }
        };
        let ids: Vec<&String> = self.state.accepted.keys().collect();
        let refreshed: Vec<(String, Vec<u8>, usize)> = ids
            .par_iter()
            .map(|id| {
                let sample = by_id[id.as_str()];
                let pred = predict_mask(&model, &sample.image)?;
                let mask = refine(&pred.mask, &sample.image, &self.cfg.fh, &refresh_policy)?;
                Ok(((*id).clone(), encode_mask_png(&mask)?, mask.foreground_area()))
            })
            .collect::<Result<_>>()?;
        let target_dir = pseudolabel_dir(&self.exp_dir, next);
        let staging = with_suffix(&target_dir, ".staging");
        if staging.exists() {
            std::fs::remove_dir_all(&staging).at(&staging)?;
        }
        std::fs::create_dir_all(&staging).at(&staging)?;
        let mut updated = self.state.accepted.clone();
        for (id, bytes, area) in refreshed {
            let file = format!("{}.png", file_stem(&id));
            write_atomic(&staging.join(&file), &bytes)?;
            let label = updated.get_mut(&id).expect("accepted id");
            label.pseudolabel = format!("r{next}/pseudolabels/{file}");
            label.label_recursion = next;
            label.checkpoint_sha256 = ck.sha256.clone();
            label.mask_sha256 = sha256_hex(&bytes);
            label.policy = refresh_policy;
            label.refined = refresh_policy.mode != RefineMode::None;
            label.foreground_area = area;
        }
        replace_dir(&staging, &target_dir)?;

        self.state.accepted = updated;
        self.state.checkpoints.insert(next, ck.clone());
        self.state.recursion_index = next;
        self.state.last_train_loss = report.mean_loss();
        self.state.stage = Stage::Trained;
        self.persist()?;
        self.log(
            "trained",
            json!({
                "samples": samples.len(),
                "mean_loss": report.mean_loss(),
                "final_loss": report.final_loss(),
                "checkpoint_sha256": ck.sha256,
                "refreshed": self.state.accepted.len(),
            }),
        )
    }

    /// Fails if any pixel mask changed since the experiment started.
    pub fn verify_d_pix(&self) -> Result<()> {
        for s in &self.data.d_pix {
            if let (Some(p), Some(expected)) = (&s.record.pixel_mask_ref, self.state.d_pix_checksums.get(&s.record.id)) {
                if &sha256_file(p)? != expected {
                    return Err(Error::State(format!("pixel mask {} changed during the experiment", p.display())));
                }
            }
        }
        Ok(())
    }
}
