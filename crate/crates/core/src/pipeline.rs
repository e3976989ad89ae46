//! The commands behind the CLI: whole-pipeline runs, individual stages,
//! evaluation and reporting.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde_json::json;

use crate::config::ExperimentConfig;
use crate::datamodel::{
    balance_single_class, load_manifest, load_samples, ClassTaxonomy, DatasetManifest, LoadedSample, SampleRole,
};
use crate::error::{Error, Result};
use crate::metrics::{emit_report, phase_results, render_report, Phase, PixelCounts, Report, ReportFiles, SliceCounts};
use crate::recursion::{
    append_history, Controller, ExperimentData, ModelFactory, RecursionState, Stage, StepOutcome, StopReason,
    STATE_FILE,
};
use crate::segnet::{predict_mask, read_checkpoint_meta, AdamConfig, ModelBackend, ModelConfig, UNet};
use crate::util::derive_seed;

/// Builds the default UNet backend.
#[derive(Debug, Clone)]
pub struct UNetFactory {
    pub model: ModelConfig,
    pub num_channels: usize,
    pub adam: AdamConfig,
}

impl UNetFactory {
    pub fn from_config(cfg: &ExperimentConfig, taxonomy: &ClassTaxonomy) -> Self {
        Self {
            model: cfg.model,
            num_channels: taxonomy.num_channels(),
            adam: AdamConfig {
                learning_rate: cfg.train.learning_rate as f32,
                ..AdamConfig::default()
            },
        }
    }
}

impl ModelFactory for UNetFactory {
    type Model = UNet;

    fn create(&self, seed: u64) -> Result<UNet> {
        UNet::new(self.model, self.num_channels, self.adam, seed)
    }
}

/// Loaded training data plus what was dropped on the way.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub data: ExperimentData,
    /// Negative image-labelled slices left out.
    pub negatives_dropped: usize,
    /// Classes short of `balance_per_class`: `(class, available)`.
    pub shortfall: Vec<(u8, usize)>,
}

/// Loads the pixel- and image-labelled sets named by `cfg`.
pub fn load_experiment_data(cfg: &ExperimentConfig) -> Result<LoadedData> {
    let pix = load_manifest(&cfg.paths.d_pix)?;
    let img = match &cfg.paths.d_img {
        Some(p) if p != &cfg.paths.d_pix => load_manifest(p)?,
        _ => pix.clone(),
    };
    if pix.taxonomy() != img.taxonomy() {
        return Err(Error::Config(format!(
            "taxonomies differ: {:?} vs {:?}",
            pix.taxonomy().classes(),
            img.taxonomy().classes()
        )));
    }
    let mut shortfall = Vec::new();
    let img = match cfg.data.balance_per_class {
        Some(n) => {
            let b = balance_single_class(&img, n, derive_seed(cfg.rng_seed, "balance", 0));
            for (class, have) in &b.shortfall {
                tracing::warn!(class, have, wanted = n, "class has fewer image-labelled samples than requested");
            }
            shortfall = b.shortfall;
            b.manifest
        }
        None => img,
    };
    let keep_negatives = cfg.data.include_negative_dimg && img.header.include_negative_dimg;
    let mut negatives_dropped = 0;
    let d_img_records: Vec<_> = img
        .with_role(SampleRole::Image)
        .filter(|r| {
            let keep = keep_negatives || r.image_label != Some(0);
            negatives_dropped += usize::from(!keep);
            keep
        })
        .collect();
    let d_pix = load_samples(&pix, pix.with_role(SampleRole::Pixel))?;
    let d_img = load_samples(&img, d_img_records)?;
    let pix_ids: BTreeSet<&str> = d_pix.iter().map(|s| s.record.id.as_str()).collect();
    if let Some(s) = d_img.iter().find(|s| pix_ids.contains(s.record.id.as_str())) {
        return Err(Error::DuplicateId(s.record.id.clone()));
    }
    Ok(LoadedData {
        data: ExperimentData {
            taxonomy: pix.taxonomy().clone(),
            d_pix,
            d_img,
        },
        negatives_dropped,
        shortfall,
    })
}

/// Taxonomy of the experiment, read from the pixel-labelled manifest.
pub fn experiment_taxonomy(cfg: &ExperimentConfig) -> Result<ClassTaxonomy> {
    Ok(load_manifest(&cfg.paths.d_pix)?.taxonomy().clone())
}

/// Name of the stage the controller attempts next from `stage`.
pub fn next_stage_name(stage: Stage) -> &'static str {
    match stage {
        Stage::Fresh => "train-seed",
        Stage::Seeded | Stage::Trained => "gen-candidates",
        Stage::CandidatesReady => "select",
        Stage::Selected => "recurse",
        Stage::Stopped => "stopped",
    }
}

/// Human-readable plan of a run.
pub fn stage_plan(cfg: &ExperimentConfig) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "config hash {}", cfg.hash());
    let _ = writeln!(s, "experiment  {}", cfg.paths.experiment_dir.display());
    let _ = writeln!(
        s,
        "stage 1     seed training on {} for {} epochs",
        cfg.paths.d_pix.display(),
        cfg.train.seed_epochs
    );
    let _ = writeln!(
        s,
        "stage 2     weak labels for {} ({:?} refinement), {:?} selection",
        cfg.paths.d_img.as_ref().unwrap_or(&cfg.paths.d_pix).display(),
        cfg.refine.mode,
        cfg.selection.stage2
    );
    let _ = writeln!(
        s,
        "stage 3     up to {} recursions of {} epochs, {:?} selection, stall below {} new or {} area change",
        cfg.stop.max_recursions,
        cfg.train.recursion_epochs,
        cfg.selection.recursion,
        cfg.stop
            .min_new_samples
            .map_or_else(|| "1% of D_img".to_string(), |n| n.to_string()),
        cfg.stop.area_delta_eps
    );
    if cfg.paths.test.is_empty() {
        let _ = writeln!(s, "evaluation  skipped (no test manifests)");
    } else {
        for t in &cfg.paths.test {
            let _ = writeln!(s, "evaluation  r0 vs final on {}", t.display());
        }
    }
    s
}

/// Reads the persisted controller state without taking the lock.
pub fn read_state(exp_dir: &Path) -> Result<RecursionState> {
    let path = exp_dir.join(STATE_FILE);
    let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunSummary {
    pub outcome: StepOutcome,
    pub stop_reason: Option<StopReason>,
    pub recursion_index: u32,
    pub accepted: usize,
    pub report: Option<ReportFiles>,
}

fn open_controller<'a>(
    cfg: &'a ExperimentConfig,
    data: &'a ExperimentData,
    factory: &'a UNetFactory,
) -> Result<Controller<'a, UNetFactory>> {
    Controller::open(&cfg.paths.experiment_dir, cfg, data, factory)
}

/// Drives the controller until it stops (or, without `wait`, until it
/// blocks on review), then evaluates and reports.
pub fn cmd_run(cfg: &ExperimentConfig, wait: bool) -> Result<RunSummary> {
    let loaded = load_experiment_data(cfg).map_err(|e| e.in_stage("load"))?;
    let factory = UNetFactory::from_config(cfg, &loaded.data.taxonomy);
    let mut c = open_controller(cfg, &loaded.data, &factory).map_err(|e| e.in_stage("load"))?;
    let resumed_at = c.state().stage;
    if resumed_at != Stage::Fresh {
        tracing::info!(stage = ?resumed_at, recursion = c.state().recursion_index, "resuming");
    }
    let outcome = loop {
        let stage = next_stage_name(c.state().stage);
        match c.step(wait).map_err(|e| e.in_stage(stage))? {
            StepOutcome::Advanced(_) => continue,
            other => break other,
        }
    };
    let state = c.state().clone();
    drop(c);
    let report = if matches!(outcome, StepOutcome::Finished(_)) && !cfg.paths.test.is_empty() {
        Some(evaluate_experiment(cfg, &state, None)?)
    } else {
        None
    };
    Ok(RunSummary {
        outcome,
        stop_reason: state.stop_reason,
        recursion_index: state.recursion_index,
        accepted: state.accepted.len(),
        report,
    })
}

/// Stage 1 only.
pub fn cmd_train_seed(cfg: &ExperimentConfig) -> Result<RecursionState> {
    let loaded = load_experiment_data(cfg).map_err(|e| e.in_stage("load"))?;
    let factory = UNetFactory::from_config(cfg, &loaded.data.taxonomy);
    let mut c = open_controller(cfg, &loaded.data, &factory).map_err(|e| e.in_stage("load"))?;
    c.run_stage1().map_err(|e| e.in_stage("train-seed"))?;
    Ok(c.state().clone())
}

/// Writes candidates for the current recursion.
pub fn cmd_gen_candidates(cfg: &ExperimentConfig) -> Result<RecursionState> {
    let loaded = load_experiment_data(cfg).map_err(|e| e.in_stage("load"))?;
    let factory = UNetFactory::from_config(cfg, &loaded.data.taxonomy);
    let mut c = open_controller(cfg, &loaded.data, &factory).map_err(|e| e.in_stage("load"))?;
    match c.state().stage {
        Stage::Seeded | Stage::Trained => {
            c.step(false).map_err(|e| e.in_stage("gen-candidates"))?;
        }
        Stage::CandidatesReady => tracing::info!("candidates already generated for this recursion"),
        other => {
            return Err(Error::State(format!("cannot generate candidates from stage {other:?}")).in_stage("gen-candidates"))
        }
    }
    Ok(c.state().clone())
}

/// Applies the pending selection, then runs up to `steps` recursions
/// (all remaining when `None`).
pub fn cmd_recurse(cfg: &ExperimentConfig, steps: Option<u32>, wait: bool) -> Result<StepOutcome> {
    let loaded = load_experiment_data(cfg).map_err(|e| e.in_stage("load"))?;
    let factory = UNetFactory::from_config(cfg, &loaded.data.taxonomy);
    let mut c = open_controller(cfg, &loaded.data, &factory).map_err(|e| e.in_stage("load"))?;
    match c.state().stage {
        Stage::Fresh | Stage::Seeded => {
            return Err(Error::State("run train-seed and gen-candidates first".into()).in_stage("recurse"))
        }
        Stage::Stopped => return Ok(StepOutcome::Finished(c.state().stop_reason)),
        _ => {}
    }
    if c.state().stage == Stage::CandidatesReady {
        match c.step(wait).map_err(|e| e.in_stage("select"))? {
            StepOutcome::Advanced(_) => {}
            other => return Ok(other),
        }
    }
    let mut done = 0;
    loop {
        if c.state().stage == Stage::Stopped {
            return Ok(StepOutcome::Finished(c.state().stop_reason));
        }
        if steps.is_some_and(|n| done >= n) {
            return Ok(StepOutcome::Advanced(c.state().stage));
        }
        let stage = next_stage_name(c.state().stage);
        match c.run_recursion_step(wait).map_err(|e| e.in_stage(stage))? {
            StepOutcome::Advanced(_) => done += 1,
            other => return Ok(other),
        }
    }
}

fn load_checked_model(checkpoint: &Path, taxonomy: &ClassTaxonomy) -> Result<UNet> {
    if !checkpoint.exists() {
        return Err(Error::Checkpoint(format!("{} does not exist", checkpoint.display())));
    }
    let meta = read_checkpoint_meta(checkpoint)?;
    if &meta.taxonomy != taxonomy {
        return Err(Error::Checkpoint(format!(
            "{} was trained for classes {:?}, the manifest has {:?}",
            checkpoint.display(),
            meta.taxonomy.classes(),
            taxonomy.classes()
        )));
    }
    let model = UNet::from_checkpoint(checkpoint)?;
    if model.num_channels() != taxonomy.num_channels() {
        return Err(Error::Checkpoint("checkpoint channel count does not match its taxonomy".into()));
    }
    Ok(model)
}

/// Per-slice counts of `model` on every pixel-labelled record of `manifest`.
pub fn slice_counts<M: ModelBackend + ?Sized>(
    model: &M,
    samples: &[LoadedSample],
    cfg: &ExperimentConfig,
) -> Result<Vec<SliceCounts>> {
    use rayon::prelude::*;
    samples
        .par_iter()
        .map(|s| {
            let gt = s.mask.as_ref().ok_or_else(|| Error::InvalidRecord {
                id: s.record.id.clone(),
                reason: "test record without a pixel mask".into(),
            })?;
            let pred = predict_mask(model, &s.image)?;
            Ok(SliceCounts {
                sample_id: s.record.id.clone(),
                patient_id: s.record.patient_id.clone(),
                counts: PixelCounts::from_masks(&pred.mask, gt, cfg.eval.foreground_rule)?,
            })
        })
        .collect()
}

/// Evaluates `before` and `after` checkpoints on `manifests` and writes the
/// report into `out_dir`.
pub fn cmd_eval(
    cfg: &ExperimentConfig,
    before: &Path,
    after: &Path,
    manifests: &[PathBuf],
    out_dir: &Path,
) -> Result<ReportFiles> {
    if manifests.is_empty() {
        return Err(Error::Config("no evaluation manifests".into()));
    }
    let mut rows_before = Vec::new();
    let mut rows_after = Vec::new();
    let mut units = Vec::new();
    for path in manifests {
        let manifest: DatasetManifest = load_manifest(path)?;
        let records: Vec<_> = manifest.with_role(SampleRole::Pixel).collect();
        if records.is_empty() {
            return Err(Error::Config(format!("{} has no pixel-labelled records", path.display())));
        }
        let samples = load_samples(&manifest, records)?;
        let dataset = manifest.name();
        for (phase, ck, rows) in [(Phase::Before, before, &mut rows_before), (Phase::After, after, &mut rows_after)] {
            let model = load_checked_model(ck, manifest.taxonomy())?;
            let counts = slice_counts(&model, &samples, cfg)?;
            let (r, u) = phase_results(&dataset, phase, &counts, &cfg.eval.conventions)?;
            rows.extend(r);
            units.extend(u);
        }
    }
    emit_report(&rows_before, &rows_after, &units, out_dir)
}

/// Report directory of an experiment.
pub fn report_dir(exp_dir: &Path) -> PathBuf {
    exp_dir.join("report")
}

/// Evaluates the seed checkpoint against the last one.
pub fn evaluate_experiment(cfg: &ExperimentConfig, state: &RecursionState, out_dir: Option<&Path>) -> Result<ReportFiles> {
    let exp = &cfg.paths.experiment_dir;
    let first = state
        .checkpoints
        .get(&0)
        .ok_or_else(|| Error::Checkpoint("no seed checkpoint".into()).in_stage("eval"))?;
    let (last_r, last) = state.checkpoints.iter().next_back().expect("non-empty");
    let out = out_dir.map_or_else(|| report_dir(exp), Path::to_path_buf);
    let files = cmd_eval(cfg, &exp.join(&first.path), &exp.join(&last.path), &cfg.paths.test, &out)
        .map_err(|e| e.in_stage("eval"))?;
    append_history(
        exp,
        "report",
        *last_r,
        json!({ "before": first.path, "after": last.path, "table": files.table }),
    )
    .map_err(|e| e.in_stage("report"))?;
    Ok(files)
}

/// Renders a previously written report plus the recursion history.
pub fn cmd_report(exp_dir: &Path) -> Result<String> {
    let mut out = String::new();
    let state = read_state(exp_dir)?;
    let _ = writeln!(
        out,
        "stage {:?}, recursion {}, {} accepted, {} pending, {} rejected for good{}",
        state.stage,
        state.recursion_index,
        state.accepted.len(),
        state.pending.len(),
        state.rejected_forever.len(),
        state.stop_reason.map(|r| format!(", stopped: {r:?}")).unwrap_or_default()
    );
    let _ = writeln!(out, "\nrecursion  new  total  area  mean loss");
    for h in &state.history {
        let _ = writeln!(
            out,
            "{:>9}  {:>3}  {:>5}  {:>4}  {}",
            h.recursion,
            h.newly_accepted,
            h.total_accepted,
            h.total_foreground_area,
            h.mean_train_loss.map_or("-".into(), |l| format!("{l:.4}"))
        );
    }
    let json_path = report_dir(exp_dir).join("report.json");
    if json_path.exists() {
        let text = std::fs::read_to_string(&json_path).map_err(|e| Error::io(&json_path, e))?;
        let report: Report = serde_json::from_str(&text)?;
        out.push('\n');
        out.push_str(&render_report(&report.rows, &report.median_changes));
    } else {
        let _ = writeln!(out, "\nno evaluation report yet");
    }
    Ok(out)
}
