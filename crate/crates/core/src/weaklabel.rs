//! Weak labels for image-labelled samples: superpixel refinement of model
//! predictions, candidate packaging, automatic gating and the on-disk
//! candidate store.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{encode_mask_png, encode_gray_png, load_mask, GrayImage, SampleRecord, SegmentationMask};
use crate::error::{Error, IoContext, Result};
use crate::fhseg::{fh_segment, FHConfig, SuperpixelMap};
use crate::segnet::{predict_mask, ModelBackend, Prediction};
use crate::util::{file_stem, sha256_hex, write_atomic};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RefineMode {
    /// Clear classes that cover too little of a superpixel.
    Shrink,
    /// Extend qualifying classes over their whole superpixel.
    Grow,
    /// Snap every superpixel to its dominant class or to background.
    #[default]
    Objectness,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefinePolicy {
    pub mode: RefineMode,
    /// Coverage threshold ρ in `(0, 1]`.
    pub coverage: f64,
}

impl Default for RefinePolicy {
    fn default() -> Self {
        Self {
            mode: RefineMode::Objectness,
            coverage: 0.5,
        }
    }
}

impl RefinePolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.coverage > 0.0 && self.coverage <= 1.0) {
            return Err(Error::Config(format!("coverage must lie in (0, 1], got {}", self.coverage)));
        }
        Ok(())
    }
}

/// Superpixels of a `[0, 1]` image, computed on the `[0, 255]` scale the
/// FH defaults are expressed in.
pub fn superpixels(image: &GrayImage, sp_cfg: &FHConfig) -> Result<SuperpixelMap> {
    fh_segment(&image.scaled(255.0), sp_cfg)
}

/// Applies `policy` to `mask` over precomputed superpixels.
pub fn refine_with(mask: &SegmentationMask, sp: &SuperpixelMap, policy: &RefinePolicy) -> Result<SegmentationMask> {
    policy.validate()?;
    if !mask.same_shape(sp.height, sp.width) {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs superpixels {}x{}",
            mask.height, mask.width, sp.height, sp.width
        )));
    }
    if policy.mode == RefineMode::None {
        return Ok(mask.clone());
    }
    let classes = mask.data.iter().copied().max().unwrap_or(0) as usize + 1;
    let mut counts = vec![0usize; sp.n_components * classes];
    let mut sizes = vec![0usize; sp.n_components];
    for (&s, &c) in sp.labels.iter().zip(&mask.data) {
        counts[s as usize * classes + c as usize] += 1;
        sizes[s as usize] += 1;
    }
    let cover = |s: usize, c: usize| counts[s * classes + c] as f64 / sizes[s] as f64;
    // Dominant qualifying foreground class per superpixel; ties go low.
    let dominant: Vec<Option<u8>> = (0..sp.n_components)
        .map(|s| {
            let mut best: Option<(usize, usize)> = None;
            for c in 1..classes {
                let n = counts[s * classes + c];
                if n > 0 && cover(s, c) >= policy.coverage && best.map_or(true, |(_, bn)| n > bn) {
                    best = Some((c, n));
                }
            }
            best.map(|(c, _)| c as u8)
        })
        .collect();

    let mut out = mask.clone();
    for (j, (&s, &c)) in sp.labels.iter().zip(&mask.data).enumerate() {
        let s = s as usize;
        out.data[j] = match policy.mode {
            RefineMode::Objectness => dominant[s].unwrap_or(0),
            RefineMode::Shrink => {
                if c != 0 && cover(s, c as usize) >= policy.coverage {
                    c
                } else {
                    0
                }
            }
            RefineMode::Grow => dominant[s].unwrap_or(c),
            RefineMode::None => c,
        };
    }
    Ok(out)
}

/// Refines `mask` against the superpixels of `image`.
pub fn refine(
    mask: &SegmentationMask,
    image: &GrayImage,
    sp_cfg: &FHConfig,
    policy: &RefinePolicy,
) -> Result<SegmentationMask> {
    if !mask.same_shape(image.height, image.width) {
        return Err(Error::ShapeMismatch(format!(
            "mask {}x{} vs image {}x{}",
            mask.height, mask.width, image.height, image.width
        )));
    }
    if policy.mode == RefineMode::None {
        policy.validate()?;
        return Ok(mask.clone());
    }
    refine_with(mask, &superpixels(image, sp_cfg)?, policy)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceStats {
    pub mean: f64,
    pub min: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakLabelCandidate {
    pub sample_id: String,
    pub image_label: Option<u8>,
    pub predicted_mask: SegmentationMask,
    pub raw_mask: SegmentationMask,
    /// Model confidence over the refined foreground; `None` when empty.
    pub confidence: Option<ConfidenceStats>,
    pub foreground_area: usize,
    pub consistent_with_image_label: bool,
    pub recursion_born: u32,
}

/// True iff every foreground class in `mask` equals `label`.
pub fn label_consistent(mask: &SegmentationMask, label: Option<u8>) -> bool {
    mask.data.iter().all(|&c| c == 0 || Some(c) == label)
}

/// Mean and minimum of `confidence` over the foreground of `mask`.
pub fn foreground_confidence(mask: &SegmentationMask, confidence: &[f32]) -> Option<ConfidenceStats> {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    let mut min = f64::INFINITY;
    for (&c, &p) in mask.data.iter().zip(confidence) {
        if c != 0 {
            n += 1;
            sum += f64::from(p);
            min = min.min(f64::from(p));
        }
    }
    (n > 0).then(|| ConfidenceStats { mean: sum / n as f64, min })
}

/// Packages an existing prediction into a refined candidate.
pub fn candidate_from_prediction(
    record: &SampleRecord,
    image: &GrayImage,
    prediction: Prediction,
    policy: &RefinePolicy,
    sp_cfg: &FHConfig,
    recursion: u32,
) -> Result<WeakLabelCandidate> {
    let refined = refine(&prediction.mask, image, sp_cfg, policy)?;
    Ok(WeakLabelCandidate {
        sample_id: record.id.clone(),
        image_label: record.image_label,
        confidence: foreground_confidence(&refined, &prediction.confidence),
        foreground_area: refined.foreground_area(),
        consistent_with_image_label: label_consistent(&refined, record.image_label),
        predicted_mask: refined,
        raw_mask: prediction.mask,
        recursion_born: recursion,
    })
}

/// Predicts, refines and packages one image-labelled sample.
pub fn make_candidate<M: ModelBackend + ?Sized>(
    record: &SampleRecord,
    image: &GrayImage,
    model: &M,
    policy: &RefinePolicy,
    sp_cfg: &FHConfig,
    recursion: u32,
) -> Result<WeakLabelCandidate> {
    let prediction = predict_mask(model, image)?;
    candidate_from_prediction(record, image, prediction, policy, sp_cfg, recursion)
}

/// Candidates for many samples against one frozen model, in input order.
pub fn make_candidates<M: ModelBackend + ?Sized>(
    samples: &[(&SampleRecord, &GrayImage)],
    model: &M,
    policy: &RefinePolicy,
    sp_cfg: &FHConfig,
    recursion: u32,
) -> Result<Vec<WeakLabelCandidate>> {
    samples
        .par_iter()
        .map(|(r, img)| make_candidate(r, img, model, policy, sp_cfg, recursion))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GateBounds {
    pub area_min: usize,
    pub area_max: usize,
    pub conf_min: f64,
}

impl Default for GateBounds {
    fn default() -> Self {
        Self {
            area_min: 16,
            area_max: 1_000_000,
            conf_min: 0.8,
        }
    }
}

impl GateBounds {
    pub fn validate(&self) -> Result<()> {
        if self.area_min > self.area_max {
            return Err(Error::Config(format!(
                "gate area_min {} exceeds area_max {}",
                self.area_min, self.area_max
            )));
        }
        if !(0.0..=1.0).contains(&self.conf_min) {
            return Err(Error::Config(format!("gate conf_min {} outside [0, 1]", self.conf_min)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GateReason {
    Consistency,
    Area,
    Confidence,
}

impl std::fmt::Display for GateReason {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            GateReason::Consistency => "consistency",
            GateReason::Area => "area",
            GateReason::Confidence => "confidence",
        })
    }
}

/// `Ok(())` to accept, otherwise the first failed clause.
/// The area interval is closed; an empty foreground has no confidence to
/// fail and passes that clause.
pub fn auto_gate(c: &WeakLabelCandidate, gate: &GateBounds) -> Result<(), GateReason> {
    gate_fields(c.consistent_with_image_label, c.foreground_area, c.confidence, gate)
}

fn gate_fields(
    consistent: bool,
    area: usize,
    confidence: Option<ConfidenceStats>,
    gate: &GateBounds,
) -> Result<(), GateReason> {
    if !consistent {
        return Err(GateReason::Consistency);
    }
    if area < gate.area_min || area > gate.area_max {
        return Err(GateReason::Area);
    }
    if let Some(conf) = confidence {
        if conf.mean < gate.conf_min {
            return Err(GateReason::Confidence);
        }
    }
    Ok(())
}

/// Index entry describing one stored candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateMeta {
    pub sample_id: String,
    pub image_label: Option<u8>,
    /// Refined mask, relative to the store directory.
    pub mask_file: String,
    pub raw_mask_file: String,
    pub image_file: String,
    pub mask_sha256: String,
    pub confidence: Option<ConfidenceStats>,
    pub foreground_area: usize,
    pub consistent_with_image_label: bool,
    pub recursion_born: u32,
    pub policy: RefinePolicy,
    pub checkpoint_sha256: String,
}

impl CandidateMeta {
    /// [`auto_gate`] on the stored fields.
    pub fn gate(&self, gate: &GateBounds) -> Result<(), GateReason> {
        gate_fields(self.consistent_with_image_label, self.foreground_area, self.confidence, gate)
    }
}

pub const INDEX_FILE: &str = "index.jsonl";

/// Directory of refined masks plus a line-per-candidate index.
#[derive(Debug, Clone)]
pub struct CandidateStore {
    dir: PathBuf,
}

impl CandidateStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn exists(&self) -> bool {
        self.dir.join(INDEX_FILE).is_file()
    }

    /// Replaces the store with `candidates`; `images` are parallel to it.
    /// The new store is assembled beside the old one and renamed into place.
    pub fn write(
        &self,
        candidates: &[WeakLabelCandidate],
        images: &[&GrayImage],
        policy: &RefinePolicy,
        checkpoint_sha256: &str,
    ) -> Result<Vec<CandidateMeta>> {
        if candidates.len() != images.len() {
            return Err(Error::ShapeMismatch("one image per candidate required".into()));
        }
        let staging = with_suffix(&self.dir, ".staging");
        if staging.exists() {
            std::fs::remove_dir_all(&staging).at(&staging)?;
        }
        std::fs::create_dir_all(&staging).at(&staging)?;
        let mut index = String::new();
        let mut metas = Vec::with_capacity(candidates.len());
        for (c, img) in candidates.iter().zip(images) {
            let stem = file_stem(&c.sample_id);
            let mask_file = format!("{stem}.png");
            let raw_mask_file = format!("{stem}.raw.png");
            let image_file = format!("{stem}.image.png");
            let mask_bytes = encode_mask_png(&c.predicted_mask)?;
            write_atomic(&staging.join(&mask_file), &mask_bytes)?;
            write_atomic(&staging.join(&raw_mask_file), &encode_mask_png(&c.raw_mask)?)?;
            write_atomic(&staging.join(&image_file), &encode_gray_png(img)?)?;
            let meta = CandidateMeta {
                sample_id: c.sample_id.clone(),
                image_label: c.image_label,
                mask_file,
                raw_mask_file,
                image_file,
                mask_sha256: sha256_hex(&mask_bytes),
                confidence: c.confidence,
                foreground_area: c.foreground_area,
                consistent_with_image_label: c.consistent_with_image_label,
                recursion_born: c.recursion_born,
                policy: *policy,
                checkpoint_sha256: checkpoint_sha256.to_string(),
            };
            index.push_str(&serde_json::to_string(&meta)?);
            index.push('\n');
            metas.push(meta);
        }
        write_atomic(&staging.join(INDEX_FILE), index.as_bytes())?;
        replace_dir(&staging, &self.dir)?;
        Ok(metas)
    }

    pub fn read_index(&self) -> Result<Vec<CandidateMeta>> {
        let path = self.dir.join(INDEX_FILE);
        let text = std::fs::read_to_string(&path).at(&path)?;
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let meta: CandidateMeta = serde_json::from_str(line).map_err(|e| Error::Parse {
                path: path.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
            if !seen.insert(meta.sample_id.clone()) {
                return Err(Error::DuplicateId(meta.sample_id));
            }
            out.push(meta);
        }
        Ok(out)
    }

    pub fn mask_path(&self, meta: &CandidateMeta) -> PathBuf {
        self.dir.join(&meta.mask_file)
    }

    pub fn load_mask(&self, meta: &CandidateMeta, k: usize) -> Result<SegmentationMask> {
        load_mask(&self.mask_path(meta), k)
    }
}

pub(crate) fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

/// Moves `staging` to `target`, removing any previous `target`.
pub(crate) fn replace_dir(staging: &Path, target: &Path) -> Result<()> {
    if target.exists() {
        let old = with_suffix(target, ".old");
        if old.exists() {
            std::fs::remove_dir_all(&old).at(&old)?;
        }
        std::fs::rename(target, &old).at(target)?;
        std::fs::rename(staging, target).at(target)?;
        std::fs::remove_dir_all(&old).at(&old)
    } else {
        if let Some(parent) = target.parent() {
            std::fs::create_dir_all(parent).at(parent)?;
        }
        std::fs::rename(staging, target).at(target)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sp_from(h: usize, w: usize, labels: Vec<u32>) -> SuperpixelMap {
        let n = labels.iter().copied().max().map_or(0, |m| m as usize + 1);
        SuperpixelMap { height: h, width: w, labels, n_components: n }
    }

    fn policy(mode: RefineMode, coverage: f64) -> RefinePolicy {
        RefinePolicy { mode, coverage }
    }

    fn record(label: Option<u8>) -> SampleRecord {
        SampleRecord {
            id: "s".into(),
            image_ref: "s.png".into(),
            pixel_mask_ref: None,
            image_label: label,
            patient_id: None,
            source: "t".into(),
        }
    }

    #[test]
    fn none_is_identity() {
        let img = GrayImage::new(2, 3, vec![0.1, 0.9, 0.3, 0.5, 0.2, 0.7]).unwrap();
        let m = SegmentationMask::new(2, 3, vec![0, 1, 2, 0, 0, 1]).unwrap();
        let out = refine(&m, &img, &FHConfig::default(), &policy(RefineMode::None, 0.5)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn aligned_mask_is_objectness_fixed_point() {
        // Left half dark, right half bright: two superpixels.
        let img = GrayImage::new(4, 4, (0..16).map(|i| if i % 4 < 2 { 0.05 } else { 0.9 }).collect()).unwrap();
        let m = SegmentationMask::new(4, 4, (0..16).map(|i| if i % 4 < 2 { 0 } else { 3 }).collect()).unwrap();
        let cfg = FHConfig { scale_k: 50.0, min_size: 1, smoothing_sigma: 0.0, connectivity: 4 };
        assert_eq!(superpixels(&img, &cfg).unwrap().n_components, 2);
        let out = refine(&m, &img, &cfg, &policy(RefineMode::Objectness, 0.5)).unwrap();
        assert_eq!(out, m);
    }

    #[test]
    fn shrink_clears_low_coverage() {
        // One superpixel of 8 pixels; mask marks 3 of them.
        let sp = sp_from(2, 4, vec![0; 8]);
        let m = SegmentationMask::new(2, 4, vec![1, 1, 1, 0, 0, 0, 0, 0]).unwrap();
        let out = refine_with(&m, &sp, &policy(RefineMode::Shrink, 0.5)).unwrap();
        assert_eq!(out.foreground_area(), 0);
        let m5 = SegmentationMask::new(2, 4, vec![1, 1, 1, 1, 1, 0, 0, 0]).unwrap();
        assert_eq!(refine_with(&m5, &sp, &policy(RefineMode::Shrink, 0.5)).unwrap(), m5);
    }

    #[test]
    fn grow_fills_qualifying_superpixels() {
        let sp = sp_from(2, 4, vec![0, 0, 1, 1, 0, 0, 1, 1]);
        let m = SegmentationMask::new(2, 4, vec![2, 2, 1, 0, 2, 0, 0, 0]).unwrap();
        let out = refine_with(&m, &sp, &policy(RefineMode::Grow, 0.5)).unwrap();
        // Superpixel 0 (cover 3/4 of class 2) fills; superpixel 1 (1/4) stays.
        assert_eq!(out.data, vec![2, 2, 1, 0, 2, 2, 0, 0]);
    }

    #[test]
    fn objectness_picks_dominant_or_background() {
        let sp = sp_from(1, 6, vec![0, 0, 0, 1, 1, 1]);
        let m = SegmentationMask::new(1, 6, vec![1, 2, 2, 1, 0, 0]).unwrap();
        let out = refine_with(&m, &sp, &policy(RefineMode::Objectness, 0.5)).unwrap();
        assert_eq!(out.data, vec![2, 2, 2, 0, 0, 0]);
    }

    #[test]
    fn shape_and_policy_errors() {
        let sp = sp_from(2, 2, vec![0; 4]);
        let m = SegmentationMask::background(3, 2);
        assert!(matches!(refine_with(&m, &sp, &RefinePolicy::default()), Err(Error::ShapeMismatch(_))));
        let m = SegmentationMask::background(2, 2);
        assert!(refine_with(&m, &sp, &policy(RefineMode::Shrink, 0.0)).is_err());
        assert!(refine_with(&m, &sp, &policy(RefineMode::Shrink, 1.5)).is_err());
    }

    fn arb_case() -> impl Strategy<Value = (SuperpixelMap, SegmentationMask, f64)> {
        (1usize..7, 1usize..7).prop_flat_map(|(h, w)| {
            (
                proptest::collection::vec(0u32..5, h * w),
                proptest::collection::vec(0u8..4, h * w),
                0.05f64..=1.0,
            )
                .prop_map(move |(mut labels, mask, rho)| {
                    // Densify ids.
                    let mut map = std::collections::BTreeMap::new();
                    for l in &mut labels {
                        let next = map.len() as u32;
                        *l = *map.entry(*l).or_insert(next);
                    }
                    (sp_from(h, w, labels), SegmentationMask::new(h, w, mask).unwrap(), rho)
                })
        })
    }

    proptest! {
        #[test]
        fn shrink_never_adds_and_is_idempotent((sp, m, rho) in arb_case()) {
            let p = policy(RefineMode::Shrink, rho);
            let once = refine_with(&m, &sp, &p).unwrap();
            for (a, b) in once.data.iter().zip(&m.data) {
                prop_assert!(*a == 0 || a == b);
            }
            prop_assert_eq!(refine_with(&once, &sp, &p).unwrap(), once);
        }

        #[test]
        fn objectness_outputs_whole_superpixels((sp, m, rho) in arb_case()) {
            let p = policy(RefineMode::Objectness, rho);
            let once = refine_with(&m, &sp, &p).unwrap();
            for s in 0..sp.n_components as u32 {
                let vals: BTreeSet<u8> = sp.labels.iter().zip(&once.data).filter(|(l, _)| **l == s).map(|(_, v)| *v).collect();
                prop_assert_eq!(vals.len(), 1);
            }
            prop_assert_eq!(refine_with(&once, &sp, &p).unwrap(), once);
        }

        #[test]
        fn grow_keeps_foreground_in_qualifying_superpixels((sp, m, rho) in arb_case()) {
            let once = refine_with(&m, &sp, &policy(RefineMode::Grow, rho)).unwrap();
            for (j, &s) in sp.labels.iter().enumerate() {
                let members: Vec<usize> = (0..sp.labels.len()).filter(|&i| sp.labels[i] == s).collect();
                let qualifies = (1..4u8).any(|c| {
                    let n = members.iter().filter(|&&i| m.data[i] == c).count();
                    n > 0 && n as f64 / members.len() as f64 >= rho
                });
                if m.data[j] != 0 && qualifies {
                    prop_assert!(once.data[j] != 0);
                }
                if !qualifies {
                    prop_assert_eq!(once.data[j], m.data[j]);
                }
            }
        }
    }

    #[test]
    fn candidate_fields_match_recount() {
        let img = GrayImage::filled(3, 3, 0.5);
        let mask = SegmentationMask::new(3, 3, vec![0, 2, 2, 0, 2, 0, 0, 0, 0]).unwrap();
        let confidence = vec![0.9, 0.6, 0.8, 0.9, 0.7, 0.9, 0.9, 0.9, 0.9];
        let pred = Prediction { mask: mask.clone(), confidence };
        let c = candidate_from_prediction(&record(Some(1)), &img, pred.clone(), &policy(RefineMode::None, 0.5), &FHConfig::default(), 2).unwrap();
        assert_eq!(c.foreground_area, 3);
        assert!(!c.consistent_with_image_label);
        let conf = c.confidence.unwrap();
        assert!((conf.mean - 0.7).abs() < 1e-6 && (conf.min - 0.6).abs() < 1e-6);
        assert_eq!(c.recursion_born, 2);

        let c = candidate_from_prediction(&record(Some(2)), &img, pred, &policy(RefineMode::None, 0.5), &FHConfig::default(), 0).unwrap();
        assert!(c.consistent_with_image_label);

        let empty = Prediction { mask: SegmentationMask::background(3, 3), confidence: vec![1.0; 9] };
        let c = candidate_from_prediction(&record(Some(1)), &img, empty, &RefinePolicy::default(), &FHConfig::default(), 0).unwrap();
        assert_eq!(c.foreground_area, 0);
        assert!(c.consistent_with_image_label);
        assert!(c.confidence.is_none());
    }

    fn cand(area: usize, consistent: bool, mean: Option<f64>) -> WeakLabelCandidate {
        WeakLabelCandidate {
            sample_id: "x".into(),
            image_label: Some(1),
            predicted_mask: SegmentationMask::background(1, 1),
            raw_mask: SegmentationMask::background(1, 1),
            confidence: mean.map(|m| ConfidenceStats { mean: m, min: m }),
            foreground_area: area,
            consistent_with_image_label: consistent,
            recursion_born: 0,
        }
    }

    #[test]
    fn gate_clauses_in_order() {
        let g = GateBounds { area_min: 10, area_max: 100, conf_min: 0.7 };
        assert_eq!(auto_gate(&cand(0, true, None), &g), Err(GateReason::Area));
        assert_eq!(auto_gate(&cand(50, true, Some(0.9)), &g), Ok(()));
        assert_eq!(auto_gate(&cand(10, true, Some(0.9)), &g), Ok(()));
        assert_eq!(auto_gate(&cand(100, true, Some(0.9)), &g), Ok(()));
        assert_eq!(auto_gate(&cand(101, true, Some(0.9)), &g), Err(GateReason::Area));
        assert_eq!(auto_gate(&cand(0, false, Some(0.1)), &g), Err(GateReason::Consistency));
        assert_eq!(auto_gate(&cand(50, true, Some(0.5)), &g), Err(GateReason::Confidence));
        assert_eq!(GateReason::Area.to_string(), "area");
        assert!(GateBounds { area_min: 5, area_max: 4, conf_min: 0.5 }.validate().is_err());
    }

    #[test]
    fn store_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let store = CandidateStore::new(dir.path().join("r1/candidates"));
        let img = GrayImage::filled(2, 2, 0.25);
        let mut c = cand(1, true, Some(0.9));
        c.sample_id = "p/1".into();
        c.predicted_mask = SegmentationMask::new(2, 2, vec![0, 1, 0, 0]).unwrap();
        c.raw_mask = c.predicted_mask.clone();
        let metas = store.write(&[c.clone()], &[&img], &RefinePolicy::default(), "abc").unwrap();
        assert!(store.exists());
        let back = store.read_index().unwrap();
        assert_eq!(back, metas);
        assert_eq!(store.load_mask(&back[0], 5).unwrap(), c.predicted_mask);
        assert_eq!(
            sha256_hex(&std::fs::read(store.mask_path(&back[0])).unwrap()),
            back[0].mask_sha256
        );
        // Rewrite replaces the previous contents.
        store.write(&[], &[], &RefinePolicy::default(), "abc").unwrap();
        assert!(store.read_index().unwrap().is_empty());
        assert!(!store.mask_path(&back[0]).exists());
    }
}
