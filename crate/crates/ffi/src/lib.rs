//! C ABI over the recurseg library.
//!
//! Every function returns a [`RecursegStatus`]; on failure the message is
//! available from [`recurseg_last_error`] on the same thread. Objects are
//! opaque handles released with their `_free` function. Strings returned
//! through out-parameters are owned by the caller and released with
//! [`recurseg_string_free`]. Array arguments are row-major, pixel-major for
//! probability maps (`data[pixel * channels + channel]`).

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use recurseg::datamodel::{
    encode_one_hot, load_manifest, ClassTaxonomy, DatasetManifest, GrayImage, SampleRole, SegmentationMask,
};
use recurseg::fhseg::{fh_segment, FHConfig};
use recurseg::losses::{combined_loss, cross_entropy, dice_loss, LossConfig};
use recurseg::metrics::{binary_metrics, ForegroundRule};
use recurseg::review::{DecisionRequest, ReviewService, Verdict};
use recurseg::segnet::{predict_mask, ModelBackend, ProbabilityMap, UNet};
use recurseg::weaklabel::{refine, RefineMode, RefinePolicy};
use recurseg::{Error, ReviewError};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecursegStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ShapeMismatch = 3,
    Io = 4,
    Parse = 5,
    Config = 6,
    Checkpoint = 7,
    State = 8,
    Review = 9,
    Internal = 10,
    Panic = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

fn status_of(e: &Error) -> RecursegStatus {
    match e {
        Error::Io { .. } | Error::MissingFiles(_) => RecursegStatus::Io,
        Error::Parse { .. } | Error::Serde(_) => RecursegStatus::Parse,
        Error::ShapeMismatch(_) | Error::NotNormalized { .. } | Error::EmptyImage => RecursegStatus::ShapeMismatch,
        Error::Config(_) | Error::InvalidTaxonomy(_) => RecursegStatus::Config,
        Error::Checkpoint(_) => RecursegStatus::Checkpoint,
        Error::State(_) | Error::Locked(_) => RecursegStatus::State,
        Error::Review(_) => RecursegStatus::Review,
        Error::DuplicateId(_) | Error::InvalidRecord { .. } | Error::MaskValueOutOfRange { .. } | Error::Image(_) => {
            RecursegStatus::InvalidArgument
        }
        Error::Stage { source, .. } => status_of(source),
        _ => RecursegStatus::Internal,
    }
}

enum Fail {
    Null(&'static str),
    Invalid(String),
    Lib(Error),
}

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        Fail::Lib(e)
    }
}

impl From<ReviewError> for Fail {
    fn from(e: ReviewError) -> Self {
        Fail::Lib(e.into())
    }
}

type FfiResult<T> = Result<T, Fail>;

fn guard(f: impl FnOnce() -> FfiResult<()>) -> RecursegStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            RecursegStatus::Ok
        }
        Ok(Err(Fail::Null(what))) => {
            set_error(format!("null pointer: {what}"));
            RecursegStatus::NullPointer
        }
        Ok(Err(Fail::Invalid(msg))) => {
            set_error(msg);
            RecursegStatus::InvalidArgument
        }
        Ok(Err(Fail::Lib(e))) => {
            set_error(e.to_string());
            status_of(&e)
        }
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_error(format!("panic: {msg}"));
            RecursegStatus::Panic
        }
    }
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &'static str) -> FfiResult<&'a [T]> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn slice_mut<'a, T>(p: *mut T, len: usize, what: &'static str) -> FfiResult<&'a mut [T]> {
    if len == 0 {
        return Ok(&mut []);
    }
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    Ok(std::slice::from_raw_parts_mut(p, len))
}

unsafe fn out<'a, T>(p: *mut T, what: &'static str) -> FfiResult<&'a mut T> {
    p.as_mut().ok_or(Fail::Null(what))
}

unsafe fn string(p: *const c_char, what: &'static str) -> FfiResult<String> {
    if p.is_null() {
        return Err(Fail::Null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map(str::to_owned)
        .map_err(|_| Fail::Invalid(format!("{what} is not UTF-8")))
}

fn to_c(s: String) -> *mut c_char {
    CString::new(s.replace('\0', " ")).unwrap_or_default().into_raw()
}

fn pixels(height: usize, width: usize) -> FfiResult<usize> {
    height
        .checked_mul(width)
        .filter(|&n| n > 0)
        .ok_or_else(|| Fail::Invalid(format!("bad image size {height}x{width}")))
}

/// Message of the last failed call on this thread, or null. Valid until the
/// next call on this thread.
#[no_mangle]
pub extern "C" fn recurseg_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version, static.
#[no_mangle]
pub extern "C" fn recurseg_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Releases a string returned by this library. Null is ignored.
///
/// # Safety
/// `s` must come from this library and not have been freed.
#[no_mangle]
pub unsafe extern "C" fn recurseg_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

// ---- losses ----------------------------------------------------------------

unsafe fn loss_inputs(
    pred: *const f64,
    target: *const u8,
    height: usize,
    width: usize,
    channels: usize,
) -> FfiResult<(ProbabilityMap, recurseg::datamodel::OneHot)> {
    let n = pixels(height, width)?;
    if channels < 2 {
        return Err(Fail::Invalid("need at least 2 channels".into()));
    }
    let p = slice(pred, n * channels, "pred")?;
    let t = slice(target, n, "target")?;
    let map = ProbabilityMap::from_raw(height, width, channels, p.to_vec())?;
    let mask = SegmentationMask::new(height, width, t.to_vec())?;
    let onehot = encode_one_hot(&mask, channels - 1)?;
    Ok((map, onehot))
}

/// Pixel-averaged cross-entropy of `pred` (`height*width*channels`
/// probabilities) against the label mask `target` (`height*width` class
/// indices below `channels`).
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn recurseg_cross_entropy(
    pred: *const f64,
    target: *const u8,
    height: usize,
    width: usize,
    channels: usize,
    log_epsilon: f64,
    out_loss: *mut f64,
) -> RecursegStatus {
    guard(|| {
        let (p, t) = loss_inputs(pred, target, height, width, channels)?;
        let cfg = LossConfig { log_epsilon, ..LossConfig::default() };
        cfg.validate()?;
        *out(out_loss, "out_loss")? = cross_entropy(&p, &t, &cfg)?;
        Ok(())
    })
}

/// Soft dice loss averaged over foreground classes.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
pub unsafe extern "C" fn recurseg_dice_loss(
    pred: *const f64,
    target: *const u8,
    height: usize,
    width: usize,
    channels: usize,
    smoothing: f64,
    out_loss: *mut f64,
) -> RecursegStatus {
    guard(|| {
        let (p, t) = loss_inputs(pred, target, height, width, channels)?;
        let cfg = LossConfig { dice_smoothing: smoothing, ..LossConfig::default() };
        cfg.validate()?;
        *out(out_loss, "out_loss")? = dice_loss(&p, &t, &cfg)?;
        Ok(())
    })
}

/// Cross-entropy plus `dice_weight` times dice when `has_pixel_gt`.
///
/// # Safety
/// Pointers must be valid for the stated lengths.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn recurseg_combined_loss(
    pred: *const f64,
    target: *const u8,
    height: usize,
    width: usize,
    channels: usize,
    has_pixel_gt: bool,
    dice_weight: f64,
    smoothing: f64,
    log_epsilon: f64,
    out_loss: *mut f64,
) -> RecursegStatus {
    guard(|| {
        let (p, t) = loss_inputs(pred, target, height, width, channels)?;
        let cfg = LossConfig { dice_weight, dice_smoothing: smoothing, log_epsilon };
        cfg.validate()?;
        *out(out_loss, "out_loss")? = combined_loss(&p, &t, has_pixel_gt, &cfg)?;
        Ok(())
    })
}

// ---- metrics ---------------------------------------------------------------

#[repr(C)]
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct RecursegMetrics {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Any-bleed overlap metrics of two label masks. `class_index` 0 treats
/// every non-zero label as foreground; otherwise only that class counts.
///
/// # Safety
/// `pred` and `gt` must hold `height*width` values.
#[no_mangle]
pub unsafe extern "C" fn recurseg_binary_metrics(
    pred: *const u8,
    gt: *const u8,
    height: usize,
    width: usize,
    class_index: u8,
    out_metrics: *mut RecursegMetrics,
) -> RecursegStatus {
    guard(|| {
        let n = pixels(height, width)?;
        let p = SegmentationMask::new(height, width, slice(pred, n, "pred")?.to_vec())?;
        let g = SegmentationMask::new(height, width, slice(gt, n, "gt")?.to_vec())?;
        let rule = if class_index == 0 { ForegroundRule::AnyBleed } else { ForegroundRule::Class(class_index) };
        let m = binary_metrics(&p, &g, rule)?;
        *out(out_metrics, "out_metrics")? = RecursegMetrics {
            dice: m.dice,
            iou: m.iou,
            precision: m.precision,
            recall: m.recall,
        };
        Ok(())
    })
}

// ---- superpixels and refinement -------------------------------------------

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RecursegFhConfig {
    pub scale_k: f64,
    pub min_size: usize,
    pub smoothing_sigma: f64,
    /// 4 or 8.
    pub connectivity: u8,
}

impl From<RecursegFhConfig> for FHConfig {
    fn from(c: RecursegFhConfig) -> Self {
        FHConfig {
            scale_k: c.scale_k,
            min_size: c.min_size,
            smoothing_sigma: c.smoothing_sigma,
            connectivity: c.connectivity,
        }
    }
}

#[no_mangle]
pub extern "C" fn recurseg_fh_default_config() -> RecursegFhConfig {
    let d = FHConfig::default();
    RecursegFhConfig {
        scale_k: d.scale_k,
        min_size: d.min_size,
        smoothing_sigma: d.smoothing_sigma,
        connectivity: d.connectivity,
    }
}

/// Graph-based superpixels. Intensities are used as given (`scale_k`
/// defaults assume `[0, 255]`). Writes one component id per pixel into
/// `out_labels`.
///
/// # Safety
/// `image` and `out_labels` must hold `height*width` values.
#[no_mangle]
pub unsafe extern "C" fn recurseg_fh_segment(
    image: *const f32,
    height: usize,
    width: usize,
    config: RecursegFhConfig,
    out_labels: *mut u32,
    out_n_components: *mut usize,
) -> RecursegStatus {
    guard(|| {
        let n = pixels(height, width)?;
        let img = GrayImage::new(height, width, slice(image, n, "image")?.to_vec())?;
        let sp = fh_segment(&img, &config.into())?;
        slice_mut(out_labels, n, "out_labels")?.copy_from_slice(&sp.labels);
        *out(out_n_components, "out_n_components")? = sp.n_components;
        Ok(())
    })
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecursegRefineMode {
    None = 0,
    Shrink = 1,
    Grow = 2,
    Objectness = 3,
}

/// Refines a label mask against the superpixels of `image` (intensities in
/// `[0, 1]`).
///
/// # Safety
/// `mask`, `image` and `out_mask` must hold `height*width` values.
#[no_mangle]
#[allow(clippy::too_many_arguments)]
pub unsafe extern "C" fn recurseg_refine(
    mask: *const u8,
    image: *const f32,
    height: usize,
    width: usize,
    config: RecursegFhConfig,
    mode: RecursegRefineMode,
    coverage: f64,
    out_mask: *mut u8,
) -> RecursegStatus {
    guard(|| {
        let n = pixels(height, width)?;
        let m = SegmentationMask::new(height, width, slice(mask, n, "mask")?.to_vec())?;
        let img = GrayImage::new(height, width, slice(image, n, "image")?.to_vec())?;
        let mode = match mode {
            RecursegRefineMode::None => RefineMode::None,
            RecursegRefineMode::Shrink => RefineMode::Shrink,
            RecursegRefineMode::Grow => RefineMode::Grow,
            RecursegRefineMode::Objectness => RefineMode::Objectness,
        };
        let r = refine(&m, &img, &config.into(), &RefinePolicy { mode, coverage })?;
        slice_mut(out_mask, n, "out_mask")?.copy_from_slice(&r.data);
        Ok(())
    })
}

// ---- model -----------------------------------------------------------------

/// A trained segmentation network.
pub struct RecursegModel {
    net: UNet,
}

/// Loads a checkpoint written by the pipeline.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_model` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn recurseg_model_load(path: *const c_char, out_model: *mut *mut RecursegModel) -> RecursegStatus {
    guard(|| {
        let slot = out(out_model, "out_model")?;
        let path = PathBuf::from(string(path, "path")?);
        let net = UNet::from_checkpoint(&path)?;
        *slot = Box::into_raw(Box::new(RecursegModel { net }));
        Ok(())
    })
}

/// Output channels (classes plus background).
///
/// # Safety
/// `model` must come from [`recurseg_model_load`].
#[no_mangle]
pub unsafe extern "C" fn recurseg_model_num_channels(model: *const RecursegModel, out_channels: *mut usize) -> RecursegStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        *out(out_channels, "out_channels")? = m.net.num_channels();
        Ok(())
    })
}

/// Argmax mask and per-pixel confidence for an image in `[0, 1]`.
/// `out_confidence` may be null.
///
/// # Safety
/// Buffers must hold `height*width` values.
#[no_mangle]
pub unsafe extern "C" fn recurseg_model_predict(
    model: *const RecursegModel,
    image: *const f32,
    height: usize,
    width: usize,
    out_mask: *mut u8,
    out_confidence: *mut f32,
) -> RecursegStatus {
    guard(|| {
        let m = model.as_ref().ok_or(Fail::Null("model"))?;
        let n = pixels(height, width)?;
        let img = GrayImage::new(height, width, slice(image, n, "image")?.to_vec())?;
        let pred = predict_mask(&m.net, &img)?;
        slice_mut(out_mask, n, "out_mask")?.copy_from_slice(&pred.mask.data);
        if !out_confidence.is_null() {
            slice_mut(out_confidence, n, "out_confidence")?.copy_from_slice(&pred.confidence);
        }
        Ok(())
    })
}

/// # Safety
/// `model` must come from [`recurseg_model_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn recurseg_model_free(model: *mut RecursegModel) {
    if !model.is_null() {
        drop(Box::from_raw(model));
    }
}

// ---- manifest --------------------------------------------------------------

/// A validated dataset manifest.
pub struct RecursegManifest {
    inner: DatasetManifest,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RecursegRole {
    /// Has a pixel mask.
    Pixel = 0,
    /// Has an image-level label only.
    Image = 1,
    Unlabeled = 2,
}

/// Loads and validates a JSON-lines manifest; referenced files must exist.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out_manifest` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn recurseg_manifest_load(
    path: *const c_char,
    out_manifest: *mut *mut RecursegManifest,
) -> RecursegStatus {
    guard(|| {
        let slot = out(out_manifest, "out_manifest")?;
        let inner = load_manifest(&PathBuf::from(string(path, "path")?))?;
        *slot = Box::into_raw(Box::new(RecursegManifest { inner }));
        Ok(())
    })
}

/// # Safety
/// `manifest` must come from [`recurseg_manifest_load`].
#[no_mangle]
pub unsafe extern "C" fn recurseg_manifest_len(manifest: *const RecursegManifest, out_len: *mut usize) -> RecursegStatus {
    guard(|| {
        let m = manifest.as_ref().ok_or(Fail::Null("manifest"))?;
        *out(out_len, "out_len")? = m.inner.len();
        Ok(())
    })
}

/// Number of records with the given role.
///
/// # Safety
/// `manifest` must come from [`recurseg_manifest_load`].
#[no_mangle]
pub unsafe extern "C" fn recurseg_manifest_count(
    manifest: *const RecursegManifest,
    role: RecursegRole,
    out_count: *mut usize,
) -> RecursegStatus {
    guard(|| {
        let m = manifest.as_ref().ok_or(Fail::Null("manifest"))?;
        let role = match role {
            RecursegRole::Pixel => SampleRole::Pixel,
            RecursegRole::Image => SampleRole::Image,
            RecursegRole::Unlabeled => SampleRole::Unlabeled,
        };
        *out(out_count, "out_count")? = m.inner.with_role(role).count();
        Ok(())
    })
}

/// Record `index` as a JSON object (resolved paths).
///
/// # Safety
/// `manifest` must come from [`recurseg_manifest_load`]; free the string
/// with [`recurseg_string_free`].
#[no_mangle]
pub unsafe extern "C" fn recurseg_manifest_record_json(
    manifest: *const RecursegManifest,
    index: usize,
    out_json: *mut *mut c_char,
) -> RecursegStatus {
    guard(|| {
        let m = manifest.as_ref().ok_or(Fail::Null("manifest"))?;
        let slot = out(out_json, "out_json")?;
        let rec = m
            .inner
            .records
            .get(index)
            .ok_or_else(|| Fail::Invalid(format!("index {index} out of range ({} records)", m.inner.len())))?;
        *slot = to_c(serde_json::to_string(rec).map_err(|e| Error::Serde(e.to_string()))?);
        Ok(())
    })
}

/// # Safety
/// `manifest` must come from [`recurseg_manifest_load`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn recurseg_manifest_free(manifest: *mut RecursegManifest) {
    if !manifest.is_null() {
        drop(Box::from_raw(manifest));
    }
}

// ---- review ----------------------------------------------------------------

/// Review service bound to one experiment directory.
pub struct RecursegReview {
    inner: ReviewService,
}

fn json_out<T: serde::Serialize>(slot: &mut *mut c_char, v: &T) -> FfiResult<()> {
    *slot = to_c(serde_json::to_string(v).map_err(|e| Error::Serde(e.to_string()))?);
    Ok(())
}

/// Opens the review service of `experiment_dir`. `classes` is a
/// comma-separated list of foreground class names, or null for the
/// default taxonomy.
///
/// # Safety
/// Strings must be NUL-terminated; `out_review` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn recurseg_review_new(
    experiment_dir: *const c_char,
    classes: *const c_char,
    out_review: *mut *mut RecursegReview,
) -> RecursegStatus {
    guard(|| {
        let slot = out(out_review, "out_review")?;
        let dir = PathBuf::from(string(experiment_dir, "experiment_dir")?);
        let taxonomy = if classes.is_null() {
            ClassTaxonomy::default()
        } else {
            ClassTaxonomy::from_foreground(string(classes, "classes")?.split(',').map(str::trim))?
        };
        *slot = Box::into_raw(Box::new(RecursegReview { inner: ReviewService::new(dir, taxonomy) }));
        Ok(())
    })
}

/// Opens a session over the candidates of `recursion`; writes
/// `{"session_id", "queue_len"}` as JSON.
///
/// # Safety
/// `review` must come from [`recurseg_review_new`].
#[no_mangle]
pub unsafe extern "C" fn recurseg_review_open_session(
    review: *const RecursegReview,
    recursion: u32,
    out_json: *mut *mut c_char,
) -> RecursegStatus {
    guard(|| {
        let r = review.as_ref().ok_or(Fail::Null("review"))?;
        let slot = out(out_json, "out_json")?;
        let s = r.inner.open_session(recursion)?;
        json_out(
            slot,
            &serde_json::json!({ "session_id": s.id(), "queue_len": s.file.queue.len() }),
        )
    })
}

/// Next undecided candidate as JSON (`{"status": "candidate", ...}` or
/// `{"status": "done"}`).
///
/// # Safety
/// `review` must come from [`recurseg_review_new`].
#[no_mangle]
pub unsafe extern "C" fn recurseg_review_next(
    review: *const RecursegReview,
    session_id: *const c_char,
    out_json: *mut *mut c_char,
) -> RecursegStatus {
    guard(|| {
        let r = review.as_ref().ok_or(Fail::Null("review"))?;
        let slot = out(out_json, "out_json")?;
        let next = r.inner.fetch_next(&string(session_id, "session_id")?)?;
        json_out(slot, &next)
    })
}

/// Records an accept or reject verdict. `out_json` receives the
/// acknowledgement and may be null.
///
/// # Safety
/// Strings must be NUL-terminated; `review` from [`recurseg_review_new`].
#[no_mangle]
pub unsafe extern "C" fn recurseg_review_decide(
    review: *const RecursegReview,
    session_id: *const c_char,
    sample_id: *const c_char,
    accept: bool,
    reviewer: *const c_char,
    out_json: *mut *mut c_char,
) -> RecursegStatus {
    guard(|| {
        let r = review.as_ref().ok_or(Fail::Null("review"))?;
        let req = DecisionRequest {
            sample_id: string(sample_id, "sample_id")?,
            verdict: if accept { Verdict::Accept } else { Verdict::Reject },
            reviewer: string(reviewer, "reviewer")?,
            note: None,
            timestamp: None,
        };
        let ack = r.inner.submit_decision(&string(session_id, "session_id")?, req)?;
        if let Some(slot) = out_json.as_mut() {
            json_out(slot, &ack)?;
        }
        Ok(())
    })
}

/// Closes the session; writes its summary (`accepted`, `rejected`,
/// `undecided`) as JSON.
///
/// # Safety
/// Strings must be NUL-terminated; `review` from [`recurseg_review_new`].
#[no_mangle]
pub unsafe extern "C" fn recurseg_review_close(
    review: *const RecursegReview,
    session_id: *const c_char,
    out_json: *mut *mut c_char,
) -> RecursegStatus {
    guard(|| {
        let r = review.as_ref().ok_or(Fail::Null("review"))?;
        let slot = out(out_json, "out_json")?;
        let summary = r.inner.close_session(&string(session_id, "session_id")?)?;
        json_out(slot, &summary)
    })
}

/// # Safety
/// `review` must come from [`recurseg_review_new`] and not be used again.
#[no_mangle]
pub unsafe extern "C" fn recurseg_review_free(review: *mut RecursegReview) {
    if !review.is_null() {
        drop(Box::from_raw(review));
    }
}
