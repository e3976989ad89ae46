#![allow(dead_code)]

use std::path::{Path, PathBuf};

use recurseg::config::ExperimentConfig;
use recurseg::datamodel::{
    write_mask_png, ClassTaxonomy, GrayImage, LoadedSample, SampleRecord, SegmentationMask,
};
use recurseg::recursion::scripted::{Script, ScriptEntry, ScriptedFactory};
use recurseg::recursion::{ExperimentData, SelectionMode};
use recurseg::weaklabel::RefineMode;

pub const SIDE: usize = 16;

/// A dark image with a bright 5×5 square; `seed` makes every image unique.
pub fn square_image(seed: usize) -> GrayImage {
    let (r0, c0) = (2 + seed % 7, 2 + (seed / 7) % 7);
    let mut data = vec![0.1f32; SIDE * SIDE];
    for r in r0..r0 + 5 {
        for c in c0..c0 + 5 {
            data[r * SIDE + c] = 0.8;
        }
    }
    data[SIDE * SIDE - 1] = 0.1 + 1e-5 * seed as f32;
    GrayImage::new(SIDE, SIDE, data).unwrap()
}

pub fn square_mask(image: &GrayImage, class: u8) -> SegmentationMask {
    let data = image.data.iter().map(|&v| if v > 0.5 { class } else { 0 }).collect();
    SegmentationMask::new(SIDE, SIDE, data).unwrap()
}

pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub data: ExperimentData,
    pub d_pix_masks: Vec<PathBuf>,
}

impl Fixture {
    pub fn exp_dir(&self) -> PathBuf {
        self.dir.path().join("exp")
    }
}

/// `n_pix` pixel-labelled and `n_img` image-labelled square images. Image
/// labels cycle through 1..=5.
pub fn fixture(n_pix: usize, n_img: usize) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let taxonomy = ClassTaxonomy::hemorrhage();
    let mut d_pix = Vec::new();
    let mut masks = Vec::new();
    for i in 0..n_pix {
        let image = square_image(1000 + i);
        let mask = square_mask(&image, (i % 5) as u8 + 1);
        let path = dir.path().join(format!("pix{i}_mask.png"));
        write_mask_png(&path, &mask).unwrap();
        masks.push(path.clone());
        d_pix.push(LoadedSample {
            record: SampleRecord {
                id: format!("pix{i}"),
                image_ref: dir.path().join(format!("pix{i}.png")),
                pixel_mask_ref: Some(path),
                image_label: None,
                patient_id: None,
                source: "fixture".into(),
            },
            image,
            mask: Some(mask),
        });
    }
    let d_img = (0..n_img)
        .map(|i| LoadedSample {
            record: SampleRecord {
                id: img_id(i),
                image_ref: dir.path().join(format!("img{i}.png")),
                pixel_mask_ref: None,
                image_label: Some(label_of(i)),
                patient_id: None,
                source: "fixture".into(),
            },
            image: square_image(i),
            mask: None,
        })
        .collect();
    Fixture {
        dir,
        data: ExperimentData { taxonomy, d_pix, d_img },
        d_pix_masks: masks,
    }
}

pub fn img_id(i: usize) -> String {
    format!("img{i:03}")
}

pub fn label_of(i: usize) -> u8 {
    (i % 5) as u8 + 1
}

/// Script where image `i` is learned after `learned_after(i)` optimizer
/// steps (never when `None`), predicted with `class_of(i)`.
pub fn script(
    n_img: usize,
    learned_after: impl Fn(usize) -> Option<u64>,
    class_of: impl Fn(usize) -> u8,
) -> Script {
    let mut s = Script::default();
    for i in 0..n_img {
        if let Some(after) = learned_after(i) {
            s.insert(&square_image(i), ScriptEntry { class: class_of(i), learned_after: after });
        }
    }
    s
}

pub fn factory(script: Script) -> ScriptedFactory {
    ScriptedFactory::new(script, 6)
}

/// One optimizer step per epoch (batch larger than any dataset), seed
/// epochs 1 and recursion epochs 1: after recursion `r` the model has
/// taken `1 + r` steps.
pub fn config(exp_dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.paths.experiment_dir = exp_dir.to_path_buf();
    cfg.train.seed_epochs = 1;
    cfg.train.recursion_epochs = 1;
    cfg.train.batch_size = 10_000;
    cfg.selection.stage2 = SelectionMode::Auto;
    cfg.selection.recursion = SelectionMode::Auto;
    cfg.refine.mode = RefineMode::Objectness;
    cfg.fh.min_size = 4;
    cfg.stop.min_new_samples = Some(1);
    cfg
}

pub fn sha(path: &Path) -> String {
    recurseg::util::sha256_file(path).unwrap()
}

/// Every regular file under `dir`, relative path → bytes.
pub fn snapshot(dir: &Path) -> std::collections::BTreeMap<String, Vec<u8>> {
    fn walk(base: &Path, dir: &Path, out: &mut std::collections::BTreeMap<String, Vec<u8>>) {
        for e in std::fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(base, &p, out);
            } else {
                let rel = p.strip_prefix(base).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    let mut out = std::collections::BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}
