//! Synthetic "head CT" slices with bright blob lesions, for desk-scale runs.
//!
//! Every slice is a noisy elliptical head on a dark background with exactly
//! one lesion. The five lesion classes differ in brightness and shape:
//!
//! | class | shape | level |
//! |---|---|---|
//! | 1 | lens against the inner skull | 0.95 |
//! | 2 | round blob | 0.85 |
//! | 3 | two small paired blobs near the centre | 0.75 |
//! | 4 | thin streak | 0.65 |
//! | 5 | crescent along the skull | 0.55 |

use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::datamodel::{
    write_gray_png, write_mask_png, ClassTaxonomy, DatasetManifest, GrayImage, ManifestHeader, SampleRecord,
    SegmentationMask, Split,
};
use crate::error::{IoContext, Result};
use crate::util::derive_seed;

pub const SIDE: usize = 64;
const LEVELS: [f64; 5] = [0.95, 0.85, 0.75, 0.65, 0.55];
const OUTSIDE: f64 = 0.05;
const TISSUE: f64 = 0.3;
const NOISE_SD: f64 = 0.03;
/// Slices per synthetic test patient.
const SLICES_PER_PATIENT: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthOptions {
    pub n_pix: usize,
    pub n_img: usize,
    pub n_test: usize,
    pub seed: u64,
}

impl SynthOptions {
    pub fn new(n_pix: usize, n_img: usize, seed: u64) -> Self {
        Self { n_pix, n_img, n_test: 24, seed }
    }
}

/// Paths written by [`cmd_synth`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub d_pix: PathBuf,
    pub d_img: PathBuf,
    pub test: PathBuf,
    /// A ready-to-run experiment config pointing at the manifests.
    pub config: PathBuf,
}

/// One generated slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthSlice {
    pub image: GrayImage,
    pub mask: SegmentationMask,
    pub class: u8,
}

#[derive(Clone, Copy)]
struct Head {
    cy: f64,
    cx: f64,
    ay: f64,
    ax: f64,
}

impl Head {
    /// Normalized elliptical radius; 1 on the skull.
    fn rho(&self, y: f64, x: f64) -> f64 {
        (((y - self.cy) / self.ay).powi(2) + ((x - self.cx) / self.ax).powi(2)).sqrt()
    }

    fn angle(&self, y: f64, x: f64) -> f64 {
        ((y - self.cy) / self.ay).atan2((x - self.cx) / self.ax)
    }

    fn point(&self, rho: f64, theta: f64) -> (f64, f64) {
        (self.cy + rho * self.ay * theta.sin(), self.cx + rho * self.ax * theta.cos())
    }
}

fn in_rotated_ellipse(y: f64, x: f64, cy: f64, cx: f64, a: f64, b: f64, phi: f64) -> bool {
    let (dy, dx) = (y - cy, x - cx);
    let u = dx * phi.cos() + dy * phi.sin();
    let v = -dx * phi.sin() + dy * phi.cos();
    (u / a).powi(2) + (v / b).powi(2) <= 1.0
}

fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(2.0 * PI);
    d.min(2.0 * PI - d)
}

/// Draws one slice of `class` from `rng`.
pub fn generate_slice(class: u8, rng: &mut ChaCha8Rng) -> SynthSlice {
    assert!((1..=5).contains(&class), "synthetic classes are 1..=5");
    let c = SIDE as f64 / 2.0 - 0.5;
    let head = Head {
        cy: c + rng.gen_range(-2.0..2.0),
        cx: c + rng.gen_range(-2.0..2.0),
        ay: rng.gen_range(26.0..29.0),
        ax: rng.gen_range(21.0..25.0),
    };
    let theta = rng.gen_range(-PI..PI);
    let lesion: Box<dyn Fn(f64, f64) -> bool> = match class {
        1 => {
            let (cy, cx) = head.point(0.8, theta);
            let (a, b) = (rng.gen_range(10.0..13.0), rng.gen_range(4.0..5.5));
            let phi = theta + PI / 2.0;
            Box::new(move |y, x| in_rotated_ellipse(y, x, cy, cx, a, b, phi))
        }
        2 => {
            let (cy, cx) = head.point(rng.gen_range(0.0..0.4), theta);
            let r = rng.gen_range(7.0..10.0);
            Box::new(move |y, x| (y - cy).powi(2) + (x - cx).powi(2) <= r * r)
        }
        3 => {
            let off = rng.gen_range(7.0..9.0);
            let (cy, cx) = head.point(rng.gen_range(0.0..0.2), theta);
            let r = rng.gen_range(4.5..6.0);
            Box::new(move |y, x| {
                (y - cy).powi(2) + (x - cx - off).powi(2) <= r * r || (y - cy).powi(2) + (x - cx + off).powi(2) <= r * r
            })
        }
        4 => {
            let (cy, cx) = head.point(rng.gen_range(0.1..0.4), theta);
            let (a, b) = (rng.gen_range(12.0..16.0), rng.gen_range(2.5..3.5));
            let phi = rng.gen_range(0.0..PI);
            Box::new(move |y, x| in_rotated_ellipse(y, x, cy, cx, a, b, phi))
        }
        _ => {
            let span = rng.gen_range(0.8..1.1);
            let inner = rng.gen_range(0.68..0.74);
            let h = head;
            Box::new(move |y, x| {
                let rho = h.rho(y, x);
                rho >= inner && rho <= 0.95 && angle_diff(h.angle(y, x), theta) <= span
            })
        }
    };
    let noise = Normal::new(0.0, NOISE_SD).expect("valid sd");
    let level = LEVELS[class as usize - 1];
    let mut data = Vec::with_capacity(SIDE * SIDE);
    let mut labels = Vec::with_capacity(SIDE * SIDE);
    for row in 0..SIDE {
        for col in 0..SIDE {
            let (y, x) = (row as f64, col as f64);
            let inside = head.rho(y, x) <= 1.0;
            let hit = inside && lesion(y, x);
            let base = if hit {
                level
            } else if inside {
                TISSUE
            } else {
                OUTSIDE
            };
            data.push((base + noise.sample(rng)).clamp(0.0, 1.0) as f32);
            labels.push(if hit { class } else { 0 });
        }
    }
    SynthSlice {
        image: GrayImage::new(SIDE, SIDE, data).expect("square image"),
        mask: SegmentationMask::new(SIDE, SIDE, labels).expect("square mask"),
        class,
    }
}

/// Class of the `i`-th sample of a set: cycles 1..=5.
fn class_for(i: usize) -> u8 {
    (i % 5) as u8 + 1
}

/// Generates the pixel-labelled, image-labelled and test manifests in
/// `out_dir`, plus a default experiment config.
pub fn cmd_synth(out_dir: &Path, opts: &SynthOptions) -> Result<SynthOutput> {
    let images = out_dir.join("images");
    let masks = out_dir.join("masks");
    std::fs::create_dir_all(&images).at(&images)?;
    std::fs::create_dir_all(&masks).at(&masks)?;
    let taxonomy = ClassTaxonomy::hemorrhage();

    let write_set = |stream: &str, n: usize, split: Split, with_masks: bool, patients: bool| -> Result<PathBuf> {
        let mut records = Vec::with_capacity(n);
        for i in 0..n {
            let class = class_for(i);
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(opts.seed, stream, i as u64));
            let s = generate_slice(class, &mut rng);
            let id = format!("{stream}-{i:04}");
            let image_ref = images.join(format!("{id}.png"));
            write_gray_png(&image_ref, &s.image)?;
            let pixel_mask_ref = if with_masks {
                let p = masks.join(format!("{id}.png"));
                write_mask_png(&p, &s.mask)?;
                Some(p)
            } else {
                None
            };
            records.push(SampleRecord {
                id,
                image_ref,
                image_label: (!with_masks).then_some(class),
                pixel_mask_ref,
                patient_id: patients.then(|| format!("patient-{:03}", i / SLICES_PER_PATIENT)),
                source: "synthetic".into(),
            });
        }
        let header = ManifestHeader {
            split,
            taxonomy: taxonomy.clone(),
            name: Some(format!("synthetic-{stream}")),
            ..ManifestHeader::default()
        };
        let path = out_dir.join(format!("{stream}.jsonl"));
        DatasetManifest::new(header, records)?.write(&path)?;
        Ok(path)
    };
    let d_pix = write_set("d_pix", opts.n_pix, Split::Train, true, false)?;
    let d_img = write_set("d_img", opts.n_img, Split::Train, false, false)?;
    let test = write_set("test", opts.n_test, Split::Test, true, true)?;

    let config = out_dir.join("experiment.toml");
    let text = format!(
        "rng_seed = {}\n\n[paths]\nd_pix = \"d_pix.jsonl\"\nd_img = \"d_img.jsonl\"\ntest = [\"test.jsonl\"]\nexperiment_dir = \"experiment\"\n",
        opts.seed
    );
    std::fs::write(&config, text).at(&config)?;
    Ok(SynthOutput { d_pix, d_img, test, config })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::{load_manifest, SampleRole};

    #[test]
    fn every_class_draws_a_lesion_of_its_level() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for class in 1..=5u8 {
            for _ in 0..20 {
                let s = generate_slice(class, &mut rng);
                let area = s.mask.foreground_area();
                assert!(area >= 16, "class {class} lesion of {area} px");
                assert_eq!(s.mask.foreground_classes(), vec![class]);
                let mean: f64 = s
                    .mask
                    .data
                    .iter()
                    .zip(&s.image.data)
                    .filter(|(m, _)| **m != 0)
                    .map(|(_, &v)| f64::from(v))
                    .sum::<f64>()
                    / area as f64;
                assert!((mean - LEVELS[class as usize - 1]).abs() < 0.02, "class {class} mean {mean}");
            }
        }
    }

    #[test]
    fn manifests_sizes_and_balance() {
        let dir = tempfile::tempdir().unwrap();
        let out = cmd_synth(dir.path(), &SynthOptions::new(8, 64, 7)).unwrap();
        let pix = load_manifest(&out.d_pix).unwrap();
        let img = load_manifest(&out.d_img).unwrap();
        let test = load_manifest(&out.test).unwrap();
        assert_eq!(pix.d_pix().len(), 8);
        assert_eq!(img.d_img().len(), 64);
        assert!(test.records.iter().all(|r| r.role() == SampleRole::Pixel && r.patient_id.is_some()));
        let mut counts = [0usize; 6];
        for r in img.d_img() {
            counts[r.image_label.unwrap() as usize] += 1;
        }
        assert_eq!(counts[0], 0);
        let (lo, hi) = (counts[1..].iter().min().unwrap(), counts[1..].iter().max().unwrap());
        assert!(hi - lo <= 1, "{counts:?}");
    }

    #[test]
    fn same_seed_gives_identical_bytes() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        cmd_synth(a.path(), &SynthOptions::new(3, 5, 11)).unwrap();
        cmd_synth(b.path(), &SynthOptions::new(3, 5, 11)).unwrap();
        for name in ["d_pix-0002.png", "d_img-0004.png", "test-0000.png"] {
            let x = std::fs::read(a.path().join("images").join(name)).unwrap();
            let y = std::fs::read(b.path().join("images").join(name)).unwrap();
            assert_eq!(x, y, "{name}");
        }
        let c = tempfile::tempdir().unwrap();
        cmd_synth(c.path(), &SynthOptions::new(3, 5, 12)).unwrap();
        let x = std::fs::read(a.path().join("images/d_img-0000.png")).unwrap();
        let z = std::fs::read(c.path().join("images/d_img-0000.png")).unwrap();
        assert_ne!(x, z);
    }
}
