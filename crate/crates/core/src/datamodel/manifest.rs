//! JSON-lines dataset manifests.
//!
//! Each non-blank line is one [`SampleRecord`]. An optional first line of the
//! form `{"header": {...}}` carries the split, taxonomy and intensity window.
//! File references are relative to the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::imageio::{load_image, load_mask, IntensityWindow};
use super::raster::{GrayImage, SegmentationMask};
use super::taxonomy::ClassTaxonomy;
use crate::error::{Error, IoContext, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    #[default]
    Train,
    Review,
    Test,
}

/// Which dataset a record belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SampleRole {
    /// Pixel-level ground truth available.
    Pixel,
    /// Image-level class label only.
    Image,
    Unlabeled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub image_ref: PathBuf,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pixel_mask_ref: Option<PathBuf>,
    /// Image-level class: `1..=K` for a single bleed type, `0` for a slice
    /// known to contain no bleed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_label: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub patient_id: Option<String>,
    pub source: String,
}

impl SampleRecord {
    pub fn role(&self) -> SampleRole {
        match (&self.pixel_mask_ref, self.image_label) {
            (Some(_), _) => SampleRole::Pixel,
            (None, Some(_)) => SampleRole::Image,
            (None, None) => SampleRole::Unlabeled,
        }
    }

    /// Grouping key for patient-level metrics; falls back to the record id.
    pub fn patient_key(&self) -> &str {
        self.patient_id.as_deref().unwrap_or(&self.id)
    }

    fn validate(&self, k: usize) -> Result<()> {
        let bad = |reason: &str| Error::InvalidRecord {
            id: self.id.clone(),
            reason: reason.to_string(),
        };
        if self.id.is_empty() {
            return Err(bad("empty id"));
        }
        if self.pixel_mask_ref.is_some() && self.image_label.is_some() {
            return Err(bad("carries both a pixel mask and an image label"));
        }
        if let Some(l) = self.image_label {
            if l as usize > k {
                return Err(bad(&format!("image_label {l} outside 0..={k}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestHeader {
    #[serde(default)]
    pub split: Split,
    #[serde(default)]
    pub taxonomy: ClassTaxonomy,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intensity_window: Option<[f64; 2]>,
    #[serde(default = "default_true")]
    pub include_negative_dimg: bool,
    /// Dataset display name for reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
}

fn default_true() -> bool {
    true
}

impl Default for ManifestHeader {
    fn default() -> Self {
        Self {
            split: Split::Train,
            taxonomy: ClassTaxonomy::default(),
            intensity_window: None,
            include_negative_dimg: true,
            name: None,
        }
    }
}

#[derive(Deserialize)]
struct HeaderLine {
    header: ManifestHeader,
}

/// A validated dataset. Record paths are resolved against the manifest's
/// directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub header: ManifestHeader,
    pub records: Vec<SampleRecord>,
}

impl DatasetManifest {
    pub fn new(header: ManifestHeader, records: Vec<SampleRecord>) -> Result<Self> {
        let m = Self { header, records };
        m.validate_records()?;
        Ok(m)
    }

    pub fn taxonomy(&self) -> &ClassTaxonomy {
        &self.header.taxonomy
    }

    pub fn window(&self) -> Option<IntensityWindow> {
        self.header.intensity_window.map(IntensityWindow::from)
    }

    /// Report name: header name, else the first record's source.
    pub fn name(&self) -> String {
        self.header
            .name
            .clone()
            .or_else(|| self.records.first().map(|r| r.source.clone()))
            .unwrap_or_else(|| "dataset".into())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn with_role(&self, role: SampleRole) -> impl Iterator<Item = &SampleRecord> {
        self.records.iter().filter(move |r| r.role() == role)
    }

    pub fn d_pix(&self) -> Vec<&SampleRecord> {
        self.with_role(SampleRole::Pixel).collect()
    }

    /// Image-labelled records, honouring `include_negative_dimg`.
    pub fn d_img(&self) -> Vec<&SampleRecord> {
        self.with_role(SampleRole::Image)
            .filter(|r| self.header.include_negative_dimg || r.image_label != Some(0))
            .collect()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    fn validate_records(&self) -> Result<()> {
        let k = self.header.taxonomy.k();
        let mut seen = HashSet::new();
        for r in &self.records {
            r.validate(k)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(())
    }

    /// Every image and mask path that does not exist.
    pub fn missing_files(&self) -> Vec<PathBuf> {
        self.records
            .iter()
            .flat_map(|r| std::iter::once(&r.image_ref).chain(r.pixel_mask_ref.iter()))
            .filter(|p| !p.exists())
            .cloned()
            .collect()
    }

    /// Writes the manifest, storing paths relative to `path`'s directory when
    /// possible.
    pub fn write(&self, path: &Path) -> Result<()> {
        let base = path.parent().unwrap_or(Path::new("."));
        let rel = |p: &Path| p.strip_prefix(base).map(Path::to_path_buf).unwrap_or(p.to_path_buf());
        let mut out = Vec::new();
        serde_json::to_writer(&mut out, &serde_json::json!({ "header": self.header }))?;
        out.push(b'\n');
        for r in &self.records {
            let mut r = r.clone();
            r.image_ref = rel(&r.image_ref);
            r.pixel_mask_ref = r.pixel_mask_ref.as_deref().map(rel);
            serde_json::to_writer(&mut out, &r)?;
            out.push(b'\n');
        }
        let mut f = std::fs::File::create(path).at(path)?;
        f.write_all(&out).at(path)
    }
}

/// Parses and validates a manifest file.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path).at(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut header = None;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let value: serde_json::Value =
            serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        if value.get("header").is_some() {
            if header.is_some() || !records.is_empty() {
                return Err(parse_err("header must be the first line".into()));
            }
            let h: HeaderLine =
                serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
            header = Some(h.header);
            continue;
        }
        let mut rec: SampleRecord =
            serde_json::from_value(value).map_err(|e| parse_err(e.to_string()))?;
        rec.image_ref = base.join(&rec.image_ref);
        rec.pixel_mask_ref = rec.pixel_mask_ref.map(|p| base.join(p));
        records.push(rec);
    }
    let manifest = DatasetManifest::new(header.unwrap_or_default(), records)?;
    let missing = manifest.missing_files();
    if !missing.is_empty() {
        return Err(Error::MissingFiles(missing));
    }
    Ok(manifest)
}

/// Result of [`balance_single_class`].
#[derive(Debug, Clone)]
pub struct Balanced {
    pub manifest: DatasetManifest,
    /// Classes that had fewer than `per_class` records: `(class, available)`.
    pub shortfall: Vec<(u8, usize)>,
}

/// Keeps at most `per_class` image-labelled records for every bleed class
/// `1..=K`, chosen by a seeded shuffle. Everything else is dropped; output
/// keeps manifest order.
pub fn balance_single_class(manifest: &DatasetManifest, per_class: usize, seed: u64) -> Balanced {
    let k = manifest.taxonomy().k();
    let mut by_class: BTreeMap<u8, Vec<usize>> = BTreeMap::new();
    for (i, r) in manifest.records.iter().enumerate() {
        if r.role() == SampleRole::Image {
            if let Some(l) = r.image_label.filter(|&l| l >= 1 && l as usize <= k) {
                by_class.entry(l).or_default().push(i);
            }
        }
    }
    let mut keep = Vec::new();
    let mut shortfall = Vec::new();
    for class in 1..=k as u8 {
        let mut idx = by_class.remove(&class).unwrap_or_default();
        if idx.len() < per_class {
            shortfall.push((class, idx.len()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (u64::from(class) << 32));
        idx.shuffle(&mut rng);
        idx.truncate(per_class);
        keep.extend(idx);
    }
    keep.sort_unstable();
    let records = keep.into_iter().map(|i| manifest.records[i].clone()).collect();
    Balanced {
        manifest: DatasetManifest {
            header: manifest.header.clone(),
            records,
        },
        shortfall,
    }
}

/// A record with its pixels loaded.
#[derive(Debug, Clone)]
pub struct LoadedSample {
    pub record: SampleRecord,
    pub image: GrayImage,
    pub mask: Option<SegmentationMask>,
}

/// Loads images (and masks, where present) for `records`.
pub fn load_samples<'a>(
    manifest: &DatasetManifest,
    records: impl IntoIterator<Item = &'a SampleRecord>,
) -> Result<Vec<LoadedSample>> {
    let k = manifest.taxonomy().k();
    records
        .into_iter()
        .map(|r| {
            let image = load_image(&r.image_ref, manifest.window())?;
            let mask = match &r.pixel_mask_ref {
                Some(p) => {
                    let m = load_mask(p, k)?;
                    if !m.same_shape(image.height, image.width) {
                        return Err(Error::ShapeMismatch(format!(
                            "record `{}`: mask {}x{} vs image {}x{}",
                            r.id, m.height, m.width, image.height, image.width
                        )));
                    }
                    Some(m)
                }
                None => None,
            };
            Ok(LoadedSample {
                record: r.clone(),
                image,
                mask,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datamodel::imageio::{write_gray_png, write_mask_png};

    fn rec(id: &str, mask: bool, label: Option<u8>) -> SampleRecord {
        SampleRecord {
            id: id.into(),
            image_ref: PathBuf::from(format!("{id}.png")),
            pixel_mask_ref: mask.then(|| PathBuf::from(format!("{id}_mask.png"))),
            image_label: label,
            patient_id: None,
            source: "test".into(),
        }
    }

    fn write_files(dir: &Path, records: &[SampleRecord]) {
        let img = GrayImage::filled(4, 4, 0.5);
        for r in records {
            write_gray_png(&dir.join(&r.image_ref), &img).unwrap();
            if let Some(m) = &r.pixel_mask_ref {
                write_mask_png(&dir.join(m), &SegmentationMask::background(4, 4)).unwrap();
            }
        }
    }

    fn write_manifest(dir: &Path, lines: &[String]) -> PathBuf {
        let p = dir.join("manifest.jsonl");
        std::fs::write(&p, lines.join("\n")).unwrap();
        p
    }

    #[test]
    fn loads_and_partitions() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![
            rec("a", true, None),
            rec("b", false, Some(2)),
            rec("c", false, None),
            rec("d", false, Some(0)),
        ];
        write_files(dir.path(), &records);
        let lines: Vec<String> = records
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect();
        let m = load_manifest(&write_manifest(dir.path(), &lines)).unwrap();
        assert_eq!(m.len(), 4);
        assert_eq!(m.d_pix().len(), 1);
        assert_eq!(m.d_img().len(), 2);
        assert_eq!(m.with_role(SampleRole::Unlabeled).count(), 1);
        assert!(m.records[0].image_ref.is_absolute() || m.records[0].image_ref.starts_with(dir.path()));

        let samples = load_samples(&m, m.d_pix()).unwrap();
        assert_eq!(samples[0].mask.as_ref().unwrap().len(), 16);
    }

    #[test]
    fn negative_dimg_flag() {
        let mut m = DatasetManifest::new(
            ManifestHeader::default(),
            vec![rec("b", false, Some(2)), rec("d", false, Some(0))],
        )
        .unwrap();
        assert_eq!(m.d_img().len(), 2);
        m.header.include_negative_dimg = false;
        assert_eq!(m.d_img().len(), 1);
    }

    #[test]
    fn empty_manifest_is_fine() {
        let dir = tempfile::tempdir().unwrap();
        let m = load_manifest(&write_manifest(dir.path(), &[])).unwrap();
        assert!(m.is_empty());
    }

    #[test]
    fn parse_error_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let good = serde_json::to_string(&rec("a", false, None)).unwrap();
        write_files(dir.path(), &[rec("a", false, None)]);
        let p = write_manifest(dir.path(), &[good, "{not json".into()]);
        match load_manifest(&p) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn mask_and_label_together_is_invalid() {
        let dir = tempfile::tempdir().unwrap();
        let r = rec("a", true, Some(1));
        write_files(dir.path(), std::slice::from_ref(&r));
        let p = write_manifest(dir.path(), &[serde_json::to_string(&r).unwrap()]);
        assert!(matches!(load_manifest(&p), Err(Error::InvalidRecord { .. })));
    }

    #[test]
    fn duplicate_ids_and_missing_files() {
        let dir = tempfile::tempdir().unwrap();
        let a = serde_json::to_string(&rec("a", false, None)).unwrap();
        write_files(dir.path(), &[rec("a", false, None)]);
        let p = write_manifest(dir.path(), &[a.clone(), a]);
        assert!(matches!(load_manifest(&p), Err(Error::DuplicateId(id)) if id == "a"));

        let missing = [rec("x", true, None), rec("y", false, None)]
            .iter()
            .map(|r| serde_json::to_string(r).unwrap())
            .collect::<Vec<_>>();
        let p = write_manifest(dir.path(), &missing);
        match load_manifest(&p) {
            Err(Error::MissingFiles(files)) => assert_eq!(files.len(), 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn header_line_and_write_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let records = vec![rec("a", true, None), rec("b", false, Some(1))];
        write_files(dir.path(), &records);
        let header = ManifestHeader {
            split: Split::Test,
            intensity_window: Some([0.0, 100.0]),
            name: Some("demo".into()),
            ..Default::default()
        };
        let m = DatasetManifest::new(
            header,
            records
                .iter()
                .map(|r| SampleRecord {
                    image_ref: dir.path().join(&r.image_ref),
                    pixel_mask_ref: r.pixel_mask_ref.as_ref().map(|p| dir.path().join(p)),
                    ..r.clone()
                })
                .collect(),
        )
        .unwrap();
        let p = dir.path().join("out.jsonl");
        m.write(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.contains("\"image_ref\":\"a.png\""));
        let back = load_manifest(&p).unwrap();
        assert_eq!(back.header.split, Split::Test);
        assert_eq!(back.name(), "demo");
        assert_eq!(back.records.len(), 2);
    }

    fn labelled(n_per: &[usize]) -> DatasetManifest {
        let mut records = Vec::new();
        for (c, &n) in n_per.iter().enumerate() {
            for i in 0..n {
                records.push(rec(&format!("c{}-{i}", c + 1), false, Some(c as u8 + 1)));
            }
        }
        records.push(rec("pix", true, None));
        records.push(rec("none", false, None));
        DatasetManifest::new(ManifestHeader::default(), records).unwrap()
    }

    #[test]
    fn balance_caps_each_class() {
        let m = labelled(&[12, 3, 7, 10, 5]);
        let b = balance_single_class(&m, 5, 7);
        let mut counts = [0usize; 6];
        for r in &b.manifest.records {
            counts[r.image_label.unwrap() as usize] += 1;
        }
        assert_eq!(counts, [0, 5, 3, 5, 5, 5]);
        assert_eq!(b.shortfall, vec![(2, 3)]);
    }

    #[test]
    fn balance_zero_is_empty() {
        let b = balance_single_class(&labelled(&[4, 4, 4, 4, 4]), 0, 1);
        assert!(b.manifest.is_empty());
    }

    #[test]
    fn balance_is_deterministic_under_seed() {
        let m = labelled(&[10, 0, 0, 0, 0]);
        let ids = |seed| -> Vec<String> {
            balance_single_class(&m, 4, seed)
                .manifest
                .records
                .into_iter()
                .map(|r| r.id)
                .collect()
        };
        assert_eq!(ids(42), ids(42));
        assert_eq!(ids(42).len(), 4);
    }
}
