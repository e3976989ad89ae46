use std::collections::BTreeMap;
use std::path::Path;

use proptest::prelude::*;
use recurseg::datamodel::{
    balance_single_class, load_manifest, load_samples, write_gray_png, write_mask_png, DatasetManifest, GrayImage,
    ManifestHeader, SampleRecord, SampleRole, SegmentationMask,
};
use recurseg::Error;

fn record(id: &str, mask: Option<&str>, label: Option<u8>, patient: Option<&str>) -> SampleRecord {
    SampleRecord {
        id: id.into(),
        image_ref: format!("{id}.png").into(),
        pixel_mask_ref: mask.map(Into::into),
        image_label: label,
        patient_id: patient.map(Into::into),
        source: "test".into(),
    }
}

fn write_pair(dir: &Path, id: &str, class: u8) {
    let img = GrayImage::new(4, 4, (0..16).map(|v| v as f32 / 15.0).collect()).unwrap();
    write_gray_png(&dir.join(format!("images/{id}.png")), &img).unwrap();
    let mask = SegmentationMask::new(4, 4, (0..16).map(|v| if v < 4 { class } else { 0 }).collect()).unwrap();
    write_mask_png(&dir.join(format!("masks/{id}.png")), &mask).unwrap();
}

#[test]
fn fully_masked_manifest_is_all_pixel_labelled() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir_all(dir.path().join("images")).unwrap();
    std::fs::create_dir_all(dir.path().join("masks")).unwrap();
    let mut lines = String::new();
    for i in 0..393 {
        let id = format!("s{i:03}");
        write_pair(dir.path(), &id, (i % 5) as u8 + 1);
        let rec = serde_json::json!({
            "id": id,
            "image_ref": format!("images/{id}.png"),
            "pixel_mask_ref": format!("masks/{id}.png"),
            "patient_id": format!("p{}", i / 30),
            "source": "inhouse",
        });
        lines.push_str(&rec.to_string());
        lines.push('\n');
    }
    let path = dir.path().join("m.jsonl");
    std::fs::write(&path, lines).unwrap();
    let m = load_manifest(&path).unwrap();
    assert_eq!(m.len(), 393);
    assert_eq!(m.d_pix().len(), 393);
    assert!(m.d_img().is_empty());

    let samples = load_samples(&m, m.records.iter().take(10)).unwrap();
    assert_eq!(samples.len(), 10);
    for s in &samples {
        assert_eq!(s.image.data[15], 1.0);
        let mask = s.mask.as_ref().unwrap();
        assert_eq!(mask.foreground_area(), 4);
    }
}

#[test]
fn record_with_mask_and_label_is_rejected() {
    let recs = vec![record("a", Some("a_mask.png"), Some(2), None)];
    assert!(DatasetManifest::new(ManifestHeader::default(), recs).is_err());
}

#[test]
fn missing_files_are_reported() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    std::fs::write(&path, r#"{"id":"x","image_ref":"nope.png","image_label":1,"source":"t"}"#).unwrap();
    assert!(matches!(load_manifest(&path), Err(Error::MissingFiles(v)) if v.len() == 1));
}

#[test]
fn empty_manifest_loads() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.jsonl");
    std::fs::write(&path, "").unwrap();
    assert!(load_manifest(&path).unwrap().is_empty());
}

#[test]
fn balancing_a_large_labelled_set() {
    // Class counts of a large image-labelled corpus.
    let counts = [(1u8, 2761usize), (2, 32564), (3, 23766), (4, 35675), (5, 2000)];
    let mut recs = Vec::new();
    for (class, n) in counts {
        for i in 0..n {
            recs.push(record(&format!("c{class}-{i}"), None, Some(class), None));
        }
    }
    for i in 0..500 {
        recs.push(record(&format!("neg-{i}"), None, Some(0), None));
        recs.push(record(&format!("u-{i}"), None, None, None));
    }
    let m = DatasetManifest::new(ManifestHeader::default(), recs).unwrap();
    let b = balance_single_class(&m, 1497, 9);
    assert!(b.shortfall.is_empty());
    let mut per: BTreeMap<u8, usize> = BTreeMap::new();
    for r in &b.manifest.records {
        *per.entry(r.image_label.unwrap()).or_default() += 1;
    }
    assert_eq!(per.values().copied().collect::<Vec<_>>(), vec![1497; 5]);
    assert_eq!(b.manifest.len(), 7485);
    let again = balance_single_class(&m, 1497, 9);
    assert_eq!(again.manifest, b.manifest);
    let other = balance_single_class(&m, 1497, 10);
    assert_ne!(other.manifest, b.manifest);
}

proptest! {
    #[test]
    fn roles_partition_the_records(kinds in proptest::collection::vec(0u8..4, 0..60)) {
        let recs: Vec<SampleRecord> = kinds
            .iter()
            .enumerate()
            .map(|(i, k)| match k {
                0 => record(&format!("r{i}"), Some("m.png"), None, None),
                1 => record(&format!("r{i}"), None, Some(1 + (i % 5) as u8), None),
                2 => record(&format!("r{i}"), None, Some(0), None),
                _ => record(&format!("r{i}"), None, None, None),
            })
            .collect();
        let m = DatasetManifest::new(ManifestHeader::default(), recs).unwrap();
        let pix = m.with_role(SampleRole::Pixel).count();
        let img = m.with_role(SampleRole::Image).count();
        let unl = m.with_role(SampleRole::Unlabeled).count();
        prop_assert_eq!(pix + img + unl, m.len());
        prop_assert_eq!(pix, kinds.iter().filter(|&&k| k == 0).count());
        prop_assert_eq!(unl, kinds.iter().filter(|&&k| k == 3).count());
    }

    #[test]
    fn balancing_is_deterministic_and_capped(
        labels in proptest::collection::vec(0u8..6, 0..200),
        per_class in 0usize..30,
        seed in any::<u64>(),
    ) {
        let recs: Vec<SampleRecord> =
            labels.iter().enumerate().map(|(i, &l)| record(&format!("r{i}"), None, Some(l), None)).collect();
        let m = DatasetManifest::new(ManifestHeader::default(), recs).unwrap();
        let a = balance_single_class(&m, per_class, seed);
        let b = balance_single_class(&m, per_class, seed);
        prop_assert_eq!(&a.manifest, &b.manifest);
        for class in 1..=5u8 {
            let n = a.manifest.records.iter().filter(|r| r.image_label == Some(class)).count();
            let avail = labels.iter().filter(|&&l| l == class).count();
            prop_assert_eq!(n, avail.min(per_class));
        }
        prop_assert!(a.manifest.records.iter().all(|r| r.image_label.is_some_and(|l| l >= 1)));
    }
}
