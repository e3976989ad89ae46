//! Overlap metrics, aggregation and report rendering.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datamodel::SegmentationMask;
use crate::error::{Error, IoContext, Result};
use crate::util::write_atomic;

/// Which pixels count as foreground.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum ForegroundRule {
    /// Any non-background class.
    #[default]
    AnyBleed,
    /// A single class index.
    Class(u8),
}

impl ForegroundRule {
    #[inline]
    fn hit(self, v: u8) -> bool {
        match self {
            ForegroundRule::AnyBleed => v != 0,
            ForegroundRule::Class(c) => v == c,
        }
    }
}

/// Values used where a ratio's denominator vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmptyConventions {
    /// Every metric when prediction and ground truth are both empty.
    pub both_empty: f64,
    /// Precision with an empty prediction, recall with an empty ground
    /// truth, when the other side is not empty.
    pub undefined: f64,
}

impl Default for EmptyConventions {
    fn default() -> Self {
        Self {
            both_empty: 1.0,
            undefined: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricResult {
    pub dice: f64,
    pub iou: f64,
    pub precision: f64,
    pub recall: f64,
}

impl MetricResult {
    pub fn get(&self, metric: Metric) -> f64 {
        match metric {
            Metric::Dice => self.dice,
            Metric::Iou => self.iou,
            Metric::Precision => self.precision,
            Metric::Recall => self.recall,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Dice,
    Iou,
    Precision,
    Recall,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Dice, Metric::Iou, Metric::Precision, Metric::Recall];

    pub fn name(self) -> &'static str {
        match self {
            Metric::Dice => "dice",
            Metric::Iou => "iou",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
        }
    }
}

/// Foreground pixel counts of a prediction/ground-truth pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PixelCounts {
    pub pred: u64,
    pub gt: u64,
    pub intersection: u64,
}

impl PixelCounts {
    pub fn from_masks(pred: &SegmentationMask, gt: &SegmentationMask, rule: ForegroundRule) -> Result<Self> {
        if !pred.same_shape(gt.height, gt.width) {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height, pred.width, gt.height, gt.width
            )));
        }
        let mut c = PixelCounts::default();
        for (&p, &g) in pred.data.iter().zip(&gt.data) {
            let (p, g) = (rule.hit(p), rule.hit(g));
            c.pred += u64::from(p);
            c.gt += u64::from(g);
            c.intersection += u64::from(p && g);
        }
        Ok(c)
    }

    pub fn add(&mut self, other: &PixelCounts) {
        self.pred += other.pred;
        self.gt += other.gt;
        self.intersection += other.intersection;
    }

    pub fn metrics(&self, conv: &EmptyConventions) -> MetricResult {
        if self.pred == 0 && self.gt == 0 {
            let v = conv.both_empty;
            return MetricResult { dice: v, iou: v, precision: v, recall: v };
        }
        let i = self.intersection as f64;
        let (p, g) = (self.pred as f64, self.gt as f64);
        let ratio = |num: f64, den: f64| if den > 0.0 { num / den } else { conv.undefined };
        MetricResult {
            dice: 2.0 * i / (p + g),
            iou: i / (p + g - i),
            precision: ratio(i, p),
            recall: ratio(i, g),
        }
    }
}

pub fn binary_metrics(pred: &SegmentationMask, gt: &SegmentationMask, rule: ForegroundRule) -> Result<MetricResult> {
    Ok(PixelCounts::from_masks(pred, gt, rule)?.metrics(&EmptyConventions::default()))
}

/// Sums counts per patient key.
pub fn pool_by_patient<'a>(items: impl IntoIterator<Item = (&'a str, PixelCounts)>) -> BTreeMap<String, PixelCounts> {
    let mut out: BTreeMap<String, PixelCounts> = BTreeMap::new();
    for (key, c) in items {
        out.entry(key.to_string()).or_default().add(&c);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    /// Lower of the two middle values for even counts.
    pub median: f64,
    /// Population standard deviation.
    pub std: f64,
    pub n: usize,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    if values.is_empty() {
        return Err(Error::Report("cannot aggregate an empty list".into()));
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(Summary {
        mean,
        median: sorted[(n - 1) / 2],
        std: var.sqrt(),
        n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Level {
    Slice,
    Patient,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Before,
    After,
}

impl Level {
    pub fn name(self) -> &'static str {
        match self {
            Level::Slice => "slice",
            Level::Patient => "patient",
        }
    }
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Before => "before",
            Phase::After => "after",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummaries {
    pub dice: Summary,
    pub iou: Summary,
    pub precision: Summary,
    pub recall: Summary,
}

impl MetricSummaries {
    pub fn get(&self, metric: Metric) -> &Summary {
        match metric {
            Metric::Dice => &self.dice,
            Metric::Iou => &self.iou,
            Metric::Precision => &self.precision,
            Metric::Recall => &self.recall,
        }
    }
}

pub fn aggregate(results: &[MetricResult]) -> Result<MetricSummaries> {
    let col = |m: Metric| summarize(&results.iter().map(|r| r.get(m)).collect::<Vec<_>>());
    Ok(MetricSummaries {
        dice: col(Metric::Dice)?,
        iou: col(Metric::Iou)?,
        precision: col(Metric::Precision)?,
        recall: col(Metric::Recall)?,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub dataset: String,
    pub phase: Phase,
    pub level: Level,
    pub metrics: MetricSummaries,
}

/// Metrics of one slice or patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnitResult {
    pub dataset: String,
    pub phase: Phase,
    pub level: Level,
    pub unit_id: String,
    pub metrics: MetricResult,
}

/// Counts for one evaluated slice.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceCounts {
    pub sample_id: String,
    pub patient_id: Option<String>,
    pub counts: PixelCounts,
}

/// Report rows and per-unit results for one dataset in one phase.
/// Patient-level results are produced when any slice names a patient;
/// slices without one form singleton patients.
pub fn phase_results(
    dataset: &str,
    phase: Phase,
    slices: &[SliceCounts],
    conv: &EmptyConventions,
) -> Result<(Vec<ReportRow>, Vec<UnitResult>)> {
    let mut rows = Vec::new();
    let mut units = Vec::new();
    let mut push_level = |level: Level, items: Vec<(String, PixelCounts)>| -> Result<()> {
        let results: Vec<MetricResult> = items.iter().map(|(_, c)| c.metrics(conv)).collect();
        rows.push(ReportRow {
            dataset: dataset.to_string(),
            phase,
            level,
            metrics: aggregate(&results)?,
        });
        units.extend(items.into_iter().zip(results).map(|((id, _), m)| UnitResult {
            dataset: dataset.to_string(),
            phase,
            level,
            unit_id: id,
            metrics: m,
        }));
        Ok(())
    };
    push_level(Level::Slice, slices.iter().map(|s| (s.sample_id.clone(), s.counts)).collect())?;
    if slices.iter().any(|s| s.patient_id.is_some()) {
        let pooled = pool_by_patient(
            slices
                .iter()
                .map(|s| (s.patient_id.as_deref().unwrap_or(&s.sample_id), s.counts)),
        );
        push_level(Level::Patient, pooled.into_iter().collect())?;
    }
    Ok((rows, units))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Up,
    Down,
    Flat,
}

/// Changes smaller than half a unit in the third decimal are flat.
pub const FLAT_TOLERANCE: f64 = 0.0005;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MedianChange {
    pub dataset: String,
    pub level: Level,
    pub metric: Metric,
    pub before: f64,
    pub after: f64,
    pub change: f64,
    pub direction: Direction,
}

pub fn median_change(before: f64, after: f64) -> (f64, Direction) {
    let change = after - before;
    let direction = if change.abs() < FLAT_TOLERANCE {
        Direction::Flat
    } else if change > 0.0 {
        Direction::Up
    } else {
        Direction::Down
    };
    (change, direction)
}

/// `mean (median) ± std` to three decimals.
pub fn format_summary(s: &Summary) -> String {
    format!("{:.3} ({:.3}) ± {:.3}", s.mean, s.median, s.std)
}

pub fn format_change(change: f64, direction: Direction) -> String {
    match direction {
        Direction::Up => format!("+{:.3} ↑", change.abs()),
        Direction::Down => format!("-{:.3} ↓", change.abs()),
        Direction::Flat => format!("{:.3} →", 0.0),
    }
}

/// Pairs rows of the two phases and computes every median change.
pub fn median_changes(before: &[ReportRow], after: &[ReportRow]) -> Result<Vec<MedianChange>> {
    let key = |r: &ReportRow| (r.dataset.clone(), r.level);
    let b: BTreeMap<_, _> = before.iter().map(|r| (key(r), r)).collect();
    let a: BTreeMap<_, _> = after.iter().map(|r| (key(r), r)).collect();
    let bk: BTreeSet<_> = b.keys().collect();
    let ak: BTreeSet<_> = a.keys().collect();
    if bk != ak || b.len() != before.len() || a.len() != after.len() {
        return Err(Error::Report(format!(
            "phases cover different datasets: before {:?}, after {:?}",
            bk, ak
        )));
    }
    let mut out = Vec::new();
    for (k, rb) in &b {
        let ra = a[k];
        for m in Metric::ALL {
            let (change, direction) = median_change(rb.metrics.get(m).median, ra.metrics.get(m).median);
            out.push(MedianChange {
                dataset: k.0.clone(),
                level: k.1,
                metric: m,
                before: rb.metrics.get(m).median,
                after: ra.metrics.get(m).median,
                change,
                direction,
            });
        }
    }
    Ok(out)
}

fn render_table(rows: &[Vec<String>]) -> String {
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(i, s)| format!("{s}{}", " ".repeat(widths[i] - s.chars().count())))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

/// Plain-text rendering of rows and median changes.
pub fn render_report(rows: &[ReportRow], changes: &[MedianChange]) -> String {
    let mut table = vec![["dataset", "level", "phase", "n", "dice", "iou", "precision", "recall"]
        .map(String::from)
        .to_vec()];
    let mut sorted: Vec<&ReportRow> = rows.iter().collect();
    sorted.sort_by(|x, y| (&x.dataset, x.level, x.phase).cmp(&(&y.dataset, y.level, y.phase)));
    for r in sorted {
        let mut line = vec![
            r.dataset.clone(),
            r.level.name().into(),
            r.phase.name().into(),
            r.metrics.dice.n.to_string(),
        ];
        line.extend(Metric::ALL.iter().map(|&m| format_summary(r.metrics.get(m))));
        table.push(line);
    }
    let mut out = render_table(&table);
    if !changes.is_empty() {
        let mut grouped: BTreeMap<(String, Level), Vec<&MedianChange>> = BTreeMap::new();
        for c in changes {
            grouped.entry((c.dataset.clone(), c.level)).or_default().push(c);
        }
        let mut table = vec![["dataset", "level", "median change", "dice", "iou", "precision", "recall"]
            .map(String::from)
            .to_vec()];
        for ((dataset, level), cs) in grouped {
            let mut line = vec![dataset, level.name().into(), String::new()];
            for m in Metric::ALL {
                let c = cs.iter().find(|c| c.metric == m);
                line.push(c.map_or_else(String::new, |c| format_change(c.change, c.direction)));
            }
            table.push(line);
        }
        out.push('\n');
        out.push_str(&render_table(&table));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxplotSeries {
    pub dataset: String,
    pub phase: Phase,
    pub level: Level,
    pub metric: Metric,
    pub values: Vec<f64>,
}

pub fn boxplot_series(units: &[UnitResult]) -> Vec<BoxplotSeries> {
    let mut map: BTreeMap<(String, Phase, Level, Metric), Vec<f64>> = BTreeMap::new();
    for u in units {
        for m in Metric::ALL {
            map.entry((u.dataset.clone(), u.phase, u.level, m))
                .or_default()
                .push(u.metrics.get(m));
        }
    }
    map.into_iter()
        .map(|((dataset, phase, level, metric), values)| BoxplotSeries { dataset, phase, level, metric, values })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub rows: Vec<ReportRow>,
    pub median_changes: Vec<MedianChange>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub table: PathBuf,
    pub json: PathBuf,
    pub boxplot: PathBuf,
    pub per_unit: PathBuf,
}

/// Writes `report.txt`, `report.json`, `boxplot.json` and `per_unit.csv`
/// into `out_dir`.
pub fn emit_report(
    before: &[ReportRow],
    after: &[ReportRow],
    units: &[UnitResult],
    out_dir: &Path,
) -> Result<ReportFiles> {
    let changes = median_changes(before, after)?;
    let rows: Vec<ReportRow> = before.iter().chain(after).cloned().collect();
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let files = ReportFiles {
        table: out_dir.join("report.txt"),
        json: out_dir.join("report.json"),
        boxplot: out_dir.join("boxplot.json"),
        per_unit: out_dir.join("per_unit.csv"),
    };
    write_atomic(&files.table, render_report(&rows, &changes).as_bytes())?;
    let report = Report { rows, median_changes: changes };
    write_atomic(&files.json, serde_json::to_string_pretty(&report)?.as_bytes())?;
    write_atomic(&files.boxplot, serde_json::to_string_pretty(&boxplot_series(units))?.as_bytes())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["dataset", "phase", "level", "unit_id", "dice", "iou", "precision", "recall"])
        .map_err(|e| Error::Serde(e.to_string()))?;
    for u in units {
        let mut rec = vec![u.dataset.clone(), u.phase.name().into(), u.level.name().into(), u.unit_id.clone()];
        rec.extend(Metric::ALL.iter().map(|&m| {
            let mut s = String::new();
            let _ = write!(s, "{}", u.metrics.get(m));
            s
        }));
        w.write_record(&rec).map_err(|e| Error::Serde(e.to_string()))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Serde(e.to_string()))?;
    write_atomic(&files.per_unit, &bytes)?;
    Ok(files)
}
