//! Labeled test sets, confusion matrices, and per-class / macro F1.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::encoder::Encoder;
use crate::error::{Error, Result};
use crate::knn::{batch_classify, ClassifierConfig};
use crate::par::Execution;
use crate::raster::Raster;
use crate::store::ReferenceIndex;

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetItem {
    pub path: PathBuf,
    pub label: String,
    pub image: Raster,
}

impl AsRef<Raster> for DatasetItem {
    fn as_ref(&self) -> &Raster {
        &self.image
    }
}

/// Images laid out as `root/<label>/<file>.png`, sorted by label then file name.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub root: PathBuf,
    pub items: Vec<DatasetItem>,
    /// Files that failed to decode and were skipped (permissive mode only).
    pub skipped: Vec<(PathBuf, String)>,
}

impl LabeledDataset {
    pub fn labels(&self) -> BTreeSet<&str> {
        self.items.iter().map(|i| i.label.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_png(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Loads every PNG one directory level below `root`. Deeper directories are
/// ignored with a warning. An undecodable image is fatal unless `permissive`,
/// in which case it is skipped and recorded.
pub fn load_dataset(root: impl AsRef<Path>, permissive: bool) -> Result<LabeledDataset> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(Error::Dataset(format!("{} is not a directory", root.display())));
    }
    let mut items = Vec::new();
    let mut skipped = Vec::new();
    for class_dir in sorted_entries(root)? {
        if !class_dir.is_dir() {
            continue;
        }
        let Some(label) = class_dir.file_name().and_then(|n| n.to_str()).map(str::to_owned) else {
            warn!("skipping non-UTF-8 directory {}", class_dir.display());
            continue;
        };
        for path in sorted_entries(&class_dir)? {
            if path.is_dir() {
                warn!("ignoring nested directory {}", path.display());
                continue;
            }
            if !is_png(&path) {
                continue;
            }
            match Raster::read_png(&path) {
                Ok(image) => items.push(DatasetItem { path, label: label.clone(), image }),
                Err(e) if permissive => {
                    warn!("skipping {}: {e}", path.display());
                    skipped.push((path, e.to_string()));
                }
                Err(e) => return Err(e),
            }
        }
    }
    if items.is_empty() {
        return Err(Error::Dataset(format!("{} contains no labeled PNG images", root.display())));
    }
    Ok(LabeledDataset { root: root.to_path_buf(), items, skipped })
}

/// Rows are true labels, columns predicted labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    /// Builds the matrix over the sorted union of true and predicted labels.
    pub fn from_pairs<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Self {
        let pairs: Vec<(&str, &str)> = pairs.into_iter().collect();
        let labels: Vec<String> = pairs
            .iter()
            .flat_map(|(t, p)| [*t, *p])
            .collect::<BTreeSet<_>>()
            .into_iter()
            .map(str::to_owned)
            .collect();
        let pos: BTreeMap<&str, usize> = labels.iter().enumerate().map(|(i, l)| (l.as_str(), i)).collect();
        let mut counts = vec![vec![0u64; labels.len()]; labels.len()];
        for (t, p) in &pairs {
            counts[pos[t]][pos[p]] += 1;
        }
        Self { labels, counts }
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn row_sum(&self, i: usize) -> u64 {
        self.counts[i].iter().sum()
    }

    pub fn column_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: BTreeMap<String, ClassMetrics>,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
    pub item_count: u64,
}

/// `num / den`, with 0/0 defined as 0.
fn ratio(num: f64, den: f64) -> f64 {
    if den == 0.0 {
        0.0
    } else {
        num / den
    }
}

impl MetricsReport {
    pub fn from_confusion(confusion: ConfusionMatrix) -> Self {
        let mut per_class = BTreeMap::new();
        for (i, label) in confusion.labels.iter().enumerate() {
            let tp = confusion.counts[i][i] as f64;
            let fp = confusion.column_sum(i) as f64 - tp;
            let fn_ = confusion.row_sum(i) as f64 - tp;
            let precision = ratio(tp, tp + fp);
            let recall = ratio(tp, tp + fn_);
            let f1 = ratio(2.0 * precision * recall, precision + recall);
            per_class.insert(label.clone(), ClassMetrics { precision, recall, f1 });
        }
        let macro_f1 = ratio(per_class.values().map(|m| m.f1).sum(), per_class.len() as f64);
        let item_count = confusion.total();
        Self { per_class, macro_f1, confusion, item_count }
    }

    /// Scores parallel slices of true and predicted labels.
    pub fn score<S: AsRef<str>>(truth: &[S], predicted: &[S]) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Dataset(format!("{} truths vs {} predictions", truth.len(), predicted.len())));
        }
        let pairs = truth.iter().zip(predicted).map(|(t, p)| (t.as_ref(), p.as_ref()));
        Ok(Self::from_confusion(ConfusionMatrix::from_pairs(pairs)))
    }

    fn mean_of(&self, f: impl Fn(&ClassMetrics) -> f64) -> f64 {
        ratio(self.per_class.values().map(f).sum(), self.per_class.len() as f64)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// One row per class plus a `macro` row, four decimals.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let ser = |e: csv::Error| Error::Serialize(e.to_string());
        w.write_record(["label", "precision", "recall", "f1"]).map_err(ser)?;
        let row = |label: &str, p: f64, r: f64, f: f64| [label.to_owned(), format!("{p:.4}"), format!("{r:.4}"), format!("{f:.4}")];
        for (label, m) in &self.per_class {
            w.write_record(row(label, m.precision, m.recall, m.f1)).map_err(ser)?;
        }
        w.write_record(row("macro", self.mean_of(|m| m.precision), self.mean_of(|m| m.recall), self.macro_f1))
            .map_err(ser)?;
        let bytes = w.into_inner().map_err(|e| Error::Serialize(e.to_string()))?;
        String::from_utf8(bytes).map_err(|e| Error::Serialize(e.to_string()))
    }

    pub fn render(&self, format: ReportFormat) -> Result<String> {
        match format {
            ReportFormat::Json => self.to_json(),
            ReportFormat::Csv => self.to_csv(),
        }
    }

    pub fn write(&self, path: impl AsRef<Path>, format: ReportFormat) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.render(format)?).map_err(|e| Error::io(path, e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

/// Per-item outcome of an evaluation run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ItemOutcome {
    pub path: PathBuf,
    pub truth: String,
    pub predicted: String,
}

/// Encodes and classifies every dataset item, then scores the predictions.
pub fn evaluate(
    dataset: &LabeledDataset,
    index: &ReferenceIndex,
    encoder: &Encoder,
    config: &ClassifierConfig,
    exec: Execution,
) -> Result<(MetricsReport, Vec<ItemOutcome>)> {
    if encoder.dim() != index.dim() {
        return Err(Error::DimMismatch { expected: index.dim(), actual: encoder.dim() });
    }
    let embeddings = encoder.encode_batch(&dataset.items)?;
    let predictions = batch_classify(&embeddings, index, config, exec)
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let outcomes: Vec<ItemOutcome> = dataset
        .items
        .iter()
        .zip(predictions)
        .map(|(item, p)| ItemOutcome { path: item.path.clone(), truth: item.label.clone(), predicted: p.label })
        .collect();
    let truth: Vec<&str> = outcomes.iter().map(|o| o.truth.as_str()).collect();
    let predicted: Vec<&str> = outcomes.iter().map(|o| o.predicted.as_str()).collect();
    Ok((MetricsReport::score(&truth, &predicted)?, outcomes))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write_png(dir: &Path, name: &str, color: [u8; 3]) {
        fs::create_dir_all(dir).unwrap();
        Raster::filled(4, 4, color).write_png(dir.join(name)).unwrap();
    }

    #[test]
    fn loads_sorted_layout() {
        let tmp = tempfile::tempdir().unwrap();
        write_png(&tmp.path().join("B"), "2.png", [0; 3]);
        write_png(&tmp.path().join("B"), "1.png", [0; 3]);
        write_png(&tmp.path().join("B"), "3.png", [0; 3]);
        write_png(&tmp.path().join("A"), "z.png", [0; 3]);
        write_png(&tmp.path().join("A"), "a.png", [0; 3]);
        write_png(&tmp.path().join("A/nested"), "x.png", [0; 3]);
        fs::write(tmp.path().join("A/notes.txt"), "hi").unwrap();
        let ds = load_dataset(tmp.path(), false).unwrap();
        assert_eq!(ds.len(), 5);
        let names: Vec<String> = ds.items.iter().map(|i| format!("{}/{}", i.label, i.path.file_name().unwrap().to_str().unwrap())).collect();
        assert_eq!(names, ["A/a.png", "A/z.png", "B/1.png", "B/2.png", "B/3.png"]);
        assert_eq!(ds.labels().into_iter().collect::<Vec<_>>(), ["A", "B"]);
    }

    #[test]
    fn empty_root_is_an_error() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(matches!(load_dataset(tmp.path(), false), Err(Error::Dataset(_))));
        assert!(load_dataset(tmp.path().join("missing"), false).is_err());
    }

    #[test]
    fn undecodable_image_strict_vs_permissive() {
        let tmp = tempfile::tempdir().unwrap();
        write_png(&tmp.path().join("A"), "ok.png", [1; 3]);
        fs::write(tmp.path().join("A/bad.png"), b"garbage").unwrap();
        assert!(matches!(load_dataset(tmp.path(), false), Err(Error::ImageDecode(_))));
        let ds = load_dataset(tmp.path(), true).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.skipped.len(), 1);
    }

    #[test]
    fn ninety_ten_ten_pattern() {
        let mut truth = Vec::new();
        let mut pred = Vec::new();
        for (t, other) in [("A", "B"), ("B", "A")] {
            for i in 0..100 {
                truth.push(t);
                pred.push(if i < 90 { t } else { other });
            }
        }
        let r = MetricsReport::score(&truth, &pred).unwrap();
        for m in r.per_class.values() {
            assert!((m.precision - 0.9).abs() < 1e-12 && (m.recall - 0.9).abs() < 1e-12 && (m.f1 - 0.9).abs() < 1e-12);
        }
        assert_eq!(r.item_count, 200);
    }

    #[test]
    fn never_predicted_class_scores_zero() {
        let r = MetricsReport::score(&["A", "A", "B"], &["A", "A", "A"]).unwrap();
        assert_eq!(r.per_class["B"], ClassMetrics { precision: 0.0, recall: 0.0, f1: 0.0 });
        assert!((r.macro_f1 - r.per_class["A"].f1 / 2.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_predictions() {
        let labels = ["A", "B", "C", "A"];
        let r = MetricsReport::score(&labels, &labels).unwrap();
        assert!(r.per_class.values().all(|m| m.f1 == 1.0));
        assert_eq!(r.macro_f1, 1.0);
    }

    #[test]
    fn report_formats() {
        let r = MetricsReport::score(&["A", "A", "B", "B"], &["A", "B", "B", "B"]).unwrap();
        let json = r.to_json().unwrap();
        let value: serde_json::Value = serde_json::from_str(&json).unwrap();
        for key in ["per_class", "macro_f1", "confusion", "item_count"] {
            assert!(value.get(key).is_some(), "{key}");
        }
        assert_eq!(MetricsReport::from_json(&json).unwrap(), r);
        let csv = r.to_csv().unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "label,precision,recall,f1");
        assert_eq!(lines[1], "A,1.0000,0.5000,0.6667");
        assert_eq!(lines[2], "B,0.6667,1.0000,0.8000");
        assert!(lines[3].starts_with("macro,0.8333,0.7500,0.7333"));
        assert_eq!(lines.len(), 4);
    }
}
