//! Dataset ingestion, z-score normalization, stratified folds and the fixed
//! validation sample.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::points::Points;

pub const POSITIVE: i8 = 1;
pub const NEGATIVE: i8 = -1;

/// Points with ±1 labels, per-point volumes and stable ids.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledDataset {
    points: Points,
    labels: Vec<i8>,
    volumes: Vec<f64>,
    ids: Vec<usize>,
}

impl LabeledDataset {
    pub fn new(points: Points, labels: Vec<i8>, volumes: Vec<f64>, ids: Vec<usize>) -> Result<Self> {
        let n = points.len();
        if labels.len() != n || volumes.len() != n || ids.len() != n {
            return Err(Error::invalid(format!(
                "length mismatch: {n} points, {} labels, {} volumes, {} ids",
                labels.len(),
                volumes.len(),
                ids.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l != POSITIVE && l != NEGATIVE) {
            return Err(Error::invalid(format!("label {l} is not +1 or -1")));
        }
        if let Some(v) = volumes.iter().find(|&&v| !(v > 0.0 && v.is_finite())) {
            return Err(Error::invalid(format!("volume {v} is not positive")));
        }
        let mut sorted = ids.clone();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::invalid("duplicate point ids"));
        }
        Ok(Self {
            points,
            labels,
            volumes,
            ids,
        })
    }

    /// Unit volumes and ids `0..n`.
    pub fn from_finest(points: Points, labels: Vec<i8>) -> Result<Self> {
        let n = points.len();
        Self::new(points, labels, vec![1.0; n], (0..n).collect())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.points.dim()
    }

    pub fn points(&self) -> &Points {
        &self.points
    }

    pub fn labels(&self) -> &[i8] {
        &self.labels
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn ids(&self) -> &[usize] {
        &self.ids
    }

    pub fn count(&self, label: i8) -> usize {
        self.labels.iter().filter(|&&l| l == label).count()
    }

    pub fn class_indices(&self, label: i8) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == label).collect()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            points: self.points.select(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            volumes: indices.iter().map(|&i| self.volumes[i]).collect(),
            ids: indices.iter().map(|&i| self.ids[i]).collect(),
        }
    }

    /// Same labels, volumes and ids with different coordinates.
    pub fn with_points(&self, points: Points) -> Result<Self> {
        Self::new(points, self.labels.clone(), self.volumes.clone(), self.ids.clone())
    }

    pub fn require_both_classes(&self) -> Result<()> {
        let pos = self.count(POSITIVE);
        let neg = self.len() - pos;
        if pos == 0 || neg == 0 {
            return Err(Error::ClassCount(usize::from(pos > 0) + usize::from(neg > 0)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Libsvm,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CsvOptions {
    pub has_header: bool,
    /// Column holding the label; negative values count from the end, `None`
    /// means the file is unlabeled.
    pub label_column: Option<i64>,
}

impl Default for CsvOptions {
    fn default() -> Self {
        Self {
            has_header: false,
            label_column: Some(-1),
        }
    }
}

/// Parsed file contents before the labels are mapped onto ±1.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub points: Points,
    pub labels: Option<Vec<String>>,
}

impl RawTable {
    /// Zero-extend (sparse files may omit trailing features) or reject when
    /// the file has more features than `dim`.
    pub fn conform_to(self, dim: usize) -> Result<Self> {
        let have = self.points.dim();
        if have == dim {
            return Ok(self);
        }
        if have > dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: have,
            });
        }
        let mut pts = Points::with_capacity(dim, self.points.len());
        let mut row = vec![0.0; dim];
        for r in self.points.rows() {
            row[..have].copy_from_slice(r);
            pts.push(&row)?;
        }
        Ok(Self {
            points: pts,
            labels: self.labels,
        })
    }
}

/// Which original label became `+1`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelMap {
    pub positive: String,
    pub negative: String,
}

impl LabelMap {
    pub fn map(&self, raw: &str) -> Option<i8> {
        let key = canonical_label(raw);
        if key == self.positive {
            Some(POSITIVE)
        } else if key == self.negative {
            Some(NEGATIVE)
        } else {
            None
        }
    }

    pub fn original(&self, label: i8) -> &str {
        if label == POSITIVE {
            &self.positive
        } else {
            &self.negative
        }
    }
}

fn canonical_label(raw: &str) -> String {
    let t = raw.trim();
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => format!("{v}"),
        _ => t.to_string(),
    }
}

fn parse_err(path: &Path, line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

pub fn read_table(path: &Path, format: DataFormat, csv: &CsvOptions) -> Result<RawTable> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match format {
        DataFormat::Libsvm => parse_libsvm(path, &text),
        DataFormat::Csv => parse_csv(path, &text, csv),
    }
}

fn parse_libsvm(path: &Path, text: &str) -> Result<RawTable> {
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::new();
    let mut labels = Vec::new();
    let mut dim = 0usize;
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let mut tokens = line.split_whitespace();
        let label = tokens.next().expect("non-empty line has a token");
        if label.contains(':') {
            return Err(parse_err(path, lineno, "missing label"));
        }
        let mut entries = Vec::new();
        for tok in tokens {
            let (idx, val) = tok
                .split_once(':')
                .ok_or_else(|| parse_err(path, lineno, format!("expected index:value, got {tok:?}")))?;
            let idx: usize = idx
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad feature index {idx:?}")))?;
            if idx == 0 {
                return Err(parse_err(path, lineno, "feature indices are 1-based"));
            }
            let val: f64 = val
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad feature value {val:?}")))?;
            if !val.is_finite() {
                return Err(parse_err(path, lineno, "non-finite feature value"));
            }
            dim = dim.max(idx);
            entries.push((idx - 1, val));
        }
        labels.push(label.to_string());
        rows.push(entries);
    }
    let mut points = Points::with_capacity(dim, rows.len());
    let mut dense = vec![0.0; dim];
    for entries in rows {
        dense.iter_mut().for_each(|x| *x = 0.0);
        for (i, v) in entries {
            dense[i] = v;
        }
        points.push(&dense)?;
    }
    Ok(RawTable {
        points,
        labels: Some(labels),
    })
}

fn parse_csv(path: &Path, text: &str, opts: &CsvOptions) -> Result<RawTable> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.has_header)
        .flexible(true)
        .from_reader(text.as_bytes());
    let mut points: Option<Points> = None;
    let mut labels = opts.label_column.map(|_| Vec::new());
    let mut row = Vec::new();
    for (k, record) in reader.records().enumerate() {
        let lineno = k + 1 + usize::from(opts.has_header);
        let record = record.map_err(|e| parse_err(path, lineno, e.to_string()))?;
        let width = record.len();
        let label_col = match opts.label_column {
            Some(c) if c < 0 => {
                let back = c.unsigned_abs() as usize;
                if back > width {
                    return Err(parse_err(path, lineno, "label column out of range"));
                }
                Some(width - back)
            }
            Some(c) => {
                let c = c as usize;
                if c >= width {
                    return Err(parse_err(path, lineno, "label column out of range"));
                }
                Some(c)
            }
            None => None,
        };
        row.clear();
        for (c, field) in record.iter().enumerate() {
            if Some(c) == label_col {
                labels.as_mut().expect("labeled").push(field.trim().to_string());
                continue;
            }
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(path, lineno, format!("bad value {field:?} in column {c}")))?;
            if !v.is_finite() {
                return Err(parse_err(path, lineno, "non-finite feature value"));
            }
            row.push(v);
        }
        let pts = points.get_or_insert_with(|| Points::with_capacity(row.len(), 0));
        pts.push(&row)
            .map_err(|_| parse_err(path, lineno, format!("expected {} features, got {}", pts.dim(), row.len())))?;
    }
    Ok(RawTable {
        points: points.unwrap_or_else(|| Points::with_capacity(0, 0)),
        labels,
    })
}

/// Map raw labels onto ±1 with the rarer class as `+1`. On a tie the label
/// that sorts last becomes `+1`.
pub fn infer_label_map(raw: &[String]) -> Result<LabelMap> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for l in raw {
        *counts.entry(canonical_label(l)).or_default() += 1;
    }
    if counts.len() != 2 {
        return Err(Error::ClassCount(counts.len()));
    }
    let mut it = counts.into_iter();
    let (a, na) = it.next().expect("two classes");
    let (b, nb) = it.next().expect("two classes");
    // keys sort numerically only when they share a width, so order numeric
    // labels by value
    let (lo, nlo, hi, nhi) = match (a.parse::<f64>(), b.parse::<f64>()) {
        (Ok(x), Ok(y)) if y < x => (b, nb, a, na),
        _ => (a, na, b, nb),
    };
    Ok(if nlo < nhi {
        LabelMap {
            positive: lo,
            negative: hi,
        }
    } else {
        LabelMap {
            positive: hi,
            negative: lo,
        }
    })
}

pub fn load_dataset(path: &Path, format: DataFormat, csv: &CsvOptions) -> Result<(LabeledDataset, LabelMap)> {
    let table = read_table(path, format, csv)?;
    let raw = table
        .labels
        .ok_or_else(|| Error::invalid(format!("{} has no label column", path.display())))?;
    if raw.is_empty() {
        return Err(Error::invalid(format!("{} contains no rows", path.display())));
    }
    let map = infer_label_map(&raw)?;
    let labels = raw.iter().map(|l| map.map(l).expect("label in map")).collect();
    Ok((LabeledDataset::from_finest(table.points, labels)?, map))
}

/// Per-feature mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub stddev: Vec<f64>,
}

impl NormalizationStats {
    pub fn fit(points: &Points) -> Result<Self> {
        let n = points.len();
        if n < 2 {
            return Err(Error::invalid("z-score normalization needs at least two points"));
        }
        let d = points.dim();
        let mut mean = vec![0.0; d];
        for r in points.rows() {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut var = vec![0.0; d];
        for r in points.rows() {
            for ((v, x), m) in var.iter_mut().zip(r).zip(&mean) {
                *v += (x - m) * (x - m);
            }
        }
        let stddev = var
            .into_iter()
            .map(|v| {
                let s = (v / n as f64).sqrt();
                if s > 1e-12 * (1.0 + s) && s.is_finite() {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Ok(Self { mean, stddev })
    }

    pub fn apply(&self, points: &Points) -> Result<Points> {
        if points.dim() != self.mean.len() {
            return Err(Error::DimensionMismatch {
                expected: self.mean.len(),
                actual: points.dim(),
            });
        }
        let mut out = points.clone();
        for i in 0..out.len() {
            for ((x, m), s) in out.row_mut(i).iter_mut().zip(&self.mean).zip(&self.stddev) {
                *x = (*x - m) / s;
            }
        }
        Ok(out)
    }
}

pub fn zscore_normalize(ds: &LabeledDataset) -> Result<(LabeledDataset, NormalizationStats)> {
    let stats = NormalizationStats::fit(ds.points())?;
    let normalized = ds.with_points(stats.apply(ds.points())?)?;
    Ok((normalized, stats))
}

/// Stratified assignment of every row to one of `fold_count` test folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitPlan {
    pub fold_count: usize,
    pub folds: Vec<usize>,
    pub seed: u64,
}

impl SplitPlan {
    pub fn test_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn train_indices(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }
}

pub fn make_split_plan(ds: &LabeledDataset, k: usize, seed: u64) -> Result<SplitPlan> {
    if k < 2 {
        return Err(Error::invalid(format!("fold count must be at least 2, got {k}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![0; ds.len()];
    for label in [POSITIVE, NEGATIVE] {
        let mut members = ds.class_indices(label);
        if members.len() < k {
            return Err(Error::invalid(format!(
                "class {label:+} has {} points, fewer than {k} folds",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            folds[i] = pos % k;
        }
    }
    Ok(SplitPlan {
        fold_count: k,
        folds,
        seed,
    })
}

/// Rows of the finest training fold held out for model selection at every level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationSample {
    pub indices: Vec<usize>,
    pub minority_ratio: f64,
    pub majority_ratio: f64,
}

impl ValidationSample {
    /// The rows of `train` not in the sample.
    pub fn complement(&self, n: usize) -> Vec<usize> {
        let mut taken = vec![false; n];
        for &i in &self.indices {
            taken[i] = true;
        }
        (0..n).filter(|&i| !taken[i]).collect()
    }
}

pub fn sample_validation(train: &LabeledDataset, r_min: f64, r_maj: f64, seed: u64) -> Result<ValidationSample> {
    for r in [r_min, r_maj] {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::invalid(format!("validation ratio {r} outside (0, 1]")));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut indices = Vec::new();
    for (label, ratio) in [(POSITIVE, r_min), (NEGATIVE, r_maj)] {
        let mut members = train.class_indices(label);
        if members.is_empty() {
            return Err(Error::ClassCount(1));
        }
        let take = ((ratio * members.len() as f64).ceil() as usize).clamp(1, members.len());
        let (chosen, _) = members.partial_shuffle(&mut rng, take);
        indices.extend_from_slice(chosen);
    }
    indices.sort_unstable();
    Ok(ValidationSample {
        indices,
        minority_ratio: r_min,
        majority_ratio: r_maj,
    })
}
