//! JSON-lines traces and the per-level quality tables built from them.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::refinement::LevelReport;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub fold: usize,
    #[serde(flatten)]
    pub report: LevelReport,
}

pub fn write_trace<W: Write>(mut out: W, records: &[TraceRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n").map_err(|e| Error::io("<trace>", e))?;
    }
    Ok(())
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let rec = serde_json::from_str(line).map_err(|e| Error::Malformed {
            path: path.to_path_buf(),
            message: format!("line {}: {e}", i + 1),
        })?;
        out.push(rec);
    }
    if out.is_empty() {
        return Err(Error::Malformed {
            path: path.to_path_buf(),
            message: "trace has no records".into(),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelRow {
    pub level: usize,
    pub fold: usize,
    #[serde(rename = "Gmean")]
    pub gmean: Option<f64>,
    #[serde(rename = "SN")]
    pub sn: Option<f64>,
    #[serde(rename = "SP")]
    pub sp: Option<f64>,
    #[serde(rename = "nSV")]
    pub n_sv: Option<usize>,
    pub recovered: bool,
    pub early_stop: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelAggregate {
    pub level: usize,
    pub folds: usize,
    pub gmean_mean: f64,
    pub gmean_min: f64,
    pub gmean_max: f64,
    pub sn_mean: f64,
    pub sp_mean: f64,
    pub n_sv_mean: f64,
    pub recovered: usize,
    pub early_stops: usize,
}

pub fn level_rows(traces: &[(PathBuf, Vec<TraceRecord>)]) -> Vec<LevelRow> {
    traces
        .iter()
        .flat_map(|(_, recs)| recs)
        .map(|r| LevelRow {
            level: r.report.level,
            fold: r.fold,
            gmean: r.report.gmean,
            sn: r.report.sn,
            sp: r.report.sp,
            n_sv: r.report.n_sv,
            recovered: r.report.recovered,
            early_stop: r.report.early_stop,
        })
        .collect()
}

/// Mean, min and max per level over the rows that trained a model.
pub fn aggregate(rows: &[LevelRow]) -> Vec<LevelAggregate> {
    let mut by_level: BTreeMap<usize, Vec<&LevelRow>> = BTreeMap::new();
    for r in rows {
        by_level.entry(r.level).or_default().push(r);
    }
    by_level
        .into_iter()
        .rev()
        .map(|(level, rs)| {
            let trained: Vec<&&LevelRow> = rs.iter().filter(|r| r.gmean.is_some()).collect();
            let k = trained.len().max(1) as f64;
            let g: Vec<f64> = trained.iter().filter_map(|r| r.gmean).collect();
            LevelAggregate {
                level,
                folds: trained.len(),
                gmean_mean: g.iter().sum::<f64>() / k,
                gmean_min: g.iter().copied().fold(f64::INFINITY, f64::min),
                gmean_max: g.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                sn_mean: trained.iter().filter_map(|r| r.sn).sum::<f64>() / k,
                sp_mean: trained.iter().filter_map(|r| r.sp).sum::<f64>() / k,
                n_sv_mean: trained.iter().filter_map(|r| r.n_sv).sum::<usize>() as f64 / k,
                recovered: rs.iter().filter(|r| r.recovered).count(),
                early_stops: rs.iter().filter(|r| r.early_stop).count(),
            }
        })
        .filter(|a| a.folds > 0)
        .collect()
}

pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}
