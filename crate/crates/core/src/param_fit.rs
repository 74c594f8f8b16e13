//! Two-stage nested uniform design over `(log2 C, log2 γ)`.
//!
//! Stage one lays a lattice over a rectangle the size of the global search
//! box, centered on either the box midpoint or parameters inherited from a
//! coarser level. Stage two shrinks the rectangle around the best stage-one
//! point.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data_io::LabeledDataset;
use crate::error::{Error, Result};
use crate::model_eval::{evaluate_into, select_best_index};
use crate::svm::{train_wsvm, SolverConfig, SvmModel, SvmParams};

/// Candidates closer than this in log2 space are the same point.
const DEDUP_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NudConfig {
    pub log2c_range: (f64, f64),
    pub log2g_range: (f64, f64),
    pub stage1_points: usize,
    pub stage2_points: usize,
    pub stage2_shrink: f64,
}

impl Default for NudConfig {
    fn default() -> Self {
        Self {
            log2c_range: (-5.0, 15.0),
            log2g_range: (-15.0, 3.0),
            stage1_points: 9,
            stage2_points: 4,
            stage2_shrink: 0.5,
        }
    }
}

impl NudConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in [("log2 C", self.log2c_range), ("log2 gamma", self.log2g_range)] {
            if !(lo < hi && lo.is_finite() && hi.is_finite()) {
                return Err(Error::config(format!("{name} range [{lo}, {hi}] is empty")));
            }
        }
        if self.stage1_points == 0 {
            return Err(Error::config("stage 1 needs at least one point"));
        }
        if !(self.stage2_shrink > 0.0 && self.stage2_shrink <= 1.0) {
            return Err(Error::config("stage 2 shrink factor must lie in (0, 1]"));
        }
        Ok(())
    }

    pub fn midpoint(&self) -> (f64, f64) {
        (
            0.5 * (self.log2c_range.0 + self.log2c_range.1),
            0.5 * (self.log2g_range.0 + self.log2g_range.1),
        )
    }

    pub fn widths(&self) -> (f64, f64) {
        (
            self.log2c_range.1 - self.log2c_range.0,
            self.log2g_range.1 - self.log2g_range.0,
        )
    }

    pub fn clip(&self, p: (f64, f64)) -> (f64, f64) {
        (
            p.0.clamp(self.log2c_range.0, self.log2c_range.1),
            p.1.clamp(self.log2g_range.0, self.log2g_range.1),
        )
    }

    pub fn max_trainings(&self) -> usize {
        self.stage1_points + self.stage2_points
    }
}

fn same_point(a: (f64, f64), b: (f64, f64)) -> bool {
    (a.0 - b.0).abs() <= DEDUP_EPS && (a.1 - b.1).abs() <= DEDUP_EPS
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Stage {
    /// Design always includes its center.
    First,
    /// Pure lattice around the stage-one winner (already evaluated).
    Second,
}

/// `count` design points (log2 space) over a `widths` rectangle around
/// `center`: an `s × s` lattice at half-cell offsets, `s = ⌈√count⌉`, nearest
/// points first. Points are clipped to the global box and deduplicated.
pub fn nud_candidates(
    center: (f64, f64),
    widths: (f64, f64),
    count: usize,
    stage: Stage,
    bounds: &NudConfig,
) -> Vec<(f64, f64)> {
    if count == 0 {
        return Vec::new();
    }
    let center = bounds.clip(center);
    let s = (count as f64).sqrt().ceil() as usize;
    let offsets: Vec<f64> = (0..s).map(|k| (k as f64 + 0.5) / s as f64 - 0.5).collect();
    let mut lattice: Vec<(f64, f64)> = offsets
        .iter()
        .flat_map(|&u| offsets.iter().map(move |&v| (center.0 + u * widths.0, center.1 + v * widths.1)))
        .collect();
    let dist = |p: &(f64, f64)| ((p.0 - center.0) / widths.0).powi(2) + ((p.1 - center.1) / widths.1).powi(2);
    lattice.sort_by(|a, b| dist(a).total_cmp(&dist(b)));
    let mut out = match stage {
        Stage::First => vec![center],
        Stage::Second => Vec::new(),
    };
    for p in lattice {
        if out.len() == count {
            break;
        }
        let p = bounds.clip(p);
        if !out.iter().any(|&q| same_point(p, q)) {
            out.push(p);
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub stage: u8,
    pub log2c: f64,
    pub log2g: f64,
    pub c: f64,
    pub gamma: f64,
    pub gmean: Option<f64>,
    pub sn: Option<f64>,
    pub sp: Option<f64>,
    pub n_sv: Option<usize>,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct NudOutcome {
    pub best: SvmModel,
    /// Every successfully trained model, stage 1 first.
    pub models: Vec<SvmModel>,
    pub candidates: Vec<CandidateRecord>,
    pub stage2_center: Option<(f64, f64)>,
}

impl NudOutcome {
    pub fn trained(&self) -> usize {
        self.models.len()
    }
}

fn train_stage(
    stage: u8,
    points: &[(f64, f64)],
    train: &LabeledDataset,
    validation: &LabeledDataset,
    solver: &SolverConfig,
    level: usize,
) -> Vec<(CandidateRecord, Option<SvmModel>)> {
    points
        .par_iter()
        .map(|&(lc, lg)| {
            let result = SvmParams::from_log2(lc, lg).and_then(|params| {
                let mut m = train_wsvm(train, params, solver)?;
                m.level = level;
                evaluate_into(&mut m, validation)?;
                Ok(m)
            });
            let mut rec = CandidateRecord {
                stage,
                log2c: lc,
                log2g: lg,
                c: lc.exp2(),
                gamma: lg.exp2(),
                gmean: None,
                sn: None,
                sp: None,
                n_sv: None,
                error: None,
            };
            match result {
                Ok(m) => {
                    let q = m.quality.expect("evaluated");
                    rec.gmean = Some(q.gmean);
                    rec.sn = Some(q.sn);
                    rec.sp = Some(q.sp);
                    rec.n_sv = Some(m.n_sv());
                    (rec, Some(m))
                }
                Err(e) => {
                    log::warn!("candidate C=2^{lc} gamma=2^{lg} failed: {e}");
                    rec.error = Some(e.to_string());
                    (rec, None)
                }
            }
        })
        .collect()
}

/// Train and validate every design point, returning the preferred model.
/// Candidate failures are skipped; the search fails only if all do.
pub fn nud_search(
    train: &LabeledDataset,
    validation: &LabeledDataset,
    center: Option<SvmParams>,
    cfg: &NudConfig,
    solver: &SolverConfig,
    level: usize,
) -> Result<NudOutcome> {
    cfg.validate()?;
    train.require_both_classes()?;
    let start = center.map_or_else(|| cfg.midpoint(), |p| p.log2());
    let widths = cfg.widths();

    let stage1 = nud_candidates(start, widths, cfg.stage1_points, Stage::First, cfg);
    let mut candidates = Vec::new();
    let mut models = Vec::new();
    for (rec, m) in train_stage(1, &stage1, train, validation, solver, level) {
        candidates.push(rec);
        models.extend(m);
    }

    let mut stage2_center = None;
    if cfg.stage2_points > 0 {
        if let Some(b) = select_best_index(&models) {
            let c2 = models[b].params.log2();
            stage2_center = Some(c2);
            let shrunk = (widths.0 * cfg.stage2_shrink, widths.1 * cfg.stage2_shrink);
            let stage2: Vec<(f64, f64)> = nud_candidates(c2, shrunk, cfg.stage2_points, Stage::Second, cfg)
                .into_iter()
                .filter(|&p| !stage1.iter().any(|&q| same_point(p, q)))
                .collect();
            for (rec, m) in train_stage(2, &stage2, train, validation, solver, level) {
                candidates.push(rec);
                models.extend(m);
            }
        }
    }

    let best = select_best_index(&models)
        .map(|i| models[i].clone())
        .ok_or_else(|| Error::Training("every parameter candidate failed".into()))?;
    Ok(NudOutcome {
        best,
        models,
        candidates,
        stage2_center,
    })
}
