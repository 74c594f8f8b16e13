//! Uncoarsening: train at the coarsest level, then walk toward the finest
//! level retraining on the neighborhoods of the support vectors found one
//! level up.

use serde::{Deserialize, Serialize};

use crate::coarsening::{InterpolationOperator, Level, LevelHierarchy};
use crate::data_io::{LabeledDataset, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};
use crate::model_eval::{select_best_index, QualityMetrics};
use crate::param_fit::{nud_search, CandidateRecord, NudConfig};
use crate::points::Points;
use crate::recovery::{detect_and_recover, LevelContext, RecoveryEvent, RecoveryState};
use crate::svm::{SolverConfig, SvmModel, SvmParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RefinementConfig {
    /// Stop refining once a level's training set reaches this size.
    pub theta: usize,
    pub delta: f64,
    pub p: usize,
    pub n: usize,
    pub recovery: bool,
}

impl Default for RefinementConfig {
    fn default() -> Self {
        Self {
            theta: 3000,
            delta: 0.05,
            p: 1,
            n: 1,
            recovery: true,
        }
    }
}

impl RefinementConfig {
    pub fn validate(&self, coarsest_size: usize) -> Result<()> {
        if self.theta < 2 * coarsest_size {
            return Err(Error::config(format!(
                "theta {} is below twice the coarsest size ({coarsest_size})",
                self.theta
            )));
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::config(format!("delta {} must lie in (0, 1)", self.delta)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct PipelineConfig {
    pub nud: NudConfig,
    pub solver: SolverConfig,
    pub refinement: RefinementConfig,
}

/// One line of the per-level report. Metric fields are empty on the line
/// recording an early stop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: usize,
    pub positive_size: usize,
    pub negative_size: usize,
    pub train_positive: usize,
    pub train_negative: usize,
    #[serde(rename = "C")]
    pub c: Option<f64>,
    pub gamma: Option<f64>,
    #[serde(rename = "ACC")]
    pub acc: Option<f64>,
    #[serde(rename = "SN")]
    pub sn: Option<f64>,
    #[serde(rename = "SP")]
    pub sp: Option<f64>,
    #[serde(rename = "Gmean")]
    pub gmean: Option<f64>,
    #[serde(rename = "nSV")]
    pub n_sv: Option<usize>,
    pub recovered: bool,
    pub early_stop: bool,
    /// Models trained by the level's own parameter search.
    pub trained_models: usize,
    pub inherited_center: Option<(f64, f64)>,
    pub fallback_positive: bool,
    pub fallback_negative: bool,
    pub candidates: Vec<CandidateRecord>,
    pub recovery: Option<RecoveryEvent>,
}

impl LevelReport {
    fn sized(level: usize, data: &LevelData, train: &TrainingSet) -> Self {
        Self {
            level,
            positive_size: data.n_pos,
            negative_size: data.n_neg(),
            train_positive: train.positive.len(),
            train_negative: train.negative.len(),
            c: None,
            gamma: None,
            acc: None,
            sn: None,
            sp: None,
            gmean: None,
            n_sv: None,
            recovered: false,
            early_stop: false,
            trained_models: 0,
            inherited_center: None,
            fallback_positive: false,
            fallback_negative: false,
            candidates: Vec::new(),
            recovery: None,
        }
    }

    fn fill(&mut self, model: &SvmModel) {
        let q = model.quality.expect("evaluated");
        self.c = Some(model.params.c);
        self.gamma = Some(model.params.gamma);
        self.acc = Some(q.acc);
        self.sn = Some(q.sn);
        self.sp = Some(q.sp);
        self.gmean = Some(q.gmean);
        self.n_sv = Some(model.n_sv());
    }
}

/// Class-local point indices used for training at one level.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct TrainingSet {
    pub positive: Vec<usize>,
    pub negative: Vec<usize>,
}

impl TrainingSet {
    pub fn len(&self) -> usize {
        self.positive.len() + self.negative.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Both classes of a level as one dataset: positives first, then negatives.
/// Ids are the row numbers.
struct LevelData {
    all: LabeledDataset,
    n_pos: usize,
}

impl LevelData {
    fn new(level: &Level) -> Result<Self> {
        let (pos, neg) = (&level.positive, &level.negative);
        let mut points = Points::with_capacity(pos.points.dim(), pos.len() + neg.len());
        for row in pos.points.rows().chain(neg.points.rows()) {
            points.push(row)?;
        }
        let mut labels = vec![POSITIVE; pos.len()];
        labels.resize(pos.len() + neg.len(), NEGATIVE);
        let volumes = pos.volumes.iter().chain(&neg.volumes).copied().collect();
        let n = labels.len();
        Ok(Self {
            all: LabeledDataset::new(points, labels, volumes, (0..n).collect())?,
            n_pos: pos.len(),
        })
    }

    fn n_neg(&self) -> usize {
        self.all.len() - self.n_pos
    }

    fn rows(&self, t: &TrainingSet) -> Vec<usize> {
        t.positive.iter().copied().chain(t.negative.iter().map(|&j| j + self.n_pos)).collect()
    }

    fn split(&self, rows: &[usize]) -> TrainingSet {
        let mut t = TrainingSet::default();
        for &r in rows {
            if r < self.n_pos {
                t.positive.push(r);
            } else {
                t.negative.push(r - self.n_pos);
            }
        }
        t.positive.sort_unstable();
        t.negative.sort_unstable();
        t
    }

    /// Support vectors of `model`, trained on `rows`, as class-local indices.
    fn support_vectors(&self, model: &SvmModel, rows: &[usize]) -> TrainingSet {
        let sv: Vec<usize> = model.sv_indices.iter().map(|&i| rows[i]).collect();
        self.split(&sv)
    }
}

/// Union of the aggregates of every coarse support vector, per class.
pub fn disaggregate(sv: &TrainingSet, p_pos: &InterpolationOperator, p_neg: &InterpolationOperator) -> TrainingSet {
    let expand = |svs: &[usize], p: &InterpolationOperator| {
        let agg = p.aggregates();
        let mut take = vec![false; p.fine_count()];
        for &q in svs {
            for &j in &agg[q] {
                take[j] = true;
            }
        }
        (0..take.len()).filter(|&j| take[j]).collect::<Vec<_>>()
    };
    TrainingSet {
        positive: expand(&sv.positive, p_pos),
        negative: expand(&sv.negative, p_neg),
    }
}

/// Coarser-level solution handed to the next finer level.
#[derive(Debug, Clone)]
pub struct Inherited {
    pub support_vectors: TrainingSet,
    pub params: SvmParams,
}

#[derive(Debug, Clone)]
pub struct LevelSolution {
    pub level: usize,
    pub training: TrainingSet,
    /// `None` when the level stopped early.
    pub best: Option<SvmModel>,
    pub models: Vec<SvmModel>,
    pub early_stop: bool,
    pub report: LevelReport,
    /// Support vectors of `best`, class-local at this level.
    support_vectors: TrainingSet,
}

impl LevelSolution {
    pub fn quality(&self) -> Option<f64> {
        self.best.as_ref().and_then(|m| m.quality).map(|q| q.gmean)
    }
}

fn train_level(
    level: usize,
    data: &LevelData,
    training: TrainingSet,
    center: Option<SvmParams>,
    cfg: &PipelineConfig,
    validation: &LabeledDataset,
    rs: Option<&mut RecoveryState>,
    mut report: LevelReport,
) -> Result<LevelSolution> {
    let rows = data.rows(&training);
    let train = data.all.subset(&rows);
    let search = nud_search(&train, validation, center, &cfg.nud, &cfg.solver, level)?;
    report.trained_models = search.trained();
    report.candidates = search.candidates.clone();
    let mut models = search.models;
    let mut best = search.best;
    let mut rows_used = rows;
    if let Some(rs) = rs {
        let ctx = LevelContext {
            all: &data.all,
            training: &rows_used,
            validation,
            center,
            nud: &cfg.nud,
            solver: &cfg.solver,
            level,
        };
        let out = detect_and_recover(&ctx, best, rs)?;
        if let Some(s) = out.search {
            report.candidates.extend(s.candidates);
            models.extend(s.models);
        }
        report.recovered = out.event.accepted;
        report.recovery = Some(out.event);
        best = out.model;
        rows_used = out.training;
    }
    let final_training = data.split(&rows_used);
    report.train_positive = final_training.positive.len();
    report.train_negative = final_training.negative.len();
    report.fill(&best);
    let support_vectors = data.support_vectors(&best, &rows_used);
    Ok(LevelSolution {
        level,
        training: final_training,
        best: Some(best),
        models,
        early_stop: false,
        report,
        support_vectors,
    })
}

/// Train one non-coarsest level from the coarser solution. `to_coarser` are
/// this level's operators into the level the solution came from.
pub fn refine_level(
    level: usize,
    lvl: &Level,
    inherited: &Inherited,
    cfg: &PipelineConfig,
    validation: &LabeledDataset,
    rs: &mut RecoveryState,
) -> Result<LevelSolution> {
    let (p_pos, p_neg) = lvl
        .to_coarser
        .as_ref()
        .ok_or_else(|| Error::invalid("the coarsest level has nothing to refine from"))?;
    let data = LevelData::new(lvl)?;
    let mut training = disaggregate(&inherited.support_vectors, p_pos, p_neg);
    let (fallback_positive, fallback_negative) = (training.positive.is_empty(), training.negative.is_empty());
    if fallback_positive {
        training.positive = (0..data.n_pos).collect();
    }
    if fallback_negative {
        training.negative = (0..data.n_neg()).collect();
    }
    let mut report = LevelReport::sized(level, &data, &training);
    report.fallback_positive = fallback_positive;
    report.fallback_negative = fallback_negative;
    report.inherited_center = Some(inherited.params.log2());
    if training.len() >= cfg.refinement.theta {
        report.early_stop = true;
        return Ok(LevelSolution {
            level,
            training,
            best: None,
            models: Vec::new(),
            early_stop: true,
            report,
            support_vectors: TrainingSet::default(),
        });
    }
    let rs = cfg.refinement.recovery.then_some(rs);
    train_level(level, &data, training, Some(inherited.params), cfg, validation, rs, report)
}

#[derive(Debug, Clone)]
pub struct PipelineOutcome {
    pub model: SvmModel,
    /// Solutions in the order they were produced, coarsest first.
    pub levels: Vec<LevelSolution>,
    pub early_stop_level: Option<usize>,
    pub q_max: f64,
}

impl PipelineOutcome {
    pub fn reports(&self) -> Vec<&LevelReport> {
        self.levels.iter().map(|l| &l.report).collect()
    }

    pub fn level_bests(&self) -> Vec<&SvmModel> {
        self.levels.iter().filter_map(|l| l.best.as_ref()).collect()
    }

    pub fn final_quality(&self) -> QualityMetrics {
        self.model.quality.expect("evaluated")
    }
}

/// Levels are numbered from 1 (finest) to `depth` (coarsest).
pub fn run_pipeline(hierarchy: &LevelHierarchy, validation: &LabeledDataset, cfg: &PipelineConfig) -> Result<PipelineOutcome> {
    let depth = hierarchy.depth();
    let coarsest = LevelData::new(hierarchy.coarsest())?;
    let training = TrainingSet {
        positive: (0..coarsest.n_pos).collect(),
        negative: (0..coarsest.n_neg()).collect(),
    };
    let report = LevelReport::sized(depth, &coarsest, &training);
    let first = train_level(depth, &coarsest, training, None, cfg, validation, None, report)?;
    let mut rs = RecoveryState::new(
        first.quality().expect("trained"),
        cfg.refinement.delta,
        cfg.refinement.p,
        cfg.refinement.n,
    );
    let mut levels = vec![first];
    let mut early_stop_level = None;
    for level in (1..depth).rev() {
        let prev = levels.last().expect("non-empty");
        let inherited = Inherited {
            support_vectors: prev.support_vectors.clone(),
            params: prev.best.as_ref().expect("trained").params,
        };
        let sol = refine_level(level, &hierarchy.levels[level - 1], &inherited, cfg, validation, &mut rs)?;
        log::info!(
            "level {level}: train {} Gmean {:?} early_stop {}",
            sol.training.len(),
            sol.quality(),
            sol.early_stop
        );
        let stop = sol.early_stop;
        levels.push(sol);
        if stop {
            early_stop_level = Some(level);
            break;
        }
    }
    let bests: Vec<SvmModel> = levels.iter().filter_map(|l| l.best.clone()).collect();
    let i = select_best_index(&bests).expect("coarsest level trained");
    Ok(PipelineOutcome {
        model: bests[i].clone(),
        levels,
        early_stop_level,
        q_max: rs.q_max,
    })
}
