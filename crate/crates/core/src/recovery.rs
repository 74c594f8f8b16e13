//! Detection of a significant validation-quality drop during refinement and
//! recovery by adding the nearest training neighbors of misclassified
//! validation points.

use serde::{Deserialize, Serialize};

use crate::data_io::{LabeledDataset, NEGATIVE, POSITIVE};
use crate::error::{Error, Result};
use crate::param_fit::{nud_search, NudConfig, NudOutcome};
use crate::points::squared_distance;
use crate::svm::{SolverConfig, SvmModel, SvmParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryState {
    /// Best level quality seen so far (coarsest first).
    pub q_max: f64,
    pub delta: f64,
    /// Nearest positive neighbors added per misclassified point.
    pub p: usize,
    /// Nearest negative neighbors added per misclassified point.
    pub n: usize,
}

impl RecoveryState {
    pub fn new(q_initial: f64, delta: f64, p: usize, n: usize) -> Self {
        Self {
            q_max: q_initial,
            delta,
            p,
            n,
        }
    }

    pub fn observe(&mut self, q: f64) {
        if q > self.q_max {
            self.q_max = q;
        }
    }

    pub fn drop_is_significant(&self, q: f64) -> bool {
        self.q_max - q > self.delta
    }
}

/// What happened at one level, for the run trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecoveryEvent {
    pub triggered: bool,
    pub q_max: f64,
    pub q_before: f64,
    pub q_after: Option<f64>,
    pub false_positives: usize,
    pub false_negatives: usize,
    pub added: usize,
    pub trained_models: usize,
    pub accepted: bool,
}

/// Training context of the current level.
pub struct LevelContext<'a> {
    /// Every point of the level, both classes (`𝒥_all`).
    pub all: &'a LabeledDataset,
    /// Rows of `all` in the current training set.
    pub training: &'a [usize],
    pub validation: &'a LabeledDataset,
    pub center: Option<SvmParams>,
    pub nud: &'a NudConfig,
    pub solver: &'a SolverConfig,
    pub level: usize,
}

#[derive(Debug, Clone)]
pub struct RecoveryOutcome {
    pub model: SvmModel,
    /// Training rows behind `model` (augmented when accepted).
    pub training: Vec<usize>,
    pub event: RecoveryEvent,
    /// The retraining search, when one ran.
    pub search: Option<NudOutcome>,
}

/// Rows of `all` with label `label` nearest to `x`; ties go to the lower row.
fn nearest_of_class(all: &LabeledDataset, x: &[f64], label: i8, count: usize) -> Vec<usize> {
    if count == 0 {
        return Vec::new();
    }
    let mut cand: Vec<(f64, usize)> = (0..all.len())
        .filter(|&r| all.labels()[r] == label)
        .map(|r| (squared_distance(x, all.points().row(r)), r))
        .collect();
    cand.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    cand.into_iter().take(count).map(|(_, r)| r).collect()
}

/// Distinct rows of `all`, not already in `training`, that neighbor the
/// misclassified validation points.
pub fn augmentation_rows(
    all: &LabeledDataset,
    training: &[usize],
    validation: &LabeledDataset,
    predicted: &[i8],
    p: usize,
    n: usize,
) -> (Vec<usize>, usize, usize) {
    let mut in_set = vec![false; all.len()];
    for &r in training {
        in_set[r] = true;
    }
    let (mut fp, mut fn_) = (0, 0);
    let mut added = Vec::new();
    for (i, (&truth, &pred)) in validation.labels().iter().zip(predicted).enumerate() {
        if truth == pred {
            continue;
        }
        if pred == POSITIVE {
            fp += 1;
        } else {
            fn_ += 1;
        }
        let x = validation.points().row(i);
        let near = nearest_of_class(all, x, POSITIVE, p)
            .into_iter()
            .chain(nearest_of_class(all, x, NEGATIVE, n));
        for r in near {
            if !in_set[r] {
                in_set[r] = true;
                added.push(r);
            }
        }
    }
    added.sort_unstable();
    (added, fp, fn_)
}

/// Compare the level's best model with the running maximum and, on a drop
/// larger than `delta`, retrain on the augmented set. The augmented model is
/// kept only if it strictly improves validation G-mean.
pub fn detect_and_recover(ctx: &LevelContext<'_>, model: SvmModel, rs: &mut RecoveryState) -> Result<RecoveryOutcome> {
    let q_c = model
        .quality
        .ok_or_else(|| Error::invalid("level model has not been evaluated"))?
        .gmean;
    let mut event = RecoveryEvent {
        triggered: false,
        q_max: rs.q_max,
        q_before: q_c,
        q_after: None,
        false_positives: 0,
        false_negatives: 0,
        added: 0,
        trained_models: 0,
        accepted: false,
    };
    let unchanged = |event: RecoveryEvent, model: SvmModel| RecoveryOutcome {
        model,
        training: ctx.training.to_vec(),
        event,
        search: None,
    };
    if q_c > rs.q_max {
        rs.q_max = q_c;
        return Ok(unchanged(event, model));
    }
    if !rs.drop_is_significant(q_c) {
        return Ok(unchanged(event, model));
    }
    event.triggered = true;
    let (predicted, _) = model.predict(ctx.validation.points())?;
    let (added, fp, fn_) = augmentation_rows(ctx.all, ctx.training, ctx.validation, &predicted, rs.p, rs.n);
    assert!(fp + fn_ > 0, "quality dropped below the maximum with no validation errors");
    event.false_positives = fp;
    event.false_negatives = fn_;
    event.added = added.len();
    if added.is_empty() {
        return Ok(unchanged(event, model));
    }
    let mut augmented: Vec<usize> = ctx.training.iter().copied().chain(added).collect();
    augmented.sort_unstable();
    let train = ctx.all.subset(&augmented);
    let search = nud_search(&train, ctx.validation, ctx.center, ctx.nud, ctx.solver, ctx.level)?;
    let q_a = search.best.quality.expect("evaluated").gmean;
    event.trained_models = search.trained();
    event.q_after = Some(q_a);
    if q_a > q_c {
        event.accepted = true;
        rs.observe(q_a);
        Ok(RecoveryOutcome {
            model: search.best.clone(),
            training: augmented,
            event,
            search: Some(search),
        })
    } else {
        Ok(RecoveryOutcome {
            model,
            training: ctx.training.to_vec(),
            event,
            search: Some(search),
        })
    }
}
