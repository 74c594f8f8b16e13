//! Confusion counts, G-mean and the model-selection rule.

use serde::{Deserialize, Serialize};

use crate::data_io::{LabeledDataset, POSITIVE};
use crate::error::Result;
use crate::svm::SvmModel;

/// Models whose G-mean is within this of the best compete on SN and nSV.
pub const GMEAN_BAND: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QualityMetrics {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub acc: f64,
    pub sn: f64,
    pub sp: f64,
    pub gmean: f64,
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

impl QualityMetrics {
    pub fn from_counts(tp: usize, tn: usize, fp: usize, fn_: usize) -> Self {
        let sn = ratio(tp, tp + fn_);
        let sp = ratio(tn, tn + fp);
        Self {
            tp,
            tn,
            fp,
            fn_,
            acc: ratio(tp + tn, tp + tn + fp + fn_),
            sn,
            sp,
            gmean: (sn * sp).sqrt(),
        }
    }

    pub fn from_predictions(truth: &[i8], predicted: &[i8]) -> Self {
        let (mut tp, mut tn, mut fp, mut fn_) = (0, 0, 0, 0);
        for (&t, &p) in truth.iter().zip(predicted) {
            match (t == POSITIVE, p == POSITIVE) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (false, true) => fp += 1,
                (true, false) => fn_ += 1,
            }
        }
        Self::from_counts(tp, tn, fp, fn_)
    }

    pub fn misclassified(&self) -> usize {
        self.fp + self.fn_
    }
}

pub fn evaluate(model: &SvmModel, data: &LabeledDataset) -> Result<QualityMetrics> {
    let (pred, _) = model.predict(data.points())?;
    Ok(QualityMetrics::from_predictions(data.labels(), &pred))
}

/// Evaluate and store the metrics on the model.
pub fn evaluate_into(model: &mut SvmModel, data: &LabeledDataset) -> Result<QualityMetrics> {
    let q = evaluate(model, data)?;
    model.quality = Some(q);
    Ok(q)
}

/// Index of the preferred model: highest G-mean; inside the G-mean band,
/// higher SN, then fewer support vectors, then the coarser level, then the
/// earlier position. Unevaluated models rank last.
pub fn select_best_index(models: &[SvmModel]) -> Option<usize> {
    let score = |m: &SvmModel| m.quality.map_or((-1.0, -1.0), |q| (q.gmean, q.sn));
    let best_gmean = models.iter().map(|m| score(m).0).fold(f64::NEG_INFINITY, f64::max);
    let mut best: Option<usize> = None;
    for (i, m) in models.iter().enumerate() {
        if score(m).0 < best_gmean - GMEAN_BAND {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let o = &models[b];
                let (sn, osn) = (score(m).1, score(o).1);
                if sn != osn {
                    sn > osn
                } else if m.n_sv() != o.n_sv() {
                    m.n_sv() < o.n_sv()
                } else {
                    m.level > o.level
                }
            }
        };
        if better {
            best = Some(i);
        }
    }
    best
}

pub fn select_best(models: &[SvmModel]) -> Option<&SvmModel> {
    select_best_index(models).map(|i| &models[i])
}
