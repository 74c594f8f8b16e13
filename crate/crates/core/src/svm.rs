//! Weighted soft-margin RBF SVM trained by SMO on the dual problem
//!
//! ```text
//! min  ½ αᵀQα − eᵀα   s.t.  0 ≤ α_i ≤ U_i,  yᵀα = 0,   Q_ij = y_i y_j K(x_i, x_j)
//! ```
//!
//! where the per-instance box `U_i = C · v_i / Σ_{j ∈ class(i)} v_j` gives each
//! class the same total penalty budget `C`, spread by point volume.

use serde::{Deserialize, Serialize};

use crate::data_io::{LabeledDataset, POSITIVE};
use crate::error::{Error, Result};
use crate::model_eval::QualityMetrics;
use crate::points::{squared_distance, Points};

/// α values at or below this count as zero.
pub const SV_THRESHOLD: f64 = 1e-12;
/// Largest accepted `|Σ α_i y_i|`.
pub const EQUALITY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SvmParams {
    pub c: f64,
    pub gamma: f64,
}

impl SvmParams {
    pub fn new(c: f64, gamma: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite() && gamma > 0.0 && gamma.is_finite()) {
            return Err(Error::invalid(format!("C={c} and gamma={gamma} must be positive")));
        }
        Ok(Self { c, gamma })
    }

    pub fn from_log2(log2c: f64, log2g: f64) -> Result<Self> {
        Self::new(log2c.exp2(), log2g.exp2())
    }

    pub fn log2(&self) -> (f64, f64) {
        (self.c.log2(), self.gamma.log2())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Stop when the maximal KKT violation drops below this.
    pub tolerance: f64,
    pub max_iterations: u64,
    /// Byte budget for cached kernel rows.
    pub cache_bytes: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_iterations: 10_000_000,
            cache_bytes: 256 << 20,
        }
    }
}

/// Per-instance upper bounds `U_i = C · v_i / Σ_{same class} v_j`.
pub fn instance_box(volumes: &[f64], labels: &[i8], c: f64) -> Vec<f64> {
    let (mut pos, mut neg) = (0.0, 0.0);
    for (&v, &y) in volumes.iter().zip(labels) {
        if y == POSITIVE {
            pos += v;
        } else {
            neg += v;
        }
    }
    volumes
        .iter()
        .zip(labels)
        .map(|(&v, &y)| c * v / if y == POSITIVE { pos } else { neg })
        .collect()
}

#[inline]
pub fn rbf(a: &[f64], b: &[f64], gamma: f64) -> f64 {
    (-gamma * squared_distance(a, b)).exp()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SvmModel {
    pub params: SvmParams,
    pub support_vectors: Points,
    /// `α_i y_i` for each support vector.
    pub coefficients: Vec<f64>,
    pub bias: f64,
    /// Row of each support vector in the training set it came from.
    pub sv_indices: Vec<usize>,
    /// Hierarchy level the model was trained at (1 = finest).
    pub level: usize,
    pub converged: bool,
    pub iterations: u64,
    pub dual_objective: f64,
    pub feasibility: DualFeasibility,
    pub quality: Option<QualityMetrics>,
}

/// Constraint residuals of a dual solution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DualFeasibility {
    /// `max_i max(-α_i, α_i - U_i, 0)`.
    pub box_violation: f64,
    /// `|Σ α_i y_i|`.
    pub equality_residual: f64,
}

impl DualFeasibility {
    pub fn measure(alpha: &[f64], upper: &[f64], labels: &[i8]) -> Self {
        let box_violation = alpha
            .iter()
            .zip(upper)
            .map(|(&a, &u)| (-a).max(a - u).max(0.0))
            .fold(0.0, f64::max);
        let equality_residual = alpha.iter().zip(labels).map(|(&a, &l)| a * f64::from(l)).sum::<f64>().abs();
        Self {
            box_violation,
            equality_residual,
        }
    }

    pub fn holds(&self) -> bool {
        self.box_violation == 0.0 && self.equality_residual <= EQUALITY_TOLERANCE
    }
}

impl SvmModel {
    pub fn n_sv(&self) -> usize {
        self.coefficients.len()
    }

    pub fn dim(&self) -> usize {
        self.support_vectors.dim()
    }

    pub fn decision_value(&self, x: &[f64]) -> f64 {
        self.support_vectors
            .rows()
            .zip(&self.coefficients)
            .map(|(sv, &a)| a * rbf(sv, x, self.params.gamma))
            .sum::<f64>()
            + self.bias
    }

    /// Labels (`sign(f)`, zero mapped to `+1`) and decision values.
    pub fn predict(&self, points: &Points) -> Result<(Vec<i8>, Vec<f64>)> {
        if !points.is_empty() && points.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                actual: points.dim(),
            });
        }
        let values: Vec<f64> = points.rows().map(|x| self.decision_value(x)).collect();
        let labels = values.iter().map(|&f| if f >= 0.0 { 1 } else { -1 }).collect();
        Ok((labels, values))
    }
}

/// LRU cache of kernel rows within a byte budget.
struct KernelRows<'a> {
    points: &'a Points,
    gamma: f64,
    rows: Vec<Option<Vec<f64>>>,
    last_use: Vec<u64>,
    clock: u64,
    cached: usize,
    capacity: usize,
}

impl<'a> KernelRows<'a> {
    fn new(points: &'a Points, gamma: f64, cache_bytes: usize) -> Self {
        let n = points.len();
        let row_bytes = (n * std::mem::size_of::<f64>()).max(1);
        Self {
            points,
            gamma,
            rows: vec![None; n],
            last_use: vec![0; n],
            clock: 0,
            cached: 0,
            capacity: (cache_bytes / row_bytes).max(2),
        }
    }

    fn ensure(&mut self, i: usize) {
        self.clock += 1;
        self.last_use[i] = self.clock;
        if self.rows[i].is_some() {
            return;
        }
        if self.cached >= self.capacity {
            let victim = (0..self.rows.len())
                .filter(|&k| self.rows[k].is_some() && k != i)
                .min_by_key(|&k| self.last_use[k])
                .expect("cache holds at least one row");
            self.rows[victim] = None;
            self.cached -= 1;
        }
        let xi = self.points.row(i);
        let row = self.points.rows().map(|xj| rbf(xi, xj, self.gamma)).collect();
        self.rows[i] = Some(row);
        self.cached += 1;
    }

    /// Rows `i` and `j`, both resident.
    fn pair(&mut self, i: usize, j: usize) -> (&[f64], &[f64]) {
        self.ensure(i);
        self.ensure(j);
        (
            self.rows[i].as_deref().expect("resident"),
            self.rows[j].as_deref().expect("resident"),
        )
    }
}

/// Raw dual solution, exposed for testing against independent QP solvers.
#[derive(Debug, Clone)]
pub struct DualSolution {
    pub alpha: Vec<f64>,
    pub upper: Vec<f64>,
    pub bias: f64,
    pub objective: f64,
    pub iterations: u64,
    pub converged: bool,
    pub feasibility: DualFeasibility,
}

fn snap_to_box(a: f64, upper: f64) -> f64 {
    const REL: f64 = 1e-12;
    if a <= upper * REL {
        0.0
    } else if a >= upper * (1.0 - REL) {
        upper
    } else {
        a
    }
}

pub fn solve_dual(train: &LabeledDataset, params: SvmParams, cfg: &SolverConfig) -> Result<DualSolution> {
    train.require_both_classes()?;
    let n = train.len();
    let y: Vec<f64> = train.labels().iter().map(|&l| f64::from(l)).collect();
    let upper = instance_box(train.volumes(), train.labels(), params.c);
    let mut alpha = vec![0.0; n];
    // gradient of the dual objective
    let mut grad = vec![-1.0; n];
    let mut kernel = KernelRows::new(train.points(), params.gamma, cfg.cache_bytes);

    let in_up = |t: usize, a: &[f64]| if y[t] > 0.0 { a[t] < upper[t] } else { a[t] > 0.0 };
    let in_low = |t: usize, a: &[f64]| if y[t] > 0.0 { a[t] > 0.0 } else { a[t] < upper[t] };

    let mut iterations = 0u64;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        // maximal violating pair; strict comparisons keep the lower index on ties
        let (mut i, mut gmax) = (usize::MAX, f64::NEG_INFINITY);
        let (mut j, mut gmin) = (usize::MAX, f64::INFINITY);
        for t in 0..n {
            let v = -y[t] * grad[t];
            if in_up(t, &alpha) && v > gmax {
                gmax = v;
                i = t;
            }
            if in_low(t, &alpha) && v < gmin {
                gmin = v;
                j = t;
            }
        }
        if i == usize::MAX || j == usize::MAX || gmax - gmin < cfg.tolerance {
            converged = true;
            break;
        }
        iterations += 1;

        let (ki, kj) = kernel.pair(i, j);
        let kij = ki[j];
        let (ci, cj) = (upper[i], upper[j]);
        let (old_i, old_j) = (alpha[i], alpha[j]);
        // K_ii = K_jj = 1 for the RBF kernel
        let eta = (2.0 - 2.0 * kij).max(1e-12);
        if y[i] != y[j] {
            let delta = (-grad[i] - grad[j]) / eta;
            let diff = alpha[i] - alpha[j];
            alpha[i] += delta;
            alpha[j] += delta;
            if diff > 0.0 {
                if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = diff;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = -diff;
            }
            if diff > ci - cj {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = ci - diff;
                }
            } else if alpha[j] > cj {
                alpha[j] = cj;
                alpha[i] = cj + diff;
            }
        } else {
            let delta = (grad[i] - grad[j]) / eta;
            let sum = alpha[i] + alpha[j];
            alpha[i] -= delta;
            alpha[j] += delta;
            if sum > ci {
                if alpha[i] > ci {
                    alpha[i] = ci;
                    alpha[j] = sum - ci;
                }
            } else if alpha[j] < 0.0 {
                alpha[j] = 0.0;
                alpha[i] = sum;
            }
            if sum > cj {
                if alpha[j] > cj {
                    alpha[j] = cj;
                    alpha[i] = sum - cj;
                }
            } else if alpha[i] < 0.0 {
                alpha[i] = 0.0;
                alpha[j] = sum;
            }
        }
        // the clipping arithmetic can land an ulp off a bound, which would
        // misclassify the variable as free when computing the bias
        alpha[i] = snap_to_box(alpha[i], ci);
        alpha[j] = snap_to_box(alpha[j], cj);
        let di = alpha[i] - old_i;
        let dj = alpha[j] - old_j;
        let (yi, yj) = (y[i], y[j]);
        for t in 0..n {
            grad[t] += y[t] * (yi * ki[t] * di + yj * kj[t] * dj);
        }
    }
    if !converged {
        log::warn!("SMO stopped after {iterations} iterations without reaching tolerance");
    }

    // bias from free vectors, else midpoint of the feasible interval
    let (mut sum_free, mut n_free) = (0.0, 0usize);
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in 0..n {
        let yg = y[t] * grad[t];
        if alpha[t] >= upper[t] {
            if y[t] < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if alpha[t] <= 0.0 {
            if y[t] > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            n_free += 1;
            sum_free += yg;
        }
    }
    let rho = if n_free > 0 { sum_free / n_free as f64 } else { (ub + lb) / 2.0 };
    let objective = 0.5 * alpha.iter().zip(&grad).map(|(a, g)| a * (g - 1.0)).sum::<f64>();
    let feasibility = DualFeasibility::measure(&alpha, &upper, train.labels());
    Ok(DualSolution {
        alpha,
        upper,
        bias: -rho,
        objective,
        iterations,
        converged,
        feasibility,
    })
}

pub fn train_wsvm(train: &LabeledDataset, params: SvmParams, cfg: &SolverConfig) -> Result<SvmModel> {
    if train.len() < 2 {
        return Err(Error::invalid("training needs at least two points"));
    }
    let sol = solve_dual(train, params, cfg)?;
    if !sol.bias.is_finite() || !sol.objective.is_finite() {
        return Err(Error::Training(format!(
            "non-finite solution for C={} gamma={}",
            params.c, params.gamma
        )));
    }
    if !sol.feasibility.holds() {
        return Err(Error::Training(format!(
            "infeasible dual for C={} gamma={}: {:?}",
            params.c, params.gamma, sol.feasibility
        )));
    }
    let sv_indices: Vec<usize> = (0..train.len()).filter(|&t| sol.alpha[t] > SV_THRESHOLD).collect();
    let coefficients = sv_indices
        .iter()
        .map(|&t| sol.alpha[t] * f64::from(train.labels()[t]))
        .collect();
    Ok(SvmModel {
        params,
        support_vectors: train.points().select(&sv_indices),
        coefficients,
        bias: sol.bias,
        sv_indices,
        level: 0,
        converged: sol.converged,
        iterations: sol.iterations,
        dual_objective: sol.objective,
        feasibility: sol.feasibility,
        quality: None,
    })
}
