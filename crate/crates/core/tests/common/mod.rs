//! Independent oracles and generators shared by the integration tests.
#![allow(dead_code)]

use amlsvm::coarsening::{coarsen_graph, coarsen_points, ClassLevel, InterpolationOperator, Level, LevelHierarchy, PointAggregation};
use amlsvm::knn_graph::{build_knn_graph, ProximityGraph};
use amlsvm::svm::{instance_box, rbf};
use amlsvm::{LabeledDataset, Points};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(r: &mut ChaCha8Rng) -> f64 {
    // Box-Muller
    let u1: f64 = r.random_range(f64::EPSILON..1.0);
    let u2: f64 = r.random();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Minimizer of `½ αᵀQα − Σα` over `{0 ≤ α ≤ U, yᵀα = 0}` by accelerated
/// projected gradient with restarts.
pub struct QpOracle {
    pub alpha: Vec<f64>,
    pub objective: f64,
}

fn project(v: &[f64], y: &[f64], upper: &[f64]) -> Vec<f64> {
    let at = |mu: f64| -> (Vec<f64>, f64) {
        let a: Vec<f64> = v
            .iter()
            .zip(y)
            .zip(upper)
            .map(|((&vi, &yi), &ui)| (vi - mu * yi).clamp(0.0, ui))
            .collect();
        let s = a.iter().zip(y).map(|(a, y)| a * y).sum();
        (a, s)
    };
    let bound = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + upper.iter().fold(0.0, |m: f64, &u| m.max(u)) + 1.0;
    let (mut lo, mut hi) = (-bound, bound);
    // yᵀα(μ) is non-increasing in μ
    while hi - lo > 1e-15 * (1.0 + lo.abs().max(hi.abs())) {
        let mid = 0.5 * (lo + hi);
        if at(mid).1 > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    at(0.5 * (lo + hi)).0
}

pub fn kernel_matrix(points: &Points, gamma: f64) -> Vec<Vec<f64>> {
    points.rows().map(|a| points.rows().map(|b| rbf(a, b, gamma)).collect()).collect()
}

pub fn dual_objective(q: &[Vec<f64>], alpha: &[f64]) -> f64 {
    let n = alpha.len();
    let mut f = 0.0;
    for i in 0..n {
        let qa: f64 = (0..n).map(|j| q[i][j] * alpha[j]).sum();
        f += 0.5 * alpha[i] * qa - alpha[i];
    }
    f
}

pub fn qp_oracle(train: &LabeledDataset, c: f64, gamma: f64) -> QpOracle {
    let n = train.len();
    let y: Vec<f64> = train.labels().iter().map(|&l| f64::from(l)).collect();
    let k = kernel_matrix(train.points(), gamma);
    let q: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| y[i] * y[j] * k[i][j]).collect()).collect();
    let upper = instance_box(train.volumes(), train.labels(), c);
    let scale = upper.iter().fold(1.0f64, |m, &u| m.max(u));
    // Gershgorin bound on the largest eigenvalue
    let lip = (0..n).map(|i| q[i].iter().map(|v| v.abs()).sum::<f64>()).fold(0.0, f64::max);
    let step = 1.0 / lip;
    let grad = |a: &[f64]| -> Vec<f64> { (0..n).map(|i| (0..n).map(|j| q[i][j] * a[j]).sum::<f64>() - 1.0).collect() };
    let descend = |a: &[f64]| -> Vec<f64> {
        let g = grad(a);
        let v: Vec<f64> = a.iter().zip(&g).map(|(ai, gi)| ai - step * gi).collect();
        project(&v, &y, &upper)
    };

    let mut x = project(&vec![0.0; n], &y, &upper);
    let mut z = x.clone();
    let mut t = 1.0f64;
    let mut fx = dual_objective(&q, &x);
    for it in 0..2_000_000 {
        let xn = descend(&z);
        let fxn = dual_objective(&q, &xn);
        if fxn > fx + 1e-14 * (1.0 + fx.abs()) {
            // restart momentum
            t = 1.0;
            z = x.clone();
            continue;
        }
        let tn = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        z = xn.iter().zip(&x).map(|(a, b)| a + (t - 1.0) / tn * (a - b)).collect();
        x = xn;
        t = tn;
        fx = fxn;
        if it % 25 == 0 {
            let r = descend(&x).iter().zip(&x).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if r < 1e-11 * scale {
                break;
            }
        }
    }
    QpOracle { alpha: x, objective: fx }
}

/// Decision function from a full α vector, bias from free vectors (or the
/// midpoint of the feasible interval).
pub fn oracle_decision<'a>(train: &'a LabeledDataset, alpha: &[f64], c: f64, gamma: f64) -> impl Fn(&[f64]) -> f64 + 'a {
    let n = train.len();
    let y: Vec<f64> = train.labels().iter().map(|&l| f64::from(l)).collect();
    let upper = instance_box(train.volumes(), train.labels(), c);
    let k = kernel_matrix(train.points(), gamma);
    let f0 = |i: usize| (0..n).map(|j| alpha[j] * y[j] * k[i][j]).sum::<f64>();
    let scale = upper.iter().fold(0.0f64, |m, &u| m.max(u));
    let eps = 1e-9 * scale.max(1.0);
    let free: Vec<usize> = (0..n).filter(|&i| alpha[i] > eps && alpha[i] < upper[i] - eps).collect();
    let b = if free.is_empty() {
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        for i in 0..n {
            let r = y[i] - f0(i);
            let at_upper = alpha[i] >= upper[i] - eps;
            // y_i f(x_i) >= 1 at zero, <= 1 at the bound
            if (y[i] > 0.0) != at_upper {
                lo = lo.max(r);
            } else {
                hi = hi.min(r);
            }
        }
        0.5 * (lo + hi)
    } else {
        free.iter().map(|&i| y[i] - f0(i)).sum::<f64>() / free.len() as f64
    };
    let alpha = alpha.to_vec();
    move |x: &[f64]| (0..n).map(|j| alpha[j] * y[j] * rbf(train.points().row(j), x, gamma)).sum::<f64>() + b
}

/// Brute-force symmetrized k-NN from the full distance matrix.
pub fn knn_oracle(points: &Points, k: usize) -> Vec<(usize, usize, f64)> {
    let n = points.len();
    let dist: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    points
                        .row(i)
                        .iter()
                        .zip(points.row(j))
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum::<f64>()
                        .sqrt()
                })
                .collect()
        })
        .collect();
    let mut adj = vec![vec![false; n]; n];
    for i in 0..n {
        let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
        order.sort_by(|&a, &b| dist[i][a].partial_cmp(&dist[i][b]).unwrap().then(a.cmp(&b)));
        for &j in order.iter().take(k) {
            adj[i][j] = true;
            adj[j][i] = true;
        }
    }
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if adj[i][j] {
                edges.push((i, j, 1.0 / (dist[i][j] + 1e-10)));
            }
        }
    }
    edges
}

/// Dense `Σ_{k≠l} P_kp w_kl P_lq` for `p ≠ q`.
pub fn coarse_weights_oracle(g: &ProximityGraph, p: &InterpolationOperator) -> Vec<Vec<f64>> {
    let n = g.node_count();
    let c = p.coarse_count();
    let mut pd = vec![vec![0.0; c]; n];
    for (i, row) in pd.iter_mut().enumerate() {
        for &(q, v) in p.row(i) {
            row[q] = v;
        }
    }
    let mut w = vec![vec![0.0; n]; n];
    for (i, j, x) in g.edges() {
        w[i][j] = x;
        w[j][i] = x;
    }
    let mut out = vec![vec![0.0; c]; c];
    for a in 0..c {
        for b in 0..c {
            if a == b {
                continue;
            }
            let mut s = 0.0;
            for k in 0..n {
                for l in 0..n {
                    if k != l {
                        s += pd[k][a] * w[k][l] * pd[l][b];
                    }
                }
            }
            out[a][b] = s;
        }
    }
    out
}

/// Gaussian clusters: `n` points in `d` dimensions around `centers` picks.
pub fn cloud(r: &mut ChaCha8Rng, n: usize, d: usize, clusters: usize, spread: f64) -> Points {
    let centers: Vec<Vec<f64>> = (0..clusters.max(1))
        .map(|_| (0..d).map(|_| r.random_range(-5.0..5.0)).collect())
        .collect();
    let mut pts = Points::with_capacity(d, n);
    for _ in 0..n {
        let c = &centers[r.random_range(0..centers.len())];
        let row: Vec<f64> = c.iter().map(|&m| m + spread * gauss(r)).collect();
        pts.push(&row).unwrap();
    }
    pts
}

/// Two-class Gaussian problem; positives are the minority.
pub fn two_class(seed: u64, n_pos: usize, n_neg: usize, d: usize, separation: f64) -> LabeledDataset {
    let mut r = rng(seed);
    let mut pts = Points::with_capacity(d, n_pos + n_neg);
    let mut labels = Vec::new();
    for (label, n, shift) in [(1i8, n_pos, separation / 2.0), (-1i8, n_neg, -separation / 2.0)] {
        for _ in 0..n {
            let row: Vec<f64> = (0..d).map(|k| gauss(&mut r) + if k == 0 { shift } else { 0.0 }).collect();
            pts.push(&row).unwrap();
            labels.push(label);
        }
    }
    LabeledDataset::from_finest(pts, labels).unwrap()
}

pub fn write_libsvm(path: &std::path::Path, ds: &LabeledDataset) {
    use std::io::Write;
    let mut f = std::io::BufWriter::new(std::fs::File::create(path).unwrap());
    for (i, row) in ds.points().rows().enumerate() {
        let label = if ds.labels()[i] > 0 { 1 } else { 0 };
        write!(f, "{label}").unwrap();
        for (k, v) in row.iter().enumerate() {
            write!(f, " {}:{v}", k + 1).unwrap();
        }
        writeln!(f).unwrap();
    }
}

fn class_level(points: &[[f64; 2]], volumes: &[f64]) -> ClassLevel {
    let p = Points::from_rows(points).unwrap();
    let g = build_knn_graph(&p, volumes, 3).unwrap();
    ClassLevel::new(p, g).unwrap()
}

/// Two-level hierarchy whose fine level loses the positive neighborhood of
/// the validation point `(4.2, 0)`. The positive at `(4.4, 0)` shares an
/// aggregate with a heavy seed buried in a positive cluster around
/// `(-3, 0)`, so the aggregate is interior and never a support vector. The
/// coarse level still sees a positive at `(4, 0)`, the mean of two distant
/// fine points that do get disaggregated.
pub struct DropInstance {
    pub hierarchy: LevelHierarchy,
    pub validation: LabeledDataset,
    /// Fine positive that recovery must add.
    pub hidden_positive: usize,
}

pub fn drop_instance() -> DropInstance {
    let mut fine_pos = vec![[0.0, 0.0], [0.3, 0.0], [4.4, 0.0], [4.0, 4.0], [4.0, -4.0], [-3.0, 0.0]];
    let mut pos_vol = vec![1.0, 1.0, 1.0, 1.0, 1.0, 100.0];
    let mut rows = vec![
        vec![(0, 1.0)],
        vec![(0, 1.0)],
        vec![(2, 1.0)],
        vec![(1, 1.0)],
        vec![(1, 1.0)],
        vec![(2, 1.0)],
    ];
    let mut seeds = vec![0, 3, 5];
    for dx in [-1.0, 0.0, 1.0] {
        for dy in [-1.0, 0.0, 1.0] {
            if dx == 0.0 && dy == 0.0 {
                continue;
            }
            seeds.push(fine_pos.len());
            rows.push(vec![(seeds.len() - 1, 1.0)]);
            fine_pos.push([-3.0 + 0.5 * dx, 0.5 * dy]);
            pos_vol.push(1.0);
        }
    }
    let neg = [[2.0, 0.0], [2.0, 1.0], [2.0, -1.0], [6.0, 0.0], [6.0, 1.0], [6.0, -1.0]];
    let fine_p = class_level(&fine_pos, &pos_vol);
    let fine_n = class_level(&neg, &[1.0; 6]);
    let p_pos = InterpolationOperator::from_rows(rows, seeds).unwrap();
    let p_neg = InterpolationOperator::identity(neg.len());
    let coarse = |cl: &ClassLevel, p: &InterpolationOperator| {
        let g = coarsen_graph(&cl.graph, p).unwrap();
        let (pts, _) = coarsen_points(&cl.points, &cl.volumes, p, PointAggregation::WeightedMean).unwrap();
        ClassLevel::new(pts, g).unwrap()
    };
    let coarse_p = coarse(&fine_p, &p_pos);
    let coarse_n = coarse(&fine_n, &p_neg);
    let hierarchy = LevelHierarchy::from_levels(vec![
        Level {
            positive: fine_p,
            negative: fine_n,
            to_coarser: Some((p_pos, p_neg)),
        },
        Level {
            positive: coarse_p,
            negative: coarse_n,
            to_coarser: None,
        },
    ])
    .unwrap();
    let validation = LabeledDataset::from_finest(
        Points::from_rows(&[[4.2, 0.0], [0.1, 0.1], [-3.0, 0.25], [2.0, 0.5], [6.0, 0.5]]).unwrap(),
        vec![1, 1, 1, -1, -1],
    )
    .unwrap();
    DropInstance {
        hierarchy,
        validation,
        hidden_positive: 2,
    }
}

impl DropInstance {
    /// Single-candidate search at C = 2^6, gamma = 2^-1, the setting at which
    /// the coarse level separates every validation point.
    pub fn config(&self, recovery: bool) -> amlsvm::PipelineConfig {
        let mut cfg = amlsvm::PipelineConfig::default();
        cfg.nud.log2c_range = (5.0, 7.0);
        cfg.nud.log2g_range = (-2.0, 0.0);
        cfg.nud.stage1_points = 1;
        cfg.nud.stage2_points = 0;
        cfg.refinement.recovery = recovery;
        cfg
    }
}

/// Brute-force augmentation set: for every misclassified validation point,
/// its `p` nearest positive and `n` nearest negative rows of `all`, minus
/// `training`, deduplicated.
pub fn augmentation_oracle(
    all: &LabeledDataset,
    training: &[usize],
    validation: &LabeledDataset,
    predicted: &[i8],
    p: usize,
    n: usize,
) -> Vec<usize> {
    let mut out = std::collections::BTreeSet::new();
    for i in 0..validation.len() {
        if validation.labels()[i] == predicted[i] {
            continue;
        }
        let x = validation.points().row(i);
        for (label, count) in [(1i8, p), (-1i8, n)] {
            let mut rows: Vec<usize> = (0..all.len()).filter(|&r| all.labels()[r] == label).collect();
            let d = |r: usize| -> f64 { all.points().row(r).iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum() };
            rows.sort_by(|&a, &b| d(a).partial_cmp(&d(b)).unwrap().then(a.cmp(&b)));
            out.extend(rows.into_iter().take(count));
        }
    }
    out.into_iter().filter(|r| !training.contains(r)).collect()
}

/// Small weighted problem in the plane with C and gamma drawn log-uniformly.
pub fn solver_instance(seed: u64) -> (LabeledDataset, amlsvm::SvmParams) {
    let mut r = rng(seed);
    let n = r.random_range(4..=25);
    let mut pts = Points::with_capacity(2, n);
    let mut labels = Vec::with_capacity(n);
    let shift = r.random_range(0.0..2.5);
    for i in 0..n {
        let y: i8 = if i == 0 { 1 } else if i == 1 { -1 } else if r.random_bool(0.35) { 1 } else { -1 };
        let s = if y > 0 { shift } else { -shift } / 2.0;
        pts.push(&[gauss(&mut r) + s, gauss(&mut r)]).unwrap();
        labels.push(y);
    }
    let volumes: Vec<f64> = (0..n).map(|_| if r.random_bool(0.5) { 1.0 } else { r.random_range(1.0..5.0) }).collect();
    let ids = (0..n).collect();
    let ds = LabeledDataset::new(pts, labels, volumes, ids).unwrap();
    let params = amlsvm::SvmParams::from_log2(r.random_range(-2.0..4.0), r.random_range(-3.0..1.0)).unwrap();
    (ds, params)
}

/// 10×10 grid over the bounding box of `points`, padded by one unit.
pub fn query_grid(points: &Points) -> Vec<[f64; 2]> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for r in points.rows() {
        for k in 0..2 {
            lo[k] = lo[k].min(r[k]);
            hi[k] = hi[k].max(r[k]);
        }
    }
    let mut out = Vec::with_capacity(100);
    for a in 0..10 {
        for b in 0..10 {
            let t = |k: usize, s: usize| lo[k] - 1.0 + (hi[k] - lo[k] + 2.0) * s as f64 / 9.0;
            out.push([t(0, a), t(1, b)]);
        }
    }
    out
}

/// Structural invariants of a hierarchy; returns the first violation.
pub fn check_hierarchy(h: &LevelHierarchy, m: usize, r: usize) -> Result<(), String> {
    let first = &h.levels[0];
    let total = |cl: &ClassLevel| cl.volumes.iter().sum::<f64>();
    let (v_pos, v_neg) = (total(&first.positive), total(&first.negative));
    for (i, lvl) in h.levels.iter().enumerate() {
        for (name, cl, v0) in [("positive", &lvl.positive, v_pos), ("negative", &lvl.negative, v_neg)] {
            let v = total(cl);
            if (v - v0).abs() > 1e-9 * v0 {
                return Err(format!("level {} {name}: volume {v} vs {v0}", i + 1));
            }
            if cl.graph.node_count() != cl.len() || cl.graph.volumes() != cl.volumes.as_slice() {
                return Err(format!("level {} {name}: graph and points disagree", i + 1));
            }
        }
        let Some((pp, pn)) = &lvl.to_coarser else { continue };
        let next = &h.levels[i + 1];
        for (name, p, fine, coarse) in [
            ("positive", pp, &lvl.positive, &next.positive),
            ("negative", pn, &lvl.negative, &next.negative),
        ] {
            if fine.len() <= m {
                if !p.is_identity() || fine.points != coarse.points || fine.volumes != coarse.volumes {
                    return Err(format!("level {} {name}: class at or below M was not copied", i + 1));
                }
            } else if coarse.len() >= fine.len() {
                return Err(format!("level {} {name}: {} -> {} does not shrink", i + 1, fine.len(), coarse.len()));
            }
            let mut covered = vec![false; coarse.len()];
            for j in 0..p.fine_count() {
                let row = p.row(j);
                let s: f64 = row.iter().map(|e| e.1).sum();
                if (s - 1.0).abs() > 1e-12 {
                    return Err(format!("level {} {name}: row {j} sums to {s}", i + 1));
                }
                if row.is_empty() || row.len() > r.max(1) || row.iter().any(|e| !(e.1 > 0.0)) {
                    return Err(format!("level {} {name}: row {j} has {} entries", i + 1, row.len()));
                }
                for &(q, _) in row {
                    covered[q] = true;
                }
            }
            for (q, &s) in p.seeds().iter().enumerate() {
                if p.row(s) != [(q, 1.0)] {
                    return Err(format!("level {} {name}: seed {s} row is not a unit entry", i + 1));
                }
            }
            if covered.iter().any(|c| !c) {
                return Err(format!("level {} {name}: empty aggregate", i + 1));
            }
        }
    }
    let top = h.coarsest();
    if !h.stalled && (top.positive.len() > m || top.negative.len() > m) {
        return Err(format!("coarsest sizes {} / {} exceed M = {m}", top.positive.len(), top.negative.len()));
    }
    Ok(())
}
