//! AMG aggregation of a single class and the two-class hierarchy loop.
//!
//! Seeds are picked from future volumes, every non-seed node is split over at
//! most `r` of its strongest seed neighbors, and the coarse graph, points and
//! volumes are the Galerkin-style products with the resulting interpolation
//! operator.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::knn_graph::{build_knn_graph, ProximityGraph};
use crate::points::Points;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PointAggregation {
    /// Coarse point is the volume-weighted mean of its aggregate.
    WeightedMean,
    /// Coarse point is `Σ_j P_jq · x_j` without normalization.
    LiteralSum,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseningConfig {
    /// Pre-seed nodes whose future volume exceeds `eta` times the mean.
    pub eta: f64,
    /// Coupling threshold for promoting a node to seed.
    pub q_seed: f64,
    /// Interpolation order (max seed neighbors per non-seed row).
    pub interp_order: usize,
    /// Per-class coarsest size M.
    pub coarsest_size: usize,
    /// A step keeping more than this fraction of nodes ends the hierarchy.
    pub stall_factor: f64,
    pub aggregation: PointAggregation,
}

impl Default for CoarseningConfig {
    fn default() -> Self {
        Self {
            eta: 2.0,
            q_seed: 0.5,
            interp_order: 2,
            coarsest_size: 300,
            stall_factor: 0.95,
            aggregation: PointAggregation::WeightedMean,
        }
    }
}

impl CoarseningConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.eta > 0.0) {
            return Err(Error::config("eta must be positive"));
        }
        if !(0.0..1.0).contains(&self.q_seed) {
            return Err(Error::config("q-seed must lie in [0, 1)"));
        }
        if self.interp_order == 0 {
            return Err(Error::config("interpolation order must be at least 1"));
        }
        if self.coarsest_size == 0 {
            return Err(Error::config("coarsest size must be at least 1"));
        }
        if !(self.stall_factor > 0.0 && self.stall_factor < 1.0) {
            return Err(Error::config("stall factor must lie in (0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FutureVolumes {
    pub values: Vec<f64>,
    pub mean: f64,
}

/// Future volumes of the nodes flagged in `active`, with neighborhood sums
/// restricted to active nodes. Inactive entries hold their plain volume.
fn future_volumes_over(g: &ProximityGraph, active: &[bool]) -> FutureVolumes {
    let n = g.node_count();
    let v = g.volumes();
    let active_strength: Vec<f64> = (0..n)
        .map(|j| {
            if active[j] {
                g.neighbors(j).filter(|&(k, _)| active[k]).map(|(_, w)| w).sum()
            } else {
                0.0
            }
        })
        .collect();
    let mut values = v.to_vec();
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in (0..n).filter(|&i| active[i]) {
        let extra: f64 = g
            .neighbors(i)
            .filter(|&(j, _)| active[j] && active_strength[j] > 0.0)
            .map(|(j, w)| v[j] * w / active_strength[j])
            .sum();
        values[i] += extra;
        sum += values[i];
        count += 1;
    }
    let mean = if count > 0 { sum / count as f64 } else { 0.0 };
    FutureVolumes { values, mean }
}

pub fn compute_future_volumes(g: &ProximityGraph) -> FutureVolumes {
    future_volumes_over(g, &vec![true; g.node_count()])
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedPartition {
    /// Seed nodes, ascending. Position in this list is the coarse index.
    pub seeds: Vec<usize>,
    pub non_seeds: Vec<usize>,
}

impl SeedPartition {
    fn from_flags(is_seed: &[bool]) -> Self {
        let (seeds, non_seeds) = (0..is_seed.len()).partition(|&i| is_seed[i]);
        Self { seeds, non_seeds }
    }

    pub fn coarse_index(&self, n: usize) -> Vec<Option<usize>> {
        let mut idx = vec![None; n];
        for (q, &s) in self.seeds.iter().enumerate() {
            idx[s] = Some(q);
        }
        idx
    }
}

pub fn select_seeds(g: &ProximityGraph, fv: &FutureVolumes, eta: f64, q_seed: f64) -> SeedPartition {
    let n = g.node_count();
    let mut is_seed: Vec<bool> = (0..n).map(|i| fv.values[i] > eta * fv.mean).collect();
    let in_f: Vec<bool> = is_seed.iter().map(|s| !s).collect();
    let refreshed = future_volumes_over(g, &in_f);
    let mut order: Vec<usize> = (0..n).filter(|&i| in_f[i]).collect();
    order.sort_by(|&a, &b| refreshed.values[b].total_cmp(&refreshed.values[a]).then(a.cmp(&b)));
    for i in order {
        let total = g.weighted_degree(i);
        let to_seeds: f64 = g.neighbors(i).filter(|&(j, _)| is_seed[j]).map(|(_, w)| w).sum();
        let ratio = if total > 0.0 { to_seeds / total } else { 0.0 };
        if ratio <= q_seed {
            is_seed[i] = true;
        }
    }
    SeedPartition::from_flags(&is_seed)
}

/// Sparse fine-to-coarse operator `P` (`|V_f| × |S|`), stored by rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpolationOperator {
    rows: Vec<Vec<(usize, f64)>>,
    /// Fine node seeding each coarse node.
    seeds: Vec<usize>,
}

impl InterpolationOperator {
    pub fn identity(n: usize) -> Self {
        Self {
            rows: (0..n).map(|i| vec![(i, 1.0)]).collect(),
            seeds: (0..n).collect(),
        }
    }

    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>, seeds: Vec<usize>) -> Result<Self> {
        let c = seeds.len();
        for (i, row) in rows.iter().enumerate() {
            if row.is_empty() {
                return Err(Error::invalid(format!("interpolation row {i} is empty")));
            }
            if row.iter().any(|&(q, w)| q >= c || !(w > 0.0)) {
                return Err(Error::invalid(format!("interpolation row {i} has an invalid entry")));
            }
        }
        Ok(Self { rows, seeds })
    }

    pub fn fine_count(&self) -> usize {
        self.rows.len()
    }

    pub fn coarse_count(&self) -> usize {
        self.seeds.len()
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.rows[i]
    }

    pub fn seeds(&self) -> &[usize] {
        &self.seeds
    }

    pub fn is_identity(&self) -> bool {
        self.rows.iter().enumerate().all(|(i, r)| r.len() == 1 && r[0] == (i, 1.0))
    }

    /// Fine members of each aggregate (rows with a nonzero in that column).
    pub fn aggregates(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.coarse_count()];
        for (j, row) in self.rows.iter().enumerate() {
            for &(q, _) in row {
                out[q].push(j);
            }
        }
        out
    }

    /// Coarse volumes `Σ_j v_j P_jq`.
    pub fn restrict_volumes(&self, volumes: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.coarse_count()];
        for (j, row) in self.rows.iter().enumerate() {
            for &(q, p) in row {
                out[q] += volumes[j] * p;
            }
        }
        out
    }
}

/// Interpolation weights over the `r` strongest seed neighbors. Non-seeds
/// with no seed neighbor are promoted to seeds first.
pub fn build_interpolation(g: &ProximityGraph, sp: &SeedPartition, r: usize) -> InterpolationOperator {
    let n = g.node_count();
    let mut is_seed = vec![false; n];
    for &s in &sp.seeds {
        is_seed[s] = true;
    }
    let orphans: Vec<usize> = sp
        .non_seeds
        .iter()
        .copied()
        .filter(|&i| !g.neighbors(i).any(|(j, _)| is_seed[j]))
        .collect();
    for i in orphans {
        is_seed[i] = true;
    }
    let part = SeedPartition::from_flags(&is_seed);
    let coarse = part.coarse_index(n);
    let rows = (0..n)
        .map(|i| {
            if let Some(q) = coarse[i] {
                return vec![(q, 1.0)];
            }
            let mut cand: Vec<(usize, f64)> = g.neighbors(i).filter(|&(j, _)| is_seed[j]).collect();
            cand.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            cand.truncate(r.max(1));
            let total: f64 = cand.iter().map(|&(_, w)| w).sum();
            let mut row: Vec<(usize, f64)> = cand
                .into_iter()
                .map(|(j, w)| (coarse[j].expect("seed neighbor"), w / total))
                .collect();
            row.sort_unstable_by_key(|&(q, _)| q);
            row
        })
        .collect();
    InterpolationOperator {
        rows,
        seeds: part.seeds,
    }
}

/// Coarse graph with `w_pq = Σ_{k≠l} P_kp w_kl P_lq`, diagonal dropped.
pub fn coarsen_graph(g: &ProximityGraph, p: &InterpolationOperator) -> Result<ProximityGraph> {
    if p.fine_count() != g.node_count() {
        return Err(Error::invalid("interpolation operator does not match graph"));
    }
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    for (k, l, w) in g.edges() {
        for &(a, pa) in p.row(k) {
            for &(b, pb) in p.row(l) {
                if a != b {
                    triplets.push((a.min(b), a.max(b), pa * w * pb));
                }
            }
        }
    }
    triplets.sort_unstable_by(|x, y| (x.0, x.1).cmp(&(y.0, y.1)));
    let mut edges: Vec<(usize, usize, f64)> = Vec::new();
    for (a, b, w) in triplets {
        match edges.last_mut() {
            Some(last) if last.0 == a && last.1 == b => last.2 += w,
            _ => edges.push((a, b, w)),
        }
    }
    edges.retain(|e| e.2 > 0.0);
    ProximityGraph::from_edges(p.restrict_volumes(g.volumes()), &edges)
}

pub fn coarsen_points(
    points: &Points,
    volumes: &[f64],
    p: &InterpolationOperator,
    mode: PointAggregation,
) -> Result<(Points, Vec<f64>)> {
    if points.len() != p.fine_count() || volumes.len() != p.fine_count() {
        return Err(Error::invalid("interpolation operator does not match points"));
    }
    let d = points.dim();
    let c = p.coarse_count();
    let coarse_volumes = p.restrict_volumes(volumes);
    let mut acc = vec![0.0; c * d];
    for j in 0..points.len() {
        let x = points.row(j);
        for &(q, pjq) in p.row(j) {
            let coef = match mode {
                PointAggregation::WeightedMean => volumes[j] * pjq,
                PointAggregation::LiteralSum => pjq,
            };
            for (a, xv) in acc[q * d..(q + 1) * d].iter_mut().zip(x) {
                *a += coef * xv;
            }
        }
    }
    if mode == PointAggregation::WeightedMean {
        for q in 0..c {
            let vq = coarse_volumes[q];
            acc[q * d..(q + 1) * d].iter_mut().for_each(|a| *a /= vq);
        }
    }
    Ok((Points::new(d, acc)?, coarse_volumes))
}

/// One class at one level: its points, volumes and proximity graph.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassLevel {
    pub points: Points,
    pub volumes: Vec<f64>,
    pub graph: ProximityGraph,
}

impl ClassLevel {
    pub fn new(points: Points, graph: ProximityGraph) -> Result<Self> {
        if points.len() != graph.node_count() {
            return Err(Error::invalid("graph and points disagree on node count"));
        }
        Ok(Self {
            volumes: graph.volumes().to_vec(),
            points,
            graph,
        })
    }

    /// Finest level: unit volumes and a k-NN graph.
    pub fn finest(points: Points, k: usize) -> Result<Self> {
        let volumes = vec![1.0; points.len()];
        let graph = build_knn_graph(&points, &volumes, k)?;
        Self::new(points, graph)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }
}

/// Result of one aggregation step on a single class.
#[derive(Debug, Clone)]
pub struct CoarsenStep {
    pub coarse: ClassLevel,
    pub interpolation: InterpolationOperator,
}

pub fn coarsen_class(level: &ClassLevel, cfg: &CoarseningConfig) -> Result<CoarsenStep> {
    let fv = compute_future_volumes(&level.graph);
    let sp = select_seeds(&level.graph, &fv, cfg.eta, cfg.q_seed);
    let interpolation = build_interpolation(&level.graph, &sp, cfg.interp_order);
    let graph = coarsen_graph(&level.graph, &interpolation)?;
    let (points, volumes) = coarsen_points(&level.points, &level.volumes, &interpolation, cfg.aggregation)?;
    Ok(CoarsenStep {
        coarse: ClassLevel { points, volumes, graph },
        interpolation,
    })
}

#[derive(Debug, Clone)]
pub struct Level {
    pub positive: ClassLevel,
    pub negative: ClassLevel,
    /// Operators into the next coarser level; `None` at the coarsest.
    pub to_coarser: Option<(InterpolationOperator, InterpolationOperator)>,
}

/// Levels ordered finest (index 0, "level 1") to coarsest.
#[derive(Debug, Clone)]
pub struct LevelHierarchy {
    pub levels: Vec<Level>,
    /// Set when a step failed to shrink a class enough and construction stopped.
    pub stalled: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelSummary {
    pub level: usize,
    pub positive_size: usize,
    pub negative_size: usize,
    pub positive_volume: f64,
    pub negative_volume: f64,
    pub positive_edges: usize,
    pub negative_edges: usize,
    pub positive_copied: bool,
    pub negative_copied: bool,
}

impl LevelHierarchy {
    /// Assemble a hierarchy from explicit levels, checking operator shapes.
    pub fn from_levels(levels: Vec<Level>) -> Result<Self> {
        if levels.is_empty() {
            return Err(Error::invalid("hierarchy needs at least one level"));
        }
        for (i, lvl) in levels.iter().enumerate() {
            let last = i + 1 == levels.len();
            match (&lvl.to_coarser, last) {
                (None, true) => {}
                (Some((pp, pn)), false) => {
                    let next = &levels[i + 1];
                    if pp.fine_count() != lvl.positive.len()
                        || pn.fine_count() != lvl.negative.len()
                        || pp.coarse_count() != next.positive.len()
                        || pn.coarse_count() != next.negative.len()
                    {
                        return Err(Error::invalid(format!("operator shape mismatch at level {}", i + 1)));
                    }
                }
                _ => return Err(Error::invalid("only the coarsest level may lack operators")),
            }
        }
        Ok(Self { levels, stalled: false })
    }

    pub fn depth(&self) -> usize {
        self.levels.len()
    }

    pub fn coarsest(&self) -> &Level {
        self.levels.last().expect("non-empty hierarchy")
    }

    pub fn summaries(&self) -> Vec<LevelSummary> {
        self.levels
            .iter()
            .enumerate()
            .map(|(i, l)| {
                let copied = |sel: fn(&(InterpolationOperator, InterpolationOperator)) -> &InterpolationOperator| {
                    l.to_coarser.as_ref().is_some_and(|ops| sel(ops).is_identity())
                };
                LevelSummary {
                    level: i + 1,
                    positive_size: l.positive.len(),
                    negative_size: l.negative.len(),
                    positive_volume: l.positive.total_volume(),
                    negative_volume: l.negative.total_volume(),
                    positive_edges: l.positive.graph.edge_count(),
                    negative_edges: l.negative.graph.edge_count(),
                    positive_copied: copied(|o| &o.0),
                    negative_copied: copied(|o| &o.1),
                }
            })
            .collect()
    }
}

pub fn build_hierarchy(positive: ClassLevel, negative: ClassLevel, cfg: &CoarseningConfig) -> Result<LevelHierarchy> {
    cfg.validate()?;
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::ClassCount(usize::from(!positive.is_empty()) + usize::from(!negative.is_empty())));
    }
    let m = cfg.coarsest_size;
    let mut levels: Vec<Level> = Vec::new();
    let mut current = (positive, negative);
    let mut stalled = false;
    while current.0.len() > m || current.1.len() > m {
        let step = |cl: &ClassLevel| -> Result<Option<CoarsenStep>> {
            if cl.len() <= m {
                return Ok(Some(CoarsenStep {
                    coarse: cl.clone(),
                    interpolation: InterpolationOperator::identity(cl.len()),
                }));
            }
            let s = coarsen_class(cl, cfg)?;
            if s.coarse.len() as f64 > cfg.stall_factor * cl.len() as f64 {
                return Ok(None);
            }
            Ok(Some(s))
        };
        let (sp, sn) = rayon::join(|| step(&current.0), || step(&current.1));
        let (Some(sp), Some(sn)) = (sp?, sn?) else {
            log::warn!(
                "coarsening stalled at level {} (sizes {} / {})",
                levels.len() + 1,
                current.0.len(),
                current.1.len()
            );
            stalled = true;
            break;
        };
        let fine = std::mem::replace(&mut current, (sp.coarse, sn.coarse));
        levels.push(Level {
            positive: fine.0,
            negative: fine.1,
            to_coarser: Some((sp.interpolation, sn.interpolation)),
        });
    }
    levels.push(Level {
        positive: current.0,
        negative: current.1,
        to_coarser: None,
    });
    Ok(LevelHierarchy { levels, stalled })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path3() -> ProximityGraph {
        ProximityGraph::from_edges(vec![1.0; 3], &[(0, 1, 1.0), (1, 2, 1.0)]).unwrap()
    }

    fn close(a: &[f64], b: &[f64]) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() < 1e-12)
    }

    #[test]
    fn future_volume_examples() {
        let iso = ProximityGraph::from_edges(vec![3.0], &[]).unwrap();
        assert_eq!(compute_future_volumes(&iso).values, vec![3.0]);

        let pair = ProximityGraph::from_edges(vec![1.0, 1.0], &[(0, 1, 0.7)]).unwrap();
        assert!(close(&compute_future_volumes(&pair).values, &[2.0, 2.0]));

        let fv = compute_future_volumes(&path3());
        assert!(close(&fv.values, &[1.5, 3.0, 1.5]));
        assert!((fv.mean - 2.0).abs() < 1e-12);
    }

    #[test]
    fn path_seed_selection() {
        let g = path3();
        let fv = compute_future_volumes(&g);
        let sp = select_seeds(&g, &fv, 2.0, 0.5);
        assert_eq!(sp.seeds, vec![1]);
        assert_eq!(sp.non_seeds, vec![0, 2]);
    }

    #[test]
    fn disconnected_nodes_all_seed() {
        let g = ProximityGraph::from_edges(vec![1.0; 4], &[]).unwrap();
        let fv = compute_future_volumes(&g);
        let sp = select_seeds(&g, &fv, 2.0, 0.0);
        assert_eq!(sp.seeds, vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_node_is_its_own_seed() {
        let g = ProximityGraph::from_edges(vec![5.0], &[]).unwrap();
        let sp = select_seeds(&g, &compute_future_volumes(&g), 2.0, 0.5);
        assert_eq!(sp.seeds, vec![0]);
    }

    #[test]
    fn path_interpolation_is_one_column() {
        let g = path3();
        let sp = SeedPartition {
            seeds: vec![1],
            non_seeds: vec![0, 2],
        };
        let p = build_interpolation(&g, &sp, 2);
        assert_eq!(p.coarse_count(), 1);
        for i in 0..3 {
            assert_eq!(p.row(i), &[(0, 1.0)]);
        }
        assert_eq!(p.aggregates(), vec![vec![0, 1, 2]]);
    }

    #[test]
    fn interpolation_row_normalization() {
        // node 0 is a non-seed linked to seeds 1 (w=1) and 2 (w=3)
        let g = ProximityGraph::from_edges(vec![1.0; 3], &[(0, 1, 1.0), (0, 2, 3.0)]).unwrap();
        let sp = SeedPartition {
            seeds: vec![1, 2],
            non_seeds: vec![0],
        };
        let p = build_interpolation(&g, &sp, 2);
        assert_eq!(p.row(0), &[(0, 0.25), (1, 0.75)]);
        let p1 = build_interpolation(&g, &sp, 1);
        assert_eq!(p1.row(0), &[(1, 1.0)]);
    }

    #[test]
    fn orphan_non_seed_is_promoted() {
        let g = ProximityGraph::from_edges(vec![1.0; 3], &[(0, 1, 1.0)]).unwrap();
        let sp = SeedPartition {
            seeds: vec![0],
            non_seeds: vec![1, 2],
        };
        let p = build_interpolation(&g, &sp, 2);
        assert_eq!(p.seeds(), &[0, 2]);
        assert_eq!(p.row(1), &[(0, 1.0)]);
        assert_eq!(p.row(2), &[(1, 1.0)]);
    }

    #[test]
    fn all_seed_interpolation_is_identity() {
        let g = path3();
        let sp = SeedPartition {
            seeds: vec![0, 1, 2],
            non_seeds: vec![],
        };
        let p = build_interpolation(&g, &sp, 2);
        assert!(p.is_identity());
        assert_eq!(coarsen_graph(&g, &p).unwrap(), g);
    }

    #[test]
    fn single_aggregate_graph_is_edgeless() {
        let g = path3();
        let p = InterpolationOperator::from_rows(vec![vec![(0, 1.0)]; 3], vec![1]).unwrap();
        let c = coarsen_graph(&g, &p).unwrap();
        assert_eq!(c.node_count(), 1);
        assert_eq!(c.edge_count(), 0);
        assert_eq!(c.volumes(), &[3.0]);
    }

    #[test]
    fn weighted_mean_point() {
        let pts = Points::from_rows(&[[0.0, 0.0], [2.0, 0.0]]).unwrap();
        let p = InterpolationOperator::from_rows(vec![vec![(0, 1.0)], vec![(0, 1.0)]], vec![0]).unwrap();
        let (cp, cv) = coarsen_points(&pts, &[1.0, 1.0], &p, PointAggregation::WeightedMean).unwrap();
        assert_eq!(cp.row(0), &[1.0, 0.0]);
        assert_eq!(cv, vec![2.0]);
        let (lit, _) = coarsen_points(&pts, &[1.0, 1.0], &p, PointAggregation::LiteralSum).unwrap();
        assert_eq!(lit.row(0), &[2.0, 0.0]);
    }

    #[test]
    fn identity_keeps_points() {
        let pts = Points::from_rows(&[[0.5], [1.5], [4.0]]).unwrap();
        let vols = [1.0, 2.0, 0.5];
        let (cp, cv) = coarsen_points(&pts, &vols, &InterpolationOperator::identity(3), PointAggregation::WeightedMean).unwrap();
        assert_eq!(cp, pts);
        assert_eq!(cv, vols.to_vec());
    }

    #[test]
    fn small_classes_give_single_level() {
        let pts = Points::from_rows(&[[0.0], [1.0], [2.0]]).unwrap();
        let a = ClassLevel::finest(pts.clone(), 2).unwrap();
        let b = ClassLevel::finest(pts, 2).unwrap();
        let h = build_hierarchy(a, b, &CoarseningConfig::default()).unwrap();
        assert_eq!(h.depth(), 1);
        assert!(h.coarsest().to_coarser.is_none());
    }
}
