//! Acceptance run: one PASS/FAIL line per criterion.
//!
//! The benchmark criteria read `data/<name>.libsvm` from the workspace root
//! (override the directory with `AMLSVM_DATA`). A benchmark whose file is
//! absent is reported as FAIL with the reason and does not change the exit
//! status; every evaluated criterion does.

mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use amlsvm::cli::commands::{cmd_train, DumpOptions, TrainOutcome};
use amlsvm::cli::config::RunConfig;
use amlsvm::data_io::sample_validation;
use amlsvm::knn_graph::ProximityGraph;
use amlsvm::model_eval::select_best;
use amlsvm::refinement::LevelReport;
use amlsvm::svm::{solve_dual, train_wsvm};
use amlsvm::{build_hierarchy, run_pipeline, ClassLevel, CoarseningConfig, PipelineConfig, SolverConfig};
use rand::Rng;

enum Verdict {
    Pass(String),
    Fail(String),
    /// Could not be evaluated here.
    Absent(String),
}

struct Benchmark {
    name: &'static str,
    file: &'static str,
    env: &'static str,
    min_gmean: f64,
    limit: Duration,
}

const BENCHMARKS: [Benchmark; 4] = [
    Benchmark { name: "Twonorm", file: "twonorm.libsvm", env: "AMLSVM_TWONORM", min_gmean: 0.94, limit: Duration::from_secs(180) },
    Benchmark { name: "Ringnorm", file: "ringnorm.libsvm", env: "AMLSVM_RINGNORM", min_gmean: 0.94, limit: Duration::from_secs(180) },
    Benchmark { name: "Letter", file: "letter.libsvm", env: "AMLSVM_LETTER", min_gmean: 0.95, limit: Duration::from_secs(600) },
    Benchmark { name: "Cod-rna", file: "cod-rna.libsvm", env: "AMLSVM_COD_RNA", min_gmean: 0.92, limit: Duration::from_secs(1200) },
];

fn data_path(b: &Benchmark) -> PathBuf {
    if let Ok(p) = std::env::var(b.env) {
        return PathBuf::from(p);
    }
    let dir = std::env::var("AMLSVM_DATA")
        .map(PathBuf::from)
        .unwrap_or_else(|_| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data"));
    dir.join(b.file)
}

fn benchmark(b: &Benchmark, runs: &mut Vec<TrainOutcome>) -> Verdict {
    let path = data_path(b);
    if !path.exists() {
        return Verdict::Absent(format!(
            "{}: not evaluated, {} is absent (set {} to its libsvm file)",
            b.name,
            path.display(),
            b.env
        ));
    }
    let out = tempfile::tempdir().unwrap();
    let start = Instant::now();
    let res = cmd_train(&path, &RunConfig::default(), out.path(), DumpOptions::default());
    let took = start.elapsed();
    match res {
        Err(e) => Verdict::Fail(format!("{}: training failed: {e}", b.name)),
        Ok(o) => {
            let g = o.summary.mean.gmean;
            let folds: Vec<String> = o.summary.folds.iter().map(|f| format!("{:.4}", f.test.gmean)).collect();
            let msg = format!(
                "{}: 5-fold mean test Gmean {g:.4} (folds {}) vs >= {}; {:.1}s vs < {}s",
                b.name,
                folds.join(" "),
                b.min_gmean,
                took.as_secs_f64(),
                b.limit.as_secs()
            );
            let ok = g >= b.min_gmean && took < b.limit;
            runs.push(o);
            if ok {
                Verdict::Pass(msg)
            } else {
                Verdict::Fail(msg)
            }
        }
    }
}

/// Connected random graph: a shuffled path plus random chords, random
/// weights and volumes.
fn random_graph(r: &mut rand_chacha::ChaCha8Rng, n: usize) -> ProximityGraph {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, r.random_range(0..=i));
    }
    let mut seen = std::collections::HashSet::new();
    let mut edges = Vec::new();
    let mut add = |a: usize, b: usize, w: f64, edges: &mut Vec<(usize, usize, f64)>| {
        let key = (a.min(b), a.max(b));
        if a != b && seen.insert(key) {
            edges.push((key.0, key.1, w));
        }
    };
    for w in order.windows(2) {
        add(w[0], w[1], r.random_range(0.1..10.0), &mut edges);
    }
    let chords = n * r.random_range(1..6);
    for _ in 0..chords {
        let (a, b) = (r.random_range(0..n), r.random_range(0..n));
        add(a, b, r.random_range(0.1..10.0), &mut edges);
    }
    let volumes = (0..n).map(|_| r.random_range(0.5..3.0)).collect();
    ProximityGraph::from_edges(volumes, &edges).unwrap()
}

fn is_connected(g: &ProximityGraph) -> bool {
    let n = g.node_count();
    let mut seen = vec![false; n];
    let mut stack = vec![0];
    seen[0] = true;
    let mut count = 1;
    while let Some(i) = stack.pop() {
        for (j, _) in g.neighbors(i) {
            if !seen[j] {
                seen[j] = true;
                count += 1;
                stack.push(j);
            }
        }
    }
    count == n
}

fn criterion_coarsening() -> Verdict {
    let mut r = common::rng(0xC0A5);
    let (mut failures, mut levels, mut first, mut redrawn) = (0, 0, None, 0);
    for case in 0..200 {
        let n_total = r.random_range(20..=2000);
        let n_pos = r.random_range(5..n_total - 5);
        let n_neg = n_total - n_pos;
        let m = r.random_range(5..=150);
        let order = r.random_range(1..=3);
        let cfg = CoarseningConfig {
            coarsest_size: m,
            interp_order: order,
            ..CoarseningConfig::default()
        };
        let d = r.random_range(1..=8);
        let mut class = |r: &mut rand_chacha::ChaCha8Rng, n: usize| {
            if case % 2 == 0 {
                // aggregation never merges across components, so only connected
                // kNN graphs can be expected to reach M
                loop {
                    let k = r.random_range(3..=15);
                    let clusters = r.random_range(1..5);
                    let cl = ClassLevel::finest(common::cloud(r, n, d, clusters, 1.0), k).unwrap();
                    if is_connected(&cl.graph) {
                        break cl;
                    }
                    redrawn += 1;
                }
            } else {
                let g = random_graph(r, n);
                ClassLevel::new(common::cloud(r, n, d, 1, 1.0), g).unwrap()
            }
        };
        let (pos, neg) = (class(&mut r, n_pos), class(&mut r, n_neg));
        let h = build_hierarchy(pos, neg, &cfg).unwrap();
        levels += h.depth();
        let top = h.coarsest();
        let err = if h.stalled {
            Some(format!("stalled at sizes {} / {}", top.positive.len(), top.negative.len()))
        } else if top.positive.len() + top.negative.len() > 2 * m {
            Some(format!("coarsest total {} > 2M", top.positive.len() + top.negative.len()))
        } else {
            common::check_hierarchy(&h, m, order).err()
        };
        if let Some(e) = err {
            failures += 1;
            first.get_or_insert(format!("case {case} (n = {n_total}, M = {m}): {e}"));
        }
    }
    let msg = format!(
        "coarsening properties on 200 random connected graphs (n <= 2000, {levels} levels, {redrawn} disconnected kNN draws skipped): {failures} violations"
    );
    match first {
        None => Verdict::Pass(msg),
        Some(e) => Verdict::Fail(format!("{msg}; first: {e}")),
    }
}

fn criterion_solver(runs: &[TrainOutcome], pipeline_models: usize) -> Verdict {
    let tight = SolverConfig {
        tolerance: 1e-6,
        ..SolverConfig::default()
    };
    let (mut worst_gap, mut mismatches, mut infeasible) = (0.0f64, 0usize, 0usize);
    for seed in 0..500u64 {
        let (ds, params) = common::solver_instance(seed);
        let oracle = common::qp_oracle(&ds, params.c, params.gamma);
        let sol = solve_dual(&ds, params, &SolverConfig::default()).unwrap();
        worst_gap = worst_gap.max((sol.objective - oracle.objective).abs());
        if !sol.feasibility.holds() {
            infeasible += 1;
        }
        let model = train_wsvm(&ds, params, &tight).unwrap();
        if !model.feasibility.holds() {
            infeasible += 1;
        }
        let f = common::oracle_decision(&ds, &oracle.alpha, params.c, params.gamma);
        mismatches += common::query_grid(ds.points())
            .iter()
            .filter(|q| (model.decision_value(&q[..]) >= 0.0) != (f(&q[..]) >= 0.0))
            .count();
    }
    // every candidate of every benchmark run was accepted by the feasibility gate
    let mut run_models = 0;
    for o in runs {
        for f in &o.folds {
            if !f.model.model.feasibility.holds() {
                infeasible += 1;
            }
            for t in &f.trace {
                for c in &t.report.candidates {
                    run_models += 1;
                    if c.error.as_deref().is_some_and(|e| e.contains("infeasible")) {
                        infeasible += 1;
                    }
                }
            }
        }
    }
    let msg = format!(
        "solver vs projected-gradient oracle on 500 instances (n <= 25): max objective gap {worst_gap:.2e} (<= 1e-3), \
         {mismatches} grid prediction mismatches, {infeasible} infeasible among {} models",
        1000 + run_models + pipeline_models
    );
    if worst_gap <= 1e-3 && mismatches == 0 && infeasible == 0 {
        Verdict::Pass(msg)
    } else {
        Verdict::Fail(msg)
    }
}

fn criterion_recovery() -> Verdict {
    let inst = common::drop_instance();
    let off = run_pipeline(&inst.hierarchy, &inst.validation, &inst.config(false)).unwrap();
    let q_max = off.levels[0].quality().unwrap();
    let q_c = off.levels[1].quality().unwrap();
    let gap = q_max - q_c;
    let mut problems = Vec::new();
    let mut triggered = 0;
    for delta in [0.01, 0.05, 0.1, gap * 0.999, gap, gap * 1.001, 0.3, 0.6, 0.9] {
        let mut cfg = inst.config(true);
        cfg.refinement.delta = delta;
        let on = run_pipeline(&inst.hierarchy, &inst.validation, &cfg).unwrap();
        let fine = &on.levels[1];
        let ev = fine.report.recovery.clone().unwrap();
        triggered += usize::from(ev.triggered);
        if ev.triggered != (gap > delta) {
            problems.push(format!("delta {delta}: triggered = {}", ev.triggered));
        }
        if fine.quality().unwrap() < q_c {
            problems.push(format!("delta {delta}: quality fell below incoming"));
        }
        if on.final_quality().gmean < off.final_quality().gmean {
            problems.push(format!("delta {delta}: Gmean on < off"));
        }
        if ev.triggered && !(ev.accepted && fine.training.positive.contains(&inst.hidden_positive)) {
            problems.push(format!("delta {delta}: hidden positive not recovered"));
        }
    }
    let on = run_pipeline(&inst.hierarchy, &inst.validation, &inst.config(true)).unwrap();
    let msg = format!(
        "constructed drop instance: Q_max {q_max:.4}, Q_c {q_c:.4}, {triggered}/9 delta values triggered, \
         Gmean on {:.4} vs off {:.4}",
        on.final_quality().gmean,
        off.final_quality().gmean
    );
    if problems.is_empty() {
        Verdict::Pass(msg)
    } else {
        Verdict::Fail(format!("{msg}; {}", problems.join("; ")))
    }
}

struct PipelineCheck {
    verdict: Verdict,
    models: usize,
    reports: Vec<LevelReport>,
}

fn criterion_pipeline() -> PipelineCheck {
    let mut problems = Vec::new();
    let mut models = 0;
    let mut reports = Vec::new();
    let mut stops = 0;
    for case in 0..12u64 {
        let ds = common::two_class(case, 80 + 20 * case as usize, 400 + 60 * case as usize, 4, 2.0);
        let vs = sample_validation(&ds, 0.5, 0.1, case).unwrap();
        let validation = ds.subset(&vs.indices);
        let rest = ds.subset(&vs.complement(ds.len()));
        let pos = ClassLevel::finest(rest.points().select(&rest.class_indices(1)), 10).unwrap();
        let neg = ClassLevel::finest(rest.points().select(&rest.class_indices(-1)), 10).unwrap();
        let m = 30;
        let h = build_hierarchy(pos, neg, &CoarseningConfig { coarsest_size: m, ..CoarseningConfig::default() }).unwrap();
        let mut cfg = PipelineConfig::default();
        cfg.refinement.theta = [2 * m, 4 * m, 8 * m, 100 * m][case as usize % 4];
        let out = run_pipeline(&h, &validation, &cfg).unwrap();
        let again = run_pipeline(&h, &validation, &cfg).unwrap();
        models += out.levels.iter().map(|l| l.models.len()).sum::<usize>();
        reports.extend(out.levels.iter().map(|l| l.report.clone()));
        if out.reports() != again.reports() || out.model != again.model {
            problems.push(format!("case {case}: rerun differs"));
        }
        if let Some(s) = out.early_stop_level {
            stops += 1;
            let last = out.levels.last().unwrap();
            if last.level != s || last.best.is_some() || out.levels.iter().any(|l| l.level < s) {
                problems.push(format!("case {case}: training continued below early stop at level {s}"));
            }
        }
        let bests: Vec<_> = out.level_bests().into_iter().cloned().collect();
        if select_best(&bests) != Some(&out.model) || !bests.contains(&out.model) {
            problems.push(format!("case {case}: final model is not a level best"));
        }
    }

    // byte-identical reruns through the command layer
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("blobs.libsvm");
    common::write_libsvm(&data, &common::two_class(99, 150, 600, 4, 2.0));
    let mut cfg = RunConfig::default();
    cfg.kfold = 3;
    cfg.coarsening.coarsest_size = 40;
    cfg.refinement.theta = 400;
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    cmd_train(&data, &cfg, &a, DumpOptions::default()).unwrap();
    cmd_train(&data, &cfg, &b, DumpOptions::default()).unwrap();
    let mut files = vec!["config.json".to_string(), "summary.json".to_string()];
    for f in 0..3 {
        files.push(format!("fold{f}.model.json"));
        files.push(format!("fold{f}.trace.jsonl"));
    }
    for f in &files {
        if std::fs::read(a.join(f)).unwrap() != std::fs::read(b.join(f)).unwrap() {
            problems.push(format!("{f} differs between identical runs"));
        }
    }
    let msg = format!(
        "pipeline on 12 random hierarchies ({stops} early stops) and a 3-fold command rerun: {} problems",
        problems.len()
    );
    PipelineCheck {
        verdict: if problems.is_empty() { Verdict::Pass(msg) } else { Verdict::Fail(format!("{msg}; {}", problems.join("; "))) },
        models,
        reports,
    }
}

fn criterion_nud(runs: &[TrainOutcome], extra: &[LevelReport]) -> Verdict {
    let reports: Vec<&LevelReport> = runs
        .iter()
        .flat_map(|o| o.folds.iter().flat_map(|f| f.trace.iter().map(|t| &t.report)))
        .chain(extra)
        .collect();
    let mut problems = Vec::new();
    let (mut levels, mut max_models, mut centered) = (0, 0, 0);
    for r in &reports {
        if r.early_stop {
            continue;
        }
        levels += 1;
        max_models = max_models.max(r.trained_models);
        if r.trained_models > 13 {
            problems.push(format!("level {} trained {} models", r.level, r.trained_models));
        }
        if let Some((c, g)) = r.inherited_center {
            centered += 1;
            if !r.candidates.iter().any(|k| k.stage == 1 && k.log2c == c && k.log2g == g && k.error.is_none()) {
                problems.push(format!("level {}: inherited center not evaluated", r.level));
            }
        }
    }
    let msg = format!(
        "{levels} trained levels: at most {max_models} models per level search (<= 13), inherited center evaluated at {centered}/{centered} refined levels"
    );
    if problems.is_empty() && levels > 0 {
        Verdict::Pass(msg)
    } else {
        Verdict::Fail(format!("{msg}; {}", problems.join("; ")))
    }
}

fn main() {
    let mut runs = Vec::new();
    let mut verdicts: Vec<(usize, Verdict)> = Vec::new();
    for (i, b) in BENCHMARKS.iter().enumerate() {
        verdicts.push((i + 1, benchmark(b, &mut runs)));
    }
    verdicts.push((5, criterion_coarsening()));
    let pipeline = criterion_pipeline();
    verdicts.push((6, criterion_solver(&runs, pipeline.models)));
    verdicts.push((7, criterion_recovery()));
    verdicts.push((8, pipeline.verdict));
    verdicts.push((9, criterion_nud(&runs, &pipeline.reports)));

    let mut failed = 0;
    for (n, v) in &verdicts {
        match v {
            Verdict::Pass(m) => println!("PASS criterion {n}: {m}"),
            Verdict::Fail(m) => {
                failed += 1;
                println!("FAIL criterion {n}: {m}");
            }
            Verdict::Absent(m) => println!("FAIL criterion {n}: {m}"),
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
