use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::persist::{sha256_hex, Evaluation, ModelFile, Provenance, FORMAT_VERSION};
use super::trace::{aggregate, level_rows, read_trace, write_csv, write_trace, LevelAggregate, LevelRow, TraceRecord};
use crate::coarsening::{build_hierarchy, ClassLevel, LevelSummary};
use crate::data_io::{
    infer_label_map, make_split_plan, read_table, sample_validation, CsvOptions, DataFormat, LabelMap,
    LabeledDataset, NormalizationStats, SplitPlan, NEGATIVE, POSITIVE,
};
use crate::error::{Error, Result};
use crate::model_eval::{evaluate, QualityMetrics};
use crate::knn_graph::ProximityGraph;
use crate::refinement::{run_pipeline, PipelineOutcome};

#[derive(Debug, Clone, Copy, Default)]
pub struct DumpOptions {
    pub hierarchy: bool,
    pub graphs: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub fold: usize,
    pub test: QualityMetrics,
    pub level: usize,
    pub depth: usize,
    pub n_sv: usize,
    #[serde(rename = "C")]
    pub c: f64,
    pub gamma: f64,
    pub early_stop_level: Option<usize>,
    pub recovered_levels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanMetrics {
    #[serde(rename = "ACC")]
    pub acc: f64,
    #[serde(rename = "SN")]
    pub sn: f64,
    #[serde(rename = "SP")]
    pub sp: f64,
    #[serde(rename = "Gmean")]
    pub gmean: f64,
}

/// Deterministic run summary; timing lives in a separate file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub dataset: String,
    pub dataset_sha256: String,
    pub rows: usize,
    pub features: usize,
    pub labels: LabelMap,
    pub config: RunConfig,
    pub folds: Vec<FoldSummary>,
    pub mean: MeanMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall_seconds: f64,
    pub fold_seconds: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct FoldResult {
    pub summary: FoldSummary,
    pub model: ModelFile,
    pub trace: Vec<TraceRecord>,
    pub hierarchy: Vec<LevelSummary>,
    /// Original row ids.
    pub test_ids: Vec<usize>,
    pub validation_ids: Vec<usize>,
    /// Original row ids of the finest-level training set, when refinement
    /// reached the finest level.
    pub finest_training_ids: Option<Vec<usize>>,
    pub graphs: Option<[String; 2]>,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub summary: Summary,
    pub timing: Timing,
    pub folds: Vec<FoldResult>,
}

/// Dataset with labels mapped onto ±1, plus the bytes hash.
pub struct LoadedData {
    pub data: LabeledDataset,
    pub labels: LabelMap,
    pub sha256: String,
}

pub fn load_training_data(path: &Path, format: DataFormat, csv: &CsvOptions) -> Result<LoadedData> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let table = read_table(path, format, csv)?;
    let raw = table
        .labels
        .ok_or_else(|| Error::invalid(format!("{} has no label column", path.display())))?;
    if raw.is_empty() {
        return Err(Error::invalid(format!("{} contains no rows", path.display())));
    }
    let labels = infer_label_map(&raw)?;
    let y = raw.iter().map(|l| labels.map(l).expect("label in map")).collect();
    Ok(LoadedData {
        data: LabeledDataset::from_finest(table.points, y)?,
        labels,
        sha256: sha256_hex(&bytes),
    })
}

/// Multilevel fit on already-normalized training rows.
#[derive(Debug, Clone)]
pub struct Fit {
    pub outcome: PipelineOutcome,
    pub validation: LabeledDataset,
    pub depth: usize,
    pub hierarchy: Vec<LevelSummary>,
    /// Original ids of the finest-level training set, when refinement
    /// reached the finest level.
    pub finest_training_ids: Option<Vec<usize>>,
    /// Edge lists of the finest positive and negative graphs.
    pub graphs: Option<[String; 2]>,
}

/// Draw the validation sample, build both class hierarchies and run the
/// refinement pipeline.
pub fn fit_multilevel(train: &LabeledDataset, cfg: &RunConfig, seed: u64, dumps: DumpOptions) -> Result<Fit> {
    let vs = sample_validation(train, cfg.val_min_ratio, cfg.val_maj_ratio, seed)?;
    let validation = train.subset(&vs.indices);
    let rest = train.subset(&vs.complement(train.len()));
    let pos_rows = rest.class_indices(POSITIVE);
    let neg_rows = rest.class_indices(NEGATIVE);
    if pos_rows.is_empty() || neg_rows.is_empty() {
        return Err(Error::ClassCount(1));
    }
    let pos_ids: Vec<usize> = pos_rows.iter().map(|&r| rest.ids()[r]).collect();
    let neg_ids: Vec<usize> = neg_rows.iter().map(|&r| rest.ids()[r]).collect();

    let (pos, neg) = rayon::join(
        || ClassLevel::finest(rest.points().select(&pos_rows), cfg.knn),
        || ClassLevel::finest(rest.points().select(&neg_rows), cfg.knn),
    );
    let (pos, neg) = (pos?, neg?);
    let graphs = if dumps.graphs {
        let dump = |g: &ProximityGraph| -> Result<String> {
            let mut buf = Vec::new();
            g.write_edge_list(&mut buf).map_err(|e| Error::io("<graph>", e))?;
            Ok(String::from_utf8(buf).expect("ascii"))
        };
        Some([dump(&pos.graph)?, dump(&neg.graph)?])
    } else {
        None
    };
    let hierarchy = build_hierarchy(pos, neg, &cfg.coarsening)?;
    let outcome = run_pipeline(&hierarchy, &validation, &cfg.pipeline())?;
    let finest_training_ids = outcome.levels.iter().find(|l| l.level == 1 && !l.early_stop).map(|l| {
        let mut ids: Vec<usize> = l
            .training
            .positive
            .iter()
            .map(|&j| pos_ids[j])
            .chain(l.training.negative.iter().map(|&j| neg_ids[j]))
            .collect();
        ids.sort_unstable();
        ids
    });
    Ok(Fit {
        outcome,
        validation,
        depth: hierarchy.depth(),
        hierarchy: if dumps.hierarchy { hierarchy.summaries() } else { Vec::new() },
        finest_training_ids,
        graphs,
    })
}

/// Train and test one fold of `plan`. Normalization is fit on the training
/// rows of the fold only.
pub fn train_fold(loaded: &LoadedData, plan: &SplitPlan, fold: usize, cfg: &RunConfig, dumps: DumpOptions) -> Result<FoldResult> {
    let start = Instant::now();
    let ds = &loaded.data;
    let train_rows = plan.train_indices(fold);
    let test_rows = plan.test_indices(fold);
    let stats = NormalizationStats::fit(&ds.points().select(&train_rows))?;
    let normalized = ds.with_points(stats.apply(ds.points())?)?;
    let train = normalized.subset(&train_rows);
    let test = normalized.subset(&test_rows);
    let fit = fit_multilevel(&train, cfg, cfg.fold_seed(fold), dumps)?;
    let outcome = &fit.outcome;

    let model = outcome.model.clone();
    let test_q = evaluate(&model, &test)?;
    let dataset_q = evaluate(&model, &normalized)?;
    let trace: Vec<TraceRecord> = outcome
        .levels
        .iter()
        .map(|l| TraceRecord {
            fold,
            report: l.report.clone(),
        })
        .collect();
    let summary = FoldSummary {
        fold,
        test: test_q,
        level: model.level,
        depth: fit.depth,
        n_sv: model.n_sv(),
        c: model.params.c,
        gamma: model.params.gamma,
        early_stop_level: outcome.early_stop_level,
        recovered_levels: outcome.levels.iter().filter(|l| l.report.recovered).map(|l| l.level).collect(),
    };
    let file = ModelFile {
        format_version: FORMAT_VERSION,
        config: cfg.clone(),
        normalization: stats,
        labels: loaded.labels.clone(),
        provenance: Provenance {
            level: model.level,
            fold: Some(fold),
            dataset_sha256: loaded.sha256.clone(),
        },
        evaluation: Evaluation {
            test: Some(test_q),
            dataset: dataset_q,
        },
        model,
    };
    let mut validation_ids = fit.validation.ids().to_vec();
    validation_ids.sort_unstable();
    let result = FoldResult {
        summary,
        model: file,
        trace,
        hierarchy: fit.hierarchy,
        test_ids: test.ids().to_vec(),
        validation_ids,
        finest_training_ids: fit.finest_training_ids,
        graphs: fit.graphs,
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok(result)
}

fn write_file(path: &Path, contents: &[u8]) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn json_pretty<T: Serialize>(v: &T) -> Result<Vec<u8>> {
    let mut s = serde_json::to_vec_pretty(v)?;
    s.push(b'\n');
    Ok(s)
}

/// k-fold training. Writes `config.json`, `summary.json`, `timing.json` and,
/// per fold, `fold{f}.model.json` and `fold{f}.trace.jsonl` into `out_dir`.
pub fn cmd_train(path: &Path, cfg: &RunConfig, out_dir: &Path, dumps: DumpOptions) -> Result<TrainOutcome> {
    cfg.validate()?;
    let start = Instant::now();
    let loaded = load_training_data(path, cfg.format, &cfg.csv)?;
    let plan = make_split_plan(&loaded.data, cfg.kfold, cfg.seed)?;
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_file(&out_dir.join("config.json"), &json_pretty(cfg)?)?;

    let mut folds = Vec::with_capacity(cfg.kfold);
    for fold in 0..cfg.kfold {
        let res = train_fold(&loaded, &plan, fold, cfg, dumps)?;
        log::info!(
            "fold {fold}: test Gmean {:.4} (level {}, {} SVs) in {:.1}s",
            res.summary.test.gmean,
            res.summary.level,
            res.summary.n_sv,
            res.seconds
        );
        res.model.save(&out_dir.join(format!("fold{fold}.model.json")))?;
        let trace_path = out_dir.join(format!("fold{fold}.trace.jsonl"));
        let f = fs::File::create(&trace_path).map_err(|e| Error::io(&trace_path, e))?;
        write_trace(BufWriter::new(f), &res.trace)?;
        if dumps.hierarchy {
            let mut buf = Vec::new();
            for s in &res.hierarchy {
                serde_json::to_writer(&mut buf, s)?;
                buf.push(b'\n');
            }
            write_file(&out_dir.join(format!("fold{fold}.hierarchy.jsonl")), &buf)?;
        }
        if let Some([p, n]) = &res.graphs {
            write_file(&out_dir.join(format!("fold{fold}.graph.positive.txt")), p.as_bytes())?;
            write_file(&out_dir.join(format!("fold{fold}.graph.negative.txt")), n.as_bytes())?;
        }
        folds.push(res);
    }

    let k = folds.len() as f64;
    let mean = |f: fn(&QualityMetrics) -> f64| folds.iter().map(|r| f(&r.summary.test)).sum::<f64>() / k;
    let summary = Summary {
        dataset: path.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned()),
        dataset_sha256: loaded.sha256.clone(),
        rows: loaded.data.len(),
        features: loaded.data.dim(),
        labels: loaded.labels.clone(),
        config: cfg.clone(),
        folds: folds.iter().map(|r| r.summary.clone()).collect(),
        mean: MeanMetrics {
            acc: mean(|q| q.acc),
            sn: mean(|q| q.sn),
            sp: mean(|q| q.sp),
            gmean: mean(|q| q.gmean),
        },
    };
    let timing = Timing {
        wall_seconds: start.elapsed().as_secs_f64(),
        fold_seconds: folds.iter().map(|r| r.seconds).collect(),
    };
    write_file(&out_dir.join("summary.json"), &json_pretty(&summary)?)?;
    write_file(&out_dir.join("timing.json"), &json_pretty(&timing)?)?;
    Ok(TrainOutcome { summary, timing, folds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub label: String,
    pub decision_value: f64,
}

#[derive(Debug, Clone)]
pub struct PredictOutcome {
    pub predictions: Vec<Prediction>,
    pub metrics: Option<QualityMetrics>,
}

/// Score every row of `data`; metrics are computed when the file has labels.
pub fn cmd_predict(model_path: &Path, data: &Path, format: Option<DataFormat>, csv: Option<&CsvOptions>, out: Option<&Path>) -> Result<PredictOutcome> {
    let file = ModelFile::load(model_path)?;
    let format = format.unwrap_or(file.config.format);
    let csv = csv.unwrap_or(&file.config.csv);
    let d = file.normalization.mean.len();
    let table = read_table(data, format, csv)?.conform_to(d)?;
    let points = file.normalization.apply(&table.points)?;
    let (labels, values) = file.model.predict(&points)?;
    let predictions: Vec<Prediction> = labels
        .iter()
        .zip(&values)
        .map(|(&l, &v)| Prediction {
            label: file.labels.original(l).to_string(),
            decision_value: v,
        })
        .collect();
    let metrics = match &table.labels {
        Some(raw) => {
            let truth = raw
                .iter()
                .enumerate()
                .map(|(i, l)| {
                    file.labels.map(l).ok_or_else(|| Error::Parse {
                        path: data.to_path_buf(),
                        line: i + 1,
                        message: format!("label {l:?} was not seen in training"),
                    })
                })
                .collect::<Result<Vec<i8>>>()?;
            Some(QualityMetrics::from_predictions(&truth, &labels))
        }
        None => None,
    };
    if let Some(out) = out {
        let f = fs::File::create(out).map_err(|e| Error::io(out, e))?;
        write_csv(BufWriter::new(f), &predictions)?;
    }
    Ok(PredictOutcome { predictions, metrics })
}

#[derive(Debug, Clone)]
pub struct ReportOutcome {
    pub rows: Vec<LevelRow>,
    pub aggregate: Vec<LevelAggregate>,
}

/// Per-level rows and aggregates from one or more traces.
pub fn build_report(traces: &[PathBuf]) -> Result<ReportOutcome> {
    if traces.is_empty() {
        return Err(Error::config("report needs at least one trace file"));
    }
    let loaded = traces
        .iter()
        .map(|p| Ok((p.clone(), read_trace(p)?)))
        .collect::<Result<Vec<_>>>()?;
    let rows = level_rows(&loaded);
    let aggregate = aggregate(&rows);
    Ok(ReportOutcome { rows, aggregate })
}

/// Write the per-level table to `out` (stdout when `None`) and, optionally,
/// the per-level aggregates to `summary_out`.
pub fn cmd_report(traces: &[PathBuf], out: Option<&Path>, summary_out: Option<&Path>) -> Result<ReportOutcome> {
    let report = build_report(traces)?;
    let rows = &report.rows;
    match out {
        Some(p) => {
            let f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
            write_csv(BufWriter::new(f), rows)?;
        }
        None => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            write_csv(&mut lock, rows)?;
            lock.flush().map_err(|e| Error::io("<stdout>", e))?;
        }
    }
    if let Some(p) = summary_out {
        let f = fs::File::create(p).map_err(|e| Error::io(p, e))?;
        write_csv(BufWriter::new(f), &report.aggregate)?;
    }
    Ok(report)
}
