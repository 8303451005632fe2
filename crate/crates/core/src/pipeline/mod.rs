//! End-to-end orchestration: load or synthesize → encode → resample →
//! split → train (or predict in context) → evaluate → render.
//!
//! Every stage writes its artifact into the run directory, and each stage
//! function can be called on its own with the files of the previous one.

mod config;

pub use config::RunConfig;

use crate::data::{
    encode, ingest_csv, stratified_split, Block, EncodedMatrix, IngestReport, ModelInput, Schema, SplitIndices,
    SyntheticSpec, TabularDataset, TrainStats, CLASS_NAMES, N_CLASSES,
};
use crate::error::{Error, Result};
use crate::models::{
    pca_project, stratified_support, AnyModel, Checkpoint, Classifier, MambaAttention, MetaTrainLog, ModelKind,
    PfnModel, TabTransformer, TaskPrior,
};
use crate::report::{self, kde, kde_grid, sankey_flows, KdeCurve};
use crate::resample::{smoteenn, ResampleAudit};
use crate::train::{evaluate, train, EvaluationReport, TrainingLog};
use serde::{Deserialize, Serialize};
use std::path::{Path, PathBuf};

fn stage<T>(name: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        e @ Error::Stage { .. } => e,
        e => Error::Stage {
            stage: name.to_string(),
            source: Box::new(e),
        },
    })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

pub fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
}

/// The raw table of a run, from file or from a built-in synthetic spec.
pub fn load_dataset(cfg: &RunConfig) -> Result<(TabularDataset, Option<IngestReport>)> {
    stage("load", load_inner(cfg))
}

fn load_inner(cfg: &RunConfig) -> Result<(TabularDataset, Option<IngestReport>)> {
    if let Some(data) = &cfg.data {
        let schema_path = cfg.schema.as_ref().ok_or_else(|| Error::config("a data file needs a schema"))?;
        let schema = Schema::load(schema_path)?;
        let (ds, report) = ingest_csv(data, &schema)?;
        return Ok((ds, Some(report)));
    }
    let spec = match cfg.synthetic.as_deref() {
        Some("separable") => SyntheticSpec::separable(cfg.synthetic_rows),
        Some("crash_like") => SyntheticSpec::crash_like(cfg.synthetic_rows),
        other => return Err(Error::config(format!("unknown synthetic table {other:?}"))),
    };
    if let Some(path) = &cfg.schema {
        let schema = Schema::load(path)?;
        if schema != spec.schema()? {
            return Err(Error::Schema("schema file does not describe the synthetic table".into()));
        }
    }
    Ok((spec.synthesize(cfg.stage_seed("synthesize"))?, None))
}

/// Output of the `prepare` stage.
#[derive(Clone, Debug)]
pub struct Prepared {
    pub dataset: TabularDataset,
    pub ingest: Option<IngestReport>,
    pub encoded: EncodedMatrix,
    pub stats: TrainStats,
}

/// Loads and encodes the whole table; writes `encoded.csv` and `stats.json`
/// (plus `ingest_report.json` for file input).
pub fn prepare(cfg: &RunConfig, dir: &Path) -> Result<Prepared> {
    let (dataset, ingest) = load_dataset(cfg)?;
    stage("prepare", (|| {
        std::fs::create_dir_all(dir)?;
        if let Some(r) = &ingest {
            write_json(&dir.join("ingest_report.json"), r)?;
        }
        let (encoded, stats) = encode(&dataset, None)?;
        encoded.write_csv(&dir.join("encoded.csv"))?;
        write_json(&dir.join("stats.json"), &stats)?;
        Ok(Prepared {
            dataset: dataset.clone(),
            ingest: ingest.clone(),
            encoded,
            stats,
        })
    })())
}

/// SMOTE + ENN on `m`; writes `resampled.csv` and `resample_audit.json`.
pub fn resample_stage(cfg: &RunConfig, m: &EncodedMatrix, dir: &Path) -> Result<(EncodedMatrix, ResampleAudit)> {
    stage("resample", (|| {
        std::fs::create_dir_all(dir)?;
        let (out, audit) = smoteenn(m, &cfg.resample_config())?;
        out.write_csv(&dir.join("resampled.csv"))?;
        write_json(&dir.join("resample_audit.json"), &audit)?;
        Ok((out, audit))
    })())
}

/// What the training stage produced.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: AnyModel,
    pub log: Option<TrainingLog>,
    pub meta_log: Option<MetaTrainLog>,
    pub report: EvaluationReport,
    pub split: SplitIndices,
}

/// Splits `m` and fits, evaluates and checkpoints the configured model.
pub fn train_stage(cfg: &RunConfig, m: &EncodedMatrix, dir: &Path) -> Result<TrainOutcome> {
    let split = stage("split", stratified_split(&m.labels, cfg.split, cfg.stage_seed("split")))?;
    stage("split", write_json(&dir.join("split.json"), &split))?;
    let (tr, va, te) = (m.subset(&split.train), m.subset(&split.validation), m.subset(&split.test));
    fit_and_evaluate(cfg, &tr, &va, &te, split, dir)
}

fn fit_and_evaluate(
    cfg: &RunConfig,
    tr: &EncodedMatrix,
    va: &EncodedMatrix,
    te: &EncodedMatrix,
    split: SplitIndices,
    dir: &Path,
) -> Result<TrainOutcome> {
    std::fs::create_dir_all(dir)?;
    let (model, log, meta_log, probs) = match cfg.model {
        ModelKind::Pfn => {
            let (pfn, meta) = stage("train", pfn_model(cfg))?;
            let probs = stage("predict", pfn_predict_matrix(cfg, &pfn, tr, te))?;
            (AnyModel::Pfn(pfn), None, meta, probs)
        }
        kind => {
            let (tri, vai, tei) = (tr.to_model_input(), va.to_model_input(), te.to_model_input());
            let mut model = stage("train", build_classifier(cfg, kind, tr))?;
            let log = {
                let c: &mut dyn Classifier = match &mut model {
                    AnyModel::Mamba(m) => m,
                    AnyModel::Tab(m) => m,
                    AnyModel::Pfn(_) => unreachable!("handled above"),
                };
                stage("train", train(c, &tri, &vai, &cfg.train_config()))?
            };
            stage("train", log.write_csv(&dir.join("training_log.csv")))?;
            let probs = stage("evaluate", predict(&model, &tei))?;
            (model, Some(log), None, probs)
        }
    };
    stage("train", model.checkpoint()?.save(&dir.join("model.json")))?;
    let mut report = stage("evaluate", evaluate(&probs, &te.labels))?;
    report.config = serde_json::to_value(cfg)?;
    report.seed = cfg.seed;
    stage("evaluate", report.write(&dir.join("metrics.json")))?;
    Ok(TrainOutcome {
        model,
        log,
        meta_log,
        report,
        split,
    })
}

fn build_classifier(cfg: &RunConfig, kind: ModelKind, m: &EncodedMatrix) -> Result<AnyModel> {
    let (vocab, n_cont) = (m.layout.vocab_sizes(), m.layout.continuous_names().len());
    Ok(match kind {
        ModelKind::MambaAttention => {
            let mut c = cfg.mamba_config(vocab, n_cont);
            c.token_order = m.layout.token_order();
            AnyModel::Mamba(MambaAttention::new(c)?)
        }
        ModelKind::TabTransformer => AnyModel::Tab(TabTransformer::new(cfg.tab_config(vocab, n_cont))?),
        ModelKind::Pfn => AnyModel::Pfn(PfnModel::new(cfg.pfn_config())?),
    })
}

/// Class probabilities from a row classifier checkpoint.
pub fn predict(model: &AnyModel, input: &ModelInput) -> Result<Vec<[f64; N_CLASSES]>> {
    model
        .as_classifier()
        .ok_or_else(|| Error::contract("the PFN predicts from a support set"))?
        .predict_proba(input)
}

/// Loads the configured PFN checkpoint, or meta-trains a fresh model.
pub fn pfn_model(cfg: &RunConfig) -> Result<(PfnModel, Option<MetaTrainLog>)> {
    if let Some(path) = &cfg.pfn_checkpoint {
        let ck = Checkpoint::load(path)?;
        return Ok((PfnModel::from_checkpoint(&ck)?, None));
    }
    let mut m = PfnModel::new(cfg.pfn_config())?;
    let log = m
        .meta_train(
            &TaskPrior::default(),
            cfg.pfn_steps,
            cfg.pfn_tasks_per_step,
            cfg.pfn_lr,
            cfg.stage_seed("pfn-meta-train"),
        )?
        .clone();
    Ok((m, Some(log)))
}

/// In-context prediction for the rows of `queries`: a stratified support
/// subsample of `support` (at most the model capacity) is projected, with
/// the queries, onto its leading principal components.
pub fn pfn_predict_matrix(
    cfg: &RunConfig,
    model: &PfnModel,
    support: &EncodedMatrix,
    queries: &EncodedMatrix,
) -> Result<Vec<[f64; N_CLASSES]>> {
    if support.width() != queries.width() {
        return Err(Error::dim("support and query widths differ"));
    }
    let cap = model.config().max_support.min(cfg.pfn_support);
    let pick = stratified_support(&support.labels, cap, cfg.stage_seed("pfn-support"));
    let s = support.subset(&pick);
    let k = model.config().max_features;
    let (sx, f) = pca_project(&s.data, &s.data, s.width(), k)?;
    let (qx, _) = pca_project(&s.data, &queries.data, s.width(), k)?;
    model.predict(&sx, &s.labels, f, &qx)
}

fn file_stem(name: &str) -> String {
    name.chars().map(|c| if c.is_ascii_alphanumeric() { c } else { '_' }).collect()
}

/// Values of one encoded column per class.
fn column_by_class(m: &EncodedMatrix, col: usize) -> Vec<Vec<f64>> {
    let mut out = vec![Vec::new(); N_CLASSES];
    for r in 0..m.n_rows() {
        out[m.labels[r]].push(m.row(r)[col]);
    }
    out
}

/// Per-class density curves of one encoded column before and after resampling.
pub fn kde_curves(feature: &str, original: &EncodedMatrix, resampled: Option<&EncodedMatrix>) -> Result<Vec<KdeCurve>> {
    let names = original.layout.column_names();
    let col = names
        .iter()
        .position(|n| n == feature)
        .ok_or_else(|| Error::config(format!("unknown KDE feature {feature:?}")))?;
    let mut sets: Vec<(String, Vec<f64>)> = Vec::new();
    for (tag, m) in [("original", Some(original)), ("resampled", resampled)] {
        let Some(m) = m else { continue };
        for (c, values) in column_by_class(m, col).into_iter().enumerate() {
            if !values.is_empty() {
                sets.push((format!("{tag} {} (n={})", CLASS_NAMES[c], values.len()), values));
            }
        }
    }
    let refs: Vec<&[f64]> = sets.iter().map(|(_, v)| v.as_slice()).collect();
    let grid = kde_grid(&refs, 200)?;
    sets.iter().map(|(tag, v)| kde(feature, tag, v, &grid, None)).collect()
}

fn default_kde_features(m: &EncodedMatrix) -> Vec<String> {
    let cont: Vec<String> = m
        .layout
        .blocks
        .iter()
        .filter_map(|b| match b {
            Block::Continuous { column } => Some(column.clone()),
            _ => None,
        })
        .take(4)
        .collect();
    if !cont.is_empty() {
        return cont;
    }
    m.layout.column_names().into_iter().take(3).collect()
}

fn default_sankey_stages(ds: &TabularDataset) -> Vec<String> {
    let mut s: Vec<String> = ds.schema().categorical().take(3).map(|c| c.name.clone()).collect();
    s.push(ds.schema().label().name.clone());
    s
}

/// Renders the figures of a finished run into `dir`.
pub fn report_stage(
    cfg: &RunConfig,
    dataset: Option<&TabularDataset>,
    original: Option<&EncodedMatrix>,
    resampled: Option<&EncodedMatrix>,
    outcome: &TrainOutcome,
    dir: &Path,
) -> Result<()> {
    stage("report", (|| {
        if let Some(log) = &outcome.log {
            report::render_curves(log, &dir.join("curves.svg"), &dir.join("curves.csv"))?;
        } else if let Some(meta) = &outcome.meta_log {
            render_meta_curve(meta, dir)?;
        }
        render_evaluation(&outcome.report, dir)?;
        if let Some(orig) = original {
            let features = if cfg.kde_features.is_empty() {
                default_kde_features(orig)
            } else {
                cfg.kde_features.clone()
            };
            for f in features {
                let curves = kde_curves(&f, orig, resampled)?;
                let stem = file_stem(&f);
                report::render_kde(&curves, &dir.join(format!("kde_{stem}.svg")), &dir.join(format!("kde_{stem}.csv")))?;
            }
        }
        if let Some(ds) = dataset {
            let stages = if cfg.sankey_stages.is_empty() {
                default_sankey_stages(ds)
            } else {
                cfg.sankey_stages.clone()
            };
            if stages.len() >= 2 {
                let flows = sankey_flows(ds, &stages)?;
                report::render_sankey(&flows, &dir.join("sankey.svg"), &dir.join("sankey.csv"))?;
            }
        }
        Ok(())
    })())
}

/// Confusion heatmap and ROC plot of an evaluation report.
pub fn render_evaluation(report: &EvaluationReport, dir: &Path) -> Result<()> {
    report::render_confusion(&report.confusion, &CLASS_NAMES, &dir.join("confusion.svg"), &dir.join("confusion.csv"))?;
    report::render_roc(report, &CLASS_NAMES, &dir.join("roc.svg"), &dir.join("roc.csv"))
}

fn render_meta_curve(meta: &MetaTrainLog, dir: &Path) -> Result<()> {
    let window = 50.min(meta.losses.len()).max(1);
    let pts: Vec<(f64, f64)> = meta
        .window_means(window)
        .into_iter()
        .enumerate()
        .map(|(i, v)| (((i + 1) * window) as f64, v))
        .collect();
    let series = [report::svg::Series {
        name: format!("query loss, {window}-step mean"),
        points: &pts,
    }];
    let (x0, x1, _, y1) = report::svg::bounds(&series);
    let mut doc = report::svg::Doc::new(760.0, 340.0);
    report::svg::line_panel(&mut doc, 0.0, 0.0, "Meta-training", "step", "cross-entropy", &series, (x0, x1, 0.0, y1));
    std::fs::write(dir.join("curves.svg"), doc.finish())?;
    let mut w = csv::Writer::from_path(dir.join("curves.csv"))?;
    w.write_record(["step", "loss"])?;
    for (s, l) in &pts {
        w.serialize((*s as usize, *l))?;
    }
    w.flush()?;
    Ok(())
}

/// Runs every stage and returns the run directory.
pub fn run_pipeline(cfg: &RunConfig) -> Result<PathBuf> {
    stage("config", cfg.validate())?;
    let dir = cfg.run_dir();
    stage("prepare", std::fs::create_dir_all(&dir).map_err(Error::from))?;
    let outcome;
    let (dataset, original, resampled);
    if cfg.resample_after_split {
        let (ds, ingest) = load_dataset(cfg)?;
        if let Some(r) = &ingest {
            stage("prepare", write_json(&dir.join("ingest_report.json"), r))?;
        }
        let split = stage("split", stratified_split(ds.labels(), cfg.split, cfg.stage_seed("split")))?;
        stage("split", write_json(&dir.join("split.json"), &split))?;
        let train_ds = ds.subset(&split.train);
        let (tr, stats) = stage("prepare", encode(&train_ds, None))?;
        stage("prepare", write_json(&dir.join("stats.json"), &stats))?;
        stage("prepare", tr.write_csv(&dir.join("encoded.csv")))?;
        let (va, _) = stage("prepare", encode(&ds.subset(&split.validation), Some(&stats)))?;
        let (te, _) = stage("prepare", encode(&ds.subset(&split.test), Some(&stats)))?;
        let tr_res = if cfg.resample {
            Some(resample_stage(cfg, &tr, &dir)?.0)
        } else {
            None
        };
        outcome = fit_and_evaluate(cfg, tr_res.as_ref().unwrap_or(&tr), &va, &te, split, &dir)?;
        dataset = ds;
        original = tr;
        resampled = tr_res;
    } else {
        let p = prepare(cfg, &dir)?;
        let res = if cfg.resample {
            Some(resample_stage(cfg, &p.encoded, &dir)?.0)
        } else {
            None
        };
        outcome = train_stage(cfg, res.as_ref().unwrap_or(&p.encoded), &dir)?;
        dataset = p.dataset;
        original = p.encoded;
        resampled = res;
    }
    report_stage(cfg, Some(&dataset), Some(&original), resampled.as_ref(), &outcome, &dir)?;
    Ok(dir)
}

/// One row of a model comparison.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model: String,
    pub f1: Vec<f64>,
    pub accuracy: Vec<f64>,
    pub overall_accuracy: f64,
    pub macro_auc: Option<f64>,
    /// Overall accuracy minus that of the first row.
    pub delta_accuracy: f64,
    /// Macro-AUC minus that of the first row, when both are defined.
    pub delta_macro_auc: Option<f64>,
}

/// Side-by-side metrics of several runs, rows in input order.
pub fn compare(reports: &[(String, EvaluationReport)]) -> Result<Vec<ComparisonRow>> {
    if reports.len() < 2 {
        return Err(Error::contract("comparison needs at least two reports"));
    }
    let classes = reports[0].1.per_class.len();
    if reports.iter().any(|(_, r)| r.per_class.len() != classes || r.confusion.len() != classes) {
        return Err(Error::contract("reports do not share the same class set"));
    }
    let (acc0, auc0) = (reports[0].1.overall_accuracy, reports[0].1.macro_auc);
    Ok(reports
        .iter()
        .map(|(name, r)| ComparisonRow {
            model: name.clone(),
            f1: r.per_class.iter().map(|c| c.f1).collect(),
            accuracy: r.per_class.iter().map(|c| c.accuracy).collect(),
            overall_accuracy: r.overall_accuracy,
            macro_auc: r.macro_auc,
            delta_accuracy: r.overall_accuracy - acc0,
            delta_macro_auc: r.macro_auc.zip(auc0).map(|(a, b)| a - b),
        })
        .collect())
}

/// Display name of a report: `run_id:model` from its embedded config.
pub fn report_name(report: &EvaluationReport, fallback: &str) -> String {
    let get = |k: &str| report.config.get(k).and_then(|v| v.as_str()).map(str::to_string);
    match (get("run_id"), get("model")) {
        (Some(r), Some(m)) => format!("{r}:{m}"),
        _ => fallback.to_string(),
    }
}

/// Writes `compare.csv` and `compare.svg`.
pub fn write_comparison(rows: &[ComparisonRow], dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let classes = rows.first().map_or(0, |r| r.f1.len());
    let mut header = vec!["model".to_string()];
    header.extend((0..classes).map(|c| format!("f1_{c}")));
    header.extend((0..classes).map(|c| format!("accuracy_{c}")));
    header.extend(["overall_accuracy", "macro_auc", "delta_accuracy", "delta_macro_auc"].map(String::from));
    let mut w = csv::Writer::from_path(dir.join("compare.csv"))?;
    w.write_record(&header)?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in rows {
        let mut rec = vec![r.model.clone()];
        rec.extend(r.f1.iter().chain(&r.accuracy).map(f64::to_string));
        rec.push(r.overall_accuracy.to_string());
        rec.push(opt(r.macro_auc));
        rec.push(r.delta_accuracy.to_string());
        rec.push(opt(r.delta_macro_auc));
        w.write_record(&rec)?;
    }
    w.flush()?;
    let mut metrics: Vec<String> = (0..classes).map(|c| format!("F1 {}", CLASS_NAMES.get(c).unwrap_or(&"?"))).collect();
    metrics.extend(["accuracy".to_string(), "macro-AUC".to_string()]);
    let values: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let mut v = r.f1.clone();
            v.push(r.overall_accuracy);
            v.push(r.macro_auc.unwrap_or(0.0));
            v
        })
        .collect();
    let models: Vec<String> = rows.iter().map(|r| r.model.clone()).collect();
    std::fs::write(dir.join("compare.svg"), report::bar_chart_svg("Model comparison", &metrics, &models, &values))?;
    Ok(())
}

/// Loads the artifacts `prepare` wrote.
pub fn load_prepared(dir: &Path) -> Result<(EncodedMatrix, TrainStats)> {
    let stats: TrainStats = read_json(&dir.join("stats.json"))?;
    let m = EncodedMatrix::read_csv(&dir.join("encoded.csv"), &stats.layout)?;
    Ok((m, stats))
}

