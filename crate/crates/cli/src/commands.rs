//! One function per pipeline command. Each reads its inputs through
//! [`Ctx::input`] and writes every artifact through [`Ctx::put`], so the
//! manifest sees all of them.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use ndarray::{concatenate, Array2, Axis};
use serde_json::json;
use triage_core::annotation::{agreement_report, load_annotations};
use triage_core::classifiers::{
    carve_validation, fit_baseline, load_checkpoint, save_checkpoint, train, Dataset, FusionModel,
    TrainHistory,
};
use triage_core::corpus::{
    build_queries, labeled_collection_queries, load_labels, load_posts, stratified_split_indices,
    trend_collection_queries, write_posts, Post, SplitIndices, SplitSpec, SplitStrategy,
};
use triage_core::encoders::{
    encode_image, encode_text, read_feature_cache, write_feature_cache, CacheHeader, FeatureRecord,
    StubImageBackend, StubTextBackend, FEATURE_WIDTH,
};
use triage_core::evaluation::{aggregate_runs, evaluate, EvalReport, Predicted, RunAggregate};
use triage_core::par::ExecMode;
use triage_core::seeds::{self, Stream};
use triage_core::topics::{embed_posts, fit_topics, HashingEmbedder, JointEmbedder, RecordedEmbedder};
use triage_core::trends::{
    class_trend_series, parse_classes, province_distribution, render_svg, weekly_counts, Gazetteer,
    WEEK_ANCHOR,
};
use triage_core::zeroshot::{build_prompt, classify_zeroshot, response_log, RecordedClient, ZeroShotRun};
use triage_core::ClassLabel;

use crate::config::Config;
use crate::manifest::{sha256_bytes, sha256_path};

/// Width of the offline joint embedder used by `topics` without a recording.
pub const HASHING_WIDTH: usize = 256;

pub const STUB_ENCODER_NOTE: &str =
    "features come from the offline stand-in encoders, not pretrained checkpoints";

/// State shared by a running command.
pub struct Ctx {
    pub cfg: Config,
    pub out: PathBuf,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub notes: Vec<String>,
}

impl Ctx {
    pub fn new(cfg: Config, out: PathBuf) -> Self {
        Ctx {
            cfg,
            out,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            notes: Vec::new(),
        }
    }

    pub fn mode(&self) -> ExecMode {
        self.cfg.exec_mode()
    }

    /// Records an input's digest and returns its path.
    pub fn input(&mut self, path: &Path) -> Result<PathBuf> {
        let digest = sha256_path(path).with_context(|| format!("cannot read {}", path.display()))?;
        self.inputs.insert(path.display().to_string(), digest);
        Ok(path.to_path_buf())
    }

    fn required(&mut self, name: &str, p: Option<PathBuf>) -> Result<PathBuf> {
        let p = p.ok_or_else(|| anyhow!("paths.{name} is required for this command"))?;
        self.input(&p)
    }

    /// Writes an artifact under the output directory.
    pub fn put(&mut self, name: &str, bytes: impl AsRef<[u8]>) -> Result<()> {
        let path = self.out.join(name);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(&path, bytes.as_ref()).with_context(|| format!("cannot write {}", path.display()))?;
        self.outputs.insert(name.to_string(), sha256_bytes(bytes.as_ref()));
        Ok(())
    }

    /// Registers an artifact that a library call wrote to `self.out.join(name)`.
    fn record(&mut self, name: &str) -> Result<()> {
        let digest = sha256_path(&self.out.join(name))?;
        self.outputs.insert(name.to_string(), digest);
        Ok(())
    }

    fn path_for(&self, name: &str) -> Result<PathBuf> {
        let p = self.out.join(name);
        if let Some(parent) = p.parent() {
            fs::create_dir_all(parent)?;
        }
        Ok(p)
    }

    fn note(&mut self, s: &str) {
        if !self.notes.iter().any(|n| n == s) {
            self.notes.push(s.to_string());
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn posts(ctx: &mut Ctx) -> Result<(Vec<Post>, PathBuf)> {
    let path = ctx.required("posts", ctx.cfg.paths.posts.clone())?;
    let root = image_root(ctx, &path)?;
    let report = load_posts(&path, &root)?;
    if !report.errors.is_empty() {
        ctx.notes.push(format!(
            "{} post line(s) rejected; run ingest for details",
            report.errors.len()
        ));
    }
    Ok((report.posts, root))
}

fn image_root(ctx: &mut Ctx, posts: &Path) -> Result<PathBuf> {
    match ctx.cfg.paths.image_root.clone() {
        Some(r) => ctx.input(&r),
        None => Ok(posts.parent().unwrap_or(Path::new(".")).to_path_buf()),
    }
}

fn label_map(ctx: &mut Ctx, path: Option<PathBuf>, name: &str) -> Result<HashMap<String, ClassLabel>> {
    let path = ctx.required(name, path)?;
    let (labels, errors) = load_labels(&path)?;
    if let Some(e) = errors.first() {
        bail!("{}: line {}: {:?}", path.display(), e.line, e.kind);
    }
    Ok(labels.into_iter().map(|l| (l.id, l.label)).collect())
}

/// Posts with a label, in post-file order.
fn labeled_posts(ctx: &mut Ctx) -> Result<(Vec<Post>, Vec<ClassLabel>, PathBuf)> {
    let (posts, root) = posts(ctx)?;
    let labels = label_map(ctx, ctx.cfg.paths.labels.clone(), "labels")?;
    let (with, labels): (Vec<Post>, Vec<ClassLabel>) = posts
        .into_iter()
        .filter_map(|p| labels.get(&p.id).copied().map(|l| (p, l)))
        .unzip();
    if with.is_empty() {
        bail!("no post has a label");
    }
    Ok((with, labels, root))
}

fn cache_header(cfg: &Config) -> CacheHeader {
    CacheHeader::for_configs(&cfg.encoders.text(), &cfg.encoders.image())
}

/// Text and image feature rows for `posts`, from the cache when configured.
fn features(ctx: &mut Ctx, posts: &[Post], root: &Path) -> Result<(Array2<f64>, Array2<f64>)> {
    if let Some(cache) = ctx.cfg.paths.features.clone() {
        let cache = ctx.input(&cache)?;
        let records = read_feature_cache(&cache, &cache_header(&ctx.cfg))?;
        let by_id: HashMap<&str, &FeatureRecord> = records.iter().map(|r| (r.post_id.as_str(), r)).collect();
        let mut t = Array2::zeros((posts.len(), FEATURE_WIDTH));
        let mut i = Array2::zeros((posts.len(), FEATURE_WIDTH));
        for (k, p) in posts.iter().enumerate() {
            let r = by_id
                .get(p.id.as_str())
                .ok_or_else(|| anyhow!("feature cache has no entry for post {}", p.id))?;
            t.row_mut(k).assign(&ndarray::ArrayView1::from(&r.text_vec));
            i.row_mut(k).assign(&ndarray::ArrayView1::from(&r.image_vec));
        }
        return Ok((t, i));
    }
    compute_features(ctx, posts, root)
}

fn compute_features(ctx: &mut Ctx, posts: &[Post], root: &Path) -> Result<(Array2<f64>, Array2<f64>)> {
    ctx.note(STUB_ENCODER_NOTE);
    let mode = ctx.mode();
    let texts: Vec<String> = posts.iter().map(|p| p.text.clone()).collect();
    let backend = StubTextBackend {
        seed: ctx.cfg.encoders.stub_seed,
    };
    let text = encode_text(&texts, &ctx.cfg.encoders.text(), &backend, mode)?;
    let with_image: Vec<usize> = (0..posts.len()).filter(|&k| !posts[k].image_path.is_empty()).collect();
    let paths: Vec<PathBuf> = with_image
        .iter()
        .map(|&k| posts[k].image_file(root).expect("filtered to posts with images"))
        .collect();
    let encoded = encode_image(&paths, &ctx.cfg.encoders.image(), &StubImageBackend, mode)
        .map_err(|e| anyhow!("post {}: {e}", describe_item(&e, &with_image, posts)))?;
    if with_image.len() < posts.len() {
        ctx.note("text-only posts get an all-zero image feature row");
    }
    let mut image = Array2::zeros((posts.len(), FEATURE_WIDTH));
    for (row, &k) in with_image.iter().enumerate() {
        image.row_mut(k).assign(&encoded.row(row));
    }
    Ok((text, image))
}

fn describe_item(e: &triage_core::encoders::EncoderError, rows: &[usize], posts: &[Post]) -> String {
    match e {
        triage_core::encoders::EncoderError::Item { index, .. } => posts[rows[*index]].id.clone(),
        _ => "<config>".into(),
    }
}

pub fn ingest(ctx: &mut Ctx) -> Result<()> {
    let path = ctx.required("posts", ctx.cfg.paths.posts.clone())?;
    let root = image_root(ctx, &path)?;
    let report = load_posts(&path, &root)?;
    let mut summary = json!({
        "posts_loaded": report.posts.len(),
        "post_errors": report.errors,
    });
    if let Some(lp) = ctx.cfg.paths.labels.clone() {
        let lp = ctx.input(&lp)?;
        let (labels, errors) = load_labels(&lp)?;
        let ids: HashMap<&str, ClassLabel> = labels.iter().map(|l| (l.id.as_str(), l.label)).collect();
        let mut counts: BTreeMap<String, usize> = ClassLabel::all().map(|c| (c.name().to_string(), 0)).collect();
        for p in &report.posts {
            if let Some(l) = ids.get(p.id.as_str()) {
                *counts.get_mut(l.name()).unwrap() += 1;
            }
        }
        let unlabeled = report.posts.iter().filter(|p| !ids.contains_key(p.id.as_str())).count();
        summary["labels_loaded"] = json!(labels.len());
        summary["label_errors"] = json!(errors);
        summary["unlabeled_posts"] = json!(unlabeled);
        summary["labeled_class_counts"] = json!(counts);
    }
    let pretty_summary = pretty(&summary)?;
    ctx.put("ingest_report.json", pretty_summary)?;
    write_posts(&ctx.path_for("posts.jsonl")?, &report.posts)?;
    ctx.record("posts.jsonl")?;

    let mut queries = String::from("collection\tyear\tkind\tquery\n");
    for (collection, specs) in [("labeled", labeled_collection_queries()), ("trend", trend_collection_queries())] {
        for spec in specs {
            let built = build_queries(&spec)?;
            for (kind, q) in ["hashtag", "keyword"].iter().zip(built) {
                queries.push_str(&format!("{collection}\t{}\t{kind}\t{q}\n", spec.year));
            }
        }
    }
    ctx.put("queries.tsv", queries)?;

    let (text, image) = compute_features(ctx, &report.posts, &root)?;
    let header = cache_header(&ctx.cfg);
    let records: Vec<FeatureRecord> = report
        .posts
        .iter()
        .enumerate()
        .map(|(k, p)| FeatureRecord {
            post_id: p.id.clone(),
            text_vec: text.row(k).to_vec(),
            image_vec: image.row(k).to_vec(),
            pooling_used: (header.text_pooling, header.image_pooling),
        })
        .collect();
    write_feature_cache(&ctx.path_for("features.bin")?, &header, &records)?;
    ctx.record("features.bin")
}

pub fn agree(ctx: &mut Ctx) -> Result<()> {
    let path = ctx.required("annotations", ctx.cfg.paths.annotations.clone())?;
    let sets = load_annotations(&path)?;
    let report = agreement_report(&sets, ctx.cfg.agree.expert.as_deref())?;
    let mut table = String::from("| Metric | Value |\n|---|---|\n");
    for (name, value) in report.table_rows() {
        table.push_str(&format!("| {name} | {value:.3} |\n"));
    }
    let mut adjudicated = String::new();
    for s in &sets {
        let label = triage_core::annotation::adjudicate(s, &report.expert)?;
        adjudicated.push_str(&json!({"id": s.post_id, "label": label}).to_string());
        adjudicated.push('\n');
    }
    ctx.put("agreement.json", pretty(&report.to_json())?)?;
    ctx.put("agreement.md", table)?;
    ctx.put("adjudicated.jsonl", adjudicated)
}

pub fn topics(ctx: &mut Ctx) -> Result<()> {
    let (posts, _) = posts(ctx)?;
    let embedder: Box<dyn JointEmbedder> = match ctx.cfg.paths.embeddings.clone() {
        Some(p) => {
            let p = ctx.input(&p)?;
            let rec: RecordedEmbedder = serde_json::from_str(&fs::read_to_string(&p)?)
                .with_context(|| format!("{} is not a recorded embedding file", p.display()))?;
            Box::new(rec)
        }
        None => {
            ctx.note("topic embeddings come from the offline hashing embedder");
            Box::new(HashingEmbedder { width: HASHING_WIDTH })
        }
    };
    let x = embed_posts(&posts, embedder.as_ref(), ctx.mode())?;
    let ids: Vec<String> = posts.iter().map(|p| p.id.clone()).collect();
    let texts: Vec<String> = posts.iter().map(|p| p.text.clone()).collect();
    let model = fit_topics(&x, &ids, &texts, &ctx.cfg.topics)?;
    let mut report = model.report_json();
    report["config"] = serde_json::to_value(&ctx.cfg.topics)?;
    let mut csv = String::from("post_id,topic\n");
    for (id, t) in ids.iter().zip(&model.assignments) {
        csv.push_str(&format!("{id},{t}\n"));
    }
    ctx.put("topics.json", pretty(&report)?)?;
    ctx.put("assignments.csv", csv)
}

/// Everything one seeded training run produces.
struct TrainedRun {
    seed: u64,
    model: FusionModel,
    history: TrainHistory,
    split: SplitIndices,
    truth: Vec<ClassLabel>,
    predicted: Vec<ClassLabel>,
    report: EvalReport,
}

fn split_for(labels: &[ClassLabel], seed: u64, train_fraction: f64) -> Result<SplitIndices> {
    let spec = SplitSpec {
        seed,
        train_fraction,
        strategy: SplitStrategy::Stratified,
    };
    Ok(stratified_split_indices(labels, &spec)?)
}

fn train_seed(ctx: &Ctx, data: &Dataset, seed: u64) -> Result<TrainedRun> {
    let split = split_for(&data.labels, seed, ctx.cfg.split.train_fraction)?;
    let train_all = data.subset(&split.train);
    let test = data.subset(&split.test);
    let (train_set, val_set) = carve_validation(&train_all, seed)?;
    let tc = triage_core::classifiers::TrainConfig {
        seed,
        ..ctx.cfg.train.clone()
    };
    let model = FusionModel::new(ctx.cfg.model.clone(), &mut seeds::rng(seed, Stream::Init))?;
    let (model, history) = train(model, &train_set, &val_set, &tc)?;
    let predicted = model.predict(&test.text, &test.image, ctx.mode())?;
    let report = evaluate(&test.labels, &as_predicted(&predicted))?;
    Ok(TrainedRun {
        seed,
        model,
        history,
        split,
        truth: test.labels,
        predicted,
        report,
    })
}

fn as_predicted(p: &[ClassLabel]) -> Vec<Predicted> {
    p.iter().map(|&c| c.into()).collect()
}

fn prediction_lines(ids: &[&str], pred: &[Predicted], truth: &[ClassLabel]) -> String {
    let mut s = String::new();
    for ((id, p), t) in ids.iter().zip(pred).zip(truth) {
        s.push_str(&json!({"id": id, "label": p, "truth": t}).to_string());
        s.push('\n');
    }
    s
}

fn write_run(ctx: &mut Ctx, prefix: &str, posts: &[Post], run: &TrainedRun) -> Result<()> {
    let tc = triage_core::classifiers::TrainConfig {
        seed: run.seed,
        ..ctx.cfg.train.clone()
    };
    let name = format!("{prefix}model.ckpt");
    save_checkpoint(&ctx.path_for(&name)?, &run.model, &tc, &run.history)?;
    ctx.record(&name)?;
    let ids = |ix: &[usize]| ix.iter().map(|&i| posts[i].id.as_str()).collect::<Vec<_>>();
    let test_ids = ids(&run.split.test);
    ctx.put(&format!("{prefix}history.json"), pretty(&run.history)?)?;
    ctx.put(
        &format!("{prefix}split.json"),
        pretty(&json!({"seed": tc.seed, "train": ids(&run.split.train), "test": test_ids}))?,
    )?;
    ctx.put(
        &format!("{prefix}predictions.jsonl"),
        prediction_lines(&test_ids, &as_predicted(&run.predicted), &run.truth),
    )?;
    ctx.put(&format!("{prefix}test_report.json"), pretty(&run.report)?)
}

pub fn train_cmd(ctx: &mut Ctx) -> Result<()> {
    let (posts, labels, root) = labeled_posts(ctx)?;
    let (text, image) = features(ctx, &posts, &root)?;
    let data = Dataset::new(text, image, labels)?;
    let run = train_seed(ctx, &data, ctx.cfg.run.seed)?;
    write_run(ctx, "", &posts, &run)
}

/// Truth and predictions of one evaluated run, keyed by post id.
struct Scored {
    seed: u64,
    ids: Vec<String>,
    truth: Vec<ClassLabel>,
    pred: Vec<Predicted>,
    report: EvalReport,
}

fn read_predictions(path: &Path) -> Result<Vec<(String, Predicted)>> {
    let mut out = Vec::new();
    for (i, line) in fs::read_to_string(path)?.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        #[derive(serde::Deserialize)]
        struct Row {
            id: String,
            label: Predicted,
        }
        let r: Row = serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?;
        out.push((r.id, r.label));
    }
    Ok(out)
}

pub fn eval(ctx: &mut Ctx) -> Result<()> {
    let mut columns: BTreeMap<String, Vec<Scored>> = BTreeMap::new();
    if ctx.cfg.eval.runs.is_empty() {
        let (posts, labels, root) = labeled_posts(ctx)?;
        let (text, image) = features(ctx, &posts, &root)?;
        let data = Dataset::new(text, image, labels)?;
        let joint = concatenate(Axis(1), &[data.text.view(), data.image.view()])?;
        for seed in ctx.cfg.run.seeds.clone() {
            let run = train_seed(ctx, &data, seed)?;
            write_run(ctx, &format!("seed-{seed}/"), &posts, &run)?;
            let ids: Vec<String> = run.split.test.iter().map(|&i| posts[i].id.clone()).collect();
            for kind in ctx.cfg.baselines.kinds.clone() {
                let x_train = joint.select(Axis(0), &run.split.train);
                let y_train: Vec<ClassLabel> = run.split.train.iter().map(|&i| data.labels[i]).collect();
                let fitted = fit_baseline(&x_train, &y_train, &ctx.cfg.baselines.config(kind), ctx.mode())?;
                let pred = as_predicted(&fitted.predict(&joint.select(Axis(0), &run.split.test), ctx.mode()));
                let report = evaluate(&run.truth, &pred)?;
                let name = serde_json::to_value(kind)?.as_str().unwrap_or_default().to_string();
                columns.entry(name).or_default().push(Scored {
                    seed,
                    ids: ids.clone(),
                    truth: run.truth.clone(),
                    pred,
                    report,
                });
            }
            columns.entry("fusion".into()).or_default().push(Scored {
                seed,
                ids,
                truth: run.truth.clone(),
                pred: as_predicted(&run.predicted),
                report: run.report,
            });
        }
    } else {
        for r in ctx.cfg.eval.runs.clone() {
            let scored = match (&r.checkpoint, &r.predictions) {
                (Some(ck), _) => score_checkpoint(ctx, ck, r.seed)?,
                (None, Some(p)) => score_predictions(ctx, p, r.seed)?,
                (None, None) => bail!("eval run for seed {} names neither checkpoint nor predictions", r.seed),
            };
            let column = if r.checkpoint.is_some() { "fusion" } else { "predictions" };
            columns.entry(column.into()).or_default().push(scored);
        }
    }

    let mut summary = serde_json::Map::new();
    let mut tables = String::new();
    for (name, runs) in &columns {
        let reports: Vec<EvalReport> = runs.iter().map(|s| s.report.clone()).collect();
        let seeds: Vec<u64> = runs.iter().map(|s| s.seed).collect();
        let agg: RunAggregate = aggregate_runs(&reports, &seeds)?;
        tables.push_str(&format!("## {name}\n\n{}\n", agg.render_table(name)));
        for s in runs {
            ctx.put(&format!("confusion/{name}-seed-{}.csv", s.seed), s.report.confusion.to_csv())?;
            let ids: Vec<&str> = s.ids.iter().map(String::as_str).collect();
            ctx.put(
                &format!("predictions/{name}-seed-{}.jsonl", s.seed),
                prediction_lines(&ids, &s.pred, &s.truth),
            )?;
        }
        summary.insert(
            name.clone(),
            json!({
                "aggregate": agg,
                "cells": {
                    "weighted": agg.weighted.to_percent_cell(),
                    "per_class": ClassLabel::all()
                        .map(|c| (c.name().to_string(), json!(agg.per_class[c.index()].to_percent_cell())))
                        .collect::<serde_json::Map<_, _>>(),
                },
                "runs": runs.iter().map(|s| json!({
                    "seed": s.seed,
                    "n": s.report.n,
                    "weighted_f1": s.report.weighted_f1,
                    "per_class_f1": s.report.per_class_f1,
                })).collect::<Vec<_>>(),
            }),
        );
    }
    let doc = json!({
        "std_estimator": "population",
        "format": "mean±std of F1 in percent",
        "columns": summary,
    });
    ctx.put("eval.json", pretty(&doc)?)?;
    ctx.put("results.md", tables)
}

fn score_checkpoint(ctx: &mut Ctx, ckpt: &Path, seed: u64) -> Result<Scored> {
    let ckpt = ctx.input(ckpt)?;
    let (model, _) = load_checkpoint(&ckpt)?;
    let (posts, labels, root) = labeled_posts(ctx)?;
    let split = split_for(&labels, seed, ctx.cfg.split.train_fraction)?;
    let test_posts: Vec<Post> = split.test.iter().map(|&i| posts[i].clone()).collect();
    let truth: Vec<ClassLabel> = split.test.iter().map(|&i| labels[i]).collect();
    let (text, image) = features(ctx, &test_posts, &root)?;
    let pred = as_predicted(&model.predict(&text, &image, ctx.mode())?);
    let report = evaluate(&truth, &pred)?;
    Ok(Scored {
        seed,
        ids: test_posts.into_iter().map(|p| p.id).collect(),
        truth,
        pred,
        report,
    })
}

fn score_predictions(ctx: &mut Ctx, path: &Path, seed: u64) -> Result<Scored> {
    let path = ctx.input(path)?;
    let truth_by_id = label_map(ctx, ctx.cfg.paths.labels.clone(), "labels")?;
    let rows = read_predictions(&path)?;
    let mut s = Scored {
        seed,
        ids: Vec::new(),
        truth: Vec::new(),
        pred: Vec::new(),
        report: evaluate(&[ClassLabel::OTHER], &[Predicted::Unparseable])?,
    };
    for (id, p) in rows {
        let t = *truth_by_id
            .get(&id)
            .ok_or_else(|| anyhow!("{}: post {id} has no truth label", path.display()))?;
        s.ids.push(id);
        s.truth.push(t);
        s.pred.push(p);
    }
    s.report = evaluate(&s.truth, &s.pred)?;
    Ok(s)
}

pub fn zeroshot(ctx: &mut Ctx) -> Result<()> {
    let (mut posts, root) = posts(ctx)?;
    if let Some(limit) = ctx.cfg.zeroshot.limit {
        posts.truncate(limit);
    }
    let adapter = ctx.cfg.zeroshot.adapter.clone();
    if adapter != "recorded" {
        let known: Vec<String> = triage_core::zeroshot::adapter_presets().into_iter().map(|a| a.name).collect();
        bail!(
            "adapter {adapter:?} needs a live transport, which this build does not bundle; \
             record its answers and use adapter \"recorded\" (presets: {})",
            known.join(", ")
        );
    }
    let responses = ctx.required("responses", ctx.cfg.paths.responses.clone())?;
    let client = RecordedClient::from_file(&responses)?;
    let run = ZeroShotRun {
        image_mode: ctx.cfg.zeroshot.image_mode,
        image_root: root,
        max_in_flight: ctx.cfg.zeroshot.max_in_flight,
        mode: ctx.mode(),
        ..ZeroShotRun::default()
    };
    let results = classify_zeroshot(&posts, &client, &run);
    let prompt = build_prompt();
    let mut preds = String::new();
    for r in &results {
        preds.push_str(&json!({"id": r.post_id, "label": r.prediction()}).to_string());
        preds.push('\n');
    }
    let unparseable = results.iter().filter(|r| r.prediction() == Predicted::Unparseable).count();
    let failed = results
        .iter()
        .filter(|r| matches!(r.outcome, triage_core::zeroshot::ZeroShotOutcome::Failed { .. }))
        .count();
    let mut summary = json!({
        "adapter": adapter,
        "settings": run.settings,
        "posts": results.len(),
        "unparseable": unparseable,
        "transport_failures": failed,
        "retries": results.iter().map(|r| r.retries as u64).sum::<u64>(),
    });
    if let Some(lp) = ctx.cfg.paths.labels.clone() {
        let truth = label_map(ctx, Some(lp), "labels")?;
        let (t, p): (Vec<ClassLabel>, Vec<Predicted>) = results
            .iter()
            .filter_map(|r| truth.get(&r.post_id).map(|&t| (t, r.prediction())))
            .unzip();
        if !t.is_empty() {
            let report = evaluate(&t, &p)?;
            ctx.put("confusion.csv", report.confusion.to_csv())?;
            summary["eval"] = serde_json::to_value(&report)?;
        }
    }
    ctx.put("prompt.txt", format!("[system]\n{}\n[user]\n{}\n", prompt.system, prompt.user))?;
    ctx.put("responses.jsonl", response_log(&results))?;
    ctx.put("predictions.jsonl", preds)?;
    ctx.put("zeroshot_report.json", pretty(&summary)?)
}

pub fn trends(ctx: &mut Ctx) -> Result<()> {
    let (posts, _) = posts(ctx)?;
    let year = ctx.cfg.trends.year;
    let source = ctx.cfg.paths.predictions.clone().or(ctx.cfg.paths.labels.clone());
    let classes = if ctx.cfg.trends.classes.is_empty() {
        ClassLabel::all().collect()
    } else {
        parse_classes(&ctx.cfg.trends.classes)?
    };
    let total = weekly_counts(&posts, year)?;
    ctx.put(&format!("weekly_{year}.csv"), total.to_csv())?;
    let mut doc = json!({
        "year": year,
        "week_anchor": WEEK_ANCHOR,
        "total_posts": total.total(),
        "peak_week": total.peak_week(),
    });
    let mut charted = vec![total.clone()];
    if let Some(src) = source {
        let labels = label_map(ctx, Some(src), "predictions")?;
        let predicted: Vec<(Post, ClassLabel)> = posts
            .iter()
            .filter_map(|p| labels.get(&p.id).map(|&l| (p.clone(), l)))
            .collect();
        let series = class_trend_series(&predicted, year, &classes)?;
        let mut listed = Vec::new();
        for s in &series {
            let c = s.class.expect("class series carry their class");
            ctx.put(&format!("class_{}_{year}.csv", c.letter()), s.to_csv())?;
            listed.push(json!({
                "class": c,
                "letter": c.letter().to_string(),
                "total": s.total(),
                "peak_week": s.peak_week(),
            }));
        }
        doc["unlabeled_posts"] = json!(posts.len() - predicted.len());
        doc["classes"] = json!(listed);
        charted.extend(series);
    }
    if let Some(g) = ctx.cfg.paths.gazetteer.clone() {
        let g = ctx.input(&g)?;
        let gaz = Gazetteer::from_path(&g)?;
        let dist = province_distribution(&posts, &gaz);
        doc["provinces"] = json!(dist
            .iter()
            .map(|(k, v)| (k.to_string(), json!(v)))
            .collect::<serde_json::Map<_, _>>());
    }
    if ctx.cfg.trends.chart {
        ctx.put("chart.svg", render_svg(&charted, &format!("Weekly posts, {year}")))?;
    }
    ctx.put("trends.json", pretty(&doc)?)
}
