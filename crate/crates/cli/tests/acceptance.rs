//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.
//!
//! Each check builds its own oracle here rather than reusing library helpers,
//! so a shared bug cannot make both sides agree.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command as Proc, ExitCode};
use std::time::{Duration, Instant};

use chrono::{NaiveDate, TimeZone, Utc};
use ndarray::Array2;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};
use triage_cli::manifest::RunManifest;
use triage_core::annotation::{agreement_report, cohen_kappa, fleiss_kappa, AnnotationSet, REFERENCE_TABLE};
use triage_core::classifiers::{
    fit_baseline, load_checkpoint, train, BaselineConfig, BaselineKind, Dataset, EncoderFreeze, FittedBaseline,
    FusionKind, FusionModel, FusionModelConfig, HeadKind, TrainConfig,
};
use triage_core::corpus::{build_query, labeled_collection_queries, load_labels, load_posts, trend_collection_queries, Post, QuerySpec};
use triage_core::evaluation::{evaluate, weighted_f1, Predicted};
use triage_core::nn::{cross_entropy, DropoutCtx, Module};
use triage_core::par::ExecMode;
use triage_core::seeds::{rng, Stream};
use triage_core::taxonomy::{NUM_CLASSES, REFERENCE_TOTAL};
use triage_core::topics::{fit_topics, reduce_topics, TopicModelConfig};
use triage_core::trends::{class_trend_series, province_distribution, weekly_counts, Gazetteer};
use triage_core::zeroshot::{build_prompt, classify_zeroshot, parse_response, RecordedClient, ZeroShotRun};
use triage_core::ClassLabel;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").canonicalize().unwrap()
}

fn fixtures() -> PathBuf {
    root().join("fixtures")
}

fn read_json(p: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))).unwrap()
}

fn class(i: usize) -> ClassLabel {
    ClassLabel::from_index(i).unwrap()
}

fn within(label: &str, elapsed: Duration, limit: Duration) {
    assert!(elapsed < limit, "{label} took {elapsed:?}, limit {limit:?}");
}

// ---- agreement ---------------------------------------------------------

/// Cohen's kappa from an explicit 13x13 contingency table.
fn cohen_oracle(a: &[usize], b: &[usize]) -> f64 {
    let mut t = [[0.0f64; NUM_CLASSES]; NUM_CLASSES];
    for (&x, &y) in a.iter().zip(b) {
        t[x][y] += 1.0;
    }
    let n = a.len() as f64;
    let po: f64 = (0..NUM_CLASSES).map(|k| t[k][k]).sum::<f64>() / n;
    let pe: f64 = (0..NUM_CLASSES)
        .map(|k| {
            let row: f64 = t[k].iter().sum();
            let col: f64 = (0..NUM_CLASSES).map(|r| t[r][k]).sum();
            (row / n) * (col / n)
        })
        .sum();
    if pe == 1.0 {
        1.0
    } else {
        (po - pe) / (1.0 - pe)
    }
}

/// Fleiss' kappa from the items x categories count table.
fn fleiss_oracle(rows: &[Vec<usize>]) -> f64 {
    let m = rows[0].len() as f64;
    let n = rows.len() as f64;
    let mut counts = vec![[0.0f64; NUM_CLASSES]; rows.len()];
    for (i, r) in rows.iter().enumerate() {
        for &c in r {
            counts[i][c] += 1.0;
        }
    }
    let p_bar = counts
        .iter()
        .map(|c| (c.iter().map(|x| x * x).sum::<f64>() - m) / (m * (m - 1.0)))
        .sum::<f64>()
        / n;
    let pe: f64 = (0..NUM_CLASSES)
        .map(|j| {
            let p = counts.iter().map(|c| c[j]).sum::<f64>() / (n * m);
            p * p
        })
        .sum();
    if pe == 1.0 {
        1.0
    } else {
        (p_bar - pe) / (1.0 - pe)
    }
}

fn random_table(r: &mut StdRng) -> Vec<Vec<usize>> {
    let items = r.random_range(1..=300);
    // Skewed label use so that agreement ranges from chance to near-perfect.
    let skill = r.random_range(0.0..1.0);
    (0..items)
        .map(|_| {
            let truth = r.random_range(0..NUM_CLASSES);
            (0..3)
                .map(|_| if r.random_bool(skill) { truth } else { r.random_range(0..NUM_CLASSES) })
                .collect()
        })
        .collect()
}

fn criterion_1() {
    let start = Instant::now();
    let mut r = StdRng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let table = random_table(&mut r);
        let col = |k: usize| table.iter().map(|row| row[k]).collect::<Vec<_>>();
        for (a, b) in [(0, 1), (0, 2), (1, 2)] {
            let got = cohen_kappa(&col(a), &col(b)).unwrap();
            worst = worst.max((got - cohen_oracle(&col(a), &col(b))).abs());
        }
        let got = fleiss_kappa(&table).unwrap();
        worst = worst.max((got - fleiss_oracle(&table)).abs());
    }
    assert!(worst <= 1e-9, "max deviation {worst:e}");
    within("1000 tables", start.elapsed(), Duration::from_secs(30));
}

fn criterion_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("agree");
    run_bin("agree", &root().join("configs/default.toml"), &out);
    let got = read_json(&out.join("agreement.json"));
    let golden = read_json(&fixtures().join("agreement.golden.json"));
    let rows = got["rows"].as_array().unwrap();
    let names: Vec<&str> = rows.iter().map(|r| r["metric"].as_str().unwrap()).collect();
    let want: Vec<&str> = REFERENCE_TABLE.iter().map(|(n, _)| *n).collect();
    assert_eq!(names, want, "row names");
    for (g, w) in rows.iter().zip(golden["rows"].as_array().unwrap()) {
        let (a, b) = (g["value"].as_f64().unwrap(), w["value"].as_f64().unwrap());
        assert!((a - b).abs() < 1e-12, "{}: {a} vs golden {b}", w["metric"]);
    }

    let mut r = StdRng::seed_from_u64(202);
    for _ in 0..500 {
        let sets: Vec<AnnotationSet> = random_table(&mut r)
            .into_iter()
            .enumerate()
            .map(|(i, row)| AnnotationSet {
                post_id: format!("x{i}"),
                votes: row.iter().enumerate().map(|(k, &c)| (format!("a{k}"), class(c))).collect(),
                final_label: None,
                flags: BTreeSet::new(),
            })
            .collect();
        let rep = agreement_report(&sets, None).unwrap();
        assert!(rep.majority_rate >= rep.full_rate, "{} < {}", rep.majority_rate, rep.full_rate);
    }
}

// ---- metrics -----------------------------------------------------------

fn criterion_3() {
    let mut r = StdRng::seed_from_u64(303);
    for _ in 0..500 {
        let n = r.random_range(1..=200);
        let truth: Vec<usize> = (0..n).map(|_| r.random_range(0..NUM_CLASSES)).collect();
        // Index NUM_CLASSES stands for an unparseable answer.
        let pred: Vec<usize> = truth
            .iter()
            .map(|&t| if r.random_bool(0.5) { t } else { r.random_range(0..=NUM_CLASSES) })
            .collect();
        let mut cm = vec![vec![0u64; NUM_CLASSES + 1]; NUM_CLASSES];
        for (&t, &p) in truth.iter().zip(&pred) {
            cm[t][p] += 1;
        }
        let mut wf1 = 0.0;
        for c in 0..NUM_CLASSES {
            let tp = cm[c][c] as f64;
            let support: f64 = cm[c].iter().sum::<u64>() as f64;
            let predicted: f64 = (0..NUM_CLASSES).map(|t| cm[t][c]).sum::<u64>() as f64;
            let (fp, fn_) = (predicted - tp, support - tp);
            let f1 = if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fn_) };
            wf1 += f1 * support / n as f64;
        }
        let t: Vec<ClassLabel> = truth.iter().map(|&i| class(i)).collect();
        let p: Vec<Predicted> = pred
            .iter()
            .map(|&i| if i == NUM_CLASSES { Predicted::Unparseable } else { Predicted::Class(class(i)) })
            .collect();
        let rep = evaluate(&t, &p).unwrap();
        for c in 0..NUM_CLASSES {
            assert_eq!(rep.confusion.counts[c].to_vec(), cm[c][..NUM_CLASSES].to_vec(), "row {c}");
            assert_eq!(rep.confusion.unparseable[c], cm[c][NUM_CLASSES], "unparseable {c}");
        }
        assert!((rep.weighted_f1 - wf1).abs() <= 1e-12, "{} vs oracle {wf1}", rep.weighted_f1);
        let perfect: Vec<Predicted> = t.iter().map(|&c| Predicted::Class(c)).collect();
        assert_eq!(weighted_f1(&t, &perfect).unwrap(), 1.0);
    }
    let (a, b) = (class(0), class(1));
    let hand = weighted_f1(&[a, a, b, b], &[a.into(), b.into(), b.into(), b.into()]).unwrap();
    assert!((hand - 11.0 / 15.0).abs() <= 1e-12, "{hand}");
}

// ---- queries -----------------------------------------------------------

fn criterion_4() {
    let text = fs::read_to_string(fixtures().join("queries.golden.tsv")).unwrap();
    let mut expected: Vec<(String, i32, String)> = Vec::new();
    for line in text.lines() {
        let f: Vec<&str> = line.split('\t').collect();
        if f[2] == "hashtag" {
            expected.push((f[0].to_string(), f[1].parse().unwrap(), f[3].to_string()));
        }
    }
    assert!(expected.len() >= 2);
    for (_, year, golden) in &expected {
        // Rebuild from the hashtag list alone, as written in the golden string.
        let inner = &golden[1..golden.find(')').unwrap()];
        let tags: Vec<&str> = inner.split(" OR ").collect();
        let spec = QuerySpec::new(*year, &tags);
        assert_eq!(&build_query(&spec).unwrap(), golden, "{year} {tags:?}");
    }
    let shipped: Vec<(String, i32, String)> = [("labeled", labeled_collection_queries()), ("trend", trend_collection_queries())]
        .into_iter()
        .flat_map(|(name, specs)| specs.into_iter().map(move |s| (name.to_string(), s.year, build_query(&s).unwrap())))
        .collect();
    assert_eq!(shipped, expected);
}

// ---- architecture and training ----------------------------------------

fn criterion_5() {
    let model = FusionModel::new(FusionModelConfig::default(), &mut rng(8, Stream::Init)).unwrap();
    assert_eq!(model.text_proj.weight.value.dim(), (512, 768));
    assert_eq!(model.image_proj.weight.value.dim(), (512, 768));
    assert_eq!(model.fusion.len(), 2);
    for b in &model.fusion {
        assert_eq!(b.attn.heads, 8);
        assert_eq!(b.ff1.weight.value.dim(), (2048, 512));
        assert_eq!(b.ff2.weight.value.dim(), (512, 2048));
        assert_eq!(b.dropout, 0.2);
    }
    match &model.head {
        triage_core::classifiers::Head::Mlp { hidden, out } => {
            assert_eq!(hidden.weight.value.dim(), (256, 512));
            assert_eq!(out.weight.value.dim(), (13, 256));
        }
        other => panic!("default head should be an MLP, got {other:?}"),
    }
    let mut r = StdRng::seed_from_u64(5);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let x = Array2::from_shape_fn((3, 768), |_| normal.sample(&mut r));
    for fusion in FusionKind::ALL {
        for head in [HeadKind::Mlp, HeadKind::Linear] {
            let cfg = FusionModelConfig {
                fusion,
                head,
                ..FusionModelConfig::default()
            };
            let m = FusionModel::new(cfg, &mut rng(8, Stream::Init)).unwrap();
            assert_eq!(m.logits(&x, &x).unwrap().dim(), (3, 13), "{fusion:?} {head:?}");
        }
    }
    // Ablations reachable from config text alone.
    let no_fusion: FusionModelConfig = toml::from_str("fusion = \"none\"").unwrap();
    assert!(FusionModel::new(no_fusion, &mut rng(1, Stream::Init)).unwrap().fusion.is_empty());
    let linear: FusionModelConfig = toml::from_str("head = \"linear\"").unwrap();
    let m = FusionModel::new(linear, &mut rng(1, Stream::Init)).unwrap();
    assert!(matches!(m.head, triage_core::classifiers::Head::Linear(ref l) if l.weight.value.dim() == (13, 512)));
}

fn separable(width: usize, per_class: usize, seed: u64) -> Dataset {
    let mut r = StdRng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let protos: Vec<Vec<f64>> = (0..2 * NUM_CLASSES).map(|_| (0..width).map(|_| normal.sample(&mut r)).collect()).collect();
    let n = NUM_CLASSES * per_class;
    let mut text = Array2::zeros((n, width));
    let mut image = Array2::zeros((n, width));
    let mut labels = Vec::new();
    for i in 0..n {
        let c = i % NUM_CLASSES;
        for j in 0..width {
            text[[i, j]] = protos[2 * c][j] + 0.1 * normal.sample(&mut r);
            image[[i, j]] = protos[2 * c + 1][j] + 0.1 * normal.sample(&mut r);
        }
        labels.push(class(c));
    }
    Dataset::new(text, image, labels).unwrap()
}

fn criterion_6() {
    let start = Instant::now();
    for fusion in [FusionKind::Transformer, FusionKind::Concat, FusionKind::CrossAttention] {
        let mut model = FusionModel::new(FusionModelConfig::tiny(fusion), &mut rng(3, Stream::Init)).unwrap();
        assert_eq!(model.config.proj_dim, 8);
        let d = separable(model.config.input_dim, 1, 4).subset(&[0, 3, 5, 11]);
        let targets: Vec<usize> = d.labels.iter().map(|l| l.index()).collect();
        model.loss_and_grad(&d.text, &d.image, &targets, &mut DropoutCtx::eval()).unwrap();
        let analytic: Vec<Array2<f64>> = model.params().iter().map(|p| p.grad.clone()).collect();
        let loss = |m: &FusionModel| cross_entropy(&m.logits(&d.text, &d.image).unwrap(), &targets).0;
        let h = 1e-5;
        for (k, g) in analytic.iter().enumerate() {
            for idx in [(0, 0), (g.nrows() - 1, g.ncols() - 1), (g.nrows() / 2, g.ncols() / 2)] {
                let mut plus = model.clone();
                plus.params_mut()[k].value[idx] += h;
                let mut minus = model.clone();
                minus.params_mut()[k].value[idx] -= h;
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
                let a = g[idx];
                let scale = a.abs().max(numeric.abs());
                assert!(
                    (a - numeric).abs() <= 1e-4 * scale + 1e-9,
                    "{fusion:?} param {k} {idx:?}: analytic {a:e} numeric {numeric:e}"
                );
            }
        }
    }
    within("gradient checks", start.elapsed(), Duration::from_secs(60));
}

fn criterion_7() {
    let data = separable(768, 2, 11);
    assert_eq!(data.len(), 26);
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let model = FusionModel::new(FusionModelConfig::default(), &mut rng(cfg.seed, Stream::Init)).unwrap();
    let (trained, _) = train(model, &data, &data, &cfg).unwrap();
    let pred = trained.predict(&data.text, &data.image, ExecMode::default()).unwrap();
    let acc = pred.iter().zip(&data.labels).filter(|(a, b)| a == b).count() as f64 / 26.0;
    assert!(acc >= 0.95, "train accuracy {acc}");

    let small = separable(6, 2, 12);
    let bits = |m: &FusionModel| m.flat_params().iter().map(|v| v.to_bits()).collect::<Vec<u64>>();
    let frozen_lr = TrainConfig {
        learning_rate: 0.0,
        epochs: 2,
        ..TrainConfig::default()
    };
    let m = FusionModel::new(FusionModelConfig::tiny(FusionKind::Transformer), &mut rng(1, Stream::Init)).unwrap();
    let before = bits(&m);
    let (after, _) = train(m, &small, &small, &frozen_lr).unwrap();
    assert_eq!(before, bits(&after), "lr=0 moved parameters");

    let mc = FusionModelConfig {
        encoder_freeze: EncoderFreeze::All,
        ..FusionModelConfig::tiny(FusionKind::Transformer)
    };
    let m = FusionModel::new(mc, &mut rng(2, Stream::Init)).unwrap();
    let enc = |m: &FusionModel| m.encoder_params().iter().flat_map(|p| p.value.iter().map(|v| v.to_bits())).collect::<Vec<_>>();
    let enc_before = enc(&m);
    let head_before = bits(&m);
    let live = TrainConfig {
        learning_rate: 1e-2,
        epochs: 2,
        ..TrainConfig::default()
    };
    let (after, _) = train(m, &small, &small, &live).unwrap();
    assert!(!enc_before.is_empty());
    assert_eq!(enc_before, enc(&after), "frozen encoder moved");
    assert_ne!(head_before, bits(&after), "nothing trained at all");
}

// ---- baselines ---------------------------------------------------------

fn blobs(per: usize, classes: usize, dim: usize, spread: f64, seed: u64) -> (Array2<f64>, Vec<ClassLabel>) {
    let mut r = StdRng::seed_from_u64(seed);
    let normal = Normal::new(0.0, spread).unwrap();
    let mut x = Array2::zeros((per * classes, dim));
    let mut y = Vec::new();
    for i in 0..per * classes {
        let c = i % classes;
        for j in 0..dim {
            let center = if j % classes == c { 4.0 } else { 0.0 };
            x[[i, j]] = center + normal.sample(&mut r);
        }
        y.push(class(c));
    }
    (x, y)
}

fn criterion_8() {
    let mode = ExecMode::default();
    let (x, y) = blobs(20, 5, 30, 1.0, 808);
    let knn = fit_baseline(&x, &y, &BaselineConfig::of(BaselineKind::Knn), mode).unwrap();
    assert_eq!(knn.predict(&x, mode), y, "1-NN on its own training set");

    let mut r = StdRng::seed_from_u64(809);
    let wide = Array2::from_shape_fn((260, 1536), |_| r.random_range(-1.0..1.0));
    let labels: Vec<ClassLabel> = (0..260).map(|i| class(i % NUM_CLASSES)).collect();
    let svm = fit_baseline(&wide, &labels, &BaselineConfig::of(BaselineKind::Svm), mode).unwrap();
    let FittedBaseline::Svm(svm) = &svm else { panic!("expected an SVM") };
    assert_eq!(svm.reduced_width(), 250);

    let (train_x, train_y) = blobs(30, 4, 12, 1.0, 810);
    let (test_x, test_y) = blobs(50, 4, 12, 1.0, 811);
    let gnb = fit_baseline(&train_x, &train_y, &BaselineConfig::of(BaselineKind::Gnb), mode).unwrap();
    let p = gnb.predict(&test_x, mode);
    let acc = p.iter().zip(&test_y).filter(|(a, b)| a == b).count() as f64 / test_y.len() as f64;
    assert!(acc >= 0.95, "GNB held-out accuracy {acc}");
}

// ---- zero-shot ---------------------------------------------------------

fn criterion_9() {
    let p = build_prompt();
    let rendered = format!("[system]\n{}\n[user]\n{}\n", p.system, p.user);
    assert_eq!(rendered, fs::read_to_string(fixtures().join("prompt.golden.txt")).unwrap());
    for (i, letter) in "ABCDEFGHIJKLM".chars().enumerate() {
        for s in [letter.to_string(), letter.to_ascii_lowercase().to_string()] {
            assert_eq!(parse_response(&s), Predicted::Class(class(i)), "{s}");
        }
        assert_eq!(class(i).letter(), letter);
    }
    let report = load_posts(&fixtures().join("pipeline/posts.jsonl"), &fixtures().join("pipeline")).unwrap();
    let subset: Vec<Post> = report.posts.into_iter().take(50).collect();
    let client = RecordedClient::from_file(&fixtures().join("pipeline/responses.jsonl")).unwrap();
    let results = classify_zeroshot(&subset, &client, &ZeroShotRun::default());
    let expected = read_json(&fixtures().join("pipeline/zeroshot.expected.json"));
    let got: Vec<String> = results
        .iter()
        .map(|r| match r.prediction() {
            Predicted::Class(c) => c.name().to_string(),
            Predicted::Unparseable => "UNPARSEABLE".into(),
        })
        .collect();
    let want: Vec<String> = expected["labels"].as_array().unwrap().iter().map(|v| v.as_str().unwrap().to_string()).collect();
    assert_eq!(got, want);
    let unparseable = got.iter().filter(|s| *s == "UNPARSEABLE").count() as u64;
    assert_eq!(unparseable, expected["unparseable"].as_u64().unwrap());
}

// ---- topics ------------------------------------------------------------

fn clusters(k: usize, per: usize, dim: usize, seed: u64) -> (Array2<f64>, Vec<usize>) {
    let mut r = StdRng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.05).unwrap();
    let mut x = Array2::zeros((k * per, dim));
    let mut truth = Vec::new();
    for i in 0..k * per {
        let c = i % k;
        for j in 0..dim {
            let center = if j * k / dim == c { 1.0 } else { 0.0 };
            x[[i, j]] = center + noise.sample(&mut r);
        }
        truth.push(c);
    }
    (x, truth)
}

fn criterion_10() {
    const FILLER: [&str; 8] = ["update", "today", "season", "crews", "valley", "north", "report", "photo"];
    let (x, truth) = clusters(2, 60, 16, 1010);
    let mut r = StdRng::seed_from_u64(1011);
    let texts: Vec<String> = truth
        .iter()
        .map(|&c| {
            let mut words: Vec<&str> = (0..5).map(|_| FILLER[r.random_range(0..FILLER.len())]).collect();
            if c == 0 {
                words.push("pyrocumulus");
            }
            words.join(" ")
        })
        .collect();
    let ids: Vec<String> = (0..truth.len()).map(|i| format!("t{i}")).collect();
    let m = fit_topics(&x, &ids, &texts, &TopicModelConfig::default()).unwrap();
    assert_eq!(m.topics.len(), 2, "topics found");
    // Best agreement over the two ways of matching topics to clusters.
    let hits = |flip: bool| {
        (0..truth.len())
            .filter(|&i| m.assignments[i] >= 0 && (m.assignments[i] as usize == truth[i]) != flip)
            .count()
    };
    let agree = hits(false).max(hits(true)) as f64 / truth.len() as f64;
    assert!(agree >= 0.95, "membership agreement {agree}");
    let planted = m.assignments[0];
    assert!(planted >= 0);
    let topic = m.topics.iter().find(|t| t.topic_id == planted).unwrap();
    assert!(topic.keywords.iter().take(10).any(|k| k == "pyrocumulus"), "{:?}", topic.keywords);

    let (x4, t4) = clusters(4, 40, 16, 1012);
    let ids4: Vec<String> = (0..t4.len()).map(|i| format!("q{i}")).collect();
    let texts4: Vec<String> = t4.iter().map(|c| format!("group{c} words")).collect();
    let m4 = fit_topics(&x4, &ids4, &texts4, &TopicModelConfig::default()).unwrap();
    assert!(m4.topics.len() >= 3, "need several topics to reduce, got {}", m4.topics.len());
    let before: usize = m4.topics.iter().map(|t| t.size()).sum();
    let reduced = reduce_topics(&m4, 2).unwrap();
    assert_eq!(reduced.topics.len(), 2);
    let after: usize = reduced.topics.iter().map(|t| t.size()).sum();
    assert_eq!(before, after);
    for t in &m4.topics {
        let homes: BTreeSet<i64> = t
            .member_ids
            .iter()
            .map(|id| reduced.topics.iter().find(|r| r.member_ids.contains(id)).unwrap().topic_id)
            .collect();
        assert_eq!(homes.len(), 1, "topic {} was split", t.topic_id);
    }
}

// ---- trends ------------------------------------------------------------

fn week_sums_match(data: &[(Post, ClassLabel)], year: i32) {
    let all: Vec<ClassLabel> = ClassLabel::all().collect();
    let series = class_trend_series(data, year, &all).unwrap();
    let posts: Vec<Post> = data.iter().map(|(p, _)| p.clone()).collect();
    let total = weekly_counts(&posts, year).unwrap();
    for (w, (day, count)) in total.buckets.iter().enumerate() {
        let sum: u64 = series.iter().map(|s| s.buckets[w].1).sum();
        assert_eq!(sum, *count, "week {day}");
    }
}

fn criterion_11() {
    let dir = fixtures().join("pipeline");
    let posts = load_posts(&dir.join("posts.jsonl"), &dir).unwrap().posts;
    let (labels, _) = load_labels(&dir.join("labels.jsonl")).unwrap();
    let by_id: HashMap<String, ClassLabel> = labels.into_iter().map(|l| (l.id, l.label)).collect();
    let data: Vec<(Post, ClassLabel)> = posts.iter().map(|p| (p.clone(), by_id[&p.id])).collect();
    week_sums_match(&data, 2023);

    let mut r = StdRng::seed_from_u64(1111);
    for trial in 0..50 {
        let n = r.random_range(0..300);
        let synthetic: Vec<(Post, ClassLabel)> = (0..n)
            .map(|i| {
                let ts = Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap()
                    + chrono::Duration::minutes(r.random_range(0..365 * 24 * 60));
                let post = Post {
                    id: format!("s{trial}-{i}"),
                    text: "x".into(),
                    image_path: String::new(),
                    created_at: ts,
                    author_location_raw: None,
                    source_year: 2023,
                };
                (post, class(r.random_range(0..NUM_CLASSES)))
            })
            .collect();
        week_sums_match(&synthetic, 2023);
    }

    let exp = read_json(&dir.join("expectations.json"));
    let spike: NaiveDate = exp["spike_week"].as_str().unwrap().parse().unwrap();
    let evac = class_trend_series(&data, 2023, &[ClassLabel::EVACUEES]).unwrap();
    assert_eq!(evac[0].peak_week(), Some(spike));

    let gaz = Gazetteer::from_path(&dir.join("gazetteer.csv")).unwrap();
    let dist = province_distribution(&posts, &gaz);
    assert_eq!(dist.values().sum::<usize>(), posts.len());
    let got: BTreeMap<String, u64> = dist.iter().map(|(k, v)| (k.to_string(), *v as u64)).collect();
    let want: BTreeMap<String, u64> = exp["provinces"].as_object().unwrap().iter().map(|(k, v)| (k.clone(), v.as_u64().unwrap())).collect();
    assert_eq!(got, want);

    let counts = fs::read_to_string(fixtures().join("class_counts.golden.tsv")).unwrap();
    let mut sum = 0;
    for line in counts.lines() {
        let (name, n) = line.split_once('\t').unwrap();
        let n: u32 = n.parse().unwrap();
        assert_eq!(name.parse::<ClassLabel>().unwrap().reference_count(), n, "{name}");
        sum += n;
    }
    assert_eq!(sum, 4688);
    assert_eq!(REFERENCE_TOTAL, 4688);
}

// ---- reproducibility ---------------------------------------------------

fn run_bin(command: &str, config: &Path, out: &Path) -> RunManifest {
    let o = Proc::new(env!("CARGO_BIN_EXE_triage"))
        .arg(command)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{command} failed: {}", String::from_utf8_lossy(&o.stderr));
    serde_json::from_str(&fs::read_to_string(out.join("manifest.json")).unwrap()).unwrap()
}

fn criterion_12() {
    let dir = tempfile::tempdir().unwrap();
    let config = root().join("configs/default.toml");
    for command in ["ingest", "agree", "topics", "train", "eval", "zeroshot", "trends"] {
        let a = dir.path().join(format!("{command}-a"));
        let b = dir.path().join(format!("{command}-b"));
        let first = run_bin(command, &config, &a);
        let second = run_bin(command, &a.join(&first.resolved_config), &b);
        assert_eq!(first.config_hash, second.config_hash, "{command} config hash");
        assert_eq!(first.inputs, second.inputs, "{command} inputs");
        assert_eq!(first.outputs, second.outputs, "{command} outputs differ on rerun");
        for name in first.outputs.keys().filter(|n| n.ends_with(".ckpt")) {
            let (ma, _) = load_checkpoint(&a.join(name)).unwrap();
            let (mb, _) = load_checkpoint(&b.join(name)).unwrap();
            assert_eq!(ma.flat_params(), mb.flat_params(), "{command} {name}");
        }
        if command == "eval" {
            check_aggregate(&a, &first);
        }
    }
}

fn check_aggregate(out: &Path, m: &RunManifest) {
    assert_eq!(m.seeds, vec![8, 12, 14]);
    let doc = read_json(&out.join("eval.json"));
    assert_eq!(doc["std_estimator"], "population");
    let fusion = &doc["columns"]["fusion"];
    let runs: Vec<f64> = fusion["runs"].as_array().unwrap().iter().map(|r| r["weighted_f1"].as_f64().unwrap()).collect();
    assert_eq!(runs.len(), 3);
    let mean = runs.iter().sum::<f64>() / 3.0;
    let std = (runs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 3.0).sqrt();
    let cell = fusion["cells"]["weighted"].as_str().unwrap();
    assert_eq!(cell, format!("{:05.2}±{:.2}", mean * 100.0, std * 100.0));
    let well_formed = |s: &str| {
        let Some((a, b)) = s.split_once('±') else { return false };
        let two_dp = |t: &str| t.split_once('.').is_some_and(|(i, f)| i.len() >= 2 && f.len() == 2 && i.chars().chain(f.chars()).all(|c| c.is_ascii_digit()));
        two_dp(a) && b.split_once('.').is_some_and(|(_, f)| f.len() == 2)
    };
    for (_, col) in doc["columns"].as_object().unwrap() {
        assert!(well_formed(col["cells"]["weighted"].as_str().unwrap()));
        for (_, v) in col["cells"]["per_class"].as_object().unwrap() {
            assert!(well_formed(v.as_str().unwrap()), "{v}");
        }
    }
    let md = fs::read_to_string(out.join("results.md")).unwrap();
    assert!(md.contains(&format!("| F1 Weighted Average | {cell} |")));
}

fn main() -> ExitCode {
    let criteria: [(&str, fn()); 12] = [
        ("Agreement oracle equivalence", criterion_1),
        ("Agreement report structure", criterion_2),
        ("Metric oracle equivalence", criterion_3),
        ("Query byte-exactness", criterion_4),
        ("Architecture conformance", criterion_5),
        ("Gradient correctness", criterion_6),
        ("Training sanity", criterion_7),
        ("Baseline conformance", criterion_8),
        ("Zero-shot harness", criterion_9),
        ("Topic pipeline", criterion_10),
        ("Trends", criterion_11),
        ("Reproducibility", criterion_12),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let ok = catch_unwind(AssertUnwindSafe(check)).is_ok();
        if !ok {
            failed += 1;
        }
        println!(
            "{} {:>2} {name} ({:.1}s)",
            if ok { "PASS" } else { "FAIL" },
            i + 1,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
