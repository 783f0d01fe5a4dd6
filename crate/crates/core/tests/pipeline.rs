use std::path::PathBuf;

use fcnseg::dataio::{build_manifest, DatasetTag, PhantomConfig, Split, SubjectPools};
use fcnseg::metrics::{Index, MetricReport};
use fcnseg::models::{BackboneSpec, Variant};
use fcnseg::pipeline::report::{collect_runs, render_kv, render_tables};
use fcnseg::pipeline::*;
use fcnseg::postproc::PostprocConfig;
use fcnseg::{Error, SegmentationMask, SolverKind, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn quick_config(epochs: usize) -> ExperimentConfig {
    ExperimentConfig {
        epochs,
        batch_size: 2,
        backbone: BackboneSpec::tiny(),
        seed: 17,
        folds: 3,
        ..Default::default()
    }
}

#[test]
fn config_renders_and_parses_back() {
    let mut c = quick_config(7);
    c.solver = SolverKind::Nag;
    c.hyper.momentum = Some(0.8);
    c.variant = Variant::Fcn16s;
    c.postproc_steps = "median:5,keep-largest".parse().unwrap();
    let text = c.to_kv();
    assert!(text.contains("beta1=default\n"));
    assert_eq!(ExperimentConfig::from_kv(&text).unwrap(), c);

    assert!(ExperimentConfig::from_kv("epochs=0\n").is_err());
    assert!(ExperimentConfig::from_kv("lr=0\n").is_err());
    assert!(ExperimentConfig::from_kv("loss_scale=-1\n").is_err());
    assert!(ExperimentConfig::from_kv("colour=blue\n").is_err());
    assert!(ExperimentConfig::from_kv("momentum=1.5\n").is_err());
}

#[test]
fn training_is_deterministic_and_keeps_the_best_epoch() {
    let train_set = phantom_samples(4, 64, 3, "train").unwrap();
    let val_set = phantom_samples(2, 64, 3, "val").unwrap();
    let cfg = quick_config(6);
    let (m1, h1) = train(&cfg, &train_set, &val_set).unwrap();
    let (m2, h2) = train(&cfg, &train_set, &val_set).unwrap();
    assert_eq!(h1, h2);
    assert_eq!(m1.params, m2.params);
    assert_eq!(h1.train_loss.len(), 6);
    assert_eq!(h1.val_jsi.len(), 6);

    let best = h1.val_jsi.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    assert_eq!(h1.val_jsi[h1.best_epoch], best);
    assert!(h1.val_jsi[..h1.best_epoch].iter().all(|&j| j < best));
    let reeval = evaluate(&m1, &val_set, None).unwrap().raw.mean(Index::Jsi).unwrap_or(0.0);
    assert_eq!(reeval, best);

    let other = ExperimentConfig { seed: 18, ..cfg.clone() };
    assert_ne!(train(&other, &train_set, &val_set).unwrap().1.train_loss, h1.train_loss);
}

#[test]
fn training_rejects_bad_input() {
    let s = phantom_samples(2, 64, 3, "x").unwrap();
    assert!(train(&quick_config(0), &s, &s).is_err());
    assert!(train(&quick_config(1), &[], &s).is_err());
    assert!(train(&quick_config(1), &s, &[]).is_err());
}

#[test]
fn divergence_reports_epoch_and_step() {
    let s = phantom_samples(2, 64, 3, "div").unwrap();
    let cfg = ExperimentConfig { lr: 1e6, solver: SolverKind::Sgd, ..quick_config(20) };
    match train(&cfg, &s, &s) {
        Err(Error::Divergence { epoch, step, loss }) => {
            assert!(!loss.is_finite());
            // Two samples at batch size 2 make one step per epoch.
            assert_eq!(step, epoch);
        }
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn evaluating_against_own_predictions_is_perfect() {
    let train_set = phantom_samples(4, 64, 5, "own").unwrap();
    let mut model = fcnseg::build_model(Variant::Fcn8s, &BackboneSpec::tiny(), 2, 9).unwrap();
    // Random score weights so predictions contain both classes.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (name, t) in model.params.iter_mut() {
        if name.starts_with("score") {
            *t = Tensor::randn(t.shape(), 0.5, &mut rng);
        }
    }
    let relabelled: Vec<Sample> = train_set
        .iter()
        .map(|s| Sample::new(s.id.clone(), s.image.clone(), model.predict_mask(&s.image).unwrap()).unwrap())
        .collect();
    let result = evaluate(&model, &relabelled, None).unwrap();
    let mut checked = 0;
    for img in &result.images {
        let c = img.raw.counts;
        if c.tp > 0 && c.tn > 0 {
            for index in Index::ALL {
                assert_eq!(img.raw.get(index), Some(1.0), "{} {index}", img.id);
            }
            checked += 1;
        }
        assert_eq!(c.fp + c.fn_, 0);
    }
    assert!(checked > 0, "no prediction contained both classes");
}

#[test]
fn evaluation_flags_missing_items_and_continues() {
    let (subjects, source) = phantom_subjects(6, &PhantomConfig::new(64, 13), 2).unwrap();
    let manifest = build_manifest(DatasetTag::Md, &SubjectPools { md: subjects, wd: Vec::new() }, 2).unwrap();
    let model = fcnseg::build_model(Variant::Fcn8s, &BackboneSpec::tiny(), 2, 1).unwrap();
    let mut items: Vec<_> = manifest.items.clone();
    items[0].image = PathBuf::from("images/nobody/01.png");
    let post = PostprocConfig::default();
    let result = evaluate_items(&model, &source, &items, Some(&post)).unwrap();
    assert_eq!(result.failed.len(), 1);
    assert_eq!(result.images.len(), items.len() - 1);
    assert!(result.post.is_some());
    assert!(result.images.iter().all(|r| r.inference_ms > 0.0 && r.postproc_ms.unwrap() > 0.0));
}

fn metric_view(cv: &CvResult) -> Vec<(String, MetricReport, Option<MetricReport>)> {
    cv.folds.iter().flat_map(|f| f.test.images.iter().map(|r| (r.id.clone(), r.raw, r.post))).collect()
}

#[test]
fn cross_validation_covers_every_image_once() {
    let (subjects, source) = phantom_subjects(12, &PhantomConfig::new(64, 13), 4).unwrap();
    let manifest = build_manifest(DatasetTag::Md, &SubjectPools { md: subjects, wd: Vec::new() }, 4).unwrap();
    let cfg = quick_config(2);
    let cv = cross_validate(&cfg, &source, &manifest, 3).unwrap();
    assert_eq!(cv.folds.len(), 3);
    assert_eq!(cv.pooled_raw.images, manifest.items.len());

    let mut ids: Vec<String> = metric_view(&cv).into_iter().map(|(id, ..)| id).collect();
    ids.sort();
    let mut expected: Vec<String> = manifest.items.iter().map(|it| format!("{}/07", it.subject_id)).collect();
    expected.sort();
    assert_eq!(ids, expected);

    // The pooled mean is the image-weighted mean of the fold means.
    for index in [Index::Jsi, Index::Mcc] {
        let weighted: f64 = cv
            .folds
            .iter()
            .map(|f| {
                let s = f.test.raw.get(index);
                s.mean.unwrap_or(0.0) * s.n as f64
            })
            .sum::<f64>();
        let n: usize = cv.folds.iter().map(|f| f.test.raw.get(index).n).sum();
        if n > 0 {
            assert!((weighted / n as f64 - cv.pooled_raw.mean(index).unwrap()).abs() < 1e-12);
        }
    }

    for (i, f) in cv.folds.iter().enumerate() {
        assert_eq!(f.config.seed, fold_seed(cfg.seed, i));
        assert_eq!(f.history.val_jsi.len(), cfg.epochs);
    }
    let text = cv.to_kv();
    assert!(text.contains("raw.jsi.mean=") && text.contains("fold2.post.jsi.mean=") && text.contains("seed=17\n"));

    let serial = cross_validate(&cfg, &source, &manifest, 1).unwrap();
    assert_eq!(metric_view(&serial), metric_view(&cv));
    assert_eq!(serial.pooled_raw, cv.pooled_raw);
}

#[test]
fn fold_failures_carry_the_fold_id() {
    let (subjects, source) = phantom_subjects(6, &PhantomConfig::new(64, 13), 4).unwrap();
    let mut manifest = build_manifest(DatasetTag::Md, &SubjectPools { md: subjects, wd: Vec::new() }, 4).unwrap();
    manifest.items[0].image = PathBuf::from("images/missing/07.png");
    match cross_validate(&quick_config(1), &source, &manifest, 2) {
        Err(Error::Fold { fold, source }) => {
            assert!(fold < 3);
            assert_eq!(source.kind(), "invalid-argument");
        }
        other => panic!("expected a fold error, got {other:?}"),
    }
}

#[test]
fn run_record_files_have_one_row_per_epoch_and_image() {
    let (subjects, source) = phantom_subjects(8, &PhantomConfig::new(64, 13), 6).unwrap();
    let manifest = build_manifest(DatasetTag::Md, &SubjectPools { md: subjects, wd: Vec::new() }, 6).unwrap();
    let cfg = quick_config(3);
    let (_, record) = run_experiment(&cfg, &source, &manifest).unwrap();
    assert_eq!(record.history_tsv().lines().count(), 1 + 3);
    assert_eq!(record.per_image_tsv().lines().count(), 1 + manifest.split(Split::Test).count());
    let kv = record.to_kv();
    assert!(kv.starts_with(&cfg.to_kv()));
    assert!(kv.contains("best_epoch=") && kv.contains("post.mcc.sd="));
}

#[test]
fn bench_reports_postproc_as_a_separate_term() {
    let model = fcnseg::build_model(Variant::Fcn8s, &BackboneSpec::tiny(), 2, 1).unwrap();
    let images: Vec<_> = phantom_samples(2, 64, 1, "bench").unwrap().into_iter().map(|s| s.image).collect();
    assert!(bench_inference(&model, &images, 2, None).is_err());
    assert!(bench_inference(&model, &[], 3, None).is_err());

    let plain = bench_inference(&model, &images, 3, None).unwrap();
    assert_eq!(plain.inference.n, 6);
    assert!(plain.postproc.is_none());
    assert_eq!(plain.total_ms(), plain.inference.mean_ms);

    let post = PostprocConfig::default();
    let with = bench_inference(&model, &images, 3, Some(&post)).unwrap();
    let p = with.postproc.unwrap();
    assert!(p.mean_ms > 0.0 && p.n == 6);
    assert_eq!(with.total_ms(), with.inference.mean_ms + p.mean_ms);
    let text = with.to_kv();
    for key in ["inference_ms.mean=", "inference_ms.sd=", "inference_ms.n=6", "postproc_ms.mean=", "total_ms.mean="] {
        assert!(text.contains(key), "{key} missing from\n{text}");
    }
    let back = BenchReport::from_kv(&text).unwrap();
    assert_eq!(back.inference.n, 6);
    assert!((back.total_ms() - with.total_ms()).abs() < 1e-5);
    assert!(with.describe().contains("+ postproc"));
}

#[test]
fn timing_summary_uses_the_sample_sd() {
    let s = TimingSummary::from_samples(&[1.0, 2.0, 3.0]).unwrap();
    assert_eq!((s.mean_ms, s.sd_ms, s.n), (2.0, 1.0, 3));
    assert!(TimingSummary::from_samples(&[1.0]).is_err());
}

#[test]
fn report_tables_gather_run_directories() {
    let dir = tempfile::tempdir().unwrap();
    let metrics = |variant: &str, dataset: &str, solver: &str, jsi: f64| {
        let cfg = ExperimentConfig {
            variant: variant.parse().unwrap(),
            dataset: dataset.parse().unwrap(),
            solver: solver.parse().unwrap(),
            ..Default::default()
        };
        let mut text = cfg.to_kv();
        for (stage, shift) in [("raw", 0.0), ("post", 0.01)] {
            for index in Index::ALL {
                text += &format!("{stage}.{index}.mean={}\n{stage}.{index}.sd=0.01\n", jsi + shift);
            }
        }
        text
    };
    let write = |rel: &str, name: &str, text: String| {
        let d = dir.path().join(rel);
        std::fs::create_dir_all(&d).unwrap();
        std::fs::write(d.join(name), text).unwrap();
    };
    write("a", "metrics.kv", metrics("fcn8s", "md", "adam", 0.93));
    write("b/nested", "metrics.kv", metrics("fcn32s", "md", "adam", 0.92));
    write("c", "metrics.kv", metrics("fcn8s", "wd", "sgd", 0.80));
    let bench = BenchReport {
        inference: TimingSummary { mean_ms: 10.0, sd_ms: 1.0, n: 9 },
        postproc: Some(TimingSummary { mean_ms: 2.0, sd_ms: 0.5, n: 9 }),
    };
    let cfg = ExperimentConfig::default();
    write("a", "bench.kv", cfg.to_kv() + &bench.to_kv());

    let runs = collect_runs(&[dir.path().to_path_buf()]).unwrap();
    assert_eq!(runs.len(), 3);
    let tables = render_tables(&runs);
    assert!(tables.contains("fcn8s\tmd\tadam\t0.9300 ± 0.0100"));
    assert!(tables.contains("sgd\tfcn8s\t-\t0.8000 ± 0.0100"));
    assert!(tables.contains("fcn32s\tmd\tadam\tpost\t0.9300 ± 0.0100"));
    assert!(tables.contains("fcn8s\tmd\tadam\t10.000 ± 1.000\t2.000 ± 0.500\t12.000\t9"));

    let kv = render_kv(&runs);
    assert!(kv.contains("fcn8s.md.adam.raw.jsi.mean=0.930000\n"));
    assert!(kv.contains("fcn8s.md.adam.timing.total_ms.mean=12.000000\n"));

    assert!(collect_runs(&[tempfile::tempdir().unwrap().path().to_path_buf()]).is_err());
}

#[test]
fn samples_must_pair_image_and_mask() {
    let s = &phantom_samples(1, 64, 0, "pair").unwrap()[0];
    assert!(Sample::new("bad", s.image.clone(), SegmentationMask::empty(32, 64)).is_err());
}
