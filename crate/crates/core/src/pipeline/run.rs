use std::thread;

use super::config::ExperimentConfig;
use super::eval::{evaluate_items, EvalResult};
use super::train::{train, TrainHistory};
use super::{load_split, SampleSource};
use crate::dataio::{kfold_splits, DatasetManifest, Split};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, Aggregate, Index, MetricReport};
use crate::models::ModelGraph;
use crate::seed::derive_seed;

/// Everything one train/test run produced.
#[derive(Debug, Clone, PartialEq)]
pub struct RunRecord {
    pub config: ExperimentConfig,
    pub history: TrainHistory,
    pub test: EvalResult,
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"))
}

impl RunRecord {
    /// Config, best epoch, test aggregates (`raw.` and `post.` prefixes) and
    /// mean inference time as `key=value` lines.
    pub fn to_kv(&self) -> String {
        let mut out = self.config.to_kv();
        out += &format!("best_epoch={}\n", self.history.best_epoch);
        out += &format!("best_val_jsi={:.6}\n", self.history.val_jsi[self.history.best_epoch]);
        out += &self.test.raw.to_kv("raw.");
        if let Some(post) = &self.test.post {
            out += &post.to_kv("post.");
        }
        let n = self.test.images.len() as f64;
        out += &format!("inference_ms.mean={:.6}\n", self.test.images.iter().map(|r| r.inference_ms).sum::<f64>() / n);
        out += &format!("failed={}\n", self.test.failed.len());
        out
    }

    /// One row per epoch: epoch, train loss, val JSI.
    pub fn history_tsv(&self) -> String {
        let mut out = "epoch\ttrain_loss\tval_jsi\n".to_string();
        for (e, (l, j)) in self.history.train_loss.iter().zip(&self.history.val_jsi).enumerate() {
            out += &format!("{e}\t{l:.9}\t{j:.6}\n");
        }
        out
    }

    /// One row per test image with raw (and post-processed) indices and
    /// timings.
    pub fn per_image_tsv(&self) -> String {
        per_image_tsv(self.test.images.iter())
    }
}

fn per_image_tsv<'a>(images: impl Iterator<Item = &'a super::ImageResult>) -> String {
    let names: Vec<&str> = Index::ALL.iter().map(|i| i.as_str()).collect();
    let mut out = format!("id\t{}\tinference_ms", names.join("\t"));
    out += &format!("\t{}\tpostproc_ms\n", names.iter().map(|n| format!("post.{n}")).collect::<Vec<_>>().join("\t"));
    let cells = |r: Option<&MetricReport>| Index::ALL.map(|i| opt(r.and_then(|r| r.get(i)))).join("\t");
    for img in images {
        out += &format!(
            "{}\t{}\t{:.4}\t{}\t{}\n",
            img.id,
            cells(Some(&img.raw)),
            img.inference_ms,
            cells(img.post.as_ref()),
            img.postproc_ms.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))
        );
    }
    out
}

/// Trains on the manifest's train split (selecting on val) and evaluates the
/// test split, post-processing too when `config.postproc` is set.
pub fn run_experiment(
    config: &ExperimentConfig,
    source: &dyn SampleSource,
    manifest: &DatasetManifest,
) -> Result<(ModelGraph, RunRecord)> {
    let train_set = load_split(source, manifest, Split::Train)?;
    let val_set = load_split(source, manifest, Split::Val)?;
    if manifest.split(Split::Test).next().is_none() {
        return Err(Error::invalid("the test split is empty"));
    }
    let (model, history) = train(config, &train_set, &val_set)?;
    let post = config.postproc.then_some(&config.postproc_steps);
    let test = evaluate_items(&model, source, manifest.split(Split::Test), post)?;
    let record = RunRecord { config: config.clone(), history, test };
    Ok((model, record))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvResult {
    /// The base config; fold `i` trained with seed [`fold_seed`]`(seed, i)`.
    pub config: ExperimentConfig,
    pub folds: Vec<RunRecord>,
    /// Aggregate over every test image of every fold.
    pub pooled_raw: Aggregate,
    pub pooled_post: Option<Aggregate>,
}

impl CvResult {
    /// Pooled aggregates under `raw.`/`post.` and per-fold ones under
    /// `fold<i>.raw.`/`fold<i>.post.`, after the base config.
    pub fn to_kv(&self) -> String {
        let mut out = self.config.to_kv();
        out += &self.pooled_raw.to_kv("raw.");
        if let Some(post) = &self.pooled_post {
            out += &post.to_kv("post.");
        }
        let images: Vec<f64> = self.folds.iter().flat_map(|f| f.test.images.iter().map(|r| r.inference_ms)).collect();
        out += &format!("inference_ms.mean={:.6}\n", images.iter().sum::<f64>() / images.len().max(1) as f64);
        out += &format!("failed={}\n", self.folds.iter().map(|f| f.test.failed.len()).sum::<usize>());
        out += &format!("folds={}\n", self.folds.len());
        for (i, f) in self.folds.iter().enumerate() {
            out += &format!("fold{i}.best_epoch={}\n", f.history.best_epoch);
            out += &f.test.raw.to_kv(&format!("fold{i}.raw."));
            if let Some(post) = &f.test.post {
                out += &post.to_kv(&format!("fold{i}.post."));
            }
        }
        out
    }

    pub fn per_image_tsv(&self) -> String {
        per_image_tsv(self.folds.iter().flat_map(|f| f.test.images.iter()))
    }
}

/// Seed used to train fold `fold` of a run seeded with `seed`.
pub fn fold_seed(seed: u64, fold: usize) -> u64 {
    derive_seed(seed, &format!("fold/{fold}"))
}

/// Runs [`run_experiment`] on every fold of `kfold_splits(manifest,
/// config.folds, config.seed)`, up to `threads` folds at a time. Fold `i`
/// trains with seed [`fold_seed`]`(config.seed, i)`, so results do not depend
/// on scheduling.
pub fn cross_validate(
    config: &ExperimentConfig,
    source: &dyn SampleSource,
    manifest: &DatasetManifest,
    threads: usize,
) -> Result<CvResult> {
    config.validate()?;
    let splits = kfold_splits(manifest, config.folds, config.seed)?;
    let run = |i: usize, m: &DatasetManifest| {
        let cfg = ExperimentConfig { seed: fold_seed(config.seed, i), ..config.clone() };
        run_experiment(&cfg, source, m).map(|(_, r)| r).map_err(|e| Error::Fold { fold: i, source: Box::new(e) })
    };
    let mut results: Vec<Option<Result<RunRecord>>> = (0..splits.len()).map(|_| None).collect();
    let indexed: Vec<(usize, &DatasetManifest)> = splits.iter().enumerate().collect();
    for chunk in indexed.chunks(threads.max(1)) {
        thread::scope(|s| {
            let handles: Vec<_> = chunk.iter().map(|&(i, m)| (i, s.spawn(move || run(i, m)))).collect();
            for (i, h) in handles {
                results[i] = Some(h.join().unwrap_or_else(|_| Err(Error::Fold { fold: i, source: Box::new(Error::invalid("worker panicked")) })));
            }
        });
    }
    let folds = results.into_iter().map(|r| r.expect("every fold ran")).collect::<Result<Vec<_>>>()?;

    let raw: Vec<MetricReport> = folds.iter().flat_map(|f| f.test.images.iter().map(|r| r.raw)).collect();
    let post: Option<Vec<MetricReport>> = folds.iter().flat_map(|f| f.test.images.iter().map(|r| r.post)).collect();
    Ok(CvResult {
        config: config.clone(),
        pooled_raw: aggregate(&raw)?,
        pooled_post: post.map(|p| aggregate(&p)).transpose()?,
        folds,
    })
}
