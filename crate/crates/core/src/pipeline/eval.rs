use std::time::Instant;

use super::{Sample, SampleSource};
use crate::dataio::ManifestItem;
use crate::error::{Error, Result};
use crate::metrics::{aggregate, compute_metrics, confusion, Aggregate, MetricReport};
use crate::models::ModelGraph;
use crate::postproc::{postprocess, PostprocConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct ImageResult {
    pub id: String,
    pub raw: MetricReport,
    /// Present when post-processing was requested.
    pub post: Option<MetricReport>,
    pub inference_ms: f64,
    pub postproc_ms: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    pub images: Vec<ImageResult>,
    pub raw: Aggregate,
    pub post: Option<Aggregate>,
    /// Items that could not be loaded, with the reason.
    pub failed: Vec<(String, String)>,
}

fn score(pred: &crate::SegmentationMask, sample: &Sample) -> Result<MetricReport> {
    compute_metrics(&confusion(pred, &sample.mask)?)
}

fn evaluate_one(model: &ModelGraph, sample: &Sample, postproc: Option<&PostprocConfig>) -> Result<ImageResult> {
    let t = Instant::now();
    let pred = model.predict_mask(&sample.image)?;
    let inference_ms = t.elapsed().as_secs_f64() * 1e3;
    let raw = score(&pred, sample)?;
    let (post, postproc_ms) = match postproc {
        Some(cfg) => {
            let t = Instant::now();
            let cleaned = postprocess(&pred, cfg)?;
            let ms = t.elapsed().as_secs_f64() * 1e3;
            (Some(score(&cleaned, sample)?), Some(ms))
        }
        None => (None, None),
    };
    Ok(ImageResult { id: sample.id.clone(), raw, post, inference_ms, postproc_ms })
}

fn collect(images: Vec<ImageResult>, failed: Vec<(String, String)>) -> Result<EvalResult> {
    if images.is_empty() {
        return Err(Error::invalid(format!("no image could be evaluated ({} failed)", failed.len())));
    }
    let raw_reports: Vec<MetricReport> = images.iter().map(|r| r.raw).collect();
    let post_reports: Option<Vec<MetricReport>> = images.iter().map(|r| r.post).collect();
    Ok(EvalResult {
        raw: aggregate(&raw_reports)?,
        post: post_reports.map(|p| aggregate(&p)).transpose()?,
        images,
        failed,
    })
}

/// Predicts every sample, optionally post-processes, and scores against the
/// ground truth.
pub fn evaluate(model: &ModelGraph, samples: &[Sample], postproc: Option<&PostprocConfig>) -> Result<EvalResult> {
    if samples.is_empty() {
        return Err(Error::invalid("evaluation split is empty"));
    }
    let images = samples.iter().map(|s| evaluate_one(model, s, postproc)).collect::<Result<Vec<_>>>()?;
    collect(images, Vec::new())
}

/// Like [`evaluate`], loading each item from `source`. Items that fail to
/// load are recorded in [`EvalResult::failed`] and skipped.
pub fn evaluate_items<'a>(
    model: &ModelGraph,
    source: &dyn SampleSource,
    items: impl IntoIterator<Item = &'a ManifestItem>,
    postproc: Option<&PostprocConfig>,
) -> Result<EvalResult> {
    let mut images = Vec::new();
    let mut failed = Vec::new();
    for item in items {
        match source.load(item) {
            Ok(sample) => images.push(evaluate_one(model, &sample, postproc)?),
            Err(e) => failed.push((item.image.display().to_string(), e.to_string())),
        }
    }
    collect(images, failed)
}
