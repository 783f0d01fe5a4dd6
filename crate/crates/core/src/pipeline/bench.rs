use std::time::Instant;

use crate::error::{Error, Result};
use crate::kv;
use crate::models::ModelGraph;
use crate::postproc::{postprocess, PostprocConfig};
use crate::tensor::Tensor;

const WHAT: &str = "bench report";

/// Mean and sample standard deviation of `n` wall times.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimingSummary {
    pub mean_ms: f64,
    pub sd_ms: f64,
    pub n: usize,
}

impl TimingSummary {
    pub fn from_samples(ms: &[f64]) -> Result<Self> {
        if ms.len() < 2 {
            return Err(Error::invalid(format!("timing summary needs at least 2 samples, got {}", ms.len())));
        }
        let n = ms.len() as f64;
        let mean = ms.iter().sum::<f64>() / n;
        let var = ms.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / (n - 1.0);
        Ok(TimingSummary { mean_ms: mean, sd_ms: var.sqrt(), n: ms.len() })
    }
}

/// Per-image timing: network inference, and post-processing as its own
/// additive term.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchReport {
    pub inference: TimingSummary,
    pub postproc: Option<TimingSummary>,
}

impl BenchReport {
    /// Mean inference time plus mean post-processing time.
    pub fn total_ms(&self) -> f64 {
        self.inference.mean_ms + self.postproc.map_or(0.0, |p| p.mean_ms)
    }

    pub fn to_kv(&self) -> String {
        let mut pairs = vec![
            ("inference_ms.mean", format!("{:.6}", self.inference.mean_ms)),
            ("inference_ms.sd", format!("{:.6}", self.inference.sd_ms)),
            ("inference_ms.n", self.inference.n.to_string()),
        ];
        if let Some(p) = self.postproc {
            pairs.push(("postproc_ms.mean", format!("{:.6}", p.mean_ms)));
            pairs.push(("postproc_ms.sd", format!("{:.6}", p.sd_ms)));
            pairs.push(("postproc_ms.n", p.n.to_string()));
        }
        pairs.push(("total_ms.mean", format!("{:.6}", self.total_ms())));
        kv::render(pairs)
    }

    pub fn from_kv(text: &str) -> Result<Self> {
        let map = kv::parse(text, WHAT)?;
        let summary = |prefix: &str| -> Result<TimingSummary> {
            let get = |k: &str| kv::require(&map, &format!("{prefix}.{k}"), WHAT).map(str::to_string);
            Ok(TimingSummary {
                mean_ms: kv::parse_value(&get("mean")?, "mean", WHAT)?,
                sd_ms: kv::parse_value(&get("sd")?, "sd", WHAT)?,
                n: kv::parse_value(&get("n")?, "n", WHAT)?,
            })
        };
        let postproc = if map.contains_key("postproc_ms.mean") { Some(summary("postproc_ms")?) } else { None };
        Ok(BenchReport { inference: summary("inference_ms")?, postproc })
    }

    /// Human-readable summary, e.g. `inference 12.3 ms + postproc 0.4 ms = 12.7 ms`.
    pub fn describe(&self) -> String {
        let inf = format!("inference {:.3} ms (sd {:.3}, n {})", self.inference.mean_ms, self.inference.sd_ms, self.inference.n);
        match self.postproc {
            Some(p) => format!("{inf} + postproc {:.3} ms (sd {:.3}, n {}) = {:.3} ms", p.mean_ms, p.sd_ms, p.n, self.total_ms()),
            None => inf,
        }
    }
}

/// Times `predict_mask` on every image `repetitions` times after one
/// warm-up pass. With `postproc`, the post-processing of each prediction is
/// timed separately.
pub fn bench_inference(
    model: &ModelGraph,
    images: &[Tensor],
    repetitions: usize,
    postproc: Option<&PostprocConfig>,
) -> Result<BenchReport> {
    if repetitions < 3 {
        return Err(Error::invalid(format!("bench needs at least 3 repetitions, got {repetitions}")));
    }
    if images.is_empty() {
        return Err(Error::invalid("bench needs at least one image"));
    }
    for image in images {
        let mask = model.predict_mask(image)?;
        if let Some(cfg) = postproc {
            postprocess(&mask, cfg)?;
        }
    }
    let mut inference = Vec::with_capacity(repetitions * images.len());
    let mut post = Vec::new();
    for _ in 0..repetitions {
        for image in images {
            let t = Instant::now();
            let mask = model.predict_mask(image)?;
            inference.push(t.elapsed().as_secs_f64() * 1e3);
            if let Some(cfg) = postproc {
                let t = Instant::now();
                let cleaned = postprocess(&mask, cfg)?;
                post.push(t.elapsed().as_secs_f64() * 1e3);
                std::hint::black_box(cleaned);
            }
        }
    }
    Ok(BenchReport {
        inference: TimingSummary::from_samples(&inference)?,
        postproc: postproc.map(|_| TimingSummary::from_samples(&post)).transpose()?,
    })
}
