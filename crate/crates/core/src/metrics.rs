//! Pixel-level overlap indices between a predicted and a ground-truth mask.
//!
//! An index whose denominator is zero is undefined (`None`) and is left out
//! of aggregation; the number of images left out is reported per index.
//! MCC is the exception: a zero denominator defines it as 0.

use std::fmt;

use crate::error::{Error, Result};
use crate::mask::SegmentationMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }
}

pub fn confusion(pred: &SegmentationMask, gt: &SegmentationMask) -> Result<ConfusionCounts> {
    if !pred.same_dims(gt) {
        return Err(Error::shape(
            "confusion",
            format!("prediction is {}x{}, ground truth {}x{}", pred.width(), pred.height(), gt.width(), gt.height()),
        ));
    }
    let mut c = ConfusionCounts::default();
    for (&p, &g) in pred.labels().iter().zip(gt.labels()) {
        match (p, g) {
            (1, 1) => c.tp += 1,
            (0, 0) => c.tn += 1,
            (1, 0) => c.fp += 1,
            _ => c.fn_ += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Index {
    Jsi,
    Dsc,
    Sensitivity,
    Specificity,
    Mcc,
}

impl Index {
    pub const ALL: [Index; 5] = [Index::Jsi, Index::Dsc, Index::Sensitivity, Index::Specificity, Index::Mcc];

    pub fn as_str(self) -> &'static str {
        match self {
            Index::Jsi => "jsi",
            Index::Dsc => "dsc",
            Index::Sensitivity => "sensitivity",
            Index::Specificity => "specificity",
            Index::Mcc => "mcc",
        }
    }
}

impl fmt::Display for Index {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub jsi: Option<f64>,
    pub dsc: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub mcc: f64,
    pub counts: ConfusionCounts,
}

impl MetricReport {
    pub fn get(&self, index: Index) -> Option<f64> {
        match index {
            Index::Jsi => self.jsi,
            Index::Dsc => self.dsc,
            Index::Sensitivity => self.sensitivity,
            Index::Specificity => self.specificity,
            Index::Mcc => Some(self.mcc),
        }
    }
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn compute_metrics(c: &ConfusionCounts) -> Result<MetricReport> {
    if c.total() == 0 {
        return Err(Error::invalid("confusion counts are all zero"));
    }
    let (tp, tn, fp, fn_) = (c.tp as f64, c.tn as f64, c.fp as f64, c.fn_ as f64);
    let den = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    let mcc = if den == 0.0 { 0.0 } else { (tp * tn - fp * fn_) / den.sqrt() };
    Ok(MetricReport {
        jsi: ratio(c.tp, c.tp + c.fp + c.fn_),
        dsc: ratio(2 * c.tp, 2 * c.tp + c.fp + c.fn_),
        sensitivity: ratio(c.tp, c.tp + c.fn_),
        specificity: ratio(c.tn, c.tn + c.fp),
        mcc,
        counts: *c,
    })
}

/// Mean and sample standard deviation of one index over the images where it
/// is defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IndexSummary {
    /// `None` when the index is undefined on every image.
    pub mean: Option<f64>,
    /// Sample (n - 1) standard deviation; 0 for a single image.
    pub sd: Option<f64>,
    pub n: usize,
    pub excluded: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub images: usize,
    pub indices: [IndexSummary; 5],
}

impl Aggregate {
    pub fn get(&self, index: Index) -> &IndexSummary {
        &self.indices[index as usize]
    }

    pub fn mean(&self, index: Index) -> Option<f64> {
        self.get(index).mean
    }

    /// `key=value` lines, keys prefixed with `prefix` (e.g. `fcn8s.md.`).
    pub fn to_kv(&self, prefix: &str) -> String {
        let fmt = |v: Option<f64>| v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.6}"));
        let mut out = format!("{prefix}images={}\n", self.images);
        for index in Index::ALL {
            let s = self.get(index);
            out += &format!("{prefix}{index}.mean={}\n", fmt(s.mean));
            out += &format!("{prefix}{index}.sd={}\n", fmt(s.sd));
            out += &format!("{prefix}{index}.excluded={}\n", s.excluded);
        }
        out
    }
}

/// Unweighted per-image mean of every index.
pub fn aggregate(reports: &[MetricReport]) -> Result<Aggregate> {
    if reports.is_empty() {
        return Err(Error::invalid("cannot aggregate an empty list of reports"));
    }
    let indices = Index::ALL.map(|index| {
        let values: Vec<f64> = reports.iter().filter_map(|r| r.get(index)).collect();
        let n = values.len();
        let (mean, sd) = if n == 0 {
            (None, None)
        } else {
            let mean = values.iter().sum::<f64>() / n as f64;
            let sd = if n == 1 {
                0.0
            } else {
                (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
            };
            (Some(mean), Some(sd))
        };
        IndexSummary { mean, sd, n, excluded: reports.len() - n }
    });
    Ok(Aggregate { images: reports.len(), indices })
}
