//! Training, evaluation, cross-validation, timing and reporting.

mod bench;
mod config;
mod eval;
pub mod report;
mod run;
mod train;

use std::collections::HashMap;
use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, DEFAULT_LOSS_SCALE};
pub use bench::{bench_inference, BenchReport, TimingSummary};
pub use eval::{evaluate, evaluate_items, EvalResult, ImageResult};
pub use run::{cross_validate, fold_seed, run_experiment, CvResult, RunRecord};
pub use train::{loss_and_grads, train, TrainHistory};

use crate::dataio::{
    decode_voc_mask, generate_phantom_with, load_image_3ch, DatasetManifest, ManifestItem, PhantomConfig, ScanRef, Split,
    SubjectScans,
};
use crate::error::{Error, Result};
use crate::mask::SegmentationMask;
use crate::seed::derive_seed;
use crate::tensor::Tensor;

/// One image with its ground truth, ready for the network.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    /// `[1, 3, H, W]` in `[0, 1]`.
    pub image: Tensor,
    pub mask: SegmentationMask,
}

impl Sample {
    pub fn new(id: impl Into<String>, image: Tensor, mask: SegmentationMask) -> Result<Self> {
        let [n, c, h, w] = image.dims4()?;
        if n != 1 || c != 3 || h != mask.height() || w != mask.width() {
            return Err(Error::shape(
                "sample",
                format!("image {:?} does not pair with a {}x{} mask", image.shape(), mask.width(), mask.height()),
            ));
        }
        Ok(Sample { id: id.into(), image, mask })
    }
}

/// Resolves manifest items to samples.
pub trait SampleSource: Sync {
    fn load(&self, item: &ManifestItem) -> Result<Sample>;
}

/// Reads PNG images and paletted masks from disk.
#[derive(Debug, Clone, Copy, Default)]
pub struct DiskSource;

impl SampleSource for DiskSource {
    fn load(&self, item: &ManifestItem) -> Result<Sample> {
        let image = load_image_3ch(&item.image)?;
        let mask = decode_voc_mask(&item.mask)?;
        Sample::new(item.image.display().to_string(), image, mask)
    }
}

/// Samples held in memory, keyed by image path.
#[derive(Debug, Clone, Default)]
pub struct MemorySource {
    samples: HashMap<PathBuf, Sample>,
}

impl MemorySource {
    pub fn insert(&mut self, image_path: impl Into<PathBuf>, sample: Sample) {
        self.samples.insert(image_path.into(), sample);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

impl SampleSource for MemorySource {
    fn load(&self, item: &ManifestItem) -> Result<Sample> {
        self.samples
            .get(&item.image)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("no sample for {}", item.image.display())))
    }
}

pub fn load_split(source: &dyn SampleSource, manifest: &DatasetManifest, split: Split) -> Result<Vec<Sample>> {
    manifest.split(split).map(|it| source.load(it)).collect()
}

/// Relative paths used for scan `index` (1-based) of `subject`, both in
/// memory and on disk.
pub fn scan_paths(subject: &str, index: usize) -> ScanRef {
    let name = format!("{index:02}.png");
    ScanRef { image: Path::new("images").join(subject).join(&name), mask: Path::new("masks").join(subject).join(&name) }
}

/// Phantom subjects `s000`, `s001`, ... with per-subject seeds derived from
/// `seed`. Returns the subject list and an in-memory source holding every
/// scan.
pub fn phantom_subjects(count: usize, cfg: &PhantomConfig, seed: u64) -> Result<(Vec<SubjectScans>, MemorySource)> {
    let mut source = MemorySource::default();
    let mut subjects = Vec::with_capacity(count);
    for i in 0..count {
        let id = format!("s{i:03}");
        let phantom = generate_phantom_with(derive_seed(seed, &format!("subject/{i}")), cfg)?;
        let mut refs = Vec::with_capacity(phantom.scans.len());
        for (j, scan) in phantom.scans.into_iter().enumerate() {
            let r = scan_paths(&id, j + 1);
            let sample = Sample::new(format!("{id}/{:02}", j + 1), scan.image.to_tensor(), scan.mask)?;
            source.insert(r.image.clone(), sample);
            refs.push(r);
        }
        subjects.push(if matches!(cfg.scan_count, 13 | 26) {
            SubjectScans::new(id, refs)?
        } else {
            SubjectScans::with_any_count(id, refs)?
        });
    }
    Ok((subjects, source))
}

/// `count` phantom samples, one mid-series slice from a fresh subject each,
/// seeded from `(seed, label)`.
pub fn phantom_samples(count: usize, size: usize, seed: u64, label: &str) -> Result<Vec<Sample>> {
    (0..count)
        .map(|i| {
            let s = derive_seed(seed, &format!("{label}/{i}"));
            let mut phantom = generate_phantom_with(s, &PhantomConfig::new(size, 1))?;
            let scan = phantom.scans.remove(0);
            Sample::new(format!("{label}/{i}"), scan.image.to_tensor(), scan.mask)
        })
        .collect()
}
