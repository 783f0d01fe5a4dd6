use crate::error::{Error, Result};

/// Binary label grid: 0 is background, 1 is the region of interest.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct SegmentationMask {
    width: usize,
    height: usize,
    labels: Vec<u8>,
}

impl SegmentationMask {
    pub fn new(width: usize, height: usize, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != width * height {
            return Err(Error::shape(
                "mask",
                format!("{} labels for a {width}x{height} grid", labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > 1) {
            return Err(Error::invalid(format!("mask label {bad} is not 0 or 1")));
        }
        Ok(SegmentationMask { width, height, labels })
    }

    pub fn empty(width: usize, height: usize) -> Self {
        SegmentationMask { width, height, labels: vec![0; width * height] }
    }

    pub fn filled(width: usize, height: usize) -> Self {
        SegmentationMask { width, height, labels: vec![1; width * height] }
    }

    /// Builds a mask from a predicate over `(row, col)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut labels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                labels.push(u8::from(f(y, x)));
            }
        }
        SegmentationMask { width, height, labels }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.labels[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.labels[y * self.width + x] = u8::from(on);
    }

    pub fn foreground_count(&self) -> usize {
        self.labels.iter().filter(|&&l| l == 1).count()
    }

    pub fn complement(&self) -> Self {
        SegmentationMask {
            width: self.width,
            height: self.height,
            labels: self.labels.iter().map(|&l| 1 - l).collect(),
        }
    }

    pub fn same_dims(&self, other: &SegmentationMask) -> bool {
        self.width == other.width && self.height == other.height
    }
}
