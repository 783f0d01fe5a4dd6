//! Binary mask cleanup: majority filtering, morphology, component
//! selection and hole filling.
//!
//! Foreground connectivity is 8-neighbour, background connectivity is
//! 4-neighbour. Morphology ignores neighbours that fall outside the image.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::mask::SegmentationMask;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeShape {
    Square,
    Disk,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StructuringElement {
    shape: SeShape,
    radius: usize,
}

impl StructuringElement {
    pub fn new(shape: SeShape, radius: usize) -> Result<Self> {
        if radius == 0 {
            return Err(Error::invalid("structuring element radius must be at least 1"));
        }
        Ok(StructuringElement { shape, radius })
    }

    pub fn square(radius: usize) -> Result<Self> {
        Self::new(SeShape::Square, radius)
    }

    pub fn disk(radius: usize) -> Result<Self> {
        Self::new(SeShape::Disk, radius)
    }

    pub fn shape(&self) -> SeShape {
        self.shape
    }

    pub fn radius(&self) -> usize {
        self.radius
    }

    /// Offsets `(dy, dx)` covered by the element. A disk of radius `r`
    /// contains the offsets with `dy² + dx² <= r(r+1)`, so radius 1 is the
    /// full 3x3 block.
    pub fn offsets(&self) -> Vec<(isize, isize)> {
        let r = self.radius as isize;
        let mut out = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                if self.shape == SeShape::Square || dy * dy + dx * dx <= r * (r + 1) {
                    out.push((dy, dx));
                }
            }
        }
        out
    }
}

impl fmt::Display for StructuringElement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let shape = match self.shape {
            SeShape::Square => "square",
            SeShape::Disk => "disk",
        };
        write!(f, "{shape}:{}", self.radius)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MorphOp {
    Erode,
    Dilate,
    Open,
    Close,
}

impl MorphOp {
    fn as_str(self) -> &'static str {
        match self {
            MorphOp::Erode => "erode",
            MorphOp::Dilate => "dilate",
            MorphOp::Open => "open",
            MorphOp::Close => "close",
        }
    }
}

/// Binary median, i.e. a majority vote over a `window x window` block with
/// edge replication.
pub fn median_filter(mask: &SegmentationMask, window: usize) -> Result<SegmentationMask> {
    if window < 3 || window % 2 == 0 {
        return Err(Error::invalid(format!("median window must be odd and at least 3, got {window}")));
    }
    let (w, h) = (mask.width(), mask.height());
    if mask.is_empty() {
        return Ok(mask.clone());
    }
    let r = (window / 2) as isize;
    let clamp = |v: isize, n: usize| v.clamp(0, n as isize - 1) as usize;
    let majority = window * window / 2;
    Ok(SegmentationMask::from_fn(w, h, |y, x| {
        let mut ones = 0;
        for dy in -r..=r {
            for dx in -r..=r {
                ones += usize::from(mask.get(clamp(y as isize + dy, h), clamp(x as isize + dx, w)));
            }
        }
        ones > majority
    }))
}

fn sweep(mask: &SegmentationMask, se: &StructuringElement, dilate: bool) -> SegmentationMask {
    let (w, h) = (mask.width(), mask.height());
    let offsets = se.offsets();
    SegmentationMask::from_fn(w, h, |y, x| {
        let mut hits = offsets.iter().filter_map(|&(dy, dx)| {
            let (yy, xx) = (y as isize + dy, x as isize + dx);
            (yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w).then(|| mask.get(yy as usize, xx as usize))
        });
        if dilate {
            hits.any(|v| v)
        } else {
            hits.all(|v| v)
        }
    })
}

pub fn morph(mask: &SegmentationMask, op: MorphOp, se: &StructuringElement) -> SegmentationMask {
    match op {
        MorphOp::Erode => sweep(mask, se, false),
        MorphOp::Dilate => sweep(mask, se, true),
        MorphOp::Open => sweep(&sweep(mask, se, false), se, true),
        MorphOp::Close => sweep(&sweep(mask, se, true), se, false),
    }
}

/// Labels 8-connected foreground components in row-major order of their
/// first pixel. Returns per-pixel labels (0 = background) and sizes, where
/// `sizes[i]` belongs to label `i + 1`.
pub fn label_components(mask: &SegmentationMask) -> (Vec<u32>, Vec<usize>) {
    let (w, h) = (mask.width(), mask.height());
    let mut labels = vec![0u32; w * h];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..w * h {
        if mask.labels()[start] == 0 || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (y, x) = ((p / w) as isize, (p % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (yy, xx) = (y + dy, x + dx);
                    if yy < 0 || xx < 0 || yy >= h as isize || xx >= w as isize {
                        continue;
                    }
                    let q = yy as usize * w + xx as usize;
                    if mask.labels()[q] == 1 && labels[q] == 0 {
                        labels[q] = id;
                        queue.push_back(q);
                    }
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Keeps only the largest 8-connected foreground component. On a size tie
/// the component whose first pixel comes first in row-major order wins.
pub fn keep_largest_component(mask: &SegmentationMask) -> SegmentationMask {
    let (labels, sizes) = label_components(mask);
    let Some(best) = sizes.iter().enumerate().rev().max_by_key(|&(_, &s)| s).map(|(i, _)| i as u32 + 1) else {
        return mask.clone();
    };
    let data = labels.iter().map(|&l| u8::from(l == best)).collect();
    SegmentationMask::new(mask.width(), mask.height(), data).expect("same grid")
}

/// Turns every background region that is not 4-connected to the image
/// border into foreground.
pub fn fill_holes(mask: &SegmentationMask) -> SegmentationMask {
    let (w, h) = (mask.width(), mask.height());
    let mut outside = vec![false; w * h];
    let mut queue = VecDeque::new();
    for y in 0..h {
        for x in 0..w {
            let p = y * w + x;
            if (y == 0 || x == 0 || y + 1 == h || x + 1 == w) && mask.labels()[p] == 0 {
                outside[p] = true;
                queue.push_back(p);
            }
        }
    }
    while let Some(p) = queue.pop_front() {
        let (y, x) = (p / w, p % w);
        let neighbours = [
            (y > 0).then(|| p - w),
            (y + 1 < h).then(|| p + w),
            (x > 0).then(|| p - 1),
            (x + 1 < w).then(|| p + 1),
        ];
        for q in neighbours.into_iter().flatten() {
            if !outside[q] && mask.labels()[q] == 0 {
                outside[q] = true;
                queue.push_back(q);
            }
        }
    }
    let data = outside.iter().map(|&o| u8::from(!o)).collect();
    SegmentationMask::new(w, h, data).expect("same grid")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Step {
    Median(usize),
    Morph(MorphOp, StructuringElement),
    KeepLargest,
    FillHoles,
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Step::Median(k) => write!(f, "median:{k}"),
            Step::Morph(op, se) => write!(f, "{}:{se}", op.as_str()),
            Step::KeepLargest => f.write_str("keep-largest"),
            Step::FillHoles => f.write_str("fill-holes"),
        }
    }
}

/// Ordered list of cleanup steps, written as comma-separated tokens:
/// `median:K`, `erode|dilate|open|close:square|disk:R`, `keep-largest`,
/// `fill-holes`. The empty string and `none` both mean no steps.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PostprocConfig {
    pub steps: Vec<Step>,
}

impl Default for PostprocConfig {
    /// `median:3,open:disk:1,keep-largest,fill-holes`
    fn default() -> Self {
        let disk1 = StructuringElement { shape: SeShape::Disk, radius: 1 };
        PostprocConfig { steps: vec![Step::Median(3), Step::Morph(MorphOp::Open, disk1), Step::KeepLargest, Step::FillHoles] }
    }
}

impl fmt::Display for PostprocConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.steps.is_empty() {
            return f.write_str("none");
        }
        let parts: Vec<String> = self.steps.iter().map(Step::to_string).collect();
        f.write_str(&parts.join(","))
    }
}

fn parse_step(token: &str) -> Result<Step> {
    let parts: Vec<&str> = token.split(':').map(str::trim).collect();
    let bad = || Error::invalid(format!("unknown post-processing step `{token}`"));
    let num = |s: &str| s.parse::<usize>().map_err(|_| Error::invalid(format!("bad number `{s}` in step `{token}`")));
    match parts.as_slice() {
        ["median", k] => {
            let k = num(k)?;
            if k < 3 || k % 2 == 0 {
                return Err(Error::invalid(format!("median window must be odd and at least 3, got {k}")));
            }
            Ok(Step::Median(k))
        }
        ["keep-largest"] => Ok(Step::KeepLargest),
        ["fill-holes"] => Ok(Step::FillHoles),
        [op, shape, r] => {
            let op = match *op {
                "erode" => MorphOp::Erode,
                "dilate" => MorphOp::Dilate,
                "open" => MorphOp::Open,
                "close" => MorphOp::Close,
                _ => return Err(bad()),
            };
            let shape = match *shape {
                "square" => SeShape::Square,
                "disk" => SeShape::Disk,
                _ => return Err(bad()),
            };
            Ok(Step::Morph(op, StructuringElement::new(shape, num(r)?)?))
        }
        _ => Err(bad()),
    }
}

impl FromStr for PostprocConfig {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.is_empty() || s == "none" {
            return Ok(PostprocConfig { steps: Vec::new() });
        }
        let steps = s.split(',').map(|t| parse_step(t.trim())).collect::<Result<_>>()?;
        Ok(PostprocConfig { steps })
    }
}

pub fn postprocess(mask: &SegmentationMask, config: &PostprocConfig) -> Result<SegmentationMask> {
    let mut m = mask.clone();
    for step in &config.steps {
        m = match step {
            Step::Median(k) => median_filter(&m, *k)?,
            Step::Morph(op, se) => morph(&m, *op, se),
            Step::KeepLargest => keep_largest_component(&m),
            Step::FillHoles => fill_holes(&m),
        };
    }
    Ok(m)
}
