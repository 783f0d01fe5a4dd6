//! Synthetic thigh cross-sections with exact ground truth.
//!
//! Each slice contains, from the outside in: a bright subcutaneous fat ring,
//! a darker muscle compartment, a mid-gray quadriceps ellipse toward the top,
//! and a femur disk with a bright marrow core. The ROI is the quadriceps,
//! femur and marrow. Geometry shrinks and drifts smoothly with the scan
//! index; Gaussian noise is added before 8-bit quantization.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::image::GrayImage;
use crate::error::{Error, Result};
use crate::mask::SegmentationMask;
use crate::seed::rng_for;

pub const MIN_PHANTOM_SIZE: usize = 64;

/// Tissue intensities in `[0, 1]`.
pub mod intensity {
    pub const BACKGROUND: f64 = 0.03;
    pub const FAT: f64 = 0.85;
    pub const MUSCLE: f64 = 0.22;
    pub const QUADRICEPS: f64 = 0.50;
    pub const FEMUR: f64 = 0.36;
    pub const MARROW: f64 = 0.66;
}

/// Noise-free images are segmented exactly by keeping intensities inside
/// this band.
pub const ROI_BAND: (f64, f64) = (0.29, 0.75);

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhantomConfig {
    pub size: usize,
    pub scan_count: usize,
    pub noise_sigma: f64,
}

impl PhantomConfig {
    pub fn new(size: usize, scan_count: usize) -> Self {
        PhantomConfig { size, scan_count, noise_sigma: 0.04 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomScan {
    pub image: GrayImage,
    pub mask: SegmentationMask,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhantomSubject {
    pub seed: u64,
    pub scans: Vec<PhantomScan>,
}

/// Per-subject anatomy, drawn once from the seed.
struct Anatomy {
    centre: (f64, f64),
    outer: (f64, f64),
    fat_fraction: f64,
    quad_centre: (f64, f64),
    quad_axes: (f64, f64),
    quad_angle: f64,
    femur_centre: (f64, f64),
    femur_radius: f64,
    marrow_fraction: f64,
    drift: (f64, f64),
}

impl Anatomy {
    fn draw<R: Rng>(rng: &mut R) -> Self {
        let mut u = |lo: f64, hi: f64| rng.gen_range(lo..hi);
        Anatomy {
            centre: (u(-0.04, 0.04), u(-0.04, 0.04)),
            outer: (u(0.80, 0.88), u(0.72, 0.80)),
            fat_fraction: u(0.84, 0.88),
            quad_centre: (u(-0.16, -0.10), u(-0.05, 0.05)),
            quad_axes: (u(0.40, 0.46), u(0.50, 0.56)),
            quad_angle: u(-0.25, 0.25),
            femur_centre: (u(0.06, 0.12), u(-0.04, 0.06)),
            femur_radius: u(0.15, 0.18),
            marrow_fraction: u(0.5, 0.6),
            drift: (u(-0.05, 0.05), u(-0.05, 0.05)),
        }
    }

    /// Tissue intensity and ROI membership at normalized `(v, u)` (row,
    /// column, both in `[-1, 1]`) for slice position `t` in `[0, 1]`.
    fn sample(&self, v: f64, u: f64, t: f64) -> (f64, bool) {
        let scale = 1.0 - 0.25 * t;
        let cy = self.centre.0 + self.drift.0 * t;
        let cx = self.centre.1 + self.drift.1 * t;
        let (y, x) = ((v - cy) / scale, (u - cx) / scale);

        let outer = (y / self.outer.0).powi(2) + (x / self.outer.1).powi(2);
        if outer > 1.0 {
            return (intensity::BACKGROUND, false);
        }
        let f = self.fat_fraction;
        if outer > f * f {
            return (intensity::FAT, false);
        }
        let (fy, fx) = (y - self.femur_centre.0, x - self.femur_centre.1);
        let r2 = fy * fy + fx * fx;
        if r2 <= self.femur_radius.powi(2) {
            let marrow = self.femur_radius * self.marrow_fraction;
            return if r2 <= marrow * marrow { (intensity::MARROW, true) } else { (intensity::FEMUR, true) };
        }
        let (s, c) = self.quad_angle.sin_cos();
        let (qy, qx) = (y - self.quad_centre.0, x - self.quad_centre.1);
        let (ry, rx) = (c * qy - s * qx, s * qy + c * qx);
        if (ry / self.quad_axes.0).powi(2) + (rx / self.quad_axes.1).powi(2) <= 1.0 {
            return (intensity::QUADRICEPS, true);
        }
        (intensity::MUSCLE, false)
    }
}

/// Generates one subject's scan series.
pub fn generate_phantom(seed: u64, size: usize, scan_count: usize) -> Result<PhantomSubject> {
    generate_phantom_with(seed, &PhantomConfig::new(size, scan_count))
}

pub fn generate_phantom_with(seed: u64, cfg: &PhantomConfig) -> Result<PhantomSubject> {
    if cfg.size < MIN_PHANTOM_SIZE {
        return Err(Error::invalid(format!("phantom size must be at least {MIN_PHANTOM_SIZE}, got {}", cfg.size)));
    }
    if cfg.scan_count == 0 {
        return Err(Error::invalid("phantom scan count must be at least 1"));
    }
    if !(cfg.noise_sigma >= 0.0 && cfg.noise_sigma.is_finite()) {
        return Err(Error::invalid(format!("noise sigma must be non-negative, got {}", cfg.noise_sigma)));
    }
    let anatomy = Anatomy::draw(&mut rng_for(seed, "phantom/anatomy"));
    let n = cfg.size;
    let half = n as f64 / 2.0;
    let noise = Normal::new(0.0, cfg.noise_sigma).expect("sigma checked above");
    let scans = (0..cfg.scan_count)
        .map(|s| {
            let t = if cfg.scan_count == 1 { 0.5 } else { s as f64 / (cfg.scan_count - 1) as f64 };
            let mut rng = rng_for(seed, &format!("phantom/noise/{s}"));
            let mut pixels = Vec::with_capacity(n * n);
            let mut labels = Vec::with_capacity(n * n);
            for row in 0..n {
                for col in 0..n {
                    let v = (row as f64 + 0.5 - half) / half;
                    let u = (col as f64 + 0.5 - half) / half;
                    let (value, roi) = anatomy.sample(v, u, t);
                    let noisy = if cfg.noise_sigma > 0.0 { value + noise.sample(&mut rng) } else { value };
                    pixels.push((noisy.clamp(0.0, 1.0) * 255.0).round() as u8);
                    labels.push(u8::from(roi));
                }
            }
            PhantomScan {
                image: GrayImage { width: n, height: n, pixels },
                mask: SegmentationMask::new(n, n, labels).expect("labels are 0 or 1"),
            }
        })
        .collect();
    Ok(PhantomSubject { seed, scans })
}

/// Thresholds a gray image at [`ROI_BAND`].
pub fn threshold_roi(image: &GrayImage) -> SegmentationMask {
    let (lo, hi) = ROI_BAND;
    SegmentationMask::from_fn(image.width, image.height, |y, x| {
        let v = image.pixels[y * image.width + x] as f64 / 255.0;
        v >= lo && v <= hi
    })
}

/// Adds `k` spurious square-ish blobs outside the ROI, each covering at most
/// `max_fraction` of the ROI area and kept at least 2 pixels away from it.
pub fn add_spurious_blobs<R: Rng>(mask: &SegmentationMask, k: usize, max_fraction: f64, rng: &mut R) -> SegmentationMask {
    let (w, h) = (mask.width(), mask.height());
    let max_area = ((mask.foreground_count() as f64 * max_fraction).floor() as usize).max(1);
    let near_roi = |y: usize, x: usize, side_y: usize, side_x: usize| {
        let (y0, x0) = (y.saturating_sub(2), x.saturating_sub(2));
        let (y1, x1) = ((y + side_y + 2).min(h), (x + side_x + 2).min(w));
        (y0..y1).any(|yy| (x0..x1).any(|xx| mask.get(yy, xx)))
    };
    let mut out = mask.clone();
    let mut placed = 0;
    for _ in 0..k * 200 {
        if placed == k {
            break;
        }
        let side_y = rng.gen_range(1..=((max_area as f64).sqrt() as usize).max(1));
        let side_x = (max_area / side_y).clamp(1, side_y + 2);
        if side_y >= h || side_x >= w {
            continue;
        }
        let y = rng.gen_range(0..h - side_y);
        let x = rng.gen_range(0..w - side_x);
        if near_roi(y, x, side_y, side_x) {
            continue;
        }
        for yy in y..y + side_y {
            for xx in x..x + side_x {
                out.set(yy, xx, true);
            }
        }
        placed += 1;
    }
    out
}
