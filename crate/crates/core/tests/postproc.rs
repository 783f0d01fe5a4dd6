mod common;

use std::time::Instant;

use common::random_mask;
use fcnseg::metrics::{compute_metrics, confusion};
use fcnseg::postproc::{
    fill_holes, keep_largest_component, label_components, median_filter, morph, postprocess, MorphOp, PostprocConfig,
    StructuringElement,
};
use fcnseg::SegmentationMask;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rect(w: usize, h: usize, y0: usize, x0: usize, side_y: usize, side_x: usize) -> SegmentationMask {
    SegmentationMask::from_fn(w, h, |y, x| (y0..y0 + side_y).contains(&y) && (x0..x0 + side_x).contains(&x))
}

fn union(a: &SegmentationMask, b: &SegmentationMask) -> SegmentationMask {
    SegmentationMask::from_fn(a.width(), a.height(), |y, x| a.get(y, x) || b.get(y, x))
}

fn disk(w: usize, cy: f64, cx: f64, r2: f64) -> SegmentationMask {
    SegmentationMask::from_fn(w, w, |y, x| (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2) <= r2)
}

fn jsi(pred: &SegmentationMask, gt: &SegmentationMask) -> f64 {
    compute_metrics(&confusion(pred, gt).unwrap()).unwrap().jsi.unwrap()
}

/// Sorts the replicated-border window and takes its middle element.
fn naive_median(m: &SegmentationMask, k: usize) -> SegmentationMask {
    let r = (k / 2) as isize;
    let (w, h) = (m.width() as isize, m.height() as isize);
    SegmentationMask::from_fn(m.width(), m.height(), |y, x| {
        let mut window = Vec::new();
        for dy in -r..=r {
            for dx in -r..=r {
                let yy = (y as isize + dy).max(0).min(h - 1) as usize;
                let xx = (x as isize + dx).max(0).min(w - 1) as usize;
                window.push(u8::from(m.get(yy, xx)));
            }
        }
        window.sort_unstable();
        window[window.len() / 2] == 1
    })
}

#[test]
fn median_examples() {
    let full = SegmentationMask::filled(9, 7);
    assert_eq!(median_filter(&full, 3).unwrap(), full);
    let mut dot = SegmentationMask::empty(9, 9);
    dot.set(4, 4, true);
    assert_eq!(median_filter(&dot, 3).unwrap(), SegmentationMask::empty(9, 9));
    assert!(median_filter(&dot, 4).is_err());
    assert!(median_filter(&dot, 1).is_err());

    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for k in [3, 5] {
        let m = random_mask(32, 32, 0.5, &mut rng);
        assert_eq!(median_filter(&m, k).unwrap(), naive_median(&m, k));
    }
}

#[test]
fn opening_restores_a_solid_square() {
    let sq = rect(20, 20, 5, 5, 10, 10);
    let se = StructuringElement::disk(1).unwrap();
    let eroded = morph(&sq, MorphOp::Erode, &se);
    assert_eq!(eroded, rect(20, 20, 6, 6, 8, 8));
    assert_eq!(morph(&eroded, MorphOp::Dilate, &se), sq);
    assert_eq!(morph(&sq, MorphOp::Open, &se), sq);
    assert_eq!(morph(&SegmentationMask::empty(8, 8), MorphOp::Dilate, &se), SegmentationMask::empty(8, 8));
}

#[test]
fn disk_offsets() {
    assert_eq!(StructuringElement::disk(1).unwrap().offsets().len(), 9);
    // r = 2: |d|^2 <= 6 drops only the four corners of the 5x5 block.
    assert_eq!(StructuringElement::disk(2).unwrap().offsets().len(), 21);
    assert_eq!(StructuringElement::square(2).unwrap().offsets().len(), 25);
    assert!(StructuringElement::disk(0).is_err());
}

#[test]
fn largest_component_examples() {
    let big = rect(30, 30, 2, 2, 5, 10);
    let small = rect(30, 30, 20, 20, 1, 3);
    let m = union(&big, &small);
    assert_eq!(label_components(&m).1, vec![50, 3]);
    assert_eq!(keep_largest_component(&m), big);
    assert_eq!(keep_largest_component(&big), big);
    assert_eq!(keep_largest_component(&SegmentationMask::empty(5, 5)), SegmentationMask::empty(5, 5));

    // Equal sizes: the component that starts first in row-major order wins.
    let first = rect(30, 30, 10, 20, 3, 3);
    let second = rect(30, 30, 12, 2, 3, 3);
    assert_eq!(keep_largest_component(&union(&second, &first)), first);
}

#[test]
fn diagonal_neighbours_are_connected() {
    let m = SegmentationMask::from_fn(6, 6, |y, x| y == x);
    assert_eq!(label_components(&m).1, vec![6]);
}

#[test]
fn fill_holes_examples() {
    let solid = disk(31, 15.0, 15.0, 100.0);
    let inner = disk(31, 15.0, 15.0, 81.0);
    let ring = SegmentationMask::from_fn(31, 31, |y, x| solid.get(y, x) && !inner.get(y, x));
    assert_eq!(fill_holes(&ring), solid);
    assert_eq!(fill_holes(&solid), solid);
    assert_eq!(fill_holes(&SegmentationMask::empty(7, 7)), SegmentationMask::empty(7, 7));

    // A diagonal gap blocks 4-connected background.
    let diamond = SegmentationMask::from_fn(9, 9, |y, x| (y as isize - 4).abs() + (x as isize - 4).abs() == 3);
    assert_eq!(fill_holes(&diamond).foreground_count(), 25);
}

#[test]
fn config_parsing() {
    let d = PostprocConfig::default();
    assert_eq!(d.to_string(), "median:3,open:disk:1,keep-largest,fill-holes");
    assert_eq!("median:3,open:disk:1,keep-largest,fill-holes".parse::<PostprocConfig>().unwrap(), d);
    assert!("none".parse::<PostprocConfig>().unwrap().steps.is_empty());
    let c: PostprocConfig = "close:square:2, erode:disk:3".parse().unwrap();
    assert_eq!(c.to_string(), "close:square:2,erode:disk:3");
    for bad in ["sharpen", "median:4", "open:hex:1", "open:disk:0", "open:disk"] {
        assert!(bad.parse::<PostprocConfig>().is_err(), "{bad}");
    }
}

#[test]
fn default_pipeline_removes_spurious_blobs() {
    let gt = disk(96, 48.0, 44.0, 900.0);
    let mut pred = gt.clone();
    for (y, x) in [(5, 5), (80, 10), (85, 85), (10, 70)] {
        pred = union(&pred, &rect(96, 96, y, x, 4, 3));
    }
    pred.set(48, 44, false);
    let out = postprocess(&pred, &PostprocConfig::default()).unwrap();
    assert_eq!(label_components(&out).1.len(), 1);
    assert!(jsi(&out, &gt) > jsi(&pred, &gt));
    assert!(jsi(&out, &gt) > 0.99);
    assert_eq!(postprocess(&SegmentationMask::empty(40, 40), &PostprocConfig::default()).unwrap(), SegmentationMask::empty(40, 40));
}

#[test]
fn default_pipeline_fits_time_budget() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let m = median_filter(&random_mask(256, 256, 0.5, &mut rng), 5).unwrap();
    let cfg = PostprocConfig::default();
    let best = (0..3)
        .map(|_| {
            let t = Instant::now();
            postprocess(&m, &cfg).unwrap();
            t.elapsed().as_secs_f64()
        })
        .fold(f64::INFINITY, f64::min);
    assert!(best <= 0.050, "default pipeline took {:.1} ms", best * 1e3);
}

fn arb_mask() -> impl Strategy<Value = SegmentationMask> {
    (1usize..24, 1usize..24, any::<u64>(), 0.1f64..0.9).prop_map(|(w, h, seed, p)| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        random_mask(w, h, p, &mut rng)
    })
}

proptest! {
    #[test]
    fn opening_is_idempotent(m in arb_mask(), r in 1usize..3, square in any::<bool>()) {
        let se = if square { StructuringElement::square(r) } else { StructuringElement::disk(r) }.unwrap();
        let once = morph(&m, MorphOp::Open, &se);
        prop_assert_eq!(morph(&once, MorphOp::Open, &se), once);
        let closed = morph(&m, MorphOp::Close, &se);
        prop_assert_eq!(morph(&closed, MorphOp::Close, &se), closed);
    }

    #[test]
    fn erosion_dilation_duality(m in arb_mask(), r in 1usize..3) {
        let se = StructuringElement::disk(r).unwrap();
        prop_assert_eq!(morph(&m, MorphOp::Erode, &se), morph(&m.complement(), MorphOp::Dilate, &se).complement());
    }

    #[test]
    fn component_and_hole_counts(m in arb_mask()) {
        prop_assert!(keep_largest_component(&m).foreground_count() <= m.foreground_count());
        prop_assert!(fill_holes(&m).foreground_count() >= m.foreground_count());
    }

    #[test]
    fn default_pipeline_leaves_at_most_one_component(m in arb_mask()) {
        let out = postprocess(&m, &PostprocConfig::default()).unwrap();
        prop_assert!(label_components(&out).1.len() <= 1);
    }
}
