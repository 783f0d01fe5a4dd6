//! Independent reference implementations shared by the integration tests.
//! Nothing here calls into the library's kernels.
#![allow(dead_code)]

use fcnseg::{Tape, Tensor, Var};
use rand::Rng;

/// Six nested loops, zero padding, cross-correlation.
pub fn naive_conv2d(x: &Tensor, w: &Tensor, b: &[f64], stride: usize, pad: usize) -> Tensor {
    let [n, cin, h, wd] = x.dims4().unwrap();
    let [cout, _, kh, kw] = w.dims4().unwrap();
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for i in 0..n {
        for co in 0..cout {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b[co];
                    for ci in 0..cin {
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy = (oy * stride + ky) as isize - pad as isize;
                                let ix = (ox * stride + kx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x.data()[((i * cin + ci) * h + iy as usize) * wd + ix as usize];
                                let wv = w.data()[((co * cin + ci) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((i * cout + co) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![n, cout, oh, ow], out).unwrap()
}

pub fn naive_max_pool(x: &Tensor, k: usize, stride: usize) -> Tensor {
    let [n, c, h, w] = x.dims4().unwrap();
    let oh = (h - k) / stride + 1;
    let ow = (w - k) / stride + 1;
    let mut out = Vec::new();
    for plane in 0..n * c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut m = f64::NEG_INFINITY;
                for ky in 0..k {
                    for kx in 0..k {
                        m = m.max(x.data()[plane * h * w + (oy * stride + ky) * w + ox * stride + kx]);
                    }
                }
                out.push(m);
            }
        }
    }
    Tensor::new(vec![n, c, oh, ow], out).unwrap()
}

/// Builds the scalar loss on a fresh tape with every input as a trainable leaf.
fn evaluate<F>(inputs: &[Tensor], build: &F) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).item().unwrap()
}

/// Relative error `|a - n| / max(|a|, |n|)` over the checked coordinates of
/// one tensor, taken as vector norms; zero when both are numerically zero.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff: f64 = analytic.iter().zip(numeric).map(|(a, n)| (a - n).powi(2)).sum::<f64>().sqrt();
    let na: f64 = analytic.iter().map(|a| a * a).sum::<f64>().sqrt();
    let nn: f64 = numeric.iter().map(|a| a * a).sum::<f64>().sqrt();
    let scale = na.max(nn);
    if scale < 1e-12 {
        0.0
    } else {
        diff / scale
    }
}

/// Central finite-difference gradient check. Returns the worst per-tensor
/// relative error. When `coords` is `Some(k)`, only `k` random coordinates
/// per tensor are probed.
pub fn grad_check<F, R>(inputs: &[Tensor], build: F, h: f64, coords: Option<usize>, rng: &mut R) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
    R: Rng,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).unwrap();

    let mut worst: f64 = 0.0;
    for (ti, var) in vars.iter().enumerate() {
        let analytic_full = grads.get(*var).unwrap().data().to_vec();
        let len = inputs[ti].len();
        let picks: Vec<usize> = match coords {
            Some(k) if k < len => (0..k).map(|_| rng.gen_range(0..len)).collect(),
            _ => (0..len).collect(),
        };
        let mut analytic = Vec::with_capacity(picks.len());
        let mut numeric = Vec::with_capacity(picks.len());
        for &j in &picks {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[j] -= h;
            numeric.push((evaluate(&plus, &build) - evaluate(&minus, &build)) / (2.0 * h));
            analytic.push(analytic_full[j]);
        }
        worst = worst.max(relative_error(&analytic, &numeric));
    }
    worst
}

pub fn random_mask<R: Rng>(w: usize, h: usize, p: f64, rng: &mut R) -> fcnseg::SegmentationMask {
    fcnseg::SegmentationMask::from_fn(w, h, |_, _| rng.gen_bool(p))
}

/// Double-loop confusion counts and textbook formulas, in the order
/// jsi, dsc, sensitivity, specificity, mcc. Undefined indices are `None`.
pub fn brute_force_indices(pred: &fcnseg::SegmentationMask, gt: &fcnseg::SegmentationMask) -> ([u64; 4], [Option<f64>; 5]) {
    let (mut tp, mut tn, mut fp, mut fn_) = (0u64, 0u64, 0u64, 0u64);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            match (pred.get(y, x), gt.get(y, x)) {
                (true, true) => tp += 1,
                (false, false) => tn += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    let div = |a: f64, b: f64| if b == 0.0 { None } else { Some(a / b) };
    let (a, b, c, d) = (tp as f64, tn as f64, fp as f64, fn_ as f64);
    let den = (a + c) * (a + d) * (b + c) * (b + d);
    let mcc = if den == 0.0 { 0.0 } else { (a * b - c * d) / den.sqrt() };
    (
        [tp, tn, fp, fn_],
        [div(a, a + c + d), div(2.0 * a, 2.0 * a + c + d), div(a, a + d), div(b, b + c), Some(mcc)],
    )
}
