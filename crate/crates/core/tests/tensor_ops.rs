mod common;

use common::{grad_check, naive_conv2d, naive_max_pool};
use fcnseg::tensor::bilinear_kernel;
use fcnseg::{Error, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

#[test]
fn conv2d_hand_example() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]));
    let w = tape.constant(Tensor::ones(&[1, 1, 2, 2]));
    let b = tape.constant(Tensor::zeros(&[1]));
    let y = tape.conv2d(x, w, Some(b), 1, 0).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 2, 2]);
    assert_eq!(tape.value(y).data(), &[12., 16., 24., 28.]);
}

#[test]
fn conv2d_identity_kernel_selects_channel() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let input = Tensor::randn(&[2, 3, 5, 4], 1.0, &mut rng);
    for c in 0..3 {
        let mut w = Tensor::zeros(&[1, 3, 1, 1]);
        w.data_mut()[c] = 1.0;
        let mut tape = Tape::new();
        let x = tape.constant(input.clone());
        let wv = tape.constant(w);
        let y = tape.conv2d(x, wv, None, 1, 0).unwrap();
        for n in 0..2 {
            let plane = 5 * 4;
            let got = &tape.value(y).data()[n * plane..][..plane];
            let want = &input.data()[(n * 3 + c) * plane..][..plane];
            assert_eq!(got, want);
        }
    }
}

#[test]
fn conv2d_matches_loop_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for (stride, pad) in [(1, 0), (1, 1), (2, 1), (2, 0), (3, 2)] {
        let x = Tensor::randn(&[1, 2, 5, 5], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng);
        let b = Tensor::randn(&[3], 1.0, &mut rng);
        let mut tape = Tape::new();
        let (xv, wv, bv) = (tape.constant(x.clone()), tape.constant(w.clone()), tape.constant(b.clone()));
        let y = tape.conv2d(xv, wv, Some(bv), stride, pad).unwrap();
        let want = naive_conv2d(&x, &w, b.data(), stride, pad);
        assert_eq!(tape.value(y).shape(), want.shape());
        for (a, e) in tape.value(y).data().iter().zip(want.data()) {
            assert!((a - e).abs() <= 1e-12, "stride {stride} pad {pad}: {a} vs {e}");
        }
    }
}

#[test]
fn conv2d_rejects_channel_mismatch() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 2, 4, 4]));
    let w = tape.constant(Tensor::zeros(&[1, 3, 3, 3]));
    let err = tape.conv2d(x, w, None, 1, 0).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }));
    assert!(err.to_string().contains("2 channels"), "{err}");
}

#[test]
fn conv2d_rejects_oversized_kernel() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 2, 2]));
    let w = tape.constant(Tensor::zeros(&[1, 1, 5, 5]));
    assert!(tape.conv2d(x, w, None, 1, 1).is_err());
    assert!(tape.conv2d(x, w, None, 1, 2).is_ok());
}

#[test]
fn max_pool_hand_example() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 4, 4], &(1..=16).map(f64::from).collect::<Vec<_>>()));
    let y = tape.max_pool2d(x, 2, 2).unwrap();
    assert_eq!(tape.value(y).data(), &[6., 8., 14., 16.]);
}

#[test]
fn max_pool_constant_input() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::full(&[1, 2, 6, 6], 3.5));
    let y = tape.max_pool2d(x, 2, 2).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 3.5));
}

#[test]
fn max_pool_matches_window_scan() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for (k, s) in [(2, 2), (3, 1), (3, 2)] {
        let x = Tensor::randn(&[2, 3, 6, 6], 1.0, &mut rng);
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone());
        let y = tape.max_pool2d(xv, k, s).unwrap();
        assert_eq!(tape.value(y), &naive_max_pool(&x, k, s));
    }
}

#[test]
fn max_pool_rejects_zero_window_or_stride() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 1, 4, 4]));
    assert!(matches!(tape.max_pool2d(x, 0, 2), Err(Error::InvalidArgument(_))));
    assert!(matches!(tape.max_pool2d(x, 2, 0), Err(Error::InvalidArgument(_))));
    assert!(tape.max_pool2d(x, 5, 1).is_err());
}

#[test]
fn max_pool_tie_routes_gradient_to_first_occurrence() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::full(&[1, 1, 2, 2], 1.0));
    let y = tape.max_pool2d(x, 2, 2).unwrap();
    let loss = tape.sum(y);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(x).unwrap().data(), &[1., 0., 0., 0.]);
}

#[test]
fn transposed_conv_bilinear_impulse() {
    let v = 2.5;
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, 1, 1], &[v]));
    let w = tape.constant(bilinear_kernel(1, 4));
    let y = tape.transposed_conv2d(x, w, 2).unwrap();
    assert_eq!(tape.value(y).shape(), &[1, 1, 4, 4]);
    let taps = [0.25, 0.75, 0.75, 0.25];
    for r in 0..4 {
        for c in 0..4 {
            assert_eq!(tape.value(y).data()[r * 4 + c], v * taps[r] * taps[c]);
        }
    }
}

#[test]
fn transposed_conv_output_size_and_zero_input() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[2, 3, 5, 4]));
    let w = tape.constant(Tensor::randn(&[3, 2, 4, 4], 1.0, &mut rng));
    let y = tape.transposed_conv2d(x, w, 2).unwrap();
    assert_eq!(tape.value(y).shape(), &[2, 2, 4 * 2 + 4, 3 * 2 + 4]);
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));
    assert!(matches!(tape.transposed_conv2d(x, w, 0), Err(Error::InvalidArgument(_))));
}

#[test]
fn bilinear_upsampling_interpolates_linear_ramp_in_interior() {
    // A linear ramp upsampled by a bilinear kernel stays linear away from the
    // borders, which is what makes the seed an interpolator.
    let f = 4;
    let k = 2 * f;
    let n = 6;
    let ramp: Vec<f64> = (0..n * n).map(|i| (i % n) as f64).collect();
    let mut tape = Tape::new();
    let x = tape.constant(t(&[1, 1, n, n], &ramp));
    let w = tape.constant(bilinear_kernel(1, k));
    let y = tape.transposed_conv2d(x, w, f).unwrap();
    let out = tape.value(y);
    let ow = out.shape()[3];
    let row = 2 * f + 3;
    let vals: Vec<f64> = (k..ow - k).map(|c| out.data()[row * ow + c]).collect();
    for pair in vals.windows(2) {
        assert!((pair[1] - pair[0] - 1.0 / f as f64).abs() < 1e-12);
    }
}

#[test]
fn conv_and_transposed_conv_are_adjoint() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for trial in 0..20 {
        let stride = 1 + trial % 3;
        let (k, cin, cout) = (2 + trial % 3, 1 + trial % 2, 1 + trial % 3);
        let oh = 3 + trial % 2;
        let h = (oh - 1) * stride + k;
        let x = Tensor::randn(&[2, cin, h, h], 1.0, &mut rng);
        let y = Tensor::randn(&[2, cout, oh, oh], 1.0, &mut rng);
        let w = Tensor::randn(&[cout, cin, k, k], 1.0, &mut rng);
        let mut tape = Tape::new();
        let (xv, yv, wv) = (tape.constant(x.clone()), tape.constant(y.clone()), tape.constant(w));
        let cx = tape.conv2d(xv, wv, None, stride, 0).unwrap();
        let ty = tape.transposed_conv2d(yv, wv, stride).unwrap();
        let lhs = tape.value(cx).dot(&y);
        let rhs = x.dot(tape.value(ty));
        assert!((lhs - rhs).abs() <= 1e-10 * lhs.abs().max(1.0), "trial {trial}: {lhs} vs {rhs}");
    }
}

#[test]
fn cross_entropy_closed_forms() {
    let mut tape = Tape::new();
    let l = tape.constant(t(&[1, 2, 1, 1], &[0.0, 0.0]));
    let loss = tape.softmax_cross_entropy(l, &[0]).unwrap();
    assert!((tape.value(loss).item().unwrap() - std::f64::consts::LN_2).abs() < 1e-15);

    let l = tape.constant(t(&[1, 2, 1, 1], &[100.0, 0.0]));
    let loss = tape.softmax_cross_entropy(l, &[0]).unwrap();
    assert!(tape.value(loss).item().unwrap() < 1e-10);

    // Max subtraction keeps huge logits finite.
    let l = tape.constant(t(&[1, 2, 1, 1], &[1e4, -1e4]));
    let loss = tape.softmax_cross_entropy(l, &[1]).unwrap();
    assert!((tape.value(loss).item().unwrap() - 2e4).abs() < 1e-9);
}

#[test]
fn cross_entropy_rejects_out_of_range_label() {
    let mut tape = Tape::new();
    let l = tape.constant(Tensor::zeros(&[1, 2, 1, 2]));
    assert!(matches!(tape.softmax_cross_entropy(l, &[0, 2]), Err(Error::InvalidArgument(_))));
    assert!(tape.softmax_cross_entropy(l, &[0]).is_err());
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for trial in 0..20 {
        let logits = Tensor::randn(&[1, 2, 3, 3], 2.0, &mut rng);
        let labels: Vec<u8> = (0..9).map(|i| ((i + trial) % 2) as u8).collect();
        let err = grad_check(
            &[logits],
            |tape, v| tape.softmax_cross_entropy(v[0], &labels).unwrap(),
            1e-5,
            None,
            &mut rng,
        );
        assert!(err <= 1e-6, "trial {trial}: relative error {err}");
    }
}

#[test]
fn cross_entropy_gradient_is_softmax_minus_onehot_over_count() {
    let mut tape = Tape::new();
    let l = tape.param(t(&[1, 2, 1, 2], &[0.0, 1.0, 0.0, -1.0]));
    let loss = tape.softmax_cross_entropy(l, &[0, 1]).unwrap();
    let g = tape.backward(loss).unwrap();
    let s = |a: f64, b: f64| a.exp() / (a.exp() + b.exp());
    // pixel 0: logits (0, 0), label 0 ; pixel 1: logits (1, -1), label 1
    let want = [(s(0., 0.) - 1.0) / 2.0, (s(1., -1.)) / 2.0, s(0., 0.) / 2.0, (s(-1., 1.) - 1.0) / 2.0];
    for (a, b) in g.get(l).unwrap().data().iter().zip(want) {
        assert!((a - b).abs() < 1e-15);
    }
}

#[test]
fn backward_of_sum_is_all_ones() {
    let mut tape = Tape::new();
    let w = tape.param(Tensor::full(&[2, 3], 0.3));
    let loss = tape.sum(w);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(w).unwrap(), &Tensor::ones(&[2, 3]));
    assert_eq!(g.get(loss).unwrap().item(), Some(1.0));
}

#[test]
fn backward_leaves_disconnected_parameters_at_zero() {
    let mut tape = Tape::new();
    let used = tape.param(Tensor::full(&[3], 2.0));
    let unused = tape.param(Tensor::full(&[4], 5.0));
    let loss = tape.sum(used);
    let g = tape.backward(loss).unwrap();
    assert_eq!(g.get(unused).unwrap(), &Tensor::zeros(&[4]));
    let constant = tape.constant(Tensor::ones(&[1]));
    assert!(g.get(constant).is_none());
}

#[test]
fn backward_rejects_non_scalar() {
    let mut tape = Tape::new();
    let w = tape.param(Tensor::ones(&[2]));
    let r = tape.relu(w);
    assert!(matches!(tape.backward(r), Err(Error::Shape { .. })));
}

#[test]
fn conv_relu_pool_chain_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for trial in 0..20 {
        let x = Tensor::randn(&[1, 2, 6, 6], 1.0, &mut rng);
        let w = Tensor::randn(&[3, 2, 3, 3], 0.5, &mut rng);
        let b = Tensor::randn(&[3], 0.1, &mut rng);
        let r = Tensor::randn(&[1, 3, 3, 3], 1.0, &mut rng);
        let err = grad_check(
            &[x, w, b],
            |tape, v| {
                let c = tape.conv2d(v[0], v[1], Some(v[2]), 1, 1).unwrap();
                let a = tape.relu(c);
                let p = tape.max_pool2d(a, 2, 2).unwrap();
                tape.weighted_sum(p, &r).unwrap()
            },
            1e-5,
            None,
            &mut rng,
        );
        assert!(err <= 1e-4, "trial {trial}: relative error {err}");
    }
}

#[test]
fn operations_do_not_mutate_inputs() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x0 = Tensor::randn(&[1, 2, 6, 6], 1.0, &mut rng);
    let w0 = Tensor::randn(&[2, 2, 3, 3], 1.0, &mut rng);
    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let w = tape.param(w0.clone());
    let c = tape.conv2d(x, w, None, 1, 1).unwrap();
    let r = tape.relu(c);
    let p = tape.max_pool2d(r, 2, 2).unwrap();
    let u = tape.transposed_conv2d(p, w, 2).unwrap();
    let cr = tape.center_crop(u, 6, 6).unwrap();
    let s = tape.add(cr, x).unwrap();
    let loss = tape.sum(s);
    tape.backward(loss).unwrap();
    assert_eq!(tape.value(x), &x0);
    assert_eq!(tape.value(w), &w0);
}

#[test]
fn forward_and_backward_are_bit_deterministic() {
    let run = || {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut tape = Tape::new();
        let x = tape.param(Tensor::randn(&[2, 2, 8, 8], 1.0, &mut rng));
        let w = tape.param(Tensor::randn(&[3, 2, 3, 3], 1.0, &mut rng));
        let c = tape.conv2d(x, w, None, 1, 1).unwrap();
        let p = tape.max_pool2d(c, 2, 2).unwrap();
        let labels: Vec<u8> = (0..2 * 4 * 4).map(|i| (i % 3) as u8).collect();
        let loss = tape.softmax_cross_entropy(p, &labels).unwrap();
        let g = tape.backward(loss).unwrap();
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        (tape.value(loss).item().unwrap().to_bits(), bits(g.get(x).unwrap()), bits(g.get(w).unwrap()))
    };
    assert_eq!(run(), run());
}

#[test]
fn dense_and_flatten_match_matrix_product() {
    let mut tape = Tape::new();
    let x = tape.constant(t(&[2, 1, 1, 3], &[1., 2., 3., 4., 5., 6.]));
    let f = tape.flatten(x).unwrap();
    let w = tape.constant(t(&[2, 3], &[1., 0., -1., 0.5, 0.5, 0.5]));
    let b = tape.constant(t(&[2], &[10., 20.]));
    let y = tape.dense(f, w, Some(b)).unwrap();
    assert_eq!(tape.value(y).data(), &[8., 23., 8., 27.5]);
}
