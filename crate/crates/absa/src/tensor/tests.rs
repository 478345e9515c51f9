use super::*;
use approx::assert_abs_diff_eq;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ── construction ──────────────────────────────────────────────────────────

#[test]
fn new_rejects_shape_data_mismatch() {
    let err = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0]).unwrap_err();
    assert!(matches!(err, TensorError::DataLength { expected: 4, got: 3, .. }));
}

#[test]
fn new_rejects_non_finite() {
    assert!(Tensor::new(vec![2], vec![1.0, f64::NAN]).is_err());
    assert!(Tensor::new(vec![1], vec![f64::INFINITY]).is_err());
}

// ── matmul ────────────────────────────────────────────────────────────────

#[test]
fn matmul_identity() {
    let eye = Tensor::matrix(2, 2, vec![1.0, 0.0, 0.0, 1.0]).unwrap();
    let m = Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
    assert_eq!(matmul(&eye, &m).unwrap(), m);
}

#[test]
fn matmul_one_by_one() {
    let a = Tensor::matrix(1, 1, vec![2.0]).unwrap();
    let b = Tensor::matrix(1, 1, vec![3.0]).unwrap();
    assert_eq!(matmul(&a, &b).unwrap().data(), &[6.0]);
}

#[test]
fn matmul_matches_triple_loop_oracle() {
    let mut r = rng(11);
    let a = Tensor::uniform(vec![5, 4], -1.0, 1.0, &mut r);
    let b = Tensor::uniform(vec![4, 3], -1.0, 1.0, &mut r);
    let got = matmul(&a, &b).unwrap();
    // Independent naive reference.
    for i in 0..5 {
        for j in 0..3 {
            let mut want = 0.0;
            for k in 0..4 {
                want += a.at(i, k) * b.at(k, j);
            }
            assert_abs_diff_eq!(got.at(i, j), want, epsilon = 1e-12);
        }
    }
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let a = Tensor::matrix(2, 3, vec![0.0; 6]).unwrap();
    let b = Tensor::matrix(2, 2, vec![0.0; 4]).unwrap();
    match matmul(&a, &b).unwrap_err() {
        TensorError::ShapeMismatch { left, right, .. } => {
            assert_eq!(left, vec![2, 3]);
            assert_eq!(right, vec![2, 2]);
        }
        other => panic!("unexpected error {other:?}"),
    }
}

// ── softmax ───────────────────────────────────────────────────────────────

#[test]
fn softmax_uniform_on_equal_logits() {
    let out = softmax(&Tensor::vector(vec![0.0; 4]));
    for v in out.data() {
        assert_abs_diff_eq!(*v, 0.25, epsilon = 1e-15);
    }
}

#[test]
fn softmax_one_hot_logit() {
    // softmax(1,0,0,0) = (e/(e+3), 1/(e+3), 1/(e+3), 1/(e+3))
    let out = softmax(&Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]));
    assert_abs_diff_eq!(out.data()[0], 0.4753668864186717, epsilon = 1e-15);
    for v in &out.data()[1..] {
        assert_abs_diff_eq!(*v, 0.17487770452710943, epsilon = 1e-15);
    }
}

#[test]
fn softmax_survives_large_logits() {
    let out = softmax(&Tensor::vector(vec![1000.0, 999.0, 0.0, -1000.0]));
    assert!(out.all_finite());
    assert_abs_diff_eq!(out.data().iter().sum::<f64>(), 1.0, epsilon = 1e-9);
}

proptest! {
    #[test]
    fn softmax_sums_to_one_and_positive(xs in proptest::collection::vec(-50.0f64..50.0, 1..8)) {
        let out = softmax(&Tensor::vector(xs));
        prop_assert!((out.data().iter().sum::<f64>() - 1.0).abs() < 1e-9);
        prop_assert!(out.data().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn softmax_shift_invariant(xs in proptest::collection::vec(-20.0f64..20.0, 2..8), c in -30.0f64..30.0) {
        let base = softmax(&Tensor::vector(xs.clone()));
        let shifted = softmax(&Tensor::vector(xs.iter().map(|x| x + c).collect()));
        for (a, b) in base.data().iter().zip(shifted.data()) {
            prop_assert!((a - b).abs() < 1e-12);
        }
    }
}

// ── cross entropy ─────────────────────────────────────────────────────────

#[test]
fn cross_entropy_perfect_prediction_is_zero() {
    let y = Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]);
    assert_abs_diff_eq!(cross_entropy(&y, &y).unwrap(), 0.0, epsilon = 1e-15);
}

#[test]
fn cross_entropy_uniform_is_ln4() {
    let y = Tensor::vector(vec![0.0, 0.0, 1.0, 0.0]);
    let p = Tensor::vector(vec![0.25; 4]);
    assert_abs_diff_eq!(
        cross_entropy(&y, &p).unwrap(),
        1.3862943611198906,
        epsilon = 1e-12
    );
}

#[test]
fn cross_entropy_of_derived_softmax() {
    // −ln(e/(e+3)) for the softmax(1,0,0,0) gold-index probability.
    let y = Tensor::vector(vec![1.0, 0.0, 0.0, 0.0]);
    let p = Tensor::vector(vec![
        0.4753668864186717,
        0.17487770452710943,
        0.17487770452710943,
        0.17487770452710943,
    ]);
    assert_abs_diff_eq!(
        cross_entropy(&y, &p).unwrap(),
        0.7436683806286791,
        epsilon = 1e-10
    );
}

#[test]
fn cross_entropy_clamps_zero_probability() {
    let y = Tensor::vector(vec![1.0, 0.0]);
    let p = Tensor::vector(vec![0.0, 1.0]);
    let loss = cross_entropy(&y, &p).unwrap();
    assert!(loss.is_finite());
    assert_abs_diff_eq!(loss, -LOG_CLAMP.ln(), epsilon = 1e-9);
}

// ── relu ──────────────────────────────────────────────────────────────────

#[test]
fn relu_clips_negatives() {
    let out = relu(&Tensor::vector(vec![-1.0, 0.0, 2.0]));
    assert_eq!(out.data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn relu_all_negative_is_zero() {
    let out = relu(&Tensor::vector(vec![-3.0, -0.5]));
    assert!(out.data().iter().all(|v| *v == 0.0));
}

#[test]
fn relu_subgradient_at_zero_is_zero() {
    // d/dx Σ relu(x) at x = (−1, 3): gradient (0, 1); at exactly 0 the
    // convention is 0.
    let mut tape = GradTape::new();
    let x = tape.leaf(Tensor::vector(vec![-1.0, 3.0, 0.0]));
    let r = tape.relu(x).unwrap();
    let ones = tape.constant(Tensor::vector(vec![1.0; 3]));
    let prod = tape.mul(r, ones).unwrap();
    let v0 = tape.row_sum_for_test(prod);
    let grads = tape.backward(v0).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 0.0]);
}

// ── dropout ───────────────────────────────────────────────────────────────

#[test]
fn dropout_rate_zero_is_identity() {
    let x = Tensor::vector(vec![1.0, -2.0, 3.0]);
    let mut r = rng(0);
    assert_eq!(dropout(&x, 0.0, Mode::Train, &mut r), x);
    assert_eq!(dropout(&x, 0.0, Mode::Infer, &mut r), x);
}

#[test]
fn dropout_infer_is_identity_bit_exact() {
    let mut r = rng(1);
    let x = Tensor::uniform(vec![64], -3.0, 3.0, &mut r);
    let out = dropout(&x, 0.5, Mode::Infer, &mut r);
    assert_eq!(out, x);
}

#[test]
fn dropout_train_zero_fraction_and_mean() {
    // Monte Carlo: over 10^6 entries the zeroed fraction is within 0.002 of
    // the rate and the expected output matches the input.
    let n = 1_000_000;
    let x = Tensor::from_parts(vec![n], vec![2.0; n]);
    let mut r = rng(42);
    let out = dropout(&x, 0.5, Mode::Train, &mut r);
    let zeros = out.data().iter().filter(|v| **v == 0.0).count();
    let frac = zeros as f64 / n as f64;
    assert!((frac - 0.5).abs() < 0.002, "zero fraction {frac}");
    let mean = out.data().iter().sum::<f64>() / n as f64;
    assert!((mean - 2.0).abs() < 0.02, "mean {mean}");
    // Survivors carry the inverted-dropout scale.
    assert!(out.data().iter().all(|v| *v == 0.0 || *v == 4.0));
}

// ── clipping ──────────────────────────────────────────────────────────────

#[test]
fn clip_leaves_small_gradients_unchanged() {
    let mut grads = vec![Tensor::vector(vec![3.0])];
    let norm = clip_grad_norm(&mut grads, 5.0);
    assert_abs_diff_eq!(norm, 3.0, epsilon = 1e-12);
    assert_eq!(grads[0].data(), &[3.0]);
}

#[test]
fn clip_scales_by_global_norm() {
    let mut grads = vec![Tensor::vector(vec![6.0, 8.0])];
    clip_grad_norm(&mut grads, 5.0);
    assert_abs_diff_eq!(grads[0].data()[0], 3.0, epsilon = 1e-12);
    assert_abs_diff_eq!(grads[0].data()[1], 4.0, epsilon = 1e-12);
}

proptest! {
    #[test]
    fn clip_bounds_post_norm_and_is_idempotent(
        xs in proptest::collection::vec(-100.0f64..100.0, 1..20),
        ys in proptest::collection::vec(-100.0f64..100.0, 1..20),
    ) {
        let mut grads = vec![Tensor::vector(xs), Tensor::vector(ys)];
        clip_grad_norm(&mut grads, 5.0);
        let after: f64 = grads.iter().map(|g| g.data().iter().map(|v| v * v).sum::<f64>()).sum::<f64>().sqrt();
        prop_assert!(after <= 5.0 + 1e-9);
        let once = grads.clone();
        clip_grad_norm(&mut grads, 5.0);
        for (a, b) in once.iter().zip(&grads) {
            for (x, y) in a.data().iter().zip(b.data()) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }
    }
}

// ── sgd ───────────────────────────────────────────────────────────────────

#[test]
fn sgd_zero_gradient_is_identity() {
    let p = Tensor::scalar(1.0);
    let g = Tensor::scalar(0.0);
    assert_eq!(sgd_step(&p, &g, 0.3).unwrap().data(), &[1.0]);
}

#[test]
fn sgd_step_arithmetic() {
    let p = Tensor::scalar(1.0);
    let g = Tensor::scalar(2.0);
    assert_abs_diff_eq!(sgd_step(&p, &g, 0.01).unwrap().data()[0], 0.98, epsilon = 1e-15);
}

#[test]
fn sgd_descends_a_quadratic() {
    // f(w) = (w−3)², curvature 2: any lr < 1 descends monotonically.
    let mut w = Tensor::scalar(10.0);
    let mut prev = f64::INFINITY;
    for _ in 0..50 {
        let loss = (w.data()[0] - 3.0).powi(2);
        assert!(loss < prev);
        prev = loss;
        let grad = Tensor::scalar(2.0 * (w.data()[0] - 3.0));
        w = sgd_step(&w, &grad, 0.1).unwrap();
    }
    assert!(prev < 1e-3);
}

#[test]
fn sgd_shape_mismatch_errors() {
    let p = Tensor::vector(vec![1.0, 2.0]);
    let g = Tensor::vector(vec![1.0]);
    assert!(matches!(
        sgd_step(&p, &g, 0.1).unwrap_err(),
        TensorError::ShapeMismatch { .. }
    ));
}

// ── finite differences ────────────────────────────────────────────────────

#[test]
fn finite_diff_on_square() {
    let params = [Tensor::scalar(3.0)];
    let grads = finite_diff_gradient(|p| p[0].data()[0].powi(2), &params, 1e-5).unwrap();
    assert_abs_diff_eq!(grads[0].data()[0], 6.0, epsilon = 1e-8);
}

#[test]
fn finite_diff_on_linear_is_exact() {
    let params = [Tensor::vector(vec![0.5, -2.0, 7.0])];
    let grads =
        finite_diff_gradient(|p| 2.0 * p[0].data()[0] - 3.0 * p[0].data()[1], &params, 1e-5)
            .unwrap();
    assert_abs_diff_eq!(grads[0].data()[0], 2.0, epsilon = 1e-9);
    assert_abs_diff_eq!(grads[0].data()[1], -3.0, epsilon = 1e-9);
    assert_abs_diff_eq!(grads[0].data()[2], 0.0, epsilon = 1e-9);
}

#[test]
fn finite_diff_propagates_non_finite() {
    let params = [Tensor::scalar(0.0)];
    let err = finite_diff_gradient(|p| 1.0 / p[0].data()[0], &params, 1e-5);
    assert!(err.is_ok()); // 1/±ε is finite
    let err = finite_diff_gradient(|_| f64::NAN, &params, 1e-5).unwrap_err();
    assert!(matches!(err, TensorError::NonFinite { .. }));
}

// ── tape backward vs finite differences per op ────────────────────────────

/// Relative error with both-near-zero treated as exact agreement.
fn rel_err(a: f64, n: f64) -> f64 {
    let denom = a.abs().max(n.abs());
    if denom < 1e-8 {
        0.0
    } else {
        (a - n).abs() / denom
    }
}

/// Checks analytic tape gradients of `build` (a scalar function of one
/// parameter tensor) against central differences.
fn check_op_gradient<F>(param: Tensor, build: F)
where
    F: Fn(&mut GradTape, Var) -> Var,
{
    let mut tape = GradTape::new();
    let p = tape.leaf(param.clone());
    let loss = build(&mut tape, p);
    let grads = tape.backward(loss).unwrap();
    let analytic = grads.get(p).unwrap().clone();

    let numeric = finite_diff_gradient(
        |ps| {
            let mut t = GradTape::new();
            let v = t.leaf(ps[0].clone());
            let l = build(&mut t, v);
            t.value(l).item().unwrap()
        },
        &[param],
        1e-5,
    )
    .unwrap();

    for (a, n) in analytic.data().iter().zip(numeric[0].data()) {
        assert!(
            rel_err(*a, *n) < 1e-6,
            "analytic {a} vs numeric {n} (rel {})",
            rel_err(*a, *n)
        );
    }
}

impl GradTape {
    /// Test-only reduction of a 1-d vector to a scalar by summation.
    fn row_sum_for_test(&mut self, v: Var) -> Var {
        let len = self.value(v).len();
        let m = self.constant(Tensor::from_parts(vec![1, len], vec![1.0; len]));
        self.matvec(m, v).unwrap()
    }
}

#[test]
fn tape_gradients_match_finite_differences_per_op() {
    let mut r = rng(7);
    let weights = Tensor::uniform(vec![3, 4], -1.0, 1.0, &mut r);
    let mat = Tensor::uniform(vec![4, 5], -1.0, 1.0, &mut r);
    let vec4 = Tensor::uniform(vec![4], -1.0, 1.0, &mut r);

    // matmul → relu → col_max → sum
    let w = weights.clone();
    check_op_gradient(mat.clone(), move |t, p| {
        let a = t.constant(w.clone());
        let c = t.matmul(a, p).unwrap();
        let rl = t.relu(c).unwrap();
        let m = t.col_max(rl).unwrap();
        t.row_sum_for_test(m)
    });

    // matvec → sigmoid ⊙ tanh → sum
    let w2 = weights.clone();
    check_op_gradient(vec4.clone(), move |t, p| {
        let a = t.constant(w2.clone());
        let y = t.matvec(a, p).unwrap();
        let s = t.sigmoid(y).unwrap();
        let th = t.tanh(y).unwrap();
        let prod = t.mul(s, th).unwrap();
        t.row_sum_for_test(prod)
    });

    // unfold → matmul → add_row → softmax/cross-entropy
    let filt = Tensor::uniform(vec![8, 4], -0.7, 0.7, &mut r);
    let bias = Tensor::uniform(vec![4], -0.2, 0.2, &mut r);
    let emb = Tensor::uniform(vec![5, 4], -1.0, 1.0, &mut r);
    let gold = Tensor::vector(vec![0.0, 1.0, 0.0, 0.0]);
    check_op_gradient(emb, move |t, p| {
        let f = t.constant(filt.clone());
        let b = t.constant(bias.clone());
        let windows = t.unfold(p, 2).unwrap();
        let conv = t.matmul(windows, f).unwrap();
        let conv = t.add_row(conv, b).unwrap();
        let act = t.relu(conv).unwrap();
        let pooled = t.col_max(act).unwrap();
        let sm = t.softmax(pooled).unwrap();
        t.cross_entropy(gold.clone(), sm).unwrap()
    });

    // row + concat + add + sum_scalars
    let emb2 = Tensor::uniform(vec![3, 2], -1.0, 1.0, &mut r);
    check_op_gradient(emb2, |t, p| {
        let r0 = t.row(p, 0).unwrap();
        let r2 = t.row(p, 2).unwrap();
        let both = t.concat(&[r0, r2]).unwrap();
        let doubled = t.add(both, both).unwrap();
        let s1 = t.row_sum_for_test(doubled);
        let s2 = t.row_sum_for_test(both);
        t.sum_scalars(&[s1, s2]).unwrap()
    });
}

#[test]
fn unfold_position_counts_match_shape_arithmetic() {
    // A length-10 input yields 8, 7 and 6 window positions for widths
    // 3, 4 and 5.
    let mut tape = GradTape::new();
    let x = tape.constant(Tensor::from_parts(vec![10, 2], (0..20).map(f64::from).collect()));
    for (width, positions) in [(3usize, 8usize), (4, 7), (5, 6)] {
        let u = tape.unfold(x, width).unwrap();
        assert_eq!(tape.value(u).shape(), &[positions, width * 2]);
    }
    // Window rows are the flattened input rows.
    let u = tape.unfold(x, 3).unwrap();
    assert_eq!(tape.value(u).row(4), &[8.0, 9.0, 10.0, 11.0, 12.0, 13.0]);
}

#[test]
fn tape_dropout_train_scales_and_infer_is_identity() {
    let x = Tensor::vector(vec![1.0, 2.0, 3.0, 4.0]);
    let mut r = rng(5);
    let mut tape = GradTape::new();
    let v = tape.leaf(x.clone());
    let kept = tape.dropout(v, 0.5, Mode::Infer, &mut r).unwrap();
    assert_eq!(kept, v); // no node recorded, bit-exact identity
    let dropped = tape.dropout(v, 0.5, Mode::Train, &mut r).unwrap();
    for (orig, out) in x.data().iter().zip(tape.value(dropped).data()) {
        assert!(*out == 0.0 || *out == orig * 2.0);
    }
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut tape = GradTape::new();
    let v = tape.leaf(Tensor::vector(vec![1.0, 2.0]));
    assert!(matches!(
        tape.backward(v).unwrap_err(),
        TensorError::NotScalar { .. }
    ));
}

#[test]
fn backward_skips_untouched_leaves() {
    let mut tape = GradTape::new();
    let a = tape.leaf(Tensor::scalar(2.0));
    let unused = tape.leaf(Tensor::scalar(5.0));
    let b = tape.leaf(Tensor::scalar(3.0));
    let prod = tape.mul(a, b).unwrap();
    let grads = tape.backward(prod).unwrap();
    assert_eq!(grads.get(a).unwrap().data(), &[3.0]);
    assert_eq!(grads.get(b).unwrap().data(), &[2.0]);
    assert!(grads.get(unused).is_none());
}
