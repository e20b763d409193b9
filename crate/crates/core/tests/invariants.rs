mod common;

use common::*;
use ebn::norm::{compute_stats, normalize_eval, normalize_train, NormKind, StdCenter};
use ebn::{NormParams, RunningState, Shape4, Tensor4};
use proptest::prelude::*;
use rand::Rng;

fn per_set_moments(y: &Tensor4, member: impl Fn([usize; 4]) -> usize, sets: usize) -> Vec<(f64, f64)> {
    let mut acc = vec![(0.0, 0.0, 0usize); sets];
    for i in all_indices(y.shape()) {
        let e = &mut acc[member(i)];
        e.0 += y.get(i);
        e.1 += y.get(i) * y.get(i);
        e.2 += 1;
    }
    acc.into_iter()
        .map(|(s, sq, n)| {
            let m = s / n as f64;
            (m, sq / n as f64 - m * m)
        })
        .collect()
}

#[test]
fn standardization_per_kind() {
    let shape = Shape4::new(4, 6, 2, 3);
    let x = random_tensor(&mut rng(1), shape).map(|v| 3.0 * v + 1.5);
    let eps = 1e-5;
    let params = NormParams::new(6);

    let (y, _) = normalize_train(&x, NormKind::Batch, &params, eps).unwrap();
    for (m, v) in per_set_moments(&y, |i| i[1], 6) {
        assert!(m.abs() < 1e-10);
        assert!((v - 1.0).abs() < 1e-5, "{v}");
    }

    let (y, _) = normalize_train(&x, NormKind::extended(), &params, eps).unwrap();
    let channel = per_set_moments(&y, |i| i[1], 6);
    assert!(channel.iter().all(|(m, _)| m.abs() < 1e-10));
    let pooled = per_set_moments(&y, |_| 0, 1)[0].1;
    assert!((pooled - 1.0).abs() < 1e-5, "{pooled}");

    let (y, _) = normalize_train(&x, NormKind::Layer, &params, eps).unwrap();
    for (m, v) in per_set_moments(&y, |i| i[0], 4) {
        assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-5);
    }
    let (y, _) = normalize_train(&x, NormKind::Instance, &params, eps).unwrap();
    for (m, v) in per_set_moments(&y, |i| i[0] * 6 + i[1], 24) {
        assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-4);
    }
    let (y, _) = normalize_train(&x, NormKind::Group { groups: 3 }, &params, eps).unwrap();
    for (m, v) in per_set_moments(&y, |i| i[0] * 3 + i[1] / 2, 12) {
        assert!(m.abs() < 1e-10 && (v - 1.0).abs() < 1e-5);
    }
}

fn arb_shape() -> impl Strategy<Value = Shape4> {
    (1usize..=4, 1usize..=3, 1usize..=3, 1usize..=3).prop_map(|(n, c2, h, w)| Shape4::new(n, 2 * c2, h, w))
}

fn kinds(c: usize) -> Vec<NormKind> {
    let mut k = kinds_for(c);
    k.push(NormKind::Group { groups: c });
    k
}

fn min_variance(x: &Tensor4, kind: NormKind) -> f64 {
    compute_stats(x, kind, 0.0).unwrap().variance.iter().cloned().fold(f64::INFINITY, f64::min)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn positive_scale_invariance(shape in arb_shape(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, shape);
        let params = NormParams::from_vecs(
            (0..shape.c).map(|_| r.random_range(0.5..2.0)).collect(),
            (0..shape.c).map(|_| r.random_range(-1.0..1.0)).collect(),
        ).unwrap();
        for kind in kinds(shape.c) {
            // sets with (almost) no spread carry no scale to be invariant to
            let var = min_variance(&x, kind);
            if var < 1e-6 {
                continue;
            }
            for alpha in [0.5, 3.0, 100.0] {
                let xs = x.map(|v| alpha * v);
                let (y0, _) = normalize_train(&x, kind, &params, 0.0).unwrap();
                let (y1, _) = normalize_train(&xs, kind, &params, 0.0).unwrap();
                prop_assert!(y0.max_abs_diff(&y1).unwrap() < 1e-9, "{} alpha {}", kind, alpha);
                // with eps the claim only holds while both variances dominate eps
                if f64::min(1.0, alpha * alpha) * var < 1e-2 {
                    continue;
                }
                let (y0, _) = normalize_train(&x, kind, &params, 1e-5).unwrap();
                let (y1, _) = normalize_train(&xs, kind, &params, 1e-5).unwrap();
                prop_assert!(y0.max_abs_diff(&y1).unwrap() <= 1e-3, "{} alpha {} eps", kind, alpha);
            }
        }
    }

    #[test]
    fn ebn_per_channel_shift_invariance(shape in arb_shape(), seed in any::<u64>()) {
        prop_assume!(shape.n * shape.spatial() > 1);
        let mut r = rng(seed);
        let x = random_tensor(&mut r, shape);
        let shifts: Vec<f64> = (0..shape.c).map(|_| r.random_range(-5.0..5.0)).collect();
        let shifted = Tensor4::from_fn(shape, |i| x.get(i) + shifts[i[1]]);
        let params = NormParams::new(shape.c);

        let kind = NormKind::extended();
        let (_, a) = normalize_train(&x, kind, &params, 0.0).unwrap();
        let (_, b) = normalize_train(&shifted, kind, &params, 0.0).unwrap();
        prop_assert!(a.xhat.max_abs_diff(&b.xhat).unwrap() < 1e-9);

        // centering on the grand mean makes the pooled std depend on the shifts
        let kind = NormKind::Extended { std_center: StdCenter::Global };
        let (_, a) = normalize_train(&x, kind, &params, 0.0).unwrap();
        let (_, b) = normalize_train(&shifted, kind, &params, 0.0).unwrap();
        let spread = shifts.iter().cloned().fold(f64::MIN, f64::max) - shifts.iter().cloned().fold(f64::MAX, f64::min);
        if spread > 1.0 {
            prop_assert!(a.xhat.max_abs_diff(&b.xhat).unwrap() > 1e-3);
        }
    }

    #[test]
    fn reductions_to_known_kinds(shape in arb_shape(), seed in any::<u64>()) {
        let mut r = rng(seed);
        let x = random_tensor(&mut r, shape);
        let params = NormParams::from_vecs(
            (0..shape.c).map(|_| r.random_range(0.5..2.0)).collect(),
            (0..shape.c).map(|_| r.random_range(-1.0..1.0)).collect(),
        ).unwrap();
        let eps = 1e-5;
        let run = |x: &Tensor4, k| normalize_train(x, k, &params, eps).unwrap().0;

        let gn1 = run(&x, NormKind::Group { groups: 1 });
        prop_assert!(gn1.max_abs_diff(&run(&x, NormKind::Layer)).unwrap() < 1e-12);
        let gnc = run(&x, NormKind::Group { groups: shape.c });
        prop_assert!(gnc.max_abs_diff(&run(&x, NormKind::Instance)).unwrap() < 1e-12);

        let single = x.slice_batch(0, 1).unwrap();
        let bn = run(&single, NormKind::Batch);
        prop_assert!(bn.max_abs_diff(&run(&single, NormKind::Instance)).unwrap() < 1e-12);
    }
}

#[test]
fn bn_loss_ignores_uniform_in_set_shift() {
    // L depends on x only through x̂, and BN's x̂ absorbs a per-channel shift.
    let shape = Shape4::new(3, 4, 2, 2);
    let mut r = rng(9);
    let x = random_tensor(&mut r, shape);
    let weights = random_tensor(&mut r, shape);
    let loss = |x: &Tensor4| {
        let (_, cache) = normalize_train(x, NormKind::Batch, &NormParams::new(4), 0.0).unwrap();
        cache.xhat.data().iter().zip(weights.data()).map(|(a, b)| a * b).sum::<f64>()
    };
    let base = loss(&x);
    for c in 0..4 {
        let shifted = Tensor4::from_fn(shape, |i| x.get(i) + if i[1] == c { 0.75 } else { 0.0 });
        assert!((loss(&shifted) - base).abs() < 1e-12);
    }
}

fn trained_state(kind: NormKind, r: &mut rand_chacha::ChaCha8Rng, channels: usize) -> RunningState {
    let mut state = RunningState::new(kind, channels, 0.1).unwrap();
    for _ in 0..5 {
        let batch = random_tensor(r, Shape4::new(8, channels, 1, 1)).map(|v| 2.0 * v + 0.3);
        state.update(&compute_stats(&batch, kind, 1e-5).unwrap()).unwrap();
    }
    state
}

#[test]
fn eval_is_pure_and_batch_independent() {
    let mut r = rng(4);
    for kind in [NormKind::Batch, NormKind::extended()] {
        let state = trained_state(kind, &mut r, 5);
        let before = state.clone();
        let params = NormParams::from_vecs(vec![1.5, 0.5, 2.0, 1.0, 0.7], vec![0.1, -0.2, 0.0, 0.3, 1.0]).unwrap();
        let batch = random_tensor(&mut r, Shape4::nc(7, 5));
        let together = normalize_eval(&batch, &state, &params).unwrap();
        for n in 0..7 {
            let alone = normalize_eval(&batch.slice_batch(n, n + 1).unwrap(), &state, &params).unwrap();
            assert_eq!(alone.data(), together.slice_batch(n, n + 1).unwrap().data());
        }
        // a different batch around the same sample
        let other = random_tensor(&mut r, Shape4::nc(3, 5));
        let mixed = Tensor4::from_vec(
            Shape4::nc(4, 5),
            [other.data(), &batch.data()[..5]].concat(),
        )
        .unwrap();
        let y = normalize_eval(&mixed, &state, &params).unwrap();
        assert_eq!(&y.data()[15..], &together.data()[..5]);
        assert_eq!(state, before);
    }
}
