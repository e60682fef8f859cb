use proptest::prelude::*;

use maskpos_core::analytic::{layer2_inner, layer2_inner_nores, Alpha, PositionIndex};
use maskpos_core::matrix::{dot, norm, Matrix};
use maskpos_core::simulation::{
    apply_rope, decoder_layer, forward_trace, l2_normalize, layer_norm, masked_softmax,
    normalized_gram, rotated_inner, sample_inputs, LayerSpec, Mask,
};

/// Rows `√α·e_0 + √(1-α)·e_{i+1}`: unit norm with pairwise inner products exactly α.
fn exact_inputs(n: usize, d: usize, a: f64) -> Matrix {
    assert!(d > n);
    Matrix::from_fn(n, d, |i, j| {
        if j == 0 {
            a.sqrt()
        } else if j == i + 1 {
            (1.0 - a).sqrt()
        } else {
            0.0
        }
    })
}

fn pos(i: usize) -> PositionIndex {
    PositionIndex::from_zero_based(i)
}

#[test]
fn orthonormal_inputs_reproduce_layer2_closed_form() {
    let x = Matrix::from_fn(16, 64, |i, j| if i == j { 1.0 } else { 0.0 });
    let (hidden, _) = decoder_layer(&x, &LayerSpec::default()).unwrap();
    let gram = normalized_gram(&hidden).unwrap();
    for i in 0..16 {
        for j in 0..16 {
            let expect = layer2_inner(pos(i), pos(j), Alpha::ZERO);
            assert!((gram[(i, j)] - expect).abs() < 1e-10, "({i}, {j})");
        }
    }
}

#[test]
fn exactly_correlated_inputs_reproduce_closed_forms() {
    for a in [0.2, 0.5, 0.9] {
        let alpha = Alpha::new(a).unwrap();
        let x = exact_inputs(12, 32, a);
        for residual in [true, false] {
            let spec = LayerSpec {
                residual,
                ..LayerSpec::default()
            };
            let traces = forward_trace(&x, &spec, 2).unwrap();
            let gram = &traces[1].gram;
            for i in 0..12 {
                for j in 0..12 {
                    let expect = if residual {
                        layer2_inner(pos(i), pos(j), alpha)
                    } else {
                        layer2_inner_nores(pos(i), pos(j), alpha)
                    };
                    assert!((gram[(i, j)] - expect).abs() < 1e-10, "a={a} res={residual} ({i}, {j})");
                }
            }
        }
    }
}

#[test]
fn sampler_expectations() {
    let trials = 10_000;
    let mut zero = 0.0;
    let mut shared = 0.0;
    for seed in 0..trials {
        let x = sample_inputs(2, 64, Alpha::ZERO, seed).unwrap();
        zero += dot(x.row(0), x.row(1));
        let x = sample_inputs(4, 64, Alpha::new(0.2).unwrap(), seed).unwrap();
        let mut s = 0.0;
        for i in 0..4 {
            for j in 0..i {
                s += dot(x.row(i), x.row(j));
            }
        }
        shared += s / 6.0;
    }
    let zero = zero / trials as f64;
    let shared = shared / trials as f64;
    assert!(zero.abs() < 0.005, "α=0 mean inner product {zero}");
    assert!((shared - 0.2).abs() < 0.02, "α=0.2 mean inner product {shared}");
}

fn matrix_strategy(rows: std::ops::RangeInclusive<usize>, cols: std::ops::RangeInclusive<usize>) -> impl Strategy<Value = Matrix> {
    (rows, cols).prop_flat_map(|(r, c)| {
        prop::collection::vec(-3.0f64..3.0, r * c)
            .prop_map(move |data| Matrix::from_vec(r, c, data).unwrap())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn softmax_rows_are_stochastic(logits in matrix_strategy(1..=12, 1..=1).prop_flat_map(|m| {
        let n = m.rows();
        prop::collection::vec(-40.0f64..40.0, n * n).prop_map(move |v| Matrix::from_vec(n, n, v).unwrap())
    }), causal in any::<bool>()) {
        let mask = if causal { Mask::Causal } else { Mask::None };
        let a = masked_softmax(&logits, mask);
        prop_assert!(a.entries.is_finite());
        for i in 0..a.n() {
            let row = a.entries.row(i);
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-10);
            if causal {
                prop_assert!(row[i + 1..].iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn l2_normalize_is_idempotent(x in matrix_strategy(1..=8, 2..=16)) {
        prop_assume!(x.row_iter().all(|r| norm(r) > 1e-3));
        let once = l2_normalize(&x).unwrap();
        let twice = l2_normalize(&once).unwrap();
        prop_assert!(once.max_abs_diff(&twice).unwrap() < 1e-12);
    }

    #[test]
    fn layer_norm_centers_and_scales(x in matrix_strategy(1..=8, 2..=32)) {
        prop_assume!(x.row_iter().all(|r| {
            let m = r.iter().sum::<f64>() / r.len() as f64;
            r.iter().map(|v| (v - m).powi(2)).sum::<f64>() > 1e-6
        }));
        let y = layer_norm(&x).unwrap();
        let d = y.cols() as f64;
        for row in y.row_iter() {
            prop_assert!((row.iter().sum::<f64>() / d).abs() < 1e-12);
            prop_assert!((norm(row) - d.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn rope_preserves_norms_and_is_relative(
        half in 1usize..=16,
        seed in any::<u64>(),
        m in 0usize..64,
        n in 0usize..64,
        shift in 0usize..64,
        theta in 2.0f64..20_000.0,
    ) {
        let d = 2 * half;
        let x = sample_inputs(8, d, Alpha::ZERO, seed).unwrap();
        let r = apply_rope(&x, theta).unwrap();
        for i in 0..8 {
            prop_assert!((norm(r.row(i)) - norm(x.row(i))).abs() < 1e-12);
        }
        let (q, k) = (x.row(0), x.row(1));
        let base = rotated_inner(q, m, k, n, theta);
        let moved = rotated_inner(q, m + shift, k, n + shift, theta);
        prop_assert!((base - moved).abs() < 1e-10);
    }

    #[test]
    fn unmasked_stack_is_permutation_equivariant(seed in any::<u64>(), perm in Just((0..7).collect::<Vec<usize>>()).prop_shuffle()) {
        let x = sample_inputs(7, 16, Alpha::ZERO, seed).unwrap();
        let spec = LayerSpec { mask: Mask::None, ..LayerSpec::default() };
        let base = forward_trace(&x, &spec, 3).unwrap();
        let permuted = forward_trace(&x.permute_rows(&perm), &spec, 3).unwrap();
        for (a, b) in base.iter().zip(&permuted) {
            let expect = a.attention.entries.permute_square(&perm);
            prop_assert!(expect.max_abs_diff(&b.attention.entries).unwrap() < 1e-12);
        }
    }

    #[test]
    fn forward_is_bit_deterministic(seed in any::<u64>(), rope in any::<bool>()) {
        let x = sample_inputs(9, 16, Alpha::new(0.3).unwrap(), seed).unwrap();
        let spec = LayerSpec { rope: rope.then_some(10_000.0), ..LayerSpec::default() };
        let a = forward_trace(&x, &spec, 4).unwrap();
        let b = forward_trace(&x, &spec, 4).unwrap();
        for (s, t) in a.iter().zip(&b) {
            prop_assert_eq!(&s.attention, &t.attention);
            prop_assert_eq!(&s.hidden, &t.hidden);
        }
    }
}
