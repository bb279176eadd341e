use std::sync::Arc;

use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use signbridge::tensor::{Array, CustomOp, GradCheck, Tape, TensorError, Var};

fn random(shape: &[usize], seed: u64) -> Array {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn check<F>(f: F, inputs: &[Array]) -> f64
where
    F: Fn(&Tape, &[Var]) -> Result<Var, TensorError>,
{
    GradCheck::default().run(f, inputs).unwrap().max_rel_error
}

/// Contracts a tensor to a scalar with fixed pseudo-random weights, so the
/// upstream gradient is not uniform.
fn weighted_sum(tape: &Tape, x: Var) -> Result<Var, TensorError> {
    let shape = tape.shape(x);
    let w = tape.constant(Array::from_fn(&shape, |i| ((i * 7 + 3) % 11) as f64 / 11.0 - 0.4));
    let prod = tape.mul(x, w)?;
    Ok(tape.sum(prod))
}

const TOL: f64 = 1e-5;

#[test]
fn matmul_identity_and_hand_product() {
    let tape = Tape::new();
    let eye = tape.constant(Array::eye(2));
    let a = tape.constant(Array::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]));
    let b = tape.constant(Array::from_rows(&[vec![5.0, 6.0], vec![7.0, 8.0]]));
    let ia = tape.matmul(eye, a).unwrap();
    assert_eq!(tape.value(ia).data(), &[1.0, 2.0, 3.0, 4.0]);
    let ab = tape.matmul(a, b).unwrap();
    assert_eq!(tape.value(ab).data(), &[19.0, 22.0, 43.0, 50.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let tape = Tape::new();
    let a = tape.constant(Array::zeros(&[2, 3]));
    let b = tape.constant(Array::zeros(&[2, 3]));
    let err = tape.matmul(a, b).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("[2, 3]"), "{msg}");
    assert!(matches!(err, TensorError::ShapeMismatch { .. }));
}

#[test]
fn matmul_gradient() {
    let e = check(
        |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted_sum(t, y)
        },
        &[random(&[3, 4], 1), random(&[4, 2], 2)],
    );
    assert!(e < TOL, "{e}");
}

#[test]
fn softmax_examples() {
    let tape = Tape::new();
    let x = tape.constant(Array::from_vec(vec![0.0, 0.0]));
    let y = tape.softmax(x, 0).unwrap();
    assert_eq!(tape.value(y).data(), &[0.5, 0.5]);

    let x = tape.constant(Array::from_vec(vec![1f64.ln(), 2f64.ln(), 3f64.ln()]));
    let y = tape.value(tape.softmax(x, 0).unwrap());
    for (got, want) in y.data().iter().zip([1.0 / 6.0, 2.0 / 6.0, 3.0 / 6.0]) {
        assert!((got - want).abs() < 1e-12);
    }
}

#[test]
fn softmax_gradient_on_both_axes() {
    for (axis, seed) in [(0, 3), (1, 4)] {
        let e = check(
            |t, v| {
                let y = t.softmax(v[0], axis)?;
                weighted_sum(t, y)
            },
            &[random(&[2, 5], seed)],
        );
        assert!(e < TOL, "axis {axis}: {e}");
    }
    let e = check(
        |t, v| {
            let y = t.softmax(v[0], 1)?;
            weighted_sum(t, y)
        },
        &[random(&[2, 3, 4], 5)],
    );
    assert!(e < TOL, "{e}");
}

#[test]
fn layer_norm_examples() {
    let tape = Tape::new();
    let g = tape.constant(Array::full(&[3], 1.0));
    let b = tape.constant(Array::zeros(&[3]));
    let x = tape.constant(Array::full(&[1, 3], 4.2));
    let y = tape.layer_norm(x, g, b, 1e-5).unwrap();
    assert!(tape.value(y).data().iter().all(|&v| v == 0.0));

    let g = tape.constant(Array::full(&[2], 1.0));
    let b = tape.constant(Array::zeros(&[2]));
    let x = tape.constant(Array::from_rows(&[vec![1.0, 3.0]]));
    let y = tape.value(tape.layer_norm(x, g, b, 1e-12).unwrap());
    assert!((y.data()[0] + 1.0).abs() < 1e-9);
    assert!((y.data()[1] - 1.0).abs() < 1e-9);
}

#[test]
fn layer_norm_gradient() {
    for (shape, seed) in [(vec![4, 8], 6), (vec![2, 3, 5], 7), (vec![1, 6], 8)] {
        let d = *shape.last().unwrap();
        let e = check(
            |t, v| {
                let y = t.layer_norm(v[0], v[1], v[2], 1e-5)?;
                weighted_sum(t, y)
            },
            &[random(&shape, seed), random(&[d], seed + 10), random(&[d], seed + 20)],
        );
        assert!(e < TOL, "{shape:?}: {e}");
    }
}

#[test]
fn dropout_contract() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let tape = Tape::new();
    let x = tape.leaf(random(&[3, 4], 9), true);
    assert_eq!(tape.dropout(x, 0.3, false, &mut rng).unwrap(), x);
    assert_eq!(tape.dropout(x, 0.0, true, &mut rng).unwrap(), x);
    assert!(tape.dropout(x, 1.0, true, &mut rng).is_err());

    let ones = tape.constant(Array::full(&[10_000], 1.0));
    let y = tape.dropout(ones, 0.5, true, &mut rng).unwrap();
    let v = tape.value(y);
    let mean = v.sum() / v.len() as f64;
    assert!((mean - 1.0).abs() < 0.05, "{mean}");
    assert!(v.data().iter().all(|&a| a == 0.0 || a == 2.0));
}

#[test]
fn dropout_gradient_with_fixed_mask() {
    let e = check(
        |t, v| {
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            let y = t.dropout(v[0], 0.4, true, &mut rng)?;
            weighted_sum(t, y)
        },
        &[random(&[3, 5], 10)],
    );
    assert!(e < TOL, "{e}");
}

#[test]
fn embedding_lookup_examples() {
    let tape = Tape::new();
    let table = tape.leaf(Array::from_fn(&[3, 2], |i| i as f64), true);
    let r0 = tape.embedding(table, &[0]).unwrap();
    assert_eq!(tape.value(r0).data(), &[0.0, 1.0]);
    assert!(matches!(
        tape.embedding(table, &[3]),
        Err(TensorError::IndexOutOfRange { index: 3, bound: 3 })
    ));

    let rows = tape.embedding(table, &[1, 1]).unwrap();
    let w = tape.constant(Array::from_rows(&[vec![1.0, 2.0], vec![10.0, 20.0]]));
    let prod = tape.mul(rows, w).unwrap();
    let s = tape.sum(prod);
    tape.backward(s).unwrap();
    let g = tape.grad(table).unwrap();
    assert_eq!(g.row(1), &[11.0, 22.0]);
    assert_eq!(g.row(0), &[0.0, 0.0]);
}

#[test]
fn embedding_gradient() {
    let e = check(
        |t, v| {
            let y = t.embedding(v[0], &[2, 0, 2])?;
            weighted_sum(t, y)
        },
        &[random(&[5, 3], 11)],
    );
    assert!(e < TOL, "{e}");
}

#[test]
fn cosine_similarity_examples() {
    let tape = Tape::new();
    let u = tape.constant(random(&[6], 12));
    let s = tape.cosine_similarity(u, u, 1e-8).unwrap();
    assert!((tape.item(s) - 1.0).abs() < 1e-12);
    let a = tape.constant(Array::from_vec(vec![1.0, 0.0]));
    let b = tape.constant(Array::from_vec(vec![0.0, 1.0]));
    assert_eq!(tape.item(tape.cosine_similarity(a, b, 1e-8).unwrap()), 0.0);
}

#[test]
fn cosine_similarity_gradient() {
    let e = check(
        |t, v| t.cosine_similarity(v[0], v[1], 1e-8),
        &[random(&[6], 13), random(&[6], 14)],
    );
    assert!(e < TOL, "{e}");
}

#[test]
fn cross_entropy_examples() {
    let tape = Tape::new();
    let logits = tape.constant(Array::zeros(&[2, 4]));
    let ce = tape.cross_entropy_logits(logits, &[1, 3], usize::MAX).unwrap();
    assert!((tape.item(ce) - 4f64.ln()).abs() < 1e-12);

    let logits = tape.constant(Array::from_rows(&[vec![10.0, -10.0]]));
    let ce = tape.item(tape.cross_entropy_logits(logits, &[0], usize::MAX).unwrap());
    let want = (1.0 + (-20f64).exp()).ln();
    assert!((ce - want).abs() / want < 1e-6, "{ce}");
    assert!((ce - 2.06e-9).abs() < 0.01e-9);

    let logits = tape.constant(Array::zeros(&[2, 4]));
    assert!(matches!(
        tape.cross_entropy_logits(logits, &[0, 0], 0),
        Err(TensorError::EmptyMean)
    ));
}

#[test]
fn cross_entropy_ignored_positions_get_no_gradient() {
    let tape = Tape::new();
    let logits = tape.leaf(random(&[3, 5], 15), true);
    let ce = tape.cross_entropy_logits(logits, &[1, 0, 4], 0).unwrap();
    tape.backward(ce).unwrap();
    let g = tape.grad(logits).unwrap();
    assert!(g.row(1).iter().all(|&x| x == 0.0));
    assert!(g.row(0).iter().any(|&x| x != 0.0));
}

#[test]
fn cross_entropy_gradient() {
    let e = check(
        |t, v| t.cross_entropy_logits(v[0], &[1, 4, 0], usize::MAX),
        &[random(&[3, 5], 16)],
    );
    assert!(e < TOL, "{e}");
}

#[test]
fn primitive_shapes() {
    let tape = Tape::new();
    let x = tape.constant(random(&[2, 2], 17));
    let zero = tape.constant(Array::zeros(&[2, 2]));
    let y = tape.add(x, zero).unwrap();
    assert_eq!(tape.value(y), tape.value(x));

    let a = tape.constant(Array::zeros(&[2, 2]));
    let b = tape.constant(Array::zeros(&[2, 3]));
    assert_eq!(tape.shape(tape.concat(&[a, b], 1).unwrap()), vec![2, 5]);
    assert!(tape.concat(&[a, b], 0).is_err());
    assert!(tape.add(a, b).is_err());
}

#[test]
fn primitives_pass_gradient_checks() {
    type Unary = fn(&Tape, Var) -> Result<Var, TensorError>;
    let unary: Vec<(&str, Unary)> = vec![
        ("scale", |t, x| Ok(t.scale(x, -1.7))),
        ("transpose", |t, x| t.transpose(x)),
        ("reshape", |t, x| t.reshape(x, &[4, 3])),
        ("mean0", |t, x| t.mean(x, 0)),
        ("mean1", |t, x| t.mean(x, 1)),
        ("relu", |t, x| Ok(t.relu(x))),
        ("gelu", |t, x| Ok(t.gelu(x))),
        ("narrow", |t, x| t.narrow(x, 1, 1, 1)),
        ("sum", |t, x| Ok(t.sum(x))),
    ];
    for (name, op) in unary {
        for (shape_seed, shape) in [(20, [3, 4]), (21, [2, 6]), (22, [6, 2])] {
            let shape: &[usize] = &shape;
            if name == "reshape" && shape.iter().product::<usize>() != 12 {
                continue;
            }
            let e = check(
                |t, v| {
                    let y = op(t, v[0])?;
                    weighted_sum(t, y)
                },
                &[random(shape, shape_seed)],
            );
            assert!(e < TOL, "{name} {shape:?}: {e}");
        }
    }

    type Binary = fn(&Tape, Var, Var) -> Result<Var, TensorError>;
    let binary: Vec<(&str, Binary)> = vec![
        ("add", |t, a, b| t.add(a, b)),
        ("sub", |t, a, b| t.sub(a, b)),
        ("mul", |t, a, b| t.mul(a, b)),
        ("concat0", |t, a, b| t.concat(&[a, b], 0)),
        ("concat1", |t, a, b| t.concat(&[a, b], 1)),
    ];
    for (name, op) in binary {
        for seed in 0..3 {
            let e = check(
                |t, v| {
                    let y = op(t, v[0], v[1])?;
                    weighted_sum(t, y)
                },
                &[random(&[3, 4], 30 + seed), random(&[3, 4], 40 + seed)],
            );
            assert!(e < TOL, "{name}: {e}");
        }
    }

    let e = check(
        |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            weighted_sum(t, y)
        },
        &[random(&[2, 3, 4], 50), random(&[4], 51)],
    );
    assert!(e < TOL, "add_bias: {e}");
}

#[test]
fn graph_temporal_and_region_ops_pass_gradient_checks() {
    let adj = Arc::new(random(&[4, 4], 60));
    let e = check(
        |t, v| {
            let y = t.graph_conv(v[0], adj.clone(), v[1])?;
            weighted_sum(t, y)
        },
        &[random(&[3, 4, 2], 61), random(&[2, 4, 4], 62)],
    );
    assert!(e < TOL, "graph_conv: {e}");

    for (t_len, stride) in [(6, 2), (5, 2), (4, 1)] {
        let e = check(
            |t, v| {
                let y = t.temporal_conv(v[0], v[1], stride)?;
                weighted_sum(t, y)
            },
            &[random(&[t_len, 3, 2], 63), random(&[5, 2, 3], 64)],
        );
        assert!(e < TOL, "temporal_conv T={t_len}: {e}");
    }

    let regions = Arc::new(vec![vec![0, 1], vec![2], vec![3, 4]]);
    let e = check(
        |t, v| {
            let y = t.region_mean(v[0], regions.clone())?;
            weighted_sum(t, y)
        },
        &[random(&[2, 5, 3], 65)],
    );
    assert!(e < TOL, "region_mean: {e}");
}

#[test]
fn backward_examples() {
    let tape = Tape::new();
    let x = tape.leaf(Array::from_vec(vec![1.0, 2.0, 3.0]), true);
    let sq = tape.mul(x, x).unwrap();
    let y = tape.sum(sq);
    tape.backward(y).unwrap();
    assert_eq!(tape.grad(x).unwrap().data(), &[2.0, 4.0, 6.0]);

    // z = a·b + a
    let tape = Tape::new();
    let a = tape.leaf(Array::scalar(1.5), true);
    let b = tape.leaf(Array::scalar(-0.25), true);
    let ab = tape.mul(a, b).unwrap();
    let z = tape.add(ab, a).unwrap();
    tape.backward(z).unwrap();
    assert_eq!(tape.grad(a).unwrap().item(), -0.25 + 1.0);
    assert_eq!(tape.grad(b).unwrap().item(), 1.5);
}

#[test]
fn repeated_use_sums_single_use_gradients() {
    // f(x) = Σ w1⊙x + Σ w2⊙x + Σ w3⊙x versus three separate single-use graphs.
    let x0 = random(&[4], 70);
    let ws: Vec<Array> = (0..3).map(|i| random(&[4], 71 + i)).collect();
    let tape = Tape::new();
    let x = tape.leaf(x0.clone(), true);
    let mut total = None;
    for w in &ws {
        let wv = tape.constant(w.clone());
        let p = tape.sum(tape.mul(x, wv).unwrap());
        total = Some(match total {
            None => p,
            Some(acc) => tape.add(acc, p).unwrap(),
        });
    }
    tape.backward(total.unwrap()).unwrap();
    let combined = tape.grad(x).unwrap();

    let mut separate = Array::zeros(&[4]);
    for w in &ws {
        let tape = Tape::new();
        let x = tape.leaf(x0.clone(), true);
        let wv = tape.constant(w.clone());
        let p = tape.sum(tape.mul(x, wv).unwrap());
        tape.backward(p).unwrap();
        for (s, g) in separate.data_mut().iter_mut().zip(tape.grad(x).unwrap().data()) {
            *s += g;
        }
    }
    assert!(combined.max_abs_diff(&separate) < 1e-15);
}

#[test]
fn grad_check_is_exact_on_linear_functions() {
    let e = check(
        |t, v| {
            let w = t.constant(Array::from_vec(vec![0.5, -2.0, 3.0]));
            let y = t.mul(v[0], w)?;
            Ok(t.sum(y))
        },
        // small |f| keeps evaluation roundoff (~ulp(f)/eps) far below the bound
        &[random(&[3], 80).map(|x| x * 1e-3)],
    );
    assert!(e < 1e-10, "{e}");
}

#[test]
fn grad_check_softmax_cross_entropy_composite() {
    let e = check(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let p = t.softmax(h, 1)?;
            let l = t.scale(p, 3.0);
            t.cross_entropy_logits(l, &[0, 2], usize::MAX)
        },
        &[random(&[2, 4], 81), random(&[4, 3], 82)],
    );
    assert!(e < TOL, "{e}");
}

/// Square with a deliberately wrong derivative (x instead of 2x).
struct BrokenSquare;

impl CustomOp for BrokenSquare {
    fn name(&self) -> &str {
        "broken_square"
    }

    fn backward(&self, inputs: &[&Array], _output: &Array, grad: &Array) -> Vec<Array> {
        let g = inputs[0]
            .data()
            .iter()
            .zip(grad.data())
            .map(|(x, g)| x * g)
            .collect();
        vec![Array::new(inputs[0].shape(), g).unwrap()]
    }
}

#[test]
fn grad_check_detects_a_wrong_backward_rule() {
    let e = check(
        |t, v| {
            let x = t.value(v[0]);
            let y = t.custom(&[v[0]], x.map(|a| a * a), Box::new(BrokenSquare));
            Ok(t.sum(y))
        },
        &[random(&[5], 83)],
    );
    assert!(e > 1e-2, "{e}");
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one_and_shift_invariant(
        data in proptest::collection::vec(-30.0f64..30.0, 12),
        shift in -50.0f64..50.0,
    ) {
        let tape = Tape::new();
        let x = tape.constant(Array::new(&[3, 4], data.clone()).unwrap());
        let y = tape.value(tape.softmax(x, 1).unwrap());
        for r in 0..3 {
            let s: f64 = y.row(r).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
            prop_assert!(y.row(r).iter().all(|&p| p >= 0.0));
        }
        let shifted = tape.constant(Array::new(&[3, 4], data.iter().map(|v| v + shift).collect()).unwrap());
        let z = tape.value(tape.softmax(shifted, 1).unwrap());
        prop_assert!(y.max_abs_diff(&z) < 1e-9);
    }

    #[test]
    fn operations_are_deterministic(seed in 0u64..1000) {
        let run = || {
            let tape = Tape::new();
            let a = tape.leaf(random(&[3, 4], seed), true);
            let b = tape.leaf(random(&[4, 2], seed + 1), true);
            let h = tape.matmul(a, b).unwrap();
            let g = tape.gelu(h);
            let s = tape.softmax(g, 1).unwrap();
            let l = tape.cross_entropy_logits(s, &[0, 1, 0], usize::MAX).unwrap();
            tape.backward(l).unwrap();
            (tape.item(l), tape.grad(a).unwrap())
        };
        let (l1, g1) = run();
        let (l2, g2) = run();
        prop_assert_eq!(l1.to_bits(), l2.to_bits());
        prop_assert_eq!(g1, g2);
    }
}
