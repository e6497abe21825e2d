use super::*;

fn t(v: &[f64]) -> Tensor {
    Tensor::vector(v.to_vec())
}

#[test]
fn add_and_mul_values() {
    let mut tape = Tape::new();
    let a = tape.input(t(&[1.0, 2.0, 3.0]));
    let b = tape.constant(t(&[10.0, 20.0, 30.0]));
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.value(s).data(), &[11.0, 22.0, 33.0]);
    let p = tape.mul(s, b).unwrap();
    assert_eq!(tape.value(p).data(), &[110.0, 440.0, 990.0]);
}

#[test]
fn matmul_matrix_matrix() {
    let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let b = Tensor::matrix(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]).unwrap();
    let c = Op::Matmul.forward(&[&a, &b]).unwrap();
    assert_eq!(c.shape(), &[2, 2]);
    assert_eq!(c.data(), &[58.0, 64.0, 139.0, 154.0]);
}

#[test]
fn matmul_matrix_vector_and_vector_matrix() {
    let a = Tensor::matrix(2, 3, vec![1.0, 0.0, 2.0, 0.0, 1.0, -1.0]).unwrap();
    let x = t(&[3.0, 4.0, 5.0]);
    let ax = Op::Matmul.forward(&[&a, &x]).unwrap();
    assert_eq!(ax.shape(), &[2]);
    assert_eq!(ax.data(), &[13.0, -1.0]);

    let y = t(&[1.0, 2.0]);
    let ya = Op::Matmul.forward(&[&y, &a]).unwrap();
    assert_eq!(ya.shape(), &[3]);
    assert_eq!(ya.data(), &[1.0, 2.0, 0.0]);
}

#[test]
fn relu_clamps_negatives() {
    let out = Op::Relu.forward(&[&t(&[-1.0, 0.0, 2.5])]).unwrap();
    assert_eq!(out.data(), &[0.0, 0.0, 2.5]);
}

#[test]
fn sum_square_gradient_is_two_x() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[1.0, -2.0, 3.0]));
    let sq = tape.square(x).unwrap();
    let root = tape.sum(sq).unwrap();
    assert_eq!(tape.value(root).item(), 14.0);
    let grads = tape.backward(root).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[2.0, -4.0, 6.0]);
}

#[test]
fn product_rule_through_shared_operand() {
    // d/dx sum(x * x) = 2x even though x appears twice.
    let mut tape = Tape::new();
    let x = tape.input(t(&[3.0, -1.0]));
    let p = tape.mul(x, x).unwrap();
    let root = tape.sum(p).unwrap();
    let grads = tape.backward(root).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[6.0, -2.0]);
}

#[test]
fn tanh_gradient_at_zero_is_one() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::scalar(0.0));
    let y = tape.tanh(x).unwrap();
    let grads = tape.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 1.0);
}

#[test]
fn broadcast_over_leading_batch_dim() {
    let mut tape = Tape::new();
    let a = tape.input(Tensor::matrix(2, 3, vec![1.0; 6]).unwrap());
    let b = tape.input(t(&[1.0, 2.0, 3.0]));
    let s = tape.add(a, b).unwrap();
    assert_eq!(tape.value(s).data(), &[2.0, 3.0, 4.0, 2.0, 3.0, 4.0]);
    let root = tape.sum(s).unwrap();
    let grads = tape.backward(root).unwrap();
    assert_eq!(grads.get(a).unwrap().shape(), &[2, 3]);
    // the broadcast operand's gradient sums over the batch dimension
    assert_eq!(grads.get(b).unwrap().data(), &[2.0, 2.0, 2.0]);
}

#[test]
fn scalar_broadcast_against_matrix() {
    let mut tape = Tape::new();
    let a = tape.input(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let c = tape.input(Tensor::scalar(10.0));
    let s = tape.mul(a, c).unwrap();
    assert_eq!(tape.value(s).data(), &[10.0, 20.0, 30.0, 40.0]);
    let root = tape.sum(s).unwrap();
    let grads = tape.backward(root).unwrap();
    assert_eq!(grads.get(c).unwrap().item(), 10.0);
}

#[test]
fn clamp_min_gradient_zero_at_and_below_threshold() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[-1.0, 0.01, 0.5]));
    let c = tape.clamp_min(x, 0.01).unwrap();
    assert_eq!(tape.value(c).data(), &[0.01, 0.01, 0.5]);
    let root = tape.sum(c).unwrap();
    let grads = tape.backward(root).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 0.0, 1.0]);
}

#[test]
fn forward_matches_with_and_without_recording() {
    let x = t(&[0.3, -0.7, 1.9]);
    let plain = Op::Tanh.forward(&[&x]).unwrap();
    let mut tape = Tape::new();
    let xv = tape.input(x);
    let tv = tape.tanh(xv).unwrap();
    assert_eq!(tape.value(tv), &plain);
}

#[test]
fn backward_twice_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.input(Tensor::scalar(2.0));
    let y = tape.square(x).unwrap();
    tape.backward(y).unwrap();
    assert!(matches!(tape.backward(y), Err(AdError::TapeConsumed)));
}

#[test]
fn non_scalar_root_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.input(t(&[1.0, 2.0]));
    let err = tape.backward(x).unwrap_err();
    assert!(matches!(err, AdError::NonScalarRoot { .. }));
}

#[test]
fn shape_mismatch_names_the_op_and_shapes() {
    let a = t(&[1.0, 2.0]);
    let b = t(&[1.0, 2.0, 3.0]);
    let err = Op::Add.forward(&[&a, &b]).unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("add") && msg.contains("[2]") && msg.contains("[3]"), "{msg}");
}

#[test]
fn log_of_non_positive_is_an_error() {
    let err = Op::Log.forward(&[&t(&[1.0, -0.5])]).unwrap_err();
    assert!(matches!(err, AdError::Domain { op: "log", .. }));
}

#[test]
fn exp_overflow_is_an_error() {
    let err = Op::Exp.forward(&[&t(&[1000.0])]).unwrap_err();
    assert!(matches!(err, AdError::Domain { op: "exp", .. }));
}

#[test]
fn finite_diff_check_on_sum_of_squares() {
    let x = t(&[0.5, -1.25, 2.0, 0.0]);
    let err = finite_diff_check(
        |tape, x| {
            let s = tape.square(x)?;
            tape.sum(s)
        },
        &x,
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "relative error {err}");
}

#[test]
fn finite_diff_check_of_constant_function_is_zero() {
    let x = t(&[1.0, 2.0]);
    let err = finite_diff_check(
        |tape, _x| Ok(tape.scalar_const(3.5)),
        &x,
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

/// Scalarizes one op over an input in its valid range and checks its gradient.
fn check_op_gradient(op: Op, x: &Tensor) -> f64 {
    finite_diff_check(
        |tape, xv| {
            let other = tape.constant(Tensor::full(x.shape(), 0.7));
            let y = match op.arity() {
                2 => tape.apply(op, &[xv, other])?,
                _ => tape.apply(op, &[xv])?,
            };
            if tape.value(y).numel() == 1 && tape.value(y).is_scalar() {
                Ok(y)
            } else {
                let sq = tape.square(y)?;
                tape.sum(sq)
            }
        },
        x,
        1e-6,
    )
    .unwrap()
}

#[test]
fn every_op_passes_the_gradient_check_at_generic_points() {
    let generic = t(&[0.83, 1.41, 2.27, 0.19, 1.64]);
    let ops = [
        Op::Add,
        Op::Sub,
        Op::Mul,
        Op::Relu,
        Op::Tanh,
        Op::Exp,
        Op::Log,
        Op::Sum,
        Op::Mean,
        Op::Square,
        Op::ClampMin(1.0),
    ];
    for op in ops {
        let err = check_op_gradient(op, &generic);
        assert!(err <= 1e-4, "{}: relative error {err}", op.name());
    }
    // matmul over both matrix and vector operand shapes
    let a = Tensor::matrix(3, 4, (0..12).map(|i| 0.1 * i as f64 + 0.05).collect()).unwrap();
    let err = finite_diff_check(
        |tape, av| {
            let b = tape.constant(Tensor::matrix(4, 2, vec![0.3; 8]).unwrap());
            let c = tape.matmul(av, b)?;
            let sq = tape.square(c)?;
            tape.sum(sq)
        },
        &a,
        1e-6,
    )
    .unwrap();
    assert!(err <= 1e-4, "matmul: relative error {err}");
    let v = t(&[0.2, -0.4, 0.6, 0.8]);
    let err = finite_diff_check(
        |tape, vv| {
            let b = tape.constant(Tensor::matrix(4, 3, (0..12).map(|i| 0.2 * i as f64 - 1.0).collect()).unwrap());
            let c = tape.matmul(vv, b)?;
            let sq = tape.square(c)?;
            tape.sum(sq)
        },
        &v,
        1e-6,
    )
    .unwrap();
    assert!(err <= 1e-4, "vector-matmul: relative error {err}");
}

#[test]
fn repeated_forward_passes_are_bit_identical() {
    let run = || {
        let mut tape = Tape::new();
        let x = tape.input(t(&[0.11, 0.22, 0.33]));
        let e = tape.exp(x).unwrap();
        let l = tape.log(e).unwrap();
        let m = tape.mean(l).unwrap();
        let v = tape.value(m).item();
        let grads = tape.backward(m).unwrap();
        (v, grads.get(x).unwrap().data().to_vec())
    };
    assert_eq!(run(), run());
}

mod properties {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]

        #[test]
        fn elementwise_grads_match_finite_differences(
            xs in proptest::collection::vec(0.05f64..2.0, 3..8)
        ) {
            let x = Tensor::vector(xs);
            for op in [Op::Mul, Op::Tanh, Op::Log, Op::Square] {
                let err = check_op_gradient(op, &x);
                prop_assert!(err <= 1e-4, "{}: {err}", op.name());
            }
        }
    }
}
