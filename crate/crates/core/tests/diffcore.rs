use approx::assert_relative_eq;
use proptest::prelude::*;
use tmlga::diffcore::{grad_check, Rng, Tape, Tensor};

fn matrix(rows: usize, cols: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(-3.0f64..3.0, rows * cols).prop_map(move |d| Tensor::matrix(rows, cols, d).unwrap())
}

#[test]
fn matmul_backward_matches_closed_form() {
    // d/dA sum(A B) = 1 B^T, d/dB = A^T 1
    let a = Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
    let b = Tensor::matrix(3, 2, vec![0.5, -1.0, 2.0, 0.0, -0.5, 1.5]).unwrap();
    let mut tape = Tape::new();
    let (va, vb) = (tape.param(a), tape.param(b));
    let prod = tape.matmul(va, vb).unwrap();
    let loss = tape.sum(prod);
    assert_eq!(tape.value(prod).data(), &[3.0, 3.5, 9.0, 5.0]);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(grads.get(va).unwrap().data(), &[-0.5, 2.0, 1.0, -0.5, 2.0, 1.0]);
    assert_eq!(grads.get(vb).unwrap().data(), &[5.0, 5.0, 7.0, 7.0, 9.0, 9.0]);
}

#[test]
fn log_softmax_of_uniform_scores() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::filled(&[4], 2.5));
    let y = tape.log_softmax(x).unwrap();
    for v in tape.value(y).data() {
        assert_relative_eq!(*v, -(4f64.ln()), epsilon = 1e-15);
    }
    let picked = tape.pick(y, 0).unwrap();
    let grads = tape.backward(picked).unwrap();
    for (g, want) in grads.get(x).unwrap().data().iter().zip([0.75, -0.25, -0.25, -0.25]) {
        assert_relative_eq!(*g, want, epsilon = 1e-15);
    }
}

#[test]
fn softmax_is_stable_for_huge_scores() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::vector(vec![1000.0, 1000.0, -1000.0]).unwrap());
    let y = tape.softmax(x).unwrap();
    let p = tape.value(y).data();
    assert_relative_eq!(p[0], 0.5);
    assert_relative_eq!(p[1], 0.5);
    assert_eq!(p[2], 0.0);
}

#[test]
fn constants_receive_no_gradient() {
    let mut tape = Tape::new();
    let c = tape.constant(Tensor::vector(vec![1.0, 2.0]).unwrap());
    let w = tape.param(Tensor::vector(vec![3.0, -1.0]).unwrap());
    let prod = tape.mul(c, w).unwrap();
    let loss = tape.sum(prod);
    let grads = tape.backward(loss).unwrap();
    assert!(grads.get(c).is_none());
    assert_eq!(grads.get(w).unwrap().data(), &[1.0, 2.0]);
}

#[test]
fn mismatched_shapes_are_dimension_errors() {
    let mut tape = Tape::new();
    let a = tape.constant(Tensor::zeros(&[2, 3]));
    let b = tape.constant(Tensor::zeros(&[2, 3]));
    assert!(matches!(tape.matmul(a, b), Err(tmlga::Error::Dimension(_))));
    let c = tape.constant(Tensor::zeros(&[3]));
    assert!(tape.add(a, c).is_err());
}

#[test]
fn gradient_through_a_small_network() {
    let mut rng = Rng::new(11);
    let mut random = |shape: &[usize]| {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.normal()).collect()).unwrap()
    };
    let inputs = [random(&[5, 4]), random(&[4, 3]), random(&[3])];
    let report = grad_check(
        |t, v| {
            let h = t.matmul(v[0], v[1])?;
            let h = t.add_row_bias(h, v[2])?;
            let h = t.tanh(h);
            let m = t.mean_rows(h)?;
            let p = t.log_softmax(m)?;
            t.pick(p, 1)
        },
        &inputs,
        1e-5,
    )
    .unwrap();
    assert!(report.passes(1e-6), "{report:?}");
}

proptest! {
    #[test]
    fn softmax_sums_to_one(x in prop::collection::vec(-50.0f64..50.0, 1..40)) {
        let mut tape = Tape::new();
        let v = tape.constant(Tensor::vector(x).unwrap());
        let y = tape.softmax(v).unwrap();
        let p = tape.value(y).data();
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(p.iter().all(|p| *p >= 0.0));
    }

    #[test]
    fn backward_is_linear_in_the_loss(x in matrix(2, 4), a in -2.0f64..2.0, b in -2.0f64..2.0) {
        let grad = |ca: f64, cb: f64| {
            let mut tape = Tape::new();
            let v = tape.param(x.clone());
            let f = tape.tanh(v);
            let f = tape.sum(f);
            let g = tape.exp(v);
            let g = tape.sum(g);
            let fa = tape.scale(f, ca);
            let gb = tape.scale(g, cb);
            let loss = tape.add(fa, gb).unwrap();
            tape.backward(loss).unwrap().get(v).unwrap().clone()
        };
        let combined = grad(a, b);
        let (df, dg) = (grad(1.0, 0.0), grad(0.0, 1.0));
        for ((c, f), g) in combined.data().iter().zip(df.data()).zip(dg.data()) {
            prop_assert!((c - (a * f + b * g)).abs() <= 1e-12 * (1.0 + c.abs()));
        }
    }

    #[test]
    fn dropout_at_inference_is_identity(x in matrix(4, 4), seed in any::<u64>()) {
        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let y = tape.dropout(v, 0.5, &mut Rng::new(seed), false).unwrap();
        prop_assert_eq!(tape.value(y), &x);
    }
}
