//! Gradient-engine tests: op examples, backward contracts, finite-difference
//! checks per op, and checkpoint round-trips.

use cdpcl_core::numerics::{
    finite_difference_check, read_checkpoint, write_checkpoint, Graph, OpKind, Tensor,
};
use proptest::prelude::*;
use rand::{Rng as _, SeedableRng as _};
use rand_chacha::ChaCha8Rng;

fn t(v: &[f64]) -> Tensor {
    Tensor::from_vec(v.to_vec())
}

#[test]
fn apply_elementwise_examples() {
    let mut g = Graph::new();
    let a = g.constant(t(&[1.0, 2.0]));
    let b = g.constant(t(&[3.0, 4.0]));
    let c = g.apply(OpKind::Add, &[a, b]).unwrap();
    assert_eq!(g.value(c).data(), &[4.0, 6.0]);

    let x = g.constant(t(&[0.0, 0.0]));
    let s = g.apply(OpKind::Softmax { axis: 0 }, &[x]).unwrap();
    assert_eq!(g.value(s).data(), &[0.5, 0.5]);

    let y = g.constant(t(&[3.0, 4.0]));
    let n = g.l2_normalize(y, 0).unwrap();
    assert!((g.value(n).data()[0] - 0.6).abs() < 1e-15);
    assert!((g.value(n).data()[1] - 0.8).abs() < 1e-15);
}

#[test]
fn shape_mismatch_names_op_and_shapes() {
    let mut g = Graph::new();
    let a = g.constant(t(&[1.0, 2.0]));
    let b = g.constant(t(&[1.0, 2.0, 3.0]));
    let err = g.add(a, b).unwrap_err().to_string();
    assert!(err.contains("add"), "{err}");
    assert!(err.contains("[2]") && err.contains("[3]"), "{err}");
}

#[test]
fn backward_square_sum() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[3.0]), true);
    let sq = g.mul(x, x).unwrap();
    let loss = g.sum_all(sq).unwrap();
    g.backward(loss).unwrap();
    assert_eq!(g.grad(x).unwrap().data(), &[6.0]);
}

#[test]
fn backward_log_softmax_component() {
    // loss = log(softmax(x))[0] at x = [0, 0] has gradient [0.5, -0.5].
    let mut g = Graph::new();
    let x = g.leaf(t(&[0.0, 0.0]), true);
    let s = g.softmax(x, 0).unwrap();
    let l = g.log(s).unwrap();
    let loss = g.slice(l, 0, 0, 1).unwrap();
    let loss = g.sum_all(loss).unwrap();
    g.backward(loss).unwrap();
    let grad = g.grad(x).unwrap();
    assert!((grad.data()[0] - 0.5).abs() < 1e-12);
    assert!((grad.data()[1] + 0.5).abs() < 1e-12);
}

#[test]
fn no_grad_for_requires_grad_false() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1.0, 2.0]), true);
    let c = g.leaf(t(&[5.0, 7.0]), false);
    let p = g.mul(x, c).unwrap();
    let loss = g.sum_all(p).unwrap();
    g.backward(loss).unwrap();
    assert!(g.grad(x).is_some());
    assert!(g.grad(c).is_none());
}

#[test]
fn backward_rejects_non_scalar_loss() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1.0, 2.0]), true);
    let y = g.mul(x, x).unwrap();
    let err = g.backward(y).unwrap_err().to_string();
    assert!(err.contains("scalar"), "{err}");
}

#[test]
fn gradient_linearity_over_summed_losses() {
    let x0 = t(&[0.3, -0.7, 1.1]);
    let grad_of = |build: &dyn Fn(&mut Graph, cdpcl_core::Var) -> cdpcl_core::Var| -> Vec<f64> {
        let mut g = Graph::new();
        let x = g.leaf(x0.clone(), true);
        let loss = build(&mut g, x);
        g.backward(loss).unwrap();
        g.grad(x).unwrap().data().to_vec()
    };
    let f = |g: &mut Graph, x: cdpcl_core::Var| {
        let sq = g.mul(x, x).unwrap();
        g.sum_all(sq).unwrap()
    };
    let h = |g: &mut Graph, x: cdpcl_core::Var| {
        let e = g.exp(x).unwrap();
        g.sum_all(e).unwrap()
    };
    let gf = grad_of(&f);
    let gh = grad_of(&h);
    let gsum = grad_of(&|g: &mut Graph, x| {
        let a = f(g, x);
        let b = h(g, x);
        g.add(a, b).unwrap()
    });
    for i in 0..3 {
        assert!((gsum[i] - (gf[i] + gh[i])).abs() < 1e-12);
    }
}

#[test]
fn fd_check_polynomial_is_tight() {
    let err = finite_difference_check(
        |g, x| {
            let sq = g.mul(x, x)?;
            g.sum_all(sq)
        },
        &t(&[3.0]),
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-8, "err = {err}");
}

#[test]
fn fd_check_constant_function_is_zero() {
    let err = finite_difference_check(
        |g, x| {
            let zero = g.constant_scalar(0.0);
            let p = g.mul(x, zero)?;
            g.sum_all(p)
        },
        &t(&[1.0, -2.0]),
        1e-5,
    )
    .unwrap();
    assert_eq!(err, 0.0);
}

fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.5..1.5)).collect()).unwrap()
}

/// Every primitive op, finite-difference-checked through a scalar head.
#[test]
fn fd_check_each_primitive_op() {
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    type Build = Box<dyn Fn(&mut Graph, cdpcl_core::Var) -> cdpcl_core::Result<cdpcl_core::Var>>;

    let mut cases: Vec<(&str, Vec<usize>, Build)> = Vec::new();
    cases.push((
        "add_mul_chain",
        vec![4],
        Box::new(|g, x| {
            let c = g.constant(t(&[0.5, -1.0, 2.0, 0.25]));
            let s = g.add(x, c)?;
            let p = g.mul(s, s)?;
            g.sum_all(p)
        }),
    ));
    cases.push((
        "div",
        vec![3],
        Box::new(|g, x| {
            let c = g.constant(t(&[2.0, -3.0, 4.0]));
            let d = g.div(x, c)?;
            g.sum_all(d)
        }),
    ));
    cases.push((
        "abs_offset",
        vec![4],
        Box::new(|g, x| {
            // keep away from the kink at 0
            let c = g.constant(t(&[3.0, 3.0, 3.0, 3.0]));
            let s = g.add(x, c)?;
            let a = g.abs(s)?;
            g.sum_all(a)
        }),
    ));
    cases.push((
        "exp_log",
        vec![3],
        Box::new(|g, x| {
            let e = g.exp(x)?;
            let l = g.log(e)?;
            let p = g.mul(l, l)?;
            g.mean_all(p)
        }),
    ));
    cases.push((
        "matmul",
        vec![2, 3],
        Box::new(|g, x| {
            let c = g.constant(random_tensor(&mut ChaCha8Rng::seed_from_u64(7), &[3, 2]));
            let m = g.matmul(x, c)?;
            let sq = g.mul(m, m)?;
            g.sum_all(sq)
        }),
    ));
    cases.push((
        "softmax",
        vec![2, 3],
        Box::new(|g, x| {
            let s = g.softmax(x, 1)?;
            let w = g.constant(random_tensor(&mut ChaCha8Rng::seed_from_u64(8), &[2, 3]));
            let p = g.mul(s, w)?;
            g.sum_all(p)
        }),
    ));
    cases.push((
        "l2_normalize",
        vec![2, 4],
        Box::new(|g, x| {
            let c = g.constant(t(&[2.0; 8]).reshape(vec![2, 4]).unwrap());
            let off = g.add(x, c)?;
            let n = g.l2_normalize(off, 1)?;
            let w = g.constant(random_tensor(&mut ChaCha8Rng::seed_from_u64(9), &[2, 4]));
            let p = g.mul(n, w)?;
            g.sum_all(p)
        }),
    ));
    cases.push((
        "conv2d_s1_p1",
        vec![1, 2, 5, 5],
        Box::new(|g, x| {
            let w = g.constant(random_tensor(&mut ChaCha8Rng::seed_from_u64(10), &[3, 2, 3, 3]));
            let b = g.constant(random_tensor(&mut ChaCha8Rng::seed_from_u64(11), &[3]));
            let y = g.conv2d(x, w, Some(b), 1, 1)?;
            let r = g.relu(y)?;
            let sq = g.mul(r, r)?;
            g.sum_all(sq)
        }),
    ));
    cases.push((
        "conv2d_s2_p1",
        vec![1, 2, 6, 6],
        Box::new(|g, x| {
            let w = g.constant(random_tensor(&mut ChaCha8Rng::seed_from_u64(12), &[2, 2, 3, 3]));
            let y = g.conv2d(x, w, None, 2, 1)?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        }),
    ));
    cases.push((
        "conv2d_weight_grad",
        vec![3, 2, 3, 3],
        Box::new(|g, w| {
            let x = g.constant(random_tensor(&mut ChaCha8Rng::seed_from_u64(13), &[2, 2, 5, 5]));
            let y = g.conv2d(x, w, None, 1, 1)?;
            let sq = g.mul(y, y)?;
            g.sum_all(sq)
        }),
    ));
    cases.push((
        "upsample_nearest",
        vec![1, 2, 3, 3],
        Box::new(|g, x| {
            let u = g.upsample_nearest(x, 2)?;
            let w = g.constant(random_tensor(&mut ChaCha8Rng::seed_from_u64(14), &[1, 2, 6, 6]));
            let p = g.mul(u, w)?;
            g.sum_all(p)
        }),
    ));
    cases.push((
        "slice_concat",
        vec![3, 4],
        Box::new(|g, x| {
            let a = g.slice(x, 0, 0, 1)?;
            let b = g.slice(x, 0, 1, 3)?;
            let cat = g.concat(&[b, a], 0)?;
            let sq = g.mul(cat, cat)?;
            g.sum_all(sq)
        }),
    ));
    cases.push((
        "broadcast",
        vec![3, 1],
        Box::new(|g, x| {
            let b = g.broadcast_to(x, &[2, 3, 4])?;
            let w = g.constant(random_tensor(&mut ChaCha8Rng::seed_from_u64(15), &[2, 3, 4]));
            let p = g.mul(b, w)?;
            g.sum_all(p)
        }),
    ));
    cases.push((
        "sum_axis",
        vec![2, 3, 2],
        Box::new(|g, x| {
            let s = g.sum_axis(x, 1)?;
            let sq = g.mul(s, s)?;
            g.sum_all(sq)
        }),
    ));

    for (name, shape, build) in cases {
        let x = random_tensor(&mut rng, &shape);
        let err = finite_difference_check(&build, &x, 1e-5).unwrap();
        assert!(err <= 1e-6, "{name}: fd error {err}");
    }
}

#[test]
fn log_guard_counts_warning() {
    let mut g = Graph::new();
    let x = g.constant(t(&[0.0, 1.0]));
    let _ = g.log(x).unwrap();
    assert_eq!(g.warning_count(), 1);
}

proptest! {
    #[test]
    // Logit gaps beyond ~36 round the largest probability to exactly 1.0 in
    // f64, so the open-interval property is checked on a representable range.
    fn softmax_rows_are_distributions(vals in proptest::collection::vec(-15.0f64..15.0, 2..12)) {
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vals));
        let s = g.softmax(x, 0).unwrap();
        let sum: f64 = g.value(s).data().iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-12);
        for &v in g.value(s).data() {
            prop_assert!(v > 0.0 && v < 1.0);
        }
    }

    #[test]
    fn l2_normalize_is_unit_norm(vals in proptest::collection::vec(-10.0f64..10.0, 2..10)) {
        prop_assume!(vals.iter().map(|v| v * v).sum::<f64>().sqrt() >= 1e-6);
        let mut g = Graph::new();
        let x = g.constant(Tensor::from_vec(vals));
        let n = g.l2_normalize(x, 0).unwrap();
        let norm: f64 = g.value(n).data().iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((norm - 1.0).abs() < 1e-12);
    }
}

#[test]
fn checkpoint_roundtrip_and_corruption() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("ck.cdpt");
    let tensors = vec![
        ("weights".to_string(), random_tensor(&mut ChaCha8Rng::seed_from_u64(1), &[2, 3])),
        ("bias".to_string(), t(&[0.25, -1.0])),
        ("scalar".to_string(), Tensor::scalar(7.5)),
    ];
    write_checkpoint(&path, &tensors).unwrap();
    let back = read_checkpoint(&path).unwrap();
    assert_eq!(back.len(), 3);
    for ((n0, t0), (n1, t1)) in tensors.iter().zip(&back) {
        assert_eq!(n0, n1);
        assert_eq!(t0, t1);
    }

    let mut bytes = std::fs::read(&path).unwrap();
    bytes[0] = b'X';
    std::fs::write(&path, &bytes).unwrap();
    let err = read_checkpoint(&path).unwrap_err().to_string();
    assert!(err.contains("ck.cdpt") && err.contains("magic"), "{err}");
}
