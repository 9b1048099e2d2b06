use adspeech_core::autodiff::{grad_check, Group, ParamStore, Tape, Tensor, Var};
use adspeech_core::{Error, Result};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn close(a: &[f64], b: &[f64], tol: f64) {
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(b) {
        assert!((x - y).abs() <= tol, "{a:?} vs {b:?}");
    }
}

fn m(rows: usize, cols: usize, data: &[f64]) -> Tensor {
    Tensor::matrix(rows, cols, data.to_vec()).unwrap()
}

#[test]
fn matmul_identity_and_projector() {
    let mut t = Tape::new();
    let i2 = t.constant(m(2, 2, &[1.0, 0.0, 0.0, 1.0]));
    let b = t.constant(m(2, 2, &[1.0, 2.0, 3.0, 4.0]));
    let c = t.matmul(i2, b).unwrap();
    assert_eq!(t.value(c).data(), &[1.0, 2.0, 3.0, 4.0]);

    let p = t.constant(m(2, 2, &[1.0, 0.0, 0.0, 0.0]));
    let b = t.constant(m(2, 2, &[5.0, 6.0, 7.0, 8.0]));
    let c = t.matmul(p, b).unwrap();
    assert_eq!(t.value(c).data(), &[5.0, 6.0, 0.0, 0.0]);
}

#[test]
fn matmul_shape_error_names_both_shapes() {
    let mut t = Tape::new();
    let a = t.constant(Tensor::zeros(&[2, 3]));
    let b = t.constant(Tensor::zeros(&[2, 3]));
    match t.matmul(a, b) {
        Err(Error::Dimension { lhs, rhs, .. }) => {
            assert_eq!(lhs, vec![2, 3]);
            assert_eq!(rhs, vec![2, 3]);
        }
        other => panic!("expected dimension error, got {other:?}"),
    }
}

#[test]
fn matmul_gradient_against_finite_difference() {
    // d/dA sum(A·B) at A=[[1,1]], B=[[2],[3]]
    let a0 = [1.0, 1.0];
    let b = m(2, 1, &[2.0, 3.0]);
    let f = |a: &[f64]| -> f64 {
        let mut t = Tape::new();
        let av = t.constant(m(1, 2, a));
        let bv = t.constant(b.clone());
        let c = t.matmul(av, bv).unwrap();
        let s = t.sum(c);
        t.value(s).item()
    };
    let eps = 1e-5;
    let mut numeric = vec![0.0; 2];
    for i in 0..2 {
        let mut p = a0;
        p[i] += eps;
        let mut q = a0;
        q[i] -= eps;
        numeric[i] = (f(&p) - f(&q)) / (2.0 * eps);
    }
    close(&numeric, &[2.0, 3.0], 1e-8);

    let mut t = Tape::new();
    let av = t.leaf(m(1, 2, &a0));
    let bv = t.constant(b);
    let c = t.matmul(av, bv).unwrap();
    let s = t.sum(c);
    let g = t.backward(s).unwrap();
    close(g.wrt(av).unwrap().data(), &numeric, 1e-8);
}

#[test]
fn softmax_examples() {
    let mut t = Tape::new();
    let x = t.constant(Tensor::vector(&[0.0, 0.0, 0.0]));
    let y = t.softmax(x).unwrap();
    close(t.value(y).data(), &[1.0 / 3.0; 3], 1e-15);

    let x = t.constant(Tensor::vector(&[1000.0, 0.0, 0.0]));
    let y = t.softmax(x).unwrap();
    close(t.value(y).data(), &[1.0, 0.0, 0.0], 1e-12);

    let x = t.constant(Tensor::vector(&[2f64.ln(), 0.0, 0.0]));
    let y = t.softmax(x).unwrap();
    close(t.value(y).data(), &[0.5, 0.25, 0.25], 1e-15);

    let x = t.constant(Tensor::vector(&[f64::NAN, 0.0]));
    assert!(matches!(t.softmax(x), Err(Error::Numeric(_))));
}

proptest! {
    #[test]
    fn softmax_rows_sum_to_one(values in prop::collection::vec(-1000.0f64..1000.0, 1..40)) {
        let mut t = Tape::new();
        let x = t.constant(Tensor::vector(&values));
        let y = t.softmax(x).unwrap();
        let s: f64 = t.value(y).data().iter().sum();
        prop_assert!((s - 1.0).abs() < 1e-12);
    }
}

#[test]
fn elementary_examples() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::scalar(0.0));
    let g = t.gelu(z);
    assert_eq!(t.value(g).item(), 0.0);

    let x = t.constant(Tensor::vector(&[1.0, 2.0, 3.0]));
    let n = t.normalize_last(x, 0.0);
    let r = 1.5f64.sqrt();
    close(t.value(n).data(), &[-r, 0.0, r], 1e-15);

    let sig = t.constant(Tensor::new(&[1, 4, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap());
    let k = t.constant(Tensor::new(&[2, 1, 1], vec![1.0, 1.0]).unwrap());
    let c = t.conv1d(sig, k, 1, 0).unwrap();
    assert_eq!(t.shape(c), &[1, 3, 1]);
    assert_eq!(t.value(c).data(), &[3.0, 5.0, 7.0]);
}

#[test]
fn backward_examples() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(4.0));
    let g = t.backward(x).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 1.0);

    let mut t = Tape::new();
    let x = t.leaf(Tensor::scalar(2.0));
    let y = t.leaf(Tensor::scalar(3.0));
    let p = t.mul(x, y).unwrap();
    let g = t.backward(p).unwrap();
    assert_eq!(g.wrt(x).unwrap().item(), 3.0);
    assert_eq!(g.wrt(y).unwrap().item(), 2.0);

    let v = t.leaf(Tensor::vector(&[1.0, 2.0]));
    assert!(matches!(t.backward(v), Err(Error::Contract(_))));
}

#[test]
fn constants_never_receive_gradient() {
    let mut t = Tape::new();
    let c = t.constant(Tensor::scalar(2.0));
    let x = t.leaf(Tensor::scalar(3.0));
    let p = t.mul(c, x).unwrap();
    let g = t.backward(p).unwrap();
    assert!(g.wrt(c).is_none());
    assert_eq!(g.wrt(x).unwrap().item(), 2.0);
}

#[test]
fn repeated_backward_accumulates_in_store() {
    let mut s = ParamStore::new();
    let id = s.add("x", Tensor::scalar(3.0), Group::Downstream);
    s.zero_grads();
    for _ in 0..2 {
        let mut t = Tape::new();
        let x = t.param(&s, id);
        let sq = t.mul(x, x).unwrap();
        let g = t.backward(sq).unwrap();
        s.accumulate(&g);
    }
    assert_eq!(s.get(id).grad().unwrap().item(), 12.0);
    s.zero_grads();
    assert_eq!(s.get(id).grad().unwrap().item(), 0.0);
}

#[test]
fn fan_out_sums_both_contributions() {
    // y = tanh(x)·x + exp(x): x feeds three consumers.
    let mut s = ParamStore::new();
    let id = s.add("x", Tensor::vector(&[0.3, -0.8]), Group::Downstream);
    let r = grad_check(&mut s, 1e-5, |t, s| {
        let x = t.param(s, id);
        let th = t.tanh(x);
        let a = t.mul(th, x)?;
        let e = t.exp(x);
        let y = t.add(a, e)?;
        Ok(t.sum(y))
    })
    .unwrap();
    assert!(r.max_rel_error < 1e-8, "{r:?}");
}

/// Random parameter store with the given named shapes.
fn random_store(seed: u64, shapes: &[(&str, &[usize])]) -> ParamStore {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = ParamStore::new();
    for (name, shape) in shapes {
        s.add(*name, Tensor::randn(shape, 1.0, &mut rng), Group::Downstream);
    }
    s
}

fn check_op(
    shapes: &[(&str, &[usize])],
    f: impl Fn(&mut Tape, &[Var]) -> Result<Var> + Copy,
) {
    for seed in 0..10 {
        let mut s = random_store(seed, shapes);
        let ids: Vec<_> = s.ids().collect();
        // weight the output so the reduction is not a plain sum
        let r = grad_check(&mut s, 1e-5, |t, s| {
            let vars: Vec<Var> = ids.iter().map(|&id| t.param(s, id)).collect();
            let y = f(t, &vars)?;
            let n = t.value(y).numel();
            let w: Vec<f64> = (0..n).map(|i| 0.5 + (i % 7) as f64 * 0.25).collect();
            let w = t.constant(Tensor::new(t.shape(y), w)?);
            let wy = t.mul(y, w)?;
            Ok(t.sum(wy))
        })
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "seed {seed}: {r:?}");
    }
}

#[test]
fn grad_check_arithmetic_with_broadcast() {
    check_op(&[("a", &[3, 4]), ("b", &[4])], |t, v| t.add(v[0], v[1]));
    check_op(&[("a", &[3, 4]), ("b", &[3, 1])], |t, v| t.sub(v[0], v[1]));
    check_op(&[("a", &[2, 3, 4]), ("b", &[3, 1])], |t, v| t.mul(v[0], v[1]));
    check_op(&[("a", &[3, 4]), ("b", &[4])], |t, v| {
        let d = t.sigmoid(v[1]);
        let d = t.add_scalar(d, 0.5);
        t.div(v[0], d)
    });
    check_op(&[("a", &[5])], |t, v| Ok(t.scale(v[0], -2.5)));
}

#[test]
fn grad_check_matmul_family() {
    check_op(&[("a", &[3, 4]), ("b", &[4, 2])], |t, v| t.matmul(v[0], v[1]));
    check_op(&[("a", &[2, 3, 4]), ("b", &[2, 4, 5])], |t, v| {
        t.batch_matmul(v[0], v[1])
    });
    check_op(&[("x", &[2, 3, 4]), ("w", &[4, 5]), ("b", &[5])], |t, v| {
        t.linear(v[0], v[1], Some(v[2]))
    });
}

#[test]
fn grad_check_nonlinearities() {
    check_op(&[("x", &[6])], |t, v| Ok(t.tanh(v[0])));
    check_op(&[("x", &[6])], |t, v| Ok(t.sigmoid(v[0])));
    check_op(&[("x", &[6])], |t, v| Ok(t.gelu(v[0])));
    check_op(&[("x", &[6])], |t, v| Ok(t.exp(v[0])));
    check_op(&[("x", &[6])], |t, v| {
        let s = t.mul(v[0], v[0])?;
        let s = t.add_scalar(s, 0.5);
        let l = t.log(s);
        let r = t.sqrt(s);
        t.add(l, r)
    });
}

#[test]
fn grad_check_softmax_and_norms() {
    check_op(&[("x", &[3, 5])], |t, v| t.softmax(v[0]));
    check_op(&[("x", &[3, 5])], |t, v| t.log_softmax(v[0]));
    check_op(&[("x", &[3, 5]), ("g", &[5]), ("b", &[5])], |t, v| {
        t.layer_norm(v[0], v[1], v[2], 1e-5)
    });
}

#[test]
fn grad_check_reductions_and_reshapes() {
    check_op(&[("x", &[2, 3, 4])], |t, v| Ok(t.mean(v[0])));
    check_op(&[("x", &[2, 3, 4])], |t, v| t.sum_axis(v[0], 1));
    check_op(&[("x", &[2, 3, 4])], |t, v| t.sum_axis(v[0], 2));
    check_op(&[("a", &[2, 3, 4]), ("b", &[2, 1, 4])], |t, v| {
        t.concat(&[v[0], v[1]], 1)
    });
    check_op(&[("a", &[2, 3]), ("b", &[2, 2])], |t, v| t.concat(&[v[0], v[1]], 1));
    check_op(&[("x", &[2, 5, 3])], |t, v| t.narrow(v[0], 1, 1, 3));
    check_op(&[("x", &[2, 5, 3])], |t, v| t.select(v[0], 1, 4));
    check_op(&[("x", &[4, 3])], |t, v| t.index_select(v[0], &[3, 0, 3, 1]));
    check_op(&[("x", &[4, 3])], |t, v| t.gather_last(v[0], &[2, 0, 1, 1]));
    check_op(&[("x", &[2, 3, 4])], |t, v| t.transpose(v[0]));
    check_op(&[("x", &[2, 3, 4])], |t, v| t.reshape(v[0], &[6, 4]));
}

#[test]
fn grad_check_conv1d() {
    check_op(&[("x", &[2, 9, 3]), ("w", &[3, 3, 4])], |t, v| {
        t.conv1d(v[0], v[1], 2, 0)
    });
    check_op(&[("x", &[2, 7, 2]), ("w", &[5, 2, 3])], |t, v| {
        t.conv1d(v[0], v[1], 2, 2)
    });
}

#[test]
fn straight_through_passes_gradient_unchanged() {
    let mut t = Tape::new();
    let x = t.leaf(Tensor::vector(&[0.2, 0.7]));
    let q = t
        .straight_through(x, Tensor::vector(&[0.0, 1.0]))
        .unwrap();
    assert_eq!(t.value(q).data(), &[0.0, 1.0]);
    let w = t.constant(Tensor::vector(&[3.0, -2.0]));
    let y = t.mul(q, w).unwrap();
    let s = t.sum(y);
    let g = t.backward(s).unwrap();
    assert_eq!(g.wrt(x).unwrap().data(), &[3.0, -2.0]);
}
