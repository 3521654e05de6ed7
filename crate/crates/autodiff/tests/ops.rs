use cad_autodiff::*;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.gen_range(-1.0..1.0))
}

/// Fixed random weights turn any tensor output into a scalar with a
/// non-degenerate gradient.
fn scalarize(g: &mut Graph, y: Var, seed: u64) -> Result<Var, AutodiffError> {
    let w = g.input(random(g.value(y).shape(), seed));
    let p = g.mul(y, w)?;
    g.sum(p)
}

#[test]
fn relu_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[2], &[-1.0, 2.0]));
    let y = g.relu(x).unwrap();
    assert_eq!(g.value(y).data(), &[0.0, 2.0]);
}

#[test]
fn softmax_of_equal_values_is_uniform() {
    let mut g = Graph::new();
    let x = g.input(Tensor::full(&[4], 1.7));
    let y = g.softmax(x, 0).unwrap();
    for v in g.value(y).data() {
        assert!((v - 0.25).abs() < 1e-15);
    }
}

#[test]
fn dot_gradient_is_other_operand() {
    let q = random(&[6], 1);
    let k = random(&[6], 2);
    let mut g = Graph::new();
    let qv = g.input_tracked(q.clone());
    let kv = g.input(k.clone());
    let p = g.mul(qv, kv).unwrap();
    let s = g.sum(p).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(qv).unwrap(), &k);
    assert!(grads.get(kv).is_none());
    let err = grad_check(
        |g, v| {
            let p = g.mul(v[0], v[1])?;
            g.sum(p)
        },
        &[q, k],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn square_grad_check_matches_derivative() {
    let mut g = Graph::new();
    let x = g.input_tracked(Tensor::scalar(3.0));
    let y = g.mul(x, x).unwrap();
    let grads = g.backward(y).unwrap();
    assert_eq!(grads.get(x).unwrap().item(), 6.0);
    let rep = grad_check_with(|g, v| g.mul(v[0], v[0]), &[Tensor::scalar(3.0)], GradCheckOptions::default()).unwrap();
    assert!(rep.max_abs_error < 1e-8, "{rep:?}");
}

#[test]
fn shape_errors() {
    let mut g = Graph::new();
    let a = g.input(Tensor::zeros(&[2, 3]));
    let b = g.input(Tensor::zeros(&[3, 2]));
    assert!(matches!(g.add(a, b), Err(AutodiffError::ShapeMismatch(_))));
    assert!(g.matmul(a, a).is_err());
    assert!(g.softmax(a, 2).is_err());
    let odd = g.input(Tensor::zeros(&[1, 3, 4]));
    assert!(g.maxpool2d(odd).is_err());
    let x = g.input(Tensor::zeros(&[2, 4, 4]));
    let w = g.input(Tensor::zeros(&[1, 3, 3, 3]));
    assert!(g.conv2d_polar(x, w, None, 1).is_err());
    let w = g.input(Tensor::zeros(&[1, 2, 3, 3]));
    assert!(g.conv2d_polar(x, w, None, 3).is_err());
    assert!(g.conv2d_polar(x, w, None, 2).is_ok());
}

#[test]
fn linear_softmax_grad_checks() {
    let err = grad_check(
        |g, v| {
            let y = g.linear(v[0], v[1], v[2])?;
            let s = g.softmax(y, 1)?;
            scalarize(g, s, 9)
        },
        &[random(&[3, 4], 3), random(&[4, 5], 4), random(&[5], 5)],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn elementwise_and_shape_ops_grad_check() {
    let err = grad_check(
        |g, v| {
            let a = g.sigmoid(v[0])?;
            let b = g.sub(a, v[1])?;
            let c = g.scale(b, 1.5)?;
            let c = g.shift(c, 0.25)?;
            let d = g.concat(&[c, v[1]], 1)?;
            let d = g.transpose2d(d)?;
            let d = g.reshape(d, &[2, 3, 4])?;
            let s = g.sum_axis0(d)?;
            let m = g.mul_bcast(d, s)?;
            scalarize(g, m, 11)
        },
        &[random(&[4, 3], 6), random(&[4, 3], 7)],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn max_and_relu_grad_check_off_ties() {
    // entries are kept at least 0.1 away from ties and kinks
    let a = t(&[4], &[0.5, -0.4, 0.9, -0.8]);
    let b = t(&[4], &[0.2, 0.3, -0.5, 0.6]);
    let err = grad_check(
        |g, v| {
            let m = g.max(v[0], v[1])?;
            let r = g.relu(v[0])?;
            let s = g.add(m, r)?;
            scalarize(g, s, 12)
        },
        &[a, b],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn identity_kernel_is_identity() {
    let x = random(&[3, 4, 6], 13);
    let mut w = Tensor::zeros(&[3, 3, 1, 1]);
    for c in 0..3 {
        w.data_mut()[c * 3 + c] = 1.0;
    }
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let wv = g.input(w);
    let y = g.conv2d_polar(xv, wv, None, 1).unwrap();
    assert_eq!(g.value(y), &x);

    // 3x3 kernel with a single center tap is the identity too
    let mut w3 = Tensor::zeros(&[3, 3, 3, 3]);
    for c in 0..3 {
        w3.data_mut()[((c * 3 + c) * 3 + 1) * 3 + 1] = 1.0;
    }
    let wv = g.input(w3);
    let y = g.conv2d_polar(xv, wv, None, 1).unwrap();
    assert_eq!(g.value(y), &x);
}

fn roll_w(x: &Tensor, s: usize) -> Tensor {
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(x.shape());
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                out.data_mut()[(ch * h + i) * w + (j + s) % w] = x.data()[(ch * h + i) * w + j];
            }
        }
    }
    out
}

#[test]
fn conv_is_shift_equivariant_along_azimuth() {
    let x = random(&[2, 5, 8], 14);
    let w = random(&[3, 2, 3, 3], 15);
    let b = random(&[3], 16);
    let conv = |x: &Tensor| {
        let mut g = Graph::new();
        let xv = g.input(x.clone());
        let wv = g.input(w.clone());
        let bv = g.input(b.clone());
        let y = g.conv2d_polar(xv, wv, Some(bv), 1).unwrap();
        g.value(y).clone()
    };
    for s in 0..8 {
        assert_eq!(conv(&roll_w(&x, s)), roll_w(&conv(&x), s), "shift {s}");
    }
}

#[test]
fn conv_matches_direct_sum() {
    let (c, h, wd, o, k) = (2, 4, 6, 3, 3);
    let x = random(&[c, h, wd], 17);
    let w = random(&[o, c, k, k], 18);
    let mut g = Graph::new();
    let xv = g.input(x.clone());
    let wv = g.input(w.clone());
    for stride in [1, 2] {
        let y = g.conv2d_polar(xv, wv, None, stride).unwrap();
        let y = g.value(y);
        assert_eq!(y.shape(), &[o, h / stride, wd / stride]);
        for oc in 0..o {
            for i in 0..h / stride {
                for j in 0..wd / stride {
                    let mut s = 0.0;
                    for ic in 0..c {
                        for di in 0..k {
                            for dj in 0..k {
                                let hi = (i * stride + di) as isize - 1;
                                if hi < 0 || hi >= h as isize {
                                    continue;
                                }
                                let wj = ((j * stride + dj) as isize - 1).rem_euclid(wd as isize) as usize;
                                s += w.data()[((oc * c + ic) * k + di) * k + dj] * x.data()[(ic * h + hi as usize) * wd + wj];
                            }
                        }
                    }
                    let got = y.data()[(oc * (h / stride) + i) * (wd / stride) + j];
                    assert!((got - s).abs() < 1e-12);
                }
            }
        }
    }
}

#[test]
fn conv_grad_check() {
    for (stride, k) in [(1, 3), (2, 3), (1, 1)] {
        let err = grad_check(
            |g, v| {
                let y = g.conv2d_polar(v[0], v[1], Some(v[2]), stride)?;
                scalarize(g, y, 19)
            },
            &[random(&[2, 4, 6], 20), random(&[3, 2, k, k], 21), random(&[3], 22)],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-4, "stride {stride} k {k}: {err}");
    }
}

#[test]
fn pool_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let p = g.maxpool2d(x).unwrap();
    assert_eq!(g.value(p), &t(&[1, 1, 1], &[4.0]));

    let c = g.input(Tensor::full(&[2, 4, 6], 0.7));
    let p = g.maxpool2d(c).unwrap();
    let u = g.upsample_nearest(p).unwrap();
    assert_eq!(g.value(u), g.value(c));
}

#[test]
fn pool_upsample_grad_check_off_ties() {
    // distinct values: a permutation of a spread grid
    let n = 2 * 4 * 6;
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let mut vals: Vec<f64> = (0..n).map(|i| i as f64 * 0.1).collect();
    for i in (1..n).rev() {
        vals.swap(i, rng.gen_range(0..=i));
    }
    let err = grad_check(
        |g, v| {
            let p = g.maxpool2d(v[0])?;
            let u = g.upsample_nearest(p)?;
            scalarize(g, u, 24)
        },
        &[t(&[2, 4, 6], &vals)],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-4, "{err}");
}

#[test]
fn scatter_max_examples() {
    let mut g = Graph::new();
    let x = g.input(t(&[2, 2], &[1.0, -2.0, 3.0, 4.0]));
    let y = g.scatter_max(x, &[2, 0], 3).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 4.0, 0.0, 0.0, 1.0, -2.0]);
    assert!(matches!(g.scatter_max(x, &[0, 3], 3), Err(AutodiffError::IndexOutOfRange { index: 3, len: 3 })));
}

#[test]
fn scatter_max_gradient_goes_to_argmax() {
    let mut g = Graph::new();
    let x = g.input_tracked(t(&[3, 1], &[1.0, 5.0, 2.0]));
    let y = g.scatter_max(x, &[0, 0, 1], 3).unwrap();
    let s = g.sum(y).unwrap();
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(x).unwrap().data(), &[0.0, 1.0, 1.0]);
}

#[test]
fn custom_op_backward_is_used() {
    struct Cube;
    impl CustomOp for Cube {
        fn name(&self) -> &'static str {
            "cube"
        }
        fn backward(&self, inputs: &[&Tensor], _out: &Tensor, grad: &Tensor) -> Vec<Option<Tensor>> {
            vec![Some(inputs[0].zip_map(grad, |x, g| 3.0 * x * x * g))]
        }
    }
    let err = grad_check(
        |g, v| {
            let val = g.value(v[0]).map(|x| x * x * x);
            let y = g.custom(&[v[0]], val, Box::new(Cube))?;
            scalarize(g, y, 25)
        },
        &[random(&[5], 26)],
        1e-5,
    )
    .unwrap();
    assert!(err <= 1e-6, "{err}");
}

#[test]
fn params_accumulate_every_use() {
    let mut store = ParamStore::new();
    let id = store.add("w", Tensor::scalar(2.0)).unwrap();
    assert!(store.add("w", Tensor::scalar(0.0)).is_err());
    let mut g = Graph::new();
    let a = g.param(&store, id);
    let b = g.param(&store, id);
    let y = g.mul(a, b).unwrap();
    let grads = g.backward(y).unwrap();
    let mut acc = store.zeros_like();
    grads.accumulate_into(&mut acc);
    assert_eq!(acc[0].item(), 4.0);
}

#[cfg(debug_assertions)]
#[test]
fn non_finite_values_trip() {
    let mut g = Graph::new();
    let x = g.input(Tensor::scalar(1e300));
    assert!(matches!(g.mul(x, x), Err(AutodiffError::NonFinite { op: "mul" })));
}

#[test]
fn forward_is_deterministic() {
    let run = || {
        let mut g = Graph::new();
        let x = g.input(random(&[4, 8, 8], 27));
        let w = g.input(random(&[6, 4, 3, 3], 28));
        let y = g.conv2d_polar(x, w, None, 2).unwrap();
        let y = g.relu(y).unwrap();
        let y = g.upsample_nearest(y).unwrap();
        let y = g.softmax(y, 1).unwrap();
        g.value(y).clone()
    };
    assert_eq!(run().data(), run().data());
}

#[test]
fn optimizers_descend_a_quadratic() {
    let target = random(&[5], 29);
    for mut opt in [Box::new(Sgd::new(0.1)) as Box<dyn Optimizer>, Box::new(Adam::new(0.05))] {
        let mut store = ParamStore::new();
        let id = store.add("x", Tensor::zeros(&[5])).unwrap();
        let loss = |store: &ParamStore| -> (f64, Vec<Tensor>) {
            let mut g = Graph::new();
            let x = g.param(store, id);
            let tv = g.input(target.clone());
            let d = g.sub(x, tv).unwrap();
            let sq = g.mul(d, d).unwrap();
            let l = g.sum(sq).unwrap();
            let mut acc = store.zeros_like();
            g.backward(l).unwrap().accumulate_into(&mut acc);
            (g.value(l).item(), acc)
        };
        let (l0, _) = loss(&store);
        for _ in 0..300 {
            let (_, grads) = loss(&store);
            opt.step(&mut store, &grads);
        }
        let (l1, _) = loss(&store);
        assert!(l1 < 1e-3 * l0.max(1e-3), "{l0} -> {l1}");
    }
}

#[test]
fn checkpoint_round_trip_and_rejects_garbage() {
    let mut store = ParamStore::new();
    store.add("enc.w", random(&[3, 7], 30)).unwrap();
    store.add("head.b", random(&[1], 31)).unwrap();
    let bytes = encode_checkpoint("{\"k\":1}", &store);
    let (header, back) = decode_checkpoint(&bytes).unwrap();
    assert_eq!(header, "{\"k\":1}");
    for ((n1, a), (n2, b)) in store.iter().zip(back.iter()) {
        assert_eq!(n1, n2);
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert_eq!(*y, *x as f32 as f64);
        }
    }
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("m.ckpt");
    save_checkpoint(&p, "h", &store).unwrap();
    assert_eq!(load_checkpoint(&p).unwrap().1.len(), 2);

    assert!(decode_checkpoint(b"NOTACKPT").is_err());
    assert!(decode_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(decode_checkpoint(&extra).is_err());
}

proptest! {
    #[test]
    fn softmax_sums_to_one(vals in prop::collection::vec(-30.0f64..30.0, 12), axis in 0usize..2) {
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![3, 4], vals).unwrap());
        let y = g.softmax(x, axis).unwrap();
        let y = g.value(y);
        let (n_out, n_ax) = if axis == 0 { (4, 3) } else { (3, 4) };
        for o in 0..n_out {
            let s: f64 = (0..n_ax).map(|d| if axis == 0 { y.data()[d * 4 + o] } else { y.data()[o * 4 + d] }).sum();
            prop_assert!((s - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn scatter_max_matches_brute_force(
        rows in prop::collection::vec((0usize..6, prop::collection::vec(-5.0f64..5.0, 3)), 1..30)
    ) {
        let ids: Vec<usize> = rows.iter().map(|r| r.0).collect();
        let data: Vec<f64> = rows.iter().flat_map(|r| r.1.clone()).collect();
        let mut g = Graph::new();
        let x = g.input(Tensor::new(vec![rows.len(), 3], data).unwrap());
        let y = g.scatter_max(x, &ids, 6).unwrap();
        let y = g.value(y);
        for p in 0..6 {
            for c in 0..3 {
                let expect = rows.iter().filter(|r| r.0 == p).map(|r| r.1[c]).fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
                prop_assert_eq!(y.data()[p * 3 + c], expect.unwrap_or(0.0));
            }
        }
    }

    #[test]
    fn checkpoint_decoder_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..200)) {
        let _ = decode_checkpoint(&bytes);
        let mut prefixed = b"CADCKPT1".to_vec();
        prefixed.extend_from_slice(&bytes);
        let _ = decode_checkpoint(&prefixed);
    }
}
