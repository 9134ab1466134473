use proptest::prelude::*;
use ssnn::autodiff::{batchnorm, gradcheck, Graph, Mode, RunningStats, Tensor, Var};
use ssnn::rng::Stream;

fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

fn random(shape: &[usize], rng: &mut Stream) -> Tensor {
    let n = shape.iter().product();
    t(shape, &(0..n).map(|_| rng.uniform(-1.0, 1.0)).collect::<Vec<_>>())
}

/// Scalar loss: random projection of `y`.
fn project(g: &mut Graph, y: Var, seed: u64) -> Var {
    let mut rng = Stream::new(seed);
    let shape = g.shape(y).to_vec();
    let w = g.constant(random(&shape, &mut rng));
    let p = g.mul(y, w).unwrap();
    g.sum(p)
}

fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, stride: usize, pad: usize) -> Tensor {
    let (xs, ws) = (x.shape(), w.shape());
    let (n, c, h, wd) = (xs[0], xs[1], xs[2] as isize, xs[3] as isize);
    let (o, kh, kw) = (ws[0], ws[2], ws[3]);
    let oh = (xs[2] + 2 * pad - kh) / stride + 1;
    let ow = (xs[3] + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for bi in 0..n {
        for oc in 0..o {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = b.data()[oc];
                    for ic in 0..c {
                        for i in 0..kh {
                            for j in 0..kw {
                                let y = (oy * stride + i) as isize - pad as isize;
                                let xx = (ox * stride + j) as isize - pad as isize;
                                if y >= 0 && y < h && xx >= 0 && xx < wd {
                                    let xi = ((bi * c + ic) * xs[2] + y as usize) * xs[3] + xx as usize;
                                    let wi = ((oc * c + ic) * kh + i) * kw + j;
                                    acc += x.data()[xi] * w.data()[wi];
                                }
                            }
                        }
                    }
                    out[((bi * o + oc) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    t(&[n, o, oh, ow], &out)
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn conv1d_sliding_dot_product() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 3], &[1.0, 2.0, 3.0]));
    let w = g.constant(t(&[1, 1, 2], &[1.0, 1.0]));
    let b = g.constant(t(&[1], &[0.0]));
    let y = g.conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 5.0]);
    assert_eq!(g.shape(y), &[1, 1, 2]);
}

#[test]
fn conv1d_identity_kernel() {
    let mut rng = Stream::new(1);
    let xt = random(&[2, 3, 9], &mut rng);
    let mut wt = Tensor::zeros(&[3, 3, 1]);
    for c in 0..3 {
        wt.data_mut()[c * 3 + c] = 1.0;
    }
    let mut g = Graph::new();
    let x = g.constant(xt.clone());
    let w = g.constant(wt);
    let b = g.constant(Tensor::zeros(&[3]));
    let y = g.conv1d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y), &xt);
}

#[test]
fn conv2d_small_cases() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 2, 2], &[1.0, 2.0, 3.0, 4.0]));
    let w = g.constant(t(&[1, 1, 1, 1], &[2.0]));
    let b = g.constant(t(&[1], &[0.0]));
    let y = g.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[2.0, 4.0, 6.0, 8.0]);

    let x = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let w = g.constant(Tensor::full(&[1, 1, 3, 3], 1.0));
    let y = g.conv2d(x, w, b, 1, 0).unwrap();
    assert_eq!(g.value(y).data(), &[9.0]);
    assert_eq!(g.shape(y), &[1, 1, 1, 1]);
}

#[test]
fn conv2d_matches_direct_loops() {
    let mut rng = Stream::new(2);
    for (stride, pad, k) in [(1, 0, 3), (1, 1, 3), (2, 1, 3), (2, 3, 7), (2, 0, 1)] {
        let xt = random(&[2, 3, 11, 9], &mut rng);
        let wt = random(&[4, 3, k, k], &mut rng);
        let bt = random(&[4], &mut rng);
        let mut g = Graph::new();
        let (x, w, b) = (g.constant(xt.clone()), g.constant(wt.clone()), g.constant(bt.clone()));
        let y = g.conv2d(x, w, b, stride, pad).unwrap();
        let oracle = naive_conv2d(&xt, &wt, &bt, stride, pad);
        assert_eq!(g.shape(y), oracle.shape());
        assert!(max_abs_diff(g.value(y).data(), oracle.data()) < 1e-12);
    }
}

#[test]
fn conv_shape_errors() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2, 4]));
    let w = g.constant(Tensor::zeros(&[3, 1, 3]));
    let b = g.constant(Tensor::zeros(&[3]));
    assert!(g.conv1d(x, w, b, 1, 0).is_err());
    let w = g.constant(Tensor::zeros(&[3, 2, 7]));
    assert!(g.conv1d(x, w, b, 1, 0).is_err());
}

#[test]
fn conv_gradients() {
    let mut rng = Stream::new(3);
    let ins = vec![random(&[2, 2, 8], &mut rng), random(&[3, 2, 3], &mut rng), random(&[3], &mut rng)];
    let r = gradcheck(&ins, |g, v| {
        let y = g.conv1d(v[0], v[1], v[2], 2, 1)?;
        Ok(project(g, y, 10))
    }, 1e-5)
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");

    let ins = vec![random(&[2, 2, 6, 5], &mut rng), random(&[3, 2, 3, 3], &mut rng), random(&[3], &mut rng)];
    let r = gradcheck(&ins, |g, v| {
        let y = g.conv2d(v[0], v[1], v[2], 2, 1)?;
        Ok(project(g, y, 11))
    }, 1e-5)
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn batchnorm_normalizes_and_applies_affine() {
    let mut rng = Stream::new(4);
    let xt = random(&[4, 3, 5], &mut rng);
    let mut g = Graph::new();
    let x = g.constant(xt);
    let gamma = g.constant(Tensor::full(&[3], 1.0));
    let beta = g.constant(Tensor::zeros(&[3]));
    let mut stats = RunningStats::identity(3);
    let y = batchnorm(&mut g, x, gamma, beta, &mut stats, Mode::Train, 0.1, 0.0).unwrap();
    let yv = g.value(y).data().to_vec();
    for c in 0..3 {
        let vals: Vec<f64> = (0..4).flat_map(|b| yv[(b * 3 + c) * 5..(b * 3 + c) * 5 + 5].to_vec()).collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
        assert!(mean.abs() < 1e-6 && (var - 1.0).abs() < 1e-6);
    }
    assert!(stats.mean.iter().any(|&m| m != 0.0));

    let gamma2 = g.constant(Tensor::full(&[3], 2.0));
    let beta3 = g.constant(Tensor::full(&[3], 3.0));
    let mut stats = RunningStats::identity(3);
    let z = batchnorm(&mut g, x, gamma2, beta3, &mut stats, Mode::Train, 0.1, 0.0).unwrap();
    for (zi, yi) in g.value(z).data().iter().zip(&yv) {
        assert!((zi - (3.0 + 2.0 * yi)).abs() < 1e-12);
    }
}

#[test]
fn batchnorm_degenerate_batch() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::zeros(&[1, 2]));
    let gamma = g.constant(Tensor::full(&[2], 1.0));
    let beta = g.constant(Tensor::zeros(&[2]));
    let mut stats = RunningStats::identity(2);
    let err = batchnorm(&mut g, x, gamma, beta, &mut stats, Mode::Train, 0.1, 1e-5).unwrap_err();
    assert!(matches!(err, ssnn::Error::DegenerateBatch(_)));
    // eval mode is fine on a single value
    assert!(batchnorm(&mut g, x, gamma, beta, &mut stats, Mode::Eval, 0.1, 1e-5).is_ok());
}

#[test]
fn batchnorm_gradients() {
    let mut rng = Stream::new(5);
    let ins = vec![random(&[3, 2, 4], &mut rng), random(&[2], &mut rng), random(&[2], &mut rng)];
    for mode in [Mode::Train, Mode::Eval] {
        let r = gradcheck(&ins, |g, v| {
            let mut stats = RunningStats {
                mean: vec![0.2, -0.1],
                var: vec![0.8, 1.3],
            };
            let y = batchnorm(g, v[0], v[1], v[2], &mut stats, mode, 0.1, 1e-5)?;
            Ok(project(g, y, 12))
        }, 1e-5)
        .unwrap();
        assert!(r.max_rel_error < 1e-4, "{mode:?} {r:?}");
    }
}

#[test]
fn relu_values_and_gradients() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[3], &[-1.0, 0.0, 2.0]));
    let y = g.relu(x);
    assert_eq!(g.value(y).data(), &[0.0, 0.0, 2.0]);

    let x = g.leaf(t(&[3], &[-1.0, -2.0, -0.5]));
    let y = g.relu(x);
    let s = g.sum(y);
    assert_eq!(g.value(y).data(), &[0.0; 3]);
    assert_eq!(g.backward(s).unwrap().get(x).unwrap(), &[0.0; 3]);

    let ins = vec![t(&[6], &[-0.9, -0.3, 0.2, 0.4, 1.1, -1.5])];
    let r = gradcheck(&ins, |g, v| {
        let y = g.relu(v[0]);
        Ok(project(g, y, 13))
    }, 1e-5)
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn maxpool_values_and_gradients() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 1, 4], &[1.0, 3.0, 2.0, 4.0]));
    let y = g.maxpool1d(x, 2, 2, 0).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, 4.0]);

    let x = g.constant(Tensor::full(&[1, 2, 5, 5], 7.0));
    let y = g.maxpool2d(x, 3, 2, 1).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == 7.0));

    // ties route to the first element
    let x = g.leaf(t(&[1, 1, 2], &[5.0, 5.0]));
    let y = g.maxpool1d(x, 2, 2, 0).unwrap();
    let s = g.sum(y);
    assert_eq!(g.backward(s).unwrap().get(x).unwrap(), &[1.0, 0.0]);

    // distinct values so no window is tied
    let mut rng = Stream::new(6);
    let mut vals: Vec<f64> = (0..2 * 2 * 7 * 6).map(|i| i as f64 * 0.1).collect();
    rng.shuffle(&mut vals);
    let ins = vec![t(&[2, 2, 7, 6], &vals)];
    let r = gradcheck(&ins, |g, v| {
        let y = g.maxpool2d(v[0], 3, 2, 1)?;
        Ok(project(g, y, 14))
    }, 1e-5)
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn global_avg_pool_values_and_gradients() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[1, 1, 3], &[2.0, 4.0, 6.0]));
    let y = g.global_avg_pool(x).unwrap();
    assert_eq!(g.value(y).data(), &[4.0]);
    assert_eq!(g.shape(y), &[1, 1]);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert!(grads.get(x).unwrap().iter().all(|&d| (d - 1.0 / 3.0).abs() < 1e-15));

    let c = g.constant(Tensor::full(&[2, 3, 4, 5], -1.25));
    let y = g.global_avg_pool(c).unwrap();
    assert!(g.value(y).data().iter().all(|&v| v == -1.25));

    let mut rng = Stream::new(7);
    let ins = vec![random(&[2, 3, 4, 3], &mut rng)];
    let r = gradcheck(&ins, |g, v| {
        let y = g.global_avg_pool(v[0])?;
        Ok(project(g, y, 15))
    }, 1e-5)
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn linear_values_and_gradients() {
    let mut g = Graph::new();
    let x = g.constant(t(&[1, 2], &[1.0, 2.0]));
    let w = g.constant(t(&[2, 2], &[1.0, 1.0, 1.0, -1.0]));
    let b = g.constant(Tensor::zeros(&[2]));
    let y = g.linear(x, w, b).unwrap();
    assert_eq!(g.value(y).data(), &[3.0, -1.0]);

    let eye = g.constant(t(&[2, 2], &[1.0, 0.0, 0.0, 1.0]));
    let y = g.linear(x, eye, b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0]);

    let mut rng = Stream::new(8);
    let ins = vec![random(&[3, 4], &mut rng), random(&[5, 4], &mut rng), random(&[5], &mut rng)];
    let r = gradcheck(&ins, |g, v| {
        let y = g.linear(v[0], v[1], v[2])?;
        Ok(project(g, y, 16))
    }, 1e-5)
    .unwrap();
    assert!(r.max_rel_error < 1e-4, "{r:?}");
}

#[test]
fn concat_values_and_gradients() {
    let mut g = Graph::new();
    let a = g.leaf(t(&[1, 2], &[1.0, 2.0]));
    let b = g.leaf(t(&[1, 1], &[3.0]));
    let y = g.concat(a, b).unwrap();
    assert_eq!(g.value(y).data(), &[1.0, 2.0, 3.0]);
    let s = g.sum(y);
    let grads = g.backward(s).unwrap();
    assert_eq!(grads.get(a).unwrap(), &[1.0, 1.0]);
    assert_eq!(grads.get(b).unwrap(), &[1.0]);

    let e = g.leaf(Tensor::zeros(&[1, 0]));
    let y = g.concat(a, e).unwrap();
    assert_eq!(g.value(y), g.value(a));
    let s = g.sum(y);
    assert_eq!(g.backward(s).unwrap().get(a).unwrap(), &[1.0, 1.0]);
}

#[test]
fn backward_basics() {
    let mut g = Graph::new();
    let x = g.leaf(Tensor::scalar(3.0));
    let sq = g.mul(x, x).unwrap();
    assert_eq!(g.backward(sq).unwrap().get(x).unwrap(), &[6.0]);

    let y = g.leaf(Tensor::scalar(1.5));
    let twice = g.add(y, y).unwrap();
    assert_eq!(g.backward(twice).unwrap().get(y).unwrap(), &[2.0]);

    let v = g.leaf(Tensor::zeros(&[2]));
    assert!(g.backward(v).is_err());
}

#[test]
fn backward_sums_over_consumers() {
    let mut g = Graph::new();
    let x = g.leaf(t(&[2], &[1.0, -2.0]));
    let a = g.scale(x, 3.0);
    let b = g.relu(x);
    let c = g.mul(x, x).unwrap();
    let ab = g.add(a, b).unwrap();
    let abc = g.add(ab, c).unwrap();
    let s = g.sum(abc);
    let grads = g.backward(s).unwrap();
    // d/dx [3x + relu(x) + x^2] = 3 + 1[x>0] + 2x
    assert_eq!(grads.get(x).unwrap(), &[3.0 + 1.0 + 2.0, 3.0 - 4.0]);
}

proptest! {
    #[test]
    fn conv1d_output_length(len in 1usize..40, k in 1usize..8, stride in 1usize..4, pad in 0usize..4) {
        prop_assume!(len + 2 * pad >= k);
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(&[1, 1, len]));
        let w = g.constant(Tensor::zeros(&[2, 1, k]));
        let b = g.constant(Tensor::zeros(&[2]));
        let y = g.conv1d(x, w, b, stride, pad).unwrap();
        prop_assert_eq!(g.shape(y)[2], (len + 2 * pad - k) / stride + 1);
    }
}
