use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::tensor::Tensor;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn rand_conv(rng: &mut ChaCha8Rng, i: usize, o: usize, k: usize, stride: usize, pad: usize) -> Conv2d<f64> {
    let w = rand_vec(rng, o * i * k * k);
    let b = rand_vec(rng, o);
    Conv2d::new(i, o, k, stride, pad, Tensor::new(vec![o, i, k, k], w).unwrap(), b).unwrap()
}

fn rand_bn(rng: &mut ChaCha8Rng, c: usize) -> BatchNorm2d<f64> {
    BatchNorm2d {
        channels: c,
        gamma: (0..c).map(|_| rng.random_range(0.5..2.0)).collect(),
        beta: rand_vec(rng, c),
        running_mean: rand_vec(rng, c),
        running_var: (0..c).map(|_| rng.random_range(0.5..2.0)).collect(),
        eps: 1e-5,
    }
}

fn rand_dense(rng: &mut ChaCha8Rng, i: usize, o: usize) -> Dense<f64> {
    Dense::new(i, o, Tensor::new(vec![o, i], rand_vec(rng, o * i)).unwrap(), rand_vec(rng, o)).unwrap()
}

fn rand_input(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    Tensor::new(shape.to_vec(), rand_vec(rng, shape.iter().product())).unwrap()
}

/// conv -> bn -> relu -> pool -> conv -> relu -> flatten -> dense
fn small_net(seed: u64) -> ModelGraph<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = vec![
        Layer::Conv2d(rand_conv(&mut rng, 2, 3, 3, 1, 1)),
        Layer::BatchNorm2d(rand_bn(&mut rng, 3)),
        Layer::Relu,
        Layer::MaxPool2d(MaxPool2d { window: 2, stride: 2 }),
        Layer::Conv2d(rand_conv(&mut rng, 3, 4, 3, 1, 1)),
        Layer::Relu,
        Layer::Flatten,
        Layer::Dense(rand_dense(&mut rng, 4 * 3 * 3, 3)),
    ];
    ModelGraph::new(vec![2, 6, 6], layers).unwrap()
}

/// Direct sliding-window convolution, independent of the im2col path.
fn naive_conv(c: &Conv2d<f64>, x: &Tensor<f64>) -> Vec<f64> {
    let (ci, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let k = c.kernel;
    let oh = (h + 2 * c.padding - k) / c.stride + 1;
    let ow = (w + 2 * c.padding - k) / c.stride + 1;
    let mut out = vec![0.0; c.out_channels * oh * ow];
    for o in 0..c.out_channels {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = c.bias[o];
                for i in 0..ci {
                    for ky in 0..k {
                        for kx in 0..k {
                            let y = (oy * c.stride + ky) as isize - c.padding as isize;
                            let xx = (ox * c.stride + kx) as isize - c.padding as isize;
                            if y >= 0 && xx >= 0 && (y as usize) < h && (xx as usize) < w {
                                let wv = c.weight.data()[((o * ci + i) * k + ky) * k + kx];
                                acc += wv * x.data()[(i * h + y as usize) * w + xx as usize];
                            }
                        }
                    }
                }
                out[(o * oh + oy) * ow + ox] = acc;
            }
        }
    }
    out
}

#[test]
fn identity_1x1_conv_reproduces_input() {
    let mut w = vec![0.0; 9];
    for c in 0..3 {
        w[c * 3 + c] = 1.0;
    }
    let conv = Conv2d::new(3, 3, 1, 1, 0, Tensor::new(vec![3, 3, 1, 1], w).unwrap(), vec![0.0; 3]).unwrap();
    let m = ModelGraph::new(vec![3, 4, 4], vec![Layer::Conv2d(conv), Layer::Flatten]).unwrap();
    let x = Tensor::from_fn(&[3, 4, 4], |i| i as f64 * 0.5 - 7.0);
    assert_eq!(m.predict(&x).unwrap().data(), x.data());
}

#[test]
fn relu_clamps_negatives() {
    let m = ModelGraph::new(vec![1, 1, 3], vec![Layer::Relu, Layer::Flatten]).unwrap();
    let x = Tensor::new(vec![1, 1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
    assert_eq!(m.predict(&x).unwrap().data(), &[0.0, 0.0, 2.0]);
}

#[test]
fn conv_matches_naive_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let conv = rand_conv(&mut rng, 1, 2, 3, 1, 0);
    let x = rand_input(&mut rng, &[1, 4, 4]);
    let g = conv.geometry(x.shape()).unwrap();
    let fast = conv.forward(&g, x.data());
    let slow = naive_conv(&conv, &x);
    for (a, b) in fast.iter().zip(&slow) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn conv_oracle_randomized_geometries() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    for _ in 0..30 {
        let k = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let pad = rng.random_range(0..=1);
        let (ci, co) = (rng.random_range(1..=3), rng.random_range(1..=3));
        let (h, w) = (rng.random_range(k..=6), rng.random_range(k..=6));
        let conv = rand_conv(&mut rng, ci, co, k, stride, pad);
        let x = rand_input(&mut rng, &[ci, h, w]);
        let g = conv.geometry(x.shape()).unwrap();
        let fast = conv.forward(&g, x.data());
        let slow = naive_conv(&conv, &x);
        assert_eq!(fast.len(), slow.len());
        assert!(fast.iter().zip(&slow).all(|(a, b)| (a - b).abs() < 1e-12));
    }
}

#[test]
fn input_shape_mismatch_names_layer() {
    let m = small_net(1);
    let err = m.forward(&Tensor::zeros(&[2, 5, 6])).unwrap_err();
    assert!(matches!(err, crate::Error::Shape { layer: Some(0), .. }), "{err}");
}

#[test]
fn graph_validation() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    // channel chain broken
    let bad = ModelGraph::new(
        vec![1, 4, 4],
        vec![Layer::Conv2d(rand_conv(&mut rng, 2, 2, 3, 1, 1)), Layer::GlobalAvgPool],
    );
    assert!(bad.is_err());
    // batchnorm not after conv
    let bad = ModelGraph::new(vec![1, 4, 4], vec![Layer::Relu, Layer::BatchNorm2d(rand_bn(&mut rng, 1)), Layer::Flatten]);
    assert!(bad.is_err());
    // output not a vector
    let bad = ModelGraph::new(vec![1, 4, 4], vec![Layer::<f64>::Relu]);
    assert!(bad.is_err());
}

#[test]
fn forward_is_deterministic() {
    let m = small_net(3);
    let x = rand_input(&mut ChaCha8Rng::seed_from_u64(4), &[2, 6, 6]);
    let a = m.predict(&x).unwrap();
    let b = m.predict(&x).unwrap();
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
}

#[test]
fn masking_equals_post_hoc_zeroing() {
    let m = small_net(5);
    let x = rand_input(&mut ChaCha8Rng::seed_from_u64(6), &[2, 6, 6]);
    for g in 0..m.filter_count() {
        let mut masked = m.clone();
        masked.set_alive(g, false).unwrap();
        let id = m.filter_index().locate(g).unwrap();
        // Zero the channel after the conv (and after its batchnorm), then
        // run the rest of the unmasked network by hand.
        let trace = m.forward(&x).unwrap();
        let mut last_masked_layer = id.layer;
        if matches!(m.layers().get(id.layer + 1), Some(Layer::BatchNorm2d(_))) {
            last_masked_layer += 1;
        }
        let mut cur = trace.outputs[last_masked_layer].clone();
        let per = cur.len() / cur.shape()[0];
        cur.data_mut()[id.channel * per..(id.channel + 1) * per].fill(0.0);
        for l in last_masked_layer + 1..m.layers().len() {
            cur = m.layers()[l].forward(&cur, m.output_shape(l));
        }
        let got = masked.predict(&x).unwrap();
        assert!(got.max_abs_diff(&cur) == 0.0, "filter {g}");
    }
}

#[test]
fn masked_filter_output_is_zero_downstream_of_batchnorm() {
    let mut m = small_net(7);
    m.set_alive(1, false).unwrap();
    let x = rand_input(&mut ChaCha8Rng::seed_from_u64(8), &[2, 6, 6]);
    let t = m.forward(&x).unwrap();
    for layer in 0..3 {
        let out = &t.outputs[layer];
        let per = out.len() / 3;
        assert!(out.data()[per..2 * per].iter().all(|&v| v == 0.0), "layer {layer}");
    }
}

#[test]
fn last_filter_guard() {
    let mut m = small_net(9);
    m.set_alive(0, false).unwrap();
    m.set_alive(1, false).unwrap();
    assert!(matches!(m.set_alive(2, false), Err(crate::Error::Starvation(_))));
    assert!(m.set_mask(vec![false, false, false, true, true, true, true]).is_err());
    assert!(m.set_mask(vec![true; 6]).is_err());
}

#[test]
fn filter_index_bijection() {
    let m = small_net(10);
    let idx = m.filter_index();
    assert_eq!(idx.len(), 7);
    for g in 0..idx.len() {
        let id = idx.locate(g).unwrap();
        assert_eq!(idx.global(id.conv, id.channel), g);
    }
    assert_eq!(idx.locate(3), Some(FilterId { layer: 4, conv: 1, channel: 0 }));
    assert_eq!(idx.locate(7), None);
}

#[test]
fn dense_single_neuron_gradient() {
    // y = w x, loss = y, x = 2  =>  dL/dw = 2
    let d = Dense::new(1, 1, Tensor::new(vec![1, 1], vec![0.7]).unwrap(), vec![0.0]).unwrap();
    let m = ModelGraph::new(vec![1, 1, 1], vec![Layer::Flatten, Layer::Dense(d)]).unwrap();
    let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
    let t = m.forward(&x).unwrap();
    let g = m.backward(&t, &Tensor::new(vec![1], vec![1.0]).unwrap()).unwrap();
    assert_eq!(g.flatten(), vec![2.0, 1.0]);
}

#[test]
fn zero_loss_gradient_gives_zero_gradients() {
    let m = small_net(13);
    let x = rand_input(&mut ChaCha8Rng::seed_from_u64(14), &[2, 6, 6]);
    let t = m.forward(&x).unwrap();
    let g = m.backward(&t, &Tensor::zeros(&[3])).unwrap();
    assert!(g.flatten().iter().all(|&v| v == 0.0));
    assert_eq!(g.flatten().len(), m.trainable_parameters().len());
}

#[test]
fn parameter_free_model_has_empty_gradients() {
    let m = ModelGraph::<f64>::new(vec![2, 3, 3], vec![Layer::GlobalAvgPool]).unwrap();
    let x = Tensor::from_fn(&[2, 3, 3], |i| i as f64);
    let t = m.forward(&x).unwrap();
    let g = m.backward(&t, &Tensor::from_fn(&[2], |_| 1.0)).unwrap();
    assert!(g.is_empty());
    assert!(g.flatten().is_empty());
}

#[test]
fn analytic_gradient_matches_finite_difference() {
    let m = small_net(15);
    let x = rand_input(&mut ChaCha8Rng::seed_from_u64(16), &[2, 6, 6]);
    // loss = sum_i c_i * logit_i
    let c = Tensor::new(vec![3], vec![0.3, -1.1, 0.8]).unwrap();
    let loss = |m: &ModelGraph<f64>| -> f64 {
        m.predict(&x).unwrap().data().iter().zip(c.data()).map(|(a, b)| a * b).sum()
    };
    let analytic = m.backward(&m.forward(&x).unwrap(), &c).unwrap().flatten();
    let p0 = m.trainable_parameters();
    let h = 1e-5;
    for i in 0..p0.len() {
        let mut p = p0.clone();
        let mut mm = m.clone();
        p[i] = p0[i] + h;
        mm.set_trainable_parameters(&p).unwrap();
        let up = loss(&mm);
        p[i] = p0[i] - h;
        mm.set_trainable_parameters(&p).unwrap();
        let down = loss(&mm);
        let fd = (up - down) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / fd.abs().max(analytic[i].abs()).max(1e-6);
        assert!(err < 1e-4, "param {i}: fd {fd} analytic {}", analytic[i]);
    }
}

#[test]
fn fold_identity_batchnorm_keeps_weights() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let conv = rand_conv(&mut rng, 2, 3, 3, 1, 1);
    let bn = BatchNorm2d {
        channels: 3,
        gamma: vec![1.0; 3],
        beta: vec![0.0; 3],
        running_mean: vec![0.0; 3],
        running_var: vec![1.0; 3],
        eps: 0.0,
    };
    assert_eq!(fold_batchnorm(&conv, &bn).unwrap(), conv);
    let bn2 = BatchNorm2d { gamma: vec![2.0; 3], ..bn };
    let f = fold_batchnorm(&conv, &bn2).unwrap();
    let doubled: Vec<f64> = conv.weight.data().iter().map(|w| 2.0 * w).collect();
    assert_eq!(f.weight.data(), doubled.as_slice());
    assert!(fold_batchnorm(&conv, &BatchNorm2d { channels: 2, ..rand_bn(&mut rng, 2) }).is_err());
}

#[test]
fn folded_model_matches_unfolded_forward() {
    for seed in 0..10 {
        let m = small_net(100 + seed);
        let f = m.fold_batchnorms().unwrap();
        assert!(!f.layers().iter().any(|l| matches!(l, Layer::BatchNorm2d(_))));
        let x = rand_input(&mut ChaCha8Rng::seed_from_u64(200 + seed), &[2, 6, 6]);
        let d = m.predict(&x).unwrap().max_abs_diff(&f.predict(&x).unwrap());
        assert!(d < 1e-10, "seed {seed}: {d}");
    }
}

#[test]
fn generic_over_f32() {
    let m = small_net(18);
    let m32: ModelGraph<f32> = {
        let layers = m
            .layers()
            .iter()
            .map(|l| match l {
                Layer::Conv2d(c) => Layer::Conv2d(
                    Conv2d::new(
                        c.in_channels,
                        c.out_channels,
                        c.kernel,
                        c.stride,
                        c.padding,
                        c.weight.cast(),
                        c.bias.iter().map(|&v| v as f32).collect(),
                    )
                    .unwrap(),
                ),
                Layer::BatchNorm2d(b) => Layer::BatchNorm2d(BatchNorm2d {
                    channels: b.channels,
                    gamma: b.gamma.iter().map(|&v| v as f32).collect(),
                    beta: b.beta.iter().map(|&v| v as f32).collect(),
                    running_mean: b.running_mean.iter().map(|&v| v as f32).collect(),
                    running_var: b.running_var.iter().map(|&v| v as f32).collect(),
                    eps: b.eps as f32,
                }),
                Layer::Dense(d) => Layer::Dense(
                    Dense::new(d.in_features, d.out_features, d.weight.cast(), d.bias.iter().map(|&v| v as f32).collect())
                        .unwrap(),
                ),
                Layer::Relu => Layer::Relu,
                Layer::MaxPool2d(p) => Layer::MaxPool2d(*p),
                Layer::GlobalAvgPool => Layer::GlobalAvgPool,
                Layer::Flatten => Layer::Flatten,
            })
            .collect();
        ModelGraph::new(vec![2, 6, 6], layers).unwrap()
    };
    let x = rand_input(&mut ChaCha8Rng::seed_from_u64(19), &[2, 6, 6]);
    let a = m.predict(&x).unwrap();
    let b = m32.predict(&x.cast()).unwrap();
    for (p, q) in a.data().iter().zip(b.data()) {
        assert!((p - *q as f64).abs() < 1e-4);
    }
}

#[test]
fn compaction_matches_masked_forward() {
    let mut m = small_net(20);
    m.set_alive(1, false).unwrap();
    m.set_alive(4, false).unwrap();
    m.set_alive(6, false).unwrap();
    let c = m.compacted().unwrap();
    assert_eq!(c.filter_count(), 4);
    assert_eq!(c.pruned_count(), 0);
    let x = rand_input(&mut ChaCha8Rng::seed_from_u64(21), &[2, 6, 6]);
    assert!(m.predict(&x).unwrap().max_abs_diff(&c.predict(&x).unwrap()) < 1e-10);
}
