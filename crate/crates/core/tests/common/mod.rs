#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use relprune::nn::{BatchNorm2d, Conv2d, Dense, Layer, MaxPool2d, ModelGraph};
use relprune::{LabeledSet, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn uniform(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

pub fn image(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
    Tensor::new(shape.to_vec(), uniform(rng, shape.iter().product(), 1.0)).unwrap()
}

pub fn images(rng: &mut ChaCha8Rng, shape: &[usize], n: usize, classes: usize) -> LabeledSet {
    let imgs = (0..n).map(|_| image(rng, shape)).collect();
    let labels = (0..n).map(|i| i % classes).collect();
    LabeledSet::new(imgs, labels, classes).unwrap()
}

#[derive(Clone, Copy, Debug)]
pub struct NetShape {
    pub convs: usize,
    pub batch_norm: bool,
    pub pool: bool,
    pub gap: bool,
}

/// Random sequential net on `[2, 8, 8]` inputs with every parameter,
/// including batchnorm statistics, drawn at random.
pub fn random_net(rng: &mut ChaCha8Rng, shape: NetShape, classes: usize) -> ModelGraph<f64> {
    let mut layers = Vec::new();
    let mut ch = 2;
    let mut side = 8;
    for _ in 0..shape.convs {
        let out = rng.random_range(2..=5);
        let k = 3;
        let scale = (3.0 / (ch * k * k) as f64).sqrt() * 1.7;
        let w = Tensor::new(vec![out, ch, k, k], uniform(rng, out * ch * k * k, scale)).unwrap();
        layers.push(Layer::Conv2d(Conv2d::new(ch, out, k, 1, 1, w, uniform(rng, out, 0.2)).unwrap()));
        if shape.batch_norm {
            layers.push(Layer::BatchNorm2d(BatchNorm2d {
                channels: out,
                gamma: (0..out).map(|_| rng.random_range(0.5..1.5)).collect(),
                beta: uniform(rng, out, 0.2),
                running_mean: uniform(rng, out, 0.2),
                running_var: (0..out).map(|_| rng.random_range(0.5..1.5)).collect(),
                eps: 1e-5,
            }));
        }
        layers.push(Layer::Relu);
        if shape.pool && side >= 4 {
            layers.push(Layer::MaxPool2d(MaxPool2d { window: 2, stride: 2 }));
            side /= 2;
        }
        ch = out;
    }
    let features = if shape.gap {
        layers.push(Layer::GlobalAvgPool);
        ch
    } else {
        layers.push(Layer::Flatten);
        ch * side * side
    };
    let scale = (3.0 / features as f64).sqrt();
    let w = Tensor::new(vec![classes, features], uniform(rng, classes * features, scale)).unwrap();
    layers.push(Layer::Dense(Dense::new(features, classes, w, uniform(rng, classes, 0.1)).unwrap()));
    ModelGraph::new(vec![2, 8, 8], layers).unwrap()
}

pub fn random_shape(rng: &mut ChaCha8Rng) -> NetShape {
    NetShape {
        convs: rng.random_range(2..=3),
        batch_norm: rng.random_bool(0.5),
        pool: rng.random_bool(0.5),
        gap: rng.random_bool(0.5),
    }
}

pub fn any_net(rng: &mut ChaCha8Rng, classes: usize) -> ModelGraph<f64> {
    let shape = random_shape(rng);
    random_net(rng, shape, classes)
}
