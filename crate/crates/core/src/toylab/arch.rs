use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::nn::{BatchNorm2d, Conv2d, Dense, Layer, MaxPool2d, ModelGraph};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Head {
    /// Global average pooling, then one dense layer.
    GlobalAvgPool,
    /// Flatten, then one dense layer.
    Flatten,
}

/// Conv blocks of `conv -> [batchnorm] -> relu -> [maxpool 2x2]`, followed
/// by the head.
#[derive(Clone, Debug, PartialEq)]
pub struct Architecture {
    pub conv_channels: Vec<usize>,
    pub kernel: usize,
    pub pool: bool,
    pub batch_norm: bool,
    pub head: Head,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture { conv_channels: vec![8, 16], kernel: 3, pool: true, batch_norm: false, head: Head::GlobalAvgPool }
    }
}

impl Architecture {
    /// He-initialized model. Biases start at zero; batchnorm starts as the
    /// identity.
    pub fn build<T: Scalar>(&self, input_shape: &[usize], num_classes: usize, seed: u64) -> Result<ModelGraph<T>> {
        let mut rng = super::rng(seed, 2);
        let mut normal = |n: usize, fan_in: usize| -> Vec<T> {
            let d = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
            (0..n).map(|_| T::of(d.sample(&mut rng))).collect()
        };
        let mut layers = Vec::new();
        let mut in_ch = input_shape[0];
        for &out in &self.conv_channels {
            let k = self.kernel;
            let w = normal(out * in_ch * k * k, in_ch * k * k);
            layers.push(Layer::Conv2d(Conv2d::new(
                in_ch,
                out,
                k,
                1,
                k / 2,
                Tensor::new(vec![out, in_ch, k, k], w)?,
                vec![T::zero(); out],
            )?));
            if self.batch_norm {
                layers.push(Layer::BatchNorm2d(BatchNorm2d {
                    channels: out,
                    gamma: vec![T::one(); out],
                    beta: vec![T::zero(); out],
                    running_mean: vec![T::zero(); out],
                    running_var: vec![T::one(); out],
                    eps: T::of(1e-5),
                }));
            }
            layers.push(Layer::Relu);
            if self.pool {
                layers.push(Layer::MaxPool2d(MaxPool2d { window: 2, stride: 2 }));
            }
            in_ch = out;
        }
        // Probe the feature shape to size the head.
        let probe = ModelGraph::<T>::new(input_shape.to_vec(), {
            let mut l = layers.clone();
            l.push(Layer::Flatten);
            l
        })?;
        let flat = probe.output_shape(probe.layers().len() - 1)[0];
        let features = match self.head {
            Head::GlobalAvgPool => {
                layers.push(Layer::GlobalAvgPool);
                in_ch
            }
            Head::Flatten => {
                layers.push(Layer::Flatten);
                flat
            }
        };
        let w = normal(num_classes * features, features);
        layers.push(Layer::Dense(Dense::new(
            features,
            num_classes,
            Tensor::new(vec![num_classes, features], w)?,
            vec![T::zero(); num_classes],
        )?));
        ModelGraph::new(input_shape.to_vec(), layers)
    }
}
