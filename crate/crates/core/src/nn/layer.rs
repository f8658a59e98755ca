//! Layer kinds and their per-sample kernels.

use super::conv::{col2im, im2col, matmul, matmul_nt, matmul_tn, Geometry};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 2-D convolution over a `[C, H, W]` input. Weight layout `[out, in, k, k]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

/// Inference-mode batch normalization: running statistics are parameters,
/// not batch estimates.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    /// Stability constant added to the variance.
    pub eps: T,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaxPool2d {
    pub window: usize,
    pub stride: usize,
}

/// Fully connected layer. Weight layout `[out, in]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub in_features: usize,
    pub out_features: usize,
    pub weight: Tensor<T>,
    pub bias: Vec<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    BatchNorm2d(BatchNorm2d<T>),
    Relu,
    MaxPool2d(MaxPool2d),
    GlobalAvgPool,
    Flatten,
    Dense(Dense<T>),
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        weight: Tensor<T>,
        bias: Vec<T>,
    ) -> Result<Self> {
        let c = Conv2d { in_channels, out_channels, kernel, stride, padding, weight, bias };
        c.check()?;
        Ok(c)
    }

    fn check(&self) -> Result<()> {
        let want = [self.out_channels, self.in_channels, self.kernel, self.kernel];
        if self.weight.shape() != want {
            return Err(Error::Graph(format!("conv weight {:?}, expected {want:?}", self.weight.shape())));
        }
        if self.bias.len() != self.out_channels {
            return Err(Error::Graph(format!("conv bias length {} != {}", self.bias.len(), self.out_channels)));
        }
        if self.stride == 0 {
            return Err(Error::Graph("conv stride 0".into()));
        }
        Ok(())
    }

    pub(crate) fn geometry(&self, shape: &[usize]) -> Option<Geometry> {
        match shape {
            &[c, h, w] if c == self.in_channels => {
                Geometry::new(c, h, w, self.kernel, self.stride, self.padding)
            }
            _ => None,
        }
    }

    /// Convolution without bias, returning `[out, Ho*Wo]` and the column
    /// matrix used.
    pub(crate) fn linear_part(&self, g: &Geometry, input: &[T]) -> (Vec<T>, Vec<T>) {
        let cols = im2col(g, input);
        let z = matmul(self.weight.data(), &cols, self.out_channels, g.rows(), g.cols());
        (z, cols)
    }

    pub(crate) fn forward(&self, g: &Geometry, input: &[T]) -> Vec<T> {
        let (mut z, _) = self.linear_part(g, input);
        let n = g.cols();
        for (o, &b) in self.bias.iter().enumerate() {
            for v in &mut z[o * n..(o + 1) * n] {
                *v = *v + b;
            }
        }
        z
    }

    /// Transposed convolution of `[out, Ho*Wo]` back onto the input grid.
    pub(crate) fn transpose(&self, g: &Geometry, grad_out: &[T]) -> Vec<T> {
        let dcols = matmul_tn(self.weight.data(), grad_out, self.out_channels, g.rows(), g.cols());
        col2im(g, &dcols)
    }

    /// Returns (dW, db, dInput).
    pub(crate) fn backward(&self, g: &Geometry, input: &[T], grad_out: &[T]) -> (Vec<T>, Vec<T>, Vec<T>) {
        let cols = im2col(g, input);
        let n = g.cols();
        let dw = matmul_nt(grad_out, &cols, self.out_channels, n, g.rows());
        let db = (0..self.out_channels).map(|o| grad_out[o * n..(o + 1) * n].iter().copied().sum()).collect();
        let dx = self.transpose(g, grad_out);
        (dw, db, dx)
    }
}

impl<T: Scalar> BatchNorm2d<T> {
    /// Per-channel `(scale, shift)` with `y = scale * x + shift`.
    pub fn affine(&self) -> Vec<(T, T)> {
        (0..self.channels)
            .map(|c| {
                let s = self.gamma[c] / (self.running_var[c] + self.eps).sqrt();
                (s, self.beta[c] - self.running_mean[c] * s)
            })
            .collect()
    }

    fn check(&self) -> Result<()> {
        let c = self.channels;
        if [self.gamma.len(), self.beta.len(), self.running_mean.len(), self.running_var.len()]
            .iter()
            .any(|&l| l != c)
        {
            return Err(Error::Graph(format!("batchnorm parameter lengths differ from {c} channels")));
        }
        if self.running_var.iter().any(|&v| v + self.eps <= T::zero()) || self.eps < T::zero() {
            return Err(Error::Graph("batchnorm variance plus eps must be positive".into()));
        }
        Ok(())
    }
}

impl<T: Scalar> Dense<T> {
    pub fn new(in_features: usize, out_features: usize, weight: Tensor<T>, bias: Vec<T>) -> Result<Self> {
        let d = Dense { in_features, out_features, weight, bias };
        d.check()?;
        Ok(d)
    }

    fn check(&self) -> Result<()> {
        if self.weight.shape() != [self.out_features, self.in_features] {
            return Err(Error::Graph(format!(
                "dense weight {:?}, expected [{}, {}]",
                self.weight.shape(),
                self.out_features,
                self.in_features
            )));
        }
        if self.bias.len() != self.out_features {
            return Err(Error::Graph("dense bias length mismatch".into()));
        }
        Ok(())
    }

    pub(crate) fn linear_part(&self, input: &[T]) -> Vec<T> {
        matmul(self.weight.data(), input, self.out_features, self.in_features, 1)
    }

    pub(crate) fn transpose(&self, grad_out: &[T]) -> Vec<T> {
        matmul_tn(self.weight.data(), grad_out, self.out_features, self.in_features, 1)
    }
}

impl MaxPool2d {
    pub(crate) fn out_hw(&self, h: usize, w: usize) -> Option<(usize, usize)> {
        if self.window == 0 || self.stride == 0 || h < self.window || w < self.window {
            return None;
        }
        Some(((h - self.window) / self.stride + 1, (w - self.window) / self.stride + 1))
    }

    /// Flat input index of the first maximal element of every window.
    pub(crate) fn argmax_indices<T: Scalar>(&self, shape: &[usize], input: &[T]) -> Vec<usize> {
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let (oh, ow) = self.out_hw(h, w).expect("validated pool geometry");
        let mut idx = Vec::with_capacity(c * oh * ow);
        for ch in 0..c {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = (ch * h + oy * self.stride) * w + ox * self.stride;
                    for dy in 0..self.window {
                        for dx in 0..self.window {
                            let i = (ch * h + oy * self.stride + dy) * w + ox * self.stride + dx;
                            if input[i] > input[best] {
                                best = i;
                            }
                        }
                    }
                    idx.push(best);
                }
            }
        }
        idx
    }
}

impl<T: Scalar> Layer<T> {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::BatchNorm2d(_) => "batchnorm2d",
            Layer::Relu => "relu",
            Layer::MaxPool2d(_) => "maxpool2d",
            Layer::GlobalAvgPool => "globalavgpool",
            Layer::Flatten => "flatten",
            Layer::Dense(_) => "dense",
        }
    }

    pub fn has_parameters(&self) -> bool {
        matches!(self, Layer::Conv2d(_) | Layer::BatchNorm2d(_) | Layer::Dense(_))
    }

    /// Output shape for a given input shape, validating hyperparameters.
    pub fn output_shape(&self, id: usize, input: &[usize]) -> Result<Vec<usize>> {
        let mismatch = |what: &str| Error::shape(id, format!("{} got input {input:?}: {what}", self.kind_name()));
        match self {
            Layer::Conv2d(c) => {
                c.check().map_err(|e| Error::Graph(format!("layer {id}: {e}")))?;
                let g = c.geometry(input).ok_or_else(|| mismatch("expected [in_channels, H, W] covering the kernel"))?;
                Ok(vec![c.out_channels, g.out_height, g.out_width])
            }
            Layer::BatchNorm2d(b) => {
                b.check().map_err(|e| Error::Graph(format!("layer {id}: {e}")))?;
                match input {
                    [c, _, _] if *c == b.channels => Ok(input.to_vec()),
                    _ => Err(mismatch("channel count")),
                }
            }
            Layer::Relu => Ok(input.to_vec()),
            Layer::MaxPool2d(p) => match input {
                &[c, h, w] => {
                    let (oh, ow) = p.out_hw(h, w).ok_or_else(|| mismatch("pool window larger than input"))?;
                    Ok(vec![c, oh, ow])
                }
                _ => Err(mismatch("expected [C, H, W]")),
            },
            Layer::GlobalAvgPool => match input {
                &[c, _, _] => Ok(vec![c]),
                _ => Err(mismatch("expected [C, H, W]")),
            },
            Layer::Flatten => Ok(vec![input.iter().product()]),
            Layer::Dense(d) => {
                d.check().map_err(|e| Error::Graph(format!("layer {id}: {e}")))?;
                match input {
                    [n] if *n == d.in_features => Ok(vec![d.out_features]),
                    _ => Err(mismatch("expected [in_features]")),
                }
            }
        }
    }

    /// Unmasked forward of one sample. `input` has already been checked
    /// against the layer's expected shape.
    pub(crate) fn forward(&self, input: &Tensor<T>, out_shape: &[usize]) -> Tensor<T> {
        let x = input.data();
        let data = match self {
            Layer::Conv2d(c) => {
                let g = c.geometry(input.shape()).expect("validated conv geometry");
                c.forward(&g, x)
            }
            Layer::BatchNorm2d(b) => {
                let hw = input.len() / b.channels;
                let aff = b.affine();
                x.iter().enumerate().map(|(i, &v)| aff[i / hw].0 * v + aff[i / hw].1).collect()
            }
            Layer::Relu => x.iter().map(|&v| v.max(T::zero())).collect(),
            Layer::MaxPool2d(p) => p.argmax_indices(input.shape(), x).into_iter().map(|i| x[i]).collect(),
            Layer::GlobalAvgPool => {
                let c = input.shape()[0];
                let hw = input.len() / c;
                let n = T::of(hw as f64);
                x.chunks(hw).map(|ch| ch.iter().copied().sum::<T>() / n).collect()
            }
            Layer::Flatten => x.to_vec(),
            Layer::Dense(d) => {
                let mut z = d.linear_part(x);
                for (v, &b) in z.iter_mut().zip(&d.bias) {
                    *v = *v + b;
                }
                z
            }
        };
        Tensor::from_parts(out_shape.to_vec(), data)
    }
}
