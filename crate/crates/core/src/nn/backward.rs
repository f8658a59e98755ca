//! Reverse-mode gradients for the toy trainer.

use super::layer::Layer;
use super::model::{ModelGraph, Trace};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub enum ParamGrad<T> {
    Conv { weight: Vec<T>, bias: Vec<T> },
    BatchNorm { gamma: Vec<T>, beta: Vec<T> },
    Dense { weight: Vec<T>, bias: Vec<T> },
}

impl<T: Scalar> ParamGrad<T> {
    fn parts(&self) -> [&Vec<T>; 2] {
        match self {
            ParamGrad::Conv { weight, bias } | ParamGrad::Dense { weight, bias } => [weight, bias],
            ParamGrad::BatchNorm { gamma, beta } => [gamma, beta],
        }
    }

    fn parts_mut(&mut self) -> [&mut Vec<T>; 2] {
        match self {
            ParamGrad::Conv { weight, bias } | ParamGrad::Dense { weight, bias } => [weight, bias],
            ParamGrad::BatchNorm { gamma, beta } => [gamma, beta],
        }
    }
}

/// Per-layer parameter gradients; `None` for parameter-free layers.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T> {
    pub layers: Vec<Option<ParamGrad<T>>>,
}

impl<T: Scalar> Gradients<T> {
    /// True when the model has no parameters at all.
    pub fn is_empty(&self) -> bool {
        self.layers.iter().all(Option::is_none)
    }

    /// Flattened in the order of [`ModelGraph::trainable_parameters`].
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flatten()
            .flat_map(|g| g.parts().into_iter().flat_map(|v| v.iter().copied()))
            .collect()
    }

    pub fn accumulate(&mut self, other: &Gradients<T>) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            if let (Some(a), Some(b)) = (a, b) {
                for (dst, src) in a.parts_mut().into_iter().zip(b.parts()) {
                    dst.iter_mut().zip(src).for_each(|(d, &s)| *d = *d + s);
                }
            }
        }
    }

    pub fn scale(&mut self, k: T) {
        for g in self.layers.iter_mut().flatten() {
            for v in g.parts_mut() {
                v.iter_mut().for_each(|x| *x = *x * k);
            }
        }
    }
}

impl<T: Scalar> ModelGraph<T> {
    /// Gradients of a scalar loss with respect to every trainable parameter,
    /// given the forward trace of one input and `dLoss/dLogits`.
    pub fn backward(&self, trace: &Trace<T>, loss_grad: &Tensor<T>) -> Result<Gradients<T>> {
        let n = self.layers().len();
        if trace.outputs.len() != n {
            return Err(Error::invalid("trace does not belong to this model"));
        }
        if loss_grad.shape() != trace.logits().shape() {
            return Err(Error::shape(n - 1, format!("loss gradient {:?} vs logits {:?}", loss_grad.shape(), trace.logits().shape())));
        }
        let mut grads: Vec<Option<ParamGrad<T>>> = vec![None; n];
        let mut g = loss_grad.clone();
        for i in (0..n).rev() {
            if let Some(conv) = self.mask_source(i) {
                self.zero_masked(conv, &mut g);
            }
            let x = trace.layer_input(i);
            let xd = x.data();
            let gd = g.data();
            let dx: Vec<T> = match &self.layers()[i] {
                Layer::Conv2d(c) => {
                    let geo = c.geometry(x.shape()).expect("validated");
                    let (dw, db, dx) = c.backward(&geo, xd, gd);
                    grads[i] = Some(ParamGrad::Conv { weight: dw, bias: db });
                    dx
                }
                Layer::BatchNorm2d(b) => {
                    let hw = x.len() / b.channels;
                    let aff = b.affine();
                    let mut dgamma = vec![T::zero(); b.channels];
                    let mut dbeta = vec![T::zero(); b.channels];
                    for c in 0..b.channels {
                        let inv = (b.running_var[c] + b.eps).sqrt();
                        for j in c * hw..(c + 1) * hw {
                            dgamma[c] = dgamma[c] + gd[j] * (xd[j] - b.running_mean[c]) / inv;
                            dbeta[c] = dbeta[c] + gd[j];
                        }
                    }
                    grads[i] = Some(ParamGrad::BatchNorm { gamma: dgamma, beta: dbeta });
                    gd.iter().enumerate().map(|(j, &v)| v * aff[j / hw].0).collect()
                }
                Layer::Relu => {
                    xd.iter().zip(gd).map(|(&a, &v)| if a > T::zero() { v } else { T::zero() }).collect()
                }
                Layer::MaxPool2d(p) => {
                    let mut dx = vec![T::zero(); x.len()];
                    for (o, src) in p.argmax_indices(x.shape(), xd).into_iter().enumerate() {
                        dx[src] = dx[src] + gd[o];
                    }
                    dx
                }
                Layer::GlobalAvgPool => {
                    let c = x.shape()[0];
                    let hw = x.len() / c;
                    let k = T::of(hw as f64).recip();
                    (0..x.len()).map(|j| gd[j / hw] * k).collect()
                }
                Layer::Flatten => gd.to_vec(),
                Layer::Dense(d) => {
                    let dw = super::conv::matmul_nt(gd, xd, d.out_features, 1, d.in_features);
                    grads[i] = Some(ParamGrad::Dense { weight: dw, bias: gd.to_vec() });
                    d.transpose(gd)
                }
            };
            g = Tensor::from_parts(x.shape().to_vec(), dx);
        }
        Ok(Gradients { layers: grads })
    }

    /// Plain SGD step `p -= lr * grad`.
    pub fn apply_gradients(&mut self, grads: &Gradients<T>, lr: T) -> Result<()> {
        let params = self.trainable_parameters();
        let flat = grads.flatten();
        if flat.len() != params.len() {
            return Err(Error::invalid("gradient set does not match model parameters"));
        }
        let updated: Vec<T> = params.iter().zip(&flat).map(|(&p, &g)| p - lr * g).collect();
        self.set_trainable_parameters(&updated)
    }
}
