use rand::seq::SliceRandom;

use super::arch::Architecture;
use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::metrics::per_class_accuracy;
use crate::nn::{Gradients, ModelGraph};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { epochs: 30, lr: 0.05, batch_size: 8, seed: 0 }
    }
}

#[derive(Clone, Debug)]
pub struct TrainReport<T> {
    pub model: ModelGraph<T>,
    pub train_accuracy: f64,
    /// Mean loss per epoch.
    pub losses: Vec<f64>,
}

/// Softmax cross-entropy loss and its gradient with respect to the logits.
pub fn cross_entropy<T: Scalar>(logits: &Tensor<T>, label: usize) -> (T, Tensor<T>) {
    let max = logits.data().iter().copied().fold(T::neg_infinity(), T::max);
    let exp: Vec<T> = logits.data().iter().map(|&z| (z - max).exp()).collect();
    let sum: T = exp.iter().copied().sum();
    let loss = sum.ln() - (logits.data()[label] - max);
    let grad = Tensor::from_fn(logits.shape(), |i| exp[i] / sum - if i == label { T::one() } else { T::zero() });
    (loss, grad)
}

/// Minibatch SGD on cross-entropy from a fresh initialization of `arch`.
/// Initialization and batch order both derive from `cfg.seed`.
pub fn train<T: Scalar>(arch: &Architecture, data: &LabeledSet<T>, cfg: &TrainConfig) -> Result<TrainReport<T>> {
    if cfg.batch_size == 0 || !(cfg.lr >= 0.0) || !cfg.lr.is_finite() {
        return Err(Error::invalid("batch size must be positive and lr non-negative"));
    }
    let mut model: ModelGraph<T> = arch.build(data.image_shape(), data.num_classes(), cfg.seed)?;
    let mut rng = super::rng(cfg.seed, 3);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut losses = Vec::with_capacity(cfg.epochs);
    let lr = T::of(cfg.lr);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut acc: Option<Gradients<T>> = None;
            for &i in batch {
                let trace = model.forward(&data.images()[i])?;
                let (loss, grad) = cross_entropy(trace.logits(), data.labels()[i]);
                if !loss.is_finite() {
                    return Err(Error::Divergence { epoch, detail: format!("loss {loss} on sample {i}") });
                }
                epoch_loss += loss.as_f64();
                let g = model.backward(&trace, &grad)?;
                match &mut acc {
                    Some(a) => a.accumulate(&g),
                    None => acc = Some(g),
                }
            }
            let mut g = acc.expect("non-empty batch");
            g.scale(T::of(1.0 / batch.len() as f64));
            model.apply_gradients(&g, lr).map_err(|e| match e {
                Error::NonFinite(d) => Error::Divergence { epoch, detail: d },
                other => other,
            })?;
        }
        losses.push(epoch_loss / data.len() as f64);
    }
    let train_accuracy = per_class_accuracy(&model, data)?.overall();
    Ok(TrainReport { model, train_accuracy, losses })
}
