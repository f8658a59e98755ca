use super::layer::{BatchNorm2d, Conv2d};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Merges an inference-mode batchnorm into the conv it follows:
/// `w' = w * g / sqrt(var + eps)` and `b' = (b - mean) * g / sqrt(var + eps) + beta`.
pub fn fold_batchnorm<T: Scalar>(conv: &Conv2d<T>, bn: &BatchNorm2d<T>) -> Result<Conv2d<T>> {
    if conv.out_channels != bn.channels {
        return Err(Error::Graph(format!(
            "cannot fold batchnorm over {} channels into conv with {} outputs",
            bn.channels, conv.out_channels
        )));
    }
    let per = conv.in_channels * conv.kernel * conv.kernel;
    let aff = bn.affine();
    let weight: Vec<T> =
        conv.weight.data().iter().enumerate().map(|(i, &w)| w * aff[i / per].0).collect();
    let bias = conv
        .bias
        .iter()
        .zip(&aff)
        .zip(&bn.running_mean)
        .zip(&bn.beta)
        .map(|(((&b, &(scale, _)), &mean), &beta)| (b - mean) * scale + beta)
        .collect();
    Conv2d::new(
        conv.in_channels,
        conv.out_channels,
        conv.kernel,
        conv.stride,
        conv.padding,
        Tensor::new(conv.weight.shape().to_vec(), weight)?,
        bias,
    )
}
