//! Minimal sequential CNN: layers, masked forward inference, gradients,
//! and batchnorm folding.

mod backward;
pub(crate) mod conv;
mod fold;
mod layer;
mod model;

pub use backward::{Gradients, ParamGrad};
pub use fold::fold_batchnorm;
pub use layer::{BatchNorm2d, Conv2d, Dense, Layer, MaxPool2d};
pub use model::{FilterId, FilterIndex, ModelGraph, Trace};

#[cfg(test)]
mod tests;
