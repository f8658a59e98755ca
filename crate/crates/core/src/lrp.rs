//! Relevance propagation with the epsilon rule and per-filter aggregation.
//!
//! For a linear map `z_j = sum_i a_i w_ij (+ b_j)` the relevance of input
//! `i` is
//!
//! ```text
//! R_i = sum_j a_i w_ij / (z_j + eps * sign(z_j)) * R_j
//! ```
//!
//! where `z_j` excludes the bias and `sign(0)` is taken as `+1`, so the
//! denominator is never zero. Summed over `i`, this returns `R_j` up to the
//! stabilizer, which makes propagation conservative as `eps -> 0`.
//! Batchnorm is folded into the preceding conv before propagation, ReLU and
//! Flatten pass relevance through, max pooling routes relevance to the
//! winning input, and global average pooling spreads it evenly.

use std::borrow::Cow;

use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::{Layer, ModelGraph};
use crate::scalar::Scalar;
use crate::tensor::{argmax, Tensor};

/// Which output logit seeds the backward pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SeedMode {
    #[default]
    TrueClass,
    PredictedClass,
}

/// How a filter's spatial relevance map is reduced to one score.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum FilterAggregation {
    #[default]
    Signed,
    Absolute,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrpConfig<T> {
    pub epsilon: T,
    pub seed_mode: SeedMode,
    pub aggregation: FilterAggregation,
}

impl<T: Scalar> LrpConfig<T> {
    pub fn new(epsilon: T) -> Result<Self> {
        let cfg = LrpConfig { epsilon, ..Self::default() };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon > T::zero()) || !self.epsilon.is_finite() {
            return Err(Error::invalid(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        Ok(())
    }
}

impl<T: Scalar> Default for LrpConfig<T> {
    fn default() -> Self {
        LrpConfig { epsilon: T::of(1e-6), seed_mode: SeedMode::default(), aggregation: FilterAggregation::default() }
    }
}

/// One score per global filter id, plus which filters were alive when the
/// scores were computed.
#[derive(Clone, Debug, PartialEq)]
pub struct RelevanceMap<T> {
    scores: Vec<T>,
    alive: Vec<bool>,
}

impl<T: Scalar> RelevanceMap<T> {
    /// All filters alive.
    pub fn new(scores: Vec<T>) -> Self {
        let alive = vec![true; scores.len()];
        RelevanceMap { scores, alive }
    }

    pub fn with_alive(scores: Vec<T>, alive: Vec<bool>) -> Result<Self> {
        if scores.len() != alive.len() {
            return Err(Error::invalid("relevance and alive vectors differ in length"));
        }
        Ok(RelevanceMap { scores, alive })
    }

    pub fn zeros(alive: &[bool]) -> Self {
        RelevanceMap { scores: vec![T::zero(); alive.len()], alive: alive.to_vec() }
    }

    pub fn scores(&self) -> &[T] {
        &self.scores
    }

    pub fn alive(&self) -> &[bool] {
        &self.alive
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn alive_count(&self) -> usize {
        self.alive.iter().filter(|a| **a).count()
    }

    pub(crate) fn scores_mut(&mut self) -> &mut [T] {
        &mut self.scores
    }

    /// Elementwise sum. Alive flags must agree.
    pub fn accumulate(&mut self, other: &RelevanceMap<T>) -> Result<()> {
        if self.alive != other.alive {
            return Err(Error::invalid("relevance maps computed under different masks"));
        }
        self.scores.iter_mut().zip(&other.scores).for_each(|(a, &b)| *a = *a + b);
        Ok(())
    }
}

/// Relevance at every layer for one image.
#[derive(Clone, Debug)]
pub struct RelevanceTrace<T> {
    /// The class whose logit was seeded.
    pub class: usize,
    pub seeded: T,
    /// Relevance attributed to the network input.
    pub input: Tensor<T>,
    /// `layers[i]` is the relevance at the output of layer `i` of the
    /// batchnorm-folded model.
    pub layers: Vec<Tensor<T>>,
    /// The model the trace was computed on (batchnorm folded).
    pub folded: ModelGraph<T>,
}

fn stabilize<T: Scalar>(z: T, eps: T) -> T {
    if z >= T::zero() {
        z + eps
    } else {
        z - eps
    }
}

fn redistribute_ratio<T: Scalar>(relevance: &[T], z: &[T], eps: T) -> Vec<T> {
    relevance.iter().zip(z).map(|(&r, &z)| r / stabilize(z, eps)).collect()
}

/// Full backward relevance pass seeded at `class`'s logit.
pub fn propagate<T: Scalar>(
    model: &ModelGraph<T>,
    image: &Tensor<T>,
    class: usize,
    cfg: &LrpConfig<T>,
) -> Result<RelevanceTrace<T>> {
    cfg.validate()?;
    if class >= model.num_classes() {
        return Err(Error::invalid(format!("class {class} outside 0..{}", model.num_classes())));
    }
    let folded: Cow<ModelGraph<T>> = if model.layers().iter().any(|l| matches!(l, Layer::BatchNorm2d(_))) {
        Cow::Owned(model.fold_batchnorms()?)
    } else {
        Cow::Borrowed(model)
    };
    let trace = folded.forward(image)?;
    if let Some(i) = trace.outputs.iter().position(|t| !t.is_finite()) {
        return Err(Error::NonFinite(format!("forward output of layer {i}")));
    }
    let logits = trace.logits();
    let seeded = logits.data()[class];
    let mut r = Tensor::zeros(logits.shape());
    r.data_mut()[class] = seeded;

    let n = folded.layers().len();
    let mut layers = vec![Tensor::zeros(&[1]); n];
    let eps = cfg.epsilon;
    for i in (0..n).rev() {
        let a = trace.layer_input(i);
        let ad = a.data();
        let rd = r.data();
        let next: Vec<T> = match &folded.layers()[i] {
            Layer::Conv2d(c) => {
                let g = c.geometry(a.shape()).expect("validated");
                let (z, _) = c.linear_part(&g, ad);
                let s = redistribute_ratio(rd, &z, eps);
                let back = c.transpose(&g, &s);
                ad.iter().zip(back).map(|(&x, b)| x * b).collect()
            }
            Layer::Dense(d) => {
                let z = d.linear_part(ad);
                let s = redistribute_ratio(rd, &z, eps);
                let back = d.transpose(&s);
                ad.iter().zip(back).map(|(&x, b)| x * b).collect()
            }
            Layer::Relu | Layer::Flatten => rd.to_vec(),
            Layer::MaxPool2d(p) => {
                let mut out = vec![T::zero(); a.len()];
                for (o, src) in p.argmax_indices(a.shape(), ad).into_iter().enumerate() {
                    out[src] = out[src] + rd[o];
                }
                out
            }
            Layer::GlobalAvgPool => {
                let hw = a.len() / a.shape()[0];
                let k = T::of(hw as f64).recip();
                (0..a.len()).map(|j| rd[j / hw] * k).collect()
            }
            Layer::BatchNorm2d(_) => unreachable!("batchnorm is folded before propagation"),
        };
        let prev = std::mem::replace(&mut r, Tensor::from_parts(a.shape().to_vec(), next));
        layers[i] = prev;
    }
    if !r.is_finite() {
        return Err(Error::NonFinite("input relevance".into()));
    }
    Ok(RelevanceTrace { class, seeded, input: r, layers, folded: folded.into_owned() })
}

impl<T: Scalar> RelevanceTrace<T> {
    /// Per-filter scores: each conv output channel's relevance reduced over
    /// its spatial positions.
    pub fn filter_scores(&self, aggregation: FilterAggregation) -> RelevanceMap<T> {
        let idx = self.folded.filter_index();
        let mut scores = vec![T::zero(); idx.len()];
        for (conv, &layer) in idx.conv_layers().iter().enumerate() {
            let r = &self.layers[layer];
            let per = r.len() / r.shape()[0];
            for (ch, chunk) in r.data().chunks(per).enumerate() {
                scores[idx.global(conv, ch)] = match aggregation {
                    FilterAggregation::Signed => chunk.iter().copied().sum(),
                    FilterAggregation::Absolute => chunk.iter().map(|v| v.abs()).sum(),
                };
            }
        }
        RelevanceMap { scores, alive: self.folded.mask().to_vec() }
    }
}

/// Per-filter relevance for one labeled image.
pub fn relevance_single<T: Scalar>(
    model: &ModelGraph<T>,
    image: &Tensor<T>,
    label: usize,
    cfg: &LrpConfig<T>,
) -> Result<RelevanceMap<T>> {
    let class = match cfg.seed_mode {
        SeedMode::TrueClass => label,
        SeedMode::PredictedClass => argmax(model.predict(image)?.data()),
    };
    if class >= model.num_classes() {
        return Err(Error::invalid(format!("label {class} outside 0..{}", model.num_classes())));
    }
    Ok(propagate(model, image, class, cfg)?.filter_scores(cfg.aggregation))
}

/// Sum of [`relevance_single`] over a reference set, reduced in ascending
/// image order.
pub fn relevance_aggregate<T: Scalar>(
    model: &ModelGraph<T>,
    refs: &LabeledSet<T>,
    cfg: &LrpConfig<T>,
) -> Result<RelevanceMap<T>> {
    if refs.is_empty() {
        return Err(Error::invalid("empty reference set"));
    }
    let mut total = RelevanceMap::zeros(model.mask());
    accumulate_relevance(&mut total, model, refs, cfg)?;
    Ok(total)
}

/// Adds every image's relevance to `total` in ascending image order.
/// Feeding consecutive slices of a reference set through this reproduces
/// [`relevance_aggregate`] on the whole set bit for bit.
pub fn accumulate_relevance<T: Scalar>(
    total: &mut RelevanceMap<T>,
    model: &ModelGraph<T>,
    refs: &LabeledSet<T>,
    cfg: &LrpConfig<T>,
) -> Result<()> {
    for (image, label) in refs.iter() {
        total.accumulate(&relevance_single(model, image, label, cfg)?)?;
    }
    Ok(())
}
