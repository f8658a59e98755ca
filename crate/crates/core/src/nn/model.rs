//! Sequential CNN graph with per-filter prune masks.

use super::layer::{BatchNorm2d, Conv2d, Dense, Layer};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Location of one conv output channel.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct FilterId {
    /// Position of the conv layer in [`ModelGraph::layers`].
    pub layer: usize,
    /// Ordinal of the conv layer among conv layers.
    pub conv: usize,
    pub channel: usize,
}

/// Bijection between global filter ids `0..F_num` and conv channels,
/// ordered by (layer, channel).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FilterIndex {
    conv_layers: Vec<usize>,
    offsets: Vec<usize>,
}

impl FilterIndex {
    fn build<T: Scalar>(layers: &[Layer<T>]) -> FilterIndex {
        let mut conv_layers = Vec::new();
        let mut offsets = vec![0];
        for (i, l) in layers.iter().enumerate() {
            if let Layer::Conv2d(c) = l {
                conv_layers.push(i);
                offsets.push(offsets.last().unwrap() + c.out_channels);
            }
        }
        FilterIndex { conv_layers, offsets }
    }

    /// Total filter count, `F_num`.
    pub fn len(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn conv_layers(&self) -> &[usize] {
        &self.conv_layers
    }

    /// Global id range owned by the `conv`-th conv layer.
    pub fn range(&self, conv: usize) -> std::ops::Range<usize> {
        self.offsets[conv]..self.offsets[conv + 1]
    }

    pub fn locate(&self, global: usize) -> Option<FilterId> {
        if global >= self.len() {
            return None;
        }
        let conv = self.offsets.partition_point(|&o| o <= global) - 1;
        Some(FilterId { layer: self.conv_layers[conv], conv, channel: global - self.offsets[conv] })
    }

    pub fn global(&self, conv: usize, channel: usize) -> usize {
        self.offsets[conv] + channel
    }
}

/// Every layer's output for one input, in layer order.
#[derive(Clone, Debug)]
pub struct Trace<T> {
    pub input: Tensor<T>,
    pub outputs: Vec<Tensor<T>>,
}

impl<T> Trace<T> {
    pub fn layer_input(&self, layer: usize) -> &Tensor<T> {
        if layer == 0 {
            &self.input
        } else {
            &self.outputs[layer - 1]
        }
    }

    pub fn logits(&self) -> &Tensor<T> {
        self.outputs.last().unwrap_or(&self.input)
    }
}

/// Sequential network: layers, their validated output shapes, and one alive
/// flag per conv filter.
///
/// Weights are immutable from the outside once constructed; only masks
/// change during pruning, and pruning works on clones so earlier snapshots
/// stay valid for backtracking.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelGraph<T> {
    input_shape: Vec<usize>,
    layers: Vec<Layer<T>>,
    shapes: Vec<Vec<usize>>,
    /// For each layer, the conv whose mask applies to its output channels.
    mask_source: Vec<Option<usize>>,
    filters: FilterIndex,
    alive: Vec<bool>,
}

impl<T: Scalar> ModelGraph<T> {
    pub fn new(input_shape: Vec<usize>, layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Graph("model has no layers".into()));
        }
        if input_shape.len() != 3 || input_shape.iter().any(|&d| d == 0) {
            return Err(Error::Graph(format!("input shape {input_shape:?} is not a non-empty [C, H, W]")));
        }
        let mut shapes = Vec::with_capacity(layers.len());
        let mut mask_source = Vec::with_capacity(layers.len());
        let mut cur = input_shape.clone();
        let mut conv_ordinal = 0;
        for (i, layer) in layers.iter().enumerate() {
            cur = layer.output_shape(i, &cur)?;
            let src = match layer {
                Layer::Conv2d(_) => {
                    conv_ordinal += 1;
                    Some(conv_ordinal - 1)
                }
                Layer::BatchNorm2d(_) => match i.checked_sub(1).map(|p| &layers[p]) {
                    Some(Layer::Conv2d(_)) => Some(conv_ordinal - 1),
                    _ => return Err(Error::Graph(format!("layer {i}: batchnorm must directly follow a conv"))),
                },
                _ => None,
            };
            mask_source.push(src);
            shapes.push(cur.clone());
        }
        if cur.len() != 1 {
            return Err(Error::Graph(format!("final output {cur:?} is not a logit vector")));
        }
        let filters = FilterIndex::build(&layers);
        let alive = vec![true; filters.len()];
        Ok(ModelGraph { input_shape, layers, shapes, mask_source, filters, alive })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn output_shape(&self, layer: usize) -> &[usize] {
        &self.shapes[layer]
    }

    pub fn num_classes(&self) -> usize {
        self.shapes.last().unwrap()[0]
    }

    pub fn filter_index(&self) -> &FilterIndex {
        &self.filters
    }

    /// `F_num`: total conv output channels.
    pub fn filter_count(&self) -> usize {
        self.filters.len()
    }

    pub fn mask(&self) -> &[bool] {
        &self.alive
    }

    pub fn is_alive(&self, global: usize) -> bool {
        self.alive[global]
    }

    pub fn pruned_count(&self) -> usize {
        self.alive.iter().filter(|a| !**a).count()
    }

    pub fn alive_in_conv(&self, conv: usize) -> usize {
        self.alive[self.filters.range(conv)].iter().filter(|a| **a).count()
    }

    /// Sets one filter's alive flag. Masking the last alive filter of a
    /// layer is refused.
    pub fn set_alive(&mut self, global: usize, alive: bool) -> Result<()> {
        let id = self
            .filters
            .locate(global)
            .ok_or_else(|| Error::invalid(format!("filter id {global} out of range")))?;
        if !alive && self.alive[global] && self.alive_in_conv(id.conv) == 1 {
            return Err(Error::Starvation(format!(
                "filter {global} is the last alive filter of layer {}",
                id.layer
            )));
        }
        self.alive[global] = alive;
        Ok(())
    }

    /// Replaces the whole mask vector, checking length and the
    /// at-least-one-alive-per-layer rule.
    pub fn set_mask(&mut self, mask: Vec<bool>) -> Result<()> {
        if mask.len() != self.filters.len() {
            return Err(Error::invalid(format!("mask length {} != F_num {}", mask.len(), self.filters.len())));
        }
        for conv in 0..self.filters.conv_layers().len() {
            if !mask[self.filters.range(conv)].iter().any(|a| *a) {
                return Err(Error::Starvation(format!(
                    "mask leaves layer {} without filters",
                    self.filters.conv_layers()[conv]
                )));
            }
        }
        self.alive = mask;
        Ok(())
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Trace<T>> {
        if input.shape() != self.input_shape.as_slice() {
            return Err(Error::shape(
                0,
                format!("input {:?}, model expects {:?}", input.shape(), self.input_shape),
            ));
        }
        let mut outputs: Vec<Tensor<T>> = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let x = if i == 0 { input } else { &outputs[i - 1] };
            let mut y = layer.forward(x, &self.shapes[i]);
            if let Some(conv) = self.mask_source[i] {
                self.zero_masked(conv, &mut y);
            }
            outputs.push(y);
        }
        Ok(Trace { input: input.clone(), outputs })
    }

    /// Logit vector for one input.
    pub fn predict(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let mut trace = self.forward(input)?;
        Ok(trace.outputs.pop().expect("non-empty model"))
    }

    pub(crate) fn mask_source(&self, layer: usize) -> Option<usize> {
        self.mask_source[layer]
    }

    pub(crate) fn zero_masked(&self, conv: usize, t: &mut Tensor<T>) {
        let range = self.filters.range(conv);
        let per = t.len() / t.shape()[0];
        for (ch, alive) in self.alive[range].iter().enumerate() {
            if !alive {
                t.data_mut()[ch * per..(ch + 1) * per].fill(T::zero());
            }
        }
    }

    /// Trainable parameters flattened in layer order: conv and dense
    /// weight then bias, batchnorm gamma then beta.
    pub fn trainable_parameters(&self) -> Vec<T> {
        let mut out = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Conv2d(c) => {
                    out.extend_from_slice(c.weight.data());
                    out.extend_from_slice(&c.bias);
                }
                Layer::Dense(d) => {
                    out.extend_from_slice(d.weight.data());
                    out.extend_from_slice(&d.bias);
                }
                Layer::BatchNorm2d(b) => {
                    out.extend_from_slice(&b.gamma);
                    out.extend_from_slice(&b.beta);
                }
                _ => {}
            }
        }
        out
    }

    pub fn set_trainable_parameters(&mut self, values: &[T]) -> Result<()> {
        let want = self.trainable_parameters().len();
        if values.len() != want {
            return Err(Error::invalid(format!("{} parameters given, model has {want}", values.len())));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("parameter update".into()));
        }
        let mut it = values.iter().copied();
        let mut fill = |dst: &mut [T]| dst.iter_mut().for_each(|d| *d = it.next().unwrap());
        for l in &mut self.layers {
            match l {
                Layer::Conv2d(c) => {
                    fill(c.weight.data_mut());
                    fill(&mut c.bias);
                }
                Layer::Dense(d) => {
                    fill(d.weight.data_mut());
                    fill(&mut d.bias);
                }
                Layer::BatchNorm2d(b) => {
                    fill(&mut b.gamma);
                    fill(&mut b.beta);
                }
                _ => {}
            }
        }
        Ok(())
    }

    /// Equivalent model with every conv+batchnorm pair merged into a single
    /// conv. Masks and global filter ids are preserved.
    pub fn fold_batchnorms(&self) -> Result<ModelGraph<T>> {
        let mut layers = Vec::with_capacity(self.layers.len());
        let mut i = 0;
        while i < self.layers.len() {
            match (&self.layers[i], self.layers.get(i + 1)) {
                (Layer::Conv2d(c), Some(Layer::BatchNorm2d(b))) => {
                    layers.push(Layer::Conv2d(super::fold::fold_batchnorm(c, b)?));
                    i += 2;
                }
                (l, _) => {
                    layers.push(l.clone());
                    i += 1;
                }
            }
        }
        let mut m = ModelGraph::new(self.input_shape.clone(), layers)?;
        m.alive = self.alive.clone();
        Ok(m)
    }

    /// Physically removes masked filters and the matching input slices of
    /// whatever consumes them. The result has no masked filters.
    pub fn compacted(&self) -> Result<ModelGraph<T>> {
        let mut layers = Vec::with_capacity(self.layers.len());
        // Channel indices of the current feature map that survive.
        let mut keep: Option<Vec<usize>> = None;
        for (i, layer) in self.layers.iter().enumerate() {
            let new = match layer {
                Layer::Conv2d(c) => {
                    let conv = self.mask_source[i].unwrap();
                    let out_keep: Vec<usize> =
                        (0..c.out_channels).filter(|&ch| self.alive[self.filters.global(conv, ch)]).collect();
                    let in_keep = keep.take().unwrap_or_else(|| (0..c.in_channels).collect());
                    let k2 = c.kernel * c.kernel;
                    let w = c.weight.data();
                    let mut data = Vec::with_capacity(out_keep.len() * in_keep.len() * k2);
                    for &o in &out_keep {
                        for &ci in &in_keep {
                            let base = (o * c.in_channels + ci) * k2;
                            data.extend_from_slice(&w[base..base + k2]);
                        }
                    }
                    let conv = Conv2d::new(
                        in_keep.len(),
                        out_keep.len(),
                        c.kernel,
                        c.stride,
                        c.padding,
                        Tensor::new(vec![out_keep.len(), in_keep.len(), c.kernel, c.kernel], data)?,
                        out_keep.iter().map(|&o| c.bias[o]).collect(),
                    )?;
                    keep = Some(out_keep);
                    Layer::Conv2d(conv)
                }
                Layer::BatchNorm2d(b) => {
                    let k = keep.clone().unwrap_or_else(|| (0..b.channels).collect());
                    let pick = |v: &[T]| k.iter().map(|&c| v[c]).collect::<Vec<T>>();
                    Layer::BatchNorm2d(BatchNorm2d {
                        channels: k.len(),
                        gamma: pick(&b.gamma),
                        beta: pick(&b.beta),
                        running_mean: pick(&b.running_mean),
                        running_var: pick(&b.running_var),
                        eps: b.eps,
                    })
                }
                Layer::Flatten => {
                    if let Some(k) = keep.take() {
                        let input = if i == 0 { &self.input_shape } else { &self.shapes[i - 1] };
                        let per: usize = input[1..].iter().product();
                        keep = Some(k.iter().flat_map(|&c| c * per..(c + 1) * per).collect());
                    }
                    Layer::Flatten
                }
                Layer::Dense(d) => {
                    let in_keep = keep.take().unwrap_or_else(|| (0..d.in_features).collect());
                    let w = d.weight.data();
                    let mut data = Vec::with_capacity(d.out_features * in_keep.len());
                    for o in 0..d.out_features {
                        data.extend(in_keep.iter().map(|&c| w[o * d.in_features + c]));
                    }
                    Layer::Dense(Dense::new(
                        in_keep.len(),
                        d.out_features,
                        Tensor::new(vec![d.out_features, in_keep.len()], data)?,
                        d.bias.clone(),
                    )?)
                }
                other => other.clone(),
            };
            layers.push(new);
        }
        ModelGraph::new(self.input_shape.clone(), layers)
    }
}
