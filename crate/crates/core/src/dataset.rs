//! Labeled image collections.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Non-empty set of same-shaped images with class labels in
/// `0..num_classes`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSet<T> {
    images: Vec<Tensor<T>>,
    labels: Vec<usize>,
    num_classes: usize,
}

impl<T: Scalar> LabeledSet<T> {
    pub fn new(images: Vec<Tensor<T>>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.len() != labels.len() {
            return Err(Error::invalid(format!("{} images but {} labels", images.len(), labels.len())));
        }
        if images.is_empty() {
            return Err(Error::invalid("empty labeled set"));
        }
        let shape = images[0].shape();
        if let Some(i) = images.iter().position(|im| im.shape() != shape) {
            return Err(Error::shape(None, format!("image {i} has shape {:?}, expected {shape:?}", images[i].shape())));
        }
        if let Some(&l) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::invalid(format!("label {l} outside 0..{num_classes}")));
        }
        Ok(LabeledSet { images, labels, num_classes })
    }

    pub fn len(&self) -> usize {
        self.images.len()
    }

    pub fn is_empty(&self) -> bool {
        self.images.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn image_shape(&self) -> &[usize] {
        self.images[0].shape()
    }

    pub fn images(&self) -> &[Tensor<T>] {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn iter(&self) -> impl Iterator<Item = (&Tensor<T>, usize)> + '_ {
        self.images.iter().zip(self.labels.iter().copied())
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// The first `k` images of every class, keeping their relative order.
    pub fn take_per_class(&self, k: usize) -> Result<Self> {
        let mut seen = vec![0; self.num_classes];
        let (mut images, mut labels) = (Vec::new(), Vec::new());
        for (im, l) in self.iter() {
            if seen[l] < k {
                seen[l] += 1;
                images.push(im.clone());
                labels.push(l);
            }
        }
        LabeledSet::new(images, labels, self.num_classes)
    }

    /// Hash of every image's exact bit pattern, for disjointness checks.
    pub fn fingerprints(&self) -> Vec<u64> {
        self.images
            .iter()
            .map(|im| {
                let mut h = DefaultHasher::new();
                im.shape().hash(&mut h);
                for v in im.data() {
                    v.as_f64().to_bits().hash(&mut h);
                }
                h.finish()
            })
            .collect()
    }
}
