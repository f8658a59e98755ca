use std::f64::consts::PI;

use rand_distr::{Distribution, Normal};

use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Parameters of the synthetic oriented-bar classification task.
///
/// Class `k` of `C` is a bar through the image centre at angle `k * 180 / C`
/// degrees, so more classes means more similar templates. Samples are the
/// template plus i.i.d. Gaussian pixel noise.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub num_classes: usize,
    pub samples_per_class: usize,
    pub ref_per_class: usize,
    pub eval_per_class: usize,
    pub noise_std: f64,
    /// Half-width of the bar profile in pixels.
    pub bar_width: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            height: 12,
            width: 12,
            channels: 1,
            num_classes: 2,
            samples_per_class: 200,
            ref_per_class: 30,
            eval_per_class: 70,
            noise_std: 0.8,
            bar_width: 0.8,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn train_per_class(&self) -> usize {
        self.samples_per_class.saturating_sub(self.ref_per_class + self.eval_per_class)
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=5).contains(&self.num_classes) {
            return Err(Error::invalid(format!("num_classes must be 2..=5, got {}", self.num_classes)));
        }
        if self.height < 4 || self.width < 4 || self.channels == 0 {
            return Err(Error::invalid("image must be at least 1x4x4"));
        }
        if self.ref_per_class == 0 || self.eval_per_class == 0 || self.train_per_class() == 0 {
            return Err(Error::invalid(format!(
                "{} samples per class cannot fill {} reference, {} eval, and at least one training sample",
                self.samples_per_class, self.ref_per_class, self.eval_per_class
            )));
        }
        if !(self.noise_std >= 0.0) || !self.noise_std.is_finite() || !(self.bar_width > 0.0) {
            return Err(Error::invalid("noise_std must be >= 0 and bar_width > 0"));
        }
        Ok(())
    }
}

/// Noise-free image of class `class`.
pub fn template(spec: &SyntheticSpec, class: usize) -> Tensor<f64> {
    let theta = class as f64 * PI / spec.num_classes as f64;
    let (dx, dy) = (theta.cos(), theta.sin());
    let cy = (spec.height as f64 - 1.0) / 2.0;
    let cx = (spec.width as f64 - 1.0) / 2.0;
    let plane = spec.height * spec.width;
    Tensor::from_fn(&[spec.channels, spec.height, spec.width], |i| {
        let p = i % plane;
        let (y, x) = ((p / spec.width) as f64 - cy, (p % spec.width) as f64 - cx);
        // distance from the line through the centre with direction (dx, dy)
        let d = (x * dy - y * dx).abs();
        (-(d * d) / (2.0 * spec.bar_width * spec.bar_width)).exp()
    })
}

/// Train, reference, and evaluation splits, disjoint by construction.
#[derive(Clone, Debug, PartialEq)]
pub struct Splits {
    pub train: LabeledSet<f64>,
    pub refs: LabeledSet<f64>,
    pub eval: LabeledSet<f64>,
}

/// Deterministic in `spec.seed`. Each split interleaves classes
/// (`0, 1, .., C-1, 0, 1, ..`).
pub fn generate(spec: &SyntheticSpec) -> Result<Splits> {
    spec.validate()?;
    let mut rng = super::rng(spec.seed, 1);
    let noise = Normal::new(0.0, spec.noise_std).map_err(|e| Error::invalid(e.to_string()))?;
    let templates: Vec<Tensor<f64>> = (0..spec.num_classes).map(|c| template(spec, c)).collect();

    let sizes = [spec.ref_per_class, spec.eval_per_class, spec.train_per_class()];
    let mut sets = Vec::with_capacity(3);
    for n in sizes {
        let mut images = Vec::with_capacity(n * spec.num_classes);
        let mut labels = Vec::with_capacity(n * spec.num_classes);
        for _ in 0..n {
            for (c, t) in templates.iter().enumerate() {
                let img = if spec.noise_std == 0.0 {
                    t.clone()
                } else {
                    let data = t.data().iter().map(|&v| v + noise.sample(&mut rng)).collect();
                    Tensor::new(t.shape().to_vec(), data)?
                };
                images.push(img);
                labels.push(c);
            }
        }
        sets.push(LabeledSet::new(images, labels, spec.num_classes)?);
    }
    let train = sets.pop().unwrap();
    let eval = sets.pop().unwrap();
    let refs = sets.pop().unwrap();
    Ok(Splits { train, refs, eval })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn same_seed_same_data() {
        let spec = SyntheticSpec { seed: 7, ..Default::default() };
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = SyntheticSpec { seed: 8, ..Default::default() };
        assert_ne!(generate(&spec).unwrap().train, generate(&other).unwrap().train);
    }

    #[test]
    fn zero_noise_reproduces_templates() {
        let spec = SyntheticSpec { noise_std: 0.0, ..Default::default() };
        let s = generate(&spec).unwrap();
        for (im, l) in s.train.iter().chain(s.refs.iter()).chain(s.eval.iter()) {
            assert_eq!(im, &template(&spec, l));
        }
        assert_ne!(template(&spec, 0), template(&spec, 1));
    }

    #[test]
    fn default_splits_have_configured_sizes_and_are_disjoint() {
        let spec = SyntheticSpec::default();
        let s = generate(&spec).unwrap();
        assert_eq!(s.refs.class_counts(), vec![30, 30]);
        assert_eq!(s.eval.class_counts(), vec![70, 70]);
        assert_eq!(s.train.class_counts(), vec![100, 100]);
        let mut seen = HashSet::new();
        for h in s.train.fingerprints().into_iter().chain(s.refs.fingerprints()).chain(s.eval.fingerprints()) {
            assert!(seen.insert(h), "duplicate image across splits");
        }
    }

    #[test]
    fn rejects_bad_specs() {
        let base = SyntheticSpec::default();
        assert!(generate(&SyntheticSpec { num_classes: 0, ..base.clone() }).is_err());
        assert!(generate(&SyntheticSpec { num_classes: 6, ..base.clone() }).is_err());
        assert!(generate(&SyntheticSpec { samples_per_class: 100, ..base.clone() }).is_err());
        assert!(generate(&SyntheticSpec { noise_std: -1.0, ..base }).is_err());
    }
}
