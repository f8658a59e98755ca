//! Per-class accuracy, the harmonic-mean gate score, and the
//! lowest-class area summary of a pruning trajectory.

use std::collections::BTreeMap;

use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::nn::ModelGraph;
use crate::scalar::Scalar;
use crate::tensor::argmax;

/// Correct/total tallies per class. Only classes with at least one sample
/// are present.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct ClassAccuracy {
    counts: BTreeMap<usize, (usize, usize)>,
}

impl ClassAccuracy {
    pub fn from_counts(counts: impl IntoIterator<Item = (usize, (usize, usize))>) -> Result<Self> {
        let counts: BTreeMap<_, _> = counts.into_iter().collect();
        for (c, &(correct, total)) in &counts {
            if total == 0 || correct > total {
                return Err(Error::invalid(format!("class {c}: {correct} correct of {total}")));
            }
        }
        Ok(ClassAccuracy { counts })
    }

    /// Builds from accuracy fractions alone, with a nominal total of one
    /// sample-equivalent: `accuracy(c)` returns exactly the given value.
    pub fn from_fractions(acc: &[f64]) -> Result<Self> {
        if acc.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::invalid("accuracy outside [0, 1]"));
        }
        Ok(ClassAccuracy { counts: BTreeMap::new() }.with_fractions(acc))
    }

    fn with_fractions(mut self, acc: &[f64]) -> Self {
        // Scaled counts over 2^62 reproduce every f64 in [2^-9, 1] exactly.
        const SCALE: usize = 1 << 62;
        for (c, &a) in acc.iter().enumerate() {
            self.counts.insert(c, ((a * SCALE as f64) as usize, SCALE));
        }
        self
    }

    pub fn classes(&self) -> impl Iterator<Item = usize> + '_ {
        self.counts.keys().copied()
    }

    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn counts(&self, class: usize) -> Option<(usize, usize)> {
        self.counts.get(&class).copied()
    }

    pub fn accuracy(&self, class: usize) -> Option<f64> {
        self.counts.get(&class).map(|&(c, t)| c as f64 / t as f64)
    }

    pub fn accuracies(&self) -> Vec<f64> {
        self.counts.values().map(|&(c, t)| c as f64 / t as f64).collect()
    }

    /// Fraction correct over all samples.
    pub fn overall(&self) -> f64 {
        let (c, t) = self.counts.values().fold((0.0, 0.0), |(a, b), &(c, t)| (a + c as f64, b + t as f64));
        if t == 0.0 {
            0.0
        } else {
            c as f64 / t as f64
        }
    }

    pub fn lowest(&self) -> Option<f64> {
        self.accuracies().into_iter().reduce(f64::min)
    }
}

/// Argmax prediction against label, tallied per class. Argmax ties go to
/// the lowest class id.
pub fn per_class_accuracy<T: Scalar>(model: &ModelGraph<T>, set: &LabeledSet<T>) -> Result<ClassAccuracy> {
    if set.num_classes() > model.num_classes() {
        return Err(Error::invalid(format!(
            "dataset has {} classes, model outputs {}",
            set.num_classes(),
            model.num_classes()
        )));
    }
    let mut counts: BTreeMap<usize, (usize, usize)> = BTreeMap::new();
    for (image, label) in set.iter() {
        let logits = model.predict(image)?;
        if !logits.is_finite() {
            return Err(Error::NonFinite("logits".into()));
        }
        let e = counts.entry(label).or_default();
        e.1 += 1;
        if argmax(logits.data()) == label {
            e.0 += 1;
        }
    }
    Ok(ClassAccuracy { counts })
}

/// `|C| / sum_c 1/A_c`, defined as 0 when any class has zero accuracy.
pub fn harmonic_mean(acc: &ClassAccuracy) -> Result<f64> {
    let a = acc.accuracies();
    if a.is_empty() {
        return Err(Error::invalid("harmonic mean of an empty class set"));
    }
    if a.iter().any(|&x| x == 0.0) {
        return Ok(0.0);
    }
    Ok(a.len() as f64 / a.iter().map(|x| 1.0 / x).sum::<f64>())
}

/// One accepted pruning state measured on an evaluation set.
#[derive(Clone, Debug, PartialEq)]
pub struct CurveRecord {
    pub strategy: String,
    pub seed: u64,
    pub rate: f64,
    pub per_class: ClassAccuracy,
    pub harmonic_mean: f64,
    pub overall_accuracy: f64,
    pub wall_time_seconds: f64,
}

impl CurveRecord {
    pub fn new(strategy: &str, seed: u64, rate: f64, per_class: ClassAccuracy, wall_time_seconds: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&rate) {
            return Err(Error::invalid(format!("rate {rate} outside [0, 1]")));
        }
        Ok(CurveRecord {
            strategy: strategy.to_string(),
            seed,
            rate,
            harmonic_mean: harmonic_mean(&per_class)?,
            overall_accuracy: per_class.overall(),
            per_class,
            wall_time_seconds,
        })
    }
}

fn check_class_sets<'a>(records: impl IntoIterator<Item = &'a CurveRecord>) -> Result<()> {
    let mut it = records.into_iter();
    let Some(first) = it.next() else {
        return Err(Error::invalid("empty trajectory"));
    };
    let classes: Vec<usize> = first.per_class.classes().collect();
    if classes.is_empty() {
        return Err(Error::invalid("record without classes"));
    }
    for r in it {
        if !r.per_class.classes().eq(classes.iter().copied()) {
            return Err(Error::invalid(format!("record at rate {} has a different class set", r.rate)));
        }
    }
    Ok(())
}

/// Mean over the recorded rates of the lowest per-class accuracy.
pub fn auc_lowest_class(records: &[CurveRecord]) -> Result<f64> {
    check_class_sets(records)?;
    let total: f64 = records.iter().map(|r| r.per_class.lowest().unwrap_or(0.0)).sum();
    Ok(total / records.len() as f64)
}

/// For each grid rate, the record whose rate is nearest (ties to the lower
/// rate). `records` must be non-empty.
pub fn resample_nearest<'a>(records: &'a [CurveRecord], grid: &[f64]) -> Result<Vec<&'a CurveRecord>> {
    if records.is_empty() {
        return Err(Error::invalid("empty trajectory"));
    }
    Ok(grid
        .iter()
        .map(|&g| {
            records
                .iter()
                .min_by(|a, b| {
                    let (da, db) = ((a.rate - g).abs(), (b.rate - g).abs());
                    da.total_cmp(&db).then(a.rate.total_cmp(&b.rate))
                })
                .expect("non-empty")
        })
        .collect())
}

/// [`auc_lowest_class`] after resampling onto a fixed rate grid, for
/// comparing strategies that visit different rates.
pub fn auc_lowest_class_on_grid(records: &[CurveRecord], grid: &[f64]) -> Result<f64> {
    check_class_sets(records)?;
    if grid.is_empty() {
        return Err(Error::invalid("empty grid"));
    }
    let picked = resample_nearest(records, grid)?;
    Ok(picked.iter().map(|r| r.per_class.lowest().unwrap_or(0.0)).sum::<f64>() / grid.len() as f64)
}

/// `step, 2*step, ...` up to and including `max` (within rounding).
pub fn rate_grid(step: f64, max: f64) -> Vec<f64> {
    let n = (max / step + 1e-9).floor() as usize;
    (1..=n).map(|k| ((k as f64 * step) * 1e9).round() / 1e9).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acc(v: &[f64]) -> ClassAccuracy {
        ClassAccuracy::from_fractions(v).unwrap()
    }

    fn rec(rate: f64, v: &[f64]) -> CurveRecord {
        CurveRecord::new("x", 0, rate, acc(v), 0.0).unwrap()
    }

    #[test]
    fn harmonic_mean_values() {
        assert_eq!(harmonic_mean(&acc(&[1.0, 1.0])).unwrap(), 1.0);
        assert_eq!(harmonic_mean(&acc(&[0.5, 1.0])).unwrap(), 2.0 / 3.0);
        assert_eq!(harmonic_mean(&acc(&[0.0, 1.0])).unwrap(), 0.0);
        assert!(harmonic_mean(&ClassAccuracy::default()).is_err());
    }

    #[test]
    fn fractions_round_trip_exactly() {
        let a = acc(&[0.75, 0.1, 1.0 / 3.0]);
        assert_eq!(a.accuracies(), vec![0.75, 0.1, 1.0 / 3.0]);
    }

    #[test]
    fn counts_tally() {
        let a = ClassAccuracy::from_counts([(0, (3, 4)), (1, (1, 1))]).unwrap();
        assert_eq!(a.accuracy(0), Some(0.75));
        assert_eq!(a.overall(), 0.8);
        assert!(ClassAccuracy::from_counts([(0, (1, 0))]).is_err());
    }

    #[test]
    fn auc_examples() {
        let t = vec![rec(0.0, &[1.0, 1.0]), rec(0.5, &[0.5, 1.0])];
        assert_eq!(auc_lowest_class(&t).unwrap(), 0.75);
        let t = vec![rec(0.1, &[0.0, 1.0]), rec(0.2, &[0.0, 0.9])];
        assert_eq!(auc_lowest_class(&t).unwrap(), 0.0);
        let bad = vec![rec(0.1, &[0.0, 1.0]), rec(0.2, &[0.0, 0.9, 1.0])];
        assert!(auc_lowest_class(&bad).is_err());
        assert!(auc_lowest_class(&[]).is_err());
    }

    #[test]
    fn nearest_resampling() {
        let t = vec![rec(0.05, &[1.0]), rec(0.125, &[0.5]), rec(0.2, &[0.25])];
        let picked: Vec<f64> = resample_nearest(&t, &[0.05, 0.1, 0.15, 0.2]).unwrap().iter().map(|r| r.rate).collect();
        assert_eq!(picked, vec![0.05, 0.125, 0.125, 0.2]);
        // equidistant: lower rate wins
        let t = vec![rec(0.1, &[1.0]), rec(0.2, &[0.5])];
        assert_eq!(resample_nearest(&t, &[0.15]).unwrap()[0].rate, 0.1);
    }

    #[test]
    fn grid() {
        let g = rate_grid(0.05, 0.95);
        assert_eq!(g.len(), 19);
        assert_eq!(g[0], 0.05);
        assert_eq!(g[18], 0.95);
    }
}
