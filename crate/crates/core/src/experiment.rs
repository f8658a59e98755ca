//! End-to-end runs on the toy task: data, training, strategy, and the
//! per-state evaluation that turns a trajectory into curve records.

use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::lrp::LrpConfig;
use crate::metrics::{per_class_accuracy, CurveRecord};
use crate::nn::ModelGraph;
use crate::strategy::{self, ReferenceEvaluator, StrategyConfig, StrategyKind, Trajectory};
use crate::toylab::{generate, train, Architecture, Splits, SyntheticSpec, TrainConfig};

/// Everything needed to reproduce one toy experiment from a seed.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentConfig {
    pub data: SyntheticSpec,
    pub arch: Architecture,
    pub train: TrainConfig,
    pub strategy: StrategyConfig,
    pub lrp: LrpConfig<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            data: SyntheticSpec::default(),
            arch: Architecture::default(),
            train: TrainConfig::default(),
            strategy: StrategyConfig::default(),
            lrp: LrpConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct Prepared {
    pub model: ModelGraph<f64>,
    pub splits: Splits,
    pub train_accuracy: f64,
}

/// Generates data and trains the model, both seeded by `seed`.
pub fn prepare(cfg: &ExperimentConfig, seed: u64) -> Result<Prepared> {
    let splits = generate(&SyntheticSpec { seed, ..cfg.data.clone() })?;
    let report = train(&cfg.arch, &splits.train, &TrainConfig { seed, ..cfg.train.clone() })?;
    Ok(Prepared { model: report.model, splits, train_accuracy: report.train_accuracy })
}

/// Evaluates every accepted state of a trajectory on `eval`.
pub fn curve_records(traj: &Trajectory<f64>, eval: &LabeledSet<f64>, seed: u64) -> Result<Vec<CurveRecord>> {
    traj.steps
        .iter()
        .map(|s| {
            CurveRecord::new(
                traj.strategy.label(),
                seed,
                s.rate.to_f64(),
                per_class_accuracy(&s.model, eval)?,
                s.elapsed.as_secs_f64(),
            )
        })
        .collect()
}

/// Runs one strategy with `refs` as the relevance source and gate, then
/// measures each accepted state on `eval`.
pub fn run_strategy(
    kind: StrategyKind,
    model: &ModelGraph<f64>,
    refs: &LabeledSet<f64>,
    eval: &LabeledSet<f64>,
    strategy_cfg: &StrategyConfig,
    lrp: &LrpConfig<f64>,
    seed: u64,
) -> Result<(Trajectory<f64>, Vec<CurveRecord>)> {
    if refs.num_classes() != eval.num_classes() {
        return Err(Error::invalid("reference and evaluation sets disagree on class count"));
    }
    let mut evaluator = ReferenceEvaluator::new(refs, *lrp);
    let traj = strategy::run(kind, model, &mut evaluator, strategy_cfg)?;
    let records = curve_records(&traj, eval, seed)?;
    Ok((traj, records))
}
