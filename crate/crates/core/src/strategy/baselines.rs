use std::time::Instant;

use super::{Acceptance, Evaluator, StrategyConfig, StrategyKind, Trajectory};
use crate::error::Result;
use crate::nn::ModelGraph;
use crate::pruning::filter_pruner;
use crate::scalar::Scalar;

/// One relevance computation on the unpruned model, then filters masked in
/// ascending relevance at every scheduled rate.
pub fn run_px<T: Scalar>(
    model: &ModelGraph<T>,
    evaluator: &mut dyn Evaluator<T>,
    cfg: &StrategyConfig,
) -> Result<Trajectory<T>> {
    cfg.validate(model.filter_count())?;
    let clock = Instant::now();
    let mut traj = Trajectory::new(StrategyKind::Px);
    let relevance = evaluator.relevance(model)?;
    let mut current = model.clone();
    for rate in cfg.schedule() {
        let (next, _) = filter_pruner(&current, &relevance, rate)?;
        current = next;
        traj.push(&clock, rate, current.clone(), None, Acceptance::Scheduled);
    }
    traj.elapsed = clock.elapsed();
    Ok(traj)
}

/// Relevance recomputed on the current pruned model before every step.
pub fn run_dpx<T: Scalar>(
    model: &ModelGraph<T>,
    evaluator: &mut dyn Evaluator<T>,
    cfg: &StrategyConfig,
) -> Result<Trajectory<T>> {
    cfg.validate(model.filter_count())?;
    let clock = Instant::now();
    let mut traj = Trajectory::new(StrategyKind::Dpx);
    let mut current = model.clone();
    for rate in cfg.schedule() {
        let relevance = evaluator.relevance(&current)?;
        let (next, _) = filter_pruner(&current, &relevance, rate)?;
        current = next;
        traj.push(&clock, rate, current.clone(), None, Acceptance::Scheduled);
    }
    traj.elapsed = clock.elapsed();
    Ok(traj)
}
