use std::time::Instant;

use log::debug;

use super::{
    best_model_choice, Acceptance, CandidateRegistry, Evaluator, Phase, Rejection, StrategyConfig, StrategyKind,
    Trajectory,
};
use crate::error::Result;
use crate::lrp::RelevanceMap;
use crate::nn::ModelGraph;
use crate::pruning::{boost_low_relevance, count_to_prune, filter_pruner};
use crate::rate::Rate;
use crate::scalar::Scalar;

/// Accuracy-gated dynamic pruning.
///
/// Each step proposes `P + N'`, pruning the lowest-relevance filters of the
/// current model, and keeps the candidate when its gate score does not
/// drop. On a drop the step `N'` is halved and retried while it still
/// covers more than one filter. Once it cannot be halved, the lowest `T`
/// relevances are boosted for `T = 1..=T_max` so those filters are skipped;
/// the first candidate that holds the score is taken, otherwise the best
/// scoring candidate of the phase.
///
/// `N'` is never restored after a halving. Relevance is recomputed only
/// after a state is accepted.
pub fn run_sd_dpx<T: Scalar>(
    model: &ModelGraph<T>,
    evaluator: &mut dyn Evaluator<T>,
    cfg: &StrategyConfig,
) -> Result<Trajectory<T>> {
    let f_num = model.filter_count();
    cfg.validate(f_num)?;
    let clock = Instant::now();
    let mut traj = Trajectory::new(StrategyKind::SdDpx);

    let mut current = model.clone();
    let mut score = evaluator.score(&current)?;
    traj.initial_score = Some(score);
    let mut pruned = Rate::ZERO;
    let mut step = cfg.step;
    let mut relevance: Option<RelevanceMap<T>> = None;
    let mut registry = CandidateRegistry::new();

    while pruned < cfg.max_rate {
        let r = match relevance.take() {
            Some(r) => r,
            None => evaluator.relevance(&current)?,
        };
        let target = pruned.add_capped(step, cfg.max_rate);
        let (candidate, _) = filter_pruner(&current, &r, target)?;
        let cand_score = evaluator.score(&candidate)?;

        let (accepted, accepted_score, how) = if cand_score >= score {
            (candidate, cand_score, Acceptance::Gate)
        } else {
            debug!("rejected rate {target}: score {cand_score} < {score}");
            traj.rejections.push(Rejection { rate: target, score: cand_score, baseline: score, phase: Phase::Step });
            if cfg.rate_change && count_to_prune(step, f_num) > 1 {
                step = step.half();
                traj.halvings += 1;
                relevance = Some(r);
                continue;
            }
            if cfg.order_change {
                registry.clear();
                let mut found = None;
                let mut evaluations = 0;
                for skips in 1..=cfg.max_skips {
                    if skips >= r.alive_count() {
                        break;
                    }
                    let boosted = boost_low_relevance(&r, skips)?;
                    let (m, _) = filter_pruner(&current, &boosted, target)?;
                    let s = evaluator.score(&m)?;
                    evaluations += 1;
                    if s >= score {
                        found = Some((m, s, Acceptance::Gate));
                        break;
                    }
                    debug!("rejected rate {target} with {skips} skipped: score {s} < {score}");
                    traj.rejections.push(Rejection { rate: target, score: s, baseline: score, phase: Phase::Skip(skips) });
                    registry.register(s, skips, m);
                }
                traj.skip_phase_evaluations.push(evaluations);
                match found {
                    Some(f) => f,
                    None if !registry.is_empty() => {
                        let (m, s) = best_model_choice(&registry)?;
                        (m, s, Acceptance::BestChoice)
                    }
                    None => (candidate, cand_score, Acceptance::Ungated),
                }
            } else {
                (candidate, cand_score, Acceptance::Ungated)
            }
        };

        current = accepted;
        score = accepted_score;
        pruned = target;
        traj.push(&clock, pruned, current.clone(), Some(score), how);
    }
    traj.elapsed = clock.elapsed();
    Ok(traj)
}
