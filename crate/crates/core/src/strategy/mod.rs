//! Pruning drivers: one-shot ranking (PX), iterative re-ranking (DPX), and
//! accuracy-gated iterative pruning with step halving and skip-based order
//! changes (SD-DPX).

mod baselines;
mod sd_dpx;

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

pub use baselines::{run_dpx, run_px};
pub use sd_dpx::run_sd_dpx;

use crate::dataset::LabeledSet;
use crate::error::{Error, Result};
use crate::lrp::{relevance_aggregate, LrpConfig, RelevanceMap};
use crate::metrics::{harmonic_mean, per_class_accuracy};
use crate::nn::ModelGraph;
use crate::rate::Rate;
use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum StrategyKind {
    Px,
    Dpx,
    SdDpx,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 3] = [StrategyKind::Px, StrategyKind::Dpx, StrategyKind::SdDpx];

    pub fn label(self) -> &'static str {
        match self {
            StrategyKind::Px => "px",
            StrategyKind::Dpx => "dpx",
            StrategyKind::SdDpx => "sd-dpx",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "px" => Ok(StrategyKind::Px),
            "dpx" => Ok(StrategyKind::Dpx),
            "sd-dpx" | "sddpx" | "sd_dpx" => Ok(StrategyKind::SdDpx),
            _ => Err(Error::invalid(format!("unknown strategy {s:?} (expected px, dpx, or sd-dpx)"))),
        }
    }
}

/// Schedule and search parameters shared by all strategies. PX and DPX only
/// read `step` and `max_rate`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StrategyConfig {
    /// Initial pruning step `N`.
    pub step: Rate,
    /// `P_max`.
    pub max_rate: Rate,
    /// `T_max`: skip attempts per order-change phase.
    pub max_skips: usize,
    pub rate_change: bool,
    pub order_change: bool,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            step: Rate::new(1, 20).unwrap(),
            max_rate: Rate::new(19, 20).unwrap(),
            max_skips: 10,
            rate_change: true,
            order_change: true,
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self, f_num: usize) -> Result<()> {
        if self.step.is_zero() || self.step > self.max_rate {
            return Err(Error::invalid(format!("need 0 < step ({}) <= max rate ({})", self.step, self.max_rate)));
        }
        if self.order_change && (self.max_skips == 0 || self.max_skips >= f_num) {
            return Err(Error::invalid(format!("need 0 < max skips ({}) < F_num ({f_num})", self.max_skips)));
        }
        Ok(())
    }

    /// `step, 2*step, ...` capped at `max_rate`, which is always the last entry.
    pub fn schedule(&self) -> Vec<Rate> {
        let mut out = Vec::new();
        let mut p = Rate::ZERO;
        while p < self.max_rate {
            p = p.add_capped(self.step, self.max_rate);
            out.push(p);
        }
        out
    }
}

/// Source of relevance scores and gate scores for a candidate model.
pub trait Evaluator<T> {
    fn relevance(&mut self, model: &ModelGraph<T>) -> Result<RelevanceMap<T>>;

    /// Gate score `A`: higher is better.
    fn score(&mut self, model: &ModelGraph<T>) -> Result<f64>;
}

/// The production evaluator: relevance aggregated over a labeled reference
/// set, and the harmonic mean of per-class accuracy on that same set.
pub struct ReferenceEvaluator<'a, T> {
    pub refs: &'a LabeledSet<T>,
    pub lrp: LrpConfig<T>,
}

impl<'a, T: Scalar> ReferenceEvaluator<'a, T> {
    pub fn new(refs: &'a LabeledSet<T>, lrp: LrpConfig<T>) -> Self {
        ReferenceEvaluator { refs, lrp }
    }
}

impl<T: Scalar> Evaluator<T> for ReferenceEvaluator<'_, T> {
    fn relevance(&mut self, model: &ModelGraph<T>) -> Result<RelevanceMap<T>> {
        relevance_aggregate(model, self.refs, &self.lrp)
    }

    fn score(&mut self, model: &ModelGraph<T>) -> Result<f64> {
        harmonic_mean(&per_class_accuracy(model, self.refs)?)
    }
}

/// Why a state was accepted.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Acceptance {
    /// Fixed schedule, no gate (PX, DPX).
    Scheduled,
    /// Candidate score did not drop.
    Gate,
    /// Best registered candidate after the skip budget ran out.
    BestChoice,
    /// Gate failed with no remedy enabled; accepted as DPX would.
    Ungated,
}

#[derive(Clone, Debug)]
pub struct Step<T> {
    pub rate: Rate,
    pub model: ModelGraph<T>,
    /// Gate score, when the strategy computes one.
    pub score: Option<f64>,
    /// Time since the strategy started.
    pub elapsed: Duration,
    pub acceptance: Acceptance,
}

/// Which search phase produced a rejected candidate.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    /// Plain step at the current step size.
    Step,
    /// Order-change attempt with this many boosted filters.
    Skip(usize),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rejection {
    pub rate: Rate,
    pub score: f64,
    pub baseline: f64,
    pub phase: Phase,
}

#[derive(Clone, Debug)]
pub struct Trajectory<T> {
    pub strategy: StrategyKind,
    /// Gate score of the unpruned model, when computed.
    pub initial_score: Option<f64>,
    pub steps: Vec<Step<T>>,
    pub rejections: Vec<Rejection>,
    /// Number of step-size halvings performed.
    pub halvings: usize,
    /// Candidates evaluated inside each order-change phase.
    pub skip_phase_evaluations: Vec<usize>,
    pub elapsed: Duration,
}

impl<T: Scalar> Trajectory<T> {
    fn new(strategy: StrategyKind) -> Self {
        Trajectory {
            strategy,
            initial_score: None,
            steps: Vec::new(),
            rejections: Vec::new(),
            halvings: 0,
            skip_phase_evaluations: Vec::new(),
            elapsed: Duration::ZERO,
        }
    }

    pub fn rates(&self) -> Vec<Rate> {
        self.steps.iter().map(|s| s.rate).collect()
    }

    pub fn final_model(&self) -> Option<&ModelGraph<T>> {
        self.steps.last().map(|s| &s.model)
    }

    fn push(&mut self, clock: &Instant, rate: Rate, model: ModelGraph<T>, score: Option<f64>, acceptance: Acceptance) {
        self.steps.push(Step { rate, model, score, elapsed: clock.elapsed(), acceptance });
    }
}

/// One entry of the order-change registry.
#[derive(Clone, Debug)]
pub struct Candidate<T> {
    pub score: f64,
    pub skips: usize,
    pub model: ModelGraph<T>,
}

/// Candidates registered during one order-change phase, keyed by score.
#[derive(Clone, Debug, Default)]
pub struct CandidateRegistry<T> {
    entries: Vec<Candidate<T>>,
}

impl<T: Scalar> CandidateRegistry<T> {
    pub fn new() -> Self {
        CandidateRegistry { entries: Vec::new() }
    }

    pub fn register(&mut self, score: f64, skips: usize, model: ModelGraph<T>) {
        self.entries.push(Candidate { score, skips, model });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn clear(&mut self) {
        self.entries.clear();
    }
}

/// The registered model with the highest score; equal scores resolve to
/// the fewest skips.
pub fn best_model_choice<T: Scalar>(registry: &CandidateRegistry<T>) -> Result<(ModelGraph<T>, f64)> {
    registry
        .entries
        .iter()
        .reduce(|best, c| {
            if c.score > best.score || (c.score == best.score && c.skips < best.skips) {
                c
            } else {
                best
            }
        })
        .map(|c| (c.model.clone(), c.score))
        .ok_or_else(|| Error::invalid("best model choice over an empty registry"))
}

/// Dispatches to the strategy named by `kind`.
pub fn run<T: Scalar>(
    kind: StrategyKind,
    model: &ModelGraph<T>,
    evaluator: &mut dyn Evaluator<T>,
    cfg: &StrategyConfig,
) -> Result<Trajectory<T>> {
    match kind {
        StrategyKind::Px => run_px(model, evaluator, cfg),
        StrategyKind::Dpx => run_dpx(model, evaluator, cfg),
        StrategyKind::SdDpx => run_sd_dpx(model, evaluator, cfg),
    }
}
