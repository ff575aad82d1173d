use super::{LabeledSet, TrainConfig, TrainError, TrainState};
use crate::data::Split;
use crate::detect::DetectorConfig;
use crate::encoder::EmbeddingModel;
use crate::eval::{frr_at, roc, score_eval_set, QbyeEvalSet};

/// Internal-val QbyE metric. Lower is better: FRR first, then `separation`
/// (mean positive distance minus the closest negative window distance).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValMetric {
    pub frr: f64,
    pub fa_per_hour: f64,
    pub separation: f64,
}

impl ValMetric {
    pub fn improves_on(&self, best: &ValMetric) -> bool {
        self.frr < best.frr || (self.frr == best.frr && self.separation < best.separation)
    }
}

/// Second validation stage, run only when the dev loss improves.
pub trait InternalValidator {
    fn evaluate(&mut self, model: &EmbeddingModel) -> Result<ValMetric, TrainError>;
}

/// FRR at a fixed FA/hour on an internal-val QbyE set.
#[derive(Debug, Clone)]
pub struct QbyeValidator {
    pub set: QbyeEvalSet,
    pub detector: DetectorConfig,
    pub fa_target: f64,
    pub workers: usize,
}

impl QbyeValidator {
    pub fn new(set: QbyeEvalSet, detector: DetectorConfig, fa_target: f64, workers: usize) -> Result<Self, TrainError> {
        if set.groups.is_empty() || set.negatives.is_empty() {
            return Err(TrainError::EmptySplit(Split::InternalVal));
        }
        Ok(Self {
            set,
            detector,
            fa_target,
            workers,
        })
    }
}

impl InternalValidator for QbyeValidator {
    fn evaluate(&mut self, model: &EmbeddingModel) -> Result<ValMetric, TrainError> {
        let run = score_eval_set(model, &self.set, &self.detector, self.workers)?;
        let op = frr_at(&roc(&run)?, self.fa_target);
        let mean_pos = run.positives.iter().sum::<f64>() / run.positives.len() as f64;
        let min_neg = run.negatives.iter().flatten().copied().fold(f64::INFINITY, f64::min);
        Ok(ValMetric {
            frr: op.frr,
            fa_per_hour: op.fa_per_hour,
            separation: mean_pos - min_neg,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationDecision {
    pub dev_loss: f64,
    pub dev_improved: bool,
    /// Present only when the internal-val stage ran.
    pub val: Option<ValMetric>,
    /// True when the internal-val metric improved and a checkpoint is due.
    pub save: bool,
}

/// Dev loss on clean clips; internal-val evaluation only on a strictly lower
/// dev loss; a checkpoint only on a strictly better internal-val metric.
pub fn validate_two_stage(
    state: &mut TrainState,
    dev: &LabeledSet,
    validator: &mut impl InternalValidator,
) -> Result<ValidationDecision, TrainError> {
    if dev.is_empty() {
        return Err(TrainError::EmptySplit(Split::Dev));
    }
    let dev_loss = state.eval_loss(dev)?;
    state.dev_history.push(dev_loss);
    let mut decision = ValidationDecision {
        dev_loss,
        dev_improved: dev_loss < state.best_dev_loss,
        val: None,
        save: false,
    };
    if decision.dev_improved {
        state.best_dev_loss = dev_loss;
        let metric = validator.evaluate(&state.model()?)?;
        decision.val = Some(metric);
        if state.best_val.map_or(true, |b| metric.improves_on(&b)) {
            state.best_val = Some(metric);
            decision.save = true;
        }
    }
    Ok(decision)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LrDecision {
    Continue(f64),
    Stop,
}

/// Replays the plateau schedule over the dev-loss history: the rate drops by
/// `plateau_factor` after `plateau_patience` epochs without a new best, and
/// training stops once it would fall below `lr_min`.
pub fn schedule_lr(cfg: &TrainConfig, history: &[f64]) -> LrDecision {
    let mut lr = cfg.lr0;
    let mut best = f64::INFINITY;
    let mut stale = 0;
    for &loss in history {
        if loss < best {
            best = loss;
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.plateau_patience {
                lr *= cfg.plateau_factor;
                stale = 0;
            }
        }
    }
    // Relative slack so 1e-3 · 0.1 · 0.1 still counts as reaching 1e-5.
    if lr < cfg.lr_min * (1.0 - 1e-9) {
        LrDecision::Stop
    } else {
        LrDecision::Continue(lr)
    }
}
