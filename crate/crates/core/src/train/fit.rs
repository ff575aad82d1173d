use super::{
    build_batches, schedule_lr, train_epoch, validate_two_stage, InternalValidator, LabeledSet, LrDecision, TrainError,
    TrainState, ValMetric,
};
use crate::audio::AudioClip;
use crate::nn::checkpoint::Checkpoint;
use crate::util::derive_seed;

#[derive(Debug, Clone)]
pub struct TrainInputs {
    pub train: LabeledSet,
    pub dev: LabeledSet,
    pub babble: Option<AudioClip>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub dev_loss: f64,
    /// Learning rate used during the epoch.
    pub lr: f64,
    pub val: Option<ValMetric>,
    pub saved: bool,
}

impl EpochRecord {
    pub const LOG_HEADER: &'static str = "epoch\ttrain_loss\tdev_loss\tlr";

    pub fn log_line(&self) -> String {
        format!("{}\t{:.6}\t{:.6}\t{:e}", self.epoch, self.train_loss, self.dev_loss, self.lr)
    }
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub epochs: Vec<EpochRecord>,
    /// Last checkpoint saved by the two-stage rule.
    pub best: Option<Checkpoint>,
    /// True when the schedule stopped the run before `max_epochs`.
    pub schedule_stopped: bool,
}

/// Epoch loop until the learning-rate schedule stops or `max_epochs` is
/// reached. `on_epoch` sees every record and, on save epochs, the new
/// checkpoint.
pub fn fit(
    state: &mut TrainState,
    inputs: &TrainInputs,
    validator: &mut impl InternalValidator,
    mut on_epoch: impl FnMut(&EpochRecord, Option<&Checkpoint>) -> Result<(), TrainError>,
) -> Result<TrainSummary, TrainError> {
    let cfg = state.cfg.clone();
    let extractor = state.extractor().clone();
    let mut summary = TrainSummary {
        epochs: Vec::new(),
        best: None,
        schedule_stopped: false,
    };
    while state.epoch < cfg.max_epochs {
        let lr = state.lr();
        let seed = derive_seed(cfg.seed, &format!("epoch/{}", state.epoch + 1));
        let batches = build_batches(&inputs.train, &extractor, &cfg, inputs.babble.as_ref(), seed)?;
        let train_loss = train_epoch(state, batches)?;
        let decision = validate_two_stage(state, &inputs.dev, validator)?;
        let record = EpochRecord {
            epoch: state.epoch,
            train_loss,
            dev_loss: decision.dev_loss,
            lr,
            val: decision.val,
            saved: decision.save,
        };
        if decision.save {
            summary.best = Some(state.to_checkpoint());
        }
        on_epoch(&record, summary.best.as_ref().filter(|_| decision.save))?;
        summary.epochs.push(record);
        match schedule_lr(&cfg, &state.dev_history) {
            LrDecision::Continue(next) => state.set_lr(next),
            LrDecision::Stop => {
                summary.schedule_stopped = true;
                break;
            }
        }
    }
    Ok(summary)
}
