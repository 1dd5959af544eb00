//! MSE training with Adam, early stopping and checkpoints.

mod adam;
mod checkpoint;

use rand::seq::SliceRandom;

use crate::data::{add_noise, DataError, WindowSet};
use crate::model::{forward_graph, LiNoModel, LiNoParams, ModelError};
use crate::rng::{RunSeed, Stream};
use crate::tensor::{Mode, Tape, Tensor, TensorError, Var};

pub use adam::Adam;
pub use checkpoint::{
    decode, encode, load_checkpoint, load_for_config, save_checkpoint, CheckpointError, MAGIC, VERSION,
};

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error("gradient of `{tensor}` is not finite at element {index} (step {step})")]
    NonFiniteGradient { tensor: String, index: usize, step: u64 },
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Data(#[from] DataError),
}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Model(ModelError::Tensor(e))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
    pub seed: u64,
    /// Gaussian noise scale added to training inputs only.
    pub noise_alpha: f64,
    /// Improvement needed to reset the patience counter.
    pub min_delta: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            batch_size: 32,
            max_epochs: 100,
            patience: 6,
            seed: 1,
            noise_alpha: 0.0,
            min_delta: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(TrainError::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(TrainError::Config("batch_size, max_epochs and patience must be positive".into()));
        }
        if !(0.0..=1.0).contains(&self.noise_alpha) {
            return Err(TrainError::Config(format!("noise alpha must be in [0, 1], got {}", self.noise_alpha)));
        }
        if !(self.min_delta >= 0.0) {
            return Err(TrainError::Config("min_delta must be non-negative".into()));
        }
        Ok(())
    }
}

/// Mean of squared residuals over every element.
pub fn mse_loss<'t>(yhat: Var<'t>, y: Var<'t>) -> Result<Var<'t>, TensorError> {
    let d = yhat.sub(y)?;
    d.mul(d)?.mean()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decision {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience counter over validation losses.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub min_delta: f64,
    pub best: f64,
    pub best_epoch: usize,
    bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize, min_delta: f64) -> Self {
        EarlyStopping {
            patience,
            min_delta,
            best: f64::INFINITY,
            best_epoch: 0,
            bad_epochs: 0,
        }
    }

    pub fn observe(&mut self, epoch: usize, val: f64) -> Decision {
        if val < self.best - self.min_delta {
            self.best = val;
            self.best_epoch = epoch;
            self.bad_epochs = 0;
            Decision::Improved
        } else {
            self.bad_epochs += 1;
            if self.bad_epochs >= self.patience {
                Decision::Stop
            } else {
                Decision::NoImprovement
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct History {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub stopped_early: bool,
}

impl History {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,train_mse,val_mse\n");
        for r in &self.epochs {
            s.push_str(&format!("{},{:?},{:?}\n", r.epoch, r.train_mse, r.val_mse));
        }
        s
    }
}

/// Batch size used for gradient-free passes.
const EVAL_BATCH: usize = 256;

/// Evaluation-mode MSE over every window of `set`.
pub fn split_mse(model: &LiNoModel, set: &WindowSet) -> Result<f64, TrainError> {
    let n = set.len();
    if n == 0 {
        return Err(TrainError::Config("empty split".into()));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    let idx: Vec<usize> = (0..n).collect();
    for chunk in idx.chunks(EVAL_BATCH) {
        let (x, y) = set.batch(chunk);
        let yhat = model.predict(&x)?;
        total += yhat.data().iter().zip(y.data()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        count += y.numel();
    }
    Ok(total / count as f64)
}

/// Loss and parameter gradients of one minibatch.
pub fn batch_gradients<R: rand::Rng + ?Sized>(
    model: &LiNoModel,
    x: &Tensor,
    y: &Tensor,
    mode: Mode,
    rng: &mut R,
) -> Result<(f64, Vec<Tensor>), TrainError> {
    let tape = Tape::new();
    let bound = model.params.bind(&tape);
    let graph = forward_graph(&tape, &bound, &model.config, x, mode, rng)?;
    let loss = mse_loss(graph.yhat, tape.constant(y.clone()))?;
    let grads = tape.backward(loss)?;
    let g = bound.named().into_iter().map(|(_, v)| grads.wrt(*v)).collect();
    Ok((loss.value().item(), g))
}

fn param_names(params: &LiNoParams) -> Vec<String> {
    params.named().into_iter().map(|(n, _)| n).collect()
}

/// Minibatch Adam on `train` with early stopping on `val`; leaves the best parameters in `model`.
pub fn train(model: &mut LiNoModel, train: &WindowSet, val: &WindowSet, cfg: &TrainConfig) -> Result<History, TrainError> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(TrainError::Config("train and validation splits must be non-empty".into()));
    }
    let seed = RunSeed(cfg.seed);
    let mut shuffle = seed.stream(Stream::Shuffle);
    let mut dropout = seed.stream(Stream::Dropout);
    let mut noise = seed.stream(Stream::Noise);
    let names = param_names(&model.params);
    let mut opt = Adam::new(model.params.named().into_iter().map(|(_, t)| t));
    let mut stopper = EarlyStopping::new(cfg.patience, cfg.min_delta);
    let mut best = model.params.clone();
    let mut history = History::default();
    let mut order: Vec<usize> = (0..train.len()).collect();

    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle);
        let mut sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let (x, y) = train.batch(chunk);
            let x = if cfg.noise_alpha > 0.0 { add_noise(&x, cfg.noise_alpha, &mut noise)? } else { x };
            let (loss, grads) = batch_gradients(model, &x, &y, Mode::Train, &mut dropout).map_err(|e| match e {
                TrainError::Model(ModelError::Tensor(TensorError::NonFinite { op })) => TrainError::Diverged {
                    epoch,
                    detail: format!("non-finite value in `{op}`"),
                },
                other => other,
            })?;
            if !loss.is_finite() {
                return Err(TrainError::Diverged {
                    epoch,
                    detail: "loss is not finite".into(),
                });
            }
            opt.update(model.params.leaves_mut(), &grads, &names, cfg.lr)?;
            sum += loss * chunk.len() as f64;
            seen += chunk.len();
        }
        let train_mse = sum / seen as f64;
        let val_mse = split_mse(model, val)?;
        log::info!("epoch {epoch}: train {train_mse:.6} val {val_mse:.6}");
        history.epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
        });
        match stopper.observe(epoch, val_mse) {
            Decision::Improved => best = model.params.clone(),
            Decision::NoImprovement => {}
            Decision::Stop => {
                history.stopped_early = true;
                break;
            }
        }
    }
    model.params = best;
    history.best_epoch = stopper.best_epoch;
    history.best_val_mse = stopper.best;
    Ok(history)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_examples() {
        let tape = Tape::new();
        let y = tape.constant(Tensor::new([2], vec![1.0, 3.0]).unwrap());
        let yhat = tape.leaf(Tensor::new([2], vec![2.0, 5.0]).unwrap());
        let loss = mse_loss(yhat, y).unwrap();
        assert_eq!(loss.value().item(), 2.5);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.wrt(yhat).data(), &[1.0, 2.0]);
        assert_eq!(mse_loss(y, y).unwrap().value().item(), 0.0);
    }

    #[test]
    fn patience_counter_semantics() {
        let mut s = EarlyStopping::new(6, 1e-7);
        let vals = [5.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0, 4.0];
        let mut stopped_at = None;
        for (i, v) in vals.iter().enumerate() {
            if s.observe(i + 1, *v) == Decision::Stop {
                stopped_at = Some(i + 1);
                break;
            }
        }
        assert_eq!(stopped_at, Some(8));
        assert_eq!(s.best_epoch, 2);
    }

    #[test]
    fn improvement_must_exceed_tolerance() {
        let mut s = EarlyStopping::new(2, 1e-7);
        assert_eq!(s.observe(1, 1.0), Decision::Improved);
        assert_eq!(s.observe(2, 1.0 - 5e-8), Decision::NoImprovement);
        assert_eq!(s.observe(3, 0.5), Decision::Improved);
    }
}
