//! Mini-batch training with Adam, cosine annealing and early stopping.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::TrainConfig;
use crate::data::PatchSet;
use crate::error::{Error, InBlock, Result};
use crate::loss::ce_loss;
use crate::model::Model;
use crate::nn::{Mode, ParamStore};
use crate::optim::{cosine_lr, temperature, Adam, AdamConfig, EarlyStopping};

/// Per-step optimizer state and schedules.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub config: TrainConfig,
    adam: Adam,
    total_steps: u64,
    anneal_steps: u64,
}

impl Trainer {
    /// `total_steps` is the cosine period; the orientation temperature
    /// anneals over the first `tau_anneal_epochs` epochs of
    /// `steps_per_epoch` steps.
    pub fn new(config: TrainConfig, total_steps: u64, steps_per_epoch: u64) -> Self {
        let adam = Adam::new(AdamConfig { beta1: config.beta1, beta2: config.beta2, eps: config.adam_eps });
        let anneal_steps = config.tau_anneal_epochs as u64 * steps_per_epoch;
        Trainer { config, adam, total_steps: total_steps.max(1), anneal_steps }
    }

    pub fn steps(&self) -> u64 {
        self.adam.steps()
    }

    /// Learning rate of the next step.
    pub fn lr(&self) -> f64 {
        cosine_lr(self.config.lr, self.config.lr_min, self.adam.steps(), self.total_steps)
    }

    pub fn temperature(&self) -> f64 {
        temperature(self.config.tau_start, self.config.tau_end, self.adam.steps(), self.anneal_steps)
    }

    /// One optimizer step on `n` patches, accumulating gradients over
    /// micro-batches. Returns the mean training loss.
    pub fn step(&mut self, model: &mut Model<f32>, batch: &PatchSet) -> Result<f64> {
        let n = batch.len();
        if n == 0 {
            return Err(Error::Contract("empty batch".into()));
        }
        let step = self.adam.steps() + 1;
        let tau = self.temperature();
        model.store.zero_grads();
        let mut total = 0.0;
        let micro = self.config.micro_batch.max(1);
        let mut start = 0;
        while start < n {
            let end = (start + micro).min(n);
            let (x, labels) = batch.batch(start..end);
            let weight = (end - start) as f64 / n as f64;
            let (mut s, net) = model.session(Mode::Train);
            s.temperature = tau;
            let input = s.input(x);
            let out = net.forward(&mut s, input).map_err(|e| at_step(step, e))?;
            let loss = ce_loss(&mut s, out.logits, labels).in_block("loss").map_err(|e| at_step(step, e))?;
            let value = s.value(loss).data()[0] as f64;
            let scaled = s.scale(loss, weight as f32).in_block("loss").map_err(|e| at_step(step, e))?;
            s.backward(scaled).in_block("backward").map_err(|e| at_step(step, e))?;
            total += value * weight;
            start = end;
        }
        if !total.is_finite() {
            return Err(Error::Numeric { block: format!("training step {step}: loss"), op: "ce_loss" });
        }
        let lr = self.lr();
        self.adam.step(&mut model.store, lr);
        Ok(total)
    }
}

fn at_step(step: u64, e: Error) -> Error {
    match e {
        Error::Numeric { block, op } => Error::Numeric { block: format!("training step {step}: {block}"), op },
        Error::Engine { block, source } => Error::Engine { block: format!("training step {step}: {block}"), source },
        other => other,
    }
}

/// Mean eval-mode loss over a patch set.
pub fn evaluate_loss(model: &mut Model<f32>, set: &PatchSet, micro_batch: usize) -> Result<f64> {
    let n = set.len();
    let mut total = 0.0;
    let mut start = 0;
    while start < n {
        let end = (start + micro_batch.max(1)).min(n);
        let (x, labels) = set.batch(start..end);
        let (mut s, net) = model.session(Mode::Eval);
        let input = s.input(x);
        let out = net.forward(&mut s, input)?;
        let loss = ce_loss(&mut s, out.logits, labels).in_block("loss")?;
        total += s.value(loss).data()[0] as f64 * (end - start) as f64;
        start = end;
    }
    Ok(total / n.max(1) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub steps: u64,
    pub lr: f64,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    pub stopped_early: bool,
}

/// The epoch loop: shuffle, batch, step; validate; keep the best
/// parameters; stop by the configured rule. The model ends holding the
/// best parameters.
pub fn fit(
    model: &mut Model<f32>,
    cfg: &TrainConfig,
    train: &PatchSet,
    val: &PatchSet,
    seed: u64,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainReport> {
    if train.is_empty() {
        return Err(Error::Contract("training set is empty".into()));
    }
    let batch = cfg.batch_size;
    let steps_per_epoch = train.len().div_ceil(batch) as u64;
    let mut total = steps_per_epoch * cfg.epochs as u64;
    if cfg.max_steps > 0 {
        total = total.min(cfg.max_steps as u64);
    }
    let mut trainer = Trainer::new(cfg.clone(), total, steps_per_epoch);
    let mut stopper = EarlyStopping::new(cfg.early_stop_patience, cfg.early_stop_rule);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    let mut best: Option<ParamStore<f32>> = None;
    let mut logs = Vec::new();
    let mut stopped_early = false;
    for epoch in 0..cfg.epochs {
        let order = train.shuffled(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for start in (0..order.len()).step_by(batch) {
            if trainer.steps() >= total {
                break;
            }
            let end = (start + batch).min(order.len());
            let which: Vec<usize> = (start..end).collect();
            let loss = trainer.step(model, &order.select(&which))?;
            sum += loss * (end - start) as f64;
            count += end - start;
        }
        let train_loss = sum / count.max(1) as f64;
        let val_loss = if val.is_empty() { train_loss } else { evaluate_loss(model, val, cfg.micro_batch)? };
        let log = EpochLog { epoch, steps: trainer.steps(), lr: trainer.lr(), train_loss, val_loss };
        on_epoch(&log);
        logs.push(log);
        if stopper.observe(val_loss) {
            best = Some(model.store.clone());
        }
        if trainer.steps() >= total {
            break;
        }
        if stopper.should_stop() {
            stopped_early = epoch + 1 < cfg.epochs;
            break;
        }
    }
    if let Some(b) = best {
        model.store = b;
    }
    let (best_epoch, best_val_loss) = stopper.best().unwrap_or((0, f64::NAN));
    Ok(TrainReport { epochs: logs, best_epoch, best_val_loss, stopped_early })
}
