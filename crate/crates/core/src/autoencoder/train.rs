//! Mini-batch Adam training with early stopping.

use rand::seq::SliceRandom;

use super::loss::{loss_with_grad, LossKind};
use super::net::{backward, forward_batch, update_running_stats, AEParams, Mode};
use super::AutoencoderError;
use crate::seed;
use crate::volume::Cohort;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub loss_kind: LossKind,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            max_epochs: 10,
            patience: 5,
            batch_size: 2,
            loss_kind: LossKind::Mse,
            alpha: 0.5,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), AutoencoderError> {
        let bad = |m: &str| Err(AutoencoderError::Config(m.into()));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad("alpha must lie in [0, 1]");
        }
        if self.patience > self.max_epochs {
            return bad("patience must not exceed max_epochs");
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return bad("max_epochs and batch_size must be positive");
        }
        if !(self.learning_rate > 0.0) || !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("learning rate must be positive and betas in [0, 1)");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    /// Mean mini-batch loss per completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Number of epochs run (1-based index of the last one).
    pub stopped_epoch: usize,
    pub params_hash: String,
}

impl TrainReport {
    /// `epoch,mean_loss` rows, epochs 1-based.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,mean_loss\n");
        for (i, l) in self.epoch_losses.iter().enumerate() {
            s.push_str(&format!("{},{:e}\n", i + 1, l));
        }
        s
    }
}

/// Counts consecutive non-improving epochs since the best one.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    since_best: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self { patience, best: f64::INFINITY, since_best: 0 }
    }

    /// Records an epoch loss; returns true when training should stop.
    pub fn observe(&mut self, loss: f64) -> bool {
        if loss < self.best {
            self.best = loss;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        self.patience > 0 && self.since_best >= self.patience
    }
}

/// Adam state over a flat parameter vector.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(len: usize, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        Self { lr, beta1, beta2, eps, m: vec![0.0; len], v: vec![0.0; len], t: 0 }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let mh = self.m[i] / bc1;
            let vh = self.v[i] / bc2;
            params[i] -= self.lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

/// Loss and gradients for one batch (train mode). The batch loss is the mean
/// of the per-sample losses.
pub fn batch_loss_and_grad(
    params: &AEParams,
    inputs: &[&[f64]],
    kind: LossKind,
    alpha: f64,
) -> Result<(f64, Vec<f64>, super::net::ForwardPass), AutoencoderError> {
    let pass = forward_batch(params, inputs, Mode::Train)?;
    let b = inputs.len() as f64;
    let mut total = 0.0;
    let mut grad_out = Vec::with_capacity(pass.reconstruction.len());
    for (i, target) in inputs.iter().enumerate() {
        let (l, g) = loss_with_grad(pass.sample(i), target, params.input_dims, kind, alpha);
        total += l;
        grad_out.extend(g.into_iter().map(|v| v / b));
    }
    let grads = backward(params, &pass, &grad_out);
    Ok((total / b, grads, pass))
}

pub fn train(cohort: &Cohort, config: &TrainConfig) -> Result<(AEParams, TrainReport), AutoencoderError> {
    config.validate()?;
    if cohort.is_empty() {
        return Err(AutoencoderError::Config("cannot train on an empty cohort".into()));
    }
    let dims = cohort.atlas().dims();
    let data: Vec<Vec<f64>> = cohort.subjects().iter().map(|s| s.volume.to_f64()).collect();
    let mut params = AEParams::init(dims, config.seed)?;
    let mut flat = params.to_flat();
    let mut adam = Adam::new(flat.len(), config.learning_rate, config.beta1, config.beta2, config.eps);
    let mut stopper = EarlyStopping::new(config.patience);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut rng = seed::rng(seed::derive_str(config.seed, "shuffle"));
    let mut epoch_losses = Vec::new();

    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut batch_losses = Vec::new();
        for (bi, chunk) in order.chunks(config.batch_size).enumerate() {
            let inputs: Vec<&[f64]> = chunk.iter().map(|&i| data[i].as_slice()).collect();
            let (loss, grads, pass) = batch_loss_and_grad(&params, &inputs, config.loss_kind, config.alpha)?;
            if !loss.is_finite() || grads.iter().any(|g| !g.is_finite()) {
                return Err(AutoencoderError::NonFinite { epoch: epoch + 1, batch: bi + 1, loss });
            }
            adam.step(&mut flat, &grads);
            params.set_flat(&flat);
            update_running_stats(&mut params, &pass);
            batch_losses.push(loss);
        }
        let mean = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
        log::debug!("epoch {} mean loss {:.6e}", epoch + 1, mean);
        epoch_losses.push(mean);
        if stopper.observe(mean) {
            break;
        }
    }
    let report = TrainReport { stopped_epoch: epoch_losses.len(), epoch_losses, params_hash: params.hash() };
    Ok((params, report))
}
