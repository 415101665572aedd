use serde::{Deserialize, Serialize};

use super::model::{CdmArch, CdmModel, Condition};
use super::schedule::NoiseSchedule;
use crate::error::{invalid, Error, Result};
use crate::numerics::{stream, Adam, Matrix, Rng, Tape};
use crate::toy_data::ToyDataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    /// Probability of replacing the class label with `∅`.
    pub label_drop: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 1000,
            batch_size: 128,
            lr: 1e-3,
            label_drop: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.label_drop) {
            return invalid("label_drop must lie in [0, 1]");
        }
        if !(self.lr > 0.0) {
            return invalid("learning rate must be positive");
        }
        if self.batch_size == 0 {
            return invalid("batch size must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return invalid("Adam moments must lie in [0, 1)");
        }
        Ok(())
    }
}

/// One DDPM regression batch.
#[derive(Debug, Clone)]
pub struct DdpmBatch {
    pub x0: Matrix,
    pub t: Vec<usize>,
    pub eps: Matrix,
    pub cond: Vec<Condition>,
}

impl DdpmBatch {
    /// Noised inputs `x_t` for every row.
    pub fn noised(&self, sched: &NoiseSchedule) -> Matrix {
        let mut xt = Matrix::zeros(self.x0.rows(), 2);
        for i in 0..self.x0.rows() {
            let a = sched.alpha_bar(self.t[i]);
            let (sa, sn) = (a.sqrt(), (1.0 - a).sqrt());
            for j in 0..2 {
                xt[(i, j)] = sa * self.x0[(i, j)] + sn * self.eps[(i, j)];
            }
        }
        xt
    }
}

/// Mean squared noise-prediction error and its gradient per parameter (in
/// [`CdmModel::params_mut`] order).
pub fn ddpm_loss_and_grads(model: &CdmModel, batch: &DdpmBatch, sched: &NoiseSchedule) -> Result<(f64, Vec<Matrix>)> {
    let mut tape = Tape::new();
    let vars = model.leaves(&mut tape);
    let xt = tape.constant(batch.noised(sched));
    let pred = model.forward_tape(&mut tape, &vars, xt, &batch.t, &batch.cond)?;
    let target = tape.constant(batch.eps.clone());
    let diff = tape.sub(pred, target);
    let sq = tape.square(diff);
    let loss = tape.mean(sq);
    let mut grads = tape.backward(loss)?;
    let loss_value = tape.value(loss).item();
    Ok((loss_value, vars.all().iter().map(|&v| grads.take(v)).collect()))
}

pub fn ddpm_loss(model: &CdmModel, batch: &DdpmBatch, sched: &NoiseSchedule) -> Result<f64> {
    let pred = model.forward(&batch.noised(sched), &batch.t, &batch.cond)?.output;
    let d = pred.sub(&batch.eps);
    Ok(d.data().iter().map(|v| v * v).sum::<f64>() / d.data().len() as f64)
}

/// Draws a batch for the given sample indices: uniform `t`, Gaussian noise,
/// labels dropped to `∅` with probability `label_drop`.
pub fn draw_batch(
    data: &ToyDataset,
    indices: &[usize],
    sched: &NoiseSchedule,
    label_drop: f64,
    rng: &mut Rng,
) -> DdpmBatch {
    let n = indices.len();
    let mut x0 = Matrix::zeros(n, 2);
    let mut eps = Matrix::zeros(n, 2);
    let mut t = Vec::with_capacity(n);
    let mut cond = Vec::with_capacity(n);
    for (row, &i) in indices.iter().enumerate() {
        let s = &data.samples[i];
        x0.row_mut(row).copy_from_slice(&s.x);
        t.push(1 + rng.below(sched.t_max()));
        eps[(row, 0)] = rng.normal();
        eps[(row, 1)] = rng.normal();
        cond.push(if rng.bernoulli(label_drop) {
            Condition::Null
        } else {
            Condition::Class(s.y)
        });
    }
    DdpmBatch { x0, t, eps, cond }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean batch loss per epoch.
    pub epoch_losses: Vec<f64>,
}

/// DDPM training with Adam. Initialization draws from `rng.split(INIT)`,
/// batching and noise from `rng.split(TRAIN)`.
pub fn train_cdm(
    data: &ToyDataset,
    arch: CdmArch,
    sched: &NoiseSchedule,
    cfg: &TrainConfig,
    rng: &Rng,
) -> Result<(CdmModel, TrainLog)> {
    if data.is_empty() {
        return invalid("cannot train on an empty dataset");
    }
    cfg.validate()?;
    if arch.t_max != sched.t_max() {
        return invalid("model t_max must match the schedule");
    }
    let mut model = CdmModel::new(arch, &mut rng.split(stream::INIT));
    let mut train_rng = rng.split(stream::TRAIN);
    let mut opt = Adam::new(cfg.lr, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut log = TrainLog::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 0..cfg.epochs {
        train_rng.shuffle(&mut order);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch = draw_batch(data, chunk, sched, cfg.label_drop, &mut train_rng);
            let (loss, grads) = ddpm_loss_and_grads(&model, &batch, sched)?;
            if !loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    epoch,
                    detail: format!("loss became {loss}"),
                });
            }
            opt.step(&mut model.params_mut(), &grads);
            total += loss;
            batches += 1;
        }
        log.epoch_losses.push(total / batches as f64);
        if !model.params_finite() {
            return Err(Error::TrainingDiverged {
                epoch,
                detail: "parameters became non-finite".into(),
            });
        }
    }
    Ok((model, log))
}
