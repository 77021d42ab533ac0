//! Training objectives, Adam, and the minibatch training loop.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::PredNetConfig;
use crate::data::SequenceBatch;
use crate::error::{Error, Result};
use crate::model::{Model, TapeStep};
use crate::tape::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

/// `Σ_t λ_t Σ_l λ_l · mean_errors[t][l]`, where `mean_errors[t][l]` is the mean
/// activation of `E_l^t` (the sum divided by `n_l`).
pub fn loss_from_errors(mean_errors: &[Vec<f64>], lambda_layer: &[f64], lambda_time: &[f64]) -> Result<f64> {
    if mean_errors.len() != lambda_time.len() {
        return Err(Error::invalid(
            "loss",
            format!("{} timesteps but {} time weights", mean_errors.len(), lambda_time.len()),
        ));
    }
    let mut total = 0.0;
    for (row, &lt) in mean_errors.iter().zip(lambda_time) {
        if row.len() != lambda_layer.len() {
            return Err(Error::invalid(
                "loss",
                format!("{} layers but {} layer weights", row.len(), lambda_layer.len()),
            ));
        }
        total += lt * row.iter().zip(lambda_layer).map(|(e, ll)| e * ll).sum::<f64>();
    }
    Ok(total)
}

/// Weighted error-unit loss recorded on the tape. Averaged over the batch.
/// Unsplit error units enter through their absolute value.
pub fn error_loss_on_tape<T: Scalar>(
    tape: &mut Tape<T>,
    steps: &[TapeStep],
    config: &PredNetConfig,
    lambda_time: &[f64],
) -> Result<Var> {
    if steps.len() != lambda_time.len() {
        return Err(Error::invalid(
            "loss",
            format!("{} timesteps but {} time weights", steps.len(), lambda_time.len()),
        ));
    }
    let mut total: Option<Var> = None;
    for (step, &lt) in steps.iter().zip(lambda_time) {
        for (l, &ll) in config.lambda_layer.iter().enumerate() {
            let w = lt * ll;
            if w == 0.0 {
                continue;
            }
            let mut e = step.errors[l];
            if !config.variant.splits_errors() {
                e = tape.abs(e)?;
            }
            // mean = sum / (batch * n_l)
            let m = tape.mean(e)?;
            let term = tape.scale(m, T::from_f64_lossy(w))?;
            total = Some(match total {
                Some(acc) => tape.add(acc, term)?,
                None => term,
            });
        }
    }
    match total {
        Some(v) => Ok(v),
        None => Ok(tape.constant(Tensor::scalar(T::zero()))),
    }
}

/// Mean absolute pixel error between each step's `Â_0` and its ground-truth frame.
fn pixel_abs_on_tape<T: Scalar>(tape: &mut Tape<T>, prediction: Var, frame: &Tensor<T>) -> Result<Var> {
    let x = tape.constant(frame.clone());
    let d = tape.subtract(prediction, x)?;
    let a = tape.abs(d)?;
    tape.mean(a)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossMode {
    /// Weighted error-unit activity.
    #[default]
    L1ErrorUnits,
    /// Mean squared pixel error of `Â_0^t` for `t = 2..T`, averaged over time.
    L2Pixel,
}

/// What one training sample contributes to the gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Objective {
    Loss(LossMode),
    /// Error-unit loss over the first `t_switch` teacher-forced steps plus the
    /// mean absolute pixel error of every extrapolated step up to `total`.
    Extrapolation { t_switch: usize, total: usize },
}

/// Records the objective for one batch of sequences and returns the scalar loss.
pub fn objective_on_tape<T: Scalar>(
    model: &Model<T>,
    tape: &mut Tape<T>,
    params: &[Var],
    frames: &[Tensor<T>],
    objective: Objective,
) -> Result<Var> {
    let cfg = model.config();
    match objective {
        Objective::Loss(LossMode::L1ErrorUnits) => {
            let steps = model.unroll_on_tape(tape, params, frames, frames.len(), frames.len())?;
            let lt = cfg.lambda_time.weights(frames.len())?;
            error_loss_on_tape(tape, &steps, cfg, &lt)
        }
        Objective::Loss(LossMode::L2Pixel) => {
            if frames.len() < 2 {
                return Err(Error::invalid("loss", "pixel loss needs at least 2 frames"));
            }
            let steps = model.unroll_on_tape(tape, params, frames, frames.len(), frames.len())?;
            let mut total = None;
            for (step, frame) in steps.iter().zip(frames).skip(1) {
                let x = tape.constant(frame.clone());
                let d = tape.subtract(step.prediction, x)?;
                let sq = tape.square(d)?;
                let m = tape.mean(sq)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, m)?,
                    None => m,
                });
            }
            let sum = total.expect("at least one step");
            tape.scale(sum, T::from_f64_lossy(1.0 / (frames.len() - 1) as f64))
        }
        Objective::Extrapolation { t_switch, total } => {
            if frames.len() < total || t_switch >= total {
                return Err(Error::invalid(
                    "finetune",
                    format!("need t_switch < total <= {} frames, got t_switch {t_switch}, total {total}", frames.len()),
                ));
            }
            let steps = model.unroll_on_tape(tape, params, frames, t_switch, total)?;
            let lt = cfg.lambda_time.weights(t_switch)?;
            let mut loss = error_loss_on_tape(tape, &steps[..t_switch], cfg, &lt)?;
            for t in t_switch..total {
                let mae = pixel_abs_on_tape(tape, steps[t].prediction, &frames[t])?;
                loss = tape.add(loss, mae)?;
            }
            Ok(loss)
        }
    }
}

/// Loss value and dense parameter gradients for one batch of sequences.
pub fn loss_and_gradients<T: Scalar>(
    model: &Model<T>,
    frames: &[Tensor<T>],
    objective: Objective,
) -> Result<(f64, Vec<Tensor<T>>)> {
    let mut tape = Tape::new();
    let params = model.bind(&mut tape);
    let loss = objective_on_tape(model, &mut tape, &params, frames, objective)?;
    let value = tape.value(loss).data()[0].to_f64().unwrap_or(f64::NAN);
    let grads = tape.backward(loss)?.into_dense(model.params().len())?;
    Ok((value, grads))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamParams {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(
                "schedule.adam",
                "require lr > 0, 0 <= beta1, beta2 < 1 and eps > 0",
            ))
        }
    }
}

/// First and second moment estimates, one pair per parameter tensor.
#[derive(Debug, Clone)]
pub struct AdamState<T: Scalar = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    pub step: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &[Tensor<T>]) -> Self {
        AdamState {
            m: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            v: params.iter().map(|p| Tensor::zeros(p.shape())).collect(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with learning rate `lr`.
/// Rejects non-finite gradients before touching any state.
pub fn adam_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    state: &mut AdamState<T>,
    lr: f64,
    hp: &AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::invalid("adam_step", "parameter, gradient and state counts differ"));
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::shape("adam_step", p.shape(), g.shape()));
        }
        if !g.is_finite() {
            return Err(Error::NonFinite { op: "adam_step" });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - hp.beta1.powi(t);
    let bc2 = 1.0 - hp.beta2.powi(t);
    let (b1, b2) = (hp.beta1, hp.beta2);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((pi, &gi), mi), vi) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut())
            .zip(v.data_mut().iter_mut())
        {
            let gf = gi.to_f64().unwrap_or(f64::NAN);
            let mf = b1 * mi.to_f64().unwrap_or(0.0) + (1.0 - b1) * gf;
            let vf = b2 * vi.to_f64().unwrap_or(0.0) + (1.0 - b2) * gf * gf;
            *mi = T::from_f64_lossy(mf);
            *vi = T::from_f64_lossy(vf);
            let update = lr * (mf / bc1) / ((vf / bc2).sqrt() + hp.eps);
            *pi = T::from_f64_lossy(pi.to_f64().unwrap_or(f64::NAN) - update);
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSchedule {
    pub epochs: usize,
    /// Sequences drawn per epoch. Draws cycle through fresh shuffles of the
    /// training set when this exceeds its size.
    pub samples_per_epoch: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default)]
    pub adam: AdamParams,
    /// Multiply the learning rate by 0.1 after the first `ceil(epochs / 2)` epochs.
    #[serde(default)]
    pub lr_halving: bool,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub loss_mode: LossMode,
}

fn default_batch() -> usize {
    8
}

impl TrainSchedule {
    pub fn new(epochs: usize, samples_per_epoch: usize, seed: u64) -> Self {
        TrainSchedule {
            epochs,
            samples_per_epoch,
            batch_size: default_batch(),
            adam: AdamParams::default(),
            lr_halving: false,
            seed,
            loss_mode: LossMode::L1ErrorUnits,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("schedule.epochs", "must be at least 1"));
        }
        if self.samples_per_epoch == 0 {
            return Err(Error::config("schedule.samples_per_epoch", "must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("schedule.batch_size", "must be at least 1"));
        }
        self.adam.validate()
    }

    /// Learning rate in effect during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if self.lr_halving && epoch > self.epochs.div_ceil(2) {
            self.adam.lr * 0.1
        } else {
            self.adam.lr
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean objective over the epoch's minibatches; absent for the initial row.
    pub train_loss: Option<f64>,
    pub val_loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights with the lowest validation loss, the initial weights included.
    pub model: Model<f32>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// Row 0 holds the validation loss before any update.
    pub history: Vec<EpochRecord>,
}

/// Mean absolute pixel error of `Â_0^t` against `x_t` over `t = 2..T`,
/// averaged over sequences. Teacher-forced unless `objective` is an
/// extrapolation objective, in which case the same wiring is used.
pub fn validation_loss(model: &Model<f32>, data: &SequenceBatch, objective: Objective) -> Result<f64> {
    let per_seq: Vec<f64> = (0..data.len())
        .into_par_iter()
        .map(|i| {
            let frames = data.sequence(i);
            let (t_switch, total) = match objective {
                Objective::Extrapolation { t_switch, total } => (t_switch, total),
                Objective::Loss(_) => (frames.len(), frames.len()),
            };
            let preds = model.extrapolate(&frames, t_switch, total - t_switch)?;
            let n = (total - 1) as f64;
            let mut acc = 0.0;
            for (p, x) in preds.iter().zip(&frames).skip(1) {
                acc += p
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(a, b)| (a - b).abs() as f64)
                    .sum::<f64>()
                    / p.len() as f64;
            }
            Ok(acc / n)
        })
        .collect::<Result<_>>()?;
    Ok(per_seq.iter().sum::<f64>() / per_seq.len().max(1) as f64)
}

/// Averaged gradient of a minibatch. Each sequence gets its own tape; the
/// per-sample results are reduced in index order so the outcome does not
/// depend on thread scheduling.
fn batch_gradient(
    model: &Model<f32>,
    data: &SequenceBatch,
    indices: &[usize],
    objective: Objective,
) -> Result<(f64, Vec<Tensor<f32>>)> {
    let results: Vec<(f64, Vec<Tensor<f32>>)> = indices
        .par_iter()
        .map(|&i| loss_and_gradients(model, &data.sequence(i), objective))
        .collect::<Result<_>>()?;
    let mut iter = results.into_iter();
    let (mut loss, mut grad) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        for (acc, gi) in grad.iter_mut().zip(&g) {
            acc.add_assign(gi);
        }
    }
    let inv = 1.0 / indices.len() as f32;
    for g in &mut grad {
        g.scale_assign(inv);
    }
    Ok((loss / indices.len() as f64, grad))
}

fn epoch_indices(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(count);
    let mut perm: Vec<usize> = (0..n).collect();
    while out.len() < count {
        perm.shuffle(rng);
        out.extend(perm.iter().take(count - out.len()));
    }
    out
}

/// Minibatch Adam on `objective`, keeping the weights with the lowest
/// validation loss. A non-finite training loss aborts with
/// [`Error::Diverged`] carrying the best weights so far.
pub fn train_with_objective(
    model: Model<f32>,
    train: &SequenceBatch,
    val: &SequenceBatch,
    schedule: &TrainSchedule,
    objective: Objective,
) -> Result<TrainOutcome> {
    schedule.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::invalid("train", "training and validation sets must be non-empty"));
    }
    let mut model = model;
    let mut adam = AdamState::new(model.params());
    let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
    let initial = validation_loss(&model, val, objective)?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        val_loss: initial,
        lr: schedule.lr_at(1),
    }];
    let mut best = (model.clone(), 0usize, initial);

    for epoch in 1..=schedule.epochs {
        let lr = schedule.lr_at(epoch);
        let indices = epoch_indices(train.len(), schedule.samples_per_epoch, &mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in indices.chunks(schedule.batch_size) {
            let diverged = |best: &(Model<f32>, usize, f64)| Error::Diverged {
                epoch,
                last_good: Some(Box::new(best.0.clone())),
            };
            let (loss, grad) = match batch_gradient(&model, train, chunk, objective) {
                Ok(r) => r,
                Err(Error::NonFinite { .. }) => return Err(diverged(&best)),
                Err(e) => return Err(e),
            };
            if !loss.is_finite() {
                return Err(diverged(&best));
            }
            match adam_step(model.params_mut(), &grad, &mut adam, lr, &schedule.adam) {
                Ok(()) => {}
                Err(Error::NonFinite { .. }) => return Err(diverged(&best)),
                Err(e) => return Err(e),
            }
            loss_sum += loss;
            batches += 1;
        }
        let val_loss = validation_loss(&model, val, objective)?;
        let train_loss = loss_sum / batches as f64;
        log::info!("epoch {epoch}: train {train_loss:.6} val {val_loss:.6} lr {lr:.2e}");
        history.push(EpochRecord {
            epoch,
            train_loss: Some(train_loss),
            val_loss,
            lr,
        });
        if val_loss < best.2 {
            best = (model.clone(), epoch, val_loss);
        }
    }
    Ok(TrainOutcome {
        model: best.0,
        best_epoch: best.1,
        best_val_loss: best.2,
        history,
    })
}

/// Trains with the schedule's loss mode.
pub fn train(
    model: Model<f32>,
    train: &SequenceBatch,
    val: &SequenceBatch,
    schedule: &TrainSchedule,
) -> Result<TrainOutcome> {
    train_with_objective(model, train, val, schedule, Objective::Loss(schedule.loss_mode))
}

/// Trains a fresh model of `config` on the pixel-space L2 objective.
pub fn train_l2_variant(
    config: PredNetConfig,
    init_seed: u64,
    train_set: &SequenceBatch,
    val: &SequenceBatch,
    schedule: &TrainSchedule,
) -> Result<TrainOutcome> {
    let model = Model::new(config, init_seed)?;
    let schedule = TrainSchedule {
        loss_mode: LossMode::L2Pixel,
        ..schedule.clone()
    };
    train(model, train_set, val, &schedule)
}

/// Continues training so the network learns to consume its own predictions:
/// ground truth for `t <= t_switch`, own `Â_0` afterwards, up to `total` steps.
pub fn finetune_extrapolation(
    model: Model<f32>,
    train: &SequenceBatch,
    val: &SequenceBatch,
    schedule: &TrainSchedule,
    t_switch: usize,
    total: usize,
) -> Result<TrainOutcome> {
    if train.seq_len() < total {
        return Err(Error::invalid(
            "finetune",
            format!("sequences have {} frames, fewer than total = {total}", train.seq_len()),
        ));
    }
    train_with_objective(model, train, val, schedule, Objective::Extrapolation { t_switch, total })
}

/// Writes `epoch,train_loss,val_loss,lr`.
pub fn write_history(history: &[EpochRecord], out: impl Write) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["epoch", "train_loss", "val_loss", "lr"])?;
    for r in history {
        w.write_record([
            r.epoch.to_string(),
            r.train_loss.map(|v| v.to_string()).unwrap_or_default(),
            r.val_loss.to_string(),
            r.lr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_history(history: &[EpochRecord], path: &Path) -> Result<()> {
    write_history(history, std::fs::File::create(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::Variant;
    use crate::data::{generate_moving_shapes, MovingShapesSpec};
    use crate::tensor::Shape;

    #[test]
    fn loss_from_errors_weights() {
        let e = vec![vec![1.0, 2.0], vec![3.0, 4.0]];
        let v = loss_from_errors(&e, &[1.0, 0.1], &[0.0, 1.0]).unwrap();
        assert!((v - 3.4).abs() < 1e-12);
        assert!(loss_from_errors(&e, &[1.0], &[0.0, 1.0]).is_err());
    }

    #[test]
    fn tape_loss_matches_mean_errors() {
        let cfg = PredNetConfig::new(&[1, 4], Variant::PredNet).with_lambda_layer(vec![1.0, 0.1]);
        let model: Model<f64> = Model::new(cfg.clone(), 2).unwrap();
        let data = generate_moving_shapes(&MovingShapesSpec::new(2, 4, 16, 16, 1)).unwrap();
        let frames: Vec<Tensor<f64>> = data.frames.iter().map(|f| f.cast()).collect();
        let out = model.run_sequence(&frames).unwrap();
        let lt = cfg.lambda_time.weights(4).unwrap();
        let expect = loss_from_errors(&out.mean_errors, &cfg.lambda_layer, &lt).unwrap();
        let (got, _) = loss_and_gradients(&model, &frames, Objective::Loss(LossMode::L1ErrorUnits)).unwrap();
        assert!((got - expect).abs() < 1e-12, "{got} vs {expect}");
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![Tensor::<f64>::from_vec(Shape::new(1, 1, 1, 2), vec![1.0, -1.0]).unwrap()];
        let g = vec![Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![0.5, -3.0]).unwrap()];
        let mut st = AdamState::new(&p);
        adam_step(&mut p, &g, &mut st, 0.01, &AdamParams::default()).unwrap();
        // First bias-corrected step is lr * g / (|g| + eps).
        assert!((p[0].data()[0] - 0.99).abs() < 1e-7);
        assert!((p[0].data()[1] + 0.99).abs() < 1e-7);
    }

    #[test]
    fn adam_rejects_nan_without_mutation() {
        let mut p = vec![Tensor::<f32>::ones(Shape::new(1, 1, 1, 2))];
        let g = vec![Tensor::from_vec(Shape::new(1, 1, 1, 2), vec![f32::NAN, 0.0]).unwrap()];
        let mut st = AdamState::new(&p);
        let err = adam_step(&mut p, &g, &mut st, 0.01, &AdamParams::default()).unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
        assert_eq!(p[0], Tensor::ones(Shape::new(1, 1, 1, 2)));
        assert_eq!(st.step, 0);
    }

    #[test]
    fn lr_drop_schedule() {
        let mut s = TrainSchedule::new(5, 10, 0);
        s.lr_halving = true;
        assert_eq!(s.lr_at(3), 1e-3);
        assert!((s.lr_at(4) - 1e-4).abs() < 1e-18);
    }

    #[test]
    fn epoch_indices_cycle() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx = epoch_indices(3, 7, &mut rng);
        assert_eq!(idx.len(), 7);
        let mut first: Vec<usize> = idx[..3].to_vec();
        first.sort();
        assert_eq!(first, vec![0, 1, 2]);
    }

    #[test]
    fn history_csv_layout() {
        let h = vec![
            EpochRecord { epoch: 0, train_loss: None, val_loss: 0.5, lr: 0.001 },
            EpochRecord { epoch: 1, train_loss: Some(0.4), val_loss: 0.3, lr: 0.001 },
        ];
        let mut buf = Vec::new();
        write_history(&h, &mut buf).unwrap();
        let s = String::from_utf8(buf).unwrap();
        assert_eq!(s, "epoch,train_loss,val_loss,lr\n0,,0.5,0.001\n1,0.4,0.3,0.001\n");
    }
}
