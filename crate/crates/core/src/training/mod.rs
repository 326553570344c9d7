//! Conditional maximum-likelihood training, Wasserstein-regularized
//! training with a weight-clamped critic, and the 1-D divergence oracles.
//!
//! The generator objective is `nll + beta * W_hat` where `W_hat` is the
//! critic's dual estimate `mean g(x_data, c) - mean g(x_model, c)` and model
//! samples are drawn pathwise through the differentiable inverse flow. With
//! `beta = 0` the loss is the negative conditional log-likelihood alone,
//! bit for bit.

use std::io::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::WindowDataset;
use crate::flow::{FlowModel, FlowSpec};
use crate::numerics::{AdamState, AffineLayer, Array, Init, Mode, NodeId, ParamStore, Tape};
use crate::{Error, Result};

mod divergence;

pub use divergence::{
    default_sigma2_grid, toy_fit, w1_closed_form, write_toy_csv, FitMetric, QuantileFn, ToyFit,
    ToySpec,
};

/// Salt for the RNG stream that feeds critic training and pathwise samples,
/// so the main stream (model init, shuffling) is identical across beta.
const WASSERSTEIN_STREAM_SALT: u64 = 0x57464C4F57; // "WFLOW"

#[derive(Clone, Debug, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Weight of the Wasserstein regularizer; zero reduces training to pure
    /// maximum likelihood.
    pub beta: f64,
    pub critic_clamp: f64,
    pub critic_steps: usize,
    pub critic_lr: f64,
    pub critic_hidden: usize,
    pub seed: u64,
    /// Fraction of the training range carved off chronologically for
    /// validation; consumed by the dataset split, carried here for echoing.
    pub val_fraction: f64,
    /// Early-stop patience in epochs without validation improvement.
    pub patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 32,
            epochs: 60,
            beta: 0.0,
            critic_clamp: 0.3,
            critic_steps: 5,
            critic_lr: 1e-3,
            critic_hidden: 128,
            seed: 0,
            val_fraction: 0.15,
            patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.learning_rate <= 0.0 || self.critic_lr <= 0.0 {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Config("batch size must be at least 2 for batch norm".into()));
        }
        if self.epochs == 0 {
            return Err(Error::Config("epoch count must be positive".into()));
        }
        if self.beta < 0.0 {
            return Err(Error::Config("beta must be nonnegative".into()));
        }
        if self.critic_clamp <= 0.0 {
            return Err(Error::Config("critic clamp bound must be positive".into()));
        }
        if self.critic_steps == 0 {
            return Err(Error::Config("critic steps per generator step must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::Config("validation fraction must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Condition-aware scalar critic `g(x, c)` with one hidden ReLU layer.
/// After every update all parameters are clamped into the Lipschitz box
/// `[-clamp, clamp]`.
#[derive(Clone, Debug)]
pub struct CriticNet {
    pub params: ParamStore,
    l0: AffineLayer,
    l1: AffineLayer,
    pub data_dim: usize,
    pub cond_dim: usize,
    pub clamp: f64,
}

impl CriticNet {
    pub fn new<R: Rng>(
        data_dim: usize,
        cond_dim: usize,
        hidden: usize,
        clamp: f64,
        rng: &mut R,
    ) -> Self {
        let mut params = ParamStore::new();
        let l0 = AffineLayer::new(&mut params, data_dim + cond_dim, hidden, Init::Uniform, rng);
        let l1 = AffineLayer::new(&mut params, hidden, 1, Init::Uniform, rng);
        let mut critic = CriticNet { params, l0, l1, data_dim, cond_dim, clamp };
        // Start inside the clamp box.
        critic.clamp_weights();
        critic
    }

    /// Record `g` for each row of `x`; returns a `[B]` node.
    pub fn record(&self, tape: &mut Tape, x: NodeId, cond: Option<NodeId>) -> Result<NodeId> {
        let input = match cond {
            Some(c) => tape.concat(x, c)?,
            None => x,
        };
        let h = self.l0.forward(tape, &self.params, input)?;
        let h = tape.relu(h)?;
        let out = self.l1.forward(tape, &self.params, h)?;
        let batch = tape.shape(out)[0];
        tape.reshape(out, vec![batch])
    }

    /// Evaluate `g` on a batch without recording gradients.
    pub fn evaluate(&self, x: &Array, cond: Option<&Array>) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let cn = cond.map(|c| tape.input(c.clone()));
        let g = self.record(&mut tape, xn, cn)?;
        Ok(tape.value(g).data().to_vec())
    }

    pub fn clamp_weights(&mut self) {
        self.params.clamp_values(self.clamp);
    }

    pub fn max_abs_weight(&self) -> f64 {
        self.params.max_abs_value()
    }
}

/// Dual-form Wasserstein estimate `mean g(data) - mean g(samples)`.
pub fn wasserstein_dual_estimate(
    critic: &CriticNet,
    data: &Array,
    data_cond: Option<&Array>,
    samples: &Array,
    samples_cond: Option<&Array>,
) -> Result<f64> {
    if data.is_empty() || samples.is_empty() {
        return Err(Error::Config("dual estimate needs nonempty batches".into()));
    }
    let gd = critic.evaluate(data, data_cond)?;
    let gs = critic.evaluate(samples, samples_cond)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(&gd) - mean(&gs))
}

/// One critic maximization step followed by re-clamping. Returns the dual
/// estimate before the update.
pub fn critic_step(
    critic: &mut CriticNet,
    adam: &mut AdamState,
    data: &Array,
    data_cond: Option<&Array>,
    samples: &Array,
    samples_cond: Option<&Array>,
) -> Result<f64> {
    if data.is_empty() || samples.is_empty() {
        return Err(Error::Config("critic step needs nonempty batches".into()));
    }
    let mut tape = Tape::new();
    let xd = tape.input(data.clone());
    let cd = data_cond.map(|c| tape.input(c.clone()));
    let xs = tape.input(samples.clone());
    let cs = samples_cond.map(|c| tape.input(c.clone()));
    let gd = critic.record(&mut tape, xd, cd)?;
    let gs = critic.record(&mut tape, xs, cs)?;
    let md = tape.mean_all(gd)?;
    let ms = tape.mean_all(gs)?;
    let w = tape.sub(md, ms)?;
    // Maximize the gap: minimize its negation.
    let loss = tape.neg(w)?;
    tape.backward_into(loss, &mut critic.params)?;
    adam.step(&mut critic.params)?;
    critic.clamp_weights();
    Ok(tape.value(w).item())
}

/// Mean negative conditional log-likelihood of a batch, inference mode.
pub fn nll(model: &FlowModel, x: &Array, c: &Array) -> Result<f64> {
    if x.is_empty() {
        return Err(Error::Config("nll needs a nonempty batch".into()));
    }
    let lps = model.log_prob_batch(x, c)?;
    for (i, lp) in lps.iter().enumerate() {
        if !lp.is_finite() {
            return Err(Error::NonFinite(format!("log-density of sample {i} is not finite")));
        }
    }
    Ok(-lps.iter().sum::<f64>() / lps.len() as f64)
}

/// Per-epoch statistics; `w_estimate` is present only for beta > 0.
#[derive(Clone, Debug)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_nll: f64,
    pub val_nll: f64,
    pub w_estimate: Option<f64>,
}

/// A trained model (the best-validation checkpoint) with its loss history.
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub model: FlowModel,
    pub history: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_nll: f64,
}

/// Maximum-likelihood training on standardized (data, condition) matrices.
pub fn train_arrays(
    x_train: &Array,
    c_train: &Array,
    x_val: &Array,
    c_val: &Array,
    flow_spec: FlowSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    let n = x_train.dim(0);
    if n < 2 {
        return Err(Error::Config("training needs at least two samples".into()));
    }
    if x_val.dim(0) == 0 {
        return Err(Error::Config("validation split must be nonempty".into()));
    }
    let dim = flow_spec.data_dim;
    let cond_dim = flow_spec.cond_dim;
    if x_train.dim(1) != dim || c_train.dim(1) != cond_dim {
        return Err(Error::Shape(format!(
            "training matrices [N,{}]/[N,{}] do not match the flow spec ({}, {})",
            x_train.dim(1),
            c_train.dim(1),
            dim,
            cond_dim
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut model = FlowModel::new(flow_spec, &mut rng)?;
    let mut adam = AdamState::new(&model.params, config.learning_rate);

    let wflow = config.beta > 0.0;
    let mut wrng = ChaCha8Rng::seed_from_u64(config.seed ^ WASSERSTEIN_STREAM_SALT);
    let mut critic = wflow.then(|| {
        CriticNet::new(dim, cond_dim, config.critic_hidden, config.critic_clamp, &mut wrng)
    });
    let mut critic_adam = critic.as_ref().map(|c| AdamState::new(&c.params, config.critic_lr));

    let gather = |a: &Array, idx: &[usize], w: usize| {
        let mut out = Vec::with_capacity(idx.len() * w);
        for &i in idx {
            out.extend_from_slice(&a.data()[i * w..(i + 1) * w]);
        }
        Array::new(vec![idx.len(), w], out).expect("gather shape")
    };

    let mut indices: Vec<usize> = (0..n).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, FlowModel)> = None;
    let mut stale_epochs = 0usize;

    for epoch in 0..config.epochs {
        indices.shuffle(&mut rng);
        let mut train_loss_acc = 0.0;
        let mut train_count = 0usize;
        let mut w_acc = 0.0;
        let mut w_batches = 0usize;

        for chunk in indices.chunks(config.batch_size) {
            // Batch norm in training mode needs at least two rows.
            if chunk.len() < 2 {
                continue;
            }
            let xb = gather(x_train, chunk, dim);
            let cb = gather(c_train, chunk, cond_dim);

            if let (Some(critic), Some(critic_adam)) = (critic.as_mut(), critic_adam.as_mut()) {
                for _ in 0..config.critic_steps {
                    let z = standard_normal_array(&mut wrng, chunk.len(), dim);
                    let fake = model.sample_batch(&z, &cb)?;
                    critic_step(critic, critic_adam, &xb, Some(&cb), &fake, Some(&cb))?;
                }
            }

            let mut tape = Tape::new();
            let xn = tape.input(xb.clone());
            let cn = tape.input(cb.clone());
            let mut updates = Vec::new();
            let (lp, _, _) = model.record_log_prob(&mut tape, xn, cn, Mode::Train, &mut updates)?;
            let neg = tape.neg(lp)?;
            let nll_node = tape.mean_all(neg)?;

            let loss_node = if let Some(critic) = critic.as_ref() {
                let z = standard_normal_array(&mut wrng, chunk.len(), dim);
                let zn = tape.input(z);
                // Pathwise model samples through the inverse flow; batch norm
                // stays frozen on the sampling path.
                let fake = model.record_inverse(&mut tape, zn, cn, Mode::Infer, &mut updates)?;
                let g_data = critic.record(&mut tape, xn, Some(cn))?;
                let g_fake = critic.record(&mut tape, fake, Some(cn))?;
                let mean_data = tape.mean_all(g_data)?;
                let mean_fake = tape.mean_all(g_fake)?;
                let w = tape.sub(mean_data, mean_fake)?;
                w_acc += tape.value(w).item();
                w_batches += 1;
                let weighted = tape.scale(w, config.beta)?;
                tape.add(nll_node, weighted)?
            } else {
                nll_node
            };

            let batch_nll = tape.value(nll_node).item();
            if !batch_nll.is_finite() {
                return Err(Error::Divergence(format!(
                    "non-finite training loss at epoch {epoch}"
                )));
            }
            train_loss_acc += batch_nll * chunk.len() as f64;
            train_count += chunk.len();

            let grads = tape.backward(loss_node)?;
            grads.accumulate(&mut model.params)?;
            model.apply_bn_updates(&updates);
            adam.step(&mut model.params).map_err(|e| {
                Error::Divergence(format!("optimizer rejected epoch {epoch}: {e}"))
            })?;
        }

        let train_nll = train_loss_acc / train_count.max(1) as f64;
        let val_nll = nll(&model, x_val, c_val)
            .map_err(|e| Error::Divergence(format!("validation failed at epoch {epoch}: {e}")))?;
        history.push(EpochStats {
            epoch,
            train_nll,
            val_nll,
            w_estimate: (w_batches > 0).then(|| w_acc / w_batches as f64),
        });

        let improved = best.as_ref().is_none_or(|(_, b, _)| val_nll < *b);
        if improved {
            best = Some((epoch, val_nll, model.clone()));
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= config.patience {
                break;
            }
        }
    }

    let (best_epoch, best_val_nll, model) = best.expect("at least one epoch ran");
    Ok(TrainOutcome { model, history, best_epoch, best_val_nll })
}

/// Draw a `[rows, cols]` array of standard-normal variates.
pub fn standard_normal_array<R: Rng>(rng: &mut R, rows: usize, cols: usize) -> Array {
    let data: Vec<f64> = (0..rows * cols).map(|_| StandardNormal.sample(rng)).collect();
    Array::new(vec![rows, cols], data).expect("normal array shape")
}

fn dataset_matrices(ds: &WindowDataset) -> Result<(Array, Array)> {
    ds.standardized_matrices()
}

/// Train by exact conditional maximum likelihood; returns the checkpoint
/// with the best validation nll.
pub fn train_mle(
    train: &WindowDataset,
    val: &WindowDataset,
    flow_spec: FlowSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    let cfg = TrainConfig { beta: 0.0, ..config.clone() };
    let (x, c) = dataset_matrices(train)?;
    let (xv, cv) = dataset_matrices(val)?;
    train_arrays(&x, &c, &xv, &cv, flow_spec, &cfg)
}

/// Train with the combined objective `nll + beta * W_hat`; requires
/// `beta > 0` (use [`train_mle`] otherwise).
pub fn train_wflow(
    train: &WindowDataset,
    val: &WindowDataset,
    flow_spec: FlowSpec,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    if config.beta <= 0.0 {
        return Err(Error::Config("train_wflow requires beta > 0".into()));
    }
    let (x, c) = dataset_matrices(train)?;
    let (xv, cv) = dataset_matrices(val)?;
    train_arrays(&x, &c, &xv, &cv, flow_spec, config)
}

/// Emit the loss history as `epoch,train_nll,val_nll,w_estimate` CSV.
/// The Wasserstein column is empty for pure maximum-likelihood runs.
pub fn write_history_csv(history: &[EpochStats], path: &Path) -> Result<()> {
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(file, "epoch,train_nll,val_nll,w_estimate")?;
    for e in history {
        match e.w_estimate {
            Some(w) => writeln!(file, "{},{},{},{}", e.epoch, e.train_nll, e.val_nll, w)?,
            None => writeln!(file, "{},{},{},", e.epoch, e.train_nll, e.val_nll)?,
        }
    }
    file.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests;
