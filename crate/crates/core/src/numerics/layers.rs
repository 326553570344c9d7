//! Parameterized layers recorded onto the tape: affine maps, 1-D
//! convolutions, and batch normalization with running statistics.

use rand::Rng;

use crate::{Error, Result};

use super::tape::{batch_stats, NodeId, Tape};
use super::{next_bn_key, Array, Mode, ParamId, ParamStore};

/// Weight initialization for new layers.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    /// All zeros. Used for the final layer of scale/translate nets so every
    /// coupling block starts as the identity map.
    Zeros,
    /// Uniform in `±sqrt(1/fan_in)`.
    Uniform,
}

fn init_weights<R: Rng>(shape: Vec<usize>, fan_in: usize, init: Init, rng: &mut R) -> Array {
    match init {
        Init::Zeros => Array::zeros(shape),
        Init::Uniform => {
            let bound = (1.0 / fan_in as f64).sqrt();
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Array::new(shape, data).expect("init shape")
        }
    }
}

/// Fully connected layer `x . w + b`.
#[derive(Clone, Debug)]
pub struct AffineLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl AffineLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        in_dim: usize,
        out_dim: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = store.create(init_weights(vec![in_dim, out_dim], in_dim, init, rng));
        let b = store.create(Array::zeros(vec![out_dim]));
        AffineLayer { w, b, in_dim, out_dim }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        tape.affine(x, w, b)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// 1-D convolution layer, kernel width odd, stride 1, zero padding that
/// preserves the sequence length.
#[derive(Clone, Debug)]
pub struct Conv1dLayer {
    pub w: ParamId,
    pub b: ParamId,
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
}

impl Conv1dLayer {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        assert!(kernel % 2 == 1, "conv kernel width must be odd");
        let fan_in = in_channels * kernel;
        let w = store.create(init_weights(
            vec![out_channels, in_channels, kernel],
            fan_in,
            init,
            rng,
        ));
        let b = store.create(Array::zeros(vec![out_channels]));
        Conv1dLayer { w, b, in_channels, out_channels, kernel }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let w = tape.param(store, self.w)?;
        let b = tape.param(store, self.b)?;
        tape.conv1d(x, w, b)
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.w, self.b]
    }
}

/// Running-statistic update produced by a training-mode batch-norm forward.
/// Apply with [`BatchNormState::apply_update`] once the step is taken.
#[derive(Clone, Debug)]
pub struct BnUpdate {
    pub key: u64,
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

/// Per-channel scale/shift parameters plus running statistics.
///
/// Training mode standardizes with batch statistics and reports a running
/// update; inference mode is a fixed affine map from the running statistics,
/// so a model in inference mode is a deterministic function of its inputs.
#[derive(Clone, Debug)]
pub struct BatchNormState {
    key: u64,
    pub gamma: ParamId,
    pub beta: ParamId,
    pub channels: usize,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
    pub momentum: f64,
    pub eps: f64,
}

impl BatchNormState {
    pub fn new(store: &mut ParamStore, channels: usize, momentum: f64, eps: f64) -> Self {
        let gamma = store.create(Array::full(vec![channels], 1.0));
        let beta = store.create(Array::zeros(vec![channels]));
        BatchNormState {
            key: next_bn_key(),
            gamma,
            beta,
            channels,
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            eps,
        }
    }

    pub fn key(&self) -> u64 {
        self.key
    }

    pub fn param_ids(&self) -> [ParamId; 2] {
        [self.gamma, self.beta]
    }

    /// Record the normalization of `x`. In training mode the batch must hold
    /// at least two rows and an update for the running statistics is pushed
    /// onto `updates`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<NodeId> {
        let gamma = tape.param(store, self.gamma)?;
        let beta = tape.param(store, self.beta)?;
        match mode {
            Mode::Train => {
                if tape.shape(x)[0] < 2 {
                    return Err(Error::Shape(
                        "batch normalization in training mode needs a batch of at least 2".into(),
                    ));
                }
                let (mean, var) = batch_stats(tape.value(x))?;
                updates.push(BnUpdate { key: self.key, mean: mean.clone(), var: var.clone() });
                tape.batch_norm(x, gamma, beta, mean, var, self.eps, true)
            }
            Mode::Infer => tape.batch_norm(
                x,
                gamma,
                beta,
                self.running_mean.clone(),
                self.running_var.clone(),
                self.eps,
                false,
            ),
        }
    }

    /// Exponential moving average toward the batch statistics:
    /// `running <- (1 - momentum) * running + momentum * batch`.
    pub fn apply_update(&mut self, update: &BnUpdate) {
        debug_assert_eq!(update.key, self.key);
        let m = self.momentum;
        for (r, b) in self.running_mean.iter_mut().zip(&update.mean) {
            *r = (1.0 - m) * *r + m * b;
        }
        for (r, b) in self.running_var.iter_mut().zip(&update.var) {
            *r = (1.0 - m) * *r + m * b;
        }
    }
}

/// Standalone batch normalization of a `[batch, channels]` (or
/// `[batch, channels, length]`) array. Training mode updates the running
/// statistics in place.
pub fn batchnorm(
    input: &Array,
    state: &mut BatchNormState,
    mode: Mode,
    store: &ParamStore,
) -> Result<Array> {
    let mut tape = Tape::new();
    let x = tape.input(input.clone());
    let mut updates = Vec::new();
    let y = state.forward(&mut tape, store, x, mode, &mut updates)?;
    for u in &updates {
        state.apply_update(u);
    }
    Ok(tape.value(y).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};

    #[test]
    fn constant_batch_normalizes_to_zero() {
        let mut store = ParamStore::new();
        let mut bn = BatchNormState::new(&mut store, 3, 0.1, 1e-5);
        let x = Array::new(vec![4, 3], vec![2.5; 12]).unwrap();
        let y = batchnorm(&x, &mut bn, Mode::Train, &store).unwrap();
        for v in y.data() {
            assert!(v.abs() < 1e-12, "variance floor should yield 0, got {v}");
        }
    }

    #[test]
    fn training_mode_standardizes_per_channel() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let mut store = ParamStore::new();
        let mut bn = BatchNormState::new(&mut store, 2, 0.1, 1e-12);
        let data: Vec<f64> = (0..32).map(|_| rng.random_range(-3.0..5.0)).collect();
        let x = Array::new(vec![16, 2], data).unwrap();
        let y = batchnorm(&x, &mut bn, Mode::Train, &store).unwrap();
        for c in 0..2 {
            let col: Vec<f64> = (0..16).map(|r| y.data()[r * 2 + c]).collect();
            let mean: f64 = col.iter().sum::<f64>() / 16.0;
            let var: f64 = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / 16.0;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "channel {c} var {var}");
        }
    }

    #[test]
    fn running_stats_follow_ema_recurrence() {
        let mut store = ParamStore::new();
        let mut bn = BatchNormState::new(&mut store, 1, 0.1, 1e-5);

        let batch1 = Array::new(vec![2, 1], vec![1.0, 3.0]).unwrap(); // mean 2, var 1
        let batch2 = Array::new(vec![2, 1], vec![4.0, 8.0]).unwrap(); // mean 6, var 4
        batchnorm(&batch1, &mut bn, Mode::Train, &store).unwrap();
        batchnorm(&batch2, &mut bn, Mode::Train, &store).unwrap();

        // EMA oracle, momentum 0.1, starting from mean 0 / var 1.
        let mean1 = 0.9 * 0.0 + 0.1 * 2.0;
        let mean2 = 0.9 * mean1 + 0.1 * 6.0;
        let var1 = 0.9 * 1.0 + 0.1 * 1.0;
        let var2 = 0.9 * var1 + 0.1 * 4.0;
        assert!((bn.running_mean[0] - mean2).abs() < 1e-12);
        assert!((bn.running_var[0] - var2).abs() < 1e-12);
    }

    #[test]
    fn batch_of_one_is_rejected_in_training() {
        let mut store = ParamStore::new();
        let mut bn = BatchNormState::new(&mut store, 2, 0.1, 1e-5);
        let x = Array::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
        assert!(batchnorm(&x, &mut bn, Mode::Train, &store).is_err());
        // Inference mode has no batch-size restriction.
        assert!(batchnorm(&x, &mut bn, Mode::Infer, &store).is_ok());
    }

    #[test]
    fn inference_is_deterministic_given_running_stats() {
        let mut store = ParamStore::new();
        let mut bn = BatchNormState::new(&mut store, 1, 0.1, 1e-5);
        bn.running_mean = vec![1.0];
        bn.running_var = vec![4.0];
        let x = Array::new(vec![3, 1], vec![1.0, 3.0, 5.0]).unwrap();
        let y1 = batchnorm(&x, &mut bn, Mode::Infer, &store).unwrap();
        let y2 = batchnorm(&x, &mut bn, Mode::Infer, &store).unwrap();
        assert_eq!(y1, y2);
        // (x - 1) / sqrt(4 + eps) with gamma=1, beta=0.
        assert!((y1.data()[1] - 2.0 / (4.0f64 + 1e-5).sqrt()).abs() < 1e-12);
    }
}
