//! Scale/translate networks used inside coupling blocks.
//!
//! The nets that see the transformed partition's complement are three-layer
//! 1-D convolutional networks (two length-preserving convolutions plus an
//! affine head); the condition-only nets of the reinforced variant are fully
//! connected with one hidden layer. Scaling nets use tanh activations and end
//! in tanh, so every scale output lies in `[-1, 1]` and the coupling map is
//! numerically invertible; translating nets use ReLU hidden activations with
//! a linear head. Batch normalization sits before every layer except the
//! input layer, strictly inside the nets so the coupling path itself stays
//! exactly invertible. Heads are zero-initialized, which makes a fresh block
//! the identity map.

use rand::Rng;

use crate::numerics::{
    AffineLayer, BatchNormState, BnUpdate, Conv1dLayer, Init, Mode, NodeId, ParamStore, Tape,
};
use crate::Result;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Act {
    Tanh,
    Relu,
}

impl Act {
    fn record(self, tape: &mut Tape, x: NodeId) -> Result<NodeId> {
        match self {
            Act::Tanh => tape.tanh(x),
            Act::Relu => tape.relu(x),
        }
    }
}

/// Three-layer 1-D convolutional net: the input vector is treated as a
/// single-channel sequence, convolved twice, then projected to `out_len`.
#[derive(Clone, Debug)]
pub struct ConvNet {
    pub conv0: Conv1dLayer,
    pub bn0: BatchNormState,
    pub conv1: Conv1dLayer,
    pub bn1: BatchNormState,
    pub head: AffineLayer,
    pub hidden_act: Act,
    pub out_tanh: bool,
    pub in_len: usize,
    pub out_len: usize,
}

impl ConvNet {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        in_len: usize,
        out_len: usize,
        channels: usize,
        kernel: usize,
        hidden_act: Act,
        out_tanh: bool,
        bn_momentum: f64,
        bn_eps: f64,
        rng: &mut R,
    ) -> Self {
        let conv0 = Conv1dLayer::new(store, 1, channels, kernel, Init::Uniform, rng);
        let bn0 = BatchNormState::new(store, channels, bn_momentum, bn_eps);
        let conv1 = Conv1dLayer::new(store, channels, channels, kernel, Init::Uniform, rng);
        let bn1 = BatchNormState::new(store, channels, bn_momentum, bn_eps);
        let head = AffineLayer::new(store, channels * in_len, out_len, Init::Zeros, rng);
        ConvNet { conv0, bn0, conv1, bn1, head, hidden_act, out_tanh, in_len, out_len }
    }

    /// `x` is `[B, in_len]`.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<NodeId> {
        let batch = tape.shape(x)[0];
        let seq = tape.reshape(x, vec![batch, 1, self.in_len])?;
        let h = self.conv0.forward(tape, store, seq)?;
        let h = self.hidden_act.record(tape, h)?;
        let h = self.bn0.forward(tape, store, h, mode, updates)?;
        let h = self.conv1.forward(tape, store, h)?;
        let h = self.hidden_act.record(tape, h)?;
        let h = self.bn1.forward(tape, store, h, mode, updates)?;
        let flat = tape.reshape(h, vec![batch, self.conv1.out_channels * self.in_len])?;
        let out = self.head.forward(tape, store, flat)?;
        if self.out_tanh {
            tape.tanh(out)
        } else {
            Ok(out)
        }
    }

    pub fn bn_states_mut(&mut self) -> impl Iterator<Item = &mut BatchNormState> {
        [&mut self.bn0, &mut self.bn1].into_iter()
    }

    pub fn bn_states(&self) -> impl Iterator<Item = &BatchNormState> {
        [&self.bn0, &self.bn1].into_iter()
    }
}

/// Fully connected net with one hidden layer; used for the condition-only
/// scale/translate maps of the reinforced variant.
#[derive(Clone, Debug)]
pub struct DenseNet {
    pub l0: AffineLayer,
    pub l1: AffineLayer,
    pub hidden_act: Act,
    pub out_tanh: bool,
}

impl DenseNet {
    pub fn new<R: Rng>(
        store: &mut ParamStore,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        hidden_act: Act,
        out_tanh: bool,
        rng: &mut R,
    ) -> Self {
        let l0 = AffineLayer::new(store, in_dim, hidden, Init::Uniform, rng);
        let l1 = AffineLayer::new(store, hidden, out_dim, Init::Zeros, rng);
        DenseNet { l0, l1, hidden_act, out_tanh }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let h = self.l0.forward(tape, store, x)?;
        let h = self.hidden_act.record(tape, h)?;
        let out = self.l1.forward(tape, store, h)?;
        if self.out_tanh {
            tape.tanh(out)
        } else {
            Ok(out)
        }
    }
}
