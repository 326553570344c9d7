//! Conditional normalizing flows built from affine coupling layers.
//!
//! A [`FlowModel`] chains `K` coupling blocks with alternating orientation.
//! Each block leaves one partition of its input unchanged (vanilla) or
//! transforms it from the condition alone (reinforced) and applies an
//! elementwise scale-and-shift to the other partition, so the Jacobian is
//! triangular and the log-determinant is the sum of the scale-net outputs.
//! The latent prior is standard normal, which gives an exact conditional
//! log-density via the change-of-variable formula and sampling through the
//! inverse map.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::numerics::{Array, BnUpdate, Mode, NodeId, ParamStore, Tape};
use crate::{Error, Result};

mod checkpoint;
mod nets;

pub use checkpoint::{checkpoint_bytes, checkpoint_from_bytes, load_checkpoint, save_checkpoint};
pub use nets::{Act, ConvNet, DenseNet};

/// Natural log of 2*pi.
pub(crate) const LN_2PI: f64 = 1.8378770664093453;

/// Which coupling structure a block uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CouplingVariant {
    /// The pass-through partition is copied unchanged.
    Vanilla,
    /// The pass-through partition is scaled and translated by
    /// condition-only nets, strengthening the coupling to the condition.
    Reinforced,
}

impl std::str::FromStr for CouplingVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vanilla" => Ok(CouplingVariant::Vanilla),
            "reinforced" => Ok(CouplingVariant::Reinforced),
            other => Err(Error::Config(format!(
                "unknown coupling variant '{other}' (expected 'vanilla' or 'reinforced')"
            ))),
        }
    }
}

impl std::fmt::Display for CouplingVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CouplingVariant::Vanilla => write!(f, "vanilla"),
            CouplingVariant::Reinforced => write!(f, "reinforced"),
        }
    }
}

/// Architecture of a flow model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FlowSpec {
    /// Dimension of the modeled data vector (the forecast horizon).
    pub data_dim: usize,
    /// Dimension of the condition vector (the history length).
    pub cond_dim: usize,
    /// Number of chained coupling blocks.
    pub blocks: usize,
    pub variant: CouplingVariant,
    /// Hidden channels of the convolutional scale/translate nets.
    pub conv_channels: usize,
    /// Convolution kernel width (odd; zero padding preserves length).
    pub conv_kernel: usize,
    /// Hidden width of the condition-only nets.
    pub cond_hidden: usize,
    pub bn_momentum: f64,
    pub bn_eps: f64,
}

impl FlowSpec {
    pub fn new(data_dim: usize, cond_dim: usize, variant: CouplingVariant) -> Self {
        FlowSpec {
            data_dim,
            cond_dim,
            blocks: 9,
            variant,
            conv_channels: 8,
            conv_kernel: 3,
            cond_hidden: 64,
            bn_momentum: 0.1,
            bn_eps: 1e-5,
        }
    }

    /// Split index: the first `split()` coordinates form one partition.
    pub fn split(&self) -> usize {
        self.data_dim / 2
    }

    pub fn validate(&self) -> Result<()> {
        if self.data_dim < 2 {
            return Err(Error::Config("data dimension must be at least 2 to split".into()));
        }
        if self.cond_dim == 0 {
            return Err(Error::Config("condition dimension must be positive".into()));
        }
        if self.blocks == 0 {
            return Err(Error::Config("at least one coupling block is required".into()));
        }
        if self.conv_kernel % 2 == 0 {
            return Err(Error::Config("convolution kernel width must be odd".into()));
        }
        Ok(())
    }
}

/// One affine coupling layer. `flip` selects which half passes through:
/// consecutive blocks alternate so every coordinate gets transformed.
#[derive(Clone, Debug)]
pub struct CouplingBlock {
    pub variant: CouplingVariant,
    /// Split index into the data vector.
    pub d: usize,
    /// Total data dimension.
    pub dim: usize,
    /// When false the first `d` coordinates pass through; when true the
    /// last `dim - d` do.
    pub flip: bool,
    pub scale: ConvNet,
    pub translate: ConvNet,
    pub cond_scale: Option<DenseNet>,
    pub cond_translate: Option<DenseNet>,
}

impl CouplingBlock {
    fn new<R: Rng>(spec: &FlowSpec, flip: bool, store: &mut ParamStore, rng: &mut R) -> Self {
        let d = spec.split();
        let dim = spec.data_dim;
        let pass_len = if flip { dim - d } else { d };
        let trans_len = dim - pass_len;
        let net_in = pass_len + spec.cond_dim;
        let scale = ConvNet::new(
            store,
            net_in,
            trans_len,
            spec.conv_channels,
            spec.conv_kernel,
            Act::Tanh,
            true,
            spec.bn_momentum,
            spec.bn_eps,
            rng,
        );
        let translate = ConvNet::new(
            store,
            net_in,
            trans_len,
            spec.conv_channels,
            spec.conv_kernel,
            Act::Relu,
            false,
            spec.bn_momentum,
            spec.bn_eps,
            rng,
        );
        let (cond_scale, cond_translate) = match spec.variant {
            CouplingVariant::Vanilla => (None, None),
            CouplingVariant::Reinforced => (
                Some(DenseNet::new(
                    store,
                    spec.cond_dim,
                    spec.cond_hidden,
                    pass_len,
                    Act::Tanh,
                    true,
                    rng,
                )),
                Some(DenseNet::new(
                    store,
                    spec.cond_dim,
                    spec.cond_hidden,
                    pass_len,
                    Act::Relu,
                    false,
                    rng,
                )),
            ),
        };
        CouplingBlock {
            variant: spec.variant,
            d,
            dim,
            flip,
            scale,
            translate,
            cond_scale,
            cond_translate,
        }
    }

    /// Column ranges `(start, len)` of the pass-through and transformed
    /// partitions.
    fn partitions(&self) -> ((usize, usize), (usize, usize)) {
        if self.flip {
            ((self.d, self.dim - self.d), (0, self.d))
        } else {
            ((0, self.d), (self.d, self.dim - self.d))
        }
    }

    fn reassemble(&self, tape: &mut Tape, pass: NodeId, trans: NodeId) -> Result<NodeId> {
        if self.flip {
            tape.concat(trans, pass)
        } else {
            tape.concat(pass, trans)
        }
    }

    /// Record the forward map `x -> y`. Returns `(y, logdet)` with the
    /// per-sample log-determinant `sum(s)` (plus `sum(s_c)` when reinforced).
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: NodeId,
        c: NodeId,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<(NodeId, NodeId)> {
        self.check_dims(tape, x, c)?;
        let ((ps, pl), (ts, tl)) = self.partitions();
        let xa = tape.slice(x, ps, pl)?;
        let xb = tape.slice(x, ts, tl)?;

        // The scale/translate nets see the original pass-through partition.
        let net_in = tape.concat(xa, c)?;
        let s = self.scale.forward(tape, store, net_in, mode, updates)?;
        let t = self.translate.forward(tape, store, net_in, mode, updates)?;
        let es = tape.exp(s)?;
        let scaled = tape.mul(xb, es)?;
        let yb = tape.add(scaled, t)?;
        let mut logdet = tape.row_sum(s)?;

        let ya = match (&self.cond_scale, &self.cond_translate) {
            (Some(cs), Some(ct)) => {
                let sc = cs.forward(tape, store, c)?;
                let tc = ct.forward(tape, store, c)?;
                let esc = tape.exp(sc)?;
                let scaled_a = tape.mul(xa, esc)?;
                let ya = tape.add(scaled_a, tc)?;
                let ld_a = tape.row_sum(sc)?;
                logdet = tape.add(logdet, ld_a)?;
                ya
            }
            _ => xa,
        };

        let y = self.reassemble(tape, ya, yb)?;
        Ok((y, logdet))
    }

    /// Record the inverse map `y -> x`.
    pub fn inverse(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        y: NodeId,
        c: NodeId,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<NodeId> {
        self.check_dims(tape, y, c)?;
        let ((ps, pl), (ts, tl)) = self.partitions();
        let ya = tape.slice(y, ps, pl)?;
        let yb = tape.slice(y, ts, tl)?;

        let xa = match (&self.cond_scale, &self.cond_translate) {
            (Some(cs), Some(ct)) => {
                let sc = cs.forward(tape, store, c)?;
                let tc = ct.forward(tape, store, c)?;
                let shifted = tape.sub(ya, tc)?;
                let neg_sc = tape.neg(sc)?;
                let esc = tape.exp(neg_sc)?;
                tape.mul(shifted, esc)?
            }
            _ => ya,
        };

        let net_in = tape.concat(xa, c)?;
        let s = self.scale.forward(tape, store, net_in, mode, updates)?;
        let t = self.translate.forward(tape, store, net_in, mode, updates)?;
        let shifted = tape.sub(yb, t)?;
        let neg_s = tape.neg(s)?;
        let es = tape.exp(neg_s)?;
        let xb = tape.mul(shifted, es)?;

        self.reassemble(tape, xa, xb)
    }

    fn check_dims(&self, tape: &Tape, x: NodeId, c: NodeId) -> Result<()> {
        let xs = tape.shape(x);
        let cs = tape.shape(c);
        if xs.len() != 2 || xs[1] != self.dim {
            return Err(Error::Shape(format!(
                "coupling expects [B, {}] data, got {:?}",
                self.dim, xs
            )));
        }
        if cs.len() != 2 || cs[0] != xs[0] {
            return Err(Error::Shape(format!(
                "condition batch {:?} does not match data batch {:?}",
                cs, xs
            )));
        }
        Ok(())
    }

    fn bn_states_mut(&mut self) -> impl Iterator<Item = &mut crate::numerics::BatchNormState> {
        self.scale.bn_states_mut().chain(self.translate.bn_states_mut())
    }
}

/// Single-sample coupling forward in inference mode: `(y, logdet)`.
pub fn coupling_forward(
    block: &CouplingBlock,
    store: &ParamStore,
    x: &[f64],
    c: &[f64],
) -> Result<(Vec<f64>, f64)> {
    let mut tape = Tape::new();
    let xn = tape.input(Array::new(vec![1, x.len()], x.to_vec())?);
    let cn = tape.input(Array::new(vec![1, c.len()], c.to_vec())?);
    let mut updates = Vec::new();
    let (y, ld) = block.forward(&mut tape, store, xn, cn, Mode::Infer, &mut updates)?;
    let yv = tape.value(y);
    if !yv.all_finite() {
        return Err(Error::NonFinite("coupling forward produced a non-finite value".into()));
    }
    Ok((yv.data().to_vec(), tape.value(ld).data()[0]))
}

/// Single-sample coupling inverse in inference mode.
pub fn coupling_inverse(
    block: &CouplingBlock,
    store: &ParamStore,
    y: &[f64],
    c: &[f64],
) -> Result<Vec<f64>> {
    let mut tape = Tape::new();
    let yn = tape.input(Array::new(vec![1, y.len()], y.to_vec())?);
    let cn = tape.input(Array::new(vec![1, c.len()], c.to_vec())?);
    let mut updates = Vec::new();
    let x = block.inverse(&mut tape, store, yn, cn, Mode::Infer, &mut updates)?;
    Ok(tape.value(x).data().to_vec())
}

/// Per-block log-determinant contributions and the final latent of one
/// forward pass.
#[derive(Clone, Debug)]
pub struct FlowTrace {
    pub block_logdets: Vec<f64>,
    pub latent: Vec<f64>,
}

impl FlowTrace {
    pub fn total_logdet(&self) -> f64 {
        self.block_logdets.iter().sum()
    }
}

/// A K-block conditional normalizing flow with a standard-normal prior.
#[derive(Clone, Debug)]
pub struct FlowModel {
    pub spec: FlowSpec,
    pub blocks: Vec<CouplingBlock>,
    pub params: ParamStore,
}

impl FlowModel {
    /// Build a fresh model; every block starts as the identity map.
    pub fn new<R: Rng>(spec: FlowSpec, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let mut params = ParamStore::new();
        let blocks = (0..spec.blocks)
            .map(|i| CouplingBlock::new(&spec, i % 2 == 1, &mut params, rng))
            .collect();
        Ok(FlowModel { spec, blocks, params })
    }

    pub fn data_dim(&self) -> usize {
        self.spec.data_dim
    }

    pub fn cond_dim(&self) -> usize {
        self.spec.cond_dim
    }

    /// Record `x -> z` through all blocks. Returns the latent node and one
    /// log-determinant node per block.
    pub fn record_forward(
        &self,
        tape: &mut Tape,
        x: NodeId,
        c: NodeId,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let mut h = x;
        let mut logdets = Vec::with_capacity(self.blocks.len());
        for block in &self.blocks {
            let (next, ld) = block.forward(tape, &self.params, h, c, mode, updates)?;
            h = next;
            logdets.push(ld);
        }
        Ok((h, logdets))
    }

    /// Record `z -> x` by inverting the blocks in reverse order.
    pub fn record_inverse(
        &self,
        tape: &mut Tape,
        z: NodeId,
        c: NodeId,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<NodeId> {
        let mut h = z;
        for block in self.blocks.iter().rev() {
            h = block.inverse(tape, &self.params, h, c, mode, updates)?;
        }
        Ok(h)
    }

    /// Record the conditional log-density of each row of `x`:
    /// `log N(z; 0, I) + sum of block log-determinants`.
    pub fn record_log_prob(
        &self,
        tape: &mut Tape,
        x: NodeId,
        c: NodeId,
        mode: Mode,
        updates: &mut Vec<BnUpdate>,
    ) -> Result<(NodeId, NodeId, Vec<NodeId>)> {
        let (z, logdets) = self.record_forward(tape, x, c, mode, updates)?;
        let z2 = tape.mul(z, z)?;
        let sq = tape.row_sum(z2)?;
        let neg_half = tape.scale(sq, -0.5)?;
        let prior = tape.add_const(neg_half, -0.5 * self.spec.data_dim as f64 * LN_2PI)?;
        let mut total = prior;
        for ld in &logdets {
            total = tape.add(total, *ld)?;
        }
        Ok((total, z, logdets))
    }

    /// Route running-statistic updates from a training-mode forward pass
    /// back into the blocks' batch-norm states.
    pub fn apply_bn_updates(&mut self, updates: &[BnUpdate]) {
        for update in updates {
            for bn in self.blocks.iter_mut().flat_map(|b| b.bn_states_mut()) {
                if bn.key() == update.key {
                    bn.apply_update(update);
                    break;
                }
            }
        }
    }

    fn batch_pair(&self, x: &Array, c: &Array) -> Result<()> {
        if x.shape().len() != 2 || x.dim(1) != self.spec.data_dim {
            return Err(Error::Shape(format!(
                "expected data [B, {}], got {:?}",
                self.spec.data_dim,
                x.shape()
            )));
        }
        if c.shape().len() != 2 || c.dim(1) != self.spec.cond_dim || c.dim(0) != x.dim(0) {
            return Err(Error::Shape(format!(
                "expected condition [{}, {}], got {:?}",
                x.dim(0),
                self.spec.cond_dim,
                c.shape()
            )));
        }
        Ok(())
    }

    /// Inference-mode forward pass of a batch: `(z, logdet per row)`.
    pub fn forward_batch(&self, x: &Array, c: &Array) -> Result<(Array, Vec<f64>)> {
        self.batch_pair(x, c)?;
        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let cn = tape.input(c.clone());
        let mut updates = Vec::new();
        let (z, logdets) = self.record_forward(&mut tape, xn, cn, Mode::Infer, &mut updates)?;
        let mut total = logdets[0];
        for ld in &logdets[1..] {
            total = tape.add(total, *ld)?;
        }
        let zv = tape.value(z).clone();
        if !zv.all_finite() {
            return Err(Error::NonFinite("forward pass produced a non-finite latent".into()));
        }
        Ok((zv, tape.value(total).data().to_vec()))
    }

    /// Inference-mode forward pass of one sample: `(z, logdet)`.
    pub fn forward(&self, x: &[f64], c: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (z, ld) = self.forward_batch(
            &Array::new(vec![1, x.len()], x.to_vec())?,
            &Array::new(vec![1, c.len()], c.to_vec())?,
        )?;
        Ok((z.data().to_vec(), ld[0]))
    }

    /// Exact conditional log-density of one sample, with its trace.
    pub fn log_prob(&self, x: &[f64], c: &[f64]) -> Result<(f64, FlowTrace)> {
        let xn = Array::new(vec![1, x.len()], x.to_vec())?;
        let cn = Array::new(vec![1, c.len()], c.to_vec())?;
        self.batch_pair(&xn, &cn)?;
        let mut tape = Tape::new();
        let xi = tape.input(xn);
        let ci = tape.input(cn);
        let mut updates = Vec::new();
        let (lp, z, lds) = self.record_log_prob(&mut tape, xi, ci, Mode::Infer, &mut updates)?;
        let value = tape.value(lp).data()[0];
        if !value.is_finite() {
            return Err(Error::NonFinite("log-density is not finite".into()));
        }
        let trace = FlowTrace {
            block_logdets: lds.iter().map(|&n| tape.value(n).data()[0]).collect(),
            latent: tape.value(z).data().to_vec(),
        };
        Ok((value, trace))
    }

    /// Inference-mode log-density of a batch.
    pub fn log_prob_batch(&self, x: &Array, c: &Array) -> Result<Vec<f64>> {
        self.batch_pair(x, c)?;
        let mut tape = Tape::new();
        let xn = tape.input(x.clone());
        let cn = tape.input(c.clone());
        let mut updates = Vec::new();
        let (lp, _, _) = self.record_log_prob(&mut tape, xn, cn, Mode::Infer, &mut updates)?;
        Ok(tape.value(lp).data().to_vec())
    }

    /// Map latents back to data space: one row of `z` per row of `c`.
    pub fn sample_batch(&self, z: &Array, c: &Array) -> Result<Array> {
        self.batch_pair(z, c)?;
        let mut tape = Tape::new();
        let zn = tape.input(z.clone());
        let cn = tape.input(c.clone());
        let mut updates = Vec::new();
        let x = self.record_inverse(&mut tape, zn, cn, Mode::Infer, &mut updates)?;
        let xv = tape.value(x).clone();
        if !xv.all_finite() {
            return Err(Error::NonFinite("inverse pass produced a non-finite sample".into()));
        }
        Ok(xv)
    }

    /// Map one latent draw to data space given a condition.
    pub fn sample(&self, c: &[f64], z: &[f64]) -> Result<Vec<f64>> {
        let out = self.sample_batch(
            &Array::new(vec![1, z.len()], z.to_vec())?,
            &Array::new(vec![1, c.len()], c.to_vec())?,
        )?;
        Ok(out.data().to_vec())
    }
}
