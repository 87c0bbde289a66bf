//! The combined forecasting model.
//!
//! Channel trajectories `[C, N]` (three scalar coordinates per human joint,
//! then optional robot channels) are mapped to frequency space with an
//! orthonormal cosine transform, passed through two graph-attention residual
//! blocks, mapped back, run through a dilated causal convolution encoder and
//! decoder, and projected onto the forecast horizon by a shared per-channel
//! time map. The last observed value of every human channel is added back, so
//! an all-zero network reproduces the zero-velocity baseline exactly.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::dct::dct_matrix;
use crate::error::{Error, Result};
use crate::gat::{gat_block_forward_on, GatBlockIds, GatBlockParams};
use crate::motion::{streams, DatasetSplit, KinematicTree, ObservationWindow};
use crate::optim::{Adam, AdamParams};
use crate::rng::RngStream;
use crate::tape::{Tape, ValueId};
use crate::tcn::{tcn_block_forward_on, TcnBlockIds, TcnBlockParams};
use crate::tensor::Tensor;
use crate::Mode;

/// Softening constant inside the per-joint distance loss; keeps the loss
/// differentiable at zero error.
pub const LOSS_EPS: f64 = 1e-8;

/// Model shape and stochastic-regularisation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TgnConfig {
    /// Observed frames per window, `N`.
    pub history: usize,
    /// Forecast frames per window, `T`.
    pub horizon: usize,
    /// Human joints, `J`; the model owns `3 J` human channels.
    pub joints: usize,
    /// Extra conditioning channels appended after the human ones. Either 0 or
    /// three per robot node of the tree the windows come from.
    pub robot_channels: usize,
    /// Channel width of the convolution trunk.
    pub hidden: usize,
    /// Attention heads per graph layer.
    pub heads: usize,
    /// Dilation per convolution block; the length fixes the block count of
    /// both the encoder and the decoder.
    pub dilations: Vec<usize>,
    /// Convolution kernel width.
    pub kernel: usize,
    /// Elementwise dropout rate of the attention blocks.
    pub gat_dropout: f64,
    /// Channel dropout rate of the convolution blocks.
    pub tcn_dropout: f64,
    /// Seed of the weight-initialisation stream.
    pub seed: u64,
}

impl Default for TgnConfig {
    fn default() -> TgnConfig {
        TgnConfig {
            history: 10,
            horizon: 25,
            joints: 3,
            robot_channels: 0,
            hidden: 64,
            heads: 4,
            dilations: vec![1, 2, 4, 8],
            kernel: 3,
            gat_dropout: 0.1,
            tcn_dropout: 0.1,
            seed: 0,
        }
    }
}

impl TgnConfig {
    /// Total input channels `C = 3 J +` robot channels.
    pub fn channels(&self) -> usize {
        3 * self.joints + self.robot_channels
    }

    /// Human output channels `3 J`.
    pub fn human_channels(&self) -> usize {
        3 * self.joints
    }

    pub fn validate(&self) -> Result<()> {
        if self.history == 0 || self.horizon == 0 {
            return Err(Error::InvalidArgument("history and horizon must be positive".into()));
        }
        if self.joints == 0 {
            return Err(Error::InvalidArgument("need at least one human joint".into()));
        }
        if self.hidden == 0 || self.heads == 0 || self.kernel == 0 {
            return Err(Error::InvalidArgument("hidden, heads, kernel must be positive".into()));
        }
        if self.dilations.is_empty() || self.dilations.iter().any(|&d| d == 0) {
            return Err(Error::InvalidArgument("dilations must be positive and non-empty".into()));
        }
        for (name, rate) in [("gat_dropout", self.gat_dropout), ("tcn_dropout", self.tcn_dropout)] {
            if !(0.0..1.0).contains(&rate) {
                return Err(Error::InvalidArgument(format!("{name} must lie in [0, 1)")));
            }
        }
        Ok(())
    }
}

/// All learned tensors plus the config that shaped them.
#[derive(Debug, Clone, PartialEq)]
pub struct TgnParams {
    pub config: TgnConfig,
    pub gat1: GatBlockParams,
    pub gat2: GatBlockParams,
    pub encoder: Vec<TcnBlockParams>,
    pub decoder: Vec<TcnBlockParams>,
    /// Shared per-channel map from history positions to horizon positions,
    /// `[N, T]`. Starts at zero so a fresh model predicts the last pose.
    pub time_weight: Tensor,
    /// Per-horizon-position offset, `[T]`.
    pub time_bias: Tensor,
}

/// Tape handles of everything `forward_on` needs.
pub struct TgnIds {
    pub gat1: GatBlockIds,
    pub gat2: GatBlockIds,
    pub encoder: Vec<TcnBlockIds>,
    pub decoder: Vec<TcnBlockIds>,
    pub time_weight: ValueId,
    pub time_bias: ValueId,
    /// Cosine basis `[N, N]` and its transpose, recorded as constants.
    pub basis: ValueId,
    pub basis_t: ValueId,
    /// Constant `[J, 3J]` selector summing the three squared coordinate
    /// errors of each joint; used by the loss.
    pub joint_sum: ValueId,
}

impl TgnParams {
    /// Fresh parameters drawn from the config's init stream. The time map
    /// starts at zero, which makes the untrained model coincide with the
    /// zero-velocity baseline.
    pub fn init(config: &TgnConfig) -> Result<TgnParams> {
        config.validate()?;
        let mut rng = RngStream::new(config.seed, streams::INIT);
        let c = config.channels();
        let n = config.history;
        let gat1 = GatBlockParams::init(c, n, config.heads, config.gat_dropout, &mut rng);
        let gat2 = GatBlockParams::init(c, n, config.heads, config.gat_dropout, &mut rng);
        let mut encoder = Vec::new();
        let mut decoder = Vec::new();
        let blocks = config.dilations.len();
        for (i, &d) in config.dilations.iter().enumerate() {
            let c_in = if i == 0 { c } else { config.hidden };
            encoder.push(TcnBlockParams::init(
                c_in,
                config.hidden,
                config.kernel,
                d,
                config.tcn_dropout,
                &mut rng,
            ));
        }
        for (i, &d) in config.dilations.iter().enumerate() {
            let c_out = if i + 1 == blocks { config.human_channels() } else { config.hidden };
            decoder.push(TcnBlockParams::init(
                config.hidden,
                c_out,
                config.kernel,
                d,
                config.tcn_dropout,
                &mut rng,
            ));
        }
        Ok(TgnParams {
            config: config.clone(),
            gat1,
            gat2,
            encoder,
            decoder,
            time_weight: Tensor::zeros(&[n, config.horizon]),
            time_bias: Tensor::zeros(&[config.horizon]),
        })
    }

    /// Parameters with every weight zeroed; the forward pass then returns the
    /// last observed pose at every horizon step, exactly.
    pub fn zeroed(config: &TgnConfig) -> Result<TgnParams> {
        let mut p = TgnParams::init(config)?;
        for block in [&mut p.gat1, &mut p.gat2] {
            for layer in [&mut block.layer1, &mut block.layer2] {
                zero(&mut layer.weight);
                for v in &mut layer.attn_src {
                    zero(v);
                }
                for v in &mut layer.attn_dst {
                    zero(v);
                }
            }
        }
        for block in p.encoder.iter_mut().chain(p.decoder.iter_mut()) {
            zero(&mut block.conv1.weights);
            zero(&mut block.conv2.weights);
            if let Some(k) = &mut block.skip {
                zero(&mut k.weights);
            }
        }
        Ok(p)
    }

    /// Visits every trainable tensor in the order `push` records them.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Tensor)) {
        self.gat1.visit(f);
        self.gat2.visit(f);
        for b in &self.encoder {
            b.visit(f);
        }
        for b in &self.decoder {
            b.visit(f);
        }
        f(&self.time_weight);
        f(&self.time_bias);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        self.gat1.visit_mut(f);
        self.gat2.visit_mut(f);
        for b in &mut self.encoder {
            b.visit_mut(f);
        }
        for b in &mut self.decoder {
            b.visit_mut(f);
        }
        f(&mut self.time_weight);
        f(&mut self.time_bias);
    }

    /// Clones the trainable tensors into a flat list aligned with `push`.
    pub fn collect(&self) -> Vec<Tensor> {
        let mut out = Vec::new();
        self.visit(&mut |t| out.push(t.clone()));
        out
    }

    /// Writes a flat list produced by `collect` (possibly updated) back.
    pub fn assign(&mut self, flat: &[Tensor]) -> Result<()> {
        let mut idx = 0;
        let mut err = None;
        self.visit_mut(&mut |t| {
            if idx < flat.len() {
                if flat[idx].shape() == t.shape() {
                    *t = flat[idx].clone();
                } else if err.is_none() {
                    err = Some(idx);
                }
            }
            idx += 1;
        });
        if let Some(i) = err {
            return Err(Error::ShapeMismatch(format!("parameter {i} changed shape")));
        }
        if idx != flat.len() {
            return Err(Error::ShapeMismatch(format!(
                "parameter count mismatch: expected {idx}, got {}",
                flat.len()
            )));
        }
        Ok(())
    }

    /// Stable dotted names for the trainable tensors, aligned with `visit`.
    pub fn param_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (prefix, block) in [("gat1", &self.gat1), ("gat2", &self.gat2)] {
            for (lp, layer) in [("layer1", &block.layer1), ("layer2", &block.layer2)] {
                out.push(format!("{prefix}.{lp}.weight"));
                for k in 0..layer.attn_src.len() {
                    out.push(format!("{prefix}.{lp}.attn_src.{k}"));
                }
                for k in 0..layer.attn_dst.len() {
                    out.push(format!("{prefix}.{lp}.attn_dst.{k}"));
                }
            }
            for ln in ["ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift"] {
                out.push(format!("{prefix}.{ln}"));
            }
        }
        for (prefix, blocks) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, b) in blocks.iter().enumerate() {
                for conv in ["conv1", "conv2"] {
                    out.push(format!("{prefix}.{i}.{conv}.weights"));
                    out.push(format!("{prefix}.{i}.{conv}.bias"));
                }
                for ln in ["ln1_scale", "ln1_shift", "ln2_scale", "ln2_shift"] {
                    out.push(format!("{prefix}.{i}.{ln}"));
                }
                if b.skip.is_some() {
                    out.push(format!("{prefix}.{i}.skip.weights"));
                    out.push(format!("{prefix}.{i}.skip.bias"));
                }
            }
        }
        out.push("time.weight".into());
        out.push("time.bias".into());
        out
    }

    /// Named copies of the trainable tensors, for serialization.
    pub fn named_arrays(&self) -> Vec<(String, Tensor)> {
        self.param_names().into_iter().zip(self.collect()).collect()
    }

    /// Rebuilds parameters from a config plus the named tensors produced by
    /// `named_arrays`. The name set must match exactly and shapes must agree.
    pub fn from_named_arrays(config: &TgnConfig, arrays: &[(String, Tensor)]) -> Result<TgnParams> {
        let mut params = TgnParams::init(config)?;
        let names = params.param_names();
        let mut map = BTreeMap::new();
        for (name, tensor) in arrays {
            if map.insert(name.as_str(), tensor).is_some() {
                return Err(Error::InvalidData(format!("duplicate parameter {name}")));
            }
        }
        if map.len() != names.len() {
            return Err(Error::InvalidData(format!(
                "expected {} parameter arrays, got {}",
                names.len(),
                map.len()
            )));
        }
        let mut flat = Vec::with_capacity(names.len());
        let shapes: Vec<Vec<usize>> = params.collect().iter().map(|t| t.shape().to_vec()).collect();
        for (name, shape) in names.iter().zip(&shapes) {
            let t = *map
                .get(name.as_str())
                .ok_or_else(|| Error::InvalidData(format!("missing parameter {name}")))?;
            if t.shape() != &shape[..] {
                return Err(Error::ShapeMismatch(format!(
                    "parameter {name}: expected shape {:?}, got {:?}",
                    shape,
                    t.shape()
                )));
            }
            flat.push(t.clone());
        }
        params.assign(&flat)?;
        Ok(params)
    }

    /// Records every tensor on `tape`; trainable ids are appended to
    /// `trainable` in `visit` order. Also records the constant cosine basis
    /// and the loss selector so batched calls share them.
    pub fn push(&self, tape: &mut Tape, trainable: &mut Vec<ValueId>) -> Result<TgnIds> {
        let gat1 = self.gat1.push(tape, trainable);
        let gat2 = self.gat2.push(tape, trainable);
        let encoder: Vec<TcnBlockIds> = self.encoder.iter().map(|b| b.push(tape, trainable)).collect();
        let decoder: Vec<TcnBlockIds> = self.decoder.iter().map(|b| b.push(tape, trainable)).collect();
        let time_weight = tape.leaf(self.time_weight.clone());
        let time_bias = tape.leaf(self.time_bias.clone());
        trainable.push(time_weight);
        trainable.push(time_bias);
        let d = dct_matrix(self.config.history);
        let basis_t = tape.leaf(d.transpose()?);
        let basis = tape.leaf(d);
        let joint_sum = tape.leaf(joint_sum_matrix(self.config.joints));
        Ok(TgnIds {
            gat1,
            gat2,
            encoder,
            decoder,
            time_weight,
            time_bias,
            basis,
            basis_t,
            joint_sum,
        })
    }
}

fn zero(t: &mut Tensor) {
    for v in t.data_mut() {
        *v = 0.0;
    }
}

/// `[J, 3J]` selector: row `j` sums entries `3j .. 3j+3`.
fn joint_sum_matrix(joints: usize) -> Tensor {
    let mut m = Tensor::zeros(&[joints, 3 * joints]);
    for j in 0..joints {
        for k in 0..3 {
            m.data_mut()[j * 3 * joints + 3 * j + k] = 1.0;
        }
    }
    m
}

/// Records the full forward pass for one window. `input` is `[C, N]`; the
/// result id holds the human-channel forecast `[3J, T]`.
pub fn forward_on(
    tape: &mut Tape,
    ids: &TgnIds,
    config: &TgnConfig,
    input: &Tensor,
    mode: Mode,
    mut rng: Option<&mut RngStream>,
) -> Result<ValueId> {
    let (c, n) = input.dims2()?;
    if c != config.channels() || n != config.history {
        return Err(Error::ShapeMismatch(format!(
            "input must be [{}, {}], got {:?}",
            config.channels(),
            config.history,
            input.shape()
        )));
    }
    input.ensure_finite("model input")?;
    let x = tape.leaf(input.clone());
    // Frequency space: rows become cosine coefficients.
    let mut h = tape.matmul(x, ids.basis_t)?;
    h = gat_block_forward_on(tape, h, &ids.gat1, mode, rng.as_deref_mut())?;
    h = gat_block_forward_on(tape, h, &ids.gat2, mode, rng.as_deref_mut())?;
    // Back to the time axis.
    let mut y = tape.matmul(h, ids.basis)?;
    for b in &ids.encoder {
        y = tcn_block_forward_on(tape, y, b, mode, rng.as_deref_mut())?;
    }
    for b in &ids.decoder {
        y = tcn_block_forward_on(tape, y, b, mode, rng.as_deref_mut())?;
    }
    let mut out = tape.matmul(y, ids.time_weight)?;
    out = tape.add_bcast_row(out, ids.time_bias)?;
    // Residual connection to the last observed value of each human channel.
    let hc = config.human_channels();
    let mut last = Tensor::zeros(&[hc]);
    for ch in 0..hc {
        last.data_mut()[ch] = input.at2(ch, n - 1);
    }
    let last = tape.leaf(last);
    tape.add_bcast_col(out, last)
}

/// Records the softened mean per-joint distance between two `[3J, T]`
/// channel forecasts. `joint_sum` must be the selector pushed by `push`.
pub fn loss_on(
    tape: &mut Tape,
    pred: ValueId,
    target: ValueId,
    joint_sum: ValueId,
) -> Result<ValueId> {
    let (j, _) = tape.value(joint_sum).dims2()?;
    let (_, horizon) = tape.value(pred).dims2()?;
    let err = tape.sub(pred, target)?;
    let sq = tape.mul(err, err)?;
    let per_joint = tape.matmul(joint_sum, sq)?;
    let soft = tape.add_scalar(per_joint, LOSS_EPS * LOSS_EPS);
    let dist = tape.sqrt(soft)?;
    let total = tape.sum(dist);
    Ok(tape.scale(total, 1.0 / (j as f64 * horizon as f64)))
}

/// Mean softened joint distance between two `[T, J, 3]` forecasts.
pub fn loss(pred: &Tensor, truth: &Tensor) -> Result<f64> {
    if pred.shape() != truth.shape() {
        return Err(Error::ShapeMismatch(format!(
            "forecast shapes differ: {:?} vs {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    let shape = pred.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::ShapeMismatch(format!("expected [T, J, 3], got {shape:?}")));
    }
    let (t, j) = (shape[0], shape[1]);
    if t == 0 || j == 0 {
        return Err(Error::InvalidArgument("empty forecast".into()));
    }
    let mut total = 0.0;
    for i in 0..t * j {
        let mut sq = 0.0;
        for k in 0..3 {
            let d = pred.data()[3 * i + k] - truth.data()[3 * i + k];
            sq += d * d;
        }
        total += crate::fmath::sqrt(sq + LOSS_EPS * LOSS_EPS);
    }
    Ok(total / (t * j) as f64)
}

/// Reorders a `[3J, T]` channel matrix into a `[T, J, 3]` forecast.
pub fn channels_to_forecast(m: &Tensor) -> Result<Tensor> {
    let (rows, t) = m.dims2()?;
    if rows == 0 || rows % 3 != 0 {
        return Err(Error::ShapeMismatch(format!("channel count {rows} is not 3 J")));
    }
    let j = rows / 3;
    let mut out = Tensor::zeros(&[t, j, 3]);
    for time in 0..t {
        for joint in 0..j {
            for k in 0..3 {
                out.data_mut()[(time * j + joint) * 3 + k] = m.at2(3 * joint + k, time);
            }
        }
    }
    Ok(out)
}

/// Reorders a `[T, J, 3]` forecast into a `[3J, T]` channel matrix.
pub fn forecast_to_channels(f: &Tensor) -> Result<Tensor> {
    let shape = f.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::ShapeMismatch(format!("expected [T, J, 3], got {shape:?}")));
    }
    let (t, j) = (shape[0], shape[1]);
    let mut out = Tensor::zeros(&[3 * j, t]);
    for time in 0..t {
        for joint in 0..j {
            for k in 0..3 {
                out.data_mut()[(3 * joint + k) * t + time] = f.data()[(time * j + joint) * 3 + k];
            }
        }
    }
    Ok(out)
}

/// Runs the model on one `[C, N]` input and returns the `[T, J, 3]` forecast.
pub fn forward(
    params: &TgnParams,
    input: &Tensor,
    mode: Mode,
    rng: Option<&mut RngStream>,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let ids = params.push(&mut tape, &mut Vec::new())?;
    let out = forward_on(&mut tape, &ids, &params.config, input, mode, rng)?;
    channels_to_forecast(tape.value(out))
}

/// Deterministic forecast for one observation window.
pub fn predict(params: &TgnParams, window: &ObservationWindow, tree: &KinematicTree) -> Result<Tensor> {
    let input = window_input(window, tree, &params.config)?;
    forward(params, &input, Mode::Eval, None)
}

/// Packs a window's history into the `[C, N]` input layout: human joints in
/// tree order contribute rows `3j .. 3j+3` (x, y, z), robot nodes follow when
/// the config enables robot channels.
pub fn window_input(
    window: &ObservationWindow,
    tree: &KinematicTree,
    config: &TgnConfig,
) -> Result<Tensor> {
    let humans = tree.human_nodes();
    let robots = tree.robot_nodes();
    check_tree(config, humans.len(), robots.len())?;
    let n = config.history;
    if window.history.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "window has {} history frames, config wants {n}",
            window.history.len()
        )));
    }
    let mut x = Tensor::zeros(&[config.channels(), n]);
    for (col, frame) in window.history.iter().enumerate() {
        if frame.len() != tree.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "frame width {} does not match tree size {}",
                frame.len(),
                tree.node_count()
            )));
        }
        for (j, &node) in humans.iter().enumerate() {
            for k in 0..3 {
                x.set2(3 * j + k, col, frame[node][k]);
            }
        }
        if config.robot_channels > 0 {
            for (r, &node) in robots.iter().enumerate() {
                for k in 0..3 {
                    x.set2(3 * humans.len() + 3 * r + k, col, frame[node][k]);
                }
            }
        }
    }
    x.ensure_finite("window input")?;
    Ok(x)
}

/// Packs a window's future human poses into `[3J, T]` channel form.
pub fn window_target(
    window: &ObservationWindow,
    tree: &KinematicTree,
    config: &TgnConfig,
) -> Result<Tensor> {
    let humans = tree.human_nodes();
    check_tree(config, humans.len(), tree.robot_nodes().len())?;
    let t = config.horizon;
    if window.future.len() != t {
        return Err(Error::ShapeMismatch(format!(
            "window has {} future frames, config wants {t}",
            window.future.len()
        )));
    }
    let mut y = Tensor::zeros(&[config.human_channels(), t]);
    for (col, frame) in window.future.iter().enumerate() {
        if frame.len() != tree.node_count() {
            return Err(Error::ShapeMismatch(format!(
                "frame width {} does not match tree size {}",
                frame.len(),
                tree.node_count()
            )));
        }
        for (j, &node) in humans.iter().enumerate() {
            for k in 0..3 {
                y.set2(3 * j + k, col, frame[node][k]);
            }
        }
    }
    y.ensure_finite("window target")?;
    Ok(y)
}

fn check_tree(config: &TgnConfig, humans: usize, robots: usize) -> Result<()> {
    if humans != config.joints {
        return Err(Error::ShapeMismatch(format!(
            "tree has {humans} human joints, config wants {}",
            config.joints
        )));
    }
    if config.robot_channels != 0 && config.robot_channels != 3 * robots {
        return Err(Error::ShapeMismatch(format!(
            "config wants {} robot channels, tree provides {}",
            config.robot_channels,
            3 * robots
        )));
    }
    Ok(())
}

/// `[T, J, 3]` forecast that repeats the last observed human pose.
pub fn zero_velocity_baseline(
    window: &ObservationWindow,
    tree: &KinematicTree,
    config: &TgnConfig,
) -> Result<Tensor> {
    let humans = tree.human_nodes();
    check_tree(config, humans.len(), tree.robot_nodes().len())?;
    let last = window
        .history
        .last()
        .ok_or_else(|| Error::InvalidArgument("window has no history".into()))?;
    if last.len() != tree.node_count() {
        return Err(Error::ShapeMismatch("frame width does not match tree".into()));
    }
    let (t, j) = (config.horizon, config.joints);
    let mut out = Tensor::zeros(&[t, j, 3]);
    for time in 0..t {
        for (joint, &node) in humans.iter().enumerate() {
            for k in 0..3 {
                out.data_mut()[(time * j + joint) * 3 + k] = last[node][k];
            }
        }
    }
    Ok(out)
}

/// Optimisation settings.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Epochs without a new best validation loss before stopping.
    pub patience: usize,
    /// Seed of the shuffle and dropout streams.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            batch_size: 32,
            max_epochs: 400,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            patience: 25,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.max_epochs == 0 || self.patience == 0 {
            return Err(Error::InvalidArgument(
                "batch_size, max_epochs, patience must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidArgument("lr must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch losses recorded during training.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

/// Training history; `best_epoch` indexes into `epochs`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochStats>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Trains a fresh model on the split's training windows, selecting the
/// parameters with the lowest validation loss. Everything is driven by
/// counter-based streams, so a rerun with the same configs and split is
/// bit-identical. Falls back to the training loss for model selection when
/// the validation split is empty.
pub fn train(
    split: &DatasetSplit,
    tree: &KinematicTree,
    config: &TgnConfig,
    tcfg: &TrainConfig,
) -> Result<(TgnParams, TrainLog)> {
    config.validate()?;
    tcfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::InvalidData("training split is empty".into()));
    }
    let pack = |windows: &[ObservationWindow]| -> Result<Vec<(Tensor, Tensor)>> {
        windows
            .iter()
            .map(|w| Ok((window_input(w, tree, config)?, window_target(w, tree, config)?)))
            .collect()
    };
    let train_set = pack(&split.train)?;
    let val_set = pack(&split.validation)?;

    let mut params = TgnParams::init(config)?;
    let mut shuffle_rng = RngStream::new(tcfg.seed, streams::SHUFFLE);
    let mut dropout_rng = RngStream::new(tcfg.seed, streams::DROPOUT);
    let mut adam = Adam::new(AdamParams {
        lr: tcfg.lr,
        beta1: tcfg.beta1,
        beta2: tcfg.beta2,
        eps: tcfg.eps,
    });

    let mut log = TrainLog { epochs: Vec::new(), best_epoch: 0, best_val_loss: f64::INFINITY };
    let mut best = params.clone();
    let mut since_best = 0usize;

    let mut order: Vec<usize> = (0..train_set.len()).collect();
    for epoch in 0..tcfg.max_epochs {
        shuffle_rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(tcfg.batch_size) {
            let batch_loss =
                train_batch(&mut params, &train_set, batch, &mut adam, &mut dropout_rng)?;
            if !batch_loss.is_finite() {
                return Err(Error::Diverged { epoch });
            }
            epoch_loss += batch_loss * batch.len() as f64;
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let val_loss =
            if val_set.is_empty() { train_loss } else { eval_loss(&params, &val_set)? };
        log.epochs.push(EpochStats { epoch, train_loss, val_loss });
        if val_loss < log.best_val_loss {
            log.best_val_loss = val_loss;
            log.best_epoch = epoch;
            best = params.clone();
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= tcfg.patience {
                break;
            }
        }
    }
    Ok((best, log))
}

/// One optimizer step over a batch of window indices; returns the batch loss.
fn train_batch(
    params: &mut TgnParams,
    set: &[(Tensor, Tensor)],
    batch: &[usize],
    adam: &mut Adam,
    dropout_rng: &mut RngStream,
) -> Result<f64> {
    let mut tape = Tape::new();
    let mut trainable = Vec::new();
    let ids = params.push(&mut tape, &mut trainable)?;
    let mut total: Option<ValueId> = None;
    for &i in batch {
        let (x, y) = &set[i];
        let pred = forward_on(&mut tape, &ids, &params.config, x, Mode::Train, Some(dropout_rng))?;
        let target = tape.leaf(y.clone());
        let l = loss_on(&mut tape, pred, target, ids.joint_sum)?;
        total = Some(match total {
            Some(acc) => tape.add(acc, l)?,
            None => l,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    let batch_loss = tape.scale(total, 1.0 / batch.len() as f64);
    let loss_value = tape.value(batch_loss).data()[0];
    if !loss_value.is_finite() {
        return Ok(loss_value);
    }
    let grads = tape.grad(batch_loss, &trainable)?;
    let mut flat = params.collect();
    adam.step(&mut flat, &grads)?;
    params.assign(&flat)?;
    Ok(loss_value)
}

/// Mean loss over a packed window set, in eval mode.
fn eval_loss(params: &TgnParams, set: &[(Tensor, Tensor)]) -> Result<f64> {
    let mut tape = Tape::new();
    let ids = params.push(&mut tape, &mut Vec::new())?;
    let mut total = 0.0;
    for (x, y) in set {
        let pred = forward_on(&mut tape, &ids, &params.config, x, Mode::Eval, None)?;
        let target = tape.leaf(y.clone());
        let l = loss_on(&mut tape, pred, target, ids.joint_sum)?;
        total += tape.value(l).data()[0];
    }
    Ok(total / set.len() as f64)
}
