//! Dilated causal convolution and the residual TCN block.
//!
//! Signals are `[channels, time]`. A block runs two causal convolutions that
//! share one dilation, each followed by layer normalization over the channel
//! axis (per time step, so nothing temporal mixes), ReLU, and spatial
//! dropout, which drops whole channels with inverted scaling. The skip path
//! is the identity, or a 1x1 convolution when the block changes its channel
//! count.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::gat::bound;
use crate::rng::RngStream;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;
use crate::{Mode, LN_EPS};

/// One causal convolution: `out[o][t] = b[o] + sum_{i,j} w[o][i][j] *
/// x[i][t - d*j]`, reading zeros before the start of the signal.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvKernel {
    /// `[c_out, c_in, w]`.
    pub weights: Tensor,
    /// `[c_out]`.
    pub bias: Tensor,
    pub dilation: usize,
}

impl ConvKernel {
    pub fn init(
        c_in: usize,
        c_out: usize,
        width: usize,
        dilation: usize,
        rng: &mut RngStream,
    ) -> ConvKernel {
        let b = bound(c_in * width, c_out * width);
        ConvKernel {
            weights: Tensor::uniform(&[c_out, c_in, width], -b, b, rng),
            bias: Tensor::zeros(&[c_out]),
            dilation,
        }
    }

    pub fn c_in(&self) -> usize {
        self.weights.shape()[1]
    }

    pub fn c_out(&self) -> usize {
        self.weights.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.weights.shape()[2]
    }

    /// Visits the trainable tensors in the same order `push` records them.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Tensor)) {
        f(&self.weights);
        f(&self.bias);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        f(&mut self.weights);
        f(&mut self.bias);
    }

    pub fn push(&self, tape: &mut Tape, trainable: &mut Vec<ValueId>) -> ConvIds {
        let weights = tape.leaf(self.weights.clone());
        let bias = tape.leaf(self.bias.clone());
        trainable.push(weights);
        trainable.push(bias);
        ConvIds { weights, bias, dilation: self.dilation }
    }
}

/// Tape handles of one kernel.
pub struct ConvIds {
    pub weights: ValueId,
    pub bias: ValueId,
    pub dilation: usize,
}

/// Residual TCN block parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TcnBlockParams {
    pub conv1: ConvKernel,
    pub conv2: ConvKernel,
    /// Channel-axis layer-norm affines, `[c_out]` each.
    pub ln1_scale: Tensor,
    pub ln1_shift: Tensor,
    pub ln2_scale: Tensor,
    pub ln2_shift: Tensor,
    /// Present exactly when the block changes channel count.
    pub skip: Option<ConvKernel>,
    /// Spatial dropout rate in `[0, 1)`.
    pub dropout: f64,
}

impl TcnBlockParams {
    pub fn init(
        c_in: usize,
        c_out: usize,
        width: usize,
        dilation: usize,
        dropout: f64,
        rng: &mut RngStream,
    ) -> TcnBlockParams {
        let skip = if c_in != c_out {
            Some(ConvKernel::init(c_in, c_out, 1, 1, rng))
        } else {
            None
        };
        TcnBlockParams {
            conv1: ConvKernel::init(c_in, c_out, width, dilation, rng),
            conv2: ConvKernel::init(c_out, c_out, width, dilation, rng),
            ln1_scale: Tensor::filled(&[c_out], 1.0),
            ln1_shift: Tensor::zeros(&[c_out]),
            ln2_scale: Tensor::filled(&[c_out], 1.0),
            ln2_shift: Tensor::zeros(&[c_out]),
            skip,
            dropout,
        }
    }

    /// Visits the trainable tensors in the same order `push` records them.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Tensor)) {
        self.conv1.visit(f);
        self.conv2.visit(f);
        f(&self.ln1_scale);
        f(&self.ln1_shift);
        f(&self.ln2_scale);
        f(&self.ln2_shift);
        if let Some(k) = &self.skip {
            k.visit(f);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        self.conv1.visit_mut(f);
        self.conv2.visit_mut(f);
        f(&mut self.ln1_scale);
        f(&mut self.ln1_shift);
        f(&mut self.ln2_scale);
        f(&mut self.ln2_shift);
        if let Some(k) = &mut self.skip {
            k.visit_mut(f);
        }
    }

    pub fn push(&self, tape: &mut Tape, trainable: &mut Vec<ValueId>) -> TcnBlockIds {
        let conv1 = self.conv1.push(tape, trainable);
        let conv2 = self.conv2.push(tape, trainable);
        let mut aff = |t: &Tensor, trainable: &mut Vec<ValueId>| {
            let id = tape.leaf(t.clone());
            trainable.push(id);
            id
        };
        let ln1_scale = aff(&self.ln1_scale, trainable);
        let ln1_shift = aff(&self.ln1_shift, trainable);
        let ln2_scale = aff(&self.ln2_scale, trainable);
        let ln2_shift = aff(&self.ln2_shift, trainable);
        let skip = self.skip.as_ref().map(|k| k.push(tape, trainable));
        TcnBlockIds {
            conv1,
            conv2,
            ln1_scale,
            ln1_shift,
            ln2_scale,
            ln2_shift,
            skip,
            dropout: self.dropout,
        }
    }
}

/// Tape handles of one block.
pub struct TcnBlockIds {
    pub conv1: ConvIds,
    pub conv2: ConvIds,
    pub ln1_scale: ValueId,
    pub ln1_shift: ValueId,
    pub ln2_scale: ValueId,
    pub ln2_shift: ValueId,
    pub skip: Option<ConvIds>,
    pub dropout: f64,
}

/// Receptive field of `n_blocks` stacked blocks with kernel width `w` and
/// dilations `base^0 .. base^(n-1)`: `1 + 2 (w - 1) sum_i base^i`. The factor
/// 2 counts the two convolution layers per block.
pub fn receptive_field(w: usize, n_blocks: usize, dilation_base: usize) -> usize {
    let mut geo = 0usize;
    let mut d = 1usize;
    for _ in 0..n_blocks {
        geo += d;
        d *= dilation_base;
    }
    1 + 2 * (w - 1) * geo
}

/// Per-channel keep mask with inverted scaling: each channel survives with
/// probability `1 - rate` and is scaled by `1/(1 - rate)`; dropped channels
/// zero out across every time step.
pub fn spatial_dropout_mask(channels: usize, rate: f64, rng: &mut RngStream) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let data = (0..channels)
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep_scale })
        .collect();
    Tensor::from_vec(&[channels], data)
}

/// Channel-axis layer norm with affine, on the tape: normalize each time
/// step's column over channels, then scale/shift per channel.
fn channel_norm(
    tape: &mut Tape,
    x: ValueId,
    scale: ValueId,
    shift: ValueId,
) -> Result<ValueId> {
    let xt = tape.transpose(x)?;
    let n = tape.layer_norm_rows(xt, LN_EPS)?;
    let n = tape.mul_bcast_row(n, scale)?;
    let n = tape.add_bcast_row(n, shift)?;
    tape.transpose(n)
}

fn apply_spatial_dropout(
    tape: &mut Tape,
    x: ValueId,
    rate: Option<f64>,
    rng: &mut Option<&mut RngStream>,
) -> Result<ValueId> {
    let Some(rate) = rate else { return Ok(x) };
    let Some(rng) = rng.as_deref_mut() else {
        return Err(Error::InvalidArgument(
            "train/mc mode forward needs an rng for dropout".into(),
        ));
    };
    let channels = tape.value(x).dims2()?.0;
    let mask = spatial_dropout_mask(channels, rate, rng)?;
    let mask = tape.leaf(mask);
    tape.mul_bcast_col(x, mask)
}

/// The residual block on the tape:
/// `y = skip(x) + SD2(ReLU(LN2(Conv2(SD1(ReLU(LN1(Conv1(x))))))))`.
pub fn tcn_block_forward_on(
    tape: &mut Tape,
    x: ValueId,
    ids: &TcnBlockIds,
    mode: Mode,
    mut rng: Option<&mut RngStream>,
) -> Result<ValueId> {
    let rate = mode.dropout_rate(ids.dropout);

    let h = tape.causal_conv(x, ids.conv1.weights, ids.conv1.bias, ids.conv1.dilation)?;
    let h = channel_norm(tape, h, ids.ln1_scale, ids.ln1_shift)?;
    let h = tape.relu(h);
    let h = apply_spatial_dropout(tape, h, rate, &mut rng)?;

    let h = tape.causal_conv(h, ids.conv2.weights, ids.conv2.bias, ids.conv2.dilation)?;
    let h = channel_norm(tape, h, ids.ln2_scale, ids.ln2_shift)?;
    let h = tape.relu(h);
    let h = apply_spatial_dropout(tape, h, rate, &mut rng)?;

    let skip = match &ids.skip {
        Some(k) => tape.causal_conv(x, k.weights, k.bias, k.dilation)?,
        None => x,
    };
    tape.add(skip, h)
}

/// Value-level causal convolution (throwaway tape).
pub fn dilated_causal_conv(x: &Tensor, kernel: &ConvKernel) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone());
    let ids = kernel.push(&mut tape, &mut Vec::new());
    let out = tape.causal_conv(xid, ids.weights, ids.bias, ids.dilation)?;
    Ok(tape.value(out).clone())
}

/// Value-level block forward (throwaway tape).
pub fn tcn_block_forward(
    x: &Tensor,
    params: &TcnBlockParams,
    mode: Mode,
    rng: Option<&mut RngStream>,
) -> Result<Tensor> {
    let mut tape = Tape::new();
    let xid = tape.leaf(x.clone());
    let ids = params.push(&mut tape, &mut Vec::new());
    let out = tcn_block_forward_on(&mut tape, xid, &ids, mode, rng)?;
    Ok(tape.value(out).clone())
}
