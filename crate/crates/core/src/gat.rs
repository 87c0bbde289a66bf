//! Graph attention layers and the residual GAT block.
//!
//! Node features live in DCT trajectory space: `H` is `[C, F]` with one row
//! per coordinate channel. Attention is additive with a leaky-ReLU scoring
//! nonlinearity (slope 0.2), normalized by a row softmax over all nodes and
//! averaged over heads. A layer computes `(alpha .* A) H W` where `A` is the
//! fixed 0/1 base adjacency (all-ones for the fully connected graph); the
//! layer itself applies no activation, the block supplies ReLU between its
//! stages.
//!
//! Block layout: `out = H + D2(ReLU(LN2(L2(D1(ReLU(LN1(L1(H))))))))` with
//! elementwise dropout `D` (inverted scaling, active in train and mc modes)
//! and layer normalization over the feature axis of each node.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tape::{Tape, ValueId};
use crate::tensor::Tensor;
use crate::{Mode, LN_EPS};

/// Slope of the attention scoring nonlinearity.
pub const ATTENTION_SLOPE: f64 = 0.2;

/// One graph attention layer: shared feature weight, per-head additive
/// attention vectors, and the fixed base adjacency.
#[derive(Debug, Clone, PartialEq)]
pub struct GatLayerParams {
    /// `[F, F]` feature transform.
    pub weight: Tensor,
    /// Per head, `[F]`: scores the message source node.
    pub attn_src: Vec<Tensor>,
    /// Per head, `[F]`: scores the message target node.
    pub attn_dst: Vec<Tensor>,
    /// `[C, C]` 0/1 mask; not trainable.
    pub adjacency: Tensor,
}

impl GatLayerParams {
    /// Fresh layer for `c` nodes, `f` features, `heads` attention heads, with
    /// scale-balanced uniform weights and an all-ones adjacency.
    pub fn init(c: usize, f: usize, heads: usize, rng: &mut RngStream) -> GatLayerParams {
        let wb = bound(f, f);
        let ab = bound(f, 1);
        GatLayerParams {
            weight: Tensor::uniform(&[f, f], -wb, wb, rng),
            attn_src: (0..heads).map(|_| Tensor::uniform(&[f], -ab, ab, rng)).collect(),
            attn_dst: (0..heads).map(|_| Tensor::uniform(&[f], -ab, ab, rng)).collect(),
            adjacency: Tensor::filled(&[c, c], 1.0),
        }
    }

    pub fn heads(&self) -> usize {
        self.attn_src.len()
    }

    fn validate(&self) -> Result<()> {
        if self.attn_src.is_empty() || self.attn_src.len() != self.attn_dst.len() {
            return Err(Error::InvalidArgument(
                "attention needs K >= 1 heads with matching source/target vectors".into(),
            ));
        }
        if self.adjacency.data().iter().any(|&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidArgument("adjacency entries must be 0 or 1".into()));
        }
        Ok(())
    }

    /// Visits the trainable tensors in the same order `push` records them.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Tensor)) {
        f(&self.weight);
        for v in &self.attn_src {
            f(v);
        }
        for v in &self.attn_dst {
            f(v);
        }
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        f(&mut self.weight);
        for v in &mut self.attn_src {
            f(v);
        }
        for v in &mut self.attn_dst {
            f(v);
        }
    }

    /// Records the layer's tensors on a tape. Trainable ids are appended to
    /// `trainable` in field order; the adjacency is recorded as a constant.
    pub fn push(&self, tape: &mut Tape, trainable: &mut Vec<ValueId>) -> GatLayerIds {
        let weight = tape.leaf(self.weight.clone());
        trainable.push(weight);
        let mut push_heads = |vs: &[Tensor], trainable: &mut Vec<ValueId>| {
            vs.iter()
                .map(|v| {
                    let id = tape.leaf(v.clone());
                    trainable.push(id);
                    id
                })
                .collect()
        };
        let attn_src = push_heads(&self.attn_src, trainable);
        let attn_dst = push_heads(&self.attn_dst, trainable);
        let adjacency = tape.leaf(self.adjacency.clone());
        GatLayerIds { weight, attn_src, attn_dst, adjacency }
    }
}

/// Uniform init half-width, balanced for the given fan-in/fan-out.
pub(crate) fn bound(fan_in: usize, fan_out: usize) -> f64 {
    crate::fmath::sqrt(6.0 / (fan_in + fan_out) as f64)
}

/// Tape handles of one layer's tensors.
pub struct GatLayerIds {
    pub weight: ValueId,
    pub attn_src: Vec<ValueId>,
    pub attn_dst: Vec<ValueId>,
    pub adjacency: ValueId,
}

/// Residual block: two GAT layers with layer norm, ReLU, and dropout.
#[derive(Debug, Clone, PartialEq)]
pub struct GatBlockParams {
    pub layer1: GatLayerParams,
    pub layer2: GatLayerParams,
    /// Layer-norm affines, `[F]` each.
    pub ln1_scale: Tensor,
    pub ln1_shift: Tensor,
    pub ln2_scale: Tensor,
    pub ln2_shift: Tensor,
    /// Elementwise dropout rate in `[0, 1)`.
    pub dropout: f64,
}

impl GatBlockParams {
    pub fn init(c: usize, f: usize, heads: usize, dropout: f64, rng: &mut RngStream) -> GatBlockParams {
        GatBlockParams {
            layer1: GatLayerParams::init(c, f, heads, rng),
            layer2: GatLayerParams::init(c, f, heads, rng),
            ln1_scale: Tensor::filled(&[f], 1.0),
            ln1_shift: Tensor::zeros(&[f]),
            ln2_scale: Tensor::filled(&[f], 1.0),
            ln2_shift: Tensor::zeros(&[f]),
            dropout,
        }
    }

    /// Visits the trainable tensors in the same order `push` records them.
    pub fn visit<'a>(&'a self, f: &mut impl FnMut(&'a Tensor)) {
        self.layer1.visit(f);
        self.layer2.visit(f);
        f(&self.ln1_scale);
        f(&self.ln1_shift);
        f(&self.ln2_scale);
        f(&self.ln2_shift);
    }

    pub fn visit_mut(&mut self, f: &mut impl FnMut(&mut Tensor)) {
        self.layer1.visit_mut(f);
        self.layer2.visit_mut(f);
        f(&mut self.ln1_scale);
        f(&mut self.ln1_shift);
        f(&mut self.ln2_scale);
        f(&mut self.ln2_shift);
    }

    pub fn push(&self, tape: &mut Tape, trainable: &mut Vec<ValueId>) -> GatBlockIds {
        let layer1 = self.layer1.push(tape, trainable);
        let layer2 = self.layer2.push(tape, trainable);
        let mut aff = |t: &Tensor, trainable: &mut Vec<ValueId>| {
            let id = tape.leaf(t.clone());
            trainable.push(id);
            id
        };
        GatBlockIds {
            layer1,
            layer2,
            ln1_scale: aff(&self.ln1_scale, trainable),
            ln1_shift: aff(&self.ln1_shift, trainable),
            ln2_scale: aff(&self.ln2_scale, trainable),
            ln2_shift: aff(&self.ln2_shift, trainable),
            dropout: self.dropout,
        }
    }
}

/// Tape handles of one block's tensors plus its dropout rate.
pub struct GatBlockIds {
    pub layer1: GatLayerIds,
    pub layer2: GatLayerIds,
    pub ln1_scale: ValueId,
    pub ln1_shift: ValueId,
    pub ln2_scale: ValueId,
    pub ln2_shift: ValueId,
    pub dropout: f64,
}

/// Multi-head attention coefficients for `H` recorded at `h`: per head,
/// `e_ij = leaky_relu(a_src . (HW)_i + a_dst . (HW)_j)`, row softmax, then
/// the mean over heads. Every row of the result sums to 1.
pub fn attention_weights_on(tape: &mut Tape, h: ValueId, ids: &GatLayerIds) -> Result<ValueId> {
    let hw = tape.matmul(h, ids.weight)?;
    attention_from_hw(tape, hw, ids)
}

fn attention_from_hw(tape: &mut Tape, hw: ValueId, ids: &GatLayerIds) -> Result<ValueId> {
    let (c, f) = tape.value(hw).dims2()?;
    let heads = ids.attn_src.len();
    if heads == 0 {
        return Err(Error::InvalidArgument("attention needs at least one head".into()));
    }
    let mut acc: Option<ValueId> = None;
    for k in 0..heads {
        let a_src = tape.reshape(ids.attn_src[k], &[f, 1])?;
        let a_dst = tape.reshape(ids.attn_dst[k], &[f, 1])?;
        let s = tape.matmul(hw, a_src)?;
        let t = tape.matmul(hw, a_dst)?;
        let s = tape.reshape(s, &[c])?;
        let t = tape.reshape(t, &[c])?;
        let zero = tape.leaf(Tensor::zeros(&[c, c]));
        let e = tape.add_bcast_col(zero, s)?;
        let e = tape.add_bcast_row(e, t)?;
        let e = tape.leaky_relu(e, ATTENTION_SLOPE);
        let a = tape.row_softmax(e)?;
        acc = Some(match acc {
            None => a,
            Some(prev) => tape.add(prev, a)?,
        });
    }
    Ok(tape.scale(acc.unwrap(), 1.0 / heads as f64))
}

/// One GAT layer on the tape: `(alpha .* A) H W`, no activation.
pub fn gat_layer_forward_on(tape: &mut Tape, h: ValueId, ids: &GatLayerIds) -> Result<ValueId> {
    let hw = tape.matmul(h, ids.weight)?;
    let alpha = attention_from_hw(tape, hw, ids)?;
    let masked = tape.mul(alpha, ids.adjacency)?;
    tape.matmul(masked, hw)
}

/// Elementwise dropout mask with inverted scaling.
fn elementwise_mask(shape: &[usize], rate: f64, rng: &mut RngStream) -> Result<Tensor> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(alloc::format!(
            "dropout rate must lie in [0, 1), got {rate}"
        )));
    }
    let keep_scale = 1.0 / (1.0 - rate);
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| if rng.next_f64() < rate { 0.0 } else { keep_scale })
        .collect();
    Tensor::from_vec(shape, data)
}

fn apply_dropout(
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
    let mask = elementwise_mask(tape.value(x).shape(), rate, rng)?;
    let mask = tape.leaf(mask);
    tape.mul(x, mask)
}

/// The full residual block on the tape.
pub fn gat_block_forward_on(
    tape: &mut Tape,
    h: ValueId,
    ids: &GatBlockIds,
    mode: Mode,
    mut rng: Option<&mut RngStream>,
) -> Result<ValueId> {
    let rate = mode.dropout_rate(ids.dropout);

    let x = gat_layer_forward_on(tape, h, &ids.layer1)?;
    let x = tape.layer_norm_rows(x, LN_EPS)?;
    let x = tape.mul_bcast_row(x, ids.ln1_scale)?;
    let x = tape.add_bcast_row(x, ids.ln1_shift)?;
    let x = tape.relu(x);
    let x = apply_dropout(tape, x, rate, &mut rng)?;

    let x = gat_layer_forward_on(tape, x, &ids.layer2)?;
    let x = tape.layer_norm_rows(x, LN_EPS)?;
    let x = tape.mul_bcast_row(x, ids.ln2_scale)?;
    let x = tape.add_bcast_row(x, ids.ln2_shift)?;
    let x = tape.relu(x);
    let x = apply_dropout(tape, x, rate, &mut rng)?;

    tape.add(h, x)
}

/// Value-level attention coefficients (throwaway tape).
pub fn attention_weights(h: &Tensor, params: &GatLayerParams) -> Result<Tensor> {
    params.validate()?;
    let mut tape = Tape::new();
    let hid = tape.leaf(h.clone());
    let ids = params.push(&mut tape, &mut Vec::new());
    let out = attention_weights_on(&mut tape, hid, &ids)?;
    Ok(tape.value(out).clone())
}

/// Value-level layer forward (throwaway tape).
pub fn gat_layer_forward(h: &Tensor, params: &GatLayerParams) -> Result<Tensor> {
    params.validate()?;
    let mut tape = Tape::new();
    let hid = tape.leaf(h.clone());
    let ids = params.push(&mut tape, &mut Vec::new());
    let out = gat_layer_forward_on(&mut tape, hid, &ids)?;
    Ok(tape.value(out).clone())
}

/// Value-level block forward (throwaway tape).
pub fn gat_block_forward(
    h: &Tensor,
    params: &GatBlockParams,
    mode: Mode,
    rng: Option<&mut RngStream>,
) -> Result<Tensor> {
    params.layer1.validate()?;
    params.layer2.validate()?;
    let mut tape = Tape::new();
    let hid = tape.leaf(h.clone());
    let ids = params.push(&mut tape, &mut Vec::new());
    let out = gat_block_forward_on(&mut tape, hid, &ids, mode, rng)?;
    Ok(tape.value(out).clone())
}
