//! Deep-ensemble training and stochastic forecast sampling.
//!
//! An ensemble is a set of models that differ only in their seed, so their
//! weights, shuffles, and dropout draws all decorrelate. Forecast spread is
//! produced by keeping dropout active at inference and collecting several
//! draws per member.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::motion::{DatasetSplit, KinematicTree};
use crate::rng::RngStream;
use crate::tensor::Tensor;
use crate::tgn::{forward, train, TgnConfig, TgnParams, TrainConfig, TrainLog};
use crate::Mode;

/// Per-member seeds of an ensemble. Seeds must be pairwise distinct, so no
/// two members can ever share weights.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnsembleSpec {
    seeds: Vec<u64>,
}

impl EnsembleSpec {
    pub fn new(seeds: Vec<u64>) -> Result<EnsembleSpec> {
        if seeds.is_empty() {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        }
        for i in 0..seeds.len() {
            for j in i + 1..seeds.len() {
                if seeds[i] == seeds[j] {
                    return Err(Error::InvalidArgument(format!(
                        "members {i} and {j} share seed {}",
                        seeds[i]
                    )));
                }
            }
        }
        Ok(EnsembleSpec { seeds })
    }

    /// Consecutive seeds `base, base + 1, ...` for `members` members.
    pub fn from_base(members: usize, base: u64) -> Result<EnsembleSpec> {
        if members == 0 {
            return Err(Error::InvalidArgument("ensemble needs at least one member".into()));
        }
        if base.checked_add(members as u64 - 1).is_none() {
            return Err(Error::InvalidArgument("member seeds overflow u64".into()));
        }
        EnsembleSpec::new((0..members as u64).map(|i| base + i).collect())
    }

    pub fn seeds(&self) -> &[u64] {
        &self.seeds
    }

    pub fn len(&self) -> usize {
        self.seeds.len()
    }

    pub fn is_empty(&self) -> bool {
        self.seeds.is_empty()
    }
}

/// Trains one model per member seed on the same split. The member seed
/// drives weight init, batch shuffling, and dropout.
pub fn train_ensemble(
    split: &DatasetSplit,
    tree: &KinematicTree,
    config: &TgnConfig,
    tcfg: &TrainConfig,
    spec: &EnsembleSpec,
) -> Result<Vec<(TgnParams, TrainLog)>> {
    spec.seeds
        .iter()
        .map(|&seed| {
            let member_cfg = TgnConfig { seed, ..config.clone() };
            let member_tcfg = TrainConfig { seed, ..tcfg.clone() };
            train(split, tree, &member_cfg, &member_tcfg)
        })
        .collect()
}

/// A batch of stochastic forecasts for one window.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    /// Each `[T, J, 3]`.
    pub samples: Vec<Tensor>,
    /// Index of the ensemble member that produced each sample.
    pub member_of: Vec<usize>,
    /// Dropout rate the samples were drawn with.
    pub dropout_rate: f64,
}

impl SampleSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

/// Draws `draws` forecasts from one model with dropout forced to `rate`.
/// Mask randomness comes from `rng`, so a caller replaying the same stream
/// gets bit-identical samples.
pub fn mc_sample(
    params: &TgnParams,
    input: &Tensor,
    draws: usize,
    rate: f64,
    rng: &mut RngStream,
) -> Result<Vec<Tensor>> {
    if draws == 0 {
        return Err(Error::InvalidArgument("need at least one draw".into()));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArgument(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    (0..draws)
        .map(|_| forward(params, input, Mode::Mc { rate }, Some(rng)))
        .collect()
}

/// Draws `draws` forecasts from every member and concatenates them in member
/// order. Member `i` samples from `rng.substream(i)`, so each member's block
/// is independent of how many members run or in what order.
pub fn ensemble_sample(
    members: &[TgnParams],
    input: &Tensor,
    draws: usize,
    rate: f64,
    rng: &RngStream,
) -> Result<SampleSet> {
    if members.is_empty() {
        return Err(Error::InvalidArgument("ensemble has no members".into()));
    }
    let head = &members[0].config;
    for (i, m) in members.iter().enumerate().skip(1) {
        let c = &m.config;
        if (c.history, c.horizon, c.joints, c.robot_channels)
            != (head.history, head.horizon, head.joints, head.robot_channels)
        {
            return Err(Error::ShapeMismatch(format!("member {i} has an incompatible shape")));
        }
    }
    let mut samples = Vec::with_capacity(members.len() * draws);
    let mut member_of = Vec::with_capacity(members.len() * draws);
    for (i, m) in members.iter().enumerate() {
        let mut stream = rng.substream(i as u64);
        samples.extend(mc_sample(m, input, draws, rate, &mut stream)?);
        member_of.extend(core::iter::repeat(i).take(draws));
    }
    Ok(SampleSet { samples, member_of, dropout_rate: rate })
}

/// Elementwise mean of all samples in a set: the ensemble point forecast.
pub fn mean_prediction(set: &SampleSet) -> Result<Tensor> {
    let first = set
        .samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("sample set is empty".into()))?;
    let mut acc = Tensor::zeros(first.shape());
    for s in &set.samples {
        if s.shape() != first.shape() {
            return Err(Error::ShapeMismatch(format!(
                "sample shapes differ: {:?} vs {:?}",
                s.shape(),
                first.shape()
            )));
        }
        acc = acc.add(s)?;
    }
    Ok(acc.scale(1.0 / set.samples.len() as f64))
}
