//! Skeleton motion data: kinematic trees, pose sequences, preprocessing,
//! windowing, dataset splits, and a synthetic motion generator.
//!
//! Coordinates are millimeters throughout; loaders in the companion crate
//! convert other units before data reaches this module.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath;
use crate::rng::RngStream;

/// Named stream ids hanging off a root seed, one per randomness consumer.
pub mod streams {
    pub const SPLIT: u64 = 1;
    pub const SYNTH: u64 = 2;
    pub const INIT: u64 = 3;
    pub const SHUFFLE: u64 = 4;
    pub const DROPOUT: u64 = 5;
    pub const SAMPLING: u64 = 6;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeKind {
    Human,
    Robot,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TreeNode {
    pub name: String,
    pub kind: NodeKind,
}

/// Joint connectivity: which node pairs form segments.
#[derive(Debug, Clone, PartialEq)]
pub struct KinematicTree {
    nodes: Vec<TreeNode>,
    edges: Vec<(usize, usize)>,
}

impl KinematicTree {
    /// Validates names, edge indices, the human-subgraph forest property, and
    /// the presence of at least one human node.
    pub fn new(nodes: Vec<TreeNode>, edges: Vec<(usize, usize)>) -> Result<KinematicTree> {
        for (i, a) in nodes.iter().enumerate() {
            for b in &nodes[i + 1..] {
                if a.name == b.name {
                    return Err(Error::InvalidData(format!("duplicate node name '{}'", a.name)));
                }
            }
        }
        if !nodes.iter().any(|n| n.kind == NodeKind::Human) {
            return Err(Error::InvalidData("tree has no human nodes".into()));
        }
        let n = nodes.len();
        // Union-find over human nodes to reject cycles.
        let mut parent: Vec<usize> = (0..n).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        for &(a, b) in &edges {
            if a >= n || b >= n || a == b {
                return Err(Error::InvalidData(format!("edge ({a}, {b}) is out of range")));
            }
            if nodes[a].kind == NodeKind::Human && nodes[b].kind == NodeKind::Human {
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra == rb {
                    return Err(Error::InvalidData(format!(
                        "human edges contain a cycle through ({a}, {b})"
                    )));
                }
                parent[ra] = rb;
            }
        }
        Ok(KinematicTree { nodes, edges })
    }

    pub fn nodes(&self) -> &[TreeNode] {
        &self.nodes
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    /// Indices of human nodes, in tree order.
    pub fn human_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == NodeKind::Human).collect()
    }

    /// Indices of robot nodes, in tree order.
    pub fn robot_nodes(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i].kind == NodeKind::Robot).collect()
    }

    /// Edges whose both endpoints are human nodes.
    pub fn human_edges(&self) -> Vec<(usize, usize)> {
        self.edges
            .iter()
            .copied()
            .filter(|&(a, b)| {
                self.nodes[a].kind == NodeKind::Human && self.nodes[b].kind == NodeKind::Human
            })
            .collect()
    }
}

/// One pose: a 3D position per tree node, millimeters.
pub type Frame = Vec<[f64; 3]>;

/// A timed series of poses over a kinematic tree.
#[derive(Debug, Clone, PartialEq)]
pub struct MotionSequence {
    pub tree: KinematicTree,
    pub fps: f64,
    frames: Vec<Frame>,
}

impl MotionSequence {
    pub fn new(tree: KinematicTree, fps: f64, frames: Vec<Frame>) -> Result<MotionSequence> {
        if !(fps > 0.0) || !fps.is_finite() {
            return Err(Error::InvalidData(format!("fps must be positive, got {fps}")));
        }
        let width = tree.node_count();
        for (i, f) in frames.iter().enumerate() {
            if f.len() != width {
                return Err(Error::InvalidData(format!(
                    "frame {i} has {} positions, tree has {width} nodes",
                    f.len()
                )));
            }
            if f.iter().flatten().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("frame {i} has a non-finite coordinate")));
            }
        }
        Ok(MotionSequence { tree, fps, frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Length of edge `e` at frame `f`.
    pub fn segment_length(&self, f: usize, e: usize) -> f64 {
        let (a, b) = self.tree.edges[e];
        dist(&self.frames[f][a], &self.frames[f][b])
    }
}

pub fn dist(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    let d = [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
    fmath::sqrt(d[0] * d[0] + d[1] * d[1] + d[2] * d[2])
}

/// Keeps every `(fps / target_fps)`-th frame starting from frame 0. The
/// stride must be a whole number.
pub fn downsample(seq: &MotionSequence, target_fps: f64) -> Result<MotionSequence> {
    if !(target_fps > 0.0) {
        return Err(Error::InvalidArgument(format!("target fps must be positive, got {target_fps}")));
    }
    let ratio = seq.fps / target_fps;
    let stride = fmath::round(ratio);
    if fmath::abs(ratio - stride) > 1e-9 || stride < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "downsampling {} fps to {target_fps} fps needs an integer stride, got {ratio}",
            seq.fps
        )));
    }
    let stride = stride as usize;
    let frames = seq.frames.iter().step_by(stride).cloned().collect();
    MotionSequence::new(seq.tree.clone(), target_fps, frames)
}

/// Subtracts the root joint position from every joint, per frame. The root
/// sits at the origin afterwards; inter-joint distances are untouched.
pub fn remove_global_translation(seq: &MotionSequence, root: usize) -> Result<MotionSequence> {
    if root >= seq.tree.node_count() || seq.tree.nodes()[root].kind != NodeKind::Human {
        return Err(Error::InvalidArgument(format!("root joint {root} is not a human node")));
    }
    let frames = seq
        .frames
        .iter()
        .map(|f| {
            let origin = f[root];
            f.iter()
                .map(|p| [p[0] - origin[0], p[1] - origin[1], p[2] - origin[2]])
                .collect()
        })
        .collect();
    MotionSequence::new(seq.tree.clone(), seq.fps, frames)
}

/// A history of `N` frames plus the `T` frames that follow it.
#[derive(Debug, Clone, PartialEq)]
pub struct ObservationWindow {
    pub history: Vec<Frame>,
    pub future: Vec<Frame>,
    /// Index of the source trajectory this window was cut from.
    pub source_id: usize,
    /// Frame index of the first history frame in the source.
    pub start: usize,
}

/// Cuts windows starting at `0, stride, 2*stride, ...` while a full
/// `N + T` span fits. Short sequences yield an empty list.
pub fn make_windows(
    seq: &MotionSequence,
    n: usize,
    t: usize,
    stride: usize,
    source_id: usize,
) -> Result<Vec<ObservationWindow>> {
    if n == 0 || t == 0 || stride == 0 {
        return Err(Error::InvalidArgument("window sizes and stride must be >= 1".into()));
    }
    let mut out = Vec::new();
    let len = seq.frames.len();
    let mut start = 0;
    while start + n + t <= len {
        out.push(ObservationWindow {
            history: seq.frames[start..start + n].to_vec(),
            future: seq.frames[start + n..start + n + t].to_vec(),
            source_id,
            start,
        });
        start += stride;
    }
    Ok(out)
}

/// Windowed train/validation/test partitions of a trajectory collection.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<ObservationWindow>,
    pub validation: Vec<ObservationWindow>,
    pub test: Vec<ObservationWindow>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

/// Shuffles whole trajectories by seed, partitions them by ratio, then cuts
/// windows inside each partition. Windows from one trajectory never straddle
/// partitions. Fractional allocations are floored for validation and test;
/// the remainder goes to training.
pub fn split_dataset(
    sequences: &[MotionSequence],
    ratios: [f64; 3],
    seed: u64,
    n: usize,
    t: usize,
    stride: usize,
) -> Result<DatasetSplit> {
    if ratios.iter().any(|r| *r < 0.0) {
        return Err(Error::InvalidArgument("split ratios must be nonnegative".into()));
    }
    let total: f64 = ratios.iter().sum();
    if fmath::abs(total - 1.0) > 1e-9 {
        return Err(Error::InvalidArgument(format!("split ratios sum to {total}, expected 1")));
    }
    let nonzero = ratios.iter().filter(|r| **r > 0.0).count();
    if sequences.len() < nonzero {
        return Err(Error::InvalidData(format!(
            "{} trajectories cannot cover {nonzero} nonzero split partitions",
            sequences.len()
        )));
    }

    let mut order: Vec<usize> = (0..sequences.len()).collect();
    RngStream::new(seed, streams::SPLIT).shuffle(&mut order);

    let count = sequences.len();
    let n_val = (count as f64 * ratios[1]) as usize;
    let n_test = (count as f64 * ratios[2]) as usize;
    let n_train = count - n_val - n_test;

    let mut split = DatasetSplit {
        train: Vec::new(),
        validation: Vec::new(),
        test: Vec::new(),
        seed,
        ratios,
    };
    for (pos, &src) in order.iter().enumerate() {
        let bucket = if pos < n_train {
            &mut split.train
        } else if pos < n_train + n_val {
            &mut split.validation
        } else {
            &mut split.test
        };
        bucket.extend(make_windows(&sequences[src], n, t, stride, src)?);
    }
    Ok(split)
}

/// Skeleton topology presets for the synthetic generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TopologyPreset {
    /// A straight chain of `joints` nodes, 200 mm segments.
    Chain { joints: usize },
    /// Shoulder, elbow, wrist: 300 mm upper arm, 250 mm forearm.
    Arm3,
    /// A 17-joint full-body skeleton with 16 segments.
    Biped17,
}

impl TopologyPreset {
    /// The tree plus per-edge segment lengths (mm), edge order matching the
    /// tree's edge list.
    pub fn build(&self) -> Result<(KinematicTree, Vec<f64>)> {
        match self {
            TopologyPreset::Chain { joints } => {
                if *joints == 0 {
                    return Err(Error::InvalidArgument("chain needs at least one joint".into()));
                }
                let nodes = (0..*joints)
                    .map(|i| TreeNode { name: format!("j{i}"), kind: NodeKind::Human })
                    .collect();
                let edges: Vec<(usize, usize)> = (1..*joints).map(|i| (i - 1, i)).collect();
                let lengths = vec![200.0; edges.len()];
                Ok((KinematicTree::new(nodes, edges)?, lengths))
            }
            TopologyPreset::Arm3 => {
                let nodes = ["shoulder", "elbow", "wrist"]
                    .iter()
                    .map(|n| TreeNode { name: (*n).into(), kind: NodeKind::Human })
                    .collect();
                let edges = vec![(0, 1), (1, 2)];
                Ok((KinematicTree::new(nodes, edges)?, vec![300.0, 250.0]))
            }
            TopologyPreset::Biped17 => {
                let names = [
                    "pelvis", "spine", "chest", "neck", "head", "l_shoulder", "l_elbow",
                    "l_wrist", "r_shoulder", "r_elbow", "r_wrist", "l_hip", "l_knee",
                    "l_ankle", "r_hip", "r_knee", "r_ankle",
                ];
                let nodes = names
                    .iter()
                    .map(|n| TreeNode { name: (*n).into(), kind: NodeKind::Human })
                    .collect();
                #[rustfmt::skip]
                let edges = vec![
                    (0, 1), (1, 2), (2, 3), (3, 4),
                    (2, 5), (5, 6), (6, 7),
                    (2, 8), (8, 9), (9, 10),
                    (0, 11), (11, 12), (12, 13),
                    (0, 14), (14, 15), (15, 16),
                ];
                #[rustfmt::skip]
                let lengths = vec![
                    150.0, 150.0, 100.0, 120.0,
                    180.0, 300.0, 250.0,
                    180.0, 300.0, 250.0,
                    110.0, 450.0, 430.0,
                    110.0, 450.0, 430.0,
                ];
                Ok((KinematicTree::new(nodes, edges)?, lengths))
            }
        }
    }
}

/// Parameters of the synthetic motion family.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticConfig {
    pub preset: TopologyPreset,
    pub trajectories: usize,
    pub frames: usize,
    pub fps: f64,
    /// Sinusoid frequency range, Hz.
    pub freq_range: (f64, f64),
    /// Sinusoid amplitude range, radians of joint angle.
    pub amp_range: (f64, f64),
    /// Additive Gaussian position noise, mm.
    pub noise_std: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            preset: TopologyPreset::Arm3,
            trajectories: 8,
            frames: 120,
            fps: 25.0,
            freq_range: (0.2, 1.0),
            amp_range: (0.15, 0.6),
            noise_std: 0.0,
            seed: 0,
        }
    }
}

/// One quasi-periodic scalar signal: a base offset plus 2 to 4 sinusoids.
struct AngleTrack {
    base: f64,
    terms: Vec<(f64, f64, f64)>, // (amplitude rad, frequency Hz, phase rad)
}

impl AngleTrack {
    fn draw(base_lo: f64, base_hi: f64, cfg: &SyntheticConfig, rng: &mut RngStream) -> AngleTrack {
        let count = 2 + rng.next_index(3); // 2..=4
        let terms = (0..count)
            .map(|_| {
                let amp = rng.next_in(cfg.amp_range.0, cfg.amp_range.1);
                let freq = rng.next_in(cfg.freq_range.0, cfg.freq_range.1);
                let phase = rng.next_in(0.0, 2.0 * core::f64::consts::PI);
                (amp, freq, phase)
            })
            .collect();
        AngleTrack { base: rng.next_in(base_lo, base_hi), terms }
    }

    fn at(&self, time_s: f64) -> f64 {
        let mut v = self.base;
        for &(amp, freq, phase) in &self.terms {
            v += amp * fmath::sin(2.0 * core::f64::consts::PI * freq * time_s + phase);
        }
        v
    }
}

/// Generates smooth skeleton trajectories: per-edge spherical joint angles
/// follow sums of random sinusoids, positions come from forward kinematics
/// (so segment lengths are exact before noise), then Gaussian noise is added.
/// Trajectory `i` draws from the substream with id `i`, so the output is
/// independent of generation order.
pub fn synthesize(cfg: &SyntheticConfig) -> Result<Vec<MotionSequence>> {
    if cfg.frames == 0 || !(cfg.fps > 0.0) {
        return Err(Error::InvalidArgument("synthesis needs frames >= 1 and fps > 0".into()));
    }
    if cfg.noise_std < 0.0 {
        return Err(Error::InvalidArgument("noise std must be >= 0".into()));
    }
    if cfg.freq_range.1 < cfg.freq_range.0 || cfg.amp_range.1 < cfg.amp_range.0 {
        return Err(Error::InvalidArgument("ranges must satisfy lo <= hi".into()));
    }
    let (tree, lengths) = cfg.preset.build()?;
    let root_stream = RngStream::new(cfg.seed, streams::SYNTH);

    let pi = core::f64::consts::PI;
    let mut out = Vec::with_capacity(cfg.trajectories);
    for traj in 0..cfg.trajectories {
        let mut rng = root_stream.substream(traj as u64);
        // One azimuth and one zenith track per edge. The zenith base stays
        // away from the poles so motions do not collapse onto the z axis.
        let tracks: Vec<(AngleTrack, AngleTrack)> = tree
            .edges()
            .iter()
            .map(|_| {
                let azimuth = AngleTrack::draw(0.0, 2.0 * pi, cfg, &mut rng);
                let zenith = AngleTrack::draw(0.3 * pi, 0.7 * pi, cfg, &mut rng);
                (azimuth, zenith)
            })
            .collect();

        let mut frames = Vec::with_capacity(cfg.frames);
        for f in 0..cfg.frames {
            let time_s = f as f64 / cfg.fps;
            let mut pose: Frame = vec![[0.0; 3]; tree.node_count()];
            // Edges are listed parent-first in every preset, so one pass
            // suffices for the kinematic chain.
            for (e, &(parent, child)) in tree.edges().iter().enumerate() {
                let (az, ze) = (&tracks[e].0, &tracks[e].1);
                let (theta, phi) = (az.at(time_s), ze.at(time_s));
                let dir = [
                    fmath::sin(phi) * fmath::cos(theta),
                    fmath::sin(phi) * fmath::sin(theta),
                    fmath::cos(phi),
                ];
                let p = pose[parent];
                pose[child] =
                    [p[0] + lengths[e] * dir[0], p[1] + lengths[e] * dir[1], p[2] + lengths[e] * dir[2]];
            }
            if cfg.noise_std > 0.0 {
                for p in pose.iter_mut() {
                    for c in p.iter_mut() {
                        *c += cfg.noise_std * rng.next_normal();
                    }
                }
            }
            frames.push(pose);
        }
        out.push(MotionSequence::new(tree.clone(), cfg.fps, frames)?);
    }
    Ok(out)
}
