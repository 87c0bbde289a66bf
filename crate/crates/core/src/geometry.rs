//! Uncertainty boundaries built from forecast samples, and clearance queries
//! against them.
//!
//! Per joint, the sample cloud at one frame becomes a confidence ellipsoid of
//! its fitted Gaussian. Per skeleton segment, the sample lines between two
//! joints become a swept envelope whose cross-section covariance varies
//! quadratically along the axis. Proximity queries discretise both the robot
//! segments and the boundary surfaces on nested grids, so doubling the
//! resolution can only tighten (never relax) the reported clearance.

use alloc::format;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::fmath::{cos, sin, sqrt};
use crate::motion::KinematicTree;
use crate::stats::{chi2_quantile, sample_covariance};
use crate::tensor::Tensor;

/// Covariance eigenvalues are floored here (square millimetres) so exact
/// sample agreement still yields a queryable boundary.
pub const EIGENVALUE_FLOOR: f64 = 1e-12;

/// Segments whose mean endpoints are closer than this (millimetres) carry no
/// usable axis and fall back to a degenerate marker.
pub const DEGENERATE_SEGMENT_LENGTH: f64 = 1e-6;

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    Ok(())
}

fn sub3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot3(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn cross3(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

fn norm3(a: [f64; 3]) -> f64 {
    sqrt(dot3(a, a))
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    norm3(sub3(a, b))
}

/// Confidence ellipsoid of one joint at one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct JointEllipsoid {
    /// Sample mean, millimetres.
    pub center: [f64; 3],
    /// Covariance eigenvalues, descending, floored at `EIGENVALUE_FLOOR`.
    pub eigenvalues: [f64; 3],
    /// `[3, 3]`; column `i` is the unit axis paired with `eigenvalues[i]`.
    pub axes: Tensor,
    /// Squared Mahalanobis radius of the confidence surface.
    pub chi2: f64,
}

/// Fits the confidence ellipsoid of a `[S, 3]` sample cloud. The surface
/// encloses a fraction `1 - alpha` of the fitted Gaussian.
pub fn joint_ellipsoid(points: &Tensor, alpha: f64) -> Result<JointEllipsoid> {
    check_alpha(alpha)?;
    let (s, cols) = points.dims2()?;
    if cols != 3 {
        return Err(Error::ShapeMismatch(format!("expected [S, 3] points, got {:?}", points.shape())));
    }
    if s < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: s });
    }
    let cov = sample_covariance(points, true)?;
    let eig = crate::eig::sym_eig(&cov.matrix)?;
    let mut eigenvalues = [0.0; 3];
    for (slot, &v) in eigenvalues.iter_mut().zip(&eig.values) {
        *slot = if v > EIGENVALUE_FLOOR { v } else { EIGENVALUE_FLOOR };
    }
    Ok(JointEllipsoid {
        center: [cov.mean[0], cov.mean[1], cov.mean[2]],
        eigenvalues,
        axes: eig.vectors,
        chi2: chi2_quantile(3, alpha)?,
    })
}

/// Squared Mahalanobis distance of `p` from the ellipsoid's Gaussian.
pub fn mahalanobis_sq(e: &JointEllipsoid, p: [f64; 3]) -> f64 {
    let d = sub3(p, e.center);
    let mut total = 0.0;
    for i in 0..3 {
        let mut y = 0.0;
        for r in 0..3 {
            y += e.axes.at2(r, i) * d[r];
        }
        total += y * y / e.eigenvalues[i];
    }
    total
}

/// Containment test, boundary inclusive.
pub fn point_in_ellipsoid(e: &JointEllipsoid, p: [f64; 3]) -> bool {
    mahalanobis_sq(e, p) <= e.chi2
}

/// Surface point at spherical parameters: `theta` sweeps around the first
/// two axes, `phi` runs from the third axis' pole at 0 to the opposite pole
/// at pi.
pub fn ellipsoid_surface_point(e: &JointEllipsoid, theta: f64, phi: f64) -> [f64; 3] {
    let u = [cos(theta) * sin(phi), sin(theta) * sin(phi), cos(phi)];
    let mut p = e.center;
    for i in 0..3 {
        let r = sqrt(e.chi2 * e.eigenvalues[i]) * u[i];
        for k in 0..3 {
            p[k] += e.axes.at2(k, i) * r;
        }
    }
    p
}

/// Swept uncertainty envelope of one skeleton segment at one frame.
///
/// Each sample contributes a straight line between its two endpoint draws.
/// In the local frame (columns `u1`, `u2` transverse, `u3` axial), the line
/// is `(x, y) = slope * z + intercept`; the envelope stores the first two
/// moments of those per-sample coefficients, which determine the exact
/// cross-section mean and covariance at every axial position.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentBoundary {
    /// Mean start endpoint, millimetres.
    pub start: [f64; 3],
    /// Mean end endpoint, millimetres.
    pub end: [f64; 3],
    /// Distance between the mean endpoints.
    pub length: f64,
    /// `[3, 3]`; columns are the local frame `u1`, `u2`, `u3`.
    pub frame: Tensor,
    pub mean_slope: [f64; 2],
    pub mean_intercept: [f64; 2],
    /// `[2, 2]` unbiased covariance of the per-sample slopes.
    pub var_slope: Tensor,
    /// `[2, 2]` unbiased covariance of the per-sample intercepts.
    pub var_intercept: Tensor,
    /// `[2, 2]`; entry `(r, c)` couples slope component `r` with intercept
    /// component `c`.
    pub cov_slope_intercept: Tensor,
    /// Squared Mahalanobis radius of the 2-dof cross-section boundary.
    pub chi2: f64,
}

/// Fits a segment envelope from paired endpoint samples, both `[S, 3]`.
/// Row `i` of `starts` and `ends` must come from the same forecast draw.
pub fn segment_boundary(starts: &Tensor, ends: &Tensor, alpha: f64) -> Result<SegmentBoundary> {
    check_alpha(alpha)?;
    let (s, c1) = starts.dims2()?;
    let (s2, c2) = ends.dims2()?;
    if c1 != 3 || c2 != 3 || s != s2 {
        return Err(Error::ShapeMismatch(format!(
            "expected matching [S, 3] endpoint sets, got {:?} and {:?}",
            starts.shape(),
            ends.shape()
        )));
    }
    if s < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: s });
    }
    let mut m1 = [0.0; 3];
    let mut m2 = [0.0; 3];
    for i in 0..s {
        for k in 0..3 {
            m1[k] += starts.at2(i, k);
            m2[k] += ends.at2(i, k);
        }
    }
    for k in 0..3 {
        m1[k] /= s as f64;
        m2[k] /= s as f64;
    }
    let axis = sub3(m2, m1);
    let length = norm3(axis);
    if length < DEGENERATE_SEGMENT_LENGTH {
        return Err(Error::InvalidData(format!(
            "degenerate segment: mean endpoints only {length} mm apart"
        )));
    }
    let u3 = [axis[0] / length, axis[1] / length, axis[2] / length];
    // Transverse axes from the world axis least aligned with u3.
    let mut pick = 0;
    for k in 1..3 {
        if u3[k].abs() < u3[pick].abs() {
            pick = k;
        }
    }
    let mut e = [0.0; 3];
    e[pick] = 1.0;
    let mut u1 = cross3(u3, e);
    let n1 = norm3(u1);
    for v in &mut u1 {
        *v /= n1;
    }
    let u2 = cross3(u3, u1);

    let local = |p: [f64; 3]| -> [f64; 3] {
        let d = sub3(p, m1);
        [dot3(d, u1), dot3(d, u2), dot3(d, u3)]
    };
    let mut slopes = Vec::with_capacity(s);
    let mut intercepts = Vec::with_capacity(s);
    for i in 0..s {
        let a = local([starts.at2(i, 0), starts.at2(i, 1), starts.at2(i, 2)]);
        let b = local([ends.at2(i, 0), ends.at2(i, 1), ends.at2(i, 2)]);
        let dz = b[2] - a[2];
        if dz.abs() < 1e-6 * length {
            return Err(Error::InvalidData(format!(
                "sample {i}: endpoints project to the same axial position"
            )));
        }
        let slope = [(b[0] - a[0]) / dz, (b[1] - a[1]) / dz];
        let intercept = [a[0] - slope[0] * a[2], a[1] - slope[1] * a[2]];
        slopes.push(slope);
        intercepts.push(intercept);
    }
    let mean2 = |v: &[[f64; 2]]| {
        let mut m = [0.0; 2];
        for x in v {
            m[0] += x[0];
            m[1] += x[1];
        }
        [m[0] / v.len() as f64, m[1] / v.len() as f64]
    };
    let mean_slope = mean2(&slopes);
    let mean_intercept = mean2(&intercepts);
    let cov2 = |a: &[[f64; 2]], ma: [f64; 2], b: &[[f64; 2]], mb: [f64; 2]| {
        let mut m = Tensor::zeros(&[2, 2]);
        for i in 0..a.len() {
            for r in 0..2 {
                for c in 0..2 {
                    let v = m.at2(r, c) + (a[i][r] - ma[r]) * (b[i][c] - mb[c]);
                    m.set2(r, c, v);
                }
            }
        }
        m.scale(1.0 / (a.len() - 1) as f64)
    };
    let mut frame = Tensor::zeros(&[3, 3]);
    for r in 0..3 {
        frame.set2(r, 0, u1[r]);
        frame.set2(r, 1, u2[r]);
        frame.set2(r, 2, u3[r]);
    }
    Ok(SegmentBoundary {
        start: m1,
        end: m2,
        length,
        frame,
        mean_slope,
        mean_intercept,
        var_slope: cov2(&slopes, mean_slope, &slopes, mean_slope),
        var_intercept: cov2(&intercepts, mean_intercept, &intercepts, mean_intercept),
        cov_slope_intercept: cov2(&slopes, mean_slope, &intercepts, mean_intercept),
        chi2: chi2_quantile(2, alpha)?,
    })
}

/// Cross-section of a segment envelope at axial position `z`.
#[derive(Debug, Clone, PartialEq)]
pub struct SectionEllipse {
    pub z: f64,
    /// Section mean in world coordinates.
    pub center: [f64; 3],
    /// Section mean in the transverse plane `(u1, u2)`.
    pub local_center: [f64; 2],
    /// `[2, 2]` cross-section covariance.
    pub cov: Tensor,
}

/// Exact section moments at `z` in `[0, length]`: the covariance is
/// `z^2 var_slope + z (cov + cov^T) + var_intercept`.
pub fn segment_section(b: &SegmentBoundary, z: f64) -> Result<SectionEllipse> {
    if !(0.0..=b.length).contains(&z) {
        return Err(Error::InvalidArgument(format!(
            "axial position {z} outside [0, {}]",
            b.length
        )));
    }
    let mut cov = Tensor::zeros(&[2, 2]);
    for r in 0..2 {
        for c in 0..2 {
            let v = z * z * b.var_slope.at2(r, c)
                + z * (b.cov_slope_intercept.at2(r, c) + b.cov_slope_intercept.at2(c, r))
                + b.var_intercept.at2(r, c);
            cov.set2(r, c, v);
        }
    }
    let local = [
        b.mean_slope[0] * z + b.mean_intercept[0],
        b.mean_slope[1] * z + b.mean_intercept[1],
    ];
    let mut center = b.start;
    for k in 0..3 {
        center[k] +=
            b.frame.at2(k, 0) * local[0] + b.frame.at2(k, 1) * local[1] + b.frame.at2(k, 2) * z;
    }
    Ok(SectionEllipse { z, center, local_center: local, cov })
}

/// Result of testing a point against a segment envelope.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SegmentContainment {
    /// The point projects outside the segment's axial extent.
    OutOfRange,
    Inside,
    Outside,
}

/// Tests a world point against the envelope, boundary inclusive. Points
/// whose axial projection falls outside `[0, length]` are `OutOfRange`.
pub fn point_in_segment_boundary(b: &SegmentBoundary, p: [f64; 3]) -> Result<SegmentContainment> {
    let d = sub3(p, b.start);
    let mut local = [0.0; 3];
    for i in 0..3 {
        for r in 0..3 {
            local[i] += b.frame.at2(r, i) * d[r];
        }
    }
    let z = local[2];
    if z < 0.0 || z > b.length {
        return Ok(SegmentContainment::OutOfRange);
    }
    let section = segment_section(b, z)?;
    let eig = crate::eig::sym_eig(&section.cov)?;
    let dx = [local[0] - section.local_center[0], local[1] - section.local_center[1]];
    let mut m = 0.0;
    for i in 0..2 {
        let y = eig.vectors.at2(0, i) * dx[0] + eig.vectors.at2(1, i) * dx[1];
        let lam = if eig.values[i] > EIGENVALUE_FLOOR { eig.values[i] } else { EIGENVALUE_FLOOR };
        m += y * y / lam;
    }
    Ok(if m <= b.chi2 { SegmentContainment::Inside } else { SegmentContainment::Outside })
}

/// Boundary surface point at axial position `z`, sweep angle `theta`.
pub fn segment_surface_point(b: &SegmentBoundary, z: f64, theta: f64) -> Result<[f64; 3]> {
    let section = segment_section(b, z)?;
    let eig = crate::eig::sym_eig(&section.cov)?;
    let mut offset = [0.0; 2];
    for i in 0..2 {
        let lam = if eig.values[i] > EIGENVALUE_FLOOR { eig.values[i] } else { EIGENVALUE_FLOOR };
        let r = sqrt(b.chi2 * lam) * if i == 0 { cos(theta) } else { sin(theta) };
        offset[0] += eig.vectors.at2(0, i) * r;
        offset[1] += eig.vectors.at2(1, i) * r;
    }
    let mut p = section.center;
    for k in 0..3 {
        p[k] += b.frame.at2(k, 0) * offset[0] + b.frame.at2(k, 1) * offset[1];
    }
    Ok(p)
}

/// A segment's boundary, or a marker when the segment collapsed to a point.
#[derive(Debug, Clone, PartialEq)]
pub enum SegmentElement {
    Boundary(SegmentBoundary),
    /// Mean endpoints were closer than `DEGENERATE_SEGMENT_LENGTH`; the
    /// segment is treated as the bare line between them.
    Degenerate { start: [f64; 3], end: [f64; 3] },
}

/// One skeleton segment of a frame boundary.
#[derive(Debug, Clone, PartialEq)]
pub struct SegmentInfo {
    /// Human joint ordinals (indexes into `FrameBoundary::joints`).
    pub joints: (usize, usize),
    pub element: SegmentElement,
}

/// All uncertainty boundaries of one forecast frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameBoundary {
    pub frame: usize,
    pub alpha: f64,
    /// One ellipsoid per human joint, in tree order.
    pub joints: Vec<JointEllipsoid>,
    /// One element per human skeleton edge, in tree edge order.
    pub segments: Vec<SegmentInfo>,
}

/// Builds every joint ellipsoid and segment envelope of frame `frame` from a
/// set of `[T, J, 3]` forecast samples.
pub fn frame_boundaries(
    samples: &[Tensor],
    tree: &KinematicTree,
    frame: usize,
    alpha: f64,
) -> Result<FrameBoundary> {
    check_alpha(alpha)?;
    let s = samples.len();
    if s < 4 {
        return Err(Error::TooFewSamples { needed: 4, got: s });
    }
    let shape = samples[0].shape().to_vec();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(Error::ShapeMismatch(format!("expected [T, J, 3] samples, got {shape:?}")));
    }
    for t in samples {
        if t.shape() != &shape[..] {
            return Err(Error::ShapeMismatch("samples disagree on shape".into()));
        }
    }
    let (t_len, j) = (shape[0], shape[1]);
    if frame >= t_len {
        return Err(Error::InvalidArgument(format!("frame {frame} out of range 0..{t_len}")));
    }
    let humans = tree.human_nodes();
    if humans.len() != j {
        return Err(Error::ShapeMismatch(format!(
            "samples carry {j} joints, tree has {} human nodes",
            humans.len()
        )));
    }
    let joint_cloud = |joint: usize| -> Tensor {
        let mut pts = Tensor::zeros(&[s, 3]);
        for (i, sample) in samples.iter().enumerate() {
            for k in 0..3 {
                pts.set2(i, k, sample.data()[(frame * j + joint) * 3 + k]);
            }
        }
        pts
    };
    let mut joints = Vec::with_capacity(j);
    for joint in 0..j {
        joints.push(joint_ellipsoid(&joint_cloud(joint), alpha)?);
    }
    // Node index -> human ordinal.
    let ordinal = |node: usize| humans.iter().position(|&h| h == node).unwrap();
    let mut segments = Vec::new();
    for &(a, b) in &tree.human_edges() {
        let (ja, jb) = (ordinal(a), ordinal(b));
        let starts = joint_cloud(ja);
        let ends = joint_cloud(jb);
        let start = joints[ja].center;
        let end = joints[jb].center;
        let element = if dist3(start, end) < DEGENERATE_SEGMENT_LENGTH {
            SegmentElement::Degenerate { start, end }
        } else {
            SegmentElement::Boundary(segment_boundary(&starts, &ends, alpha)?)
        };
        segments.push(SegmentInfo { joints: (ja, jb), element });
    }
    Ok(FrameBoundary { frame, alpha, joints, segments })
}

/// Identifies which boundary element a clearance row refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HumanElement {
    /// Joint ordinal.
    Joint(usize),
    /// Segment index within the frame boundary.
    Segment(usize),
}

/// Clearance between one robot segment and one boundary element.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityRow {
    pub robot_segment: usize,
    pub element: HumanElement,
    /// Millimetres; exactly zero when violated.
    pub clearance: f64,
    /// True when a sampled robot point lies inside the element.
    pub violation: bool,
}

/// All clearance rows of one frame at one grid resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityReport {
    pub resolution: usize,
    pub rows: Vec<ProximityRow>,
}

/// Sample points of a boundary element's surface on the nested grid: every
/// parameter takes values `i / resolution` of its full range, so the grid at
/// resolution `r` is a subset of the grid at `2 r`.
fn surface_grid(element: &BoundarySurface, resolution: usize) -> Vec<[f64; 3]> {
    let res = resolution;
    let tau = 2.0 * core::f64::consts::PI;
    match element {
        BoundarySurface::Ellipsoid(e) => {
            let mut pts = Vec::with_capacity(res * (res + 1));
            for a in 0..res {
                let theta = tau * a as f64 / res as f64;
                for b in 0..=res {
                    let phi = core::f64::consts::PI * b as f64 / res as f64;
                    pts.push(ellipsoid_surface_point(e, theta, phi));
                }
            }
            pts
        }
        BoundarySurface::Segment(b) => {
            let mut pts = Vec::with_capacity(res * (res + 1));
            for c in 0..=res {
                let z = b.length * c as f64 / res as f64;
                for a in 0..res {
                    let theta = tau * a as f64 / res as f64;
                    // Section parameters are valid on the closed interval.
                    if let Ok(p) = segment_surface_point(b, z, theta) {
                        pts.push(p);
                    }
                }
            }
            pts
        }
        BoundarySurface::Line { start, end } => (0..=res)
            .map(|c| {
                let t = c as f64 / res as f64;
                [
                    start[0] + (end[0] - start[0]) * t,
                    start[1] + (end[1] - start[1]) * t,
                    start[2] + (end[2] - start[2]) * t,
                ]
            })
            .collect(),
    }
}

enum BoundarySurface<'a> {
    Ellipsoid(&'a JointEllipsoid),
    Segment(&'a SegmentBoundary),
    Line { start: [f64; 3], end: [f64; 3] },
}

fn element_violated(element: &BoundarySurface, p: [f64; 3]) -> Result<bool> {
    Ok(match element {
        BoundarySurface::Ellipsoid(e) => point_in_ellipsoid(e, p),
        BoundarySurface::Segment(b) => {
            point_in_segment_boundary(b, p)? == SegmentContainment::Inside
        }
        BoundarySurface::Line { .. } => false,
    })
}

/// Clearance of every robot segment against every boundary element of one
/// frame. Robot segments are line segments sampled at `i / resolution`;
/// a sampled point inside an element forces `violation` and zero clearance,
/// otherwise the clearance is the minimum sampled surface distance. Nested
/// grids make the result monotone: doubling `resolution` never increases any
/// clearance and never clears a violation.
pub fn proximity(
    boundary: &FrameBoundary,
    robot_segments: &[([f64; 3], [f64; 3])],
    resolution: usize,
) -> Result<ProximityReport> {
    if resolution == 0 {
        return Err(Error::InvalidArgument("resolution must be at least 1".into()));
    }
    let mut elements: Vec<(HumanElement, BoundarySurface)> = Vec::new();
    for (i, e) in boundary.joints.iter().enumerate() {
        elements.push((HumanElement::Joint(i), BoundarySurface::Ellipsoid(e)));
    }
    for (i, seg) in boundary.segments.iter().enumerate() {
        let surface = match &seg.element {
            SegmentElement::Boundary(b) => BoundarySurface::Segment(b),
            SegmentElement::Degenerate { start, end } => {
                BoundarySurface::Line { start: *start, end: *end }
            }
        };
        elements.push((HumanElement::Segment(i), surface));
    }
    let grids: Vec<Vec<[f64; 3]>> =
        elements.iter().map(|(_, s)| surface_grid(s, resolution)).collect();
    let mut rows = Vec::with_capacity(robot_segments.len() * elements.len());
    for (ri, &(a, b)) in robot_segments.iter().enumerate() {
        let robot_points: Vec<[f64; 3]> = (0..=resolution)
            .map(|i| {
                let t = i as f64 / resolution as f64;
                [
                    a[0] + (b[0] - a[0]) * t,
                    a[1] + (b[1] - a[1]) * t,
                    a[2] + (b[2] - a[2]) * t,
                ]
            })
            .collect();
        for ((id, surface), grid) in elements.iter().zip(&grids) {
            let mut violation = false;
            for &p in &robot_points {
                if element_violated(surface, p)? {
                    violation = true;
                    break;
                }
            }
            let clearance = if violation {
                0.0
            } else {
                let mut best = f64::INFINITY;
                for &p in &robot_points {
                    for &q in grid {
                        let d = dist3(p, q);
                        if d < best {
                            best = d;
                        }
                    }
                }
                best
            };
            rows.push(ProximityRow { robot_segment: ri, element: *id, clearance, violation });
        }
    }
    Ok(ProximityReport { resolution, rows })
}
