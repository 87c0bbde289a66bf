//! Uncertainty boundary files, their surface-grid CSV, and clearance reports.
//!
//! A boundary file stores, per forecast frame, one confidence ellipsoid row
//! per human joint and one envelope row per skeleton segment. Segment rows
//! whose mean endpoints nearly coincide degenerate to a bare line and carry
//! `"fallback": true` with zeroed statistics.

use std::path::Path;

use kinecast_core::geometry::{
    ellipsoid_surface_point, segment_surface_point, FrameBoundary, HumanElement, JointEllipsoid,
    ProximityReport, SegmentBoundary, SegmentElement, SegmentInfo, EIGENVALUE_FLOOR,
};
use kinecast_core::Tensor;
use serde_json::{json, Map, Value};

use crate::jsonio::{
    as_array, as_bool, as_f64, as_object, as_str, as_usize, canonical, check_version, field, num,
    num_array, parse_json, point3, read_text, reject_unknown, write_text,
};
use crate::{CliError, CliResult};

const JOINT_KEYS: &[&str] =
    &["node", "center", "eigvals", "eigvecs", "chi2", "alpha", "degenerate"];
const SEGMENT_KEYS: &[&str] = &[
    "edge", "m1", "m2", "R", "L", "mb1", "mb2", "var_b1", "var_b2", "cov_b12", "chi2_2", "alpha",
    "fallback",
];

fn mat_value(t: &Tensor) -> CliResult<Value> {
    num_array(t.data())
}

fn mat_from(v: &Value, rows: usize, cols: usize, what: &str) -> CliResult<Tensor> {
    let data = crate::jsonio::fixed_f64s(v, rows * cols, what)?;
    Ok(Tensor::from_vec(&[rows, cols], data)?)
}

fn joint_to_value(node: usize, e: &JointEllipsoid, alpha: f64) -> CliResult<Value> {
    let degenerate = e.eigenvalues.iter().any(|&v| v <= EIGENVALUE_FLOOR);
    Ok(json!({
        "node": node,
        "center": num_array(&e.center)?,
        "eigvals": num_array(&e.eigenvalues)?,
        "eigvecs": mat_value(&e.axes)?,
        "chi2": num(e.chi2)?,
        "alpha": num(alpha)?,
        "degenerate": degenerate,
    }))
}

fn joint_from_value(v: &Value, what: &str) -> CliResult<JointEllipsoid> {
    let m = as_object(v, what)?;
    reject_unknown(m, JOINT_KEYS, what)?;
    let eig = crate::jsonio::fixed_f64s(field(m, "eigvals", what)?, 3, "eigvals")?;
    Ok(JointEllipsoid {
        center: point3(field(m, "center", what)?, "center")?,
        eigenvalues: [eig[0], eig[1], eig[2]],
        axes: mat_from(field(m, "eigvecs", what)?, 3, 3, "eigvecs")?,
        chi2: as_f64(field(m, "chi2", what)?, "chi2")?,
    })
}

fn segment_to_value(info: &SegmentInfo, alpha: f64) -> CliResult<Value> {
    let edge = json!([info.joints.0, info.joints.1]);
    match &info.element {
        SegmentElement::Boundary(b) => Ok(json!({
            "edge": edge,
            "m1": num_array(&b.start)?,
            "m2": num_array(&b.end)?,
            "R": mat_value(&b.frame)?,
            "L": num(b.length)?,
            // Mean regression coefficients: the envelope center line is the
            // affine fit, not exactly the segment between the mean endpoints.
            "mb1": num_array(&b.mean_slope)?,
            "mb2": num_array(&b.mean_intercept)?,
            "var_b1": mat_value(&b.var_slope)?,
            "var_b2": mat_value(&b.var_intercept)?,
            "cov_b12": mat_value(&b.cov_slope_intercept)?,
            "chi2_2": num(b.chi2)?,
            "alpha": num(alpha)?,
            "fallback": false,
        })),
        SegmentElement::Degenerate { start, end } => {
            let zeros1 = num_array(&[0.0; 2])?;
            let zeros2 = num_array(&[0.0; 4])?;
            let identity = num_array(&[1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0])?;
            let length = ((start[0] - end[0]).powi(2)
                + (start[1] - end[1]).powi(2)
                + (start[2] - end[2]).powi(2))
            .sqrt();
            Ok(json!({
                "edge": edge,
                "m1": num_array(start)?,
                "m2": num_array(end)?,
                "R": identity,
                "L": num(length)?,
                "mb1": zeros1.clone(),
                "mb2": zeros1,
                "var_b1": zeros2.clone(),
                "var_b2": zeros2.clone(),
                "cov_b12": zeros2,
                "chi2_2": num(0.0)?,
                "alpha": num(alpha)?,
                "fallback": true,
            }))
        }
    }
}

fn segment_from_value(v: &Value, what: &str) -> CliResult<SegmentInfo> {
    let m = as_object(v, what)?;
    reject_unknown(m, SEGMENT_KEYS, what)?;
    let edge = as_array(field(m, "edge", what)?, "edge")?;
    if edge.len() != 2 {
        return Err(CliError::Validation(format!("{what}.edge must be a pair")));
    }
    let joints = (as_usize(&edge[0], "edge")?, as_usize(&edge[1], "edge")?);
    let m1 = point3(field(m, "m1", what)?, "m1")?;
    let m2 = point3(field(m, "m2", what)?, "m2")?;
    let element = if as_bool(field(m, "fallback", what)?, "fallback")? {
        SegmentElement::Degenerate { start: m1, end: m2 }
    } else {
        let mb1 = crate::jsonio::fixed_f64s(field(m, "mb1", what)?, 2, "mb1")?;
        let mb2 = crate::jsonio::fixed_f64s(field(m, "mb2", what)?, 2, "mb2")?;
        SegmentElement::Boundary(SegmentBoundary {
            start: m1,
            end: m2,
            length: as_f64(field(m, "L", what)?, "L")?,
            frame: mat_from(field(m, "R", what)?, 3, 3, "R")?,
            mean_slope: [mb1[0], mb1[1]],
            mean_intercept: [mb2[0], mb2[1]],
            var_slope: mat_from(field(m, "var_b1", what)?, 2, 2, "var_b1")?,
            var_intercept: mat_from(field(m, "var_b2", what)?, 2, 2, "var_b2")?,
            cov_slope_intercept: mat_from(field(m, "cov_b12", what)?, 2, 2, "cov_b12")?,
            chi2: as_f64(field(m, "chi2_2", what)?, "chi2_2")?,
        })
    };
    Ok(SegmentInfo { joints, element })
}

/// `human_nodes` maps each joint ordinal to its node index in the tree the
/// samples came from; it only decorates the rows.
pub fn boundary_to_value(frames: &[FrameBoundary], human_nodes: &[usize]) -> CliResult<Value> {
    let alpha = frames.first().map_or(0.0, |f| f.alpha);
    let mut rows = Vec::with_capacity(frames.len());
    for fb in frames {
        let joints = fb
            .joints
            .iter()
            .enumerate()
            .map(|(j, e)| joint_to_value(human_nodes.get(j).copied().unwrap_or(j), e, fb.alpha))
            .collect::<CliResult<Vec<Value>>>()?;
        let segments = fb
            .segments
            .iter()
            .map(|s| segment_to_value(s, fb.alpha))
            .collect::<CliResult<Vec<Value>>>()?;
        let mut row = Map::new();
        row.insert("frame".into(), json!(fb.frame));
        row.insert("joints".into(), Value::Array(joints));
        row.insert("segments".into(), Value::Array(segments));
        rows.push(Value::Object(row));
    }
    Ok(json!({"version": 1, "alpha": num(alpha)?, "frames": rows}))
}

pub fn save_boundary(
    path: &Path,
    frames: &[FrameBoundary],
    human_nodes: &[usize],
) -> CliResult<()> {
    write_text(path, &canonical(&boundary_to_value(frames, human_nodes)?))
}

pub fn load_boundary(path: &Path) -> CliResult<Vec<FrameBoundary>> {
    let what = path.display().to_string();
    let v = parse_json(&read_text(path)?, &what)?;
    let m = as_object(&v, &what)?;
    reject_unknown(m, &["version", "alpha", "frames"], &what)?;
    check_version(m, &what)?;
    let alpha = as_f64(field(m, "alpha", &what)?, "alpha")?;
    let mut out = Vec::new();
    for (i, row) in as_array(field(m, "frames", &what)?, "frames")?.iter().enumerate() {
        let fm = as_object(row, &format!("frames[{i}]"))?;
        reject_unknown(fm, &["frame", "joints", "segments"], &format!("frames[{i}]"))?;
        let frame = as_usize(field(fm, "frame", "frame row")?, "frame")?;
        let joints = as_array(field(fm, "joints", "frame row")?, "joints")?
            .iter()
            .map(|j| joint_from_value(j, "joint row"))
            .collect::<CliResult<Vec<JointEllipsoid>>>()?;
        let segments = as_array(field(fm, "segments", "frame row")?, "segments")?
            .iter()
            .map(|s| segment_from_value(s, "segment row"))
            .collect::<CliResult<Vec<SegmentInfo>>>()?;
        out.push(FrameBoundary { frame, alpha, joints, segments });
    }
    Ok(out)
}

/// Plot-ready grid of surface points, one row per point:
/// `frame,element,x,y,z`. The grids match the ones the clearance query
/// samples, so a plotted surface is exactly what `proximity` measured
/// against.
pub fn surface_csv(frames: &[FrameBoundary], resolution: usize) -> CliResult<String> {
    if resolution == 0 {
        return Err(CliError::Validation("resolution must be at least 1".into()));
    }
    let tau = 2.0 * std::f64::consts::PI;
    let mut out = String::from("frame,element,x,y,z\n");
    let mut push = |frame: usize, element: &str, p: [f64; 3]| {
        out.push_str(&format!("{frame},{element},{},{},{}\n", p[0], p[1], p[2]));
    };
    for fb in frames {
        for (j, e) in fb.joints.iter().enumerate() {
            let element = format!("joint:{j}");
            for a in 0..resolution {
                let theta = tau * a as f64 / resolution as f64;
                for b in 0..=resolution {
                    let phi = std::f64::consts::PI * b as f64 / resolution as f64;
                    push(fb.frame, &element, ellipsoid_surface_point(e, theta, phi));
                }
            }
        }
        for (s, info) in fb.segments.iter().enumerate() {
            let element = format!("segment:{s}");
            match &info.element {
                SegmentElement::Boundary(b) => {
                    for c in 0..=resolution {
                        let z = b.length * c as f64 / resolution as f64;
                        for a in 0..resolution {
                            let theta = tau * a as f64 / resolution as f64;
                            push(fb.frame, &element, segment_surface_point(b, z, theta)?);
                        }
                    }
                }
                SegmentElement::Degenerate { start, end } => {
                    for c in 0..=resolution {
                        let t = c as f64 / resolution as f64;
                        let p = [
                            start[0] + (end[0] - start[0]) * t,
                            start[1] + (end[1] - start[1]) * t,
                            start[2] + (end[2] - start[2]) * t,
                        ];
                        push(fb.frame, &element, p);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Parses a surface CSV back into `(frame, element, point)` rows.
pub fn load_surface_csv(path: &Path) -> CliResult<Vec<(usize, String, [f64; 3])>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("frame,element,x,y,z") {
        return Err(CliError::Validation(format!("{}: bad header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            let bad = || CliError::Validation(format!("{}: bad row \"{line}\"", path.display()));
            if cells.len() != 5 {
                return Err(bad());
            }
            let frame = cells[0].parse::<usize>().map_err(|_| bad())?;
            let mut p = [0.0; 3];
            for (slot, cell) in p.iter_mut().zip(&cells[2..]) {
                *slot = cell.parse::<f64>().map_err(|_| bad())?;
            }
            Ok((frame, cells[1].to_string(), p))
        })
        .collect()
}

// ---------------------------------------------------------------------------
// Clearance reports.

fn element_str(e: HumanElement) -> String {
    match e {
        HumanElement::Joint(j) => format!("joint:{j}"),
        HumanElement::Segment(s) => format!("segment:{s}"),
    }
}

fn element_of(s: &str, what: &str) -> CliResult<HumanElement> {
    let parse = |rest: &str| {
        rest.parse::<usize>()
            .map_err(|_| CliError::Validation(format!("{what}: bad element \"{s}\"")))
    };
    if let Some(rest) = s.strip_prefix("joint:") {
        Ok(HumanElement::Joint(parse(rest)?))
    } else if let Some(rest) = s.strip_prefix("segment:") {
        Ok(HumanElement::Segment(parse(rest)?))
    } else {
        Err(CliError::Validation(format!("{what}: bad element \"{s}\"")))
    }
}

/// One clearance report per frame, flattened into rows.
pub fn proximity_to_value(reports: &[(usize, ProximityReport)]) -> CliResult<Value> {
    let mut rows = Vec::new();
    for (frame, report) in reports {
        for row in &report.rows {
            rows.push(json!({
                "frame": frame,
                "robot_segment": row.robot_segment,
                "human_element": element_str(row.element),
                "clearance_mm": num(row.clearance)?,
                "violation": row.violation,
                "resolution": report.resolution,
            }));
        }
    }
    Ok(json!({"version": 1, "rows": rows}))
}

pub fn save_proximity(path: &Path, reports: &[(usize, ProximityReport)]) -> CliResult<()> {
    write_text(path, &canonical(&proximity_to_value(reports)?))
}

/// A loaded clearance row, as written.
#[derive(Debug, Clone, PartialEq)]
pub struct ProximityRowFile {
    pub frame: usize,
    pub robot_segment: usize,
    pub element: HumanElement,
    pub clearance_mm: f64,
    pub violation: bool,
    pub resolution: usize,
}

pub fn load_proximity(path: &Path) -> CliResult<Vec<ProximityRowFile>> {
    let what = path.display().to_string();
    let v = parse_json(&read_text(path)?, &what)?;
    let m = as_object(&v, &what)?;
    reject_unknown(m, &["version", "rows"], &what)?;
    check_version(m, &what)?;
    let keys =
        ["frame", "robot_segment", "human_element", "clearance_mm", "violation", "resolution"];
    as_array(field(m, "rows", &what)?, "rows")?
        .iter()
        .map(|row| {
            let r = as_object(row, "clearance row")?;
            reject_unknown(r, &keys, "clearance row")?;
            Ok(ProximityRowFile {
                frame: as_usize(field(r, "frame", "row")?, "frame")?,
                robot_segment: as_usize(field(r, "robot_segment", "row")?, "robot_segment")?,
                element: element_of(
                    as_str(field(r, "human_element", "row")?, "human_element")?,
                    &what,
                )?,
                clearance_mm: as_f64(field(r, "clearance_mm", "row")?, "clearance_mm")?,
                violation: as_bool(field(r, "violation", "row")?, "violation")?,
                resolution: as_usize(field(r, "resolution", "row")?, "resolution")?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use kinecast_core::geometry::{frame_boundaries, proximity};
    use kinecast_core::motion::TopologyPreset;
    use kinecast_core::rng::RngStream;

    fn sample_frames() -> (Vec<FrameBoundary>, Vec<usize>) {
        let (tree, _) = TopologyPreset::Arm3.build().unwrap();
        let mut rng = RngStream::new(11, 2);
        let samples: Vec<Tensor> = (0..12)
            .map(|_| {
                let mut t = Tensor::uniform(&[2, 3, 3], -5.0, 5.0, &mut rng);
                // Separate the joints so no segment degenerates.
                for f in 0..2 {
                    for j in 0..3 {
                        t.data_mut()[(f * 3 + j) * 3] += 300.0 * j as f64;
                    }
                }
                t
            })
            .collect();
        let frames = (0..2)
            .map(|f| frame_boundaries(&samples, &tree, f, 0.05).unwrap())
            .collect::<Vec<_>>();
        (frames, tree.human_nodes())
    }

    #[test]
    fn boundary_roundtrip_preserves_geometry() {
        let dir = std::env::temp_dir().join("kinecast_boundary");
        let path = dir.join("boundary.json");
        let (frames, humans) = sample_frames();
        save_boundary(&path, &frames, &humans).unwrap();
        let back = load_boundary(&path).unwrap();
        assert_eq!(back.len(), frames.len());
        for (a, b) in back.iter().zip(&frames) {
            assert_eq!(a.frame, b.frame);
            assert_eq!(a.alpha, b.alpha);
            for (ja, jb) in a.joints.iter().zip(&b.joints) {
                assert_eq!(ja.center, jb.center);
                assert_eq!(ja.eigenvalues, jb.eigenvalues);
                assert_eq!(ja.axes.data(), jb.axes.data());
                assert_eq!(ja.chi2, jb.chi2);
            }
            for (sa, sb) in a.segments.iter().zip(&b.segments) {
                assert_eq!(sa.joints, sb.joints);
                match (&sa.element, &sb.element) {
                    (SegmentElement::Boundary(x), SegmentElement::Boundary(y)) => {
                        assert_eq!(x.start, y.start);
                        assert_eq!(x.end, y.end);
                        assert_eq!(x.length, y.length);
                        assert_eq!(x.mean_slope, y.mean_slope);
                        assert_eq!(x.mean_intercept, y.mean_intercept);
                        assert_eq!(x.frame.data(), y.frame.data());
                        assert_eq!(x.var_slope.data(), y.var_slope.data());
                        assert_eq!(x.var_intercept.data(), y.var_intercept.data());
                        assert_eq!(x.cov_slope_intercept.data(), y.cov_slope_intercept.data());
                        assert_eq!(x.chi2, y.chi2);
                    }
                    _ => panic!("element kind changed across the roundtrip"),
                }
            }
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn loaded_boundary_answers_the_same_clearance_queries() {
        let dir = std::env::temp_dir().join("kinecast_boundary_queries");
        let path = dir.join("boundary.json");
        let (frames, humans) = sample_frames();
        save_boundary(&path, &frames, &humans).unwrap();
        let back = load_boundary(&path).unwrap();
        let robot = [([900.0, 50.0, 0.0], [900.0, -50.0, 40.0])];
        for (a, b) in back.iter().zip(&frames) {
            let ra = proximity(a, &robot, 8).unwrap();
            let rb = proximity(b, &robot, 8).unwrap();
            for (x, y) in ra.rows.iter().zip(&rb.rows) {
                assert_eq!(x.violation, y.violation);
                assert!((x.clearance - y.clearance).abs() < 1e-9);
            }
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn surface_csv_has_a_row_per_grid_point() {
        let (frames, _) = sample_frames();
        let res = 4;
        let csv = surface_csv(&frames, res).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "frame,element,x,y,z");
        // Per frame: 3 ellipsoids of res*(res+1) points, 2 segments of
        // (res+1)*res points.
        let per_frame = 3 * res * (res + 1) + 2 * (res + 1) * res;
        assert_eq!(lines.len(), 1 + frames.len() * per_frame);
        assert!(lines[1].starts_with("0,joint:0,"));
        std::fs::remove_dir_all(std::env::temp_dir().join("kinecast_surface_unused")).ok();
    }

    #[test]
    fn proximity_roundtrip() {
        let dir = std::env::temp_dir().join("kinecast_proximity");
        let path = dir.join("proximity.json");
        let (frames, _) = sample_frames();
        let robot = [([900.0, 0.0, 0.0], [900.0, 100.0, 0.0])];
        let reports: Vec<(usize, ProximityReport)> = frames
            .iter()
            .map(|fb| (fb.frame, proximity(fb, &robot, 6).unwrap()))
            .collect();
        save_proximity(&path, &reports).unwrap();
        let rows = load_proximity(&path).unwrap();
        let total: usize = reports.iter().map(|(_, r)| r.rows.len()).sum();
        assert_eq!(rows.len(), total);
        assert_eq!(rows[0].frame, 0);
        assert_eq!(rows[0].resolution, 6);
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
