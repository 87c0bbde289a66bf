//! Motion trajectory files and the dataset manifest.
//!
//! The primary format is a single JSON document holding the skeleton and all
//! frames; a CSV alternative splits the coordinates into a table and keeps
//! the skeleton in a `.meta.json` sidecar next to it. Positions are stored in
//! millimetres; files declaring `"units": "m"` are converted on load.

use std::path::{Path, PathBuf};

use kinecast_core::motion::{Frame, KinematicTree, MotionSequence, NodeKind, TreeNode};
use serde_json::{json, Map, Value};

use crate::jsonio::{
    as_array, as_f64, as_object, as_str, as_usize, canonical, check_version, field, fmt_f64, num,
    parse_json, point3, read_text, reject_unknown, write_text,
};
use crate::{CliError, CliResult};

const MOTION_KEYS: &[&str] = &["version", "fps", "units", "nodes", "edges", "frames"];
const META_KEYS: &[&str] = &["version", "fps", "units", "nodes", "edges"];

fn kind_str(kind: NodeKind) -> &'static str {
    match kind {
        NodeKind::Human => "human",
        NodeKind::Robot => "robot",
    }
}

fn kind_of(s: &str, what: &str) -> CliResult<NodeKind> {
    match s {
        "human" => Ok(NodeKind::Human),
        "robot" => Ok(NodeKind::Robot),
        other => Err(CliError::Validation(format!("{what}: unknown node kind \"{other}\""))),
    }
}

fn nodes_value(tree: &KinematicTree) -> Value {
    Value::Array(
        tree.nodes()
            .iter()
            .map(|n| json!({"name": n.name, "kind": kind_str(n.kind)}))
            .collect(),
    )
}

fn edges_value(tree: &KinematicTree) -> Value {
    Value::Array(tree.edges().iter().map(|&(a, b)| json!([a, b])).collect())
}

fn frames_value(frames: &[Frame]) -> CliResult<Value> {
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let mut row = Vec::with_capacity(frame.len());
        for p in frame {
            row.push(Value::Array(vec![num(p[0])?, num(p[1])?, num(p[2])?]));
        }
        out.push(Value::Array(row));
    }
    Ok(Value::Array(out))
}

fn tree_from_values(nodes: &Value, edges: &Value, what: &str) -> CliResult<KinematicTree> {
    let mut parsed_nodes = Vec::new();
    for (i, n) in as_array(nodes, &format!("{what}.nodes"))?.iter().enumerate() {
        let m = as_object(n, &format!("{what}.nodes[{i}]"))?;
        reject_unknown(m, &["name", "kind"], &format!("{what}.nodes[{i}]"))?;
        let name = as_str(field(m, "name", "node")?, "node name")?.to_string();
        let kind = kind_of(as_str(field(m, "kind", "node")?, "node kind")?, what)?;
        parsed_nodes.push(TreeNode { name, kind });
    }
    let mut parsed_edges = Vec::new();
    for (i, e) in as_array(edges, &format!("{what}.edges"))?.iter().enumerate() {
        let pair = as_array(e, &format!("{what}.edges[{i}]"))?;
        if pair.len() != 2 {
            return Err(CliError::Validation(format!("{what}.edges[{i}] must be a pair")));
        }
        parsed_edges.push((
            as_usize(&pair[0], "edge endpoint")?,
            as_usize(&pair[1], "edge endpoint")?,
        ));
    }
    Ok(KinematicTree::new(parsed_nodes, parsed_edges)?)
}

/// Millimetres per declared unit.
fn unit_scale(units: &str, what: &str) -> CliResult<f64> {
    match units {
        "mm" => Ok(1.0),
        "m" => Ok(1000.0),
        other => Err(CliError::Validation(format!("{what}: unknown units \"{other}\""))),
    }
}

pub fn motion_to_value(seq: &MotionSequence) -> CliResult<Value> {
    let mut m = Map::new();
    m.insert("version".into(), json!(1));
    m.insert("fps".into(), num(seq.fps)?);
    m.insert("units".into(), json!("mm"));
    m.insert("nodes".into(), nodes_value(&seq.tree));
    m.insert("edges".into(), edges_value(&seq.tree));
    m.insert("frames".into(), frames_value(seq.frames())?);
    Ok(Value::Object(m))
}

pub fn save_motion(path: &Path, seq: &MotionSequence) -> CliResult<()> {
    write_text(path, &canonical(&motion_to_value(seq)?))
}

pub fn motion_from_value(v: &Value, what: &str) -> CliResult<MotionSequence> {
    let m = as_object(v, what)?;
    reject_unknown(m, MOTION_KEYS, what)?;
    check_version(m, what)?;
    let fps = as_f64(field(m, "fps", what)?, "fps")?;
    let scale = unit_scale(as_str(field(m, "units", what)?, "units")?, what)?;
    let tree = tree_from_values(field(m, "nodes", what)?, field(m, "edges", what)?, what)?;
    let mut frames = Vec::new();
    for (i, f) in as_array(field(m, "frames", what)?, &format!("{what}.frames"))?.iter().enumerate()
    {
        let row = as_array(f, &format!("{what}.frames[{i}]"))?;
        let mut frame = Vec::with_capacity(row.len());
        for p in row {
            let [x, y, z] = point3(p, &format!("{what}.frames[{i}]"))?;
            frame.push([x * scale, y * scale, z * scale]);
        }
        frames.push(frame);
    }
    Ok(MotionSequence::new(tree, fps, frames)?)
}

/// Loads a trajectory; `.csv` files go through the sidecar path, everything
/// else is parsed as motion JSON.
pub fn load_motion(path: &Path) -> CliResult<MotionSequence> {
    if path.extension().is_some_and(|e| e == "csv") {
        return load_motion_csv(path);
    }
    let what = path.display().to_string();
    motion_from_value(&parse_json(&read_text(path)?, &what)?, &what)
}

// ---------------------------------------------------------------------------
// CSV alternative: `frame,<name>_x,<name>_y,<name>_z,...` plus a sidecar.

/// Sidecar path of `walk.csv` is `walk.meta.json`.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("meta.json")
}

pub fn save_motion_csv(path: &Path, seq: &MotionSequence) -> CliResult<()> {
    let mut header = String::from("frame");
    for n in seq.tree.nodes() {
        for axis in ["x", "y", "z"] {
            header.push(',');
            header.push_str(&n.name);
            header.push('_');
            header.push_str(axis);
        }
    }
    let mut text = header;
    text.push('\n');
    for (i, frame) in seq.frames().iter().enumerate() {
        text.push_str(&i.to_string());
        for p in frame {
            for v in p {
                text.push(',');
                text.push_str(&fmt_f64(*v));
            }
        }
        text.push('\n');
    }
    write_text(path, &text)?;

    let mut meta = Map::new();
    meta.insert("version".into(), json!(1));
    meta.insert("fps".into(), num(seq.fps)?);
    meta.insert("units".into(), json!("mm"));
    meta.insert("nodes".into(), nodes_value(&seq.tree));
    meta.insert("edges".into(), edges_value(&seq.tree));
    write_text(&sidecar_path(path), &canonical(&Value::Object(meta)))
}

pub fn load_motion_csv(path: &Path) -> CliResult<MotionSequence> {
    let meta_path = sidecar_path(path);
    let what = meta_path.display().to_string();
    let meta_value = parse_json(&read_text(&meta_path)?, &what)?;
    let meta = as_object(&meta_value, &what)?;
    reject_unknown(meta, META_KEYS, &what)?;
    check_version(meta, &what)?;
    let fps = as_f64(field(meta, "fps", &what)?, "fps")?;
    let scale = unit_scale(as_str(field(meta, "units", &what)?, "units")?, &what)?;
    let tree = tree_from_values(field(meta, "nodes", &what)?, field(meta, "edges", &what)?, &what)?;

    let text = read_text(path)?;
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| CliError::Validation(format!("{}: empty CSV", path.display())))?;
    let mut expected = String::from("frame");
    for n in tree.nodes() {
        for axis in ["x", "y", "z"] {
            expected.push(',');
            expected.push_str(&n.name);
            expected.push('_');
            expected.push_str(axis);
        }
    }
    if header != expected {
        return Err(CliError::Validation(format!(
            "{}: header does not match the sidecar skeleton",
            path.display()
        )));
    }
    let width = tree.node_count();
    let mut frames = Vec::new();
    for (row, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() != 1 + 3 * width {
            return Err(CliError::Validation(format!(
                "{}: row {row} has {} cells, expected {}",
                path.display(),
                cells.len(),
                1 + 3 * width
            )));
        }
        let mut frame = Vec::with_capacity(width);
        for node in 0..width {
            let mut p = [0.0; 3];
            for (k, slot) in p.iter_mut().enumerate() {
                let cell = cells[1 + 3 * node + k];
                *slot = cell.parse::<f64>().map_err(|_| {
                    CliError::Validation(format!(
                        "{}: row {row} has non-numeric cell \"{cell}\"",
                        path.display()
                    ))
                })? * scale;
            }
            frame.push(p);
        }
        frames.push(frame);
    }
    Ok(MotionSequence::new(tree, fps, frames)?)
}

// ---------------------------------------------------------------------------
// Manifest: the list of trajectory files making up a dataset.

pub fn save_manifest(path: &Path, files: &[String]) -> CliResult<()> {
    let v = json!({"version": 1, "files": files});
    write_text(path, &canonical(&v))
}

/// Returns file names relative to the manifest's directory.
pub fn load_manifest(path: &Path) -> CliResult<Vec<String>> {
    let what = path.display().to_string();
    let v = parse_json(&read_text(path)?, &what)?;
    let m = as_object(&v, &what)?;
    reject_unknown(m, &["version", "files"], &what)?;
    check_version(m, &what)?;
    as_array(field(m, "files", &what)?, &format!("{what}.files"))?
        .iter()
        .map(|f| Ok(as_str(f, "manifest entry")?.to_string()))
        .collect()
}
