//! Forecast evaluation reports and the forecast file itself.
//!
//! A forecast file is one `[T, J, 3]` trajectory with the window it answers
//! for. The evaluation report is a flat metric table written twice: a CSV
//! (`metric,horizon_ms,value_mm`) for plotting and a JSON mirror with the
//! same rows in the same order.

use std::path::Path;

use kinecast_core::Tensor;
use serde_json::{json, Value};

use crate::jsonio::{
    as_array, as_f64, as_object, as_str, as_usize, canonical, check_version, field, num,
    parse_json, read_text, reject_unknown, write_text,
};
use crate::{CliError, CliResult};

/// A point forecast tied to its source window.
#[derive(Debug, Clone, PartialEq)]
pub struct ForecastFile {
    pub window_id: String,
    pub fps: f64,
    /// `[T, J, 3]`.
    pub data: Tensor,
}

pub fn save_forecast(path: &Path, f: &ForecastFile) -> CliResult<()> {
    let shape = f.data.shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(CliError::Validation(format!("forecast must be [T, J, 3], got {shape:?}")));
    }
    let (t_len, j) = (shape[0], shape[1]);
    let mut frames = Vec::with_capacity(t_len);
    for t in 0..t_len {
        let mut row = Vec::with_capacity(j);
        for joint in 0..j {
            let base = (t * j + joint) * 3;
            row.push(Value::Array(
                (0..3).map(|k| num(f.data.data()[base + k])).collect::<CliResult<_>>()?,
            ));
        }
        frames.push(Value::Array(row));
    }
    let v = json!({
        "version": 1,
        "window_id": f.window_id,
        "fps": num(f.fps)?,
        "dims": [t_len, j, 3],
        "data": frames,
    });
    write_text(path, &canonical(&v))
}

pub fn load_forecast(path: &Path) -> CliResult<ForecastFile> {
    let what = path.display().to_string();
    let v = parse_json(&read_text(path)?, &what)?;
    let m = as_object(&v, &what)?;
    reject_unknown(m, &["version", "window_id", "fps", "dims", "data"], &what)?;
    check_version(m, &what)?;
    let window_id = as_str(field(m, "window_id", &what)?, "window_id")?.to_string();
    let fps = as_f64(field(m, "fps", &what)?, "fps")?;
    let dims = as_array(field(m, "dims", &what)?, "dims")?
        .iter()
        .map(|d| as_usize(d, "dims entry"))
        .collect::<CliResult<Vec<usize>>>()?;
    if dims.len() != 3 || dims[2] != 3 {
        return Err(CliError::Validation(format!("{what}: dims must be [T, J, 3]")));
    }
    let (t_len, j) = (dims[0], dims[1]);
    let rows = as_array(field(m, "data", &what)?, "data")?;
    if rows.len() != t_len {
        return Err(CliError::Validation(format!("{what}: expected {t_len} frames")));
    }
    let mut data = Vec::with_capacity(t_len * j * 3);
    for row in rows {
        let points = as_array(row, "forecast frame")?;
        if points.len() != j {
            return Err(CliError::Validation(format!("{what}: bad joint count in a frame")));
        }
        for p in points {
            data.extend(crate::jsonio::point3(p, "forecast point")?);
        }
    }
    Ok(ForecastFile { window_id, fps, data: Tensor::from_vec(&[t_len, j, 3], data)? })
}

// ---------------------------------------------------------------------------
// Metric reports.

/// One metric row; `horizon_ms` is empty for whole-forecast metrics.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub metric: String,
    pub horizon_ms: Option<f64>,
    pub value_mm: f64,
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("metric,horizon_ms,value_mm\n");
    for r in rows {
        let h = r.horizon_ms.map_or(String::new(), |ms| format!("{ms}"));
        out.push_str(&format!("{},{h},{}\n", r.metric, r.value_mm));
    }
    out
}

pub fn eval_json(rows: &[EvalRow]) -> CliResult<Value> {
    let rows = rows
        .iter()
        .map(|r| {
            let h = match r.horizon_ms {
                Some(ms) => num(ms)?,
                None => Value::Null,
            };
            Ok(json!({"metric": r.metric, "horizon_ms": h, "value_mm": num(r.value_mm)?}))
        })
        .collect::<CliResult<Vec<Value>>>()?;
    Ok(json!({"version": 1, "rows": rows}))
}

pub fn save_eval(csv_path: &Path, json_path: &Path, rows: &[EvalRow]) -> CliResult<()> {
    write_text(csv_path, &eval_csv(rows))?;
    write_text(json_path, &canonical(&eval_json(rows)?))
}

pub fn load_eval_csv(path: &Path) -> CliResult<Vec<EvalRow>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("metric,horizon_ms,value_mm") {
        return Err(CliError::Validation(format!("{}: bad header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != 3 {
                return Err(CliError::Validation(format!("{}: bad row \"{line}\"", path.display())));
            }
            let horizon_ms = if cells[1].is_empty() {
                None
            } else {
                Some(cells[1].parse::<f64>().map_err(|_| {
                    CliError::Validation(format!("{}: bad horizon \"{}\"", path.display(), cells[1]))
                })?)
            };
            let value_mm = cells[2].parse::<f64>().map_err(|_| {
                CliError::Validation(format!("{}: bad value \"{}\"", path.display(), cells[2]))
            })?;
            Ok(EvalRow { metric: cells[0].to_string(), horizon_ms, value_mm })
        })
        .collect()
}

pub fn load_eval_json(path: &Path) -> CliResult<Vec<EvalRow>> {
    let what = path.display().to_string();
    let v = parse_json(&read_text(path)?, &what)?;
    let m = as_object(&v, &what)?;
    reject_unknown(m, &["version", "rows"], &what)?;
    check_version(m, &what)?;
    as_array(field(m, "rows", &what)?, "rows")?
        .iter()
        .map(|row| {
            let r = as_object(row, "metric row")?;
            reject_unknown(r, &["metric", "horizon_ms", "value_mm"], "metric row")?;
            let h = field(r, "horizon_ms", "row")?;
            let horizon_ms = if h.is_null() { None } else { Some(as_f64(h, "horizon_ms")?) };
            Ok(EvalRow {
                metric: as_str(field(r, "metric", "row")?, "metric")?.to_string(),
                horizon_ms,
                value_mm: as_f64(field(r, "value_mm", "row")?, "value_mm")?,
            })
        })
        .collect()
}
