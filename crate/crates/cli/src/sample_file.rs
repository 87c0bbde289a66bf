//! Stochastic forecast sample sets.
//!
//! One file holds every sample drawn for a single window: `dims` is
//! `[S, T, J, 3]`, `samples` the nested coordinate array, and `member_of[i]`
//! the ensemble member that produced sample `i`.

use std::path::Path;

use kinecast_core::ensemble::SampleSet;
use kinecast_core::Tensor;
use serde_json::{json, Value};

use crate::jsonio::{
    as_array, as_f64, as_object, as_str, as_usize, canonical, check_version, field, num,
    parse_json, read_text, reject_unknown, write_text,
};
use crate::{CliError, CliResult};

const KEYS: &[&str] = &["version", "window_id", "dims", "member_of", "dropout_rate", "samples"];

/// A sample set tied to the window it was drawn for.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleFile {
    pub window_id: String,
    pub set: SampleSet,
}

fn sample_to_value(t: &Tensor) -> CliResult<Value> {
    let (frames, joints) = (t.shape()[0], t.shape()[1]);
    let mut out = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut row = Vec::with_capacity(joints);
        for j in 0..joints {
            let base = (f * joints + j) * 3;
            row.push(Value::Array(
                (0..3).map(|k| num(t.data()[base + k])).collect::<CliResult<_>>()?,
            ));
        }
        out.push(Value::Array(row));
    }
    Ok(Value::Array(out))
}

pub fn save_samples(path: &Path, file: &SampleFile) -> CliResult<()> {
    let set = &file.set;
    if set.samples.is_empty() {
        return Err(CliError::Validation("sample set is empty".into()));
    }
    let shape = set.samples[0].shape();
    if shape.len() != 3 || shape[2] != 3 {
        return Err(CliError::Validation(format!("samples must be [T, J, 3], got {shape:?}")));
    }
    let dims = vec![set.samples.len(), shape[0], shape[1], 3];
    let samples =
        Value::Array(set.samples.iter().map(sample_to_value).collect::<CliResult<_>>()?);
    let v = json!({
        "version": 1,
        "window_id": file.window_id,
        "dims": dims,
        "member_of": set.member_of,
        "dropout_rate": num(set.dropout_rate)?,
        "samples": samples,
    });
    write_text(path, &canonical(&v))
}

pub fn load_samples(path: &Path) -> CliResult<SampleFile> {
    let what = path.display().to_string();
    let v = parse_json(&read_text(path)?, &what)?;
    let m = as_object(&v, &what)?;
    reject_unknown(m, KEYS, &what)?;
    check_version(m, &what)?;
    let window_id = as_str(field(m, "window_id", &what)?, "window_id")?.to_string();
    let dims = as_array(field(m, "dims", &what)?, "dims")?
        .iter()
        .map(|d| as_usize(d, "dims entry"))
        .collect::<CliResult<Vec<usize>>>()?;
    if dims.len() != 4 || dims[3] != 3 {
        return Err(CliError::Validation(format!("{what}: dims must be [S, T, J, 3]")));
    }
    let (s, t_len, j) = (dims[0], dims[1], dims[2]);

    let member_of = as_array(field(m, "member_of", &what)?, "member_of")?
        .iter()
        .map(|x| as_usize(x, "member_of entry"))
        .collect::<CliResult<Vec<usize>>>()?;
    if member_of.len() != s {
        return Err(CliError::Validation(format!("{what}: member_of must have {s} entries")));
    }
    let dropout_rate = as_f64(field(m, "dropout_rate", &what)?, "dropout_rate")?;

    let rows = as_array(field(m, "samples", &what)?, "samples")?;
    if rows.len() != s {
        return Err(CliError::Validation(format!("{what}: expected {s} samples")));
    }
    let mut samples = Vec::with_capacity(s);
    for (i, sample) in rows.iter().enumerate() {
        let frames = as_array(sample, &format!("samples[{i}]"))?;
        if frames.len() != t_len {
            return Err(CliError::Validation(format!("{what}: samples[{i}] has a bad frame count")));
        }
        let mut data = Vec::with_capacity(t_len * j * 3);
        for frame in frames {
            let points = as_array(frame, "sample frame")?;
            if points.len() != j {
                return Err(CliError::Validation(format!(
                    "{what}: samples[{i}] has a bad joint count"
                )));
            }
            for p in points {
                data.extend(crate::jsonio::point3(p, "sample point")?);
            }
        }
        samples.push(Tensor::from_vec(&[t_len, j, 3], data)?);
    }
    Ok(SampleFile { window_id, set: SampleSet { samples, member_of, dropout_rate } })
}
