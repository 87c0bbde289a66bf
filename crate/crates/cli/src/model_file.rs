//! Trained model files.
//!
//! A model file carries the architecture config, every parameter tensor, and
//! a checksum: FNV-1a over the canonical text of the `arrays` object. Floats
//! are written with 17 significant digits, so saving and loading round-trips
//! every parameter bit-exactly and the checksum is reproducible from the
//! parsed values alone.

use std::path::Path;

use kinecast_core::tgn::{TgnConfig, TgnParams};
use kinecast_core::Tensor;
use serde_json::{json, Map, Value};

use crate::jsonio::{
    as_array, as_f64, as_object, as_str, as_usize, canonical, check_version, field, fnv1a64, num,
    num_array, parse_json, read_text, reject_unknown, write_text,
};
use crate::{CliError, CliResult};

const CONFIG_KEYS: &[&str] = &[
    "history",
    "horizon",
    "joints",
    "robot_channels",
    "hidden",
    "heads",
    "dilations",
    "kernel",
    "gat_dropout",
    "tcn_dropout",
    "seed",
];

pub fn config_to_value(c: &TgnConfig) -> CliResult<Value> {
    Ok(json!({
        "history": c.history,
        "horizon": c.horizon,
        "joints": c.joints,
        "robot_channels": c.robot_channels,
        "hidden": c.hidden,
        "heads": c.heads,
        "dilations": c.dilations,
        "kernel": c.kernel,
        "gat_dropout": num(c.gat_dropout)?,
        "tcn_dropout": num(c.tcn_dropout)?,
        "seed": c.seed,
    }))
}

pub fn config_from_value(v: &Value, what: &str) -> CliResult<TgnConfig> {
    let m = as_object(v, what)?;
    reject_unknown(m, CONFIG_KEYS, what)?;
    let dilations = as_array(field(m, "dilations", what)?, "dilations")?
        .iter()
        .map(|d| as_usize(d, "dilation"))
        .collect::<CliResult<Vec<usize>>>()?;
    Ok(TgnConfig {
        history: as_usize(field(m, "history", what)?, "history")?,
        horizon: as_usize(field(m, "horizon", what)?, "horizon")?,
        joints: as_usize(field(m, "joints", what)?, "joints")?,
        robot_channels: as_usize(field(m, "robot_channels", what)?, "robot_channels")?,
        hidden: as_usize(field(m, "hidden", what)?, "hidden")?,
        heads: as_usize(field(m, "heads", what)?, "heads")?,
        dilations,
        kernel: as_usize(field(m, "kernel", what)?, "kernel")?,
        gat_dropout: as_f64(field(m, "gat_dropout", what)?, "gat_dropout")?,
        tcn_dropout: as_f64(field(m, "tcn_dropout", what)?, "tcn_dropout")?,
        seed: field(m, "seed", what)?.as_u64().ok_or_else(|| {
            CliError::Validation(format!("{what}.seed must be a nonnegative integer"))
        })?,
    })
}

fn arrays_to_value(arrays: &[(String, Tensor)]) -> CliResult<Value> {
    let mut m = Map::new();
    for (name, t) in arrays {
        m.insert(
            name.clone(),
            json!({"shape": t.shape(), "data": num_array(t.data())?}),
        );
    }
    Ok(Value::Object(m))
}

fn checksum_hex(arrays: &Value) -> String {
    format!("{:016x}", fnv1a64(canonical(arrays).as_bytes()))
}

pub fn save_model(path: &Path, params: &TgnParams) -> CliResult<()> {
    let arrays = arrays_to_value(&params.named_arrays())?;
    let v = json!({
        "version": 1,
        "config": config_to_value(&params.config)?,
        "checksum": checksum_hex(&arrays),
        "arrays": arrays,
    });
    write_text(path, &canonical(&v))
}

pub fn load_model(path: &Path) -> CliResult<TgnParams> {
    let what = path.display().to_string();
    let v = parse_json(&read_text(path)?, &what)?;
    let m = as_object(&v, &what)?;
    reject_unknown(m, &["version", "config", "checksum", "arrays"], &what)?;
    check_version(m, &what)?;
    let config = config_from_value(field(m, "config", &what)?, &format!("{what}.config"))?;

    let arrays_obj = as_object(field(m, "arrays", &what)?, &format!("{what}.arrays"))?;
    let mut arrays = Vec::with_capacity(arrays_obj.len());
    for (name, entry) in arrays_obj {
        let e = as_object(entry, name)?;
        reject_unknown(e, &["shape", "data"], name)?;
        let shape = as_array(field(e, "shape", name)?, "shape")?
            .iter()
            .map(|d| as_usize(d, "shape entry"))
            .collect::<CliResult<Vec<usize>>>()?;
        let data = as_array(field(e, "data", name)?, "data")?
            .iter()
            .map(|x| as_f64(x, "array entry"))
            .collect::<CliResult<Vec<f64>>>()?;
        let tensor = Tensor::from_vec(&shape, data)
            .map_err(|e| CliError::Validation(format!("{what}: array {name}: {e}")))?;
        arrays.push((name.clone(), tensor));
    }

    // The canonical text of the parsed arrays must hash to the stored value;
    // any corrupted digit changes the reconstruction.
    let stored = as_str(field(m, "checksum", &what)?, "checksum")?;
    let computed = checksum_hex(&arrays_to_value(&arrays)?);
    if stored != computed {
        return Err(CliError::Validation(format!(
            "{what}: checksum mismatch: stored {stored}, computed {computed}"
        )));
    }

    Ok(TgnParams::from_named_arrays(&config, &arrays)?)
}

// ---------------------------------------------------------------------------
// Per-member loss curves.

pub fn save_train_log(path: &Path, log: &kinecast_core::tgn::TrainLog) -> CliResult<()> {
    let mut text = String::from("epoch,train_loss,val_loss\n");
    for e in &log.epochs {
        text.push_str(&format!("{},{},{}\n", e.epoch, e.train_loss, e.val_loss));
    }
    write_text(path, &text)
}

pub fn load_train_log(path: &Path) -> CliResult<Vec<(usize, f64, f64)>> {
    let text = read_text(path)?;
    let mut lines = text.lines();
    if lines.next() != Some("epoch,train_loss,val_loss") {
        return Err(CliError::Validation(format!("{}: bad header", path.display())));
    }
    lines
        .filter(|l| !l.is_empty())
        .map(|line| {
            let cells: Vec<&str> = line.split(',').collect();
            let bad =
                || CliError::Validation(format!("{}: bad row \"{line}\"", path.display()));
            if cells.len() != 3 {
                return Err(bad());
            }
            Ok((
                cells[0].parse::<usize>().map_err(|_| bad())?,
                cells[1].parse::<f64>().map_err(|_| bad())?,
                cells[2].parse::<f64>().map_err(|_| bad())?,
            ))
        })
        .collect()
}
