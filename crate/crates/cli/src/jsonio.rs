//! Canonical JSON text, checksums, and parsing helpers.
//!
//! All artifacts go through [`canonical`]: object keys are emitted in sorted
//! order and every float as a 17-significant-digit scientific literal, which
//! round-trips any f64 exactly. The byte stream is therefore a pure function
//! of the data, which makes reruns byte-identical and checksums meaningful.

use std::fs;
use std::path::Path;

use serde_json::{Map, Value};

use crate::{CliError, CliResult};

/// 17 significant digits: the shortest count that reproduces every f64.
pub fn fmt_f64(v: f64) -> String {
    format!("{v:.16e}")
}

/// Wraps a finite float; non-finite values have no JSON representation.
pub fn num(v: f64) -> CliResult<Value> {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .ok_or_else(|| CliError::Numeric(format!("cannot serialize non-finite value {v}")))
}

pub fn num_array(vs: &[f64]) -> CliResult<Value> {
    Ok(Value::Array(vs.iter().map(|&v| num(v)).collect::<CliResult<_>>()?))
}

/// Serializes with sorted keys and [`fmt_f64`] floats.
pub fn canonical(value: &Value) -> String {
    let mut out = String::new();
    write_value(&mut out, value);
    out
}

fn write_value(out: &mut String, v: &Value) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if let Some(i) = n.as_i64() {
                out.push_str(&i.to_string());
            } else if let Some(u) = n.as_u64() {
                out.push_str(&u.to_string());
            } else {
                out.push_str(&fmt_f64(n.as_f64().unwrap()));
            }
        }
        Value::String(s) => write_string(out, s),
        Value::Array(xs) => {
            out.push('[');
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_value(out, x);
            }
            out.push(']');
        }
        Value::Object(map) => {
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            out.push('{');
            for (i, k) in keys.iter().enumerate() {
                if i > 0 {
                    out.push(',');
                }
                write_string(out, k);
                out.push(':');
                write_value(out, &map[*k]);
            }
            out.push('}');
        }
    }
}

fn write_string(out: &mut String, s: &str) {
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            '\t' => out.push_str("\\t"),
            c if (c as u32) < 0x20 => {
                out.push_str(&format!("\\u{:04x}", c as u32));
            }
            c => out.push(c),
        }
    }
    out.push('"');
}

/// FNV-1a over the canonical bytes, as used by the model file checksum.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

// ---------------------------------------------------------------------------
// File IO with path-bearing errors.

pub fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::Validation(format!("cannot read {}: {e}", path.display())))
}

/// Creates parent directories as needed.
pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| {
                CliError::Validation(format!("cannot create {}: {e}", parent.display()))
            })?;
        }
    }
    fs::write(path, text)
        .map_err(|e| CliError::Validation(format!("cannot write {}: {e}", path.display())))
}

pub fn parse_json(text: &str, what: &str) -> CliResult<Value> {
    serde_json::from_str(text)
        .map_err(|e| CliError::Validation(format!("{what}: invalid JSON: {e}")))
}

// ---------------------------------------------------------------------------
// Typed access into parsed values. `what` names the location for messages.

pub fn as_object<'a>(v: &'a Value, what: &str) -> CliResult<&'a Map<String, Value>> {
    v.as_object().ok_or_else(|| CliError::Validation(format!("{what} must be an object")))
}

pub fn as_array<'a>(v: &'a Value, what: &str) -> CliResult<&'a Vec<Value>> {
    v.as_array().ok_or_else(|| CliError::Validation(format!("{what} must be an array")))
}

pub fn as_f64(v: &Value, what: &str) -> CliResult<f64> {
    v.as_f64().ok_or_else(|| CliError::Validation(format!("{what} must be a number")))
}

pub fn as_u64(v: &Value, what: &str) -> CliResult<u64> {
    v.as_u64().ok_or_else(|| CliError::Validation(format!("{what} must be a nonnegative integer")))
}

pub fn as_usize(v: &Value, what: &str) -> CliResult<usize> {
    Ok(as_u64(v, what)? as usize)
}

pub fn as_str<'a>(v: &'a Value, what: &str) -> CliResult<&'a str> {
    v.as_str().ok_or_else(|| CliError::Validation(format!("{what} must be a string")))
}

pub fn as_bool(v: &Value, what: &str) -> CliResult<bool> {
    v.as_bool().ok_or_else(|| CliError::Validation(format!("{what} must be a boolean")))
}

pub fn field<'a>(m: &'a Map<String, Value>, key: &str, what: &str) -> CliResult<&'a Value> {
    m.get(key).ok_or_else(|| CliError::Validation(format!("{what} is missing field \"{key}\"")))
}

/// Fails on any key outside `allowed`; typos never pass silently.
pub fn reject_unknown(m: &Map<String, Value>, allowed: &[&str], what: &str) -> CliResult<()> {
    for key in m.keys() {
        if !allowed.contains(&key.as_str()) {
            return Err(CliError::Validation(format!("{what} has unknown field \"{key}\"")));
        }
    }
    Ok(())
}

/// Checks the `version` field of an artifact is the one this build writes.
pub fn check_version(m: &Map<String, Value>, what: &str) -> CliResult<()> {
    let v = as_u64(field(m, "version", what)?, "version")?;
    if v != 1 {
        return Err(CliError::Validation(format!("{what} has unsupported version {v}")));
    }
    Ok(())
}

pub fn fixed_f64s(v: &Value, n: usize, what: &str) -> CliResult<Vec<f64>> {
    let xs = as_array(v, what)?;
    if xs.len() != n {
        return Err(CliError::Validation(format!("{what} must have {n} entries, got {}", xs.len())));
    }
    xs.iter().map(|x| as_f64(x, what)).collect()
}

pub fn point3(v: &Value, what: &str) -> CliResult<[f64; 3]> {
    let xs = fixed_f64s(v, 3, what)?;
    Ok([xs[0], xs[1], xs[2]])
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_roundtrip_exactly() {
        for v in [0.0, -0.0, 1.5, core::f64::consts::PI, 1e-300, -3.337e77, f64::MIN_POSITIVE] {
            let text = fmt_f64(v);
            let back: f64 = text.parse().unwrap();
            assert_eq!(back.to_bits(), v.to_bits(), "{text}");
        }
    }

    #[test]
    fn canonical_sorts_keys_and_formats_numbers() {
        let v = json!({"b": 2, "a": {"z": true, "y": [1, 2.5]}, "c": "x\"y"});
        assert_eq!(
            canonical(&v),
            "{\"a\":{\"y\":[1,2.5000000000000000e0],\"z\":true},\"b\":2,\"c\":\"x\\\"y\"}"
        );
    }

    #[test]
    fn canonical_is_insertion_order_independent() {
        let a = json!({"p": 1, "q": [3.25], "r": "s"});
        let b = json!({"r": "s", "q": [3.25], "p": 1});
        assert_eq!(canonical(&a), canonical(&b));
    }

    #[test]
    fn fnv_matches_reference_vectors() {
        // Published FNV-1a test vectors.
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let v = json!({"fps": 25.0, "tps": 1.0});
        let m = v.as_object().unwrap();
        assert!(reject_unknown(m, &["fps"], "test").is_err());
        assert!(reject_unknown(m, &["fps", "tps"], "test").is_ok());
    }
}
