//! Machine-readable reports: JSON lines (one record per sample or step plus
//! a final summary record) or CSV over the union of record keys. Payloads
//! contain no timestamps, so a fixed seed reproduces them byte for byte.

use std::io::Write;
use std::path::PathBuf;

use serde_json::{Map, Value};

use crate::spec::Format;

pub type Record = Map<String, Value>;

pub fn record(kind: &str) -> Record {
    let mut r = Record::new();
    r.insert("kind".into(), Value::String(kind.into()));
    r
}

pub fn push_f64(r: &mut Record, key: &str, v: f64) {
    r.insert(
        key.into(),
        serde_json::Number::from_f64(v)
            .map(Value::Number)
            .unwrap_or(Value::Null),
    );
}

pub fn push_usize(r: &mut Record, key: &str, v: usize) {
    r.insert(key.into(), Value::Number(v.into()));
}

pub fn push_bool(r: &mut Record, key: &str, v: bool) {
    r.insert(key.into(), Value::Bool(v));
}

pub fn push_str(r: &mut Record, key: &str, v: &str) {
    r.insert(key.into(), Value::String(v.into()));
}

pub fn write_report(
    records: &[Record],
    out: &Option<PathBuf>,
    format: Format,
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    match format {
        Format::Json => {
            for r in records {
                serde_json::to_writer(&mut buf, r)?;
                buf.push(b'\n');
            }
        }
        Format::Csv => {
            let mut keys: Vec<String> = Vec::new();
            for r in records {
                for k in r.keys() {
                    if !keys.iter().any(|existing| existing == k) {
                        keys.push(k.clone());
                    }
                }
            }
            writeln!(buf, "{}", keys.join(","))?;
            for r in records {
                let row: Vec<String> = keys
                    .iter()
                    .map(|k| match r.get(k) {
                        None | Some(Value::Null) => String::new(),
                        Some(Value::String(s)) => s.clone(),
                        Some(v) => v.to_string(),
                    })
                    .collect();
                writeln!(buf, "{}", row.join(","))?;
            }
        }
    }
    match out {
        Some(path) => std::fs::write(path, buf),
        None => std::io::stdout().write_all(&buf),
    }
}
