//! Result bundles: JSON with every float at 17 significant digits, CSV
//! tables, LF line endings.

use serde::Serialize;
use serde_json::Value;
use std::fmt::Write as _;
use std::io;
use std::path::Path;

/// Pretty JSON with two-space indentation, keys in sorted order and floats
/// written as `d.dddddddddddddddde±x`. Non-finite floats become `null`.
pub fn to_json<T: Serialize>(value: &T) -> serde_json::Result<String> {
    let v = serde_json::to_value(value)?;
    let mut out = String::new();
    write_value(&mut out, &v, 0);
    out.push('\n');
    Ok(out)
}

fn indent(out: &mut String, level: usize) {
    for _ in 0..level {
        out.push_str("  ");
    }
}

fn write_value(out: &mut String, v: &Value, level: usize) {
    match v {
        Value::Null => out.push_str("null"),
        Value::Bool(b) => out.push_str(if *b { "true" } else { "false" }),
        Value::Number(n) => {
            if n.is_f64() {
                let _ = write!(out, "{}", format_float(n.as_f64().unwrap_or(f64::NAN)));
            } else {
                let _ = write!(out, "{n}");
            }
        }
        Value::String(s) => out.push_str(&Value::String(s.clone()).to_string()),
        Value::Array(items) => {
            if items.is_empty() {
                out.push_str("[]");
                return;
            }
            out.push_str("[\n");
            for (i, item) in items.iter().enumerate() {
                indent(out, level + 1);
                write_value(out, item, level + 1);
                out.push_str(if i + 1 < items.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push(']');
        }
        Value::Object(map) => {
            if map.is_empty() {
                out.push_str("{}");
                return;
            }
            out.push_str("{\n");
            let mut keys: Vec<&String> = map.keys().collect();
            keys.sort();
            for (i, k) in keys.iter().enumerate() {
                indent(out, level + 1);
                out.push_str(&Value::String((*k).clone()).to_string());
                out.push_str(": ");
                write_value(out, &map[*k], level + 1);
                out.push_str(if i + 1 < keys.len() { ",\n" } else { "\n" });
            }
            indent(out, level);
            out.push('}');
        }
    }
}

pub fn format_float(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        "null".into()
    }
}

/// A CSV table held in memory until the bundle is written.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub name: String,
    pub bytes: Vec<u8>,
}

impl Table {
    pub fn from_writer(
        name: &str,
        fill: impl FnOnce(&mut Vec<u8>) -> io::Result<()>,
    ) -> io::Result<Self> {
        let mut bytes = Vec::new();
        fill(&mut bytes)?;
        Ok(Self {
            name: name.to_string(),
            bytes,
        })
    }

    /// Header plus rows of floats.
    pub fn numeric(name: &str, header: &[&str], rows: impl IntoIterator<Item = Vec<f64>>) -> Self {
        let mut s = header.join(",");
        s.push('\n');
        for row in rows {
            let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        Self {
            name: name.to_string(),
            bytes: s.into_bytes(),
        }
    }
}

pub fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> io::Result<()> {
    std::fs::write(dir.join(name), bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn floats_have_seventeen_digits() {
        let s = to_json(&json!({"b": 0.1, "a": [1, 2.0, -0.25], "c": {"s": "x\"y"}, "d": []}))
            .unwrap();
        let expect = "{\n  \"a\": [\n    1,\n    2.0000000000000000e0,\n    -2.5000000000000000e-1\n  ],\n  \"b\": 1.0000000000000001e-1,\n  \"c\": {\n    \"s\": \"x\\\"y\"\n  },\n  \"d\": []\n}\n";
        assert_eq!(s, expect);
        let back: Value = serde_json::from_str(&s).unwrap();
        assert_eq!(back["b"].as_f64(), Some(0.1));
    }

    #[test]
    fn round_trip_is_exact() {
        for x in [
            std::f64::consts::PI,
            1e-310,
            f64::MAX,
            -0.0,
            123_456_789.123_456_79,
        ] {
            let s = format_float(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn numeric_tables() {
        let t = Table::numeric("t.csv", &["x", "y"], vec![vec![1.0, 0.5]]);
        assert_eq!(
            String::from_utf8(t.bytes).unwrap(),
            "x,y\n1.0000000000000000e0,5.0000000000000000e-1\n"
        );
    }
}
