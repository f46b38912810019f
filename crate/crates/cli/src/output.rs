//! Report rendering.

use clap::ValueEnum;
use serde::Serialize;
use serde_json::{Map, Value};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Format {
    Jsonl,
    Csv,
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                let key = if prefix.is_empty() { k.clone() } else { format!("{prefix}.{k}") };
                flatten(&key, x, out);
            }
        }
        Value::String(s) => out.push((prefix.to_owned(), s.clone())),
        Value::Null => out.push((prefix.to_owned(), String::new())),
        other => out.push((prefix.to_owned(), other.to_string())),
    }
}

/// One JSON object per line, or a CSV table whose columns are the union of
/// the flattened keys in order of first appearance.
pub fn render(lines: &[Value], format: Format) -> anyhow::Result<String> {
    match format {
        Format::Jsonl => {
            let mut s = String::new();
            for l in lines {
                s.push_str(&serde_json::to_string(l)?);
                s.push('\n');
            }
            Ok(s)
        }
        Format::Csv => {
            let rows: Vec<Vec<(String, String)>> = lines
                .iter()
                .map(|l| {
                    let mut cells = Vec::new();
                    flatten("", l, &mut cells);
                    cells
                })
                .collect();
            let mut header: Vec<String> = Vec::new();
            for row in &rows {
                for (k, _) in row {
                    if !header.contains(k) {
                        header.push(k.clone());
                    }
                }
            }
            let mut w = csv::Writer::from_writer(Vec::new());
            w.write_record(&header)?;
            for row in rows {
                let map: Map<String, Value> = row.into_iter().map(|(k, v)| (k, Value::String(v))).collect();
                w.write_record(header.iter().map(|h| map.get(h).and_then(Value::as_str).unwrap_or("")))?;
            }
            Ok(String::from_utf8(w.into_inner()?)?)
        }
    }
}
