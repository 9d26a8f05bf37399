use std::io::Write;

use clap::ValueEnum;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

/// A single record or a table of flat rows.
#[derive(Debug, Clone, PartialEq)]
pub enum Report {
    One(Value),
    Rows(Vec<Value>),
}

impl Report {
    pub fn one(v: impl Serialize) -> Result<Self> {
        Ok(Report::One(serde_json::to_value(v)?))
    }

    pub fn rows<T: Serialize>(rows: impl IntoIterator<Item = T>) -> Result<Self> {
        Ok(Report::Rows(
            rows.into_iter().map(serde_json::to_value).collect::<Result<_, _>>()?,
        ))
    }

    pub fn render(&self, format: Format) -> Result<Vec<u8>> {
        match format {
            Format::Json => {
                let mut out = match self {
                    Report::One(v) => serde_json::to_vec_pretty(v)?,
                    Report::Rows(r) => serde_json::to_vec_pretty(r)?,
                };
                out.push(b'\n');
                Ok(out)
            }
            Format::Csv => {
                let rows = match self {
                    Report::One(v) => std::slice::from_ref(v),
                    Report::Rows(r) => r.as_slice(),
                };
                to_csv(rows)
            }
        }
    }

    pub fn write(&self, format: Format, mut sink: impl Write) -> Result<()> {
        sink.write_all(&self.render(format)?)?;
        Ok(())
    }
}

/// Nested objects become dotted columns, arrays become `;`-joined cells.
fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    match v {
        Value::Object(m) => {
            for (k, v) in m {
                let key = if prefix.is_empty() {
                    k.clone()
                } else {
                    format!("{prefix}.{k}")
                };
                flatten(&key, v, out);
            }
        }
        _ => out.push((prefix.to_string(), cell(v))),
    }
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(a) => a.iter().map(cell).collect::<Vec<_>>().join(";"),
        Value::Object(_) => serde_json::to_string(v).unwrap_or_default(),
        other => other.to_string(),
    }
}

fn to_csv(rows: &[Value]) -> Result<Vec<u8>> {
    let flat: Vec<Vec<(String, String)>> = rows
        .iter()
        .map(|r| {
            let mut cells = Vec::new();
            flatten("", r, &mut cells);
            cells
        })
        .collect();
    let mut w = csv::Writer::from_writer(Vec::new());
    if let Some(first) = flat.first() {
        let header: Vec<&str> = first.iter().map(|(k, _)| k.as_str()).collect();
        w.write_record(&header)?;
        for row in &flat {
            if row.len() != header.len() || row.iter().zip(&header).any(|((k, _), h)| k != h) {
                return Err(invalid("rows do not share one set of columns; use --format json"));
            }
            w.write_record(row.iter().map(|(_, v)| v))?;
        }
    }
    w.into_inner()
        .map_err(|e| crate::error::CliError::Runtime(e.to_string()))
}

/// Parses `"<rows>x<cols>"`.
pub fn parse_size(s: &str) -> Result<(usize, usize)> {
    let bad = || invalid(format!("size {s:?} must look like 1024x10"));
    let (a, b) = s.split_once('x').ok_or_else(bad)?;
    Ok((
        a.trim().parse().map_err(|_| bad())?,
        b.trim().parse().map_err(|_| bad())?,
    ))
}
