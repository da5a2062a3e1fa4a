//! Result emission: CSV tables and JSON documents, both carrying the
//! config echo and seed so any run is reproducible from its output.

use std::io::Write;
use std::path::Path;

use serde_json::{json, Value};

/// Formats a float with 17 significant digits (lossless round-trip).
pub fn num(v: f64) -> String {
    format!("{v:.16e}")
}

pub struct CsvDoc {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub comments: Vec<String>,
}

impl CsvDoc {
    pub fn new(header: &[&str]) -> CsvDoc {
        CsvDoc {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
            comments: Vec::new(),
        }
    }

    pub fn comment(&mut self, line: impl AsRef<str>) {
        for l in line.as_ref().lines() {
            self.comments.push(format!("# {l}"));
        }
    }

    pub fn row(&mut self, fields: Vec<String>) {
        assert_eq!(fields.len(), self.header.len());
        self.rows.push(fields);
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            out.push_str(c);
            out.push('\n');
        }
        out.push_str(&self.header.join(","));
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        out
    }
}

/// Wraps a JSON payload with the reproducibility envelope.
pub fn envelope(command: &str, seed: Option<u64>, config_echo: &str, payload: Value) -> Value {
    json!({
        "command": command,
        "seed": seed,
        "config_echo": config_echo,
        "result": payload,
    })
}

pub fn write_text(path: Option<&Path>, text: &str) -> std::io::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text),
        None => {
            let mut stdout = std::io::stdout().lock();
            stdout.write_all(text.as_bytes())
        }
    }
}

impl CsvDoc {
    /// JSON rendering of the same table: `{header, rows, comments}`.
    pub fn render_json(&self, command: &str) -> Value {
        json!({
            "command": command,
            "comments": self.comments,
            "header": self.header,
            "rows": self.rows,
        })
    }
}

pub fn matrix_json(m: &[Vec<f64>]) -> Value {
    Value::Array(
        m.iter()
            .map(|row| Value::Array(row.iter().map(|&v| json!(v)).collect()))
            .collect(),
    )
}
