//! Accuracy matrix, forgetting, and the line-delimited metrics format.
//!
//! Every record is a single-line JSON object whose first key is `record`.
//! Floats are printed in scientific notation with 17 significant digits so
//! identical runs produce identical bytes.

use std::fmt::Write as _;

use serde_json::Value;

use crate::error::{Error, Result};

/// `A[i][j]`: accuracy on task `j` after training through task `i`, for `j <= i`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsMatrix {
    pub rows: Vec<Vec<f64>>,
}

impl MetricsMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push_row(&mut self, row: Vec<f64>) -> Result<()> {
        if row.len() != self.rows.len() + 1 {
            return Err(Error::shape("metrics row", self.rows.len() + 1, row.len()));
        }
        if row.iter().any(|a| !(0.0..=1.0).contains(a)) {
            return Err(Error::Argument("accuracy outside [0, 1]".into()));
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn tasks(&self) -> usize {
        self.rows.len()
    }

    /// Mean of the last row.
    pub fn final_average_accuracy(&self) -> f64 {
        match self.rows.last() {
            Some(r) if !r.is_empty() => r.iter().sum::<f64>() / r.len() as f64,
            _ => 0.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Forgetting {
    pub per_task: Vec<f64>,
    pub mean: f64,
}

/// `F_j = max_{i in [j, T-1]} A[i][j] - A[T][j]` for every `j < T`.
pub fn forgetting(a: &MetricsMatrix) -> Forgetting {
    let t = match a.rows.len() {
        0 | 1 => {
            return Forgetting {
                per_task: Vec::new(),
                mean: 0.0,
            }
        }
        n => n - 1,
    };
    let per_task: Vec<f64> = (0..t)
        .map(|j| {
            let best = (j..t).map(|i| a.rows[i][j]).fold(f64::NEG_INFINITY, f64::max);
            best - a.rows[t][j]
        })
        .collect();
    let mean = per_task.iter().sum::<f64>() / per_task.len() as f64;
    Forgetting { per_task, mean }
}

/// Float in the canonical metrics representation.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        "null".to_string()
    }
}

/// Builder for one metrics line.
#[derive(Debug, Clone)]
pub struct Record {
    buf: String,
}

impl Record {
    pub fn new(kind: &str) -> Self {
        let mut r = Self { buf: String::from("{") };
        r.key("record");
        r.buf.push_str(&quote(kind));
        r
    }

    fn key(&mut self, k: &str) {
        if self.buf.len() > 1 {
            self.buf.push(',');
        }
        let _ = write!(self.buf, "{}:", quote(k));
    }

    pub fn str(mut self, k: &str, v: &str) -> Self {
        self.key(k);
        self.buf.push_str(&quote(v));
        self
    }

    pub fn int(mut self, k: &str, v: u64) -> Self {
        self.key(k);
        let _ = write!(self.buf, "{v}");
        self
    }

    pub fn bool(mut self, k: &str, v: bool) -> Self {
        self.key(k);
        self.buf.push_str(if v { "true" } else { "false" });
        self
    }

    pub fn float(mut self, k: &str, v: f64) -> Self {
        self.key(k);
        self.buf.push_str(&fmt_f64(v));
        self
    }

    pub fn opt_float(self, k: &str, v: Option<f64>) -> Self {
        match v {
            Some(x) => self.float(k, x),
            None => {
                let mut s = self;
                s.key(k);
                s.buf.push_str("null");
                s
            }
        }
    }

    pub fn floats(mut self, k: &str, v: &[f64]) -> Self {
        self.key(k);
        self.buf.push('[');
        for (i, x) in v.iter().enumerate() {
            if i > 0 {
                self.buf.push(',');
            }
            self.buf.push_str(&fmt_f64(*x));
        }
        self.buf.push(']');
        self
    }

    pub fn finish(mut self) -> String {
        self.buf.push('}');
        self.buf
    }
}

fn quote(s: &str) -> String {
    serde_json::to_string(s).expect("string serialisation is infallible")
}

/// Parses one metrics line back into an ordered map.
pub fn parse_record(line: &str) -> Result<serde_json::Map<String, Value>> {
    match serde_json::from_str::<Value>(line) {
        Ok(Value::Object(m)) => Ok(m),
        Ok(_) => Err(Error::Format("metrics line is not an object".into())),
        Err(e) => Err(Error::Format(format!("bad metrics line: {e}"))),
    }
}

fn csv_cell(v: &Value) -> String {
    let raw = match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(items) => items.iter().map(csv_cell).collect::<Vec<_>>().join(";"),
        other => other.to_string(),
    };
    if raw.contains([',', '"', '\n']) {
        format!("\"{}\"", raw.replace('"', "\"\""))
    } else {
        raw
    }
}

/// Kind name, column order, and the records of that kind.
type CsvGroup = (String, Vec<String>, Vec<serde_json::Map<String, Value>>);

/// Converts a metrics file to CSV. Records are grouped by kind; each group
/// gets its own header row, prefixed by a `# kind` line when more than one
/// kind is present.
pub fn to_csv(text: &str) -> Result<String> {
    let mut groups: Vec<CsvGroup> = Vec::new();
    for line in text.lines().filter(|l| !l.trim().is_empty()) {
        let rec = parse_record(line)?;
        let kind = rec
            .get("record")
            .and_then(Value::as_str)
            .ok_or_else(|| Error::Format("metrics line lacks a record kind".into()))?
            .to_string();
        let idx = match groups.iter().position(|g| g.0 == kind) {
            Some(i) => i,
            None => {
                groups.push((kind, Vec::new(), Vec::new()));
                groups.len() - 1
            }
        };
        let g = &mut groups[idx];
        for k in rec.keys() {
            if !g.1.contains(k) {
                g.1.push(k.clone());
            }
        }
        g.2.push(rec);
    }
    let mut out = String::new();
    let many = groups.len() > 1;
    for (kind, header, rows) in &groups {
        if many {
            let _ = writeln!(out, "# {kind}");
        }
        let _ = writeln!(out, "{}", header.join(","));
        for r in rows {
            let cells: Vec<String> = header
                .iter()
                .map(|k| r.get(k).map(csv_cell).unwrap_or_default())
                .collect();
            let _ = writeln!(out, "{}", cells.join(","));
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn forgetting_examples() {
        let mut a = MetricsMatrix::new();
        a.push_row(vec![0.9]).unwrap();
        assert_eq!(forgetting(&a).mean, 0.0);
        assert!(forgetting(&a).per_task.is_empty());
        a.push_row(vec![0.5, 0.8]).unwrap();
        let f = forgetting(&a);
        assert!((f.per_task[0] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn improving_tasks_do_not_forget() {
        let mut a = MetricsMatrix::new();
        a.push_row(vec![0.5]).unwrap();
        a.push_row(vec![0.6, 0.5]).unwrap();
        a.push_row(vec![0.7, 0.6, 0.5]).unwrap();
        assert!(forgetting(&a).per_task.iter().all(|f| *f <= 0.0));
    }

    #[test]
    fn row_shape_checked() {
        let mut a = MetricsMatrix::new();
        assert!(a.push_row(vec![0.1, 0.2]).is_err());
        assert!(a.push_row(vec![1.5]).is_err());
    }

    #[test]
    fn record_round_trip() {
        let line = Record::new("eval")
            .int("seed", 3)
            .float("acc", 0.1)
            .floats("row", &[0.5, 1.0])
            .opt_float("loss", None)
            .bool("ok", true)
            .str("name", "a,b")
            .finish();
        assert_eq!(
            line,
            "{\"record\":\"eval\",\"seed\":3,\"acc\":1.0000000000000001e-1,\"row\":[5.0000000000000000e-1,1.0000000000000000e0],\"loss\":null,\"ok\":true,\"name\":\"a,b\"}"
        );
        let back = parse_record(&line).unwrap();
        assert_eq!(back["acc"].as_f64(), Some(0.1));
        let csv = to_csv(&line).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "record,seed,acc,row,loss,ok,name");
        assert!(csv.contains("\"a,b\""));
    }
}
