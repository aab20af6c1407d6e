//! Tabular reports written as CSV or JSON.

use serde::Serialize;
use serde_json::{json, Map, Value};
use std::fs;
use std::io::{self, Write};
use std::path::Path;

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(i128),
    Float(f64),
    Text(String),
    Bool(bool),
}

impl From<u64> for Cell {
    fn from(v: u64) -> Self {
        Cell::Int(v as i128)
    }
}
impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i128)
    }
}
impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}
impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Bool(v)
    }
}
impl From<String> for Cell {
    fn from(v: String) -> Self {
        Cell::Text(v)
    }
}
impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}
impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Text(String::new()), Into::into)
    }
}

impl Cell {
    fn csv(&self) -> String {
        match self {
            Cell::Int(i) => i.to_string(),
            Cell::Float(x) => sig6(*x),
            Cell::Text(s) => s.clone(),
            Cell::Bool(b) => b.to_string(),
        }
    }

    fn json(&self) -> Value {
        match self {
            Cell::Int(i) => json!(i),
            Cell::Float(x) if x.is_finite() => json!(x),
            Cell::Float(x) => json!(x.to_string()),
            Cell::Text(s) => json!(s),
            Cell::Bool(b) => json!(b),
        }
    }
}

/// Six significant digits; whole numbers below 1e15 print plainly.
pub fn sig6(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    if x == 0.0 {
        return "0".into();
    }
    if x.fract() == 0.0 && x.abs() < 1e15 {
        return format!("{}", x as i64);
    }
    let e = x.abs().log10().floor() as i32;
    if (-5..15).contains(&e) {
        let prec = (5 - e).max(0) as usize;
        let s = format!("{x:.prec$}");
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    } else {
        format!("{x:.5e}")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub columns: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    pub fn new(name: &str, columns: &[&str]) -> Self {
        Table {
            name: name.into(),
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn row(&mut self, cells: Vec<Cell>) {
        debug_assert_eq!(cells.len(), self.columns.len());
        self.rows.push(cells);
    }
}

#[macro_export]
macro_rules! row {
    ($($x:expr),* $(,)?) => { vec![$($crate::report::Cell::from($x)),*] };
}

/// A command's output: its input config, tables, and optional extra files.
#[derive(Debug, Clone)]
pub struct Report {
    pub command: String,
    pub config: Value,
    pub tables: Vec<Table>,
    /// Full-precision structured detail, JSON only.
    pub detail: Option<Value>,
    /// Extra files written verbatim under `--out`.
    pub attachments: Vec<(String, Vec<u8>)>,
}

impl Report {
    pub fn new(command: &str, config: impl Serialize) -> Self {
        Report {
            command: command.into(),
            config: serde_json::to_value(config).expect("config serializes"),
            tables: Vec::new(),
            detail: None,
            attachments: Vec::new(),
        }
    }

    fn config_line(&self) -> String {
        format!("# config: {}", serde_json::to_string(&self.config).expect("json"))
    }

    fn table_csv(&self, t: &Table) -> io::Result<Vec<u8>> {
        let mut buf = Vec::new();
        writeln!(buf, "{}", self.config_line())?;
        {
            let mut w = csv::Writer::from_writer(&mut buf);
            w.write_record(&t.columns)?;
            for r in &t.rows {
                w.write_record(r.iter().map(Cell::csv))?;
            }
            w.flush()?;
        }
        Ok(buf)
    }

    pub fn to_json(&self) -> Value {
        let mut tables = Map::new();
        for t in &self.tables {
            let rows: Vec<Value> = t
                .rows
                .iter()
                .map(|r| Value::Object(t.columns.iter().cloned().zip(r.iter().map(Cell::json)).collect()))
                .collect();
            tables.insert(t.name.clone(), Value::Array(rows));
        }
        let mut out = Map::new();
        out.insert("command".into(), json!(self.command));
        out.insert("config".into(), self.config.clone());
        out.insert("tables".into(), Value::Object(tables));
        if let Some(d) = &self.detail {
            out.insert("detail".into(), d.clone());
        }
        Value::Object(out)
    }

    /// Writes into `dir` when given, otherwise to stdout.
    pub fn emit(&self, format: Format, dir: Option<&Path>) -> io::Result<()> {
        match dir {
            Some(dir) => {
                fs::create_dir_all(dir)?;
                match format {
                    Format::Csv => {
                        for t in &self.tables {
                            fs::write(dir.join(format!("{}_{}.csv", self.command, t.name)), self.table_csv(t)?)?;
                        }
                    }
                    Format::Json => {
                        let mut s = serde_json::to_string_pretty(&self.to_json())?;
                        s.push('\n');
                        fs::write(dir.join(format!("{}.json", self.command)), s)?;
                    }
                }
                for (name, bytes) in &self.attachments {
                    fs::write(dir.join(name), bytes)?;
                }
            }
            None => {
                let mut out = io::stdout().lock();
                match format {
                    Format::Csv => {
                        for (i, t) in self.tables.iter().enumerate() {
                            if i > 0 {
                                writeln!(out)?;
                            }
                            writeln!(out, "# table: {}", t.name)?;
                            out.write_all(&self.table_csv(t)?)?;
                        }
                    }
                    Format::Json => {
                        serde_json::to_writer_pretty(&mut out, &self.to_json())?;
                        writeln!(out)?;
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_significant_digits() {
        assert_eq!(sig6(800000001.0), "800000001");
        assert_eq!(sig6(1.0 / 6.0), "0.166667");
        assert_eq!(sig6(0.00025), "0.00025");
        assert_eq!(sig6(2.0 / 3.0), "0.666667");
        assert_eq!(sig6(123456.789), "123457");
        assert_eq!(sig6(1.5e20), "1.50000e20");
        assert_eq!(sig6(-0.5), "-0.5");
        assert_eq!(sig6(16e12), "16000000000000");
    }

    #[test]
    fn csv_carries_config() {
        let mut r = Report::new("x", json!({"seed": 3}));
        let mut t = Table::new("t", &["a", "b"]);
        t.row(row![1u64, 0.5]);
        r.tables.push(t);
        let s = String::from_utf8(r.table_csv(&r.tables[0]).unwrap()).unwrap();
        assert_eq!(s, "# config: {\"seed\":3}\na,b\n1,0.5\n");
    }
}
