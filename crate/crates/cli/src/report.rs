use std::fmt::Write as _;

use clap::ValueEnum;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReportMode {
    /// `key=value` lines.
    Kv,
    /// Aligned columns; fractions shown as percentages.
    Table,
}

impl ReportMode {
    pub fn from_name(s: &str) -> Option<Self> {
        match s {
            "kv" => Some(ReportMode::Kv),
            "table" => Some(ReportMode::Table),
            _ => None,
        }
    }
}

struct Row {
    key: String,
    kv: String,
    table: String,
}

/// Ordered report rows, each with a machine value and a display value.
#[derive(Default)]
pub struct Report {
    title: String,
    rows: Vec<Row>,
}

impl Report {
    pub fn new(title: &str) -> Self {
        Self {
            title: title.to_string(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, key: &str, kv: impl Into<String>, table: impl Into<String>) {
        self.rows.push(Row {
            key: key.to_string(),
            kv: kv.into(),
            table: table.into(),
        });
    }

    /// Same text in both renderings.
    pub fn text(&mut self, key: &str, value: impl Into<String>) {
        let v = value.into();
        self.push(key, v.clone(), v);
    }

    /// Shortest round-trip representation.
    pub fn num(&mut self, key: &str, v: f64) {
        self.text(key, format!("{v}"));
    }

    pub fn fixed(&mut self, key: &str, v: f64, digits: usize) {
        self.text(key, format!("{v:.digits$}"));
    }

    /// A fraction; the table shows it as a percentage.
    pub fn fraction(&mut self, key: &str, v: f64) {
        self.push(key, format!("{v}"), format!("{:.2}%", 100.0 * v));
    }

    pub fn render(&self, mode: ReportMode) -> String {
        let mut out = String::new();
        match mode {
            ReportMode::Kv => {
                for r in &self.rows {
                    let _ = writeln!(out, "{}={}", r.key, r.kv);
                }
            }
            ReportMode::Table => {
                let width = self.rows.iter().map(|r| r.key.len()).max().unwrap_or(0).max(6);
                let _ = writeln!(out, "{}", self.title);
                let _ = writeln!(out, "{:-<1$}", "", width + 14);
                for r in &self.rows {
                    let _ = writeln!(out, "{:<width$}  {:>12}", r.key, r.table);
                }
            }
        }
        out
    }
}
