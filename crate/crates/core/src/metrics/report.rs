use std::fmt::Write;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub label: String,
    pub values: Vec<Option<f64>>,
}

/// Methods as rows, metrics as columns; rendered as JSON or as an aligned
/// text table with values in percent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportTable {
    pub title: String,
    pub columns: Vec<String>,
    pub rows: Vec<ReportRow>,
}

impl ReportTable {
    pub fn new(title: impl Into<String>, columns: Vec<String>) -> Self {
        ReportTable {
            title: title.into(),
            columns,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, label: impl Into<String>, values: Vec<Option<f64>>) {
        self.rows.push(ReportRow {
            label: label.into(),
            values,
        });
    }

    pub fn to_text(&self) -> String {
        let cell = |v: &Option<f64>| v.map_or("-".to_string(), |x| format!("{:.2}", 100.0 * x));
        let label_w = self.rows.iter().map(|r| r.label.len()).chain([6]).max().unwrap_or(6);
        let widths: Vec<usize> = self
            .columns
            .iter()
            .enumerate()
            .map(|(i, c)| {
                self.rows
                    .iter()
                    .filter_map(|r| r.values.get(i).map(|v| cell(v).len()))
                    .chain([c.len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut out = String::new();
        let _ = writeln!(out, "{}", self.title);
        let _ = write!(out, "{:<label_w$}", "method");
        for (c, w) in self.columns.iter().zip(&widths) {
            let _ = write!(out, "  {c:>w$}");
        }
        out.push('\n');
        let rule = label_w + widths.iter().map(|w| w + 2).sum::<usize>();
        out.push_str(&"-".repeat(rule));
        out.push('\n');
        for row in &self.rows {
            let _ = write!(out, "{:<label_w$}", row.label);
            for (i, w) in widths.iter().enumerate() {
                let text = row.values.get(i).map_or(String::new(), cell);
                let _ = write!(out, "  {text:>w$}");
            }
            out.push('\n');
        }
        out
    }
}
