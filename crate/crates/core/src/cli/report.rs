//! Tabular report emission (CSV or JSON).

use std::path::Path;

use crate::ratio::Ratio;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Cell {
    Text(String),
    Int(u64),
    /// Four decimals; undefined ratios become an empty cell (CSV) or null (JSON).
    Fraction(Ratio),
    Empty,
}

impl Cell {
    pub fn text(s: impl Into<String>) -> Self {
        Cell::Text(s.into())
    }

    fn csv_value(&self) -> String {
        match self {
            Cell::Text(s) => s.clone(),
            Cell::Int(n) => n.to_string(),
            Cell::Fraction(r) => r.format_fixed(4),
            Cell::Empty => String::new(),
        }
    }

    fn json_value(&self) -> String {
        match self {
            Cell::Text(s) => serde_json::to_string(s).expect("string serializes"),
            Cell::Int(n) => n.to_string(),
            Cell::Fraction(r) if !r.is_undefined() => r.format_fixed(4),
            Cell::Fraction(_) | Cell::Empty => "null".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Table {
    pub name: &'static str,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, clap::ValueEnum, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

impl OutputFormat {
    pub fn extension(self) -> &'static str {
        match self {
            OutputFormat::Csv => "csv",
            OutputFormat::Json => "json",
        }
    }
}

impl Table {
    pub fn new(name: &'static str, columns: &[&'static str]) -> Self {
        Table { name, columns: columns.to_vec(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<Cell>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> String {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(&self.columns).expect("in-memory write");
        for row in &self.rows {
            writer.write_record(row.iter().map(Cell::csv_value)).expect("in-memory write");
        }
        String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("csv is utf-8")
    }

    /// An array of objects, keys in column order.
    pub fn to_json(&self) -> String {
        let mut out = String::from("[");
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(if i == 0 { "\n  {" } else { ",\n  {" });
            for (j, (col, cell)) in self.columns.iter().zip(row).enumerate() {
                if j > 0 {
                    out.push_str(", ");
                }
                out.push_str(&format!("\"{col}\": {}", cell.json_value()));
            }
            out.push('}');
        }
        out.push_str(if self.rows.is_empty() { "]\n" } else { "\n]\n" });
        out
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Csv => self.to_csv(),
            OutputFormat::Json => self.to_json(),
        }
    }

    /// Writes `<dir>/<name>.<ext>` and returns the file name.
    pub fn write(&self, dir: &Path, format: OutputFormat) -> std::io::Result<String> {
        let file = format!("{}.{}", self.name, format.extension());
        std::fs::write(dir.join(&file), self.render(format))?;
        Ok(file)
    }
}
