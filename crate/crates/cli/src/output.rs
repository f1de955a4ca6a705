//! Rendering of command results as a table, CSV, or one JSON document.

use std::io::{self, Write};

use comfy_table::{presets::UTF8_FULL_CONDENSED, Table};
use serde_json::{json, Value};

use crate::backend::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Format {
    Table,
    Json,
    Csv,
}

/// Ordered cells of one table row.
pub type Row = Vec<(String, Value)>;

/// A command result: the full document for JSON output and a flat row view
/// for tables and CSV.
pub struct Output {
    pub doc: Value,
    pub rows: Vec<Row>,
}

impl Output {
    pub fn new(doc: Value, rows: Vec<Row>) -> Output {
        Output { doc, rows }
    }

    /// Rows taken straight from the document: one per array element, or a
    /// field/value listing for an object.
    pub fn plain(doc: Value) -> Output {
        let rows = match &doc {
            Value::Array(items) => items.iter().map(row_of).collect(),
            Value::Object(fields) => {
                fields.iter().map(|(k, v)| row([("field", Value::String(k.clone())), ("value", v.clone())])).collect()
            }
            Value::Null => Vec::new(),
            other => vec![row([("value", other.clone())])],
        };
        Output { doc, rows }
    }
}

pub fn row<const N: usize>(cells: [(&str, Value); N]) -> Row {
    cells.into_iter().map(|(k, v)| (k.to_owned(), v)).collect()
}

/// Every field of an object, in the document's order.
pub fn row_of(v: &Value) -> Row {
    match v {
        Value::Object(m) => m.iter().map(|(k, v)| (k.clone(), v.clone())).collect(),
        other => row([("value", other.clone())]),
    }
}

fn get<'a>(row: &'a Row, col: &str) -> Option<&'a Value> {
    row.iter().find(|(k, _)| k == col).map(|(_, v)| v)
}

fn cell(v: &Value) -> String {
    match v {
        Value::Null => String::new(),
        Value::String(s) => s.clone(),
        Value::Array(items) if items.iter().all(|i| !i.is_object() && !i.is_array()) => {
            items.iter().map(cell).collect::<Vec<_>>().join(",")
        }
        other => other.to_string(),
    }
}

fn headers(rows: &[Row]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for row in rows {
        for (k, _) in row {
            if !out.contains(k) {
                out.push(k.clone());
            }
        }
    }
    out
}

pub fn print(out: &Output, format: Format) -> Result<(), CliError> {
    let io_err = |e: io::Error| CliError::io(e.to_string());
    let stdout = io::stdout();
    let mut w = stdout.lock();
    match format {
        Format::Json => {
            let text = serde_json::to_string_pretty(&out.doc).map_err(|e| CliError::io(e.to_string()))?;
            writeln!(w, "{text}").map_err(io_err)
        }
        Format::Csv => {
            let cols = headers(&out.rows);
            let mut csv = csv::Writer::from_writer(w);
            if !cols.is_empty() {
                csv.write_record(&cols).map_err(|e| CliError::io(e.to_string()))?;
            }
            for row in &out.rows {
                let rec: Vec<String> = cols.iter().map(|c| get(row, c).map(cell).unwrap_or_default()).collect();
                csv.write_record(&rec).map_err(|e| CliError::io(e.to_string()))?;
            }
            csv.flush().map_err(io_err)
        }
        Format::Table => {
            if out.rows.is_empty() {
                return writeln!(w, "(none)").map_err(io_err);
            }
            let cols = headers(&out.rows);
            let mut table = Table::new();
            table.load_preset(UTF8_FULL_CONDENSED).set_header(&cols);
            for row in &out.rows {
                table.add_row(cols.iter().map(|c| get(row, c).map(cell).unwrap_or_default()));
            }
            writeln!(w, "{table}").map_err(io_err)
        }
    }
}

/// Errors go to stdout as the single document in JSON mode, else to stderr.
pub fn print_error(e: &CliError, format: Format) {
    if format == Format::Json {
        let doc = json!({"error": {"code": e.code, "message": e.message, "details": e.details}});
        println!("{}", serde_json::to_string_pretty(&doc).unwrap_or_default());
        return;
    }
    eprintln!("error [{}]: {}", e.code, e.message);
    if let Value::Array(items) = &e.details {
        for item in items {
            eprintln!("  - {}", cell(item));
        }
    } else if !e.details.is_null() {
        eprintln!("  {}", e.details);
    }
}
