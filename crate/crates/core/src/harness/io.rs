//! Table ingestion: whitespace tables and CSV, with header sniffing.

use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::data::{DataError, DataTable};
use crate::expr::valid_variable_name;

#[derive(Debug, Error)]
pub enum LoadError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("line {line}: expected {expected} columns, found {got}")]
    Width { line: usize, expected: usize, got: usize },
    #[error("line {line}: '{field}' is not a number")]
    Number { line: usize, field: String },
    #[error("line {line}: {message}")]
    Csv { line: usize, message: String },
    #[error("input column '{0}' is not a valid variable name")]
    Name(String),
    #[error("need at least two columns (inputs and a target)")]
    TooNarrow,
    #[error("no finite rows")]
    Empty,
    #[error(transparent)]
    Data(#[from] DataError),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TableFormat {
    /// `.csv` extension or a comma on the first data line selects CSV.
    #[default]
    Auto,
    Whitespace,
    Csv,
}

impl std::str::FromStr for TableFormat {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "auto" => Ok(TableFormat::Auto),
            "whitespace" | "ws" => Ok(TableFormat::Whitespace),
            "csv" => Ok(TableFormat::Csv),
            _ => Err(format!("unknown table format '{s}'")),
        }
    }
}

#[derive(Clone, Debug)]
pub struct LoadedTable {
    pub table: DataTable,
    /// Name of the last column.
    pub target: String,
    /// Rows skipped for a non-finite entry.
    pub dropped: usize,
}

pub fn load_table(path: &Path, format: TableFormat) -> Result<LoadedTable, LoadError> {
    let text = fs::read_to_string(path).map_err(|source| LoadError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let csv_ext = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let format = match format {
        TableFormat::Auto if csv_ext => TableFormat::Csv,
        f => f,
    };
    parse_table(&text, format)
}

/// `Auto` reads CSV when the first data line has a comma.
pub fn parse_table(text: &str, format: TableFormat) -> Result<LoadedTable, LoadError> {
    let format = match format {
        TableFormat::Auto => {
            let first = text.lines().map(str::trim).find(|l| !l.is_empty() && !l.starts_with('#'));
            if first.is_some_and(|l| l.contains(',')) {
                TableFormat::Csv
            } else {
                TableFormat::Whitespace
            }
        }
        f => f,
    };
    let records = match format {
        TableFormat::Csv => csv_records(text)?,
        _ => text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
            .map(|(i, l)| (i, l.split_whitespace().map(str::to_string).collect()))
            .collect(),
    };
    assemble(records)
}

fn csv_records(text: &str) -> Result<Vec<(usize, Vec<String>)>, LoadError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(text.as_bytes());
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| LoadError::Csv {
            line: e.position().map_or(0, |p| p.line() as usize),
            message: e.to_string(),
        })?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.iter().all(str::is_empty) {
            continue;
        }
        out.push((line, rec.iter().map(str::to_string).collect()));
    }
    Ok(out)
}

/// A first record with any non-numeric field is a header.
fn assemble(records: Vec<(usize, Vec<String>)>) -> Result<LoadedTable, LoadError> {
    let Some((_, first)) = records.first() else { return Err(LoadError::Empty) };
    let width = first.len();
    if width < 2 {
        return Err(LoadError::TooNarrow);
    }
    let header = first.iter().any(|f| f.parse::<f64>().is_err());
    let names: Vec<String> = if header {
        if let Some(bad) = first[..width - 1].iter().find(|n| !valid_variable_name(n)) {
            return Err(LoadError::Name(bad.clone()));
        }
        first.clone()
    } else {
        (1..width).map(|i| format!("x{i}")).chain(["y".to_string()]).collect()
    };
    let mut rows = Vec::with_capacity(records.len());
    for (line, fields) in records.iter().skip(usize::from(header)) {
        if fields.len() != width {
            return Err(LoadError::Width { line: *line, expected: width, got: fields.len() });
        }
        let mut v = Vec::with_capacity(width);
        for f in fields {
            v.push(f.parse::<f64>().map_err(|_| LoadError::Number { line: *line, field: f.clone() })?);
        }
        let y = v.pop().expect("width >= 2");
        rows.push((v, y));
    }
    let target = names[width - 1].clone();
    let (table, dropped) = DataTable::new(names[..width - 1].to_vec(), rows)?;
    if dropped > 0 {
        log::warn!("dropped {dropped} rows with non-finite entries");
    }
    if table.is_empty() {
        return Err(LoadError::Empty);
    }
    Ok(LoadedTable { table, target, dropped })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_rows() {
        let text: String = (0..100).map(|i| format!("{i} {} {}\n", i * 2, i * 3)).collect();
        let t = parse_table(&text, TableFormat::Whitespace).unwrap();
        assert_eq!((t.table.n_vars(), t.table.len()), (2, 100));
        assert_eq!(t.table.names(), ["x1", "x2"]);
        assert_eq!(t.dropped, 0);
    }

    #[test]
    fn nan_row_is_dropped() {
        let t = parse_table("1 2 3\nnan 1 1\n4 5 6\n", TableFormat::Whitespace).unwrap();
        assert_eq!((t.table.len(), t.dropped), (2, 1));
    }

    #[test]
    fn csv_header_names_columns() {
        let t = parse_table("m, v, E\n1, 2, 2\n3, 1, 1.5\n", TableFormat::Csv).unwrap();
        assert_eq!(t.table.names(), ["m", "v"]);
        assert_eq!(t.target, "E");
        assert_eq!(t.table.len(), 2);
        let e = parse_table("m,E,y\n1,2,3\n", TableFormat::Csv).unwrap_err();
        assert!(matches!(e, LoadError::Name(ref n) if n == "E"), "{e}");
    }

    #[test]
    fn headerless_csv() {
        let t = parse_table("1,2\n3,4\n", TableFormat::Csv).unwrap();
        assert_eq!(t.table.names(), ["x1"]);
        assert_eq!(t.table.y(), [2.0, 4.0]);
    }

    #[test]
    fn width_error_names_the_line() {
        let e = parse_table("# comment\n1 2 3\n\n4 5\n", TableFormat::Whitespace).unwrap_err();
        assert!(matches!(e, LoadError::Width { line: 4, expected: 3, got: 2 }), "{e}");
        let e = parse_table("a,b\n1,2\n3\n", TableFormat::Csv).unwrap_err();
        assert!(matches!(e, LoadError::Width { line: 3, .. }), "{e}");
    }

    #[test]
    fn bad_number_is_reported() {
        let e = parse_table("1 2\n3 x\n", TableFormat::Whitespace).unwrap_err();
        assert!(matches!(e, LoadError::Number { line: 2, .. }), "{e}");
    }

    #[test]
    fn auto_detects_by_extension_and_commas() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.dat");
        std::fs::write(&p, "x,y\n1,2\n").unwrap();
        assert_eq!(load_table(&p, TableFormat::Auto).unwrap().table.names(), ["x"]);
        let p = dir.path().join("t.txt");
        std::fs::write(&p, "1 2\n2 4\n").unwrap();
        assert_eq!(load_table(&p, TableFormat::Auto).unwrap().table.len(), 2);
    }
}
