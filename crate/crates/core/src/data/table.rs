//! CSV ingestion into a string table, and categorical one-hot encoding.

use std::io::Read;
use std::path::Path;

use crate::error::{Error, Result};

/// Cells as read, with the 1-based source line of every record.
#[derive(Debug, Clone, PartialEq)]
pub struct RawTable {
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub lines: Vec<usize>,
}

impl RawTable {
    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

pub fn load_csv(path: impl AsRef<Path>) -> Result<RawTable> {
    let file = std::fs::File::open(path.as_ref())?;
    read_csv(file)
}

/// Parses RFC 4180 text with a mandatory header row.
pub fn read_csv<R: Read>(reader: R) -> Result<RawTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .flexible(true)
        .from_reader(reader);
    let mut records = rdr.records();
    let headers: Vec<String> = match records.next() {
        None => return Err(Error::parse(1, "missing header row")),
        Some(r) => {
            let r = r.map_err(csv_error)?;
            r.iter().map(|h| h.trim().to_string()).collect()
        }
    };
    if headers.iter().any(String::is_empty) {
        return Err(Error::parse(1, "empty column name in header"));
    }
    for (i, h) in headers.iter().enumerate() {
        if headers[..i].contains(h) {
            return Err(Error::parse(1, format!("duplicate column name {h:?}")));
        }
    }
    let mut rows = Vec::new();
    let mut lines = Vec::new();
    for rec in records {
        let rec = rec.map_err(csv_error)?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        if rec.len() == 1 && rec.get(0) == Some("") {
            continue;
        }
        if rec.len() != headers.len() {
            return Err(Error::parse(
                line,
                format!("expected {} fields, found {}", headers.len(), rec.len()),
            ));
        }
        rows.push(rec.iter().map(|c| c.trim().to_string()).collect());
        lines.push(line);
    }
    Ok(RawTable {
        headers,
        rows,
        lines,
    })
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        csv::ErrorKind::Utf8 { err, .. } => Error::parse(line, format!("invalid UTF-8: {err}")),
        other => Error::parse(line, format!("{other:?}")),
    }
}

/// Parses a finite real, reporting `line` on failure.
pub fn parse_real(cell: &str, line: usize, column: &str) -> Result<f64> {
    match cell.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(Error::parse(
            line,
            format!("column {column:?}: {cell:?} is not a finite number"),
        )),
    }
}

/// Categories of each encoded column, in order of first appearance.
#[derive(Debug, Clone, PartialEq)]
pub struct OneHotEncoder {
    pub columns: Vec<(String, Vec<String>)>,
}

impl OneHotEncoder {
    pub fn fit(table: &RawTable, columns: &[String]) -> Result<Self> {
        let mut out = Vec::with_capacity(columns.len());
        for name in columns {
            let Some(c) = table.column_index(name) else {
                if table
                    .headers
                    .iter()
                    .any(|h| h.starts_with(&format!("{name}=")))
                {
                    continue;
                }
                return Err(Error::invalid(format!("no column named {name:?}")));
            };
            let mut cats: Vec<String> = Vec::new();
            for row in &table.rows {
                if !cats.contains(&row[c]) {
                    cats.push(row[c].clone());
                }
            }
            out.push((name.clone(), cats));
        }
        Ok(Self { columns: out })
    }

    /// Replaces each encoded column, in place, by `name=category` indicator
    /// columns holding `"1"` or `"0"`. Columns that were already expanded are
    /// left alone.
    pub fn transform(&self, table: &RawTable) -> Result<RawTable> {
        let mut t = table.clone();
        for (name, cats) in &self.columns {
            let Some(c) = t.column_index(name) else {
                continue;
            };
            let mut headers = t.headers[..c].to_vec();
            headers.extend(cats.iter().map(|v| format!("{name}={v}")));
            headers.extend_from_slice(&t.headers[c + 1..]);
            let mut rows = Vec::with_capacity(t.rows.len());
            for (row, line) in t.rows.iter().zip(&t.lines) {
                let hit = cats.iter().position(|v| *v == row[c]).ok_or_else(|| {
                    Error::Encode(format!(
                        "line {line}: unseen category {:?} in column {name:?}",
                        row[c]
                    ))
                })?;
                let mut r = row[..c].to_vec();
                r.extend((0..cats.len()).map(|k| if k == hit { "1" } else { "0" }.to_string()));
                r.extend_from_slice(&row[c + 1..]);
                rows.push(r);
            }
            t.headers = headers;
            t.rows = rows;
        }
        Ok(t)
    }
}

/// Fits on `table` and expands `columns` in one go.
pub fn one_hot(table: &RawTable, columns: &[String]) -> Result<RawTable> {
    OneHotEncoder::fit(table, columns)?.transform(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> RawTable {
        read_csv(text.as_bytes()).unwrap()
    }

    #[test]
    fn three_rows() {
        let t = table("a,b\n1,2\n3,4\n5,6\n");
        assert_eq!(t.headers, vec!["a", "b"]);
        assert_eq!(t.len(), 3);
        assert_eq!(t.lines, vec![2, 3, 4]);
    }

    #[test]
    fn quoted_comma_is_one_cell() {
        let t = table("name,v\n\"x, y\",1\n");
        assert_eq!(t.rows[0], vec!["x, y", "1"]);
    }

    #[test]
    fn ragged_row_reports_line() {
        let err = read_csv("a,b\n1,2\n3\n".as_bytes()).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
    }

    #[test]
    fn missing_header() {
        assert!(matches!(
            read_csv("".as_bytes()),
            Err(Error::Parse { line: 1, .. })
        ));
        assert!(read_csv("a,a\n1,2\n".as_bytes()).is_err());
    }

    #[test]
    fn real_parsing() {
        assert_eq!(parse_real("2.5", 1, "x").unwrap(), 2.5);
        assert!(matches!(
            parse_real("abc", 7, "x"),
            Err(Error::Parse { line: 7, .. })
        ));
        assert!(parse_real("inf", 1, "x").is_err());
    }

    #[test]
    fn one_hot_binary_and_constant() {
        let t = table("c,k,v\na,z,1\nb,z,2\na,z,3\n");
        let e = one_hot(&t, &["c".into(), "k".into()]).unwrap();
        assert_eq!(e.headers, vec!["c=a", "c=b", "k=z", "v"]);
        assert_eq!(e.rows[1], vec!["0", "1", "1", "2"]);
        // Re-applying the same schema does not change the column count.
        let again = one_hot(&e, &["c".into(), "k".into()]).unwrap();
        assert_eq!(again.headers.len(), e.headers.len());
    }

    #[test]
    fn unseen_category() {
        let fit = table("c\na\nb\n");
        let enc = OneHotEncoder::fit(&fit, &["c".into()]).unwrap();
        let err = enc.transform(&table("c\nq\n")).unwrap_err();
        assert!(matches!(err, Error::Encode(_)));
        assert!(OneHotEncoder::fit(&fit, &["zz".into()]).is_err());
    }
}
