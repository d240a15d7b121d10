//! CSV output. Floats are written with 17 significant digits so that a
//! re-parse recovers every value bit for bit.

use std::fs::File;
use std::io::Write;
use std::path::Path;

use crate::CliError;

/// One CSV field.
#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Float(f64),
    Int(i64),
    /// Mode counts can exceed `i64`.
    Count(u128),
    Text(String),
    Empty,
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::Float(v) => format_float(*v),
            Cell::Int(v) => v.to_string(),
            Cell::Count(v) => v.to_string(),
            Cell::Text(s) => s.clone(),
            Cell::Empty => String::new(),
        }
    }
}

impl From<f64> for Cell {
    fn from(v: f64) -> Self {
        Cell::Float(v)
    }
}

impl From<usize> for Cell {
    fn from(v: usize) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<u8> for Cell {
    fn from(v: u8) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<bool> for Cell {
    fn from(v: bool) -> Self {
        Cell::Int(v as i64)
    }
}

impl From<&str> for Cell {
    fn from(v: &str) -> Self {
        Cell::Text(v.to_string())
    }
}

impl<T: Into<Cell>> From<Option<T>> for Cell {
    fn from(v: Option<T>) -> Self {
        v.map_or(Cell::Empty, Into::into)
    }
}

/// `{:.16e}` for finite values; `inf`, `-inf` and `NaN` otherwise.
pub fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        v.to_string()
    }
}

/// Writes `columns` as the header followed by `rows` in the given order.
pub fn export_csv<I>(path: &Path, columns: &[&str], rows: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = Vec<Cell>>,
{
    let mut w = csv::Writer::from_writer(File::create(path)?);
    w.write_record(columns)?;
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != columns.len() {
            return Err(CliError::Config(format!(
                "row {i} has {} fields for {} columns",
                row.len(),
                columns.len()
            )));
        }
        w.write_record(row.iter().map(Cell::render))?;
    }
    w.flush()?;
    Ok(())
}

/// Writes plain text, creating or truncating the file.
pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    let mut f = File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}

/// Header and float-parsed rows of a CSV file; non-numeric fields become NaN.
pub fn read_csv(path: &Path) -> Result<(Vec<String>, Vec<Vec<f64>>), CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.iter().map(str::to_string).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(|s| s.parse().unwrap_or(f64::NAN)).collect());
    }
    Ok((header, rows))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join(format!("kdvda-export-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn empty_series_is_header_only() {
        let p = tmp("empty.csv");
        export_csv(&p, &["t", "l2"], Vec::<Vec<Cell>>::new()).unwrap();
        assert_eq!(std::fs::read_to_string(&p).unwrap(), "t,l2\n");
    }

    #[test]
    fn one_row_reparses() {
        let p = tmp("one.csv");
        let row = vec![Cell::from(0.1), Cell::from(1.0 / 3.0), Cell::from(3usize)];
        export_csv(&p, &["t", "dl2", "case"], vec![row]).unwrap();
        let (h, rows) = read_csv(&p).unwrap();
        assert_eq!(h, ["t", "dl2", "case"]);
        assert_eq!(rows, vec![vec![0.1, 1.0 / 3.0, 3.0]]);
    }

    #[test]
    fn row_width_checked() {
        let p = tmp("bad.csv");
        assert!(export_csv(&p, &["a", "b"], vec![vec![Cell::from(1.0)]]).is_err());
    }

    #[test]
    fn non_finite_values_survive() {
        let p = tmp("inf.csv");
        export_csv(
            &p,
            &["a", "b"],
            vec![vec![Cell::from(f64::INFINITY), Cell::Empty]],
        )
        .unwrap();
        let (_, rows) = read_csv(&p).unwrap();
        assert_eq!(rows[0][0], f64::INFINITY);
        assert!(rows[0][1].is_nan());
    }

    proptest! {
        #[test]
        fn large_series_round_trips(values in prop::collection::vec(prop::num::f64::NORMAL | prop::num::f64::SUBNORMAL | prop::num::f64::ZERO, 1..400)) {
            let p = tmp("many.csv");
            export_csv(&p, &["i", "v"], values.iter().enumerate().map(|(i, &v)| vec![Cell::from(i), Cell::from(v)])).unwrap();
            let (_, rows) = read_csv(&p).unwrap();
            prop_assert_eq!(rows.len(), values.len());
            for (r, v) in rows.iter().zip(&values) {
                prop_assert_eq!(r[1].to_bits(), v.to_bits());
            }
        }
    }
}
