//! Matrix CSV files.
//!
//! Format contract: no header, one matrix row per line, fields separated by
//! commas, every value rendered with 17 significant decimal digits (enough
//! for a bit-exact f64 round trip), UTF-8, LF line endings. Parse failures
//! report `file:line`.

use std::path::Path;

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

/// Renders one value with 17 significant digits.
pub fn format_value(x: f64) -> String {
    format!("{x:.16e}")
}

/// Serializes a matrix to the CSV contract as a string.
pub fn matrix_to_csv(matrix: ArrayView2<'_, f64>) -> String {
    let mut out = String::new();
    for row in matrix.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&format_value(*v));
            first = false;
        }
        out.push('\n');
    }
    out
}

pub fn write_matrix_csv(path: &Path, matrix: ArrayView2<'_, f64>) -> Result<()> {
    std::fs::write(path, matrix_to_csv(matrix)).map_err(|source| Error::Io {
        file: path.display().to_string(),
        source,
    })
}

/// Parses a matrix from CSV text; `name` labels error locations.
pub fn matrix_from_csv(text: &str, name: &str) -> Result<Array2<f64>> {
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = 0usize;
    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::with_capacity(width.max(4));
        for field in line.split(',') {
            let field = field.trim();
            let value: f64 = field.parse().map_err(|_| Error::Parse {
                file: name.to_string(),
                line: lineno,
                message: format!("not a number: {field:?}"),
            })?;
            if !value.is_finite() {
                return Err(Error::Parse {
                    file: name.to_string(),
                    line: lineno,
                    message: format!("non-finite value {value}"),
                });
            }
            row.push(value);
        }
        if rows.is_empty() {
            width = row.len();
        } else if row.len() != width {
            return Err(Error::Parse {
                file: name.to_string(),
                line: lineno,
                message: format!("expected {width} fields, found {}", row.len()),
            });
        }
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(Error::Parse {
            file: name.to_string(),
            line: 1,
            message: "empty matrix".into(),
        });
    }
    let (n, m) = (rows.len(), width);
    let flat: Vec<f64> = rows.into_iter().flatten().collect();
    Array2::from_shape_vec((n, m), flat)
        .map_err(|e| Error::Shape(format!("{name}: {e}")))
}

pub fn read_matrix_csv(path: &Path) -> Result<Array2<f64>> {
    let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
        file: path.display().to_string(),
        source,
    })?;
    matrix_from_csv(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn round_trip_is_exact() {
        let m = array![
            [0.1, -0.30000000000000004, 1e-300],
            [2.5e17, std::f64::consts::PI, -0.0]
        ];
        let text = matrix_to_csv(m.view());
        let back = matrix_from_csv(&text, "mem").unwrap();
        assert_eq!(back.shape(), m.shape());
        for (a, b) in back.iter().zip(m.iter()) {
            assert!(a.to_bits() == b.to_bits(), "{a} != {b}");
        }
    }

    #[test]
    fn uses_lf_and_no_header() {
        let m = array![[1.0, 2.0], [3.0, 4.0]];
        let text = matrix_to_csv(m.view());
        assert!(!text.contains('\r'));
        assert_eq!(text.lines().count(), 2);
        assert!(text.starts_with("1.0000000000000000e0,2.0000000000000000e0\n"));
    }

    #[test]
    fn parse_reports_file_and_line() {
        let err = matrix_from_csv("1.0,2.0\n1.0,oops\n", "data.csv").unwrap_err();
        match err {
            Error::Parse { file, line, .. } => {
                assert_eq!(file, "data.csv");
                assert_eq!(line, 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_ragged_and_empty() {
        assert!(matches!(
            matrix_from_csv("1.0,2.0\n3.0\n", "r.csv").unwrap_err(),
            Error::Parse { line: 2, .. }
        ));
        assert!(matches!(
            matrix_from_csv("", "e.csv").unwrap_err(),
            Error::Parse { .. }
        ));
        assert!(matches!(
            matrix_from_csv("nan,1.0\n", "n.csv").unwrap_err(),
            Error::Parse { line: 1, .. }
        ));
    }
}
